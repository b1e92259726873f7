//! Tool-response virtualization for LLM agents.
//!
//! Tools are mirrored into pointer-aware variants: large outputs go into a
//! session memory and the agent receives a short memory path instead, which it
//! can pass to any other mirrored tool in place of the raw value.

pub mod config;
pub mod harness;
pub mod ledger;
pub mod memory;
pub mod mirror;
pub mod path;
pub mod proxy;
pub mod value;

pub use ledger::{TokenCounter, TraceRecord};
pub use memory::{MemoryStore, StoreError};
pub use mirror::{MirrorConfig, Tool, ToolDescriptor, ToolResult};
pub use path::MemoryPath;
pub use value::{ArgumentTree, StoredValue};
