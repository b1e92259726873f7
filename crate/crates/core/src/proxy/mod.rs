//! The wire-facing proxy: a catalog of mirrored tools plus the final-answer
//! tool, routed through the mirror engine against one session memory.

mod client;
pub mod jsonrpc;
mod server;

use std::collections::{HashMap, HashSet};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use thiserror::Error;

use crate::ledger::{BytesPerToken, TokenCounter, TraceRecord};
use crate::memory::{IdGenerator, MemoryStore, RandomIds, StoreError};
use crate::mirror::{
    invoke_mirrored, mirror_tool, MirrorConfig, MirrorError, ParamKind, Parameter, Tool, ToolDescriptor, ToolResult,
};
use crate::path::parse;
use crate::value::{ArgumentTree, StoredValue};

pub use client::{connect, decode_tool_result, ClientError, McpClient, UpstreamEndpoint, UpstreamTool};
pub use server::{encode_tool_result, serve_stdio, serve_tcp, ProxyHandler, ToolServerHandler, PROTOCOL_VERSION};

pub const FINAL_ANSWER_TOOL: &str = "retrieve_final_answer_from_memory";

/// Numeric error codes carried in JSON-RPC error objects.
pub mod codes {
    pub const PARSE_ERROR: i64 = -32700;
    pub const INVALID_REQUEST: i64 = -32600;
    pub const METHOD_NOT_FOUND: i64 = -32601;
    pub const INVALID_PARAMS: i64 = -32602;
    pub const UNKNOWN_TOOL: i64 = -32001;
    pub const DANGLING_PATH: i64 = -32002;
    pub const TOOL_EXECUTION: i64 = -32003;
    pub const CAPACITY_EXCEEDED: i64 = -32004;
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProxyError {
    #[error("unknown tool {0:?}")]
    UnknownTool(String),
    #[error("dangling memory path: {0}")]
    DanglingPath(String),
    #[error("tool {tool} failed: {message}")]
    ToolExecution { tool: String, message: String },
    #[error("{0}")]
    CapacityExceeded(String),
    #[error("tool name {0} is already registered")]
    NameCollision(String),
    #[error("{0}")]
    Protocol(String),
}

impl ProxyError {
    /// Stable name of the error case, sent as `error.data.kind`.
    pub fn kind(&self) -> &'static str {
        match self {
            ProxyError::UnknownTool(_) => "UnknownTool",
            ProxyError::DanglingPath(_) => "DanglingPath",
            ProxyError::ToolExecution { .. } => "ToolExecutionError",
            ProxyError::CapacityExceeded(_) => "CapacityExceeded",
            ProxyError::NameCollision(_) => "NameCollision",
            ProxyError::Protocol(_) => "ProtocolError",
        }
    }

    pub fn code(&self) -> i64 {
        match self {
            ProxyError::UnknownTool(_) => codes::UNKNOWN_TOOL,
            ProxyError::DanglingPath(_) => codes::DANGLING_PATH,
            ProxyError::ToolExecution { .. } => codes::TOOL_EXECUTION,
            ProxyError::CapacityExceeded(_) => codes::CAPACITY_EXCEEDED,
            ProxyError::NameCollision(_) | ProxyError::Protocol(_) => codes::INVALID_PARAMS,
        }
    }
}

impl From<MirrorError> for ProxyError {
    fn from(e: MirrorError) -> Self {
        match e {
            MirrorError::DanglingPath(p) => ProxyError::DanglingPath(p.0),
            MirrorError::ToolExecution { tool, message } => ProxyError::ToolExecution { tool, message },
            MirrorError::Store(StoreError::NotFound(p)) => ProxyError::DanglingPath(p),
            MirrorError::Store(e) => ProxyError::CapacityExceeded(e.to_string()),
            MirrorError::NameCollision(n) => ProxyError::NameCollision(n),
        }
    }
}

enum Route {
    Mirrored {
        descriptor: ToolDescriptor,
        tool: Arc<dyn Tool>,
    },
    FinalAnswer(ToolDescriptor),
}

impl Route {
    fn descriptor(&self) -> &ToolDescriptor {
        match self {
            Route::Mirrored { descriptor, .. } | Route::FinalAnswer(descriptor) => descriptor,
        }
    }
}

pub fn final_answer_descriptor() -> ToolDescriptor {
    ToolDescriptor::new(
        FINAL_ANSWER_TOOL,
        "Returns the complete value stored at a memory path. Use it only when the stored value itself \
         must be shown to the user.",
        vec![Parameter::required(
            "memory_path",
            ParamKind::String,
            "Memory path of the value to retrieve, optionally with a /key suffix.",
        )],
    )
}

/// One downstream session: its memory, catalog, and call trace.
pub struct ProxySession {
    store: MemoryStore,
    config: MirrorConfig,
    routes: Vec<Route>,
    index: HashMap<String, usize>,
    originals: HashSet<String>,
    counter: Arc<dyn TokenCounter>,
    trace: Mutex<Vec<TraceRecord>>,
}

impl ProxySession {
    pub fn new(config: MirrorConfig, store: MemoryStore) -> Self {
        let mut session = Self {
            store,
            config,
            routes: Vec::new(),
            index: HashMap::new(),
            originals: HashSet::new(),
            counter: Arc::new(BytesPerToken::default()),
            trace: Mutex::new(Vec::new()),
        };
        session.push_route(Route::FinalAnswer(final_answer_descriptor()));
        session
    }

    pub fn with_counter(mut self, counter: Arc<dyn TokenCounter>) -> Self {
        self.counter = counter;
        self
    }

    /// Adds the mirrored variant of `tool` to the catalog.
    pub fn register(&mut self, tool: Arc<dyn Tool>) -> Result<(), ProxyError> {
        let original = tool.descriptor().name.clone();
        if !self.originals.insert(original.clone()) {
            return Err(ProxyError::NameCollision(original));
        }
        let taken: HashSet<String> = self.index.keys().cloned().collect();
        let descriptor = match mirror_tool(tool.descriptor(), &self.config, &taken) {
            Ok(d) => d,
            Err(e) => {
                self.originals.remove(&original);
                return Err(e.into());
            }
        };
        self.push_route(Route::Mirrored { descriptor, tool });
        Ok(())
    }

    pub fn register_all(&mut self, tools: impl IntoIterator<Item = Arc<dyn Tool>>) -> Result<(), ProxyError> {
        tools.into_iter().try_for_each(|t| self.register(t))
    }

    fn push_route(&mut self, route: Route) {
        self.index.insert(route.descriptor().name.clone(), self.routes.len());
        self.routes.push(route);
    }

    pub fn store(&self) -> &MemoryStore {
        &self.store
    }

    pub fn config(&self) -> &MirrorConfig {
        &self.config
    }

    pub fn counter(&self) -> &dyn TokenCounter {
        self.counter.as_ref()
    }

    /// Mirrored tools in registration order, then the final-answer tool.
    pub fn list_tools(&self) -> Vec<ToolDescriptor> {
        let mut tools: Vec<ToolDescriptor> = self
            .routes
            .iter()
            .filter(|r| matches!(r, Route::Mirrored { .. }))
            .map(|r| r.descriptor().clone())
            .collect();
        tools.push(final_answer_descriptor());
        tools
    }

    pub fn call_tool(&self, name: &str, args: &ArgumentTree) -> Result<ToolResult, ProxyError> {
        let route = self
            .index
            .get(name)
            .map(|&i| &self.routes[i])
            .ok_or_else(|| ProxyError::UnknownTool(name.to_owned()))?;
        let started = Instant::now();
        let result = match route {
            Route::Mirrored { tool, .. } => invoke_mirrored(tool.as_ref(), args, &self.store, &self.config)?,
            Route::FinalAnswer(_) => {
                let path = args
                    .get("memory_path")
                    .and_then(StoredValue::as_str)
                    .ok_or_else(|| ProxyError::Protocol("memory_path must be a string".into()))?;
                ToolResult::Raw(StoredValue::Text(self.retrieve_final(path)?))
            }
        };
        self.record(name, args, &result, started);
        Ok(result)
    }

    /// Renders the full value stored at `memory_path`.
    pub fn retrieve_final(&self, memory_path: &str) -> Result<String, ProxyError> {
        let path = parse(memory_path).ok_or_else(|| ProxyError::DanglingPath(memory_path.to_owned()))?;
        let value = self
            .store
            .get(&path)
            .map_err(|_| ProxyError::DanglingPath(memory_path.to_owned()))?;
        Ok(value.render_text())
    }

    fn record(&self, name: &str, args: &ArgumentTree, result: &ToolResult, started: Instant) {
        let mut trace = self.trace.lock().expect("trace lock poisoned");
        let record = TraceRecord::tool_call(
            trace.len(),
            name,
            args,
            result.text(),
            result.stored_path().map(ToString::to_string),
            started.elapsed(),
            Some(&self.store),
            self.counter.as_ref(),
        );
        match record {
            Ok(r) => trace.push(r),
            // a cleared store can no longer price earlier paths
            Err(e) => tracing::warn!("trace record for {name} dropped: {e}"),
        }
    }

    pub fn trace(&self) -> Vec<TraceRecord> {
        self.trace.lock().expect("trace lock poisoned").clone()
    }
}

/// Builds a fresh [`ProxySession`] per downstream connection over a shared
/// set of upstream tools.
#[derive(Clone)]
pub struct SessionFactory {
    pub tools: Vec<Arc<dyn Tool>>,
    pub config: MirrorConfig,
    pub capacity_bytes: Option<u64>,
    pub counter: Arc<dyn TokenCounter>,
    pub ids: Arc<dyn Fn() -> Box<dyn IdGenerator> + Send + Sync>,
}

impl SessionFactory {
    pub fn new(tools: Vec<Arc<dyn Tool>>, config: MirrorConfig) -> Self {
        Self {
            tools,
            config,
            capacity_bytes: None,
            counter: Arc::new(BytesPerToken::default()),
            ids: Arc::new(|| Box::new(RandomIds)),
        }
    }

    pub fn build(&self) -> Result<ProxySession, ProxyError> {
        let store = MemoryStore::new()
            .with_capacity(self.capacity_bytes)
            .with_boxed_ids((self.ids)());
        let mut session = ProxySession::new(self.config.clone(), store).with_counter(Arc::clone(&self.counter));
        session.register_all(self.tools.iter().cloned())?;
        Ok(session)
    }
}
