//! Session-scoped runtime memory for tool outputs.
//!
//! Every stored value gets a base path `tool-uuid`. Object values are also
//! fanned out one level: each top-level key becomes addressable at
//! `tool-uuid/key`. Children are views into the parent's value and do not
//! count towards the byte total.

use std::collections::{BTreeMap, VecDeque};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Instant;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;
use uuid::Uuid;

use crate::path::{is_valid_subkey, is_valid_tool_name, MemoryPath};
use crate::value::{StoredValue, ValueKind};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("no entry at memory path {0}")]
    NotFound(String),
    #[error("storing {requested} bytes would exceed capacity ({used} of {capacity} bytes used)")]
    CapacityExceeded { requested: u64, used: u64, capacity: u64 },
    #[error("invalid tool name {0:?}")]
    InvalidToolName(String),
}

/// Source of the UUIDs that make base paths unique.
pub trait IdGenerator: Send + Sync {
    fn next_uuid(&self) -> Uuid;
}

/// Fresh random version-4 UUIDs.
#[derive(Debug, Default)]
pub struct RandomIds;

impl IdGenerator for RandomIds {
    fn next_uuid(&self) -> Uuid {
        Uuid::new_v4()
    }
}

/// Reproducible version-4 UUIDs drawn from a seeded stream.
#[derive(Debug)]
pub struct SeededIds(Mutex<ChaCha8Rng>);

impl SeededIds {
    pub fn new(seed: u64) -> Self {
        Self(Mutex::new(ChaCha8Rng::seed_from_u64(seed)))
    }
}

impl IdGenerator for SeededIds {
    fn next_uuid(&self) -> Uuid {
        let mut bytes = [0u8; 16];
        self.0.lock().expect("id rng poisoned").fill_bytes(&mut bytes);
        uuid::Builder::from_random_bytes(bytes).into_uuid()
    }
}

/// Hands out a fixed list of UUIDs first, then falls back to a seeded stream.
/// Used to reproduce recorded traces exactly.
#[derive(Debug)]
pub struct ScriptedIds {
    queue: Mutex<VecDeque<Uuid>>,
    fallback: SeededIds,
}

impl ScriptedIds {
    pub fn new(ids: impl IntoIterator<Item = Uuid>, fallback_seed: u64) -> Self {
        Self {
            queue: Mutex::new(ids.into_iter().collect()),
            fallback: SeededIds::new(fallback_seed),
        }
    }
}

impl IdGenerator for ScriptedIds {
    fn next_uuid(&self) -> Uuid {
        let next = self.queue.lock().expect("id queue poisoned").pop_front();
        next.unwrap_or_else(|| self.fallback.next_uuid())
    }
}

#[derive(Debug)]
pub struct MemoryEntry {
    path: MemoryPath,
    root: Arc<StoredValue>,
    byte_size: u64,
    producer_tool: String,
    created_at: Instant,
    parent: Option<MemoryPath>,
}

impl MemoryEntry {
    pub fn path(&self) -> &MemoryPath {
        &self.path
    }

    pub fn value(&self) -> &StoredValue {
        match self.path.subkey() {
            None => &self.root,
            Some(key) => self
                .root
                .get(key)
                .expect("child entries only exist for keys of their parent object"),
        }
    }

    pub fn kind(&self) -> ValueKind {
        self.value().kind()
    }

    pub fn byte_size(&self) -> u64 {
        self.byte_size
    }

    pub fn producer_tool(&self) -> &str {
        &self.producer_tool
    }

    pub fn created_at(&self) -> Instant {
        self.created_at
    }

    pub fn parent(&self) -> Option<&MemoryPath> {
        self.parent.as_ref()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EntrySummary {
    pub path: String,
    pub kind: ValueKind,
    pub byte_size: u64,
    pub producer_tool: String,
}

#[derive(Default)]
struct Inner {
    entries: BTreeMap<String, Arc<MemoryEntry>>,
    total_bytes: u64,
}

pub struct MemoryStore {
    inner: RwLock<Inner>,
    capacity_bytes: Option<u64>,
    ids: Box<dyn IdGenerator>,
}

impl Default for MemoryStore {
    fn default() -> Self {
        Self::new()
    }
}

impl std::fmt::Debug for MemoryStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MemoryStore")
            .field("entries", &self.len())
            .field("total_bytes", &self.total_bytes())
            .field("capacity_bytes", &self.capacity_bytes)
            .finish()
    }
}

impl MemoryStore {
    pub fn new() -> Self {
        Self {
            inner: RwLock::default(),
            capacity_bytes: None,
            ids: Box::new(RandomIds),
        }
    }

    pub fn with_capacity(mut self, capacity_bytes: Option<u64>) -> Self {
        self.capacity_bytes = capacity_bytes;
        self
    }

    pub fn with_ids(self, ids: impl IdGenerator + 'static) -> Self {
        self.with_boxed_ids(Box::new(ids))
    }

    pub fn with_boxed_ids(mut self, ids: Box<dyn IdGenerator>) -> Self {
        self.ids = ids;
        self
    }

    pub fn capacity_bytes(&self) -> Option<u64> {
        self.capacity_bytes
    }

    pub fn total_bytes(&self) -> u64 {
        self.read().total_bytes
    }

    /// Number of entries, children included.
    pub fn len(&self) -> usize {
        self.read().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stores `value` under a fresh `producer_tool-uuid` path and returns it.
    /// Object values also get one child entry per top-level key whose name is
    /// a valid subkey.
    pub fn put(&self, producer_tool: &str, value: StoredValue) -> Result<MemoryPath, StoreError> {
        if !is_valid_tool_name(producer_tool) {
            return Err(StoreError::InvalidToolName(producer_tool.to_owned()));
        }
        let byte_size = value.byte_size();
        let child_sizes: Vec<(String, u64)> = value
            .as_object()
            .map(|m| {
                m.iter()
                    .filter(|(k, _)| is_valid_subkey(k))
                    .map(|(k, v)| (k.clone(), v.byte_size()))
                    .collect()
            })
            .unwrap_or_default();
        let root = Arc::new(value);
        let created_at = Instant::now();

        let mut inner = self.write();
        if let Some(capacity) = self.capacity_bytes {
            if inner.total_bytes.saturating_add(byte_size) > capacity {
                return Err(StoreError::CapacityExceeded {
                    requested: byte_size,
                    used: inner.total_bytes,
                    capacity,
                });
            }
        }
        let base = loop {
            let candidate = MemoryPath::new(producer_tool, self.ids.next_uuid())
                .expect("tool name validated and generators yield v4 UUIDs");
            if !inner.entries.contains_key(&candidate.to_string()) {
                break candidate;
            }
        };
        for (key, size) in child_sizes {
            let path = base.child(&key).expect("keys filtered to valid subkeys");
            let entry = MemoryEntry {
                path: path.clone(),
                root: Arc::clone(&root),
                byte_size: size,
                producer_tool: producer_tool.to_owned(),
                created_at,
                parent: Some(base.clone()),
            };
            inner.entries.insert(path.to_string(), Arc::new(entry));
        }
        let entry = MemoryEntry {
            path: base.clone(),
            root,
            byte_size,
            producer_tool: producer_tool.to_owned(),
            created_at,
            parent: None,
        };
        inner.entries.insert(base.to_string(), Arc::new(entry));
        inner.total_bytes += byte_size;
        Ok(base)
    }

    pub fn entry(&self, path: &MemoryPath) -> Result<Arc<MemoryEntry>, StoreError> {
        let key = path.to_string();
        self.read().entries.get(&key).cloned().ok_or(StoreError::NotFound(key))
    }

    /// Returns a copy of the value stored at `path`.
    pub fn get(&self, path: &MemoryPath) -> Result<StoredValue, StoreError> {
        Ok(self.entry(path)?.value().clone())
    }

    pub fn contains(&self, path: &MemoryPath) -> bool {
        self.read().entries.contains_key(&path.to_string())
    }

    /// Child keys fanned out under `base`, in key order.
    pub fn child_keys(&self, base: &MemoryPath) -> Vec<String> {
        let prefix = format!("{}/", base.base());
        self.read()
            .entries
            .range(prefix.clone()..)
            .take_while(|(k, _)| k.starts_with(&prefix))
            .filter_map(|(_, e)| e.path().subkey().map(str::to_owned))
            .collect()
    }

    /// Lexicographically ordered listing, optionally restricted to paths that
    /// start with `prefix`.
    pub fn list_entries(&self, prefix: Option<&str>) -> Vec<EntrySummary> {
        let prefix = prefix.unwrap_or("");
        self.read()
            .entries
            .range(prefix.to_owned()..)
            .take_while(|(k, _)| k.starts_with(prefix))
            .map(|(k, e)| EntrySummary {
                path: k.clone(),
                kind: e.kind(),
                byte_size: e.byte_size,
                producer_tool: e.producer_tool.clone(),
            })
            .collect()
    }

    /// Removes everything and returns how many base entries were dropped.
    pub fn clear(&self) -> usize {
        let mut inner = self.write();
        let removed = inner.entries.values().filter(|e| e.parent.is_none()).count();
        inner.entries.clear();
        inner.total_bytes = 0;
        removed
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, Inner> {
        self.inner.read().expect("memory store lock poisoned")
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, Inner> {
        self.inner.write().expect("memory store lock poisoned")
    }
}
