//! Memory-path syntax and argument resolution.
//!
//! A memory path names a stored value by the tool that produced it and a
//! version-4 UUID, optionally followed by one top-level key of an object value:
//!
//! ```text
//! ^[A-Za-z0-9_]+-[0-9a-f]{8}-[0-9a-f]{4}-4[0-9a-f]{3}-[89ab][0-9a-f]{3}-[0-9a-f]{12}(/[^/]+)?$
//! ```
//!
//! Detection is whole-string only: a path mentioned inside a longer string is
//! never treated as a pointer.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;
use uuid::Uuid;

use crate::memory::MemoryStore;
use crate::value::{ArgumentTree, StoredValue};

pub const PATH_PATTERN: &str =
    r"^[A-Za-z0-9_]+-[0-9a-f]{8}-[0-9a-f]{4}-4[0-9a-f]{3}-[89ab][0-9a-f]{3}-[0-9a-f]{12}(/[^/]+)?$";

const UUID_LEN: usize = 36;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MemoryPath {
    tool_name: String,
    uuid: Uuid,
    subkey: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PathError {
    #[error("invalid tool name {0:?}: expected [A-Za-z0-9_]+")]
    InvalidToolName(String),
    #[error("invalid subkey {0:?}: must be nonempty and contain no '/'")]
    InvalidSubkey(String),
    #[error("uuid {0} is not a version-4 UUID")]
    NotV4(Uuid),
    #[error("{0:?} is not a memory path")]
    NotAPath(String),
}

/// Raised when an argument names a memory path that the store does not hold.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("dangling memory path: {0}")]
pub struct DanglingPath(pub String);

pub fn is_valid_tool_name(name: &str) -> bool {
    !name.is_empty() && name.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_')
}

pub fn is_valid_subkey(key: &str) -> bool {
    !key.is_empty() && !key.contains('/')
}

impl MemoryPath {
    pub fn new(tool_name: &str, uuid: Uuid) -> Result<Self, PathError> {
        if !is_valid_tool_name(tool_name) {
            return Err(PathError::InvalidToolName(tool_name.to_owned()));
        }
        if uuid.get_version_num() != 4 || uuid.get_variant() != uuid::Variant::RFC4122 {
            return Err(PathError::NotV4(uuid));
        }
        Ok(Self {
            tool_name: tool_name.to_owned(),
            uuid,
            subkey: None,
        })
    }

    /// Path of one top-level key under this base path.
    pub fn child(&self, key: &str) -> Result<Self, PathError> {
        if !is_valid_subkey(key) {
            return Err(PathError::InvalidSubkey(key.to_owned()));
        }
        Ok(Self {
            subkey: Some(key.to_owned()),
            ..self.base()
        })
    }

    pub fn base(&self) -> Self {
        Self {
            tool_name: self.tool_name.clone(),
            uuid: self.uuid,
            subkey: None,
        }
    }

    pub fn tool_name(&self) -> &str {
        &self.tool_name
    }

    pub fn uuid(&self) -> Uuid {
        self.uuid
    }

    pub fn subkey(&self) -> Option<&str> {
        self.subkey.as_deref()
    }

    pub fn is_base(&self) -> bool {
        self.subkey.is_none()
    }
}

impl fmt::Display for MemoryPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.tool_name, self.uuid.hyphenated())?;
        if let Some(key) = &self.subkey {
            write!(f, "/{key}")?;
        }
        Ok(())
    }
}

impl FromStr for MemoryPath {
    type Err = PathError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s).ok_or_else(|| PathError::NotAPath(s.to_owned()))
    }
}

/// Parses `text` as a memory path. Returns `None` unless the whole string
/// matches the grammar.
pub fn parse(text: &str) -> Option<MemoryPath> {
    let dash = text.find('-')?;
    let tool_name = &text[..dash];
    if !is_valid_tool_name(tool_name) {
        return None;
    }
    let rest = &text[dash + 1..];
    let uuid_text = rest.get(..UUID_LEN)?;
    if !is_lowercase_v4(uuid_text) {
        return None;
    }
    let subkey = match &rest[UUID_LEN..] {
        "" => None,
        tail => {
            let key = tail.strip_prefix('/')?;
            if !is_valid_subkey(key) {
                return None;
            }
            Some(key.to_owned())
        }
    };
    let uuid = Uuid::parse_str(uuid_text).ok()?;
    Some(MemoryPath {
        tool_name: tool_name.to_owned(),
        uuid,
        subkey,
    })
}

fn is_lowercase_v4(s: &str) -> bool {
    let b = s.as_bytes();
    if b.len() != UUID_LEN {
        return false;
    }
    let hex = |c: u8| c.is_ascii_digit() || (b'a'..=b'f').contains(&c);
    b.iter().enumerate().all(|(i, &c)| match i {
        8 | 13 | 18 | 23 => c == b'-',
        14 => c == b'4',
        19 => matches!(c, b'8' | b'9' | b'a' | b'b'),
        _ => hex(c),
    })
}

/// Finds every memory path mentioned in free text, in order of appearance.
///
/// Candidates are whitespace-separated tokens with leading and trailing
/// punctuation trimmed, so a subkey that itself ends in punctuation will not
/// be found here. Only used to read paths back out of instruction messages.
pub fn find_paths(text: &str) -> Vec<MemoryPath> {
    text.split_whitespace()
        .filter_map(|token| {
            let trimmed = token.trim_matches(|c: char| !(c.is_ascii_alphanumeric() || c == '_'));
            parse(trimmed)
        })
        .collect()
}

/// Replaces every string leaf that is a live memory path with the value it
/// points to. Strings that are not paths are left alone; strings that are
/// paths but absent from the store fail with [`DanglingPath`].
pub fn resolve_arguments(args: &ArgumentTree, store: &MemoryStore) -> Result<ArgumentTree, DanglingPath> {
    Ok(match args {
        StoredValue::Text(s) => match parse(s) {
            Some(path) => store.get(&path).map_err(|_| DanglingPath(s.clone()))?,
            None => args.clone(),
        },
        StoredValue::Array(items) => StoredValue::Array(
            items
                .iter()
                .map(|item| resolve_arguments(item, store))
                .collect::<Result<_, _>>()?,
        ),
        StoredValue::Object(map) => StoredValue::Object(
            map.iter()
                .map(|(k, v)| Ok((k.clone(), resolve_arguments(v, store)?)))
                .collect::<Result<_, DanglingPath>>()?,
        ),
        other => other.clone(),
    })
}

/// Every string leaf in `args` that parses as a memory path, whether or not it
/// is live.
pub fn referenced_paths(args: &ArgumentTree) -> Vec<MemoryPath> {
    let mut out = Vec::new();
    collect_paths(args, &mut out);
    out
}

fn collect_paths(node: &ArgumentTree, out: &mut Vec<MemoryPath>) {
    match node {
        StoredValue::Text(s) => out.extend(parse(s)),
        StoredValue::Array(items) => items.iter().for_each(|i| collect_paths(i, out)),
        StoredValue::Object(map) => map.values().for_each(|v| collect_paths(v, out)),
        _ => {}
    }
}
