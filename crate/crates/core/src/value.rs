//! Values that flow through the proxy: tool outputs held in memory and the
//! argument trees agents pass to tools.
//!
//! Three encodings exist for a [`StoredValue`]:
//!
//! * the tagged form (`{"kind": ..., "payload": ...}`) produced by serde, which
//!   is lossless and keeps every kind distinct;
//! * the canonical form: compact JSON with sorted object keys and binary
//!   payloads as base64 strings, used for byte accounting and for rendering
//!   values into agent context;
//! * the summary form: the same JSON with `", "` and `": "` separators, used
//!   when echoing call arguments back inside access instructions.

use std::collections::BTreeMap;
use std::fmt;
use std::io;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::ser::{SerializeMap, SerializeSeq};
use serde::{Deserialize, Serialize, Serializer};
use serde_json::Number;

/// A tool argument tree. Arguments and stored values share one representation
/// so a resolved memory path can be spliced into an argument without conversion.
pub type ArgumentTree = StoredValue;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "lowercase")]
pub enum StoredValue {
    Null,
    Boolean(bool),
    Number(Number),
    Text(String),
    Array(Vec<StoredValue>),
    Object(BTreeMap<String, StoredValue>),
    Binary(#[serde(with = "base64_payload")] Vec<u8>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueKind {
    Null,
    Boolean,
    Number,
    Text,
    Array,
    Object,
    Binary,
}

impl fmt::Display for ValueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ValueKind::Null => "null",
            ValueKind::Boolean => "boolean",
            ValueKind::Number => "number",
            ValueKind::Text => "text",
            ValueKind::Array => "array",
            ValueKind::Object => "object",
            ValueKind::Binary => "binary",
        };
        f.write_str(name)
    }
}

impl StoredValue {
    pub fn kind(&self) -> ValueKind {
        match self {
            StoredValue::Null => ValueKind::Null,
            StoredValue::Boolean(_) => ValueKind::Boolean,
            StoredValue::Number(_) => ValueKind::Number,
            StoredValue::Text(_) => ValueKind::Text,
            StoredValue::Array(_) => ValueKind::Array,
            StoredValue::Object(_) => ValueKind::Object,
            StoredValue::Binary(_) => ValueKind::Binary,
        }
    }

    pub fn text(s: impl Into<String>) -> Self {
        StoredValue::Text(s.into())
    }

    /// Builds a number node from a finite float. Returns `None` for NaN or
    /// infinities, which have no JSON representation.
    pub fn float(f: f64) -> Option<Self> {
        Number::from_f64(f).map(StoredValue::Number)
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            StoredValue::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            StoredValue::Number(n) => n.as_f64(),
            _ => None,
        }
    }

    pub fn as_object(&self) -> Option<&BTreeMap<String, StoredValue>> {
        match self {
            StoredValue::Object(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_array(&self) -> Option<&[StoredValue]> {
        match self {
            StoredValue::Array(v) => Some(v),
            _ => None,
        }
    }

    pub fn get(&self, key: &str) -> Option<&StoredValue> {
        self.as_object().and_then(|m| m.get(key))
    }

    /// Structural equality that also distinguishes float bit patterns
    /// (`0.0` vs `-0.0`), which `PartialEq` on JSON numbers does not.
    pub fn bit_eq(&self, other: &StoredValue) -> bool {
        match (self, other) {
            (StoredValue::Number(a), StoredValue::Number(b)) => {
                if a.is_f64() || b.is_f64() {
                    a.is_f64() && b.is_f64() && a.as_f64().map(f64::to_bits) == b.as_f64().map(f64::to_bits)
                } else {
                    a == b
                }
            }
            (StoredValue::Array(a), StoredValue::Array(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.bit_eq(y))
            }
            (StoredValue::Object(a), StoredValue::Object(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|((ka, va), (kb, vb))| ka == kb && va.bit_eq(vb))
            }
            _ => self == other,
        }
    }

    /// Length in bytes of the canonical serialization. A top-level binary
    /// payload counts its raw length.
    pub fn byte_size(&self) -> u64 {
        if let StoredValue::Binary(b) = self {
            return b.len() as u64;
        }
        let mut counter = ByteCounter(0);
        serde_json::to_writer(&mut counter, &Canonical(self)).expect("counting writer never fails");
        counter.0
    }

    pub fn canonical_json(&self) -> String {
        serde_json::to_string(&Canonical(self)).expect("canonical serialization is infallible")
    }

    /// Text an agent sees for this value: text payloads verbatim, everything
    /// else in canonical form.
    pub fn render_text(&self) -> String {
        match self {
            StoredValue::Text(s) => s.clone(),
            other => other.canonical_json(),
        }
    }

    /// JSON with `", "` / `": "` separators, as echoed in access instructions.
    pub fn summary_json(&self) -> String {
        let mut out = Vec::new();
        let mut ser = serde_json::Serializer::with_formatter(&mut out, SpacedFormatter);
        Canonical(self)
            .serialize(&mut ser)
            .expect("summary serialization is infallible");
        String::from_utf8(out).expect("serde_json emits UTF-8")
    }

    /// Plain JSON view for the wire. Binary payloads become base64 strings.
    pub fn to_json(&self) -> serde_json::Value {
        use serde_json::Value as J;
        match self {
            StoredValue::Null => J::Null,
            StoredValue::Boolean(b) => J::Bool(*b),
            StoredValue::Number(n) => J::Number(n.clone()),
            StoredValue::Text(s) => J::String(s.clone()),
            StoredValue::Array(items) => J::Array(items.iter().map(StoredValue::to_json).collect()),
            StoredValue::Object(map) => J::Object(map.iter().map(|(k, v)| (k.clone(), v.to_json())).collect()),
            StoredValue::Binary(b) => J::String(BASE64.encode(b)),
        }
    }

    pub fn from_json(value: serde_json::Value) -> Self {
        use serde_json::Value as J;
        match value {
            J::Null => StoredValue::Null,
            J::Bool(b) => StoredValue::Boolean(b),
            J::Number(n) => StoredValue::Number(n),
            J::String(s) => StoredValue::Text(s),
            J::Array(items) => StoredValue::Array(items.into_iter().map(StoredValue::from_json).collect()),
            J::Object(map) => {
                StoredValue::Object(map.into_iter().map(|(k, v)| (k, StoredValue::from_json(v))).collect())
            }
        }
    }
}

impl From<serde_json::Value> for StoredValue {
    fn from(value: serde_json::Value) -> Self {
        StoredValue::from_json(value)
    }
}

impl From<&str> for StoredValue {
    fn from(s: &str) -> Self {
        StoredValue::Text(s.to_owned())
    }
}

impl From<String> for StoredValue {
    fn from(s: String) -> Self {
        StoredValue::Text(s)
    }
}

impl From<bool> for StoredValue {
    fn from(b: bool) -> Self {
        StoredValue::Boolean(b)
    }
}

impl From<i64> for StoredValue {
    fn from(n: i64) -> Self {
        StoredValue::Number(n.into())
    }
}

impl From<u64> for StoredValue {
    fn from(n: u64) -> Self {
        StoredValue::Number(n.into())
    }
}

impl<V: Into<StoredValue>> FromIterator<(String, V)> for StoredValue {
    fn from_iter<I: IntoIterator<Item = (String, V)>>(iter: I) -> Self {
        StoredValue::Object(iter.into_iter().map(|(k, v)| (k, v.into())).collect())
    }
}

/// Untagged JSON view used by the canonical and summary encodings.
struct Canonical<'a>(&'a StoredValue);

impl Serialize for Canonical<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self.0 {
            StoredValue::Null => serializer.serialize_unit(),
            StoredValue::Boolean(b) => serializer.serialize_bool(*b),
            StoredValue::Number(n) => n.serialize(serializer),
            StoredValue::Text(s) => serializer.serialize_str(s),
            StoredValue::Array(items) => {
                let mut seq = serializer.serialize_seq(Some(items.len()))?;
                for item in items {
                    seq.serialize_element(&Canonical(item))?;
                }
                seq.end()
            }
            StoredValue::Object(map) => {
                let mut m = serializer.serialize_map(Some(map.len()))?;
                for (k, v) in map {
                    m.serialize_entry(k, &Canonical(v))?;
                }
                m.end()
            }
            StoredValue::Binary(b) => serializer.serialize_str(&BASE64.encode(b)),
        }
    }
}

struct SpacedFormatter;

impl serde_json::ser::Formatter for SpacedFormatter {
    fn begin_array_value<W: ?Sized + io::Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        if first {
            Ok(())
        } else {
            writer.write_all(b", ")
        }
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        if first {
            Ok(())
        } else {
            writer.write_all(b", ")
        }
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        writer.write_all(b": ")
    }
}

struct ByteCounter(u64);

impl io::Write for ByteCounter {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0 += buf.len() as u64;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

mod base64_payload {
    use super::BASE64;
    use base64::Engine as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&BASE64.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Vec<u8>, D::Error> {
        let encoded = String::deserialize(deserializer)?;
        BASE64.decode(encoded).map_err(serde::de::Error::custom)
    }
}
