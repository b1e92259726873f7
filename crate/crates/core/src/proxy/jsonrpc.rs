//! Newline-delimited JSON-RPC 2.0 framing.
//!
//! One JSON object per line in each direction. Requests on a connection are
//! handled concurrently; responses are written whole, one line each, in
//! completion order and matched to requests by `id`.

use std::io::{self, BufRead, Write};
use std::sync::Mutex;
use std::thread;

use serde_json::{json, Value};

use super::codes;

#[derive(Debug, Clone, PartialEq)]
pub struct RpcError {
    pub code: i64,
    pub message: String,
    pub data: Option<Value>,
}

impl RpcError {
    pub fn new(code: i64, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            data: None,
        }
    }

    pub fn with_kind(mut self, kind: &str) -> Self {
        self.data = Some(json!({ "kind": kind }));
        self
    }

    pub fn method_not_found(method: &str) -> Self {
        Self::new(codes::METHOD_NOT_FOUND, format!("method not found: {method}")).with_kind("ProtocolError")
    }

    pub fn invalid_params(message: impl Into<String>) -> Self {
        Self::new(codes::INVALID_PARAMS, message).with_kind("ProtocolError")
    }

    pub fn to_json(&self) -> Value {
        let mut v = json!({ "code": self.code, "message": self.message });
        if let Some(data) = &self.data {
            v["data"] = data.clone();
        }
        v
    }

    pub fn from_json(v: &Value) -> Self {
        Self {
            code: v.get("code").and_then(Value::as_i64).unwrap_or(0),
            message: v.get("message").and_then(Value::as_str).unwrap_or("").to_owned(),
            data: v.get("data").cloned(),
        }
    }
}

pub trait RpcHandler: Send + Sync {
    fn handle(&self, method: &str, params: Value) -> Result<Value, RpcError>;
}

pub fn request(id: u64, method: &str, params: Value) -> Value {
    json!({ "jsonrpc": "2.0", "id": id, "method": method, "params": params })
}

pub fn notification(method: &str, params: Value) -> Value {
    json!({ "jsonrpc": "2.0", "method": method, "params": params })
}

pub fn success(id: Value, result: Value) -> Value {
    json!({ "jsonrpc": "2.0", "id": id, "result": result })
}

pub fn failure(id: Value, error: &RpcError) -> Value {
    json!({ "jsonrpc": "2.0", "id": id, "error": error.to_json() })
}

pub fn write_frame<W: Write + ?Sized>(writer: &mut W, message: &Value) -> io::Result<()> {
    serde_json::to_writer(&mut *writer, message)?;
    writer.write_all(b"\n")?;
    writer.flush()
}

/// Handles one incoming line. Returns the response to send, or `None` for
/// notifications.
pub fn dispatch(line: &str, handler: &dyn RpcHandler) -> Option<Value> {
    let message: Value = match serde_json::from_str(line) {
        Ok(v) => v,
        Err(e) => {
            let err = RpcError::new(codes::PARSE_ERROR, format!("parse error: {e}")).with_kind("ProtocolError");
            return Some(failure(Value::Null, &err));
        }
    };
    let id = message.get("id").cloned();
    let invalid = |why: &str| {
        let err = RpcError::new(codes::INVALID_REQUEST, format!("invalid request: {why}")).with_kind("ProtocolError");
        Some(failure(id.clone().unwrap_or(Value::Null), &err))
    };
    if !message.is_object() {
        return invalid("expected an object");
    }
    if message.get("jsonrpc").and_then(Value::as_str) != Some("2.0") {
        return invalid("jsonrpc must be \"2.0\"");
    }
    let Some(method) = message.get("method").and_then(Value::as_str) else {
        return invalid("missing method");
    };
    let params = message.get("params").cloned().unwrap_or_else(|| json!({}));
    let outcome = handler.handle(method, params);
    let id = id?;
    Some(match outcome {
        Ok(result) => success(id, result),
        Err(err) => failure(id, &err),
    })
}

/// Serves one connection until `reader` reaches end of input. Each request
/// runs on its own thread; all of them finish before this returns.
pub fn serve_connection<R, W>(reader: R, writer: W, handler: &dyn RpcHandler) -> io::Result<()>
where
    R: BufRead,
    W: Write + Send,
{
    let writer = Mutex::new(writer);
    thread::scope(|scope| {
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let writer = &writer;
            scope.spawn(move || {
                if let Some(response) = dispatch(&line, handler) {
                    let mut w = writer.lock().expect("writer lock poisoned");
                    if let Err(e) = write_frame(&mut *w, &response) {
                        tracing::warn!("failed to write response: {e}");
                    }
                }
            });
        }
        Ok(())
    })
}
