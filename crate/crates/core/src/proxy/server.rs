use std::io::{self, BufReader};
use std::net::TcpListener;
use std::sync::Arc;
use std::thread;

use serde_json::{json, Value};

use super::jsonrpc::{serve_connection, RpcError, RpcHandler};
use super::{ProxyError, ProxySession, SessionFactory};
use crate::mirror::{Tool, ToolResult};
use crate::path::parse;
use crate::value::StoredValue;

pub const PROTOCOL_VERSION: &str = "2024-11-05";

impl From<ProxyError> for RpcError {
    fn from(e: ProxyError) -> Self {
        RpcError::new(e.code(), e.to_string()).with_kind(e.kind())
    }
}

fn initialize_result() -> Value {
    json!({
        "protocolVersion": PROTOCOL_VERSION,
        "capabilities": {"tools": {"listChanged": false}},
        "serverInfo": {"name": "toolmem", "version": env!("CARGO_PKG_VERSION")},
    })
}

fn call_params(params: &Value) -> Result<(&str, StoredValue), RpcError> {
    let name = params
        .get("name")
        .and_then(Value::as_str)
        .ok_or_else(|| RpcError::invalid_params("tools/call requires a string name"))?;
    let arguments = params.get("arguments").cloned().unwrap_or_else(|| json!({}));
    Ok((name, StoredValue::from_json(arguments)))
}

/// Wire encoding of a tool result: a text block, plus structured content for
/// raw object outputs.
pub fn encode_tool_result(result: &ToolResult) -> Value {
    let mut out = json!({
        "content": [{"type": "text", "text": result.text()}],
        "isError": false,
    });
    if let ToolResult::Raw(value @ StoredValue::Object(_)) = result {
        out["structuredContent"] = value.to_json();
    }
    out
}

/// Serves one [`ProxySession`].
pub struct ProxyHandler {
    session: ProxySession,
}

impl ProxyHandler {
    pub fn new(session: ProxySession) -> Self {
        Self { session }
    }

    pub fn session(&self) -> &ProxySession {
        &self.session
    }
}

impl RpcHandler for ProxyHandler {
    fn handle(&self, method: &str, params: Value) -> Result<Value, RpcError> {
        match method {
            "initialize" => Ok(initialize_result()),
            "notifications/initialized" | "notifications/cancelled" => Ok(Value::Null),
            "ping" => Ok(json!({})),
            "tools/list" => {
                let tools: Vec<Value> = self.session.list_tools().iter().map(|d| d.to_wire()).collect();
                Ok(json!({ "tools": tools }))
            }
            "tools/call" => {
                let (name, args) = call_params(&params)?;
                let result = self.session.call_tool(name, &args)?;
                Ok(encode_tool_result(&result))
            }
            "memory/list" => {
                let prefix = params.get("prefix").and_then(Value::as_str);
                Ok(json!({ "entries": self.session.store().list_entries(prefix) }))
            }
            "memory/get" => {
                let raw = params
                    .get("path")
                    .and_then(Value::as_str)
                    .ok_or_else(|| RpcError::invalid_params("memory/get requires a string path"))?;
                let path = parse(raw).ok_or_else(|| ProxyError::DanglingPath(raw.to_owned()))?;
                let value = self
                    .session
                    .store()
                    .get(&path)
                    .map_err(|_| ProxyError::DanglingPath(raw.to_owned()))?;
                Ok(json!({ "kind": value.kind(), "value": value }))
            }
            "memory/clear" => Ok(json!({ "removed": self.session.store().clear() })),
            other => Err(RpcError::method_not_found(other)),
        }
    }
}

/// Serves plain (unmirrored) tools. Used for the harness's upstream servers.
pub struct ToolServerHandler {
    tools: Vec<Arc<dyn Tool>>,
}

impl ToolServerHandler {
    pub fn new(tools: Vec<Arc<dyn Tool>>) -> Self {
        Self { tools }
    }
}

impl RpcHandler for ToolServerHandler {
    fn handle(&self, method: &str, params: Value) -> Result<Value, RpcError> {
        match method {
            "initialize" => Ok(initialize_result()),
            "notifications/initialized" | "notifications/cancelled" => Ok(Value::Null),
            "ping" => Ok(json!({})),
            "tools/list" => {
                let tools: Vec<Value> = self.tools.iter().map(|t| t.descriptor().to_wire()).collect();
                Ok(json!({ "tools": tools }))
            }
            "tools/call" => {
                let (name, args) = call_params(&params)?;
                let tool = self
                    .tools
                    .iter()
                    .find(|t| t.descriptor().name == name)
                    .ok_or_else(|| ProxyError::UnknownTool(name.to_owned()))?;
                Ok(match tool.call(&args) {
                    Ok(output) => encode_tool_result(&ToolResult::Raw(output)),
                    Err(e) => json!({"content": [{"type": "text", "text": e.0}], "isError": true}),
                })
            }
            other => Err(RpcError::method_not_found(other)),
        }
    }
}

/// Serves `handler` on this process's stdin/stdout until stdin closes.
pub fn serve_stdio(handler: &dyn RpcHandler) -> io::Result<()> {
    let stdin = io::stdin();
    serve_connection(stdin.lock(), io::stdout(), handler)
}

/// Accepts connections forever, one fresh session per connection.
pub fn serve_tcp(listener: TcpListener, factory: SessionFactory) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let session = match factory.build() {
            Ok(s) => s,
            Err(e) => {
                tracing::error!("cannot build session: {e}");
                continue;
            }
        };
        thread::spawn(move || {
            let peer = stream.peer_addr().ok();
            let handler = ProxyHandler::new(session);
            let result = stream
                .try_clone()
                .and_then(|reader| serve_connection(BufReader::new(reader), stream, &handler));
            if let Err(e) = result {
                tracing::warn!("connection {peer:?} ended with error: {e}");
            }
        });
    }
    Ok(())
}
