//! Client side of the tool protocol, used to reach upstream tool servers.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{self, BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::thread;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde_json::{json, Value};
use thiserror::Error;

use super::jsonrpc::{self, RpcError};
use super::PROTOCOL_VERSION;
use crate::mirror::{Tool, ToolDescriptor, ToolError};
use crate::value::{ArgumentTree, StoredValue};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("transport error: {0}")]
    Transport(#[from] io::Error),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("upstream error {}: {}", .0.code, .0.message)]
    Rpc(RpcError),
    #[error("upstream connection closed")]
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UpstreamEndpoint {
    /// A subprocess speaking the protocol on its stdin/stdout.
    Stdio { command: Vec<String> },
    /// A server listening on `host:port`.
    Tcp { address: String },
}

impl UpstreamEndpoint {
    pub fn command(argv: &[&str]) -> Self {
        UpstreamEndpoint::Stdio {
            command: argv.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl FromStr for UpstreamEndpoint {
    type Err = ClientError;

    /// `tcp://host:port`, or a shell-style command line.
    fn from_str(spec: &str) -> Result<Self, Self::Err> {
        if let Some(address) = spec.strip_prefix("tcp://") {
            if address.is_empty() {
                return Err(ClientError::Protocol("empty tcp address".into()));
            }
            return Ok(UpstreamEndpoint::Tcp {
                address: address.to_owned(),
            });
        }
        let command = shlex::split(spec)
            .filter(|argv| !argv.is_empty())
            .ok_or_else(|| ClientError::Protocol(format!("cannot parse upstream command {spec:?}")))?;
        Ok(UpstreamEndpoint::Stdio { command })
    }
}

impl fmt::Display for UpstreamEndpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UpstreamEndpoint::Tcp { address } => write!(f, "tcp://{address}"),
            UpstreamEndpoint::Stdio { command } => {
                f.write_str(&shlex::try_join(command.iter().map(String::as_str)).unwrap_or_default())
            }
        }
    }
}

type Pending = Arc<Mutex<HashMap<u64, mpsc::Sender<Value>>>>;

/// A connection to one tool server. Requests may be issued from several
/// threads at once; a reader thread routes responses back by id.
pub struct McpClient {
    writer: Mutex<Box<dyn Write + Send>>,
    pending: Pending,
    next_id: AtomicU64,
    child: Mutex<Option<Child>>,
}

impl McpClient {
    pub fn open(endpoint: &UpstreamEndpoint) -> Result<Self, ClientError> {
        match endpoint {
            UpstreamEndpoint::Stdio { command } => {
                let (program, args) = command
                    .split_first()
                    .ok_or_else(|| ClientError::Protocol("empty upstream command".into()))?;
                let mut child = Command::new(program)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()?;
                let stdin = child.stdin.take().expect("stdin piped");
                let stdout = child.stdout.take().expect("stdout piped");
                let client = Self::from_streams(BufReader::new(stdout), stdin);
                *client.child.lock().expect("child lock poisoned") = Some(child);
                Ok(client)
            }
            UpstreamEndpoint::Tcp { address } => {
                let stream = TcpStream::connect(address)?;
                let reader = BufReader::new(stream.try_clone()?);
                Ok(Self::from_streams(reader, stream))
            }
        }
    }

    pub fn from_streams<R, W>(reader: R, writer: W) -> Self
    where
        R: BufRead + Send + 'static,
        W: Write + Send + 'static,
    {
        let pending: Pending = Arc::default();
        let routes = Arc::clone(&pending);
        thread::spawn(move || read_responses(reader, routes));
        Self {
            writer: Mutex::new(Box::new(writer)),
            pending,
            next_id: AtomicU64::new(1),
            child: Mutex::new(None),
        }
    }

    pub fn request(&self, method: &str, params: Value) -> Result<Value, ClientError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let (tx, rx) = mpsc::channel();
        self.pending.lock().expect("pending lock poisoned").insert(id, tx);
        let sent = {
            let mut w = self.writer.lock().expect("writer lock poisoned");
            jsonrpc::write_frame(&mut *w, &jsonrpc::request(id, method, params))
        };
        if let Err(e) = sent {
            self.pending.lock().expect("pending lock poisoned").remove(&id);
            return Err(e.into());
        }
        let mut response = rx.recv().map_err(|_| ClientError::Closed)?;
        if let Some(error) = response.get("error") {
            return Err(ClientError::Rpc(RpcError::from_json(error)));
        }
        response
            .get_mut("result")
            .map(Value::take)
            .ok_or_else(|| ClientError::Protocol(format!("response {id} has neither result nor error")))
    }

    pub fn notify(&self, method: &str, params: Value) -> Result<(), ClientError> {
        let mut w = self.writer.lock().expect("writer lock poisoned");
        Ok(jsonrpc::write_frame(&mut *w, &jsonrpc::notification(method, params))?)
    }

    pub fn initialize(&self) -> Result<Value, ClientError> {
        let result = self.request(
            "initialize",
            json!({
                "protocolVersion": PROTOCOL_VERSION,
                "capabilities": {},
                "clientInfo": {"name": "toolmem", "version": env!("CARGO_PKG_VERSION")},
            }),
        )?;
        self.notify("notifications/initialized", json!({}))?;
        Ok(result)
    }

    pub fn list_tools(&self) -> Result<Vec<ToolDescriptor>, ClientError> {
        let result = self.request("tools/list", json!({}))?;
        let tools = result
            .get("tools")
            .and_then(Value::as_array)
            .ok_or_else(|| ClientError::Protocol("tools/list result has no tools array".into()))?;
        tools
            .iter()
            .map(|t| ToolDescriptor::from_wire(t).map_err(|e| ClientError::Protocol(e.to_string())))
            .collect()
    }

    pub fn call_tool(&self, name: &str, arguments: Value) -> Result<Value, ClientError> {
        self.request("tools/call", json!({ "name": name, "arguments": arguments }))
    }
}

impl Drop for McpClient {
    fn drop(&mut self) {
        if let Some(mut child) = self.child.lock().ok().and_then(|mut c| c.take()) {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

fn read_responses<R: BufRead>(reader: R, pending: Pending) {
    for line in reader.lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        let message: Value = match serde_json::from_str(&line) {
            Ok(m) => m,
            Err(e) => {
                tracing::warn!("unparseable frame from upstream: {e}");
                continue;
            }
        };
        let Some(id) = message.get("id").and_then(Value::as_u64) else {
            continue;
        };
        if let Some(tx) = pending.lock().expect("pending lock poisoned").remove(&id) {
            let _ = tx.send(message);
        }
    }
    // dropping the senders wakes every waiter with `Closed`
    pending.lock().expect("pending lock poisoned").clear();
}

/// One tool on an upstream server.
pub struct UpstreamTool {
    client: Arc<McpClient>,
    descriptor: ToolDescriptor,
}

impl Tool for UpstreamTool {
    fn descriptor(&self) -> &ToolDescriptor {
        &self.descriptor
    }

    fn call(&self, args: &ArgumentTree) -> Result<StoredValue, ToolError> {
        let result = self
            .client
            .call_tool(&self.descriptor.name, args.to_json())
            .map_err(ToolError::new)?;
        decode_tool_result(result)
    }
}

/// Turns a `tools/call` result into the tool's output value. Structured
/// content wins over content blocks; `isError` results become [`ToolError`].
pub fn decode_tool_result(mut result: Value) -> Result<StoredValue, ToolError> {
    let blocks = result
        .get_mut("content")
        .map(Value::take)
        .and_then(|c| match c {
            Value::Array(items) => Some(items),
            _ => None,
        })
        .unwrap_or_default();
    if result.get("isError").and_then(Value::as_bool) == Some(true) {
        let message: Vec<&str> = blocks
            .iter()
            .filter_map(|b| b.get("text").and_then(Value::as_str))
            .collect();
        return Err(ToolError(message.join("\n")));
    }
    if let Some(structured) = result.get_mut("structuredContent").map(Value::take) {
        if !structured.is_null() {
            return Ok(StoredValue::from_json(structured));
        }
    }
    let mut values: Vec<StoredValue> = blocks.into_iter().map(decode_block).collect::<Result<_, _>>()?;
    Ok(match values.len() {
        0 => StoredValue::Null,
        1 => values.remove(0),
        _ => StoredValue::Array(values),
    })
}

fn decode_block(mut block: Value) -> Result<StoredValue, ToolError> {
    match block.get("type").and_then(Value::as_str) {
        Some("text") => match block.get_mut("text").map(Value::take) {
            Some(Value::String(s)) => Ok(StoredValue::Text(s)),
            _ => Err(ToolError::new("text content block without text")),
        },
        Some("image") | Some("audio") => {
            let data = block
                .get("data")
                .and_then(Value::as_str)
                .ok_or_else(|| ToolError::new("binary content block without data"))?;
            BASE64
                .decode(data)
                .map(StoredValue::Binary)
                .map_err(|e| ToolError::new(format!("bad base64 in content block: {e}")))
        }
        _ => Ok(StoredValue::from_json(block)),
    }
}

/// Connects to `endpoint`, performs the handshake, and returns its tools.
pub fn connect(endpoint: &UpstreamEndpoint) -> Result<Vec<Arc<dyn Tool>>, ClientError> {
    let client = Arc::new(McpClient::open(endpoint)?);
    client.initialize()?;
    let descriptors = client.list_tools()?;
    let mut seen = HashSet::new();
    for d in &descriptors {
        if !seen.insert(d.name.as_str()) {
            return Err(ClientError::Protocol(format!("{endpoint} lists tool {} twice", d.name)));
        }
    }
    tracing::info!("connected to {endpoint}: {} tools", descriptors.len());
    Ok(descriptors
        .into_iter()
        .map(|descriptor| {
            Arc::new(UpstreamTool {
                client: Arc::clone(&client),
                descriptor,
            }) as Arc<dyn Tool>
        })
        .collect())
}
