//! Strategies, oracles, and a raw stdio client shared by the integration
//! tests and the acceptance runner.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver};
use std::thread;
use std::time::Duration;

use proptest::prelude::*;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use uuid::Uuid;

use toolmem::harness::grid::{grid_micros, GridSpec};
use toolmem::memory::MemoryStore;
use toolmem::path::{is_valid_subkey, parse, resolve_arguments, DanglingPath, MemoryPath};
use toolmem::StoredValue;

pub const BIN: &str = env!("CARGO_BIN_EXE_toolmem");
pub const MAX_LARGE_BYTES: usize = 8 << 20;

// ---------------------------------------------------------------- values

fn seeded_bytes(len: usize, seed: u64) -> Vec<u8> {
    let mut bytes = vec![0u8; len];
    ChaCha8Rng::seed_from_u64(seed).fill_bytes(&mut bytes);
    bytes
}

fn leaf() -> impl Strategy<Value = StoredValue> {
    prop_oneof![
        Just(StoredValue::Null),
        any::<bool>().prop_map(StoredValue::Boolean),
        any::<i64>().prop_map(StoredValue::from),
        any::<u64>().prop_map(StoredValue::from),
        any::<f64>()
            .prop_filter("finite", |f| f.is_finite())
            .prop_map(|f| StoredValue::float(f).unwrap()),
        any::<String>().prop_map(StoredValue::Text),
        proptest::collection::vec(any::<u8>(), 0..64).prop_map(StoredValue::Binary),
    ]
}

/// Values up to 8 MiB, cheap to generate: content comes from a seeded stream.
fn large() -> impl Strategy<Value = StoredValue> {
    (0..=MAX_LARGE_BYTES, any::<u64>(), 0..3u8).prop_map(|(len, seed, kind)| match kind {
        0 => StoredValue::Binary(seeded_bytes(len, seed)),
        1 => {
            let text: String = seeded_bytes(len, seed)
                .iter()
                .map(|b| char::from(b' ' + b % 95))
                .collect();
            StoredValue::Text(text)
        }
        _ => {
            let raw = seeded_bytes(len / 8 * 8, seed);
            let floats = raw
                .chunks_exact(8)
                .map(|c| {
                    let f = f64::from_le_bytes(c.try_into().unwrap());
                    StoredValue::float(if f.is_finite() { f } else { 0.5 }).unwrap()
                })
                .collect();
            let grid: BTreeMap<String, StoredValue> = [
                ("raw_grid".to_owned(), StoredValue::Array(floats)),
                ("n".to_owned(), StoredValue::from(len as u64)),
            ]
            .into_iter()
            .collect();
            StoredValue::Object(grid)
        }
    })
}

fn key() -> impl Strategy<Value = String> {
    prop_oneof![
        8 => "[a-z_]{1,8}",
        1 => Just(String::new()),
        1 => "[a-z]{1,3}/[a-z]{1,3}",
        1 => any::<String>(),
    ]
}

/// Nested values of every kind, with an occasional multi-megabyte payload.
pub fn stored_value() -> impl Strategy<Value = StoredValue> {
    let nested = leaf().prop_recursive(4, 64, 8, |inner| {
        prop_oneof![
            proptest::collection::vec(inner.clone(), 0..8).prop_map(StoredValue::Array),
            proptest::collection::btree_map(key(), inner, 0..8).prop_map(StoredValue::Object),
        ]
    });
    prop_oneof![40 => nested, 1 => large()]
}

/// get(put(v)) is bit-equal to v, each fanned-out child equals its field,
/// and the tagged serde form round-trips.
pub fn check_roundtrip(value: &StoredValue) -> Result<(), String> {
    let store = MemoryStore::new();
    let base = store.put("tool", value.clone()).map_err(|e| e.to_string())?;
    let got = store.get(&base).map_err(|e| e.to_string())?;
    if !got.bit_eq(value) {
        return Err(format!("base value differs at {base}"));
    }
    if let StoredValue::Object(fields) = value {
        for (k, v) in fields {
            let child = base.child(k);
            match (is_valid_subkey(k), child) {
                (true, Ok(child)) => {
                    let got = store.get(&child).map_err(|e| format!("{child}: {e}"))?;
                    if !got.bit_eq(v) {
                        return Err(format!("child {child} differs from field {k:?}"));
                    }
                }
                (false, _) => {}
                (true, Err(e)) => return Err(format!("valid subkey {k:?} rejected: {e}")),
            }
        }
    }
    let tagged = serde_json::to_string(value).map_err(|e| e.to_string())?;
    let back: StoredValue = serde_json::from_str(&tagged).map_err(|e| e.to_string())?;
    if !back.bit_eq(value) {
        return Err("tagged serde form is lossy".into());
    }
    Ok(())
}

// ------------------------------------------------------------ resolution

/// A leaf of a generated argument tree.
#[derive(Debug, Clone)]
pub enum Leaf {
    Plain(StoredValue),
    /// Index into the live values; `true` addresses the `/field` child.
    Live(usize, bool),
    Decoy(u8),
    Dangling,
}

#[derive(Debug, Clone)]
pub enum Shape {
    Leaf(Leaf),
    Array(Vec<Shape>),
    Object(Vec<(String, Shape)>),
}

#[derive(Debug, Clone)]
pub struct ResolutionCase {
    pub live_values: Vec<StoredValue>,
    pub tree: Shape,
}

fn plain_leaf() -> impl Strategy<Value = StoredValue> {
    prop_oneof![
        any::<i32>().prop_map(|i| StoredValue::from(i64::from(i))),
        any::<bool>().prop_map(StoredValue::Boolean),
        "[a-z ]{0,12}".prop_map(StoredValue::Text),
        Just(StoredValue::Null),
    ]
}

fn shape(leaves: Vec<Leaf>) -> BoxedStrategy<Shape> {
    // scatter the given leaves, padded with plain ones, into a random nesting
    (proptest::collection::vec(plain_leaf(), 0..6), any::<u64>())
        .prop_map(move |(plain, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut all: Vec<Shape> = leaves
                .iter()
                .cloned()
                .map(Shape::Leaf)
                .chain(plain.into_iter().map(|p| Shape::Leaf(Leaf::Plain(p))))
                .collect();
            // shuffle, then fold into nested containers
            for i in (1..all.len()).rev() {
                all.swap(i, (rng.next_u32() as usize) % (i + 1));
            }
            let mut nodes = all;
            while nodes.len() > 1 {
                let take = 1 + (rng.next_u32() as usize) % nodes.len().min(3);
                let group: Vec<Shape> = nodes.drain(..take).collect();
                let node = if rng.next_u32() % 2 == 0 {
                    Shape::Array(group)
                } else {
                    Shape::Object(
                        group
                            .into_iter()
                            .enumerate()
                            .map(|(i, s)| (format!("k{i}"), s))
                            .collect(),
                    )
                };
                nodes.push(node);
            }
            let root = nodes.pop().unwrap_or(Shape::Leaf(Leaf::Plain(StoredValue::Null)));
            // the root of an argument tree is always an object
            match root {
                obj @ Shape::Object(_) => obj,
                other => Shape::Object(vec![("args".into(), other)]),
            }
        })
        .boxed()
}

/// Trees with 0–5 live paths, 0–5 near-miss decoys, and optionally one
/// dangling path.
pub fn resolution_case(with_dangling: bool) -> impl Strategy<Value = ResolutionCase> {
    (
        proptest::collection::vec(plain_leaf(), 1..4),
        0..=5usize,
        proptest::collection::vec(0..8u8, 0..=5),
        any::<u64>(),
    )
        .prop_flat_map(move |(fields, live, decoys, seed)| {
            let live_values: Vec<StoredValue> = (0..fields.len().max(1))
                .map(|i| {
                    [
                        ("field".to_owned(), fields[i % fields.len()].clone()),
                        ("n".to_owned(), StoredValue::from(i as u64)),
                    ]
                    .into_iter()
                    .collect()
                })
                .collect();
            let n = live_values.len();
            let mut leaves: Vec<Leaf> = (0..live)
                .map(|i| Leaf::Live((seed as usize + i) % n, i % 2 == 1))
                .collect();
            leaves.extend(decoys.into_iter().map(Leaf::Decoy));
            if with_dangling {
                leaves.push(Leaf::Dangling);
            }
            shape(leaves).prop_map(move |tree| ResolutionCase {
                live_values: live_values.clone(),
                tree,
            })
        })
}

fn decoy(kind: u8, live: &MemoryPath) -> String {
    let s = live.to_string();
    let uuid = live.uuid().to_string();
    let replace_at = |from_end: usize, c: char| {
        let mut chars: Vec<char> = s.chars().collect();
        let at = chars.len() - from_end;
        chars[at] = c;
        chars.into_iter().collect::<String>()
    };
    match kind {
        0 => replace_at(22, '3'),             // wrong version nibble
        1 => s.to_uppercase(),                // uppercase hex
        2 => format!("{s}/field/extra"),      // two subkey levels
        3 => format!("see {s}"),              // embedded in prose
        4 => format!("{s}/"),                 // empty subkey
        5 => uuid,                            // no tool name
        6 => format!("tool-{}", &uuid[..35]), // truncated uuid
        _ => replace_at(17, 'c'),             // wrong variant nibble
    }
}

/// Materializes a case against a fresh store: returns (store, argument tree,
/// expected resolution, dangling path if any).
pub fn materialize(case: &ResolutionCase) -> (MemoryStore, StoredValue, StoredValue, Option<String>) {
    let store = MemoryStore::new();
    let paths: Vec<MemoryPath> = case
        .live_values
        .iter()
        .map(|v| store.put("tool", v.clone()).expect("unbounded store"))
        .collect();
    let dangling = MemoryPath::new("tool", Uuid::from_u128(0x1111_2222_3333_4444_8555_6666_7777_8888)).unwrap();
    let mut dangling_seen = None;

    fn build(
        shape: &Shape,
        case: &ResolutionCase,
        paths: &[MemoryPath],
        dangling: &MemoryPath,
        dangling_seen: &mut Option<String>,
    ) -> (StoredValue, StoredValue) {
        match shape {
            Shape::Leaf(Leaf::Plain(v)) => (v.clone(), v.clone()),
            Shape::Leaf(Leaf::Live(i, child)) => {
                let (path, value) = if *child {
                    (
                        paths[*i].child("field").unwrap(),
                        case.live_values[*i].get("field").unwrap().clone(),
                    )
                } else {
                    (paths[*i].clone(), case.live_values[*i].clone())
                };
                (StoredValue::Text(path.to_string()), value)
            }
            Shape::Leaf(Leaf::Decoy(kind)) => {
                let text = StoredValue::Text(decoy(*kind, &paths[0]));
                (text.clone(), text)
            }
            Shape::Leaf(Leaf::Dangling) => {
                *dangling_seen = Some(dangling.to_string());
                let text = StoredValue::Text(dangling.to_string());
                (text.clone(), text)
            }
            Shape::Array(items) => {
                let (a, b): (Vec<_>, Vec<_>) = items
                    .iter()
                    .map(|s| build(s, case, paths, dangling, dangling_seen))
                    .unzip();
                (StoredValue::Array(a), StoredValue::Array(b))
            }
            Shape::Object(fields) => {
                let mut a = BTreeMap::new();
                let mut b = BTreeMap::new();
                for (k, s) in fields {
                    let (x, y) = build(s, case, paths, dangling, dangling_seen);
                    a.insert(k.clone(), x);
                    b.insert(k.clone(), y);
                }
                (StoredValue::Object(a), StoredValue::Object(b))
            }
        }
    }

    let (args, expected) = build(&case.tree, case, &paths, &dangling, &mut dangling_seen);
    (store, args, expected, dangling_seen)
}

/// Resolution replaces live paths and only live paths; dangling paths fail.
pub fn check_resolution(case: &ResolutionCase) -> Result<(), String> {
    let (store, args, expected, dangling) = materialize(case);
    match (resolve_arguments(&args, &store), dangling) {
        (Ok(got), None) if got.bit_eq(&expected) => Ok(()),
        (Ok(got), None) => Err(format!(
            "resolved {} but expected {}",
            got.canonical_json(),
            expected.canonical_json()
        )),
        (Err(DanglingPath(p)), Some(d)) if p == d => Ok(()),
        (Err(e), None) => Err(format!("unexpected {e}")),
        (other, Some(d)) => Err(format!("expected DanglingPath({d}), got {other:?}")),
    }
}

/// Strings near the path grammar, for parser/regex parity.
pub fn near_path_string() -> impl Strategy<Value = String> {
    prop_oneof![
        "[A-Za-z0-9_]{0,6}-[0-9a-f]{8}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{12}(/[a-z/]{0,4})?",
        "[A-Za-z0-9_]{1,6}-[0-9a-f]{8}-[0-9a-f]{4}-4[0-9a-f]{3}-[89abAB][0-9a-f]{3}-[0-9a-fA-F]{12}(/.{0,4})?",
        "[A-Za-z0-9_\\- /]{0,50}",
        any::<String>(),
    ]
}

pub fn path_free(value: &StoredValue) -> bool {
    match value {
        StoredValue::Text(s) => parse(s).is_none(),
        StoredValue::Array(items) => items.iter().all(path_free),
        StoredValue::Object(map) => map.values().all(path_free),
        _ => true,
    }
}

// ------------------------------------------------------------ similarity

/// Independent cosine ranking: exact integer dot products over the grids'
/// micro-unit values, every corpus score, then a stable sort.
pub fn brute_force_top_k(query_smiles: &str, corpus: &[String], spec: GridSpec, k: usize) -> Vec<(String, f64)> {
    let query: Vec<i64> = grid_micros(query_smiles, spec).map(i64::from).collect();
    let qq: i128 = query.iter().map(|&q| i128::from(q * q)).sum();
    let mut scored: Vec<(String, f64)> = corpus
        .iter()
        .map(|smiles| {
            let (mut dot, mut cc) = (0i128, 0i128);
            for (q, c) in query.iter().zip(grid_micros(smiles, spec).map(i64::from)) {
                dot += i128::from(q * c);
                cc += i128::from(c * c);
            }
            (smiles.clone(), dot as f64 / ((qq as f64).sqrt() * (cc as f64).sqrt()))
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    scored.truncate(k);
    scored
}

// ---------------------------------------------------------- stdio client

/// A line-oriented JSON-RPC peer over a child process's stdio.
pub struct StdioPeer {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<String>,
    next_id: u64,
}

pub const RECV_TIMEOUT: Duration = Duration::from_secs(60);

impl StdioPeer {
    pub fn spawn(args: &[&str]) -> Self {
        let mut child = Command::new(BIN)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .expect("spawn toolmem");
        let stdin = child.stdin.take().unwrap();
        let stdout = child.stdout.take().unwrap();
        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Self {
            child,
            stdin,
            lines,
            next_id: 1,
        }
    }

    /// The proxy in front of a harness tool server.
    pub fn proxy(workflow: &str, grid_side: usize, extra: &[&str]) -> Self {
        let upstream = format!("{BIN} harness-server {workflow} --grid-side {grid_side}");
        let mut args = vec!["serve", "--upstream", upstream.as_str(), "--threshold-bytes", "64"];
        args.extend_from_slice(extra);
        Self::spawn(&args)
    }

    pub fn send_raw(&mut self, line: &str) {
        self.stdin.write_all(line.as_bytes()).unwrap();
        self.stdin.write_all(b"\n").unwrap();
        self.stdin.flush().unwrap();
    }

    /// Sends a request without waiting; returns its id.
    pub fn send(&mut self, method: &str, params: Value) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        let msg = json!({"jsonrpc": "2.0", "id": id, "method": method, "params": params});
        self.send_raw(&msg.to_string());
        id
    }

    pub fn recv(&mut self) -> Value {
        let line = self.lines.recv_timeout(RECV_TIMEOUT).expect("response within timeout");
        serde_json::from_str(&line).expect("response is one JSON object per line")
    }

    pub fn call(&mut self, method: &str, params: Value) -> Value {
        let id = self.send(method, params);
        let response = self.recv();
        assert_eq!(response["id"], id, "response id matches request id");
        response
    }

    pub fn initialize(&mut self) -> Value {
        let r = self.call(
            "initialize",
            json!({"protocolVersion": "2024-11-05", "capabilities": {}, "clientInfo": {"name": "test", "version": "0"}}),
        );
        self.send_raw(&json!({"jsonrpc": "2.0", "method": "notifications/initialized"}).to_string());
        r
    }

    pub fn tool(&mut self, name: &str, arguments: Value) -> Value {
        self.call("tools/call", json!({"name": name, "arguments": arguments}))
    }
}

impl Drop for StdioPeer {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub fn result_text(response: &Value) -> &str {
    response["result"]["content"][0]["text"].as_str().unwrap_or_default()
}

pub fn error_code(response: &Value) -> Option<i64> {
    response["error"]["code"].as_i64()
}

/// First memory path in `text` not also present in `exclude`.
pub fn first_new_path(text: &str, exclude: &str) -> Option<MemoryPath> {
    toolmem::path::find_paths(text)
        .into_iter()
        .find(|p| !exclude.contains(&p.to_string()))
}

// ---------------------------------------------------------------- golden

pub const GRID_PATH: &str = "generate_molecule_grid-fcb87ffa-31b7-41b0-bf90-76d0c87000f5";
pub const SIMILAR_PATH: &str = "retrieve_similar_molecules-30daddd0-d4a1-4689-bc78-32eb93b16252";
pub const TIKA_PATH: &str = "tika-d719493f-b573-4dc2-b15c-6d031f64b7af";
pub const EXTRACT_PATH: &str = "extract_sds-3bec235a-8bb3-4e1f-b049-029c655f54f1";

pub fn golden_grid_instruction() -> String {
    format!(
        "The result of the function generate_molecule_grid with the input value stored at \
         {{\"molecule_description\": \"OC12COC3=NCC1C23\"}} is currently stored at {GRID_PATH}. \
         When you need to access it, pass as argument for the tool its path: {GRID_PATH}. \
         The result stored is a dict with the keys raw_grid and shape. \
         When you want to access only a particular value stored under these keys, use as memory path \
         {GRID_PATH}/raw_grid or {GRID_PATH}/shape, depending on which value you want to use."
    )
}

/// The recorded similarity instruction, which the recording cuts after its
/// first sentence.
pub fn golden_similar_prefix() -> String {
    format!(
        "The result of the function retrieve_similar_molecules with the input value stored at \
         {{\"raw_grid\": \"{GRID_PATH}/raw_grid\"}} is currently stored at {SIMILAR_PATH}."
    )
}

pub fn golden_similar_instruction() -> String {
    format!(
        "{} When you need to access it, pass as argument for the tool its path: {SIMILAR_PATH}.",
        golden_similar_prefix()
    )
}

pub fn golden_tika_instruction() -> String {
    format!(
        "The result of the function tika with the input value stored at {{\"pdf_path\": \"sds.pdf\"}} \
         is currently stored at {TIKA_PATH}. When you need to access it, pass as argument for the tool \
         its path: {TIKA_PATH}."
    )
}

pub fn golden_extract_arguments() -> String {
    format!("{{\"content\": \"{TIKA_PATH}\"}}")
}

pub fn golden_sds_answer() -> Value {
    json!({
        "product_name": "Titanium(IV) oxide, anatase",
        "ingredients": [{"name": "Titanium dioxide", "cas_rn": "1317-70-0", "concentration": "", "formula": "O2Ti"}]
    })
}
