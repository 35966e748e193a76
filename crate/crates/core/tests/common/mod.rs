//! Helpers shared by the integration tests: golden scenario loading and a
//! tiny scripted HTTP server.
#![allow(dead_code)]

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use mact_core::backend::ReplayBackend;
use mact_core::harness::{load_dataset, DatasetFormat};
use mact_core::tools::StaticSearch;
use mact_core::{RunConfig, RunDeps, TqaInstance};
use serde_json::Value;

pub fn golden_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

pub struct Scenario {
    pub name: String,
    pub dir: PathBuf,
    pub instance: TqaInstance,
    pub config: RunConfig,
    pub expect: Value,
}

impl Scenario {
    pub fn load(dir: &Path) -> Scenario {
        let name = dir.file_name().unwrap().to_string_lossy().into_owned();
        let mut instances = load_dataset(&dir.join("instance.jsonl"), DatasetFormat::Fixture)
            .unwrap()
            .instances;
        let run = std::fs::read_to_string(dir.join("run.toml")).unwrap_or_default();
        let config: RunConfig = toml::from_str(&run).unwrap();
        let expect = serde_json::from_str(&std::fs::read_to_string(dir.join("expect.json")).unwrap()).unwrap();
        Scenario {
            name,
            dir: dir.to_path_buf(),
            instance: instances.remove(0),
            config,
            expect,
        }
    }

    /// Fresh backends: every call starts from the beginning of the scripts.
    pub fn deps(&self) -> RunDeps {
        let script = |file: &str| -> Arc<ReplayBackend> {
            let path = self.dir.join(file);
            Arc::new(if path.exists() {
                ReplayBackend::from_jsonl(&path).unwrap()
            } else {
                ReplayBackend::new(file, [])
            })
        };
        let mut deps = RunDeps::single(script("planner.jsonl"));
        deps.coder = script("coder.jsonl");
        deps.judge = script("judge.jsonl");
        let search = self.dir.join("search.json");
        if search.exists() {
            deps = deps.with_search(Arc::new(StaticSearch::from_json_file(&search).unwrap()));
        }
        deps
    }
}

pub fn all_scenarios() -> Vec<Scenario> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(golden_root())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    dirs.iter().map(|d| Scenario::load(d)).collect()
}

/// A reply the scripted server sends: status, extra headers, body.
#[derive(Clone, Debug)]
pub struct Reply {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl Reply {
    pub fn json(status: u16, body: Value) -> Reply {
        Reply {
            status,
            headers: vec![],
            body: body.to_string(),
        }
    }

    pub fn header(mut self, k: &str, v: &str) -> Reply {
        self.headers.push((k.into(), v.into()));
        self
    }
}

pub struct ScriptedServer {
    pub url: String,
    pub hits: Arc<AtomicUsize>,
    pub requests: Arc<Mutex<Vec<(String, String)>>>,
    /// Raw header lines of each request, in arrival order.
    pub headers: Arc<Mutex<Vec<Vec<String>>>>,
}

type Handler = dyn Fn(&str, &str) -> Reply + Send + Sync;

fn handle(
    mut stream: TcpStream,
    handler: &Handler,
    requests: &Mutex<Vec<(String, String)>>,
    headers: &Mutex<Vec<Vec<String>>>,
) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut request_line = String::new();
    if reader.read_line(&mut request_line).is_err() {
        return;
    }
    let target = request_line.split_whitespace().nth(1).unwrap_or("/").to_string();
    let mut length = 0;
    let mut seen = Vec::new();
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
            break;
        }
        seen.push(line.trim_end().to_string());
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; length];
    let _ = reader.read_exact(&mut body);
    let body = String::from_utf8_lossy(&body).into_owned();
    requests.lock().unwrap().push((target.clone(), body.clone()));
    headers.lock().unwrap().push(seen);
    let reply = handler(&target, &body);
    let mut out = format!(
        "HTTP/1.1 {} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n",
        reply.status,
        reply.body.len()
    );
    for (k, v) in &reply.headers {
        out.push_str(&format!("{k}: {v}\r\n"));
    }
    out.push_str("\r\n");
    out.push_str(&reply.body);
    let _ = stream.write_all(out.as_bytes());
    let _ = stream.flush();
}

impl ScriptedServer {
    /// Serves replies computed from (path and query, body).
    pub fn start(handler: impl Fn(&str, &str) -> Reply + Send + Sync + 'static) -> ScriptedServer {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let requests = Arc::new(Mutex::new(Vec::new()));
        let headers = Arc::new(Mutex::new(Vec::new()));
        let handler: Arc<Handler> = Arc::new(handler);
        let (h, r, hd) = (hits.clone(), requests.clone(), headers.clone());
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                h.fetch_add(1, Ordering::SeqCst);
                let (handler, r, hd) = (handler.clone(), r.clone(), hd.clone());
                thread::spawn(move || handle(stream, handler.as_ref(), &r, &hd));
            }
        });
        ScriptedServer {
            url,
            hits,
            requests,
            headers,
        }
    }

    /// Serves the given replies in order, then repeats the last one.
    pub fn sequence(replies: Vec<Reply>) -> ScriptedServer {
        let queue = Mutex::new(VecDeque::from(replies));
        ScriptedServer::start(move |_, _| {
            let mut q = queue.lock().unwrap();
            if q.len() > 1 {
                q.pop_front().unwrap()
            } else {
                q.front().cloned().expect("at least one reply")
            }
        })
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

/// Chat-completions reply carrying the given texts as choices.
pub fn chat_reply(texts: &[&str]) -> Value {
    let choices: Vec<Value> = texts
        .iter()
        .enumerate()
        .map(|(i, t)| serde_json::json!({"index": i, "message": {"role": "assistant", "content": t}, "finish_reason": "stop"}))
        .collect();
    serde_json::json!({"id": "x", "object": "chat.completion", "choices": choices})
}
