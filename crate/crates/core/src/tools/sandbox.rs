//! Runs generated snippets in a fresh interpreter process.
//!
//! Each run gets its own temporary directory holding the snippet and the table
//! as CSV. The child runs in its own process group so a timeout kills every
//! descendant. With networking disabled the child is started inside a new
//! network namespace when `unshare` is usable on the host.

use std::io::Read;
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::sync::OnceLock;
use std::thread;
use std::time::{Duration, Instant};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::coding::CodeCandidate;
use crate::table::Table;

/// Environment variable carrying the path of the table CSV.
pub const TABLE_PATH_ENV: &str = "MACT_TABLE_PATH";

const STDERR_TAIL: usize = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SandboxPolicy {
    /// Command line; `{script_path}` is replaced by the snippet file.
    pub interpreter_command: String,
    #[serde(with = "secs")]
    pub timeout: Duration,
    pub max_output_bytes: usize,
    /// Parent directory for per-run scratch directories; system temp when unset.
    pub working_dir: Option<PathBuf>,
    pub network: bool,
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

impl Default for SandboxPolicy {
    fn default() -> Self {
        Self {
            interpreter_command: "python3 {script_path}".into(),
            timeout: Duration::from_secs(10),
            max_output_bytes: 64 * 1024,
            working_dir: None,
            network: false,
        }
    }
}

impl SandboxPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if self.timeout.is_zero() {
            return Err("sandbox timeout must be positive".into());
        }
        if self.max_output_bytes == 0 {
            return Err("sandbox output cap must be positive".into());
        }
        if !self.interpreter_command.contains("{script_path}") {
            return Err("interpreter command must mention {script_path}".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExecStatus {
    Ok,
    ExecError,
    Timeout,
}

/// Outcome of one snippet run. `value` is set exactly when `status` is `Ok`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub status: ExecStatus,
    pub value: Option<String>,
    pub detail: String,
}

impl ExecutionResult {
    fn error(detail: impl Into<String>) -> Self {
        Self {
            status: ExecStatus::ExecError,
            value: None,
            detail: detail.into(),
        }
    }
}

fn netns_available() -> bool {
    static PROBE: OnceLock<bool> = OnceLock::new();
    *PROBE.get_or_init(|| {
        let ok = Command::new("unshare")
            .args(["--net", "--map-root-user", "true"])
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status()
            .is_ok_and(|s| s.success());
        if !ok {
            warn!("unshare is unavailable; sandboxed snippets keep host networking");
        }
        ok
    })
}

/// Reads everything from `src`, keeping at most `cap` bytes.
fn drain_capped(mut src: impl Read, cap: usize) -> (Vec<u8>, bool) {
    let mut kept = Vec::new();
    let mut truncated = false;
    let mut buf = [0u8; 8192];
    loop {
        match src.read(&mut buf) {
            Ok(0) | Err(_) => break,
            Ok(n) => {
                let room = cap.saturating_sub(kept.len());
                kept.extend_from_slice(&buf[..n.min(room)]);
                truncated |= n > room;
            }
        }
    }
    (kept, truncated)
}

/// Longest valid UTF-8 prefix, so a cut inside a character never yields garbage.
fn utf8_prefix(bytes: Vec<u8>) -> String {
    match String::from_utf8(bytes) {
        Ok(s) => s,
        Err(e) => {
            let valid = e.utf8_error().valid_up_to();
            let mut bytes = e.into_bytes();
            bytes.truncate(valid);
            String::from_utf8(bytes).unwrap_or_default()
        }
    }
}

fn kill_group(child: &mut Child) {
    let pid = child.id() as libc::pid_t;
    // SAFETY: signalling our own child's process group; failure is harmless.
    unsafe {
        libc::kill(-pid, libc::SIGKILL);
    }
    let _ = child.kill();
}

/// Executes a snippet against `table` under `policy`. Failures never panic or
/// propagate; they come back as `ExecError` or `Timeout`.
pub fn run_code(candidate: &CodeCandidate, table: &Table, policy: &SandboxPolicy) -> ExecutionResult {
    if let Err(e) = policy.validate() {
        return ExecutionResult::error(e);
    }
    let scratch = match &policy.working_dir {
        Some(dir) => tempfile::Builder::new().prefix("mact-").tempdir_in(dir),
        None => tempfile::Builder::new().prefix("mact-").tempdir(),
    };
    let scratch = match scratch {
        Ok(d) => d,
        Err(e) => return ExecutionResult::error(format!("cannot create scratch dir: {e}")),
    };
    let script = scratch.path().join("snippet.py");
    let table_path = scratch.path().join("table.csv");
    let csv = match table.to_csv() {
        Ok(csv) => csv,
        Err(e) => return ExecutionResult::error(format!("cannot serialize table: {e}")),
    };
    if let Err(e) = std::fs::write(&script, &candidate.source).and_then(|_| std::fs::write(&table_path, csv)) {
        return ExecutionResult::error(format!("cannot write scratch files: {e}"));
    }

    let script_str = script.to_string_lossy();
    let mut argv: Vec<String> = policy
        .interpreter_command
        .split_whitespace()
        .map(|part| part.replace("{script_path}", &script_str))
        .collect();
    if !policy.network && netns_available() {
        argv.splice(0..0, ["unshare".into(), "--net".into(), "--map-root-user".into()]);
    }
    let (program, args) = argv.split_first().expect("validated command is non-empty");

    let mut command = Command::new(program);
    command
        .args(args)
        .current_dir(scratch.path())
        .env_clear()
        .env("PATH", std::env::var_os("PATH").unwrap_or_default())
        .env("HOME", scratch.path())
        .env("LANG", "C.UTF-8")
        .env("PYTHONDONTWRITEBYTECODE", "1")
        .env("PYTHONIOENCODING", "utf-8")
        .env(TABLE_PATH_ENV, &table_path)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    std::os::unix::process::CommandExt::process_group(&mut command, 0);

    let mut child = match command.spawn() {
        Ok(c) => c,
        Err(e) => return ExecutionResult::error(format!("cannot start {program}: {e}")),
    };
    let cap = policy.max_output_bytes;
    let stdout = child.stdout.take().expect("stdout piped");
    let stderr = child.stderr.take().expect("stderr piped");
    let out_reader = thread::spawn(move || drain_capped(stdout, cap));
    let err_reader = thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = { stderr }.read_to_end(&mut buf);
        let start = buf.len().saturating_sub(STDERR_TAIL);
        String::from_utf8_lossy(&buf[start..]).into_owned()
    });

    let deadline = Instant::now() + policy.timeout;
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break Some(status),
            Ok(None) if Instant::now() >= deadline => {
                kill_group(&mut child);
                let _ = child.wait();
                break None;
            }
            Ok(None) => thread::sleep(Duration::from_millis(5)),
            Err(e) => {
                kill_group(&mut child);
                let _ = child.wait();
                return ExecutionResult::error(format!("wait failed: {e}"));
            }
        }
    };
    // Descendants may still hold the pipes open after the leader exits.
    kill_group(&mut child);
    let (out, truncated) = out_reader.join().unwrap_or_default();
    let err_tail = err_reader.join().unwrap_or_default();

    let Some(status) = status else {
        return ExecutionResult {
            status: ExecStatus::Timeout,
            value: None,
            detail: format!("killed after {:.1}s", policy.timeout.as_secs_f64()),
        };
    };
    if !status.success() {
        return ExecutionResult::error(format!("exit status {status}: {}", err_tail.trim()));
    }
    let value = utf8_prefix(out).trim().to_string();
    if value.is_empty() {
        return ExecutionResult::error("snippet printed nothing");
    }
    ExecutionResult {
        status: ExecStatus::Ok,
        value: Some(value),
        detail: if truncated {
            format!("output truncated at {cap} bytes")
        } else {
            String::new()
        },
    }
}
