use std::time::{Duration, Instant};

use mact_core::coding::CodeCandidate;
use mact_core::tools::{run_code, ExecStatus, SandboxPolicy};
use mact_core::Table;

fn snippet(src: &str) -> CodeCandidate {
    CodeCandidate {
        source: src.to_string(),
        sample_index: 0,
    }
}

fn table() -> Table {
    Table {
        header: vec!["Country".into(), "Exports".into()],
        rows: vec![
            vec!["France".into(), "135".into()],
            vec!["Germany, West".into(), "114".into()],
        ],
    }
}

fn policy() -> SandboxPolicy {
    SandboxPolicy {
        timeout: Duration::from_secs(5),
        ..Default::default()
    }
}

#[test]
fn reads_the_table_and_prints() {
    let r = run_code(
        &snippet(
            "import csv, os\nrows = list(csv.DictReader(open(os.environ['MACT_TABLE_PATH'])))\n\
             print(sum(int(r['Exports']) for r in rows))\nprint(rows[1]['Country'])",
        ),
        &table(),
        &policy(),
    );
    assert_eq!(r.status, ExecStatus::Ok, "{r:?}");
    assert_eq!(r.value.as_deref(), Some("249\nGermany, West"));
}

#[test]
fn exceptions_and_silence_are_errors() {
    let r = run_code(&snippet("raise ValueError('nope')"), &table(), &policy());
    assert_eq!(r.status, ExecStatus::ExecError);
    assert!(r.detail.contains("ValueError"), "{}", r.detail);
    assert!(r.value.is_none());
    let r = run_code(&snippet("x = 1"), &table(), &policy());
    assert_eq!(r.status, ExecStatus::ExecError);
}

#[test]
fn infinite_loop_is_killed() {
    let p = SandboxPolicy {
        timeout: Duration::from_millis(500),
        ..Default::default()
    };
    let start = Instant::now();
    let r = run_code(&snippet("while True:\n    pass"), &table(), &p);
    assert_eq!(r.status, ExecStatus::Timeout);
    assert!(
        start.elapsed() < p.timeout + Duration::from_secs(1),
        "{:?}",
        start.elapsed()
    );
}

#[test]
fn forked_children_die_with_the_snippet() {
    let p = SandboxPolicy {
        timeout: Duration::from_millis(500),
        ..Default::default()
    };
    let start = Instant::now();
    let r = run_code(
        &snippet("import subprocess, time\nsubprocess.Popen(['sleep', '30'])\ntime.sleep(30)"),
        &table(),
        &p,
    );
    assert_eq!(r.status, ExecStatus::Timeout);
    assert!(start.elapsed() < Duration::from_secs(3));
}

#[test]
fn output_is_capped_exactly() {
    let p = SandboxPolicy {
        max_output_bytes: 1000,
        ..policy()
    };
    let r = run_code(&snippet("import sys\nsys.stdout.write('x' * 100000)"), &table(), &p);
    assert_eq!(r.status, ExecStatus::Ok);
    assert_eq!(r.value.unwrap().len(), 1000);
    assert!(r.detail.contains("truncated"));
}

#[test]
fn environment_is_scrubbed() {
    std::env::set_var("MACT_SECRET_FOR_TEST", "leak");
    let r = run_code(
        &snippet("import os\nprint(os.environ.get('MACT_SECRET_FOR_TEST', 'clean'))"),
        &table(),
        &policy(),
    );
    assert_eq!(r.value.as_deref(), Some("clean"));
}

#[test]
fn network_is_unreachable_when_disabled() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    let src = format!(
        "import socket\ns = socket.socket()\ns.settimeout(1)\n\
         try:\n    s.connect(('127.0.0.1', {port}))\n    print('connected')\nexcept OSError:\n    print('blocked')"
    );
    let r = run_code(&snippet(&src), &table(), &policy());
    let has_netns = std::process::Command::new("unshare")
        .args(["--net", "--map-root-user", "true"])
        .status()
        .is_ok_and(|s| s.success());
    if has_netns {
        assert_eq!(r.value.as_deref(), Some("blocked"));
    }
    let open = SandboxPolicy {
        network: true,
        ..policy()
    };
    assert_eq!(
        run_code(&snippet(&src), &table(), &open).value.as_deref(),
        Some("connected")
    );
}

#[test]
fn missing_interpreter_is_an_error() {
    let p = SandboxPolicy {
        interpreter_command: "/nonexistent/python {script_path}".into(),
        network: true,
        ..policy()
    };
    assert_eq!(
        run_code(&snippet("print(1)"), &table(), &p).status,
        ExecStatus::ExecError
    );
}
