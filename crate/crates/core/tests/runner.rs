use std::sync::Arc;

use mact_core::backend::{ReplayBackend, ReplayEntry, ScriptedCompletion};
use mact_core::runner::{read_records, run_dataset, stats_for, trace_file_name, RunnerError, RESULTS_FILE, TRACES_DIR};
use mact_core::{Intent, RunConfig, RunDeps, StopReason, Table, TqaInstance};

fn instance(i: usize) -> TqaInstance {
    TqaInstance {
        id: format!("toy/{i}"),
        table: Table {
            header: vec!["item".into(), "count".into()],
            rows: vec![vec!["x".into(), i.to_string()]],
        },
        question: format!("How many x are there in case {i}?"),
        texts: None,
        gold: Some(vec![i.to_string()]),
    }
}

fn scoped(id: &str, texts: Vec<String>) -> ReplayEntry {
    ReplayEntry {
        instance_id: Some(id.to_string()),
        completions: texts.into_iter().map(ScriptedCompletion::Text).collect(),
        ..Default::default()
    }
}

/// Even instances agree on the answer immediately; odd ones ask one question
/// first, and half of their rollouts answer wrongly.
fn script(n: usize) -> Vec<ReplayEntry> {
    let mut entries = Vec::new();
    for i in 0..n {
        let id = instance(i).id;
        if i % 2 == 0 {
            let finish = format!("Thought 1: Read it off.\nAction 1: Finish[{i}]");
            entries.push(scoped(&id, vec![finish; 5]));
        } else {
            let rollout = |a: usize| {
                format!("Thought 1: Ask.\nAction 1: Ask[count of x]\nObservation 1: {a}\nThought 2: Done.\nAction 2: Finish[{a}]")
            };
            let mut rollouts = vec![rollout(i); 3];
            rollouts.extend(vec![rollout(i + 100); 2]);
            entries.push(scoped(&id, rollouts));
            entries.push(scoped(&id, vec![i.to_string(); 5]));
            entries.push(scoped(&id, vec![format!("Thought 2: Done.\nAction 2: Finish[{i}]"); 5]));
        }
    }
    entries
}

fn deps(n: usize) -> RunDeps {
    RunDeps::single(Arc::new(ReplayBackend::new("planner", script(n))))
}

#[test]
fn concurrent_run_writes_results_and_traces_in_order() {
    let instances: Vec<TqaInstance> = (0..8).map(instance).collect();
    let dir = tempfile::tempdir().unwrap();
    let records = run_dataset(&instances, &RunConfig::default(), &deps(8), 3, Some(dir.path())).unwrap();

    assert_eq!(records.len(), 8);
    for (i, r) in records.iter().enumerate() {
        assert_eq!(r.result.instance_id, instances[i].id);
        assert_eq!(r.result.answer.as_deref(), Some(i.to_string().as_str()));
        assert!(r.em);
        if i % 2 == 0 {
            assert_eq!(
                (r.result.stop_reason, r.result.llm_calls, r.result.iterations),
                (StopReason::Shortcut, 5, 1)
            );
        } else {
            assert_eq!(
                (r.result.stop_reason, r.result.llm_calls, r.result.iterations),
                (StopReason::Finish, 15, 2)
            );
            assert_eq!(r.result.trace.steps[0].selected_action.intent, Intent::Ask);
        }
        let trace = dir.path().join(TRACES_DIR).join(trace_file_name(&instances[i].id));
        let events = std::fs::read_to_string(&trace).unwrap();
        assert!(events.lines().count() >= 2, "{}", trace.display());
        for line in events.lines() {
            serde_json::from_str::<serde_json::Value>(line).unwrap();
        }
    }
    assert!(dir.path().join(RESULTS_FILE).exists());

    // Written in completion order; read back they are the same set.
    let mut back = read_records(dir.path()).unwrap();
    back.sort_by(|a, b| a.result.instance_id.cmp(&b.result.instance_id));
    let mut sorted = records.clone();
    sorted.sort_by(|a, b| a.result.instance_id.cmp(&b.result.instance_id));
    assert_eq!(back, sorted);

    let stats = stats_for(&records, None).unwrap();
    assert_eq!(stats.instances, 8);
    assert_eq!(stats.call_total, 4 * 5 + 4 * 15);
    assert_eq!(stats.em.to_string(), "1");
    assert_eq!(stats.iteration_histogram.get(&1), Some(&4));
    assert_eq!(stats.iteration_histogram.get(&2), Some(&4));
    assert_eq!(stats.intent_histogram.get(&Intent::Ask), Some(&4));
    assert_eq!(stats.intent_histogram.get(&Intent::Finish), Some(&4));
}

#[test]
fn worker_count_does_not_change_results() {
    let instances: Vec<TqaInstance> = (0..6).map(instance).collect();
    let one = run_dataset(&instances, &RunConfig::default(), &deps(6), 1, None).unwrap();
    let many = run_dataset(&instances, &RunConfig::default(), &deps(6), 4, None).unwrap();
    assert_eq!(
        serde_json::to_string(&one).unwrap(),
        serde_json::to_string(&many).unwrap()
    );
}

#[test]
fn baseline_ratio_matches_by_id() {
    let instances: Vec<TqaInstance> = (0..4).map(instance).collect();
    let run = run_dataset(&instances, &RunConfig::default(), &deps(4), 2, None).unwrap();
    let mut baseline = run.clone();
    baseline.reverse();
    for b in &mut baseline {
        b.result.iterations = 3;
    }
    // 1 + 2 + 1 + 2 over 4 · 3
    let stats = stats_for(&run, Some(&baseline)).unwrap();
    assert_eq!(stats.iteration_ratio.unwrap().to_string(), "1/2");
    let json = stats.to_json();
    assert_eq!(json["iteration_ratio"], "1/2");
    assert_eq!(json["iteration_ratio_value"], 0.5);

    let partial = &baseline[..3];
    assert!(matches!(stats_for(&run, Some(partial)), Err(RunnerError::Baseline(_))));
}

#[test]
fn configuration_error_stops_the_run() {
    let instances: Vec<TqaInstance> = (0..4).map(instance).collect();
    let config = RunConfig {
        alpha: 1.5,
        ..Default::default()
    };
    let err = run_dataset(&instances, &config, &deps(4), 2, None).unwrap_err();
    assert!(matches!(err, RunnerError::Run(_)), "{err}");
}

#[test]
fn unreadable_results_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(read_records(dir.path()), Err(RunnerError::Io { .. })));
    std::fs::write(dir.path().join(RESULTS_FILE), "{\"result\": 1}\n").unwrap();
    assert!(matches!(
        read_records(dir.path()),
        Err(RunnerError::BadRecord { line: 1, .. })
    ));
}
