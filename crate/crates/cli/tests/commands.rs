mod support;

use std::path::{Path, PathBuf};
use std::process::Command;

use cgrpo::auditor::refine_concurrent;
use cgrpo::config::RunConfig;
use cgrpo::data::{load_jsonl, parse_jsonl, to_jsonl};
use cgrpo::run;
use cgrpo::CliError;
use cgrpo_core::refinery::{refine_dataset, DropPolicy, Lexicon, MockAuditor};
use cgrpo_core::rewards::TaskType;
use cgrpo_core::taskgen::generate_dataset;
use proptest::prelude::*;
use support::{fixture_jsonl, golden_fixture};

const COMMITTED_FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/reward_golden.jsonl");

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn tiny() -> RunConfig {
    RunConfig {
        stage1_steps: 4,
        stage2_steps: 3,
        hidden_dim: 16,
        embed_dim: 4,
        warmup_steps: 5,
        eval_limit: 30,
        ..RunConfig::default()
    }
}

#[test]
fn empty_fixture_passes_with_zero_checks() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "empty.jsonl", "");
    let r = run::cmd_reward_check(&RunConfig::default(), &p).unwrap();
    assert_eq!(r.checked, 0);
}

#[test]
fn oracle_fixture_passes() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "g.jsonl", &fixture_jsonl(&golden_fixture(160, 5)));
    let r = run::cmd_reward_check(&RunConfig::default(), &p).unwrap();
    assert_eq!(r.checked, 160);
}

/// Set `REGENERATE_FIXTURES=1` to rewrite the committed file from the oracle.
#[test]
fn committed_fixture_matches_oracle_and_passes() {
    let expected = fixture_jsonl(&golden_fixture(120, 1));
    if std::env::var_os("REGENERATE_FIXTURES").is_some() {
        std::fs::write(COMMITTED_FIXTURE, &expected).unwrap();
    }
    let committed = std::fs::read_to_string(COMMITTED_FIXTURE).unwrap();
    assert_eq!(committed, expected);
    let r = run::cmd_reward_check(&RunConfig::default(), Path::new(COMMITTED_FIXTURE)).unwrap();
    assert!(r.checked >= 100);
}

#[test]
fn perturbed_fixture_names_the_record() {
    let dir = tempfile::tempdir().unwrap();
    let mut records = golden_fixture(20, 2);
    records[7].expected_total += 1e-6;
    let p = write(dir.path(), "bad.jsonl", &fixture_jsonl(&records));
    match run::cmd_reward_check(&RunConfig::default(), &p) {
        Err(CliError::Data(msg)) => {
            assert!(msg.contains("g007") && msg.starts_with("1 of 20"), "{msg}");
        }
        other => panic!("expected data error, got {other:?}"),
    }
}

#[test]
fn jsonl_round_trip_is_byte_stable() {
    let d = generate_dataset(&tiny().world()).unwrap();
    let pairs: Vec<_> = d.all().cloned().collect();
    let text = to_jsonl(&pairs);
    let back = parse_jsonl(&text).unwrap();
    assert_eq!(back, pairs);
    assert_eq!(to_jsonl(&back), text);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn arbitrary_open_pairs_round_trip(q in "[ -~]{1,40}", a in "[ -~]{1,40}", id in "[a-z0-9]{1,8}") {
        prop_assume!(!q.trim().is_empty());
        let line = serde_json::json!({"id": id, "question": q, "answer": a, "type": "open"}).to_string();
        let pairs = parse_jsonl(&line).unwrap();
        prop_assert_eq!(parse_jsonl(&to_jsonl(&pairs)).unwrap(), pairs);
    }
}

#[test]
fn refine_keeps_ids_and_close_pairs_and_is_idempotent() {
    let cfg = RunConfig::default();
    let d = generate_dataset(&cfg.world()).unwrap();
    let pairs: Vec<_> = d.all().cloned().collect();
    let auditor = MockAuditor { lexicon: Lexicon::for_world(&cfg.world()) };
    let (once, report) = refine_dataset(&pairs, &auditor, DropPolicy::Remove, 3);
    assert!(report.needs_fix > 0, "vague training questions should be rewritten");
    let ids: std::collections::BTreeSet<_> = pairs.iter().map(|p| &p.id).collect();
    assert!(once.iter().all(|p| ids.contains(&p.id)));
    for p in pairs.iter().filter(|p| p.task_type == TaskType::Close) {
        assert!(once.contains(p));
    }
    let (twice, _) = refine_dataset(&once, &auditor, DropPolicy::Remove, 3);
    assert_eq!(once, twice);
    let (parallel, parallel_report) = refine_concurrent(&pairs, &auditor, DropPolicy::Remove, 3, 4);
    assert_eq!(parallel, once);
    assert_eq!(parallel_report, report);
}

#[test]
fn missing_dataset_is_a_config_error_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = RunConfig {
        train_data: Some(dir.path().join("nope.jsonl")),
        ..tiny()
    };
    let err = run::cmd_train(&cfg, &run::OutputPaths::new(&out, None, None)).unwrap_err();
    assert!(matches!(err, CliError::Config(_)), "{err:?}");
    assert!(!out.exists());
}

#[test]
fn train_then_eval_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let paths = run::OutputPaths::new(dir.path(), None, None);
    let summary = run::cmd_train(&tiny(), &paths).unwrap();
    assert_eq!(summary.steps, 7);
    assert_eq!(summary.stage_evals.len(), 2);
    for f in [&paths.metrics, &paths.checkpoint, &paths.summary(), &paths.csv()] {
        assert!(f.exists(), "{}", f.display());
    }
    let log = std::fs::read_to_string(&paths.metrics).unwrap();
    assert_eq!(log.lines().count(), 7);
    let csv = std::fs::read_to_string(paths.csv()).unwrap();
    assert_eq!(csv.lines().count(), 8);
    let e = run::cmd_eval(&tiny(), &paths.checkpoint, None).unwrap();
    assert_eq!(e.close.n_close, tiny().world().close_test);
    assert_eq!(e.open.n_open, tiny().world().open_test);
}

#[test]
fn external_data_is_loaded_by_split() {
    let dir = tempfile::tempdir().unwrap();
    run::cmd_gen_data(&tiny(), dir.path()).unwrap();
    let cfg = RunConfig {
        train_data: Some(dir.path().join("train.jsonl")),
        test_data: Some(dir.path().join("test.jsonl")),
        ..tiny()
    };
    let loaded = run::prepare_data(&cfg).unwrap();
    let generated = generate_dataset(&tiny().world()).unwrap();
    assert_eq!(loaded.close_train, generated.close_train);
    assert_eq!(loaded.open_test, generated.open_test);
    assert_eq!(load_jsonl(&dir.path().join("test.jsonl")).unwrap().len(), 1000);
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cgrpo"))
}

#[test]
fn exit_codes_follow_error_category() {
    let dir = tempfile::tempdir().unwrap();
    let bad_cfg = write(dir.path(), "bad.toml", "no_such_key = 1\n");
    let s = bin().args(["--config", bad_cfg.to_str().unwrap(), "gen-data"]).status().unwrap();
    assert_eq!(s.code(), Some(2));

    let mut records = golden_fixture(8, 3);
    records[2].expected_total = 7.0;
    let fixture = write(dir.path(), "f.jsonl", &fixture_jsonl(&records));
    let out = bin().args(["reward-check", fixture.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("g002"));

    let missing = dir.path().join("missing.jsonl");
    let s = bin().args(["refine", "--input", missing.to_str().unwrap(), "--output", "x.jsonl"]).status().unwrap();
    assert_eq!(s.code(), Some(5));

    let ok = write(dir.path(), "ok.jsonl", &fixture_jsonl(&golden_fixture(8, 3)));
    let s = bin().args(["reward-check", ok.to_str().unwrap()]).status().unwrap();
    assert_eq!(s.code(), Some(0));
}
