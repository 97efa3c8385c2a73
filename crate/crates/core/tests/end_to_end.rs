use seltest_core::game::detection_prob_exact;
use seltest_core::harness::{run_rounds, ExperimentConfig};
use seltest_core::layout::StageId;
use seltest_core::ledger::Ledger;
use seltest_core::par;
use seltest_core::worker::{CheatMode, CheatStrategy};

fn smoke() -> ExperimentConfig {
    serde_json::from_str(include_str!("../../../configs/smoke.json")).unwrap()
}

fn cheater(stage: StageId, m: usize) -> seltest_core::harness::WorkerConfig {
    seltest_core::harness::WorkerConfig {
        cheat: Some(CheatStrategy { stage, mode: CheatMode::FakeOutputs { m } }),
    }
}

#[test]
fn all_honest_workers_are_never_slashed() {
    let mut cfg = smoke();
    cfg.workers = vec![Default::default(); 3];
    cfg.rounds = 4;
    let out = run_rounds(&cfg).unwrap();
    assert!(out.summary.slashed.is_empty());
    assert!(!out.violation());
    assert_eq!(out.summary.endorsements, 12);
    assert_eq!(out.summary.final_version, 4);
    assert_eq!(out.summary.coordinator_balance, 0);
}

#[test]
fn full_cheater_is_slashed_in_the_first_round() {
    let cfg = smoke();
    let out = run_rounds(&cfg).unwrap();
    assert_eq!(out.summary.slashed, vec![(3, 0)]);
    assert!(!out.violation());
    assert_eq!(out.summary.coordinator_balance, out.summary.required_deposit);
    assert_eq!(out.reports[1].workers.len(), 2);
    let ledger = Ledger::from_json_lines(&out.ledger_jsonl).unwrap();
    assert_eq!(ledger.state().total(), 3 * out.summary.required_deposit);
}

#[test]
fn single_fake_is_slashed_after_a_geometric_wait() {
    let mut base = smoke();
    base.model.stride = 2;
    base.workers = vec![cheater(StageId::ConvForward, 1)];
    base.rounds = 25;
    let n = base.model.geometry().unwrap().computations(StageId::ConvForward);
    let q = detection_prob_exact(n as u64, 2, 1).unwrap();
    let sims = 300;
    let slash_round: Vec<Option<u64>> = par::map_range(sims, |s| {
        let mut cfg = base.clone();
        cfg.seed = 1000 + s as u64;
        let out = run_rounds(&cfg).unwrap();
        out.summary.slashed.first().map(|&(_, r)| r)
    });
    for k in [0u64, 4, 9, 24] {
        let want = 1.0 - (1.0 - q).powi(k as i32 + 1);
        let got = slash_round.iter().filter(|r| matches!(r, Some(x) if *x <= k)).count() as f64 / sims as f64;
        let sigma = (want * (1.0 - want) / sims as f64).sqrt();
        assert!((got - want).abs() <= 3.0 * sigma, "by round {k}: {got} vs {want}");
    }
}

#[test]
fn runs_are_deterministic() {
    let cfg = smoke();
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    run_rounds(&cfg).unwrap().write(dir_a.path()).unwrap();
    run_rounds(&cfg).unwrap().write(dir_b.path()).unwrap();
    for f in ["rounds.jsonl", "ledger.jsonl", "summary.json"] {
        let a = std::fs::read(dir_a.path().join(f)).unwrap();
        let b = std::fs::read(dir_b.path().join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn seed_changes_the_run() {
    let mut cfg = smoke();
    cfg.workers = vec![Default::default(); 2];
    let a = run_rounds(&cfg).unwrap();
    cfg.seed += 1;
    let b = run_rounds(&cfg).unwrap();
    assert_ne!(a.summary.config_hash, b.summary.config_hash);
    assert_ne!(a.ledger_jsonl, b.ledger_jsonl);
}
