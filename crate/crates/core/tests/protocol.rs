mod common;

use common::{spec, Fixture};
use seltest_core::layout::StageId;
use seltest_core::monitor::MonitorConfig;
use seltest_core::worker::{CheatMode, CheatStrategy};

fn fixture() -> Fixture {
    Fixture::new(spec(7, 2, 3, 2, 3), 5, 21)
}

fn cheat(stage: StageId, mode: CheatMode) -> Option<CheatStrategy> {
    Some(CheatStrategy { stage, mode })
}

#[test]
fn honest_worker_passes_every_stage_and_is_endorsed() {
    let fx = fixture();
    for seed in 0..20 {
        let (mut w, mut m) = fx.pair(None, MonitorConfig::default(), seed);
        assert!(m.init_round(&mut w).1.is_honest());
        for s in StageId::PIPELINE {
            let rep = m.audit(&mut w, s);
            assert!(rep.verdict.is_honest(), "{s}: {:?}", rep.verdict);
        }
        let e = m.endorse().unwrap();
        assert_eq!(e.worker, 1);
    }
}

#[test]
fn faked_output_is_caught_when_probed() {
    let fx = fixture();
    let g = fx.package.model.geometry().unwrap();
    for stage in StageId::PIPELINE {
        let n = g.computations(stage);
        for seed in 0..5 {
            let (mut w, mut m) = fx.pair(cheat(stage, CheatMode::FakeOutputs { m: 1 }), MonitorConfig::default(), seed);
            m.init_round(&mut w);
            for s in StageId::PIPELINE.into_iter().take_while(|&s| s != stage) {
                assert!(m.audit(&mut w, s).verdict.is_honest());
            }
            let c = w.run_stage(stage).unwrap();
            m.receive_commit(&c).unwrap();
            let bad = w.faked_indices(stage)[0];
            let mut picks = vec![bad];
            if n > 1 {
                picks.push((bad + 1) % n);
                picks.sort_unstable();
            }
            let plan = m.plan_for(stage, &picks);
            let resp = w.answer_challenge(&plan.challenge()).unwrap();
            assert!(!m.check(&plan, &resp).verdict.is_honest(), "{stage} seed {seed}");
        }
    }
}

#[test]
fn unprobed_fake_goes_unnoticed() {
    let fx = fixture();
    let stage = StageId::ConvForward;
    let n = fx.package.model.geometry().unwrap().computations(stage);
    let (mut w, mut m) = fx.pair(cheat(stage, CheatMode::FakeOutputs { m: 1 }), MonitorConfig::default(), 4);
    m.init_round(&mut w);
    let c = w.run_stage(stage).unwrap();
    m.receive_commit(&c).unwrap();
    let bad = w.faked_indices(stage)[0];
    let picks: Vec<usize> = (0..n).filter(|&k| k != bad).take(2).collect();
    let plan = m.plan_for(stage, &picks);
    let resp = w.answer_challenge(&plan.challenge()).unwrap();
    assert!(m.check(&plan, &resp).verdict.is_honest());
}

#[test]
fn forged_evidence_is_rejected() {
    let fx = fixture();
    for stage in StageId::PIPELINE {
        let (mut w, mut m) = fx.pair(cheat(stage, CheatMode::FakeEvidence), MonitorConfig::default(), 8);
        m.init_round(&mut w);
        let mut verdicts = StageId::PIPELINE.into_iter().map(|s| (s, m.audit(&mut w, s).verdict.is_honest()));
        let failed = verdicts.find(|&(_, ok)| !ok).map(|(s, _)| s);
        assert_eq!(failed, Some(stage));
        assert!(m.endorse().is_err());
    }
}

#[test]
fn wrong_record_fails_at_init() {
    let fx = fixture();
    let (mut w, mut m) = fx.pair(cheat(StageId::ConvForward, CheatMode::WrongRecord), MonitorConfig::default(), 2);
    let (requested, verdict) = m.init_round(&mut w);
    assert!(!verdict.is_honest());
    assert_ne!(w.record_id(), Some(requested));
    assert!(m.endorse().is_err());
}

#[test]
fn skipped_computation_is_caught() {
    let fx = fixture();
    for stage in [StageId::ConvForward, StageId::FcForward, StageId::ConvBackwardFilters] {
        let (mut w, mut m) = fx.pair(cheat(stage, CheatMode::SkipComputation), MonitorConfig::default(), 6);
        m.init_round(&mut w);
        let first_bad = StageId::PIPELINE
            .into_iter()
            .find(|&s| !m.audit(&mut w, s).verdict.is_honest());
        assert_eq!(first_bad, Some(stage));
    }
}

#[test]
fn challenge_before_commit_is_refused() {
    let fx = fixture();
    let (mut w, mut m) = fx.pair(None, MonitorConfig::default(), 1);
    m.init_round(&mut w);
    let plan = m.plan_for(StageId::ConvForward, &[0, 1]);
    assert!(w.answer_challenge(&plan.challenge()).is_err());
}

#[test]
fn out_of_order_commitments_are_rejected() {
    let fx = fixture();
    let (mut w, mut m) = fx.pair(None, MonitorConfig::default(), 1);
    assert!(w.run_stage(StageId::ConvForward).is_err());
    m.init_round(&mut w);
    assert!(w.run_stage(StageId::ActForward).is_err());
    let c1 = w.run_stage(StageId::ConvForward).unwrap();
    let c2 = w.run_stage(StageId::ActForward).unwrap();
    assert!(m.receive_commit(&c2).is_err());
    m.receive_commit(&c1).unwrap();
    assert!(m.receive_commit(&c1).is_err());
    m.receive_commit(&c2).unwrap();
}

#[test]
fn fewer_than_two_probes_is_a_config_error() {
    let fx = fixture();
    let keys = fx.keys.monitor_keys(1).unwrap();
    for p in [0, 1] {
        let cfg = MonitorConfig { p, link_checks: true };
        let m = seltest_core::monitor::Monitor::new(
            1,
            0,
            cfg,
            keys.clone(),
            fx.package.trusted_view(),
            fx.store.monitor_view(),
            0,
        );
        assert!(m.is_err());
    }
}

#[test]
fn endorsement_requires_every_stage() {
    let fx = fixture();
    let (mut w, mut m) = fx.pair(None, MonitorConfig::default(), 3);
    m.init_round(&mut w);
    for s in StageId::PIPELINE.into_iter().take(4) {
        m.audit(&mut w, s);
    }
    assert!(m.endorse().is_err());
}
