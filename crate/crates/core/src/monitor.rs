//! The trusted local monitor.
//!
//! For each stage the monitor takes the worker's commitment, samples `p`
//! distinct computations, asks for exactly the leaves needed to redo them and
//! recomputes each one bit for bit. Inputs that a stage re-commits in a new
//! layout (landmark blocks, sub-vectors, gradient rows, strided groups) are
//! additionally opened element by element against the tree they came from;
//! those reads are counted separately as link reads.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{Geometry, StageId, TreeId};
use crate::merkle::{group_commit, verify_group, Digest};
use crate::model::TrustedModel;
use crate::nn::{self, Activation, Tensor};
use crate::protocol::{
    endorsement_message, update_digest, Challenge, Commit, Endorsement, LeafKey, Opening, Prover,
    Response,
};
use crate::records::{verify_record_opening, RecordCommitment};
use crate::rng::derived_rng;
use crate::signing::Signer;
use crate::worker::Worker;

pub const DEFAULT_PROBES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonitorConfig {
    /// Computations tested per stage.
    pub p: usize,
    /// Open re-committed inputs against the trees they came from.
    pub link_checks: bool,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        MonitorConfig {
            p: DEFAULT_PROBES,
            link_checks: true,
        }
    }
}

/// Verification keys a monitor is provisioned with, plus its own signing key.
#[derive(Clone)]
pub struct MonitorKeys {
    pub authority: Arc<dyn Signer>,
    pub coordinator: Arc<dyn Signer>,
    pub own: Arc<dyn Signer>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Honest,
    Dishonest { reason: String },
}

impl Verdict {
    pub fn is_honest(&self) -> bool {
        matches!(self, Verdict::Honest)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub index: usize,
    pub coords: Vec<usize>,
    pub passed: Vec<String>,
    pub failed: Vec<String>,
}

impl ProbeResult {
    fn note(&mut self, label: &str, ok: bool) {
        if ok {
            if !self.passed.iter().chain(&self.failed).any(|l| l == label) {
                self.passed.push(label.to_string());
            }
        } else if !self.failed.iter().any(|l| l == label) {
            self.passed.retain(|l| l != label);
            self.failed.push(label.to_string());
        }
    }

    pub fn ok(&self) -> bool {
        self.failed.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestReport {
    pub stage: StageId,
    /// Computations in the stage.
    pub n: usize,
    pub probes: Vec<ProbeResult>,
    pub verdict: Verdict,
    /// Scalars received for the test battery.
    pub reads: u64,
    /// Co-path digests received for the test battery.
    pub digests_read: u64,
    /// Scalars received for link checks.
    pub link_reads: u64,
    pub link_digests: u64,
}

impl TestReport {
    fn new(stage: StageId, n: usize) -> Self {
        TestReport {
            stage,
            n,
            probes: Vec::new(),
            verdict: Verdict::Honest,
            reads: 0,
            digests_read: 0,
            link_reads: 0,
            link_digests: 0,
        }
    }

    fn dishonest(stage: StageId, n: usize, reason: String) -> Self {
        TestReport {
            verdict: Verdict::Dishonest { reason },
            ..TestReport::new(stage, n)
        }
    }

    fn settle(&mut self) {
        if let Some(p) = self.probes.iter().find(|p| !p.ok()) {
            self.verdict = Verdict::Dishonest {
                reason: format!(
                    "{} probe {:?} failed {}",
                    self.stage,
                    p.coords,
                    p.failed.join(", ")
                ),
            };
        }
    }
}

#[derive(Debug, Clone)]
struct Fetch {
    key: LeafKey,
    label: &'static str,
}

#[derive(Debug, Clone)]
struct PlannedProbe {
    k: usize,
    coords: Vec<usize>,
    battery: Vec<Fetch>,
    /// Battery positions whose values must match `links`, concatenated.
    linked: Vec<usize>,
    links: Vec<LeafKey>,
}

/// The leaves one audit will request, grouped by probe.
#[derive(Debug, Clone)]
pub struct AuditPlan {
    stage: StageId,
    n: usize,
    probes: Vec<PlannedProbe>,
}

impl AuditPlan {
    pub fn stage(&self) -> StageId {
        self.stage
    }

    pub fn probe_indices(&self) -> Vec<usize> {
        self.probes.iter().map(|p| p.k).collect()
    }

    pub fn challenge(&self) -> Challenge {
        let keys = self
            .probes
            .iter()
            .flat_map(|p| p.battery.iter().map(|f| f.key).chain(p.links.iter().copied()))
            .collect();
        Challenge::new(self.stage, keys)
    }

    fn key_count(&self) -> usize {
        self.probes.iter().map(|p| p.battery.len() + p.links.len()).sum()
    }
}

fn key(tree: TreeId, index: usize) -> LeafKey {
    LeafKey { tree, index }
}

fn fetch(tree: TreeId, index: usize, label: &'static str) -> Fetch {
    Fetch {
        key: key(tree, index),
        label,
    }
}

fn same_bits(a: f64, b: f64) -> bool {
    a.to_bits() == b.to_bits()
}

pub struct Monitor {
    worker: u32,
    round: u64,
    cfg: MonitorConfig,
    keys: MonitorKeys,
    trusted: TrustedModel,
    geom: Geometry,
    records: RecordCommitment,
    rng: ChaCha8Rng,
    record_id: Option<u64>,
    roots: BTreeMap<TreeId, Digest>,
    committed: BTreeSet<StageId>,
    loss_claim: Option<f64>,
    theta_fwd_ok: bool,
    theta_bwd_ok: bool,
    reports: Vec<TestReport>,
}

impl Monitor {
    pub fn new(
        worker: u32,
        round: u64,
        cfg: MonitorConfig,
        keys: MonitorKeys,
        trusted: TrustedModel,
        records: RecordCommitment,
        seed: u64,
    ) -> Result<Self> {
        if cfg.p < 2 {
            return Err(Error::Domain(format!(
                "monitor needs at least 2 probes per stage, got {}",
                cfg.p
            )));
        }
        let geom = trusted.spec.geometry()?;
        Ok(Monitor {
            worker,
            round,
            cfg,
            keys,
            trusted,
            geom,
            records,
            rng: derived_rng(seed, worker as u64),
            record_id: None,
            roots: BTreeMap::new(),
            committed: BTreeSet::new(),
            loss_claim: None,
            theta_fwd_ok: false,
            theta_bwd_ok: false,
            reports: Vec::new(),
        })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    pub fn reports(&self) -> &[TestReport] {
        &self.reports
    }

    pub fn record_id(&self) -> Option<u64> {
        self.record_id
    }

    /// Picks the round's record and checks the worker's opening of it.
    pub fn init_round(&mut self, worker: &mut Worker) -> (u64, Verdict) {
        let id = self.rng.gen_range(1..=self.records.n_r);
        let opening = match worker.open_record(id) {
            Ok(o) => o,
            Err(e) => {
                return (
                    id,
                    Verdict::Dishonest {
                        reason: format!("record opening refused: {e}"),
                    },
                )
            }
        };
        if !verify_record_opening(&self.records, id, &opening.leaf_input, &opening.evidence) {
            return (
                id,
                Verdict::Dishonest {
                    reason: format!("record {id} does not open against the record tree"),
                },
            );
        }
        if !self
            .keys
            .authority
            .verify(opening.record_root.as_bytes(), opening.sigma())
        {
            return (
                id,
                Verdict::Dishonest {
                    reason: format!("record {id} signature does not cover the supplied vector root"),
                },
            );
        }
        self.roots.insert(TreeId::RecordVector, opening.record_root);
        self.record_id = Some(id);
        (id, Verdict::Honest)
    }

    /// Accepts a stage commitment if it comes in order and is complete.
    pub fn receive_commit(&mut self, c: &Commit) -> std::result::Result<(), String> {
        let ready = match c.stage.prerequisite() {
            Some(prev) => self.committed.contains(&prev),
            None => c.stage == StageId::ConvForward && self.record_id.is_some(),
        };
        if !ready || self.committed.contains(&c.stage) {
            return Err(format!("commitment for {} out of order", c.stage));
        }
        let expected = c.stage.trees();
        if c.roots.len() != expected.len() || expected.iter().any(|&t| c.root(t).is_none()) {
            return Err(format!("commitment for {} has the wrong trees", c.stage));
        }
        if c.stage == StageId::Loss {
            match c.claims.as_slice() {
                [loss] => self.loss_claim = Some(*loss),
                _ => return Err("loss commitment must carry exactly one loss value".into()),
            }
        }
        for &(t, d) in &c.roots {
            self.roots.insert(t, d);
        }
        let coord = self.keys.coordinator.as_ref();
        match c.stage {
            StageId::FcForward => {
                self.theta_fwd_ok = self
                    .trusted
                    .theta_fwd_valid(&self.roots[&TreeId::FcThetaGroups], coord)
            }
            StageId::FcBackwardInput => {
                self.theta_bwd_ok = self
                    .trusted
                    .theta_bwd_valid(&self.roots[&TreeId::FcBwdThetaGroups], coord)
            }
            _ => {}
        }
        self.committed.insert(c.stage);
        Ok(())
    }

    /// Draws `p` distinct computations (all of them for the loss stage) and
    /// lists the leaves each needs.
    pub fn plan(&mut self, stage: StageId) -> AuditPlan {
        let n = self.geom.computations(stage);
        let picks = if stage == StageId::Loss {
            vec![0]
        } else {
            let mut v = sample(&mut self.rng, n, self.cfg.p.min(n)).into_vec();
            v.sort_unstable();
            v
        };
        self.plan_for(stage, &picks)
    }

    /// Plan for chosen computation indices.
    pub fn plan_for(&self, stage: StageId, picks: &[usize]) -> AuditPlan {
        let n = self.geom.computations(stage);
        let probes = if stage == StageId::Loss {
            vec![self.plan_loss()]
        } else {
            picks.iter().map(|&k| self.plan_probe(stage, k)).collect()
        };
        AuditPlan { stage, n, probes }
    }

    fn plan_loss(&self) -> PlannedProbe {
        let g = &self.geom;
        let mut battery: Vec<Fetch> = (0..g.l_y)
            .map(|i| fetch(TreeId::FcYPrimeRows, i, "prediction rows"))
            .collect();
        battery.extend((0..g.l_y).map(|k| fetch(TreeId::RecordVector, g.y_index(k), "target")));
        PlannedProbe {
            k: 0,
            coords: Vec::new(),
            battery,
            linked: Vec::new(),
            links: Vec::new(),
        }
    }

    fn plan_probe(&self, stage: StageId, k: usize) -> PlannedProbe {
        let g = &self.geom;
        let coords = g.coords(stage, k);
        let (a, d, out) = (g.input_side, g.stride, g.out_side);
        let mut battery = Vec::new();
        let mut linked = Vec::new();
        let mut links = Vec::new();
        match stage {
            StageId::ConvForward => {
                let (t, r, c) = (coords[0], coords[1], coords[2]);
                let blocks = g.covering_blocks(r, c);
                for &b in &blocks {
                    battery.push(fetch(TreeId::ConvXLandmark, b, "T2 landmark blocks"));
                    let (r0, r1, c0, c1) = g.block_bounds(b);
                    for rr in r0..r1 {
                        links.extend((c0..c1).map(|cc| key(TreeId::RecordVector, g.x_index(rr, cc))));
                    }
                }
                linked = (0..blocks.len()).collect();
                battery.push(fetch(TreeId::ConvYRows, t * out + r, "T3 output row"));
            }
            StageId::ActForward => {
                battery.push(fetch(TreeId::ConvYRows, k / out, "input row"));
                battery.push(fetch(TreeId::ActFwdOut, k, "output"));
            }
            StageId::FcForward => {
                let (i, j) = (coords[0], coords[1]);
                battery.push(fetch(TreeId::FcYPrimeRows, i, "T1 partial-sum row"));
                battery.push(fetch(TreeId::FcXSub, j, "T2 input sub-vector"));
                battery.push(fetch(TreeId::FcThetaGroups, i * g.n_x + j, "T3 weight group"));
                linked.push(1);
                links.extend((0..g.s_x).map(|u| key(TreeId::ActFwdOut, j * g.s_x + u)));
            }
            StageId::FcBackwardInput => {
                let (j, kk) = (coords[0], coords[1]);
                battery.push(fetch(TreeId::FcBwdGradXPrimeRows, j, "T1 partial-sum row"));
                battery.push(fetch(TreeId::FcBwdGradYSub, kk, "T2 gradient sub-vector"));
                battery.push(fetch(TreeId::FcBwdThetaGroups, j * g.n_yb + kk, "T3 weight group"));
                linked.push(1);
                links.extend((0..g.s_y).map(|u| key(TreeId::LossGrad, kk * g.s_y + u)));
            }
            StageId::FcBackwardWeights => {
                let (j, i) = (coords[0], coords[1]);
                battery.push(fetch(TreeId::FcGradTheta, k, "output"));
                battery.push(fetch(TreeId::ActFwdOut, j, "input activation"));
                battery.push(fetch(TreeId::LossGrad, i, "input gradient"));
            }
            StageId::ActBackward => {
                battery.push(fetch(TreeId::ActBwdOut, k, "output"));
                battery.push(fetch(TreeId::ConvYRows, k / out, "pre-activation row"));
                battery.push(fetch(TreeId::FcBwdGradXPrimeRows, k, "gradient partial sums"));
            }
            StageId::ConvBackwardInput => {
                let (t, i, j) = (coords[0], coords[1], coords[2]);
                battery.push(fetch(TreeId::ConvGradX, i * a + j, "T1 gradient tuple"));
                for u in g.grad_rows_for(i) {
                    linked.push(battery.len());
                    battery.push(fetch(TreeId::ConvGradYRows, t * out + u, "T2 gradient rows"));
                    links.extend((0..out).map(|v| key(TreeId::ActBwdOut, (t * out + u) * out + v)));
                }
            }
            StageId::ConvBackwardFilters => {
                let (t, i, j, u) = (coords[0], coords[1], coords[2], coords[3]);
                let fs = g.filter_side;
                battery.push(fetch(TreeId::ConvGradF, (t * fs + i) * fs + j, "T1 expanded vector"));
                battery.push(fetch(TreeId::ConvGradYRows, t * out + u, "T2 gradient row"));
                battery.push(fetch(TreeId::ConvXGroups, (i * fs + j) * out + u, "T3 input group"));
                linked = vec![1, 2];
                links.extend((0..out).map(|v| key(TreeId::ActBwdOut, (t * out + u) * out + v)));
                links.extend((0..out).map(|v| key(TreeId::RecordVector, g.x_index(u * d + i, v * d + j))));
            }
            StageId::Loss | StageId::Simd => unreachable!("planned elsewhere"),
        }
        if !self.cfg.link_checks {
            linked.clear();
            links.clear();
        }
        PlannedProbe {
            k,
            coords,
            battery,
            linked,
            links,
        }
    }

    fn opening_valid(&self, want: &LeafKey, o: &Opening) -> bool {
        let Some(root) = self.roots.get(&want.tree) else {
            return false;
        };
        o.key == *want
            && o.values.len() == self.geom.group_len(want.tree, want.index)
            && o.evidence.leaf_count == self.geom.leaf_count(want.tree)
            && verify_group(&o.values, want.index, root, &o.evidence)
    }

    /// Checks a response against a plan. Pure; the caller records the report.
    pub fn check(&self, plan: &AuditPlan, resp: &Response) -> TestReport {
        let mut report = TestReport::new(plan.stage, plan.n);
        if resp.stage != plan.stage || resp.openings.len() != plan.key_count() {
            return TestReport::dishonest(plan.stage, plan.n, "malformed response".into());
        }
        let mut pos = 0;
        for probe in &plan.probes {
            let mut res = ProbeResult {
                index: probe.k,
                coords: probe.coords.clone(),
                ..ProbeResult::default()
            };
            let battery = &resp.openings[pos..pos + probe.battery.len()];
            pos += probe.battery.len();
            let links = &resp.openings[pos..pos + probe.links.len()];
            pos += probe.links.len();

            let mut intact = true;
            for (f, o) in probe.battery.iter().zip(battery) {
                report.reads += o.values.len() as u64;
                report.digests_read += o.evidence.len() as u64;
                let ok = self.opening_valid(&f.key, o);
                res.note(f.label, ok);
                intact &= ok;
            }
            if !probe.links.is_empty() {
                let mut ok = true;
                for (k, o) in probe.links.iter().zip(links) {
                    report.link_reads += o.values.len() as u64;
                    report.link_digests += o.evidence.len() as u64;
                    ok &= self.opening_valid(k, o);
                }
                if ok {
                    let grouped = probe.linked.iter().flat_map(|&b| battery[b].values.iter());
                    let singles = links.iter().flat_map(|o| o.values.iter());
                    ok = grouped.clone().count() == links.len()
                        && grouped.zip(singles).all(|(x, y)| same_bits(*x, *y));
                }
                res.note("link", ok);
                intact &= ok;
            }
            if intact {
                let vals: Vec<&[f64]> = battery.iter().map(|o| o.values.as_slice()).collect();
                for (label, ok) in self.semantics(plan.stage, &probe.coords, &vals) {
                    res.note(label, ok);
                }
            }
            report.probes.push(res);
        }
        report.settle();
        report
    }

    fn semantics(&self, stage: StageId, coords: &[usize], v: &[&[f64]]) -> Vec<(&'static str, bool)> {
        let g = &self.geom;
        let (d, fs, out) = (g.stride, g.filter_side, g.out_side);
        let spec = self.trusted.spec;
        let coord = self.keys.coordinator.as_ref();
        match stage {
            StageId::ConvForward => {
                let (t, r, c) = (coords[0], coords[1], coords[2]);
                let blocks = g.covering_blocks(r, c);
                let lm = g.landmark_side;
                let x_at = |rr: usize, cc: usize| {
                    let b = (rr / lm) * g.blocks_per_side + cc / lm;
                    let slot = blocks.iter().position(|&x| x == b).expect("covering block");
                    let (r0, _, c0, c1) = g.block_bounds(b);
                    v[slot][(rr - r0) * (c1 - c0) + cc - c0]
                };
                let filter = self.trusted.filters[t].values();
                let y = nn::window_dot(filter, fs, |i, j| x_at(r * d + i, c * d + j));
                vec![
                    ("T1 filter signature", self.trusted.filter_valid(t, coord)),
                    ("T4 recompute", same_bits(y, v[blocks.len()][c])),
                ]
            }
            StageId::ActForward => {
                let k = coords[0];
                vec![("recompute", same_bits(spec.activation.apply(v[0][k % out]), v[1][0]))]
            }
            StageId::FcForward => {
                let j = coords[1];
                vec![
                    ("T3 weight signature", self.theta_fwd_ok),
                    ("T4 recompute", same_bits(nn::partial_dot(v[1], v[2]), v[0][j])),
                ]
            }
            StageId::Loss => {
                let yhat: Vec<f64> = v[..g.l_y].iter().map(|row| nn::row_sum(row)).collect();
                let y: Vec<f64> = v[g.l_y..].iter().map(|e| e[0]).collect();
                match nn::loss_eval(&Tensor::vector(yhat), &Tensor::vector(y)) {
                    Ok((loss, grad)) => {
                        let root = group_commit(
                            &grad.values().iter().map(|&x| [x]).collect::<Vec<_>>(),
                        )
                        .map(|t| t.root());
                        vec![
                            ("loss value", self.loss_claim.is_some_and(|l| same_bits(l, loss))),
                            (
                                "loss gradient",
                                root.ok().as_ref() == self.roots.get(&TreeId::LossGrad),
                            ),
                        ]
                    }
                    Err(_) => vec![("loss value", false)],
                }
            }
            StageId::FcBackwardInput => {
                let k = coords[1];
                vec![
                    ("T3 weight signature", self.theta_bwd_ok),
                    ("T4 recompute", same_bits(nn::partial_dot(v[1], v[2]), v[0][k])),
                ]
            }
            StageId::FcBackwardWeights => {
                let want = nn::weight_update(spec.eta, v[2][0], v[1][0]);
                vec![("recompute", same_bits(want, v[0][0]))]
            }
            StageId::ActBackward => {
                let k = coords[0];
                let go = nn::row_sum(v[2]);
                vec![("recompute", same_bits(spec.activation.backprop(v[1][k % out], go), v[0][0]))]
            }
            StageId::ConvBackwardInput => {
                let (t, i, j) = (coords[0], coords[1], coords[2]);
                let u0 = g.grad_rows_for(i).start;
                let filter = self.trusted.filters[t].values();
                let want = nn::grad_x_entry(&spec.conv(), out, filter, |u, vv| v[1 + u - u0][vv], i, j);
                vec![("T3 recompute", same_bits(want, v[0][t]))]
            }
            StageId::ConvBackwardFilters => {
                let (i, j, u) = (coords[1], coords[2], coords[3]);
                let group = v[2];
                let want = nn::grad_f_expanded_entry(
                    &spec.conv(),
                    v[1],
                    |_, col| group[(col - j) / d],
                    i,
                    j,
                    u,
                );
                vec![("T4 recompute", same_bits(want, v[0][u]))]
            }
            StageId::Simd => Vec::new(),
        }
    }

    /// Full audit of one stage: commitment, challenge, response, verdict.
    pub fn audit(&mut self, prover: &mut dyn Prover, stage: StageId) -> TestReport {
        self.audit_inner(prover, stage, None)
    }

    /// As [`Monitor::audit`], probing the given computation indices.
    pub fn audit_with_probes(
        &mut self,
        prover: &mut dyn Prover,
        stage: StageId,
        picks: &[usize],
    ) -> TestReport {
        self.audit_inner(prover, stage, Some(picks))
    }

    fn audit_inner(&mut self, prover: &mut dyn Prover, stage: StageId, picks: Option<&[usize]>) -> TestReport {
        let n = self.geom.computations(stage);
        let report = match prover.commit(stage) {
            Err(e) => TestReport::dishonest(stage, n, format!("no commitment: {e}")),
            Ok(c) if c.stage != stage => {
                TestReport::dishonest(stage, n, "commitment for the wrong stage".into())
            }
            Ok(c) => match self.receive_commit(&c) {
                Err(reason) => TestReport::dishonest(stage, n, reason),
                Ok(()) => {
                    let plan = match picks {
                        Some(p) => self.plan_for(stage, p),
                        None => self.plan(stage),
                    };
                    match prover.answer(&plan.challenge()) {
                        Ok(resp) => self.check(&plan, &resp),
                        Err(e) => TestReport::dishonest(stage, n, format!("challenge refused: {e}")),
                    }
                }
            },
        };
        self.reports.push(report.clone());
        report
    }

    pub fn test_conv_forward(&mut self, prover: &mut dyn Prover) -> TestReport {
        self.audit(prover, StageId::ConvForward)
    }

    pub fn test_conv_backward_dx(&mut self, prover: &mut dyn Prover) -> TestReport {
        self.audit(prover, StageId::ConvBackwardInput)
    }

    pub fn test_conv_backward_df(&mut self, prover: &mut dyn Prover) -> TestReport {
        self.audit(prover, StageId::ConvBackwardFilters)
    }

    pub fn test_fc_forward(&mut self, prover: &mut dyn Prover) -> TestReport {
        self.audit(prover, StageId::FcForward)
    }

    pub fn test_fc_backward(&mut self, prover: &mut dyn Prover) -> TestReport {
        self.audit(prover, StageId::FcBackwardInput)
    }

    pub fn test_final_layer(&mut self, prover: &mut dyn Prover) -> TestReport {
        self.audit(prover, StageId::Loss)
    }

    /// Signs the round's update digest if the record check and every stage
    /// passed.
    pub fn endorse(&self) -> Result<Endorsement> {
        if self.record_id.is_none() {
            return Err(Error::RefusedDishonest("record not validated".into()));
        }
        for stage in StageId::PIPELINE {
            match self.reports.iter().find(|r| r.stage == stage) {
                None => return Err(Error::RefusedDishonest(format!("{stage} not audited"))),
                Some(TestReport {
                    verdict: Verdict::Dishonest { reason },
                    ..
                }) => return Err(Error::RefusedDishonest(reason.clone())),
                Some(_) => {}
            }
        }
        let digest = update_digest(
            &self.roots[&TreeId::ConvGradF],
            &self.roots[&TreeId::FcGradTheta],
        );
        Ok(Endorsement {
            worker: self.worker,
            round: self.round,
            digest,
            signature: self
                .keys
                .own
                .sign(&endorsement_message(self.worker, self.round, &digest)),
        })
    }
}

/// Generic elementwise audit: `p` distinct indices of an `n`-element stage,
/// checking `g(in[k]) == out[k]` bit for bit.
pub fn test_simd_stage(
    prover: &mut dyn Prover,
    kind: Activation,
    n: usize,
    p: usize,
    rng: &mut ChaCha8Rng,
) -> TestReport {
    let mut picks = sample(rng, n, p.min(n)).into_vec();
    picks.sort_unstable();
    test_simd_stage_with_probes(prover, kind, n, &picks)
}

pub fn test_simd_stage_with_probes(
    prover: &mut dyn Prover,
    kind: Activation,
    n: usize,
    picks: &[usize],
) -> TestReport {
    let stage = StageId::Simd;
    let commit = match prover.commit(stage) {
        Ok(c) => c,
        Err(e) => return TestReport::dishonest(stage, n, format!("no commitment: {e}")),
    };
    let (Some(root_in), Some(root_out)) = (commit.root(TreeId::SimdInput), commit.root(TreeId::SimdOutput))
    else {
        return TestReport::dishonest(stage, n, "commitment missing trees".into());
    };
    let keys = picks
        .iter()
        .flat_map(|&k| [key(TreeId::SimdInput, k), key(TreeId::SimdOutput, k)])
        .collect();
    let resp = match prover.answer(&Challenge::new(stage, keys)) {
        Ok(r) if r.openings.len() == 2 * picks.len() => r,
        Ok(_) => return TestReport::dishonest(stage, n, "malformed response".into()),
        Err(e) => return TestReport::dishonest(stage, n, format!("challenge refused: {e}")),
    };
    let mut report = TestReport::new(stage, n);
    for (&k, pair) in picks.iter().zip(resp.openings.chunks_exact(2)) {
        let mut res = ProbeResult {
            index: k,
            coords: vec![k],
            ..ProbeResult::default()
        };
        let valid = |o: &Opening, tree: TreeId, root: &Digest| {
            o.key == key(tree, k)
                && o.values.len() == 1
                && o.evidence.leaf_count == n
                && verify_group(&o.values, k, root, &o.evidence)
        };
        for o in pair {
            report.reads += o.values.len() as u64;
            report.digests_read += o.evidence.len() as u64;
        }
        let in_ok = valid(&pair[0], TreeId::SimdInput, &root_in);
        let out_ok = valid(&pair[1], TreeId::SimdOutput, &root_out);
        res.note("input", in_ok);
        res.note("output", out_ok);
        if in_ok && out_ok {
            res.note("recompute", same_bits(kind.apply(pair[0].values[0]), pair[1].values[0]));
        }
        report.probes.push(res);
    }
    report.settle();
    report
}
