//! The untrusted worker: runs each stage, commits to its results and opens
//! leaves on request. A [`CheatStrategy`] makes it deviate in one of the ways
//! the audit is meant to catch.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{Geometry, StageId, TreeId};
use crate::merkle::{group_commit, Digest, MerkleTree};
use crate::model::{theta_bwd_groups, theta_fwd_groups, SignedModel};
use crate::nn::{self, Activation, Tensor};
use crate::protocol::{Challenge, Commit, LeafKey, Opening, Prover, RecordOpening, Response};
use crate::records::RecordStore;
use crate::rng::derived_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheatMode {
    /// Add a uniform `[0.5, 1.5]` offset to `m` distinct outputs.
    FakeOutputs { m: usize },
    /// Answer challenges with random co-path digests.
    FakeEvidence,
    /// Train on a different record than the one requested.
    WrongRecord,
    /// Report all-zero outputs instead of computing.
    SkipComputation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheatStrategy {
    pub stage: StageId,
    pub mode: CheatMode,
}

/// A tree plus the values hashed into each of its leaves.
#[derive(Debug, Clone)]
pub struct Committed {
    pub tree: MerkleTree,
    pub groups: Vec<Vec<f64>>,
}

impl Committed {
    pub fn new(groups: Vec<Vec<f64>>) -> Result<Self> {
        let tree = group_commit(&groups)?;
        Ok(Committed { tree, groups })
    }

    /// One leaf per value.
    pub fn elements(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| vec![v]).collect())
    }

    /// One leaf per consecutive `width` values.
    pub fn chunks(values: &[f64], width: usize) -> Result<Self> {
        if width == 0 || !values.len().is_multiple_of(width) {
            return Err(Error::ShapeMismatch(format!(
                "{} values do not split into rows of {width}",
                values.len()
            )));
        }
        Self::new(values.chunks_exact(width).map(<[f64]>::to_vec).collect())
    }

    pub fn root(&self) -> Digest {
        self.tree.root()
    }
}

/// Landmark blocks of the flattened input, row-major over blocks and within.
pub fn landmark_groups(g: &Geometry, x: &[f64]) -> Vec<Vec<f64>> {
    (0..g.blocks_per_side * g.blocks_per_side)
        .map(|b| {
            let (r0, r1, c0, c1) = g.block_bounds(b);
            let mut v = Vec::with_capacity((r1 - r0) * (c1 - c0));
            for r in r0..r1 {
                v.extend_from_slice(&x[r * g.input_side + c0..r * g.input_side + c1]);
            }
            v
        })
        .collect()
}

/// Group `(i, j, u)`: `X[u·δ+i, v·δ+j]` for every output column `v`.
pub fn x_groups(g: &Geometry, x: &[f64]) -> Vec<Vec<f64>> {
    let (a, d, fs, out) = (g.input_side, g.stride, g.filter_side, g.out_side);
    let mut groups = Vec::with_capacity(fs * fs * out);
    for i in 0..fs {
        for j in 0..fs {
            for u in 0..out {
                groups.push((0..out).map(|v| x[(u * d + i) * a + v * d + j]).collect());
            }
        }
    }
    groups
}

/// Leaf `(i, j)`: the per-filter gradients `∇X^(t)[i, j]` for every `t`.
pub fn grad_x_tuples(g: &Geometry, per_filter: &[f64]) -> Vec<Vec<f64>> {
    let aa = g.input_side * g.input_side;
    (0..aa)
        .map(|s| (0..g.n_filters).map(|t| per_filter[t * aa + s]).collect())
        .collect()
}

pub struct ConvForwardTrees {
    pub landmark: Committed,
    pub y_rows: Committed,
}

pub fn build_conv_forward_trees(g: &Geometry, x: &[f64], y: &[f64]) -> Result<ConvForwardTrees> {
    if x.len() != g.input_side * g.input_side || y.len() != g.l_x {
        return Err(Error::ShapeMismatch("conv forward tensors".into()));
    }
    Ok(ConvForwardTrees {
        landmark: Committed::new(landmark_groups(g, x))?,
        y_rows: Committed::chunks(y, g.out_side)?,
    })
}

pub struct ConvBackwardTrees {
    pub grad_x: Committed,
    pub grad_f: Committed,
    pub grad_y_rows: Committed,
    pub x_groups: Committed,
}

/// `per_filter` is `[n_F, α_X, α_X]` and `expanded` `[n_F, α_F, α_F, α_Y]`,
/// both flattened.
pub fn build_conv_backward_trees(
    g: &Geometry,
    x: &[f64],
    grad_y: &[f64],
    per_filter: &[f64],
    expanded: &[f64],
) -> Result<ConvBackwardTrees> {
    let aa = g.input_side * g.input_side;
    if x.len() != aa
        || grad_y.len() != g.l_x
        || per_filter.len() != g.n_filters * aa
        || expanded.len() != g.n_filters * g.filter_side * g.filter_side * g.out_side
    {
        return Err(Error::ShapeMismatch("conv backward tensors".into()));
    }
    Ok(ConvBackwardTrees {
        grad_x: Committed::new(grad_x_tuples(g, per_filter))?,
        grad_f: Committed::chunks(expanded, g.out_side)?,
        grad_y_rows: Committed::chunks(grad_y, g.out_side)?,
        x_groups: Committed::new(x_groups(g, x))?,
    })
}

pub struct FcForward {
    /// `[l_Y, n_X]` partial sums.
    pub y_prime: Vec<f64>,
    pub y: Vec<f64>,
    pub x_sub: Committed,
    pub y_prime_rows: Committed,
    pub theta_groups: Committed,
}

/// Hierarchical FC forward: `Y'[i,j] = Σ_u X[j·s_X+u]·Θ[j·s_X+u, i]`,
/// `Y[i] = Σ_j Y'[i,j]`.
pub fn build_fc_trees(g: &Geometry, x: &[f64], theta: &Tensor) -> Result<FcForward> {
    if x.len() != g.l_x || theta.shape() != [g.l_x, g.l_y] {
        return Err(Error::ShapeMismatch("fc forward tensors".into()));
    }
    let groups = theta_fwd_groups(g, theta);
    let y_prime = fc_partials(g, x, &groups);
    let y = y_prime.chunks_exact(g.n_x).map(nn::row_sum).collect();
    Ok(FcForward {
        x_sub: Committed::chunks(x, g.s_x)?,
        y_prime_rows: Committed::chunks(&y_prime, g.n_x)?,
        theta_groups: Committed::new(groups)?,
        y_prime,
        y,
    })
}

fn fc_partials(g: &Geometry, x: &[f64], groups: &[Vec<f64>]) -> Vec<f64> {
    let mut y_prime = Vec::with_capacity(g.l_y * g.n_x);
    for i in 0..g.l_y {
        for j in 0..g.n_x {
            y_prime.push(nn::partial_dot(&x[j * g.s_x..(j + 1) * g.s_x], &groups[i * g.n_x + j]));
        }
    }
    y_prime
}

pub struct FcBackward {
    /// `[l_X, n_Yb]` partial sums.
    pub grad_x_prime: Vec<f64>,
    pub grad_x: Vec<f64>,
    pub grad_y_sub: Committed,
    pub grad_x_prime_rows: Committed,
    pub theta_groups: Committed,
}

/// Hierarchical FC input gradient: `∇X'[j,k] = Σ_u ∇Y[k·s_Y+u]·Θ[j, k·s_Y+u]`.
pub fn build_fc_backward_trees(g: &Geometry, grad_y: &[f64], theta: &Tensor) -> Result<FcBackward> {
    if grad_y.len() != g.l_y || theta.shape() != [g.l_x, g.l_y] {
        return Err(Error::ShapeMismatch("fc backward tensors".into()));
    }
    let groups = theta_bwd_groups(g, theta);
    let grad_x_prime = fc_backward_partials(g, grad_y, &groups);
    let grad_x = grad_x_prime.chunks_exact(g.n_yb).map(nn::row_sum).collect();
    Ok(FcBackward {
        grad_y_sub: Committed::chunks(grad_y, g.s_y)?,
        grad_x_prime_rows: Committed::chunks(&grad_x_prime, g.n_yb)?,
        theta_groups: Committed::new(groups)?,
        grad_x_prime,
        grad_x,
    })
}

fn fc_backward_partials(g: &Geometry, grad_y: &[f64], groups: &[Vec<f64>]) -> Vec<f64> {
    let mut out = Vec::with_capacity(g.l_x * g.n_yb);
    for j in 0..g.l_x {
        for k in 0..g.n_yb {
            out.push(nn::partial_dot(
                &grad_y[k * g.s_y..(k + 1) * g.s_y],
                &groups[j * g.n_yb + k],
            ));
        }
    }
    out
}

/// Per-round tensors, flattened. Filled stage by stage.
#[derive(Debug, Clone, Default)]
struct RoundTensors {
    x: Vec<f64>,
    y: Vec<f64>,
    conv_y: Vec<f64>,
    act: Vec<f64>,
    y_prime: Vec<f64>,
    yhat: Vec<f64>,
    loss: f64,
    grad_yhat: Vec<f64>,
    grad_x_prime: Vec<f64>,
    grad_x_fc: Vec<f64>,
    grad_theta: Vec<f64>,
    grad_conv_y: Vec<f64>,
    grad_x_per_filter: Vec<f64>,
    grad_f_expanded: Vec<f64>,
}

/// The updates a worker submits for aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerUpdate {
    /// Per filter, `[α_F, α_F, α_Y]` before the learning-rate factor.
    pub grad_f_expanded: Vec<Tensor>,
    /// `[l_X, l_Y]`, learning rate applied.
    pub grad_theta: Tensor,
}

pub struct Worker {
    id: u32,
    package: Arc<SignedModel>,
    geom: Geometry,
    store: Arc<RecordStore>,
    cheat: Option<CheatStrategy>,
    rng: ChaCha8Rng,
    record_id: Option<u64>,
    state: RoundTensors,
    trees: BTreeMap<TreeId, Committed>,
    committed: BTreeSet<StageId>,
    faked: BTreeMap<StageId, Vec<usize>>,
    reads: u64,
}

impl Worker {
    pub fn new(
        id: u32,
        package: Arc<SignedModel>,
        store: Arc<RecordStore>,
        cheat: Option<CheatStrategy>,
        seed: u64,
    ) -> Result<Self> {
        let geom = package.model.geometry()?;
        Ok(Worker {
            id,
            package,
            geom,
            store,
            cheat,
            rng: derived_rng(seed, id as u64),
            record_id: None,
            state: RoundTensors::default(),
            trees: BTreeMap::new(),
            committed: BTreeSet::new(),
            faked: BTreeMap::new(),
            reads: 0,
        })
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    /// Scalars read from stored trees while answering challenges.
    pub fn reads(&self) -> u64 {
        self.reads
    }

    /// Computation indices altered by the cheat in `stage`.
    pub fn faked_indices(&self, stage: StageId) -> &[usize] {
        self.faked.get(&stage).map_or(&[], Vec::as_slice)
    }

    /// The record actually loaded for this round.
    pub fn record_id(&self) -> Option<u64> {
        self.record_id
    }

    pub fn loss(&self) -> Option<f64> {
        self.committed.contains(&StageId::Loss).then_some(self.state.loss)
    }

    /// Loads record `requested` (or another one, when cheating) and opens it
    /// against the global record tree.
    pub fn open_record(&mut self, requested: u64) -> Result<RecordOpening> {
        let n_r = self.store.n_r();
        let mut id = requested;
        if matches!(self.cheat, Some(CheatStrategy { mode: CheatMode::WrongRecord, .. })) && n_r > 1 {
            id = requested % n_r + 1;
        }
        let record = self.store.get(id)?.clone();
        if record.x.len() != self.geom.input_side * self.geom.input_side || record.y.len() != self.geom.l_y {
            return Err(Error::ShapeMismatch(format!(
                "record {id} does not fit the model input/output"
            )));
        }
        let (leaf_input, evidence) = self.store.open(id)?;
        let mut vector = record.x.clone();
        vector.extend_from_slice(&record.y);
        let tree = Committed::elements(&vector)?;
        let record_root = tree.root();
        self.trees.insert(TreeId::RecordVector, tree);
        self.state.x = record.x;
        self.state.y = record.y;
        self.record_id = Some(id);
        Ok(RecordOpening {
            leaf_input,
            evidence,
            record_root,
        })
    }

    /// Runs and commits one stage.
    pub fn run_stage(&mut self, stage: StageId) -> Result<Commit> {
        let ready = match stage.prerequisite() {
            Some(prev) => self.committed.contains(&prev),
            None => stage == StageId::ConvForward && self.record_id.is_some(),
        };
        if !ready || self.committed.contains(&stage) {
            return Err(Error::MissingPriorCommitment(stage.name().into()));
        }
        let g = self.geom;
        let model = &self.package.model;
        let mut claims = Vec::new();
        match stage {
            StageId::ConvForward => {
                let x = Tensor::new(vec![g.input_side, g.input_side], self.state.x.clone())?;
                let mut y = nn::conv_forward(&model.spec.conv(), &x, &model.filters)?.into_values();
                self.tamper(stage, &mut y)?;
                let trees = build_conv_forward_trees(&g, &self.state.x, &y)?;
                self.trees.insert(TreeId::ConvXLandmark, trees.landmark);
                self.trees.insert(TreeId::ConvYRows, trees.y_rows);
                self.state.conv_y = y;
            }
            StageId::ActForward => {
                let act = model.spec.activation;
                let mut out: Vec<f64> = self.state.conv_y.iter().map(|&v| act.apply(v)).collect();
                self.tamper(stage, &mut out)?;
                self.trees.insert(TreeId::ActFwdOut, Committed::elements(&out)?);
                self.state.act = out;
            }
            StageId::FcForward => {
                let groups = theta_fwd_groups(&g, &model.fc.theta);
                let mut y_prime = fc_partials(&g, &self.state.act, &groups);
                self.tamper(stage, &mut y_prime)?;
                self.trees.insert(TreeId::FcXSub, Committed::chunks(&self.state.act, g.s_x)?);
                self.trees.insert(TreeId::FcYPrimeRows, Committed::chunks(&y_prime, g.n_x)?);
                self.trees.insert(TreeId::FcThetaGroups, Committed::new(groups)?);
                self.state.yhat = y_prime.chunks_exact(g.n_x).map(nn::row_sum).collect();
                self.state.y_prime = y_prime;
            }
            StageId::Loss => {
                let (loss, grad) = nn::loss_eval(
                    &Tensor::vector(self.state.yhat.clone()),
                    &Tensor::vector(self.state.y.clone()),
                )?;
                let mut grad = grad.into_values();
                self.tamper(stage, &mut grad)?;
                self.trees.insert(TreeId::LossGrad, Committed::elements(&grad)?);
                self.state.loss = loss;
                self.state.grad_yhat = grad;
                claims.push(loss);
            }
            StageId::FcBackwardInput => {
                let groups = theta_bwd_groups(&g, &model.fc.theta);
                let mut gxp = fc_backward_partials(&g, &self.state.grad_yhat, &groups);
                self.tamper(stage, &mut gxp)?;
                self.trees.insert(
                    TreeId::FcBwdGradYSub,
                    Committed::chunks(&self.state.grad_yhat, g.s_y)?,
                );
                self.trees.insert(TreeId::FcBwdGradXPrimeRows, Committed::chunks(&gxp, g.n_yb)?);
                self.trees.insert(TreeId::FcBwdThetaGroups, Committed::new(groups)?);
                self.state.grad_x_fc = gxp.chunks_exact(g.n_yb).map(nn::row_sum).collect();
                self.state.grad_x_prime = gxp;
            }
            StageId::FcBackwardWeights => {
                let eta = model.fc.eta;
                let mut gt = Vec::with_capacity(g.l_x * g.l_y);
                for j in 0..g.l_x {
                    for i in 0..g.l_y {
                        gt.push(nn::weight_update(eta, self.state.grad_yhat[i], self.state.act[j]));
                    }
                }
                self.tamper(stage, &mut gt)?;
                self.trees.insert(TreeId::FcGradTheta, Committed::elements(&gt)?);
                self.state.grad_theta = gt;
            }
            StageId::ActBackward => {
                let act = model.spec.activation;
                let mut out: Vec<f64> = self
                    .state
                    .conv_y
                    .iter()
                    .zip(&self.state.grad_x_fc)
                    .map(|(&x, &go)| act.backprop(x, go))
                    .collect();
                self.tamper(stage, &mut out)?;
                self.trees.insert(TreeId::ActBwdOut, Committed::elements(&out)?);
                self.state.grad_conv_y = out;
            }
            StageId::ConvBackwardInput => {
                let (a, out) = (g.input_side, g.out_side);
                let grads = nn::conv_backward(
                    &model.spec.conv(),
                    &Tensor::new(vec![a, a], self.state.x.clone())?,
                    &model.filters,
                    &Tensor::new(vec![g.n_filters, out, out], self.state.grad_conv_y.clone())?,
                )?;
                let mut per_filter: Vec<f64> = grads
                    .grad_x_per_filter
                    .into_iter()
                    .flat_map(Tensor::into_values)
                    .collect();
                self.tamper(stage, &mut per_filter)?;
                self.trees.insert(
                    TreeId::ConvGradYRows,
                    Committed::chunks(&self.state.grad_conv_y, out)?,
                );
                self.trees
                    .insert(TreeId::ConvGradX, Committed::new(grad_x_tuples(&g, &per_filter))?);
                self.state.grad_x_per_filter = per_filter;
                self.state.grad_f_expanded = grads
                    .grad_f_expanded
                    .into_iter()
                    .flat_map(Tensor::into_values)
                    .collect();
            }
            StageId::ConvBackwardFilters => {
                let mut expanded = std::mem::take(&mut self.state.grad_f_expanded);
                self.tamper(stage, &mut expanded)?;
                self.trees.insert(TreeId::ConvXGroups, Committed::new(x_groups(&g, &self.state.x))?);
                self.trees.insert(TreeId::ConvGradF, Committed::chunks(&expanded, g.out_side)?);
                self.state.grad_f_expanded = expanded;
            }
            StageId::Simd => {
                return Err(Error::InvalidSpec("elementwise stage runs on a SimdWorker".into()))
            }
        }
        self.committed.insert(stage);
        let roots = stage
            .trees()
            .iter()
            .map(|&t| (t, self.trees[&t].root()))
            .collect();
        Ok(Commit {
            stage,
            roots,
            claims,
        })
    }

    fn tamper(&mut self, stage: StageId, out: &mut [f64]) -> Result<()> {
        let Some(cheat) = self.cheat.filter(|c| c.stage == stage) else {
            return Ok(());
        };
        let faked = apply_cheat(cheat.mode, out, &mut self.rng)?;
        self.faked.insert(stage, faked);
        Ok(())
    }

    /// Opens the requested leaves.
    pub fn answer_challenge(&mut self, ch: &Challenge) -> Result<Response> {
        if !self.committed.contains(&ch.stage) {
            return Err(Error::MissingPriorCommitment(ch.stage.name().into()));
        }
        let forge = matches!(
            self.cheat,
            Some(CheatStrategy { stage, mode: CheatMode::FakeEvidence }) if stage == ch.stage
        );
        let mut openings = Vec::with_capacity(ch.keys.len());
        for &key in &ch.keys {
            let mut opening = open_leaf(&self.trees, key)?;
            self.reads += opening.values.len() as u64;
            if forge {
                forge_path(&mut opening, &mut self.rng);
            }
            openings.push(opening);
        }
        Ok(Response {
            stage: ch.stage,
            openings,
        })
    }

    /// The round's updates; available once every stage is committed.
    pub fn update(&self) -> Result<WorkerUpdate> {
        if !self.committed.contains(&StageId::ConvBackwardFilters) {
            return Err(Error::MissingPriorCommitment(
                StageId::ConvBackwardFilters.name().into(),
            ));
        }
        let g = self.geom;
        let fs = g.filter_side;
        let per = fs * fs * g.out_side;
        let grad_f_expanded = self
            .state
            .grad_f_expanded
            .chunks_exact(per)
            .map(|c| Tensor::new(vec![fs, fs, g.out_side], c.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Ok(WorkerUpdate {
            grad_f_expanded,
            grad_theta: Tensor::new(vec![g.l_x, g.l_y], self.state.grad_theta.clone())?,
        })
    }
}

impl Prover for Worker {
    fn commit(&mut self, stage: StageId) -> Result<Commit> {
        self.run_stage(stage)
    }

    fn answer(&mut self, challenge: &Challenge) -> Result<Response> {
        self.answer_challenge(challenge)
    }
}

/// Applies `mode` to a stage's outputs and returns the altered indices.
fn apply_cheat(mode: CheatMode, out: &mut [f64], rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    let n = out.len();
    match mode {
        CheatMode::FakeOutputs { m } => {
            if m > n {
                return Err(Error::Domain(format!("cannot fake {m} of {n} computations")));
            }
            let mut idx = sample(rng, n, m).into_vec();
            idx.sort_unstable();
            for &k in &idx {
                out[k] += rng.gen_range(0.5..=1.5);
            }
            Ok(idx)
        }
        CheatMode::SkipComputation => {
            let idx = (0..n).filter(|&k| out[k].to_bits() != 0).collect();
            out.fill(0.0);
            Ok(idx)
        }
        CheatMode::FakeEvidence | CheatMode::WrongRecord => Ok(Vec::new()),
    }
}

fn open_leaf(trees: &BTreeMap<TreeId, Committed>, key: LeafKey) -> Result<Opening> {
    let c = trees
        .get(&key.tree)
        .ok_or_else(|| Error::UnknownLeaf(format!("{:?} is not committed", key.tree)))?;
    let values = c
        .groups
        .get(key.index)
        .ok_or_else(|| Error::UnknownLeaf(format!("{:?}[{}]", key.tree, key.index)))?
        .clone();
    Ok(Opening {
        key,
        values,
        evidence: c.tree.evidence_for(key.index)?,
    })
}

fn forge_path(opening: &mut Opening, rng: &mut ChaCha8Rng) {
    for (d, _) in opening.evidence.path.iter_mut() {
        rng.fill(&mut d.0);
    }
    if opening.evidence.path.is_empty() {
        // nothing to forge on a single-leaf tree; corrupt the value instead
        if let Some(v) = opening.values.first_mut() {
            *v += 1.0;
        }
    }
}

/// A stand-alone elementwise stage `out[k] = g(in[k])`.
pub struct SimdWorker {
    kind: Activation,
    inputs: Vec<f64>,
    cheat: Option<CheatMode>,
    rng: ChaCha8Rng,
    trees: BTreeMap<TreeId, Committed>,
    faked: Vec<usize>,
    outputs: Vec<f64>,
}

impl SimdWorker {
    pub fn new(kind: Activation, inputs: Vec<f64>, cheat: Option<CheatMode>, seed: u64) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(SimdWorker {
            kind,
            inputs,
            cheat,
            rng: derived_rng(seed, 0),
            trees: BTreeMap::new(),
            faked: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    pub fn faked_indices(&self) -> &[usize] {
        &self.faked
    }
}

impl Prover for SimdWorker {
    fn commit(&mut self, stage: StageId) -> Result<Commit> {
        if stage != StageId::Simd || !self.trees.is_empty() {
            return Err(Error::MissingPriorCommitment(stage.name().into()));
        }
        let mut out: Vec<f64> = self.inputs.iter().map(|&v| self.kind.apply(v)).collect();
        if let Some(mode) = self.cheat {
            self.faked = apply_cheat(mode, &mut out, &mut self.rng)?;
        }
        self.trees.insert(TreeId::SimdInput, Committed::elements(&self.inputs)?);
        self.trees.insert(TreeId::SimdOutput, Committed::elements(&out)?);
        self.outputs = out;
        Ok(Commit {
            stage,
            roots: vec![
                (TreeId::SimdInput, self.trees[&TreeId::SimdInput].root()),
                (TreeId::SimdOutput, self.trees[&TreeId::SimdOutput].root()),
            ],
            claims: Vec::new(),
        })
    }

    fn answer(&mut self, ch: &Challenge) -> Result<Response> {
        if ch.stage != StageId::Simd || self.trees.is_empty() {
            return Err(Error::MissingPriorCommitment(ch.stage.name().into()));
        }
        let forge = self.cheat == Some(CheatMode::FakeEvidence);
        let mut openings = Vec::with_capacity(ch.keys.len());
        for &key in &ch.keys {
            let mut o = open_leaf(&self.trees, key)?;
            if forge {
                forge_path(&mut o, &mut self.rng);
            }
            openings.push(o);
        }
        Ok(Response {
            stage: ch.stage,
            openings,
        })
    }
}
