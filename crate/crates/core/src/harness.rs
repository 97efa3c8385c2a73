//! Batch experiments: multi-round simulations, cost benchmarks, detection
//! sweeps and deposit-game checks. Everything is fixed by the config's seed.

use std::hint::black_box;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::error::{Error, Result};
use crate::game::{
    best_response_exact_linear, detection_prob_exact, detection_prob_paper, honesty_report, min_deposit,
    simulate_detection, theorem_bounds_violations, three_sigma, GameParams,
};
use crate::layout::StageId;
use crate::ledger::{required_deposit, MICRO};
use crate::merkle::hash_group;
use crate::model::{GlobalModel, ModelSpec, SignedModel};
use crate::monitor::{Monitor, MonitorConfig};
use crate::nn::{self, Activation, FcSpec, Tensor};
use crate::par;
use crate::records::{build_record_store, RecordFile, RecordStore};
use crate::rng::mix;
use crate::session::{Keyring, RoundReport, Simulation, WorkerSetup};
use crate::worker::{CheatMode, CheatStrategy, Worker};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_VIOLATION: i32 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub model: ModelSpec,
    #[serde(rename = "n_R")]
    pub n_r: usize,
    #[serde(rename = "n_X")]
    pub n_x: usize,
    #[serde(rename = "n_Y")]
    pub n_y: usize,
    /// Record file; synthetic records are drawn from the seed when absent.
    #[serde(default)]
    pub records: Option<PathBuf>,
    pub rounds: u64,
    pub workers: Vec<WorkerConfig>,
    pub p: usize,
    #[serde(default = "default_true")]
    pub link_checks: bool,
    pub deposit: DepositConfig,
    pub game: GameGrid,
    pub detect: DetectGrid,
    pub bench: BenchGrid,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkerConfig {
    #[serde(default)]
    pub cheat: Option<CheatStrategy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepositConfig {
    /// Cost of a worker's costliest stage, in units.
    pub stage_cost: f64,
    /// Deposit each worker posts, in units. Defaults to the required one.
    #[serde(default)]
    pub amount: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameGrid {
    pub n: Vec<u64>,
    pub p: Vec<u64>,
    pub cost: f64,
    pub benefit: Vec<f64>,
    /// Fixed deposit for every cell; `min_deposit(cost, p)` when absent.
    #[serde(default)]
    pub deposit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectGrid {
    /// `(n, p, m)` triples.
    pub points: Vec<(u64, u64, u64)>,
    pub trials: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSetting {
    pub input_side: usize,
    pub n_filters: usize,
    pub filter_side: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FcSetting {
    pub l_x: usize,
    pub l_y: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchGrid {
    pub reps: usize,
    /// Output size of the FC layer behind the conv benchmarks.
    pub n_y: usize,
    pub conv_base: ConvSetting,
    pub input_sides: Vec<usize>,
    pub filter_counts: Vec<usize>,
    pub strides: Vec<usize>,
    pub filter_sides: Vec<usize>,
    pub fc_base: FcSetting,
    pub fc_inputs: Vec<usize>,
    pub fc_outputs: Vec<usize>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let g = self.model.geometry().map_err(|e| Error::Config(e.to_string()))?;
        if self.n_x != g.input_side * g.input_side || self.n_y != g.l_y {
            return bad(format!(
                "n_X={} n_Y={} do not match the model ({}x{} input, {} outputs)",
                self.n_x, self.n_y, g.input_side, g.input_side, g.l_y
            ));
        }
        if self.n_r == 0 || self.workers.is_empty() || self.rounds == 0 {
            return bad("n_R, rounds and workers must be non-empty".into());
        }
        if self.p < 2 {
            return bad(format!("p must be at least 2, got {}", self.p));
        }
        for (k, w) in self.workers.iter().enumerate() {
            if let Some(CheatStrategy {
                stage,
                mode: CheatMode::FakeOutputs { m },
            }) = w.cheat
            {
                let n = g.computations(stage);
                if m == 0 || m > n {
                    return bad(format!("worker {}: m={m} outside 1..={n} for {stage}", k + 1));
                }
            }
            if matches!(w.cheat, Some(c) if c.stage == StageId::Simd) {
                return bad(format!("worker {}: the simd stage is not part of a round", k + 1));
            }
        }
        if !(self.deposit.stage_cost >= 0.0) || self.deposit.amount.is_some_and(|a| !(a >= 0.0)) {
            return bad("deposit values must be non-negative".into());
        }
        let gg = &self.game;
        if gg.n.is_empty() || gg.p.is_empty() || gg.benefit.is_empty() || !(gg.cost >= 0.0) {
            return bad("game grid must be non-empty with cost >= 0".into());
        }
        if gg.n.contains(&0) || gg.p.contains(&0) {
            return bad("game grid n and p must be positive".into());
        }
        let d = &self.detect;
        if d.points.is_empty() || d.trials == 0 {
            return bad("detect grid must be non-empty".into());
        }
        if let Some(&(n, p, m)) = d.points.iter().find(|&&(n, p, m)| n == 0 || p > n || m > n) {
            return bad(format!("detect point ({n},{p},{m}) needs p,m <= n, n >= 1"));
        }
        let b = &self.bench;
        if b.reps < 5 {
            return bad(format!("bench needs at least 5 repetitions, got {}", b.reps));
        }
        if [&b.input_sides, &b.filter_counts, &b.strides, &b.filter_sides, &b.fc_inputs, &b.fc_outputs]
            .iter()
            .any(|v| v.is_empty())
        {
            return bad("bench grids must be non-empty".into());
        }
        for s in conv_settings(b).into_iter().flat_map(|(_, rows)| rows) {
            conv_bench_spec(&s.1, b.n_y).geometry().map_err(|e| Error::Config(format!("bench {}: {e}", s.0)))?;
        }
        for s in fc_settings(b).into_iter().flat_map(|(_, rows)| rows) {
            fc_bench_spec(s.1)?;
        }
        Ok(())
    }

    /// First 16 hex digits of SHA-256 over the config's JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(&json))[..16].to_string()
    }

    fn record_file(&self) -> Result<RecordFile> {
        let file = match &self.records {
            Some(path) => RecordFile::load(path)?,
            None => RecordFile::synthetic(self.n_r, self.n_x, self.n_y, mix(self.seed, 0x0072_6563)),
        };
        if file.n_x != self.n_x || file.n_y != self.n_y || file.records.len() != self.n_r {
            return Err(Error::Config(format!(
                "record file holds {} records of {}+{}, config says {} of {}+{}",
                file.records.len(),
                file.n_x,
                file.n_y,
                self.n_r,
                self.n_x,
                self.n_y
            )));
        }
        Ok(file)
    }
}

// ---------------------------------------------------------------- rounds

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundsSummary {
    pub config_hash: String,
    pub rounds: u64,
    pub final_version: u64,
    pub required_deposit: u64,
    /// `(worker, round)` of every slash.
    pub slashed: Vec<(u32, u64)>,
    pub endorsements: u64,
    /// Honest workers that received a dishonest verdict.
    pub false_alarms: Vec<(u32, u64)>,
    pub coordinator_balance: u64,
}

#[derive(Debug, Clone)]
pub struct RoundsOutcome {
    pub reports: Vec<RoundReport>,
    pub ledger_jsonl: String,
    pub summary: RoundsSummary,
}

impl RoundsOutcome {
    /// An honest worker was flagged, which the protocol must never do.
    pub fn violation(&self) -> bool {
        !self.summary.false_alarms.is_empty()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut lines = String::new();
        for r in &self.reports {
            lines.push_str(&serde_json::to_string(r)?);
            lines.push('\n');
        }
        std::fs::write(dir.join("rounds.jsonl"), lines)?;
        std::fs::write(dir.join("ledger.jsonl"), &self.ledger_jsonl)?;
        std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&self.summary)? + "\n")?;
        Ok(())
    }
}

pub fn build_simulation(cfg: &ExperimentConfig) -> Result<Simulation> {
    cfg.validate()?;
    let ids: Vec<u32> = (1..=cfg.workers.len() as u32).collect();
    let keys = Keyring::derived(&format!("seed-{}", cfg.seed), ids.iter().copied());
    let records = cfg.record_file()?.sign_all(keys.authority.as_ref())?;
    let store = build_record_store(records, keys.authority.as_ref())?;
    let model = GlobalModel::init(cfg.model, mix(cfg.seed, 0x006d_6f64))?;
    let required = required_deposit(to_micro(cfg.deposit.stage_cost)?, cfg.p as u64)?;
    let amount = match cfg.deposit.amount {
        Some(a) => to_micro(a)?,
        None => required,
    };
    let setups = ids
        .iter()
        .zip(&cfg.workers)
        .map(|(&id, w)| WorkerSetup { id, cheat: w.cheat })
        .collect();
    let mon = MonitorConfig {
        p: cfg.p,
        link_checks: cfg.link_checks,
    };
    Simulation::new(model, store, keys, setups, mon, amount, required, cfg.seed).map_err(|e| match e {
        Error::InsufficientDeposit { .. } => Error::Config(e.to_string()),
        e => e,
    })
}

fn to_micro(units: f64) -> Result<u64> {
    let v = (units * MICRO as f64).round();
    if !(0.0..=u64::MAX as f64).contains(&v) {
        return Err(Error::Config(format!("amount {units} out of range")));
    }
    Ok(v as u64)
}

pub fn run_rounds(cfg: &ExperimentConfig) -> Result<RoundsOutcome> {
    let mut sim = build_simulation(cfg)?;
    let required = required_deposit(to_micro(cfg.deposit.stage_cost)?, cfg.p as u64)?;
    let mut reports = Vec::new();
    let mut slashed = Vec::new();
    let mut false_alarms = Vec::new();
    let mut endorsements = 0;
    for _ in 0..cfg.rounds {
        let rep = sim.run_round()?;
        for w in &rep.workers {
            endorsements += w.endorsed as u64;
            let configured_honest = cfg.workers[w.worker as usize - 1].cheat.is_none();
            if configured_honest && !w.honest() {
                false_alarms.push((w.worker, rep.round));
            }
        }
        if let Some(agg) = &rep.aggregate {
            slashed.extend(agg.evicted.iter().map(|(w, _)| (*w, rep.round)));
        }
        reports.push(rep);
    }
    let summary = RoundsSummary {
        config_hash: cfg.hash(),
        rounds: cfg.rounds,
        final_version: sim.coordinator.model().version,
        required_deposit: required,
        slashed,
        endorsements,
        false_alarms,
        coordinator_balance: sim.ledger.state().coordinator_balance,
    };
    Ok(RoundsOutcome {
        reports,
        ledger_jsonl: sim.ledger.to_json_lines()?,
        summary,
    })
}

// ---------------------------------------------------------------- detection

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectRow {
    pub n: u64,
    pub p: u64,
    pub m: u64,
    pub prob_paper: f64,
    pub prob_exact: f64,
    pub empirical: f64,
    /// Three binomial standard errors at the exact probability.
    pub bound: f64,
    pub config_hash: String,
}

impl DetectRow {
    pub fn within_exact(&self) -> bool {
        (self.empirical - self.prob_exact).abs() <= self.bound
    }

    pub fn above_paper(&self) -> bool {
        self.empirical >= self.prob_paper - self.bound
    }
}

pub fn detect_sim(cfg: &ExperimentConfig) -> Result<Vec<DetectRow>> {
    let hash = cfg.hash();
    let d = &cfg.detect;
    d.points
        .iter()
        .enumerate()
        .map(|(k, &(n, p, m))| {
            let prob_exact = detection_prob_exact(n, p, m)?;
            let empirical = simulate_detection(n, p, m, d.trials, mix(cfg.seed, k as u64))?;
            Ok(DetectRow {
                n,
                p,
                m,
                prob_paper: detection_prob_paper(n, p, m)?,
                prob_exact,
                empirical,
                bound: three_sigma(prob_exact, d.trials),
                config_hash: hash.clone(),
            })
        })
        .collect()
}

// ---------------------------------------------------------------- game

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameRow {
    pub n: u64,
    pub p: u64,
    pub benefit: f64,
    pub deposit: f64,
    /// `None` when the bounds do not apply (`p < 2` or `p > n`).
    pub bounds_hold: Option<bool>,
    pub hypothesis_holds: bool,
    pub deposit_sufficient: bool,
    pub best_response_paper: bool,
    pub best_response_exact: bool,
    pub best_response_rational: bool,
    pub enforced: bool,
    pub diagnostic: Option<String>,
    pub config_hash: String,
}

impl GameRow {
    pub fn violation(&self) -> bool {
        self.bounds_hold == Some(false) || (self.hypothesis_holds && !self.enforced)
    }
}

pub fn game_check(cfg: &ExperimentConfig) -> Result<Vec<GameRow>> {
    let g = &cfg.game;
    let hash = cfg.hash();
    let mut cells = Vec::new();
    for &n in &g.n {
        for &p in &g.p {
            for &b in &g.benefit {
                cells.push((n, p, b));
            }
        }
    }
    par::map_slice(&cells, |&(n, p, benefit)| {
        let mut diagnostic = Vec::new();
        if p > n {
            diagnostic.push(format!("p={p} exceeds n={n}"));
        }
        let deposit = match g.deposit {
            Some(d) => d,
            None => min_deposit(g.cost, p).unwrap_or_else(|e| {
                diagnostic.push(format!("hypothesis p >= 2 fails: {e}"));
                0.0
            }),
        };
        let bounds_hold = if p >= 2 && p <= n {
            Some(theorem_bounds_violations(n, p)?.is_empty())
        } else {
            None
        };
        let (rep, rational) = if p <= n {
            let mut params = GameParams::linear(n, p, g.cost, benefit);
            params.deposit = deposit;
            (
                Some(honesty_report(&params)?),
                best_response_exact_linear(n, p, g.cost, benefit, deposit)?,
            )
        } else {
            (None, false)
        };
        if let Some(r) = &rep {
            if let Some(m) = r.worst_m {
                diagnostic.push(format!("faking m={m} beats honesty"));
            }
        }
        Ok(GameRow {
            n,
            p,
            benefit,
            deposit,
            bounds_hold,
            hypothesis_holds: p >= 2,
            deposit_sufficient: rep.as_ref().is_some_and(|r| r.deposit_sufficient),
            best_response_paper: rep.as_ref().is_some_and(|r| r.best_response_paper),
            best_response_exact: rep.as_ref().is_some_and(|r| r.best_response_exact),
            best_response_rational: rational,
            enforced: rep.as_ref().is_some_and(|r| r.enforced),
            diagnostic: (!diagnostic.is_empty()).then(|| diagnostic.join("; ")),
            config_hash: hash.clone(),
        })
    })
    .into_iter()
    .collect()
}

// ---------------------------------------------------------------- bench

/// Timings in microseconds, medians over the configured repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub setting: String,
    /// Plain computation.
    pub original: f64,
    /// Plain computation plus hashing every input and output.
    pub full_tee: f64,
    pub worker_compute: f64,
    pub worker_commit_overhead: f64,
    pub monitor_test: f64,
    pub total: f64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchTable {
    pub name: String,
    pub rows: Vec<BenchRow>,
}

impl BenchTable {
    pub fn to_csv(&self) -> Result<String> {
        to_csv(&self.rows)
    }
}

pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Malformed(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Malformed(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Malformed(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pass {
    ConvForward,
    ConvBackward,
    FcForward,
    FcBackward,
}

impl Pass {
    fn stages(self) -> &'static [StageId] {
        match self {
            Pass::ConvForward => &[StageId::ConvForward],
            Pass::ConvBackward => &[StageId::ConvBackwardInput, StageId::ConvBackwardFilters],
            Pass::FcForward => &[StageId::FcForward],
            Pass::FcBackward => &[StageId::FcBackwardInput, StageId::FcBackwardWeights],
        }
    }
}

type Labeled<T> = Vec<(String, T)>;

fn conv_settings(b: &BenchGrid) -> Vec<(&'static str, Labeled<ConvSetting>)> {
    let base = b.conv_base;
    let vary = |vals: &[usize], key: &str, set: fn(&mut ConvSetting, usize)| -> Labeled<ConvSetting> {
        vals.iter()
            .map(|&v| {
                let mut s = base;
                set(&mut s, v);
                (format!("{key}={v}"), s)
            })
            .collect()
    };
    vec![
        ("input_size", vary(&b.input_sides, "input_side", |s, v| s.input_side = v)),
        ("filter_number", vary(&b.filter_counts, "n_filters", |s, v| s.n_filters = v)),
        ("stride", vary(&b.strides, "stride", |s, v| s.stride = v)),
        ("filter_size", vary(&b.filter_sides, "filter_side", |s, v| s.filter_side = v)),
    ]
}

fn fc_settings(b: &BenchGrid) -> Vec<(&'static str, Labeled<FcSetting>)> {
    let base = b.fc_base;
    vec![
        (
            "input",
            b.fc_inputs
                .iter()
                .map(|&v| (format!("l_x={v}"), FcSetting { l_x: v, ..base }))
                .collect(),
        ),
        (
            "output",
            b.fc_outputs
                .iter()
                .map(|&v| (format!("l_y={v}"), FcSetting { l_y: v, ..base }))
                .collect(),
        ),
    ]
}

fn conv_bench_spec(s: &ConvSetting, n_y: usize) -> ModelSpec {
    ModelSpec {
        input_side: s.input_side,
        n_filters: s.n_filters,
        filter_side: s.filter_side,
        stride: s.stride,
        activation: Activation::Relu,
        n_y,
        eta: 0.01,
    }
}

/// A model whose FC layer is `l_x -> l_y`: 1x1 filters over the largest
/// square input (side at most 64) that divides `l_x`.
fn fc_bench_spec(s: FcSetting) -> Result<ModelSpec> {
    if s.l_x == 0 || s.l_y == 0 {
        return Err(Error::Config("fc dimensions must be positive".into()));
    }
    let side = (1..=64usize)
        .rev()
        .find(|a| s.l_x.is_multiple_of(a * a))
        .expect("side 1 always divides");
    Ok(ModelSpec {
        input_side: side,
        n_filters: s.l_x / (side * side),
        filter_side: 1,
        stride: 1,
        activation: Activation::Relu,
        n_y: s.l_y,
        eta: 0.01,
    })
}

struct BenchFixture {
    package: Arc<SignedModel>,
    store: Arc<RecordStore>,
    keys: Keyring,
    seed: u64,
}

impl BenchFixture {
    fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        let keys = Keyring::derived("bench", [1]);
        let g = spec.geometry()?;
        let file = RecordFile::synthetic(1, g.input_side * g.input_side, g.l_y, seed);
        let store = build_record_store(file.sign_all(keys.authority.as_ref())?, keys.authority.as_ref())?;
        let model = GlobalModel::init(spec, seed)?;
        let package = SignedModel::sign(model, keys.coordinator.as_ref())?;
        Ok(BenchFixture {
            package: Arc::new(package),
            store: Arc::new(store),
            keys,
            seed,
        })
    }

    /// Worker and monitor with every stage before `stage` committed.
    fn ready_for(&self, stage: StageId) -> Result<(Worker, Monitor)> {
        let mut w = Worker::new(1, self.package.clone(), self.store.clone(), None, self.seed)?;
        let mut m = Monitor::new(
            1,
            0,
            MonitorConfig {
                p: 2,
                link_checks: false,
            },
            self.keys.monitor_keys(1)?,
            self.package.trusted_view(),
            self.store.monitor_view(),
            self.seed,
        )?;
        let (_, v) = m.init_round(&mut w);
        if !v.is_honest() {
            return Err(Error::Malformed("bench record opening rejected".into()));
        }
        for s in StageId::PIPELINE.into_iter().take_while(|&s| s != stage) {
            let c = w.run_stage(s)?;
            m.receive_commit(&c).map_err(Error::Malformed)?;
        }
        Ok((w, m))
    }

    /// Plain compute of one pass, optionally followed by rehashing every
    /// input and output of it.
    fn plain(&self, pass: Pass, rehash: bool) -> Result<f64> {
        let model = &self.package.model;
        let spec = model.spec.conv();
        let record = self.store.get(1)?;
        let x = Tensor::new(vec![spec.input_side, spec.input_side], record.x.clone())?;
        let g = model.geometry()?;
        let act: Vec<f64> = nn::conv_forward(&spec, &x, &model.filters)?
            .values()
            .iter()
            .map(|&v| model.spec.activation.apply(v))
            .collect();
        let fc = FcSpec::new(model.fc.theta.clone(), model.spec.eta)?;
        let fc_in = Tensor::vector(act);
        let grad_y = Tensor::vector(record.y.iter().map(|v| v * 0.5).collect());
        let conv_grad = Tensor::new(
            vec![g.n_filters, g.out_side, g.out_side],
            (0..g.l_x).map(|k| ((k % 7) as f64 - 3.0) * 0.1).collect(),
        )?;
        let hash_all = |ts: &[&[f64]]| {
            for t in ts {
                black_box(hash_group(t));
            }
        };
        let t = Instant::now();
        match pass {
            Pass::ConvForward => {
                let y = nn::conv_forward(&spec, &x, &model.filters)?;
                if rehash {
                    hash_all(&[x.values(), y.values()]);
                    model.filters.iter().for_each(|f| hash_all(&[f.values()]));
                }
                black_box(y);
            }
            Pass::ConvBackward => {
                let gr = nn::conv_backward(&spec, &x, &model.filters, &conv_grad)?;
                if rehash {
                    hash_all(&[x.values(), conv_grad.values(), gr.grad_x.values()]);
                    gr.grad_f.iter().for_each(|f| hash_all(&[f.values()]));
                    model.filters.iter().for_each(|f| hash_all(&[f.values()]));
                }
                black_box(gr);
            }
            Pass::FcForward => {
                let y = nn::fc_forward(&fc, &fc_in)?;
                if rehash {
                    hash_all(&[fc_in.values(), fc.theta.values(), y.values()]);
                }
                black_box(y);
            }
            Pass::FcBackward => {
                let (gx, gt) = nn::fc_backward(&fc, &fc_in, &grad_y)?;
                if rehash {
                    hash_all(&[fc_in.values(), grad_y.values(), fc.theta.values(), gx.values(), gt.values()]);
                }
                black_box((gx, gt));
            }
        }
        Ok(micros(t))
    }

    /// Worker time for the pass's stages and monitor time to audit them.
    fn protocol(&self, pass: Pass, rep: u64) -> Result<(f64, f64)> {
        let stages = pass.stages();
        let (mut w, mut m) = self.ready_for(stages[0])?;
        let (mut worker, mut monitor) = (0.0, 0.0);
        for &s in stages {
            let t = Instant::now();
            let c = w.run_stage(s)?;
            worker += micros(t);
            m.receive_commit(&c).map_err(Error::Malformed)?;
            let t = Instant::now();
            let plan = m.plan_for(s, &probe_picks(m.geometry().computations(s), rep));
            let resp = w.answer_challenge(&plan.challenge())?;
            let report = m.check(&plan, &resp);
            monitor += micros(t);
            if !report.verdict.is_honest() {
                return Err(Error::Malformed(format!("bench audit of {s} failed: {:?}", report.verdict)));
            }
        }
        Ok((worker, monitor))
    }
}

/// Two distinct probe indices that vary with the repetition.
fn probe_picks(n: usize, rep: u64) -> Vec<usize> {
    let a = (mix(rep, 1) % n as u64) as usize;
    let b = (a + 1 + (mix(rep, 2) % (n as u64 - 1).max(1)) as usize) % n;
    let mut v = if a == b { vec![a] } else { vec![a, b] };
    v.sort_unstable();
    v
}

fn micros(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e6
}

/// Median of `reps` runs after one discarded warm-up.
fn median_of<F: FnMut(u64) -> Result<f64>>(reps: usize, mut f: F) -> Result<f64> {
    f(u64::MAX)?;
    let mut v = (0..reps as u64).map(&mut f).collect::<Result<Vec<f64>>>()?;
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Ok(if v.len() % 2 == 1 { v[mid] } else { 0.5 * (v[mid - 1] + v[mid]) })
}

fn bench_row(setting: String, spec: ModelSpec, pass: Pass, reps: usize, seed: u64, hash: &str) -> Result<BenchRow> {
    let fx = BenchFixture::new(spec, seed)?;
    let original = median_of(reps, |_| fx.plain(pass, false))?;
    let full_tee = median_of(reps, |_| fx.plain(pass, true))?;
    let mut runs = Vec::with_capacity(reps);
    fx.protocol(pass, u64::MAX)?;
    for r in 0..reps as u64 {
        runs.push(fx.protocol(pass, r)?);
    }
    let median = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        let mid = v.len() / 2;
        if v.len() % 2 == 1 {
            v[mid]
        } else {
            0.5 * (v[mid - 1] + v[mid])
        }
    };
    let worker_total = median(runs.iter().map(|r| r.0).collect());
    let monitor_test = median(runs.iter().map(|r| r.1).collect());
    let worker_compute = original;
    let worker_commit_overhead = (worker_total - worker_compute).max(0.0);
    // nanosecond resolution is all the clock gives
    let ns = |v: f64| (v * 1e3).round() / 1e3;
    Ok(BenchRow {
        setting,
        original: ns(original),
        full_tee: ns(full_tee),
        worker_compute: ns(worker_compute),
        worker_commit_overhead: ns(worker_commit_overhead),
        monitor_test: ns(monitor_test),
        total: ns(worker_compute + worker_commit_overhead + monitor_test),
        config_hash: hash.to_string(),
    })
}

/// All twelve tables. Runs single-threaded so timings are comparable across
/// settings and machines.
pub fn bench(cfg: &ExperimentConfig) -> Result<Vec<BenchTable>> {
    cfg.validate()?;
    let b = &cfg.bench;
    let hash = cfg.hash();
    par::sequential(|| {
        let mut tables = Vec::new();
        for (pass, label) in [(Pass::ConvForward, "conv_fwd"), (Pass::ConvBackward, "conv_bwd")] {
            for (axis, rows) in conv_settings(b) {
                let rows = rows
                    .into_iter()
                    .map(|(name, s)| bench_row(name, conv_bench_spec(&s, b.n_y), pass, b.reps, cfg.seed, &hash))
                    .collect::<Result<Vec<_>>>()?;
                tables.push(BenchTable {
                    name: format!("{label}_{axis}"),
                    rows,
                });
            }
        }
        for (pass, label) in [(Pass::FcForward, "fc_fwd"), (Pass::FcBackward, "fc_bwd")] {
            for (axis, rows) in fc_settings(b) {
                let rows = rows
                    .into_iter()
                    .map(|(name, s)| bench_row(name, fc_bench_spec(s)?, pass, b.reps, cfg.seed, &hash))
                    .collect::<Result<Vec<_>>>()?;
                tables.push(BenchTable {
                    name: format!("{label}_{axis}"),
                    rows,
                });
            }
        }
        Ok(tables)
    })
}

/// One conv table over input sides, forward or backward.
pub fn bench_conv_input_sizes(
    base: ConvSetting,
    sides: &[usize],
    backward: bool,
    n_y: usize,
    reps: usize,
    seed: u64,
) -> Result<BenchTable> {
    let pass = if backward { Pass::ConvBackward } else { Pass::ConvForward };
    par::sequential(|| {
        let rows = sides
            .iter()
            .map(|&a| {
                let s = ConvSetting { input_side: a, ..base };
                bench_row(format!("input_side={a}"), conv_bench_spec(&s, n_y), pass, reps, seed, "")
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BenchTable {
            name: if backward { "conv_bwd_input_size" } else { "conv_fwd_input_size" }.into(),
            rows,
        })
    })
}

pub fn write_csv(dir: &Path, name: &str, body: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), body)?;
    Ok(())
}
