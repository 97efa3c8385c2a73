//! Drives full training rounds: every active worker runs the audited
//! pipeline next to its own monitor, then the coordinator aggregates.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coordinator::{AggregateOutcome, Coordinator, Submission};
use crate::error::{Error, Result};
use crate::layout::StageId;
use crate::ledger::Ledger;
use crate::model::{GlobalModel, SignedModel};
use crate::monitor::{Monitor, MonitorConfig, MonitorKeys, TestReport, Verdict};
use crate::par;
use crate::records::RecordStore;
use crate::rng::mix;
use crate::signing::{MacSigner, Signer};
use crate::worker::{CheatStrategy, Worker};

/// Pre-shared keys of one simulation.
#[derive(Clone)]
pub struct Keyring {
    pub authority: Arc<dyn Signer>,
    pub coordinator: Arc<dyn Signer>,
    pub monitors: BTreeMap<u32, Arc<dyn Signer>>,
}

impl Keyring {
    /// Keys derived from a secret label and the worker ids.
    pub fn derived(secret: &str, workers: impl IntoIterator<Item = u32>) -> Self {
        let key = |label: &str, n: u64| -> Arc<dyn Signer> {
            Arc::new(MacSigner::derived(&format!("{secret}/{label}"), n))
        };
        Keyring {
            authority: key("authority", 0),
            coordinator: key("coordinator", 0),
            monitors: workers.into_iter().map(|w| (w, key("monitor", w as u64))).collect(),
        }
    }

    pub fn monitor_keys(&self, worker: u32) -> Result<MonitorKeys> {
        let own = self
            .monitors
            .get(&worker)
            .ok_or_else(|| Error::Config(format!("no monitor key for worker {worker}")))?;
        Ok(MonitorKeys {
            authority: self.authority.clone(),
            coordinator: self.coordinator.clone(),
            own: own.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerRound {
    pub worker: u32,
    pub round: u64,
    pub record_requested: u64,
    pub record_used: Option<u64>,
    pub init: Verdict,
    pub reports: Vec<TestReport>,
    pub endorsed: bool,
    pub refusal: Option<String>,
    pub loss: Option<f64>,
}

impl WorkerRound {
    pub fn honest(&self) -> bool {
        self.init.is_honest() && self.reports.iter().all(|r| r.verdict.is_honest())
    }
}

/// One worker's round: record check, every stage audit in order (stopping at
/// the first failure), then endorsement.
#[allow(clippy::too_many_arguments)]
pub fn run_worker_round(
    package: Arc<SignedModel>,
    store: Arc<RecordStore>,
    keys: MonitorKeys,
    cfg: MonitorConfig,
    worker_id: u32,
    cheat: Option<CheatStrategy>,
    round: u64,
    seed: u64,
) -> Result<(WorkerRound, Submission)> {
    let round_seed = mix(seed, round);
    let mut worker = Worker::new(worker_id, package.clone(), store.clone(), cheat, mix(round_seed, 1))?;
    let mut monitor = Monitor::new(
        worker_id,
        round,
        cfg,
        keys,
        package.trusted_view(),
        store.monitor_view(),
        mix(round_seed, 2),
    )?;
    let (requested, init) = monitor.init_round(&mut worker);
    if init.is_honest() {
        for stage in StageId::PIPELINE {
            if !monitor.audit(&mut worker, stage).verdict.is_honest() {
                break;
            }
        }
    }
    let (endorsement, refusal) = match monitor.endorse() {
        Ok(e) => (Some(e), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let report = WorkerRound {
        worker: worker_id,
        round,
        record_requested: requested,
        record_used: worker.record_id(),
        init,
        reports: monitor.reports().to_vec(),
        endorsed: endorsement.is_some(),
        refusal,
        loss: worker.loss(),
    };
    let submission = Submission {
        worker: worker_id,
        update: worker.update().ok(),
        endorsement,
    };
    Ok((report, submission))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerSetup {
    pub id: u32,
    pub cheat: Option<CheatStrategy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u64,
    pub workers: Vec<WorkerRound>,
    pub aggregate: Option<AggregateOutcome>,
    pub error: Option<String>,
    pub version: u64,
}

pub struct Simulation {
    pub coordinator: Coordinator,
    pub ledger: Ledger,
    store: Arc<RecordStore>,
    keys: Keyring,
    workers: Vec<WorkerSetup>,
    cfg: MonitorConfig,
    seed: u64,
    round: u64,
}

impl Simulation {
    /// Sets up the coordinator and has every worker join with `deposit`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: GlobalModel,
        store: RecordStore,
        keys: Keyring,
        workers: Vec<WorkerSetup>,
        cfg: MonitorConfig,
        deposit: u64,
        required: u64,
        seed: u64,
    ) -> Result<Self> {
        let mut coordinator = Coordinator::new(model, keys.coordinator.clone())?;
        let mut ledger = Ledger::new();
        for w in &workers {
            coordinator.register_monitor(w.id, keys.monitor_keys(w.id)?.own);
            ledger.join(w.id, deposit, required)?;
        }
        Ok(Simulation {
            coordinator,
            ledger,
            store: Arc::new(store),
            keys,
            workers,
            cfg,
            seed,
            round: 0,
        })
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn run_round(&mut self) -> Result<RoundReport> {
        let round = self.round;
        let package = Arc::new(self.coordinator.publish()?);
        let active: Vec<WorkerSetup> = self
            .workers
            .iter()
            .filter(|w| self.ledger.state().is_active(w.id))
            .copied()
            .collect();
        let results = par::map_slice(&active, |w| {
            run_worker_round(
                package.clone(),
                self.store.clone(),
                self.keys.monitor_keys(w.id)?,
                self.cfg,
                w.id,
                w.cheat,
                round,
                mix(self.seed, w.id as u64),
            )
        });
        let mut reports = Vec::with_capacity(results.len());
        let mut subs = Vec::with_capacity(results.len());
        for r in results {
            let (rep, sub) = r?;
            reports.push(rep);
            subs.push(sub);
        }
        let (aggregate, error) = if subs.is_empty() {
            (None, Some(Error::NoEndorsedUpdates(round).to_string()))
        } else {
            let o = self.coordinator.aggregate(round, &subs, &mut self.ledger)?;
            let error = o.accepted.is_empty().then(|| Error::NoEndorsedUpdates(round).to_string());
            (Some(o), error)
        };
        self.round += 1;
        Ok(RoundReport {
            round,
            workers: reports,
            aggregate,
            error,
            version: self.coordinator.model().version,
        })
    }
}
