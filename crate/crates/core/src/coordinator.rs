//! The central server: signs and hands out the model, accepts only endorsed
//! updates, averages them and evicts workers that fail to get endorsed.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ledger::Ledger;
use crate::merkle::{group_commit, Digest};
use crate::model::{GlobalModel, SignedModel};
use crate::nn::{fold_expanded, Tensor};
use crate::protocol::{update_digest, Endorsement};
use crate::signing::Signer;
use crate::worker::WorkerUpdate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub worker: u32,
    pub update: Option<WorkerUpdate>,
    pub endorsement: Option<Endorsement>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregateOutcome {
    pub round: u64,
    pub accepted: Vec<u32>,
    pub evicted: Vec<(u32, String)>,
    pub version: u64,
}

/// Digest a monitor must have endorsed for `update`.
pub fn digest_of_update(update: &WorkerUpdate) -> Result<Digest> {
    let mut rows: Vec<&[f64]> = Vec::new();
    for e in &update.grad_f_expanded {
        let out = *e.shape().last().ok_or(Error::EmptyInput)?;
        rows.extend(e.values().chunks_exact(out));
    }
    let f_root = group_commit(&rows)?.root();
    let singles: Vec<[f64; 1]> = update.grad_theta.values().iter().map(|&v| [v]).collect();
    let t_root = group_commit(&singles)?.root();
    Ok(update_digest(&f_root, &t_root))
}

pub struct Coordinator {
    signer: Arc<dyn Signer>,
    model: GlobalModel,
    monitor_keys: BTreeMap<u32, Arc<dyn Signer>>,
}

impl Coordinator {
    pub fn new(model: GlobalModel, signer: Arc<dyn Signer>) -> Result<Self> {
        model.geometry()?;
        Ok(Coordinator {
            signer,
            model,
            monitor_keys: BTreeMap::new(),
        })
    }

    /// Pre-shares the verification key of `worker`'s monitor.
    pub fn register_monitor(&mut self, worker: u32, key: Arc<dyn Signer>) {
        self.monitor_keys.insert(worker, key);
    }

    pub fn model(&self) -> &GlobalModel {
        &self.model
    }

    pub fn publish(&self) -> Result<SignedModel> {
        SignedModel::sign(self.model.clone(), self.signer.as_ref())
    }

    fn accept(&self, round: u64, sub: &Submission, ledger: &mut Ledger) -> std::result::Result<(), String> {
        let e = sub.endorsement.as_ref().ok_or("no endorsement")?;
        let update = sub.update.as_ref().ok_or("no update")?;
        if e.round != round || e.worker != sub.worker {
            return Err("endorsement for another round or worker".into());
        }
        let digest = digest_of_update(update).map_err(|err| err.to_string())?;
        if digest != e.digest {
            return Err("update does not match the endorsed digest".into());
        }
        self.check_shapes(update)?;
        let key = self
            .monitor_keys
            .get(&sub.worker)
            .ok_or("no monitor key registered")?;
        ledger
            .record_endorsement(sub.worker, round, e.digest, &e.signature, key.as_ref())
            .map_err(|err| err.to_string())?;
        Ok(())
    }

    fn check_shapes(&self, u: &WorkerUpdate) -> std::result::Result<(), String> {
        let g = self.model.geometry().map_err(|e| e.to_string())?;
        let fs = g.filter_side;
        let ok = u.grad_f_expanded.len() == g.n_filters
            && u.grad_f_expanded.iter().all(|e| e.shape() == [fs, fs, g.out_side])
            && u.grad_theta.shape() == [g.l_x, g.l_y];
        if ok {
            Ok(())
        } else {
            Err("update has the wrong shape".into())
        }
    }

    /// Applies the mean of all endorsed updates and evicts every other
    /// submitter that is still active. With nothing endorsed the model is
    /// left unchanged and the outcome only lists the evictions.
    pub fn aggregate(&mut self, round: u64, subs: &[Submission], ledger: &mut Ledger) -> Result<AggregateOutcome> {
        let mut ordered: Vec<&Submission> = subs.iter().collect();
        ordered.sort_by_key(|s| s.worker);
        let mut accepted = Vec::new();
        let mut evicted = Vec::new();
        for sub in ordered {
            if !ledger.state().is_active(sub.worker) {
                continue;
            }
            match self.accept(round, sub, ledger) {
                Ok(()) => accepted.push(sub),
                Err(reason) => {
                    ledger.slash(sub.worker, &reason)?;
                    evicted.push((sub.worker, reason));
                }
            }
        }
        if accepted.is_empty() {
            return Ok(AggregateOutcome {
                round,
                accepted: Vec::new(),
                evicted,
                version: self.model.version,
            });
        }

        let count = accepted.len() as f64;
        let eta = self.model.spec.eta;
        for (t, filter) in self.model.filters.iter_mut().enumerate() {
            let out = accepted[0].update.as_ref().expect("accepted").grad_f_expanded[t].shape()[2];
            let fv = filter.values_mut();
            for (s, w) in fv.iter_mut().enumerate() {
                let mut acc = 0.0;
                for sub in &accepted {
                    let e = &sub.update.as_ref().expect("accepted").grad_f_expanded[t];
                    acc += fold_expanded(eta, &e.values()[s * out..(s + 1) * out]);
                }
                *w += acc / count;
            }
        }
        let deltas: Vec<&Tensor> = accepted
            .iter()
            .map(|s| &s.update.as_ref().expect("accepted").grad_theta)
            .collect();
        for (s, w) in self.model.fc.theta.values_mut().iter_mut().enumerate() {
            let mut acc = 0.0;
            for d in &deltas {
                acc += d.values()[s];
            }
            *w += acc / count;
        }
        self.model.version += 1;
        Ok(AggregateOutcome {
            round,
            accepted: accepted.iter().map(|s| s.worker).collect(),
            evicted,
            version: self.model.version,
        })
    }
}
