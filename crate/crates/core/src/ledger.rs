//! Simulated deposit contract: joins, slashing, eviction and the endorsement
//! registry. State is a pure fold over an append-only event log.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::min_deposit;
use crate::merkle::Digest;
use crate::protocol::endorsement_message;
use crate::records::b64;
use crate::signing::Signer;

/// Micro-units per unit of cost.
pub const MICRO: u64 = 1_000_000;

/// Deposit demanded of a worker whose costliest stage costs `c` micro-units:
/// the larger of twice that cost and the deposit bound for `p` probes.
pub fn required_deposit(c: u64, p: u64) -> Result<u64> {
    let bound = min_deposit(c as f64, p)?.ceil() as u64;
    Ok(bound.max(c.saturating_mul(2)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Active,
    Evicted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Account {
    pub balance: u64,
    pub status: Status,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractState {
    pub workers: BTreeMap<u32, Account>,
    pub coordinator_balance: u64,
    pub endorsements: BTreeSet<(u32, u64)>,
}

impl ContractState {
    /// Sum of every balance held by the contract.
    pub fn total(&self) -> u64 {
        self.coordinator_balance + self.workers.values().map(|a| a.balance).sum::<u64>()
    }

    pub fn is_active(&self, worker: u32) -> bool {
        matches!(self.workers.get(&worker), Some(a) if a.status == Status::Active)
    }

    fn apply(&mut self, e: &Event) -> Result<()> {
        match e {
            Event::Joined { worker, amount } => {
                if self.workers.contains_key(worker) {
                    return Err(Error::AlreadyJoined(*worker));
                }
                self.workers.insert(
                    *worker,
                    Account {
                        balance: *amount,
                        status: Status::Active,
                    },
                );
            }
            Event::Slashed { worker, amount, .. } => {
                let acct = self
                    .workers
                    .get_mut(worker)
                    .filter(|a| a.status == Status::Active)
                    .ok_or(Error::NotActive(*worker))?;
                if acct.balance != *amount {
                    return Err(Error::Malformed(format!(
                        "slash of {amount} does not match balance {}",
                        acct.balance
                    )));
                }
                acct.balance = 0;
                acct.status = Status::Evicted;
                self.coordinator_balance += amount;
            }
            Event::Endorsed { worker, round, .. } => {
                if !self.is_active(*worker) {
                    return Err(Error::NotActive(*worker));
                }
                self.endorsements.insert((*worker, *round));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Joined {
        worker: u32,
        amount: u64,
    },
    Slashed {
        worker: u32,
        amount: u64,
        reason: String,
    },
    Endorsed {
        worker: u32,
        round: u64,
        digest: Digest,
        #[serde(with = "b64")]
        signature: Vec<u8>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub seq: u64,
    pub event: Event,
}

#[derive(Debug, Clone, Default)]
pub struct Ledger {
    state: ContractState,
    log: Vec<Event>,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn state(&self) -> &ContractState {
        &self.state
    }

    pub fn log(&self) -> &[Event] {
        &self.log
    }

    fn append(&mut self, e: Event) -> Result<Receipt> {
        self.state.apply(&e)?;
        self.log.push(e.clone());
        Ok(Receipt {
            seq: self.log.len() as u64 - 1,
            event: e,
        })
    }

    pub fn join(&mut self, worker: u32, amount: u64, required: u64) -> Result<Receipt> {
        if self.state.workers.contains_key(&worker) {
            return Err(Error::AlreadyJoined(worker));
        }
        if amount < required {
            return Err(Error::InsufficientDeposit {
                offered: amount,
                required,
            });
        }
        self.append(Event::Joined { worker, amount })
    }

    /// Moves the worker's whole deposit to the coordinator and evicts it.
    pub fn slash(&mut self, worker: u32, reason: &str) -> Result<Receipt> {
        let amount = match self.state.workers.get(&worker) {
            Some(a) if a.status == Status::Active => a.balance,
            _ => return Err(Error::NotActive(worker)),
        };
        self.append(Event::Slashed {
            worker,
            amount,
            reason: reason.to_string(),
        })
    }

    /// Records a monitor endorsement after checking it under that worker's
    /// monitor key.
    pub fn record_endorsement(
        &mut self,
        worker: u32,
        round: u64,
        digest: Digest,
        signature: &[u8],
        monitor_key: &dyn Signer,
    ) -> Result<Receipt> {
        if !self.state.is_active(worker) {
            return Err(Error::NotActive(worker));
        }
        if !monitor_key.verify(&endorsement_message(worker, round, &digest), signature) {
            return Err(Error::BadSignature(format!(
                "endorsement of worker {worker} for round {round}"
            )));
        }
        self.append(Event::Endorsed {
            worker,
            round,
            digest,
            signature: signature.to_vec(),
        })
    }

    pub fn is_endorsed(&self, worker: u32, round: u64) -> bool {
        self.state.endorsements.contains(&(worker, round))
    }

    /// Rebuilds the state from a log.
    pub fn replay(events: &[Event]) -> Result<ContractState> {
        let mut state = ContractState::default();
        for e in events {
            state.apply(e)?;
        }
        Ok(state)
    }

    pub fn to_json_lines(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.log {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_json_lines(text: &str) -> Result<Self> {
        let log = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<Event>, _>>()?;
        let state = Self::replay(&log)?;
        Ok(Ledger { state, log })
    }

    pub fn snapshot_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.state)?)
    }
}
