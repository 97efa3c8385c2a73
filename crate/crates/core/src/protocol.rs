//! Messages exchanged between a worker and its monitor.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::layout::{StageId, TreeId};
use crate::merkle::{encode_index, hash_leaf, Digest, Evidence};
use crate::records::b64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LeafKey {
    pub tree: TreeId,
    pub index: usize,
}

/// Roots a worker publishes once a stage is computed. `claims` carries
/// scalar results the monitor recomputes outright (the loss).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Commit {
    pub stage: StageId,
    pub roots: Vec<(TreeId, Digest)>,
    pub claims: Vec<f64>,
}

impl Commit {
    pub fn root(&self, tree: TreeId) -> Option<Digest> {
        self.roots.iter().find(|(t, _)| *t == tree).map(|(_, d)| *d)
    }
}

/// Leaves the monitor wants opened. Only the monitor builds these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Challenge {
    pub stage: StageId,
    pub keys: Vec<LeafKey>,
}

impl Challenge {
    pub(crate) fn new(stage: StageId, keys: Vec<LeafKey>) -> Self {
        Challenge { stage, keys }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Opening {
    pub key: LeafKey,
    pub values: Vec<f64>,
    pub evidence: Evidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub stage: StageId,
    pub openings: Vec<Opening>,
}

/// The worker's answer to "which record are you training on".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordOpening {
    /// `enc(id) || sigma`
    #[serde(with = "b64")]
    pub leaf_input: Vec<u8>,
    pub evidence: Evidence,
    /// Root of the record's own tree, which `sigma` signs.
    pub record_root: Digest,
}

impl RecordOpening {
    pub fn sigma(&self) -> &[u8] {
        self.leaf_input.get(8..).unwrap_or(&[])
    }
}

/// A monitor's signature over one round's model updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Endorsement {
    pub worker: u32,
    pub round: u64,
    pub digest: Digest,
    #[serde(with = "b64")]
    pub signature: Vec<u8>,
}

/// Digest of a round's updates: `H(0x00 || root(∇F) || root(∇Θ))`.
pub fn update_digest(grad_f_root: &Digest, grad_theta_root: &Digest) -> Digest {
    let mut bytes = grad_f_root.as_bytes().to_vec();
    bytes.extend_from_slice(grad_theta_root.as_bytes());
    hash_leaf(&bytes)
}

pub fn endorsement_message(worker: u32, round: u64, digest: &Digest) -> Vec<u8> {
    let mut m = b"endorse".to_vec();
    m.extend_from_slice(&encode_index(worker as u64));
    m.extend_from_slice(&encode_index(round));
    m.extend_from_slice(digest.as_bytes());
    m
}

/// The worker side of an audit.
pub trait Prover {
    fn commit(&mut self, stage: StageId) -> Result<Commit>;
    fn answer(&mut self, challenge: &Challenge) -> Result<Response>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "msg", rename_all = "snake_case")]
pub enum Message {
    RecordRequest { id: u64 },
    RecordOpening(RecordOpening),
    Commit(Commit),
    Challenge(Challenge),
    Response(Response),
    Endorsement(Endorsement),
}

/// Ordered log of one worker-monitor session.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub messages: Vec<Message>,
}

impl Transcript {
    pub fn push(&mut self, m: Message) {
        self.messages.push(m);
    }

    /// True when every challenge follows the commit of its stage.
    pub fn commits_precede_challenges(&self) -> bool {
        let mut committed = std::collections::HashSet::new();
        self.messages.iter().all(|m| match m {
            Message::Commit(c) => {
                committed.insert(c.stage);
                true
            }
            Message::Challenge(ch) => committed.contains(&ch.stage),
            _ => true,
        })
    }

    pub fn to_json_lines(&self) -> Result<String> {
        let mut out = String::new();
        for m in &self.messages {
            out.push_str(&serde_json::to_string(m)?);
            out.push('\n');
        }
        Ok(out)
    }
}
