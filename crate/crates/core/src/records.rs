//! Signed training records and the record commitment tree.
//!
//! Record ids are 1-based; record `i` sits at leaf position `i - 1`, whose
//! digest is `H(0x00 || enc(i) || sigma_i)`.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::merkle::{self, construct_commit, encode_f64, encode_index, Digest, Evidence, MerkleTree};
use crate::rng::derived_rng;
use crate::signing::Signer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: u64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    #[serde(with = "b64")]
    pub sigma: Vec<u8>,
}

/// Per-record tree: one leaf per element, `x` first then `y`.
pub fn record_tree(x: &[f64], y: &[f64]) -> Result<MerkleTree> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyInput);
    }
    let leaves: Vec<[u8; 8]> = x.iter().chain(y).map(|&v| encode_f64(v)).collect();
    construct_commit(&leaves)
}

pub fn record_hash(x: &[f64], y: &[f64]) -> Result<Digest> {
    Ok(record_tree(x, y)?.root())
}

/// Signs a sample; the id is assigned later by [`build_record_store`].
pub fn sign_record(x: Vec<f64>, y: Vec<f64>, authority: &dyn Signer) -> Result<Record> {
    let digest = record_hash(&x, &y)?;
    let sigma = authority.sign(digest.as_bytes());
    Ok(Record { id: 0, x, y, sigma })
}

pub fn validate_record(r: &Record, authority: &dyn Signer) -> bool {
    match record_hash(&r.x, &r.y) {
        Ok(d) => authority.verify(d.as_bytes(), &r.sigma),
        Err(_) => false,
    }
}

/// Bytes hashed into record `id`'s leaf: `enc(id) || sigma`.
pub fn record_leaf_input(id: u64, sigma: &[u8]) -> Vec<u8> {
    let mut out = encode_index(id).to_vec();
    out.extend_from_slice(sigma);
    out
}

/// What the monitor keeps after record preparation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordCommitment {
    pub h_r: Digest,
    pub n_r: u64,
}

#[derive(Debug, Clone)]
pub struct RecordStore {
    records: Vec<Record>,
    tree: MerkleTree,
}

pub fn build_record_store(records: Vec<Record>, authority: &dyn Signer) -> Result<RecordStore> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut records = records;
    for (pos, r) in records.iter_mut().enumerate() {
        if !validate_record(r, authority) {
            return Err(Error::InvalidRecord(pos));
        }
        r.id = pos as u64 + 1;
    }
    let leaves: Vec<Vec<u8>> = records
        .iter()
        .map(|r| record_leaf_input(r.id, &r.sigma))
        .collect();
    let tree = construct_commit(&leaves)?;
    Ok(RecordStore { records, tree })
}

impl RecordStore {
    pub fn n_r(&self) -> u64 {
        self.records.len() as u64
    }

    pub fn h_r(&self) -> Digest {
        self.tree.root()
    }

    pub fn monitor_view(&self) -> RecordCommitment {
        RecordCommitment {
            h_r: self.h_r(),
            n_r: self.n_r(),
        }
    }

    pub fn get(&self, id: u64) -> Result<&Record> {
        let len = self.records.len();
        id.checked_sub(1)
            .and_then(|k| self.records.get(k as usize))
            .ok_or(Error::IndexOutOfRange {
                index: id as usize,
                len,
            })
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn tree(&self) -> &MerkleTree {
        &self.tree
    }

    /// `(enc(id) || sigma, evidence)` for record `id`.
    pub fn open(&self, id: u64) -> Result<(Vec<u8>, Evidence)> {
        let r = self.get(id)?;
        let evid = self.tree.evidence_for(id as usize - 1)?;
        Ok((record_leaf_input(id, &r.sigma), evid))
    }
}

/// Checks a record opening against the monitor's `(h_R, n_R)`.
pub fn verify_record_opening(
    view: &RecordCommitment,
    id: u64,
    leaf_input: &[u8],
    evid: &Evidence,
) -> bool {
    id >= 1
        && id <= view.n_r
        && evid.leaf_count as u64 == view.n_r
        && leaf_input.get(..8) == Some(&encode_index(id)[..])
        && merkle::verify_element(leaf_input, id as usize - 1, &view.h_r, evid)
}

/// On-disk record set: `{n_X, n_Y, records: [{x: [...], y: [...]}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordFile {
    #[serde(rename = "n_X")]
    pub n_x: usize,
    #[serde(rename = "n_Y")]
    pub n_y: usize,
    pub records: Vec<RawRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl RecordFile {
    /// `n_r` records with inputs in `[0, 1)` and targets in `[-1, 1)`.
    pub fn synthetic(n_r: usize, n_x: usize, n_y: usize, seed: u64) -> Self {
        let records = (0..n_r)
            .map(|k| {
                let mut rng = derived_rng(seed, k as u64);
                RawRecord {
                    x: (0..n_x).map(|_| rng.gen::<f64>()).collect(),
                    y: (0..n_y).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                }
            })
            .collect();
        RecordFile { n_x, n_y, records }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: RecordFile = serde_json::from_str(&text)?;
        file.check()?;
        Ok(file)
    }

    pub fn check(&self) -> Result<()> {
        for (k, r) in self.records.iter().enumerate() {
            if r.x.len() != self.n_x || r.y.len() != self.n_y {
                return Err(Error::Config(format!(
                    "record {k} has {}+{} values, expected {}+{}",
                    r.x.len(),
                    r.y.len(),
                    self.n_x,
                    self.n_y
                )));
            }
        }
        Ok(())
    }

    /// Signs every record with the authority key.
    pub fn sign_all(&self, authority: &dyn Signer) -> Result<Vec<Record>> {
        self.records
            .iter()
            .map(|r| sign_record(r.x.clone(), r.y.clone(), authority))
            .collect()
    }
}

pub(crate) mod b64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        STANDARD.decode(s).map_err(serde::de::Error::custom)
    }
}
