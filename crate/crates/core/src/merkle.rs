//! Canonical encoding, SHA-256 Merkle commitments and membership evidence.
//!
//! Byte layout (normative):
//! - floats encode as the 8 little-endian bytes of their IEEE-754 bit pattern,
//!   indices as 8 little-endian bytes, byte strings pass through unchanged;
//! - a leaf digest is `SHA256(0x00 || bytes)`;
//! - an internal node is `SHA256(0x01 || left || right)`;
//! - a level with an odd number of nodes promotes its last node unchanged.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};

use crate::error::{Error, Result};
use crate::par;

pub const DIGEST_LEN: usize = 32;

const LEAF_PREFIX: u8 = 0x00;
const NODE_PREFIX: u8 = 0x01;

/// Levels at or above this width are hashed with the data-parallel helpers.
const PAR_LEVEL_MIN: usize = 512;

/// A 32-byte SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        let bytes = hex::decode(s).map_err(|e| Error::Malformed(e.to_string()))?;
        let arr: [u8; DIGEST_LEN] = bytes
            .try_into()
            .map_err(|_| Error::Malformed("digest must be 32 bytes".into()))?;
        Ok(Digest(arr))
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// A value that can be committed.
#[derive(Debug, Clone, Copy)]
pub enum Value<'a> {
    Float(f64),
    Index(u64),
    Bytes(&'a [u8]),
}

pub fn encode_f64(x: f64) -> [u8; 8] {
    x.to_bits().to_le_bytes()
}

pub fn encode_index(i: u64) -> [u8; 8] {
    i.to_le_bytes()
}

pub fn encode_value(v: Value<'_>) -> Vec<u8> {
    match v {
        Value::Float(x) => encode_f64(x).to_vec(),
        Value::Index(i) => encode_index(i).to_vec(),
        Value::Bytes(b) => b.to_vec(),
    }
}

/// Concatenated encodings of a run of floats.
pub fn encode_f64s(xs: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(xs.len() * 8);
    for &x in xs {
        out.extend_from_slice(&encode_f64(x));
    }
    out
}

pub fn hash_leaf(bytes: &[u8]) -> Digest {
    let mut h = Sha256::new();
    h.update([LEAF_PREFIX]);
    h.update(bytes);
    Digest(h.finalize().into())
}

pub fn hash_internal(left: &Digest, right: &Digest) -> Digest {
    let mut h = Sha256::new();
    h.update([NODE_PREFIX]);
    h.update(left.0);
    h.update(right.0);
    Digest(h.finalize().into())
}

/// Leaf digest of a group of floats: `H(0x00 || enc(g[0]) || ... || enc(g[last]))`.
pub fn hash_group(values: &[f64]) -> Digest {
    let mut h = Sha256::new();
    h.update([LEAF_PREFIX]);
    for &v in values {
        h.update(encode_f64(v));
    }
    Digest(h.finalize().into())
}

/// Which side of the climbing node a co-path sibling sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

/// Co-path hashes proving membership of one leaf.
///
/// `leaf_count` describes the tree geometry the path was cut from; it is not
/// bound by the root, so verifiers compare it against the size they expect.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub index: usize,
    pub leaf_count: usize,
    pub path: Vec<(Digest, Side)>,
}

impl Evidence {
    pub fn len(&self) -> usize {
        self.path.len()
    }

    pub fn is_empty(&self) -> bool {
        self.path.is_empty()
    }
}

/// Sibling sides met while climbing from `index` in a tree of `leaf_count`
/// leaves; levels where the node is promoted contribute nothing.
pub fn expected_sides(index: usize, leaf_count: usize) -> Vec<Side> {
    let mut sides = Vec::new();
    let mut pos = index;
    let mut width = leaf_count;
    while width > 1 {
        let sibling = pos ^ 1;
        if sibling < width {
            sides.push(if pos.is_multiple_of(2) { Side::Right } else { Side::Left });
        }
        pos /= 2;
        width = width.div_ceil(2);
    }
    sides
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MerkleTree {
    levels: Vec<Vec<Digest>>,
}

fn next_level(level: &[Digest]) -> Vec<Digest> {
    let width = level.len().div_ceil(2);
    let node = |k: usize| {
        let l = 2 * k;
        if l + 1 < level.len() {
            hash_internal(&level[l], &level[l + 1])
        } else {
            level[l]
        }
    };
    if level.len() >= PAR_LEVEL_MIN {
        par::map_range(width, node)
    } else {
        (0..width).map(node).collect()
    }
}

impl MerkleTree {
    /// Builds the tree over already-hashed leaves.
    pub fn from_leaf_digests(leaves: Vec<Digest>) -> Result<Self> {
        if leaves.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut levels = vec![leaves];
        while levels.last().map_or(0, Vec::len) > 1 {
            let next = next_level(levels.last().unwrap());
            levels.push(next);
        }
        Ok(MerkleTree { levels })
    }

    pub fn root(&self) -> Digest {
        self.levels.last().unwrap()[0]
    }

    pub fn leaves(&self) -> &[Digest] {
        &self.levels[0]
    }

    pub fn leaf_count(&self) -> usize {
        self.levels[0].len()
    }

    pub fn levels(&self) -> &[Vec<Digest>] {
        &self.levels
    }

    pub fn evidence_for(&self, index: usize) -> Result<Evidence> {
        let n = self.leaf_count();
        if index >= n {
            return Err(Error::IndexOutOfRange { index, len: n });
        }
        let mut path = Vec::new();
        let mut pos = index;
        for level in &self.levels[..self.levels.len() - 1] {
            let sibling = pos ^ 1;
            if sibling < level.len() {
                let side = if pos.is_multiple_of(2) { Side::Right } else { Side::Left };
                path.push((level[sibling], side));
            }
            pos /= 2;
        }
        Ok(Evidence {
            index,
            leaf_count: n,
            path,
        })
    }

    /// Length-prefixed binary form: u64 LE leaf count, then every level's
    /// digests from the leaves up to the root.
    pub fn to_bytes(&self) -> Vec<u8> {
        let total: usize = self.levels.iter().map(Vec::len).sum();
        let mut out = Vec::with_capacity(8 + total * DIGEST_LEN);
        out.extend_from_slice(&(self.leaf_count() as u64).to_le_bytes());
        for level in &self.levels {
            for d in level {
                out.extend_from_slice(&d.0);
            }
        }
        out
    }

    /// Parses [`MerkleTree::to_bytes`] output, rejecting blobs whose upper
    /// levels do not recompute from the leaves.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let head: [u8; 8] = bytes
            .get(..8)
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| Error::Malformed("missing leaf count".into()))?;
        let n = u64::from_le_bytes(head) as usize;
        if n == 0 {
            return Err(Error::EmptyInput);
        }
        let body = &bytes[8..];
        if !body.len().is_multiple_of(DIGEST_LEN) || body.len() / DIGEST_LEN < n {
            return Err(Error::Malformed("truncated digest list".into()));
        }
        let leaves = body[..n * DIGEST_LEN]
            .chunks_exact(DIGEST_LEN)
            .map(|c| Digest(c.try_into().unwrap()))
            .collect();
        let tree = MerkleTree::from_leaf_digests(leaves)?;
        if tree.to_bytes() != bytes {
            return Err(Error::Malformed("levels do not match leaves".into()));
        }
        Ok(tree)
    }
}

/// Commits to a list of byte strings, one leaf each.
pub fn construct_commit<B: AsRef<[u8]>>(leaves: &[B]) -> Result<MerkleTree> {
    if leaves.is_empty() {
        return Err(Error::EmptyInput);
    }
    let digests = if leaves.len() >= PAR_LEVEL_MIN {
        let bytes: Vec<&[u8]> = leaves.iter().map(AsRef::as_ref).collect();
        par::map_slice(&bytes, |b| hash_leaf(b))
    } else {
        leaves.iter().map(|b| hash_leaf(b.as_ref())).collect()
    };
    MerkleTree::from_leaf_digests(digests)
}

/// Commits to a list of float groups; each group hashes to one leaf.
pub fn group_commit<G: AsRef<[f64]> + Sync>(groups: &[G]) -> Result<MerkleTree> {
    if groups.is_empty() || groups.iter().any(|g| g.as_ref().is_empty()) {
        return Err(Error::EmptyInput);
    }
    let digests = if groups.len() >= PAR_LEVEL_MIN {
        par::map_slice(groups, |g| hash_group(g.as_ref()))
    } else {
        groups.iter().map(|g| hash_group(g.as_ref())).collect()
    };
    MerkleTree::from_leaf_digests(digests)
}

/// Commits to consecutive fixed-width chunks of `values`.
pub fn chunk_commit(values: &[f64], width: usize) -> Result<MerkleTree> {
    if values.is_empty() || width == 0 || !values.len().is_multiple_of(width) {
        return Err(Error::EmptyInput);
    }
    let groups: Vec<&[f64]> = values.chunks_exact(width).collect();
    group_commit(&groups)
}

/// Recomputes the root from a leaf digest and checks it against `commitment`.
///
/// The path's side flags must agree with the geometry implied by
/// `(evid.index, evid.leaf_count)`, which binds the proof to position `i`.
pub fn verify_leaf(leaf: &Digest, i: usize, commitment: &Digest, evid: &Evidence) -> bool {
    if evid.index != i || i >= evid.leaf_count {
        return false;
    }
    let sides = expected_sides(i, evid.leaf_count);
    if sides.len() != evid.path.len() {
        return false;
    }
    let mut acc = *leaf;
    for ((sibling, side), expected) in evid.path.iter().zip(sides) {
        if *side != expected {
            return false;
        }
        acc = match side {
            Side::Left => hash_internal(sibling, &acc),
            Side::Right => hash_internal(&acc, sibling),
        };
    }
    acc == *commitment
}

/// Checks that `u` is the `i`-th committed element.
pub fn verify_element(u: &[u8], i: usize, commitment: &Digest, evid: &Evidence) -> bool {
    verify_leaf(&hash_leaf(u), i, commitment, evid)
}

/// Checks that `values` form the `i`-th committed group.
pub fn verify_group(values: &[f64], i: usize, commitment: &Digest, evid: &Evidence) -> bool {
    verify_leaf(&hash_group(values), i, commitment, evid)
}
