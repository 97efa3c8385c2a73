//! The audited network (conv → activation → FC → MSE) and its signed package.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::Geometry;
use crate::merkle::{encode_index, group_commit, hash_group, Digest};
use crate::nn::{Activation, ConvSpec, FcSpec, Tensor};
use crate::records::b64;
use crate::rng::derived_rng;
use crate::signing::Signer;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_side: usize,
    pub n_filters: usize,
    pub filter_side: usize,
    pub stride: usize,
    pub activation: Activation,
    /// FC output length, equal to the record target length.
    pub n_y: usize,
    pub eta: f64,
}

impl ModelSpec {
    pub fn conv(&self) -> ConvSpec {
        ConvSpec {
            n_filters: self.n_filters,
            filter_side: self.filter_side,
            stride: self.stride,
            input_side: self.input_side,
            eta: self.eta,
        }
    }

    pub fn geometry(&self) -> Result<Geometry> {
        Geometry::new(&self.conv(), self.n_y)
    }

    pub fn n_x(&self) -> usize {
        self.input_side * self.input_side
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalModel {
    pub version: u64,
    pub spec: ModelSpec,
    pub filters: Vec<Tensor>,
    pub fc: FcSpec,
}

impl GlobalModel {
    /// Small uniform random weights drawn from `seed`.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        let g = spec.geometry()?;
        let mut rng = derived_rng(seed, 0x6d6f64656c);
        let fs = spec.filter_side;
        let filters = (0..spec.n_filters)
            .map(|_| {
                let v = (0..fs * fs).map(|_| rng.gen_range(-0.5..0.5)).collect();
                Tensor::new(vec![fs, fs], v)
            })
            .collect::<Result<Vec<_>>>()?;
        let scale = 1.0 / (g.l_x as f64).sqrt();
        let theta = (0..g.l_x * g.l_y)
            .map(|_| rng.gen_range(-scale..scale))
            .collect();
        let fc = FcSpec::new(Tensor::new(vec![g.l_x, g.l_y], theta)?, spec.eta)?;
        Ok(GlobalModel {
            version: 0,
            spec,
            filters,
            fc,
        })
    }

    pub fn geometry(&self) -> Result<Geometry> {
        let g = self.spec.geometry()?;
        if self.fc.l_x != g.l_x || self.fc.l_y != g.l_y || self.filters.len() != g.n_filters {
            return Err(Error::ShapeMismatch("model weights do not match spec".into()));
        }
        Ok(g)
    }
}

/// FC forward weight groups: group `i * n_x + j` is column `i` restricted to
/// the rows of input sub-vector `j`.
pub fn theta_fwd_groups(g: &Geometry, theta: &Tensor) -> Vec<Vec<f64>> {
    let t = theta.values();
    let mut out = Vec::with_capacity(g.n_x * g.l_y);
    for i in 0..g.l_y {
        for j in 0..g.n_x {
            out.push((0..g.s_x).map(|u| t[(j * g.s_x + u) * g.l_y + i]).collect());
        }
    }
    out
}

/// FC backward weight groups: group `j * n_yb + k` is row `j` restricted to
/// the columns of gradient sub-vector `k`.
pub fn theta_bwd_groups(g: &Geometry, theta: &Tensor) -> Vec<Vec<f64>> {
    theta
        .values()
        .chunks_exact(g.s_y)
        .map(<[f64]>::to_vec)
        .collect()
}

fn filter_message(version: u64, t: usize, filter: &Tensor) -> Vec<u8> {
    let mut m = b"filter".to_vec();
    m.extend_from_slice(&encode_index(version));
    m.extend_from_slice(&encode_index(t as u64));
    m.extend_from_slice(hash_group(filter.values()).as_bytes());
    m
}

fn theta_message(label: &[u8], version: u64, root: &Digest) -> Vec<u8> {
    let mut m = label.to_vec();
    m.extend_from_slice(&encode_index(version));
    m.extend_from_slice(root.as_bytes());
    m
}

/// A model as distributed by the coordinator, with per-component signatures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignedModel {
    pub model: GlobalModel,
    #[serde(with = "b64_list")]
    pub filter_sigs: Vec<Vec<u8>>,
    pub theta_fwd_root: Digest,
    #[serde(with = "b64")]
    pub theta_fwd_sig: Vec<u8>,
    pub theta_bwd_root: Digest,
    #[serde(with = "b64")]
    pub theta_bwd_sig: Vec<u8>,
}

impl SignedModel {
    pub fn sign(model: GlobalModel, signer: &dyn Signer) -> Result<Self> {
        let g = model.geometry()?;
        let v = model.version;
        let filter_sigs = model
            .filters
            .iter()
            .enumerate()
            .map(|(t, f)| signer.sign(&filter_message(v, t, f)))
            .collect();
        let theta_fwd_root = group_commit(&theta_fwd_groups(&g, &model.fc.theta))?.root();
        let theta_bwd_root = group_commit(&theta_bwd_groups(&g, &model.fc.theta))?.root();
        Ok(SignedModel {
            filter_sigs,
            theta_fwd_sig: signer.sign(&theta_message(b"theta-fwd", v, &theta_fwd_root)),
            theta_bwd_sig: signer.sign(&theta_message(b"theta-bwd", v, &theta_bwd_root)),
            theta_fwd_root,
            theta_bwd_root,
            model,
        })
    }

    /// The part of the package a monitor keeps: filters and signatures, no
    /// FC weights.
    pub fn trusted_view(&self) -> TrustedModel {
        TrustedModel {
            version: self.model.version,
            spec: self.model.spec,
            filters: self.model.filters.clone(),
            filter_sigs: self.filter_sigs.clone(),
            theta_fwd_sig: self.theta_fwd_sig.clone(),
            theta_bwd_sig: self.theta_bwd_sig.clone(),
        }
    }
}

/// Model components held in the monitor's trusted memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustedModel {
    pub version: u64,
    pub spec: ModelSpec,
    pub filters: Vec<Tensor>,
    #[serde(with = "b64_list")]
    pub filter_sigs: Vec<Vec<u8>>,
    #[serde(with = "b64")]
    pub theta_fwd_sig: Vec<u8>,
    #[serde(with = "b64")]
    pub theta_bwd_sig: Vec<u8>,
}

impl TrustedModel {
    pub fn filter_valid(&self, t: usize, coordinator: &dyn Signer) -> bool {
        match (self.filters.get(t), self.filter_sigs.get(t)) {
            (Some(f), Some(sig)) => coordinator.verify(&filter_message(self.version, t, f), sig),
            _ => false,
        }
    }

    pub fn theta_fwd_valid(&self, root: &Digest, coordinator: &dyn Signer) -> bool {
        coordinator.verify(&theta_message(b"theta-fwd", self.version, root), &self.theta_fwd_sig)
    }

    pub fn theta_bwd_valid(&self, root: &Digest, coordinator: &dyn Signer) -> bool {
        coordinator.verify(&theta_message(b"theta-bwd", self.version, root), &self.theta_bwd_sig)
    }
}

mod b64_list {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(items: &[Vec<u8>], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(items.iter().map(|b| STANDARD.encode(b)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<u8>>, D::Error> {
        Vec::<String>::deserialize(d)?
            .into_iter()
            .map(|s| STANDARD.decode(s).map_err(serde::de::Error::custom))
            .collect()
    }
}
