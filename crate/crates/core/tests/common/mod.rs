//! Independent reference implementations shared by the integration tests.
//! Nothing here calls into the library's own math.

#![allow(dead_code)]

use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::One;
use sha2::{Digest as _, Sha256};

use seltest_core::model::{GlobalModel, ModelSpec, SignedModel};
use seltest_core::monitor::{Monitor, MonitorConfig};
use seltest_core::nn::Activation;
use seltest_core::records::{build_record_store, RecordFile, RecordStore};
use seltest_core::session::Keyring;
use seltest_core::worker::{CheatStrategy, Worker};

pub fn sha_leaf(values: &[f64]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update([0u8]);
    for v in values {
        h.update(v.to_bits().to_le_bytes());
    }
    h.finalize().into()
}

pub fn sha_node(l: &[u8; 32], r: &[u8; 32]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update([1u8]);
    h.update(l);
    h.update(r);
    h.finalize().into()
}

/// Root over per-group leaves; a trailing odd node moves up unchanged.
pub fn merkle_root(groups: &[Vec<f64>]) -> [u8; 32] {
    let mut level: Vec<[u8; 32]> = groups.iter().map(|g| sha_leaf(g)).collect();
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|c| if c.len() == 2 { sha_node(&c[0], &c[1]) } else { c[0] })
            .collect();
    }
    level[0]
}

/// Co-path length of leaf `i` among `n`.
pub fn path_len(mut i: usize, mut n: usize) -> usize {
    let mut len = 0;
    while n > 1 {
        if !(i == n - 1 && n % 2 == 1) {
            len += 1;
        }
        i /= 2;
        n = n.div_ceil(2);
    }
    len
}

/// `Y[t][u][v] = Σ F[t][i][j] X[uδ+i][vδ+j]`, summed in `(i, j)` order.
pub fn conv_direct(x: &[f64], a: usize, filters: &[Vec<f64>], fs: usize, d: usize) -> Vec<f64> {
    let out = (a - fs) / d + 1;
    let mut y = Vec::new();
    for f in filters {
        for u in 0..out {
            for v in 0..out {
                let mut s = 0.0;
                for i in 0..fs {
                    for j in 0..fs {
                        s += f[i * fs + j] * x[(u * d + i) * a + v * d + j];
                    }
                }
                y.push(s);
            }
        }
    }
    y
}

/// Input gradient scattered from each output gradient.
pub fn grad_x_direct(gy: &[f64], a: usize, filters: &[Vec<f64>], fs: usize, d: usize) -> Vec<f64> {
    let out = (a - fs) / d + 1;
    let mut gx = vec![0.0; a * a];
    for (t, f) in filters.iter().enumerate() {
        for u in 0..out {
            for v in 0..out {
                let g = gy[(t * out + u) * out + v];
                for i in 0..fs {
                    for j in 0..fs {
                        gx[(u * d + i) * a + v * d + j] += g * f[i * fs + j];
                    }
                }
            }
        }
    }
    gx
}

/// Filter updates `-η Σ_{u,v} ∇Y[t][u][v] X[uδ+i][vδ+j]`.
pub fn grad_f_direct(gy: &[f64], x: &[f64], a: usize, n_f: usize, fs: usize, d: usize, eta: f64) -> Vec<Vec<f64>> {
    let out = (a - fs) / d + 1;
    (0..n_f)
        .map(|t| {
            let mut gf = vec![0.0; fs * fs];
            for u in 0..out {
                for v in 0..out {
                    let g = gy[(t * out + u) * out + v];
                    for i in 0..fs {
                        for j in 0..fs {
                            gf[i * fs + j] += g * x[(u * d + i) * a + v * d + j];
                        }
                    }
                }
            }
            gf.iter().map(|s| -eta * s).collect()
        })
        .collect()
}

/// `Y[i] = Σ_j Θ[j][i] X[j]` with `Θ` row-major `[l_x, l_y]`.
pub fn fc_direct(theta: &[f64], x: &[f64], l_y: usize) -> Vec<f64> {
    (0..l_y)
        .map(|i| x.iter().enumerate().map(|(j, xv)| theta[j * l_y + i] * xv).sum())
        .collect()
}

pub fn binom(n: u64, k: u64) -> BigInt {
    let mut r = BigInt::one();
    for i in 0..k {
        r = r * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    r
}

/// `1 - C(n-m, p) / C(n, p)`.
pub fn hypergeom_detect(n: u64, p: u64, m: u64) -> BigRational {
    let miss = if n - m < p { BigInt::from(0) } else { binom(n - m, p) };
    BigRational::one() - BigRational::new(miss, binom(n, p))
}

pub fn spec(input_side: usize, n_filters: usize, filter_side: usize, stride: usize, n_y: usize) -> ModelSpec {
    ModelSpec {
        input_side,
        n_filters,
        filter_side,
        stride,
        activation: Activation::Sigmoid,
        n_y,
        eta: 0.05,
    }
}

/// One signed model and record store, from which worker/monitor pairs are
/// spawned.
pub struct Fixture {
    pub keys: Keyring,
    pub package: Arc<SignedModel>,
    pub store: Arc<RecordStore>,
}

impl Fixture {
    pub fn new(spec: ModelSpec, n_r: usize, seed: u64) -> Self {
        let keys = Keyring::derived("fixture", [1]);
        let g = spec.geometry().unwrap();
        let file = RecordFile::synthetic(n_r, g.input_side * g.input_side, g.l_y, seed);
        let store = build_record_store(file.sign_all(keys.authority.as_ref()).unwrap(), keys.authority.as_ref()).unwrap();
        let package = SignedModel::sign(GlobalModel::init(spec, seed).unwrap(), keys.coordinator.as_ref()).unwrap();
        Fixture {
            keys,
            package: Arc::new(package),
            store: Arc::new(store),
        }
    }

    pub fn pair(&self, cheat: Option<CheatStrategy>, cfg: MonitorConfig, seed: u64) -> (Worker, Monitor) {
        let w = Worker::new(1, self.package.clone(), self.store.clone(), cheat, seed).unwrap();
        let m = Monitor::new(
            1,
            0,
            cfg,
            self.keys.monitor_keys(1).unwrap(),
            self.package.trusted_view(),
            self.store.monitor_view(),
            seed ^ 0x5eed,
        )
        .unwrap();
        (w, m)
    }
}
