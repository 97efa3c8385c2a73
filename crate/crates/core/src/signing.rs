//! Pluggable signatures.
//!
//! The simulation's only scheme is an HMAC-SHA256 tag under a pre-shared key:
//! the authority that signs records, the coordinator that signs model
//! components and each monitor that endorses updates hold keys their
//! verifiers also hold. An asymmetric scheme can replace it behind [`Signer`].

use hmac::{Hmac, Mac};
use sha2::Sha256;

type HmacSha256 = Hmac<Sha256>;

pub trait Signer: Send + Sync {
    fn scheme(&self) -> &'static str;
    fn sign(&self, msg: &[u8]) -> Vec<u8>;
    fn verify(&self, msg: &[u8], sig: &[u8]) -> bool;
}

#[derive(Clone)]
pub struct MacSigner {
    key: Vec<u8>,
}

impl MacSigner {
    pub fn new(key: impl Into<Vec<u8>>) -> Self {
        MacSigner { key: key.into() }
    }

    /// Derives a key from a label and a seed, for simulated key setup.
    pub fn derived(label: &str, seed: u64) -> Self {
        let mut key = label.as_bytes().to_vec();
        key.extend_from_slice(&seed.to_le_bytes());
        MacSigner { key }
    }

    fn mac(&self) -> HmacSha256 {
        HmacSha256::new_from_slice(&self.key).expect("HMAC accepts any key length")
    }
}

impl std::fmt::Debug for MacSigner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("MacSigner(..)")
    }
}

impl Signer for MacSigner {
    fn scheme(&self) -> &'static str {
        "hmac-sha256"
    }

    fn sign(&self, msg: &[u8]) -> Vec<u8> {
        let mut m = self.mac();
        m.update(msg);
        m.finalize().into_bytes().to_vec()
    }

    fn verify(&self, msg: &[u8], sig: &[u8]) -> bool {
        let mut m = self.mac();
        m.update(msg);
        m.verify_slice(sig).is_ok()
    }
}
