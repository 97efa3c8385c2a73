pub mod error;
pub mod game;
pub mod layout;
pub mod merkle;
pub mod model;
pub mod monitor;
pub mod nn;
pub mod par;
pub mod protocol;
pub mod records;
pub mod rng;
pub mod signing;
pub mod worker;
pub mod ledger;
pub mod coordinator;
pub mod session;
pub mod harness;

pub use error::{Error, Result};
