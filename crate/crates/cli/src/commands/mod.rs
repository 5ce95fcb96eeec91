pub mod eval;
pub mod flops;
pub mod gradcheck;
pub mod predict;
pub mod smote;
pub mod synth;
pub mod train;

use crate::config::{env_seed, SEED_ENV};
use crate::failure::Outcome;

/// Seed from the flag, else the environment, else zero.
pub fn seed_or_env(flag: Option<u64>) -> Outcome<u64> {
    match flag {
        Some(s) => Ok(s),
        None => Ok(env_seed(std::env::var(SEED_ENV).ok().as_deref())?.unwrap_or(0)),
    }
}
