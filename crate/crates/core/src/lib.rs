//! Simulation laboratory for verifier-guided autocurricula.
//!
//! A synthetic world of finite autoregressive policies, a teacher that
//! supplies chain-of-thought traces, and an outcome verifier. On top of it
//! sit the boosting-by-filtering curriculum drivers (supervised, stochastic
//! and reinforcement-learning variants), the baselines they are compared
//! against, and a cost ledger that meters every expensive call.

pub mod curriculum;
pub mod error;
pub mod harness;
pub mod learners;
pub mod metering;
pub mod rng;
pub mod schedule;
pub mod world;

pub use error::{Error, Result};
