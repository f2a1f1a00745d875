//! Experiment workbench for optimistic least-squares value iteration on
//! finite linear MDPs.
//!
//! The crate is organised bottom-up:
//!
//! - [`linalg`]: rank-one precision updates with a maintained inverse and
//!   log-determinant.
//! - [`env`]: finite linear MDPs, trajectory sampling and instance generators.
//! - [`oracle`]: exact backward induction (optimal values, gaps, policy values).
//! - [`agent`]: LSVI-UCB++ with variance-weighted regression and the
//!   determinant-doubling switch rule.
//! - [`baseline`]: plain LSVI-UCB used as a comparison fixture.
//! - [`concurrent`]: the M-agent round protocol built on the shared learner.
//! - [`harness`]: experiment runs, metrics, audits and persistence.
//!
//! Steps are indexed from `0` to `H - 1` throughout the API; step `h` here is
//! step `h + 1` in the usual one-based episode notation.

pub mod agent;
pub mod baseline;
pub mod concurrent;
pub mod env;
pub mod error;
pub mod harness;
pub mod learner;
pub mod linalg;
pub mod oracle;
pub mod rng;

pub use agent::{AgentConfig, BarSigmaFloor, LsviUcbPlusPlus, Radii};
pub use baseline::{BaselineConfig, LsviUcb};
pub use concurrent::{ConcurrentConfig, ConcurrentRunner, RoundLog};
pub use env::{FeatureMap, LinearMdp, Transition};
pub use error::{Error, Result};
pub use learner::{Learner, StepRecord};
pub use linalg::SpdState;
pub use oracle::{DeterministicPolicy, OracleTables, PolicyValues};
