//! Policy-cover learning for observable tabular POMDPs.
//!
//! The crate has three layers:
//!
//! * the model layer ([`model`], [`belief`], [`margin`]) describing a
//!   finite-horizon POMDP with sink extension;
//! * the learner ([`zmdp`], [`estimator`], [`spanner`], [`basecamp`]),
//!   which only touches the environment through [`simulator::Environment`];
//! * exact analysis oracles in [`diagnostics`], used by tests and reports.
//!
//! Steps are 1-based throughout: actions `a_1..a_{H-1}`, observations
//! `o_2..o_H`.

pub mod basecamp;
pub mod belief;
pub mod diagnostics;
pub mod error;
pub mod estimator;
pub mod fixtures;
pub mod history;
pub mod margin;
pub mod model;
pub mod policy;
pub mod sampling;
pub mod seed;
pub mod simulator;
pub mod spanner;
pub mod zmdp;
pub mod zstate;

pub use error::{Error, Result};
pub use history::History;
pub use model::PomdpModel;
pub use policy::{GeneralPolicy, ZPolicy};
pub use seed::SeedSpec;
pub use zstate::{ZSpace, ZState};
