//! Reward adaptation on tabular MDPs: bounding a target task's Q-function from
//! source behaviors (Q-M and M-Q-M), pruning actions with those bounds, and
//! learning the target with pruned Q-learning.

pub mod baselines;
pub mod bounds;
pub mod domains;
pub mod error;
pub mod harness;
pub mod learn;
pub mod mdp;
pub mod solve;

pub use error::{Error, Result};
