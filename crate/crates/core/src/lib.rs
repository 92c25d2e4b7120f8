//! LoBiSaRL: safe reinforcement learning from binary safety feedback.
//!
//! Safety is modeled by a logistic GLM over known features. Long-term safety
//! over an episode follows from a pessimistic GLM bound combined with a
//! Lipschitz bound on how far the predictor can drift when the policy
//! deviates from a known conservative policy.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod bounds;
pub mod env;
pub mod error;
pub mod glm;
pub mod harness;

pub use error::{Error, Result};
