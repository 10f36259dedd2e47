//! Prompt-only replay for group-relative policy optimization.
//!
//! The crate provides:
//!
//! * [`replay_buffer`]: a buffer of medium-difficulty prompts with cooldown,
//!   bounded reuse and priority by distance of the pass rate from 0.5;
//! * [`scheduler`]: per-step batch construction mixing buffer draws with
//!   fresh uniform samples;
//! * [`grpo`]: advantages, the clipped/truncated objective, learnability and
//!   greedy versus exhaustive subset selection;
//! * [`toy_policy`]: a small differentiable categorical policy used to check
//!   the objective's analytic gradient and the learnability law;
//! * [`sim`]: a synthetic training world with latent prompt difficulties;
//! * [`runner`]: the full training loop, A/B comparison, sweeps, metrics
//!   files and snapshots.

use serde::{Deserialize, Serialize};

pub mod error;
pub mod grpo;
pub mod replay_buffer;
pub mod runner;
pub mod scheduler;
pub mod seed;
pub mod sim;
pub mod stats;
pub mod toy_policy;

pub use error::{Error, Result};

/// Dataset index of a prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PromptId(pub u32);

impl std::fmt::Display for PromptId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}
