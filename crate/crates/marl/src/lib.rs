//! Multi-agent PPO for the community market.
//!
//! Every microgrid owns a recurrent Gaussian policy that sees only its local
//! observation. During training a critic estimates values; the four
//! supported variants differ only in what that critic sees and how large it
//! is:
//!
//! | variant   | critic input                     | hidden | heads |
//! |-----------|----------------------------------|--------|-------|
//! | MMAPPO    | global state                     | 128    | N     |
//! | MAPPO-one | global state + agent one-hot     | 64     | 1     |
//! | MAPPO-s   | global state + agent one-hot     | 16     | 1     |
//! | MIPPO     | local observation, one per agent | 64     | 1     |

mod buffer;
mod critic;
mod eval;
mod gae;
mod policy;
mod ppo;
mod scaling;
mod trainer;

pub use buffer::{collect_rollout, EnvEpisode, RolloutSeeds, StepRecord};
pub use critic::{Critic, CriticInput, Mlp};
pub use eval::{eval_seeds, evaluate, DayResult, EvalPolicy};
pub use gae::{compute_gae, normalize};
pub use policy::{sample_action, PolicyCache, PolicyNet, ACTION_DIM};
pub use ppo::{
    accumulate_policy_gradient, critic_update, ppo_update, surrogate_coefficient, surrogate_loss, vanilla_coefficient,
    AgentBatch, AgentLearner, ChunkRef, Losses, MinibatchPlan, MinibatchStats, Objective,
};
pub use scaling::FeatureScaler;
pub use trainer::{derive_seed, policies_from_checkpoint, EpisodeSummary, IterationReport, Trainer};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MarlError {
    #[error("unknown variant `{0}` (expected MMAPPO, MIPPO, MAPPO-one or MAPPO-s)")]
    UnknownVariant(String),
    #[error("invalid training setting {field}: {reason}")]
    Config { field: &'static str, reason: String },
    #[error(transparent)]
    Env(#[from] gridmarket_core::env::EnvError),
    #[error(transparent)]
    Nn(#[from] gridmarket_nn::NnError),
    #[error("non-finite values in {0} after an update")]
    NonFinite(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Variant {
    #[default]
    #[serde(rename = "MMAPPO")]
    Mmappo,
    #[serde(rename = "MIPPO")]
    Mippo,
    #[serde(rename = "MAPPO-one")]
    MappoOne,
    #[serde(rename = "MAPPO-s")]
    MappoS,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Mmappo, Variant::Mippo, Variant::MappoOne, Variant::MappoS];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Mmappo => "MMAPPO",
            Variant::Mippo => "MIPPO",
            Variant::MappoOne => "MAPPO-one",
            Variant::MappoS => "MAPPO-s",
        }
    }

    pub fn spec(&self) -> VariantSpec {
        let (input, hidden, per_agent_heads) = match self {
            Variant::Mmappo => (CriticInput::Global, 128, true),
            Variant::MappoOne => (CriticInput::GlobalWithAgent, 64, false),
            Variant::MappoS => (CriticInput::GlobalWithAgent, 16, false),
            Variant::Mippo => (CriticInput::Local, 64, false),
        };
        VariantSpec {
            variant: *self,
            input,
            hidden,
            per_agent_heads,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = MarlError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "mmappo" => Ok(Variant::Mmappo),
            "mippo" => Ok(Variant::Mippo),
            "mappo-one" => Ok(Variant::MappoOne),
            "mappo-s" => Ok(Variant::MappoS),
            _ => Err(MarlError::UnknownVariant(s.to_string())),
        }
    }
}

/// Critic layout for a variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VariantSpec {
    pub variant: Variant,
    pub input: CriticInput,
    pub hidden: usize,
    /// One value output per agent from a single network.
    pub per_agent_heads: bool,
}

/// Looks a variant up by name.
pub fn make_variant(name: &str) -> Result<VariantSpec, MarlError> {
    Ok(name.parse::<Variant>()?.spec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub epochs: usize,
    /// Steps per minibatch.
    pub minibatch: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Environment episodes to train for.
    pub episodes: usize,
    /// Policy learning rate.
    pub lr: f64,
    pub critic_lr: f64,
    /// Parallel environments per update.
    pub n_envs: usize,
    /// Truncated-BPTT chunk length.
    pub bptt_chunk: usize,
    pub max_grad_norm: f64,
    /// Multiplier applied to rewards before learning.
    pub reward_scale: f64,
    pub policy_hidden: usize,
    pub init_log_std: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            epochs: 4,
            minibatch: 256,
            entropy_coef: 0.01,
            value_coef: 0.5,
            episodes: 5000,
            lr: 1e-3,
            critic_lr: 1e-3,
            n_envs: 4,
            bptt_chunk: 8,
            max_grad_norm: 0.5,
            reward_scale: 0.01,
            policy_hidden: 64,
            init_log_std: -1.5,
        }
    }
}

impl TrainConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), MarlError> {
        let bad = |field, reason: &str| {
            Err(MarlError::Config {
                field,
                reason: reason.to_string(),
            })
        };
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma", "must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda", "must lie in [0, 1]");
        }
        if !(self.clip_eps > 0.0) {
            return bad("clip_eps", "must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1");
        }
        if self.minibatch == 0 {
            return bad("minibatch", "must be at least 1");
        }
        if self.n_envs == 0 {
            return bad("n_envs", "must be at least 1");
        }
        if self.bptt_chunk == 0 {
            return bad("bptt_chunk", "must be at least 1");
        }
        if self.policy_hidden == 0 {
            return bad("policy_hidden", "must be at least 1");
        }
        for (field, v) in [
            ("lr", self.lr),
            ("critic_lr", self.critic_lr),
            ("max_grad_norm", self.max_grad_norm),
            ("reward_scale", self.reward_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(field, "must be positive and finite");
            }
        }
        for (field, v) in [("entropy_coef", self.entropy_coef), ("value_coef", self.value_coef)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(field, "must be non-negative and finite");
            }
        }
        if !(gridmarket_nn::LOG_STD_MIN..=gridmarket_nn::LOG_STD_MAX).contains(&self.init_log_std) {
            return bad("init_log_std", "must lie in [-5, 1]");
        }
        Ok(())
    }
}
