//! Three-stage training: dense-reward expert, behavior cloning on filtered
//! expert successes, then sparse-outcome RL fine-tuning.

mod bc;
mod expert;
mod finetune;
mod rollout;
mod update;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::advantage::AdvantageError;
use crate::envs::EnvError;
use crate::tensor::{MlpParams, TensorError};

pub use bc::{behavior_cloning, BcConfig, BcReport, DemoFilter, DemoSampling};
pub use expert::{expert_synthesis, write_expert_curve_csv, ExpertCurveRow, ExpertReport, MIN_EXPERT_SUCCESS};
pub use finetune::{
    compute_advantages, read_curve_csv, rl_finetune, write_curve_csv, write_timing_csv, CurveRow, FinetuneReport,
    CURVE_HEADER, TIMING_HEADER,
};
pub use rollout::{
    collect_demos, collect_rollouts, evaluate, record_greedy_episode, run_episode, ActionMode, EvalReport, Episode,
    RolloutBatch,
};
pub use update::{
    bce_critic_step, clipped_policy_update, clipped_step, mse_critic_step, sppo_critic_targets, ClipSettings,
    PgSample, UpdateStats,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Advantage(#[from] AdvantageError),
    #[error("invalid stage config: {0}")]
    Config(String),
    #[error("non-finite importance ratio at step {step} of trajectory {trajectory}")]
    NonFiniteRatio { trajectory: usize, step: usize },
    #[error("advantages do not line up with the rollout batch")]
    MisalignedAdvantages,
    #[error("expert reached only {rate:.3} sparse success after {updates} updates; enlarge the expert update budget")]
    ExpertTooWeak { rate: f64, updates: usize },
    #[error("demo filter kept no trajectories out of {0}")]
    NoDemos(usize),
    #[error("policy provenance is {found:?}, expected {expected:?}")]
    Provenance { expected: Stage, found: Stage },
    #[error("training diverged at update {update}: {reason}")]
    Diverged {
        update: usize,
        reason: String,
        /// Last policy whose update completed with finite values.
        last_good: Box<Policy>,
    },
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Init,
    Expert,
    Sft,
    Rl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Sppo,
    PpoGae,
    PpoBce,
    Grpo,
    Rloo,
    Remax,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Sppo,
        Algorithm::PpoGae,
        Algorithm::PpoBce,
        Algorithm::Grpo,
        Algorithm::Rloo,
        Algorithm::Remax,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Sppo => "sppo",
            Algorithm::PpoGae => "ppo_gae",
            Algorithm::PpoBce => "ppo_bce",
            Algorithm::Grpo => "grpo",
            Algorithm::Rloo => "rloo",
            Algorithm::Remax => "remax",
        }
    }

    /// Whether the estimator compares several samples from one initial state.
    pub fn is_grouped(self) -> bool {
        matches!(self, Algorithm::Grpo | Algorithm::Rloo)
    }

    pub fn has_critic(self) -> bool {
        matches!(self, Algorithm::Sppo | Algorithm::PpoGae | Algorithm::PpoBce)
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A policy network tagged with the stage that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub net: MlpParams,
    pub provenance: Stage,
}

/// Hyperparameters for a PPO-style stage (expert synthesis or RL fine-tuning).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    pub algorithm: Algorithm,
    /// Samples per initial state; forced to 1 for non-grouped algorithms.
    pub group_size: usize,
    /// Initial states per update. Grouped algorithms roll out
    /// `batch_size * group_size` trajectories.
    pub batch_size: usize,
    pub clip_eps: f64,
    pub total_updates: usize,
    pub epochs: usize,
    pub minibatches: usize,
    pub policy_lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub hidden: Vec<usize>,
    pub eval_episodes: usize,
    pub eval_every: usize,
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig {
            algorithm: Algorithm::Sppo,
            group_size: 1,
            batch_size: 16,
            clip_eps: 0.2,
            total_updates: 100,
            epochs: 4,
            minibatches: 4,
            policy_lr: 3e-4,
            critic_lr: 1e-3,
            gamma: 1.0,
            lambda: 1.0,
            entropy_coef: 0.0,
            max_grad_norm: 0.5,
            hidden: vec![64, 64],
            eval_episodes: 32,
            eval_every: 1,
        }
    }
}

impl StageConfig {
    /// Defaults for dense-reward expert synthesis: PPO with GAE(0.99, 0.95).
    pub fn expert() -> Self {
        StageConfig {
            algorithm: Algorithm::PpoGae,
            gamma: 0.99,
            lambda: 0.95,
            entropy_coef: 0.01,
            total_updates: 100,
            ..Default::default()
        }
    }

    /// Trajectories per update after group expansion.
    pub fn trajectories_per_update(&self) -> usize {
        self.batch_size * self.effective_group_size()
    }

    pub fn effective_group_size(&self) -> usize {
        if self.algorithm.is_grouped() {
            self.group_size
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if self.algorithm.is_grouped() && self.group_size < 2 {
            return fail("grouped algorithms need group_size >= 2");
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return fail("clip_eps must lie in (0, 1)");
        }
        if self.epochs == 0 || self.minibatches == 0 {
            return fail("epochs and minibatches must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(0.0..=1.0).contains(&self.lambda) {
            return fail("gamma must lie in (0, 1] and lambda in [0, 1]");
        }
        if self.policy_lr <= 0.0 || self.critic_lr <= 0.0 {
            return fail("learning rates must be positive");
        }
        if self.hidden.contains(&0) {
            return fail("hidden widths must be positive");
        }
        if self.eval_every == 0 {
            return fail("eval_every must be positive");
        }
        Ok(())
    }

    pub(crate) fn clip_settings(&self) -> ClipSettings {
        ClipSettings {
            clip_eps: self.clip_eps,
            entropy_coef: self.entropy_coef,
            max_grad_norm: self.max_grad_norm,
            normalize_advantages: false,
        }
    }
}

pub(crate) fn layer_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut sizes = Vec::with_capacity(hidden.len() + 2);
    sizes.push(input);
    sizes.extend_from_slice(hidden);
    sizes.push(output);
    sizes
}
