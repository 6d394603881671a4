//! Sequence-level PPO and outcome-reward baselines on deterministic
//! classic-control tasks with binary terminal rewards.
//!
//! Modules, bottom up:
//!
//! - [`tensor`]: small MLPs with manual backprop, Adam, sampling, checkpoints
//! - [`envs`]: cartpole, mountain car, pendulum and a point-mass lander
//! - [`advantage`]: SPPO, GAE, GRPO, RLOO and ReMax estimators plus the BCE critic loss
//! - [`train`]: expert synthesis, behavior cloning and sparse-reward fine-tuning
//! - [`diagnostics`]: value traces, critic calibration and efficiency curves

pub mod advantage;
pub mod diagnostics;
pub mod envs;
pub mod rng;
pub mod tensor;
pub mod train;
