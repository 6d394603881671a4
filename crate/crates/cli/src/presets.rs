//! Per-task settings for the control benchmark.
//!
//! Fine-tuning batch sizes (trajectories per update) and horizons follow the
//! published protocol: 64 for cartpole (H = 200), 8 for mountain car, 16 for
//! pendulum and the lander (H = 1000). Update budgets and the expert and
//! cloning settings are not published; the values below were calibrated on a
//! single CPU core so that each stage yields a usable policy:
//!
//! | preset             | expert updates | expert lr | demos | rl updates |
//! |--------------------|----------------|-----------|-------|------------|
//! | paper-cartpole     | 20             | 3e-4      | 32    | 20         |
//! | paper-mountain-car | 40             | 3e-4      | 4     | 60         |
//! | paper-pendulum     | 60             | 1e-3      | 32    | 30         |
//! | paper-lander       | 40             | 1e-3      | 16    | 30         |
//!
//! Mountain car clones only four demonstrations so that the initial policy
//! solves the task on some but not all sampled rollouts.

use sppo::envs::EnvId;
use sppo::train::{BcConfig, StageConfig};
use toml::{Table, Value};

use crate::config::{defaults_table, ConfigError, EnvConfig, Result};

pub const NAMES: [&str; 4] = ["paper-cartpole", "paper-mountain-car", "paper-pendulum", "paper-lander"];

struct Preset {
    env: EnvId,
    expert: StageConfig,
    sft: BcConfig,
    rl: StageConfig,
}

fn preset(name: &str) -> Option<Preset> {
    let expert = |updates, lr| StageConfig {
        total_updates: updates,
        policy_lr: lr,
        batch_size: 16,
        ..StageConfig::expert()
    };
    let rl = |batch, updates| StageConfig {
        batch_size: batch,
        total_updates: updates,
        clip_eps: 0.2,
        group_size: 8,
        ..StageConfig::default()
    };
    let sft = |demos| BcConfig {
        demos,
        ..BcConfig::default()
    };
    let p = match name {
        "paper-cartpole" => Preset {
            env: EnvId::PrecisionCartpole,
            expert: expert(20, 3e-4),
            sft: sft(32),
            rl: rl(64, 20),
        },
        "paper-mountain-car" => Preset {
            env: EnvId::MountainCar,
            expert: expert(40, 3e-4),
            sft: sft(4),
            rl: rl(8, 60),
        },
        "paper-pendulum" => Preset {
            env: EnvId::Pendulum,
            expert: expert(60, 1e-3),
            sft: sft(32),
            rl: rl(16, 30),
        },
        "paper-lander" => Preset {
            env: EnvId::LunarLanderLite,
            expert: expert(40, 1e-3),
            sft: sft(16),
            rl: rl(16, 30),
        },
        _ => return None,
    };
    Some(p)
}

fn section<T: serde::Serialize>(v: &T) -> Value {
    Value::Table(Table::try_from(v).expect("preset serializes"))
}

/// The preset as a base table, with `preset` itself recorded.
pub fn table(name: &str) -> Result<Table> {
    let p = preset(name).ok_or_else(|| ConfigError::UnknownPreset(name.to_string()))?;
    let mut t = defaults_table();
    t.insert("preset".into(), Value::String(name.into()));
    t.insert("env".into(), section(&EnvConfig::new(p.env)));
    t.insert("expert".into(), section(&p.expert));
    t.insert("sft".into(), section(&p.sft));
    t.insert("rl".into(), section(&p.rl));
    Ok(t)
}

/// Short directory-friendly task name for a preset, e.g. `mountain_car`.
pub fn env_name(name: &str) -> Result<&'static str> {
    preset(name)
        .map(|p| p.env.name())
        .ok_or_else(|| ConfigError::UnknownPreset(name.to_string()))
}
