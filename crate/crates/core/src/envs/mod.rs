//! Deterministic classic-control tasks with verifiable binary outcomes.
//!
//! Each task runs in one of two reward modes. `Dense` emits a shaped reward
//! every step and is used only to synthesize experts. `SparseOutcome` emits
//! zero on every step except the last, which carries the binary outcome.

mod cartpole;
mod lander;
mod mountain_car;
mod pendulum;

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Rng;

pub use pendulum::mechanical_energy as pendulum_energy;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("action {action} out of range for {env} ({count} actions)")]
    InvalidAction { env: EnvId, action: usize, count: usize },
    #[error("episode already finished at step {0}")]
    EpisodeFinished(usize),
    #[error("episode still running at step {0}")]
    EpisodeRunning(usize),
    #[error("dense shaping requested in sparse_outcome mode")]
    SparseMode,
    #[error("state has {actual} components, {env} expects {expected}")]
    BadState { env: EnvId, expected: usize, actual: usize },
    #[error("invalid environment spec: {0}")]
    InvalidSpec(String),
    #[error("trajectory dump failed: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, EnvError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvId {
    PrecisionCartpole,
    MountainCar,
    Pendulum,
    LunarLanderLite,
}

impl EnvId {
    pub const ALL: [EnvId; 4] = [
        EnvId::PrecisionCartpole,
        EnvId::MountainCar,
        EnvId::Pendulum,
        EnvId::LunarLanderLite,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EnvId::PrecisionCartpole => "precision_cartpole",
            EnvId::MountainCar => "mountain_car",
            EnvId::Pendulum => "pendulum",
            EnvId::LunarLanderLite => "lunar_lander_lite",
        }
    }

    pub fn default_horizon(self) -> usize {
        match self {
            EnvId::PrecisionCartpole => 200,
            _ => 1000,
        }
    }

    /// Primary success threshold: max |θ| in radians (cartpole), flag
    /// position (mountain car), min cos θ (pendulum), pad half-width (lander).
    pub fn default_success_threshold(self) -> f64 {
        match self {
            EnvId::PrecisionCartpole => 0.5_f64.to_radians(),
            EnvId::MountainCar => 0.45,
            EnvId::Pendulum => 0.8,
            EnvId::LunarLanderLite => 0.4,
        }
    }

    pub fn action_count(self) -> usize {
        match self {
            EnvId::PrecisionCartpole => 2,
            EnvId::MountainCar | EnvId::Pendulum => 3,
            EnvId::LunarLanderLite => 4,
        }
    }

    pub fn state_dim(self) -> usize {
        match self {
            EnvId::PrecisionCartpole => 4,
            EnvId::MountainCar | EnvId::Pendulum => 2,
            EnvId::LunarLanderLite => 8,
        }
    }

    pub fn obs_dim(self) -> usize {
        match self {
            EnvId::PrecisionCartpole => 4,
            EnvId::MountainCar => 2,
            EnvId::Pendulum => 3,
            EnvId::LunarLanderLite => 8,
        }
    }

    pub fn state_names(self) -> &'static [&'static str] {
        match self {
            EnvId::PrecisionCartpole => &["x", "x_dot", "theta", "theta_dot"],
            EnvId::MountainCar => &["x", "x_dot"],
            EnvId::Pendulum => &["theta", "theta_dot"],
            EnvId::LunarLanderLite => &["x", "y", "x_dot", "y_dot", "theta", "theta_dot", "left_contact", "right_contact"],
        }
    }
}

impl std::fmt::Display for EnvId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    Dense,
    SparseOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub id: EnvId,
    pub horizon: usize,
    pub reward_mode: RewardMode,
    pub success_threshold: f64,
}

impl EnvSpec {
    pub fn new(id: EnvId, reward_mode: RewardMode) -> Self {
        EnvSpec {
            id,
            horizon: id.default_horizon(),
            reward_mode,
            success_threshold: id.default_success_threshold(),
        }
    }

    pub fn with_mode(self, reward_mode: RewardMode) -> Self {
        EnvSpec { reward_mode, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(EnvError::InvalidSpec("horizon must be at least 1".into()));
        }
        if !self.success_threshold.is_finite() {
            return Err(EnvError::InvalidSpec("success_threshold must be finite".into()));
        }
        Ok(())
    }

    pub fn action_count(&self) -> usize {
        self.id.action_count()
    }

    pub fn obs_dim(&self) -> usize {
        self.id.obs_dim()
    }
}

/// Why an episode stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Running,
    /// Step budget exhausted.
    Horizon,
    /// Early termination that can never count as success.
    Failed,
    /// Mountain car reached the flag.
    GoalReached,
    /// Lander came to rest on the ground.
    Rested,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub vars: Vec<f64>,
    pub step_index: usize,
    pub status: Status,
}

impl EnvState {
    pub fn new(vars: Vec<f64>) -> Self {
        EnvState {
            vars,
            step_index: 0,
            status: Status::Running,
        }
    }

    pub fn is_done(&self) -> bool {
        self.status != Status::Running
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Outcome {
    pub success: bool,
    pub reward: u8,
    pub terminal_step: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub next: EnvState,
    /// Shaped reward in dense mode; in sparse mode 0 until the final step,
    /// which carries the binary outcome.
    pub reward: f64,
    pub done: bool,
}

fn check_state(spec: &EnvSpec, state: &EnvState) -> Result<()> {
    let expected = spec.id.state_dim();
    if state.vars.len() != expected {
        return Err(EnvError::BadState {
            env: spec.id,
            expected,
            actual: state.vars.len(),
        });
    }
    Ok(())
}

pub fn env_reset(spec: &EnvSpec, rng: &mut Rng) -> EnvState {
    let vars = match spec.id {
        EnvId::PrecisionCartpole => cartpole::reset(rng),
        EnvId::MountainCar => mountain_car::reset(rng),
        EnvId::Pendulum => pendulum::reset(rng),
        EnvId::LunarLanderLite => lander::reset(rng),
    };
    EnvState::new(vars)
}

/// Advances one step. The episode ends on a task-specific terminal event or
/// when `step_index` reaches the horizon.
pub fn env_step(spec: &EnvSpec, state: &EnvState, action: usize) -> Result<Transition> {
    check_state(spec, state)?;
    if state.is_done() || state.step_index >= spec.horizon {
        return Err(EnvError::EpisodeFinished(state.step_index));
    }
    let count = spec.action_count();
    if action >= count {
        return Err(EnvError::InvalidAction {
            env: spec.id,
            action,
            count,
        });
    }
    let (vars, event) = match spec.id {
        EnvId::PrecisionCartpole => cartpole::step(&state.vars, action),
        EnvId::MountainCar => mountain_car::step(&state.vars, action, spec.success_threshold),
        EnvId::Pendulum => pendulum::step(&state.vars, action),
        EnvId::LunarLanderLite => lander::step(&state.vars, action),
    };
    let step_index = state.step_index + 1;
    let status = match event {
        Status::Running if step_index >= spec.horizon => Status::Horizon,
        s => s,
    };
    let next = EnvState { vars, step_index, status };
    let done = next.is_done();
    let reward = match spec.reward_mode {
        RewardMode::Dense => dense_shaping_reward(spec, state, action, &next)?,
        RewardMode::SparseOutcome if done => f64::from(terminal_outcome(spec, &next)?.reward),
        RewardMode::SparseOutcome => 0.0,
    };
    Ok(Transition { next, reward, done })
}

/// Binary verdict on a finished episode, computed from the final state and
/// the way the episode ended.
pub fn terminal_outcome(spec: &EnvSpec, final_state: &EnvState) -> Result<Outcome> {
    check_state(spec, final_state)?;
    if !final_state.is_done() {
        return Err(EnvError::EpisodeRunning(final_state.step_index));
    }
    let v = &final_state.vars;
    let thr = spec.success_threshold;
    let success = match (spec.id, final_state.status) {
        (_, Status::Failed) => false,
        (EnvId::PrecisionCartpole, Status::Horizon) => {
            final_state.step_index == spec.horizon && cartpole::precise(v, thr)
        }
        (EnvId::MountainCar, _) => v[0] >= thr,
        (EnvId::Pendulum, Status::Horizon) => v[0].cos() > thr,
        (EnvId::LunarLanderLite, Status::Rested | Status::Horizon) => lander::landed_on_pad(v, thr),
        _ => false,
    };
    Ok(Outcome {
        success,
        reward: u8::from(success),
        terminal_step: final_state.step_index,
    })
}

/// Per-step shaping used for expert synthesis.
pub fn dense_shaping_reward(spec: &EnvSpec, state: &EnvState, action: usize, next: &EnvState) -> Result<f64> {
    if spec.reward_mode != RewardMode::Dense {
        return Err(EnvError::SparseMode);
    }
    check_state(spec, state)?;
    check_state(spec, next)?;
    Ok(match spec.id {
        EnvId::PrecisionCartpole => cartpole::shaping(next),
        EnvId::MountainCar => mountain_car::shaping(next),
        EnvId::Pendulum => pendulum::shaping(&state.vars, action),
        EnvId::LunarLanderLite => lander::shaping(state, next, spec.success_threshold),
    })
}

/// Network input for a state: task variables rescaled to roughly unit range.
pub fn observe(spec: &EnvSpec, state: &EnvState) -> Vec<f64> {
    match spec.id {
        EnvId::PrecisionCartpole => cartpole::observe(&state.vars),
        EnvId::MountainCar => mountain_car::observe(&state.vars),
        EnvId::Pendulum => pendulum::observe(&state.vars),
        EnvId::LunarLanderLite => lander::observe(&state.vars),
    }
}

/// One row of a per-episode trajectory dump.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub done: bool,
}

/// Writes one episode as CSV: `step, <state components>, action, dense_reward, done`.
pub fn write_episode_csv<W: Write>(spec: &EnvSpec, records: &[StepRecord], out: W) -> Result<()> {
    let io = |e: csv::Error| EnvError::Io(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["step".to_string()];
    header.extend(spec.id.state_names().iter().map(|s| s.to_string()));
    header.extend(["action", "dense_reward", "done"].map(String::from));
    w.write_record(&header).map_err(io)?;
    for (i, r) in records.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(r.state.iter().map(|v| v.to_string()));
        row.push(r.action.to_string());
        row.push(r.reward.to_string());
        row.push(u8::from(r.done).to_string());
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| EnvError::Io(e.to_string()))
}
