use rand::Rng as _;

use super::{Algorithm, Result, StageConfig};
use crate::advantage::{Step, Trajectory};
use crate::envs::{env_reset, env_step, observe, terminal_outcome, EnvSpec, EnvState, Outcome, StepRecord};
use crate::rng::{self, tag, Rng};
use crate::tensor::{argmax, log_softmax, sample_categorical, MlpParams};

/// How actions are chosen during a rollout.
pub enum ActionMode<'a> {
    Sample(&'a mut Rng),
    Greedy,
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub trajectory: Trajectory,
    pub final_state: EnvState,
    pub outcome: Outcome,
    /// Sum of per-step rewards under the spec's reward mode.
    pub total_reward: f64,
}

/// Rolls out one episode from `init`, recording behavior log-probabilities.
pub fn run_episode(
    policy: &MlpParams,
    spec: &EnvSpec,
    init: EnvState,
    mut mode: ActionMode<'_>,
    group_id: u64,
) -> Result<Episode> {
    let mut state = init;
    let initial_obs = observe(spec, &state);
    let mut steps = Vec::with_capacity(spec.horizon.min(1024));
    let mut total_reward = 0.0;
    loop {
        let obs = observe(spec, &state);
        let logp = log_softmax(&policy.logits(&obs)?);
        let action = match &mut mode {
            ActionMode::Sample(r) => {
                let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
                sample_categorical(&probs, r)?
            }
            ActionMode::Greedy => argmax(&logp),
        };
        let t = env_step(spec, &state, action)?;
        total_reward += t.reward;
        steps.push(Step {
            obs,
            action,
            log_prob: logp[action],
            reward: t.reward,
        });
        state = t.next;
        if t.done {
            break;
        }
    }
    let outcome = terminal_outcome(spec, &state)?;
    Ok(Episode {
        trajectory: Trajectory {
            initial_obs,
            steps,
            outcome: outcome.reward,
            group_id,
        },
        final_state: state,
        outcome,
        total_reward,
    })
}

/// Greedy rollout that keeps every visited state, for trajectory dumps.
pub fn record_greedy_episode(policy: &MlpParams, spec: &EnvSpec, init: EnvState) -> Result<Vec<StepRecord>> {
    let mut state = init;
    let mut records = Vec::new();
    loop {
        let action = argmax(&policy.logits(&observe(spec, &state))?);
        let t = env_step(spec, &state, action)?;
        records.push(StepRecord {
            state: state.vars.clone(),
            action,
            reward: t.reward,
            done: t.done,
        });
        state = t.next;
        if t.done {
            return Ok(records);
        }
    }
}

/// Trajectories from one frozen behavior policy.
#[derive(Debug, Clone)]
pub struct RolloutBatch {
    pub trajectories: Vec<Trajectory>,
    pub total_rewards: Vec<f64>,
    /// Parameter generation of the behavior policy.
    pub policy_version: u64,
    /// Members per group; groups are stored contiguously.
    pub group_size: usize,
    /// Outcome of the greedy rollout from each trajectory's initial state (ReMax only).
    pub greedy_outcomes: Option<Vec<u8>>,
}

impl RolloutBatch {
    pub fn groups(&self) -> std::slice::ChunksExact<'_, Trajectory> {
        self.trajectories.chunks_exact(self.group_size)
    }

    pub fn success_rate(&self) -> f64 {
        if self.trajectories.is_empty() {
            return 0.0;
        }
        self.trajectories.iter().map(Trajectory::outcome_f64).sum::<f64>() / self.trajectories.len() as f64
    }

    pub fn total_steps(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }
}

/// Samples `batch_size` initial states and `group_size` trajectories from
/// each. Every trajectory draws from its own stream derived from one value
/// of `rng`, so the batch is independent of collection order.
pub fn collect_rollouts(policy: &MlpParams, spec: &EnvSpec, config: &StageConfig, rng: &mut Rng) -> Result<RolloutBatch> {
    let base: u64 = rng.random();
    let group_size = config.effective_group_size();
    let mut trajectories = Vec::with_capacity(config.trajectories_per_update());
    let mut total_rewards = Vec::with_capacity(config.trajectories_per_update());
    let mut greedy = (config.algorithm == Algorithm::Remax).then(Vec::new);
    for g in 0..config.batch_size as u64 {
        let init = env_reset(spec, &mut rng::stream(base, &[g]));
        let greedy_outcome = match greedy {
            Some(_) => Some(run_episode(policy, spec, init.clone(), ActionMode::Greedy, g)?.outcome.reward),
            None => None,
        };
        for j in 0..group_size as u64 {
            let mut r = rng::stream(base, &[g, j + 1]);
            let ep = run_episode(policy, spec, init.clone(), ActionMode::Sample(&mut r), g)?;
            trajectories.push(ep.trajectory);
            total_rewards.push(ep.total_reward);
            if let (Some(list), Some(o)) = (greedy.as_mut(), greedy_outcome) {
                list.push(o);
            }
        }
    }
    Ok(RolloutBatch {
        trajectories,
        total_rewards,
        policy_version: policy.generation(),
        group_size,
        greedy_outcomes: greedy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub success_rate: f64,
    pub successes: usize,
    pub episodes: usize,
    pub mean_length: f64,
}

/// Greedy evaluation on a fixed set of initial states derived from `seed`.
/// The same seed always evaluates the same states.
pub fn evaluate(policy: &MlpParams, spec: &EnvSpec, episodes: usize, seed: u64) -> Result<EvalReport> {
    let mut successes = 0;
    let mut steps = 0;
    for i in 0..episodes as u64 {
        let init = env_reset(spec, &mut rng::stream(seed, &[tag::EVAL, i]));
        let ep = run_episode(policy, spec, init, ActionMode::Greedy, i)?;
        successes += usize::from(ep.outcome.success);
        steps += ep.trajectory.len();
    }
    let n = episodes.max(1) as f64;
    Ok(EvalReport {
        success_rate: successes as f64 / n,
        successes,
        episodes,
        mean_length: steps as f64 / n,
    })
}

/// Expert demonstrations, one episode per fresh initial state.
pub fn collect_demos(expert: &MlpParams, spec: &EnvSpec, episodes: usize, greedy: bool, rng: &mut Rng) -> Result<Vec<Episode>> {
    let base: u64 = rng.random();
    (0..episodes as u64)
        .map(|i| {
            let init = env_reset(spec, &mut rng::stream(base, &[i]));
            if greedy {
                run_episode(expert, spec, init, ActionMode::Greedy, i)
            } else {
                let mut r = rng::stream(base, &[i, 1]);
                run_episode(expert, spec, init, ActionMode::Sample(&mut r), i)
            }
        })
        .collect()
}
