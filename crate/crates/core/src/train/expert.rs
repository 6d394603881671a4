use std::io::Write;

use rand::Rng as _;

use super::rollout::{collect_rollouts, evaluate};
use super::update::{critic_epochs, pg_samples, policy_epochs, CriticLoss};
use super::{layer_sizes, Policy, Result, Stage, StageConfig, TrainError};
use crate::advantage::{gae_from_values, step_values, AdvantageBatch, Estimator};
use crate::envs::{EnvSpec, RewardMode};
use crate::rng::Rng;
use crate::tensor::{AdamConfig, AdamState, Head, MlpParams};

/// Below this greedy sparse success rate the expert is rejected.
pub const MIN_EXPERT_SUCCESS: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertCurveRow {
    pub update: usize,
    pub episodes_seen: usize,
    pub mean_dense_return: f64,
    /// Greedy success under the sparse predicate; `None` on updates that
    /// skipped evaluation.
    pub eval_success_rate: Option<f64>,
    pub clip_fraction: f64,
    pub critic_loss: f64,
}

#[derive(Debug, Clone)]
pub struct ExpertReport {
    pub policy: Policy,
    pub critic: MlpParams,
    pub curve: Vec<ExpertCurveRow>,
    /// Greedy success of the returned policy.
    pub success_rate: f64,
    /// Update whose parameters were returned.
    pub selected_update: usize,
}

/// Running mean and variance of value targets. The expert critic predicts
/// standardized values so that dense returns of any scale train at the same
/// pace as the policy.
#[derive(Debug, Clone, Copy)]
struct TargetScale {
    count: f64,
    mean: f64,
    m2: f64,
}

impl TargetScale {
    fn new() -> Self {
        TargetScale {
            count: 0.0,
            mean: 0.0,
            m2: 0.0,
        }
    }

    fn update(&mut self, xs: impl Iterator<Item = f64>) {
        for x in xs {
            self.count += 1.0;
            let d = x - self.mean;
            self.mean += d / self.count;
            self.m2 += d * (x - self.mean);
        }
    }

    fn std(&self) -> f64 {
        if self.count < 2.0 {
            1.0
        } else {
            (self.m2 / (self.count - 1.0)).sqrt().max(1e-6)
        }
    }

    fn denormalize(&self, z: f64) -> f64 {
        self.mean + self.std() * z
    }

    fn normalize(&self, v: f64) -> f64 {
        (v - self.mean) / self.std()
    }
}

/// Step-level PPO with GAE on the dense shaping reward. The returned policy
/// is the best greedy evaluation seen (latest on ties), since PPO on shaped
/// rewards can regress late in training.
pub fn expert_synthesis(spec: &EnvSpec, config: &StageConfig, rng: &mut Rng) -> Result<ExpertReport> {
    if spec.reward_mode != RewardMode::Dense {
        return Err(TrainError::Config("expert synthesis needs the dense reward mode".into()));
    }
    spec.validate()?;
    config.validate()?;
    let mut policy = MlpParams::init(
        &layer_sizes(spec.obs_dim(), &config.hidden, spec.action_count()),
        Head::Softmax,
        rng,
    )?;
    let mut critic = MlpParams::init(&layer_sizes(spec.obs_dim(), &config.hidden, 1), Head::Linear, rng)?;
    let eval_seed: u64 = rng.random();
    let mut policy_opt = AdamState::new(&policy, AdamConfig::with_lr(config.policy_lr));
    let mut critic_opt = AdamState::new(&critic, AdamConfig::with_lr(config.critic_lr));
    let mut settings = config.clip_settings();
    settings.normalize_advantages = true;

    let initial = evaluate(&policy, spec, config.eval_episodes, eval_seed)?.success_rate;
    let mut curve = vec![ExpertCurveRow {
        update: 0,
        episodes_seen: 0,
        mean_dense_return: f64::NAN,
        eval_success_rate: Some(initial),
        clip_fraction: 0.0,
        critic_loss: f64::NAN,
    }];
    let mut best = (initial, 0, policy.clone());
    let mut scale = TargetScale::new();
    let mut episodes_seen = 0;
    for update in 1..=config.total_updates {
        let batch = collect_rollouts(&policy, spec, config, rng)?;
        episodes_seen += batch.trajectories.len();
        let mut advantages = Vec::with_capacity(batch.trajectories.len());
        let mut targets = Vec::with_capacity(batch.total_steps());
        for t in &batch.trajectories {
            let values: Vec<f64> = step_values(t, &critic)?.into_iter().map(|z| scale.denormalize(z)).collect();
            let adv = gae_from_values(&t.rewards(), &values, config.gamma, config.lambda);
            for ((s, a), v) in t.steps.iter().zip(&adv).zip(&values) {
                targets.push((s.obs.as_slice(), a + v));
            }
            advantages.push(adv);
        }
        scale.update(targets.iter().map(|t| t.1));
        for t in &mut targets {
            t.1 = scale.normalize(t.1);
        }
        let adv = AdvantageBatch {
            estimator: Estimator::Gae,
            values: advantages,
        };
        let (critic_loss, _) = critic_epochs(
            &mut critic,
            &mut critic_opt,
            &targets,
            CriticLoss::Mse,
            config.epochs,
            config.minibatches,
            config.max_grad_norm,
            rng,
        )?;
        let samples = pg_samples(&batch, &adv)?;
        let stats = policy_epochs(
            &mut policy,
            &mut policy_opt,
            &samples,
            &settings,
            config.epochs,
            config.minibatches,
            rng,
        )?;
        let eval = if update % config.eval_every == 0 || update == config.total_updates {
            let rate = evaluate(&policy, spec, config.eval_episodes, eval_seed)?.success_rate;
            if rate >= best.0 {
                best = (rate, update, policy.clone());
            }
            Some(rate)
        } else {
            None
        };
        let mean_return = batch.total_rewards.iter().sum::<f64>() / batch.total_rewards.len() as f64;
        log::debug!(
            "expert update {update}: dense return {mean_return:.3}, eval {eval:?}, clip {:.3}",
            stats.clip_fraction
        );
        curve.push(ExpertCurveRow {
            update,
            episodes_seen,
            mean_dense_return: mean_return,
            eval_success_rate: eval,
            clip_fraction: stats.clip_fraction,
            critic_loss,
        });
    }
    let (success_rate, selected_update, net) = best;
    if config.total_updates > 0 && success_rate < MIN_EXPERT_SUCCESS {
        return Err(TrainError::ExpertTooWeak {
            rate: success_rate,
            updates: config.total_updates,
        });
    }
    Ok(ExpertReport {
        policy: Policy {
            net,
            provenance: if config.total_updates == 0 { Stage::Init } else { Stage::Expert },
        },
        critic,
        curve,
        success_rate,
        selected_update,
    })
}

fn opt_field(v: Option<f64>) -> String {
    v.filter(|x| x.is_finite()).map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_expert_curve_csv<W: Write>(rows: &[ExpertCurveRow], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "update",
        "episodes_seen",
        "mean_dense_return",
        "eval_success_rate",
        "clip_fraction",
        "critic_loss",
    ])?;
    for r in rows {
        w.write_record([
            r.update.to_string(),
            r.episodes_seen.to_string(),
            opt_field(Some(r.mean_dense_return)),
            opt_field(r.eval_success_rate),
            r.clip_fraction.to_string(),
            opt_field(Some(r.critic_loss)),
        ])?;
    }
    w.flush()
}
