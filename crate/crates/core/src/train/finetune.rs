use std::io::{Read, Write};
use std::time::Instant;

use rand::Rng as _;

use super::rollout::{collect_rollouts, evaluate, RolloutBatch};
use super::update::{critic_epochs, pg_samples, policy_epochs, sppo_critic_targets, CriticLoss};
use super::{layer_sizes, Algorithm, Policy, Result, Stage, StageConfig, TrainError};
use crate::advantage::{
    gae_from_values, grpo_advantage_empirical, remax_advantage, returns_to_go, rloo_advantage, sppo_advantage,
    step_values, AdvantageBatch, AdvantageError, Estimator,
};
use crate::envs::{EnvSpec, RewardMode};
use crate::rng::Rng;
use crate::tensor::{AdamConfig, AdamState, Head, MlpParams};

/// Deterministic learning-curve columns. Wall-clock time lives in a separate
/// timing file so that repeated runs produce byte-identical curves.
pub const CURVE_HEADER: [&str; 6] = [
    "update",
    "episodes_seen",
    "eval_success_rate",
    "mean_advantage",
    "clip_fraction",
    "critic_loss",
];

pub const TIMING_HEADER: [&str; 2] = ["update", "wall_clock_s"];

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub update: usize,
    pub episodes_seen: usize,
    /// `None` on updates that skipped evaluation.
    pub eval_success_rate: Option<f64>,
    pub mean_advantage: f64,
    pub clip_fraction: f64,
    /// `None` for critic-free algorithms and for the pre-training row.
    pub critic_loss: Option<f64>,
    /// Seconds since fine-tuning started, measured after this row's update.
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone)]
pub struct FinetuneReport {
    pub policy: Policy,
    pub critic: Option<MlpParams>,
    pub curve: Vec<CurveRow>,
    /// Groups whose outcomes were all equal (zero GRPO advantage).
    pub degenerate_groups: usize,
    /// Critic predictions clamped inside the BCE loss.
    pub clamped_predictions: usize,
}

fn critic_for(algorithm: Algorithm, spec: &EnvSpec, hidden: &[usize], rng: &mut Rng) -> Result<Option<MlpParams>> {
    let head = match algorithm {
        Algorithm::Sppo | Algorithm::PpoBce => Head::Sigmoid,
        Algorithm::PpoGae => Head::Linear,
        _ => return Ok(None),
    };
    Ok(Some(MlpParams::init(&layer_sizes(spec.obs_dim(), hidden, 1), head, rng)?))
}

/// Advantages for `batch` under `algorithm`. Returns the batch and the
/// number of degenerate groups.
pub fn compute_advantages(
    algorithm: Algorithm,
    batch: &RolloutBatch,
    critic: Option<&MlpParams>,
    gamma: f64,
    lambda: f64,
) -> Result<(AdvantageBatch, usize)> {
    let trajs = &batch.trajectories;
    let need_critic = || critic.ok_or(TrainError::Config(format!("{algorithm} needs a critic")));
    let mut degenerate = 0;
    let out = match algorithm {
        Algorithm::Sppo => {
            let c = need_critic()?;
            let per: Vec<f64> = trajs.iter().map(|t| sppo_advantage(t, c)).collect::<std::result::Result<_, _>>()?;
            AdvantageBatch::from_sequence(Estimator::Sppo, trajs, &per)
        }
        Algorithm::PpoGae | Algorithm::PpoBce => {
            let c = need_critic()?;
            let values = trajs
                .iter()
                .map(|t| Ok(gae_from_values(&t.rewards(), &step_values(t, c)?, gamma, lambda)))
                .collect::<std::result::Result<Vec<_>, AdvantageError>>()?;
            AdvantageBatch {
                estimator: Estimator::Gae,
                values,
            }
        }
        Algorithm::Grpo => {
            let mut per = Vec::with_capacity(trajs.len());
            for g in batch.groups() {
                let a = grpo_advantage_empirical(g)?;
                degenerate += usize::from(a.degenerate);
                per.extend(a.values);
            }
            AdvantageBatch::from_sequence(Estimator::Grpo, trajs, &per)
        }
        Algorithm::Rloo => {
            let mut per = Vec::with_capacity(trajs.len());
            for g in batch.groups() {
                per.extend(rloo_advantage(g)?);
            }
            AdvantageBatch::from_sequence(Estimator::Rloo, trajs, &per)
        }
        Algorithm::Remax => {
            let greedy = batch
                .greedy_outcomes
                .as_ref()
                .ok_or_else(|| TrainError::Config("remax batch lacks greedy outcomes".into()))?;
            let per: Vec<f64> = trajs.iter().zip(greedy).map(|(t, &g)| remax_advantage(t, g)).collect();
            AdvantageBatch::from_sequence(Estimator::Remax, trajs, &per)
        }
    };
    Ok((out, degenerate))
}

fn critic_data(algorithm: Algorithm, batch: &RolloutBatch, gamma: f64) -> Vec<(&[f64], f64)> {
    match algorithm {
        Algorithm::Sppo => sppo_critic_targets(batch),
        Algorithm::PpoGae => batch
            .trajectories
            .iter()
            .flat_map(|t| {
                let g = returns_to_go(&t.rewards(), gamma);
                t.steps.iter().zip(g).map(|(s, g)| (s.obs.as_slice(), g))
            })
            .collect(),
        Algorithm::PpoBce => batch
            .trajectories
            .iter()
            .flat_map(|t| t.steps.iter().map(move |s| (s.obs.as_slice(), t.outcome_f64())))
            .collect(),
        _ => Vec::new(),
    }
}

fn finite(net: &MlpParams) -> bool {
    net.to_flat().iter().all(|x| x.is_finite())
}

/// Sparse-outcome RL fine-tuning from a behavior-cloned policy. Row 0 of
/// the curve evaluates the initial policy.
pub fn rl_finetune(init: &Policy, spec: &EnvSpec, config: &StageConfig, rng: &mut Rng) -> Result<FinetuneReport> {
    if init.provenance != Stage::Sft {
        return Err(TrainError::Provenance {
            expected: Stage::Sft,
            found: init.provenance,
        });
    }
    if spec.reward_mode != RewardMode::SparseOutcome {
        return Err(TrainError::Config("RL fine-tuning needs the sparse outcome reward mode".into()));
    }
    if config.gamma != 1.0 {
        return Err(TrainError::Config("RL fine-tuning pins gamma to 1".into()));
    }
    spec.validate()?;
    config.validate()?;
    let start = Instant::now();
    let mut policy = init.net.clone();
    // drawn first so every algorithm evaluates on the same initial states
    let eval_seed: u64 = rng.random();
    let mut critic = critic_for(config.algorithm, spec, &config.hidden, rng)?;
    let mut policy_opt = AdamState::new(&policy, AdamConfig::with_lr(config.policy_lr));
    let mut critic_opt = critic
        .as_ref()
        .map(|c| AdamState::new(c, AdamConfig::with_lr(config.critic_lr)));
    let settings = config.clip_settings();
    let critic_loss_kind = match config.algorithm {
        Algorithm::PpoGae => CriticLoss::Mse,
        _ => CriticLoss::Bce,
    };

    let mut curve = vec![CurveRow {
        update: 0,
        episodes_seen: 0,
        eval_success_rate: Some(evaluate(&policy, spec, config.eval_episodes, eval_seed)?.success_rate),
        mean_advantage: 0.0,
        clip_fraction: 0.0,
        critic_loss: None,
        wall_clock_s: start.elapsed().as_secs_f64(),
    }];
    let mut degenerate_groups = 0;
    let mut clamped_predictions = 0;
    let mut episodes_seen = 0;
    for update in 1..=config.total_updates {
        let last_good = policy.clone();
        let diverged = |reason: String| TrainError::Diverged {
            update,
            reason,
            last_good: Box::new(Policy {
                net: last_good.clone(),
                provenance: Stage::Rl,
            }),
        };
        let batch = collect_rollouts(&policy, spec, config, rng)?;
        episodes_seen += batch.trajectories.len();
        let (adv, degenerate) = compute_advantages(config.algorithm, &batch, critic.as_ref(), config.gamma, config.lambda)?;
        degenerate_groups += degenerate;

        let critic_loss = match (critic.as_mut(), critic_opt.as_mut()) {
            (Some(c), Some(opt)) => {
                let data = critic_data(config.algorithm, &batch, config.gamma);
                let (loss, clamped) = critic_epochs(
                    c,
                    opt,
                    &data,
                    critic_loss_kind,
                    config.epochs,
                    config.minibatches,
                    config.max_grad_norm,
                    rng,
                )?;
                clamped_predictions += clamped;
                if !loss.is_finite() || !finite(c) {
                    return Err(diverged(format!("critic loss {loss}")));
                }
                Some(loss)
            }
            _ => None,
        };
        let samples = pg_samples(&batch, &adv)?;
        let stats = match policy_epochs(
            &mut policy,
            &mut policy_opt,
            &samples,
            &settings,
            config.epochs,
            config.minibatches,
            rng,
        ) {
            Ok(s) => s,
            Err(e @ (TrainError::NonFiniteRatio { .. } | TrainError::Tensor(_))) => return Err(diverged(e.to_string())),
            Err(e) => return Err(e),
        };
        if !stats.surrogate.is_finite() || !finite(&policy) {
            return Err(diverged(format!("surrogate {}", stats.surrogate)));
        }
        let eval = if update % config.eval_every == 0 || update == config.total_updates {
            Some(evaluate(&policy, spec, config.eval_episodes, eval_seed)?.success_rate)
        } else {
            None
        };
        log::info!(
            "{} update {update}/{}: batch success {:.3}, eval {eval:?}, clip {:.3}",
            config.algorithm,
            config.total_updates,
            batch.success_rate(),
            stats.clip_fraction
        );
        curve.push(CurveRow {
            update,
            episodes_seen,
            eval_success_rate: eval,
            mean_advantage: adv.mean(),
            clip_fraction: stats.clip_fraction,
            critic_loss,
            wall_clock_s: start.elapsed().as_secs_f64(),
        });
    }
    Ok(FinetuneReport {
        policy: Policy {
            net: policy,
            provenance: Stage::Rl,
        },
        critic,
        curve,
        degenerate_groups,
        clamped_predictions,
    })
}

fn opt_field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the deterministic curve columns.
pub fn write_curve_csv<W: Write>(rows: &[CurveRow], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CURVE_HEADER)?;
    for r in rows {
        w.write_record([
            r.update.to_string(),
            r.episodes_seen.to_string(),
            opt_field(r.eval_success_rate),
            r.mean_advantage.to_string(),
            r.clip_fraction.to_string(),
            opt_field(r.critic_loss),
        ])?;
    }
    w.flush()
}

pub fn write_timing_csv<W: Write>(rows: &[CurveRow], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TIMING_HEADER)?;
    for r in rows {
        w.write_record([r.update.to_string(), r.wall_clock_s.to_string()])?;
    }
    w.flush()
}

fn bad_data(msg: String) -> std::io::Error {
    std::io::Error::new(std::io::ErrorKind::InvalidData, msg)
}

fn parse_opt(field: &str, column: &str) -> std::io::Result<Option<f64>> {
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse()
        .map(Some)
        .map_err(|_| bad_data(format!("column {column}: not a number: {field:?}")))
}

/// Reads a curve written by [`write_curve_csv`]. Wall-clock is left at 0;
/// timing is merged separately.
pub fn read_curve_csv<R: Read>(input: R) -> std::io::Result<Vec<CurveRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(|e| bad_data(e.to_string()))?.clone();
    for (i, expected) in CURVE_HEADER.iter().enumerate() {
        match header.get(i) {
            Some(h) if h == *expected => {}
            Some(h) => return Err(bad_data(format!("column {}: expected {expected}, found {h}", i + 1))),
            None => return Err(bad_data(format!("missing column {expected}"))),
        }
    }
    if let Some(extra) = header.get(CURVE_HEADER.len()) {
        return Err(bad_data(format!("unexpected column {extra}")));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad_data(e.to_string()))?;
        let num = |i: usize| parse_opt(&rec[i], CURVE_HEADER[i]);
        let req = |i: usize| num(i)?.ok_or_else(|| bad_data(format!("column {}: empty", CURVE_HEADER[i])));
        let count = |i: usize| {
            rec[i]
                .parse::<usize>()
                .map_err(|_| bad_data(format!("column {}: not a count: {:?}", CURVE_HEADER[i], &rec[i])))
        };
        rows.push(CurveRow {
            update: count(0)?,
            episodes_seen: count(1)?,
            eval_success_rate: num(2)?,
            mean_advantage: req(3)?,
            clip_fraction: req(4)?,
            critic_loss: num(5)?,
            wall_clock_s: 0.0,
        });
    }
    Ok(rows)
}
