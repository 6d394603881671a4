use rand::seq::SliceRandom;

use super::{Result, RolloutBatch, TrainError};
use crate::advantage::{bce_critic_loss, AdvantageBatch};
use crate::rng::Rng;
use crate::tensor::{adam_step, log_softmax, AdamState, Gradients, MlpParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipSettings {
    pub clip_eps: f64,
    pub entropy_coef: f64,
    /// Global gradient-norm cap; non-positive disables clipping.
    pub max_grad_norm: f64,
    /// Standardize advantages within each minibatch. Only the dense-reward
    /// expert stage turns this on.
    pub normalize_advantages: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub mean_ratio: f64,
    /// Fraction of steps with ratio outside [1 - ε, 1 + ε].
    pub clip_fraction: f64,
    /// Clipped surrogate at the parameters before the step.
    pub surrogate: f64,
    pub entropy: f64,
    pub steps: usize,
}

impl UpdateStats {
    pub(crate) fn average(all: &[UpdateStats]) -> UpdateStats {
        let total: usize = all.iter().map(|s| s.steps).sum();
        if total == 0 {
            return UpdateStats::default();
        }
        let w = |f: fn(&UpdateStats) -> f64| all.iter().map(|s| f(s) * s.steps as f64).sum::<f64>() / total as f64;
        UpdateStats {
            mean_ratio: w(|s| s.mean_ratio),
            clip_fraction: w(|s| s.clip_fraction),
            surrogate: w(|s| s.surrogate),
            entropy: w(|s| s.entropy),
            steps: total,
        }
    }
}

/// One policy-gradient sample: a recorded step and its advantage.
#[derive(Debug, Clone, Copy)]
pub struct PgSample<'a> {
    pub obs: &'a [f64],
    pub action: usize,
    pub behavior_log_prob: f64,
    pub advantage: f64,
    pub trajectory: usize,
    pub step: usize,
}

pub(crate) fn pg_samples<'a>(batch: &'a RolloutBatch, adv: &AdvantageBatch) -> Result<Vec<PgSample<'a>>> {
    if !adv.matches(&batch.trajectories) {
        return Err(TrainError::MisalignedAdvantages);
    }
    let mut out = Vec::with_capacity(batch.total_steps());
    for (ti, (t, a)) in batch.trajectories.iter().zip(&adv.values).enumerate() {
        for (si, (s, &av)) in t.steps.iter().zip(a).enumerate() {
            out.push(PgSample {
                obs: &s.obs,
                action: s.action,
                behavior_log_prob: s.log_prob,
                advantage: av,
                trajectory: ti,
                step: si,
            });
        }
    }
    Ok(out)
}

/// A single Adam step ascending mean_t min(r_t A_t, clip(r_t, 1-ε, 1+ε) A_t)
/// (plus the optional entropy bonus) over `samples`.
pub fn clipped_step(
    policy: &mut MlpParams,
    opt: &mut AdamState,
    samples: &[PgSample<'_>],
    settings: &ClipSettings,
) -> Result<UpdateStats> {
    if samples.is_empty() {
        return Ok(UpdateStats::default());
    }
    let n = samples.len() as f64;
    let (adv_shift, adv_scale) = if settings.normalize_advantages && samples.len() > 1 {
        let mean = samples.iter().map(|s| s.advantage).sum::<f64>() / n;
        let var = samples.iter().map(|s| (s.advantage - mean).powi(2)).sum::<f64>() / n;
        (mean, 1.0 / (var.sqrt() + 1e-8))
    } else {
        (0.0, 1.0)
    };
    let (lo, hi) = (1.0 - settings.clip_eps, 1.0 + settings.clip_eps);
    let mut grads = Gradients::zeros_like(policy);
    let mut stats = UpdateStats {
        steps: samples.len(),
        ..Default::default()
    };
    let mut logit_grad = vec![0.0; policy.output_dim()];
    for s in samples {
        let cache = policy.forward(s.obs)?;
        let probs = cache.output();
        let logp = log_softmax(cache.logits());
        let ratio = (logp[s.action] - s.behavior_log_prob).exp();
        if !ratio.is_finite() {
            return Err(TrainError::NonFiniteRatio {
                trajectory: s.trajectory,
                step: s.step,
            });
        }
        let a = (s.advantage - adv_shift) * adv_scale;
        let unclipped = ratio * a;
        let clipped = ratio.clamp(lo, hi) * a;
        stats.mean_ratio += ratio;
        stats.surrogate += unclipped.min(clipped);
        if !(lo..=hi).contains(&ratio) {
            stats.clip_fraction += 1.0;
        }
        let entropy: f64 = -probs.iter().zip(&logp).map(|(p, l)| p * l).sum::<f64>();
        stats.entropy += entropy;

        // loss = -(objective + c H) / n, differentiated w.r.t. the logits
        let surrogate_active = unclipped <= clipped;
        for (k, g) in logit_grad.iter_mut().enumerate() {
            let onehot = if k == s.action { 1.0 } else { 0.0 };
            let mut v = 0.0;
            if surrogate_active {
                v -= a * ratio * (onehot - probs[k]);
            }
            if settings.entropy_coef != 0.0 {
                v += settings.entropy_coef * probs[k] * (logp[k] + entropy);
            }
            *g = v;
        }
        policy.accumulate_logit_grad(&cache, &logit_grad, 1.0 / n, &mut grads)?;
    }
    stats.mean_ratio /= n;
    stats.surrogate /= n;
    stats.clip_fraction /= n;
    stats.entropy /= n;
    if settings.max_grad_norm > 0.0 {
        grads.clip_global_norm(settings.max_grad_norm);
    }
    adam_step(policy, &grads, opt)?;
    Ok(stats)
}

/// One clipped-surrogate step over every step of `batch`.
pub fn clipped_policy_update(
    policy: &mut MlpParams,
    opt: &mut AdamState,
    batch: &RolloutBatch,
    advantages: &AdvantageBatch,
    settings: &ClipSettings,
) -> Result<UpdateStats> {
    let samples = pg_samples(batch, advantages)?;
    clipped_step(policy, opt, &samples, settings)
}

/// Shuffled index partition for `epochs` passes of `minibatches` each.
pub(crate) fn minibatch_plan(n: usize, epochs: usize, minibatches: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let parts = minibatches.clamp(1, n.max(1));
    let mut plan = Vec::with_capacity(epochs * parts);
    let mut idx: Vec<usize> = (0..n).collect();
    for _ in 0..epochs {
        idx.shuffle(rng);
        let chunk = n.div_ceil(parts).max(1);
        plan.extend(idx.chunks(chunk).map(<[usize]>::to_vec));
    }
    plan
}

/// Runs clipped steps over a shuffled minibatch plan. Returns the
/// step-weighted average statistics.
pub(crate) fn policy_epochs(
    policy: &mut MlpParams,
    opt: &mut AdamState,
    samples: &[PgSample<'_>],
    settings: &ClipSettings,
    epochs: usize,
    minibatches: usize,
    rng: &mut Rng,
) -> Result<UpdateStats> {
    let mut all = Vec::new();
    let mut mb = Vec::new();
    for part in minibatch_plan(samples.len(), epochs, minibatches, rng) {
        mb.clear();
        mb.extend(part.iter().map(|&i| samples[i]));
        all.push(clipped_step(policy, opt, &mb, settings)?);
    }
    Ok(UpdateStats::average(&all))
}

fn finish_critic_step(critic: &mut MlpParams, opt: &mut AdamState, mut grads: Gradients, max_grad_norm: f64) -> Result<()> {
    if max_grad_norm > 0.0 {
        grads.clip_global_norm(max_grad_norm);
    }
    adam_step(critic, &grads, opt)?;
    Ok(())
}

/// One Adam step on the binary cross-entropy of a sigmoid critic. Returns
/// the pre-step loss and the number of clamped predictions.
pub fn bce_critic_step(
    critic: &mut MlpParams,
    opt: &mut AdamState,
    samples: &[(&[f64], f64)],
    max_grad_norm: f64,
) -> Result<(f64, usize)> {
    let l = bce_critic_loss(critic, samples)?;
    finish_critic_step(critic, opt, l.grads, max_grad_norm)?;
    Ok((l.loss, l.clamped))
}

/// One Adam step on 0.5 * mean (V(s) - target)^2. Returns the pre-step loss.
pub fn mse_critic_step(
    critic: &mut MlpParams,
    opt: &mut AdamState,
    samples: &[(&[f64], f64)],
    max_grad_norm: f64,
) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let scale = 1.0 / samples.len() as f64;
    let mut grads = Gradients::zeros_like(critic);
    let mut loss = 0.0;
    for &(obs, target) in samples {
        let cache = critic.forward(obs)?;
        let err = cache.output()[0] - target;
        loss += 0.5 * err * err;
        critic.accumulate_output_grad(&cache, &[err], scale, &mut grads)?;
    }
    finish_critic_step(critic, opt, grads, max_grad_norm)?;
    Ok(loss * scale)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum CriticLoss {
    Mse,
    Bce,
}

/// Minibatch critic regression. Returns the mean pre-step loss and the total
/// number of clamped BCE predictions.
#[allow(clippy::too_many_arguments)]
pub(crate) fn critic_epochs(
    critic: &mut MlpParams,
    opt: &mut AdamState,
    samples: &[(&[f64], f64)],
    loss: CriticLoss,
    epochs: usize,
    minibatches: usize,
    max_grad_norm: f64,
    rng: &mut Rng,
) -> Result<(f64, usize)> {
    let plan = minibatch_plan(samples.len(), epochs, minibatches, rng);
    let mut total = 0.0;
    let mut clamped = 0;
    let mut mb = Vec::new();
    for part in &plan {
        mb.clear();
        mb.extend(part.iter().map(|&i| samples[i]));
        total += match loss {
            CriticLoss::Mse => mse_critic_step(critic, opt, &mb, max_grad_norm)?,
            CriticLoss::Bce => {
                let (l, c) = bce_critic_step(critic, opt, &mb, max_grad_norm)?;
                clamped += c;
                l
            }
        };
    }
    Ok((total / plan.len().max(1) as f64, clamped))
}

/// Sequence-level critic data: exactly one (initial observation, outcome)
/// pair per trajectory.
pub fn sppo_critic_targets(batch: &RolloutBatch) -> Vec<(&[f64], f64)> {
    batch
        .trajectories
        .iter()
        .map(|t| (t.initial_obs.as_slice(), t.outcome_f64()))
        .collect()
}
