use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::rollout::Episode;
use super::{layer_sizes, Policy, Result, Stage, TrainError};
use crate::envs::EnvSpec;
use crate::rng::Rng;
use crate::tensor::{adam_step, argmax, AdamConfig, AdamState, Gradients, Head, MlpParams};

/// Which expert episodes are kept for cloning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemoFilter {
    /// Episodes whose sparse outcome is a success.
    Success,
    /// Episodes whose summed dense reward exceeds the threshold.
    MinDenseReturn(f64),
}

impl DemoFilter {
    pub fn accepts(&self, ep: &Episode) -> bool {
        match *self {
            DemoFilter::Success => ep.outcome.success,
            DemoFilter::MinDenseReturn(min) => ep.total_reward > min,
        }
    }
}

/// How the expert acts while generating demonstrations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemoSampling {
    Greedy,
    Stochastic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BcConfig {
    /// Expert episodes generated before filtering.
    pub demos: usize,
    pub sampling: DemoSampling,
    pub filter: DemoFilter,
    pub max_epochs: usize,
    /// Epochs without held-out improvement before stopping.
    pub patience: usize,
    pub learning_rate: f64,
    pub minibatch_size: usize,
    pub holdout_fraction: f64,
    pub hidden: Vec<usize>,
}

impl Default for BcConfig {
    fn default() -> Self {
        BcConfig {
            demos: 32,
            sampling: DemoSampling::Greedy,
            filter: DemoFilter::Success,
            max_epochs: 100,
            patience: 10,
            learning_rate: 1e-3,
            minibatch_size: 64,
            holdout_fraction: 0.1,
            hidden: vec![64, 64],
        }
    }
}

impl BcConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.demos == 0 || self.max_epochs == 0 || self.minibatch_size == 0 {
            return fail("demos, max_epochs and minibatch_size must be positive");
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return fail("holdout_fraction must lie in [0, 1)");
        }
        if self.learning_rate <= 0.0 {
            return fail("learning_rate must be positive");
        }
        if self.hidden.contains(&0) {
            return fail("hidden widths must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BcReport {
    pub policy: Policy,
    pub kept_episodes: usize,
    pub offered_episodes: usize,
    pub train_samples: usize,
    pub holdout_samples: usize,
    /// Action agreement on the held-out samples (training samples if none
    /// were held out) for the returned parameters.
    pub holdout_accuracy: f64,
    pub epochs: usize,
}

fn accuracy(net: &MlpParams, data: &[(&[f64], usize)]) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0;
    for &(obs, a) in data {
        hits += usize::from(argmax(&net.logits(obs)?) == a);
    }
    Ok(hits as f64 / data.len() as f64)
}

/// Cross-entropy imitation of the filtered demonstrations into a fresh
/// policy, stopping once held-out action agreement stops improving.
pub fn behavior_cloning(spec: &EnvSpec, demos: &[Episode], config: &BcConfig, rng: &mut Rng) -> Result<BcReport> {
    config.validate()?;
    let kept: Vec<&Episode> = demos.iter().filter(|e| config.filter.accepts(e)).collect();
    if kept.is_empty() {
        return Err(TrainError::NoDemos(demos.len()));
    }
    let mut samples: Vec<(&[f64], usize)> = kept
        .iter()
        .flat_map(|e| e.trajectory.steps.iter().map(|s| (s.obs.as_slice(), s.action)))
        .collect();
    samples.shuffle(rng);
    let n_holdout = (samples.len() as f64 * config.holdout_fraction).floor() as usize;
    let (holdout, train) = samples.split_at(n_holdout);
    let check = if holdout.is_empty() { train } else { holdout };

    let mut net = MlpParams::init(
        &layer_sizes(spec.obs_dim(), &config.hidden, spec.action_count()),
        Head::Softmax,
        rng,
    )?;
    let mut opt = AdamState::new(&net, AdamConfig::with_lr(config.learning_rate));
    let mut grads = Gradients::zeros_like(&net);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut logit_grad = vec![0.0; spec.action_count()];
    let mut best = (accuracy(&net, check)?, net.clone());
    let mut stale = 0;
    let mut epochs = 0;
    while epochs < config.max_epochs && stale < config.patience.max(1) {
        epochs += 1;
        order.shuffle(rng);
        for chunk in order.chunks(config.minibatch_size) {
            grads.fill(0.0);
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let (obs, a) = train[i];
                let cache = net.forward(obs)?;
                for (k, (g, p)) in logit_grad.iter_mut().zip(cache.output()).enumerate() {
                    *g = p - if k == a { 1.0 } else { 0.0 };
                }
                net.accumulate_logit_grad(&cache, &logit_grad, scale, &mut grads)?;
            }
            adam_step(&mut net, &grads, &mut opt)?;
        }
        let acc = accuracy(&net, check)?;
        log::debug!("bc epoch {epochs}: held-out accuracy {acc:.4}");
        // ties keep the later parameters but still count toward the plateau
        stale = if acc > best.0 { 0 } else { stale + 1 };
        if acc >= best.0 {
            best = (acc, net.clone());
        }
    }
    Ok(BcReport {
        policy: Policy {
            net: best.1,
            provenance: Stage::Sft,
        },
        kept_episodes: kept.len(),
        offered_episodes: demos.len(),
        train_samples: train.len(),
        holdout_samples: holdout.len(),
        holdout_accuracy: best.0,
        epochs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::advantage::{Step, Trajectory};
    use crate::envs::{EnvId, EnvState, Outcome, RewardMode, Status};
    use crate::rng;

    fn episode(obs: Vec<f64>, action: usize, n: usize, success: bool) -> Episode {
        Episode {
            trajectory: Trajectory {
                initial_obs: obs.clone(),
                steps: (0..n)
                    .map(|_| Step {
                        obs: obs.clone(),
                        action,
                        log_prob: 0.0,
                        reward: 0.0,
                    })
                    .collect(),
                outcome: u8::from(success),
                group_id: 0,
            },
            final_state: EnvState {
                vars: vec![0.0; 2],
                step_index: n,
                status: Status::Horizon,
            },
            outcome: Outcome {
                success,
                reward: u8::from(success),
                terminal_step: n,
            },
            total_reward: n as f64,
        }
    }

    #[test]
    fn empty_filter_is_an_error() {
        let spec = EnvSpec::new(EnvId::MountainCar, RewardMode::SparseOutcome);
        let demos = vec![episode(vec![0.1, 0.2], 1, 5, false)];
        let err = behavior_cloning(&spec, &demos, &BcConfig::default(), &mut rng::stream(1, &[])).unwrap_err();
        assert!(matches!(err, TrainError::NoDemos(1)));
    }

    #[test]
    fn single_state_single_action_converges() {
        let spec = EnvSpec::new(EnvId::MountainCar, RewardMode::SparseOutcome);
        let demos = vec![episode(vec![0.3, -0.5], 2, 64, true)];
        let cfg = BcConfig {
            max_epochs: 400,
            patience: 400,
            minibatch_size: 64,
            learning_rate: 1e-2,
            holdout_fraction: 0.0,
            ..Default::default()
        };
        let r = behavior_cloning(&spec, &demos, &cfg, &mut rng::stream(2, &[])).unwrap();
        let p = r.policy.net.predict(&[0.3, -0.5]).unwrap();
        assert!(p[2] > 0.99, "{p:?}");
        assert_eq!(r.policy.provenance, Stage::Sft);
    }

    #[test]
    fn dense_return_filter() {
        let long = episode(vec![0.0, 0.0], 0, 10, false);
        let short = episode(vec![0.0, 0.0], 0, 2, false);
        let f = DemoFilter::MinDenseReturn(5.0);
        assert!(f.accepts(&long));
        assert!(!f.accepts(&short));
    }

    #[test]
    fn filter_serde_forms() {
        #[derive(Deserialize)]
        struct W {
            filter: DemoFilter,
        }
        let w: W = toml::from_str("filter = \"success\"").unwrap();
        assert_eq!(w.filter, DemoFilter::Success);
        let w: W = toml::from_str("filter = { min_dense_return = 12.5 }").unwrap();
        assert_eq!(w.filter, DemoFilter::MinDenseReturn(12.5));
    }
}
