//! Advantage estimators over outcome-reward trajectories.
//!
//! Sequence-level estimators (SPPO, GRPO, RLOO, ReMax) produce one scalar per
//! trajectory that is then copied onto every step. GAE produces a distinct
//! value per step from a step-level critic.

use thiserror::Error;

use crate::tensor::{Gradients, Head, MlpParams, TensorError};

#[derive(Debug, Error, PartialEq)]
pub enum AdvantageError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("critic must have a {expected:?} head, found {found:?}")]
    WrongHead { expected: Head, found: Head },
    #[error("group needs at least {min} trajectories, got {got}")]
    GroupTooSmall { min: usize, got: usize },
    #[error("group mixes group ids {0} and {1}")]
    MixedGroup(u64, u64),
    #[error("estimated success probability {0} must lie strictly inside (0, 1)")]
    SingularProbability(f64),
    #[error("outcome must be 0 or 1, got {0}")]
    NonBinaryOutcome(f64),
    #[error("empty batch")]
    EmptyBatch,
    #[error("trajectory invariant violated at step {step}: {reason}")]
    BadTrajectory { step: usize, reason: &'static str },
}

pub type Result<T> = std::result::Result<T, AdvantageError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub obs: Vec<f64>,
    pub action: usize,
    /// log π_{θ_k}(action | obs) under the behavior policy.
    pub log_prob: f64,
    pub reward: f64,
}

/// One episode. `initial_obs` is the context the sequence-level critic sees.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub initial_obs: Vec<f64>,
    pub steps: Vec<Step>,
    /// Binary outcome R.
    pub outcome: u8,
    /// Trajectories sampled from the same initial state share a group id.
    pub group_id: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn outcome_f64(&self) -> f64 {
        f64::from(self.outcome)
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    /// Checks the outcome-reward contract: zero reward everywhere except the
    /// last step, which carries R, and valid behavior log-probabilities.
    pub fn validate_sparse(&self) -> Result<()> {
        if self.outcome > 1 {
            return Err(AdvantageError::NonBinaryOutcome(self.outcome_f64()));
        }
        let last = self.steps.len().checked_sub(1).ok_or(AdvantageError::EmptyBatch)?;
        for (i, s) in self.steps.iter().enumerate() {
            if !s.log_prob.is_finite() || s.log_prob > 0.0 {
                return Err(AdvantageError::BadTrajectory {
                    step: i,
                    reason: "behavior log-prob must be finite and <= 0",
                });
            }
            let expected = if i == last { self.outcome_f64() } else { 0.0 };
            if s.reward != expected {
                return Err(AdvantageError::BadTrajectory {
                    step: i,
                    reason: "sparse reward must be 0 before the final step and R on it",
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    Sppo,
    Gae,
    Grpo,
    Rloo,
    Remax,
}

impl Estimator {
    pub fn is_sequence_level(self) -> bool {
        !matches!(self, Estimator::Gae)
    }
}

/// Per-trajectory, per-step advantages aligned with a rollout batch.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageBatch {
    pub estimator: Estimator,
    pub values: Vec<Vec<f64>>,
}

impl AdvantageBatch {
    /// Broadcasts one scalar per trajectory onto all of its steps.
    pub fn from_sequence(estimator: Estimator, trajs: &[Trajectory], per_traj: &[f64]) -> Self {
        debug_assert_eq!(trajs.len(), per_traj.len());
        AdvantageBatch {
            estimator,
            values: trajs
                .iter()
                .zip(per_traj)
                .map(|(t, &a)| broadcast_sequence_advantage(t, a))
                .collect(),
        }
    }

    pub fn matches(&self, trajs: &[Trajectory]) -> bool {
        self.values.len() == trajs.len() && self.values.iter().zip(trajs).all(|(v, t)| v.len() == t.len())
    }

    /// Mean over every step of every trajectory.
    pub fn mean(&self) -> f64 {
        let n: usize = self.values.iter().map(Vec::len).sum();
        if n == 0 {
            return 0.0;
        }
        self.values.iter().flatten().sum::<f64>() / n as f64
    }
}

fn require_head(critic: &MlpParams, head: Head) -> Result<()> {
    if critic.head() != head {
        return Err(AdvantageError::WrongHead {
            expected: head,
            found: critic.head(),
        });
    }
    Ok(())
}

/// A = R - V(s_p), with V the sigmoid critic evaluated on the initial observation.
pub fn sppo_advantage(traj: &Trajectory, critic: &MlpParams) -> Result<f64> {
    require_head(critic, Head::Sigmoid)?;
    let v = critic.scalar(&traj.initial_obs)?;
    Ok(traj.outcome_f64() - v)
}

pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct BceLoss {
    pub loss: f64,
    pub grads: Gradients,
    /// Predictions that had to be clamped away from 0 or 1 before the log.
    pub clamped: usize,
}

/// Mean binary cross-entropy of a sigmoid critic against binary targets.
///
/// The gradient is taken in logit space, `V - R` per sample, which is the
/// exact gradient of the unclamped loss.
pub fn bce_critic_loss(critic: &MlpParams, batch: &[(&[f64], f64)]) -> Result<BceLoss> {
    require_head(critic, Head::Sigmoid)?;
    if batch.is_empty() {
        return Err(AdvantageError::EmptyBatch);
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grads = Gradients::zeros_like(critic);
    let mut loss = 0.0;
    let mut clamped = 0;
    for &(obs, target) in batch {
        if target != 0.0 && target != 1.0 {
            return Err(AdvantageError::NonBinaryOutcome(target));
        }
        let cache = critic.forward(obs)?;
        let v = cache.output()[0];
        let vc = v.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        if vc != v {
            clamped += 1;
        }
        loss -= target * vc.ln() + (1.0 - target) * (1.0 - vc).ln();
        critic.accumulate_logit_grad(&cache, &[v - target], scale, &mut grads)?;
    }
    Ok(BceLoss {
        loss: loss * scale,
        grads,
        clamped,
    })
}

/// Discounted returns-to-go G_t.
pub fn returns_to_go(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// GAE from per-step rewards and values; the value after the last step is 0.
pub fn gae_from_values(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    debug_assert_eq!(rewards.len(), values.len());
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { values[t + 1] } else { 0.0 };
        let delta = rewards[t] + gamma * next_value - values[t];
        acc = delta + gamma * lambda * acc;
        adv[t] = acc;
    }
    adv
}

/// Per-step values of a step-level critic along a trajectory.
pub fn step_values(traj: &Trajectory, critic: &MlpParams) -> Result<Vec<f64>> {
    traj.steps
        .iter()
        .map(|s| critic.scalar(&s.obs).map_err(AdvantageError::from))
        .collect()
}

/// Generalized advantage estimation with a step-level critic.
pub fn gae_advantage(traj: &Trajectory, critic: &MlpParams, gamma: f64, lambda: f64) -> Result<Vec<f64>> {
    let values = step_values(traj, critic)?;
    Ok(gae_from_values(&traj.rewards(), &values, gamma, lambda))
}

fn check_group(group: &[Trajectory]) -> Result<()> {
    if group.len() < 2 {
        return Err(AdvantageError::GroupTooSmall {
            min: 2,
            got: group.len(),
        });
    }
    let id = group[0].group_id;
    if let Some(t) = group.iter().find(|t| t.group_id != id) {
        return Err(AdvantageError::MixedGroup(id, t.group_id));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupAdvantage {
    pub values: Vec<f64>,
    /// Set when every member had the same outcome and σ_g was 0.
    pub degenerate: bool,
}

/// (R_i - mean) / std over rewards, with the unbiased (N - 1) standard
/// deviation. A zero-variance group yields all-zero advantages.
pub fn group_normalize(rewards: &[f64]) -> GroupAdvantage {
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let std = var.sqrt();
    if std == 0.0 {
        return GroupAdvantage {
            values: vec![0.0; rewards.len()],
            degenerate: true,
        };
    }
    GroupAdvantage {
        values: rewards.iter().map(|r| (r - mean) / std).collect(),
        degenerate: false,
    }
}

/// Group-normalized advantage for N same-context samples.
pub fn grpo_advantage_empirical(group: &[Trajectory]) -> Result<GroupAdvantage> {
    check_group(group)?;
    let rewards: Vec<f64> = group.iter().map(Trajectory::outcome_f64).collect();
    Ok(group_normalize(&rewards))
}

/// Large-N limit of the group-normalized advantage for Bernoulli outcomes
/// with empirical success rate `p_hat`.
pub fn grpo_advantage_analytic(p_hat: f64, outcome: u8) -> Result<f64> {
    if !(p_hat > 0.0 && p_hat < 1.0) {
        return Err(AdvantageError::SingularProbability(p_hat));
    }
    match outcome {
        1 => Ok(((1.0 - p_hat) / p_hat).sqrt()),
        0 => Ok(-(p_hat / (1.0 - p_hat)).sqrt()),
        r => Err(AdvantageError::NonBinaryOutcome(f64::from(r))),
    }
}

/// R_i minus the mean outcome of the other N - 1 group members.
pub fn rloo_advantage(group: &[Trajectory]) -> Result<Vec<f64>> {
    check_group(group)?;
    let n = group.len() as f64;
    let total: f64 = group.iter().map(Trajectory::outcome_f64).sum();
    Ok(group
        .iter()
        .map(|t| {
            let r = t.outcome_f64();
            r - (total - r) / (n - 1.0)
        })
        .collect())
}

/// Sampled outcome minus the outcome of a greedy rollout from the same state.
pub fn remax_advantage(sampled: &Trajectory, greedy_outcome: u8) -> f64 {
    sampled.outcome_f64() - f64::from(greedy_outcome)
}

/// The same advantage on every step of `traj`.
pub fn broadcast_sequence_advantage(traj: &Trajectory, advantage: f64) -> Vec<f64> {
    vec![advantage; traj.len()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::tensor::{adam_step, AdamConfig, AdamState, Matrix};
    use proptest::prelude::*;

    fn traj(len: usize, outcome: u8, group_id: u64) -> Trajectory {
        let steps = (0..len)
            .map(|i| Step {
                obs: vec![i as f64 / 10.0, 1.0],
                action: i % 2,
                log_prob: -0.5,
                reward: if i + 1 == len { f64::from(outcome) } else { 0.0 },
            })
            .collect();
        Trajectory {
            initial_obs: vec![0.0, 1.0],
            steps,
            outcome,
            group_id,
        }
    }

    fn group(outcomes: &[u8]) -> Vec<Trajectory> {
        outcomes.iter().map(|&r| traj(3, r, 7)).collect()
    }

    /// Sigmoid critic that outputs exactly `v` on any input.
    fn const_critic(v: f64, input: usize) -> MlpParams {
        let logit = (v / (1.0 - v)).ln();
        MlpParams::from_parts(&[input, 1], Head::Sigmoid, vec![Matrix::zeros(1, input)], vec![vec![logit]]).unwrap()
    }

    #[test]
    fn sppo_examples() {
        let c = const_critic(0.5, 2);
        assert!((sppo_advantage(&traj(4, 1, 0), &c).unwrap() - 0.5).abs() < 1e-12);
        assert!((sppo_advantage(&traj(4, 0, 0), &c).unwrap() + 0.5).abs() < 1e-12);
        let c = const_critic(0.9, 2);
        assert!((sppo_advantage(&traj(4, 1, 0), &c).unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn sppo_rejects_bad_critic() {
        let c = const_critic(0.5, 3);
        assert!(matches!(
            sppo_advantage(&traj(2, 1, 0), &c),
            Err(AdvantageError::Tensor(TensorError::DimensionMismatch { .. }))
        ));
        let lin = MlpParams::zeros(&[2, 1], Head::Linear).unwrap();
        assert!(matches!(
            sppo_advantage(&traj(2, 1, 0), &lin),
            Err(AdvantageError::WrongHead { .. })
        ));
    }

    #[test]
    fn bce_examples() {
        let c = const_critic(0.5, 2);
        let x = [0.3, -0.2];
        let l = bce_critic_loss(&c, &[(&x, 1.0)]).unwrap();
        assert!((l.loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(l.clamped, 0);
        let near_one = const_critic(1.0 - 1e-12, 2);
        let l = bce_critic_loss(&near_one, &[(&x, 1.0)]).unwrap();
        assert!(l.loss < 1e-6);
        assert_eq!(l.clamped, 1);
        assert!(bce_critic_loss(&c, &[]).is_err());
    }

    #[test]
    fn bce_gradient_matches_finite_difference() {
        let mut r = rng::stream(21, &[]);
        let mut c = MlpParams::init(&[2, 5, 1], Head::Sigmoid, &mut r).unwrap();
        let xs = [[0.2, -0.4], [1.0, 0.5], [-0.3, 0.9]];
        let batch: Vec<(&[f64], f64)> = vec![(&xs[0], 1.0), (&xs[1], 0.0), (&xs[2], 1.0)];
        let g = bce_critic_loss(&c, &batch).unwrap().grads.to_flat();
        let base = c.to_flat();
        let h = 1e-6;
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += h;
            c.set_flat(&p).unwrap();
            let up = bce_critic_loss(&c, &batch).unwrap().loss;
            p[i] -= 2.0 * h;
            c.set_flat(&p).unwrap();
            let down = bce_critic_loss(&c, &batch).unwrap().loss;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7, "param {i}: fd {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn bce_mixed_labels_converge_to_half() {
        let mut r = rng::stream(22, &[]);
        let mut c = MlpParams::init(&[2, 8, 1], Head::Sigmoid, &mut r).unwrap();
        let mut opt = AdamState::new(&c, AdamConfig::with_lr(1e-2));
        let x = [0.7, -0.1];
        for _ in 0..2000 {
            let l = bce_critic_loss(&c, &[(&x, 1.0), (&x, 0.0)]).unwrap();
            adam_step(&mut c, &l.grads, &mut opt).unwrap();
        }
        assert!((c.scalar(&x).unwrap() - 0.5).abs() < 1e-3);
    }

    #[test]
    fn gae_examples() {
        let zero = MlpParams::zeros(&[2, 1], Head::Linear).unwrap();
        let t = traj(5, 1, 0);
        assert_eq!(gae_advantage(&t, &zero, 1.0, 1.0).unwrap(), vec![1.0; 5]);

        // TD errors: δ0 = 0.5-0.2, δ1 = 0.7-0.5, δ2 = 1-0.7; sums from t: 0.8, 0.5, 0.3
        let adv = gae_from_values(&[0.0, 0.0, 1.0], &[0.2, 0.5, 0.7], 1.0, 1.0);
        for (a, e) in adv.iter().zip([0.8, 0.5, 0.3]) {
            assert!((a - e).abs() < 1e-15);
        }
    }

    fn gae_brute_force(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
        let n = rewards.len();
        let v = |i: usize| if i < n { values[i] } else { 0.0 };
        (0..n)
            .map(|t| {
                (0..n - t)
                    .map(|l| {
                        let k = t + l;
                        (gamma * lambda).powi(l as i32) * (rewards[k] + gamma * v(k + 1) - v(k))
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn gae_general_matches_double_loop() {
        use rand::Rng as _;
        let mut r = rng::stream(23, &[]);
        for _ in 0..50 {
            let n = r.random_range(1..40);
            let rewards: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
            let values: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
            let fast = gae_from_values(&rewards, &values, 0.99, 0.95);
            let slow = gae_brute_force(&rewards, &values, 0.99, 0.95);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn grpo_examples() {
        let a = grpo_advantage_empirical(&group(&[1, 0, 0, 0])).unwrap();
        assert!(!a.degenerate);
        assert!((a.values[0] - 1.5).abs() < 1e-12);
        for v in &a.values[1..] {
            assert!((v + 0.5).abs() < 1e-12);
        }
        let a = grpo_advantage_empirical(&group(&[1, 1, 1])).unwrap();
        assert!(a.degenerate);
        assert_eq!(a.values, vec![0.0; 3]);
        let a = grpo_advantage_empirical(&group(&[1, 0])).unwrap();
        assert!((a.values[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((a.values[1] + std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn grpo_group_errors() {
        assert!(matches!(
            grpo_advantage_empirical(&group(&[1])),
            Err(AdvantageError::GroupTooSmall { .. })
        ));
        let mut g = group(&[1, 0]);
        g[1].group_id = 8;
        assert_eq!(grpo_advantage_empirical(&g), Err(AdvantageError::MixedGroup(7, 8)));
    }

    #[test]
    fn grpo_analytic_examples() {
        assert_eq!(grpo_advantage_analytic(0.5, 1).unwrap(), 1.0);
        assert_eq!(grpo_advantage_analytic(0.5, 0).unwrap(), -1.0);
        assert!((grpo_advantage_analytic(0.9, 1).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(grpo_advantage_analytic(0.0, 1).is_err());
        assert!(grpo_advantage_analytic(1.0, 0).is_err());
        assert!(grpo_advantage_analytic(0.5, 2).is_err());
    }

    #[test]
    fn rloo_examples() {
        let a = rloo_advantage(&group(&[1, 0, 0, 1])).unwrap();
        assert!((a[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(rloo_advantage(&group(&[1, 1, 1])).unwrap(), vec![0.0; 3]);
        assert_eq!(rloo_advantage(&group(&[1, 0])).unwrap(), vec![1.0, -1.0]);
        assert!(rloo_advantage(&group(&[0])).is_err());
    }

    #[test]
    fn remax_examples() {
        assert_eq!(remax_advantage(&traj(2, 1, 0), 0), 1.0);
        assert_eq!(remax_advantage(&traj(2, 1, 0), 1), 0.0);
        assert_eq!(remax_advantage(&traj(2, 0, 0), 1), -1.0);
    }

    #[test]
    fn broadcast_examples() {
        assert_eq!(broadcast_sequence_advantage(&traj(3, 1, 0), 0.5), vec![0.5; 3]);
        assert_eq!(broadcast_sequence_advantage(&traj(4, 0, 0), 0.0), vec![0.0; 4]);
        assert_eq!(broadcast_sequence_advantage(&traj(1, 1, 0), -0.3), vec![-0.3]);
    }

    #[test]
    fn sparse_contract_validation() {
        assert!(traj(5, 1, 0).validate_sparse().is_ok());
        let mut t = traj(5, 1, 0);
        t.steps[2].reward = 0.1;
        assert!(t.validate_sparse().is_err());
        let mut t = traj(5, 0, 0);
        t.steps[0].log_prob = 0.2;
        assert!(t.validate_sparse().is_err());
    }

    proptest! {
        #[test]
        fn gae_unit_discount_is_return_minus_value(
            values in prop::collection::vec(-3.0f64..3.0, 1..60),
            outcome in 0u8..2,
        ) {
            let n = values.len();
            let mut rewards = vec![0.0; n];
            rewards[n - 1] = f64::from(outcome);
            let adv = gae_from_values(&rewards, &values, 1.0, 1.0);
            let g = returns_to_go(&rewards, 1.0);
            for t in 0..n {
                prop_assert!((adv[t] - (g[t] - values[t])).abs() <= 1e-12);
            }
        }

        #[test]
        fn group_baselines_are_zero_mean(outcomes in prop::collection::vec(0u8..2, 2..40)) {
            let g = group(&outcomes);
            let n = outcomes.len() as f64;
            let grpo = grpo_advantage_empirical(&g).unwrap();
            prop_assert!((grpo.values.iter().sum::<f64>() / n).abs() < 1e-12);
            let rloo = rloo_advantage(&g).unwrap();
            prop_assert!((rloo.iter().sum::<f64>() / n).abs() < 1e-12);
        }

        #[test]
        fn sppo_magnitude_tracks_disagreement(v in 0.01f64..0.99) {
            let c = const_critic(v, 2);
            let up = sppo_advantage(&traj(2, 1, 0), &c).unwrap();
            let down = sppo_advantage(&traj(2, 0, 0), &c).unwrap();
            prop_assert!((up - (1.0 - v)).abs() < 1e-9);
            prop_assert!((down + v).abs() < 1e-9);
            prop_assert!(up > -1.0 && up < 1.0 && down > -1.0 && down < 1.0);
        }

        #[test]
        fn broadcast_has_zero_spread(a in -2.0f64..2.0, len in 1usize..50) {
            let t = traj(len, 1, 0);
            let b = AdvantageBatch::from_sequence(Estimator::Sppo, std::slice::from_ref(&t), &[a]);
            prop_assert!(b.matches(std::slice::from_ref(&t)));
            prop_assert!(b.values[0].iter().all(|&x| x == a));
        }
    }
}
