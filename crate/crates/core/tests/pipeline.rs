use proptest::prelude::*;
use sppo::advantage::{AdvantageBatch, Estimator};
use sppo::envs::{EnvId, EnvSpec, RewardMode};
use sppo::rng::{self, tag};
use sppo::tensor::{AdamConfig, AdamState, Head, MlpParams};
use sppo::train::{
    behavior_cloning, clipped_policy_update, collect_demos, collect_rollouts, expert_synthesis, rl_finetune,
    write_curve_csv, Algorithm, BcConfig, ClipSettings, Policy, Stage, StageConfig,
};

fn lander_sft(seed: u64) -> Policy {
    let dense = EnvSpec::new(EnvId::LunarLanderLite, RewardMode::Dense);
    let cfg = StageConfig {
        total_updates: 40,
        policy_lr: 1e-3,
        eval_episodes: 8,
        ..StageConfig::expert()
    };
    let expert = expert_synthesis(&dense, &cfg, &mut rng::stream(seed, &[tag::EXPERT])).unwrap();
    assert_eq!(expert.policy.provenance, Stage::Expert);
    let demos = collect_demos(&expert.policy.net, &dense, 16, true, &mut rng::stream(seed, &[tag::DEMOS])).unwrap();
    let sparse = dense.with_mode(RewardMode::SparseOutcome);
    let bc = behavior_cloning(&sparse, &demos, &BcConfig::default(), &mut rng::stream(seed, &[tag::SFT])).unwrap();
    assert_eq!(bc.policy.provenance, Stage::Sft);
    assert!(bc.kept_episodes > 0);
    bc.policy
}

fn rl_config(algorithm: Algorithm) -> StageConfig {
    StageConfig {
        algorithm,
        batch_size: 6,
        group_size: 4,
        total_updates: 3,
        eval_episodes: 8,
        ..StageConfig::default()
    }
}

#[test]
fn three_stages_chain_and_reproduce() {
    let sft = lander_sft(11);
    let sparse = EnvSpec::new(EnvId::LunarLanderLite, RewardMode::SparseOutcome);
    let run = |seed| {
        let r = rl_finetune(&sft, &sparse, &rl_config(Algorithm::Sppo), &mut rng::stream(seed, &[tag::RL])).unwrap();
        let mut bytes = Vec::new();
        write_curve_csv(&r.curve, &mut bytes).unwrap();
        (r, bytes)
    };
    let (a, bytes_a) = run(1);
    let (_, bytes_b) = run(1);
    let (_, bytes_c) = run(2);
    assert_eq!(a.policy.provenance, Stage::Rl);
    assert_eq!(a.curve.len(), 4);
    // sppo ignores group_size: one trajectory per initial state
    let seen: Vec<usize> = a.curve.iter().map(|r| r.episodes_seen).collect();
    assert_eq!(seen, vec![0, 6, 12, 18]);
    assert_eq!(bytes_a, bytes_b);
    assert_ne!(bytes_a, bytes_c);
}

#[test]
fn grouped_estimators_multiply_the_sample_count() {
    let sft = lander_sft(12);
    let sparse = EnvSpec::new(EnvId::LunarLanderLite, RewardMode::SparseOutcome);
    let r = rl_finetune(&sft, &sparse, &rl_config(Algorithm::Rloo), &mut rng::stream(3, &[tag::RL])).unwrap();
    assert_eq!(r.curve[1].episodes_seen, 24);
    assert!(r.critic.is_none());
    assert!(r.curve.iter().all(|row| row.critic_loss.is_none()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn surrogate_at_behavior_parameters_is_unclipped(
        seed in any::<u64>(),
        eps in 0.05f64..0.5,
        advs in prop::collection::vec(-2.0f64..2.0, 4),
    ) {
        let spec = EnvSpec {
            horizon: 12,
            ..EnvSpec::new(EnvId::PrecisionCartpole, RewardMode::SparseOutcome)
        };
        let mut policy = MlpParams::init(&[4, 8, 2], Head::Softmax, &mut rng::stream(seed, &[0])).unwrap();
        let cfg = StageConfig { batch_size: 4, ..StageConfig::default() };
        let batch = collect_rollouts(&policy, &spec, &cfg, &mut rng::stream(seed, &[1])).unwrap();
        let adv = AdvantageBatch::from_sequence(Estimator::Sppo, &batch.trajectories, &advs);
        let steps: Vec<f64> = adv.values.iter().flatten().copied().collect();
        let expected = steps.iter().sum::<f64>() / steps.len() as f64;
        let mut opt = AdamState::new(&policy, AdamConfig::with_lr(1e-3));
        let settings = ClipSettings { clip_eps: eps, entropy_coef: 0.0, max_grad_norm: 0.5, normalize_advantages: false };
        let stats = clipped_policy_update(&mut policy, &mut opt, &batch, &adv, &settings).unwrap();
        prop_assert!((stats.surrogate - expected).abs() < 1e-12);
        prop_assert!((stats.mean_ratio - 1.0).abs() < 1e-12);
        prop_assert_eq!(stats.clip_fraction, 0.0);
    }
}
