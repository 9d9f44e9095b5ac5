use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use segzero::dataprep::{synth_ids, synth_sample, SynthConfig, TaskSample};
use segzero::grpo::{compute_advantages, grpo_objective, train, BanditTask, RolloutGroup, SegTask, Task, TrainConfig, Trainer};
use segzero::policy::{InitConfig, NetSpec, Policy, PolicyInput, Rollout};
use segzero::rewards::{RewardConfig, RewardVector};

fn bandit_policy(seed: u64) -> Policy {
    Policy::init(NetSpec::bandit(2), seed, &InitConfig::default())
}

fn rollout(policy: &Policy, input: &PolicyInput, tokens: Vec<usize>) -> Rollout {
    let per = policy.token_log_probs(input, &tokens).unwrap();
    Rollout {
        log_prob: per.iter().sum(),
        token_log_probs: per,
        text: String::new(),
        truncated: false,
        tokens,
    }
}

/// Two rollouts of each bandit arm; arm 1 is rewarded.
fn handmade_group(policy: &Policy, input: &PolicyInput) -> RolloutGroup {
    let arms = [0, 1, 1, 0];
    let rollouts: Vec<Rollout> = arms.iter().map(|&a| rollout(policy, input, vec![a])).collect();
    let totals: Vec<f64> = arms.iter().map(|&a| a as f64).collect();
    RolloutGroup {
        input: 0,
        rewards: totals.iter().map(|&t| RewardVector::from_components([0.0, 0.0, t, 0.0, 0.0])).collect(),
        advantages: compute_advantages(&totals, 1e-4),
        old_log_probs: rollouts.iter().map(|r| r.log_prob).collect(),
        ref_log_probs: rollouts.iter().map(|r| r.log_prob).collect(),
        rollouts,
    }
}

#[test]
fn clipping_is_inactive_at_the_sampling_parameters() {
    let policy = bandit_policy(1);
    let task = BanditTask::new(1);
    let group = handmade_group(&policy, task.input(0));
    let tight = grpo_objective(&group, task.input(0), &policy, 0.01, 0.04).unwrap();
    let loose = grpo_objective(&group, task.input(0), &policy, 0.99, 0.04).unwrap();
    assert_eq!(tight, loose);
}

#[test]
fn kl_to_itself_is_zero() {
    let policy = bandit_policy(2);
    let task = BanditTask::new(1);
    let group = handmade_group(&policy, task.input(0));
    let obj = grpo_objective(&group, task.input(0), &policy, 0.2, 0.04).unwrap();
    assert_eq!(obj.kl, 0.0);
    // advantages average to zero, so the loss vanishes at ratio one
    assert!(obj.loss.abs() < 1e-12);
}

#[test]
fn one_small_step_raises_the_rewarded_arm() {
    let policy = bandit_policy(3);
    let task = BanditTask::new(1);
    let input = task.input(0);
    let group = handmade_group(&policy, input);
    let obj = grpo_objective(&group, input, &policy, 0.2, 0.0).unwrap();
    let mut next = policy.clone();
    for (p, g) in next.params.iter_mut().zip(&obj.grad) {
        *p -= 0.05 * g;
    }
    let before = policy.next_token_probs(input, &[]).unwrap()[1];
    let after = next.next_token_probs(input, &[]).unwrap()[1];
    assert!(after > before, "{before} -> {after}");
    let moved = grpo_objective(&group, input, &next, 0.2, 0.0).unwrap();
    assert!(moved.loss < obj.loss);
}

#[test]
fn ratios_outside_the_trust_region_stop_pushing() {
    let policy = bandit_policy(4);
    let task = BanditTask::new(1);
    let input = task.input(0);
    let mut group = handmade_group(&policy, input);
    // pretend the sampler was far less likely to pick the rewarded arm
    for i in [1, 2] {
        group.old_log_probs[i] -= 1.0;
    }
    let clipped = grpo_objective(&group, input, &policy, 0.2, 0.0).unwrap();
    // with only the unrewarded rollouts contributing, the gradient must match
    // that of a group where the rewarded ones carry no advantage
    let mut reduced = group.clone();
    for i in [1, 2] {
        reduced.advantages[i] = 0.0;
    }
    let expected = grpo_objective(&reduced, input, &policy, 0.2, 0.0).unwrap();
    for (a, b) in clipped.grad.iter().zip(&expected.grad) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn training_is_deterministic_per_seed() {
    let ids = synth_ids(6, 3, &SynthConfig::default());
    let samples: Vec<TaskSample> = ids.iter().map(|&id| TaskSample::from_synth(&synth_sample(id).unwrap())).collect();
    let task = SegTask::new(samples, RewardConfig::default());
    let run = |seed: u64| {
        let cfg = TrainConfig {
            steps: 4,
            seed,
            ..Default::default()
        };
        let init = Policy::init(NetSpec::segmentation(), 0, &InitConfig::default());
        train(&cfg, &task, init, None, None).unwrap()
    };
    let (a, b, c) = (run(5), run(5), run(6));
    assert_eq!(a.log, b.log);
    assert_eq!(a.policy, b.policy);
    assert_ne!(a.log, c.log);
}

#[test]
fn zero_learning_rate_leaves_parameters_alone() {
    let task = BanditTask::new(0);
    let init = bandit_policy(7);
    let cfg = TrainConfig {
        steps: 5,
        learning_rate: 0.0,
        ..Default::default()
    };
    let out = train(&cfg, &task, init.clone(), None, None).unwrap();
    assert_eq!(out.policy, init);
    assert!(out.log.iter().all(|r| r.kl == 0.0));
}

#[test]
fn bandit_expected_reward_rises_across_every_100_step_window() {
    for seed in 0..3 {
        let task = BanditTask::new(1);
        let cfg = TrainConfig {
            learning_rate: 0.01,
            seed,
            ..Default::default()
        };
        let mut tr = Trainer::new(cfg, bandit_policy(seed)).unwrap();
        let p = |t: &Trainer| t.policy.next_token_probs(task.input(0), &[]).unwrap()[1];
        let mut curve = vec![p(&tr)];
        for _ in 0..500 {
            tr.train_step(&task).unwrap();
            curve.push(p(&tr));
        }
        for t in 0..=400 {
            assert!(curve[t + 100] > curve[t], "seed {seed}, step {t}: {} -> {}", curve[t], curve[t + 100]);
        }
    }
}

#[test]
fn group_rewards_match_task_scores() {
    let task = BanditTask::new(1);
    let cfg = TrainConfig {
        group_size: 16,
        seed: 9,
        ..Default::default()
    };
    let mut tr = Trainer::new(cfg, bandit_policy(9)).unwrap();
    let g = tr.sample_group(&task, 0).unwrap();
    assert_eq!(g.len(), 16);
    for (r, v) in g.rollouts.iter().zip(&g.rewards) {
        assert_eq!(*v, task.score(0, r));
        assert!((tr.policy.log_prob(task.input(0), &r.tokens).unwrap() - r.log_prob).abs() < 1e-12);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let _ = tr.policy.sample(task.input(0), 1.0, &mut rng).unwrap();
}

proptest! {
    #[test]
    fn advantages_are_standardised(rewards in proptest::collection::vec(-5.0f64..5.0, 2..16)) {
        let a = compute_advantages(&rewards, 1e-4);
        let n = a.len() as f64;
        let mean = a.iter().sum::<f64>() / n;
        prop_assert!(mean.abs() < 1e-9);
        let r_mean = rewards.iter().sum::<f64>() / n;
        let sd = (rewards.iter().map(|r| (r - r_mean).powi(2)).sum::<f64>() / n).sqrt();
        let a_sd = (a.iter().map(|x| x * x).sum::<f64>() / n).sqrt();
        prop_assert!((a_sd - sd / (sd + 1e-4)).abs() < 1e-9);
    }

    #[test]
    fn advantages_ignore_shifts(rewards in proptest::collection::vec(0.0f64..3.0, 2..10), shift in -10.0f64..10.0) {
        let a = compute_advantages(&rewards, 1e-4);
        let shifted: Vec<f64> = rewards.iter().map(|r| r + shift).collect();
        let b = compute_advantages(&shifted, 1e-4);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn equal_rewards_give_zero_advantages(r in -3.0f64..3.0, n in 2usize..10) {
        prop_assert!(compute_advantages(&vec![r; n], 1e-4).iter().all(|&a| a.abs() < 1e-9));
    }
}
