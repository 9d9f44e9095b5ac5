use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use segzero::dataprep::{synth_ids, synth_sample, SynthConfig, TaskSample};
use segzero::policy::vocab::Vocabulary;
use segzero::policy::{InitConfig, NetSpec, Policy, PolicyInput};

fn small(vocab: usize, max_len: usize) -> NetSpec {
    NetSpec {
        vocab,
        embed: 3,
        hidden: 4,
        static_dim: 2,
        max_len,
        eos: None,
        grounded: false,
    }
}

fn random_init(spec: NetSpec, seed: u64) -> Policy {
    let cfg = InitConfig {
        scale: 0.8,
        syntax_prior: false,
        ..Default::default()
    };
    Policy::init(spec, seed, &cfg)
}

fn input() -> PolicyInput {
    PolicyInput::plain(vec![0.3, -1.2])
}

/// Counts must fall within three binomial standard deviations of n·p.
fn assert_within_3_sigma(counts: &[usize], probs: &[f64], n: usize) {
    for (k, (&c, &p)) in counts.iter().zip(probs).enumerate() {
        let mean = n as f64 * p;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((c as f64 - mean).abs() <= 3.0 * sd.max(1.0), "token {k}: {c} vs {mean:.1} ± {sd:.1}");
    }
}

#[test]
fn first_token_frequencies_match_probabilities() {
    let policy = random_init(small(5, 1), 3);
    let probs = policy.next_token_probs(&input(), &[]).unwrap();
    let n = 20_000;
    let mut counts = [0usize; 5];
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..n {
        counts[policy.sample(&input(), 1.0, &mut rng).unwrap().tokens[0]] += 1;
    }
    assert_within_3_sigma(&counts, &probs, n);
}

#[test]
fn conditional_frequencies_match_probabilities() {
    let policy = random_init(small(4, 2), 8);
    let first = policy.next_token_probs(&input(), &[]).unwrap();
    let prefix = (0..4).max_by(|a, b| first[*a].total_cmp(&first[*b])).unwrap();
    let probs = policy.next_token_probs(&input(), &[prefix]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut counts = [0usize; 4];
    let mut n = 0;
    while n < 10_000 {
        let r = policy.sample(&input(), 1.0, &mut rng).unwrap();
        if r.tokens[0] == prefix {
            counts[r.tokens[1]] += 1;
            n += 1;
        }
    }
    assert_within_3_sigma(&counts, &probs, n);
}

#[test]
fn temperature_sharpens_and_flattens() {
    let policy = random_init(small(6, 1), 5);
    let probs = policy.next_token_probs(&input(), &[]).unwrap();
    let best = (0..6).max_by(|a, b| probs[*a].total_cmp(&probs[*b])).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let hits = |t: f64, rng: &mut ChaCha8Rng| {
        (0..4000)
            .filter(|_| policy.sample(&input(), t, rng).unwrap().tokens[0] == best)
            .count()
    };
    let cold = hits(0.2, &mut rng);
    let warm = hits(1.0, &mut rng);
    let hot = hits(5.0, &mut rng);
    assert!(cold > warm && warm > hot, "{cold} {warm} {hot}");
}

#[test]
fn zero_parameters_give_uniform_symmetric_distributions() {
    let policy = Policy::zeros(small(7, 4));
    let uniform = -(7f64).ln();
    for prefix in [vec![], vec![3], vec![6, 0, 2]] {
        let p = policy.next_token_probs(&input(), &prefix).unwrap();
        assert!(p.iter().all(|&x| (x - 1.0 / 7.0).abs() < 1e-15));
    }
    let a = policy.log_prob(&input(), &[1, 2, 3]).unwrap();
    let b = policy.log_prob(&input(), &[6, 5, 4]).unwrap();
    assert!((a - 3.0 * uniform).abs() < 1e-12);
    assert_eq!(a, b);

    let seg = Policy::zeros(NetSpec::segmentation());
    let ids = synth_ids(1, 0, &SynthConfig::default());
    let sample = TaskSample::from_synth(&synth_sample(ids[0]).unwrap());
    let p = seg.next_token_probs(&PolicyInput::for_sample(&sample), &[]).unwrap();
    let v = Vocabulary::standard().len() as f64;
    assert!(p.iter().all(|&x| (x - 1.0 / v).abs() < 1e-15));
}

#[test]
fn single_token_vocabulary_is_certain() {
    let policy = random_init(small(1, 5), 1);
    for len in 1..=5 {
        let tokens = vec![0; len];
        assert_eq!(policy.log_prob(&input(), &tokens).unwrap(), 0.0);
        let (lp, g) = policy.grad_log_prob(&input(), &tokens).unwrap();
        assert_eq!(lp, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
    }
}

#[test]
fn empty_sequences_have_zero_gradient() {
    let policy = random_init(small(4, 3), 2);
    let (lp, g) = policy.grad_log_prob(&input(), &[]).unwrap();
    assert_eq!(lp, 0.0);
    assert!(g.iter().all(|&x| x == 0.0));
}

#[test]
fn accumulate_grad_is_linear_in_the_coefficient() {
    let policy = random_init(small(5, 4), 6);
    let tokens = [4, 0, 2, 2];
    let (_, g) = policy.grad_log_prob(&input(), &tokens).unwrap();
    let mut acc = vec![1.0; g.len()];
    policy.accumulate_grad(&input(), &tokens, -2.5, &mut acc).unwrap();
    for (a, x) in acc.iter().zip(&g) {
        assert!((a - (1.0 - 2.5 * x)).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn sequence_log_prob_is_the_sum_of_token_log_probs(
        seed in 0u64..500,
        tokens in proptest::collection::vec(0usize..6, 0..6),
    ) {
        let policy = random_init(small(6, 6), seed);
        let per = policy.token_log_probs(&input(), &tokens).unwrap();
        let total = policy.log_prob(&input(), &tokens).unwrap();
        prop_assert_eq!(per.len(), tokens.len());
        prop_assert!(per.iter().all(|&l| l <= 0.0));
        prop_assert!((per.iter().sum::<f64>() - total).abs() < 1e-12);
        for t in 0..tokens.len() {
            let p = policy.next_token_probs(&input(), &tokens[..t]).unwrap();
            prop_assert!((p[tokens[t]].ln() - per[t]).abs() < 1e-10);
        }
    }

    #[test]
    fn sampled_rollouts_rescore_to_their_recorded_log_prob(seed in 0u64..200) {
        let policy = random_init(small(5, 5), seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = policy.sample(&input(), 1.0, &mut rng).unwrap();
        let lp = policy.log_prob(&input(), &r.tokens).unwrap();
        prop_assert!((lp - r.log_prob).abs() < 1e-12);
    }

    #[test]
    fn next_token_distributions_sum_to_one(seed in 0u64..200, prefix in proptest::collection::vec(0usize..5, 0..4)) {
        let policy = random_init(small(5, 5), seed);
        let p = policy.next_token_probs(&input(), &prefix).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
