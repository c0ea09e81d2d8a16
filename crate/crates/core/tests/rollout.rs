use gpo_core::envs::{EnvConfig, EnvPool};
use gpo_core::nn::{Head, NetShape, PolicyNet};
use gpo_core::rollout::{gae, minibatches, reward_to_go, Behavior, Collector, ValueInput};
use gpo_core::verify::gae_direct_sum;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Streams built from whole episodes with the last step terminal.
fn terminal_stream() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<bool>)> {
    (1usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(-5.0..5.0f64, n),
            prop::collection::vec(-5.0..5.0f64, n),
            prop::collection::vec(prop::bool::weighted(0.15), n),
        )
            .prop_map(|(r, v, mut d)| {
                *d.last_mut().unwrap() = true;
                (r, v, d)
            })
    })
}

fn any_stream() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<bool>, f64)> {
    (1usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(-5.0..5.0f64, n),
            prop::collection::vec(-5.0..5.0f64, n),
            prop::collection::vec(prop::bool::weighted(0.15), n),
            -5.0..5.0f64,
        )
    })
}

/// Discounted return from each step written as an explicit forward sum.
fn monte_carlo(rewards: &[f64], dones: &[bool], gamma: f64) -> Vec<f64> {
    (0..rewards.len())
        .map(|t| {
            let mut g = 0.0;
            let mut w = 1.0;
            for l in t..rewards.len() {
                g += w * rewards[l];
                if dones[l] {
                    break;
                }
                w *= gamma;
            }
            g
        })
        .collect()
}

proptest! {
    #[test]
    fn gae_lambda_one_is_monte_carlo_minus_value((r, v, d) in terminal_stream(), gamma in 0.0..1.0f64) {
        let adv = gae(&r, &v, &d, 123.0, gamma, 1.0);
        let mc = monte_carlo(&r, &d, gamma);
        for t in 0..r.len() {
            prop_assert!((adv[t] - (mc[t] - v[t])).abs() < 1e-10);
        }
    }

    #[test]
    fn gae_matches_direct_sum((r, v, d, boot) in any_stream(), gamma in 0.0..1.0f64, lambda in 0.0..1.0f64) {
        let fast = gae(&r, &v, &d, boot, gamma, lambda);
        let slow = gae_direct_sum(&r, &v, &d, boot, gamma, lambda);
        for t in 0..r.len() {
            prop_assert!((fast[t] - slow[t]).abs() < 1e-12, "t={} {} vs {}", t, fast[t], slow[t]);
        }
    }

    #[test]
    fn returns_are_advantages_plus_values_at_lambda_one((r, v, d, boot) in any_stream(), gamma in 0.0..1.0f64) {
        let adv = gae(&r, &v, &d, boot, gamma, 1.0);
        let ret = reward_to_go(&r, &d, boot, gamma);
        for t in 0..r.len() {
            prop_assert!((ret[t] - adv[t] - v[t]).abs() < 1e-10);
        }
    }

    #[test]
    fn minibatches_partition_each_epoch(n in 1usize..300, m in 1usize..9, epochs in 1usize..4, seed: u64) {
        prop_assume!(n >= m);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let parts = minibatches(n, m, epochs, &mut rng);
        prop_assert_eq!(parts.len(), m * epochs);
        let kept = (n / m) * m;
        for epoch in parts.chunks(m) {
            let mut all: Vec<usize> = epoch.iter().flatten().copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..kept).collect::<Vec<_>>());
        }
    }
}

fn setup(env: EnvConfig, n_envs: usize) -> (PolicyNet, gpo_core::nn::ParamVector, Collector) {
    let pool = EnvPool::new(&env, n_envs, 5, 1).unwrap();
    let spec = pool.spec();
    let net = PolicyNet::new(spec.state_dim, spec.obs_dim, spec.action_space.head(), &NetShape::default(), false).unwrap();
    let params = net.init(&mut ChaCha8Rng::seed_from_u64(1));
    (net, params, Collector::new(pool))
}

#[test]
fn batch_layout_and_inputs() {
    let (net, params, mut col) = setup(EnvConfig::TigerDoor, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let batch = col.collect(&net, &params, Behavior::Guider, ValueInput::Guider, 7, &mut rng).unwrap();
    assert_eq!(batch.len(), 21);
    assert_eq!(batch.guider_obs.nrows(), 21);
    assert_eq!(batch.bootstrap.len(), 3);
    for i in 0..batch.len() {
        let g = batch.guider_obs.row(i);
        let l = batch.learner_obs.row(i);
        // [s, o, 1] versus [0, o, 0]
        assert_eq!(g[5], 1.0);
        assert_eq!(l[5], 0.0);
        assert_eq!(l[0], 0.0);
        assert_eq!(l[1], 0.0);
        assert_eq!(g.slice(ndarray::s![2..5]), l.slice(ndarray::s![2..5]));
    }
}

#[test]
fn recorded_log_probs_recompute_exactly() {
    for behavior in [Behavior::Guider, Behavior::Learner] {
        let (net, params, mut col) = setup(EnvConfig::NoisyMaskedNav { sigma: 0.2 }, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch = col.collect(&net, &params, behavior, ValueInput::Learner, 10, &mut rng).unwrap();
        let inputs = if behavior == Behavior::Guider { &batch.guider_obs } else { &batch.learner_obs };
        let dists = net.policy_dists(&params, inputs.view()).unwrap();
        for (i, d) in dists.iter().enumerate() {
            assert_eq!(d.log_prob(&batch.actions.get(i)).unwrap(), batch.behavior_logprob[i]);
        }
    }
}

#[test]
fn episodes_continue_across_collections() {
    let (net, params, mut col) = setup(EnvConfig::RepeatPrevious { k: 2 }, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut finished = 0;
    let mut dones = 0;
    for _ in 0..5 {
        let b = col.collect(&net, &params, Behavior::Learner, ValueInput::Learner, 20, &mut rng).unwrap();
        finished += b.episode_returns.len();
        dones += b.dones.iter().filter(|&&d| d).count();
    }
    // 200 steps over 2 envs at 32 steps per episode
    assert_eq!(finished, 6);
    assert_eq!(dones, finished);
}

#[test]
fn collection_is_reproducible() {
    let run = || {
        let (net, params, mut col) = setup(EnvConfig::TigerDoor, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        col.collect(&net, &params, Behavior::Mixture(0.5), ValueInput::Mixture(0.5), 12, &mut rng).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.actions, b.actions);
    assert_eq!(a.rewards, b.rewards);
    assert_eq!(a.behavior_logprob, b.behavior_logprob);
    assert_eq!(a.values, b.values);
}

#[test]
#[should_panic]
fn zero_minibatches_is_a_contract_violation() {
    minibatches(10, 0, 1, &mut ChaCha8Rng::seed_from_u64(0));
}

#[test]
fn head_follows_action_space() {
    let pool = EnvPool::new(&EnvConfig::NoisyMaskedNav { sigma: 0.1 }, 1, 0, 1).unwrap();
    assert!(matches!(pool.spec().action_space.head(), Head::DiagGaussian { action_dim: 2 }));
}
