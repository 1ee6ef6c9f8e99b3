use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use treepolicy::mdp::{random_instance, value_iteration, MdpInstance, RandomShape};
use treepolicy::tree::{classification_cost, fit_tree_exact, WeightedDataset};
use treepolicy::tree_policy::fixtures::counterexample_fixtures;
use treepolicy::tree_policy::{
    naive_projection_policy, reduce_ct_to_otp, solve_otp_exact, solve_tree_policy_dp, Learner, TreePolicyConfig,
};
use treepolicy::Error;

fn vi_cost(m: &MdpInstance) -> f64 {
    let (v, _) = value_iteration(m).unwrap();
    m.initial.iter().zip(v.stage(0)).map(|(p, x)| p * x).sum()
}

fn ct_instance(seed: u64) -> WeightedDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=8);
    let k = rng.random_range(2..=3);
    WeightedDataset::new(
        vec!["f0".into(), "f1".into()],
        (0..k).map(|l| format!("y{l}")).collect(),
        (0..n).map(|_| vec![rng.random_range(0..4) as f64, rng.random_range(0..4) as f64]).collect(),
        (0..n).map(|_| (0..k).map(|_| rng.random_range(0..6) as f64).collect()).collect(),
    )
    .unwrap()
}

#[test]
fn classification_round_trip() {
    for seed in 0..50 {
        let data = ct_instance(seed);
        for depth in 1..=2 {
            let m = reduce_ct_to_otp(&data).unwrap();
            let (_, otp) = solve_otp_exact(&m, &TreePolicyConfig::with_depths(vec![depth], Learner::Exact)).unwrap();
            let ct = classification_cost(&fit_tree_exact(&data, depth).unwrap(), &data).unwrap();
            assert!((otp * data.len() as f64 - ct).abs() <= 1e-9, "seed {seed} depth {depth}");
        }
    }
}

/// Exact OTP where the enumeration guard allows it.
fn guarded_otp(m: &MdpInstance, cfg: &TreePolicyConfig) -> Option<f64> {
    match solve_otp_exact(m, cfg) {
        Ok((_, c)) => Some(c),
        Err(Error::GuardExceeded { .. }) => None,
        Err(e) => panic!("{e}"),
    }
}

#[test]
fn constrained_dominance() {
    let mut checked = 0;
    for seed in 0..200 {
        let m = random_instance(seed, RandomShape::default());
        let vi = vi_cost(&m);
        for depth in 0..=1 {
            for learner in [Learner::Greedy, Learner::Exact] {
                let cfg = TreePolicyConfig::with_depths(vec![depth], learner);
                let dp = solve_tree_policy_dp(&m, &cfg).unwrap().total_cost;
                let (_, naive) = naive_projection_policy(&m, &cfg).unwrap();
                assert!(dp >= vi - 1e-9 && naive >= vi - 1e-9, "seed {seed}");
                if let Some(otp) = guarded_otp(&m, &cfg) {
                    assert!(otp <= dp.min(naive) + 1e-9, "seed {seed} depth {depth}");
                    assert!(otp >= vi - 1e-9, "seed {seed}");
                    checked += 1;
                }
            }
        }
    }
    assert!(checked > 300, "only {checked} guarded instances");
}

#[test]
fn isolating_depth_equals_value_iteration() {
    for seed in 0..200 {
        let m = random_instance(seed, RandomShape::default());
        let sol = solve_tree_policy_dp(&m, &TreePolicyConfig::with_depths(vec![2], Learner::Exact)).unwrap();
        assert!((sol.total_cost - vi_cost(&m)).abs() <= 1e-9, "seed {seed}");
    }
}

/// One period with a uniform initial distribution over 1, 2 or 4 states.
fn one_period(seed: u64) -> MdpInstance {
    let mut m = random_instance(seed, RandomShape { max_horizon: 1, ..RandomShape::default() });
    let n = [1, 2, 4][(seed % 3) as usize];
    let stage = &mut m.stages[0];
    while stage.states.len() < n {
        let i = stage.states.len();
        let mut s = stage.states[0].clone();
        s.name = format!("extra{i}");
        s.features[0] = i as f64;
        s.features[1] = (seed + i as u64) as f64 % 4.0;
        stage.states.push(s);
        let row = m.costs[0][0].iter().map(|c| (c + i as f64 * 3.0) % 10.0).collect();
        m.costs[0].push(row);
    }
    stage.states.truncate(n);
    m.costs[0].truncate(n);
    m.initial = vec![1.0 / n as f64; n];
    m.ensure_valid().unwrap();
    m
}

#[test]
fn one_period_dp_equals_exact_otp() {
    for seed in 0..60 {
        let m = one_period(seed);
        for depth in 0..=2 {
            let cfg = TreePolicyConfig::with_depths(vec![depth], Learner::Exact);
            let dp = solve_tree_policy_dp(&m, &cfg).unwrap().total_cost;
            let (_, otp) = solve_otp_exact(&m, &cfg).unwrap();
            assert_eq!(dp, otp, "seed {seed} depth {depth}");
        }
    }
}

#[test]
fn fixtures_hold() {
    for f in counterexample_fixtures() {
        assert!((vi_cost(&f.mdp) - f.facts.unconstrained_cost).abs() < 1e-12, "{}", f.name);
        let (tp, c) = solve_otp_exact(&f.mdp, &f.config).unwrap();
        assert!((c - f.facts.tree_cost).abs() < 1e-12, "{}", f.name);
        let acts = treepolicy::tree_policy::expand_to_markov(&f.mdp, &tp).unwrap().actions().unwrap();
        assert_eq!(acts, f.facts.tree_actions, "{}", f.name);
    }
}

proptest! {
    #[test]
    fn dp_cost_is_the_cost_of_its_policy(seed in 0u64..10_000, depth in 0usize..3) {
        let m = random_instance(seed, RandomShape::default());
        let sol = solve_tree_policy_dp(&m, &TreePolicyConfig::with_depths(vec![depth], Learner::Greedy)).unwrap();
        let pi = treepolicy::tree_policy::expand_to_markov(&m, &sol.policy).unwrap();
        let (_, c) = treepolicy::mdp::evaluate_policy(&m, &pi).unwrap();
        prop_assert!((c - sol.total_cost).abs() <= 1e-9);
        prop_assert!(c >= vi_cost(&m) - 1e-9);
    }
}
