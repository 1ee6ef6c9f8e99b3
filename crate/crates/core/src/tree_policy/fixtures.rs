//! Small instances on which tree policies provably lose something.

use crate::mdp::{MdpInstance, Stage, State};

use super::{Learner, TreePolicyConfig};

/// A named instance, the depth bounds under which it is interesting, and
/// values known by hand.
#[derive(Clone, Debug)]
pub struct Fixture {
    pub name: &'static str,
    pub mdp: MdpInstance,
    pub config: TreePolicyConfig,
    pub facts: Facts,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Facts {
    /// Optimal cost without the tree constraint.
    pub unconstrained_cost: f64,
    /// Optimal cost over Markovian tree policies under `config`.
    pub tree_cost: f64,
    /// Actions of the optimal tree policy (lowest action index on ties).
    pub tree_actions: Vec<Vec<usize>>,
    /// Optimal cost of a tree policy allowed to depend on the history,
    /// when it differs from the Markovian one.
    pub history_cost: Option<f64>,
}

fn stage(name: &str, states: &[&str], actions: &[&str]) -> Stage {
    Stage {
        name: name.into(),
        feature_names: vec!["index".into()],
        states: states
            .iter()
            .enumerate()
            .map(|(i, s)| State {
                name: (*s).into(),
                features: vec![i as f64],
            })
            .collect(),
        actions: actions.iter().map(|a| (*a).into()).collect(),
    }
}

/// One period, two states, and a single leaf: the best shared action
/// depends on the initial distribution, so no single tree is optimal for
/// every starting state.
pub fn initial_distribution_fixture(initial: [f64; 2]) -> MdpInstance {
    MdpInstance {
        stages: vec![stage("t1", &["s1", "s2"], &["a1", "a2"])],
        kernel: vec![],
        costs: vec![vec![vec![0.0, 10.0], vec![10.0, 0.0]]],
        initial: initial.to_vec(),
    }
}

/// Two periods. The period-2 tree is a single leaf, so states `s3` and
/// `s4` must share an action, although `s3` wants `a3` and `s4` wants
/// `a2`. A policy that remembers which first-period state it came from
/// can avoid every cost.
pub fn history_fixture() -> MdpInstance {
    MdpInstance {
        stages: vec![
            stage("t1", &["s1", "s1'"], &["a1"]),
            stage("t2", &["s2", "s3", "s4"], &["a2", "a3"]),
        ],
        kernel: vec![vec![vec![vec![0.1, 0.9, 0.0]], vec![vec![0.1, 0.0, 0.9]]]],
        costs: vec![
            vec![vec![0.0], vec![0.0]],
            vec![vec![0.0, 0.0], vec![10.0, 0.0], vec![0.0, 10.0]],
        ],
        initial: vec![0.5, 0.5],
    }
}

pub fn counterexample_fixtures() -> Vec<Fixture> {
    let leaf_only = |h: usize| TreePolicyConfig::with_depths(vec![0; h], Learner::Exact);
    vec![
        Fixture {
            name: "initial-distribution-s1",
            mdp: initial_distribution_fixture([1.0, 0.0]),
            config: leaf_only(1),
            facts: Facts {
                unconstrained_cost: 0.0,
                tree_cost: 0.0,
                tree_actions: vec![vec![0, 0]],
                history_cost: None,
            },
        },
        Fixture {
            name: "initial-distribution-s2",
            mdp: initial_distribution_fixture([0.0, 1.0]),
            config: leaf_only(1),
            facts: Facts {
                unconstrained_cost: 0.0,
                tree_cost: 0.0,
                tree_actions: vec![vec![1, 1]],
                history_cost: None,
            },
        },
        Fixture {
            name: "history-dependence",
            mdp: history_fixture(),
            config: leaf_only(2),
            facts: Facts {
                unconstrained_cost: 0.0,
                tree_cost: 4.5,
                tree_actions: vec![vec![0, 0], vec![0, 0, 0]],
                history_cost: Some(0.0),
            },
        },
    ]
}
