//! Markovian tree policies: one decision tree per period whose leaves carry
//! actions.
//!
//! Three ways to get one:
//! - [`solve_tree_policy_dp`]: backward induction that fits a tree at every
//!   period against the continuation values of the trees already chosen
//!   for later periods;
//! - [`naive_projection_policy`]: solve the unconstrained MDP, then fit a
//!   tree to each optimal decision rule;
//! - [`solve_otp_exact`]: exhaustive search over every per-period partition
//!   reachable by a depth-bounded tree and every leaf-action assignment.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{self, evaluate_policy, value_iteration, Decision, MarkovPolicy, MdpInstance, ValueTable};
use crate::tree::{
    fit_tree_exact, fit_tree_greedy, DecisionTree, LeafLabel, Shape, TreeDocument, WeightedDataset,
};

pub mod fixtures;

pub const TREE_POLICY_FORMAT: &str = "tree-policy-v1";

/// Limit on candidates enumerated by [`solve_otp_exact`].
pub const OTP_LIMIT: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreePolicy {
    pub trees: Vec<DecisionTree>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Learner {
    #[default]
    Greedy,
    Exact,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreePolicyConfig {
    /// Depth bound per period. A single entry applies to every period.
    pub max_depth: Vec<usize>,
    pub learner: Learner,
    pub min_leaf_size: usize,
    /// Per-period state weights for the backward pass; uniform when `None`.
    pub state_weights: Option<Vec<Vec<f64>>>,
}

impl Default for TreePolicyConfig {
    fn default() -> Self {
        TreePolicyConfig {
            max_depth: vec![2],
            learner: Learner::Greedy,
            min_leaf_size: 1,
            state_weights: None,
        }
    }
}

impl TreePolicyConfig {
    pub fn with_depths(max_depth: Vec<usize>, learner: Learner) -> Self {
        TreePolicyConfig {
            max_depth,
            learner,
            ..Default::default()
        }
    }

    pub fn depth(&self, t: usize) -> usize {
        match self.max_depth.as_slice() {
            [] => 0,
            [d] => *d,
            ds => ds.get(t).copied().unwrap_or(*ds.last().unwrap()),
        }
    }

    fn check(&self, mdp: &MdpInstance) -> Result<()> {
        if self.max_depth.len() > 1 && self.max_depth.len() != mdp.horizon() {
            return Err(Error::Structure(format!(
                "{} depth bounds for horizon {}",
                self.max_depth.len(),
                mdp.horizon()
            )));
        }
        if let Some(w) = &self.state_weights {
            let ok = w.len() == mdp.horizon()
                && w.iter().zip(&mdp.stages).all(|(row, st)| row.len() == st.num_states());
            if !ok {
                return Err(Error::Structure("state weights do not match the stage sizes".into()));
            }
            if w.iter().flatten().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::InvalidParameter("state weights must be finite and nonnegative".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TreePolicySolution {
    pub policy: TreePolicy,
    pub values: ValueTable,
    pub total_cost: f64,
}

impl TreePolicy {
    pub fn horizon(&self) -> usize {
        self.trees.len()
    }

    fn check(&self, mdp: &MdpInstance) -> Result<()> {
        if self.trees.len() != mdp.horizon() {
            return Err(Error::Structure(format!(
                "tree policy has {} periods, instance has {}",
                self.trees.len(),
                mdp.horizon()
            )));
        }
        for (t, (tree, stage)) in self.trees.iter().zip(&mdp.stages).enumerate() {
            if tree.feature_names != stage.feature_names {
                return Err(Error::Structure(format!(
                    "stage {t}: tree features {:?} differ from stage features {:?}",
                    tree.feature_names, stage.feature_names
                )));
            }
            if tree.labels.len() != stage.num_actions() {
                return Err(Error::Structure(format!(
                    "stage {t}: tree has {} actions, stage has {}",
                    tree.labels.len(),
                    stage.num_actions()
                )));
            }
        }
        Ok(())
    }

    /// Action chosen at period `t` for a feature vector.
    pub fn action(&self, t: usize, features: &[f64]) -> Result<usize> {
        self.trees
            .get(t)
            .ok_or_else(|| Error::Structure(format!("no tree for period {t}")))?
            .predict(features)
    }

    pub fn to_json(&self, mdp: Option<&MdpInstance>) -> Result<String> {
        Ok(serde_json::to_string_pretty(&TreePolicyDocument::new(self, mdp)?)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: TreePolicyDocument = serde_json::from_str(text)?;
        if doc.format != TREE_POLICY_FORMAT {
            return Err(Error::Format(format!(
                "unsupported tree policy format {:?}, expected {TREE_POLICY_FORMAT:?}",
                doc.format
            )));
        }
        Ok(TreePolicy {
            trees: doc.stages.into_iter().map(|s| s.tree.tree).collect(),
        })
    }

    /// One rendered tree per period. `stage_names` labels the sections.
    pub fn render(&self, stage_names: &[String]) -> String {
        let mut out = String::new();
        for (t, tree) in self.trees.iter().enumerate() {
            let name = stage_names.get(t).map(String::as_str).unwrap_or("");
            let _ = writeln!(out, "period {} {name}", t + 1);
            out.push_str(&tree.render());
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TreePolicyDocument {
    pub format: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
    pub stages: Vec<StagePolicy>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StagePolicy {
    pub period: usize,
    pub tree: TreeDocument,
    /// State name -> action name, when written alongside an instance.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub actions: BTreeMap<String, String>,
}

impl TreePolicyDocument {
    pub fn new(tp: &TreePolicy, mdp: Option<&MdpInstance>) -> Result<Self> {
        let expanded = match mdp {
            Some(m) => Some(expand_to_markov(m, tp)?),
            None => None,
        };
        let stages = tp
            .trees
            .iter()
            .enumerate()
            .map(|(t, tree)| {
                let mut actions = BTreeMap::new();
                if let (Some(m), Some(pi)) = (mdp, &expanded) {
                    let stage = m.stage(t);
                    for (s, d) in pi.decisions[t].iter().enumerate() {
                        if let Decision::Action(a) = d {
                            actions.insert(stage.states[s].name.clone(), stage.actions[*a].clone());
                        }
                    }
                }
                StagePolicy {
                    period: t + 1,
                    tree: TreeDocument::new(tree.clone()),
                    actions,
                }
            })
            .collect();
        Ok(TreePolicyDocument {
            format: TREE_POLICY_FORMAT.into(),
            meta: BTreeMap::new(),
            stages,
        })
    }
}

/// The Markov policy a tree policy induces on the instance's states.
pub fn expand_to_markov(mdp: &MdpInstance, tp: &TreePolicy) -> Result<MarkovPolicy> {
    tp.check(mdp)?;
    let actions = tp
        .trees
        .iter()
        .zip(&mdp.stages)
        .map(|(tree, stage)| {
            stage
                .states
                .iter()
                .map(|st| tree.predict(&st.features))
                .collect::<Result<Vec<usize>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MarkovPolicy::deterministic(actions))
}

/// True when every action has exactly the same value, so the state cannot
/// influence any leaf's choice.
fn indifferent(row: &[f64]) -> bool {
    row.windows(2).all(|w| w[0] == w[1])
}

/// Dataset over the decision-relevant states of one stage.
fn stage_dataset(mdp: &MdpInstance, t: usize, rows: Vec<Vec<f64>>, relevant: &[bool]) -> Result<WeightedDataset> {
    let stage = mdp.stage(t);
    let (points, weights): (Vec<Vec<f64>>, Vec<Vec<f64>>) = stage
        .states
        .iter()
        .zip(rows)
        .zip(relevant)
        .filter(|(_, keep)| **keep)
        .map(|((st, w), _)| (st.features.clone(), w))
        .unzip();
    WeightedDataset::new(stage.feature_names.clone(), stage.actions.clone(), points, weights)
}

fn fit_stage(mdp: &MdpInstance, t: usize, data: &WeightedDataset, cfg: &TreePolicyConfig) -> Result<DecisionTree> {
    let stage = mdp.stage(t);
    let depth = cfg.depth(t);
    if data.is_empty() {
        return Ok(DecisionTree::constant(stage.feature_names.clone(), stage.actions.clone(), 0));
    }
    match cfg.learner {
        Learner::Greedy => fit_tree_greedy(data, depth, cfg.min_leaf_size),
        Learner::Exact => fit_tree_exact(data, depth).map_err(|e| match e {
            Error::GuardExceeded { what, size, limit } => Error::GuardExceeded {
                what: format!("{what} at period {}; use the greedy learner for stages this large", t + 1),
                size,
                limit,
            },
            other => other,
        }),
    }
}

/// Backward induction over periods. At each period the tree is fitted to a
/// dataset with one point per state and weights `w_s · Q(s, a)`, where `Q`
/// uses the value function of the trees already fixed for later periods
/// and `w_s` is 1 unless `cfg.state_weights` says otherwise. States whose Q
/// row is constant are left out of the fit. The value function is then
/// updated with the fitted tree's actions.
pub fn solve_tree_policy_dp(mdp: &MdpInstance, cfg: &TreePolicyConfig) -> Result<TreePolicySolution> {
    mdp.ensure_valid()?;
    cfg.check(mdp)?;
    let h = mdp.horizon();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); h];
    let mut trees: Vec<Option<DecisionTree>> = vec![None; h];
    for t in (0..h).rev() {
        let q = mdp.q_table(t, values.get(t + 1).map(|v| v.as_slice()));
        let relevant: Vec<bool> = q.iter().map(|row| !indifferent(row)).collect();
        let rows = q
            .iter()
            .enumerate()
            .map(|(s, row)| match &cfg.state_weights {
                Some(w) => row.iter().map(|x| w[t][s] * x).collect(),
                None => row.clone(),
            })
            .collect();
        let data = stage_dataset(mdp, t, rows, &relevant)?;
        let tree = fit_stage(mdp, t, &data, cfg)?;
        values[t] = mdp
            .stage(t)
            .states
            .iter()
            .zip(&q)
            .map(|(st, row)| Ok(row[tree.predict(&st.features)?]))
            .collect::<Result<Vec<f64>>>()?;
        trees[t] = Some(tree);
    }
    let total_cost = mdp::dot(&mdp.initial, &values[0]);
    Ok(TreePolicySolution {
        policy: TreePolicy {
            trees: trees.into_iter().map(|t| t.expect("every period fitted")).collect(),
        },
        values: ValueTable { values },
        total_cost,
    })
}

/// Fits a tree to each optimal unconstrained decision rule (0/1 weights)
/// and evaluates the resulting tree policy exactly.
pub fn naive_projection_policy(mdp: &MdpInstance, cfg: &TreePolicyConfig) -> Result<(TreePolicy, f64)> {
    cfg.check(mdp)?;
    let (v_star, pi_star) = value_iteration(mdp)?;
    let actions = pi_star.actions().expect("value iteration is deterministic");
    let h = mdp.horizon();
    let mut trees = Vec::with_capacity(h);
    for t in 0..h {
        let q = mdp.q_table(t, v_star.values.get(t + 1).map(|v| v.as_slice()));
        let relevant: Vec<bool> = q.iter().map(|row| !indifferent(row)).collect();
        let k = mdp.stage(t).num_actions();
        let rows = actions[t]
            .iter()
            .map(|&a| (0..k).map(|l| if l == a { 0.0 } else { 1.0 }).collect())
            .collect();
        let data = stage_dataset(mdp, t, rows, &relevant)?;
        trees.push(fit_stage(mdp, t, &data, cfg)?);
    }
    let tp = TreePolicy { trees };
    let (_, cost) = evaluate_policy(mdp, &expand_to_markov(mdp, &tp)?)?;
    Ok((tp, cost))
}

/// A tree skeleton together with the groups of state indices reaching each
/// of its leaves.
type Partition = (Shape, Vec<Vec<usize>>);

/// Every distinct partition of `idx` induced by a tree of depth `<= depth`.
fn partitions(points: &[Vec<f64>], idx: &[usize], depth: usize, budget: &mut f64) -> Result<Vec<Partition>> {
    let mut out: Vec<Partition> = vec![(Shape::Leaf, vec![idx.to_vec()])];
    if depth == 0 || idx.len() < 2 {
        return Ok(out);
    }
    let mut seen: HashSet<Vec<Vec<usize>>> = HashSet::new();
    seen.insert(vec![idx.to_vec()]);
    let nfeat = points[idx[0]].len();
    for f in 0..nfeat {
        let mut vals: Vec<f64> = idx.iter().map(|&i| points[i][f]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let theta = w[0] + (w[1] - w[0]) / 2.0;
            let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| points[i][f] <= theta);
            let lp = partitions(points, &l, depth - 1, budget)?;
            let rp = partitions(points, &r, depth - 1, budget)?;
            for (ls, lg) in &lp {
                for (rs, rg) in &rp {
                    let mut groups: Vec<Vec<usize>> = lg.iter().chain(rg).cloned().collect();
                    let mut key = groups.clone();
                    key.sort();
                    if seen.insert(key) {
                        *budget -= 1.0;
                        if *budget < 0.0 {
                            return Err(Error::GuardExceeded {
                                what: "tree partition enumeration".into(),
                                size: OTP_LIMIT + 1.0,
                                limit: OTP_LIMIT,
                            });
                        }
                        out.push((Shape::split(f, theta, ls.clone(), rs.clone()), std::mem::take(&mut groups)));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Distinct state -> action maps achievable at one stage, each with a tree
/// that realizes it.
fn stage_candidates(mdp: &MdpInstance, t: usize, depth: usize) -> Result<Vec<(Vec<usize>, DecisionTree)>> {
    let stage = mdp.stage(t);
    let points: Vec<Vec<f64>> = stage.states.iter().map(|s| s.features.clone()).collect();
    let idx: Vec<usize> = (0..points.len()).collect();
    let mut budget = OTP_LIMIT;
    let parts = partitions(&points, &idx, depth, &mut budget)?;
    let na = stage.num_actions();

    let mut raw = 0.0;
    for (_, groups) in &parts {
        raw += (na as f64).powi(groups.len() as i32);
    }
    if raw > OTP_LIMIT {
        return Err(Error::GuardExceeded {
            what: format!("tree policy candidates at period {}", t + 1),
            size: raw,
            limit: OTP_LIMIT,
        });
    }

    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let mut out = Vec::new();
    for (shape, groups) in &parts {
        let k = groups.len();
        let mut labels = vec![0usize; k];
        loop {
            let mut map = vec![0usize; points.len()];
            for (g, &a) in groups.iter().zip(&labels) {
                for &s in g {
                    map[s] = a;
                }
            }
            if seen.insert(map.clone()) {
                // Leaves are numbered in the same depth-first order as the groups.
                let tree = DecisionTree::from_shape(
                    shape,
                    labels.iter().map(|&a| LeafLabel::Label(a)).collect(),
                    stage.feature_names.clone(),
                    stage.actions.clone(),
                    depth,
                )?;
                out.push((map, tree));
            }
            let mut i = k;
            loop {
                if i == 0 {
                    break;
                }
                i -= 1;
                labels[i] += 1;
                if labels[i] < na {
                    break;
                }
                labels[i] = 0;
            }
            if labels.iter().all(|&a| a == 0) {
                break;
            }
        }
    }
    Ok(out)
}

/// Optimal Markovian tree policy by exhaustive search.
pub fn solve_otp_exact(mdp: &MdpInstance, cfg: &TreePolicyConfig) -> Result<(TreePolicy, f64)> {
    mdp.ensure_valid()?;
    cfg.check(mdp)?;
    let h = mdp.horizon();
    let candidates = (0..h)
        .map(|t| stage_candidates(mdp, t, cfg.depth(t)))
        .collect::<Result<Vec<_>>>()?;
    let total: f64 = candidates.iter().map(|c| c.len() as f64).product();
    if total > OTP_LIMIT {
        return Err(Error::GuardExceeded {
            what: "Markovian tree policy enumeration".into(),
            size: total,
            limit: OTP_LIMIT,
        });
    }

    let mut pick = vec![0usize; h];
    let mut best: Option<(f64, Vec<usize>)> = None;
    loop {
        let policy = MarkovPolicy::deterministic(
            pick.iter().enumerate().map(|(t, &j)| candidates[t][j].0.clone()).collect(),
        );
        let (_, cost) = evaluate_policy(mdp, &policy)?;
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, pick.clone()));
        }
        let mut i = h;
        loop {
            if i == 0 {
                let (cost, pick) = best.expect("at least one candidate");
                let trees = pick.iter().enumerate().map(|(t, &j)| candidates[t][j].1.clone()).collect();
                return Ok((TreePolicy { trees }, cost));
            }
            i -= 1;
            pick[i] += 1;
            if pick[i] < candidates[i].len() {
                break;
            }
            pick[i] = 0;
        }
    }
}

/// The H=1 instance equivalent to a weighted classification problem:
/// one state per point, one action per label, cost `ω[i][ℓ]`, uniform
/// initial distribution. Its optimal cost is the optimal classification
/// error divided by the number of points.
pub fn reduce_ct_to_otp(data: &WeightedDataset) -> Result<MdpInstance> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let m = data.len();
    Ok(MdpInstance {
        stages: vec![mdp::Stage {
            name: "classification".into(),
            feature_names: data.feature_names().to_vec(),
            states: data
                .points()
                .iter()
                .enumerate()
                .map(|(i, x)| mdp::State {
                    name: format!("x{i}"),
                    features: x.clone(),
                })
                .collect(),
            actions: data.labels().to_vec(),
        }],
        kernel: vec![],
        costs: vec![data.weights().to_vec()],
        initial: vec![1.0 / m as f64; m],
    })
}

/// The weighted classification dataset of an H=1 instance: weight
/// `p1[s] · c(s, a)` per state and action.
pub fn reduce_otp_to_ct(mdp: &MdpInstance) -> Result<WeightedDataset> {
    if mdp.horizon() != 1 {
        return Err(Error::Structure(format!("expected horizon 1, got {}", mdp.horizon())));
    }
    let stage = mdp.stage(0);
    WeightedDataset::new(
        stage.feature_names.clone(),
        stage.actions.clone(),
        stage.states.iter().map(|s| s.features.clone()).collect(),
        mdp.costs[0]
            .iter()
            .zip(&mdp.initial)
            .map(|(row, p)| row.iter().map(|c| p * c).collect())
            .collect(),
    )
}
