//! Finite-horizon staged MDPs.
//!
//! Periods are indexed `0..horizon`. Each period owns its own state set, so
//! the state sets are disjoint by construction and kernels/costs need no
//! separate time index: `kernel[t][s][a]` is a distribution over the states
//! of period `t + 1`, and `costs[t][s][a]` is the cost of playing `a` in
//! state `s` of period `t`. The last period has no kernel rows.
//!
//! Everything here minimizes expected cumulative cost.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance used for every probability-sum check.
pub const PROB_TOL: f64 = 1e-9;

/// Limit on the number of deterministic Markov policies the oracle will enumerate.
pub const ENUMERATION_LIMIT: f64 = 1e6;

pub const MDP_FORMAT: &str = "mdp-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub name: String,
    pub features: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub feature_names: Vec<String>,
    pub states: Vec<State>,
    pub actions: Vec<String>,
}

impl Stage {
    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn action_index(&self, name: &str) -> Option<usize> {
        self.actions.iter().position(|a| a == name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdpInstance {
    pub stages: Vec<Stage>,
    pub kernel: Vec<Vec<Vec<Vec<f64>>>>,
    pub costs: Vec<Vec<Vec<f64>>>,
    pub initial: Vec<f64>,
}

/// Where an invariant violation was found.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Location {
    Instance,
    Initial,
    Stage { t: usize },
    State { t: usize, s: usize },
    Entry { t: usize, s: usize, a: usize },
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Instance => write!(f, "instance"),
            Location::Initial => write!(f, "initial distribution"),
            Location::Stage { t } => write!(f, "t={t}"),
            Location::State { t, s } => write!(f, "t={t} s={s}"),
            Location::Entry { t, s, a } => write!(f, "t={t} s={s} a={a}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub location: Location,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.rule)
    }
}

/// `values[t][s]`: expected cost-to-go from state `s` of period `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    pub values: Vec<Vec<f64>>,
}

impl ValueTable {
    pub fn get(&self, t: usize, s: usize) -> f64 {
        self.values[t][s]
    }

    pub fn stage(&self, t: usize) -> &[f64] {
        &self.values[t]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Decision {
    Action(usize),
    Mixed(Vec<f64>),
}

impl Decision {
    /// Probability of playing `a`.
    pub fn prob(&self, a: usize) -> f64 {
        match self {
            Decision::Action(x) => {
                if *x == a {
                    1.0
                } else {
                    0.0
                }
            }
            Decision::Mixed(row) => row.get(a).copied().unwrap_or(0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkovPolicy {
    pub decisions: Vec<Vec<Decision>>,
}

impl MarkovPolicy {
    pub fn deterministic(actions: Vec<Vec<usize>>) -> Self {
        MarkovPolicy {
            decisions: actions
                .into_iter()
                .map(|row| row.into_iter().map(Decision::Action).collect())
                .collect(),
        }
    }

    /// The chosen action per state, or `None` if any decision is randomized.
    pub fn actions(&self) -> Option<Vec<Vec<usize>>> {
        self.decisions
            .iter()
            .map(|row| {
                row.iter()
                    .map(|d| match d {
                        Decision::Action(a) => Some(*a),
                        Decision::Mixed(_) => None,
                    })
                    .collect()
            })
            .collect()
    }
}

impl MdpInstance {
    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    pub fn stage(&self, t: usize) -> &Stage {
        &self.stages[t]
    }

    /// Lists every broken invariant; empty iff the instance is well formed.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let h = self.stages.len();
        let mut push = |location: Location, rule: String| out.push(Violation { location, rule });

        if h == 0 {
            push(Location::Instance, "horizon must be at least 1".into());
            return out;
        }
        if self.costs.len() != h {
            push(
                Location::Instance,
                format!("cost table has {} periods, expected {h}", self.costs.len()),
            );
        }
        if self.kernel.len() != h - 1 {
            push(
                Location::Instance,
                format!("kernel has {} periods, expected {}", self.kernel.len(), h - 1),
            );
        }

        for (t, stage) in self.stages.iter().enumerate() {
            if stage.states.is_empty() {
                push(Location::Stage { t }, "stage has no states".into());
            }
            if stage.actions.is_empty() {
                push(Location::Stage { t }, "stage has no actions".into());
            }
            for (s, st) in stage.states.iter().enumerate() {
                if st.features.len() != stage.feature_names.len() {
                    push(
                        Location::State { t, s },
                        format!(
                            "feature vector has length {}, schema has {}",
                            st.features.len(),
                            stage.feature_names.len()
                        ),
                    );
                }
            }

            if let Some(cost_rows) = self.costs.get(t) {
                if cost_rows.len() != stage.num_states() {
                    push(
                        Location::Stage { t },
                        format!("{} cost rows for {} states", cost_rows.len(), stage.num_states()),
                    );
                }
                for (s, row) in cost_rows.iter().enumerate() {
                    if row.len() != stage.num_actions() {
                        push(
                            Location::State { t, s },
                            format!("{} costs for {} actions", row.len(), stage.num_actions()),
                        );
                    }
                    for (a, c) in row.iter().enumerate() {
                        if !c.is_finite() {
                            push(Location::Entry { t, s, a }, format!("cost {c} is not finite"));
                        }
                    }
                }
            }

            if t + 1 < h {
                let Some(rows) = self.kernel.get(t) else { continue };
                let next = self.stages[t + 1].num_states();
                if rows.len() != stage.num_states() {
                    push(
                        Location::Stage { t },
                        format!("{} kernel blocks for {} states", rows.len(), stage.num_states()),
                    );
                }
                for (s, per_action) in rows.iter().enumerate() {
                    if per_action.len() != stage.num_actions() {
                        push(
                            Location::State { t, s },
                            format!(
                                "{} kernel rows for {} actions",
                                per_action.len(),
                                stage.num_actions()
                            ),
                        );
                    }
                    for (a, row) in per_action.iter().enumerate() {
                        let loc = Location::Entry { t, s, a };
                        if row.len() != next {
                            push(
                                loc.clone(),
                                format!("kernel row has {} entries, next stage has {next} states", row.len()),
                            );
                        }
                        if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                            push(loc.clone(), "kernel row has a negative or non-finite entry".into());
                        }
                        let sum: f64 = row.iter().sum();
                        if (sum - 1.0).abs() > PROB_TOL {
                            push(loc, format!("kernel row sums to {sum}"));
                        }
                    }
                }
            }
        }

        if self.initial.len() != self.stages[0].num_states() {
            push(
                Location::Initial,
                format!(
                    "initial distribution has {} entries for {} states",
                    self.initial.len(),
                    self.stages[0].num_states()
                ),
            );
        }
        if self.initial.iter().any(|p| !p.is_finite() || *p < 0.0) {
            push(Location::Initial, "negative or non-finite probability".into());
        }
        let sum: f64 = self.initial.iter().sum();
        if (sum - 1.0).abs() > PROB_TOL {
            push(Location::Initial, format!("initial distribution sums to {sum}"));
        }
        out
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidMdp(v))
        }
    }

    /// `c(t,s,a) + Σ_s' P(s'|s,a) next[s']`; `next` is ignored in the last period.
    pub fn q_value(&self, t: usize, s: usize, a: usize, next: Option<&[f64]>) -> f64 {
        let c = self.costs[t][s][a];
        match next {
            Some(v) if t + 1 < self.horizon() => {
                let row = &self.kernel[t][s][a];
                c + row.iter().zip(v).map(|(p, x)| p * x).sum::<f64>()
            }
            _ => c,
        }
    }

    /// Q-values of every action in every state of period `t`.
    pub fn q_table(&self, t: usize, next: Option<&[f64]>) -> Vec<Vec<f64>> {
        let stage = &self.stages[t];
        (0..stage.num_states())
            .map(|s| (0..stage.num_actions()).map(|a| self.q_value(t, s, a, next)).collect())
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        MdpDocument::new(self.clone()).to_json()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(MdpDocument::from_json(text)?.mdp)
    }
}

/// Versioned on-disk representation of an [`MdpInstance`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdpDocument {
    pub format: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
    #[serde(flatten)]
    pub mdp: MdpInstance,
}

impl MdpDocument {
    pub fn new(mdp: MdpInstance) -> Self {
        MdpDocument {
            format: MDP_FORMAT.to_string(),
            meta: BTreeMap::new(),
            mdp,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MdpDocument = serde_json::from_str(text)?;
        if doc.format != MDP_FORMAT {
            return Err(Error::Format(format!(
                "unsupported MDP format {:?}, expected {MDP_FORMAT:?}",
                doc.format
            )));
        }
        Ok(doc)
    }
}

fn check_policy_shape(mdp: &MdpInstance, policy: &MarkovPolicy) -> Result<()> {
    if policy.decisions.len() != mdp.horizon() {
        return Err(Error::Structure(format!(
            "policy has {} periods, instance has {}",
            policy.decisions.len(),
            mdp.horizon()
        )));
    }
    for (t, (row, stage)) in policy.decisions.iter().zip(&mdp.stages).enumerate() {
        if row.len() != stage.num_states() {
            return Err(Error::Structure(format!(
                "stage {t}: policy covers {} states, stage has {}",
                row.len(),
                stage.num_states()
            )));
        }
        for (s, d) in row.iter().enumerate() {
            match d {
                Decision::Action(a) if *a >= stage.num_actions() => {
                    return Err(Error::Structure(format!(
                        "stage {t} state {s}: action {a} out of range ({} actions)",
                        stage.num_actions()
                    )));
                }
                Decision::Mixed(p) => {
                    if p.len() != stage.num_actions() {
                        return Err(Error::Structure(format!(
                            "stage {t} state {s}: randomized row over {} actions, stage has {}",
                            p.len(),
                            stage.num_actions()
                        )));
                    }
                    let sum: f64 = p.iter().sum();
                    if (sum - 1.0).abs() > PROB_TOL || p.iter().any(|x| *x < 0.0) {
                        return Err(Error::Structure(format!(
                            "stage {t} state {s}: randomized row is not a distribution (sum {sum})"
                        )));
                    }
                }
                _ => {}
            }
        }
    }
    Ok(())
}

/// Backward recursion for a fixed Markov policy. Returns the value table and
/// the total expected cost `p1 · v_0`.
pub fn evaluate_policy(mdp: &MdpInstance, policy: &MarkovPolicy) -> Result<(ValueTable, f64)> {
    check_policy_shape(mdp, policy)?;
    let h = mdp.horizon();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); h];
    for t in (0..h).rev() {
        let next = values.get(t + 1).map(|v| v.as_slice());
        let stage = &mdp.stages[t];
        let v_t = (0..stage.num_states())
            .map(|s| match &policy.decisions[t][s] {
                Decision::Action(a) => mdp.q_value(t, s, *a, next),
                Decision::Mixed(p) => p
                    .iter()
                    .enumerate()
                    .filter(|(_, w)| **w != 0.0)
                    .map(|(a, w)| w * mdp.q_value(t, s, a, next))
                    .sum(),
            })
            .collect();
        values[t] = v_t;
    }
    let total = dot(&mdp.initial, &values[0]);
    Ok((ValueTable { values }, total))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Index of the smallest entry; ties go to the lowest index.
pub(crate) fn argmin(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate().skip(1) {
        if *x < xs[best] {
            best = i;
        }
    }
    best
}

/// Solves the Bellman optimality recursion. The returned policy is
/// deterministic and picks the lowest-index minimizer in every state.
pub fn value_iteration(mdp: &MdpInstance) -> Result<(ValueTable, MarkovPolicy)> {
    mdp.ensure_valid()?;
    let h = mdp.horizon();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); h];
    let mut actions: Vec<Vec<usize>> = vec![Vec::new(); h];
    for t in (0..h).rev() {
        let q = mdp.q_table(t, values.get(t + 1).map(|v| v.as_slice()));
        let (v_t, a_t): (Vec<f64>, Vec<usize>) = q
            .iter()
            .map(|row| {
                let a = argmin(row);
                (row[a], a)
            })
            .unzip();
        values[t] = v_t;
        actions[t] = a_t;
    }
    Ok((ValueTable { values }, MarkovPolicy::deterministic(actions)))
}

/// Largest `|v(t,s) - min_a Q(t,s,a)|` over all periods and states.
pub fn bellman_residual(mdp: &MdpInstance, values: &ValueTable) -> f64 {
    let h = mdp.horizon();
    let mut worst = 0.0f64;
    for t in 0..h {
        let next = values.values.get(t + 1).map(|v| v.as_slice());
        for (s, row) in mdp.q_table(t, next).iter().enumerate() {
            let best = row.iter().copied().fold(f64::INFINITY, f64::min);
            worst = worst.max((values.get(t, s) - best).abs());
        }
    }
    worst
}

/// Exhaustively evaluates every deterministic Markov policy.
///
/// Refuses instances with more than [`ENUMERATION_LIMIT`] candidate policies.
pub fn enumerate_policies_oracle(mdp: &MdpInstance) -> Result<(f64, MarkovPolicy)> {
    mdp.ensure_valid()?;
    let mut count = 1.0f64;
    for stage in &mdp.stages {
        count *= (stage.num_actions() as f64).powi(stage.num_states() as i32);
    }
    if count > ENUMERATION_LIMIT {
        return Err(Error::GuardExceeded {
            what: "deterministic Markov policy enumeration".into(),
            size: count,
            limit: ENUMERATION_LIMIT,
        });
    }

    // One odometer digit per (t, s).
    let radix: Vec<usize> = mdp
        .stages
        .iter()
        .flat_map(|st| std::iter::repeat_n(st.num_actions(), st.num_states()))
        .collect();
    let mut digits = vec![0usize; radix.len()];
    let mut best: Option<(f64, Vec<usize>)> = None;
    loop {
        let policy = policy_from_digits(mdp, &digits);
        let (_, cost) = evaluate_policy(mdp, &policy)?;
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, digits.clone()));
        }
        // Increment; the last (t, s) varies fastest.
        let mut i = digits.len();
        loop {
            if i == 0 {
                let (cost, d) = best.expect("at least one policy");
                return Ok((cost, policy_from_digits(mdp, &d)));
            }
            i -= 1;
            digits[i] += 1;
            if digits[i] < radix[i] {
                break;
            }
            digits[i] = 0;
        }
    }
}

fn policy_from_digits(mdp: &MdpInstance, digits: &[usize]) -> MarkovPolicy {
    let mut it = digits.iter().copied();
    MarkovPolicy::deterministic(
        mdp.stages
            .iter()
            .map(|st| it.by_ref().take(st.num_states()).collect())
            .collect(),
    )
}

/// Shape bounds for [`random_instance`].
#[derive(Clone, Copy, Debug)]
pub struct RandomShape {
    pub max_states: usize,
    pub max_actions: usize,
    pub max_horizon: usize,
}

impl Default for RandomShape {
    fn default() -> Self {
        RandomShape {
            max_states: 4,
            max_actions: 3,
            max_horizon: 3,
        }
    }
}

/// Seeded random instance for benchmarks and cross-checks.
///
/// Every state carries two features: its index within the stage (so a deep
/// enough tree can isolate any state) and a random integer in `0..4`.
/// Costs are integers in `0..10`.
pub fn random_instance(seed: u64, shape: RandomShape) -> MdpInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = rng.random_range(1..=shape.max_horizon);
    let sizes: Vec<usize> = (0..h).map(|_| rng.random_range(1..=shape.max_states)).collect();
    let nacts: Vec<usize> = (0..h).map(|_| rng.random_range(1..=shape.max_actions)).collect();

    let stages: Vec<Stage> = (0..h)
        .map(|t| Stage {
            name: format!("t{t}"),
            feature_names: vec!["index".into(), "x".into()],
            states: (0..sizes[t])
                .map(|s| State {
                    name: format!("s{t}_{s}"),
                    features: vec![s as f64, rng.random_range(0..4) as f64],
                })
                .collect(),
            actions: (0..nacts[t]).map(|a| format!("a{a}")).collect(),
        })
        .collect();

    let costs = (0..h)
        .map(|t| {
            (0..sizes[t])
                .map(|_| (0..nacts[t]).map(|_| rng.random_range(0..10) as f64).collect())
                .collect()
        })
        .collect();
    let kernel = (0..h.saturating_sub(1))
        .map(|t| {
            (0..sizes[t])
                .map(|_| {
                    (0..nacts[t])
                        .map(|_| random_distribution(&mut rng, sizes[t + 1]))
                        .collect()
                })
                .collect()
        })
        .collect();
    let initial = random_distribution(&mut rng, sizes[0]);
    MdpInstance {
        stages,
        kernel,
        costs,
        initial,
    }
}

/// Random probability row; some draws are point masses.
fn random_distribution(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    if rng.random_bool(0.2) {
        let mut row = vec![0.0; n];
        row[rng.random_range(0..n)] = 1.0;
        return row;
    }
    let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.01).collect();
    let total: f64 = raw.iter().sum();
    let mut row: Vec<f64> = raw.iter().map(|x| x / total).collect();
    // Push the rounding residue into the largest entry.
    let residue = 1.0 - row.iter().sum::<f64>();
    let big = row
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    row[big] += residue;
    row
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn single_state(costs: Vec<f64>) -> MdpInstance {
        MdpInstance {
            stages: vec![Stage {
                name: "t0".into(),
                feature_names: vec!["x".into()],
                states: vec![State {
                    name: "s".into(),
                    features: vec![0.0],
                }],
                actions: (0..costs.len()).map(|a| format!("a{a}")).collect(),
            }],
            kernel: vec![],
            costs: vec![vec![costs]],
            initial: vec![1.0],
        }
    }

    fn two_stage() -> MdpInstance {
        MdpInstance {
            stages: vec![
                Stage {
                    name: "t0".into(),
                    feature_names: vec!["x".into()],
                    states: vec![
                        State { name: "a".into(), features: vec![0.0] },
                        State { name: "b".into(), features: vec![1.0] },
                    ],
                    actions: vec!["go".into(), "stay".into()],
                },
                Stage {
                    name: "t1".into(),
                    feature_names: vec!["x".into()],
                    states: vec![
                        State { name: "c".into(), features: vec![0.0] },
                        State { name: "d".into(), features: vec![1.0] },
                    ],
                    actions: vec!["end".into()],
                },
            ],
            kernel: vec![vec![
                vec![vec![0.5, 0.5], vec![1.0, 0.0]],
                vec![vec![0.25, 0.75], vec![0.0, 1.0]],
            ]],
            costs: vec![
                vec![vec![1.0, 2.0], vec![0.0, 3.0]],
                vec![vec![4.0], vec![8.0]],
            ],
            initial: vec![0.5, 0.5],
        }
    }

    #[test]
    fn well_formed_instance_has_no_violations() {
        assert!(two_stage().validate().is_empty());
    }

    #[test]
    fn short_kernel_row_is_reported() {
        let mut m = two_stage();
        m.kernel[0][1][0] = vec![0.4, 0.5];
        let v = m.validate();
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].location, Location::Entry { t: 0, s: 1, a: 0 });
        assert!(v[0].rule.contains("sums to 0.9"));
    }

    #[test]
    fn bad_initial_distribution_is_reported() {
        let mut m = two_stage();
        m.initial = vec![0.5, 0.6];
        let v = m.validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].location, Location::Initial);
    }

    #[test]
    fn negative_probability_and_bad_shapes() {
        let mut m = two_stage();
        m.kernel[0][0][1] = vec![1.5, -0.5];
        m.costs[1].pop();
        let v = m.validate();
        assert!(v.iter().any(|x| x.rule.contains("negative")));
        assert!(v.iter().any(|x| x.location == Location::Stage { t: 1 }));
    }

    #[test]
    fn single_state_argmin() {
        let m = single_state(vec![5.0, 3.0]);
        let (v, pi) = value_iteration(&m).unwrap();
        assert_eq!(v.get(0, 0), 3.0);
        assert_eq!(pi.decisions[0][0], Decision::Action(1));
        let (_, total) = evaluate_policy(&m, &pi).unwrap();
        assert_eq!(total, 3.0);
    }

    #[test]
    fn ties_go_to_lowest_action() {
        let m = single_state(vec![2.0, 2.0, 1.0, 1.0]);
        let (_, pi) = value_iteration(&m).unwrap();
        assert_eq!(pi.decisions[0][0], Decision::Action(2));
    }

    #[test]
    fn hand_computed_two_stage_values() {
        let m = two_stage();
        let (v, pi) = value_iteration(&m).unwrap();
        // state a: go = 1 + 0.5*4 + 0.5*8 = 7, stay = 2 + 4 = 6
        // state b: go = 0 + 1 + 6 = 7, stay = 3 + 8 = 11
        assert_eq!(v.stage(0), &[6.0, 7.0]);
        assert_eq!(pi.actions().unwrap()[0], vec![1, 0]);
        let (_, total) = evaluate_policy(&m, &pi).unwrap();
        assert_eq!(total, 6.5);
    }

    #[test]
    fn randomized_policy_is_a_mixture() {
        let m = two_stage();
        let pi = MarkovPolicy {
            decisions: vec![
                vec![Decision::Mixed(vec![0.5, 0.5]), Decision::Action(0)],
                vec![Decision::Action(0), Decision::Action(0)],
            ],
        };
        let (v, _) = evaluate_policy(&m, &pi).unwrap();
        assert_eq!(v.get(0, 0), 6.5);
    }

    #[test]
    fn policy_shape_errors_name_the_stage() {
        let m = two_stage();
        let pi = MarkovPolicy::deterministic(vec![vec![0, 0]]);
        assert!(matches!(evaluate_policy(&m, &pi), Err(Error::Structure(_))));
        let pi = MarkovPolicy::deterministic(vec![vec![0, 0], vec![0, 3]]);
        let err = evaluate_policy(&m, &pi).unwrap_err().to_string();
        assert!(err.contains("stage 1"), "{err}");
    }

    #[test]
    fn oracle_on_single_action_instance() {
        let m = single_state(vec![7.5]);
        let (c, pi) = enumerate_policies_oracle(&m).unwrap();
        assert_eq!(c, 7.5);
        assert_eq!(pi.decisions[0][0], Decision::Action(0));
    }

    #[test]
    fn oracle_four_way_comparison() {
        // H=1, two states, two actions: 4 candidate policies.
        let mut m = single_state(vec![3.0, 1.0]);
        m.stages[0].states.push(State { name: "s2".into(), features: vec![1.0] });
        m.costs[0].push(vec![0.0, 4.0]);
        m.initial = vec![0.25, 0.75];
        let candidates = [
            0.25 * 3.0 + 0.75 * 0.0,
            0.25 * 3.0 + 0.75 * 4.0,
            0.25 * 1.0 + 0.75 * 0.0,
            0.25 * 1.0 + 0.75 * 4.0,
        ];
        let expected = candidates.iter().copied().fold(f64::INFINITY, f64::min);
        let (c, pi) = enumerate_policies_oracle(&m).unwrap();
        assert_eq!(c, expected);
        assert_eq!(pi.actions().unwrap(), vec![vec![1, 0]]);
    }

    #[test]
    fn oracle_refuses_large_instances() {
        let mut m = single_state(vec![0.0; 10]);
        for i in 1..7 {
            m.stages[0].states.push(State { name: format!("s{i}"), features: vec![i as f64] });
            m.costs[0].push(vec![0.0; 10]);
        }
        m.initial = vec![1.0 / 7.0; 7];
        m.initial[0] = 1.0 - 6.0 / 7.0;
        assert!(matches!(enumerate_policies_oracle(&m), Err(Error::GuardExceeded { .. })));
    }

    #[test]
    fn invalid_instance_is_rejected_by_value_iteration() {
        let mut m = two_stage();
        m.initial = vec![1.0, 1.0];
        assert!(matches!(value_iteration(&m), Err(Error::InvalidMdp(_))));
    }

    #[test]
    fn json_document_is_versioned() {
        let m = two_stage();
        let text = m.to_json().unwrap();
        assert!(text.contains("\"format\": \"mdp-v1\""));
        assert_eq!(MdpInstance::from_json(&text).unwrap(), m);
        let bad = text.replace("mdp-v1", "mdp-v0");
        assert!(matches!(MdpInstance::from_json(&bad), Err(Error::Format(_))));
    }

    #[test]
    fn random_instances_are_valid() {
        for seed in 0..50 {
            let m = random_instance(seed, RandomShape::default());
            assert!(m.validate().is_empty(), "seed {seed}: {:?}", m.validate());
        }
    }
}
