//! Axis-aligned classification trees under a weighted classification error.
//!
//! A point `x` goes left at a branch `(feature, threshold)` iff
//! `x[feature] <= threshold`. Leaves are numbered `0..K` in depth-first,
//! left-first order; that number is the point's class. The cost of a tree
//! on a [`WeightedDataset`] is `Σ_i Σ_ℓ ω[i][ℓ] · μ[class(x_i)][ℓ]`.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{argmin, PROB_TOL};

pub const TREE_FORMAT: &str = "tree-v1";

/// Largest dataset and depth accepted by [`fit_tree_exact`].
pub const EXACT_MAX_POINTS: usize = 32;
pub const EXACT_MAX_DEPTH: usize = 3;

/// Points with one weight per label. `weights[i][l]` is the cost of giving
/// point `i` label `l`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedDataset {
    feature_names: Vec<String>,
    labels: Vec<String>,
    points: Vec<Vec<f64>>,
    weights: Vec<Vec<f64>>,
}

impl WeightedDataset {
    pub fn new(
        feature_names: Vec<String>,
        labels: Vec<String>,
        points: Vec<Vec<f64>>,
        weights: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(Error::Structure(format!(
                "{} points but {} weight rows",
                points.len(),
                weights.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::Structure("label set is empty".into()));
        }
        for (i, (x, w)) in points.iter().zip(&weights).enumerate() {
            if x.len() != feature_names.len() {
                return Err(Error::Structure(format!(
                    "point {i} has {} features, schema has {}",
                    x.len(),
                    feature_names.len()
                )));
            }
            if w.len() != labels.len() {
                return Err(Error::Structure(format!(
                    "point {i} has {} weights for {} labels",
                    w.len(),
                    labels.len()
                )));
            }
            if x.iter().chain(w).any(|v| !v.is_finite()) {
                return Err(Error::Structure(format!("point {i} has a non-finite value")));
            }
        }
        Ok(WeightedDataset {
            feature_names,
            labels,
            points,
            weights,
        })
    }

    /// Plain labelled data: weight 0 on the true label and 1 elsewhere.
    pub fn from_labels(
        feature_names: Vec<String>,
        labels: Vec<String>,
        points: Vec<Vec<f64>>,
        y: &[usize],
    ) -> Result<Self> {
        let k = labels.len();
        if let Some(bad) = y.iter().find(|l| **l >= k) {
            return Err(Error::Structure(format!("label {bad} out of range ({k} labels)")));
        }
        let weights = y
            .iter()
            .map(|&yi| (0..k).map(|l| if l == yi { 0.0 } else { 1.0 }).collect())
            .collect();
        Self::new(feature_names, labels, points, weights)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    /// Per-label weight totals over the given points, summed in index order.
    fn column_sums(&self, idx: impl IntoIterator<Item = usize>) -> Vec<f64> {
        let mut sums = vec![0.0; self.labels.len()];
        for i in idx {
            for (acc, w) in sums.iter_mut().zip(&self.weights[i]) {
                *acc += w;
            }
        }
        sums
    }

    /// Label used for leaves that receive no points.
    fn fallback_label(&self) -> usize {
        argmin(&self.column_sums(0..self.len()))
    }
}

/// Tree skeleton without leaf labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    Leaf,
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Shape>,
        right: Box<Shape>,
    },
}

impl Shape {
    pub fn split(feature: usize, threshold: f64, left: Shape, right: Shape) -> Shape {
        Shape::Split {
            feature,
            threshold,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Shape::Leaf => 0,
            Shape::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn num_leaves(&self) -> usize {
        match self {
            Shape::Leaf => 1,
            Shape::Split { left, right, .. } => left.num_leaves() + right.num_leaves(),
        }
    }

    /// Leaf index (depth-first, left-first) reached by `x`.
    pub fn leaf_of(&self, x: &[f64]) -> usize {
        let mut node = self;
        let mut offset = 0;
        loop {
            match node {
                Shape::Leaf => return offset,
                Shape::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if x[*feature] <= *threshold {
                        node = left;
                    } else {
                        offset += left.num_leaves();
                        node = right;
                    }
                }
            }
        }
    }

    fn max_feature(&self) -> Option<usize> {
        match self {
            Shape::Leaf => None,
            Shape::Split {
                feature, left, right, ..
            } => [Some(*feature), left.max_feature(), right.max_feature()]
                .into_iter()
                .flatten()
                .max(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LeafLabel {
    Label(usize),
    Distribution(Vec<f64>),
}

impl LeafLabel {
    pub fn prob(&self, l: usize) -> f64 {
        match self {
            LeafLabel::Label(x) => f64::from(u8::from(*x == l)),
            LeafLabel::Distribution(mu) => mu.get(l).copied().unwrap_or(0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    Leaf {
        class: usize,
        label: LeafLabel,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub feature_names: Vec<String>,
    pub labels: Vec<String>,
    pub max_depth: usize,
    pub root: Node,
}

impl DecisionTree {
    /// Builds a tree from a skeleton and one label per leaf.
    pub fn from_shape(
        shape: &Shape,
        leaf_labels: Vec<LeafLabel>,
        feature_names: Vec<String>,
        labels: Vec<String>,
        max_depth: usize,
    ) -> Result<Self> {
        if leaf_labels.len() != shape.num_leaves() {
            return Err(Error::Structure(format!(
                "{} leaf labels for {} leaves",
                leaf_labels.len(),
                shape.num_leaves()
            )));
        }
        if let Some(f) = shape.max_feature() {
            if f >= feature_names.len() {
                return Err(Error::Structure(format!(
                    "split on feature {f}, schema has {}",
                    feature_names.len()
                )));
            }
        }
        if shape.depth() > max_depth {
            return Err(Error::Structure(format!(
                "shape depth {} exceeds max depth {max_depth}",
                shape.depth()
            )));
        }
        for (c, label) in leaf_labels.iter().enumerate() {
            match label {
                LeafLabel::Label(l) if *l >= labels.len() => {
                    return Err(Error::Structure(format!("leaf {c}: label {l} out of range")));
                }
                LeafLabel::Distribution(mu) => {
                    let sum: f64 = mu.iter().sum();
                    if mu.len() != labels.len() || (sum - 1.0).abs() > PROB_TOL || mu.iter().any(|p| *p < 0.0) {
                        return Err(Error::Structure(format!(
                            "leaf {c}: label distribution is not a distribution over {} labels",
                            labels.len()
                        )));
                    }
                }
                _ => {}
            }
        }
        let mut it = leaf_labels.into_iter().enumerate();
        let root = build_node(shape, &mut it);
        Ok(DecisionTree {
            feature_names,
            labels,
            max_depth,
            root,
        })
    }

    /// Single-leaf tree.
    pub fn constant(feature_names: Vec<String>, labels: Vec<String>, label: usize) -> Self {
        DecisionTree {
            feature_names,
            labels,
            max_depth: 0,
            root: Node::Leaf {
                class: 0,
                label: LeafLabel::Label(label),
            },
        }
    }

    pub fn shape(&self) -> Shape {
        fn go(n: &Node) -> Shape {
            match n {
                Node::Leaf { .. } => Shape::Leaf,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => Shape::split(*feature, *threshold, go(left), go(right)),
            }
        }
        go(&self.root)
    }

    pub fn depth(&self) -> usize {
        self.shape().depth()
    }

    pub fn num_classes(&self) -> usize {
        self.shape().num_leaves()
    }

    /// Routes `x` to its leaf; returns the class and the leaf's label.
    pub fn classify(&self, x: &[f64]) -> Result<(usize, &LeafLabel)> {
        if x.len() != self.feature_names.len() {
            return Err(Error::Structure(format!(
                "feature vector has length {}, tree expects {}",
                x.len(),
                self.feature_names.len()
            )));
        }
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf { class, label } => return Ok((*class, label)),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    /// The deterministic label reached by `x`.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        match self.classify(x)?.1 {
            LeafLabel::Label(l) => Ok(*l),
            LeafLabel::Distribution(_) => Err(Error::Structure(
                "tree has randomized leaves; no single label".into(),
            )),
        }
    }

    pub fn leaf_labels(&self) -> Vec<&LeafLabel> {
        fn go<'a>(n: &'a Node, out: &mut Vec<&'a LeafLabel>) {
            match n {
                Node::Leaf { label, .. } => out.push(label),
                Node::Split { left, right, .. } => {
                    go(left, out);
                    go(right, out);
                }
            }
        }
        let mut out = Vec::new();
        go(&self.root, &mut out);
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&TreeDocument::new(self.clone()))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: TreeDocument = serde_json::from_str(text)?;
        doc.check_format()?;
        Ok(doc.tree)
    }

    /// Indented text rendering, one line per node.
    pub fn render(&self) -> String {
        let mut out = String::new();
        self.render_node(&self.root, "", &mut out);
        out
    }

    fn render_node(&self, node: &Node, prefix: &str, out: &mut String) {
        match node {
            Node::Leaf { label, .. } => {
                let _ = writeln!(out, "{}", self.label_text(label));
            }
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                let _ = writeln!(out, "{} <= {}", self.feature_names[*feature], threshold);
                let _ = write!(out, "{prefix}├─ yes: ");
                self.render_node(left, &format!("{prefix}│  "), out);
                let _ = write!(out, "{prefix}└─ no: ");
                self.render_node(right, &format!("{prefix}   "), out);
            }
        }
    }

    fn label_text(&self, label: &LeafLabel) -> String {
        match label {
            LeafLabel::Label(l) => self.labels[*l].clone(),
            LeafLabel::Distribution(mu) => {
                let parts: Vec<String> = mu
                    .iter()
                    .zip(&self.labels)
                    .map(|(p, name)| format!("{name}: {p:.2}"))
                    .collect();
                format!("[{}]", parts.join(", "))
            }
        }
    }
}

fn build_node(shape: &Shape, it: &mut impl Iterator<Item = (usize, LeafLabel)>) -> Node {
    match shape {
        Shape::Leaf => {
            let (class, label) = it.next().expect("leaf count checked");
            Node::Leaf { class, label }
        }
        Shape::Split {
            feature,
            threshold,
            left,
            right,
        } => {
            let left = Box::new(build_node(left, it));
            let right = Box::new(build_node(right, it));
            Node::Split {
                feature: *feature,
                threshold: *threshold,
                left,
                right,
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeDocument {
    pub format: String,
    #[serde(flatten)]
    pub tree: DecisionTree,
}

impl TreeDocument {
    pub fn new(tree: DecisionTree) -> Self {
        TreeDocument {
            format: TREE_FORMAT.into(),
            tree,
        }
    }

    pub(crate) fn check_format(&self) -> Result<()> {
        if self.format == TREE_FORMAT {
            Ok(())
        } else {
            Err(Error::Format(format!(
                "unsupported tree format {:?}, expected {TREE_FORMAT:?}",
                self.format
            )))
        }
    }
}

fn check_schema(tree: &DecisionTree, data: &WeightedDataset) -> Result<()> {
    if tree.feature_names != data.feature_names {
        return Err(Error::Structure(format!(
            "tree features {:?} do not match dataset features {:?}",
            tree.feature_names, data.feature_names
        )));
    }
    if tree.labels.len() != data.num_labels() {
        return Err(Error::Structure(format!(
            "tree has {} labels, dataset has {}",
            tree.labels.len(),
            data.num_labels()
        )));
    }
    Ok(())
}

/// Weighted expected classification error of `tree` on `data`.
pub fn classification_cost(tree: &DecisionTree, data: &WeightedDataset) -> Result<f64> {
    check_schema(tree, data)?;
    let mut total = 0.0;
    for (x, w) in data.points.iter().zip(&data.weights) {
        let (_, label) = tree.classify(x)?;
        total += match label {
            LeafLabel::Label(l) => w[*l],
            LeafLabel::Distribution(mu) => w.iter().zip(mu).map(|(a, b)| a * b).sum(),
        };
    }
    Ok(total)
}

/// Labels every leaf of `shape` with the label of smallest total weight
/// among the points reaching it (lowest index on ties). Leaves that no
/// point reaches get the dataset-wide argmin label.
pub fn assign_leaf_labels(shape: &Shape, data: &WeightedDataset, max_depth: usize) -> Result<DecisionTree> {
    let k = shape.num_leaves();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    if let Some(f) = shape.max_feature() {
        if f >= data.feature_names.len() {
            return Err(Error::Structure(format!(
                "split on feature {f}, dataset has {} features",
                data.feature_names.len()
            )));
        }
    }
    for (i, x) in data.points.iter().enumerate() {
        members[shape.leaf_of(x)].push(i);
    }
    let fallback = data.fallback_label();
    let labels = members
        .into_iter()
        .map(|m| {
            if m.is_empty() {
                LeafLabel::Label(fallback)
            } else {
                LeafLabel::Label(argmin(&data.column_sums(m)))
            }
        })
        .collect();
    DecisionTree::from_shape(
        shape,
        labels,
        data.feature_names.clone(),
        data.labels.clone(),
        max_depth,
    )
}

/// Midpoints between consecutive distinct values of `feature` among `idx`.
fn candidate_thresholds(data: &WeightedDataset, idx: &[usize], feature: usize) -> Vec<f64> {
    let mut vals: Vec<f64> = idx.iter().map(|&i| data.points[i][feature]).collect();
    vals.sort_by(f64::total_cmp);
    vals.dedup();
    vals.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0).collect()
}

fn leaf_cost(data: &WeightedDataset, idx: &[usize]) -> f64 {
    let sums = data.column_sums(idx.iter().copied());
    sums[argmin(&sums)]
}

/// Top-down greedy tree growth on the weighted error.
///
/// Each node tries every (feature, midpoint threshold) pair and keeps the
/// one whose two children have the lowest combined optimal-label cost. A
/// node becomes a leaf at the depth bound, when no split leaves at least
/// `min_leaf_size` points on each side, or when no split strictly lowers
/// the node's cost.
pub fn fit_tree_greedy(data: &WeightedDataset, max_depth: usize, min_leaf_size: usize) -> Result<DecisionTree> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let shape = grow_greedy(data, &idx, max_depth, min_leaf_size.max(1));
    assign_leaf_labels(&shape, data, max_depth)
}

fn grow_greedy(data: &WeightedDataset, idx: &[usize], depth_left: usize, min_leaf: usize) -> Shape {
    if depth_left == 0 || idx.len() < 2 * min_leaf {
        return Shape::Leaf;
    }
    let here = leaf_cost(data, idx);
    let mut best: Option<(f64, usize, f64)> = None;
    for f in 0..data.feature_names.len() {
        let mut sorted = idx.to_vec();
        sorted.sort_by(|&a, &b| data.points[a][f].total_cmp(&data.points[b][f]).then(a.cmp(&b)));
        let k = data.num_labels();
        // Running per-label sums for the left side; right side is summed
        // from the back so neither side relies on subtraction.
        let n = sorted.len();
        let mut prefix = vec![vec![0.0; k]; n + 1];
        for (j, &i) in sorted.iter().enumerate() {
            for l in 0..k {
                prefix[j + 1][l] = prefix[j][l] + data.weights[i][l];
            }
        }
        let mut suffix = vec![vec![0.0; k]; n + 1];
        for j in (0..n).rev() {
            let i = sorted[j];
            for l in 0..k {
                suffix[j][l] = suffix[j + 1][l] + data.weights[i][l];
            }
        }
        for j in 1..n {
            let lo = data.points[sorted[j - 1]][f];
            let hi = data.points[sorted[j]][f];
            if lo == hi || j < min_leaf || n - j < min_leaf {
                continue;
            }
            let left = prefix[j].iter().copied().fold(f64::INFINITY, f64::min);
            let right = suffix[j].iter().copied().fold(f64::INFINITY, f64::min);
            let cost = left + right;
            if best.is_none_or(|(c, _, _)| cost < c) {
                best = Some((cost, f, lo + (hi - lo) / 2.0));
            }
        }
    }
    let tol = 1e-12 * here.abs().max(1.0);
    match best {
        Some((cost, f, theta)) if cost < here - tol => {
            let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| data.points[i][f] <= theta);
            Shape::split(
                f,
                theta,
                grow_greedy(data, &l, depth_left - 1, min_leaf),
                grow_greedy(data, &r, depth_left - 1, min_leaf),
            )
        }
        _ => Shape::Leaf,
    }
}

/// Globally optimal tree of depth at most `max_depth`, by exhaustive search
/// over all splits at midpoints of the points reaching each node.
///
/// Limited to [`EXACT_MAX_POINTS`] points and depth [`EXACT_MAX_DEPTH`].
pub fn fit_tree_exact(data: &WeightedDataset, max_depth: usize) -> Result<DecisionTree> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.len() > EXACT_MAX_POINTS || max_depth > EXACT_MAX_DEPTH {
        return Err(Error::GuardExceeded {
            what: format!("exact tree search over {} points at depth {max_depth}", data.len()),
            size: data.len() as f64,
            limit: EXACT_MAX_POINTS as f64,
        });
    }
    let mut search = ExactSearch {
        data,
        memo: HashMap::new(),
    };
    let all: u64 = if data.len() == 64 { u64::MAX } else { (1u64 << data.len()) - 1 };
    let (_, shape) = search.best(all, max_depth);
    assign_leaf_labels(&shape, data, max_depth)
}

struct ExactSearch<'a> {
    data: &'a WeightedDataset,
    memo: HashMap<(u64, usize), (f64, Shape)>,
}

impl ExactSearch<'_> {
    fn members(mask: u64) -> Vec<usize> {
        (0..64).filter(|i| mask >> i & 1 == 1).collect()
    }

    fn best(&mut self, mask: u64, depth: usize) -> (f64, Shape) {
        let idx = Self::members(mask);
        let leaf = leaf_cost(self.data, &idx);
        if depth == 0 || idx.len() < 2 || leaf == 0.0 && self.nonnegative(&idx) {
            return (leaf, Shape::Leaf);
        }
        if let Some(hit) = self.memo.get(&(mask, depth)) {
            return hit.clone();
        }
        let mut best = (leaf, Shape::Leaf);
        for f in 0..self.data.feature_names.len() {
            for theta in candidate_thresholds(self.data, &idx, f) {
                let left_mask = idx
                    .iter()
                    .filter(|&&i| self.data.points[i][f] <= theta)
                    .fold(0u64, |m, &i| m | 1 << i);
                let right_mask = mask & !left_mask;
                let (lc, ls) = self.best(left_mask, depth - 1);
                if lc + self.lower_bound(right_mask) >= best.0 {
                    continue;
                }
                let (rc, rs) = self.best(right_mask, depth - 1);
                if lc + rc < best.0 {
                    best = (lc + rc, Shape::split(f, theta, ls, rs));
                }
            }
        }
        self.memo.insert((mask, depth), best.clone());
        best
    }

    /// `Σ_i min_l ω[i][l]`, a lower bound on any subtree's cost.
    fn lower_bound(&self, mask: u64) -> f64 {
        Self::members(mask)
            .iter()
            .map(|&i| self.data.weights[i].iter().copied().fold(f64::INFINITY, f64::min))
            .sum()
    }

    fn nonnegative(&self, idx: &[usize]) -> bool {
        idx.iter().all(|&i| self.data.weights[i].iter().all(|w| *w >= 0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn xor() -> WeightedDataset {
        WeightedDataset::from_labels(
            names(&["x1", "x2"]),
            names(&["A", "B"]),
            vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]],
            &[0, 1, 1, 0],
        )
        .unwrap()
    }

    fn fig1a() -> DecisionTree {
        let shape = Shape::split(0, 2.0, Shape::split(2, 8.0, Shape::Leaf, Shape::Leaf), Shape::Leaf);
        DecisionTree::from_shape(
            &shape,
            vec![LeafLabel::Label(0), LeafLabel::Label(1), LeafLabel::Label(0)],
            names(&["x1", "x2", "x3"]),
            names(&["y1", "y2"]),
            2,
        )
        .unwrap()
    }

    #[test]
    fn single_leaf_sends_everything_to_class_zero() {
        let t = DecisionTree::constant(names(&["x"]), names(&["a", "b"]), 1);
        for x in [-5.0, 0.0, 1e9] {
            assert_eq!(t.classify(&[x]).unwrap().0, 0);
            assert_eq!(t.predict(&[x]).unwrap(), 1);
        }
    }

    #[test]
    fn routing_follows_univariate_splits() {
        let t = fig1a();
        // x1 = 1 <= 2 goes left; x3 = 9 > 8 goes right.
        let (class, label) = t.classify(&[1.0, 42.0, 9.0]).unwrap();
        assert_eq!(class, 1);
        assert_eq!(*label, LeafLabel::Label(1));
        assert_eq!(t.classify(&[1.0, 0.0, 8.0]).unwrap().0, 0);
        assert_eq!(t.classify(&[3.0, 0.0, 0.0]).unwrap().0, 2);
    }

    #[test]
    fn threshold_ties_route_left() {
        let t = fig1a();
        assert_eq!(t.classify(&[2.0, 0.0, 0.0]).unwrap().0, 0);
    }

    #[test]
    fn schema_mismatch_is_an_error() {
        assert!(matches!(fig1a().classify(&[1.0]), Err(Error::Structure(_))));
    }

    #[test]
    fn perfect_labels_cost_nothing() {
        let d = xor();
        let shape = Shape::split(0, 0.5, Shape::split(1, 0.5, Shape::Leaf, Shape::Leaf), Shape::split(1, 0.5, Shape::Leaf, Shape::Leaf));
        let t = assign_leaf_labels(&shape, &d, 2).unwrap();
        assert_eq!(classification_cost(&t, &d).unwrap(), 0.0);
    }

    #[test]
    fn majority_and_randomized_leaf_costs() {
        let d = WeightedDataset::from_labels(
            names(&["x"]),
            names(&["A", "B"]),
            vec![vec![0.0], vec![1.0], vec![2.0]],
            &[0, 0, 1],
        )
        .unwrap();
        let det = DecisionTree::constant(names(&["x"]), names(&["A", "B"]), 0);
        assert_eq!(classification_cost(&det, &d).unwrap(), 1.0);
        let rnd = DecisionTree::from_shape(
            &Shape::Leaf,
            vec![LeafLabel::Distribution(vec![0.5, 0.5])],
            names(&["x"]),
            names(&["A", "B"]),
            0,
        )
        .unwrap();
        // 2 points of A pay 0.5 each for B, 1 point of B pays 0.5 for A.
        assert_eq!(classification_cost(&rnd, &d).unwrap(), 1.5);
        assert_eq!(assign_leaf_labels(&Shape::Leaf, &d, 0).unwrap().predict(&[0.0]).unwrap(), 0);
    }

    #[test]
    fn leaf_label_uses_column_sums() {
        let d = WeightedDataset::new(
            names(&["x"]),
            names(&["A", "B"]),
            vec![vec![0.0], vec![1.0]],
            vec![vec![0.0, 5.0], vec![3.0, 0.0]],
        )
        .unwrap();
        let t = assign_leaf_labels(&Shape::Leaf, &d, 0).unwrap();
        assert_eq!(t.predict(&[0.0]).unwrap(), 0);
    }

    #[test]
    fn empty_leaf_falls_back_to_global_argmin() {
        // Global column sums (2, 1): label B.
        let d = WeightedDataset::new(
            names(&["x"]),
            names(&["A", "B"]),
            vec![vec![0.0], vec![1.0]],
            vec![vec![1.0, 1.0], vec![1.0, 0.0]],
        )
        .unwrap();
        let shape = Shape::split(0, 10.0, Shape::Leaf, Shape::Leaf);
        let t = assign_leaf_labels(&shape, &d, 1).unwrap();
        assert_eq!(t.predict(&[11.0]).unwrap(), 1);
    }

    #[test]
    fn greedy_separates_separable_data() {
        let d = WeightedDataset::from_labels(
            names(&["x"]),
            names(&["A", "B"]),
            vec![vec![1.0], vec![2.0], vec![5.0], vec![6.0]],
            &[0, 0, 1, 1],
        )
        .unwrap();
        let t = fit_tree_greedy(&d, 1, 1).unwrap();
        assert_eq!(classification_cost(&t, &d).unwrap(), 0.0);
        assert_eq!(t.shape(), Shape::split(0, 3.5, Shape::Leaf, Shape::Leaf));
    }

    fn alternating() -> WeightedDataset {
        WeightedDataset::from_labels(
            names(&["x"]),
            names(&["A", "B"]),
            vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]],
            &[0, 1, 0, 1],
        )
        .unwrap()
    }

    #[test]
    fn parity_pattern_depth_one_costs_one() {
        // Splits at 1.5, 2.5, 3.5 cost 1, 2, 1; the leaf costs 2.
        let d = alternating();
        let g = fit_tree_greedy(&d, 1, 1).unwrap();
        let e = fit_tree_exact(&d, 1).unwrap();
        assert_eq!(classification_cost(&g, &d).unwrap(), 1.0);
        assert_eq!(classification_cost(&e, &d).unwrap(), 1.0);
        assert_eq!(fit_tree_exact(&d, 2).map(|t| classification_cost(&t, &d).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn planar_xor_has_no_useful_single_split() {
        // Both axis splits leave one A and one B per side: 2 errors, same as a leaf.
        let d = xor();
        let g = fit_tree_greedy(&d, 1, 1).unwrap();
        assert_eq!(g.shape(), Shape::Leaf);
        assert_eq!(classification_cost(&g, &d).unwrap(), 2.0);
        assert_eq!(classification_cost(&fit_tree_exact(&d, 1).unwrap(), &d).unwrap(), 2.0);
    }

    #[test]
    fn xor_depth_two_is_solved_exactly() {
        let d = xor();
        let t = fit_tree_exact(&d, 2).unwrap();
        assert_eq!(classification_cost(&t, &d).unwrap(), 0.0);
        assert!(t.depth() <= 2);
    }

    #[test]
    fn exact_depth_zero_is_argmin_leaf() {
        let d = WeightedDataset::new(
            names(&["x"]),
            names(&["A", "B", "C"]),
            vec![vec![0.0], vec![1.0]],
            vec![vec![3.0, 1.0, 2.0], vec![0.0, 1.0, 0.0]],
        )
        .unwrap();
        let t = fit_tree_exact(&d, 0).unwrap();
        assert_eq!(t.shape(), Shape::Leaf);
        assert_eq!(t.predict(&[0.0]).unwrap(), 1);
    }

    #[test]
    fn exact_guard() {
        let pts: Vec<Vec<f64>> = (0..33).map(|i| vec![i as f64]).collect();
        let y = vec![0; 33];
        let d = WeightedDataset::from_labels(names(&["x"]), names(&["A", "B"]), pts, &y).unwrap();
        assert!(matches!(fit_tree_exact(&d, 2), Err(Error::GuardExceeded { .. })));
        assert!(matches!(fit_tree_exact(&xor(), 4), Err(Error::GuardExceeded { .. })));
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let d = WeightedDataset::new(names(&["x"]), names(&["A"]), vec![], vec![]).unwrap();
        assert!(matches!(fit_tree_greedy(&d, 2, 1), Err(Error::EmptyDataset)));
        assert!(matches!(fit_tree_exact(&d, 2), Err(Error::EmptyDataset)));
    }

    #[test]
    fn min_leaf_size_blocks_small_children() {
        let d = WeightedDataset::from_labels(
            names(&["x"]),
            names(&["A", "B"]),
            vec![vec![1.0], vec![2.0], vec![3.0]],
            &[0, 0, 1],
        )
        .unwrap();
        assert_eq!(fit_tree_greedy(&d, 2, 2).unwrap().shape(), Shape::Leaf);
        assert_ne!(fit_tree_greedy(&d, 2, 1).unwrap().shape(), Shape::Leaf);
    }

    #[test]
    fn json_and_render() {
        let t = fig1a();
        let text = t.to_json().unwrap();
        assert!(text.contains("tree-v1"));
        assert_eq!(DecisionTree::from_json(&text).unwrap(), t);
        let r = t.render();
        assert_eq!(
            r,
            "x1 <= 2\n├─ yes: x3 <= 8\n│  ├─ yes: y1\n│  └─ no: y2\n└─ no: y1\n"
        );
    }

    #[test]
    fn bad_leaf_distribution_is_rejected() {
        let err = DecisionTree::from_shape(
            &Shape::Leaf,
            vec![LeafLabel::Distribution(vec![0.5, 0.6])],
            names(&["x"]),
            names(&["A", "B"]),
            0,
        );
        assert!(err.is_err());
    }
}
