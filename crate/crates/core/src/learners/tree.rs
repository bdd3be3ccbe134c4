//! CART decision trees and bagged forests.
//!
//! The same builder serves classification (gini / entropy) and regression
//! (variance reduction); the regression forest backs the Bayesian optimizer's
//! surrogate model.

use std::sync::atomic::{AtomicBool, Ordering};

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LearnerError;

/// Minimum gap between consecutive feature values for a threshold to exist.
const FEATURE_THRESHOLD: f64 = 1e-7;
const EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Criterion {
    Gini,
    Entropy,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TreeTask {
    Classify { n_classes: usize, criterion: Criterion },
    Regress,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeParams {
    /// Number of features examined per split (at least one).
    pub max_features: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub min_impurity_decrease: f64,
    pub max_depth: Option<usize>,
}

impl TreeParams {
    pub fn unconstrained(n_features: usize) -> Self {
        TreeParams {
            max_features: n_features,
            min_samples_split: 2,
            min_samples_leaf: 1,
            min_impurity_decrease: 0.0,
            max_depth: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    /// Class probabilities, or a single mean for regression.
    Leaf {
        value: Vec<f64>,
        n_samples: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

/// Targets for tree building, indexed by row.
#[derive(Debug, Clone, Copy)]
pub enum Targets<'a> {
    Classes(&'a [usize]),
    Values(&'a [f64]),
}

#[derive(Clone)]
enum Stats {
    Class { counts: Vec<f64>, weight: f64, n: usize },
    Reg { weight: f64, wy: f64, wy2: f64, n: usize },
}

impl Stats {
    fn empty(task: TreeTask) -> Self {
        match task {
            TreeTask::Classify { n_classes, .. } => Stats::Class { counts: vec![0.0; n_classes], weight: 0.0, n: 0 },
            TreeTask::Regress => Stats::Reg { weight: 0.0, wy: 0.0, wy2: 0.0, n: 0 },
        }
    }

    #[inline]
    fn update(&mut self, targets: Targets<'_>, weights: &[f64], row: usize, sign: f64) {
        let w = weights[row] * sign;
        match (self, targets) {
            (Stats::Class { counts, weight, n }, Targets::Classes(y)) => {
                counts[y[row]] += w;
                *weight += w;
                if sign > 0.0 {
                    *n += 1
                } else {
                    *n -= 1
                }
            }
            (Stats::Reg { weight, wy, wy2, n }, Targets::Values(y)) => {
                *weight += w;
                *wy += w * y[row];
                *wy2 += w * y[row] * y[row];
                if sign > 0.0 {
                    *n += 1
                } else {
                    *n -= 1
                }
            }
            _ => unreachable!("targets do not match task"),
        }
    }

    fn weight(&self) -> f64 {
        match self {
            Stats::Class { weight, .. } | Stats::Reg { weight, .. } => *weight,
        }
    }

    fn n(&self) -> usize {
        match self {
            Stats::Class { n, .. } | Stats::Reg { n, .. } => *n,
        }
    }

    fn impurity(&self, task: TreeTask) -> f64 {
        match (self, task) {
            (Stats::Class { counts, weight, .. }, TreeTask::Classify { criterion, .. }) => {
                if *weight <= 0.0 {
                    return 0.0;
                }
                match criterion {
                    Criterion::Gini => 1.0 - counts.iter().map(|c| (c / weight).powi(2)).sum::<f64>(),
                    Criterion::Entropy => -counts
                        .iter()
                        .filter(|&&c| c > 0.0)
                        .map(|c| {
                            let p = c / weight;
                            p * p.log2()
                        })
                        .sum::<f64>(),
                }
            }
            (Stats::Reg { weight, wy, wy2, .. }, TreeTask::Regress) => {
                if *weight <= 0.0 {
                    return 0.0;
                }
                let mean = wy / weight;
                (wy2 / weight - mean * mean).max(0.0)
            }
            _ => unreachable!(),
        }
    }

    fn value(&self) -> Vec<f64> {
        match self {
            Stats::Class { counts, weight, .. } => {
                if *weight > 0.0 {
                    counts.iter().map(|c| c / weight).collect()
                } else {
                    vec![1.0 / counts.len() as f64; counts.len()]
                }
            }
            Stats::Reg { weight, wy, .. } => vec![if *weight > 0.0 { wy / weight } else { 0.0 }],
        }
    }
}

struct SplitCandidate {
    feature: usize,
    threshold: f64,
    /// Position in the sorted sample slice where the right child starts.
    pos: usize,
    child_impurity: f64,
}

impl DecisionTree {
    /// Grows a tree on `samples` (row indices into `x`, duplicates allowed).
    pub fn fit<R: Rng + ?Sized>(
        x: &Array2<f64>,
        targets: Targets<'_>,
        weights: &[f64],
        samples: Vec<usize>,
        task: TreeTask,
        params: &TreeParams,
        rng: &mut R,
    ) -> DecisionTree {
        let n_features = x.ncols();
        let mut samples = samples;
        let mut root_stats = Stats::empty(task);
        for &r in &samples {
            root_stats.update(targets, weights, r, 1.0);
        }
        let total_weight = root_stats.weight().max(EPSILON);

        let mut nodes: Vec<Node> = Vec::new();
        // (node slot, start, end, depth, stats)
        let mut stack = vec![(0usize, 0usize, samples.len(), 0usize, root_stats)];
        nodes.push(Node::Leaf { value: vec![], n_samples: 0 });
        let mut features: Vec<usize> = (0..n_features).collect();
        let mut order: Vec<(f64, usize)> = Vec::with_capacity(samples.len());

        while let Some((slot, start, end, depth, stats)) = stack.pop() {
            let n = end - start;
            let impurity = stats.impurity(task);
            let mut is_leaf = n < params.min_samples_split
                || n < 2 * params.min_samples_leaf
                || impurity <= EPSILON
                || params.max_depth.is_some_and(|d| depth >= d);

            let mut best: Option<SplitCandidate> = None;
            if !is_leaf {
                features.shuffle(rng);
                let mut visited = 0;
                for &f in &features {
                    if visited >= params.max_features.max(1) {
                        break;
                    }
                    order.clear();
                    order.extend(samples[start..end].iter().map(|&r| (x[[r, f]], r)));
                    order.sort_by(|a, b| a.0.total_cmp(&b.0));
                    if order[n - 1].0 <= order[0].0 + FEATURE_THRESHOLD {
                        continue; // constant in this node; does not count as visited
                    }
                    visited += 1;
                    let mut left = Stats::empty(task);
                    let mut right = stats.clone();
                    for i in 0..n - 1 {
                        let row = order[i].1;
                        left.update(targets, weights, row, 1.0);
                        right.update(targets, weights, row, -1.0);
                        if order[i + 1].0 <= order[i].0 + FEATURE_THRESHOLD {
                            continue;
                        }
                        if left.n() < params.min_samples_leaf || right.n() < params.min_samples_leaf {
                            continue;
                        }
                        let child = (left.weight() * left.impurity(task) + right.weight() * right.impurity(task))
                            / stats.weight().max(EPSILON);
                        if best.as_ref().is_none_or(|b| child < b.child_impurity) {
                            let mut threshold = 0.5 * (order[i].0 + order[i + 1].0);
                            if threshold >= order[i + 1].0 {
                                threshold = order[i].0;
                            }
                            best = Some(SplitCandidate { feature: f, threshold, pos: i + 1, child_impurity: child });
                        }
                    }
                }
                match &best {
                    None => is_leaf = true,
                    Some(b) => {
                        let improvement = stats.weight() / total_weight * (impurity - b.child_impurity);
                        if improvement + EPSILON < params.min_impurity_decrease {
                            is_leaf = true;
                        }
                    }
                }
            }

            match best {
                Some(split) if !is_leaf => {
                    let f = split.feature;
                    let slice = &mut samples[start..end];
                    slice.sort_by(|&a, &b| x[[a, f]].total_cmp(&x[[b, f]]));
                    let mid = start + split.pos;
                    let mut left_stats = Stats::empty(task);
                    for &r in &samples[start..mid] {
                        left_stats.update(targets, weights, r, 1.0);
                    }
                    let mut right_stats = Stats::empty(task);
                    for &r in &samples[mid..end] {
                        right_stats.update(targets, weights, r, 1.0);
                    }
                    let left = nodes.len();
                    nodes.push(Node::Leaf { value: vec![], n_samples: 0 });
                    let right = nodes.len();
                    nodes.push(Node::Leaf { value: vec![], n_samples: 0 });
                    nodes[slot] = Node::Split { feature: f, threshold: split.threshold, left, right };
                    stack.push((right, mid, end, depth + 1, right_stats));
                    stack.push((left, start, mid, depth + 1, left_stats));
                }
                _ => {
                    nodes[slot] = Node::Leaf { value: stats.value(), n_samples: n };
                }
            }
        }
        DecisionTree { nodes }
    }

    pub fn predict_row(&self, row: ArrayView1<'_, f64>) -> &[f64] {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { value, .. } => return value,
                Node::Split { feature, threshold, left, right } => {
                    idx = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn leaves(&self) -> impl Iterator<Item = (&[f64], usize)> {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf { value, n_samples } => Some((value.as_slice(), *n_samples)),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClassWeight {
    Uniform,
    Balanced,
    BalancedSubsample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_estimators: usize,
    pub bootstrap: bool,
    pub class_weight: ClassWeight,
    pub criterion: Criterion,
    /// Fraction of features examined per split.
    pub max_features: f64,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub min_impurity_decrease: f64,
    pub max_depth: Option<usize>,
}

impl ForestParams {
    fn tree_params(&self, n_features: usize) -> TreeParams {
        TreeParams {
            max_features: ((self.max_features * n_features as f64) as usize).max(1),
            min_samples_split: self.min_samples_split,
            min_samples_leaf: self.min_samples_leaf,
            min_impurity_decrease: self.min_impurity_decrease,
            max_depth: self.max_depth,
        }
    }
}

/// `n / (n_present_classes * count_c)` over the given samples.
fn balanced_weights(labels: &[usize], samples: &[usize], n_classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; n_classes];
    for &r in samples {
        counts[labels[r]] += 1;
    }
    let present = counts.iter().filter(|&&c| c > 0).count().max(1);
    let per_class: Vec<f64> =
        counts.iter().map(|&c| if c > 0 { samples.len() as f64 / (present * c) as f64 } else { 0.0 }).collect();
    labels.iter().map(|&l| per_class[l]).collect()
}

fn cancelled(flag: Option<&AtomicBool>) -> bool {
    flag.is_some_and(|f| f.load(Ordering::Relaxed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForestClassifier {
    trees: Vec<DecisionTree>,
    n_classes: usize,
}

impl RandomForestClassifier {
    pub fn fit(
        x: &Array2<f64>,
        labels: &[usize],
        n_classes: usize,
        params: &ForestParams,
        seed: u64,
        cancel: Option<&AtomicBool>,
    ) -> Result<Self, LearnerError> {
        let n = x.nrows();
        let tree_params = params.tree_params(x.ncols());
        let task = TreeTask::Classify { n_classes, criterion: params.criterion };
        let all: Vec<usize> = (0..n).collect();
        let base_weights = match params.class_weight {
            ClassWeight::Uniform => vec![1.0; n],
            ClassWeight::Balanced | ClassWeight::BalancedSubsample => balanced_weights(labels, &all, n_classes),
        };
        let mut seeder = ChaCha8Rng::seed_from_u64(seed);
        let mut trees = Vec::with_capacity(params.n_estimators);
        for _ in 0..params.n_estimators {
            if cancelled(cancel) {
                return Err(LearnerError::Cancelled);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seeder.random());
            let samples: Vec<usize> =
                if params.bootstrap { (0..n).map(|_| rng.random_range(0..n)).collect() } else { all.clone() };
            let subsample_weights;
            let weights = if params.class_weight == ClassWeight::BalancedSubsample && params.bootstrap {
                subsample_weights = balanced_weights(labels, &samples, n_classes);
                &subsample_weights
            } else {
                &base_weights
            };
            trees.push(DecisionTree::fit(x, Targets::Classes(labels), weights, samples, task, &tree_params, &mut rng));
        }
        Ok(RandomForestClassifier { trees, n_classes })
    }

    /// Mean of per-tree leaf class distributions.
    pub fn predict_proba(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::<f64>::zeros((x.nrows(), self.n_classes));
        for (r, row) in x.rows().into_iter().enumerate() {
            for tree in &self.trees {
                for (c, p) in tree.predict_row(row).iter().enumerate() {
                    out[[r, c]] += p;
                }
            }
            let total: f64 = out.row(r).sum();
            out.row_mut(r).mapv_inplace(|v| v / total);
        }
        out
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }
}

/// Regression forest whose spread across trees serves as a variance estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionForest {
    trees: Vec<DecisionTree>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionForestParams {
    pub n_trees: usize,
    pub max_features: f64,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub bootstrap: bool,
}

impl Default for RegressionForestParams {
    fn default() -> Self {
        RegressionForestParams {
            n_trees: 16,
            max_features: 5.0 / 6.0,
            min_samples_split: 3,
            min_samples_leaf: 1,
            bootstrap: true,
        }
    }
}

impl RegressionForest {
    pub fn fit(x: &Array2<f64>, y: &[f64], params: &RegressionForestParams, seed: u64) -> Self {
        let n = x.nrows();
        let tree_params = TreeParams {
            max_features: ((params.max_features * x.ncols() as f64) as usize).max(1),
            min_samples_split: params.min_samples_split,
            min_samples_leaf: params.min_samples_leaf,
            min_impurity_decrease: 0.0,
            max_depth: None,
        };
        let weights = vec![1.0; n];
        let mut seeder = ChaCha8Rng::seed_from_u64(seed);
        let trees = (0..params.n_trees)
            .map(|_| {
                let mut rng = ChaCha8Rng::seed_from_u64(seeder.random());
                let samples: Vec<usize> =
                    if params.bootstrap { (0..n).map(|_| rng.random_range(0..n)).collect() } else { (0..n).collect() };
                DecisionTree::fit(x, Targets::Values(y), &weights, samples, TreeTask::Regress, &tree_params, &mut rng)
            })
            .collect();
        RegressionForest { trees }
    }

    /// Mean and (population) variance of the per-tree predictions.
    pub fn predict_mean_var(&self, row: ArrayView1<'_, f64>) -> (f64, f64) {
        let preds: Vec<f64> = self.trees.iter().map(|t| t.predict_row(row)[0]).collect();
        let m = preds.len() as f64;
        let mean = preds.iter().sum::<f64>() / m;
        let var = preds.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / m;
        (mean, var)
    }
}
