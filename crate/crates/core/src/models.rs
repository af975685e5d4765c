//! Scoring model families. Hyperparameters are fixed per paired grid and never
//! tuned per protocol variant.

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureMatrix;
use crate::protocol::LabelPanel;
use crate::rng::CounterRng;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("no complete training rows")]
    NoTrainingRows,
    #[error("feature {0:?} is required but missing from the matrix")]
    FeatureMissingFromSchema(String),
    #[error("unknown model family {0:?}")]
    UnknownFamily(String),
    #[error("invalid hyperparameter: {0}")]
    InvalidParam(String),
    #[error("ridge system is not positive definite")]
    NotPositiveDefinite,
    #[error("trainable model {0} needs labels")]
    MissingLabels(ModelFamily),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ModelFamily {
    Momentum,
    Ridge,
    Gbt,
    GraphRidge,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 4] = [
        ModelFamily::Momentum,
        ModelFamily::Ridge,
        ModelFamily::Gbt,
        ModelFamily::GraphRidge,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelFamily::Momentum => "MOMENTUM",
            ModelFamily::Ridge => "RIDGE",
            ModelFamily::Gbt => "GBT",
            ModelFamily::GraphRidge => "GRAPH_RIDGE",
        }
    }

    pub fn is_trainable(self) -> bool {
        self != ModelFamily::Momentum
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelFamily {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelFamily::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| ModelError::UnknownFamily(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbtParams {
    pub num_leaves: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub n_estimators: usize,
    pub subsample: f64,
    pub colsample_bytree: f64,
    pub reg_alpha: f64,
    pub reg_lambda: f64,
    pub min_data_in_leaf: usize,
    /// Histogram bins per feature. Splits are exact when a feature has at
    /// most this many distinct training values.
    pub max_bin: usize,
}

impl Default for GbtParams {
    fn default() -> Self {
        Self {
            num_leaves: 31,
            max_depth: 6,
            learning_rate: 0.05,
            n_estimators: 150,
            subsample: 0.8,
            colsample_bytree: 0.8,
            reg_alpha: 0.1,
            reg_lambda: 0.1,
            min_data_in_leaf: 20,
            max_bin: 255,
        }
    }
}

impl GbtParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidParam(m.to_string()));
        if self.num_leaves < 2 {
            return bad("num_leaves must be >= 2");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad("subsample must lie in (0, 1]");
        }
        if !(self.colsample_bytree > 0.0 && self.colsample_bytree <= 1.0) {
            return bad("colsample_bytree must lie in (0, 1]");
        }
        if self.reg_alpha < 0.0 || self.reg_lambda < 0.0 || self.learning_rate <= 0.0 {
            return bad("regularization must be >= 0 and learning_rate > 0");
        }
        if self.min_data_in_leaf == 0 {
            return bad("min_data_in_leaf must be >= 1");
        }
        if self.max_bin < 2 || self.max_bin > u32::MAX as usize {
            return bad("max_bin must be >= 2");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    pub ridge_alpha: f64,
    pub gbt: GbtParams,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            ridge_alpha: 1.0,
            gbt: GbtParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: ModelFamily,
    pub params: ModelParams,
    pub seed: u64,
}

/// Row-major design matrix with aligned targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub n_features: usize,
}

impl Dataset {
    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.x[r * self.n_features..(r + 1) * self.n_features]
    }

    /// Collects `(date, asset)` rows whose features and label are all present.
    pub fn from_rows(features: &FeatureMatrix, labels: &LabelPanel, rows: &[(usize, usize)]) -> Self {
        let p = features.n_features();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for &(t, i) in rows {
            let Some(target) = labels.y.get(t, i) else { continue };
            let row = features.row(t, i);
            if row.iter().any(|v| v.is_nan()) {
                continue;
            }
            x.extend_from_slice(row);
            y.push(target);
        }
        Self { x, y, n_features: p }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl RidgeModel {
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.intercept + row.iter().zip(&self.weights).map(|(x, w)| x * w).sum::<f64>()
    }
}

/// `(X'X + alpha I) beta = X'(y - mean(y))`, intercept `mean(y)`; solved by
/// Cholesky factorization of the regularized Gram matrix.
pub fn fit_ridge(data: &Dataset, alpha: f64) -> Result<RidgeModel, ModelError> {
    if !(alpha > 0.0) {
        return Err(ModelError::InvalidParam("ridge alpha must be > 0".into()));
    }
    let n = data.n_rows();
    if n == 0 {
        return Err(ModelError::NoTrainingRows);
    }
    let (gram, rhs, y_mean) = normal_equations(data, alpha);
    let p = data.n_features;
    let a = DMatrix::from_row_slice(p, p, &gram);
    let b = DVector::from_vec(rhs);
    let chol = a.cholesky().ok_or(ModelError::NotPositiveDefinite)?;
    let beta = chol.solve(&b);
    Ok(RidgeModel {
        weights: beta.iter().copied().collect(),
        intercept: y_mean,
    })
}

fn normal_equations(data: &Dataset, alpha: f64) -> (Vec<f64>, Vec<f64>, f64) {
    let p = data.n_features;
    let n = data.n_rows();
    let y_mean = data.y.iter().sum::<f64>() / n as f64;
    let mut gram = vec![0.0; p * p];
    let mut rhs = vec![0.0; p];
    for r in 0..n {
        let row = data.row(r);
        let yc = data.y[r] - y_mean;
        for a in 0..p {
            rhs[a] += row[a] * yc;
            for b in a..p {
                gram[a * p + b] += row[a] * row[b];
            }
        }
    }
    for a in 0..p {
        gram[a * p + a] += alpha;
        for b in 0..a {
            gram[a * p + b] = gram[b * p + a];
        }
    }
    (gram, rhs, y_mean)
}

/// `max |(X'X + alpha I) beta - X'(y - mean(y))|` for a fitted model.
pub fn ridge_residual(data: &Dataset, alpha: f64, model: &RidgeModel) -> f64 {
    let (gram, rhs, _) = normal_equations(data, alpha);
    let p = data.n_features;
    (0..p)
        .map(|a| {
            let lhs: f64 = (0..p).map(|b| gram[a * p + b] * model.weights[b]).sum();
            (lhs - rhs[a]).abs()
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut k = 0;
        loop {
            match &self.nodes[k] {
                Node::Leaf(v) => return *v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    k = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], k: usize) -> usize {
            match &nodes[k] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub base_score: f64,
    pub trees: Vec<Tree>,
}

impl GbtModel {
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.predict(row)).sum::<f64>()
    }
}

#[inline]
fn soft_threshold(g: f64, alpha: f64) -> f64 {
    g.signum() * (g.abs() - alpha).max(0.0)
}

#[inline]
fn leaf_score(g: f64, h: f64, p: &GbtParams) -> f64 {
    let t = soft_threshold(g, p.reg_alpha);
    t * t / (h + p.reg_lambda)
}

#[derive(Debug, Clone, Copy)]
struct SplitCandidate {
    gain: f64,
    feature: usize,
    /// Rows with bin index <= `bin` go left.
    bin: usize,
}

/// Per-feature quantile bins. `thresholds[b]` separates bin `b` from `b + 1`
/// and lies midway between the largest value of `b` and the smallest of `b + 1`.
struct Binned {
    thresholds: Vec<Vec<f64>>,
    /// Column-major bin indices.
    bins: Vec<Vec<u32>>,
}

fn bin_column(col: &[f64], max_bin: usize) -> (Vec<f64>, Vec<u32>) {
    let mut sorted = col.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut distinct: Vec<(f64, usize)> = Vec::new();
    for &v in &sorted {
        match distinct.last_mut() {
            Some((last, c)) if *last == v => *c += 1,
            _ => distinct.push((v, 1)),
        }
    }
    let mut thresholds = Vec::new();
    let mut cum = 0usize;
    let mut bins_done = 0usize;
    for k in 0..distinct.len().saturating_sub(1) {
        cum += distinct[k].1;
        let boundary = if distinct.len() <= max_bin {
            true
        } else {
            cum * max_bin >= (bins_done + 1) * n && thresholds.len() + 1 < max_bin
        };
        if boundary {
            let (lo, hi) = (distinct[k].0, distinct[k + 1].0);
            let mid = lo + (hi - lo) / 2.0;
            thresholds.push(if mid < hi { mid } else { lo });
            bins_done = (cum * max_bin / n).max(bins_done + 1);
        }
    }
    let bins = col
        .iter()
        .map(|&x| thresholds.partition_point(|&t| x > t) as u32)
        .collect();
    (thresholds, bins)
}

impl Binned {
    fn new(data: &Dataset, max_bin: usize) -> Self {
        let p = data.n_features;
        let n = data.n_rows();
        let (thresholds, bins) = (0..p)
            .map(|f| {
                let col: Vec<f64> = (0..n).map(|r| data.x[r * p + f]).collect();
                bin_column(&col, max_bin)
            })
            .unzip();
        Self { thresholds, bins }
    }

    fn n_bins(&self, f: usize) -> usize {
        self.thresholds[f].len() + 1
    }
}

/// Gradient sums and counts per bin, one block per selected feature.
#[derive(Clone)]
struct Histogram {
    g: Vec<Vec<f64>>,
    c: Vec<Vec<u32>>,
}

impl Histogram {
    fn build(binned: &Binned, features: &[usize], rows: &[u32], grad: &[f64]) -> Self {
        let (g, c) = features
            .iter()
            .map(|&f| {
                let nb = binned.n_bins(f);
                let mut g = vec![0.0; nb];
                let mut c = vec![0u32; nb];
                let col = &binned.bins[f];
                for &r in rows {
                    let b = col[r as usize] as usize;
                    g[b] += grad[r as usize];
                    c[b] += 1;
                }
                (g, c)
            })
            .unzip();
        Self { g, c }
    }

    fn minus(&self, other: &Histogram) -> Histogram {
        let g = self
            .g
            .iter()
            .zip(&other.g)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
            .collect();
        let c = self
            .c
            .iter()
            .zip(&other.c)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
            .collect();
        Histogram { g, c }
    }
}

struct GrowingLeaf {
    node: usize,
    depth: usize,
    sum_g: f64,
    rows: Vec<u32>,
    hist: Histogram,
    best: Option<SplitCandidate>,
}

struct GbtContext<'a> {
    grad: &'a [f64],
    features: &'a [usize],
    params: &'a GbtParams,
}

impl GbtContext<'_> {
    fn best_split(&self, leaf: &GrowingLeaf) -> Option<SplitCandidate> {
        let p = self.params;
        let count = leaf.rows.len();
        if leaf.depth >= p.max_depth || count < 2 * p.min_data_in_leaf {
            return None;
        }
        let parent = leaf_score(leaf.sum_g, count as f64, p);
        let mut best: Option<SplitCandidate> = None;
        for (slot, &f) in self.features.iter().enumerate() {
            let (hg, hc) = (&leaf.hist.g[slot], &leaf.hist.c[slot]);
            let mut g_left = 0.0;
            let mut n_left = 0usize;
            for b in 0..hg.len() - 1 {
                g_left += hg[b];
                n_left += hc[b] as usize;
                let n_right = count - n_left;
                if n_left < p.min_data_in_leaf || hc[b] == 0 {
                    continue;
                }
                if n_right < p.min_data_in_leaf {
                    break;
                }
                let gain = leaf_score(g_left, n_left as f64, p)
                    + leaf_score(leaf.sum_g - g_left, n_right as f64, p)
                    - parent;
                if gain > 0.0 && best.is_none_or(|c| gain > c.gain) {
                    best = Some(SplitCandidate { gain, feature: f, bin: b });
                }
            }
        }
        best
    }

    fn leaf_value(&self, sum_g: f64, count: usize) -> f64 {
        let p = self.params;
        -p.learning_rate * soft_threshold(sum_g, p.reg_alpha) / (count as f64 + p.reg_lambda)
    }

    fn grow_leaf(&self, node: usize, depth: usize, rows: Vec<u32>, hist: Histogram) -> GrowingLeaf {
        let sum_g = rows.iter().map(|&r| self.grad[r as usize]).sum();
        let mut leaf = GrowingLeaf {
            node,
            depth,
            sum_g,
            rows,
            hist,
            best: None,
        };
        leaf.best = self.best_split(&leaf);
        leaf
    }
}

/// Squared-error gradient boosting with leaf-wise growth over per-feature
/// quantile histograms (`max_bin` bins). Row and column subsamples are drawn
/// per round from counter-based streams keyed by `(seed, round, row)` and
/// `(seed, round)`, so the draws never depend on feature values or column order.
pub fn fit_gbt(data: &Dataset, params: &GbtParams, seed: u64) -> Result<GbtModel, ModelError> {
    params.validate()?;
    let n = data.n_rows();
    if n == 0 {
        return Err(ModelError::NoTrainingRows);
    }
    let p = data.n_features;
    let base_score = data.y.iter().sum::<f64>() / n as f64;
    let binned = Binned::new(data, params.max_bin);

    let mut pred = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let n_cols = ((p as f64 * params.colsample_bytree).round() as usize).clamp(1, p.max(1));
    let mut trees = Vec::with_capacity(params.n_estimators);

    for round in 0..params.n_estimators {
        for r in 0..n {
            grad[r] = pred[r] - data.y[r];
        }
        let rows: Vec<u32> = if params.subsample < 1.0 {
            (0..n as u32)
                .filter(|&r| {
                    CounterRng::new(seed, &[round as u64, r as u64]).uniform_open() < params.subsample
                })
                .collect()
        } else {
            (0..n as u32).collect()
        };
        let mut features: Vec<usize> = (0..p).collect();
        if n_cols < p {
            features.shuffle(&mut CounterRng::new(seed, &[round as u64, u64::MAX]));
            features.truncate(n_cols);
            features.sort_unstable();
        }
        let tree = grow_tree(&binned, &grad, rows, &features, params);
        for (r, pr) in pred.iter_mut().enumerate() {
            *pr += tree.predict(data.row(r));
        }
        trees.push(tree);
    }
    Ok(GbtModel { base_score, trees })
}

fn grow_tree(binned: &Binned, grad: &[f64], rows: Vec<u32>, features: &[usize], params: &GbtParams) -> Tree {
    let ctx = GbtContext {
        grad,
        features,
        params,
    };
    let hist = Histogram::build(binned, features, &rows, grad);
    let root = ctx.grow_leaf(0, 0, rows, hist);
    let mut nodes = vec![Node::Leaf(ctx.leaf_value(root.sum_g, root.rows.len()))];
    let mut leaves = vec![root];

    while leaves.len() < params.num_leaves {
        // Highest gain wins; ties go to the earliest-created node.
        let pick = leaves
            .iter()
            .enumerate()
            .filter_map(|(k, l)| l.best.map(|b| (k, b.gain, l.node)))
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.2.cmp(&a.2)));
        let Some((k, _, _)) = pick else { break };
        let leaf = leaves.swap_remove(k);
        let split = leaf.best.expect("picked leaf has a split");

        let col = &binned.bins[split.feature];
        let (left_rows, right_rows): (Vec<u32>, Vec<u32>) =
            leaf.rows.iter().partition(|&&r| col[r as usize] as usize <= split.bin);
        // Build the smaller child's histogram and derive the sibling by subtraction.
        let (left_hist, right_hist) = if left_rows.len() <= right_rows.len() {
            let h = Histogram::build(binned, features, &left_rows, grad);
            let other = leaf.hist.minus(&h);
            (h, other)
        } else {
            let h = Histogram::build(binned, features, &right_rows, grad);
            (leaf.hist.minus(&h), h)
        };

        let (li, ri) = (nodes.len(), nodes.len() + 1);
        let left = ctx.grow_leaf(li, leaf.depth + 1, left_rows, left_hist);
        let right = ctx.grow_leaf(ri, leaf.depth + 1, right_rows, right_hist);
        nodes.push(Node::Leaf(ctx.leaf_value(left.sum_g, left.rows.len())));
        nodes.push(Node::Leaf(ctx.leaf_value(right.sum_g, right.rows.len())));
        nodes[leaf.node] = Node::Split {
            feature: split.feature,
            threshold: binned.thresholds[split.feature][split.bin],
            left: li,
            right: ri,
        };
        leaves.push(left);
        leaves.push(right);
    }
    Tree { nodes }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FittedModel {
    Momentum,
    Ridge(RidgeModel),
    Gbt(GbtModel),
}

/// Model scores on a subset of calendar dates (the test dates).
#[derive(Debug, Clone, PartialEq)]
pub struct ScorePanel {
    /// Panel calendar indices of the scored dates, increasing.
    pub date_index: Vec<usize>,
    pub dates: Vec<NaiveDate>,
    pub assets: Vec<String>,
    pub s: Vec<Option<f64>>,
}

impl ScorePanel {
    pub fn get(&self, k: usize, i: usize) -> Option<f64> {
        self.s[k * self.assets.len() + i]
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    /// Appends the dates of `other`, which must all come after ours.
    pub fn extend(&mut self, other: ScorePanel) {
        assert_eq!(self.assets, other.assets, "score panels cover different assets");
        if let (Some(a), Some(b)) = (self.date_index.last(), other.date_index.first()) {
            assert!(a < b, "score panels must be appended in date order");
        }
        self.date_index.extend(other.date_index);
        self.dates.extend(other.dates);
        self.s.extend(other.s);
    }

    pub fn empty(assets: Vec<String>) -> Self {
        Self {
            date_index: Vec::new(),
            dates: Vec::new(),
            assets,
            s: Vec::new(),
        }
    }
}

/// Momentum score: the trailing 20-day log close return, untouched.
pub fn score_momentum(features: &FeatureMatrix, test_dates: &[usize]) -> Result<ScorePanel, ModelError> {
    let f = features
        .index_of("ret_20")
        .ok_or_else(|| ModelError::FeatureMissingFromSchema("ret_20".into()))?;
    Ok(collect_scores(features, test_dates, |t, i| features.get(t, i, f)))
}

fn collect_scores(
    features: &FeatureMatrix,
    test_dates: &[usize],
    score: impl Fn(usize, usize) -> Option<f64>,
) -> ScorePanel {
    let mut s = Vec::with_capacity(test_dates.len() * features.n_assets());
    for &t in test_dates {
        for i in 0..features.n_assets() {
            s.push(score(t, i));
        }
    }
    ScorePanel {
        date_index: test_dates.to_vec(),
        dates: test_dates.iter().map(|&t| features.calendar()[t]).collect(),
        assets: features.assets().to_vec(),
        s,
    }
}

/// Fits on `train_rows` (trainable families only) and scores every test-date
/// asset whose feature row is complete. `features` is the model's own design
/// matrix: normalized for ridge families, raw for GBT and momentum.
pub fn score_model(
    spec: &ModelSpec,
    features: &FeatureMatrix,
    labels: Option<&LabelPanel>,
    train_rows: &[(usize, usize)],
    test_dates: &[usize],
) -> Result<(FittedModel, ScorePanel), ModelError> {
    if spec.family == ModelFamily::Momentum {
        return Ok((FittedModel::Momentum, score_momentum(features, test_dates)?));
    }
    let labels = labels.ok_or(ModelError::MissingLabels(spec.family))?;
    let data = Dataset::from_rows(features, labels, train_rows);
    let fitted = match spec.family {
        ModelFamily::Ridge | ModelFamily::GraphRidge => {
            FittedModel::Ridge(fit_ridge(&data, spec.params.ridge_alpha)?)
        }
        ModelFamily::Gbt => FittedModel::Gbt(fit_gbt(&data, &spec.params.gbt, spec.seed)?),
        ModelFamily::Momentum => unreachable!(),
    };
    let scores = collect_scores(features, test_dates, |t, i| {
        let row = features.row(t, i);
        if row.iter().any(|v| v.is_nan()) {
            return None;
        }
        Some(match &fitted {
            FittedModel::Ridge(m) => m.predict(row),
            FittedModel::Gbt(m) => m.predict(row),
            FittedModel::Momentum => unreachable!(),
        })
    });
    Ok((fitted, scores))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(x: Vec<f64>, y: Vec<f64>, p: usize) -> Dataset {
        Dataset { x, y, n_features: p }
    }

    #[test]
    fn ridge_hand_example() {
        let m = fit_ridge(&ds(vec![1.0, 2.0], vec![1.0, 2.0], 1), 1.0).unwrap();
        assert!((m.weights[0] - 0.5 / 6.0).abs() < 1e-15);
        assert_eq!(m.intercept, 1.5);
    }

    #[test]
    fn ridge_constant_target_gives_zero_weights() {
        let m = fit_ridge(&ds(vec![1.0, 5.0, 2.0, -1.0, 3.0, 0.5], vec![4.0; 3], 2), 1.0).unwrap();
        assert!(m.weights.iter().all(|&w| w == 0.0));
        assert_eq!(m.intercept, 4.0);
    }

    #[test]
    fn ridge_shrinks_to_mean() {
        let m = fit_ridge(&ds(vec![1.0, 2.0, 3.0], vec![1.0, 3.0, 2.0], 1), 1e12).unwrap();
        assert!(m.weights[0].abs() < 1e-11);
        assert!((m.predict(&[2.0]) - 2.0).abs() < 1e-10);
    }

    #[test]
    fn ridge_errors() {
        assert!(matches!(
            fit_ridge(&ds(vec![], vec![], 2), 1.0),
            Err(ModelError::NoTrainingRows)
        ));
        assert!(fit_ridge(&ds(vec![1.0], vec![1.0], 1), 0.0).is_err());
    }

    #[test]
    fn gbt_zero_rounds_is_constant() {
        let data = ds((0..50).map(f64::from).collect(), (0..50).map(|v| f64::from(v % 7)).collect(), 1);
        let params = GbtParams {
            n_estimators: 0,
            ..GbtParams::default()
        };
        let m = fit_gbt(&data, &params, 1).unwrap();
        let mean = data.y.iter().sum::<f64>() / 50.0;
        assert_eq!(m.predict(&[3.0]), mean);
        assert!(m.trees.is_empty());
    }

    #[test]
    fn gbt_respects_shape_limits() {
        let n = 2000;
        let x: Vec<f64> = (0..n * 2).map(|k| ((k * 7919) % 1000) as f64).collect();
        let y: Vec<f64> = (0..n).map(|r| (x[r * 2] * 0.01).sin() + x[r * 2 + 1] * 1e-3).collect();
        let params = GbtParams {
            n_estimators: 5,
            ..GbtParams::default()
        };
        let m = fit_gbt(&ds(x, y, 2), &params, 3).unwrap();
        for t in &m.trees {
            assert!(t.n_leaves() <= 31);
            assert!(t.depth() <= 6);
        }
    }

    #[test]
    fn family_names() {
        for f in ModelFamily::ALL {
            assert_eq!(f.as_str().parse::<ModelFamily>().unwrap(), f);
        }
        assert!("LIGHTGBM".parse::<ModelFamily>().is_err());
    }
}
