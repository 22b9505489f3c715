//! Stacked absolute-MOS predictor.
//!
//! Concatenated audio and text embeddings feed three weak learners (ridge
//! regression, linear epsilon-insensitive SVR, and a CART regression tree).
//! Their out-of-fold predictions train a small ReLU MLP meta-learner, and the
//! weak learners are then refit on all data for inference.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::Standardizer;
use crate::util::rng;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("empty training set")]
    Empty,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("singular system: {0}")]
    Singular(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{learner} diverged at epoch {epoch}")]
    Diverged { learner: &'static str, epoch: usize },
    #[error("fold {fold} has {size} samples (need at least 2)")]
    FoldTooSmall { fold: usize, size: usize },
    #[error("no target for clip {0}")]
    MissingTarget(String),
    #[error("invalid model file: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Concatenated audio and text embedding of one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedFeature {
    pub clip_id: String,
    pub vector: Vec<f64>,
}

impl StackedFeature {
    pub fn concat(clip_id: impl Into<String>, audio: &[f64], text: &[f64]) -> Self {
        Self {
            clip_id: clip_id.into(),
            vector: audio.iter().chain(text).copied().collect(),
        }
    }
}

fn check_xy(x: &[Vec<f64>], y: &[f64]) -> Result<usize, EnsembleError> {
    if x.is_empty() {
        return Err(EnsembleError::Empty);
    }
    if x.len() != y.len() {
        return Err(EnsembleError::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    let d = x[0].len();
    if let Some(row) = x.iter().find(|r| r.len() != d) {
        return Err(EnsembleError::DimensionMismatch {
            expected: d,
            got: row.len(),
        });
    }
    Ok(d)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeParams {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub lambda: f64,
}

impl RidgeParams {
    pub fn predict(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }
}

/// Ridge regression with an unpenalized intercept: centers features and
/// targets, then solves `(XᵀX + λI)w = Xᵀy` by Cholesky factorization.
pub fn fit_ridge(x: &[Vec<f64>], y: &[f64], lambda: f64) -> Result<RidgeParams, EnsembleError> {
    let d = check_xy(x, y)?;
    let n = x.len();
    if !(lambda >= 0.0) {
        return Err(EnsembleError::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    if lambda == 0.0 && d >= n {
        return Err(EnsembleError::Singular(format!(
            "{n} samples cannot determine {d} weights without regularization"
        )));
    }
    let x_mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let xc = DMatrix::from_fn(n, d, |i, j| x[i][j] - x_mean[j]);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    let mut gram = xc.tr_mul(&xc);
    for j in 0..d {
        gram[(j, j)] += lambda;
    }
    let rhs = xc.tr_mul(&yc);
    let max_diag = (0..d).map(|j| gram[(j, j)]).fold(0.0f64, f64::max);
    let chol = gram
        .cholesky()
        .ok_or_else(|| EnsembleError::Singular("normal equations are not positive definite".into()))?;
    let l = chol.l_dirty();
    if (0..d).any(|j| l[(j, j)] * l[(j, j)] <= 1e-12 * max_diag) {
        return Err(EnsembleError::Singular("normal equations are numerically rank deficient".into()));
    }
    let w = chol.solve(&rhs);
    let weights: Vec<f64> = w.iter().copied().collect();
    let bias = y_mean - dot(&weights, &x_mean);
    Ok(RidgeParams { weights, bias, lambda })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrParams {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub epsilon: f64,
    pub c: f64,
}

impl SvrParams {
    pub fn predict(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }

    /// `½‖w‖² + c·Σ max(0, |wᵀx + b − y| − ε)`.
    pub fn objective(&self, x: &[Vec<f64>], y: &[f64]) -> f64 {
        let hinge: f64 = x
            .iter()
            .zip(y)
            .map(|(r, t)| ((self.predict(r) - t).abs() - self.epsilon).max(0.0))
            .sum();
        0.5 * dot(&self.weights, &self.weights) + self.c * hinge
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvrConfig {
    pub epsilon: f64,
    pub c: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for SvrConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            c: 1.0,
            epochs: 200,
            learning_rate: 0.05,
            batch_size: 32,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SvrFit {
    pub params: SvrParams,
    /// Objective after each epoch; never increases.
    pub objective_history: Vec<f64>,
}

/// Linear epsilon-insensitive SVR by mini-batch subgradient descent.
///
/// Each epoch is one shuffled pass. An epoch that fails to lower the
/// objective is rolled back and the step size halved, so the recorded
/// objective is non-increasing.
pub fn fit_svr(x: &[Vec<f64>], y: &[f64], cfg: &SvrConfig, seed: u64) -> Result<SvrFit, EnsembleError> {
    let d = check_xy(x, y)?;
    if !(cfg.epsilon >= 0.0) || !(cfg.c > 0.0) || !(cfg.learning_rate > 0.0) || cfg.batch_size == 0 {
        return Err(EnsembleError::InvalidArgument(
            "svr needs epsilon >= 0, c > 0, learning_rate > 0 and batch_size >= 1".into(),
        ));
    }
    let n = x.len();
    let mut params = SvrParams {
        weights: vec![0.0; d],
        bias: y.iter().sum::<f64>() / n as f64,
        epsilon: cfg.epsilon,
        c: cfg.c,
    };
    let mut best = params.objective(x, y);
    let mut lr = cfg.learning_rate;
    let mut r = rng(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut trial = params.clone();
        order.shuffle(&mut r);
        for chunk in order.chunks(cfg.batch_size) {
            // unbiased estimate of the gradient of objective / n
            let m = chunk.len() as f64;
            let mut gw: Vec<f64> = trial.weights.iter().map(|w| w / n as f64).collect();
            let mut gb = 0.0;
            for &i in chunk {
                let resid = trial.predict(&x[i]) - y[i];
                if resid.abs() > cfg.epsilon {
                    let s = resid.signum() * cfg.c / m;
                    for (g, xv) in gw.iter_mut().zip(&x[i]) {
                        *g += s * xv;
                    }
                    gb += s;
                }
            }
            for (w, g) in trial.weights.iter_mut().zip(&gw) {
                *w -= lr * g;
            }
            trial.bias -= lr * gb;
        }
        let obj = trial.objective(x, y);
        if !obj.is_finite() {
            return Err(EnsembleError::Diverged { learner: "svr", epoch });
        }
        if obj < best {
            best = obj;
            params = trial;
        } else {
            lr *= 0.5;
        }
        history.push(best);
    }
    Ok(SvrFit {
        params,
        objective_history: history,
    })
}

/// Preorder node of a regression tree; children are indices into the node list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub nodes: Vec<TreeNode>,
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl TreeParams {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[TreeNode], i: usize) -> usize {
            match &nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }

    /// Checks that child links point forward and every node is reachable once.
    pub fn validate(&self) -> Result<(), EnsembleError> {
        if self.nodes.is_empty() {
            return Err(EnsembleError::InvalidModel("tree has no nodes".into()));
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            if i >= self.nodes.len() || seen[i] {
                return Err(EnsembleError::InvalidModel(format!("bad tree link to node {i}")));
            }
            seen[i] = true;
            match &self.nodes[i] {
                TreeNode::Leaf { value } if !value.is_finite() => {
                    return Err(EnsembleError::InvalidModel("non-finite leaf".into()))
                }
                TreeNode::Split {
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    if !threshold.is_finite() || *left <= i || *right <= i {
                        return Err(EnsembleError::InvalidModel(format!("bad split at node {i}")));
                    }
                    stack.push(*right);
                    stack.push(*left);
                }
                _ => {}
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(EnsembleError::InvalidModel("unreachable tree nodes".into()));
        }
        Ok(())
    }
}

/// Mean summed in ascending value order, so it does not depend on row order.
fn stable_mean(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    max_depth: usize,
    min_leaf: usize,
    nodes: Vec<TreeNode>,
}

impl TreeBuilder<'_> {
    fn leaf(&mut self, idx: &[usize]) -> usize {
        let mut ys: Vec<f64> = idx.iter().map(|&i| self.y[i]).collect();
        self.nodes.push(TreeNode::Leaf {
            value: stable_mean(&mut ys),
        });
        self.nodes.len() - 1
    }

    /// Best (feature, threshold) by SSE reduction; ties keep the lowest feature, then lowest threshold.
    fn best_split(&self, idx: &[usize]) -> Option<(usize, f64)> {
        let n = idx.len();
        if n < 2 * self.min_leaf {
            return None;
        }
        let d = self.x[idx[0]].len();
        let mut sorted_y: Vec<f64> = idx.iter().map(|&i| self.y[i]).collect();
        sorted_y.sort_by(f64::total_cmp);
        let total: f64 = sorted_y.iter().sum();
        let total_sq: f64 = sorted_y.iter().map(|v| v * v).sum();
        let parent_sse = total_sq - total * total / n as f64;
        if parent_sse <= 1e-12 * total_sq.max(1.0) {
            return None;
        }
        let mut best: Option<(usize, f64)> = None;
        let mut best_score = total * total / n as f64;
        let mut order = idx.to_vec();
        for f in 0..d {
            order.sort_by(|&a, &b| {
                self.x[a][f]
                    .total_cmp(&self.x[b][f])
                    .then(self.y[a].total_cmp(&self.y[b]))
            });
            let mut left_sum = 0.0;
            for k in 1..n {
                left_sum += self.y[order[k - 1]];
                let (xl, xr) = (self.x[order[k - 1]][f], self.x[order[k]][f]);
                if xl == xr || k < self.min_leaf || n - k < self.min_leaf {
                    continue;
                }
                let right_sum = total - left_sum;
                let score = left_sum * left_sum / k as f64 + right_sum * right_sum / (n - k) as f64;
                if score > best_score + 1e-12 * best_score.abs().max(1.0) {
                    best_score = score;
                    best = Some((f, 0.5 * (xl + xr)));
                }
            }
        }
        best
    }

    fn build(&mut self, idx: &[usize], depth: usize) -> usize {
        if depth >= self.max_depth {
            return self.leaf(idx);
        }
        let Some((feature, threshold)) = self.best_split(idx) else {
            return self.leaf(idx);
        };
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| self.x[i][feature] <= threshold);
        let me = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { value: 0.0 });
        let left = self.build(&left_idx, depth + 1);
        let right = self.build(&right_idx, depth + 1);
        self.nodes[me] = TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        };
        me
    }
}

/// Greedy CART regression tree.
pub fn fit_tree(
    x: &[Vec<f64>],
    y: &[f64],
    max_depth: usize,
    min_leaf: usize,
) -> Result<TreeParams, EnsembleError> {
    check_xy(x, y)?;
    if min_leaf == 0 || x.len() < min_leaf {
        return Err(EnsembleError::InvalidArgument(format!(
            "need min_leaf >= 1 and at least min_leaf samples (min_leaf={min_leaf}, n={})",
            x.len()
        )));
    }
    let mut b = TreeBuilder {
        x,
        y,
        max_depth,
        min_leaf,
        nodes: Vec::new(),
    };
    let idx: Vec<usize> = (0..x.len()).collect();
    b.build(&idx, 0);
    Ok(TreeParams {
        nodes: b.nodes,
        max_depth,
        min_leaf,
    })
}

/// Two-layer perceptron `w2·relu(W1 x + b1) + b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaMlp {
    /// h rows of input-width weights.
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

/// Gradients with the same shapes as [`MetaMlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrad {
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl MetaMlp {
    pub fn init(input_dim: usize, hidden: usize, output_bias: f64, seed: u64) -> Self {
        let mut r = rng(seed);
        let a1 = (6.0 / input_dim.max(1) as f64).sqrt();
        let a2 = (1.0 / hidden as f64).sqrt();
        Self {
            w1: (0..hidden)
                .map(|_| (0..input_dim).map(|_| r.random_range(-a1..=a1)).collect())
                .collect(),
            b1: vec![0.01; hidden],
            w2: (0..hidden).map(|_| r.random_range(-a2..=a2)).collect(),
            b2: output_bias,
        }
    }

    pub fn hidden(&self) -> usize {
        self.b1.len()
    }

    pub fn input_dim(&self) -> usize {
        self.w1.first().map_or(0, Vec::len)
    }

    fn hidden_pre(&self, x: &[f64]) -> Vec<f64> {
        self.w1.iter().zip(&self.b1).map(|(row, b)| dot(row, x) + b).collect()
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        let pre = self.hidden_pre(x);
        pre.iter().zip(&self.w2).map(|(p, w)| p.max(0.0) * w).sum::<f64>() + self.b2
    }

    /// Mean squared error over the batch and its exact gradient. `mask`, when
    /// given, multiplies hidden activations per example (inverted dropout).
    pub fn loss_and_grad(&self, x: &[&[f64]], y: &[f64], mask: Option<&[Vec<f64>]>) -> (f64, MlpGrad) {
        let h = self.hidden();
        let k = self.input_dim();
        let n = x.len() as f64;
        let mut g = MlpGrad {
            w1: vec![vec![0.0; k]; h],
            b1: vec![0.0; h],
            w2: vec![0.0; h],
            b2: 0.0,
        };
        let mut loss = 0.0;
        for (e, (xi, yi)) in x.iter().zip(y).enumerate() {
            let pre = self.hidden_pre(xi);
            let act: Vec<f64> = pre
                .iter()
                .enumerate()
                .map(|(j, p)| p.max(0.0) * mask.map_or(1.0, |m| m[e][j]))
                .collect();
            let out = dot(&act, &self.w2) + self.b2;
            let diff = out - yi;
            loss += diff * diff;
            let dout = 2.0 * diff / n;
            g.b2 += dout;
            for j in 0..h {
                g.w2[j] += dout * act[j];
                if pre[j] > 0.0 {
                    let dpre = dout * self.w2[j] * mask.map_or(1.0, |m| m[e][j]);
                    g.b1[j] += dpre;
                    for (gw, xv) in g.w1[j].iter_mut().zip(xi.iter()) {
                        *gw += dpre * xv;
                    }
                }
            }
        }
        (loss / n, g)
    }

    fn step(&mut self, g: &MlpGrad, lr: f64) {
        for (row, grow) in self.w1.iter_mut().zip(&g.w1) {
            for (w, gw) in row.iter_mut().zip(grow) {
                *w -= lr * gw;
            }
        }
        for (b, gb) in self.b1.iter_mut().zip(&g.b1) {
            *b -= lr * gb;
        }
        for (w, gw) in self.w2.iter_mut().zip(&g.w2) {
            *w -= lr * gw;
        }
        self.b2 -= lr * g.b2;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetaConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Dropout on hidden units during training; 0 disables it.
    pub dropout: f64,
    /// Feed the standardized raw features to the meta-learner next to the weak predictions.
    pub append_raw_features: bool,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            learning_rate: 1e-2,
            epochs: 500,
            batch_size: 32,
            dropout: 0.0,
            append_raw_features: false,
        }
    }
}

/// Mini-batch gradient descent on MSE. Returns the model and per-epoch mean loss.
pub fn train_meta(
    x: &[Vec<f64>],
    y: &[f64],
    cfg: &MetaConfig,
    seed: u64,
) -> Result<(MetaMlp, Vec<f64>), EnsembleError> {
    let k = check_xy(x, y)?;
    if cfg.hidden == 0 || !(cfg.learning_rate > 0.0) || cfg.batch_size == 0 || !(0.0..1.0).contains(&cfg.dropout) {
        return Err(EnsembleError::InvalidArgument(
            "meta-learner needs hidden >= 1, learning_rate > 0, batch_size >= 1, dropout in [0, 1)".into(),
        ));
    }
    let y_mean = y.iter().sum::<f64>() / y.len() as f64;
    let mut mlp = MetaMlp::init(k, cfg.hidden, y_mean, seed);
    let mut r = rng(seed ^ 0x5bd1_e995);
    let mut order: Vec<usize> = (0..x.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut r);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let xb: Vec<&[f64]> = chunk.iter().map(|&i| x[i].as_slice()).collect();
            let yb: Vec<f64> = chunk.iter().map(|&i| y[i]).collect();
            let mask: Option<Vec<Vec<f64>>> = (cfg.dropout > 0.0).then(|| {
                let keep = 1.0 - cfg.dropout;
                chunk
                    .iter()
                    .map(|_| {
                        (0..cfg.hidden)
                            .map(|_| if r.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                            .collect()
                    })
                    .collect()
            });
            let (loss, g) = mlp.loss_and_grad(&xb, &yb, mask.as_deref());
            if !loss.is_finite() {
                return Err(EnsembleError::Diverged { learner: "meta-mlp", epoch });
            }
            mlp.step(&g, cfg.learning_rate);
            total += loss;
            batches += 1;
        }
        history.push(total / batches as f64);
    }
    Ok((mlp, history))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StackConfig {
    pub k_folds: usize,
    pub ridge_lambda: f64,
    pub svr: SvrConfig,
    pub tree_max_depth: usize,
    pub tree_min_leaf: usize,
    pub meta: MetaConfig,
    pub seed: u64,
}

impl Default for StackConfig {
    fn default() -> Self {
        Self {
            k_folds: 5,
            ridge_lambda: 1.0,
            svr: SvrConfig::default(),
            tree_max_depth: 6,
            tree_min_leaf: 5,
            meta: MetaConfig::default(),
            seed: 0,
        }
    }
}

/// The three base learners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakLearnerSet {
    pub ridge: RidgeParams,
    pub svr: SvrParams,
    pub tree: TreeParams,
}

impl WeakLearnerSet {
    fn fit(x: &[Vec<f64>], y: &[f64], cfg: &StackConfig, seed: u64) -> Result<Self, EnsembleError> {
        let min_leaf = cfg.tree_min_leaf.min(x.len()).max(1);
        Ok(Self {
            ridge: fit_ridge(x, y, cfg.ridge_lambda)?,
            svr: fit_svr(x, y, &cfg.svr, seed)?.params,
            tree: fit_tree(x, y, cfg.tree_max_depth, min_leaf)?,
        })
    }

    pub fn predict(&self, x: &[f64]) -> [f64; 3] {
        [self.ridge.predict(x), self.svr.predict(x), self.tree.predict(x)]
    }
}

/// Which samples each fold's learners were trained on and which they predicted.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldBookkeeping {
    pub fold_of_sample: Vec<usize>,
    pub trained_on: Vec<Vec<usize>>,
    pub predicted: Vec<Vec<usize>>,
}

impl FoldBookkeeping {
    /// True when no fold predicted a sample it trained on and every sample was predicted once.
    pub fn is_leak_free(&self) -> bool {
        let mut count = vec![0usize; self.fold_of_sample.len()];
        for (train, pred) in self.trained_on.iter().zip(&self.predicted) {
            let mut in_train = vec![false; self.fold_of_sample.len()];
            train.iter().for_each(|&i| in_train[i] = true);
            for &i in pred {
                if in_train[i] {
                    return false;
                }
                count[i] += 1;
            }
        }
        count.iter().all(|&c| c == 1)
    }
}

pub const MODEL_FORMAT: &str = "ttseval-mos-stack";
pub const MODEL_VERSION: u32 = 1;

/// Trained stack, serializable as the model container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedMosModel {
    pub format: String,
    pub version: u32,
    pub feature_dim: usize,
    pub input_standardizer: Standardizer,
    pub weak: WeakLearnerSet,
    pub meta_standardizer: Standardizer,
    pub meta: MetaMlp,
    pub append_raw_features: bool,
    pub config: StackConfig,
}

/// Training by-products kept out of the saved model.
#[derive(Debug, Clone)]
pub struct StackDiagnostics {
    /// N×3 out-of-fold weak predictions.
    pub oof_predictions: Vec<[f64; 3]>,
    pub folds: FoldBookkeeping,
    pub meta_loss: Vec<f64>,
}

impl StackedMosModel {
    fn meta_input(&self, z: &[f64], weak: [f64; 3]) -> Vec<f64> {
        let mut v = weak.to_vec();
        if self.append_raw_features {
            v.extend_from_slice(z);
        }
        self.meta_standardizer.apply(&v)
    }

    /// The three weak-learner predictions for a raw feature vector.
    pub fn weak_predictions(&self, feature: &[f64]) -> Result<[f64; 3], EnsembleError> {
        if feature.len() != self.feature_dim {
            return Err(EnsembleError::DimensionMismatch {
                expected: self.feature_dim,
                got: feature.len(),
            });
        }
        Ok(self.weak.predict(&self.input_standardizer.apply(feature)))
    }

    /// Meta-learner output on the weak predictions, clamped to [1, 5].
    pub fn predict(&self, feature: &[f64]) -> Result<f64, EnsembleError> {
        let weak = self.weak_predictions(feature)?;
        let z = self.input_standardizer.apply(feature);
        Ok(self.meta.forward(&self.meta_input(&z, weak)).clamp(1.0, 5.0))
    }

    pub fn predict_batch(&self, features: &[StackedFeature]) -> Result<Vec<f64>, EnsembleError> {
        features.par_iter().map(|f| self.predict(&f.vector)).collect()
    }

    pub fn validate(&self) -> Result<(), EnsembleError> {
        if self.format != MODEL_FORMAT || self.version != MODEL_VERSION {
            return Err(EnsembleError::InvalidModel(format!(
                "expected {MODEL_FORMAT} v{MODEL_VERSION}, found {} v{}",
                self.format, self.version
            )));
        }
        let d = self.feature_dim;
        let meta_in = 3 + if self.append_raw_features { d } else { 0 };
        let ok = self.input_standardizer.dim() == d
            && self.weak.ridge.weights.len() == d
            && self.weak.svr.weights.len() == d
            && self.meta_standardizer.dim() == meta_in
            && self.meta.input_dim() == meta_in
            && self.meta.w2.len() == self.meta.hidden()
            && self.meta.w1.iter().all(|r| r.len() == meta_in);
        if !ok {
            return Err(EnsembleError::InvalidModel(format!(
                "component dimensions disagree with feature_dim {d}"
            )));
        }
        self.weak.tree.validate()?;
        for node in &self.weak.tree.nodes {
            if let TreeNode::Split { feature, .. } = node {
                if *feature >= d {
                    return Err(EnsembleError::InvalidModel(format!("tree splits on feature {feature} >= {d}")));
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EnsembleError> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EnsembleError> {
        let m: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        m.validate()?;
        Ok(m)
    }
}

/// K-fold out-of-fold stacking.
pub fn fit_stack(
    features: &[StackedFeature],
    targets: &BTreeMap<String, f64>,
    cfg: &StackConfig,
) -> Result<(StackedMosModel, StackDiagnostics), EnsembleError> {
    if features.is_empty() {
        return Err(EnsembleError::Empty);
    }
    if cfg.k_folds < 2 {
        return Err(EnsembleError::InvalidArgument(format!("k_folds must be >= 2, got {}", cfg.k_folds)));
    }
    let raw: Vec<Vec<f64>> = features.iter().map(|f| f.vector.clone()).collect();
    let y: Vec<f64> = features
        .iter()
        .map(|f| {
            targets
                .get(&f.clip_id)
                .copied()
                .ok_or_else(|| EnsembleError::MissingTarget(f.clip_id.clone()))
        })
        .collect::<Result<_, _>>()?;
    let d = check_xy(&raw, &y)?;
    let n = raw.len();

    let input_standardizer = Standardizer::fit(raw.iter().map(Vec::as_slice));
    let x: Vec<Vec<f64>> = raw.iter().map(|r| input_standardizer.apply(r)).collect();

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng(cfg.seed));
    let mut fold_of_sample = vec![0; n];
    for (pos, &i) in perm.iter().enumerate() {
        fold_of_sample[i] = pos % cfg.k_folds;
    }
    let predicted: Vec<Vec<usize>> = (0..cfg.k_folds)
        .map(|f| (0..n).filter(|&i| fold_of_sample[i] == f).collect())
        .collect();
    for (fold, members) in predicted.iter().enumerate() {
        if members.len() < 2 {
            return Err(EnsembleError::FoldTooSmall {
                fold,
                size: members.len(),
            });
        }
    }
    let trained_on: Vec<Vec<usize>> = (0..cfg.k_folds)
        .map(|f| (0..n).filter(|&i| fold_of_sample[i] != f).collect())
        .collect();

    let fold_preds: Vec<Vec<(usize, [f64; 3])>> = (0..cfg.k_folds)
        .into_par_iter()
        .map(|f| {
            let xt: Vec<Vec<f64>> = trained_on[f].iter().map(|&i| x[i].clone()).collect();
            let yt: Vec<f64> = trained_on[f].iter().map(|&i| y[i]).collect();
            let learners = WeakLearnerSet::fit(&xt, &yt, cfg, cfg.seed.wrapping_add(1 + f as u64))?;
            Ok(predicted[f].iter().map(|&i| (i, learners.predict(&x[i]))).collect())
        })
        .collect::<Result<_, EnsembleError>>()?;
    let mut oof = vec![[0.0; 3]; n];
    for (i, p) in fold_preds.into_iter().flatten() {
        oof[i] = p;
    }

    let meta_raw: Vec<Vec<f64>> = oof
        .iter()
        .zip(&x)
        .map(|(p, z)| {
            let mut v = p.to_vec();
            if cfg.meta.append_raw_features {
                v.extend_from_slice(z);
            }
            v
        })
        .collect();
    let meta_standardizer = Standardizer::fit(meta_raw.iter().map(Vec::as_slice));
    let meta_x: Vec<Vec<f64>> = meta_raw.iter().map(|v| meta_standardizer.apply(v)).collect();
    let (meta, meta_loss) = train_meta(&meta_x, &y, &cfg.meta, cfg.seed.wrapping_add(0x9e37))?;

    let weak = WeakLearnerSet::fit(&x, &y, cfg, cfg.seed)?;
    let model = StackedMosModel {
        format: MODEL_FORMAT.to_string(),
        version: MODEL_VERSION,
        feature_dim: d,
        input_standardizer,
        weak,
        meta_standardizer,
        meta,
        append_raw_features: cfg.meta.append_raw_features,
        config: *cfg,
    };
    Ok((
        model,
        StackDiagnostics {
            oof_predictions: oof,
            folds: FoldBookkeeping {
                fold_of_sample,
                trained_on,
                predicted,
            },
            meta_loss,
        },
    ))
}

/// Single-clip prediction; see [`StackedMosModel::predict`].
pub fn predict_mos(model: &StackedMosModel, feature: &StackedFeature) -> Result<f64, EnsembleError> {
    model.predict(&feature.vector)
}
