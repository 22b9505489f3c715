//! Side-by-side preference model with an antisymmetric bilinear score.
//!
//! For utterance embeddings `a` and `b` (optionally projected by a learned
//! linear map), the score is `aᵀWb − bᵀWa` and the preference probability is
//! its logistic sigmoid. Swapping the two clips negates the score exactly, so
//! `P(a > b) + P(b > a) = 1` holds by construction for any `W`.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::Standardizer;
use crate::metrics::{self, BinaryScoredSeries, MetricsError};
use crate::ratings::SbsPair;
use crate::util::rng;

#[derive(Debug, Error)]
pub enum SbsError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite value at batch index {0}")]
    NonFinite(usize),
    #[error("no embedding for clip {0}")]
    MissingEmbedding(String),
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid model file: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Learnable parameters: `w` is d×d; `projection` (when present) is D×d and
/// maps a D-dimensional input `x` to `projectionᵀ x`.
#[derive(Debug, Clone, PartialEq)]
pub struct SbsModelParams {
    pub w: DMatrix<f64>,
    pub projection: Option<DMatrix<f64>>,
}

impl SbsModelParams {
    pub fn new(w: DMatrix<f64>) -> Self {
        assert!(w.is_square(), "W must be square");
        Self { w, projection: None }
    }

    pub fn with_projection(w: DMatrix<f64>, projection: DMatrix<f64>) -> Self {
        assert!(w.is_square(), "W must be square");
        assert_eq!(projection.ncols(), w.nrows(), "projection output must match W");
        Self {
            w,
            projection: Some(projection),
        }
    }

    /// Embedding dimension `d` seen by W.
    pub fn d(&self) -> usize {
        self.w.nrows()
    }

    /// Dimension of raw inputs.
    pub fn input_dim(&self) -> usize {
        self.projection.as_ref().map_or(self.d(), |p| p.nrows())
    }

    fn embed(&self, x: &[f64]) -> Result<DVector<f64>, SbsError> {
        if x.len() != self.input_dim() {
            return Err(SbsError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let x = DVector::from_column_slice(x);
        Ok(match &self.projection {
            Some(p) => p.tr_mul(&x),
            None => x,
        })
    }
}

/// `xᵀ W y`, summed row by row in a fixed order.
fn bilinear(x: &DVector<f64>, w: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let mut total = 0.0;
    for i in 0..w.nrows() {
        let mut row = 0.0;
        for j in 0..w.ncols() {
            row += w[(i, j)] * y[j];
        }
        total += x[i] * row;
    }
    total
}

fn score_embedded(w: &DMatrix<f64>, za: &DVector<f64>, zb: &DVector<f64>) -> f64 {
    bilinear(za, w, zb) - bilinear(zb, w, za)
}

/// Antisymmetric score `aᵀWb − bᵀWa`.
pub fn score(p: &SbsModelParams, z_a: &[f64], z_b: &[f64]) -> Result<f64, SbsError> {
    let za = p.embed(z_a)?;
    let zb = p.embed(z_b)?;
    Ok(score_embedded(&p.w, &za, &zb))
}

/// Logistic sigmoid, evaluated so that `sigmoid(s) + sigmoid(-s)` rounds to 1.
pub fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^s)` without overflow.
fn softplus(s: f64) -> f64 {
    s.max(0.0) + (-s.abs()).exp().ln_1p()
}

/// Probability that `a` is preferred over `b`.
pub fn predict(p: &SbsModelParams, z_a: &[f64], z_b: &[f64]) -> Result<f64, SbsError> {
    score(p, z_a, z_b).map(sigmoid)
}

/// One training example: two embeddings and the label (1 if the first wins).
pub type SbsExample<'a> = (&'a [f64], &'a [f64], u8);

#[derive(Debug, Clone)]
pub struct LossAndGrad {
    pub loss: f64,
    pub grad_w: DMatrix<f64>,
    pub grad_projection: Option<DMatrix<f64>>,
}

/// Mean binary cross-entropy plus `l2_weight·‖W‖²_F` and its exact gradients.
pub fn loss_and_grad(
    p: &SbsModelParams,
    batch: &[SbsExample],
    l2_weight: f64,
) -> Result<LossAndGrad, SbsError> {
    if batch.is_empty() {
        return Err(SbsError::EmptyBatch);
    }
    let d = p.d();
    let n = batch.len() as f64;
    let skew = &p.w - p.w.transpose();
    let mut grad_w = DMatrix::zeros(d, d);
    let mut grad_p = p.projection.as_ref().map(|pr| DMatrix::zeros(pr.nrows(), pr.ncols()));
    let mut loss = 0.0;
    for (i, &(xa, xb, label)) in batch.iter().enumerate() {
        let za = p.embed(xa)?;
        let zb = p.embed(xb)?;
        let s = score_embedded(&p.w, &za, &zb);
        let y = label as f64;
        let l = softplus(s) - y * s;
        if !s.is_finite() || !l.is_finite() {
            return Err(SbsError::NonFinite(i));
        }
        loss += l;
        // dL/ds
        let g = sigmoid(s) - y;
        grad_w += (&za * zb.transpose() - &zb * za.transpose()) * (g / n);
        if let Some(gp) = grad_p.as_mut() {
            let ds_dza = &skew * &zb;
            let ds_dzb = -(&skew * &za);
            let xa = DVector::from_column_slice(xa);
            let xb = DVector::from_column_slice(xb);
            *gp += (xa * ds_dza.transpose() + xb * ds_dzb.transpose()) * (g / n);
        }
    }
    loss = loss / n + l2_weight * p.w.norm_squared();
    grad_w += &p.w * (2.0 * l2_weight);
    Ok(LossAndGrad {
        loss,
        grad_w,
        grad_projection: grad_p,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbsTrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2_weight: f64,
    pub seed: u64,
    pub init_scale: f64,
    /// Heavy-ball momentum; 0 gives plain SGD.
    #[serde(default)]
    pub momentum: f64,
    /// When set, a D×`projection_dim` projection is trained jointly with W.
    #[serde(default)]
    pub projection_dim: Option<usize>,
}

impl Default for SbsTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 50,
            batch_size: 32,
            l2_weight: 1e-4,
            seed: 0,
            init_scale: 0.01,
            momentum: 0.0,
            projection_dim: None,
        }
    }
}

impl SbsTrainConfig {
    pub fn validate(&self) -> Result<(), SbsError> {
        if !(self.learning_rate > 0.0) || self.epochs < 1 || self.batch_size < 1 {
            return Err(SbsError::InvalidConfig(
                "learning_rate > 0, epochs >= 1 and batch_size >= 1 are required".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.l2_weight < 0.0 || self.init_scale < 0.0 {
            return Err(SbsError::InvalidConfig(
                "momentum must be in [0, 1); l2_weight and init_scale must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainedSbs {
    pub params: SbsModelParams,
    /// Mean mini-batch loss per epoch.
    pub loss_history: Vec<f64>,
}

fn lookup<'a>(emb: &'a BTreeMap<String, Vec<f64>>, id: &str) -> Result<&'a [f64], SbsError> {
    emb.get(id)
        .map(Vec::as_slice)
        .ok_or_else(|| SbsError::MissingEmbedding(id.to_string()))
}

/// Mini-batch gradient descent on the pair log-loss.
pub fn train_sbs(
    pairs: &[SbsPair],
    embeddings: &BTreeMap<String, Vec<f64>>,
    cfg: &SbsTrainConfig,
) -> Result<TrainedSbs, SbsError> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(SbsError::EmptyBatch);
    }
    let examples: Vec<SbsExample> = pairs
        .iter()
        .map(|p| Ok((lookup(embeddings, &p.clip_a)?, lookup(embeddings, &p.clip_b)?, p.label)))
        .collect::<Result<_, SbsError>>()?;
    let input_dim = examples[0].0.len();
    let d = cfg.projection_dim.unwrap_or(input_dim);

    let mut r = rng(cfg.seed);
    let w = DMatrix::from_fn(d, d, |_, _| r.random_range(-1.0..=1.0) * cfg.init_scale);
    let mut params = match cfg.projection_dim {
        None => SbsModelParams::new(w),
        Some(_) => {
            let s = (3.0 / input_dim as f64).sqrt();
            let proj = DMatrix::from_fn(input_dim, d, |_, _| r.random_range(-s..=s));
            SbsModelParams::with_projection(w, proj)
        }
    };

    let mut vel_w = DMatrix::zeros(d, d);
    let mut vel_p = params.projection.as_ref().map(|p| DMatrix::zeros(p.nrows(), p.ncols()));
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut batch: Vec<SbsExample> = Vec::with_capacity(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut r);
        let mut total = 0.0;
        let mut n_batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| examples[i]));
            let lg = loss_and_grad(&params, &batch, cfg.l2_weight)?;
            if !lg.loss.is_finite() {
                return Err(SbsError::Diverged { epoch, loss: lg.loss });
            }
            total += lg.loss;
            n_batches += 1;
            vel_w = &vel_w * cfg.momentum - lg.grad_w * cfg.learning_rate;
            params.w += &vel_w;
            if let (Some(p), Some(v), Some(g)) = (params.projection.as_mut(), vel_p.as_mut(), lg.grad_projection) {
                *v = &*v * cfg.momentum - g * cfg.learning_rate;
                *p += &*v;
            }
        }
        let mean = total / n_batches as f64;
        if !mean.is_finite() || params.w.iter().any(|v| !v.is_finite()) {
            return Err(SbsError::Diverged { epoch, loss: mean });
        }
        history.push(mean);
    }
    Ok(TrainedSbs {
        params,
        loss_history: history,
    })
}

/// Preference probabilities for each pair.
pub fn predict_pairs(
    p: &SbsModelParams,
    pairs: &[SbsPair],
    embeddings: &BTreeMap<String, Vec<f64>>,
) -> Result<Vec<f64>, SbsError> {
    pairs
        .iter()
        .map(|pair| {
            predict(
                p,
                lookup(embeddings, &pair.clip_a)?,
                lookup(embeddings, &pair.clip_b)?,
            )
        })
        .collect()
}

/// Accuracy at threshold 0.5 (ties count as label 0) and Mann-Whitney AUC.
pub fn evaluate_sbs(
    p: &SbsModelParams,
    pairs: &[SbsPair],
    embeddings: &BTreeMap<String, Vec<f64>>,
) -> Result<(f64, f64), SbsError> {
    let probs = predict_pairs(p, pairs, embeddings)?;
    let labels: Vec<u8> = pairs.iter().map(|p| p.label).collect();
    let series = BinaryScoredSeries::new(&probs, &labels)?;
    Ok((metrics::accuracy(series, 0.5), metrics::auc_roc(series)?))
}

pub const MODEL_FORMAT: &str = "ttseval-sbs";
pub const MODEL_VERSION: u32 = 1;

/// On-disk container for a trained preference model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbsModelFile {
    pub format: String,
    pub version: u32,
    pub d: usize,
    pub has_projection: bool,
    pub input_dim: usize,
    /// Row-major d×d.
    pub w: Vec<f64>,
    /// Row-major input_dim×d.
    #[serde(default)]
    pub projection: Vec<f64>,
    pub config: SbsTrainConfig,
    /// Normalization applied to raw embeddings before the model.
    #[serde(default)]
    pub normalizer: Option<Standardizer>,
    /// Whether a constant 1 is appended after normalization.
    #[serde(default)]
    pub append_bias: bool,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])).collect()
}

impl SbsModelFile {
    pub fn new(params: &SbsModelParams, config: SbsTrainConfig) -> Self {
        Self {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            d: params.d(),
            has_projection: params.projection.is_some(),
            input_dim: params.input_dim(),
            w: row_major(&params.w),
            projection: params.projection.as_ref().map(row_major).unwrap_or_default(),
            config,
            normalizer: None,
            append_bias: false,
        }
    }

    pub fn params(&self) -> Result<SbsModelParams, SbsError> {
        if self.format != MODEL_FORMAT || self.version != MODEL_VERSION {
            return Err(SbsError::InvalidModel(format!(
                "expected {MODEL_FORMAT} v{MODEL_VERSION}, found {} v{}",
                self.format, self.version
            )));
        }
        if self.w.len() != self.d * self.d {
            return Err(SbsError::InvalidModel(format!(
                "W has {} values, expected {}",
                self.w.len(),
                self.d * self.d
            )));
        }
        let w = DMatrix::from_row_slice(self.d, self.d, &self.w);
        if !self.has_projection {
            if self.input_dim != self.d || !self.projection.is_empty() {
                return Err(SbsError::InvalidModel("input_dim must equal d without projection".into()));
            }
            return Ok(SbsModelParams::new(w));
        }
        if self.projection.len() != self.input_dim * self.d {
            return Err(SbsError::InvalidModel(format!(
                "projection has {} values, expected {}",
                self.projection.len(),
                self.input_dim * self.d
            )));
        }
        let p = DMatrix::from_row_slice(self.input_dim, self.d, &self.projection);
        Ok(SbsModelParams::with_projection(w, p))
    }

    /// Maps a raw embedding into the model's input space.
    pub fn prepare(&self, raw: &[f64]) -> Vec<f64> {
        let mut v = match &self.normalizer {
            Some(n) => n.apply(raw),
            None => raw.to_vec(),
        };
        if self.append_bias {
            v.push(1.0);
        }
        v
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SbsError> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SbsError> {
        let file: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        file.params()?;
        if let Some(n) = &file.normalizer {
            let expected = file.input_dim - usize::from(file.append_bias);
            if n.dim() != expected {
                return Err(SbsError::InvalidModel(format!(
                    "normalizer has {} dims, model expects {expected}",
                    n.dim()
                )));
            }
        }
        Ok(file)
    }
}
