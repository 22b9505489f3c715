//! Variable-length sequence batching: length-sorted batches, padding masks,
//! and sequence-level pooling and loss.
//!
//! A linear per-frame regressor trained through the masked pooling stands in
//! for a full frame-level network so the mechanics can be exercised end to end.

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::features::FeatureMatrix;
use crate::util::rng;

#[derive(Debug, Error, PartialEq)]
pub enum BatchingError {
    #[error("item {0} has no valid frames")]
    NoValidFrames(usize),
    #[error("item {item}: {detail}")]
    Shape { item: usize, detail: String },
    #[error("batch size must be at least 1")]
    ZeroBatchSize,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid duration {value} for item {item}")]
    InvalidDuration { item: usize, value: f64 },
}

/// Pads every matrix to the longest one in the batch with `fill`; `valid_frames` is preserved.
pub fn pad_batch(items: &[FeatureMatrix], fill: f64) -> Vec<FeatureMatrix> {
    let t_max = items.iter().map(FeatureMatrix::n_frames).max().unwrap_or(0);
    items.iter().map(|m| m.padded(t_max - m.n_frames(), fill)).collect()
}

/// Mean of per-frame scores over each item's first `valid_frames` frames.
///
/// `per_frame_scores[i]` must have one score per frame of `frames[i]`,
/// padded frames included; padded scores are ignored.
pub fn masked_sequence_pool(
    frames: &[FeatureMatrix],
    per_frame_scores: &[Vec<f64>],
) -> Result<Vec<f64>, BatchingError> {
    if frames.len() != per_frame_scores.len() {
        return Err(BatchingError::LengthMismatch(frames.len(), per_frame_scores.len()));
    }
    frames
        .iter()
        .zip(per_frame_scores)
        .enumerate()
        .map(|(i, (m, s))| {
            let v = m.valid_frames;
            if v == 0 {
                return Err(BatchingError::NoValidFrames(i));
            }
            if s.len() != m.n_frames() || v > m.n_frames() {
                return Err(BatchingError::Shape {
                    item: i,
                    detail: format!("{} scores, {} frames, {} valid", s.len(), m.n_frames(), v),
                });
            }
            Ok(s[..v].iter().sum::<f64>() / v as f64)
        })
        .collect()
}

/// Mean over utterances of `(pooled - target)²`.
pub fn sequence_mse(pooled: &[f64], targets: &[f64]) -> Result<f64, BatchingError> {
    if pooled.len() != targets.len() {
        return Err(BatchingError::LengthMismatch(pooled.len(), targets.len()));
    }
    if pooled.is_empty() {
        return Ok(0.0);
    }
    Ok(pooled.iter().zip(targets).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pooled.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchPlan {
    /// Item indices per batch, in the (shuffled) order batches are visited.
    pub batches: Vec<Vec<usize>>,
    pub padded_total: f64,
    pub content_total: f64,
}

impl BatchPlan {
    /// Padding added relative to real content; 0 when no item is padded.
    pub fn padding_ratio(&self) -> f64 {
        if self.content_total > 0.0 {
            self.padded_total / self.content_total
        } else {
            0.0
        }
    }
}

fn check_durations(durations: &[f64], batch_size: usize) -> Result<(), BatchingError> {
    if batch_size == 0 {
        return Err(BatchingError::ZeroBatchSize);
    }
    if let Some((item, &value)) = durations.iter().enumerate().find(|(_, d)| !(d.is_finite() && **d >= 0.0)) {
        return Err(BatchingError::InvalidDuration { item, value });
    }
    Ok(())
}

/// Padding needed when each batch is padded to its longest member.
pub fn padding_of(durations: &[f64], batches: &[Vec<usize>]) -> f64 {
    batches
        .iter()
        .map(|b| {
            let longest = b.iter().map(|&i| durations[i]).fold(0.0, f64::max);
            b.iter().map(|&i| longest - durations[i]).sum::<f64>()
        })
        .sum()
}

/// Batches items in the given order, `batch_size` at a time.
pub fn sequential_batches(
    durations: &[f64],
    order: &[usize],
    batch_size: usize,
) -> Result<BatchPlan, BatchingError> {
    check_durations(durations, batch_size)?;
    let batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    Ok(BatchPlan {
        padded_total: padding_of(durations, &batches),
        content_total: durations.iter().sum(),
        batches,
    })
}

/// Sorts items by duration (stable, index tie-break), chunks consecutively,
/// then shuffles the order of whole batches with `seed`.
pub fn length_sorted_batches(
    durations: &[f64],
    batch_size: usize,
    seed: u64,
) -> Result<BatchPlan, BatchingError> {
    check_durations(durations, batch_size)?;
    let mut order: Vec<usize> = (0..durations.len()).collect();
    order.sort_by(|&a, &b| durations[a].total_cmp(&durations[b]).then(a.cmp(&b)));
    let mut plan = sequential_batches(durations, &order, batch_size)?;
    plan.batches.shuffle(&mut rng(seed));
    Ok(plan)
}

/// Linear per-frame scorer `w·x_t + b`, pooled over valid frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRegressor {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl FrameRegressor {
    pub fn new(dim: usize, bias: f64) -> Self {
        Self {
            weights: vec![0.0; dim],
            bias,
        }
    }

    pub fn frame_scores(&self, m: &FeatureMatrix) -> Vec<f64> {
        m.rows()
            .map(|r| r.iter().zip(&self.weights).map(|(x, w)| x * w).sum::<f64>() + self.bias)
            .collect()
    }

    pub fn predict(&self, batch: &[FeatureMatrix]) -> Result<Vec<f64>, BatchingError> {
        let scores: Vec<Vec<f64>> = batch.iter().map(|m| self.frame_scores(m)).collect();
        masked_sequence_pool(batch, &scores)
    }

    /// Sequence-level MSE of a batch and its gradient `(d/dw, d/db)`.
    pub fn loss_and_grad(
        &self,
        batch: &[FeatureMatrix],
        targets: &[f64],
    ) -> Result<(f64, Vec<f64>, f64), BatchingError> {
        let pooled = self.predict(batch)?;
        let loss = sequence_mse(&pooled, targets)?;
        let n = batch.len() as f64;
        let mut gw = vec![0.0; self.weights.len()];
        let mut gb = 0.0;
        for ((m, p), t) in batch.iter().zip(&pooled).zip(targets) {
            let coef = 2.0 * (p - t) / n;
            let v = m.valid_frames as f64;
            for r in m.rows().take(m.valid_frames) {
                for (g, x) in gw.iter_mut().zip(r) {
                    *g += coef * x / v;
                }
            }
            gb += coef;
        }
        Ok((loss, gw, gb))
    }

    /// Gradient descent over length-sorted, padded batches. Returns per-epoch mean loss.
    pub fn fit(
        &mut self,
        items: &[FeatureMatrix],
        targets: &[f64],
        batch_size: usize,
        epochs: usize,
        learning_rate: f64,
        seed: u64,
    ) -> Result<Vec<f64>, BatchingError> {
        if items.len() != targets.len() {
            return Err(BatchingError::LengthMismatch(items.len(), targets.len()));
        }
        if let Some((item, m)) = items.iter().enumerate().find(|(_, m)| m.dim() != self.weights.len()) {
            return Err(BatchingError::Shape {
                item,
                detail: format!("dim {} vs regressor dim {}", m.dim(), self.weights.len()),
            });
        }
        let lengths: Vec<f64> = items.iter().map(|m| m.valid_frames as f64).collect();
        let mut history = Vec::with_capacity(epochs);
        for epoch in 0..epochs {
            let plan = length_sorted_batches(&lengths, batch_size, seed.wrapping_add(epoch as u64))?;
            let mut total = 0.0;
            for b in &plan.batches {
                let batch: Vec<FeatureMatrix> = b.iter().map(|&i| items[i].clone()).collect();
                let batch = pad_batch(&batch, 0.0);
                let t: Vec<f64> = b.iter().map(|&i| targets[i]).collect();
                let (loss, gw, gb) = self.loss_and_grad(&batch, &t)?;
                for (w, g) in self.weights.iter_mut().zip(&gw) {
                    *w -= learning_rate * g;
                }
                self.bias -= learning_rate * gb;
                total += loss * b.len() as f64;
            }
            history.push(total / items.len().max(1) as f64);
        }
        Ok(history)
    }
}
