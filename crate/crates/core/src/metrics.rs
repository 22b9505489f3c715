//! Scalar evaluation metrics for regression (MOS) and binary preference (SBS) outputs.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} values, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),
    #[error("all values tied in {0}")]
    AllTied(&'static str),
    #[error("AUC needs both classes present")]
    SingleClass,
    #[error("label {0} is not 0 or 1")]
    BadLabel(u8),
}

/// Predictions and targets of equal length.
#[derive(Debug, Clone, Copy)]
pub struct PairedSeries<'a> {
    pub predictions: &'a [f64],
    pub targets: &'a [f64],
}

impl<'a> PairedSeries<'a> {
    pub fn new(predictions: &'a [f64], targets: &'a [f64]) -> Result<Self, MetricsError> {
        if predictions.len() != targets.len() {
            return Err(MetricsError::LengthMismatch(predictions.len(), targets.len()));
        }
        if predictions.len() < 2 {
            return Err(MetricsError::TooShort {
                needed: 2,
                got: predictions.len(),
            });
        }
        if let Some(i) = predictions
            .iter()
            .zip(targets)
            .position(|(p, t)| !p.is_finite() || !t.is_finite())
        {
            return Err(MetricsError::NonFinite(i));
        }
        Ok(Self { predictions, targets })
    }

    pub fn len(&self) -> usize {
        self.predictions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictions.is_empty()
    }
}

/// Scores in [0, 1] with binary labels.
#[derive(Debug, Clone, Copy)]
pub struct BinaryScoredSeries<'a> {
    pub scores: &'a [f64],
    pub labels: &'a [u8],
}

impl<'a> BinaryScoredSeries<'a> {
    pub fn new(scores: &'a [f64], labels: &'a [u8]) -> Result<Self, MetricsError> {
        if scores.len() != labels.len() {
            return Err(MetricsError::LengthMismatch(scores.len(), labels.len()));
        }
        if scores.is_empty() {
            return Err(MetricsError::TooShort { needed: 1, got: 0 });
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(MetricsError::NonFinite(i));
        }
        if let Some(&l) = labels.iter().find(|&&l| l > 1) {
            return Err(MetricsError::BadLabel(l));
        }
        Ok(Self { scores, labels })
    }
}

pub fn mse(s: PairedSeries) -> f64 {
    s.predictions
        .iter()
        .zip(s.targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / s.len() as f64
}

pub fn rmse(s: PairedSeries) -> f64 {
    mse(s).sqrt()
}

fn pearson(x: &[f64], y: &[f64], what: &'static str) -> Result<f64, MetricsError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricsError::ZeroVariance(what));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson linear correlation.
pub fn lcc(s: PairedSeries) -> Result<f64, MetricsError> {
    pearson(s.predictions, s.targets, "series")
}

/// Average (mid) ranks, 1-based.
pub fn mid_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with mid-ranks for ties.
pub fn srcc(s: PairedSeries) -> Result<f64, MetricsError> {
    if s.predictions.iter().all(|&p| p == s.predictions[0]) {
        return Err(MetricsError::AllTied("predictions"));
    }
    if s.targets.iter().all(|&t| t == s.targets[0]) {
        return Err(MetricsError::AllTied("targets"));
    }
    pearson(&mid_ranks(s.predictions), &mid_ranks(s.targets), "ranks")
}

/// Sorts `v` in place and returns the number of inversions.
fn merge_count(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], buf) + merge_count(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf.push(v[j]);
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

/// Sum of t(t-1)/2 over runs of equal values in a sorted slice.
fn tie_pairs_sorted(v: &[f64]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for k in 1..v.len() {
        if v[k] == v[k - 1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Kendall's tau-b in O(n log n) by merge-sort inversion counting.
pub fn kendall_tau(s: PairedSeries) -> Result<f64, MetricsError> {
    let n = s.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        s.predictions[a]
            .total_cmp(&s.predictions[b])
            .then(s.targets[a].total_cmp(&s.targets[b]))
    });
    let xs: Vec<f64> = idx.iter().map(|&i| s.predictions[i]).collect();
    let mut ys: Vec<f64> = idx.iter().map(|&i| s.targets[i]).collect();

    let n0 = (n as u64) * (n as u64 - 1) / 2;
    let n1 = tie_pairs_sorted(&xs);
    // joint ties: runs equal in both coordinates (adjacent after the lexicographic sort)
    let mut n3 = 0u64;
    let mut run = 1u64;
    for k in 1..n {
        if xs[k] == xs[k - 1] && ys[k] == ys[k - 1] {
            run += 1;
        } else {
            n3 += run * (run - 1) / 2;
            run = 1;
        }
    }
    n3 += run * (run - 1) / 2;

    let mut buf = Vec::with_capacity(n);
    let swaps = merge_count(&mut ys, &mut buf);
    let n2 = tie_pairs_sorted(&ys);

    if n1 == n0 {
        return Err(MetricsError::AllTied("predictions"));
    }
    if n2 == n0 {
        return Err(MetricsError::AllTied("targets"));
    }
    // concordant - discordant
    let diff = n0 as i128 - n1 as i128 - n2 as i128 + n3 as i128 - 2 * swaps as i128;
    let denom = ((n0 - n1) as f64 * (n0 - n2) as f64).sqrt();
    Ok(diff as f64 / denom)
}

/// Fraction of items where `score > threshold` agrees with the label.
pub fn accuracy(b: BinaryScoredSeries, threshold: f64) -> f64 {
    let correct = b
        .scores
        .iter()
        .zip(b.labels)
        .filter(|(&s, &l)| u8::from(s > threshold) == l)
        .count();
    correct as f64 / b.scores.len() as f64
}

/// Mann-Whitney AUC with half credit for tied positive/negative scores.
pub fn auc_roc(b: BinaryScoredSeries) -> Result<f64, MetricsError> {
    let n_pos = b.labels.iter().filter(|&&l| l == 1).count();
    let n_neg = b.labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    let ranks = mid_ranks(b.scores);
    let rank_sum: f64 = ranks
        .iter()
        .zip(b.labels)
        .filter(|(_, &l)| l == 1)
        .map(|(r, _)| r)
        .sum();
    let (p, q) = (n_pos as f64, n_neg as f64);
    // pairs won by positives; mid-ranks make ties count 1/2 each
    let u = rank_sum - p * (p + 1.0) / 2.0;
    Ok(u / (p * q))
}

/// Means of `values` grouped by key, returned in key order.
pub fn group_means<'a>(keys: &[&'a str], values: &[f64]) -> BTreeMap<&'a str, f64> {
    let mut acc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for (k, v) in keys.iter().zip(values) {
        let e = acc.entry(*k).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

/// The `evaluate` report. Metrics that do not apply to the input are `None`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricsReport {
    pub mse: Option<f64>,
    pub rmse: Option<f64>,
    pub lcc: Option<f64>,
    pub srcc: Option<f64>,
    pub kendall_tau: Option<f64>,
    pub accuracy: Option<f64>,
    pub auc_roc: Option<f64>,
    pub n: usize,
}

impl MetricsReport {
    /// Regression metrics; correlations are left out when undefined (zero variance or all ties).
    pub fn regression(predictions: &[f64], targets: &[f64]) -> Result<Self, MetricsError> {
        let s = PairedSeries::new(predictions, targets)?;
        Ok(Self {
            mse: Some(mse(s)),
            rmse: Some(rmse(s)),
            lcc: lcc(s).ok(),
            srcc: srcc(s).ok(),
            kendall_tau: kendall_tau(s).ok(),
            accuracy: None,
            auc_roc: None,
            n: s.len(),
        })
    }

    pub fn binary(scores: &[f64], labels: &[u8], threshold: f64) -> Result<Self, MetricsError> {
        let b = BinaryScoredSeries::new(scores, labels)?;
        Ok(Self {
            accuracy: Some(accuracy(b, threshold)),
            auc_roc: auc_roc(b).ok(),
            n: scores.len(),
            ..Self::default()
        })
    }

    /// Flat `key: value` lines; absent metrics print as `n/a`.
    pub fn to_text(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.6}"));
        [
            ("mse", fmt(self.mse)),
            ("rmse", fmt(self.rmse)),
            ("lcc", fmt(self.lcc)),
            ("srcc", fmt(self.srcc)),
            ("kendall_tau", fmt(self.kendall_tau)),
            ("accuracy", fmt(self.accuracy)),
            ("auc_roc", fmt(self.auc_roc)),
            ("n", self.n.to_string()),
        ]
        .iter()
        .map(|(k, v)| format!("{k}: {v}\n"))
        .collect()
    }
}
