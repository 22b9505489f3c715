//! Brute-force reference implementations, written from the textbook
//! definitions and sharing no code with the library.

use std::collections::BTreeMap;

pub fn mse(p: &[f64], t: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..p.len() {
        acc += (p[i] - t[i]) * (p[i] - t[i]);
    }
    acc / p.len() as f64
}

/// Two-pass Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..x.len() {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Rank = 1 + (number strictly smaller) + (ties excluding self) / 2.
pub fn mid_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&a| {
            let less = v.iter().filter(|&&b| b < a).count() as f64;
            let eq = v.iter().filter(|&&b| b == a).count() as f64;
            1.0 + less + (eq - 1.0) / 2.0
        })
        .collect()
}

pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&mid_ranks(x), &mid_ranks(y))
}

/// O(n²) Kendall tau-b over all pairs.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let (mut conc, mut disc, mut tie_x, mut tie_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            if dx == 0.0 && dy == 0.0 {
                tie_x += 1;
                tie_y += 1;
            } else if dx == 0.0 {
                tie_x += 1;
            } else if dy == 0.0 {
                tie_y += 1;
            } else if (dx > 0.0) == (dy > 0.0) {
                conc += 1;
            } else {
                disc += 1;
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as f64;
    (conc - disc) as f64 / ((n0 - tie_x as f64) * (n0 - tie_y as f64)).sqrt()
}

pub fn accuracy(scores: &[f64], labels: &[u8], threshold: f64) -> f64 {
    let mut hit = 0;
    for i in 0..scores.len() {
        let pred = if scores[i] > threshold { 1 } else { 0 };
        if pred == labels[i] {
            hit += 1;
        }
    }
    hit as f64 / scores.len() as f64
}

/// Mann-Whitney AUC over all positive-negative pairs.
pub fn auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut acc, mut pairs) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    acc += 1.0;
                } else if scores[i] == scores[j] {
                    acc += 0.5;
                }
            }
        }
    }
    acc / pairs
}

/// (mean, population std) per rater, computed in two passes.
pub fn rater_moments(records: &[(String, String, f64)]) -> BTreeMap<String, (f64, f64)> {
    let mut by: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (rater, _, s) in records {
        by.entry(rater.clone()).or_default().push(*s);
    }
    by.into_iter()
        .map(|(k, v)| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
            (k, (m, var.sqrt()))
        })
        .collect()
}

/// Each rating against the mean of the other ratings of its clip.
pub fn loo_rmse(ratings: &[(String, f64)]) -> f64 {
    let (mut acc, mut n) = (0.0, 0usize);
    for (i, (clip, s)) in ratings.iter().enumerate() {
        let others: Vec<f64> = ratings
            .iter()
            .enumerate()
            .filter(|(j, (c, _))| *j != i && c == clip)
            .map(|(_, (_, v))| *v)
            .collect();
        if others.is_empty() {
            continue;
        }
        let m = others.iter().sum::<f64>() / others.len() as f64;
        acc += (s - m) * (s - m);
        n += 1;
    }
    (acc / n as f64).sqrt()
}

/// Central finite difference of `f` at `x` along coordinate `i`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize, eps: f64) -> f64 {
    let mut hi = x.to_vec();
    let mut lo = x.to_vec();
    hi[i] += eps;
    lo[i] -= eps;
    (f(&hi) - f(&lo)) / (2.0 * eps)
}

/// Relative error with an absolute floor for near-zero gradients.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}
