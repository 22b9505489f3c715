//! Central finite-difference checks for the two hand-derived gradients.

use nalgebra::DMatrix;
use rand::Rng;
use ttseval::ensemble::MetaMlp;
use ttseval::sbs::{self, SbsExample, SbsModelParams};

use super::oracles::rel_err;

pub const EPS: f64 = 1e-5;

fn random_matrix(r: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| r.random_range(-scale..scale))
}

/// Max relative error over every entry of ∂L/∂W and ∂L/∂P for a random
/// instance with a `input_dim`→`d` projection.
pub fn sbs_instance(seed: u64, d: usize, input_dim: usize, l2: f64) -> f64 {
    let mut r = super::rng(seed);
    let w = random_matrix(&mut r, d, d, 0.5);
    let p = random_matrix(&mut r, input_dim, d, 0.5);
    let xs: Vec<(Vec<f64>, Vec<f64>, u8)> = (0..6)
        .map(|_| {
            let a = (0..input_dim).map(|_| r.random_range(-1.0..1.0)).collect();
            let b = (0..input_dim).map(|_| r.random_range(-1.0..1.0)).collect();
            (a, b, r.random_range(0..2))
        })
        .collect();
    let batch: Vec<SbsExample> = xs.iter().map(|(a, b, l)| (a.as_slice(), b.as_slice(), *l)).collect();

    let params = SbsModelParams::with_projection(w.clone(), p.clone());
    let g = sbs::loss_and_grad(&params, &batch, l2).unwrap();
    let gp = g.grad_projection.unwrap();

    let nw = d * d;
    let flat: Vec<f64> = w.iter().chain(p.iter()).copied().collect();
    let loss = |v: &[f64]| {
        let w = DMatrix::from_column_slice(d, d, &v[..nw]);
        let p = DMatrix::from_column_slice(input_dim, d, &v[nw..]);
        sbs::loss_and_grad(&SbsModelParams::with_projection(w, p), &batch, l2).unwrap().loss
    };
    let analytic: Vec<f64> = g.grad_w.iter().chain(gp.iter()).copied().collect();
    (0..flat.len())
        .map(|i| rel_err(analytic[i], super::oracles::central_diff(&loss, &flat, i, EPS)))
        .fold(0.0, f64::max)
}

fn flatten(m: &MetaMlp) -> Vec<f64> {
    let mut v: Vec<f64> = m.w1.iter().flatten().copied().collect();
    v.extend(&m.b1);
    v.extend(&m.w2);
    v.push(m.b2);
    v
}

fn unflatten(v: &[f64], k: usize, h: usize) -> MetaMlp {
    let mut it = v.iter().copied();
    let w1 = (0..h).map(|_| it.by_ref().take(k).collect()).collect();
    let b1 = it.by_ref().take(h).collect();
    let w2 = it.by_ref().take(h).collect();
    MetaMlp {
        w1,
        b1,
        w2,
        b2: it.next().unwrap(),
    }
}

/// Max relative error over all four parameter blocks of the meta-learner.
/// Instances with a hidden pre-activation near the ReLU kink are redrawn.
pub fn mlp_instance(seed: u64, k: usize, h: usize) -> f64 {
    let mut r = super::rng(seed);
    loop {
        let mlp = MetaMlp::init(k, h, r.random_range(1.0..5.0), r.random());
        let xs: Vec<Vec<f64>> = (0..8).map(|_| (0..k).map(|_| r.random_range(-2.0..2.0)).collect()).collect();
        let ys: Vec<f64> = (0..8).map(|_| r.random_range(1.0..5.0)).collect();
        let near_kink = xs.iter().any(|x| {
            mlp.w1.iter().zip(&mlp.b1).any(|(row, b)| {
                let pre: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b;
                pre.abs() < 1e-3
            })
        });
        if near_kink {
            continue;
        }
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let (_, g) = mlp.loss_and_grad(&refs, &ys, None);
        let analytic = flatten(&MetaMlp {
            w1: g.w1,
            b1: g.b1,
            w2: g.w2,
            b2: g.b2,
        });
        let flat = flatten(&mlp);
        let loss = |v: &[f64]| unflatten(v, k, h).loss_and_grad(&refs, &ys, None).0;
        return (0..flat.len())
            .map(|i| rel_err(analytic[i], super::oracles::central_diff(&loss, &flat, i, EPS)))
            .fold(0.0, f64::max);
    }
}
