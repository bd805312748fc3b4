#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;
use srmmd::rng::{stream, FlowRng, Stream};
use srmmd::Points;

pub fn rng(seed: u64) -> FlowRng {
    stream(seed, Stream::Metrics)
}

pub fn uniform_points(n: usize, d: usize, lo: f64, hi: f64, rng: &mut FlowRng) -> Points {
    let data = (0..n * d).map(|_| rng.random_range(lo..hi)).collect();
    Points::from_flat(data, d).unwrap()
}

pub fn uniform_vec(d: usize, lo: f64, hi: f64, rng: &mut FlowRng) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(lo..hi)).collect()
}

/// Central differences of a scalar function.
pub fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            xp[i] = x[i] + h;
            let fp = f(&xp);
            xp[i] = x[i] - h;
            let fm = f(&xp);
            xp[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Central differences of a vector function; entry `[i·d + j] = ∂_j g_i`.
pub fn fd_jacobian(g: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> Vec<f64> {
    let d = x.len();
    let m = g(x).len();
    let mut out = vec![0.0; m * d];
    let mut xp = x.to_vec();
    for j in 0..d {
        xp[j] = x[j] + h;
        let gp = g(&xp);
        xp[j] = x[j] - h;
        let gm = g(&xp);
        xp[j] = x[j];
        for i in 0..m {
            out[i * d + j] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }
    out
}

/// Norm-wise relative error `‖a − b‖∞ / ‖b‖∞` (absolute when `b` vanishes).
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = b.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.min()
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.max()
}
