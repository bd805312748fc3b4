//! Langevin Stein kernels and score-model diagnostics.
//!
//! For a base kernel `k` and score `s = ∇ log π`,
//!
//! ```text
//! k_π(x, y) = s(x)ᵀs(y) k + s(x)ᵀ∇₂k + ∇₁kᵀ s(y) + Σ_l ∂_{1,l}∂_{2,l} k.
//! ```
//!
//! With a radial base `ψ(u)`, `u = ‖x − y‖²`, every derivative of `k_π` up to the
//! mixed Hessian is assembled from `ψ, …, ψ⁗` together with the score and its
//! Jacobian on each side; score second derivatives never appear.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kernels::{DerivativeStack, Kernel, KernelKind, RadialKernel};
use crate::points::{dot, sq_dist};
use crate::rng::FlowRng;
use crate::targets::Sampler;

/// Score `s(x) = ∇ log π(x)` of an unnormalized target and its Jacobian.
pub trait ScoreModel: Send + Sync {
    fn dim(&self) -> usize;

    fn score_into(&self, x: &[f64], out: &mut [f64]);

    /// Row-major `d × d`, entry `[a·d + b] = ∂_b s_a(x)`.
    fn jacobian_into(&self, x: &[f64], out: &mut [f64]);

    /// Log density up to an additive constant, when available.
    fn log_density(&self, _x: &[f64]) -> Option<f64> {
        None
    }

    fn score(&self, x: &[f64]) -> Vec<f64> {
        let mut s = vec![0.0; self.dim()];
        self.score_into(x, &mut s);
        s
    }

    fn jacobian(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut j = vec![0.0; d * d];
        self.jacobian_into(x, &mut j);
        j
    }
}

/// Langevin Stein kernel over a smooth radial base kernel.
#[derive(Clone)]
pub struct SteinKernel {
    lengthscale: f64,
    base: RadialKernel,
    score: Arc<dyn ScoreModel>,
}

impl std::fmt::Debug for SteinKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SteinKernel")
            .field("base", &self.base)
            .field("dim", &self.score.dim())
            .finish()
    }
}

impl SteinKernel {
    /// The base kernel must provide profile derivatives up to order 4.
    pub fn new(base: RadialKernel, score: Arc<dyn ScoreModel>) -> Result<Self> {
        match base {
            RadialKernel::Gaussian { lengthscale } => Ok(Self {
                lengthscale,
                base,
                score,
            }),
            other => Err(Error::Capability(format!(
                "Stein kernels need a base kernel with four profile derivatives, got {other:?}"
            ))),
        }
    }

    pub fn base(&self) -> &RadialKernel {
        &self.base
    }

    pub fn score_model(&self) -> &Arc<dyn ScoreModel> {
        &self.score
    }

    pub fn dim(&self) -> usize {
        self.score.dim()
    }

    /// Score followed by its Jacobian, the per-point data every pair term reuses.
    fn score_data(&self, x: &[f64]) -> Vec<f64> {
        let d = x.len();
        let mut data = vec![0.0; d + d * d];
        let (s, j) = data.split_at_mut(d);
        self.score.score_into(x, s);
        self.score.jacobian_into(x, j);
        data
    }

    fn eval_with(&self, x: &[f64], sx: &[f64], y: &[f64], sy: &[f64]) -> f64 {
        let u = sq_dist(x, y);
        let p = RadialKernel::gaussian_profile(self.lengthscale, u);
        Self::value_from(x, sx, y, sy, u, &p)
    }

    fn value_from(x: &[f64], sx: &[f64], y: &[f64], sy: &[f64], u: f64, p: &[f64; 5]) -> f64 {
        let d = x.len() as f64;
        let [p0, p1, p2, ..] = *p;
        let q: f64 = x
            .iter()
            .zip(y)
            .zip(sx.iter().zip(sy))
            .map(|((a, b), (sa, sb))| (a - b) * (sb - sa))
            .sum();
        dot(sx, sy) * p0 + 2.0 * p1 * q - 2.0 * d * p1 - 4.0 * u * p2
    }

    /// `∇₁k_π(x, y)` given the score data at both points.
    fn grad1_with(&self, x: &[f64], xd: &[f64], y: &[f64], yd: &[f64], out: &mut [f64]) {
        let u = sq_dist(x, y);
        let p = RadialKernel::gaussian_profile(self.lengthscale, u);
        Self::grad1_from(x, xd, y, yd, u, &p, out);
    }

    fn grad1_from(x: &[f64], xd: &[f64], y: &[f64], yd: &[f64], u: f64, p: &[f64; 5], out: &mut [f64]) {
        let d = x.len();
        let (sx, jx) = xd.split_at(d);
        let sy = &yd[..d];
        let [p0, p1, p2, p3, _] = *p;
        let mut q = 0.0;
        for a in 0..d {
            q += (x[a] - y[a]) * (sy[a] - sx[a]);
        }
        let ss = dot(sx, sy);
        let g1 = -(2.0 * d as f64 + 4.0) * p2 - 4.0 * u * p3;
        for i in 0..d {
            let di = x[i] - y[i];
            let mut jt_sy = 0.0;
            let mut jt_delta = 0.0;
            for a in 0..d {
                let jai = jx[a * d + i];
                jt_sy += jai * sy[a];
                jt_delta += jai * (x[a] - y[a]);
            }
            out[i] = jt_sy * p0
                + 2.0 * ss * p1 * di
                + 4.0 * p2 * q * di
                + 2.0 * p1 * ((sy[i] - sx[i]) - jt_delta)
                + 2.0 * g1 * di;
        }
    }

    fn stack_with(
        &self,
        x: &[f64],
        xd: &[f64],
        y: &[f64],
        yd: &[f64],
        out: &mut DerivativeStack,
    ) {
        // Literal dimensions let the compiler unroll the small loops below;
        // this is where SrMMD with a Stein kernel spends most of its time.
        match x.len() {
            1 => Self::stack_body(self.lengthscale, 1, x, xd, y, yd, out),
            2 => Self::stack_body(self.lengthscale, 2, x, xd, y, yd, out),
            d => Self::stack_body(self.lengthscale, d, x, xd, y, yd, out),
        }
    }

    #[inline(always)]
    fn stack_body(
        lengthscale: f64,
        d: usize,
        x: &[f64],
        xd: &[f64],
        y: &[f64],
        yd: &[f64],
        out: &mut DerivativeStack,
    ) {
        let df = d as f64;
        let (x, y) = (&x[..d], &y[..d]);
        let (sx, jx) = xd.split_at(d);
        let (sy, jy) = yd.split_at(d);
        let (jx, jy) = (&jx[..d * d], &jy[..d * d]);
        let u = sq_dist(x, y);
        let [p0, p1, p2, p3, p4] = RadialKernel::gaussian_profile(lengthscale, u);
        let ss = dot(sx, sy);
        let mut q = 0.0;
        for a in 0..d {
            q += (x[a] - y[a]) * (sy[a] - sx[a]);
        }
        out.value = ss * p0 + 2.0 * p1 * q - 2.0 * df * p1 - 4.0 * u * p2;
        let g1 = -(2.0 * df + 4.0) * p2 - 4.0 * u * p3;
        let g2 = -(2.0 * df + 8.0) * p3 - 4.0 * u * p4;

        // Per-index helper vectors, on the stack for the usual small d.
        let mut small = [0.0; 32];
        let mut large = Vec::new();
        let buf: &mut [f64] = if 4 * d <= small.len() {
            &mut small[..4 * d]
        } else {
            large.resize(4 * d, 0.0);
            &mut large
        };
        let (jx_t_sy, rest) = buf.split_at_mut(d); // (Jxᵀ s_y)_i
        let (jy_t_sx, rest) = rest.split_at_mut(d); // (Jyᵀ s_x)_j
        let (jx_t_delta, jy_t_delta) = rest.split_at_mut(d); // (Jxᵀ δ)_i, (Jyᵀ δ)_j
        for i in 0..d {
            for a in 0..d {
                let da = x[a] - y[a];
                jx_t_sy[i] += jx[a * d + i] * sy[a];
                jy_t_sx[i] += jy[a * d + i] * sx[a];
                jx_t_delta[i] += jx[a * d + i] * da;
                jy_t_delta[i] += jy[a * d + i] * da;
            }
        }
        // ∇₁ and ∇₂ share every factor; ∇₂ is ∇₁ with the roles of x and y
        // swapped, which flips the sign of δ.
        for i in 0..d {
            let di = x[i] - y[i];
            out.grad1[i] = jx_t_sy[i] * p0
                + 2.0 * ss * p1 * di
                + 4.0 * p2 * q * di
                + 2.0 * p1 * ((sy[i] - sx[i]) - jx_t_delta[i])
                + 2.0 * g1 * di;
            out.grad2[i] = jy_t_sx[i] * p0 - 2.0 * ss * p1 * di - 4.0 * p2 * q * di
                + 2.0 * p1 * ((sx[i] - sy[i]) + jy_t_delta[i])
                - 2.0 * g1 * di;
        }
        for i in 0..d {
            let di = x[i] - y[i];
            let diff_i = sy[i] - sx[i];
            for j in 0..d {
                let dj = x[j] - y[j];
                let diff_j = sy[j] - sx[j];
                let mut jxjy = 0.0;
                for a in 0..d {
                    jxjy += jx[a * d + i] * jy[a * d + j];
                }
                let mut h = jxjy * p0 - 2.0 * p1 * jx_t_sy[i] * dj;
                h += 2.0 * p1 * jy_t_sx[j] * di - 4.0 * ss * p2 * di * dj;
                h += -8.0 * p3 * q * di * dj + 4.0 * p2 * di * (jy_t_delta[j] - diff_j);
                h += -4.0 * p2 * dj * (diff_i - jx_t_delta[i])
                    + 2.0 * p1 * (jy[i * d + j] + jx[j * d + i]);
                h += -4.0 * g2 * di * dj;
                if i == j {
                    h += -2.0 * ss * p1 - 4.0 * p2 * q - 2.0 * g1;
                }
                out.cross_hessian[i * d + j] = h;
            }
        }
    }
}

impl Kernel for SteinKernel {
    fn kind(&self) -> KernelKind {
        KernelKind::Stein
    }

    fn input_dim(&self) -> Option<usize> {
        Some(self.score.dim())
    }

    fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        self.eval_with(x, &self.score.score(x), y, &self.score.score(y))
    }

    fn grad1_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) -> Result<()> {
        self.grad1_with(x, &self.score_data(x), y, &self.score_data(y), out);
        Ok(())
    }

    fn stack_into(&self, x: &[f64], y: &[f64], out: &mut DerivativeStack) -> Result<()> {
        self.stack_with(x, &self.score_data(x), y, &self.score_data(y), out);
        Ok(())
    }

    fn smooth_order(&self, _x: &[f64], _y: &[f64]) -> usize {
        2
    }

    fn point_data(&self, x: &[f64]) -> Vec<f64> {
        self.score_data(x)
    }

    fn value_with_data(&self, x: &[f64], xd: &[f64], y: &[f64], yd: &[f64]) -> f64 {
        let d = x.len();
        self.eval_with(x, &xd[..d], y, &yd[..d])
    }

    fn grad1_with_data(&self, x: &[f64], xd: &[f64], y: &[f64], yd: &[f64], out: &mut [f64]) -> Result<()> {
        self.grad1_with(x, xd, y, yd, out);
        Ok(())
    }

    fn stack_with_data(
        &self,
        x: &[f64],
        xd: &[f64],
        y: &[f64],
        yd: &[f64],
        out: &mut DerivativeStack,
    ) -> Result<()> {
        self.stack_with(x, xd, y, yd, out);
        Ok(())
    }
}

/// `k_π(x, y)` with argument validation.
pub fn stein_eval(sk: &SteinKernel, x: &[f64], y: &[f64]) -> Result<f64> {
    crate::kernels::kernel_eval(sk, x, y)
}

/// Derivative stack of `k_π` with argument validation.
pub fn stein_derivative_stack(sk: &SteinKernel, x: &[f64], y: &[f64]) -> Result<DerivativeStack> {
    crate::kernels::kernel_derivative_stack(sk, x, y)
}

/// Monte-Carlo estimate of `E_{X∼π}[k_π(X, y)]`, which vanishes when the
/// Stein identity holds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteinIdentityReport {
    pub mean: f64,
    /// `None` when fewer than two samples were drawn.
    pub stderr: Option<f64>,
    pub samples: usize,
}

impl SteinIdentityReport {
    /// `|mean| ≤ z · stderr`; undecidable (false) without a standard error.
    pub fn passes(&self, z: f64) -> bool {
        self.stderr.is_some_and(|se| self.mean.abs() <= z * se)
    }
}

pub fn stein_identity_statistic(
    sk: &SteinKernel,
    sampler: &dyn Sampler,
    y: &[f64],
    samples: usize,
    rng: &mut FlowRng,
) -> Result<SteinIdentityReport> {
    if samples == 0 {
        return crate::error::argument("at least one Monte-Carlo sample is required");
    }
    if y.len() != sk.dim() {
        return crate::error::argument(format!(
            "query point has dimension {}, kernel expects {}",
            y.len(),
            sk.dim()
        ));
    }
    let xs = sampler.sample(samples, rng);
    let sy = sk.score.score(y);
    let mut sx = vec![0.0; y.len()];
    // Welford accumulation
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, x) in xs.rows().enumerate() {
        sk.score.score_into(x, &mut sx);
        let v = sk.eval_with(x, &sx, y, &sy);
        let delta = v - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (v - mean);
    }
    let stderr = (samples > 1).then(|| (m2 / (samples - 1) as f64 / samples as f64).sqrt());
    Ok(SteinIdentityReport {
        mean,
        stderr,
        samples,
    })
}

/// Empirical growth of the score over a ball, against `‖s(x)‖ ≤ M(1 + ‖x‖)`
/// and `‖Js(x)‖_F ≤ M(1 + ‖x‖)`. Advisory only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthReport {
    /// `sup ‖s(x)‖ / (1 + ‖x‖)` over the evaluated points.
    pub score_ratio: f64,
    /// `sup ‖Js(x)‖_F / (1 + ‖x‖)` over the evaluated points.
    pub jacobian_ratio: f64,
    pub points_evaluated: usize,
    /// True when the full grid was too large and a fixed pseudo-random cover was used.
    pub sampled: bool,
}

const MAX_GRID_POINTS: usize = 200_000;

pub fn growth_diagnostics(score: &dyn ScoreModel, radius: f64, grid: usize) -> GrowthReport {
    let d = score.dim();
    let grid = grid.max(2);
    let mut s = vec![0.0; d];
    let mut j = vec![0.0; d * d];
    let mut report = GrowthReport {
        score_ratio: 0.0,
        jacobian_ratio: 0.0,
        points_evaluated: 0,
        sampled: false,
    };
    let mut visit = |x: &[f64], report: &mut GrowthReport| {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r > radius * (1.0 + 1e-12) {
            return;
        }
        score.score_into(x, &mut s);
        score.jacobian_into(x, &mut j);
        let sn = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        let jn = j.iter().map(|v| v * v).sum::<f64>().sqrt();
        report.score_ratio = report.score_ratio.max(sn / (1.0 + r));
        report.jacobian_ratio = report.jacobian_ratio.max(jn / (1.0 + r));
        report.points_evaluated += 1;
    };

    let total = (grid as f64).powi(d as i32);
    let mut x = vec![0.0; d];
    if total <= MAX_GRID_POINTS as f64 {
        let step = 2.0 * radius / (grid - 1) as f64;
        let mut idx = vec![0usize; d];
        loop {
            for (xi, &k) in x.iter_mut().zip(&idx) {
                *xi = -radius + step * k as f64;
            }
            visit(&x, &mut report);
            let mut a = 0;
            while a < d {
                idx[a] += 1;
                if idx[a] < grid {
                    break;
                }
                idx[a] = 0;
                a += 1;
            }
            if a == d {
                break;
            }
        }
    } else {
        use rand::Rng;
        report.sampled = true;
        let mut rng = crate::rng::stream(0x5eed, crate::rng::Stream::Metrics);
        x.iter_mut().for_each(|v| *v = 0.0);
        visit(&x, &mut report);
        for _ in 0..MAX_GRID_POINTS {
            // uniform direction, radius uniform in [0, R]
            let mut norm = 0.0;
            for xi in x.iter_mut() {
                *xi = rng.sample::<f64, _>(rand_distr::StandardNormal);
                norm += *xi * *xi;
            }
            let scale = radius * rng.random::<f64>() / norm.sqrt().max(f64::MIN_POSITIVE);
            x.iter_mut().for_each(|v| *v *= scale);
            visit(&x, &mut report);
        }
    }
    report
}
