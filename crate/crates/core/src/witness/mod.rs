//! Regularized witness functions on a particle ensemble.
//!
//! For particles `x_1..x_N` and a target `π`, the Sobolev-regularized witness
//! `f = (S_μ̂ + λ)⁻¹(m_μ̂ − m_π)` has the dual form
//!
//! ```text
//! f(z) = (1/λ) [ (1/N) Σ_i k(x_i, z) − m_π(z) − Σ_{i,l} β_{il} ∂_{1,l} k(x_i, z) ]
//! (H + NλI) β = r,   r = D 1/N − E_π[D_X(Y)]
//! ```
//!
//! with `D[(i,l), j] = ∂_{1,l}k(x_i, x_j)` and `H[(i,l),(j,m)] = ∂_{1,l}∂_{2,m}k(x_i, x_j)`.
//! The pair `(i, l)` is flattened to row `i·d + l`.

mod dense;
mod dump;
mod hybrid;
mod lowrank;

use std::sync::Arc;

pub use dense::{assemble_witness, WitnessSystem};
pub use dump::{read_witness_dump, WitnessDump};
pub use hybrid::{assemble_hybrid_witness, HybridWitnessSystem};
pub use lowrank::{
    assemble_lowrank_witness, primal_witness_oracle, FeatureWitness, LowRankWitness, PrimalWitness,
};

use nalgebra::DMatrix;

use crate::error::{argument, Error, Result};
use crate::kernels::{DerivativeStack, Kernel, KernelKind};
use crate::points::Points;
use crate::stein::ScoreModel;
use crate::targets::{GaussianMixture, MixtureEmbedding};

/// How the target enters the witness: through samples, through a closed-form
/// Gaussian-kernel embedding, or only through its score (Stein kernels, for
/// which every embedding of `π` vanishes).
#[derive(Clone)]
pub enum TargetRepresentation {
    Empirical(Points),
    Analytic {
        mixture: GaussianMixture,
        embedding: MixtureEmbedding,
    },
    Stein(Arc<dyn ScoreModel>),
}

impl std::fmt::Debug for TargetRepresentation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Empirical(y) => write!(f, "Empirical({} samples in R^{})", y.len(), y.dim()),
            Self::Analytic { mixture, embedding } => write!(
                f,
                "Analytic({} components, lengthscale {})",
                mixture.components(),
                embedding.lengthscale()
            ),
            Self::Stein(s) => write!(f, "Stein(R^{})", s.dim()),
        }
    }
}

impl TargetRepresentation {
    pub fn empirical(samples: Points) -> Result<Self> {
        if samples.is_empty() {
            return argument("empirical target needs at least one sample");
        }
        if !samples.all_finite() {
            return argument("empirical target has non-finite samples");
        }
        Ok(Self::Empirical(samples))
    }

    pub fn analytic(mixture: GaussianMixture, lengthscale: f64) -> Result<Self> {
        let embedding = mixture.embedding(lengthscale)?;
        Ok(Self::Analytic { mixture, embedding })
    }

    pub fn stein(score: Arc<dyn ScoreModel>) -> Self {
        Self::Stein(score)
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Empirical(y) => y.dim(),
            Self::Analytic { embedding, .. } => embedding.dim(),
            Self::Stein(s) => s.dim(),
        }
    }

    pub fn score_model(&self) -> Option<&Arc<dyn ScoreModel>> {
        match self {
            Self::Stein(s) => Some(s),
            _ => None,
        }
    }

    pub fn is_stein(&self) -> bool {
        matches!(self, Self::Stein(_))
    }

    /// Checks that `kernel` can be paired with this target for MMD-type quantities.
    pub fn check_kernel(&self, kernel: &dyn Kernel) -> Result<()> {
        if let Some(d) = kernel.input_dim() {
            if d != self.dim() {
                return Err(Error::Configuration(format!(
                    "kernel works in R^{d} but the target lives in R^{}",
                    self.dim()
                )));
            }
        }
        let stein_kernel = kernel.kind() == KernelKind::Stein;
        match self {
            Self::Stein(_) if !stein_kernel => Err(Error::Configuration(
                "a score-only target needs a Stein kernel".into(),
            )),
            Self::Empirical(_) | Self::Analytic { .. } if stein_kernel => Err(Error::Configuration(
                "Stein kernels pair only with score-only targets".into(),
            )),
            Self::Analytic { embedding, .. } => match kernel.gaussian_lengthscale() {
                Some(l) if l == embedding.lengthscale() => Ok(()),
                Some(l) => Err(Error::Configuration(format!(
                    "kernel lengthscale {l} differs from the embedding lengthscale {}",
                    embedding.lengthscale()
                ))),
                None => Err(Error::Configuration(
                    "closed-form embeddings require a Gaussian kernel".into(),
                )),
            },
            _ => Ok(()),
        }
    }

    /// `m_π(z) = E_{Y∼π} k(Y, z)` and, optionally, its gradient in `z`.
    /// Zero for Stein targets. Assumes [`Self::check_kernel`] passed.
    pub fn embedding(&self, kernel: &dyn Kernel, z: &[f64], grad: Option<&mut [f64]>) -> Result<f64> {
        match self {
            Self::Empirical(ys) => {
                // divide rather than scale by 1/M so sums over identical
                // ensembles cancel exactly against the particle terms
                let m = ys.len() as f64;
                let mut total = 0.0;
                for y in ys.rows() {
                    total += kernel.value(y, z);
                }
                if let Some(g) = grad {
                    let mut tmp = vec![0.0; z.len()];
                    g.iter_mut().for_each(|v| *v = 0.0);
                    for y in ys.rows() {
                        // ∇_z k(y, z) = ∇₁k(z, y)
                        kernel.grad1_into(z, y, &mut tmp)?;
                        for (a, b) in g.iter_mut().zip(&tmp) {
                            *a += b;
                        }
                    }
                    g.iter_mut().for_each(|v| *v /= m);
                }
                Ok(total / m)
            }
            Self::Analytic { embedding, .. } => Ok(embedding.eval(z, grad)),
            Self::Stein(_) => {
                if let Some(g) = grad {
                    g.iter_mut().for_each(|v| *v = 0.0);
                }
                Ok(0.0)
            }
        }
    }
}

/// Stack at a pair, applying the zero-derivative convention where a
/// Riesz-type kernel is singular (coinciding points).
pub(crate) fn pair_stack(
    kernel: &dyn Kernel,
    x: &[f64],
    xd: &[f64],
    y: &[f64],
    yd: &[f64],
    out: &mut DerivativeStack,
) -> Result<()> {
    match kernel.stack_with_data(x, xd, y, yd, out) {
        Err(Error::Singularity { .. }) if kernel.zero_singular_diagonal() => {
            out.value = kernel.value(x, y);
            out.zero_derivatives();
            Ok(())
        }
        other => other,
    }
}

pub(crate) fn check_inputs(
    kernel: &dyn Kernel,
    particles: &Points,
    target: &TargetRepresentation,
    lambda: f64,
) -> Result<()> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return argument(format!("regularization must be positive, got {lambda}"));
    }
    if particles.is_empty() {
        return argument("need at least one particle");
    }
    if let Some(i) = particles.first_non_finite() {
        return argument(format!("particle {i} has a non-finite coordinate"));
    }
    if particles.dim() != target.dim() {
        return argument(format!(
            "particles live in R^{} but the target in R^{}",
            particles.dim(),
            target.dim()
        ));
    }
    target.check_kernel(kernel)
}

pub(crate) fn check_query(dim: usize, z: &[f64]) -> Result<()> {
    if z.len() != dim {
        return argument(format!("query has dimension {}, expected {dim}", z.len()));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return argument("query has a non-finite coordinate");
    }
    Ok(())
}

/// Gram-type blocks over one ensemble.
pub(crate) struct Blocks {
    /// `K[i, j] = k(x_i, x_j)` when requested.
    pub k: Option<DMatrix<f64>>,
    /// `Nd × N`
    pub d: DMatrix<f64>,
    /// `Nd × Nd`
    pub h: DMatrix<f64>,
}

/// Fills `D`, `H` (and optionally `K`) from one stack per unordered pair.
pub(crate) fn assemble_blocks(
    kernel: &dyn Kernel,
    x: &Points,
    data: &[Vec<f64>],
    with_gram: bool,
) -> Result<Blocks> {
    let n = x.len();
    let dim = x.dim();
    let nd = n * dim;
    let mut k = with_gram.then(|| DMatrix::zeros(n, n));
    let mut d = DMatrix::zeros(nd, n);
    let mut h = DMatrix::zeros(nd, nd);
    let mut s = DerivativeStack::zeros(dim);
    // Column-major storage: sweeping i ≥ j for a fixed j keeps the H writes
    // contiguous. The strict upper triangle is mirrored afterwards.
    for j in 0..n {
        for i in j..n {
            pair_stack(kernel, x.row(i), &data[i], x.row(j), &data[j], &mut s)?;
            if let Some(k) = k.as_mut() {
                k[(i, j)] = s.value;
                k[(j, i)] = s.value;
            }
            for l in 0..dim {
                d[(i * dim + l, j)] = s.grad1[l];
                d[(j * dim + l, i)] = s.grad2[l];
            }
            if i == j {
                for m in 0..dim {
                    for l in m..dim {
                        h[(i * dim + l, i * dim + m)] = 0.5 * (s.cross(l, m) + s.cross(m, l));
                    }
                }
            } else {
                for m in 0..dim {
                    for l in 0..dim {
                        h[(i * dim + l, j * dim + m)] = s.cross(l, m);
                    }
                }
            }
        }
    }
    crate::linalg::mirror_lower(&mut h);
    Ok(Blocks { k, d, h })
}

/// `r = D 1/N − E_π[D_X(Y)]`, where the target term at `(i, ·)` is `∇m_π(x_i)`.
pub(crate) fn gradient_residual(
    kernel: &dyn Kernel,
    target: &TargetRepresentation,
    x: &Points,
    d: &DMatrix<f64>,
) -> Result<nalgebra::DVector<f64>> {
    let n = x.len();
    let dim = x.dim();
    let nf = n as f64;
    let mut r = nalgebra::DVector::zeros(n * dim);
    let mut g = vec![0.0; dim];
    for i in 0..n {
        target.embedding(kernel, x.row(i), Some(&mut g))?;
        for l in 0..dim {
            let row = i * dim + l;
            let mean: f64 = d.row(row).iter().sum::<f64>() / nf;
            r[row] = mean - g[l];
        }
    }
    Ok(r)
}
