//! Positive-definite kernels with closed-form derivative stacks.
//!
//! Every kernel exposes its value, both first-argument and second-argument
//! gradients and the mixed Hessian `∂_{1,i} ∂_{2,j} k(x, y)`. These are the
//! entries of the particle systems assembled by [`crate::witness`].
//!
//! Smooth radial kernels are parametrized by the squared distance
//! `u = ‖x − y‖²`. A profile `φ(t)` written over the distance `t` converts as
//! `ψ(u) = φ(√u)`; the `u` form has no artificial kink at `x = y`, so every
//! diagonal limit is a plain evaluation.

mod feature;
mod radial;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use feature::{
    feature_psi_eval, network_output, FeatureMapKernel, NetworkFeatures, PARAM_DIM, PROBE_DIM,
};
pub use radial::{radial_profile_derivatives, RadialKernel};

use crate::error::{argument, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Gaussian,
    Polynomial,
    Riesz,
    Feature,
    Stein,
}

/// Value, gradients and mixed Hessian of a kernel at one pair `(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeStack {
    pub value: f64,
    /// `∇₁k(x, y)`
    pub grad1: Vec<f64>,
    /// `∇₂k(x, y)`
    pub grad2: Vec<f64>,
    /// Row-major `d × d`, entry `[i·d + j] = ∂_{1,i} ∂_{2,j} k(x, y)`.
    pub cross_hessian: Vec<f64>,
}

impl DerivativeStack {
    pub fn zeros(dim: usize) -> Self {
        Self {
            value: 0.0,
            grad1: vec![0.0; dim],
            grad2: vec![0.0; dim],
            cross_hessian: vec![0.0; dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.grad1.len()
    }

    #[inline]
    pub fn cross(&self, i: usize, j: usize) -> f64 {
        self.cross_hessian[i * self.dim() + j]
    }

    /// Riesz-type diagonal convention: zero gradient, zero mixed Hessian.
    pub(crate) fn zero_derivatives(&mut self) {
        self.grad1.iter_mut().for_each(|v| *v = 0.0);
        self.grad2.iter_mut().for_each(|v| *v = 0.0);
        self.cross_hessian.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// A symmetric positive-definite kernel on `R^d` with analytic derivatives.
///
/// The unchecked methods assume `x` and `y` share the kernel's dimension;
/// [`kernel_eval`] and [`kernel_derivative_stack`] validate inputs first.
pub trait Kernel: Send + Sync {
    fn kind(&self) -> KernelKind;

    /// Input dimension when the kernel fixes one.
    fn input_dim(&self) -> Option<usize> {
        None
    }

    fn value(&self, x: &[f64], y: &[f64]) -> f64;

    /// Writes `∇₁k(x, y)` into `out`.
    fn grad1_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) -> Result<()>;

    /// Fills the full derivative stack at `(x, y)`.
    fn stack_into(&self, x: &[f64], y: &[f64], out: &mut DerivativeStack) -> Result<()>;

    /// Highest mixed derivative order available at `(x, y)`:
    /// 0 value only, 1 gradients, 2 and above the mixed Hessian.
    fn smooth_order(&self, x: &[f64], y: &[f64]) -> usize;

    /// Lengthscale when this is a Gaussian kernel (closed-form embeddings need it).
    fn gaussian_lengthscale(&self) -> Option<f64> {
        None
    }

    /// Explicit finite feature map, when the RKHS is finite-dimensional.
    fn finite_features(&self) -> Option<&dyn FiniteFeatures> {
        None
    }

    /// Riesz-type kernels: singular derivatives on the diagonal are replaced
    /// by zeros when assembling Gram-type matrices.
    fn zero_singular_diagonal(&self) -> bool {
        false
    }

    /// Per-point data shared by every pair involving that point; a Stein
    /// kernel caches the score and its Jacobian here. Empty for plain kernels.
    fn point_data(&self, _x: &[f64]) -> Vec<f64> {
        Vec::new()
    }

    fn value_with_data(&self, x: &[f64], _xd: &[f64], y: &[f64], _yd: &[f64]) -> f64 {
        self.value(x, y)
    }

    fn grad1_with_data(
        &self,
        x: &[f64],
        _xd: &[f64],
        y: &[f64],
        _yd: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        self.grad1_into(x, y, out)
    }

    fn stack_with_data(
        &self,
        x: &[f64],
        _xd: &[f64],
        y: &[f64],
        _yd: &[f64],
        out: &mut DerivativeStack,
    ) -> Result<()> {
        self.stack_into(x, y, out)
    }
}

/// Per-point data for every row of `points`.
pub(crate) fn points_data(kernel: &dyn Kernel, points: &crate::points::Points) -> Vec<Vec<f64>> {
    points.rows().map(|x| kernel.point_data(x)).collect()
}

/// Explicit feature map `Φ: R^d → R^p` with `k(x, y) = Φ(x)ᵀ Φ(y)`.
pub trait FiniteFeatures: Send + Sync {
    /// Number of features `p` for inputs of dimension `input_dim`.
    fn feature_dim(&self, input_dim: usize) -> usize;

    /// Writes `Φ(x)` into `values` (length `p`) and, when requested, the
    /// Jacobian into `jac` (row-major `p × d`, entry `[a·d + l] = ∂_l Φ_a(x)`).
    fn features_into(&self, x: &[f64], values: &mut [f64], jac: Option<&mut [f64]>);
}

fn check_pair(kernel: &dyn Kernel, x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return argument(format!("dimension mismatch: {} vs {}", x.len(), y.len()));
    }
    if x.is_empty() {
        return argument("points must have positive dimension");
    }
    if let Some(d) = kernel.input_dim() {
        if x.len() != d {
            return argument(format!("kernel expects dimension {d}, got {}", x.len()));
        }
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return argument("non-finite coordinate");
    }
    Ok(())
}

/// `k(x, y)` with argument validation.
pub fn kernel_eval(kernel: &dyn Kernel, x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(kernel, x, y)?;
    Ok(kernel.value(x, y))
}

/// Value, gradients and mixed Hessian at `(x, y)` with argument validation.
pub fn kernel_derivative_stack(
    kernel: &dyn Kernel,
    x: &[f64],
    y: &[f64],
) -> Result<DerivativeStack> {
    check_pair(kernel, x, y)?;
    let mut stack = DerivativeStack::zeros(x.len());
    kernel.stack_into(x, y, &mut stack)?;
    Ok(stack)
}

/// Gram matrix `K[i, j] = k(x_i, x_j)`.
pub fn gram_matrix(kernel: &dyn Kernel, points: &crate::points::Points) -> nalgebra::DMatrix<f64> {
    let n = points.len();
    let mut k = nalgebra::DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = kernel.value(points.row(i), points.row(j));
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Kernel choice as written in experiment configs, e.g.
/// `{"kind": "gaussian", "lengthscale": 1.0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum KernelSpec {
    Gaussian {
        lengthscale: f64,
    },
    Polynomial {
        #[serde(default = "default_offset")]
        offset: f64,
    },
    Riesz {
        #[serde(default = "default_exponent")]
        exponent: f64,
    },
    /// Student-network feature kernel; probes are drawn by the experiment.
    Feature {
        #[serde(default = "default_probes")]
        probes: usize,
    },
}

fn default_offset() -> f64 {
    1.0
}
fn default_exponent() -> f64 {
    1.0
}
fn default_probes() -> usize {
    100
}

impl KernelSpec {
    /// Builds a base kernel. Feature kernels need a probe set and are built
    /// with [`FeatureMapKernel::new`] instead.
    pub fn build(&self) -> Result<RadialKernel> {
        match *self {
            KernelSpec::Gaussian { lengthscale } => RadialKernel::gaussian(lengthscale),
            KernelSpec::Polynomial { offset } => RadialKernel::polynomial(offset),
            KernelSpec::Riesz { exponent } => RadialKernel::riesz(exponent),
            KernelSpec::Feature { .. } => Err(Error::Capability(
                "feature kernels are built from a probe set".into(),
            )),
        }
    }

    pub fn build_shared(&self) -> Result<Arc<dyn Kernel>> {
        Ok(Arc::new(self.build()?))
    }
}
