use super::{DerivativeStack, FiniteFeatures, Kernel, KernelKind};
use crate::error::{argument, Error, Result};
use crate::points::{dot, sq_dist};

/// Base kernels used by the flows.
///
/// * `Gaussian`: `k(x, y) = ψ(‖x − y‖²)`, `ψ(u) = exp(−u / (2σ²))`.
/// * `Polynomial`: `k(x, y) = (xᵀy + c)²`, differentiated as a polynomial.
/// * `Riesz`: `k(x, y) = −‖x − y‖^r`, `r ∈ (0, 2]`; singular on the diagonal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RadialKernel {
    Gaussian { lengthscale: f64 },
    Polynomial { offset: f64 },
    Riesz { exponent: f64 },
}

impl RadialKernel {
    pub fn gaussian(lengthscale: f64) -> Result<Self> {
        if !(lengthscale > 0.0 && lengthscale.is_finite()) {
            return argument(format!("lengthscale must be positive, got {lengthscale}"));
        }
        Ok(Self::Gaussian { lengthscale })
    }

    /// `(xᵀy + c)²` with `c ≥ 0`.
    pub fn polynomial(offset: f64) -> Result<Self> {
        if !(offset >= 0.0 && offset.is_finite()) {
            return argument(format!("polynomial offset must be non-negative, got {offset}"));
        }
        Ok(Self::Polynomial { offset })
    }

    pub fn riesz(exponent: f64) -> Result<Self> {
        if !(exponent > 0.0 && exponent <= 2.0) {
            return argument(format!("Riesz exponent must lie in (0, 2], got {exponent}"));
        }
        Ok(Self::Riesz { exponent })
    }

    /// Highest profile derivative available in closed form.
    pub fn profile_order(&self) -> usize {
        match self {
            Self::Gaussian { .. } => 4,
            Self::Polynomial { .. } => 0,
            Self::Riesz { .. } => 2,
        }
    }

    /// `ψ(u), ψ'(u), …, ψ^(max_order)(u)`.
    ///
    /// Gaussian profiles are over `u = ‖x − y‖²`. The Riesz profile
    /// `ρ(t) = −t^r` is over the distance `t`, with derivatives only for `t > 0`.
    /// The polynomial kernel is not radial and has no profile.
    pub fn profile_derivatives(&self, u: f64, max_order: usize) -> Result<Vec<f64>> {
        if !(u >= 0.0 && u.is_finite()) {
            return argument(format!("profile argument must be finite and >= 0, got {u}"));
        }
        match *self {
            Self::Gaussian { lengthscale } => {
                if max_order > 4 {
                    return Err(Error::Capability(format!(
                        "Gaussian profile derivatives available up to order 4, requested {max_order}"
                    )));
                }
                let c = -0.5 / (lengthscale * lengthscale);
                let mut out = Vec::with_capacity(max_order + 1);
                let mut v = (c * u).exp();
                for _ in 0..=max_order {
                    out.push(v);
                    v *= c;
                }
                Ok(out)
            }
            Self::Riesz { exponent: r } => {
                let available = if u > 0.0 { 2 } else { 0 };
                if max_order > available {
                    return Err(Error::Capability(format!(
                        "Riesz profile derivatives available up to order {available} at t = {u}"
                    )));
                }
                let all = [
                    -u.powf(r),
                    -r * u.powf(r - 1.0),
                    -r * (r - 1.0) * u.powf(r - 2.0),
                ];
                Ok(all[..=max_order].to_vec())
            }
            Self::Polynomial { .. } => Err(Error::Capability(
                "the polynomial kernel has no radial profile".into(),
            )),
        }
    }

    /// Gaussian profile and its first four derivatives at `u` (no allocation).
    #[inline]
    pub(crate) fn gaussian_profile(lengthscale: f64, u: f64) -> [f64; 5] {
        let c = -0.5 / (lengthscale * lengthscale);
        let p0 = (c * u).exp();
        let p1 = c * p0;
        let p2 = c * p1;
        let p3 = c * p2;
        [p0, p1, p2, p3, c * p3]
    }
}

/// Free-function form of [`RadialKernel::profile_derivatives`].
pub fn radial_profile_derivatives(
    kernel: &RadialKernel,
    u: f64,
    max_order: usize,
) -> Result<Vec<f64>> {
    kernel.profile_derivatives(u, max_order)
}

impl Kernel for RadialKernel {
    fn kind(&self) -> KernelKind {
        match self {
            Self::Gaussian { .. } => KernelKind::Gaussian,
            Self::Polynomial { .. } => KernelKind::Polynomial,
            Self::Riesz { .. } => KernelKind::Riesz,
        }
    }

    #[inline]
    fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            Self::Gaussian { lengthscale } => {
                ((-0.5 / (lengthscale * lengthscale)) * sq_dist(x, y)).exp()
            }
            Self::Polynomial { offset } => {
                let s = dot(x, y) + offset;
                s * s
            }
            Self::Riesz { exponent } => {
                let u = sq_dist(x, y);
                if exponent == 2.0 {
                    -u
                } else {
                    -u.sqrt().powf(exponent)
                }
            }
        }
    }

    fn grad1_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) -> Result<()> {
        match *self {
            Self::Gaussian { lengthscale } => {
                let u = sq_dist(x, y);
                let p1 = Self::gaussian_profile(lengthscale, u)[1];
                for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
                    *o = 2.0 * p1 * (a - b);
                }
            }
            Self::Polynomial { offset } => {
                let s = dot(x, y) + offset;
                for (o, b) in out.iter_mut().zip(y) {
                    *o = 2.0 * s * b;
                }
            }
            Self::Riesz { exponent: r } => {
                let u = sq_dist(x, y);
                if u == 0.0 {
                    // subgradient convention on the diagonal
                    out.iter_mut().for_each(|o| *o = 0.0);
                } else {
                    let t = u.sqrt();
                    let a = -r * t.powf(r - 2.0);
                    for ((o, xa), yb) in out.iter_mut().zip(x).zip(y) {
                        *o = a * (xa - yb);
                    }
                }
            }
        }
        Ok(())
    }

    fn stack_into(&self, x: &[f64], y: &[f64], out: &mut DerivativeStack) -> Result<()> {
        let d = x.len();
        match *self {
            Self::Gaussian { lengthscale } => {
                let u = sq_dist(x, y);
                let [p0, p1, p2, ..] = Self::gaussian_profile(lengthscale, u);
                out.value = p0;
                for i in 0..d {
                    let di = x[i] - y[i];
                    out.grad1[i] = 2.0 * p1 * di;
                    out.grad2[i] = -2.0 * p1 * di;
                    for j in 0..d {
                        let dj = x[j] - y[j];
                        let mut h = -4.0 * p2 * di * dj;
                        if i == j {
                            h -= 2.0 * p1;
                        }
                        out.cross_hessian[i * d + j] = h;
                    }
                }
            }
            Self::Polynomial { offset } => {
                let s = dot(x, y) + offset;
                out.value = s * s;
                for i in 0..d {
                    out.grad1[i] = 2.0 * s * y[i];
                    out.grad2[i] = 2.0 * s * x[i];
                    for j in 0..d {
                        let mut h = 2.0 * y[i] * x[j];
                        if i == j {
                            h += 2.0 * s;
                        }
                        out.cross_hessian[i * d + j] = h;
                    }
                }
            }
            Self::Riesz { exponent: r } => {
                let u = sq_dist(x, y);
                if u == 0.0 {
                    return Err(Error::Singularity { order: 2 });
                }
                let t = u.sqrt();
                out.value = -t.powf(r);
                let a = -r * t.powf(r - 2.0);
                let b = r * (r - 2.0) * t.powf(r - 4.0);
                for i in 0..d {
                    let di = x[i] - y[i];
                    out.grad1[i] = a * di;
                    out.grad2[i] = -a * di;
                    for j in 0..d {
                        let dj = x[j] - y[j];
                        let mut h = b * di * dj;
                        if i == j {
                            h -= a;
                        }
                        out.cross_hessian[i * d + j] = h;
                    }
                }
            }
        }
        Ok(())
    }

    fn smooth_order(&self, x: &[f64], y: &[f64]) -> usize {
        match self {
            Self::Gaussian { .. } | Self::Polynomial { .. } => 4,
            Self::Riesz { .. } => {
                if sq_dist(x, y) > 0.0 {
                    2
                } else {
                    0
                }
            }
        }
    }

    fn gaussian_lengthscale(&self) -> Option<f64> {
        match *self {
            Self::Gaussian { lengthscale } => Some(lengthscale),
            _ => None,
        }
    }

    fn finite_features(&self) -> Option<&dyn FiniteFeatures> {
        match self {
            Self::Polynomial { .. } => Some(self),
            _ => None,
        }
    }

    fn zero_singular_diagonal(&self) -> bool {
        matches!(self, Self::Riesz { .. })
    }
}

/// Quadratic polynomial features `[c, √(2c)·x_i, x_i², √2·x_i x_j (i<j)]`,
/// so that `Φ(x)ᵀΦ(y) = (xᵀy + c)²`. Feature count `1 + d + d(d+1)/2`.
impl FiniteFeatures for RadialKernel {
    fn feature_dim(&self, input_dim: usize) -> usize {
        polynomial_feature_dim(input_dim)
    }

    fn features_into(&self, x: &[f64], values: &mut [f64], mut jac: Option<&mut [f64]>) {
        let Self::Polynomial { offset } = *self else {
            unreachable!("only the polynomial kernel exposes finite features")
        };
        let d = x.len();
        let lin = (2.0 * offset).sqrt();
        let s2 = std::f64::consts::SQRT_2;
        if let Some(j) = jac.as_deref_mut() {
            j.iter_mut().for_each(|v| *v = 0.0);
        }
        values[0] = offset;
        let mut a = 1;
        for i in 0..d {
            values[a] = lin * x[i];
            if let Some(j) = jac.as_deref_mut() {
                j[a * d + i] = lin;
            }
            a += 1;
        }
        for i in 0..d {
            for k in i..d {
                if i == k {
                    values[a] = x[i] * x[i];
                    if let Some(j) = jac.as_deref_mut() {
                        j[a * d + i] = 2.0 * x[i];
                    }
                } else {
                    values[a] = s2 * x[i] * x[k];
                    if let Some(j) = jac.as_deref_mut() {
                        j[a * d + i] = s2 * x[k];
                        j[a * d + k] = s2 * x[i];
                    }
                }
                a += 1;
            }
        }
    }
}

/// Number of quadratic polynomial features in dimension `d`.
pub(crate) fn polynomial_feature_dim(d: usize) -> usize {
    1 + d + d * (d + 1) / 2
}
