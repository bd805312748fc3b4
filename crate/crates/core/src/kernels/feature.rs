//! Feature kernel of the mean-field student network.
//!
//! One hidden ReLU unit with a Gaussian bump output:
//! `ψ(z, θ) = G(b¹ + W¹·relu(W⁰z + b⁰))`, `G(x) = exp(−x²/4)`,
//! with parameters packed as `θ = (b¹, W¹, b⁰, W⁰) ∈ R^53` for probes `z ∈ R^50`.
//! The kernel averages over a probe set: `k(θ, θ') = (1/B) Σ_b ψ(z_b, θ) ψ(z_b, θ')`.

use nalgebra::DMatrix;

use super::{DerivativeStack, FiniteFeatures, Kernel, KernelKind};
use crate::error::{argument, Result};
use crate::points::{dot, Points};

pub const PROBE_DIM: usize = 50;
pub const PARAM_DIM: usize = 3 + PROBE_DIM;

const B1: usize = 0;
const W1: usize = 1;
const B0: usize = 2;
const W0: usize = 3;

/// `ψ(z, θ)` for one probe.
pub fn network_output(z: &[f64], theta: &[f64]) -> f64 {
    let h = dot(&theta[W0..], z) + theta[B0];
    let o = theta[B1] + theta[W1] * h.max(0.0);
    (-0.25 * o * o).exp()
}

/// Writes `ψ(z, θ)` and, optionally, `∂ψ/∂θ` (length 53). ReLU'(0) is taken as 0.
#[inline]
fn network_with_grad(z: &[f64], theta: &[f64], grad: Option<&mut [f64]>) -> f64 {
    let h = dot(&theta[W0..], z) + theta[B0];
    let active = h > 0.0;
    let a = if active { h } else { 0.0 };
    let o = theta[B1] + theta[W1] * a;
    let g = (-0.25 * o * o).exp();
    if let Some(grad) = grad {
        let dg = -0.5 * o * g;
        grad[B1] = dg;
        grad[W1] = dg * a;
        if active {
            let back = dg * theta[W1];
            grad[B0] = back;
            for (gk, zk) in grad[W0..].iter_mut().zip(z) {
                *gk = back * zk;
            }
        } else {
            grad[B0..].iter_mut().for_each(|v| *v = 0.0);
        }
    }
    g
}

#[derive(Debug, Clone)]
pub struct FeatureMapKernel {
    probes: Points,
}

impl FeatureMapKernel {
    pub fn new(probes: Points) -> Result<Self> {
        if probes.is_empty() {
            return argument("feature kernel needs at least one probe");
        }
        if probes.dim() != PROBE_DIM {
            return argument(format!(
                "probes must live in R^{PROBE_DIM}, got dimension {}",
                probes.dim()
            ));
        }
        Ok(Self { probes })
    }

    pub fn probes(&self) -> &Points {
        &self.probes
    }

    pub fn probe_count(&self) -> usize {
        self.probes.len()
    }

    /// `ψ(z_b, θ)` for every probe, and optionally the row-major `B × 53` Jacobian.
    pub fn psi_into(&self, theta: &[f64], values: &mut [f64], mut jac: Option<&mut [f64]>) {
        for (b, z) in self.probes.rows().enumerate() {
            let g = jac
                .as_deref_mut()
                .map(|j| &mut j[b * PARAM_DIM..(b + 1) * PARAM_DIM]);
            values[b] = network_with_grad(z, theta, g);
        }
    }
}

/// Network outputs over the probe set and their parameter Jacobian (`53 × B`).
#[derive(Debug, Clone)]
pub struct NetworkFeatures {
    pub values: Vec<f64>,
    pub jacobian: DMatrix<f64>,
}

pub fn feature_psi_eval(kernel: &FeatureMapKernel, theta: &[f64]) -> Result<NetworkFeatures> {
    if theta.len() != PARAM_DIM {
        return argument(format!(
            "network parameters must have length {PARAM_DIM}, got {}",
            theta.len()
        ));
    }
    let b = kernel.probe_count();
    let mut values = vec![0.0; b];
    let mut jac = vec![0.0; b * PARAM_DIM];
    kernel.psi_into(theta, &mut values, Some(&mut jac));
    // row-major B×53 buffer read as column-major 53×B
    let jacobian = DMatrix::from_column_slice(PARAM_DIM, b, &jac);
    Ok(NetworkFeatures { values, jacobian })
}

impl Kernel for FeatureMapKernel {
    fn kind(&self) -> KernelKind {
        KernelKind::Feature
    }

    fn input_dim(&self) -> Option<usize> {
        Some(PARAM_DIM)
    }

    fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        let s: f64 = self
            .probes
            .rows()
            .map(|z| network_output(z, x) * network_output(z, y))
            .sum();
        s / self.probe_count() as f64
    }

    fn grad1_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) -> Result<()> {
        let inv_b = 1.0 / self.probe_count() as f64;
        let mut g = [0.0; PARAM_DIM];
        out.iter_mut().for_each(|v| *v = 0.0);
        for z in self.probes.rows() {
            network_with_grad(z, x, Some(&mut g));
            let w = network_output(z, y) * inv_b;
            for (o, gi) in out.iter_mut().zip(&g) {
                *o += w * gi;
            }
        }
        Ok(())
    }

    fn stack_into(&self, x: &[f64], y: &[f64], out: &mut DerivativeStack) -> Result<()> {
        let b = self.probe_count();
        let inv_b = 1.0 / b as f64;
        let mut gx = [0.0; PARAM_DIM];
        let mut gy = [0.0; PARAM_DIM];
        out.value = 0.0;
        out.grad1.iter_mut().for_each(|v| *v = 0.0);
        out.grad2.iter_mut().for_each(|v| *v = 0.0);
        out.cross_hessian.iter_mut().for_each(|v| *v = 0.0);
        for z in self.probes.rows() {
            let px = network_with_grad(z, x, Some(&mut gx));
            let py = network_with_grad(z, y, Some(&mut gy));
            out.value += px * py;
            for i in 0..PARAM_DIM {
                out.grad1[i] += gx[i] * py;
                out.grad2[i] += px * gy[i];
                if gx[i] != 0.0 {
                    let row = &mut out.cross_hessian[i * PARAM_DIM..(i + 1) * PARAM_DIM];
                    for (h, gyj) in row.iter_mut().zip(&gy) {
                        *h += gx[i] * gyj;
                    }
                }
            }
        }
        out.value *= inv_b;
        out.grad1.iter_mut().for_each(|v| *v *= inv_b);
        out.grad2.iter_mut().for_each(|v| *v *= inv_b);
        out.cross_hessian.iter_mut().for_each(|v| *v *= inv_b);
        Ok(())
    }

    fn smooth_order(&self, _x: &[f64], _y: &[f64]) -> usize {
        2
    }

    fn finite_features(&self) -> Option<&dyn FiniteFeatures> {
        Some(self)
    }
}

/// `Φ(θ) = ψ(z_·, θ) / √B`.
impl FiniteFeatures for FeatureMapKernel {
    fn feature_dim(&self, _input_dim: usize) -> usize {
        self.probe_count()
    }

    fn features_into(&self, x: &[f64], values: &mut [f64], mut jac: Option<&mut [f64]>) {
        let scale = 1.0 / (self.probe_count() as f64).sqrt();
        self.psi_into(x, values, jac.as_deref_mut());
        values.iter_mut().for_each(|v| *v *= scale);
        if let Some(j) = jac {
            j.iter_mut().for_each(|v| *v *= scale);
        }
    }
}
