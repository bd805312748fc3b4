//! Hybrid witness penalizing both `‖f‖²_{L₂(μ̂)}` and `‖∇f‖²_{L₂(μ̂)}`:
//! `f = (α S_μ + (1 − α) Σ_μ + λ)⁻¹ (m_μ − m_π)`.
//!
//! With `c = √(α(1−α))` the coefficients solve
//!
//! ```text
//! [ (1−α)K   c Dᵀ ] [β_k]            [√(1−α) g]
//! [  c D     α H  ] [β_d] + Nλ β  =  [  √α r  ],   g = K 1/N − E_π[K_X]
//! ```

use nalgebra::{DMatrix, DVector};

use super::dense::solve_regularized;
use super::{
    assemble_blocks, check_inputs, check_query, gradient_residual, pair_stack,
    TargetRepresentation,
};
use crate::error::{argument, Result};
use crate::kernels::{points_data, DerivativeStack, Kernel};
use crate::points::Points;

pub struct HybridWitnessSystem<'a> {
    kernel: &'a dyn Kernel,
    target: &'a TargetRepresentation,
    particles: Points,
    data: Vec<Vec<f64>>,
    lambda: f64,
    alpha: f64,
    d_xx: DMatrix<f64>,
    h_xx: DMatrix<f64>,
    r: DVector<f64>,
    beta_k: DVector<f64>,
    beta_d: DVector<f64>,
    residual: f64,
}

impl std::fmt::Debug for HybridWitnessSystem<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HybridWitnessSystem")
            .field("particles", &self.particles.len())
            .field("lambda", &self.lambda)
            .field("alpha", &self.alpha)
            .field("residual", &self.residual)
            .finish()
    }
}

pub fn assemble_hybrid_witness<'a>(
    kernel: &'a dyn Kernel,
    particles: &Points,
    target: &'a TargetRepresentation,
    lambda: f64,
    alpha: f64,
) -> Result<HybridWitnessSystem<'a>> {
    if !(0.0..=1.0).contains(&alpha) {
        return argument(format!("alpha must lie in [0, 1], got {alpha}"));
    }
    check_inputs(kernel, particles, target, lambda)?;
    let n = particles.len();
    let nd = n * particles.dim();
    let data = points_data(kernel, particles);
    let blocks = assemble_blocks(kernel, particles, &data, true)?;
    let k = blocks.k.expect("gram requested");
    let r = gradient_residual(kernel, target, particles, &blocks.d)?;

    let nf = n as f64;
    let mut g = DVector::zeros(n);
    for i in 0..n {
        let m_pi = target.embedding(kernel, particles.row(i), None)?;
        g[i] = k.row(i).iter().sum::<f64>() / nf - m_pi;
    }

    let (wk, wd) = ((1.0 - alpha).sqrt(), alpha.sqrt());
    let c = wk * wd;
    let shift = n as f64 * lambda;
    let mut a = DMatrix::zeros(n + nd, n + nd);
    a.view_mut((0, 0), (n, n)).copy_from(&(&k * (1.0 - alpha)));
    a.view_mut((n, 0), (nd, n)).copy_from(&(&blocks.d * c));
    a.view_mut((0, n), (n, nd)).copy_from(&(blocks.d.transpose() * c));
    a.view_mut((n, n), (nd, nd)).copy_from(&(&blocks.h * alpha));
    for i in 0..n + nd {
        a[(i, i)] += shift;
    }
    let mut rhs = DVector::zeros(n + nd);
    rhs.rows_mut(0, n).copy_from(&(&g * wk));
    rhs.rows_mut(n, nd).copy_from(&(&r * wd));
    let solved = solve_regularized(&a, 0.0, &rhs, kernel.zero_singular_diagonal())?;

    Ok(HybridWitnessSystem {
        kernel,
        target,
        particles: particles.clone(),
        data,
        lambda,
        alpha,
        d_xx: blocks.d,
        h_xx: blocks.h,
        r,
        beta_k: solved.x.rows(0, n).into_owned(),
        beta_d: solved.x.rows(n, nd).into_owned(),
        residual: solved.residual,
    })
}

impl HybridWitnessSystem<'_> {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn beta_k(&self) -> &DVector<f64> {
        &self.beta_k
    }

    pub fn beta_d(&self) -> &DVector<f64> {
        &self.beta_d
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }

    fn weights(&self) -> (f64, f64) {
        ((1.0 - self.alpha).sqrt(), self.alpha.sqrt())
    }

    pub fn eval(&self, z: &[f64]) -> Result<f64> {
        let dim = self.particles.dim();
        check_query(dim, z)?;
        let (wk, wd) = self.weights();
        let zd = self.kernel.point_data(z);
        let mut g = vec![0.0; dim];
        let (mut k_sum, mut k_term, mut d_term) = (0.0, 0.0, 0.0);
        for (i, (x, xd)) in self.particles.rows().zip(&self.data).enumerate() {
            let kv = self.kernel.value_with_data(x, xd, z, &zd);
            k_sum += kv;
            k_term += self.beta_k[i] * kv;
            self.kernel.grad1_with_data(x, xd, z, &zd, &mut g)?;
            for l in 0..dim {
                d_term += self.beta_d[i * dim + l] * g[l];
            }
        }
        let m_pi = self.target.embedding(self.kernel, z, None)?;
        let n = self.particles.len() as f64;
        Ok((k_sum / n - m_pi - wk * k_term - wd * d_term) / self.lambda)
    }

    pub fn grad(&self, z: &[f64]) -> Result<Vec<f64>> {
        let dim = self.particles.dim();
        check_query(dim, z)?;
        let (wk, wd) = self.weights();
        let zd = self.kernel.point_data(z);
        let mut s = DerivativeStack::zeros(dim);
        let mut out = vec![0.0; dim];
        let inv_n = 1.0 / self.particles.len() as f64;
        for (i, (x, xd)) in self.particles.rows().zip(&self.data).enumerate() {
            pair_stack(self.kernel, x, xd, z, &zd, &mut s)?;
            for m in 0..dim {
                let mut coupled = 0.0;
                for l in 0..dim {
                    coupled += self.beta_d[i * dim + l] * s.cross(l, m);
                }
                out[m] += s.grad2[m] * (inv_n - wk * self.beta_k[i]) - wd * coupled;
            }
        }
        let mut gm = vec![0.0; dim];
        self.target.embedding(self.kernel, z, Some(&mut gm))?;
        for (o, g) in out.iter_mut().zip(&gm) {
            *o = (*o - g) / self.lambda;
        }
        Ok(out)
    }

    /// `∇f` at the particles: `(1/λ)(r − √(1−α) D β_k − √α H β_d)`.
    pub fn field_at_particles(&self) -> Points {
        let (wk, wd) = self.weights();
        let v = (&self.r - &self.d_xx * &self.beta_k * wk - &self.h_xx * &self.beta_d * wd)
            / self.lambda;
        Points::from_flat(v.as_slice().to_vec(), self.particles.dim()).expect("consistent shape")
    }
}
