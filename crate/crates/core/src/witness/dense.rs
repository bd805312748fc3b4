use nalgebra::{DMatrix, DVector};

use super::{
    assemble_blocks, check_inputs, check_query, gradient_residual, pair_stack,
    TargetRepresentation,
};
use crate::error::{Error, Result};
use crate::kernels::{points_data, DerivativeStack, Kernel};
use crate::linalg::SpdFactor;
use crate::points::Points;

/// Solution of a regularized symmetric system.
pub(crate) struct Solved {
    pub x: DVector<f64>,
    pub jitter: f64,
    /// `‖(A + jitter·I)x − b‖ / ‖b‖` after one refinement step.
    pub residual: f64,
}

/// Cholesky solve of `(h + shift·I) x = b` with jitter escalation and one
/// step of iterative refinement against the (jittered) matrix.
pub(crate) fn solve_spd(h: &DMatrix<f64>, shift: f64, b: &DVector<f64>) -> Result<Solved> {
    let f = SpdFactor::new_shifted(h, shift)?;
    let jitter = f.jitter();
    let apply = |v: &DVector<f64>| h * v + v * (shift + jitter);
    let mut x = f.solve(b);
    let res = b - apply(&x);
    x += f.solve(&res);
    let bn = b.norm();
    let residual = if bn > 0.0 {
        (b - apply(&x)).norm() / bn
    } else {
        0.0
    };
    Ok(Solved {
        x,
        jitter,
        residual,
    })
}

/// [`solve_spd`], falling back to pivoted LU when `indefinite_ok` and the
/// matrix is not positive definite. Zeroing the singular diagonal blocks of a
/// Riesz-type kernel leaves a symmetric but possibly indefinite system.
pub(crate) fn solve_regularized(
    h: &DMatrix<f64>,
    shift: f64,
    b: &DVector<f64>,
    indefinite_ok: bool,
) -> Result<Solved> {
    match solve_spd(h, shift, b) {
        Err(err @ Error::Factorization { .. }) if indefinite_ok => {
            let mut a = h.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += shift;
            }
            let lu = a.clone().lu();
            let Some(mut x) = lu.solve(b) else {
                return Err(err);
            };
            if let Some(dx) = lu.solve(&(b - &a * &x)) {
                x += dx;
            }
            let bn = b.norm();
            let residual = if bn > 0.0 { (b - &a * &x).norm() / bn } else { 0.0 };
            if !(residual.is_finite() && residual <= 1e-8) {
                return Err(err);
            }
            Ok(Solved {
                x,
                jitter: 0.0,
                residual,
            })
        }
        other => other,
    }
}

/// Assembled and solved SrMMD witness on one ensemble. Immutable once built.
pub struct WitnessSystem<'a> {
    kernel: &'a dyn Kernel,
    target: &'a TargetRepresentation,
    particles: Points,
    data: Vec<Vec<f64>>,
    lambda: f64,
    d_xx: DMatrix<f64>,
    h_xx: DMatrix<f64>,
    r: DVector<f64>,
    beta: DVector<f64>,
    jitter: f64,
    residual: f64,
}

impl std::fmt::Debug for WitnessSystem<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WitnessSystem")
            .field("particles", &self.particles.len())
            .field("dim", &self.particles.dim())
            .field("lambda", &self.lambda)
            .field("jitter", &self.jitter)
            .field("residual", &self.residual)
            .finish()
    }
}

/// Builds `D`, `H`, `r`, factorizes `H + NλI` and solves for `β`.
pub fn assemble_witness<'a>(
    kernel: &'a dyn Kernel,
    particles: &Points,
    target: &'a TargetRepresentation,
    lambda: f64,
) -> Result<WitnessSystem<'a>> {
    check_inputs(kernel, particles, target, lambda)?;
    let n = particles.len();
    let data = points_data(kernel, particles);
    let blocks = assemble_blocks(kernel, particles, &data, false)?;
    let r = gradient_residual(kernel, target, particles, &blocks.d)?;

    let shift = n as f64 * lambda;
    let solved = solve_regularized(&blocks.h, shift, &r, kernel.zero_singular_diagonal())?;
    Ok(WitnessSystem {
        kernel,
        target,
        particles: particles.clone(),
        data,
        lambda,
        d_xx: blocks.d,
        h_xx: blocks.h,
        r,
        beta: solved.x,
        jitter: solved.jitter,
        residual: solved.residual,
    })
}

impl WitnessSystem<'_> {
    pub fn particles(&self) -> &Points {
        &self.particles
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `Nd × N`, row `i·d + l`, column `j`: `∂_{1,l} k(x_i, x_j)`.
    pub fn d_xx(&self) -> &DMatrix<f64> {
        &self.d_xx
    }

    /// `Nd × Nd`: `∂_{1,l} ∂_{2,m} k(x_i, x_j)`.
    pub fn h_xx(&self) -> &DMatrix<f64> {
        &self.h_xx
    }

    pub fn r(&self) -> &DVector<f64> {
        &self.r
    }

    /// Solves `(H + NλI) β = r`.
    pub fn beta(&self) -> &DVector<f64> {
        &self.beta
    }

    /// Diagonal jitter the factorization needed (0 when none).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Relative residual of the solve against the factorized matrix.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    /// `f(z)`.
    pub fn eval(&self, z: &[f64]) -> Result<f64> {
        let dim = self.particles.dim();
        check_query(dim, z)?;
        let zd = self.kernel.point_data(z);
        let mut g = vec![0.0; dim];
        let mut k_sum = 0.0;
        let mut d_term = 0.0;
        for (i, (x, xd)) in self.particles.rows().zip(&self.data).enumerate() {
            k_sum += self.kernel.value_with_data(x, xd, z, &zd);
            self.kernel.grad1_with_data(x, xd, z, &zd, &mut g)?;
            for l in 0..dim {
                d_term += self.beta[i * dim + l] * g[l];
            }
        }
        let m_pi = self.target.embedding(self.kernel, z, None)?;
        let n = self.particles.len() as f64;
        Ok((k_sum / n - m_pi - d_term) / self.lambda)
    }

    /// `∇f(z)`.
    pub fn grad(&self, z: &[f64]) -> Result<Vec<f64>> {
        let dim = self.particles.dim();
        check_query(dim, z)?;
        let zd = self.kernel.point_data(z);
        let mut s = DerivativeStack::zeros(dim);
        let mut mean_grad = vec![0.0; dim];
        let mut coupled = vec![0.0; dim];
        for (i, (x, xd)) in self.particles.rows().zip(&self.data).enumerate() {
            pair_stack(self.kernel, x, xd, z, &zd, &mut s)?;
            for m in 0..dim {
                mean_grad[m] += s.grad2[m];
                let mut acc = 0.0;
                for l in 0..dim {
                    acc += self.beta[i * dim + l] * s.cross(l, m);
                }
                coupled[m] += acc;
            }
        }
        let mut gm = vec![0.0; dim];
        self.target.embedding(self.kernel, z, Some(&mut gm))?;
        let n = self.particles.len() as f64;
        Ok((0..dim)
            .map(|m| (mean_grad[m] / n - gm[m] - coupled[m]) / self.lambda)
            .collect())
    }

    /// `∇f` at every particle, `(1/λ)(r − Hβ)` reshaped to `N × d`.
    pub fn field_at_particles(&self) -> Points {
        let v = (&self.r - &self.h_xx * &self.beta) / self.lambda;
        Points::from_flat(v.as_slice().to_vec(), self.particles.dim()).expect("consistent shape")
    }

    /// Writes `(D, H, r, β)` in the binary layout read by [`super::read_witness_dump`].
    pub fn write_dump(&self, path: &std::path::Path) -> Result<()> {
        super::dump::write(
            path,
            self.particles.len(),
            self.particles.dim(),
            self.lambda,
            &self.d_xx,
            &self.h_xx,
            &self.r,
            &self.beta,
        )
    }
}
