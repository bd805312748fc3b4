//! Witnesses for kernels with an explicit feature map `Φ: R^d → R^p`.
//!
//! With `J[(i,l), a] = ∂_l Φ_a(x_i)` the cross-Hessian Gram matrix factors as
//! `H = J Jᵀ`, so the dual system only ever needs a `p × p` solve:
//!
//! ```text
//! β = (J Jᵀ + NλI)⁻¹ r = (1/(Nλ)) [ r − J (JᵀJ + NλI)⁻¹ Jᵀ r ].
//! ```
//!
//! [`primal_witness_oracle`] instead materializes `S = JᵀJ / N` and solves in
//! feature coordinates directly; it exists to cross-check the dual solvers.

use nalgebra::{DMatrix, DVector};

use super::dense::solve_spd;
use super::{check_inputs, check_query, TargetRepresentation};
use crate::error::{Error, Result};
use crate::kernels::{FiniteFeatures, Kernel};
use crate::points::Points;

/// Feature values (`N × p`) and stacked Jacobian `J` (`Nd × p`) over an ensemble.
fn feature_blocks(f: &dyn FiniteFeatures, x: &Points) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, d) = (x.len(), x.dim());
    let p = f.feature_dim(d);
    let mut phi = DMatrix::zeros(n, p);
    let mut jac = DMatrix::zeros(n * d, p);
    let mut vals = vec![0.0; p];
    let mut j = vec![0.0; p * d];
    for (i, xi) in x.rows().enumerate() {
        f.features_into(xi, &mut vals, Some(&mut j));
        for a in 0..p {
            phi[(i, a)] = vals[a];
            for l in 0..d {
                jac[(i * d + l, a)] = j[a * d + l];
            }
        }
    }
    (phi, jac)
}

fn mean_features(f: &dyn FiniteFeatures, x: &Points) -> DVector<f64> {
    let p = f.feature_dim(x.dim());
    let mut vals = vec![0.0; p];
    let mut acc = DVector::zeros(p);
    for xi in x.rows() {
        f.features_into(xi, &mut vals, None);
        for a in 0..p {
            acc[a] += vals[a];
        }
    }
    acc / x.len() as f64
}

fn feature_inputs<'k>(
    kernel: &'k dyn Kernel,
    particles: &Points,
    target: &TargetRepresentation,
    lambda: f64,
) -> Result<(&'k dyn FiniteFeatures, DVector<f64>)> {
    check_inputs(kernel, particles, target, lambda)?;
    let Some(features) = kernel.finite_features() else {
        return Err(Error::Capability(format!(
            "{:?} kernels have no finite feature map",
            kernel.kind()
        )));
    };
    let TargetRepresentation::Empirical(ys) = target else {
        return Err(Error::Capability(
            "feature-space witnesses need an empirical target".into(),
        ));
    };
    // h = meanΦ(X) − meanΦ(Y), so that Φ(z)ᵀh = m_μ̂(z) − m_π(z)
    let h = mean_features(features, particles) - mean_features(features, ys);
    Ok((features, h))
}

/// Witness `f(z) = Φ(z)ᵀ w` with feature weights `w`.
pub struct FeatureWitness<'a> {
    features: &'a dyn FiniteFeatures,
    dim: usize,
    w: DVector<f64>,
}

impl FeatureWitness<'_> {
    pub fn weights(&self) -> &DVector<f64> {
        &self.w
    }

    pub fn eval(&self, z: &[f64]) -> Result<f64> {
        check_query(self.dim, z)?;
        let mut vals = vec![0.0; self.w.len()];
        self.features.features_into(z, &mut vals, None);
        Ok(vals.iter().zip(self.w.iter()).map(|(a, b)| a * b).sum())
    }

    pub fn grad(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_query(self.dim, z)?;
        let (p, d) = (self.w.len(), self.dim);
        let mut vals = vec![0.0; p];
        let mut jac = vec![0.0; p * d];
        self.features.features_into(z, &mut vals, Some(&mut jac));
        Ok((0..d)
            .map(|l| (0..p).map(|a| jac[a * d + l] * self.w[a]).sum())
            .collect())
    }
}

/// Dual witness solved through the feature factorization `H = J Jᵀ`.
pub struct LowRankWitness<'a> {
    witness: FeatureWitness<'a>,
    field: Points,
    beta: DVector<f64>,
}

impl<'a> LowRankWitness<'a> {
    pub fn eval(&self, z: &[f64]) -> Result<f64> {
        self.witness.eval(z)
    }

    pub fn grad(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.witness.grad(z)
    }

    /// Same coefficients as [`super::WitnessSystem::beta`].
    pub fn beta(&self) -> &DVector<f64> {
        &self.beta
    }

    pub fn field_at_particles(&self) -> &Points {
        &self.field
    }

    pub fn into_field(self) -> Points {
        self.field
    }
}

pub fn assemble_lowrank_witness<'a>(
    kernel: &'a dyn Kernel,
    particles: &Points,
    target: &TargetRepresentation,
    lambda: f64,
) -> Result<LowRankWitness<'a>> {
    let (features, h) = feature_inputs(kernel, particles, target, lambda)?;
    let (n, d) = (particles.len(), particles.dim());
    let (_, jac) = feature_blocks(features, particles);
    let shift = n as f64 * lambda;

    // r_(i,l) = ∂_l (m_μ̂ − m_π)(x_i) = (J h)_(i,l)
    let r = &jac * &h;
    let jt = jac.transpose();
    let mut gram = &jt * &jac;
    for a in 0..gram.nrows() {
        gram[(a, a)] += shift;
    }
    let inner = solve_spd(&gram, 0.0, &(&jt * &r))?.x;
    let beta = (&r - &jac * inner) / shift;
    let jt_beta = &jt * &beta;
    let w = (&h - &jt_beta) / lambda;
    // ∇f(x_i) = (1/λ)(r − J Jᵀβ)_i
    let field = (&r - &jac * &jt_beta) / lambda;
    Ok(LowRankWitness {
        witness: FeatureWitness {
            features,
            dim: d,
            w,
        },
        field: Points::from_flat(field.as_slice().to_vec(), d)?,
        beta,
    })
}

/// Operator-form witness `(S + λI)⁻¹(m_μ̂ − m_π)` in feature coordinates.
pub type PrimalWitness<'a> = FeatureWitness<'a>;

pub fn primal_witness_oracle<'a>(
    kernel: &'a dyn Kernel,
    particles: &Points,
    target: &TargetRepresentation,
    lambda: f64,
) -> Result<PrimalWitness<'a>> {
    let (features, h) = feature_inputs(kernel, particles, target, lambda)?;
    let n = particles.len() as f64;
    let (_, jac) = feature_blocks(features, particles);
    let mut s = jac.transpose() * &jac / n;
    for a in 0..s.nrows() {
        s[(a, a)] += lambda;
    }
    let w = solve_spd(&s, 0.0, &h)?.x;
    Ok(FeatureWitness {
        features,
        dim: particles.dim(),
        w,
    })
}
