//! Gaussian mixtures: density, score, score Jacobian, sampling and closed-form
//! Gaussian-kernel mean embeddings.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Sampler;
use crate::error::{argument, Result};
use crate::points::{dot, Points};
use crate::rng::FlowRng;
use crate::stein::ScoreModel;

#[derive(Debug, Clone)]
struct Component {
    weight: f64,
    mean: Vec<f64>,
    cov: DMatrix<f64>,
    /// Row-major `Σ⁻¹`.
    precision: Vec<f64>,
    /// `L` with `L Lᵀ = Σ`, for sampling.
    chol: DMatrix<f64>,
    /// `log w − ½ log|2πΣ|`.
    log_norm: f64,
}

/// `Σ_c w_c N(m_c, Σ_c)` on `R^d`.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    dim: usize,
    comps: Vec<Component>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, covs: Vec<DMatrix<f64>>) -> Result<Self> {
        if weights.is_empty() {
            return argument("a mixture needs at least one component");
        }
        if weights.len() != means.len() || weights.len() != covs.len() {
            return argument("weights, means and covariances must have equal counts");
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return argument("mixture weights must be positive");
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return argument(format!("mixture weights sum to {total}, not 1"));
        }
        let dim = means[0].len();
        if dim == 0 {
            return argument("mixture dimension must be positive");
        }
        let mut comps = Vec::with_capacity(weights.len());
        for (c, ((w, m), s)) in weights.into_iter().zip(means).zip(covs).enumerate() {
            if m.len() != dim || s.shape() != (dim, dim) {
                return argument(format!("component {c} has inconsistent dimensions"));
            }
            if m.iter().chain(s.iter()).any(|v| !v.is_finite()) {
                return argument(format!("component {c} has non-finite parameters"));
            }
            if (&s - s.transpose()).amax() > 1e-12 * s.amax().max(1.0) {
                return argument(format!("covariance {c} is not symmetric"));
            }
            let Some(chol) = s.clone().cholesky() else {
                return argument(format!("covariance {c} is not positive definite"));
            };
            let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let inv = chol.inverse();
            let precision: Vec<f64> = (0..dim * dim).map(|k| inv[(k / dim, k % dim)]).collect();
            let log_norm =
                w.ln() - 0.5 * (dim as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
            comps.push(Component {
                weight: w,
                mean: m,
                cov: s,
                precision,
                chol: chol.unpack(),
                log_norm,
            });
        }
        Ok(Self { dim, comps })
    }

    /// Equal-or-given weights with a shared isotropic covariance `variance·I`.
    pub fn isotropic(weights: Vec<f64>, means: Vec<Vec<f64>>, variance: f64) -> Result<Self> {
        if !(variance.is_finite() && variance > 0.0) {
            return argument("variance must be positive");
        }
        let d = means.first().map_or(0, Vec::len);
        let covs = vec![DMatrix::identity(d, d) * variance; means.len()];
        Self::new(weights, means, covs)
    }

    pub fn standard_normal(dim: usize) -> Self {
        Self::isotropic(vec![1.0], vec![vec![0.0; dim]], 1.0).expect("valid standard normal")
    }

    /// Four components with means `(±2, ±2)` and covariance `1.2·I`.
    pub fn four_gaussians() -> Self {
        let means = vec![
            vec![2.0, 2.0],
            vec![-2.0, 2.0],
            vec![-2.0, -2.0],
            vec![2.0, -2.0],
        ];
        Self::isotropic(vec![0.25; 4], means, 1.2).expect("valid mixture")
    }

    /// Ten equally weighted components spaced evenly on a circle.
    pub fn ring(components: usize, radius: f64, variance: f64) -> Result<Self> {
        if components == 0 {
            return argument("ring needs at least one component");
        }
        let means = (0..components)
            .map(|c| {
                let a = 2.0 * std::f64::consts::PI * c as f64 / components as f64;
                vec![radius * a.cos(), radius * a.sin()]
            })
            .collect();
        Self::isotropic(vec![1.0 / components as f64; components], means, variance)
    }

    /// The ten-Gaussian sampling benchmark: radius 5, covariance `0.5·I`.
    pub fn ten_gaussian_ring() -> Self {
        Self::ring(10, 5.0, 0.5).expect("valid ring")
    }

    pub fn components(&self) -> usize {
        self.comps.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.comps.iter().map(|c| c.weight).collect()
    }

    pub fn means(&self) -> Vec<Vec<f64>> {
        self.comps.iter().map(|c| c.mean.clone()).collect()
    }

    pub fn covariances(&self) -> Vec<DMatrix<f64>> {
        self.comps.iter().map(|c| c.cov.clone()).collect()
    }

    /// `Σ_c w_c m_c`.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for c in &self.comps {
            for (a, b) in m.iter_mut().zip(&c.mean) {
                *a += c.weight * b;
            }
        }
        m
    }

    /// Per-component log terms and `g_c = −Σ_c⁻¹(x − m_c)` (flattened).
    fn log_terms(&self, x: &[f64], g: &mut [f64]) -> Vec<f64> {
        let d = self.dim;
        let mut diff = vec![0.0; d];
        self.comps
            .iter()
            .enumerate()
            .map(|(c, comp)| {
                for (k, v) in diff.iter_mut().enumerate() {
                    *v = x[k] - comp.mean[k];
                }
                let gc = &mut g[c * d..(c + 1) * d];
                for a in 0..d {
                    gc[a] = -dot(&comp.precision[a * d..(a + 1) * d], &diff);
                }
                comp.log_norm + 0.5 * dot(gc, &diff)
            })
            .collect()
    }

    /// Responsibilities `r_c(x)` via log-sum-exp; returns `log p(x)` too.
    fn responsibilities(&self, x: &[f64], g: &mut [f64]) -> (Vec<f64>, f64) {
        let mut lt = self.log_terms(x, g);
        let max = lt.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in lt.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        lt.iter_mut().for_each(|v| *v /= total);
        (lt, max + total.ln())
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let mut g = vec![0.0; self.comps.len() * self.dim];
        self.responsibilities(x, &mut g).1
    }

    /// Closed-form Gaussian-kernel mean embedding for lengthscale `σ`.
    pub fn embedding(&self, lengthscale: f64) -> Result<MixtureEmbedding> {
        MixtureEmbedding::new(self, lengthscale)
    }
}

impl ScoreModel for GaussianMixture {
    fn dim(&self) -> usize {
        self.dim
    }

    fn score_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let mut g = vec![0.0; self.comps.len() * d];
        let (r, _) = self.responsibilities(x, &mut g);
        out.iter_mut().for_each(|v| *v = 0.0);
        for (c, rc) in r.iter().enumerate() {
            for a in 0..d {
                out[a] += rc * g[c * d + a];
            }
        }
    }

    /// `Σ_c r_c(−Σ_c⁻¹ + g_c g_cᵀ) − s sᵀ`.
    fn jacobian_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let mut g = vec![0.0; self.comps.len() * d];
        let (r, _) = self.responsibilities(x, &mut g);
        let mut s = vec![0.0; d];
        out.iter_mut().for_each(|v| *v = 0.0);
        for (c, (rc, comp)) in r.iter().zip(&self.comps).enumerate() {
            let gc = &g[c * d..(c + 1) * d];
            for a in 0..d {
                s[a] += rc * gc[a];
                for b in 0..d {
                    out[a * d + b] += rc * (gc[a] * gc[b] - comp.precision[a * d + b]);
                }
            }
        }
        for a in 0..d {
            for b in 0..d {
                out[a * d + b] -= s[a] * s[b];
            }
        }
    }

    fn log_density(&self, x: &[f64]) -> Option<f64> {
        Some(self.log_pdf(x))
    }
}

impl Sampler for GaussianMixture {
    fn dim(&self) -> usize {
        self.dim
    }

    fn sample(&self, n: usize, rng: &mut FlowRng) -> Points {
        let d = self.dim;
        let mut data = Vec::with_capacity(n * d);
        let mut eps = vec![0.0; d];
        for _ in 0..n {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = self.comps.len() - 1;
            for (c, comp) in self.comps.iter().enumerate() {
                acc += comp.weight;
                if u < acc {
                    pick = c;
                    break;
                }
            }
            let comp = &self.comps[pick];
            for e in eps.iter_mut() {
                *e = StandardNormal.sample(rng);
            }
            for a in 0..d {
                let mut v = comp.mean[a];
                for b in 0..=a {
                    v += comp.chol[(a, b)] * eps[b];
                }
                data.push(v);
            }
        }
        Points::from_flat(data, d).expect("positive dimension")
    }
}

#[derive(Debug, Clone)]
struct EmbedComponent {
    weight: f64,
    mean: Vec<f64>,
    /// Row-major `(Σ + σ²I)⁻¹`.
    inv: Vec<f64>,
    /// `|I + Σ/σ²|^{−1/2}`.
    coef: f64,
}

/// `m_π(x) = E_{Y∼π} k(Y, x)` for the Gaussian kernel with lengthscale `σ`,
/// plus its gradient and the constant `∬ k dπ dπ`.
#[derive(Debug, Clone)]
pub struct MixtureEmbedding {
    lengthscale: f64,
    dim: usize,
    comps: Vec<EmbedComponent>,
    self_term: f64,
}

/// `(|I + S/σ²|^{−1/2}, (S + σ²I)⁻¹)` for a covariance `S`.
fn convolution_factors(s: &DMatrix<f64>, s2: f64) -> Result<(f64, DMatrix<f64>)> {
    let d = s.nrows();
    let shifted = s + DMatrix::identity(d, d) * s2;
    let Some(chol) = shifted.clone().cholesky() else {
        return argument("covariance plus kernel bandwidth is not positive definite");
    };
    // |I + S/σ²| = |S + σ²I| / σ^{2d}
    let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let coef = (-0.5 * (log_det - d as f64 * s2.ln())).exp();
    Ok((coef, chol.inverse()))
}

impl MixtureEmbedding {
    fn new(gm: &GaussianMixture, lengthscale: f64) -> Result<Self> {
        if !(lengthscale.is_finite() && lengthscale > 0.0) {
            return argument(format!("lengthscale must be positive, got {lengthscale}"));
        }
        let d = gm.dim;
        let s2 = lengthscale * lengthscale;
        let mut comps = Vec::with_capacity(gm.comps.len());
        for c in &gm.comps {
            let (coef, inv) = convolution_factors(&c.cov, s2)?;
            comps.push(EmbedComponent {
                weight: c.weight,
                mean: c.mean.clone(),
                inv: (0..d * d).map(|k| inv[(k / d, k % d)]).collect(),
                coef,
            });
        }
        // Y − Y' ~ N(m_c − m_c', Σ_c + Σ_c') for independent draws
        let mut self_term = 0.0;
        for a in &gm.comps {
            for b in &gm.comps {
                let (coef, inv) = convolution_factors(&(&a.cov + &b.cov), s2)?;
                let delta = nalgebra::DVector::from_iterator(
                    d,
                    a.mean.iter().zip(&b.mean).map(|(x, y)| x - y),
                );
                let quad = delta.dot(&(&inv * &delta));
                self_term += a.weight * b.weight * coef * (-0.5 * quad).exp();
            }
        }
        Ok(Self {
            lengthscale,
            dim: d,
            comps,
            self_term,
        })
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `m_π(x)`; when `grad` is given, also writes `∇m_π(x)`.
    pub fn eval(&self, x: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let d = self.dim;
        let mut diff = vec![0.0; d];
        let mut v = vec![0.0; d];
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|e| *e = 0.0);
        }
        let mut total = 0.0;
        for c in &self.comps {
            for (k, e) in diff.iter_mut().enumerate() {
                *e = x[k] - c.mean[k];
            }
            for a in 0..d {
                v[a] = dot(&c.inv[a * d..(a + 1) * d], &diff);
            }
            let m = c.weight * c.coef * (-0.5 * dot(&diff, &v)).exp();
            total += m;
            if let Some(g) = grad.as_deref_mut() {
                for a in 0..d {
                    g[a] -= m * v[a];
                }
            }
        }
        total
    }

    /// `∬ k(y, y') dπ(y) dπ(y')`.
    pub fn self_term(&self) -> f64 {
        self.self_term
    }
}

/// `(m_π(x), ∇m_π(x))` for the Gaussian kernel with lengthscale `σ`.
pub fn mixture_mean_embedding(
    gm: &GaussianMixture,
    lengthscale: f64,
    x: &[f64],
) -> Result<(f64, Vec<f64>)> {
    if x.len() != gm.dim {
        return argument(format!("expected dimension {}, got {}", gm.dim, x.len()));
    }
    let e = gm.embedding(lengthscale)?;
    let mut g = vec![0.0; gm.dim];
    let v = e.eval(x, Some(&mut g));
    Ok((v, g))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_normal_score_is_minus_x() {
        let gm = GaussianMixture::standard_normal(2);
        assert_eq!(gm.score(&[1.0, 2.0]), vec![-1.0, -2.0]);
        assert_eq!(gm.jacobian(&[0.3, -4.0]), vec![-1.0, 0.0, 0.0, -1.0]);
    }

    #[test]
    fn symmetric_pair_has_zero_score_at_center() {
        let gm = GaussianMixture::isotropic(vec![0.5, 0.5], vec![vec![-1.5, 0.5], vec![1.5, -0.5]], 1.0)
            .unwrap();
        let s = gm.score(&[0.0, 0.0]);
        assert!(s.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn one_dimensional_embedding_value() {
        let (v, g) = mixture_mean_embedding(&GaussianMixture::standard_normal(1), 1.0, &[0.0]).unwrap();
        assert!((v - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(g, vec![0.0]);
    }

    #[test]
    fn construction_errors() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(GaussianMixture::new(vec![1.0], vec![vec![0.0, 0.0]], vec![bad]).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(GaussianMixture::new(vec![1.0], vec![vec![0.0, 0.0]], vec![asym]).is_err());
        assert!(GaussianMixture::isotropic(vec![0.4, 0.4], vec![vec![0.0], vec![1.0]], 1.0).is_err());
        assert!(GaussianMixture::standard_normal(1).embedding(0.0).is_err());
    }

    #[test]
    fn far_tail_score_is_finite() {
        let gm = GaussianMixture::four_gaussians();
        let s = gm.score(&[1e3, -2e3]);
        assert!(s.iter().all(|v| v.is_finite()));
        let j = gm.jacobian(&[1e3, -2e3]);
        assert!(j.iter().all(|v| v.is_finite()));
    }
}
