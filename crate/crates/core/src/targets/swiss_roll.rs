//! Planar Swiss roll: `t ∼ U[t_min, t_max]`, `p = (t cos t, t sin t)/scale + σ ε`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Sampler;
use crate::error::{argument, Result};
use crate::points::Points;
use crate::rng::FlowRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SwissRoll {
    pub t_min: f64,
    pub t_max: f64,
    pub scale: f64,
    pub noise: f64,
}

impl Default for SwissRoll {
    fn default() -> Self {
        Self {
            t_min: 1.5 * std::f64::consts::PI,
            t_max: 4.5 * std::f64::consts::PI,
            scale: 3.0,
            noise: 0.05,
        }
    }
}

impl SwissRoll {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_min.is_finite() && self.t_max.is_finite() && self.t_min < self.t_max) {
            return argument("swiss roll needs a finite, non-empty parameter range");
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return argument("swiss roll scale must be positive");
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return argument("swiss roll noise must be non-negative");
        }
        Ok(())
    }

    /// Noiseless point on the curve at parameter `t`.
    pub fn curve(&self, t: f64) -> [f64; 2] {
        [t * t.cos() / self.scale, t * t.sin() / self.scale]
    }

    /// Draws `n` points and returns the curve parameter of each.
    pub fn sample_with_parameters(&self, n: usize, rng: &mut FlowRng) -> (Points, Vec<f64>) {
        let mut data = Vec::with_capacity(2 * n);
        let mut ts = Vec::with_capacity(n);
        for _ in 0..n {
            let t = rng.random_range(self.t_min..self.t_max);
            let [a, b] = self.curve(t);
            let ea: f64 = StandardNormal.sample(rng);
            let eb: f64 = StandardNormal.sample(rng);
            data.push(a + self.noise * ea);
            data.push(b + self.noise * eb);
            ts.push(t);
        }
        (Points::from_flat(data, 2).expect("dimension 2"), ts)
    }
}

impl Sampler for SwissRoll {
    fn dim(&self) -> usize {
        2
    }

    fn sample(&self, n: usize, rng: &mut FlowRng) -> Points {
        self.sample_with_parameters(n, rng).0
    }
}
