//! Seeded random streams.
//!
//! One master seed drives every experiment. Independent components draw from
//! labeled ChaCha streams of that seed so that, e.g., changing the amount of
//! noise drawn never shifts the initial particles.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::points::Points;

pub type FlowRng = ChaCha8Rng;

/// Fixed stream labels derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Particles = 1,
    Target = 2,
    Noise = 3,
    Probes = 4,
    Metrics = 5,
    Data = 6,
    Teacher = 7,
    /// Per-iteration probe subsets (student-teacher kernel rebuilds).
    Subsample = 8,
}

pub fn stream(seed: u64, label: Stream) -> FlowRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(label as u64);
    rng
}

/// `n` draws from `N(mean, scale² I)`.
pub fn gaussian_points(n: usize, mean: &[f64], scale: f64, rng: &mut FlowRng) -> Points {
    let dim = mean.len();
    let mut data = Vec::with_capacity(n * dim);
    for _ in 0..n {
        for m in mean {
            let e: f64 = StandardNormal.sample(rng);
            data.push(m + scale * e);
        }
    }
    Points::from_flat(data, dim).expect("mean must be non-empty")
}
