//! Mean-field student-teacher networks.
//!
//! Teacher parameters are drawn once from `N(0, I₅₃)`; probe inputs are uniform
//! on the unit sphere of `R^50`. Training the student ensemble on
//! `E_z (Ψ_π(z) − Ψ_μ(z))²` is an MMD flow under the feature kernel.

use rand::seq::index::sample;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{argument, Result};
use crate::kernels::{network_output, FeatureMapKernel, PARAM_DIM, PROBE_DIM};
use crate::points::Points;
use crate::rng::{gaussian_points, stream, FlowRng, Stream};

/// `n` points uniform on the unit sphere of `R^dim` (normalized Gaussians).
pub fn uniform_sphere(n: usize, dim: usize, rng: &mut FlowRng) -> Points {
    let mut data = Vec::with_capacity(n * dim);
    for _ in 0..n {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                data.extend(v.iter().map(|x| x / norm));
                break;
            }
        }
    }
    Points::from_flat(data, dim).expect("positive dimension")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudentTeacherConfig {
    pub teachers: usize,
    pub train_probes: usize,
    pub validation_probes: usize,
    /// Probes per iteration used to rebuild the kernel.
    pub subsample: usize,
}

impl Default for StudentTeacherConfig {
    fn default() -> Self {
        Self {
            teachers: 10,
            train_probes: 1000,
            validation_probes: 1000,
            subsample: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StudentTeacherSetup {
    teachers: Points,
    train: Points,
    validation: Points,
    subsample: usize,
}

impl StudentTeacherSetup {
    pub fn new(config: &StudentTeacherConfig, seed: u64) -> Result<Self> {
        if config.teachers == 0 || config.train_probes == 0 || config.validation_probes == 0 {
            return argument("teacher and probe counts must be positive");
        }
        if config.subsample == 0 || config.subsample > config.train_probes {
            return argument(format!(
                "probe subsample {} must lie in 1..={}",
                config.subsample, config.train_probes
            ));
        }
        let teachers = gaussian_points(
            config.teachers,
            &[0.0; PARAM_DIM],
            1.0,
            &mut stream(seed, Stream::Teacher),
        );
        let mut probe_rng = stream(seed, Stream::Probes);
        let train = uniform_sphere(config.train_probes, PROBE_DIM, &mut probe_rng);
        let validation = uniform_sphere(config.validation_probes, PROBE_DIM, &mut probe_rng);
        Ok(Self {
            teachers,
            train,
            validation,
            subsample: config.subsample,
        })
    }

    /// Setup with explicit teachers and probe sets.
    pub fn from_parts(teachers: Points, train: Points, validation: Points, subsample: usize) -> Result<Self> {
        if teachers.is_empty() || teachers.dim() != PARAM_DIM {
            return argument(format!("teachers must be a non-empty set in R^{PARAM_DIM}"));
        }
        for p in [&train, &validation] {
            if p.is_empty() || p.dim() != PROBE_DIM {
                return argument(format!("probe sets must be non-empty in R^{PROBE_DIM}"));
            }
        }
        if subsample == 0 || subsample > train.len() {
            return argument("probe subsample out of range");
        }
        Ok(Self {
            teachers,
            train,
            validation,
            subsample,
        })
    }

    pub fn teachers(&self) -> &Points {
        &self.teachers
    }

    pub fn train_probes(&self) -> &Points {
        &self.train
    }

    pub fn validation_probes(&self) -> &Points {
        &self.validation
    }

    pub fn subsample(&self) -> usize {
        self.subsample
    }

    /// `n` students from `N(0, 0.1·I)`.
    pub fn initial_students(&self, n: usize, rng: &mut FlowRng) -> Points {
        gaussian_points(n, &[0.0; PARAM_DIM], 0.1f64.sqrt(), rng)
    }

    /// Feature kernel on a fresh subsample of the training probes (no replacement).
    pub fn subsampled_kernel(&self, rng: &mut FlowRng) -> FeatureMapKernel {
        let mut idx = sample(rng, self.train.len(), self.subsample).into_vec();
        idx.sort_unstable();
        FeatureMapKernel::new(self.train.select(&idx)).expect("probes validated at construction")
    }
}

/// `(1/B) Σ_b (Ψ_π(z_b) − Ψ_μ(z_b))²` with mean networks over teachers and students.
pub fn student_teacher_objective(
    setup: &StudentTeacherSetup,
    students: &Points,
    probes: &Points,
) -> Result<f64> {
    if probes.is_empty() || probes.dim() != PROBE_DIM {
        return argument(format!("probe set must be non-empty in R^{PROBE_DIM}"));
    }
    if students.is_empty() || students.dim() != PARAM_DIM {
        return argument(format!("students must be a non-empty set in R^{PARAM_DIM}"));
    }
    let mean_net = |params: &Points, z: &[f64]| {
        params.rows().map(|t| network_output(z, t)).sum::<f64>() / params.len() as f64
    };
    let total: f64 = probes
        .rows()
        .map(|z| {
            let diff = mean_net(&setup.teachers, z) - mean_net(students, z);
            diff * diff
        })
        .sum();
    Ok(total / probes.len() as f64)
}
