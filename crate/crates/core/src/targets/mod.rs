//! Target distributions: samplers, scores, closed-form kernel mean embeddings,
//! the Swiss roll, Bayesian logistic posteriors and the student-teacher setup.

mod logistic;
mod mixture;
mod student_teacher;
mod swiss_roll;

pub use logistic::{
    load_csv_dataset, logistic_metrics, synthetic_logistic_dataset, DataSplit, Dataset,
    LogisticMetrics, LogisticPosterior,
};
pub use mixture::{mixture_mean_embedding, GaussianMixture, MixtureEmbedding};
pub use student_teacher::{
    student_teacher_objective, uniform_sphere, StudentTeacherConfig, StudentTeacherSetup,
};
pub use swiss_roll::SwissRoll;

use crate::points::Points;
use crate::rng::FlowRng;

/// Seeded i.i.d. draws from a distribution.
pub trait Sampler {
    fn dim(&self) -> usize;
    fn sample(&self, n: usize, rng: &mut FlowRng) -> Points;
}
