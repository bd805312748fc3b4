//! Experiment configuration.
//!
//! A config file is TOML. Only `experiment` is required: every other field
//! falls back to that experiment's defaults, which are merged underneath the
//! user's tables key by key. A table whose `kind` differs from the default
//! replaces the default table wholesale, so switching e.g. the kernel family
//! never inherits fields of the old one. The fully resolved config is what
//! gets echoed to `config_resolved.json`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use srmmd::flows::{FlowConfig, FlowKind};
use srmmd::kernels::KernelSpec;
use srmmd::metrics::Estimator;
use srmmd::targets::SwissRoll;
use srmmd::{Error, Result};

/// Relative output directories are resolved against this directory when set.
pub const OUTPUT_ROOT_VAR: &str = "SRMMD_OUTPUT_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    ToyMixture,
    SwissRoll,
    StudentTeacher,
    ColorTransfer,
    SamplingMixture,
    Logistic,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::ToyMixture,
        Experiment::SwissRoll,
        Experiment::StudentTeacher,
        Experiment::ColorTransfer,
        Experiment::SamplingMixture,
        Experiment::Logistic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::ToyMixture => "toy-mixture",
            Experiment::SwissRoll => "swiss-roll",
            Experiment::StudentTeacher => "student-teacher",
            Experiment::ColorTransfer => "color-transfer",
            Experiment::SamplingMixture => "sampling-mixture",
            Experiment::Logistic => "logistic",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.name() == name)
    }
}

/// How a mixture target enters the flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    /// Closed-form Gaussian-kernel mean embedding.
    Analytic,
    /// `samples` seeded draws.
    Empirical,
    /// Score only, through a Stein kernel over the configured base kernel.
    Stein,
}

fn analytic() -> Representation {
    Representation::Analytic
}
fn five_hundred() -> usize {
    500
}
fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TargetSpec {
    /// Means `(±2, ±2)`, covariance `1.2·I`.
    FourGaussians {
        #[serde(default = "analytic")]
        representation: Representation,
        #[serde(default = "five_hundred")]
        samples: usize,
    },
    /// Ten components on a circle of radius 5, covariance `0.5·I`.
    TenGaussianRing {
        #[serde(default = "analytic")]
        representation: Representation,
        #[serde(default = "five_hundred")]
        samples: usize,
    },
    StandardNormal {
        dim: usize,
        #[serde(default = "analytic")]
        representation: Representation,
        #[serde(default = "five_hundred")]
        samples: usize,
    },
    /// Isotropic mixture with a shared component variance.
    Mixture {
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        variance: f64,
        #[serde(default = "analytic")]
        representation: Representation,
        #[serde(default = "five_hundred")]
        samples: usize,
    },
    /// Always represented by `samples` draws.
    SwissRoll {
        #[serde(default = "roll_t_min")]
        t_min: f64,
        #[serde(default = "roll_t_max")]
        t_max: f64,
        #[serde(default = "roll_scale")]
        scale: f64,
        #[serde(default = "roll_noise")]
        noise: f64,
        #[serde(default = "five_hundred")]
        samples: usize,
    },
    /// Bayesian logistic posterior with prior `N(0, prior_scale² I)`.
    Logistic {
        #[serde(default)]
        data: LogisticData,
        #[serde(default = "one")]
        prior_scale: f64,
    },
    /// Teacher draws from `N(0, I₅₃)`, probes uniform on the sphere of `R^50`.
    /// The per-iteration probe subset size is the feature kernel's `probes`.
    StudentTeacher {
        #[serde(default = "ten")]
        teachers: usize,
        #[serde(default = "thousand")]
        train_probes: usize,
        #[serde(default = "thousand")]
        validation_probes: usize,
    },
    /// Colour distributions of two P6 images.
    Images { source: PathBuf, target: PathBuf },
}

fn ten() -> usize {
    10
}
fn thousand() -> usize {
    1000
}

fn roll_t_min() -> f64 {
    SwissRoll::default().t_min
}
fn roll_t_max() -> f64 {
    SwissRoll::default().t_max
}
fn roll_scale() -> f64 {
    SwissRoll::default().scale
}
fn roll_noise() -> f64 {
    SwissRoll::default().noise
}

impl TargetSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            TargetSpec::FourGaussians { .. } => "four-gaussians",
            TargetSpec::TenGaussianRing { .. } => "ten-gaussian-ring",
            TargetSpec::StandardNormal { .. } => "standard-normal",
            TargetSpec::Mixture { .. } => "mixture",
            TargetSpec::SwissRoll { .. } => "swiss-roll",
            TargetSpec::Logistic { .. } => "logistic",
            TargetSpec::StudentTeacher { .. } => "student-teacher",
            TargetSpec::Images { .. } => "images",
        }
    }

    /// Representation of mixture-type targets; `None` for the others.
    pub fn representation(&self) -> Option<Representation> {
        match self {
            TargetSpec::FourGaussians { representation, .. }
            | TargetSpec::TenGaussianRing { representation, .. }
            | TargetSpec::StandardNormal { representation, .. }
            | TargetSpec::Mixture { representation, .. } => Some(*representation),
            _ => None,
        }
    }

    /// Whether the flow sees this target only through its score.
    pub fn is_score_only(&self) -> bool {
        matches!(self, TargetSpec::Logistic { .. })
            || self.representation() == Some(Representation::Stein)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LogisticData {
    /// Separable labels on Gaussian features, each flipped with `label_noise`.
    Synthetic {
        #[serde(default = "two_hundred")]
        n: usize,
        #[serde(default = "five")]
        p: usize,
        #[serde(default = "label_noise")]
        label_noise: f64,
    },
    /// Numeric CSV, binary label in the last column.
    Csv { path: PathBuf },
}

fn two_hundred() -> usize {
    200
}
fn five() -> usize {
    5
}
fn label_noise() -> f64 {
    0.05
}

impl Default for LogisticData {
    fn default() -> Self {
        LogisticData::Synthetic {
            n: two_hundred(),
            p: five(),
            label_noise: label_noise(),
        }
    }
}

/// Where the particles start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialSpec {
    /// `N(center·1, variance·I)`.
    Gaussian {
        #[serde(default)]
        center: f64,
        #[serde(default = "one")]
        variance: f64,
    },
    /// Coordinates read from a particle CSV.
    Csv { path: PathBuf },
    /// Colours sampled from the source image (colour transfer only).
    SourcePixels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSpec {
    pub estimator: Estimator,
    /// Log W₂ against a reference sample of the target of the same size.
    pub w2: bool,
}

impl Default for MetricsSpec {
    fn default() -> Self {
        Self {
            estimator: Estimator::V,
            w2: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    /// Master seed; every random component draws from a labeled stream of it.
    pub seed: u64,
    /// Number of particles N.
    pub particles: usize,
    pub output: PathBuf,
    pub flow: FlowConfig,
    pub kernel: KernelSpec,
    pub target: TargetSpec,
    pub initial: InitialSpec,
    pub metrics: MetricsSpec,
}

impl ExperimentConfig {
    pub fn defaults(experiment: Experiment) -> Self {
        let flow = FlowConfig::default();
        let standard_start = InitialSpec::Gaussian {
            center: 0.0,
            variance: 1.0,
        };
        let mut cfg = Self {
            experiment,
            seed: 0,
            particles: 100,
            output: PathBuf::from("runs").join(experiment.name()),
            flow,
            kernel: KernelSpec::Gaussian { lengthscale: 1.0 },
            target: TargetSpec::FourGaussians {
                representation: Representation::Analytic,
                samples: 500,
            },
            initial: standard_start,
            metrics: MetricsSpec::default(),
        };
        match experiment {
            Experiment::ToyMixture => {}
            Experiment::SwissRoll => {
                cfg.particles = 500;
                cfg.kernel = KernelSpec::Riesz { exponent: 1.0 };
                let roll = SwissRoll::default();
                cfg.target = TargetSpec::SwissRoll {
                    t_min: roll.t_min,
                    t_max: roll.t_max,
                    scale: roll.scale,
                    noise: roll.noise,
                    samples: 500,
                };
            }
            Experiment::StudentTeacher => {
                cfg.flow.iterations = 15_000;
                cfg.kernel = KernelSpec::Feature { probes: 100 };
                cfg.target = TargetSpec::StudentTeacher {
                    teachers: 10,
                    train_probes: 1000,
                    validation_probes: 1000,
                };
                cfg.initial = InitialSpec::Gaussian {
                    center: 0.0,
                    variance: 0.1,
                };
                cfg.metrics.w2 = false;
            }
            Experiment::ColorTransfer => {
                cfg.particles = 200;
                cfg.flow.step_size = 0.01;
                cfg.flow.lambda = 0.01;
                cfg.flow.iterations = 1000;
                cfg.target = TargetSpec::Images {
                    source: PathBuf::from("source.ppm"),
                    target: PathBuf::from("target.ppm"),
                };
                cfg.initial = InitialSpec::SourcePixels;
            }
            Experiment::SamplingMixture => {
                cfg.particles = 500;
                cfg.flow.lambda = 0.5;
                cfg.flow.iterations = 2000;
                cfg.kernel = KernelSpec::Gaussian { lengthscale: 0.3 };
                cfg.target = TargetSpec::TenGaussianRing {
                    representation: Representation::Stein,
                    samples: 500,
                };
            }
            Experiment::Logistic => {
                cfg.particles = 20;
                cfg.flow.iterations = 3000;
                cfg.target = TargetSpec::Logistic {
                    data: LogisticData::default(),
                    prior_scale: 1.0,
                };
                cfg.metrics.w2 = false;
            }
        }
        cfg.flow.seed = cfg.seed;
        cfg
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.resolve_relative_inputs(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Parses a config, fills defaults and validates it.
    pub fn from_toml(text: &str) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).map_err(|e| Error::Parse {
            offset: e.span().map_or(0, |s| s.start),
            message: e.message().to_string(),
        })?;
        let experiment = match user.get("experiment") {
            Some(toml::Value::String(name)) => Experiment::parse(name).ok_or_else(|| {
                Error::Configuration(format!(
                    "experiment: unknown experiment `{name}`, expected one of {}",
                    Experiment::ALL.map(Experiment::name).join(", ")
                ))
            })?,
            Some(_) => return Err(Error::Configuration("experiment: expected a string".into())),
            None => return Err(Error::Configuration("experiment: missing field".into())),
        };
        if user
            .get("flow")
            .and_then(|f| f.as_table())
            .is_some_and(|f| f.contains_key("seed"))
        {
            return Err(Error::Configuration(
                "flow.seed: derived from the master seed; set `seed` instead".into(),
            ));
        }
        let defaults = toml::Value::try_from(Self::defaults(experiment))
            .map_err(|e| Error::Configuration(format!("serializing defaults: {e}")))?;
        let mut merged = defaults;
        merge(&mut merged, toml::Value::Table(user));
        let mut cfg: Self = serde_path_to_error::deserialize(merged).map_err(|e| {
            let path = e.path().to_string();
            Error::Configuration(format!("{path}: {}", e.into_inner()))
        })?;
        cfg.flow.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Makes input file paths relative to the config file's directory.
    pub fn resolve_relative_inputs(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.target {
            TargetSpec::Images { source, target } => {
                fix(source);
                fix(target);
            }
            TargetSpec::Logistic {
                data: LogisticData::Csv { path },
                ..
            } => fix(path),
            _ => {}
        }
        if let InitialSpec::Csv { path } = &mut self.initial {
            fix(path);
        }
    }

    /// Output directory after applying [`OUTPUT_ROOT_VAR`].
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_VAR) {
            Some(root) if self.output.is_relative() && !root.is_empty() => {
                PathBuf::from(root).join(&self.output)
            }
            _ => self.output.clone(),
        }
    }

    /// Cross-field checks, with the offending field named in the message.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::Configuration(format!("{field}: {msg}")));
        if self.particles == 0 {
            return bad("particles", "need at least one particle".into());
        }
        if self.flow.seed != self.seed {
            return bad("flow.seed", "must equal the master seed".into());
        }
        self.flow
            .validate()
            .map_err(|e| Error::Configuration(format!("flow: {}", strip_prefix(&e))))?;

        let exp = self.experiment;
        let target_ok = match (&self.target, exp) {
            (TargetSpec::SwissRoll { .. }, Experiment::SwissRoll)
            | (TargetSpec::StudentTeacher { .. }, Experiment::StudentTeacher)
            | (TargetSpec::Images { .. }, Experiment::ColorTransfer)
            | (TargetSpec::Logistic { .. }, Experiment::Logistic) => true,
            (t, Experiment::ToyMixture) => t.representation().is_some(),
            (t, Experiment::SamplingMixture) => t.representation().is_some(),
            _ => false,
        };
        if !target_ok {
            return bad(
                "target.kind",
                format!("`{}` does not fit the {} experiment", self.target.kind(), exp.name()),
            );
        }
        if exp == Experiment::SamplingMixture
            && self.target.representation() != Some(Representation::Stein)
        {
            return bad(
                "target.representation",
                "sampling experiments see the target through its score only; use `stein`".into(),
            );
        }
        match &self.target {
            TargetSpec::StandardNormal { dim: 0, .. } => {
                return bad("target.dim", "must be positive".into())
            }
            TargetSpec::Mixture { weights, means, .. } if weights.len() != means.len() => {
                return bad(
                    "target.means",
                    format!("{} means for {} weights", means.len(), weights.len()),
                )
            }
            _ => {}
        }
        if let Some(Representation::Empirical) | None = self.target.representation() {
            let samples = match &self.target {
                TargetSpec::SwissRoll { samples, .. } => Some(*samples),
                TargetSpec::FourGaussians { samples, .. }
                | TargetSpec::TenGaussianRing { samples, .. }
                | TargetSpec::StandardNormal { samples, .. }
                | TargetSpec::Mixture { samples, .. } => Some(*samples),
                _ => None,
            };
            if samples == Some(0) {
                return bad("target.samples", "need at least one target sample".into());
            }
        }

        let feature_kernel = matches!(self.kernel, KernelSpec::Feature { .. });
        let student = exp == Experiment::StudentTeacher;
        if feature_kernel != student {
            return bad(
                "kernel.kind",
                if student {
                    "the student-teacher experiment uses the `feature` kernel".into()
                } else {
                    "the `feature` kernel belongs to the student-teacher experiment".into()
                },
            );
        }
        if let KernelSpec::Feature { probes: 0 } = self.kernel {
            return bad("kernel.probes", "must be positive".into());
        }
        if self.target.is_score_only() && !matches!(self.kernel, KernelSpec::Gaussian { .. }) {
            return bad(
                "kernel.kind",
                "Stein kernels are built over a Gaussian base kernel".into(),
            );
        }

        let pixels = exp == Experiment::ColorTransfer;
        if matches!(self.initial, InitialSpec::SourcePixels) != pixels {
            return bad(
                "initial.kind",
                if pixels {
                    "colour transfer starts from `source-pixels`".into()
                } else {
                    "`source-pixels` applies to colour transfer only".into()
                },
            );
        }
        if let InitialSpec::Gaussian { center, variance } = self.initial {
            if !center.is_finite() || !(variance.is_finite() && variance >= 0.0) {
                return bad(
                    "initial",
                    "center must be finite and variance non-negative".into(),
                );
            }
        }
        if self.metrics.w2 && matches!(exp, Experiment::StudentTeacher | Experiment::Logistic) {
            return bad(
                "metrics.w2",
                format!("no reference sample exists for the {} target", self.target.kind()),
            );
        }
        if student && !matches!(self.flow.kind, FlowKind::Srmmd | FlowKind::Mmd | FlowKind::Hrmmd) {
            return bad(
                "flow.kind",
                format!("{} needs a score; the teacher is known by samples", self.flow.kind.name()),
            );
        }
        Ok(())
    }

    /// Pretty JSON echo of every resolved parameter.
    pub fn resolved_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v["output"] = serde_json::Value::String(self.output_dir().display().to_string());
        let mut s = serde_json::to_string_pretty(&v).expect("config serializes");
        s.push('\n');
        s
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Configuration(m) => m.clone(),
        other => other.to_string(),
    }
}

/// Overlays `user` onto `base`. Tables merge recursively unless their `kind`
/// tag differs, in which case the user table replaces the default outright.
fn merge(base: &mut toml::Value, user: toml::Value) {
    match (base, user) {
        (toml::Value::Table(b), toml::Value::Table(u)) => {
            let retagged = u.get("kind").is_some_and(|k| b.get("kind") != Some(k));
            if retagged {
                *b = u;
                return;
            }
            for (k, v) in u {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
