//! Experiment runner: builds kernels, targets and initial ensembles from a
//! resolved config, runs the flow and writes the artifacts.
//!
//! Everything that can fail on bad input is built and checked before the
//! output directory is touched, so an invalid config leaves no files behind.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use srmmd::flows::{
    check_pairing, flow_step, noise_injected_field, run_flow, vector_field, write_metrics_csv,
    write_particles_csv, FlowConfig, FlowKind, FlowTrajectory, MetricRow, MetricSuite, Snapshot,
};
use srmmd::kernels::{FeatureMapKernel, Kernel, KernelSpec, RadialKernel};
use srmmd::rng::{gaussian_points, stream, Stream};
use srmmd::stein::SteinKernel;
use srmmd::targets::{
    load_csv_dataset, logistic_metrics, student_teacher_objective, synthetic_logistic_dataset,
    DataSplit, Dataset, GaussianMixture, LogisticPosterior, Sampler, StudentTeacherConfig,
    StudentTeacherSetup, SwissRoll,
};
use srmmd::witness::TargetRepresentation;
use srmmd::{Error, Points, Result};

use crate::color::{recolor, sample_pixels};
use crate::config::{ExperimentConfig, InitialSpec, LogisticData, Representation, TargetSpec};
use crate::ppm::{read_ppm, write_ppm, PpmImage};

pub const METRICS_FILE: &str = "metrics.csv";
pub const INITIAL_FILE: &str = "particles_initial.csv";
pub const FINAL_FILE: &str = "particles_final.csv";
pub const SNAPSHOTS_FILE: &str = "particles_snapshots.csv";
pub const CONFIG_FILE: &str = "config_resolved.json";
pub const OBJECTIVE_FILE: &str = "objective.csv";
pub const LOGISTIC_FILE: &str = "logistic.csv";
pub const RECOLORED_FILE: &str = "recolored.ppm";

/// Train and validation objective of the student network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveRow {
    pub step: usize,
    pub train: f64,
    pub validation: f64,
}

/// Test-set accuracy and mean log predictive likelihood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticRow {
    pub step: usize,
    pub accuracy: f64,
    pub log_likelihood: f64,
}

enum Extra {
    Plain,
    Student(StudentTeacherSetup),
    Logistic(Dataset),
    Color(PpmImage),
}

/// A config turned into concrete objects, ready to run.
pub struct Prepared {
    config: ExperimentConfig,
    base: Option<RadialKernel>,
    stein: Option<SteinKernel>,
    target: TargetRepresentation,
    initial: Points,
    w2_reference: Option<Points>,
    extra: Extra,
}

fn config_error<T>(field: &str, msg: impl std::fmt::Display) -> Result<T> {
    Err(Error::Configuration(format!("{field}: {msg}")))
}

fn mixture_of(spec: &TargetSpec) -> Result<Option<GaussianMixture>> {
    Ok(Some(match spec {
        TargetSpec::FourGaussians { .. } => GaussianMixture::four_gaussians(),
        TargetSpec::TenGaussianRing { .. } => GaussianMixture::ten_gaussian_ring(),
        TargetSpec::StandardNormal { dim, .. } => GaussianMixture::standard_normal(*dim),
        TargetSpec::Mixture {
            weights,
            means,
            variance,
            ..
        } => GaussianMixture::isotropic(weights.clone(), means.clone(), *variance)
            .or_else(|e| config_error("target", e))?,
        _ => return Ok(None),
    }))
}

fn student_setup(cfg: &ExperimentConfig) -> Result<Option<StudentTeacherSetup>> {
    let (
        TargetSpec::StudentTeacher {
            teachers,
            train_probes,
            validation_probes,
        },
        KernelSpec::Feature { probes },
    ) = (&cfg.target, &cfg.kernel)
    else {
        return Ok(None);
    };
    let st = StudentTeacherConfig {
        teachers: *teachers,
        train_probes: *train_probes,
        validation_probes: *validation_probes,
        subsample: *probes,
    };
    StudentTeacherSetup::new(&st, cfg.seed)
        .map(Some)
        .or_else(|e| config_error("target", e))
}

fn logistic_split(data: &LogisticData, seed: u64) -> Result<DataSplit> {
    let mut rng = stream(seed, Stream::Data);
    match data {
        LogisticData::Synthetic { n, p, label_noise } => {
            let all = synthetic_logistic_dataset(*n, *p, *label_noise, &mut rng)
                .or_else(|e| config_error("target.data", e))?;
            DataSplit::new(&all, &mut rng).or_else(|e| config_error("target.data", e))
        }
        LogisticData::Csv { path } => load_csv_dataset(path, &mut rng),
    }
}

impl Prepared {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let cfg = config.clone();
        let n = cfg.particles;
        let base = match cfg.kernel {
            KernelSpec::Feature { .. } => None,
            ref spec => Some(spec.build().or_else(|e| config_error("kernel", e))?),
        };
        let mut stein = None;
        let mut w2_reference = None;
        let mut extra = Extra::Plain;
        let mut initial_override = None;

        let target = if let Some(gm) = mixture_of(&cfg.target)? {
            let repr = cfg.target.representation().expect("mixture targets carry one");
            let samples = match cfg.target {
                TargetSpec::FourGaussians { samples, .. }
                | TargetSpec::TenGaussianRing { samples, .. }
                | TargetSpec::StandardNormal { samples, .. }
                | TargetSpec::Mixture { samples, .. } => samples,
                _ => unreachable!("mixture target"),
            };
            if cfg.metrics.w2 {
                w2_reference = Some(gm.sample(n, &mut stream(cfg.seed, Stream::Metrics)));
            }
            match repr {
                Representation::Analytic => {
                    let KernelSpec::Gaussian { lengthscale } = cfg.kernel else {
                        return config_error(
                            "target.representation",
                            "closed-form embeddings need a gaussian kernel",
                        );
                    };
                    TargetRepresentation::analytic(gm, lengthscale)
                        .or_else(|e| config_error("target", e))?
                }
                Representation::Empirical => TargetRepresentation::empirical(
                    gm.sample(samples, &mut stream(cfg.seed, Stream::Target)),
                )?,
                Representation::Stein => {
                    let score = Arc::new(gm);
                    stein = Some(SteinKernel::new(base.expect("radial"), score.clone())?);
                    TargetRepresentation::stein(score)
                }
            }
        } else {
            match &cfg.target {
                TargetSpec::SwissRoll {
                    t_min,
                    t_max,
                    scale,
                    noise,
                    samples,
                } => {
                    let roll = SwissRoll {
                        t_min: *t_min,
                        t_max: *t_max,
                        scale: *scale,
                        noise: *noise,
                    };
                    roll.validate().or_else(|e| config_error("target", e))?;
                    if cfg.metrics.w2 {
                        w2_reference = Some(roll.sample(n, &mut stream(cfg.seed, Stream::Metrics)));
                    }
                    TargetRepresentation::empirical(
                        roll.sample(*samples, &mut stream(cfg.seed, Stream::Target)),
                    )?
                }
                TargetSpec::Logistic { data, prior_scale } => {
                    let split = logistic_split(data, cfg.seed)?;
                    let posterior = Arc::new(
                        LogisticPosterior::new(split.train, *prior_scale)
                            .or_else(|e| config_error("target", e))?,
                    );
                    stein = Some(SteinKernel::new(base.expect("radial"), posterior.clone())?);
                    extra = Extra::Logistic(split.test);
                    TargetRepresentation::stein(posterior)
                }
                TargetSpec::StudentTeacher { .. } => {
                    let setup = student_setup(&cfg)?.expect("validated pairing");
                    let t = TargetRepresentation::empirical(setup.teachers().clone())?;
                    extra = Extra::Student(setup);
                    t
                }
                TargetSpec::Images { source, target } => {
                    let src = read_ppm(source)?;
                    let tgt = read_ppm(target)?;
                    let src_idx = sample_pixels(&src, n, &mut stream(cfg.seed, Stream::Particles))?;
                    let tgt_idx = sample_pixels(&tgt, n, &mut stream(cfg.seed, Stream::Target))?;
                    let target_colors = tgt.colors(&tgt_idx);
                    initial_override = Some(src.colors(&src_idx));
                    if cfg.metrics.w2 {
                        w2_reference = Some(target_colors.clone());
                    }
                    extra = Extra::Color(src);
                    TargetRepresentation::empirical(target_colors)?
                }
                _ => unreachable!("mixture targets handled above"),
            }
        };

        let dim = target.dim();
        let initial = match (&cfg.initial, initial_override) {
            (_, Some(p)) => p,
            (InitialSpec::Gaussian { center, variance }, None) => gaussian_points(
                n,
                &vec![*center; dim],
                variance.sqrt(),
                &mut stream(cfg.seed, Stream::Particles),
            ),
            (InitialSpec::Csv { path }, None) => {
                let p = srmmd::flows::read_particles_csv(path)?;
                if p.len() != n || p.dim() != dim {
                    return config_error(
                        "initial.path",
                        format!(
                            "{} holds {} particles in R^{}, expected {n} in R^{dim}",
                            path.display(),
                            p.len(),
                            p.dim()
                        ),
                    );
                }
                p
            }
            (InitialSpec::SourcePixels, None) => unreachable!("validated pairing"),
        };

        let prepared = Self {
            config: cfg,
            base,
            stein,
            target,
            initial,
            w2_reference,
            extra,
        };
        prepared.check()?;
        Ok(prepared)
    }

    fn check(&self) -> Result<()> {
        let kind = self.config.flow.kind;
        match &self.extra {
            Extra::Student(setup) => {
                let probe = setup.subsampled_kernel(&mut stream(self.config.seed, Stream::Subsample));
                check_pairing(kind, &probe, &self.target)
            }
            _ => check_pairing(kind, self.flow_kernel(), &self.target),
        }
        .map_err(|e| match e {
            Error::Configuration(m) => Error::Configuration(format!("flow.kind: {m}")),
            other => other,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn initial(&self) -> &Points {
        &self.initial
    }

    pub fn target(&self) -> &TargetRepresentation {
        &self.target
    }

    /// Kernel the flow runs with. SVGD uses the base kernel against a score
    /// target; the other flows use the Stein kernel whenever one exists.
    fn flow_kernel(&self) -> &dyn Kernel {
        match (&self.stein, &self.base) {
            (Some(sk), _) if self.config.flow.kind != FlowKind::Svgd => sk,
            (_, Some(b)) => b,
            _ => unreachable!("feature kernels are rebuilt per step"),
        }
    }

    fn suite(&self) -> MetricSuite<'_> {
        let mmd = match (&self.stein, &self.base) {
            (None, Some(b)) => Some((b as &dyn Kernel, &self.target)),
            _ => None,
        };
        MetricSuite {
            mmd,
            ksd: self.stein.as_ref(),
            w2_reference: self.w2_reference.as_ref(),
            estimator: self.config.metrics.estimator,
        }
    }

    /// Metrics of an arbitrary ensemble against this target.
    pub fn evaluate(&self, x: &Points) -> Result<Evaluation> {
        if x.dim() != self.target.dim() {
            return Err(Error::Argument(format!(
                "particles live in R^{} but the target in R^{}",
                x.dim(),
                self.target.dim()
            )));
        }
        let row = match &self.extra {
            Extra::Student(setup) => student_row(setup, x, 0)?.0,
            _ => {
                let mut suite = self.suite();
                if suite.w2_reference.is_some_and(|r| r.len() != x.len()) {
                    suite.w2_reference = None;
                }
                suite.row(0, x, None)?
            }
        };
        let logistic = match &self.extra {
            Extra::Logistic(test) => Some(logistic_metrics(test, x)?),
            _ => None,
        };
        Ok(Evaluation {
            metrics: row,
            accuracy: logistic.map(|m| m.accuracy),
            log_likelihood: logistic.map(|m| m.log_likelihood),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub metrics: MetricRow,
    pub accuracy: Option<f64>,
    pub log_likelihood: Option<f64>,
}

/// What a finished run produced, besides the files.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub steps: usize,
    pub initial: Points,
    pub final_particles: Points,
    pub log: Vec<MetricRow>,
    pub objective: Vec<ObjectiveRow>,
    pub logistic: Vec<LogisticRow>,
    pub image: Option<PpmImage>,
}

/// Validates, builds and runs one experiment, writing its artifacts.
///
/// A diverging flow still writes everything up to the last finite step and
/// then returns the divergence error.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutcome> {
    let prepared = Prepared::new(config)?;
    let dir = config.output_dir();
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join(CONFIG_FILE), config.resolved_json())?;
    write_particles_csv(&dir.join(INITIAL_FILE), &[(0, &prepared.initial)])?;

    let mut student_rows = Vec::new();
    let (traj, failure) = match &prepared.extra {
        Extra::Student(setup) => student_flow(&prepared, setup, &mut student_rows),
        _ => split_divergence(run_flow(
            &with_snapshots(&prepared),
            prepared.flow_kernel(),
            &prepared.target,
            &prepared.initial,
            &prepared.suite(),
        )),
    }?;

    let mut outcome = RunOutcome {
        output_dir: dir.clone(),
        steps: traj.steps,
        initial: prepared.initial.clone(),
        final_particles: traj.last.clone(),
        log: Vec::new(),
        objective: Vec::new(),
        logistic: Vec::new(),
        image: None,
    };
    match &prepared.extra {
        Extra::Student(_) => {
            (outcome.log, outcome.objective) = student_rows.into_iter().unzip();
            write_objective_csv(&dir.join(OBJECTIVE_FILE), &outcome.objective)?;
        }
        Extra::Logistic(test) => {
            outcome.log = traj.log.clone();
            for s in logged_states(&traj, config.flow.cadence) {
                let m = logistic_metrics(test, &s.particles)?;
                outcome.logistic.push(LogisticRow {
                    step: s.step,
                    accuracy: m.accuracy,
                    log_likelihood: m.log_likelihood,
                });
            }
            write_logistic_csv(&dir.join(LOGISTIC_FILE), &outcome.logistic)?;
        }
        Extra::Color(source) => {
            outcome.log = traj.log.clone();
            let img = recolor(source, &prepared.initial, &traj.last)?;
            write_ppm(&img, &dir.join(RECOLORED_FILE))?;
            outcome.image = Some(img);
        }
        Extra::Plain => outcome.log = traj.log.clone(),
    }
    write_metrics_csv(&dir.join(METRICS_FILE), &outcome.log)?;
    write_particles_csv(&dir.join(FINAL_FILE), &[(traj.steps, &traj.last)])?;
    if config.flow.snapshot_every > 0 {
        let kept: Vec<(usize, &Points)> = traj
            .snapshots
            .iter()
            .filter(|s| s.step % config.flow.snapshot_every == 0)
            .map(|s| (s.step, &s.particles))
            .collect();
        write_particles_csv(&dir.join(SNAPSHOTS_FILE), &kept)?;
    }
    match failure {
        Some(e) => Err(e),
        None => Ok(outcome),
    }
}

/// Flow config used internally: logistic runs need the ensemble at every
/// logged step, so snapshots are taken at the metric cadence as well.
fn with_snapshots(p: &Prepared) -> FlowConfig {
    let mut flow = p.config.flow.clone();
    if matches!(p.extra, Extra::Logistic(_)) {
        flow.snapshot_every = gcd(flow.cadence, flow.snapshot_every);
    }
    flow
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Snapshots at the metric cadence plus the final state.
fn logged_states(traj: &FlowTrajectory, cadence: usize) -> Vec<Snapshot> {
    let mut out: Vec<Snapshot> = traj
        .snapshots
        .iter()
        .filter(|s| s.step % cadence == 0)
        .cloned()
        .collect();
    if out.last().map(|s| s.step) != Some(traj.steps) {
        out.push(Snapshot {
            step: traj.steps,
            particles: traj.last.clone(),
        });
    }
    out
}

/// Turns a divergence into a partial trajectory plus the error to report.
fn split_divergence(r: Result<FlowTrajectory>) -> Result<(FlowTrajectory, Option<Error>)> {
    match r {
        Ok(t) => Ok((t, None)),
        Err(Error::Divergence {
            step,
            particle,
            trajectory: Some(t),
        }) => Ok((
            *t,
            Some(Error::Divergence {
                step,
                particle,
                trajectory: None,
            }),
        )),
        Err(e) => Err(e),
    }
}

fn student_row(setup: &StudentTeacherSetup, x: &Points, step: usize) -> Result<(MetricRow, ObjectiveRow)> {
    let train = student_teacher_objective(setup, x, setup.train_probes())?;
    let validation = student_teacher_objective(setup, x, setup.validation_probes())?;
    Ok((
        MetricRow {
            step,
            mmd2: Some(validation),
            ksd2: None,
            w2: None,
            wall_ms: None,
        },
        ObjectiveRow {
            step,
            train,
            validation,
        },
    ))
}

/// Student-teacher descent: the feature kernel is rebuilt every step on a
/// fresh subset of the training probes. Objectives are scored on the full
/// train and validation probe sets at the metric cadence.
fn student_flow(
    p: &Prepared,
    setup: &StudentTeacherSetup,
    rows: &mut Vec<(MetricRow, ObjectiveRow)>,
) -> Result<(FlowTrajectory, Option<Error>)> {
    let flow = &p.config.flow;
    let mut subsets = stream(p.config.seed, Stream::Subsample);
    let mut noise = stream(p.config.seed, Stream::Noise);
    let mut traj = FlowTrajectory {
        initial: p.initial.clone(),
        last: p.initial.clone(),
        steps: 0,
        snapshots: Vec::new(),
        log: Vec::new(),
    };
    let snapshot = |traj: &mut FlowTrajectory| {
        if flow.snapshot_every > 0 && traj.steps.is_multiple_of(flow.snapshot_every) {
            traj.snapshots.push(Snapshot {
                step: traj.steps,
                particles: traj.last.clone(),
            });
        }
    };
    rows.push(student_row(setup, &traj.last, 0)?);
    snapshot(&mut traj);
    for s in 1..=flow.iterations {
        let kernel: FeatureMapKernel = setup.subsampled_kernel(&mut subsets);
        let field = if flow.kind == FlowKind::Mmd && flow.noise > 0.0 {
            noise_injected_field(&kernel, &p.target, &traj.last, flow.noise, &mut noise)?
        } else {
            vector_field(flow.kind, &kernel, &p.target, &traj.last, flow)?
        };
        match flow_step(&traj.last, &field, flow.step_size, s) {
            Ok(next) => traj.last = next,
            Err(Error::Divergence { step, particle, .. }) => {
                let err = Error::Divergence {
                    step,
                    particle,
                    trajectory: None,
                };
                return Ok((traj, Some(err)));
            }
            Err(e) => return Err(e),
        }
        traj.steps = s;
        if s % flow.cadence == 0 || s == flow.iterations {
            rows.push(student_row(setup, &traj.last, s)?);
        }
        snapshot(&mut traj);
    }
    Ok((traj, None))
}

fn write_objective_csv(path: &Path, rows: &[ObjectiveRow]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "step,train,validation")?;
    for r in rows {
        writeln!(out, "{},{},{}", r.step, r.train, r.validation)?;
    }
    out.flush()?;
    Ok(())
}

fn write_logistic_csv(path: &Path, rows: &[LogisticRow]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "step,accuracy,log_likelihood")?;
    for r in rows {
        writeln!(out, "{},{},{}", r.step, r.accuracy, r.log_likelihood)?;
    }
    out.flush()?;
    Ok(())
}
