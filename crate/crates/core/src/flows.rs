//! Particle descent: SrMMD, vanilla MMD (optionally noise-injected), hybrid
//! HrMMD, KSD and SVGD, all as forward Euler steps `x ← x − γ·field(x)`.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{argument, Error, Result};
use crate::kernels::{points_data, Kernel, KernelKind};
use crate::metrics::{ksd_squared, mmd_squared, w2_exact, Estimator};
use crate::points::Points;
use crate::rng::{stream, FlowRng, Stream};
use crate::stein::SteinKernel;
use crate::witness::{
    assemble_hybrid_witness, assemble_lowrank_witness, assemble_witness, TargetRepresentation,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowKind {
    Srmmd,
    Mmd,
    Hrmmd,
    Ksd,
    Svgd,
}

impl FlowKind {
    pub fn name(self) -> &'static str {
        match self {
            FlowKind::Srmmd => "srmmd",
            FlowKind::Mmd => "mmd",
            FlowKind::Hrmmd => "hrmmd",
            FlowKind::Ksd => "ksd",
            FlowKind::Svgd => "svgd",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    pub kind: FlowKind,
    /// Euler step γ.
    pub step_size: f64,
    pub iterations: usize,
    /// Regularization λ (SrMMD and HrMMD).
    pub lambda: f64,
    /// Weight of the gradient penalty (HrMMD).
    pub alpha: f64,
    /// Noise level for noise-injected MMD flow; 0 disables it.
    pub noise: f64,
    /// Log metrics every `cadence` steps (plus step 0 and the last step).
    pub cadence: usize,
    /// Keep a particle snapshot every this many steps; 0 keeps none.
    pub snapshot_every: usize,
    pub seed: u64,
    /// Record wall-clock time in the metric log. Off by default so that
    /// reruns produce identical files.
    pub timing: bool,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            kind: FlowKind::Srmmd,
            step_size: 0.1,
            iterations: 4000,
            lambda: 0.1,
            alpha: 0.5,
            noise: 0.0,
            cadence: 10,
            snapshot_every: 0,
            seed: 0,
            timing: false,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size.is_finite() && self.step_size >= 0.0) {
            return Err(Error::Configuration(format!(
                "step_size must be finite and non-negative, got {}",
                self.step_size
            )));
        }
        if matches!(self.kind, FlowKind::Srmmd | FlowKind::Hrmmd)
            && !(self.lambda.is_finite() && self.lambda > 0.0)
        {
            return Err(Error::Configuration(format!(
                "lambda must be positive for {}, got {}",
                self.kind.name(),
                self.lambda
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Configuration(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::Configuration(format!(
                "noise must be non-negative, got {}",
                self.noise
            )));
        }
        if self.noise > 0.0 && self.kind != FlowKind::Mmd {
            return Err(Error::Configuration(
                "noise injection applies to the mmd flow only".into(),
            ));
        }
        if self.cadence == 0 {
            return Err(Error::Configuration("cadence must be at least 1".into()));
        }
        Ok(())
    }

    /// Advisory notes about settings outside the analysed regime.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if !(self.step_size > 0.0 && self.step_size < 0.5) {
            w.push(format!(
                "step size {} lies outside (0, 1/2), where discrete-time decay is guaranteed",
                self.step_size
            ));
        }
        w
    }
}

/// Checks that the flow kind, kernel and target fit together.
pub fn check_pairing(kind: FlowKind, kernel: &dyn Kernel, target: &TargetRepresentation) -> Result<()> {
    let stein_kernel = kernel.kind() == KernelKind::Stein;
    match kind {
        FlowKind::Srmmd | FlowKind::Hrmmd | FlowKind::Mmd => target.check_kernel(kernel),
        FlowKind::Ksd if target.is_stein() && stein_kernel => Ok(()),
        FlowKind::Ksd => Err(Error::Configuration(
            "ksd flow needs a Stein kernel and a score-only target".into(),
        )),
        FlowKind::Svgd if target.is_stein() && !stein_kernel => {
            if let Some(d) = kernel.input_dim() {
                if d != target.dim() {
                    return Err(Error::Configuration(format!(
                        "kernel works in R^{d} but the target lives in R^{}",
                        target.dim()
                    )));
                }
            }
            Ok(())
        }
        FlowKind::Svgd => Err(Error::Configuration(
            "svgd needs a score-only target and a plain (non-Stein) kernel".into(),
        )),
    }
}

fn check_ensemble(x: &Points, target: &TargetRepresentation) -> Result<()> {
    if x.is_empty() {
        return argument("ensemble is empty");
    }
    if x.dim() != target.dim() {
        return argument(format!(
            "particles live in R^{} but the target in R^{}",
            x.dim(),
            target.dim()
        ));
    }
    if let Some(i) = x.first_non_finite() {
        return argument(format!("particle {i} has a non-finite coordinate"));
    }
    Ok(())
}

/// `v(z) = (1/N) Σ_i ∇₂k(x_i, z) − ∇m_π(z)` at a query `z` with kernel data `zd`.
fn mmd_field_at(
    kernel: &dyn Kernel,
    target: &TargetRepresentation,
    x: &Points,
    data: &[Vec<f64>],
    z: &[f64],
    zd: &[f64],
    out: &mut [f64],
) -> Result<()> {
    let dim = x.dim();
    let mut g = vec![0.0; dim];
    out.iter_mut().for_each(|v| *v = 0.0);
    for (xi, di) in x.rows().zip(data) {
        // ∇₂k(x_i, z) = ∇₁k(z, x_i)
        kernel.grad1_with_data(z, zd, xi, di, &mut g)?;
        for (o, gi) in out.iter_mut().zip(&g) {
            *o += gi;
        }
    }
    let n = x.len() as f64;
    let mut gm = vec![0.0; dim];
    target.embedding(kernel, z, Some(&mut gm))?;
    for (o, m) in out.iter_mut().zip(&gm) {
        *o = *o / n - m;
    }
    Ok(())
}

fn mmd_field(kernel: &dyn Kernel, target: &TargetRepresentation, x: &Points) -> Result<Points> {
    let data = points_data(kernel, x);
    let mut field = Points::zeros(x.len(), x.dim());
    for j in 0..x.len() {
        mmd_field_at(kernel, target, x, &data, x.row(j), &data[j], field.row_mut(j))?;
    }
    Ok(field)
}

/// MMD field evaluated at `x_j + β ε_j`, `ε_j ∼ N(0, I)`, while the measure
/// itself stays at the unperturbed particles.
pub fn noise_injected_field(
    kernel: &dyn Kernel,
    target: &TargetRepresentation,
    x: &Points,
    noise: f64,
    rng: &mut FlowRng,
) -> Result<Points> {
    if !(noise.is_finite() && noise >= 0.0) {
        return argument(format!("noise must be non-negative, got {noise}"));
    }
    if noise == 0.0 {
        return mmd_field(kernel, target, x);
    }
    let data = points_data(kernel, x);
    let mut field = Points::zeros(x.len(), x.dim());
    let mut z = vec![0.0; x.dim()];
    for j in 0..x.len() {
        for (zk, xk) in z.iter_mut().zip(x.row(j)) {
            let e: f64 = StandardNormal.sample(rng);
            *zk = xk + noise * e;
        }
        let zd = kernel.point_data(&z);
        mmd_field_at(kernel, target, x, &data, &z, &zd, field.row_mut(j))?;
    }
    Ok(field)
}

/// Negated SVGD direction: `−(1/N) Σ_i [k(x_i, x_j) s(x_i) + ∇₁k(x_i, x_j)]`.
fn svgd_field(kernel: &dyn Kernel, target: &TargetRepresentation, x: &Points) -> Result<Points> {
    let score = target
        .score_model()
        .ok_or_else(|| Error::Configuration("svgd needs a score".into()))?;
    let (n, dim) = (x.len(), x.dim());
    let mut scores = Points::zeros(n, dim);
    for i in 0..n {
        score.score_into(x.row(i), scores.row_mut(i));
    }
    let inv_n = 1.0 / n as f64;
    let mut field = Points::zeros(n, dim);
    let mut g = vec![0.0; dim];
    for j in 0..n {
        let xj = x.row(j);
        let out = field.row_mut(j);
        for i in 0..n {
            let xi = x.row(i);
            let k = kernel.value(xi, xj);
            kernel.grad1_into(xi, xj, &mut g)?;
            for ((o, s), gi) in out.iter_mut().zip(scores.row(i)).zip(&g) {
                *o -= (k * s + gi) * inv_n;
            }
        }
    }
    Ok(field)
}

/// Descent field for one step; the update is `x ← x − γ·field`.
///
/// SrMMD and HrMMD solve a fresh witness system on the current ensemble. For
/// kernels with a finite feature map smaller than `N·d` and an empirical
/// target, SrMMD uses the feature factorization of the same system.
pub fn vector_field(
    kind: FlowKind,
    kernel: &dyn Kernel,
    target: &TargetRepresentation,
    x: &Points,
    config: &FlowConfig,
) -> Result<Points> {
    check_pairing(kind, kernel, target)?;
    check_ensemble(x, target)?;
    match kind {
        FlowKind::Srmmd => {
            let low_rank = matches!(target, TargetRepresentation::Empirical(_))
                && kernel
                    .finite_features()
                    .is_some_and(|f| f.feature_dim(x.dim()) < x.len() * x.dim());
            if low_rank {
                Ok(assemble_lowrank_witness(kernel, x, target, config.lambda)?.into_field())
            } else {
                Ok(assemble_witness(kernel, x, target, config.lambda)?.field_at_particles())
            }
        }
        FlowKind::Hrmmd => Ok(
            assemble_hybrid_witness(kernel, x, target, config.lambda, config.alpha)?
                .field_at_particles(),
        ),
        FlowKind::Mmd | FlowKind::Ksd => mmd_field(kernel, target, x),
        FlowKind::Svgd => svgd_field(kernel, target, x),
    }
}

/// `x − γ·field`. `step` is the index the result will carry, used in the
/// divergence report.
pub fn flow_step(x: &Points, field: &Points, step_size: f64, step: usize) -> Result<Points> {
    if field.len() != x.len() || field.dim() != x.dim() {
        return argument(format!(
            "field has shape {}×{}, ensemble {}×{}",
            field.len(),
            field.dim(),
            x.len(),
            x.dim()
        ));
    }
    let data: Vec<f64> = x
        .as_flat()
        .iter()
        .zip(field.as_flat())
        .map(|(a, f)| a - step_size * f)
        .collect();
    let next = Points::from_flat(data, x.dim())?;
    if let Some(particle) = next.first_non_finite() {
        return Err(Error::Divergence {
            step,
            particle,
            trajectory: None,
        });
    }
    Ok(next)
}

/// One row of the metric log; `None` marks a metric that does not apply.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub step: usize,
    pub mmd2: Option<f64>,
    pub ksd2: Option<f64>,
    pub w2: Option<f64>,
    pub wall_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub particles: Points,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowTrajectory {
    pub initial: Points,
    /// Last valid ensemble.
    pub last: Points,
    /// Steps completed.
    pub steps: usize,
    pub snapshots: Vec<Snapshot>,
    pub log: Vec<MetricRow>,
}

/// Which metrics to log along a flow.
#[derive(Clone, Copy, Default)]
pub struct MetricSuite<'a> {
    /// Kernel and target for MMD².
    pub mmd: Option<(&'a dyn Kernel, &'a TargetRepresentation)>,
    pub ksd: Option<&'a SteinKernel>,
    /// Reference sample for W₂ (same size as the ensemble).
    pub w2_reference: Option<&'a Points>,
    pub estimator: Estimator,
}

impl MetricSuite<'_> {
    pub fn is_empty(&self) -> bool {
        self.mmd.is_none() && self.ksd.is_none() && self.w2_reference.is_none()
    }

    pub fn row(&self, step: usize, x: &Points, wall_ms: Option<f64>) -> Result<MetricRow> {
        let mmd2 = match self.mmd {
            Some((k, t)) => Some(mmd_squared(k, x, t, self.estimator)?.value),
            None => None,
        };
        let ksd2 = match self.ksd {
            Some(sk) => Some(ksd_squared(sk, x, self.estimator)?.value),
            None => None,
        };
        let w2 = match self.w2_reference {
            Some(y) => Some(w2_exact(x, y)?),
            None => None,
        };
        Ok(MetricRow {
            step,
            mmd2,
            ksd2,
            w2,
            wall_ms,
        })
    }
}

/// Runs `config.iterations` Euler steps from `initial`, logging metrics at
/// step 0, every `cadence` steps and at the last step.
pub fn run_flow(
    config: &FlowConfig,
    kernel: &dyn Kernel,
    target: &TargetRepresentation,
    initial: &Points,
    metrics: &MetricSuite,
) -> Result<FlowTrajectory> {
    config.validate()?;
    check_pairing(config.kind, kernel, target)?;
    check_ensemble(initial, target)?;
    if let Some(y) = metrics.w2_reference {
        if y.len() != initial.len() || y.dim() != initial.dim() {
            return Err(Error::Configuration(format!(
                "W2 reference has {} points, the ensemble {}",
                y.len(),
                initial.len()
            )));
        }
    }
    let clock = config.timing.then(Instant::now);
    let wall = || clock.map(|c| c.elapsed().as_secs_f64() * 1e3);
    let mut noise_rng = stream(config.seed, Stream::Noise);

    let mut traj = FlowTrajectory {
        initial: initial.clone(),
        last: initial.clone(),
        steps: 0,
        snapshots: Vec::new(),
        log: Vec::new(),
    };
    if !metrics.is_empty() {
        traj.log.push(metrics.row(0, initial, wall())?);
    }
    if config.snapshot_every > 0 {
        traj.snapshots.push(Snapshot {
            step: 0,
            particles: initial.clone(),
        });
    }

    for s in 1..=config.iterations {
        let x = &traj.last;
        let field = if config.kind == FlowKind::Mmd && config.noise > 0.0 {
            noise_injected_field(kernel, target, x, config.noise, &mut noise_rng)?
        } else {
            vector_field(config.kind, kernel, target, x, config)?
        };
        match flow_step(x, &field, config.step_size, s) {
            Ok(next) => traj.last = next,
            Err(Error::Divergence { step, particle, .. }) => {
                return Err(Error::Divergence {
                    step,
                    particle,
                    trajectory: Some(Box::new(traj)),
                })
            }
            Err(e) => return Err(e),
        }
        traj.steps = s;
        if !metrics.is_empty() && (s % config.cadence == 0 || s == config.iterations) {
            traj.log.push(metrics.row(s, &traj.last, wall())?);
        }
        if config.snapshot_every > 0 && s % config.snapshot_every == 0 {
            traj.snapshots.push(Snapshot {
                step: s,
                particles: traj.last.clone(),
            });
        }
    }
    Ok(traj)
}

pub const METRICS_HEADER: &str = "step,mmd2,ksd2,w2,wall_ms";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Metric log as CSV with header `step,mmd2,ksd2,w2,wall_ms`; inapplicable
/// metrics are left empty.
pub fn write_metrics_csv(path: &Path, log: &[MetricRow]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{METRICS_HEADER}")?;
    for r in log {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.step,
            opt(r.mmd2),
            opt(r.ksd2),
            opt(r.w2),
            opt(r.wall_ms)
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Particles as CSV rows `step,particle,x0,x1,…`.
pub fn write_particles_csv(path: &Path, snapshots: &[(usize, &Points)]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let dim = snapshots.first().map_or(0, |(_, p)| p.dim());
    write!(out, "step,particle")?;
    for k in 0..dim {
        write!(out, ",x{k}")?;
    }
    writeln!(out)?;
    for (step, p) in snapshots {
        for (i, row) in p.rows().enumerate() {
            write!(out, "{step},{i}")?;
            for v in row {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads particles written by [`write_particles_csv`] (the rows of the last
/// step present), or a plain CSV of coordinates with an optional header.
pub fn read_particles_csv(path: &Path) -> Result<Points> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut records = reader.records();
    let Some(first) = records.next() else {
        return argument(format!("{} is empty", path.display()));
    };
    let first = first?;
    let tagged = first.get(0) == Some("step") && first.get(1) == Some("particle");
    let header = tagged || first.iter().any(|f| f.parse::<f64>().is_err());
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    let parse = |rec: &csv::StringRecord| -> Result<(usize, Vec<f64>)> {
        let offset = rec.position().map_or(0, |p| p.byte() as usize);
        let vals: std::result::Result<Vec<f64>, _> = rec.iter().map(|f| f.parse::<f64>()).collect();
        let vals = vals.map_err(|e| Error::Parse {
            offset,
            message: format!("non-numeric particle field: {e}"),
        })?;
        if tagged {
            if vals.len() < 3 {
                return Err(Error::Parse {
                    offset,
                    message: "particle rows need step, index and coordinates".into(),
                });
            }
            Ok((vals[0] as usize, vals[2..].to_vec()))
        } else {
            Ok((0, vals))
        }
    };
    if !header {
        rows.push(parse(&first)?);
    }
    for rec in records {
        rows.push(parse(&rec?)?);
    }
    let last_step = rows.iter().map(|r| r.0).max().unwrap_or(0);
    let coords: Vec<Vec<f64>> = rows
        .into_iter()
        .filter(|r| r.0 == last_step)
        .map(|r| r.1)
        .collect();
    Points::from_rows(&coords)
}
