use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use srmmd::flows::{read_particles_csv, METRICS_HEADER};
use srmmd::kernels::RadialKernel;
use srmmd::rng::{stream, Stream};
use srmmd::stein::{stein_identity_statistic, SteinKernel};
use srmmd::targets::{GaussianMixture, Sampler};
use srmmd::Result;
use srmmd_cli::config::{Experiment, ExperimentConfig, TargetSpec};
use srmmd_cli::run::{run_experiment, Prepared, RECOLORED_FILE};

#[derive(Parser)]
#[command(name = "srmmd", version, about = "Sobolev-regularized MMD particle flows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run { config: PathBuf },
    /// Recolour SOURCE with the colour distribution of TARGET (P6 images).
    ColorTransfer {
        source: PathBuf,
        target: PathBuf,
        /// Optional config overriding the colour-transfer defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (overrides the config).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Monte-Carlo check of the Stein identity E_π k_π(X, y) = 0.
    SteinCheck {
        #[arg(long, value_enum, default_value = "four-gaussians")]
        target: NamedTarget,
        /// Dimension of the standard-normal target.
        #[arg(long, default_value_t = 1)]
        dim: usize,
        /// Base Gaussian kernel lengthscale.
        #[arg(long, default_value_t = 1.0)]
        lengthscale: f64,
        /// Monte-Carlo sample size.
        #[arg(short = 'm', long, default_value_t = 100_000)]
        samples: usize,
        /// Number of query points y, drawn from the target.
        #[arg(long, default_value_t = 5)]
        queries: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Pass threshold in standard errors.
        #[arg(long, default_value_t = 4.0)]
        z: f64,
    },
    /// Metrics of a particle CSV against the target of a config.
    Eval { particles: PathBuf, config: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum NamedTarget {
    StandardNormal,
    FourGaussians,
    TenGaussianRing,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let out = run_experiment(&cfg)?;
            println!(
                "{}: {} steps, artifacts in {}",
                cfg.experiment.name(),
                out.steps,
                out.output_dir.display()
            );
            Ok(true)
        }
        Command::ColorTransfer {
            source,
            target,
            config,
            output,
        } => {
            let mut cfg = match config {
                Some(path) => ExperimentConfig::from_path(&path)?,
                None => ExperimentConfig::defaults(Experiment::ColorTransfer),
            };
            if cfg.experiment != Experiment::ColorTransfer {
                return Err(srmmd::Error::Configuration(
                    "experiment: the color-transfer command needs a color-transfer config".into(),
                ));
            }
            cfg.target = TargetSpec::Images { source, target };
            if let Some(dir) = output {
                cfg.output = dir;
            }
            let out = run_experiment(&cfg)?;
            println!("{}", out.output_dir.join(RECOLORED_FILE).display());
            Ok(true)
        }
        Command::SteinCheck {
            target,
            dim,
            lengthscale,
            samples,
            queries,
            seed,
            z,
        } => {
            let gm = match target {
                NamedTarget::StandardNormal => GaussianMixture::standard_normal(dim),
                NamedTarget::FourGaussians => GaussianMixture::four_gaussians(),
                NamedTarget::TenGaussianRing => GaussianMixture::ten_gaussian_ring(),
            };
            let gm = Arc::new(gm);
            let sk = SteinKernel::new(RadialKernel::gaussian(lengthscale)?, gm.clone())?;
            let ys = gm.sample(queries, &mut stream(seed, Stream::Target));
            let mut rng = stream(seed, Stream::Metrics);
            let mut all = true;
            println!("y,mean,stderr,z_score,verdict");
            for y in ys.rows() {
                let r = stein_identity_statistic(&sk, gm.as_ref(), y, samples, &mut rng)?;
                let ok = r.passes(z);
                all &= ok;
                let coords: Vec<String> = y.iter().map(|v| format!("{v:.6}")).collect();
                println!(
                    "{},{},{},{},{}",
                    coords.join(" "),
                    r.mean,
                    opt(r.stderr),
                    opt(r.stderr.map(|s| r.mean.abs() / s)),
                    if ok { "PASS" } else { "FAIL" }
                );
            }
            Ok(all)
        }
        Command::Eval { particles, config } => {
            let mut cfg = ExperimentConfig::from_path(&config)?;
            let x = read_particles_csv(&particles)?;
            cfg.particles = x.len();
            let e = Prepared::new(&cfg)?.evaluate(&x)?;
            let m = &e.metrics;
            println!("{METRICS_HEADER}");
            println!("{},{},{},{},", m.step, opt(m.mmd2), opt(m.ksd2), opt(m.w2));
            if let (Some(a), Some(l)) = (e.accuracy, e.log_likelihood) {
                println!("accuracy,log_likelihood");
                println!("{a},{l}");
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
