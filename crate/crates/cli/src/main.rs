use std::io::Write;
use std::path::{Path, PathBuf};

use ambient_moments::ambient::{
    posterior_identity_check, sample_many, AmbientConfig, GmmDenoiser, NoiseSchedule, DEFAULT_STEPS,
};
use ambient_moments::estimators::{
    ddm_1d_detailed, default_interval_1d, estimate_hd, EstimatorConfig,
};
use ambient_moments::io;
use ambient_moments::pricing::{price_bounds, PricingOptions};
use ambient_moments::rng::SEED_ENV;
use ambient_moments::sweep::{
    fit_rate, render_svg, run_sweep, synthetic_dataset, write_sweep_csv, NoiseProfile, SweepSpec,
};
use ambient_moments::{AtomicDistribution, Interval};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(
    name = "ambient-moments",
    version,
    about = "Learn atomic distributions from heterogeneously noisy samples"
)]
struct Cli {
    /// Seed for every random choice; falls back to the environment, then 0.
    #[arg(long, global = true, env = SEED_ENV)]
    seed: Option<u64>,
    /// Output file; standard output when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Estimator settings as JSON (k, delta, net_extra_directions, ...).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a noisy dataset from a distribution.
    Gen(GenArgs),
    /// Estimate a k-atomic distribution from a dataset of any dimension.
    Estimate(EstimateArgs),
    /// Denoised method of moments on a one-dimensional dataset.
    Estimate1d(EstimateArgs),
    /// Sample from a distribution with the probability-flow sampler.
    Sample(SampleArgs),
    /// Error-versus-n study described by a JSON spec.
    Sweep(SweepArgs),
    /// Bounds on the relative price of noisy samples from a score table.
    Price(PriceArgs),
    /// Check the posterior-mean identity on random mixtures.
    #[command(name = "lemma1-check")]
    IdentityCheck(CheckArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Distribution JSON.
    #[arg(long)]
    dist: PathBuf,
    #[arg(long)]
    n: usize,
    /// Fraction of samples observed without noise.
    #[arg(long, default_value_t = 0.0)]
    clean_fraction: f64,
    /// Noise level of the remaining samples.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Clean samples are lifted to this noise level.
    #[arg(long, default_value_t = 1.0)]
    sigma_floor: f64,
}

#[derive(Args)]
struct EstimateArgs {
    /// Dataset CSV with header sigma,x0,...
    #[arg(long)]
    data: PathBuf,
    /// Number of atoms; overrides the config file.
    #[arg(long)]
    k: Option<usize>,
    /// Atoms are searched in [-radius, radius] along each projection.
    #[arg(long)]
    radius: Option<f64>,
    /// Where to write the diagnostics JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    dist: PathBuf,
    #[arg(long, default_value_t = 1000)]
    count: usize,
    /// Stop at this noise level and return the denoiser's prediction.
    #[arg(long)]
    truncate_at: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    steps: usize,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep spec JSON.
    #[arg(long)]
    spec: PathBuf,
    /// Also write a log-log chart of the errors.
    #[arg(long)]
    emit_svg: Option<PathBuf>,
    /// Add a wall_ms column (makes the output run-dependent).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct PriceArgs {
    /// Score table CSV with header dataset,p_clean,sigma,score.
    #[arg(long)]
    table: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    min_clean_fraction: f64,
    /// Score differences up to this size count as ties.
    #[arg(long, default_value_t = 0.0)]
    tie_tolerance: f64,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long, default_value_t = 1e-9)]
    tolerance: f64,
}

/// On-disk sweep description. `target` is resolved relative to the spec file.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepFile {
    target: PathBuf,
    k: Option<usize>,
    #[serde(default = "one")]
    clean_fraction: f64,
    #[serde(default = "one")]
    sigma: f64,
    #[serde(default = "one")]
    sigma_floor: f64,
    n_values: Vec<usize>,
    #[serde(default = "one_trial")]
    trials: usize,
    #[serde(default)]
    seed_base: u64,
    output: Option<PathBuf>,
    interval_radius: Option<f64>,
    estimator: Option<EstimatorConfig>,
}

fn one() -> f64 {
    1.0
}

fn one_trial() -> usize {
    1
}

#[derive(Serialize)]
struct Estimate1dReport {
    interval: [f64; 2],
    raw_moments: Vec<f64>,
    projected_moments: Vec<f64>,
    moment_residual: f64,
    n: usize,
}

#[derive(Serialize)]
struct SweepSummary {
    rows: usize,
    failed: usize,
    slope: Option<f64>,
    intercept: Option<f64>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut config: EstimatorConfig = match &cli.config {
        Some(p) => serde_json::from_reader(io::open(p)?)
            .with_context(|| format!("reading {}", p.display()))?,
        None => EstimatorConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let seed = config.seed;
    let out = cli.out.as_deref();
    match cli.command {
        Command::Gen(a) => {
            let target = read_dist(&a.dist)?;
            let profile = NoiseProfile {
                clean_fraction: a.clean_fraction,
                sigma: a.sigma,
                sigma_floor: a.sigma_floor,
            };
            let data = synthetic_dataset(&target, &profile, a.n, seed)?;
            emit(out, |w| io::write_dataset(w, &data))
        }
        Command::Estimate(a) => {
            if let Some(k) = a.k {
                config.k = k;
            }
            let data = io::read_dataset(io::open(&a.data)?)?;
            let interval = a.radius.map(Interval::symmetric).transpose()?;
            let (dist, report) = estimate_hd(&data, &config, interval)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            if let Some(p) = &a.report {
                write_text(Some(p), &serde_json::to_string_pretty(&report)?)?;
            }
            write_text(out, &io::distribution_to_json(&dist)?)
        }
        Command::Estimate1d(a) => {
            let k = a.k.unwrap_or(config.k);
            let data = io::read_dataset(io::open(&a.data)?)?;
            if data.dim() != 1 {
                bail!(
                    "estimate1d needs one-dimensional data, got dimension {}",
                    data.dim()
                );
            }
            let pairs = data.pairs()?;
            let interval = match a.radius {
                Some(r) => Interval::symmetric(r)?,
                None => default_interval_1d(&pairs)?,
            };
            let fit = ddm_1d_detailed(&pairs, k, &interval)?;
            if let Some(p) = &a.report {
                let report = Estimate1dReport {
                    interval: [interval.lo, interval.hi],
                    raw_moments: fit.raw_moments.values().to_vec(),
                    projected_moments: fit.projected_moments.values().to_vec(),
                    moment_residual: fit.moment_residual(),
                    n: pairs.len(),
                };
                write_text(Some(p), &serde_json::to_string_pretty(&report)?)?;
            }
            write_text(out, &io::distribution_to_json(&fit.estimate)?)
        }
        Command::Sample(a) => {
            let dist = read_dist(&a.dist)?;
            let schedule = NoiseSchedule::for_distribution(&dist, a.steps)?;
            let truncate = a.truncate_at.map(AmbientConfig::new).transpose()?;
            let h = GmmDenoiser::analytic(dist.clone());
            let samples = sample_many(&h, dist.dim(), &schedule, truncate.as_ref(), a.count, seed);
            emit(out, |w| io::write_samples(w, &samples))
        }
        Command::Sweep(a) => {
            let file: SweepFile = serde_json::from_reader(io::open(&a.spec)?)
                .with_context(|| format!("reading sweep spec {}", a.spec.display()))?;
            let base_dir = a.spec.parent().unwrap_or(Path::new("."));
            let target = read_dist(&base_dir.join(&file.target))?;
            let mut estimator = file.estimator.unwrap_or(config);
            if let Some(k) = file.k {
                estimator.k = k;
            }
            let spec = SweepSpec {
                target,
                profile: NoiseProfile {
                    clean_fraction: file.clean_fraction,
                    sigma: file.sigma,
                    sigma_floor: file.sigma_floor,
                },
                n_values: file.n_values,
                trials: file.trials,
                seed_base: cli.seed.unwrap_or(file.seed_base),
                estimator,
                interval_radius: file.interval_radius,
            };
            let result = run_sweep(&spec)?;
            let target_out = out
                .map(Path::to_path_buf)
                .or_else(|| file.output.map(|p| base_dir.join(p)));
            emit(target_out.as_deref(), |w| {
                write_sweep_csv(w, &result, a.timing)
            })?;
            if let Some(p) = &a.emit_svg {
                write_text(Some(p), &render_svg(&result))?;
            }
            let fit = fit_rate(&result).ok();
            let summary = SweepSummary {
                rows: result.rows.len(),
                failed: result.rows.iter().filter(|r| r.error.is_some()).count(),
                slope: fit.map(|f| f.0),
                intercept: fit.map(|f| f.1),
            };
            eprintln!("{}", serde_json::to_string(&summary)?);
            Ok(())
        }
        Command::Price(a) => {
            let table = io::read_pricing_table(io::open(&a.table)?)?;
            let opts = PricingOptions {
                min_clean_fraction: a.min_clean_fraction,
                tie_tolerance: a.tie_tolerance,
            };
            let bounds = price_bounds(&table, &opts)?;
            write_text(out, &io::bounds_to_json(&bounds)?)
        }
        Command::IdentityCheck(a) => {
            let check = posterior_identity_check(a.trials, seed)?;
            let pass = check.max_rel_err <= a.tolerance;
            let line = serde_json::json!({
                "trials": check.trials,
                "max_rel_err": check.max_rel_err,
                "tolerance": a.tolerance,
                "pass": pass,
            });
            write_text(out, &serde_json::to_string_pretty(&line)?)?;
            if !pass {
                bail!(
                    "identity violated: relative error {:e} above {:e}",
                    check.max_rel_err,
                    a.tolerance
                );
            }
            Ok(())
        }
    }
}

fn read_dist(path: &Path) -> Result<AtomicDistribution> {
    io::read_distribution(io::open(path)?)
        .with_context(|| format!("reading distribution {}", path.display()))
}

/// Runs a CSV writer against the output file or standard output.
fn emit<F>(out: Option<&Path>, write: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> ambient_moments::Result<()>,
{
    match out {
        Some(p) => {
            let mut f = io::create(p)?;
            write(&mut f)?;
            f.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock)?;
        }
    }
    Ok(())
}

fn write_text(out: Option<&Path>, text: &str) -> Result<()> {
    emit(out, |w| {
        writeln!(w, "{text}")?;
        Ok(())
    })
}
