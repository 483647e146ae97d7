//! Error-versus-sample-size studies: repeated estimation on synthetic data
//! with a two-level noise profile, CSV output and a log-log rate fit.

use std::fmt::Write as _;
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{
    lift_noise, sample_mixture, wasserstein1, AtomicDistribution, HeteroDataset, Interval,
};
use crate::error::{Error, Result};
use crate::estimators::{ddm_1d, default_interval_1d, estimate_hd, EstimatorConfig};
use crate::pricing::effective_sample_sizes;
use crate::rng::{derive_seed, stable_hash};

/// A fraction `clean_fraction` of each dataset is observed without noise and
/// lifted to `sigma_floor`; the rest carries noise `sigma`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseProfile {
    pub clean_fraction: f64,
    pub sigma: f64,
    #[serde(default = "default_floor")]
    pub sigma_floor: f64,
}

fn default_floor() -> f64 {
    1.0
}

impl NoiseProfile {
    /// Noise levels before lifting: the first `round(p n)` samples are clean.
    pub fn sigmas(&self, n: usize) -> Vec<f64> {
        let clean = ((self.clean_fraction * n as f64).round() as usize).min(n);
        let mut s = vec![0.0; clean];
        s.resize(n, self.sigma);
        s
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.clean_fraction) {
            return Err(Error::invalid("clean_fraction must lie in [0, 1]"));
        }
        if !(self.sigma >= 0.0 && self.sigma_floor > 0.0) {
            return Err(Error::invalid(
                "sigma must be nonnegative and sigma_floor positive",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub target: AtomicDistribution,
    pub profile: NoiseProfile,
    pub n_values: Vec<usize>,
    pub trials: usize,
    pub seed_base: u64,
    /// `k`, bucket and search settings; its seed is replaced per trial.
    pub estimator: EstimatorConfig,
    /// Symmetric estimation interval; data-driven when `None`.
    pub interval_radius: Option<f64>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_values.is_empty() || self.n_values.contains(&0) {
            return Err(Error::invalid("n values must be positive"));
        }
        if self.n_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("n values must be strictly ascending"));
        }
        if self.trials == 0 {
            return Err(Error::invalid("trials must be at least 1"));
        }
        self.profile.validate()?;
        self.estimator.validate()
    }

    /// Seed of one `(n, trial)` cell.
    pub fn trial_seed(&self, n: usize, trial: usize) -> u64 {
        self.seed_base
            .wrapping_add(stable_hash(&[n as u64, trial as u64]))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub p: f64,
    pub sigma: f64,
    pub trial: usize,
    pub seed: u64,
    pub w1_error: Option<f64>,
    pub n_d: f64,
    pub n_l: f64,
    pub wall_ms: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

/// One synthetic dataset per `(n, trial)`, estimated and scored by exact W1
/// against the target. Failures are recorded in the row and the sweep goes on.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    let cells: Vec<(usize, usize)> = spec
        .n_values
        .iter()
        .flat_map(|&n| (0..spec.trials).map(move |t| (n, t)))
        .collect();
    let rows = cells
        .par_iter()
        .map(|&(n, trial)| run_cell(spec, n, trial))
        .collect();
    Ok(SweepResult { rows })
}

fn run_cell(spec: &SweepSpec, n: usize, trial: usize) -> SweepRow {
    let seed = spec.trial_seed(n, trial);
    let start = Instant::now();
    let lifted: Vec<f64> = spec
        .profile
        .sigmas(n)
        .iter()
        .map(|s| s.max(spec.profile.sigma_floor))
        .collect();
    let (n_d, n_l) = match effective_sample_sizes(&lifted, spec.estimator.k) {
        Ok(e) => (e.n_d, e.n_l),
        Err(_) => (f64::NAN, f64::NAN),
    };
    let outcome = estimate_cell(spec, seed, n);
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let (w1_error, error) = match outcome {
        Ok(w) => (Some(w), None),
        Err(e) => (None, Some(e.to_string())),
    };
    SweepRow {
        n,
        p: spec.profile.clean_fraction,
        sigma: spec.profile.sigma,
        trial,
        seed,
        w1_error,
        n_d,
        n_l,
        wall_ms: Some(wall_ms),
        error,
    }
}

/// Draws `n` samples from `target` under `profile` and lifts the clean ones
/// to the noise floor.
pub fn synthetic_dataset(
    target: &AtomicDistribution,
    profile: &NoiseProfile,
    n: usize,
    seed: u64,
) -> Result<HeteroDataset> {
    profile.validate()?;
    let data = sample_mixture(target, &profile.sigmas(n), derive_seed(seed, 0))?;
    lift_noise(&data, profile.sigma_floor, derive_seed(seed, 1))
}

fn estimate_cell(spec: &SweepSpec, seed: u64, n: usize) -> Result<f64> {
    let data = synthetic_dataset(&spec.target, &spec.profile, n, seed)?;
    let interval = spec.interval_radius.map(Interval::symmetric).transpose()?;
    let estimate = if data.dim() == 1 {
        let pairs = data.pairs()?;
        let iv = match interval {
            Some(iv) => iv,
            None => default_interval_1d(&pairs)?,
        };
        ddm_1d(&pairs, spec.estimator.k, &iv)?
    } else {
        let cfg = EstimatorConfig {
            seed: derive_seed(seed, 2),
            ..spec.estimator.clone()
        };
        estimate_hd(&data, &cfg, interval)?.0
    };
    wasserstein1(&estimate, &spec.target)
}

/// Writes `n,p,sigma,trial,seed,w1_error,n_d,n_l[,wall_ms],error`. Timing is
/// opt-in because it breaks byte-for-byte reproducibility.
pub fn write_sweep_csv<W: Write>(
    writer: W,
    result: &SweepResult,
    include_timing: bool,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["n", "p", "sigma", "trial", "seed", "w1_error", "n_d", "n_l"];
    if include_timing {
        header.push("wall_ms");
    }
    header.push("error");
    w.write_record(&header)?;
    for r in &result.rows {
        let mut rec = vec![
            r.n.to_string(),
            r.p.to_string(),
            r.sigma.to_string(),
            r.trial.to_string(),
            r.seed.to_string(),
            r.w1_error.map(|v| v.to_string()).unwrap_or_default(),
            r.n_d.to_string(),
            r.n_l.to_string(),
        ];
        if include_timing {
            rec.push(r.wall_ms.map(|v| v.to_string()).unwrap_or_default());
        }
        rec.push(r.error.clone().unwrap_or_default());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the CSV written by [`write_sweep_csv`], with or without timing.
pub fn read_sweep_csv<R: std::io::Read>(reader: R) -> Result<SweepResult> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse(format!("missing column {name}")))
    };
    let idx = [
        col("n")?,
        col("p")?,
        col("sigma")?,
        col("trial")?,
        col("seed")?,
        col("w1_error")?,
        col("n_d")?,
        col("n_l")?,
        col("error")?,
    ];
    let timing = headers.iter().position(|h| h == "wall_ms");
    let num = |s: &str| {
        s.parse::<f64>()
            .map_err(|e| Error::Parse(format!("{s:?}: {e}")))
    };
    let int = |s: &str| {
        s.parse::<u64>()
            .map_err(|e| Error::Parse(format!("{s:?}: {e}")))
    };
    let opt = |s: &str| {
        if s.is_empty() {
            Ok(None)
        } else {
            num(s).map(Some)
        }
    };
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let f = |i: usize| rec.get(i).unwrap_or("");
        rows.push(SweepRow {
            n: int(f(idx[0]))? as usize,
            p: num(f(idx[1]))?,
            sigma: num(f(idx[2]))?,
            trial: int(f(idx[3]))? as usize,
            seed: int(f(idx[4]))?,
            w1_error: opt(f(idx[5]))?,
            n_d: num(f(idx[6]))?,
            n_l: num(f(idx[7]))?,
            wall_ms: match timing {
                Some(i) => opt(f(i))?,
                None => None,
            },
            error: Some(f(idx[8]).to_string()).filter(|s| !s.is_empty()),
        });
    }
    Ok(SweepResult { rows })
}

/// Median W1 per sample size over successful rows, ascending in `n`.
pub fn medians(result: &SweepResult) -> Vec<(usize, f64)> {
    let mut ns: Vec<usize> = result.rows.iter().map(|r| r.n).collect();
    ns.sort_unstable();
    ns.dedup();
    ns.into_iter()
        .filter_map(|n| {
            let mut v: Vec<f64> = result
                .rows
                .iter()
                .filter(|r| r.n == n)
                .filter_map(|r| r.w1_error)
                .collect();
            if v.is_empty() {
                return None;
            }
            v.sort_by(f64::total_cmp);
            let mid = v.len() / 2;
            let med = if v.len() % 2 == 1 {
                v[mid]
            } else {
                0.5 * (v[mid - 1] + v[mid])
            };
            Some((n, med))
        })
        .collect()
}

/// Least-squares line through `(ln n, ln median W1)`.
pub fn fit_rate(result: &SweepResult) -> Result<(f64, f64)> {
    let pts = medians(result);
    if pts.len() < 3 {
        return Err(Error::invalid(format!(
            "rate fit needs at least 3 sample sizes with results, got {}",
            pts.len()
        )));
    }
    if pts.iter().any(|&(_, m)| !(m > 0.0)) {
        return Err(Error::invalid("median error of zero has no logarithm"));
    }
    let xs: Vec<f64> = pts.iter().map(|&(n, _)| (n as f64).ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|&(_, m)| m.ln()).collect();
    let len = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / len;
    let my = ys.iter().sum::<f64>() / len;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Static log-log chart of per-trial errors and their medians.
pub fn render_svg(result: &SweepResult) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const PAD: f64 = 60.0;
    let pts: Vec<(f64, f64)> = result
        .rows
        .iter()
        .filter_map(|r| {
            r.w1_error
                .filter(|w| *w > 0.0)
                .map(|w| ((r.n as f64).log10(), w.log10()))
        })
        .collect();
    let med: Vec<(f64, f64)> = medians(result)
        .into_iter()
        .filter(|&(_, m)| m > 0.0)
        .map(|(n, m)| ((n as f64).log10(), m.log10()))
        .collect();
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    if pts.is_empty() {
        let _ = writeln!(
            svg,
            r#"<text x="{PAD}" y="{}">no successful trials</text>"#,
            H / 2.0
        );
        svg.push_str("</svg>\n");
        return svg;
    }
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for &(x, y) in &pts {
        x0 = x0.min(x.floor());
        x1 = x1.max(x.ceil());
        y0 = y0.min(y.floor());
        y1 = y1.max(y.ceil());
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let _ = writeln!(
        svg,
        r#"<path d="M{a} {b} L{a} {c} M{a} {b} L{d} {b}" stroke="black" fill="none"/>"#,
        a = PAD,
        b = H - PAD,
        c = PAD,
        d = W - PAD
    );
    let mut tick = x0;
    while tick <= x1 + 1e-9 {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">1e{}</text>"#,
            sx(tick),
            H - PAD + 18.0,
            tick as i64
        );
        tick += 1.0;
    }
    let mut tick = y0;
    while tick <= y1 + 1e-9 {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="end">1e{}</text>"#,
            PAD - 6.0,
            sy(tick) + 4.0,
            tick as i64
        );
        tick += 1.0;
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-size="13" text-anchor="middle">n</text>"#,
        W / 2.0,
        H - 15.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="15" y="{:.1}" font-size="13" transform="rotate(-90 15 {:.1})" text-anchor="middle">W1 error</text>"#,
        H / 2.0,
        H / 2.0
    );
    for &(x, y) in &pts {
        let _ = writeln!(
            svg,
            r##"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="#888"/>"##,
            sx(x),
            sy(y)
        );
    }
    if !med.is_empty() {
        let path: Vec<String> = med
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| {
                format!(
                    "{}{:.1} {:.1}",
                    if i == 0 { "M" } else { "L" },
                    sx(x),
                    sy(y)
                )
            })
            .collect();
        let _ = writeln!(
            svg,
            r##"<path d="{}" stroke="#c03" stroke-width="2" fill="none"/>"##,
            path.join(" ")
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    fn planted(f: impl Fn(f64) -> f64) -> SweepResult {
        let rows = [1e3, 1e4, 1e5, 1e6]
            .iter()
            .flat_map(|&n| (0..3).map(move |t| (n, t)))
            .map(|(n, t)| SweepRow {
                n: n as usize,
                p: 1.0,
                sigma: 1.0,
                trial: t,
                seed: 0,
                w1_error: Some(f(n)),
                n_d: n,
                n_l: n,
                wall_ms: None,
                error: None,
            })
            .collect();
        SweepResult { rows }
    }

    #[test]
    fn planted_rates() {
        let (slope, _) = fit_rate(&planted(|n| n.powf(-0.5))).unwrap();
        assert!((slope + 0.5).abs() < 1e-9);
        let (slope, _) = fit_rate(&planted(|_| 0.3)).unwrap();
        assert!(slope.abs() < 1e-12);
    }

    #[test]
    fn too_few_sizes() {
        let mut r = planted(|n| 1.0 / n);
        r.rows.retain(|row| row.n <= 10_000);
        assert!(matches!(fit_rate(&r), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn csv_round_trip() {
        let mut r = planted(|n| 1.0 / n.sqrt());
        r.rows[1].w1_error = None;
        r.rows[1].error = Some("numerical degeneracy: x".into());
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &r, false).unwrap();
        assert_eq!(read_sweep_csv(buf.as_slice()).unwrap(), r);
    }

    #[test]
    fn profile_counts_clean_samples() {
        let p = NoiseProfile {
            clean_fraction: 0.1,
            sigma: 3.0,
            sigma_floor: 1.0,
        };
        let s = p.sigmas(20);
        assert_eq!(s.iter().filter(|&&x| x == 0.0).count(), 2);
        assert_eq!(s.iter().filter(|&&x| x == 3.0).count(), 18);
    }

    #[test]
    fn svg_is_well_formed() {
        let svg = render_svg(&planted(|n| n.powf(-0.3)));
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<circle").count(), 12);
    }
}
