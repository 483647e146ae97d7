//! Effective sample sizes under heterogeneous noise, and bounds on the
//! relative price of noisy samples implied by a table of benchmark scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermite::moment_exponent;

/// Noise-discounted sample counts of the two error terms: `n_d` for the
/// subspace estimate (weights `sigma^-4`) and `n_l` for the
/// low-dimensional estimate (weights `sigma^-(4k-2)`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectiveSampleSizes {
    pub n_d: f64,
    pub n_l: f64,
}

/// `(sum_i sigma_i^-q) / max_i sigma_i^-q`, summed as `(sigma_min / sigma_i)^q`.
fn effective_count(sigmas: &[f64], q: u32) -> Result<f64> {
    if sigmas.is_empty() {
        return Err(Error::invalid("no noise levels given"));
    }
    if let Some(s) = sigmas.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
        return Err(Error::invalid(format!("noise level {s} must be positive")));
    }
    let s_min = sigmas.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(sigmas.iter().map(|s| (s_min / s).powi(q as i32)).sum())
}

pub fn effective_sample_sizes(sigmas: &[f64], k: usize) -> Result<EffectiveSampleSizes> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    Ok(EffectiveSampleSizes {
        n_d: effective_count(sigmas, 4)?,
        n_l: effective_count(sigmas, moment_exponent(k))?,
    })
}

/// One benchmark result: a model trained on a fraction `p_clean` of the
/// clean data, plus the remaining `1 - p_clean` at noise level `sigma` when
/// `sigma` is set. Lower scores are better.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PricingRow {
    pub dataset: String,
    pub p_clean: f64,
    pub sigma: Option<f64>,
    pub score: f64,
}

impl PricingRow {
    fn label(&self) -> String {
        match self.sigma {
            Some(s) => format!("p={} sigma={} score={}", self.p_clean, s, self.score),
            None => format!("p={} clean-only score={}", self.p_clean, self.score),
        }
    }

    /// Noisy fraction that counts towards the value at noise level `sigma`.
    fn noisy_share(&self) -> f64 {
        if self.sigma.is_some() {
            1.0 - self.p_clean
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PricingTable {
    pub rows: Vec<PricingRow>,
}

impl PricingTable {
    pub fn new(rows: Vec<PricingRow>) -> Result<Self> {
        for r in &rows {
            if !(0.0..=1.0).contains(&r.p_clean) {
                return Err(Error::invalid(format!(
                    "clean fraction {} outside [0, 1]",
                    r.p_clean
                )));
            }
            if !(r.score.is_finite() && r.score > 0.0) {
                return Err(Error::invalid(format!(
                    "score {} must be positive",
                    r.score
                )));
            }
            if let Some(s) = r.sigma {
                if !(s.is_finite() && s >= 0.0) {
                    return Err(Error::invalid(format!(
                        "noise level {s} must be nonnegative"
                    )));
                }
            }
        }
        Ok(Self { rows })
    }

    /// Distinct dataset labels in order of first appearance.
    pub fn datasets(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.dataset) {
                out.push(r.dataset.clone());
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PricingOptions {
    /// Rows with a smaller clean fraction are ignored.
    pub min_clean_fraction: f64,
    /// Pairs whose scores differ by at most this much are skipped.
    pub tie_tolerance: f64,
}

impl Default for PricingOptions {
    fn default() -> Self {
        Self {
            min_clean_fraction: 0.1,
            tie_tolerance: 0.0,
        }
    }
}

/// Interval for `1/c_sigma`, where `c_sigma` is the price of a noisy sample
/// in units of clean samples. `upper` is infinite when nothing caps it.
#[derive(Clone, Debug, PartialEq)]
pub struct PricingBound {
    pub dataset: String,
    pub sigma: f64,
    pub lower: f64,
    pub upper: f64,
    /// The pair of rows that set each endpoint; `None` for the prior
    /// `1/c >= 1` and for an unbounded upper end.
    pub lower_witness: Option<String>,
    pub upper_witness: Option<String>,
}

/// Serialized shape of a [`PricingBound`].
#[derive(Serialize, Deserialize, Debug, PartialEq)]
pub struct PricingBoundRecord {
    pub dataset: String,
    pub sigma: f64,
    pub inv_c_lower: f64,
    pub inv_c_upper: Option<f64>,
    pub lower_witness: Option<String>,
    pub upper_witness: Option<String>,
}

impl From<&PricingBound> for PricingBoundRecord {
    fn from(b: &PricingBound) -> Self {
        Self {
            dataset: b.dataset.clone(),
            sigma: b.sigma,
            inv_c_lower: b.lower,
            inv_c_upper: b.upper.is_finite().then_some(b.upper),
            lower_witness: b.lower_witness.clone(),
            upper_witness: b.upper_witness.clone(),
        }
    }
}

/// Bounds on `1/c_sigma` for every dataset and noise level in the table.
///
/// A dataset of clean fraction `p` plus noisy fraction `q` at level `sigma`
/// is worth `p + c q` clean samples. Whenever row `A` scores strictly better
/// than row `B` we require `p_A + c q_A >= p_B + c q_B`; pairs in which `c`
/// cancels carry no information. Without evidence to the contrary a noisy
/// sample is worth at most a clean one, so the lower end starts at 1.
pub fn price_bounds(table: &PricingTable, opts: &PricingOptions) -> Result<Vec<PricingBound>> {
    let mut out = Vec::new();
    for dataset in table.datasets() {
        let rows: Vec<&PricingRow> = table
            .rows
            .iter()
            .filter(|r| r.dataset == dataset && r.p_clean >= opts.min_clean_fraction)
            .collect();
        let mut sigmas: Vec<f64> = rows.iter().filter_map(|r| r.sigma).collect();
        sigmas.sort_by(f64::total_cmp);
        sigmas.dedup();
        for sigma in sigmas {
            let relevant: Vec<&PricingRow> = rows
                .iter()
                .copied()
                .filter(|r| r.sigma.is_none() || r.sigma == Some(sigma))
                .collect();
            if let Some(b) = bound_for_sigma(&dataset, sigma, &relevant, opts)? {
                out.push(b);
            }
        }
    }
    Ok(out)
}

fn bound_for_sigma(
    dataset: &str,
    sigma: f64,
    rows: &[&PricingRow],
    opts: &PricingOptions,
) -> Result<Option<PricingBound>> {
    let mut lower = (1.0, None::<String>);
    let mut upper = (f64::INFINITY, None::<String>);
    let mut informative = false;
    for a in rows {
        for b in rows {
            let gap = b.score - a.score;
            if !(gap > opts.tie_tolerance) {
                continue;
            }
            // value(A) - value(B) = dp + c dq >= 0
            let dq = a.noisy_share() - b.noisy_share();
            let dp = a.p_clean - b.p_clean;
            if dq == 0.0 {
                continue;
            }
            informative = true;
            let witness = || format!("{} better than {}", a.label(), b.label());
            if dq > 0.0 {
                // c >= -dp/dq, informative only when positive.
                if dp < 0.0 {
                    let inv = dq / -dp;
                    if inv < upper.0 {
                        upper = (inv, Some(witness()));
                    }
                }
            } else if dp > 0.0 {
                // c <= dp/|dq|
                let inv = -dq / dp;
                if inv > lower.0 {
                    lower = (inv, Some(witness()));
                }
            } else {
                // The better row has no more clean data and less noisy data:
                // only a nonpositive price explains it.
                lower = (f64::INFINITY, Some(witness()));
            }
        }
    }
    if !informative {
        return Ok(None);
    }
    if lower.0 > upper.0 || lower.0.is_infinite() {
        return Err(Error::InconsistentTable {
            sigma,
            lower: lower.0,
            upper: upper.0,
            lower_pair: lower.1.unwrap_or_else(|| "prior 1/c >= 1".into()),
            upper_pair: upper.1.unwrap_or_default(),
        });
    }
    Ok(Some(PricingBound {
        dataset: dataset.to_string(),
        sigma,
        lower: lower.0,
        upper: upper.0,
        lower_witness: lower.1,
        upper_witness: upper.1,
    }))
}
