//! Probabilists' Hermite polynomials and the noise-adapted family
//! `gamma_{r,sigma}`, whose expectation under `D * N(0, sigma^2)` is the raw
//! moment `E_D[X^r]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Highest polynomial degree evaluated. Factorial ratios stay well inside
/// double range up to here.
pub const MAX_DEGREE: usize = 40;

/// Default constant in [`moment_variance_bound`].
pub const DEFAULT_C_VAR: f64 = 3.0;

/// Raw moments `m_1..m_L` (the zeroth moment is implicitly 1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentVector {
    values: Vec<f64>,
}

impl MomentVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("moment vector needs at least one moment"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("moments must be finite"));
        }
        Ok(Self { values })
    }

    /// Number of moments `L`.
    pub fn order(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `m_r` for `0 <= r <= L`, with `m_0 = 1`.
    pub fn get(&self, r: usize) -> f64 {
        if r == 0 {
            1.0
        } else {
            self.values[r - 1]
        }
    }

    /// Euclidean distance between moment vectors of the same order.
    pub fn distance(&self, other: &MomentVector) -> f64 {
        assert_eq!(self.order(), other.order());
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Normalized per-sample weights `alpha_i` proportional to `1 / sigma_i^q`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightScheme {
    pub weights: Vec<f64>,
    pub exponent: u32,
}

fn check_degree(r: usize) -> Result<()> {
    if r > MAX_DEGREE {
        return Err(Error::CapacityExceeded {
            what: "polynomial degree",
            count: r,
            cap: MAX_DEGREE,
        });
    }
    Ok(())
}

/// `H_r(x)`, with `E[H_r(N(mu, 1))] = mu^r`.
pub fn hermite(r: usize, x: f64) -> Result<f64> {
    check_degree(r)?;
    let (mut prev, mut cur) = (1.0, x);
    if r == 0 {
        return Ok(prev);
    }
    for j in 1..r {
        let next = x * cur - j as f64 * prev;
        prev = cur;
        cur = next;
    }
    Ok(cur)
}

/// Coefficients `r! (-1/2)^j / (j! (r - 2j)!)` for `j = 0..=r/2`.
fn gamma_coefficients(r: usize) -> Vec<f64> {
    let mut coef = Vec::with_capacity(r / 2 + 1);
    let mut c = 1.0;
    coef.push(c);
    for j in 0..r / 2 {
        let a = (r - 2 * j) as f64;
        c *= -0.5 * a * (a - 1.0) / (j + 1) as f64;
        coef.push(c);
    }
    coef
}

/// `gamma_{r,sigma}(x) = r! sum_j (-1/2)^j sigma^{2j} x^{r-2j} / (j! (r-2j)!)`,
/// evaluated term by term so that `sigma = 0` gives exactly `x^r`.
pub fn gamma_poly(r: usize, sigma: f64, x: f64) -> Result<f64> {
    check_degree(r)?;
    if !(sigma >= 0.0) {
        return Err(Error::invalid(format!("sigma {sigma} must be nonnegative")));
    }
    let s2 = sigma * sigma;
    let mut total = 0.0;
    let mut s_pow = 1.0;
    for (j, c) in gamma_coefficients(r).into_iter().enumerate() {
        total += c * s_pow * x.powi((r - 2 * j) as i32);
        s_pow *= s2;
    }
    Ok(total)
}

/// `gamma_{1..=L, sigma}(x)` by the recurrence
/// `gamma_{r+1} = x gamma_r - r sigma^2 gamma_{r-1}`, which is algebraically
/// the same polynomial family and costs O(L) per sample.
pub(crate) fn gamma_all(order: usize, sigma: f64, x: f64, out: &mut [f64]) {
    let s2 = sigma * sigma;
    let (mut prev, mut cur) = (1.0, x);
    out[0] = cur;
    for (r, slot) in out.iter_mut().enumerate().take(order).skip(1) {
        let next = x * cur - r as f64 * s2 * prev;
        prev = cur;
        cur = next;
        *slot = cur;
    }
}

/// `alpha_i = sigma_i^{-q} / sum_j sigma_j^{-q}`, computed relative to the
/// smallest sigma so that large exponents do not overflow.
pub fn weight_scheme(sigmas: &[f64], q: u32) -> Result<WeightScheme> {
    if sigmas.is_empty() {
        return Err(Error::invalid("no noise levels given"));
    }
    if q == 0 {
        return Err(Error::invalid("weight exponent must be at least 1"));
    }
    if let Some(s) = sigmas.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
        return Err(Error::invalid(format!(
            "noise level {s} is not positive; lift the noise floor first"
        )));
    }
    let s_min = sigmas.iter().copied().fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = sigmas.iter().map(|s| (s_min / s).powi(q as i32)).collect();
    let total: f64 = raw.iter().sum();
    Ok(WeightScheme {
        weights: raw.into_iter().map(|w| w / total).collect(),
        exponent: q,
    })
}

/// Weight exponent `4k - 2` used for moment estimation with `k` atoms.
pub fn moment_exponent(k: usize) -> u32 {
    (4 * k - 2) as u32
}

/// `m~_r = sum_i alpha_i gamma_{r,sigma_i}(x_i)` for `r = 1..=2k-1`, with
/// `alpha` proportional to `1 / sigma_i^{4k-2}`.
pub fn weighted_moments(data: &[(f64, f64)], k: usize) -> Result<MomentVector> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let order = 2 * k - 1;
    check_degree(order)?;
    let sigmas: Vec<f64> = data.iter().map(|p| p.1).collect();
    let scheme = weight_scheme(&sigmas, moment_exponent(k))?;
    let mut acc = vec![0.0; order];
    let mut g = vec![0.0; order];
    for (&(x, sigma), &alpha) in data.iter().zip(&scheme.weights) {
        gamma_all(order, sigma, x, &mut g);
        for (a, v) in acc.iter_mut().zip(&g) {
            *a += alpha * v;
        }
    }
    MomentVector::new(acc)
}

/// Ceiling `(c_var (M + sigma sqrt(r)))^{2r}` on the variance of
/// `gamma_{r,sigma}(X)` for atoms bounded by `M`. Diagnostic only.
pub fn moment_variance_bound(r: usize, sigma: f64, m: f64, c_var: f64) -> f64 {
    (c_var * (m + sigma * (r as f64).sqrt())).powi(2 * r as i32)
}
