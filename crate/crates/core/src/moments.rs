//! From moment estimates to distributions: Euclidean projection onto the
//! moment space of measures on an interval, and Gauss quadrature.
//!
//! For odd order `L = 2k - 1` the moment vectors of probability measures on
//! `[a, b]` are exactly those whose two localizing Hankel matrices
//!
//! ```text
//! A1[p][q] = m_{p+q+1} - a m_{p+q}      A2[p][q] = b m_{p+q} - m_{p+q+1}
//! ```
//!
//! (`0 <= p, q < k`, `m_0 = 1`) are positive semidefinite.

use nalgebra::{DMatrix, DVector};

use crate::distributions::{AtomicDistribution, Interval};
use crate::error::{Error, Result};
use crate::hermite::MomentVector;

/// Knobs of the moment-space projection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionOptions {
    /// Inputs whose localizing matrices have no eigenvalue below
    /// `-feasibility_tol` are returned unchanged.
    pub feasibility_tol: f64,
    /// Target duality gap of the squared-distance objective.
    pub gap_tol: f64,
    /// Cap on Newton steps over all barrier stages.
    pub max_iterations: usize,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-8,
            gap_tol: 1e-12,
            max_iterations: 20_000,
        }
    }
}

/// Roots closer than this are merged in [`gauss_quadrature`].
pub const ROOT_MERGE_GAP: f64 = 1e-7;
/// Largest tolerated imaginary part of a quadrature node.
pub const ROOT_IMAG_TOL: f64 = 1e-7;
/// Relative eigenvalue below which a Hankel matrix counts as singular.
pub const HANKEL_RANK_TOL: f64 = 1e-11;

const MAX_NEWTON_PER_STAGE: usize = 200;

/// `m_r = sum_i w_i mu_i^r` for `r = 1..=order`.
pub fn moments_of(dist: &AtomicDistribution, order: usize) -> Result<MomentVector> {
    if dist.dim() != 1 {
        return Err(Error::invalid(
            "moments_of needs a one-dimensional distribution",
        ));
    }
    if order == 0 {
        return Err(Error::invalid("order must be at least 1"));
    }
    let atoms = dist.scalar_atoms();
    let values = (1..=order as i32)
        .map(|r| {
            atoms
                .iter()
                .zip(dist.weights())
                .map(|(x, w)| w * x.powi(r))
                .sum()
        })
        .collect();
    MomentVector::new(values)
}

/// Moments `m_1..m_order` of the uniform distribution on `[a, b]`.
fn uniform_moments(interval: &Interval, order: usize) -> Vec<f64> {
    let (a, b) = (interval.lo, interval.hi);
    (1..=order as i32)
        .map(|r| (b.powi(r + 1) - a.powi(r + 1)) / ((r + 1) as f64 * (b - a)))
        .collect()
}

fn full_moments(m: &[f64]) -> Vec<f64> {
    let mut full = Vec::with_capacity(m.len() + 1);
    full.push(1.0);
    full.extend_from_slice(m);
    full
}

fn localizing_matrices(
    full: &[f64],
    k: usize,
    interval: &Interval,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let (a, b) = (interval.lo, interval.hi);
    let a1 = DMatrix::from_fn(k, k, |p, q| full[p + q + 1] - a * full[p + q]);
    let a2 = DMatrix::from_fn(k, k, |p, q| b * full[p + q] - full[p + q + 1]);
    (a1, a2)
}

fn check_odd_order(m: &MomentVector) -> Result<usize> {
    let order = m.order();
    if order.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "moment order {order} is even; expected 2k - 1"
        )));
    }
    Ok(order.div_ceil(2))
}

/// Smallest eigenvalue over both localizing matrices; nonnegative iff the
/// moments belong to a distribution on the interval.
pub fn moment_space_margin(m: &MomentVector, interval: &Interval) -> Result<f64> {
    let k = check_odd_order(m)?;
    let (a1, a2) = localizing_matrices(&full_moments(m.values()), k, interval);
    Ok(min_eigenvalue(a1).min(min_eigenvalue(a2)))
}

fn min_eigenvalue(a: DMatrix<f64>) -> f64 {
    a.symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Nearest point of the moment space, with default options.
pub fn project_to_moment_space(m: &MomentVector, interval: &Interval) -> Result<MomentVector> {
    project_to_moment_space_with(m, interval, &ProjectionOptions::default())
}

/// Minimizes `|m - target|^2` over the moment space of `[a, b]`.
///
/// Solved with a log-det barrier method: Newton steps on
/// `t/2 |m - target|^2 - log det A1(m) - log det A2(m)` for increasing `t`,
/// starting from the moments of the uniform distribution (strictly
/// interior). The duality gap after each stage is `2k / t`.
pub fn project_to_moment_space_with(
    target: &MomentVector,
    interval: &Interval,
    opts: &ProjectionOptions,
) -> Result<MomentVector> {
    let k = check_odd_order(target)?;
    if moment_space_margin(target, interval)? >= -opts.feasibility_tol {
        return Ok(target.clone());
    }
    let order = target.order();
    let basis = BarrierBasis::new(k, interval);
    let tv = DVector::from_column_slice(target.values());
    let mut m = DVector::from_vec(uniform_moments(interval, order));
    let nu = 2.0 * k as f64;
    let mut t = 1.0;
    let mut iterations = 0usize;

    // Objective change from `m` to `m + step`, evaluated as a difference so
    // that large `t` does not swamp it in rounding.
    let change = |m: &DVector<f64>, step: &DVector<f64>, t: f64, base: (f64, f64)| -> Option<f64> {
        let trial = m + step;
        let (l1, l2) = basis.log_dets(trial.as_slice())?;
        let quad = 0.5 * t * step.dot(&((m - &tv) * 2.0 + step));
        Some(quad - (l1 - base.0) - (l2 - base.1))
    };

    loop {
        let mut stalled = false;
        for _ in 0..MAX_NEWTON_PER_STAGE {
            if iterations >= opts.max_iterations {
                return Err(Error::ConvergenceFailure {
                    iterations,
                    residual: nu / t,
                    last: m.as_slice().to_vec(),
                });
            }
            iterations += 1;
            let (Some((gb, hb)), Some(base)) = (
                basis.derivatives(m.as_slice()),
                basis.log_dets(m.as_slice()),
            ) else {
                stalled = true;
                break;
            };
            let grad = (&m - &tv) * t + gb;
            let hess = hb + DMatrix::identity(order, order) * t;
            let Some(chol) = hess.cholesky() else {
                stalled = true;
                break;
            };
            let step = -chol.solve(&grad);
            let decrement = -grad.dot(&step);
            if decrement / 2.0 <= 1e-10 {
                break;
            }
            let mut s = 1.0;
            let accepted = loop {
                let scaled = &step * s;
                if scaled.norm() <= 1e-15 * (1.0 + m.norm()) {
                    break None;
                }
                if let Some(df) = change(&m, &scaled, t, base) {
                    if df <= -0.25 * s * decrement {
                        break Some(&m + scaled);
                    }
                }
                s *= 0.5;
            };
            match accepted {
                Some(next) => m = next,
                None => {
                    stalled = true;
                    break;
                }
            }
        }
        let gap = nu / t;
        if gap <= opts.gap_tol || stalled {
            // A stall means double precision is exhausted; only accept it once
            // the gap is already small.
            if stalled && gap > 1e-6 {
                return Err(Error::ConvergenceFailure {
                    iterations,
                    residual: gap,
                    last: m.as_slice().to_vec(),
                });
            }
            return MomentVector::new(m.as_slice().to_vec());
        }
        t *= 10.0;
    }
}

/// The localizing matrices as affine functions of `m_1..m_L`.
struct BarrierBasis {
    k: usize,
    interval: Interval,
    /// `dA1/dm_j` and `dA2/dm_j` for `j = 1..=L`.
    d1: Vec<DMatrix<f64>>,
    d2: Vec<DMatrix<f64>>,
}

impl BarrierBasis {
    fn new(k: usize, interval: &Interval) -> Self {
        let order = 2 * k - 1;
        let (a, b) = (interval.lo, interval.hi);
        let unit = |j: usize, i: usize| if i == j { 1.0 } else { 0.0 };
        let d1 = (1..=order)
            .map(|j| DMatrix::from_fn(k, k, |p, q| unit(j, p + q + 1) - a * unit(j, p + q)))
            .collect();
        let d2 = (1..=order)
            .map(|j| DMatrix::from_fn(k, k, |p, q| b * unit(j, p + q) - unit(j, p + q + 1)))
            .collect();
        Self {
            k,
            interval: *interval,
            d1,
            d2,
        }
    }

    fn log_dets(&self, m: &[f64]) -> Option<(f64, f64)> {
        let (a1, a2) = localizing_matrices(&full_moments(m), self.k, &self.interval);
        let l1 = a1
            .cholesky()?
            .l()
            .diagonal()
            .iter()
            .map(|d| 2.0 * d.ln())
            .sum();
        let l2 = a2
            .cholesky()?
            .l()
            .diagonal()
            .iter()
            .map(|d| 2.0 * d.ln())
            .sum();
        Some((l1, l2))
    }

    /// Gradient and Hessian of `-log det A1 - log det A2`.
    fn derivatives(&self, m: &[f64]) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let order = m.len();
        let (a1, a2) = localizing_matrices(&full_moments(m), self.k, &self.interval);
        let inv1 = a1.cholesky()?.inverse();
        let inv2 = a2.cholesky()?.inverse();
        let mut grad = DVector::zeros(order);
        let mut hess = DMatrix::zeros(order, order);
        for (inv, basis) in [(&inv1, &self.d1), (&inv2, &self.d2)] {
            let g: Vec<DMatrix<f64>> = basis.iter().map(|b| inv * b).collect();
            for i in 0..order {
                grad[i] -= g[i].trace();
                for j in 0..=i {
                    let h = (&g[i] * &g[j]).trace();
                    hess[(i, j)] += h;
                    if i != j {
                        hess[(j, i)] += h;
                    }
                }
            }
        }
        Some((grad, hess))
    }
}

/// Gauss quadrature without clipping the nodes to an interval.
pub fn gauss_quadrature(m: &MomentVector, k: usize) -> Result<AtomicDistribution> {
    quadrature(m, k, None)
}

/// Gauss quadrature with nodes clipped to `interval`.
pub fn gauss_quadrature_on(
    m: &MomentVector,
    k: usize,
    interval: &Interval,
) -> Result<AtomicDistribution> {
    quadrature(m, k, Some(interval))
}

/// Recovers an (at most) `k`-atomic distribution matching `m_0..m_{2k-1}`.
///
/// The nodes are the roots of the monic degree-`k'` orthogonal polynomial
/// `P` defined by `M_{0,2k'-2} c = -(m_{k'}, .., m_{2k'-1})`, where `k' <= k`
/// is the numerical rank of the moment Hankel matrix; the weights solve the
/// Vandermonde system. A final Newton refinement on the moment equations
/// removes most of the error from the ill-conditioned Hankel solve.
fn quadrature(
    m: &MomentVector,
    k: usize,
    interval: Option<&Interval>,
) -> Result<AtomicDistribution> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if m.order() < 2 * k - 1 {
        return Err(Error::invalid(format!(
            "{} moments given, {} needed for k = {k}",
            m.order(),
            2 * k - 1
        )));
    }
    let full = full_moments(&m.values()[..2 * k - 1]);
    let rank = hankel_rank(&full, k);

    let mut nodes = orthogonal_polynomial_roots(&full, rank)?;
    if let Some(iv) = interval {
        for x in &mut nodes {
            *x = iv.clamp(*x);
        }
    }
    nodes.sort_by(f64::total_cmp);
    let mut merged: Vec<f64> = Vec::with_capacity(nodes.len());
    for x in nodes {
        match merged.last() {
            Some(&last) if x - last < ROOT_MERGE_GAP => {}
            _ => merged.push(x),
        }
    }
    let nodes = merged;
    let s = nodes.len();

    let mut weights = if s == rank {
        let v = DMatrix::from_fn(s, s, |r, i| nodes[i].powi(r as i32));
        let rhs = DVector::from_fn(s, |r, _| full[r]);
        v.lu().solve(&rhs).map(|w| w.as_slice().to_vec())
    } else {
        None
    };
    if weights.is_none() {
        let rows = full.len();
        let v = DMatrix::from_fn(rows, s, |r, i| nodes[i].powi(r as i32));
        let rhs = DVector::from_column_slice(&full);
        let w = v.svd(true, true).solve(&rhs, 1e-14).map_err(|e| {
            Error::NumericalDegeneracy(format!("Vandermonde least squares failed: {e}"))
        })?;
        weights = Some(w.as_slice().to_vec());
    }
    let mut weights = weights.expect("weights computed above");

    let mut nodes = nodes;
    if weights.iter().all(|&w| w > 0.0) {
        refine_nodes(&full[..2 * s], &mut nodes, &mut weights, interval);
    }

    for w in &mut weights {
        if !(*w > 0.0) {
            *w = 0.0;
        }
    }
    if weights.iter().sum::<f64>() <= 0.0 {
        return Err(Error::NumericalDegeneracy(
            "all quadrature weights vanished".into(),
        ));
    }
    let dist =
        AtomicDistribution::normalized(1, nodes.into_iter().map(|x| vec![x]).collect(), weights)?;
    Ok(dist.merged())
}

/// Largest `j <= k` whose leading `j x j` moment Hankel matrix is
/// numerically positive definite.
fn hankel_rank(full: &[f64], k: usize) -> usize {
    let mut rank = 1;
    for j in 2..=k {
        let h = DMatrix::from_fn(j, j, |p, q| full[p + q]);
        let eig = h.symmetric_eigenvalues();
        let max = eig.iter().copied().fold(0.0f64, f64::max);
        let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
        if min <= HANKEL_RANK_TOL * max.max(1.0) {
            break;
        }
        rank = j;
    }
    rank
}

fn orthogonal_polynomial_roots(full: &[f64], k: usize) -> Result<Vec<f64>> {
    if k == 1 {
        return Ok(vec![full[1]]);
    }
    let h = DMatrix::from_fn(k, k, |p, q| full[p + q]);
    let rhs = DVector::from_fn(k, |p, _| -full[p + k]);
    let c = h
        .clone()
        .cholesky()
        .map(|ch| ch.solve(&rhs))
        .or_else(|| h.lu().solve(&rhs))
        .ok_or_else(|| Error::NumericalDegeneracy("singular moment Hankel matrix".into()))?;

    // Companion matrix of x^k + c_{k-1} x^{k-1} + ... + c_0.
    let mut companion = DMatrix::zeros(k, k);
    for i in 1..k {
        companion[(i, i - 1)] = 1.0;
    }
    for i in 0..k {
        companion[(i, k - 1)] = -c[i];
    }
    let eig = companion.complex_eigenvalues();
    let poly = |x: f64| -> (f64, f64) {
        // Horner for P and P'.
        let (mut p, mut dp) = (1.0, 0.0);
        for i in (0..k).rev() {
            dp = dp * x + p;
            p = p * x + c[i];
        }
        (p, dp)
    };
    let mut roots = Vec::with_capacity(k);
    for z in eig.iter() {
        let scale = z.re.abs().max(1.0);
        if z.im.abs() > ROOT_IMAG_TOL * scale {
            return Err(Error::NumericalDegeneracy(format!(
                "quadrature polynomial has a complex root {} + {}i",
                z.re, z.im
            )));
        }
        let mut x = z.re;
        for _ in 0..8 {
            let (p, dp) = poly(x);
            if dp == 0.0 {
                break;
            }
            let next = x - p / dp;
            if !next.is_finite() || (next - x).abs() > 1e-3 * scale {
                break;
            }
            x = next;
        }
        roots.push(x);
    }
    Ok(roots)
}

/// Newton iterations on `sum_i w_i x_i^r = m_r`, `r = 0..2s-1`. Keeps the
/// refined solution only if it lowers the residual, keeps weights positive
/// and stays inside the interval.
fn refine_nodes(
    full: &[f64],
    nodes: &mut Vec<f64>,
    weights: &mut Vec<f64>,
    interval: Option<&Interval>,
) {
    let s = nodes.len();
    let residual = |x: &[f64], w: &[f64]| -> DVector<f64> {
        DVector::from_fn(2 * s, |r, _| {
            x.iter()
                .zip(w)
                .map(|(xi, wi)| wi * xi.powi(r as i32))
                .sum::<f64>()
                - full[r]
        })
    };
    let mut x = nodes.clone();
    let mut w = weights.clone();
    let mut best = residual(&x, &w).norm();
    for _ in 0..20 {
        if best == 0.0 {
            break;
        }
        let jac = DMatrix::from_fn(2 * s, 2 * s, |r, c| {
            if c < s {
                w[c] * r as f64 * if r == 0 { 0.0 } else { x[c].powi(r as i32 - 1) }
            } else {
                x[c - s].powi(r as i32)
            }
        });
        let Some(delta) = jac.lu().solve(&residual(&x, &w)) else {
            break;
        };
        let nx: Vec<f64> = (0..s).map(|i| x[i] - delta[i]).collect();
        let nw: Vec<f64> = (0..s).map(|i| w[i] - delta[s + i]).collect();
        let inside = interval.is_none_or(|iv| nx.iter().all(|&v| iv.contains(v, 0.0)));
        if !inside || nw.iter().any(|&v| !(v > 0.0)) {
            break;
        }
        let r = residual(&nx, &nw).norm();
        if !(r < best) {
            break;
        }
        best = r;
        x = nx;
        w = nw;
    }
    *nodes = x;
    *weights = w;
}
