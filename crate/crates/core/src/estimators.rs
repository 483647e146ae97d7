//! Estimators built on the moment machinery: the one-dimensional denoised
//! method of moments, a median-of-means layer over sample buckets, the
//! low-dimensional candidate search and the high-dimensional pipeline.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{
    dot, w1_line, wasserstein1_1d, AtomicDistribution, HeteroDataset, Interval, SphereNet,
};
use crate::error::{Error, Result};
use crate::hermite::{moment_exponent, weight_scheme, weighted_moments, MomentVector};
use crate::moments::{gauss_quadrature_on, project_to_moment_space};
use crate::pricing::{effective_sample_sizes, EffectiveSampleSizes};
use crate::rng::{derive_seed, substream};

const NET_STREAM: u64 = 1;
const SPLIT_STREAM: u64 = 2;
const SPLIT_ATTEMPTS: usize = 3;

/// Fraction of buckets a selected estimate must be close to.
const MAJORITY: f64 = 0.6;

/// Tuning of the estimators. Unset JSON fields take the defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    /// Number of atoms.
    pub k: usize,
    /// Target failure probability; sets the number of buckets.
    pub delta: f64,
    /// Random directions added to the canonical basis in the search net.
    pub net_extra_directions: usize,
    /// `m = ceil(mom_constant * (ln(1/delta) + k ln k))` buckets.
    pub mom_constant: f64,
    /// Floor on the resolution of the weight lattice.
    pub weight_net_step: f64,
    /// Maximum number of candidates in the low-dimensional search.
    pub candidate_cap: usize,
    pub seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            k: 2,
            delta: 0.1,
            net_extra_directions: 64,
            mom_constant: 4.0,
            weight_net_step: 0.05,
            candidate_cap: 1_000_000,
            seed: 0,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if !(self.delta > 0.0 && self.delta < 0.5) {
            return Err(Error::invalid(format!(
                "delta {} must lie in (0, 1/2)",
                self.delta
            )));
        }
        if !(self.mom_constant > 0.0) {
            return Err(Error::invalid("mom_constant must be positive"));
        }
        if !(self.weight_net_step > 0.0 && self.weight_net_step <= 1.0) {
            return Err(Error::invalid("weight_net_step must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Bucket count before clamping to the sample size.
    pub fn bucket_count(&self) -> usize {
        let k = self.k as f64;
        let m = self.mom_constant * ((1.0 / self.delta).ln() + k * k.ln());
        (m.ceil() as usize).max(1)
    }
}

/// Output of one run of the one-dimensional estimator.
#[derive(Clone, Debug)]
pub struct Ddm1d {
    pub estimate: AtomicDistribution,
    pub raw_moments: MomentVector,
    pub projected_moments: MomentVector,
}

impl Ddm1d {
    /// Distance moved by the moment projection.
    pub fn moment_residual(&self) -> f64 {
        self.raw_moments.distance(&self.projected_moments)
    }
}

/// Denoised method of moments: weighted Hermite moments, projection onto
/// the moment space of `interval`, then Gauss quadrature.
pub fn ddm_1d(data: &[(f64, f64)], k: usize, interval: &Interval) -> Result<AtomicDistribution> {
    Ok(ddm_1d_detailed(data, k, interval)?.estimate)
}

pub fn ddm_1d_detailed(data: &[(f64, f64)], k: usize, interval: &Interval) -> Result<Ddm1d> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if data.len() < 2 * k - 1 {
        return Err(Error::invalid(format!(
            "{} samples cannot determine {} moments",
            data.len(),
            2 * k - 1
        )));
    }
    let raw_moments = weighted_moments(data, k)?;
    let projected_moments = project_to_moment_space(&raw_moments, interval)?;
    let estimate = gauss_quadrature_on(&projected_moments, k, interval)?;
    Ok(Ddm1d {
        estimate,
        raw_moments,
        projected_moments,
    })
}

/// Assignment of items to `m` buckets.
#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub assignment: Vec<usize>,
    pub m: usize,
}

impl Partition {
    pub fn bucket_sums(&self, weights: &[f64]) -> Vec<f64> {
        let mut sums = vec![0.0; self.m];
        for (&j, &w) in self.assignment.iter().zip(weights) {
            sums[j] += w;
        }
        sums
    }

    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.m];
        for (i, &j) in self.assignment.iter().enumerate() {
            out[j].push(i);
        }
        out
    }
}

/// Puts each item, in input order, into the currently lightest bucket
/// (lowest index on ties).
pub fn greedy_partition(weights: &[f64], m: usize) -> Result<Partition> {
    if m == 0 {
        return Err(Error::invalid("bucket count must be at least 1"));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::invalid(
            "partition weights must be finite and nonnegative",
        ));
    }
    let mut sums = vec![0.0; m];
    let assignment = weights
        .iter()
        .map(|&w| {
            let mut best = 0;
            for j in 1..m {
                if sums[j] < sums[best] {
                    best = j;
                }
            }
            sums[best] += w;
            best
        })
        .collect();
    Ok(Partition { assignment, m })
}

/// Index of the estimate whose `ceil(0.6 m)`-th smallest distance to all
/// estimates (itself included) is smallest; lowest index on ties.
pub fn select_majority(estimates: &[AtomicDistribution]) -> Result<usize> {
    let m = estimates.len();
    if m == 0 {
        return Err(Error::invalid("nothing to select from"));
    }
    let rank = ((MAJORITY * m as f64).ceil() as usize).clamp(1, m);
    let mut best = (f64::INFINITY, 0);
    for i in 0..m {
        let mut d: Vec<f64> = estimates
            .iter()
            .map(|e| wasserstein1_1d(&estimates[i], e))
            .collect::<Result<_>>()?;
        d.sort_by(f64::total_cmp);
        let r = d[rank - 1];
        if r < best.0 {
            best = (r, i);
        }
    }
    Ok(best.1)
}

/// Robust per-direction estimates and what went into them.
#[derive(Clone, Debug)]
pub struct DirectionEstimates {
    /// One estimate per net direction, in net order.
    pub estimates: Vec<AtomicDistribution>,
    /// Moment-projection residual of each selected estimate.
    pub moment_residuals: Vec<f64>,
    /// Buckets actually used.
    pub buckets: usize,
    /// `max_i s_i (ln(1/delta) + k ln k) / sum_i s_i` with `s_i = sigma_i^{-(4k-2)}`;
    /// at most 1 when the effective-sample condition holds.
    pub precondition_ratio: f64,
    pub warnings: Vec<String>,
}

/// Median-of-means over buckets of roughly equal effective mass: runs
/// [`ddm_1d`] on every (direction, bucket) and keeps, per direction, the
/// bucket estimate chosen by [`select_majority`].
pub fn robust_direction_estimates(
    data: &HeteroDataset,
    config: &EstimatorConfig,
    net: &SphereNet,
    interval: &Interval,
) -> Result<DirectionEstimates> {
    config.validate()?;
    if net.dim() != data.dim() {
        return Err(Error::invalid("net and data dimensions differ"));
    }
    let k = config.k;
    let sigmas = data.sigmas();
    let scheme = weight_scheme(&sigmas, moment_exponent(k))?;
    let n = data.len();
    let mut warnings = Vec::new();

    let kk = k as f64;
    let log_term = ((1.0 / config.delta).ln() + kk * kk.ln()).max(f64::MIN_POSITIVE);
    let max_w = scheme.weights.iter().copied().fold(0.0, f64::max);
    let precondition_ratio = max_w * log_term;
    if precondition_ratio > 1.0 {
        warnings.push(format!(
            "effective-sample condition fails: ratio {precondition_ratio:.3} > 1"
        ));
    }

    let mut m = config.bucket_count();
    if m > n {
        warnings.push(format!("{m} buckets requested for {n} samples; using 1"));
        m = 1;
    }
    let partition = greedy_partition(&scheme.weights, m)?;
    let members = partition.members();

    let tasks: Vec<(usize, usize)> = (0..net.len())
        .flat_map(|v| (0..m).map(move |j| (v, j)))
        .collect();
    let results: Vec<Result<Ddm1d>> = tasks
        .par_iter()
        .map(|&(v, j)| {
            let dir = &net.directions()[v];
            let pairs: Vec<(f64, f64)> = members[j]
                .iter()
                .map(|&i| {
                    let s = &data.samples()[i];
                    (dot(&s.value, dir), s.sigma)
                })
                .collect();
            ddm_1d_detailed(&pairs, k, interval)
        })
        .collect();

    let mut estimates = Vec::with_capacity(net.len());
    let mut moment_residuals = Vec::with_capacity(net.len());
    let mut results = results.into_iter();
    for v in 0..net.len() {
        let mut ok = Vec::with_capacity(m);
        let mut first_err = None;
        for _ in 0..m {
            match results.next().expect("one result per task") {
                Ok(r) => ok.push(r),
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
        if ok.is_empty() {
            return Err(first_err.expect("at least one bucket"));
        }
        if ok.len() < m {
            warnings.push(format!(
                "direction {v}: {} of {m} buckets failed ({})",
                m - ok.len(),
                first_err.map(|e| e.to_string()).unwrap_or_default()
            ));
        }
        let candidates: Vec<AtomicDistribution> = ok.iter().map(|r| r.estimate.clone()).collect();
        let pick = select_majority(&candidates)?;
        moment_residuals.push(ok[pick].moment_residual());
        estimates.push(ok.swap_remove(pick).estimate);
    }
    Ok(DirectionEstimates {
        estimates,
        moment_residuals,
        buckets: m,
        precondition_ratio,
        warnings,
    })
}

/// Search diagnostics from [`low_dim_estimate`].
#[derive(Clone, Debug)]
pub struct LowDimReport {
    pub net: SphereNet,
    pub directions: DirectionEstimates,
    /// W1 between the returned estimate and each direction estimate.
    pub w1_residuals: Vec<f64>,
    pub candidates: usize,
    pub weight_step: f64,
}

/// All nondecreasing `k`-tuples over `0..c`.
fn multisets(c: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = vec![0usize; k];
    if c == 0 {
        return out;
    }
    loop {
        out.push(cur.clone());
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if cur[i] + 1 < c {
                let v = cur[i] + 1;
                for slot in &mut cur[i..] {
                    *slot = v;
                }
                break;
            }
        }
    }
}

/// All `k`-tuples of nonnegative integers summing to `total`.
fn compositions(total: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(left: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k == 1 {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for x in (0..=left).rev() {
            cur.push(x);
            rec(left - x, k - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(total, k, &mut Vec::with_capacity(k), &mut out);
    out
}

fn binomial(n: usize, r: usize) -> f64 {
    (0..r).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Resolution of the simplex lattice: `max(floor, n^{-1/(4k-2)})`.
pub fn weight_step(n: usize, k: usize, floor: f64) -> f64 {
    let exponent = 1.0 / (4 * k - 2) as f64;
    floor.max((n as f64).powf(-exponent))
}

/// Search over candidate distributions whose atoms come from the product
/// grid of per-axis atom estimates and whose weights lie on a simplex
/// lattice, minimizing the worst W1 over the net directions.
pub fn low_dim_estimate(
    data: &HeteroDataset,
    config: &EstimatorConfig,
    interval: &Interval,
) -> Result<(AtomicDistribution, LowDimReport)> {
    config.validate()?;
    let k = config.k;
    if data.dim() != k {
        return Err(Error::invalid(format!(
            "low-dimensional search expects dimension k = {k}, got {}",
            data.dim()
        )));
    }
    let net = crate::distributions::sphere_net(
        k,
        config.net_extra_directions,
        derive_seed(config.seed, NET_STREAM),
    )?;
    let directions = robust_direction_estimates(data, config, &net, interval)?;
    let estimate_and_report = search_candidates(&net, &directions.estimates, config, data.len())?;
    let (best, w1_residuals, candidates, step) = estimate_and_report;
    Ok((
        best,
        LowDimReport {
            net,
            directions,
            w1_residuals,
            candidates,
            weight_step: step,
        },
    ))
}

/// Candidate search against given direction estimates (the first `k`
/// directions of `net` must be the canonical axes).
pub fn search_candidates(
    net: &SphereNet,
    direction_estimates: &[AtomicDistribution],
    config: &EstimatorConfig,
    n: usize,
) -> Result<(AtomicDistribution, Vec<f64>, usize, f64)> {
    let k = config.k;
    let dim = net.dim();
    if direction_estimates.len() != net.len() {
        return Err(Error::invalid(
            "one direction estimate per net direction required",
        ));
    }
    let axes: Vec<Vec<f64>> = (0..dim)
        .map(|i| direction_estimates[i].scalar_atoms())
        .collect();
    let grid_size: usize = axes.iter().map(Vec::len).product();
    let grid: Vec<Vec<f64>> = (0..grid_size)
        .map(|mut idx| {
            axes.iter()
                .map(|a| {
                    let v = a[idx % a.len()];
                    idx /= a.len();
                    v
                })
                .collect()
        })
        .collect();

    let step = weight_step(n.max(1), k, config.weight_net_step);
    let lattice = (1.0 / step - 1e-9).ceil().max(1.0) as usize;
    let count = binomial(grid_size + k - 1, k) * binomial(lattice + k - 1, k - 1);
    if count > config.candidate_cap as f64 {
        return Err(Error::CapacityExceeded {
            what: "low-dimensional candidates",
            count: count.min(usize::MAX as f64) as usize,
            cap: config.candidate_cap,
        });
    }
    let atom_sets = multisets(grid_size, k);
    let weight_sets: Vec<Vec<f64>> = compositions(lattice, k)
        .into_iter()
        .map(|c| c.into_iter().map(|x| x as f64 / lattice as f64).collect())
        .collect();

    // Projections of grid points and estimates onto every direction.
    let proj: Vec<Vec<f64>> = net
        .directions()
        .iter()
        .map(|v| grid.iter().map(|g| dot(g, v)).collect())
        .collect();
    let targets: Vec<(Vec<f64>, Vec<f64>)> = direction_estimates
        .iter()
        .map(|e| (e.scalar_atoms(), e.weights().to_vec()))
        .collect();

    let score = |atoms: &[usize], w: &[f64], cutoff: f64| -> f64 {
        let mut worst: f64 = 0.0;
        let mut xs = vec![0.0; k];
        for (v, (tx, tw)) in targets.iter().enumerate() {
            for (slot, &a) in xs.iter_mut().zip(atoms) {
                *slot = proj[v][a];
            }
            worst = worst.max(w1_line(&xs, w, tx, tw));
            if worst >= cutoff {
                return worst;
            }
        }
        worst
    };

    let best = atom_sets
        .par_iter()
        .enumerate()
        .map(|(ai, atoms)| {
            let mut local = (f64::INFINITY, ai, 0usize);
            for (wi, w) in weight_sets.iter().enumerate() {
                let s = score(atoms, w, local.0);
                if s < local.0 {
                    local = (s, ai, wi);
                }
            }
            local
        })
        .reduce(
            || (f64::INFINITY, usize::MAX, usize::MAX),
            |x, y| {
                if y.0 < x.0 || (y.0 == x.0 && y.1 < x.1) {
                    y
                } else {
                    x
                }
            },
        );
    let (_, ai, wi) = best;
    let atoms: Vec<Vec<f64>> = atom_sets[ai].iter().map(|&g| grid[g].clone()).collect();
    let dist = AtomicDistribution::normalized(dim, atoms, weight_sets[wi].clone())?.merged();
    let residuals = net
        .directions()
        .iter()
        .zip(direction_estimates)
        .map(|(v, e)| wasserstein1_1d(&dist.project(v), e))
        .collect::<Result<Vec<_>>>()?;
    Ok((dist, residuals, count as usize, step))
}

/// `Sigma^ = sum_i alpha_i x_i x_i^T - sigma_bar^2 I` with `alpha` proportional
/// to `sigma_i^{-4}`, and `sigma_bar^2 = sum_i alpha_i sigma_i^2`.
#[derive(Clone, Debug)]
pub struct WeightedCovariance {
    pub matrix: DMatrix<f64>,
    pub sigma_bar_sq: f64,
}

pub fn weighted_covariance(data: &HeteroDataset) -> Result<WeightedCovariance> {
    let d = data.dim();
    let scheme = weight_scheme(&data.sigmas(), 4)?;
    let mut matrix = DMatrix::zeros(d, d);
    let mut sigma_bar_sq = 0.0;
    for (s, &alpha) in data.samples().iter().zip(&scheme.weights) {
        sigma_bar_sq += alpha * s.sigma * s.sigma;
        for p in 0..d {
            let ap = alpha * s.value[p];
            for q in 0..=p {
                matrix[(p, q)] += ap * s.value[q];
            }
        }
    }
    for p in 0..d {
        for q in 0..p {
            matrix[(q, p)] = matrix[(p, q)];
        }
        matrix[(p, p)] -= sigma_bar_sq;
    }
    Ok(WeightedCovariance {
        matrix,
        sigma_bar_sq,
    })
}

/// Orthonormal vectors spanning a subspace of `R^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subspace {
    pub basis: Vec<Vec<f64>>,
}

impl Subspace {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// Coordinates of `point` in the basis.
    pub fn project(&self, point: &[f64]) -> Vec<f64> {
        self.basis.iter().map(|u| dot(u, point)).collect()
    }

    /// The point of `R^d` with the given basis coordinates.
    pub fn lift(&self, coords: &[f64]) -> Vec<f64> {
        let d = self.basis[0].len();
        let mut out = vec![0.0; d];
        for (c, u) in coords.iter().zip(&self.basis) {
            for (o, x) in out.iter_mut().zip(u) {
                *o += c * x;
            }
        }
        out
    }

    /// Orthogonal projector `U U^T`.
    pub fn projector(&self) -> DMatrix<f64> {
        let d = self.basis[0].len();
        DMatrix::from_fn(d, d, |p, q| self.basis.iter().map(|u| u[p] * u[q]).sum())
    }
}

/// Eigenvectors of the `k` algebraically largest eigenvalues.
pub fn top_k_subspace(cov: &WeightedCovariance, k: usize) -> Result<Subspace> {
    let d = cov.matrix.nrows();
    if k == 0 || k > d {
        return Err(Error::invalid(format!(
            "cannot take {k} eigenvectors in dimension {d}"
        )));
    }
    let eig = SymmetricEigen::new(cov.matrix.clone());
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .total_cmp(&eig.eigenvalues[i])
            .then(i.cmp(&j))
    });
    let basis = order[..k]
        .iter()
        .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
        .collect();
    Ok(Subspace { basis })
}

/// Flips basis vectors so that the weighted mean of the projections is
/// positive (third moment when the mean vanishes). This keeps the pipeline
/// equivariant under rotations of the data.
fn orient(subspace: &mut Subspace, data: &HeteroDataset, alpha: &[f64]) {
    for u in &mut subspace.basis {
        let mut m1 = 0.0;
        let mut m3 = 0.0;
        let mut scale = 0.0;
        for (s, &a) in data.samples().iter().zip(alpha) {
            let p = dot(&s.value, u);
            m1 += a * p;
            m3 += a * p * p * p;
            scale += a * p.abs();
        }
        let key = if m1.abs() > 1e-9 * scale.max(1e-300) {
            m1
        } else {
            m3
        };
        if key < 0.0 {
            for x in u.iter_mut() {
                *x = -*x;
            }
        }
    }
}

/// `R = 1.2 * max_v q_{0.995}(|<x_i, v>| - 2 sigma_i)`, floored at `1e-3`.
pub fn default_radius(data: &HeteroDataset, directions: &[Vec<f64>]) -> f64 {
    let mut best: f64 = 0.0;
    let mut buf = Vec::with_capacity(data.len());
    for v in directions {
        buf.clear();
        buf.extend(
            data.samples()
                .iter()
                .map(|s| dot(&s.value, v).abs() - 2.0 * s.sigma),
        );
        best = best.max(quantile(&mut buf, 0.995));
    }
    (1.2 * best).max(1e-3)
}

/// Interval `[-R, R]` from [`default_radius`] for one-dimensional data.
pub fn default_interval_1d(pairs: &[(f64, f64)]) -> Result<Interval> {
    let mut buf: Vec<f64> = pairs.iter().map(|&(x, s)| x.abs() - 2.0 * s).collect();
    if buf.is_empty() {
        return Err(Error::invalid("no samples"));
    }
    Interval::symmetric((1.2 * quantile(&mut buf, 0.995)).max(1e-3))
}

fn quantile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let idx = ((q * values.len() as f64).ceil() as usize).clamp(1, values.len()) - 1;
    values[idx]
}

/// Diagnostics of [`estimate_hd`].
#[derive(Clone, Debug, Serialize)]
pub struct EstimateReport {
    /// W1 between the estimate and each direction estimate, keyed by the
    /// direction's index in the net.
    pub w1_residuals: std::collections::BTreeMap<String, f64>,
    pub moment_residuals: Vec<f64>,
    pub n_d: f64,
    pub n_l: f64,
    pub subspace: Vec<Vec<f64>>,
    pub interval: [f64; 2],
    pub buckets: usize,
    pub candidates: usize,
    pub weight_step: f64,
    pub split_sizes: [usize; 2],
    pub precondition_ratio: f64,
    pub warnings: Vec<String>,
}

/// Splits samples by a fair coin, estimates the top-`k` subspace from the
/// first half, and runs the low-dimensional search on the second half
/// projected onto it. `interval` bounds the projected atoms; `None` picks
/// [`default_radius`] on the projected data.
pub fn estimate_hd(
    data: &HeteroDataset,
    config: &EstimatorConfig,
    interval: Option<Interval>,
) -> Result<(AtomicDistribution, EstimateReport)> {
    config.validate()?;
    let k = config.k;
    if data.dim() < k {
        return Err(Error::invalid(format!(
            "dimension {} is below k = {k}",
            data.dim()
        )));
    }
    let (first, second) = split(data, config.seed)?;

    let cov = weighted_covariance(&first)?;
    let mut subspace = top_k_subspace(&cov, k)?;
    let alpha = weight_scheme(&first.sigmas(), 4)?.weights;
    orient(&mut subspace, &first, &alpha);

    let projected = second.map_linear(&subspace.basis)?;
    let interval = match interval {
        Some(iv) => iv,
        None => {
            let net = crate::distributions::sphere_net(
                k,
                config.net_extra_directions,
                derive_seed(config.seed, NET_STREAM),
            )?;
            Interval::symmetric(default_radius(&projected, net.directions()))?
        }
    };
    let (low, report) = low_dim_estimate(&projected, config, &interval)?;
    let atoms = low.atoms().iter().map(|a| subspace.lift(a)).collect();
    let estimate = AtomicDistribution::normalized(data.dim(), atoms, low.weights().to_vec())?;

    let EffectiveSampleSizes { n_d, n_l } = effective_sample_sizes(&data.sigmas(), k)?;
    let report = EstimateReport {
        w1_residuals: report
            .w1_residuals
            .iter()
            .enumerate()
            .map(|(i, &w)| (format!("{i:03}"), w))
            .collect(),
        moment_residuals: report.directions.moment_residuals.clone(),
        n_d,
        n_l,
        subspace: subspace.basis.clone(),
        interval: [interval.lo, interval.hi],
        buckets: report.directions.buckets,
        candidates: report.candidates,
        weight_step: report.weight_step,
        split_sizes: [first.len(), second.len()],
        precondition_ratio: report.directions.precondition_ratio,
        warnings: report.directions.warnings.clone(),
    };
    Ok((estimate, report))
}

/// Fair-coin split; retries with a fresh stream when a half comes out empty.
fn split(data: &HeteroDataset, seed: u64) -> Result<(HeteroDataset, HeteroDataset)> {
    for attempt in 0..SPLIT_ATTEMPTS {
        let mut rng = substream(seed, SPLIT_STREAM + 16 * attempt as u64);
        let mut a = Vec::new();
        let mut b = Vec::new();
        for s in data.samples() {
            if rng.random::<bool>() {
                a.push(s.clone());
            } else {
                b.push(s.clone());
            }
        }
        if !a.is_empty() && !b.is_empty() {
            return Ok((
                HeteroDataset::new(data.dim(), a)?,
                HeteroDataset::new(data.dim(), b)?,
            ));
        }
    }
    Err(Error::SplitFailure {
        attempts: SPLIT_ATTEMPTS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{sample_mixture, sphere_net};
    use proptest::prelude::*;

    #[test]
    fn greedy_examples() {
        let p = greedy_partition(&[1.0; 8], 2).unwrap();
        assert_eq!(p.assignment, vec![0, 1, 0, 1, 0, 1, 0, 1]);
        assert_eq!(p.bucket_sums(&[1.0; 8]), vec![4.0, 4.0]);
        let w = [3.0, 1.0, 1.0, 1.0];
        let p = greedy_partition(&w, 2).unwrap();
        assert_eq!(p.bucket_sums(&w), vec![3.0, 3.0]);
        assert!(greedy_partition(&w, 0).is_err());
    }

    #[test]
    fn enumerators() {
        assert_eq!(multisets(3, 2).len(), 6);
        assert_eq!(multisets(4, 3).len(), 20);
        assert_eq!(compositions(5, 3).len(), 21);
        assert!(compositions(4, 2)
            .iter()
            .all(|c| c.iter().sum::<usize>() == 4));
        assert_eq!(binomial(5, 2), 10.0);
    }

    #[test]
    fn consensus_selection() {
        let d = AtomicDistribution::on_line(&[0.1, 0.4], &[0.5, 0.5]).unwrap();
        assert_eq!(select_majority(&vec![d.clone(); 5]).unwrap(), 0);
        let far = AtomicDistribution::on_line(&[3.0], &[1.0]).unwrap();
        let set = vec![far.clone(), d.clone(), d.clone(), far, d];
        assert_eq!(select_majority(&set).unwrap(), 1);
    }

    #[test]
    fn single_atom_ddm_is_a_weighted_mean() {
        let truth = AtomicDistribution::on_line(&[0.5], &[1.0]).unwrap();
        let data = sample_mixture(&truth, &vec![1.0; 10_000], 3).unwrap();
        let iv = Interval::symmetric(4.0).unwrap();
        let est = ddm_1d(&data.pairs().unwrap(), 1, &iv).unwrap();
        assert_eq!(est.k(), 1);
        assert!((est.atoms()[0][0] - 0.5).abs() < 0.05);
    }

    #[test]
    fn covariance_examples() {
        let data = HeteroDataset::new(
            3,
            vec![
                crate::NoisySample {
                    value: vec![1.0, 0.0, 0.0],
                    sigma: 1.0,
                },
                crate::NoisySample {
                    value: vec![-1.0, 0.0, 0.0],
                    sigma: 1.0,
                },
            ],
        )
        .unwrap();
        let cov = weighted_covariance(&data).unwrap();
        assert_eq!(cov.sigma_bar_sq, 1.0);
        assert_eq!(
            cov.matrix,
            DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.0, -1.0, -1.0]))
        );

        let origin = HeteroDataset::new(
            2,
            vec![
                crate::NoisySample {
                    value: vec![0.0, 0.0],
                    sigma: 1.0
                };
                4
            ],
        )
        .unwrap();
        assert_eq!(
            weighted_covariance(&origin).unwrap().matrix,
            -DMatrix::<f64>::identity(2, 2)
        );
    }

    #[test]
    fn top_k_of_diagonal() {
        let cov = WeightedCovariance {
            matrix: DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 3.0, 2.0])),
            sigma_bar_sq: 0.0,
        };
        let s = top_k_subspace(&cov, 2).unwrap();
        assert!((s.basis[0][1].abs() - 1.0).abs() < 1e-12);
        assert!((s.basis[1][2].abs() - 1.0).abs() < 1e-12);
        assert!(top_k_subspace(&cov, 4).is_err());
    }

    #[test]
    fn one_atom_search_returns_axis_estimate() {
        let truth = AtomicDistribution::on_line(&[0.3], &[1.0]).unwrap();
        let data = sample_mixture(&truth, &vec![1.0; 2_000], 1).unwrap();
        let cfg = EstimatorConfig {
            k: 1,
            ..Default::default()
        };
        let iv = Interval::symmetric(3.0).unwrap();
        let (est, report) = low_dim_estimate(&data, &cfg, &iv).unwrap();
        assert_eq!(est.k(), 1);
        assert_eq!(
            est.atoms()[0][0],
            report.directions.estimates[0].atoms()[0][0]
        );
    }

    #[test]
    fn planted_direction_estimates_are_recovered() {
        let truth =
            AtomicDistribution::new(2, vec![vec![0.5, -0.2], vec![-0.3, 0.6]], vec![0.4, 0.6])
                .unwrap();
        let net = sphere_net(2, 16, 4).unwrap();
        let exact: Vec<AtomicDistribution> =
            net.directions().iter().map(|v| truth.project(v)).collect();
        let cfg = EstimatorConfig {
            k: 2,
            weight_net_step: 0.05,
            ..Default::default()
        };
        // Large n pins the weight lattice at the 0.05 floor, which contains (0.4, 0.6).
        let (est, residuals, _, step) =
            search_candidates(&net, &exact, &cfg, usize::MAX / 2).unwrap();
        assert_eq!(step, 0.05);
        assert!(residuals.iter().all(|&r| r < 1e-12), "{residuals:?}");
        assert!(crate::distributions::wasserstein1(&est, &truth).unwrap() < 1e-12);
    }

    #[test]
    fn candidate_cap_is_enforced() {
        let net = sphere_net(3, 0, 0).unwrap();
        let est = AtomicDistribution::on_line(&[-1.0, 0.0, 1.0], &[0.3, 0.3, 0.4]).unwrap();
        let cfg = EstimatorConfig {
            k: 3,
            candidate_cap: 100,
            ..Default::default()
        };
        let err = search_candidates(&net, &vec![est; 3], &cfg, 1000).unwrap_err();
        assert!(matches!(err, Error::CapacityExceeded { cap: 100, .. }));
    }

    proptest! {
        #[test]
        fn partition_meets_its_guarantee(
            raw in prop::collection::vec(0.0f64..1.0, 64..400),
            m in 1usize..8,
        ) {
            let total: f64 = raw.iter().sum();
            let cap = total / (4.0 * m as f64);
            prop_assume!(total > 0.0);
            let w: Vec<f64> = raw.iter().map(|x| x.min(cap)).collect();
            let total: f64 = w.iter().sum();
            prop_assume!(w.iter().all(|&x| x <= total / (4.0 * m as f64)));
            let p = greedy_partition(&w, m).unwrap();
            for s in p.bucket_sums(&w) {
                prop_assert!(s >= total / (2.0 * m as f64) - 1e-12);
            }
        }
    }
}
