//! Atomic distributions, heterogeneous-noise datasets and exact
//! Wasserstein-1 distances between finitely supported measures.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::task_rng;

/// Tolerance on the weight simplex.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;
/// Atoms closer than this are treated as the same point when comparing measures.
pub const ATOM_MERGE_TOL: f64 = 1e-12;
/// Default cap on `k_a * k_b` for the exact transport solver.
pub const DEFAULT_TRANSPORT_CAP: usize = 400;

/// A closed interval `[lo, hi]` with `lo < hi`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::invalid(format!(
                "interval [{lo}, {hi}] is empty or not finite"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn symmetric(radius: f64) -> Result<Self> {
        Self::new(-radius, radius)
    }

    pub fn contains(&self, x: f64, tol: f64) -> bool {
        x >= self.lo - tol && x <= self.hi + tol
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }
}

#[derive(Deserialize)]
struct RawDistribution {
    dim: usize,
    atoms: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

/// A probability measure on `R^dim` supported on `k >= 1` points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDistribution")]
pub struct AtomicDistribution {
    dim: usize,
    atoms: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl TryFrom<RawDistribution> for AtomicDistribution {
    type Error = Error;

    fn try_from(raw: RawDistribution) -> Result<Self> {
        AtomicDistribution::new(raw.dim, raw.atoms, raw.weights)
    }
}

impl AtomicDistribution {
    /// Validating constructor: weights must already lie on the simplex.
    pub fn new(dim: usize, atoms: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        Self::check_shape(dim, &atoms, &weights)?;
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::invalid(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(Self {
            dim,
            atoms,
            weights,
        })
    }

    /// Builds a distribution from nonnegative weights with positive total,
    /// rescaling them onto the simplex.
    pub fn normalized(dim: usize, atoms: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        Self::check_shape(dim, &atoms, &weights)?;
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::invalid("weights have zero total mass"));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self {
            dim,
            atoms,
            weights,
        })
    }

    fn check_shape(dim: usize, atoms: &[Vec<f64>], weights: &[f64]) -> Result<()> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        if atoms.is_empty() {
            return Err(Error::invalid("a distribution needs at least one atom"));
        }
        if atoms.len() != weights.len() {
            return Err(Error::invalid(format!(
                "{} atoms but {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        for a in atoms {
            if a.len() != dim {
                return Err(Error::invalid(format!(
                    "atom of dimension {} in a {dim}-d distribution",
                    a.len()
                )));
            }
            if a.iter().any(|c| !c.is_finite()) {
                return Err(Error::invalid("atom coordinates must be finite"));
            }
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("weights must be finite and nonnegative"));
        }
        Ok(())
    }

    pub fn dirac(point: Vec<f64>) -> Result<Self> {
        let dim = point.len();
        Self::new(dim, vec![point], vec![1.0])
    }

    /// Uniform weights over the given points.
    pub fn uniform(points: Vec<Vec<f64>>) -> Result<Self> {
        let dim = points.first().map(Vec::len).unwrap_or(0);
        let k = points.len();
        Self::normalized(dim, points, vec![1.0; k])
    }

    /// One-dimensional distribution from scalar atoms.
    pub fn on_line(atoms: &[f64], weights: &[f64]) -> Result<Self> {
        Self::normalized(
            1,
            atoms.iter().map(|&a| vec![a]).collect(),
            weights.to_vec(),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> usize {
        self.atoms.len()
    }

    pub fn atoms(&self) -> &[Vec<f64>] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Scalar atoms of a one-dimensional distribution.
    pub fn scalar_atoms(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a[0]).collect()
    }

    /// Largest atom norm.
    pub fn radius(&self) -> f64 {
        self.atoms.iter().map(|a| norm(a)).fold(0.0, f64::max)
    }

    /// Pushforward under `x -> <x, v>`.
    pub fn project(&self, v: &[f64]) -> AtomicDistribution {
        assert_eq!(
            v.len(),
            self.dim,
            "projection direction has wrong dimension"
        );
        AtomicDistribution {
            dim: 1,
            atoms: self.atoms.iter().map(|a| vec![dot(a, v)]).collect(),
            weights: self.weights.clone(),
        }
    }

    /// Pushforward under the linear map `x -> M x` with `M` given by rows.
    pub fn map_linear(&self, rows: &[Vec<f64>]) -> Result<AtomicDistribution> {
        if rows.is_empty() || rows.iter().any(|r| r.len() != self.dim) {
            return Err(Error::invalid(
                "linear map does not match distribution dimension",
            ));
        }
        let atoms = self
            .atoms
            .iter()
            .map(|a| rows.iter().map(|r| dot(r, a)).collect())
            .collect();
        Ok(AtomicDistribution {
            dim: rows.len(),
            atoms,
            weights: self.weights.clone(),
        })
    }

    /// Merges atoms within [`ATOM_MERGE_TOL`] and drops zero-weight atoms.
    pub fn merged(&self) -> AtomicDistribution {
        let mut order: Vec<usize> = (0..self.k()).filter(|&i| self.weights[i] > 0.0).collect();
        order.sort_by(|&i, &j| lex_cmp(&self.atoms[i], &self.atoms[j]));
        let mut atoms: Vec<Vec<f64>> = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        for i in order {
            let a = &self.atoms[i];
            match atoms.iter().position(|b| dist(a, b) <= ATOM_MERGE_TOL) {
                Some(j) => weights[j] += self.weights[i],
                None => {
                    atoms.push(a.clone());
                    weights.push(self.weights[i]);
                }
            }
        }
        AtomicDistribution {
            dim: self.dim,
            atoms,
            weights,
        }
    }

    pub(crate) fn cumulative_weights(&self) -> Vec<f64> {
        cumulative(&self.weights)
    }
}

/// One noisy observation and the standard deviation of its noise.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisySample {
    pub value: Vec<f64>,
    pub sigma: f64,
}

/// Samples that each carry their own noise level.
#[derive(Clone, Debug, PartialEq)]
pub struct HeteroDataset {
    dim: usize,
    samples: Vec<NoisySample>,
}

impl HeteroDataset {
    pub fn new(dim: usize, samples: Vec<NoisySample>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        if samples.is_empty() {
            return Err(Error::invalid("dataset must be nonempty"));
        }
        for s in &samples {
            if s.value.len() != dim {
                return Err(Error::invalid("sample dimension mismatch"));
            }
            if !(s.sigma.is_finite() && s.sigma >= 0.0) {
                return Err(Error::invalid(format!("invalid noise level {}", s.sigma)));
            }
            if s.value.iter().any(|c| !c.is_finite()) {
                return Err(Error::invalid("sample values must be finite"));
            }
        }
        Ok(Self { dim, samples })
    }

    /// One-dimensional dataset from `(x, sigma)` pairs.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        Self::new(
            1,
            pairs
                .iter()
                .map(|&(x, sigma)| NoisySample {
                    value: vec![x],
                    sigma,
                })
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[NoisySample] {
        &self.samples
    }

    pub fn sigmas(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.sigma).collect()
    }

    /// `(<x_i, v>, sigma_i)` pairs. Noise stays `N(0, sigma_i^2)` along a unit `v`.
    pub fn project(&self, v: &[f64]) -> Vec<(f64, f64)> {
        self.samples
            .iter()
            .map(|s| (dot(&s.value, v), s.sigma))
            .collect()
    }

    /// `(x_i, sigma_i)` pairs of a one-dimensional dataset.
    pub fn pairs(&self) -> Result<Vec<(f64, f64)>> {
        if self.dim != 1 {
            return Err(Error::invalid("pairs() needs a one-dimensional dataset"));
        }
        Ok(self.samples.iter().map(|s| (s.value[0], s.sigma)).collect())
    }

    /// Applies `x -> M x` to every sample, keeping noise levels.
    /// Only meaningful for maps with orthonormal rows.
    pub fn map_linear(&self, rows: &[Vec<f64>]) -> Result<HeteroDataset> {
        if rows.is_empty() || rows.iter().any(|r| r.len() != self.dim) {
            return Err(Error::invalid(
                "linear map does not match dataset dimension",
            ));
        }
        let samples = self
            .samples
            .iter()
            .map(|s| NoisySample {
                value: rows.iter().map(|r| dot(r, &s.value)).collect(),
                sigma: s.sigma,
            })
            .collect();
        HeteroDataset::new(rows.len(), samples)
    }

    pub fn concat(&self, other: &HeteroDataset) -> Result<HeteroDataset> {
        if self.dim != other.dim {
            return Err(Error::invalid(
                "cannot concatenate datasets of different dimension",
            ));
        }
        let mut samples = self.samples.clone();
        samples.extend_from_slice(&other.samples);
        HeteroDataset::new(self.dim, samples)
    }
}

/// Draws `X_i ~ D * N(0, sigma_i^2 I)` for each entry of `sigmas`.
pub fn sample_mixture(
    dist: &AtomicDistribution,
    sigmas: &[f64],
    seed: u64,
) -> Result<HeteroDataset> {
    if sigmas.is_empty() {
        return Err(Error::invalid("sigmas must be nonempty"));
    }
    if let Some(s) = sigmas.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
        return Err(Error::invalid(format!(
            "noise level {s} is negative or not finite"
        )));
    }
    let mut rng = task_rng(seed);
    let cum = dist.cumulative_weights();
    let samples = sigmas
        .iter()
        .map(|&sigma| {
            let j = pick_index(rng.random::<f64>(), &cum);
            let value = dist.atoms[j]
                .iter()
                .map(|&m| {
                    let z: f64 = rng.sample(StandardNormal);
                    m + sigma * z
                })
                .collect();
            NoisySample { value, sigma }
        })
        .collect();
    HeteroDataset::new(dist.dim, samples)
}

/// Adds independent noise to every sample below `sigma_floor` so that its
/// total noise level becomes exactly `sigma_floor`.
pub fn lift_noise(data: &HeteroDataset, sigma_floor: f64, seed: u64) -> Result<HeteroDataset> {
    if !(sigma_floor.is_finite() && sigma_floor > 0.0) {
        return Err(Error::invalid(format!(
            "noise floor {sigma_floor} must be positive"
        )));
    }
    let mut rng = task_rng(seed);
    let samples = data
        .samples
        .iter()
        .map(|s| {
            if s.sigma >= sigma_floor {
                return s.clone();
            }
            let extra = (sigma_floor * sigma_floor - s.sigma * s.sigma).sqrt();
            let value = s
                .value
                .iter()
                .map(|&x| {
                    let z: f64 = rng.sample(StandardNormal);
                    x + extra * z
                })
                .collect();
            NoisySample {
                value,
                sigma: sigma_floor,
            }
        })
        .collect();
    HeteroDataset::new(data.dim, samples)
}

/// Exact W1 between one-dimensional atomic distributions, as the integral of
/// `|F_a - F_b|` (the quantile coupling is optimal on the line).
pub fn wasserstein1_1d(a: &AtomicDistribution, b: &AtomicDistribution) -> Result<f64> {
    if a.dim != 1 || b.dim != 1 {
        return Err(Error::invalid(
            "wasserstein1_1d needs one-dimensional inputs",
        ));
    }
    Ok(w1_line(
        &a.scalar_atoms(),
        a.weights(),
        &b.scalar_atoms(),
        b.weights(),
    ))
}

/// W1 on the line for raw atom/weight slices.
pub(crate) fn w1_line(xa: &[f64], wa: &[f64], xb: &[f64], wb: &[f64]) -> f64 {
    let mut events: Vec<(f64, f64)> = Vec::with_capacity(xa.len() + xb.len());
    events.extend(xa.iter().zip(wa).map(|(&x, &w)| (x, w)));
    events.extend(xb.iter().zip(wb).map(|(&x, &w)| (x, -w)));
    events.sort_by(|p, q| p.0.total_cmp(&q.0));
    let mut total = 0.0;
    let mut diff = 0.0;
    for pair in events.windows(2) {
        diff += pair[0].1;
        total += diff.abs() * (pair[1].0 - pair[0].0);
    }
    total
}

/// Exact W1 under the Euclidean ground metric, with the default size cap.
pub fn wasserstein1(a: &AtomicDistribution, b: &AtomicDistribution) -> Result<f64> {
    wasserstein1_capped(a, b, DEFAULT_TRANSPORT_CAP)
}

/// Exact W1 solving the transport problem by successive shortest paths.
pub fn wasserstein1_capped(
    a: &AtomicDistribution,
    b: &AtomicDistribution,
    cap: usize,
) -> Result<f64> {
    if a.dim != b.dim {
        return Err(Error::invalid(format!(
            "dimensions differ: {} vs {}",
            a.dim, b.dim
        )));
    }
    let size = a.k() * b.k();
    if size > cap {
        return Err(Error::CapacityExceeded {
            what: "transport problem size k_a * k_b",
            count: size,
            cap,
        });
    }
    if a.dim == 1 {
        return wasserstein1_1d(a, b);
    }
    let cost: Vec<Vec<f64>> = a
        .atoms
        .iter()
        .map(|x| b.atoms.iter().map(|y| dist(x, y)).collect())
        .collect();
    Ok(transport_cost(&a.weights, &b.weights, &cost))
}

/// Minimum-cost transport between `supply` and `demand` (equal total mass)
/// by successive shortest augmenting paths on the residual graph.
pub(crate) fn transport_cost(supply: &[f64], demand: &[f64], cost: &[Vec<f64>]) -> f64 {
    const EPS: f64 = 1e-15;
    let m = supply.len();
    let n = demand.len();
    let nodes = m + n;
    let mut s = supply.to_vec();
    let mut d = demand.to_vec();
    let mut flow = vec![vec![0.0; n]; m];

    // Each augmentation empties a source, a sink or a backward arc.
    let max_rounds = 4 * (m * n + m + n) + 16;
    for _ in 0..max_rounds {
        if s.iter().all(|&x| x <= EPS) || d.iter().all(|&x| x <= EPS) {
            break;
        }
        // Bellman-Ford from every source that still has supply.
        let mut distv = vec![f64::INFINITY; nodes];
        let mut parent = vec![usize::MAX; nodes];
        for i in 0..m {
            if s[i] > EPS {
                distv[i] = 0.0;
            }
        }
        for _ in 0..nodes {
            let mut changed = false;
            for i in 0..m {
                if distv[i].is_finite() {
                    for j in 0..n {
                        let nd = distv[i] + cost[i][j];
                        if nd < distv[m + j] - 1e-15 {
                            distv[m + j] = nd;
                            parent[m + j] = i;
                            changed = true;
                        }
                    }
                }
            }
            for j in 0..n {
                if distv[m + j].is_finite() {
                    for i in 0..m {
                        if flow[i][j] > EPS {
                            let nd = distv[m + j] - cost[i][j];
                            if nd < distv[i] - 1e-15 {
                                distv[i] = nd;
                                parent[i] = m + j;
                                changed = true;
                            }
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let sink = (0..n)
            .filter(|&j| d[j] > EPS && distv[m + j].is_finite())
            .min_by(|&x, &y| distv[m + x].total_cmp(&distv[m + y]).then(x.cmp(&y)));
        let Some(sink) = sink else { break };

        // Walk back to find the bottleneck.
        let mut amount = d[sink];
        let mut v = m + sink;
        while parent[v] != usize::MAX {
            let u = parent[v];
            if u >= m {
                amount = amount.min(flow[v][u - m]);
            }
            v = u;
        }
        amount = amount.min(s[v]);
        let source = v;

        let mut v = m + sink;
        while parent[v] != usize::MAX {
            let u = parent[v];
            if u < m {
                flow[u][v - m] += amount;
            } else {
                flow[v][u - m] -= amount;
            }
            v = u;
        }
        s[source] -= amount;
        d[sink] -= amount;
    }

    let mut total = 0.0;
    for i in 0..m {
        for j in 0..n {
            total += flow[i][j].max(0.0) * cost[i][j];
        }
    }
    total
}

/// Directions used to slice distributions: canonical basis first, then
/// random unit vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphereNet {
    directions: Vec<Vec<f64>>,
}

impl SphereNet {
    pub fn from_directions(directions: Vec<Vec<f64>>) -> Result<Self> {
        let dim = directions.first().map(Vec::len).unwrap_or(0);
        if dim == 0 {
            return Err(Error::invalid("a net needs at least one direction"));
        }
        let mut out = Vec::with_capacity(directions.len());
        for v in directions {
            if v.len() != dim {
                return Err(Error::invalid("net directions must share a dimension"));
            }
            let nv = norm(&v);
            if !(nv > 0.0 && nv.is_finite()) {
                return Err(Error::invalid("net directions must be nonzero"));
            }
            out.push(v.iter().map(|c| c / nv).collect());
        }
        Ok(Self { directions: out })
    }

    pub fn dim(&self) -> usize {
        self.directions[0].len()
    }

    pub fn directions(&self) -> &[Vec<f64>] {
        &self.directions
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }
}

/// Canonical basis of `R^dim` followed by `extra_directions` uniform unit
/// vectors. A stand-in for a metric net of the sphere, whose faithful size
/// grows exponentially with the dimension.
pub fn sphere_net(dim: usize, extra_directions: usize, seed: u64) -> Result<SphereNet> {
    if dim == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    let mut directions: Vec<Vec<f64>> = (0..dim)
        .map(|i| {
            let mut e = vec![0.0; dim];
            e[i] = 1.0;
            e
        })
        .collect();
    let mut rng = task_rng(seed);
    while directions.len() < dim + extra_directions {
        let g: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let ng = norm(&g);
        if ng > 1e-8 {
            directions.push(g.iter().map(|c| c / ng).collect());
        }
    }
    Ok(SphereNet { directions })
}

/// `(sup_v W1(a_v, b_v), 16 k^2 sqrt(d) * sup_v W1(a_v, b_v))` over the net.
pub fn sliced_w1_bounds(
    a: &AtomicDistribution,
    b: &AtomicDistribution,
    net: &SphereNet,
    k: usize,
) -> Result<(f64, f64)> {
    if a.dim != net.dim() || b.dim != net.dim() {
        return Err(Error::invalid(
            "net and distributions have different dimensions",
        ));
    }
    let mut lower: f64 = 0.0;
    for v in net.directions() {
        lower = lower.max(wasserstein1_1d(&a.project(v), &b.project(v))?);
    }
    let factor = 16.0 * (k * k) as f64 * (a.dim as f64).sqrt();
    Ok((lower, factor * lower))
}

pub(crate) fn cumulative(weights: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

/// Index `j` with `cum[j-1] <= u * total < cum[j]`; skips zero-weight entries.
pub(crate) fn pick_index(u: f64, cum: &[f64]) -> usize {
    let total = *cum.last().expect("nonempty weights");
    let target = u * total;
    match cum.iter().position(|&c| target < c) {
        Some(j) => j,
        None => cum.iter().rposition(|&c| c > 0.0).unwrap_or(cum.len() - 1),
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    std::cmp::Ordering::Equal
}
