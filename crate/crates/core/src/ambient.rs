//! Diffusion-side quantities in closed form for atomic mixtures.
//!
//! Noise follows the variance-exploding schedule `sigma(t) = t`, so a
//! diffusion time and its noise level are the same number; functions take
//! noise levels directly. For `D * N(0, sigma^2 I)` the optimal denoiser
//! `E[X_0 | X_t = x]` is a softmax-weighted average of the atoms, which lets
//! the losses, the posterior-mean identities and the samplers be checked exactly.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::distributions::{cumulative, pick_index, AtomicDistribution, HeteroDataset};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, substream, task_rng, TaskRng};

/// Noise levels visited by the samplers, from `t_max` down to 0.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    grid: Vec<f64>,
}

pub const DEFAULT_STEPS: usize = 128;
pub const DEFAULT_SIGMA_MIN: f64 = 1e-3;

impl NoiseSchedule {
    /// `steps` geometrically spaced levels from `t_max` to `sigma_min`,
    /// followed by a final level 0 (an exact denoising step).
    pub fn geometric(t_max: f64, steps: usize, sigma_min: f64) -> Result<Self> {
        if !(t_max.is_finite() && sigma_min > 0.0 && t_max > sigma_min) {
            return Err(Error::invalid(format!(
                "need t_max > sigma_min > 0, got {t_max} and {sigma_min}"
            )));
        }
        if steps == 0 {
            return Err(Error::invalid("at least one step is needed"));
        }
        let mut grid: Vec<f64> = if steps == 1 {
            vec![t_max]
        } else {
            let ratio = (sigma_min / t_max).ln() / (steps - 1) as f64;
            (0..steps)
                .map(|i| t_max * (ratio * i as f64).exp())
                .collect()
        };
        grid.push(0.0);
        Ok(Self { grid })
    }

    /// Default schedule for a target: `t_max = max(8 R, 1)`.
    pub fn for_distribution(dist: &AtomicDistribution, steps: usize) -> Result<Self> {
        Self::geometric((8.0 * dist.radius()).max(1.0), steps, DEFAULT_SIGMA_MIN)
    }

    /// Explicit levels; must be strictly decreasing and nonnegative.
    pub fn from_levels(grid: Vec<f64>) -> Result<Self> {
        if grid.len() < 2 {
            return Err(Error::invalid("a schedule needs at least two levels"));
        }
        if grid.windows(2).any(|w| !(w[0] > w[1]))
            || grid.iter().any(|s| !(*s >= 0.0) || !s.is_finite())
        {
            return Err(Error::invalid(
                "levels must be finite, nonnegative and strictly decreasing",
            ));
        }
        Ok(Self { grid })
    }

    pub fn sigma_of_t(&self, t: f64) -> f64 {
        t
    }

    pub fn t_max(&self) -> f64 {
        self.grid[0]
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Number of sampler updates.
    pub fn steps(&self) -> usize {
        self.grid.len() - 1
    }
}

/// The noise level `sigma_tn` at which samples are observed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AmbientConfig {
    pub sigma_tn: f64,
    pub t_n: f64,
}

impl AmbientConfig {
    pub fn new(sigma_tn: f64) -> Result<Self> {
        if !(sigma_tn.is_finite() && sigma_tn >= 0.0) {
            return Err(Error::invalid(format!(
                "noise level {sigma_tn} must be nonnegative"
            )));
        }
        Ok(Self {
            sigma_tn,
            t_n: sigma_tn,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DenoiserKind {
    Analytic,
    Parametric,
}

/// A map `(x, sigma) -> predicted clean point`.
pub trait Denoiser: Sync {
    fn denoise(&self, x: &[f64], sigma: f64) -> Vec<f64>;

    fn kind(&self) -> DenoiserKind {
        DenoiserKind::Parametric
    }
}

/// The posterior mean of a mixture, exact for that mixture.
#[derive(Clone, Debug)]
pub struct GmmDenoiser {
    pub dist: AtomicDistribution,
    pub kind: DenoiserKind,
}

impl GmmDenoiser {
    pub fn analytic(dist: AtomicDistribution) -> Self {
        Self {
            dist,
            kind: DenoiserKind::Analytic,
        }
    }
}

impl Denoiser for GmmDenoiser {
    fn denoise(&self, x: &[f64], sigma: f64) -> Vec<f64> {
        gmm_posterior_mean(&self.dist, sigma, x)
    }

    fn kind(&self) -> DenoiserKind {
        self.kind
    }
}

/// Wraps a closure as a parametric denoiser.
pub struct FnDenoiser<F>(pub F);

impl<F: Fn(&[f64], f64) -> Vec<f64> + Sync> Denoiser for FnDenoiser<F> {
    fn denoise(&self, x: &[f64], sigma: f64) -> Vec<f64> {
        (self.0)(x, sigma)
    }
}

/// Posterior weights of the atoms given `x` at noise level `sigma`, by
/// log-sum-exp. At `sigma = 0` all mass goes to the nearest atom.
fn posterior_weights(dist: &AtomicDistribution, sigma: f64, x: &[f64]) -> Vec<f64> {
    let sq: Vec<f64> = dist
        .atoms()
        .iter()
        .map(|a| a.iter().zip(x).map(|(m, v)| (v - m) * (v - m)).sum())
        .collect();
    let w = dist.weights();
    if sigma == 0.0 {
        let mut best = usize::MAX;
        for i in 0..sq.len() {
            if w[i] > 0.0 && (best == usize::MAX || sq[i] < sq[best]) {
                best = i;
            }
        }
        return (0..sq.len())
            .map(|i| if i == best { 1.0 } else { 0.0 })
            .collect();
    }
    let inv = 1.0 / (2.0 * sigma * sigma);
    let logits: Vec<f64> = sq
        .iter()
        .zip(w)
        .map(|(d, &wi)| {
            if wi > 0.0 {
                wi.ln() - d * inv
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

/// `E[X_0 | X_sigma = x]` for `X_0 ~ dist`, `X_sigma = X_0 + sigma Z`.
pub fn gmm_posterior_mean(dist: &AtomicDistribution, sigma: f64, x: &[f64]) -> Vec<f64> {
    let post = posterior_weights(dist, sigma, x);
    let mut out = vec![0.0; dist.dim()];
    for (p, a) in post.iter().zip(dist.atoms()) {
        for (o, m) in out.iter_mut().zip(a) {
            *o += p * m;
        }
    }
    out
}

/// `E[X_tn | X_t = x]` for the same mixture observed at two noise levels
/// `sigma_tn < sigma_t` along one diffusion path.
pub fn gmm_intermediate_mean(
    dist: &AtomicDistribution,
    sigma_t: f64,
    sigma_tn: f64,
    x: &[f64],
) -> Vec<f64> {
    let post = posterior_weights(dist, sigma_t, x);
    let ratio = (sigma_tn * sigma_tn) / (sigma_t * sigma_t);
    let mut out = vec![0.0; dist.dim()];
    for (p, a) in post.iter().zip(dist.atoms()) {
        for ((o, m), xv) in out.iter_mut().zip(a).zip(x) {
            *o += p * (m + ratio * (xv - m));
        }
    }
    out
}

/// Clean-data posterior mean from the posterior mean at a lower noise level:
/// `sigma_t^2/(sigma_t^2 - sigma_tn^2) h_tn(x) - sigma_tn^2/(sigma_t^2 - sigma_tn^2) x`.
pub fn tweedie_elevated<F>(h_tn: F, sigma_t: f64, sigma_tn: f64, x: &[f64]) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    if !(sigma_tn >= 0.0 && sigma_t > sigma_tn) {
        return Err(Error::invalid(format!(
            "need sigma_t > sigma_tn >= 0, got {sigma_t} and {sigma_tn}"
        )));
    }
    let (st2, sn2) = (sigma_t * sigma_t, sigma_tn * sigma_tn);
    let gap = st2 - sn2;
    let h = h_tn(x);
    Ok(h.iter()
        .zip(x)
        .map(|(hv, xv)| st2 / gap * hv - sn2 / gap * xv)
        .collect())
}

/// Largest relative error of the elevation identity over random mixtures.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IdentityCheck {
    pub trials: usize,
    pub max_rel_err: f64,
}

/// Checks `tweedie_elevated(E[X_tn | X_t]) = E[X_0 | X_t]` on random
/// mixtures, noise levels and query points. The error of a trial is
/// `|lhs - rhs| / max(|rhs|, 1)`.
pub fn posterior_identity_check(trials: usize, seed: u64) -> Result<IdentityCheck> {
    let mut max_rel_err: f64 = 0.0;
    for trial in 0..trials {
        let mut rng = substream(seed, trial as u64);
        let dim = rng.random_range(1..=4usize);
        let k = rng.random_range(1..=4usize);
        let atoms: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let weights: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
        let dist = AtomicDistribution::normalized(dim, atoms, weights)?;
        let sigma_tn = if trial % 4 == 0 {
            0.0
        } else {
            rng.random_range(0.0..1.5)
        };
        let sigma_t = sigma_tn + rng.random_range(0.05..3.0);
        let center = dist.atoms()[rng.random_range(0..k)].clone();
        let x: Vec<f64> = center
            .iter()
            .map(|c| c + sigma_t * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let lhs = tweedie_elevated(
            |y| gmm_intermediate_mean(&dist, sigma_t, sigma_tn, y),
            sigma_t,
            sigma_tn,
            &x,
        )?;
        let rhs = gmm_posterior_mean(&dist, sigma_t, &x);
        let err = lhs
            .iter()
            .zip(&rhs)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let scale = rhs.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
        max_rel_err = max_rel_err.max(err / scale);
    }
    Ok(IdentityCheck {
        trials,
        max_rel_err,
    })
}

fn gaussian(rng: &mut TaskRng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `|h(x_t, t) - x_0|^2` with `t = T (1 - u)` and `x_t = x_0 + t z`.
fn clean_term(h: &dyn Denoiser, x0: &[f64], t_max: f64, rng: &mut TaskRng) -> f64 {
    let t = t_max * (1.0 - rng.random::<f64>());
    let z = gaussian(rng, x0.len());
    let xt: Vec<f64> = x0.iter().zip(&z).map(|(x, zz)| x + t * zz).collect();
    sq_dist(&h.denoise(&xt, t), x0)
}

/// `|(1 - s_n^2/s_t^2) h(x_t, t) + s_n^2/s_t^2 x_t - x_tn|^2` with
/// `t = t_n + (T - t_n)(1 - u)` and `x_t = x_tn + sqrt(s_t^2 - s_n^2) z`.
fn noisy_term(h: &dyn Denoiser, x_tn: &[f64], sigma_tn: f64, t_max: f64, rng: &mut TaskRng) -> f64 {
    let t = sigma_tn + (t_max - sigma_tn) * (1.0 - rng.random::<f64>());
    let z = gaussian(rng, x_tn.len());
    let (st2, sn2) = (t * t, sigma_tn * sigma_tn);
    let lift = (st2 - sn2).max(0.0).sqrt();
    let xt: Vec<f64> = x_tn.iter().zip(&z).map(|(x, zz)| x + lift * zz).collect();
    let hx = h.denoise(&xt, t);
    let (a, b) = ((st2 - sn2) / st2, sn2 / st2);
    x_tn.iter()
        .zip(&hx)
        .zip(&xt)
        .map(|((target, hv), xv)| {
            let p = a * hv + b * xv;
            (p - target) * (p - target)
        })
        .sum()
}

/// Averages `term(draw_index, rng)` over independent per-draw streams.
fn mc_mean<F>(draws: usize, seed: u64, term: F) -> Result<f64>
where
    F: Fn(&mut TaskRng) -> f64 + Sync,
{
    if draws == 0 {
        return Err(Error::invalid("at least one Monte-Carlo draw is needed"));
    }
    let values: Vec<f64> = (0..draws)
        .into_par_iter()
        .map(|d| term(&mut substream(seed, d as u64)))
        .collect();
    Ok(values.iter().sum::<f64>() / draws as f64)
}

fn uniform_index(u: f64, n: usize) -> usize {
    ((u * n as f64) as usize).min(n - 1)
}

/// Denoising score-matching loss against the mixture itself:
/// `E_{x_0 ~ D} E_{t ~ U(0, T]} E_z |h(x_0 + t z, t) - x_0|^2`.
pub fn dsm_loss(
    h: &dyn Denoiser,
    dist: &AtomicDistribution,
    schedule: &NoiseSchedule,
    mc_draws: usize,
    seed: u64,
) -> Result<f64> {
    let cum = cumulative(dist.weights());
    let t_max = schedule.t_max();
    mc_mean(mc_draws, seed, |rng| {
        let x0 = &dist.atoms()[pick_index(rng.random::<f64>(), &cum)];
        clean_term(h, x0, t_max, rng)
    })
}

/// The same loss with `x_0` drawn uniformly from a clean sample set.
pub fn dsm_loss_empirical(
    h: &dyn Denoiser,
    clean: &HeteroDataset,
    schedule: &NoiseSchedule,
    mc_draws: usize,
    seed: u64,
) -> Result<f64> {
    mixed_loss(
        h,
        Some(clean),
        None,
        &AmbientConfig::new(0.0)?,
        schedule,
        mc_draws,
        seed,
    )
}

/// Ambient denoising loss for samples observed at noise level `sigma_tn`:
/// the denoiser is trained only for `t > t_n`, through the affine map that
/// turns a clean-data prediction into a prediction of `x_tn`.
pub fn ambient_dsm_loss(
    h: &dyn Denoiser,
    noisy: &HeteroDataset,
    cfg: &AmbientConfig,
    schedule: &NoiseSchedule,
    mc_draws: usize,
    seed: u64,
) -> Result<f64> {
    mixed_loss(h, None, Some(noisy), cfg, schedule, mc_draws, seed)
}

/// Batch loss over the union of clean and noisy samples: each draw picks a
/// sample uniformly from the union, then applies the clean loss with
/// `t ~ U(0, T]` or the ambient loss with `t ~ U(t_n, T]`.
pub fn mixed_loss(
    h: &dyn Denoiser,
    clean: Option<&HeteroDataset>,
    noisy: Option<&HeteroDataset>,
    cfg: &AmbientConfig,
    schedule: &NoiseSchedule,
    batch: usize,
    seed: u64,
) -> Result<f64> {
    let n_clean = clean.map_or(0, HeteroDataset::len);
    let n_noisy = noisy.map_or(0, HeteroDataset::len);
    if n_clean + n_noisy == 0 {
        return Err(Error::invalid("both sample sets are empty"));
    }
    if let Some(d) = noisy {
        if d.samples()
            .iter()
            .any(|s| (s.sigma - cfg.sigma_tn).abs() > 1e-12)
        {
            return Err(Error::invalid(format!(
                "noisy samples must all have sigma = {}",
                cfg.sigma_tn
            )));
        }
    }
    if schedule.t_max() <= cfg.sigma_tn {
        return Err(Error::invalid(
            "schedule must extend above the observed noise level",
        ));
    }
    let t_max = schedule.t_max();
    mc_mean(batch, seed, |rng| {
        let idx = uniform_index(rng.random::<f64>(), n_clean + n_noisy);
        if idx < n_clean {
            let x0 = &clean.expect("clean set present").samples()[idx].value;
            clean_term(h, x0, t_max, rng)
        } else {
            let x = &noisy.expect("noisy set present").samples()[idx - n_clean].value;
            noisy_term(h, x, cfg.sigma_tn, t_max, rng)
        }
    })
}

/// Deterministic Euler sampler of the probability-flow ODE started from
/// `x_T ~ N(0, T^2 I)`: `x <- x - (s_t - s_next)/s_t (x - h(x, s_t))`.
pub fn ode_sample(h: &dyn Denoiser, dim: usize, schedule: &NoiseSchedule, seed: u64) -> Vec<f64> {
    run_sampler(h, dim, schedule, None, seed)
}

/// Like [`ode_sample`], but stops as soon as the next level would fall below
/// `sigma_tn` and returns the denoiser's prediction at the current level.
pub fn truncated_sample(
    h: &dyn Denoiser,
    dim: usize,
    schedule: &NoiseSchedule,
    cfg: &AmbientConfig,
    seed: u64,
) -> Vec<f64> {
    run_sampler(h, dim, schedule, Some(cfg.sigma_tn), seed)
}

fn run_sampler(
    h: &dyn Denoiser,
    dim: usize,
    schedule: &NoiseSchedule,
    stop_below: Option<f64>,
    seed: u64,
) -> Vec<f64> {
    let mut rng = task_rng(seed);
    let grid = schedule.grid();
    let mut x: Vec<f64> = gaussian(&mut rng, dim)
        .into_iter()
        .map(|z| z * grid[0])
        .collect();
    for pair in grid.windows(2) {
        let (s, s_next) = (pair[0], pair[1]);
        let hx = h.denoise(&x, s);
        if stop_below.is_some_and(|floor| s_next < floor) {
            return hx;
        }
        let c = (s - s_next) / s;
        for (xv, hv) in x.iter_mut().zip(&hx) {
            *xv -= c * (*xv - hv);
        }
    }
    x
}

/// `count` independent samples, one derived seed each.
pub fn sample_many(
    h: &dyn Denoiser,
    dim: usize,
    schedule: &NoiseSchedule,
    truncate: Option<&AmbientConfig>,
    count: usize,
    seed: u64,
) -> Vec<Vec<f64>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let s = derive_seed(seed, i as u64);
            match truncate {
                Some(cfg) => truncated_sample(h, dim, schedule, cfg, s),
                None => ode_sample(h, dim, schedule, s),
            }
        })
        .collect()
}

/// Gradient-descent settings for [`fit_atoms_by_ambient_dsm`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitOptions {
    pub iters: usize,
    pub step_size: f64,
    pub mc_per_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            iters: 200,
            step_size: 0.05,
            mc_per_iter: 512,
        }
    }
}

/// Result of [`fit_atoms_by_ambient_dsm`].
#[derive(Clone, Debug)]
pub struct FitResult {
    pub dist: AtomicDistribution,
    /// Loss at the start of each iteration, on that iteration's draws.
    pub trace: Vec<f64>,
}

/// Central finite-difference step of the fitting gradient.
pub const FD_STEP: f64 = 1e-4;

/// Parameters: `k * dim` atom coordinates followed by `k` weight logits.
fn unpack(theta: &[f64], k: usize, dim: usize) -> Result<AtomicDistribution> {
    let atoms = (0..k)
        .map(|i| theta[i * dim..(i + 1) * dim].to_vec())
        .collect();
    let logits = &theta[k * dim..];
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    AtomicDistribution::normalized(dim, atoms, w)
}

/// Fits a `k`-atomic mixture by gradient descent on [`mixed_loss`], using
/// the mixture's own posterior mean as the denoiser. Each iteration draws
/// one batch of random numbers and reuses it for every loss evaluation of
/// its finite-difference gradient.
#[allow(clippy::too_many_arguments)]
pub fn fit_atoms_by_ambient_dsm(
    clean: Option<&HeteroDataset>,
    noisy: Option<&HeteroDataset>,
    k: usize,
    cfg: &AmbientConfig,
    schedule: &NoiseSchedule,
    opt: &FitOptions,
    init: Option<&AtomicDistribution>,
    seed: u64,
) -> Result<FitResult> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let dim = clean
        .or(noisy)
        .map(HeteroDataset::dim)
        .ok_or_else(|| Error::invalid("both sample sets are empty"))?;
    let mut theta: Vec<f64> = match init {
        Some(d) => {
            if d.k() != k || d.dim() != dim {
                return Err(Error::invalid(
                    "initial distribution does not match k and dimension",
                ));
            }
            let mut t: Vec<f64> = d.atoms().iter().flatten().copied().collect();
            t.extend(d.weights().iter().map(|w| w.max(1e-12).ln()));
            t
        }
        None => {
            let pool: Vec<&Vec<f64>> = clean
                .into_iter()
                .chain(noisy)
                .flat_map(|d| d.samples().iter().map(|s| &s.value))
                .collect();
            let mut rng = substream(seed, u64::MAX);
            let mut t: Vec<f64> = (0..k)
                .flat_map(|_| pool[rng.random_range(0..pool.len())].clone())
                .collect();
            t.extend(std::iter::repeat_n(0.0, k));
            t
        }
    };

    let loss_at = |theta: &[f64], batch_seed: u64| -> Result<f64> {
        let h = GmmDenoiser {
            dist: unpack(theta, k, dim)?,
            kind: DenoiserKind::Parametric,
        };
        mixed_loss(&h, clean, noisy, cfg, schedule, opt.mc_per_iter, batch_seed)
    };

    let mut trace = Vec::with_capacity(opt.iters);
    let mut initial = None;
    for iter in 0..opt.iters {
        let batch_seed = derive_seed(seed, iter as u64);
        let loss = loss_at(&theta, batch_seed)?;
        let first = *initial.get_or_insert(loss);
        if !loss.is_finite() || loss > 10.0 * first {
            return Err(Error::OptimizationDiverged {
                iteration: iter,
                loss,
                initial: first,
            });
        }
        trace.push(loss);
        let grad = fd_gradient(|t| loss_at(t, batch_seed), &theta, FD_STEP)?;
        for (p, g) in theta.iter_mut().zip(&grad) {
            *p -= opt.step_size * g;
        }
    }
    Ok(FitResult {
        dist: unpack(&theta, k, dim)?,
        trace,
    })
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn fd_gradient<F>(f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe)?;
        probe[i] = x[i] - h;
        let down = f(&probe)?;
        probe[i] = x[i];
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}
