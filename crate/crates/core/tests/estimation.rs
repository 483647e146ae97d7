//! Monte-Carlo checks of the moment estimators and the estimation pipeline.

use ambient_moments::distributions::{sample_mixture, wasserstein1, wasserstein1_1d};
use ambient_moments::estimators::{
    ddm_1d, ddm_1d_detailed, default_interval_1d, estimate_hd, low_dim_estimate,
    robust_direction_estimates, EstimatorConfig,
};
use ambient_moments::hermite::{gamma_poly, hermite, moment_variance_bound, weighted_moments};
use ambient_moments::rng::substream;
use ambient_moments::{AtomicDistribution, Interval, SphereNet};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Sample mean and its standard error.
fn mean_and_se(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut n, mut s, mut s2) = (0.0, 0.0, 0.0);
    for v in values {
        n += 1.0;
        s += v;
        s2 += v * v;
    }
    let mean = s / n;
    let var = (s2 / n - mean * mean) * n / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn hermite_polynomials_denoise_unit_gaussians() {
    let mut rng = substream(1, 0);
    let (mean, se) = mean_and_se((0..1_000_000).map(|_| {
        let z: f64 = StandardNormal.sample(&mut rng);
        hermite(3, 0.5 + z).unwrap()
    }));
    assert!((mean - 0.125).abs() <= 3.0 * se, "{mean} +- {se}");
}

#[test]
fn rescaled_polynomials_denoise_wider_gaussians() {
    let mut rng = substream(1, 1);
    let (mean, se) = mean_and_se((0..1_000_000).map(|_| {
        let z: f64 = StandardNormal.sample(&mut rng);
        gamma_poly(3, 2.0, 0.7 + 2.0 * z).unwrap()
    }));
    assert!((mean - 0.343).abs() <= 3.0 * se, "{mean} +- {se}");
}

#[test]
fn empirical_variance_respects_the_bound() {
    let mut rng = substream(1, 2);
    let vals: Vec<f64> = (0..200_000)
        .map(|_| gamma_poly(2, 1.0, StandardNormal.sample(&mut rng)).unwrap())
        .collect();
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
    assert!(
        (var - 2.0).abs() < 0.05,
        "Var(x^2 - 1) should be 2, got {var}"
    );
    assert!(var <= moment_variance_bound(2, 1.0, 0.0, 3.0));
}

fn symmetric_pair(a: f64) -> AtomicDistribution {
    AtomicDistribution::on_line(&[-a, a], &[0.5, 0.5]).unwrap()
}

#[test]
fn weighted_moments_of_a_symmetric_pair() {
    let data = sample_mixture(&symmetric_pair(1.0), &vec![1.0; 100_000], 3).unwrap();
    let m = weighted_moments(&data.pairs().unwrap(), 2).unwrap();
    // Standard errors: sqrt(Var gamma_r / n) is about 0.005, 0.008, 0.016.
    for (got, want, tol) in [
        (m.get(1), 0.0, 0.02),
        (m.get(2), 1.0, 0.04),
        (m.get(3), 0.0, 0.08),
    ] {
        assert!((got - want).abs() <= tol, "{got} vs {want}");
    }
}

#[test]
fn single_atom_is_recovered() {
    let dist = AtomicDistribution::on_line(&[0.5], &[1.0]).unwrap();
    let data = sample_mixture(&dist, &vec![1.0; 10_000], 4).unwrap();
    let pairs = data.pairs().unwrap();
    let est = ddm_1d(&pairs, 1, &default_interval_1d(&pairs).unwrap()).unwrap();
    assert_eq!(est.k(), 1);
    assert!((est.scalar_atoms()[0] - 0.5).abs() <= 0.05, "{:?}", est);
}

#[test]
fn two_atoms_are_recovered_at_unit_noise() {
    let target = symmetric_pair(0.8);
    let data = sample_mixture(&target, &vec![1.0; 100_000], 5).unwrap();
    let pairs = data.pairs().unwrap();
    let report = ddm_1d_detailed(&pairs, 2, &default_interval_1d(&pairs).unwrap()).unwrap();
    assert!(wasserstein1_1d(&report.estimate, &target).unwrap() <= 0.1);
    assert!(report.moment_residual() >= 0.0);
}

fn plane_mixture() -> AtomicDistribution {
    AtomicDistribution::new(2, vec![vec![0.6, -0.3], vec![-0.5, 0.4]], vec![0.4, 0.6]).unwrap()
}

#[test]
fn per_axis_estimates_match_projected_marginals() {
    let target = plane_mixture();
    let data = sample_mixture(&target, &vec![1.0; 100_000], 6).unwrap();
    let net = SphereNet::from_directions(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let config = EstimatorConfig::default();
    let iv = Interval::symmetric(1.5).unwrap();
    let est = robust_direction_estimates(&data, &config, &net, &iv).unwrap();
    assert_eq!(est.estimates.len(), 2);
    for (v, e) in net.directions().iter().zip(&est.estimates) {
        let w = wasserstein1_1d(e, &target.project(v)).unwrap();
        assert!(w <= 0.1, "direction {v:?}: W1 {w}");
    }
}

#[test]
fn low_dimensional_search_recovers_an_axis_pair() {
    let target =
        AtomicDistribution::new(2, vec![vec![0.8, 0.0], vec![-0.8, 0.0]], vec![0.5, 0.5]).unwrap();
    let data = sample_mixture(&target, &vec![1.0; 100_000], 7).unwrap();
    let config = EstimatorConfig::default();
    let (est, report) =
        low_dim_estimate(&data, &config, &Interval::symmetric(1.5).unwrap()).unwrap();
    let w = wasserstein1(&est, &target).unwrap();
    assert!(w <= 0.15, "W1 {w}");
    assert!(report.candidates > 0);
    assert_eq!(report.w1_residuals.len(), report.net.len());
}

fn random_unit(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    let u: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    u.into_iter().map(|x| x / n).collect()
}

fn antipodal(u: &[f64], r: f64) -> AtomicDistribution {
    let a: Vec<f64> = u.iter().map(|x| r * x).collect();
    let b: Vec<f64> = a.iter().map(|x| -x).collect();
    AtomicDistribution::uniform(vec![a, b]).unwrap()
}

#[test]
fn high_dimensional_pipeline_at_unit_noise() {
    let mut rng = substream(8, 0);
    let target = antipodal(&random_unit(&mut rng, 8), 0.8);
    let data = sample_mixture(&target, &vec![1.0; 200_000], 9).unwrap();
    let (est, report) = estimate_hd(&data, &EstimatorConfig::default(), None).unwrap();
    let w = wasserstein1(&est, &target).unwrap();
    assert!(w <= 0.2, "W1 {w}");
    assert_eq!(report.split_sizes.iter().sum::<usize>(), 200_000);
    assert_eq!(report.subspace.len(), 2);
    assert!((report.n_d - 200_000.0).abs() < 1e-6);
}

#[test]
fn pipeline_is_deterministic_for_a_seed() {
    let mut rng = substream(10, 0);
    let target = antipodal(&random_unit(&mut rng, 4), 1.0);
    let data = sample_mixture(&target, &vec![1.0; 20_000], 11).unwrap();
    let config = EstimatorConfig {
        seed: 5,
        ..EstimatorConfig::default()
    };
    let (a, _) = estimate_hd(&data, &config, None).unwrap();
    let (b, _) = estimate_hd(&data, &config, None).unwrap();
    assert_eq!(a, b);
}

/// Orthogonal matrix from Gram-Schmidt on a random Gaussian matrix.
fn random_rotation(rng: &mut impl Rng, d: usize) -> Vec<Vec<f64>> {
    let g = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    let q = g.qr().q();
    (0..d).map(|i| q.row(i).iter().copied().collect()).collect()
}

#[test]
fn estimate_rotates_with_the_data() {
    let mut rng = substream(12, 0);
    let d = 5;
    let target = AtomicDistribution::new(
        d,
        vec![
            random_unit(&mut rng, d),
            random_unit(&mut rng, d).iter().map(|x| -0.5 * x).collect(),
        ],
        vec![0.35, 0.65],
    )
    .unwrap();
    let data = sample_mixture(&target, &vec![1.0; 50_000], 13).unwrap();
    let rot = random_rotation(&mut rng, d);
    let rotated = data.map_linear(&rot).unwrap();
    let config = EstimatorConfig {
        seed: 3,
        ..EstimatorConfig::default()
    };
    let (est, _) = estimate_hd(&data, &config, None).unwrap();
    let (est_rot, _) = estimate_hd(&rotated, &config, None).unwrap();
    let w = wasserstein1(&est_rot, &est.map_linear(&rot).unwrap()).unwrap();
    assert!(w <= 1e-6, "rotated estimate differs by W1 {w}");
}
