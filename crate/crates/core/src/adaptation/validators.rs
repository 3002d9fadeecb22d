use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gdan::GdanModel;
use crate::kernels::{mmd2_joint, Paired};
use crate::numerics::{linalg, Rng, Tensor2};

/// Affine fit of each recovered latent row on `[θ*; 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub r2: Vec<f64>,
    pub min_r2: f64,
    pub threshold: f64,
    pub passed: bool,
}

/// `theta_star` is `d x m`, `theta_hat` is `d̂ x m`, columns paired by domain.
pub fn validate_prop2_recovery(
    theta_star: &Tensor2,
    theta_hat: &Tensor2,
    threshold: f64,
) -> Result<RecoveryReport> {
    let (d, m) = theta_star.shape();
    if theta_hat.cols() != m {
        return Err(Error::contract(format!(
            "θ̂ has {} domain columns, θ* has {m}",
            theta_hat.cols()
        )));
    }
    if m < d + 1 {
        return Err(Error::Precondition(format!(
            "recovery needs at least d+1 = {} domains, got {m}",
            d + 1
        )));
    }
    let design = DMatrix::from_fn(
        m,
        d + 1,
        |s, c| if c < d { theta_star.get(c, s) } else { 1.0 },
    );
    let rank = linalg::rank(&design, 1e-10);
    if rank != d + 1 {
        return Err(Error::Precondition(format!(
            "[Θ*; 1] has rank {rank}, recovery needs rank {}",
            d + 1
        )));
    }
    let mut r2 = Vec::with_capacity(theta_hat.rows());
    for k in 0..theta_hat.rows() {
        let y = DVector::from_iterator(m, (0..m).map(|s| theta_hat.get(k, s)));
        let beta = linalg::least_squares(&design, &y)?;
        let fitted = &design * beta;
        let mean = y.mean();
        let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
        let ss_res: f64 = y
            .iter()
            .zip(fitted.iter())
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        // A constant row carries no information about θ*.
        r2.push(if ss_tot > 1e-300 {
            1.0 - ss_res / ss_tot
        } else {
            0.0
        });
    }
    let min_r2 = r2.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(RecoveryReport {
        passed: min_r2 > threshold,
        r2,
        min_r2,
        threshold,
    })
}

/// Kernel-density evidence that the `2C` class conditionals are linearly
/// independent: a full-rank Gram matrix on a grid is sufficient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndependenceCertificate {
    pub grid: Vec<f64>,
    /// One row per conditional: set A classes, then set B classes.
    pub densities: Vec<Vec<f64>>,
    pub gram: Vec<Vec<f64>>,
    pub min_singular_value: f64,
    pub rank: usize,
    /// Squared split-half estimate of the density estimation error,
    /// on the same scale as Gram singular values.
    pub noise_floor: f64,
    /// Larger of the numerical and the noise tolerance.
    pub tolerance: f64,
    pub passed: bool,
}

/// Relative tolerance on the smallest Gram singular value.
pub const CERTIFICATE_TOL: f64 = 1e-8;

/// The smallest direction of the density matrix must exceed the estimated
/// KDE error by this factor, so two samples of one distribution do not
/// pass as independent conditionals.
pub const CERTIFICATE_NOISE_FACTOR: f64 = 2.0;

/// Silverman's rule `0.9·min(sd, IQR/1.34)·n^(-1/5)`.
pub fn silverman_bandwidth(sample: &[f64]) -> f64 {
    let n = sample.len() as f64;
    let mean = sample.iter().sum::<f64>() / n;
    let sd = (sample.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (s.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
    };
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * n.powf(-0.2);
    if h > 0.0 {
        h
    } else {
        1e-3
    }
}

pub fn gaussian_kde(sample: &[f64], grid: &[f64]) -> Vec<f64> {
    kde_with_bandwidth(sample, grid, silverman_bandwidth(sample))
}

fn kde_with_bandwidth(sample: &[f64], grid: &[f64], h: f64) -> Vec<f64> {
    let c = 1.0 / (sample.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    grid.iter()
        .map(|g| {
            c * sample
                .iter()
                .map(|x| (-0.5 * ((g - x) / h).powi(2)).exp())
                .sum::<f64>()
        })
        .collect()
}

/// Evenly spaced grid covering every sample with a margin.
pub fn default_grid(sets: &[&[Vec<f64>]], points: usize) -> Vec<f64> {
    let all: Vec<f64> = sets
        .iter()
        .flat_map(|s| s.iter().flatten().copied())
        .collect();
    let lo = all.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = all.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let pad = 0.25 * (hi - lo).max(1e-6);
    let (lo, hi) = (lo - pad, hi + pad);
    (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1).max(1) as f64)
        .collect()
}

/// Both sets hold one 1-D sample per class, in class order.
pub fn check_linear_independence(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    grid: &[f64],
) -> Result<IndependenceCertificate> {
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::contract(format!(
            "both sets need the same positive class count, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if let Some(c) = a.iter().chain(b).position(|s| s.is_empty()) {
        return Err(Error::contract(format!("conditional {c} has no samples")));
    }
    if grid.len() < 2 {
        return Err(Error::contract("grid needs at least two points"));
    }
    let step = (grid[grid.len() - 1] - grid[0]) / (grid.len() - 1) as f64;
    let densities: Vec<Vec<f64>> = a.iter().chain(b).map(|s| gaussian_kde(s, grid)).collect();
    // Half the gap between even- and odd-indexed halves, at the full-sample
    // bandwidth, estimates the error of each full estimate.
    let noise2: f64 = a
        .iter()
        .chain(b)
        .filter(|s| s.len() >= 2)
        .map(|s| {
            let h = silverman_bandwidth(s);
            let even: Vec<f64> = s.iter().step_by(2).copied().collect();
            let odd: Vec<f64> = s.iter().skip(1).step_by(2).copied().collect();
            let (fe, fo) = (
                kde_with_bandwidth(&even, grid, h),
                kde_with_bandwidth(&odd, grid, h),
            );
            fe.iter()
                .zip(&fo)
                .map(|(u, v)| (0.5 * (u - v)).powi(2))
                .sum::<f64>()
                * step
        })
        .sum();
    let noise_floor = CERTIFICATE_NOISE_FACTOR.powi(2) * noise2;
    let k = densities.len();
    let gram = DMatrix::from_fn(k, k, |i, j| {
        densities[i]
            .iter()
            .zip(&densities[j])
            .map(|(u, v)| u * v)
            .sum::<f64>()
            * step
    });
    let sv = linalg::singular_values(&gram);
    let max = sv[0];
    let min = sv[sv.len() - 1];
    let rank = sv.iter().filter(|&&s| s > CERTIFICATE_TOL * max).count();
    let tolerance = (CERTIFICATE_TOL * max).max(noise_floor);
    Ok(IndependenceCertificate {
        grid: grid.to_vec(),
        gram: (0..k)
            .map(|i| (0..k).map(|j| gram[(i, j)]).collect())
            .collect(),
        densities,
        min_singular_value: min,
        rank,
        noise_floor,
        tolerance,
        passed: rank == k && min > tolerance,
    })
}

/// One domain pair in the injectivity check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairCheck {
    pub a: String,
    pub b: String,
    pub mmd2: f64,
    pub theta_distance: f64,
    pub ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectivityReport {
    pub epsilon: f64,
    pub delta: f64,
    pub pairs: Vec<PairCheck>,
    pub passed: bool,
}

/// Default thresholds for [`validate_prop1_injectivity`].
pub const PROP1_EPSILON: f64 = 1e-3;
pub const PROP1_DELTA: f64 = 1e-2;

/// For every pair of fitted domains, distinct generated conditionals
/// (joint MMD² > ε) must come with θ̂ columns more than δ apart. Both
/// domains are sampled with the same labels and noise.
pub fn validate_prop1_injectivity(
    model: &GdanModel,
    n: usize,
    seed: u64,
    epsilon: f64,
    delta: f64,
) -> Result<InjectivityReport> {
    let domains = model.theta.domains.clone();
    let thetas = domains
        .iter()
        .map(|d| model.theta_of(d))
        .collect::<Result<Vec<_>>>()?;
    let labels = model.prior.sample(&mut Rng::new(seed), n);
    let samples = thetas
        .iter()
        .map(|t| model.generate_at(t, &labels, &mut Rng::new(seed ^ 0x5eed)))
        .collect::<Result<Vec<_>>>()?;
    let mut pairs = Vec::new();
    for i in 0..domains.len() {
        for j in i + 1..domains.len() {
            let mmd2 = mmd2_joint(
                Paired::new(&samples[i], &labels)?,
                Paired::new(&samples[j], &labels)?,
                &model.kernel,
                &model.label_kernel,
            )?;
            let dist = thetas[i]
                .iter()
                .zip(&thetas[j])
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            pairs.push(PairCheck {
                a: domains[i].clone(),
                b: domains[j].clone(),
                mmd2,
                theta_distance: dist,
                ok: mmd2 <= epsilon || dist > delta,
            });
        }
    }
    Ok(InjectivityReport {
        epsilon,
        delta,
        passed: pairs.iter().all(|p| p.ok),
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_affine_image_has_unit_r2() {
        let star = Tensor2::from_rows(&[[0.0, 1.0, 0.0, 1.0], [0.0, 0.0, 1.0, 1.0]]).unwrap();
        let hat = star.map(|v| 2.0 * v + 1.0);
        let r = validate_prop2_recovery(&star, &hat, 0.99).unwrap();
        assert!(r.passed);
        assert!(r.r2.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn one_domain_short_is_a_precondition_violation() {
        let star = Tensor2::from_rows(&[[0.0, 1.0], [0.0, 1.0]]).unwrap();
        let err = validate_prop2_recovery(&star, &star, 0.99).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }

    #[test]
    fn collinear_theta_star_names_rank() {
        let star = Tensor2::from_rows(&[[0.0, 1.0, 2.0], [0.0, 1.0, 2.0]]).unwrap();
        let err = validate_prop2_recovery(&star, &star, 0.99).unwrap_err();
        assert!(err.to_string().contains("rank 2"), "{err}");
    }

    fn gauss(mean: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = Rng::new(seed);
        (0..n).map(|_| rng.normal(mean, 1.0)).collect()
    }

    #[test]
    fn four_distinct_conditionals_are_independent() {
        let a = vec![gauss(-2.0, 500, 1), gauss(2.0, 500, 2)];
        let b = vec![gauss(-1.0, 500, 3), gauss(3.0, 500, 4)];
        let grid = default_grid(&[&a, &b], 400);
        let c = check_linear_independence(&a, &b, &grid).unwrap();
        assert_eq!(c.rank, 4);
        assert!(c.passed && c.min_singular_value > 0.0);
    }

    #[test]
    fn duplicated_conditional_fails() {
        let a = vec![gauss(-2.0, 300, 1), gauss(2.0, 300, 2)];
        let b = vec![a[0].clone(), gauss(3.0, 300, 4)];
        let grid = default_grid(&[&a, &b], 400);
        let c = check_linear_independence(&a, &b, &grid).unwrap();
        assert!(!c.passed);
        assert!(c.min_singular_value < 1e-10);
    }

    #[test]
    fn same_distribution_resampled_fails() {
        let a = vec![gauss(-2.0, 1000, 1), gauss(2.0, 1000, 2)];
        let b = vec![gauss(-2.0, 1000, 3), gauss(3.0, 1000, 4)];
        let grid = default_grid(&[&a, &b], 400);
        let c = check_linear_independence(&a, &b, &grid).unwrap();
        assert_eq!(c.rank, 4);
        assert!(
            !c.passed,
            "{} vs floor {}",
            c.min_singular_value, c.noise_floor
        );
    }

    #[test]
    fn single_identical_class_has_rank_one() {
        let a = vec![gauss(0.0, 200, 1)];
        let grid = default_grid(&[&a], 200);
        let c = check_linear_independence(&a, &a.clone(), &grid).unwrap();
        assert_eq!(c.rank, 1);
        assert!(!c.passed);
    }

    #[test]
    fn empty_class_rejected() {
        let a = vec![vec![1.0], vec![]];
        assert!(matches!(
            check_linear_independence(&a, &a, &[0.0, 1.0]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn silverman_matches_formula() {
        // sd of 1..=5 is √2.5, IQR/1.34 = 2/1.34.
        let s = [1.0, 2.0, 3.0, 4.0, 5.0];
        let want = 0.9 * (2.5f64).sqrt().min(2.0 / 1.34) * 5f64.powf(-0.2);
        assert!((silverman_bandwidth(&s) - want).abs() < 1e-12);
    }
}
