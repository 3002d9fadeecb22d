//! RBF kernel mixtures, bandwidth selection and the empirical MMD estimators.
//!
//! Both estimators are V-statistics: the within-sample sums keep their
//! diagonal terms. With sample sizes `n` (data) and `m` (model) the weights
//! are `1/n²`, `2/(nm)` and `1/m²`.
//!
//! The joint estimator uses the product kernel `k(x,x')·l(y,y')`; the feature
//! maps of the two RKHSs are never materialized, only kernel evaluations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sq_dist, RbfMixture, Tape, Tensor2, Var};

/// Multipliers of the median pairwise distance used for tabular data.
pub const MEDIAN_MULTIPLIERS: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

/// Fixed bandwidth list used for image features.
pub const FIXED_SIGMAS: [f64; 5] = [1.0, 2.0, 4.0, 8.0, 16.0];

/// Beyond this many rows the median is taken over an evenly strided subsample.
pub const MEDIAN_MAX_ROWS: usize = 2000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BandwidthMode {
    FixedList,
    MedianScaled { median: f64, multipliers: Vec<f64> },
}

/// Bandwidths of `k(x,x') = Σ_q exp(-|x-x'|²/(2σ_q²))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub bandwidths: Vec<f64>,
    pub mode: BandwidthMode,
}

impl KernelConfig {
    pub fn fixed(bandwidths: &[f64]) -> Result<Self> {
        let cfg = Self {
            bandwidths: bandwidths.to_vec(),
            mode: BandwidthMode::FixedList,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bandwidths.is_empty() {
            return Err(Error::DegenerateBandwidth("bandwidth list is empty".into()));
        }
        if let Some(s) = self
            .bandwidths
            .iter()
            .find(|s| !(**s > 0.0 && s.is_finite()))
        {
            return Err(Error::DegenerateBandwidth(format!(
                "bandwidth {s} is not positive"
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.bandwidths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bandwidths.is_empty()
    }
}

/// How bandwidths are chosen for a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BandwidthChoice {
    Median { multipliers: Vec<f64> },
    Fixed { sigmas: Vec<f64> },
}

impl Default for BandwidthChoice {
    fn default() -> Self {
        BandwidthChoice::Median {
            multipliers: MEDIAN_MULTIPLIERS.to_vec(),
        }
    }
}

impl BandwidthChoice {
    pub fn resolve(&self, data: &Tensor2) -> Result<KernelConfig> {
        match self {
            BandwidthChoice::Median { multipliers } => median_heuristic(data, multipliers),
            BandwidthChoice::Fixed { sigmas } => KernelConfig::fixed(sigmas),
        }
    }
}

/// Kernel on the label space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelKernel {
    /// `l(y,y') = [y = y']` over class codes `0..classes`.
    Delta { classes: usize },
    /// `l(y,y') = exp(-(y-y')²/(2σ²))` for real-valued labels.
    Rbf { sigma: f64 },
}

impl LabelKernel {
    #[inline]
    pub fn eval(&self, a: f64, b: f64) -> f64 {
        match self {
            LabelKernel::Delta { .. } => (a == b) as u8 as f64,
            LabelKernel::Rbf { sigma } => (-(a - b) * (a - b) / (2.0 * sigma * sigma)).exp(),
        }
    }

    /// Rejects labels outside the declared label set.
    pub fn check_labels(&self, labels: &[f64]) -> Result<()> {
        match self {
            LabelKernel::Delta { classes } => {
                if let Some(bad) = labels
                    .iter()
                    .find(|y| !(y.fract() == 0.0 && **y >= 0.0 && (**y as usize) < *classes))
                {
                    return Err(Error::contract(format!(
                        "label {bad} is not a class code in 0..{classes}"
                    )));
                }
            }
            LabelKernel::Rbf { sigma } => {
                if !(*sigma > 0.0) {
                    return Err(Error::DegenerateBandwidth(format!(
                        "label bandwidth {sigma}"
                    )));
                }
                if labels.iter().any(|y| !y.is_finite()) {
                    return Err(Error::contract("non-finite label"));
                }
            }
        }
        Ok(())
    }

    /// `l(a_i, b_j)` as an `a.len() x b.len()` matrix.
    pub fn gram(&self, a: &[f64], b: &[f64]) -> Tensor2 {
        let mut out = Tensor2::zeros(a.len(), b.len());
        for (i, &ya) in a.iter().enumerate() {
            for (j, &yb) in b.iter().enumerate() {
                out.set(i, j, self.eval(ya, yb));
            }
        }
        out
    }
}

/// Features paired with labels, one label per row.
#[derive(Clone, Copy, Debug)]
pub struct Paired<'a> {
    pub x: &'a Tensor2,
    pub y: &'a [f64],
}

impl<'a> Paired<'a> {
    pub fn new(x: &'a Tensor2, y: &'a [f64]) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::contract(format!(
                "{} feature rows but {} labels",
                x.rows(),
                y.len()
            )));
        }
        Ok(Self { x, y })
    }
}

/// `Σ_q exp(-|x-x'|²/(2σ_q²))`.
pub fn rbf_mixture(x: &[f64], x2: &[f64], cfg: &KernelConfig) -> Result<f64> {
    if x.len() != x2.len() {
        return Err(Error::shape("rbf_mixture", (1, x.len()), (1, x2.len())));
    }
    let d2 = sq_dist(x, x2);
    Ok(cfg
        .bandwidths
        .iter()
        .map(|s| (-d2 / (2.0 * s * s)).exp())
        .sum())
}

/// Bandwidths `multiplier_q × median pairwise distance`.
pub fn median_heuristic(data: &Tensor2, multipliers: &[f64]) -> Result<KernelConfig> {
    if data.rows() < 2 {
        return Err(Error::contract("median heuristic needs at least two rows"));
    }
    if multipliers.is_empty() || multipliers.iter().any(|m| !(*m > 0.0)) {
        return Err(Error::DegenerateBandwidth(
            "multipliers must be positive and non-empty".into(),
        ));
    }
    let rows: Vec<usize> = if data.rows() > MEDIAN_MAX_ROWS {
        let stride = data.rows() as f64 / MEDIAN_MAX_ROWS as f64;
        (0..MEDIAN_MAX_ROWS)
            .map(|i| (i as f64 * stride) as usize)
            .collect()
    } else {
        (0..data.rows()).collect()
    };
    let mut dists = Vec::with_capacity(rows.len() * (rows.len() - 1) / 2);
    for (a, &i) in rows.iter().enumerate() {
        for &j in &rows[a + 1..] {
            dists.push(sq_dist(data.row(i), data.row(j)).sqrt());
        }
    }
    let median = median_in_place(&mut dists);
    if !(median > 0.0) {
        return Err(Error::DegenerateBandwidth(
            "median pairwise distance is zero (points are identical)".into(),
        ));
    }
    Ok(KernelConfig {
        bandwidths: multipliers.iter().map(|m| m * median).collect(),
        mode: BandwidthMode::MedianScaled {
            median,
            multipliers: multipliers.to_vec(),
        },
    })
}

fn median_in_place(v: &mut [f64]) -> f64 {
    let n = v.len();
    let mid = n / 2;
    let (_, upper, _) = v.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower = v[..mid].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

fn kernel_sum(a: &Tensor2, b: &Tensor2, cfg: &KernelConfig, weights: Option<&Tensor2>) -> f64 {
    let mix = RbfMixture::new(&cfg.bandwidths);
    let mut total = 0.0;
    for i in 0..a.rows() {
        let ai = a.row(i);
        let mut acc = 0.0;
        for j in 0..b.rows() {
            let w = weights.map_or(1.0, |w| w.get(i, j));
            if w == 0.0 {
                continue;
            }
            acc += w * mix.eval(sq_dist(ai, b.row(j))).0;
        }
        total += acc;
    }
    total
}

fn check_pair(p: &Tensor2, q: &Tensor2) -> Result<()> {
    if p.rows() == 0 || q.rows() == 0 {
        return Err(Error::contract("MMD needs two non-empty samples"));
    }
    if p.cols() != q.cols() {
        return Err(Error::shape("mmd", p.shape(), q.shape()));
    }
    Ok(())
}

/// Squared MMD between two feature samples (V-statistic).
pub fn mmd2_marginal(p: &Tensor2, q: &Tensor2, cfg: &KernelConfig) -> Result<f64> {
    check_pair(p, q)?;
    cfg.validate()?;
    let (n, m) = (p.rows() as f64, q.rows() as f64);
    Ok(
        kernel_sum(p, p, cfg, None) / (n * n) - 2.0 * kernel_sum(p, q, cfg, None) / (n * m)
            + kernel_sum(q, q, cfg, None) / (m * m),
    )
}

/// Squared joint MMD between two labeled samples under `k·l`.
pub fn mmd2_joint(
    p: Paired<'_>,
    q: Paired<'_>,
    cfg: &KernelConfig,
    lk: &LabelKernel,
) -> Result<f64> {
    check_pair(p.x, q.x)?;
    cfg.validate()?;
    lk.check_labels(p.y)?;
    lk.check_labels(q.y)?;
    let (n, m) = (p.x.rows() as f64, q.x.rows() as f64);
    let lpp = lk.gram(p.y, p.y);
    let lpq = lk.gram(p.y, q.y);
    let lqq = lk.gram(q.y, q.y);
    Ok(kernel_sum(p.x, p.x, cfg, Some(&lpp)) / (n * n)
        - 2.0 * kernel_sum(p.x, q.x, cfg, Some(&lpq)) / (n * m)
        + kernel_sum(q.x, q.x, cfg, Some(&lqq)) / (m * m))
}

fn mmd2_tape_weighted(
    tape: &mut Tape,
    p: Var,
    q: Var,
    cfg: &KernelConfig,
    weights: Option<(Tensor2, Tensor2, Tensor2)>,
) -> Result<Var> {
    let (n, m) = (tape.value(p).rows(), tape.value(q).rows());
    check_pair(tape.value(p), tape.value(q))?;
    cfg.validate()?;
    let (wpp, wpq, wqq) = match weights {
        Some((a, b, c)) => (Some(a), Some(b), Some(c)),
        None => (None, None, None),
    };
    let (n, m) = (n as f64, m as f64);
    let kpp = tape.kernel_sum(p, p, &cfg.bandwidths, wpp)?;
    let kpq = tape.kernel_sum(p, q, &cfg.bandwidths, wpq)?;
    let kqq = tape.kernel_sum(q, q, &cfg.bandwidths, wqq)?;
    let a = tape.scale(kpp, 1.0 / (n * n));
    let b = tape.scale(kpq, 2.0 / (n * m));
    let c = tape.scale(kqq, 1.0 / (m * m));
    let ab = tape.sub(a, b)?;
    tape.add(ab, c)
}

/// Differentiable [`mmd2_marginal`] between two tape nodes.
pub fn mmd2_marginal_tape(tape: &mut Tape, p: Var, q: Var, cfg: &KernelConfig) -> Result<Var> {
    mmd2_tape_weighted(tape, p, q, cfg, None)
}

/// Differentiable [`mmd2_joint`]; labels are constants.
pub fn mmd2_joint_tape(
    tape: &mut Tape,
    p: Var,
    p_labels: &[f64],
    q: Var,
    q_labels: &[f64],
    cfg: &KernelConfig,
    lk: &LabelKernel,
) -> Result<Var> {
    if tape.value(p).rows() != p_labels.len() || tape.value(q).rows() != q_labels.len() {
        return Err(Error::contract("label count differs from sample size"));
    }
    lk.check_labels(p_labels)?;
    lk.check_labels(q_labels)?;
    let w = (
        lk.gram(p_labels, p_labels),
        lk.gram(p_labels, q_labels),
        lk.gram(q_labels, q_labels),
    );
    mmd2_tape_weighted(tape, p, q, cfg, Some(w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::*;

    fn single(s: f64) -> KernelConfig {
        KernelConfig::fixed(&[s]).unwrap()
    }

    fn col(v: &[f64]) -> Tensor2 {
        Tensor2::column(v)
    }

    #[test]
    fn zero_distance_counts_each_kernel() {
        let cfg = KernelConfig::fixed(&FIXED_SIGMAS).unwrap();
        assert_eq!(rbf_mixture(&[1.0, 2.0], &[1.0, 2.0], &cfg).unwrap(), 5.0);
    }

    #[test]
    fn closed_form_single_kernel() {
        let v = rbf_mixture(&[0.0], &[2.0], &single(1.0)).unwrap();
        assert!((v - (-2.0f64).exp()).abs() < 1e-15);
        assert!((v - 0.135_335_3).abs() < 1e-7);
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        assert!(matches!(
            rbf_mixture(&[0.0], &[0.0, 1.0], &single(1.0)),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn median_of_three_points() {
        let cfg = median_heuristic(&col(&[0.0, 1.0, 3.0]), &MEDIAN_MULTIPLIERS).unwrap();
        assert_eq!(cfg.bandwidths, vec![0.5, 1.0, 2.0, 4.0, 8.0]);
        let two = median_heuristic(&col(&[1.0, 5.0]), &[1.0]).unwrap();
        assert_eq!(two.bandwidths, vec![4.0]);
    }

    #[test]
    fn median_is_translation_invariant() {
        let mut rng = Rng::new(1);
        let x = rng.gaussian(30, 2).unwrap();
        let shifted = x.add_row(&Tensor2::row_vector(&[10.0, -3.0])).unwrap();
        let a = median_heuristic(&x, &MEDIAN_MULTIPLIERS).unwrap();
        let b = median_heuristic(&shifted, &MEDIAN_MULTIPLIERS).unwrap();
        for (u, v) in a.bandwidths.iter().zip(&b.bandwidths) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_points_are_degenerate() {
        let r = median_heuristic(&col(&[2.0, 2.0, 2.0]), &MEDIAN_MULTIPLIERS);
        assert!(matches!(r, Err(Error::DegenerateBandwidth(_))));
    }

    #[test]
    fn marginal_hand_values() {
        let cfg = single(1.0);
        let e2 = (-2.0f64).exp();
        let a = mmd2_marginal(&col(&[0.0]), &col(&[2.0]), &cfg).unwrap();
        assert!((a - (2.0 - 2.0 * e2)).abs() < 1e-15);
        assert!((a - 1.729_329_4).abs() < 1e-7);
        let b = mmd2_marginal(&col(&[0.0, 0.0]), &col(&[0.0, 2.0]), &cfg).unwrap();
        assert!((b - (0.5 - 0.5 * e2)).abs() < 1e-15);
        assert!((b - 0.432_332_4).abs() < 1e-7);
    }

    #[test]
    fn marginal_identical_multisets_vanish() {
        let p = col(&[0.3, -1.0, 2.0]);
        let q = col(&[2.0, 0.3, -1.0]);
        assert!(mmd2_marginal(&p, &q, &single(0.7)).unwrap().abs() < 1e-12);
    }

    #[test]
    fn empty_sample_is_contract_error() {
        let e = Tensor2::zeros(0, 1);
        assert!(matches!(
            mmd2_marginal(&e, &col(&[1.0]), &single(1.0)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn joint_hand_values() {
        let cfg = single(1.0);
        let lk = LabelKernel::Delta { classes: 2 };
        let z = col(&[0.0]);
        let two = col(&[2.0]);
        let a = mmd2_joint(
            Paired::new(&z, &[0.0]).unwrap(),
            Paired::new(&z, &[1.0]).unwrap(),
            &cfg,
            &lk,
        )
        .unwrap();
        assert!((a - 2.0).abs() < 1e-15);
        let b = mmd2_joint(
            Paired::new(&z, &[0.0]).unwrap(),
            Paired::new(&two, &[0.0]).unwrap(),
            &cfg,
            &lk,
        )
        .unwrap();
        assert!((b - (2.0 - 2.0 * (-2.0f64).exp())).abs() < 1e-15);
        let c = mmd2_joint(
            Paired::new(&z, &[0.0]).unwrap(),
            Paired::new(&z, &[0.0]).unwrap(),
            &cfg,
            &lk,
        )
        .unwrap();
        assert!(c.abs() < 1e-15);
    }

    #[test]
    fn unknown_label_rejected() {
        let z = col(&[0.0]);
        let lk = LabelKernel::Delta { classes: 2 };
        let r = mmd2_joint(
            Paired::new(&z, &[0.0]).unwrap(),
            Paired::new(&z, &[2.0]).unwrap(),
            &single(1.0),
            &lk,
        );
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn tape_matches_numeric_and_gradient_is_sound() {
        let mut rng = Rng::new(8);
        let cfg = KernelConfig::fixed(&[0.5, 1.0, 3.0]).unwrap();
        let lk = LabelKernel::Delta { classes: 2 };
        let p = rng.gaussian(6, 2).unwrap();
        let q = rng.gaussian(5, 2).unwrap();
        let py: Vec<f64> = (0..6).map(|i| (i % 2) as f64).collect();
        let qy: Vec<f64> = (0..5).map(|i| ((i + 1) % 2) as f64).collect();
        let eval = |q: &Tensor2| {
            let mut t = Tape::new();
            let pv = t.constant(p.clone());
            let qv = t.param(q.clone());
            let j = mmd2_joint_tape(&mut t, pv, &py, qv, &qy, &cfg, &lk).unwrap();
            let m = mmd2_marginal_tape(&mut t, pv, qv, &cfg).unwrap();
            let tot = t.add(j, m).unwrap();
            (
                t.value(tot).item().unwrap(),
                t.backward(tot).unwrap().wrt(qv),
            )
        };
        let (v, g) = eval(&q);
        let numeric = mmd2_joint(
            Paired::new(&p, &py).unwrap(),
            Paired::new(&q, &qy).unwrap(),
            &cfg,
            &lk,
        )
        .unwrap()
            + mmd2_marginal(&p, &q, &cfg).unwrap();
        assert!((v - numeric).abs() < 1e-12);
        for k in 0..q.len() {
            let mut a = q.clone();
            a.data_mut()[k] += 1e-5;
            let mut b = q.clone();
            b.data_mut()[k] -= 1e-5;
            let fd = (eval(&a).0 - eval(&b).0) / 2e-5;
            let an = g.data()[k];
            assert!((an - fd).abs() / an.abs().max(fd.abs()).max(1e-6) < 1e-4);
        }
    }

    proptest! {
        #[test]
        fn symmetric_and_permutation_invariant(seed in 0u64..500, n in 1usize..8, m in 1usize..8) {
            let mut rng = Rng::new(seed);
            let p = rng.gaussian(n, 2).unwrap();
            let q = rng.gaussian(m, 2).unwrap();
            let cfg = KernelConfig::fixed(&[0.5, 2.0]).unwrap();
            let a = mmd2_marginal(&p, &q, &cfg).unwrap();
            let b = mmd2_marginal(&q, &p, &cfg).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!(a > -1e-12);
            let mut idx: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut idx);
            let c = mmd2_marginal(&p.select_rows(&idx), &q, &cfg).unwrap();
            prop_assert!((a - c).abs() < 1e-12);
            let x = [0.1 * seed as f64, 1.0];
            let y = [-0.5, 0.3 * n as f64];
            prop_assert_eq!(rbf_mixture(&x, &y, &cfg).unwrap(), rbf_mixture(&y, &x, &cfg).unwrap());
        }
    }
}
