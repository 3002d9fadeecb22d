//! Synthetic multi-domain families with known ground truth.
//!
//! Every family yields `domains` labeled source datasets named `s1..sm` and
//! one unlabeled target dataset named `t` whose labels are kept in the
//! [`GroundTruth`] record for evaluation.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{DomainDataset, LabelSpace};
use crate::error::{Error, Result};
use crate::numerics::{linalg, Rng, Tensor2};

pub const TARGET_DOMAIN: &str = "t";

pub fn source_name(s: usize) -> String {
    format!("s{}", s + 1)
}

/// Linear-mean family: `E[X | Y=y; θ] = Aθ + h(y)`, isotropic Gaussian noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearMeanParams {
    /// `D x d`, row-major.
    pub a: Vec<Vec<f64>>,
    /// One `D`-vector per class.
    pub h: Vec<Vec<f64>>,
    /// One `d`-vector per source domain.
    pub thetas: Vec<Vec<f64>>,
    pub target_theta: Vec<f64>,
    pub noise: f64,
    pub prior: Vec<f64>,
    /// Require the rank conditions under which θ is recoverable.
    #[serde(default)]
    pub identifiable: bool,
}

impl LinearMeanParams {
    /// `d = 2`, `D = 3`, two classes, four source domains at the corners of a square.
    pub fn recovery_default() -> Self {
        Self {
            a: vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, -0.6]],
            h: vec![vec![-1.0, 0.0, 1.0], vec![1.0, 0.5, -1.0]],
            thetas: vec![
                vec![0.0, 0.0],
                vec![1.5, 0.0],
                vec![0.0, 1.5],
                vec![1.5, 1.5],
            ],
            target_theta: vec![0.75, 0.75],
            noise: 0.4,
            prior: vec![0.5, 0.5],
            identifiable: true,
        }
    }
}

/// Class-conditional 2-D Gaussians whose means rotate by a per-domain angle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotationParams {
    pub class_means: Vec<[f64; 2]>,
    pub angles_deg: Vec<f64>,
    pub target_angle_deg: f64,
    pub noise: f64,
    pub prior: Vec<f64>,
}

impl RotationParams {
    pub fn with_angles(sources: &[f64], target: f64) -> Self {
        Self {
            class_means: vec![
                [2.0, 0.0],
                [-1.0, 1.732_050_807_568_877_2],
                [-1.0, -1.732_050_807_568_877_2],
            ],
            angles_deg: sources.to_vec(),
            target_angle_deg: target,
            noise: 0.3,
            prior: vec![0.5, 0.3, 0.2],
        }
    }
}

/// One-dimensional Gaussian classes with a per-domain location shift.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianClassesParams {
    pub means: Vec<f64>,
    pub std: f64,
    pub shifts: Vec<f64>,
    pub target_shift: f64,
    pub prior: Vec<f64>,
}

impl GaussianClassesParams {
    /// Two classes `4σ` apart, one source, target shifted by `shift`.
    pub fn two_class(shift: f64) -> Self {
        Self {
            means: vec![-2.0, 2.0],
            std: 1.0,
            shifts: vec![0.0],
            target_shift: shift,
            prior: vec![0.5, 0.5],
        }
    }
}

/// Linear-Gaussian chain `Y → X1 → … → Xk` with categorical `Y`.
///
/// `coefficients[i]` is the coefficient of `X{i+1}` on its parent, either one
/// value (invariant) or one per domain, sources first then target. The same
/// rule applies to `intercepts`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FcmChainParams {
    pub domains: usize,
    pub prior: Vec<f64>,
    pub coefficients: Vec<Vec<f64>>,
    #[serde(default)]
    pub intercepts: Vec<Vec<f64>>,
    pub noise: f64,
}

impl FcmChainParams {
    /// `X1 = θ·Y + E1`, `X2 = 0.5·X1 + E2`.
    pub fn two_link(x1_coefficients: Vec<f64>) -> Self {
        Self {
            domains: x1_coefficients.len().saturating_sub(1),
            prior: vec![0.5, 0.5],
            coefficients: vec![x1_coefficients, vec![0.5]],
            intercepts: vec![],
            noise: 1.0,
        }
    }
}

/// Eight continuous signal-like features with a continuous location `Y` as
/// root; the flagged modules get a per-domain intercept shift `shift·s`.
///
/// The default changing modules are sinks, so every unchanged variable keeps
/// its marginal across domains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WifiLikeParams {
    pub domains: usize,
    #[serde(default = "WifiLikeParams::default_changing")]
    pub changing: Vec<String>,
    #[serde(default = "WifiLikeParams::default_shift")]
    pub shift: f64,
    #[serde(default = "WifiLikeParams::default_noise")]
    pub noise: f64,
    #[serde(default = "WifiLikeParams::default_range")]
    pub location_range: f64,
}

impl WifiLikeParams {
    fn default_changing() -> Vec<String> {
        vec!["X5".into(), "X6".into(), "X7".into()]
    }
    fn default_shift() -> f64 {
        1.0
    }
    fn default_noise() -> f64 {
        1.0
    }
    fn default_range() -> f64 {
        10.0
    }

    pub fn with_domains(domains: usize) -> Self {
        Self {
            domains,
            changing: Self::default_changing(),
            shift: 1.0,
            noise: 1.0,
            location_range: 10.0,
        }
    }

    /// Edges of the template graph as (child, [(parent, coefficient)]).
    /// Parent index 0 is `Y`, index i is `X{i}`.
    pub fn template() -> Vec<Vec<(usize, f64)>> {
        vec![
            vec![(0, 0.6)],
            vec![(0, -0.5)],
            vec![(1, 0.7)],
            vec![(0, 0.4), (2, 0.5)],
            vec![(3, 0.6), (4, 0.5)],
            vec![(1, -0.6)],
            vec![(4, 0.8)],
            vec![(2, 0.5), (3, 0.5)],
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Family {
    LinearMean(LinearMeanParams),
    #[serde(rename = "rotation-2d")]
    Rotation2d(RotationParams),
    #[serde(rename = "gaussian-classes-1d")]
    GaussianClasses1d(GaussianClassesParams),
    FcmChain(FcmChainParams),
    FcmWifiLike(WifiLikeParams),
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::LinearMean(_) => "linear-mean",
            Family::Rotation2d(_) => "rotation-2d",
            Family::GaussianClasses1d(_) => "gaussian-classes-1d",
            Family::FcmChain(_) => "fcm-chain",
            Family::FcmWifiLike(_) => "fcm-wifi-like",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    #[serde(flatten)]
    pub family: Family,
    pub n_per_domain: usize,
    pub n_target: usize,
    pub seed: u64,
}

/// Known causal graph over `Y` and the features.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrueGraph {
    pub nodes: Vec<String>,
    pub edges: Vec<(String, String)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub family: String,
    pub label_space: LabelSpace,
    /// Sources, then the target.
    pub domains: Vec<String>,
    pub target_domain: String,
    pub target_labels: Vec<f64>,
    /// True latent value per domain, sources then target.
    pub theta_star: Option<Vec<Vec<f64>>>,
    /// `[domain][class][feature]` analytic class-conditional means.
    pub conditional_means: Option<Vec<Vec<Vec<f64>>>>,
    pub prior: Option<Vec<f64>>,
    /// Bayes-optimal accuracy in the target domain, when analytic.
    pub bayes_accuracy: Option<f64>,
    pub graph: Option<TrueGraph>,
    /// Variables whose mechanism differs across domains.
    pub changing: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticData {
    pub sources: Vec<DomainDataset>,
    pub target: DomainDataset,
    pub truth: GroundTruth,
}

impl SyntheticData {
    /// The target sample with its hidden labels restored.
    pub fn labeled_target(&self) -> DomainDataset {
        DomainDataset {
            y: Some(self.truth.target_labels.clone()),
            ..self.target.clone()
        }
    }
}

fn spec_err(field: &str, reason: impl Into<String>) -> Error {
    Error::Spec {
        field: field.to_string(),
        reason: reason.into(),
    }
}

fn check_prior(prior: &[f64]) -> Result<()> {
    if prior.is_empty()
        || prior.iter().any(|p| !(*p >= 0.0))
        || (prior.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(spec_err("prior", "must be non-negative and sum to 1"));
    }
    Ok(())
}

fn names(d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("X{i}")).collect()
}

fn draw_labels(rng: &mut Rng, prior: &[f64], n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.categorical(prior) as f64).collect()
}

/// Generates all domains of `spec` deterministically from its seed.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    if spec.n_per_domain == 0 {
        return Err(spec_err("n_per_domain", "must be positive"));
    }
    if spec.n_target == 0 {
        return Err(spec_err("n_target", "must be positive"));
    }
    let root = Rng::new(spec.seed);
    match &spec.family {
        Family::LinearMean(p) => linear_mean(p, spec, &root),
        Family::Rotation2d(p) => rotation(p, spec, &root),
        Family::GaussianClasses1d(p) => gaussian_classes(p, spec, &root),
        Family::FcmChain(p) => fcm_chain(p, spec, &root),
        Family::FcmWifiLike(p) => wifi_like(p, spec, &root),
    }
}

/// Builds labeled sources and the target from per-domain conditional means.
fn from_means(
    family: &str,
    means: Vec<Vec<Vec<f64>>>,
    noise: f64,
    prior: &[f64],
    spec: &SyntheticSpec,
    root: &Rng,
) -> Result<(Vec<DomainDataset>, DomainDataset, Vec<f64>)> {
    let m = means.len() - 1;
    let dim = means[0][0].len();
    let feature_names = names(dim);
    let mut sources = Vec::with_capacity(m);
    let mut target = None;
    let mut target_labels = Vec::new();
    for (k, dm) in means.iter().enumerate() {
        let mut rng = root.fork(k as u64);
        let n = if k == m {
            spec.n_target
        } else {
            spec.n_per_domain
        };
        let y = draw_labels(&mut rng, prior, n);
        let mut x = Tensor2::zeros(n, dim);
        for (r, &c) in y.iter().enumerate() {
            for (f, mu) in dm[c as usize].iter().enumerate() {
                x.set(r, f, rng.normal(*mu, noise));
            }
        }
        if k == m {
            target = Some(DomainDataset::new(
                TARGET_DOMAIN,
                x,
                None,
                feature_names.clone(),
            )?);
            target_labels = y;
        } else {
            sources.push(DomainDataset::new(
                source_name(k),
                x,
                Some(y),
                feature_names.clone(),
            )?);
        }
    }
    let _ = family;
    Ok((sources, target.expect("target generated"), target_labels))
}

fn linear_mean(p: &LinearMeanParams, spec: &SyntheticSpec, root: &Rng) -> Result<SyntheticData> {
    check_prior(&p.prior)?;
    let big_d = p.a.len();
    if big_d == 0 {
        return Err(spec_err("a", "needs at least one row"));
    }
    let d = p.a[0].len();
    if d == 0 || p.a.iter().any(|r| r.len() != d) {
        return Err(spec_err("a", "rows must share a positive length d"));
    }
    if p.h.len() != p.prior.len() || p.h.iter().any(|h| h.len() != big_d) {
        return Err(spec_err("h", format!("needs one {big_d}-vector per class")));
    }
    if p.thetas.is_empty()
        || p.thetas
            .iter()
            .chain([&p.target_theta])
            .any(|t| t.len() != d)
    {
        return Err(spec_err(
            "thetas",
            format!("needs non-empty list of {d}-vectors"),
        ));
    }
    if !(p.noise >= 0.0) {
        return Err(spec_err("noise", "must be non-negative"));
    }
    if p.identifiable {
        let m = p.thetas.len();
        let theta_aug =
            nalgebra::DMatrix::from_fn(d + 1, m, |i, j| if i < d { p.thetas[j][i] } else { 1.0 });
        let r = linalg::rank(&theta_aug, 1e-10);
        if r != d + 1 {
            return Err(spec_err(
                "thetas",
                format!("rank of [θ*;1] is {r}, needs {}", d + 1),
            ));
        }
        for (c, h) in p.h.iter().enumerate() {
            let a_aug =
                nalgebra::DMatrix::from_fn(
                    big_d,
                    d + 1,
                    |i, j| if j < d { p.a[i][j] } else { h[i] },
                );
            let r = linalg::rank(&a_aug, 1e-10);
            if r != d + 1 {
                return Err(spec_err(
                    "h",
                    format!("rank of [A, h({c})] is {r}, needs {}", d + 1),
                ));
            }
        }
    }
    let all_thetas: Vec<Vec<f64>> = p.thetas.iter().chain([&p.target_theta]).cloned().collect();
    let means: Vec<Vec<Vec<f64>>> = all_thetas
        .iter()
        .map(|theta| {
            p.h.iter()
                .map(|h| {
                    (0..big_d)
                        .map(|i| h[i] + p.a[i].iter().zip(theta).map(|(a, t)| a * t).sum::<f64>())
                        .collect()
                })
                .collect()
        })
        .collect();
    let (sources, target, target_labels) =
        from_means("linear-mean", means.clone(), p.noise, &p.prior, spec, root)?;
    Ok(SyntheticData {
        truth: GroundTruth {
            family: "linear-mean".into(),
            label_space: LabelSpace::Categorical {
                classes: p.prior.len(),
            },
            domains: domain_names(sources.len()),
            target_domain: TARGET_DOMAIN.into(),
            target_labels,
            theta_star: Some(all_thetas),
            conditional_means: Some(means),
            prior: Some(p.prior.clone()),
            bayes_accuracy: None,
            graph: None,
            changing: vec![],
        },
        sources,
        target,
    })
}

fn domain_names(m: usize) -> Vec<String> {
    (0..m)
        .map(source_name)
        .chain([TARGET_DOMAIN.to_string()])
        .collect()
}

/// Rotates `v` counter-clockwise by `deg` degrees.
pub fn rotate(v: [f64; 2], deg: f64) -> [f64; 2] {
    let (s, c) = deg.to_radians().sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

fn rotation(p: &RotationParams, spec: &SyntheticSpec, root: &Rng) -> Result<SyntheticData> {
    check_prior(&p.prior)?;
    if p.class_means.len() != p.prior.len() {
        return Err(spec_err("class_means", "needs one mean per class"));
    }
    if p.angles_deg.is_empty() {
        return Err(spec_err("angles_deg", "needs at least one source angle"));
    }
    let angles: Vec<f64> = p
        .angles_deg
        .iter()
        .cloned()
        .chain([p.target_angle_deg])
        .collect();
    let means: Vec<Vec<Vec<f64>>> = angles
        .iter()
        .map(|&g| {
            p.class_means
                .iter()
                .map(|&mu| rotate(mu, g).to_vec())
                .collect()
        })
        .collect();
    let (sources, target, target_labels) =
        from_means("rotation-2d", means.clone(), p.noise, &p.prior, spec, root)?;
    Ok(SyntheticData {
        truth: GroundTruth {
            family: "rotation-2d".into(),
            label_space: LabelSpace::Categorical {
                classes: p.prior.len(),
            },
            domains: domain_names(sources.len()),
            target_domain: TARGET_DOMAIN.into(),
            target_labels,
            theta_star: Some(angles.iter().map(|a| vec![*a]).collect()),
            conditional_means: Some(means),
            prior: Some(p.prior.clone()),
            bayes_accuracy: None,
            graph: None,
            changing: vec![],
        },
        sources,
        target,
    })
}

/// Bayes-optimal accuracy for 1-D equal-variance Gaussian classes.
pub fn bayes_accuracy_1d(means: &[f64], std: f64, prior: &[f64]) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let score = |c: usize, x: f64| prior[c].ln() - (x - means[c]).powi(2) / (2.0 * std * std);
    let argmax = |x: f64| {
        (0..means.len())
            .filter(|&c| prior[c] > 0.0)
            .max_by(|&a, &b| score(a, x).total_cmp(&score(b, x)))
            .expect("non-empty prior")
    };
    // Pairwise score crossings are the only candidates for region boundaries.
    let mut cuts = Vec::new();
    for a in 0..means.len() {
        for b in a + 1..means.len() {
            if prior[a] > 0.0 && prior[b] > 0.0 && means[a] != means[b] {
                let x = (means[a] + means[b]) / 2.0
                    + std * std * (prior[b].ln() - prior[a].ln()) / (means[a] - means[b]);
                cuts.push(x);
            }
        }
    }
    cuts.sort_by(f64::total_cmp);
    let mut edges = vec![f64::NEG_INFINITY];
    edges.extend(cuts);
    edges.push(f64::INFINITY);
    let mut acc = 0.0;
    for w in edges.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let mid = match (lo.is_finite(), hi.is_finite()) {
            (true, true) => 0.5 * (lo + hi),
            (false, true) => hi - 1.0,
            (true, false) => lo + 1.0,
            (false, false) => 0.0,
        };
        let c = argmax(mid);
        let z = |x: f64| normal.cdf((x - means[c]) / std);
        acc += prior[c] * (z(hi) - z(lo));
    }
    acc
}

fn gaussian_classes(
    p: &GaussianClassesParams,
    spec: &SyntheticSpec,
    root: &Rng,
) -> Result<SyntheticData> {
    check_prior(&p.prior)?;
    if p.means.len() != p.prior.len() || p.means.len() < 2 {
        return Err(spec_err(
            "means",
            "needs one mean per class and at least two classes",
        ));
    }
    if !(p.std > 0.0) {
        return Err(spec_err("std", "must be positive"));
    }
    if p.shifts.is_empty() {
        return Err(spec_err("shifts", "needs at least one source shift"));
    }
    let shifts: Vec<f64> = p.shifts.iter().cloned().chain([p.target_shift]).collect();
    let means: Vec<Vec<Vec<f64>>> = shifts
        .iter()
        .map(|s| p.means.iter().map(|mu| vec![mu + s]).collect())
        .collect();
    let (sources, target, target_labels) = from_means(
        "gaussian-classes-1d",
        means.clone(),
        p.std,
        &p.prior,
        spec,
        root,
    )?;
    Ok(SyntheticData {
        truth: GroundTruth {
            family: "gaussian-classes-1d".into(),
            label_space: LabelSpace::Categorical {
                classes: p.prior.len(),
            },
            domains: domain_names(sources.len()),
            target_domain: TARGET_DOMAIN.into(),
            target_labels,
            theta_star: Some(shifts.iter().map(|s| vec![*s]).collect()),
            conditional_means: Some(means),
            prior: Some(p.prior.clone()),
            bayes_accuracy: Some(bayes_accuracy_1d(&p.means, p.std, &p.prior)),
            graph: None,
            changing: vec![],
        },
        sources,
        target,
    })
}

/// Linear-Gaussian structural model used by the FCM families.
struct LinearSem {
    names: Vec<String>,
    /// Per feature: (parent index with 0 = Y, per-domain coefficients).
    parents: Vec<Vec<(usize, Vec<f64>)>>,
    intercepts: Vec<Vec<f64>>,
    noise: f64,
}

impl LinearSem {
    fn pick(v: &[f64], k: usize) -> f64 {
        if v.len() == 1 {
            v[0]
        } else {
            v[k]
        }
    }

    fn sample(&self, rng: &mut Rng, y: &[f64], k: usize) -> Tensor2 {
        let n = y.len();
        let d = self.names.len();
        let mut x = Tensor2::zeros(n, d);
        for (r, &yr) in y.iter().enumerate() {
            for i in 0..d {
                let mut v = Self::pick(&self.intercepts[i], k) + self.noise * rng.standard_normal();
                for (p, coef) in &self.parents[i] {
                    let pv = if *p == 0 { yr } else { x.get(r, p - 1) };
                    v += Self::pick(coef, k) * pv;
                }
                x.set(r, i, v);
            }
        }
        x
    }

    fn changing(&self) -> Vec<String> {
        let varies = |v: &[f64]| v.len() > 1 && v.iter().any(|c| *c != v[0]);
        self.names
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                varies(&self.intercepts[*i]) || self.parents[*i].iter().any(|(_, c)| varies(c))
            })
            .map(|(_, n)| n.clone())
            .collect()
    }

    fn graph(&self) -> TrueGraph {
        let mut nodes = vec!["Y".to_string()];
        nodes.extend(self.names.iter().cloned());
        let name = |p: usize| {
            if p == 0 {
                "Y".to_string()
            } else {
                self.names[p - 1].clone()
            }
        };
        let edges = self
            .parents
            .iter()
            .enumerate()
            .flat_map(|(i, ps)| {
                ps.iter()
                    .map(move |(p, _)| (name(*p), self.names[i].clone()))
            })
            .collect();
        TrueGraph { nodes, edges }
    }
}

enum YDist<'a> {
    Categorical(&'a [f64]),
    Uniform(f64),
}

fn sem_data(
    family: &str,
    sem: &LinearSem,
    ydist: YDist<'_>,
    m: usize,
    spec: &SyntheticSpec,
    root: &Rng,
) -> Result<SyntheticData> {
    let mut sources = Vec::with_capacity(m);
    let mut target = None;
    let mut target_labels = Vec::new();
    for k in 0..=m {
        let mut rng = root.fork(k as u64);
        let n = if k == m {
            spec.n_target
        } else {
            spec.n_per_domain
        };
        let y: Vec<f64> = match ydist {
            YDist::Categorical(prior) => draw_labels(&mut rng, prior, n),
            YDist::Uniform(range) => (0..n).map(|_| rng.uniform() * range).collect(),
        };
        let x = sem.sample(&mut rng, &y, k);
        if k == m {
            target = Some(DomainDataset::new(
                TARGET_DOMAIN,
                x,
                None,
                sem.names.clone(),
            )?);
            target_labels = y;
        } else {
            sources.push(DomainDataset::new(
                source_name(k),
                x,
                Some(y),
                sem.names.clone(),
            )?);
        }
    }
    let (label_space, prior) = match ydist {
        YDist::Categorical(p) => (
            LabelSpace::Categorical { classes: p.len() },
            Some(p.to_vec()),
        ),
        YDist::Uniform(_) => (LabelSpace::Continuous, None),
    };
    Ok(SyntheticData {
        truth: GroundTruth {
            family: family.into(),
            label_space,
            domains: domain_names(m),
            target_domain: TARGET_DOMAIN.into(),
            target_labels,
            theta_star: None,
            conditional_means: None,
            prior,
            bayes_accuracy: None,
            graph: Some(sem.graph()),
            changing: sem.changing(),
        },
        sources,
        target: target.expect("target generated"),
    })
}

fn per_domain(field: &str, v: &[f64], m: usize) -> Result<()> {
    if v.len() != 1 && v.len() != m + 1 {
        return Err(spec_err(
            field,
            format!("needs 1 or {} values, got {}", m + 1, v.len()),
        ));
    }
    if v.iter().any(|c| !c.is_finite()) {
        return Err(spec_err(field, "values must be finite"));
    }
    Ok(())
}

fn fcm_chain(p: &FcmChainParams, spec: &SyntheticSpec, root: &Rng) -> Result<SyntheticData> {
    check_prior(&p.prior)?;
    if p.domains == 0 {
        return Err(spec_err("domains", "must be positive"));
    }
    if p.coefficients.is_empty() {
        return Err(spec_err("coefficients", "chain needs at least one link"));
    }
    if !(p.noise > 0.0) {
        return Err(spec_err("noise", "must be positive"));
    }
    let len = p.coefficients.len();
    for c in &p.coefficients {
        per_domain("coefficients", c, p.domains)?;
    }
    if !p.intercepts.is_empty() && p.intercepts.len() != len {
        return Err(spec_err(
            "intercepts",
            format!("needs {len} entries or none"),
        ));
    }
    let intercepts = if p.intercepts.is_empty() {
        vec![vec![0.0]; len]
    } else {
        for c in &p.intercepts {
            per_domain("intercepts", c, p.domains)?;
        }
        p.intercepts.clone()
    };
    let sem = LinearSem {
        names: names(len),
        parents: p
            .coefficients
            .iter()
            .enumerate()
            .map(|(i, c)| vec![(i, c.clone())])
            .collect(),
        intercepts,
        noise: p.noise,
    };
    sem_data(
        "fcm-chain",
        &sem,
        YDist::Categorical(&p.prior),
        p.domains,
        spec,
        root,
    )
}

fn wifi_like(p: &WifiLikeParams, spec: &SyntheticSpec, root: &Rng) -> Result<SyntheticData> {
    if p.domains == 0 {
        return Err(spec_err("domains", "must be positive"));
    }
    if !(p.noise > 0.0) {
        return Err(spec_err("noise", "must be positive"));
    }
    if !(p.location_range > 0.0) {
        return Err(spec_err("location_range", "must be positive"));
    }
    let feature_names = names(8);
    for c in &p.changing {
        if !feature_names.contains(c) {
            return Err(spec_err("changing", format!("unknown variable `{c}`")));
        }
    }
    let m = p.domains;
    let intercepts = feature_names
        .iter()
        .map(|n| {
            if p.changing.contains(n) {
                (0..=m).map(|s| p.shift * s as f64).collect()
            } else {
                vec![0.0]
            }
        })
        .collect();
    let sem = LinearSem {
        names: feature_names,
        parents: WifiLikeParams::template()
            .into_iter()
            .map(|ps| ps.into_iter().map(|(i, c)| (i, vec![c])).collect())
            .collect(),
        intercepts,
        noise: p.noise,
    };
    sem_data(
        "fcm-wifi-like",
        &sem,
        YDist::Uniform(p.location_range),
        m,
        spec,
        root,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(family: Family, n: usize) -> SyntheticSpec {
        SyntheticSpec {
            family,
            n_per_domain: n,
            n_target: n,
            seed: 5,
        }
    }

    #[test]
    fn linear_mean_plug_in() {
        let p = LinearMeanParams {
            a: vec![vec![1.0], vec![0.0]],
            h: vec![vec![0.0, 0.0], vec![0.0, 1.0]],
            thetas: vec![vec![2.0]],
            target_theta: vec![2.0],
            noise: 0.0,
            prior: vec![0.5, 0.5],
            identifiable: false,
        };
        let data = make_synthetic(&spec(Family::LinearMean(p), 20)).unwrap();
        let s = &data.sources[0];
        let y = s.labels().unwrap();
        for (r, &yr) in y.iter().enumerate() {
            if yr == 1.0 {
                assert_eq!(s.x.row(r), &[2.0, 1.0]);
            }
        }
        assert_eq!(data.truth.conditional_means.unwrap()[0][1], vec![2.0, 1.0]);
    }

    #[test]
    fn quarter_turn() {
        let r = rotate([1.0, 0.0], 90.0);
        assert!(r[0].abs() < 1e-15 && (r[1] - 1.0).abs() < 1e-15);
        let p = RotationParams {
            class_means: vec![[1.0, 0.0]],
            angles_deg: vec![0.0],
            target_angle_deg: 90.0,
            noise: 0.1,
            prior: vec![1.0],
        };
        let data = make_synthetic(&spec(Family::Rotation2d(p), 10)).unwrap();
        let mu = &data.truth.conditional_means.unwrap()[1][0];
        assert!(mu[0].abs() < 1e-15 && (mu[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn chain_regression_slope() {
        let data = make_synthetic(&spec(
            Family::FcmChain(FcmChainParams::two_link(vec![1.0, 2.0])),
            5000,
        ))
        .unwrap();
        let x = &data.sources[0].x;
        let (a, b) = (x.column_values(0), x.column_values(1));
        let (ma, mb) = (
            a.iter().sum::<f64>() / 5000.0,
            b.iter().sum::<f64>() / 5000.0,
        );
        let cov: f64 = a.iter().zip(&b).map(|(u, v)| (u - ma) * (v - mb)).sum();
        let var: f64 = a.iter().map(|u| (u - ma).powi(2)).sum();
        assert!((cov / var - 0.5).abs() < 0.03, "{}", cov / var);
        assert_eq!(data.truth.changing, vec!["X1".to_string()]);
    }

    #[test]
    fn moments_match_analytic_within_clt() {
        let mut p = GaussianClassesParams::two_class(1.0);
        p.shifts = vec![0.0, -0.5];
        let data = make_synthetic(&spec(Family::GaussianClasses1d(p), 10_000)).unwrap();
        let means = data.truth.conditional_means.clone().unwrap();
        for (k, s) in data.sources.iter().enumerate() {
            let y = s.labels().unwrap();
            for (c, class_mean) in means[k].iter().enumerate() {
                let vals: Vec<f64> = (0..s.len())
                    .filter(|&r| y[r] == c as f64)
                    .map(|r| s.x.get(r, 0))
                    .collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let bound = 5.0 / (vals.len() as f64).sqrt();
                assert!((mean - class_mean[0]).abs() < bound);
                let var =
                    vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
                assert!((var - 1.0).abs() < 5.0 * (2.0 / vals.len() as f64).sqrt());
            }
        }
        assert!(data.target.y.is_none());
        assert_eq!(data.truth.target_labels.len(), 10_000);
    }

    #[test]
    fn bayes_rate_two_classes() {
        // Φ(2) for classes 4σ apart with equal priors.
        let acc = bayes_accuracy_1d(&[-2.0, 2.0], 1.0, &[0.5, 0.5]);
        assert!((acc - 0.977_249_868).abs() < 1e-8, "{acc}");
        let skewed = bayes_accuracy_1d(&[0.0, 1.0], 1.0, &[0.9, 0.1]);
        assert!(skewed >= 0.9);
    }

    #[test]
    fn generation_is_deterministic() {
        let s = spec(Family::FcmWifiLike(WifiLikeParams::with_domains(3)), 50);
        assert_eq!(make_synthetic(&s).unwrap(), make_synthetic(&s).unwrap());
    }

    #[test]
    fn invalid_fields_are_named() {
        let mut p = LinearMeanParams::recovery_default();
        p.thetas.truncate(2);
        let err = make_synthetic(&spec(Family::LinearMean(p), 10)).unwrap_err();
        assert!(
            matches!(err, Error::Spec { ref field, .. } if field == "thetas"),
            "{err}"
        );
        let mut w = WifiLikeParams::with_domains(2);
        w.changing = vec!["X9".into()];
        let err = make_synthetic(&spec(Family::FcmWifiLike(w), 10)).unwrap_err();
        assert!(matches!(err, Error::Spec { ref field, .. } if field == "changing"));
    }

    #[test]
    fn spec_json_round_trip() {
        let s = spec(
            Family::GaussianClasses1d(GaussianClassesParams::two_class(1.0)),
            10,
        );
        let text = serde_json::to_string(&s).unwrap();
        assert!(
            text.contains("\"family\":\"gaussian-classes-1d\""),
            "{text}"
        );
        let back: SyntheticSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
    }
}
