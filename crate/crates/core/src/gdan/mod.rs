//! The multi-domain generator `X = g(Y, E; θ)` with one latent column per
//! domain, trained by matching joint source distributions and the target
//! feature marginal.

mod net;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use net::{Activation, GeneratorNet, InputLayout};

use crate::data::{check_consistent, DomainDataset, LabelSpace};
use crate::error::{Error, Result};
use crate::kernels::{self, BandwidthChoice, KernelConfig, LabelKernel};
use crate::numerics::{derive_seed, matmul, RmsPropConfig, RmsPropState, Rng, Tape, Tensor2};

/// Largest label code count for which labels are treated as classes.
pub const MAX_CLASSES: usize = 32;

/// Per-domain latent columns: `m` sources followed by the target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaMatrix {
    pub domains: Vec<String>,
    /// `d x (m+1)`.
    pub values: Tensor2,
}

impl ThetaMatrix {
    pub fn new(domains: Vec<String>, values: Tensor2) -> Result<Self> {
        if values.cols() != domains.len() {
            return Err(Error::contract(format!(
                "Θ has {} columns for {} domains",
                values.cols(),
                domains.len()
            )));
        }
        Ok(Self { domains, values })
    }

    /// Entries i.i.d. `N(0, std²)`.
    pub fn random(domains: Vec<String>, d: usize, std: f64, rng: &mut Rng) -> Self {
        let m = domains.len();
        let mut values = Tensor2::zeros(d, m);
        for v in values.data_mut() {
            *v = rng.normal(0.0, std);
        }
        Self { domains, values }
    }

    pub fn dim(&self) -> usize {
        self.values.rows()
    }

    pub fn index_of(&self, domain: &str) -> Result<usize> {
        self.domains
            .iter()
            .position(|d| d == domain)
            .ok_or_else(|| {
                Error::contract(format!(
                    "unknown domain `{domain}`; known: {:?}",
                    self.domains
                ))
            })
    }

    /// Column `s`, read directly.
    pub fn column(&self, s: usize) -> Vec<f64> {
        self.values.column_values(s)
    }

    /// `Θ · 1_s`.
    pub fn select(&self, s: usize) -> Result<Vec<f64>> {
        if s >= self.domains.len() {
            return Err(Error::contract(format!("domain index {s} out of range")));
        }
        let mut one_hot = Tensor2::zeros(self.domains.len(), 1);
        one_hot.set(s, 0, 1.0);
        Ok(matmul(&self.values, &one_hot)?.into_vec())
    }
}

/// Distribution generated labels are drawn from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelPrior {
    Categorical {
        probs: Vec<f64>,
    },
    /// Resampling pool for real-valued labels.
    Empirical {
        pool: Vec<f64>,
    },
}

impl LabelPrior {
    pub fn from_labels(space: &LabelSpace, labels: &[f64]) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::contract("label prior needs at least one label"));
        }
        match space {
            LabelSpace::Categorical { classes } => {
                space.check(labels)?;
                let mut counts = vec![0.0; *classes];
                for y in labels {
                    counts[*y as usize] += 1.0;
                }
                let n = labels.len() as f64;
                Ok(LabelPrior::Categorical {
                    probs: counts.into_iter().map(|c| c / n).collect(),
                })
            }
            LabelSpace::Continuous => Ok(LabelPrior::Empirical {
                pool: labels.to_vec(),
            }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LabelPrior::Categorical { probs } => {
                if probs.iter().any(|p| !(*p >= 0.0))
                    || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-12
                {
                    return Err(Error::contract(
                        "class probabilities must be non-negative and sum to 1",
                    ));
                }
            }
            LabelPrior::Empirical { pool } => {
                if pool.is_empty() {
                    return Err(Error::contract("empty label pool"));
                }
            }
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut Rng, n: usize) -> Vec<f64> {
        match self {
            LabelPrior::Categorical { probs } => {
                (0..n).map(|_| rng.categorical(probs) as f64).collect()
            }
            LabelPrior::Empirical { pool } => (0..n).map(|_| pool[rng.below(pool.len())]).collect(),
        }
    }
}

/// Generator shape. The defaults are the tabular G-DAN architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub noise_dim: usize,
    pub theta_dim: usize,
    pub theta_init_std: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128],
            activation: Activation::Tanh,
            noise_dim: 20,
            theta_dim: 1,
            theta_init_std: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Weight of the target marginal term.
    pub alpha: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub optimizer: RmsPropConfig,
    pub bandwidths: BandwidthChoice,
    pub seed: u64,
    /// Used by G-DAN; causal modules take their shape from the model builder.
    pub arch: ArchConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            batch_size: 128,
            iterations: 2000,
            optimizer: RmsPropConfig::default(),
            bandwidths: BandwidthChoice::default(),
            seed: 0,
            arch: ArchConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!(
                "alpha must be finite and >= 0, got {}",
                self.alpha
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be >= 2, got {}",
                self.batch_size
            )));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be positive".into()));
        }
        if self.arch.noise_dim == 0 {
            return Err(Error::Config("noise_dim must be positive".into()));
        }
        if self.arch.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        self.optimizer
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }
}

/// Per-iteration objective values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub total: Vec<f64>,
    /// Unweighted target marginal term.
    pub target: Vec<f64>,
}

impl LossTrace {
    /// Mean of the first and last `window` totals.
    pub fn endpoints(&self, window: usize) -> (f64, f64) {
        let w = window.clamp(1, self.total.len().max(1));
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len().max(1) as f64;
        (
            mean(&self.total[..w.min(self.total.len())]),
            mean(&self.total[self.total.len().saturating_sub(w)..]),
        )
    }
}

/// A fitted G-DAN: generator, Θ, and everything needed to sample again.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GdanModel {
    pub net: GeneratorNet,
    pub theta: ThetaMatrix,
    pub label_space: LabelSpace,
    pub prior: LabelPrior,
    pub kernel: KernelConfig,
    pub label_kernel: LabelKernel,
    pub feature_names: Vec<String>,
    pub config: TrainConfig,
}

impl GdanModel {
    pub fn target_domain(&self) -> &str {
        self.theta.domains.last().map(String::as_str).unwrap_or("")
    }

    pub fn theta_of(&self, domain: &str) -> Result<Vec<f64>> {
        self.theta.select(self.theta.index_of(domain)?)
    }

    /// One row per label at the given θ.
    pub fn generate_at(&self, theta: &[f64], labels: &[f64], rng: &mut Rng) -> Result<Tensor2> {
        generate(&self.net, &self.label_space, theta, labels, rng)
    }

    /// `n` labeled rows from a fitted domain, labels drawn from the prior.
    pub fn sample_domain(&self, domain: &str, n: usize, rng: &mut Rng) -> Result<DomainDataset> {
        let theta = self.theta_of(domain)?;
        self.sample_theta(domain, &theta, n, rng)
    }

    pub fn sample_theta(
        &self,
        name: &str,
        theta: &[f64],
        n: usize,
        rng: &mut Rng,
    ) -> Result<DomainDataset> {
        let labels = self.prior.sample(rng, n);
        let x = self.generate_at(theta, &labels, rng)?;
        DomainDataset::new(name, x, Some(labels), self.feature_names.clone())
    }
}

/// `X_i = g(y_i, e_i; θ)` with fresh standard-normal `e_i`.
pub fn generate(
    net: &GeneratorNet,
    space: &LabelSpace,
    theta: &[f64],
    labels: &[f64],
    rng: &mut Rng,
) -> Result<Tensor2> {
    if theta.len() != net.layout().theta {
        return Err(Error::contract(format!(
            "θ has length {}, model latent dimension is {}",
            theta.len(),
            net.layout().theta
        )));
    }
    if labels.is_empty() {
        return Ok(Tensor2::zeros(0, net.out_dim()));
    }
    space.check(labels)?;
    let noise = rng.gaussian(labels.len(), net.layout().noise)?;
    net.forward(&net.assemble(&space.encode(labels), &noise, theta)?)
}

/// `count` evenly spaced points from `a` to `b`, both included.
pub fn interpolate_domains(a: &[f64], b: &[f64], count: usize) -> Result<Vec<Vec<f64>>> {
    if a.len() != b.len() {
        return Err(Error::contract(format!(
            "θ lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if count < 2 {
        return Err(Error::contract(format!(
            "interpolation needs count >= 2, got {count}"
        )));
    }
    Ok((0..count)
        .map(|k| {
            let t = k as f64 / (count - 1) as f64;
            a.iter()
                .zip(b)
                .map(|(x, y)| (1.0 - t) * x + t * y)
                .collect()
        })
        .collect())
}

/// One term of the objective, evaluated on a fixed minibatch.
#[derive(Clone, Debug)]
pub struct DomainBatch {
    /// Generator condition block (label encoding or parent values).
    pub condition: Tensor2,
    pub noise: Tensor2,
    /// Θ column feeding the generator, if it takes θ.
    pub column: Option<usize>,
    /// Observed rows to match.
    pub real: Tensor2,
    /// Constant columns placed before the generated output when comparing.
    pub prefix: Option<Tensor2>,
    /// `(real, generated)` labels for a joint term; `None` for a marginal one.
    pub labels: Option<(Vec<f64>, Vec<f64>)>,
    pub weight: f64,
}

/// Value and gradients of one weighted term.
pub(crate) struct TermGrad {
    pub value: f64,
    pub net: Vec<f64>,
    pub theta: Vec<f64>,
}

pub(crate) fn term_grad(
    net: &GeneratorNet,
    theta: Option<&Tensor2>,
    batch: &DomainBatch,
    kernel: &KernelConfig,
    lk: &LabelKernel,
) -> Result<TermGrad> {
    let n = batch.condition.rows();
    let mut tape = Tape::new();
    let leaves = net.leaves(&mut tape);
    let cond = tape.constant(batch.condition.clone());
    let noise = tape.constant(batch.noise.clone());
    let mut parts = vec![cond, noise];
    let theta_leaf = match (theta, batch.column) {
        (Some(t), Some(s)) => {
            let leaf = tape.param(t.clone());
            let mut one_hot = Tensor2::zeros(t.cols(), 1);
            one_hot.set(s, 0, 1.0);
            let e = tape.constant(one_hot);
            let col = tape.matmul(leaf, e)?;
            let row = tape.transpose(col);
            parts.push(tape.broadcast_rows(row, n)?);
            Some(leaf)
        }
        _ => None,
    };
    let input = tape.concat_cols(&parts)?;
    let mut out = net.forward_tape(&mut tape, &leaves, input)?;
    if let Some(p) = &batch.prefix {
        let p = tape.constant(p.clone());
        out = tape.concat_cols(&[p, out])?;
    }
    let real = tape.constant(batch.real.clone());
    let raw = match &batch.labels {
        Some((yr, yg)) => kernels::mmd2_joint_tape(&mut tape, real, yr, out, yg, kernel, lk)?,
        None => kernels::mmd2_marginal_tape(&mut tape, real, out, kernel)?,
    };
    let loss = tape.scale(raw, batch.weight);
    let grads = tape.backward(loss)?;
    let mut g_net = vec![0.0; net.param_count()];
    net.flat_grads(&grads, &leaves, &mut g_net);
    let g_theta = theta_leaf.map_or_else(Vec::new, |l| grads.wrt(l).into_vec());
    Ok(TermGrad {
        value: tape.value(raw).item()?,
        net: g_net,
        theta: g_theta,
    })
}

/// Full objective `Σ_s w_s·MMD²_s` on fixed batches, with its gradient laid
/// out as `[network parameters | Θ row-major]`.
pub fn objective(
    net: &GeneratorNet,
    theta: &ThetaMatrix,
    batches: &[DomainBatch],
    kernel: &KernelConfig,
    lk: &LabelKernel,
) -> Result<(f64, Vec<f64>)> {
    let terms: Vec<TermGrad> = batches
        .par_iter()
        .map(|b| term_grad(net, Some(&theta.values), b, kernel, lk))
        .collect::<Result<_>>()?;
    let p = net.param_count();
    let mut grad = vec![0.0; p + theta.values.len()];
    let mut total = 0.0;
    for (t, b) in terms.iter().zip(batches) {
        total += b.weight * t.value;
        for (g, v) in grad[..p].iter_mut().zip(&t.net) {
            *g += v;
        }
        for (g, v) in grad[p..].iter_mut().zip(&t.theta) {
            *g += v;
        }
    }
    Ok((total, grad))
}

fn batch_rows(rng: &mut Rng, n: usize, size: usize) -> Vec<usize> {
    (0..size).map(|_| rng.below(n)).collect()
}

/// Label kernel for the label space: delta on classes, RBF at the median
/// label distance otherwise.
pub fn label_kernel_for(space: &LabelSpace, labels: &[f64]) -> Result<LabelKernel> {
    match space {
        LabelSpace::Categorical { classes } => Ok(LabelKernel::Delta { classes: *classes }),
        LabelSpace::Continuous => {
            let cfg = kernels::median_heuristic(&Tensor2::column(labels), &[1.0])?;
            Ok(LabelKernel::Rbf {
                sigma: cfg.bandwidths[0],
            })
        }
    }
}

/// Pooled rows of every dataset.
pub(crate) fn pooled_x(datasets: &[&DomainDataset]) -> Result<Tensor2> {
    Tensor2::vstack(&datasets.iter().map(|d| &d.x).collect::<Vec<_>>())
}

/// Draws the minibatches for one iteration.
fn draw_batches(
    sources: &[&DomainDataset],
    target: &Tensor2,
    model: &GdanModel,
    cfg: &TrainConfig,
    iteration: usize,
) -> Result<Vec<DomainBatch>> {
    let it_seed = derive_seed(derive_seed(cfg.seed, 2), iteration as u64);
    let mut out = Vec::with_capacity(sources.len() + 1);
    let nb = cfg.batch_size;
    let noise_dim = model.net.layout().noise;
    for (s, ds) in sources.iter().enumerate() {
        let mut rng = Rng::new(derive_seed(it_seed, s as u64));
        let rows = batch_rows(&mut rng, ds.len(), nb);
        let y = ds.labels()?;
        let gen_labels = model.prior.sample(&mut rng, nb);
        out.push(DomainBatch {
            condition: model.label_space.encode(&gen_labels),
            noise: rng.gaussian(nb, noise_dim)?,
            column: Some(s),
            real: ds.x.select_rows(&rows),
            prefix: None,
            labels: Some((rows.iter().map(|&r| y[r]).collect(), gen_labels)),
            weight: 1.0,
        });
    }
    if cfg.alpha > 0.0 {
        let mut rng = Rng::new(derive_seed(it_seed, sources.len() as u64));
        let rows = batch_rows(&mut rng, target.rows(), nb);
        let gen_labels = model.prior.sample(&mut rng, nb);
        out.push(DomainBatch {
            condition: model.label_space.encode(&gen_labels),
            noise: rng.gaussian(nb, noise_dim)?,
            column: Some(sources.len()),
            real: target.select_rows(&rows),
            prefix: None,
            labels: None,
            weight: cfg.alpha,
        });
    }
    Ok(out)
}

/// Builds the untrained model: label space, prior, kernels and initial
/// parameters are all fixed here from the data and the seed.
pub fn init_gdan(
    sources: &[DomainDataset],
    target: &DomainDataset,
    cfg: &TrainConfig,
) -> Result<GdanModel> {
    cfg.validate()?;
    if sources.is_empty() {
        return Err(Error::contract(
            "G-DAN needs at least one labeled source domain",
        ));
    }
    if target.is_empty() {
        return Err(Error::contract("target features are empty"));
    }
    let mut all: Vec<&DomainDataset> = sources.iter().collect();
    all.push(target);
    check_consistent(&all)?;
    let labels: Vec<f64> = sources
        .iter()
        .map(|s| s.labels().map(<[f64]>::to_vec))
        .collect::<Result<Vec<_>>>()?
        .concat();
    let label_space = LabelSpace::infer(&labels, MAX_CLASSES);
    let prior = LabelPrior::from_labels(&label_space, &labels)?;
    let kernel = cfg.bandwidths.resolve(&pooled_x(&all[..sources.len()])?)?;
    let label_kernel = label_kernel_for(&label_space, &labels)?;

    let root = Rng::new(cfg.seed);
    let layout = InputLayout {
        condition: label_space.encoded_width(),
        noise: cfg.arch.noise_dim,
        theta: cfg.arch.theta_dim,
    };
    let net = GeneratorNet::new(
        layout,
        &cfg.arch.hidden,
        target.dim(),
        cfg.arch.activation,
        &mut root.fork(0),
    )?;
    let mut domains: Vec<String> = sources.iter().map(|s| s.domain.clone()).collect();
    domains.push(target.domain.clone());
    let theta = ThetaMatrix::random(
        domains,
        cfg.arch.theta_dim,
        cfg.arch.theta_init_std,
        &mut root.fork(1),
    );
    Ok(GdanModel {
        net,
        theta,
        label_space,
        prior,
        kernel,
        label_kernel,
        feature_names: target.feature_names.clone(),
        config: cfg.clone(),
    })
}

/// Fits generator and Θ jointly by minibatch RMSProp on
/// `Σ_s MMD²_joint(source s) + α·MMD²_marginal(target)`.
pub fn train_gdan(
    sources: &[DomainDataset],
    target: &DomainDataset,
    cfg: &TrainConfig,
) -> Result<(GdanModel, LossTrace)> {
    let mut model = init_gdan(sources, target, cfg)?;
    let trace = fit(&mut model, sources, &target.x)?;
    Ok((model, trace))
}

fn fit(model: &mut GdanModel, sources: &[DomainDataset], target: &Tensor2) -> Result<LossTrace> {
    let cfg = model.config.clone();
    let refs: Vec<&DomainDataset> = sources.iter().collect();
    let p = model.net.param_count();
    let mut params = model.net.params();
    params.extend_from_slice(model.theta.values.data());
    let mut opt = RmsPropState::new(cfg.optimizer, params.len());
    let mut trace = LossTrace::default();
    let m = sources.len();
    for it in 0..cfg.iterations {
        let batches = draw_batches(&refs, target, model, &cfg, it)?;
        let terms: Vec<TermGrad> = batches
            .par_iter()
            .map(|b| {
                term_grad(
                    &model.net,
                    Some(&model.theta.values),
                    b,
                    &model.kernel,
                    &model.label_kernel,
                )
            })
            .collect::<Result<_>>()?;
        let mut grad = vec![0.0; params.len()];
        let mut total = 0.0;
        let mut target_term = 0.0;
        for (k, (t, b)) in terms.iter().zip(&batches).enumerate() {
            total += b.weight * t.value;
            if k == m {
                target_term = t.value;
            }
            for (g, v) in grad[..p].iter_mut().zip(&t.net) {
                *g += v;
            }
            for (g, v) in grad[p..].iter_mut().zip(&t.theta) {
                *g += v;
            }
        }
        if !total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::TrainingDiverged {
                module: "gdan".into(),
                iteration: it,
                reason: format!("non-finite loss or gradient (loss {total})"),
            });
        }
        trace.total.push(total);
        trace.target.push(target_term);
        opt.step(&mut params, &grad)?;
        model.net.set_params(&params[..p])?;
        model.theta.values.data_mut().copy_from_slice(&params[p..]);
    }
    Ok(trace)
}
