//! G-DAN factorized along a causal graph: one generator per module
//! `X_i = g_i(PA_i, E_i; θ_i)`, each trained on its own conditional.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::causal::{GroupDag, LABEL_NODE};
use crate::data::{check_consistent, DomainDataset, LabelSpace};
use crate::error::{Error, Result};
use crate::gdan::{
    label_kernel_for, term_grad, Activation, ArchConfig, DomainBatch, GeneratorNet, InputLayout,
    LabelPrior, LossTrace, TermGrad, ThetaMatrix, TrainConfig, MAX_CLASSES,
};
use crate::kernels::{KernelConfig, LabelKernel};
use crate::numerics::{derive_seed, RmsPropState, Rng, Tensor2};

/// Per-module shape: one hidden layer of 64, unit noise and θ.
pub fn module_arch() -> ArchConfig {
    ArchConfig {
        hidden: vec![64],
        activation: Activation::Tanh,
        noise_dim: 1,
        theta_dim: 1,
        theta_init_std: 0.1,
    }
}

/// One structural equation over a node or a jointly generated group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FcmModule {
    pub targets: Vec<String>,
    /// `Y` first when it is a parent, then feature parents.
    pub parents: Vec<String>,
    pub changing: bool,
    pub theta_dim: usize,
    pub noise_dim: usize,
    pub net: Option<GeneratorNet>,
    /// One column per domain; absent for invariant modules.
    pub theta: Option<ThetaMatrix>,
    pub kernel: Option<KernelConfig>,
}

impl FcmModule {
    pub fn name(&self) -> String {
        self.targets.join("+")
    }

    pub fn has_label_parent(&self) -> bool {
        self.parents.iter().any(|p| p == LABEL_NODE)
    }

    pub fn feature_parents(&self) -> Vec<String> {
        self.parents
            .iter()
            .filter(|p| *p != LABEL_NODE)
            .cloned()
            .collect()
    }

    pub fn is_fitted(&self) -> bool {
        self.net.is_some() && (!self.changing || self.theta.is_some())
    }

    fn net(&self) -> Result<&GeneratorNet> {
        self.net
            .as_ref()
            .ok_or_else(|| Error::contract(format!("module {} is not fitted", self.name())))
    }

    fn theta_at(&self, column: usize) -> Result<Vec<f64>> {
        match &self.theta {
            Some(t) if self.changing => t.select(column),
            None if self.changing => Err(Error::contract(format!(
                "module {} has no θ table",
                self.name()
            ))),
            _ => Ok(Vec::new()),
        }
    }
}

/// Label handling and domain roster fixed when training starts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitContext {
    pub label_space: LabelSpace,
    pub prior: LabelPrior,
    pub label_kernel: LabelKernel,
    /// Sources followed by the target.
    pub domains: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CgdanModel {
    /// Topological, ties broken by module name.
    pub modules: Vec<FcmModule>,
    /// Shape of every module network.
    pub arch: ArchConfig,
    pub gdag: Option<GroupDag>,
    pub context: Option<FitContext>,
}

/// Orders modules so every parent is produced before it is read.
fn canonical_order(mut modules: Vec<FcmModule>) -> Result<Vec<FcmModule>> {
    let mut producer: BTreeMap<&str, usize> = BTreeMap::new();
    for (k, m) in modules.iter().enumerate() {
        for t in &m.targets {
            if t == LABEL_NODE {
                return Err(Error::contract("`Y` cannot be generated by a module"));
            }
            if producer.insert(t, k).is_some() {
                return Err(Error::contract(format!(
                    "variable {t} is covered by two modules"
                )));
            }
        }
    }
    let n = modules.len();
    let mut deps: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for (k, m) in modules.iter().enumerate() {
        for p in m.feature_parents() {
            let &src = producer.get(p.as_str()).ok_or_else(|| {
                Error::contract(format!(
                    "parent {p} of module {} is not generated",
                    m.name()
                ))
            })?;
            deps[k].insert(src);
        }
    }
    let names: Vec<String> = modules.iter().map(FcmModule::name).collect();
    let mut done = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let next = (0..n)
            .filter(|&k| !done[k] && deps[k].iter().all(|&d| done[d]))
            .min_by(|&a, &b| names[a].cmp(&names[b]))
            .ok_or_else(|| Error::Inconsistency("module parents form a cycle".into()))?;
        done[next] = true;
        order.push(next);
    }
    let mut slots: Vec<Option<FcmModule>> = modules.drain(..).map(Some).collect();
    Ok(order
        .into_iter()
        .map(|k| slots[k].take().expect("each index once"))
        .collect())
}

/// One module per non-`Y` group; only `changing` modules take θ.
pub fn build_cgdan(gdag: &GroupDag, changing: &[String], arch: &ArchConfig) -> Result<CgdanModel> {
    if arch.noise_dim == 0 {
        return Err(Error::Config(
            "module noise dimension must be positive".into(),
        ));
    }
    let y_group = gdag.group_of(LABEL_NODE);
    if let Some(g) = y_group {
        if gdag.groups[g].len() != 1 || !gdag.parents(g).is_empty() {
            return Err(Error::contract(
                "`Y` must be a root on its own in the group graph",
            ));
        }
    }
    gdag.topological_order()
        .ok_or_else(|| Error::Inconsistency("group graph is cyclic".into()))?;
    let known: BTreeSet<&str> = gdag.groups.iter().flatten().map(String::as_str).collect();
    if let Some(c) = changing
        .iter()
        .find(|c| !known.contains(c.as_str()) && *c != LABEL_NODE)
    {
        return Err(Error::contract(format!(
            "changing module {c} is not in the graph"
        )));
    }
    let mut modules = Vec::new();
    for (g, members) in gdag.groups.iter().enumerate() {
        if Some(g) == y_group {
            continue;
        }
        let mut parent_groups = gdag.parents(g);
        parent_groups.sort_unstable();
        let mut parents: Vec<String> = Vec::new();
        if parent_groups.iter().any(|&p| Some(p) == y_group) {
            parents.push(LABEL_NODE.to_string());
        }
        for p in parent_groups.into_iter().filter(|&p| Some(p) != y_group) {
            parents.extend(gdag.groups[p].iter().cloned());
        }
        let is_changing = members.iter().any(|m| changing.contains(m));
        modules.push(FcmModule {
            targets: members.clone(),
            parents,
            changing: is_changing,
            theta_dim: if is_changing { arch.theta_dim } else { 0 },
            noise_dim: arch.noise_dim * members.len(),
            net: None,
            theta: None,
            kernel: None,
        });
    }
    Ok(CgdanModel {
        modules: canonical_order(modules)?,
        arch: arch.clone(),
        gdag: Some(gdag.clone()),
        context: None,
    })
}

/// Column indices of `names` in a dataset's features.
fn column_indices(ds: &DomainDataset, names: &[String]) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|n| {
            ds.column_index(n)
                .ok_or_else(|| Error::Schema(format!("domain {} has no column `{n}`", ds.domain)))
        })
        .collect()
}

/// Parent and target columns of one module in one dataset.
struct ModuleView {
    parents: Tensor2,
    targets: Tensor2,
    labels: Option<Vec<f64>>,
}

impl ModuleView {
    fn new(module: &FcmModule, ds: &DomainDataset) -> Result<Self> {
        Ok(Self {
            parents: ds
                .x
                .select_cols(&column_indices(ds, &module.feature_parents())?),
            targets: ds.x.select_cols(&column_indices(ds, &module.targets)?),
            labels: ds.y.clone(),
        })
    }

    fn joint(&self, rows: &[usize]) -> Result<Tensor2> {
        Tensor2::concat_cols(&[
            &self.parents.select_rows(rows),
            &self.targets.select_rows(rows),
        ])
    }
}

impl CgdanModel {
    /// Builds a model from modules in any order.
    pub fn from_modules(
        modules: Vec<FcmModule>,
        arch: ArchConfig,
        context: Option<FitContext>,
    ) -> Result<Self> {
        Ok(Self {
            modules: canonical_order(modules)?,
            arch,
            gdag: None,
            context,
        })
    }

    /// Generated variables, in module order.
    pub fn features(&self) -> Vec<String> {
        self.modules
            .iter()
            .flat_map(|m| m.targets.iter().cloned())
            .collect()
    }

    pub fn context(&self) -> Result<&FitContext> {
        self.context
            .as_ref()
            .ok_or_else(|| Error::contract("model has not been initialised for training"))
    }

    pub fn domains(&self) -> &[String] {
        self.context.as_ref().map_or(&[], |c| &c.domains)
    }

    pub fn target_domain(&self) -> &str {
        self.domains().last().map(String::as_str).unwrap_or("")
    }

    pub fn domain_index(&self, domain: &str) -> Result<usize> {
        self.domains()
            .iter()
            .position(|d| d == domain)
            .ok_or_else(|| {
                Error::contract(format!(
                    "unknown domain `{domain}`; known: {:?}",
                    self.domains()
                ))
            })
    }

    pub fn param_count(&self) -> usize {
        self.modules
            .iter()
            .map(|m| {
                m.net.as_ref().map_or(0, GeneratorNet::param_count)
                    + m.theta.as_ref().map_or(0, |t| t.values.len())
            })
            .sum()
    }

    pub fn module_index(&self, name: &str) -> Result<usize> {
        self.modules
            .iter()
            .position(|m| m.name() == name)
            .ok_or_else(|| Error::contract(format!("unknown module `{name}`")))
    }

    /// Sets the label context and fresh parameters for every module.
    pub fn initialise(&mut self, context: FitContext, seed: u64) -> Result<()> {
        context.prior.validate()?;
        let arch = self.arch.clone();
        let root = Rng::new(seed);
        for (k, m) in self.modules.iter_mut().enumerate() {
            let mut cond = m.feature_parents().len();
            if m.has_label_parent() {
                cond += context.label_space.encoded_width();
            }
            let layout = InputLayout {
                condition: cond,
                noise: m.noise_dim,
                theta: m.theta_dim,
            };
            let mut rng = root.fork(10 + k as u64);
            m.net = Some(GeneratorNet::new(
                layout,
                &arch.hidden,
                m.targets.len(),
                arch.activation,
                &mut rng,
            )?);
            m.theta = m.changing.then(|| {
                ThetaMatrix::random(
                    context.domains.clone(),
                    m.theta_dim,
                    arch.theta_init_std,
                    &mut rng.fork(1),
                )
            });
        }
        self.context = Some(context);
        Ok(())
    }

    fn condition(&self, m: &FcmModule, labels: &[f64], parents: &Tensor2) -> Result<Tensor2> {
        if !m.has_label_parent() {
            return Ok(parents.clone());
        }
        let enc = self.context()?.label_space.encode(labels);
        Tensor2::concat_cols(&[&enc, parents])
    }

    /// Runs modules `0..upto` ancestrally. `columns[k]` is the domain column
    /// module `k` reads θ from. Returns all generated variables in
    /// [`Self::features`] order; columns of modules not run stay zero.
    fn run_modules(
        &self,
        columns: &[usize],
        labels: &[f64],
        upto: usize,
        rng: &mut Rng,
    ) -> Result<Tensor2> {
        let features = self.features();
        let index: BTreeMap<&str, usize> = features
            .iter()
            .enumerate()
            .map(|(i, f)| (f.as_str(), i))
            .collect();
        let n = labels.len();
        let mut out = Tensor2::zeros(n, features.len());
        let base = rng.next_u64();
        if let Some(ctx) = &self.context {
            ctx.label_space.check(labels)?;
        }
        for (k, m) in self.modules.iter().enumerate().take(upto) {
            let net = m.net()?;
            let pidx: Vec<usize> = m
                .feature_parents()
                .iter()
                .map(|p| index[p.as_str()])
                .collect();
            let cond = self.condition(m, labels, &out.select_cols(&pidx))?;
            let noise = Rng::new(derive_seed(base, k as u64)).gaussian(n, m.noise_dim)?;
            let x = net.forward(&net.assemble(&cond, &noise, &m.theta_at(columns[k])?)?)?;
            for (j, t) in m.targets.iter().enumerate() {
                let c = index[t.as_str()];
                for r in 0..n {
                    out.set(r, c, x.get(r, j));
                }
            }
        }
        Ok(out)
    }

    fn check_fitted(&self) -> Result<()> {
        self.context()?;
        match self.modules.iter().find(|m| !m.is_fitted()) {
            Some(m) => Err(Error::contract(format!(
                "module {} is not fitted",
                m.name()
            ))),
            None => Ok(()),
        }
    }

    fn sample(
        &self,
        name: &str,
        columns: &[usize],
        labels: Option<&[f64]>,
        n: usize,
        rng: &mut Rng,
    ) -> Result<DomainDataset> {
        self.check_fitted()?;
        let labels = match labels {
            Some(l) => l.to_vec(),
            None => self.context()?.prior.sample(rng, n),
        };
        let x = self.run_modules(columns, &labels, self.modules.len(), rng)?;
        DomainDataset::new(name, x, Some(labels), self.features())
    }

    /// Labeled sample from one fitted domain. Given labels are used as-is;
    /// otherwise `n` labels come from the prior.
    pub fn ancestral_generate(
        &self,
        domain: &str,
        labels: Option<&[f64]>,
        n: usize,
        rng: &mut Rng,
    ) -> Result<DomainDataset> {
        let s = self.domain_index(domain)?;
        self.sample(domain, &vec![s; self.modules.len()], labels, n, rng)
    }

    /// Sample from a virtual domain where each changing module uses θ from
    /// its assigned domain. Invariant modules may be left unassigned.
    pub fn recombine(
        &self,
        assignment: &BTreeMap<String, String>,
        n: usize,
        rng: &mut Rng,
    ) -> Result<DomainDataset> {
        self.check_fitted()?;
        for name in assignment.keys() {
            self.module_index(name)?;
        }
        let columns = self
            .modules
            .iter()
            .map(|m| match assignment.get(&m.name()) {
                Some(d) => self.domain_index(d),
                None if m.changing => Err(Error::contract(format!(
                    "changing module {} has no domain assigned",
                    m.name()
                ))),
                None => Ok(0),
            })
            .collect::<Result<Vec<_>>>()?;
        self.sample("recombined", &columns, None, n, rng)
    }

    /// Prepares the label context and per-module kernels from data, then
    /// draws initial parameters.
    pub fn init_training(
        &mut self,
        sources: &[DomainDataset],
        target: &DomainDataset,
        cfg: &TrainConfig,
    ) -> Result<()> {
        cfg.validate()?;
        if sources.is_empty() {
            return Err(Error::contract(
                "CG-DAN needs at least one labeled source domain",
            ));
        }
        if self.modules.is_empty() {
            return Err(Error::contract(
                "model has no modules; is `Y` connected to any feature?",
            ));
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
        let mut domains: Vec<String> = sources.iter().map(|s| s.domain.clone()).collect();
        domains.push(target.domain.clone());
        let context = FitContext {
            label_space,
            prior: LabelPrior::from_labels(&label_space, &labels)?,
            label_kernel: label_kernel_for(&label_space, &labels)?,
            domains,
        };
        self.initialise(context, cfg.seed)?;
        for m in &mut self.modules {
            let views = sources
                .iter()
                .map(|s| ModuleView::new(m, s))
                .collect::<Result<Vec<_>>>()?;
            let pooled_t = Tensor2::vstack(&views.iter().map(|v| &v.targets).collect::<Vec<_>>())?;
            for (j, t) in m.targets.iter().enumerate() {
                let col = pooled_t.column_values(j);
                let mean = col.iter().sum::<f64>() / col.len() as f64;
                if col.iter().all(|v| (v - mean).abs() < 1e-12) {
                    return Err(Error::DegenerateBandwidth(format!(
                        "column {t} has zero variance in the sources"
                    )));
                }
            }
            let joint: Vec<Tensor2> = views
                .iter()
                .map(|v| Tensor2::concat_cols(&[&v.parents, &v.targets]))
                .collect::<Result<_>>()?;
            let pooled = Tensor2::vstack(&joint.iter().collect::<Vec<_>>())?;
            m.kernel = Some(cfg.bandwidths.resolve(&pooled)?);
        }
        Ok(())
    }

    /// Minibatches for module `k` at one iteration: one teacher-forced
    /// joint term per source, plus a target term for changing modules and
    /// for invariant modules whose parents are all observed in the target.
    fn module_batches(
        &self,
        k: usize,
        views: &[ModuleView],
        target: &ModuleView,
        cfg: &TrainConfig,
        iteration: usize,
    ) -> Result<Vec<DomainBatch>> {
        let m = &self.modules[k];
        let it_seed = derive_seed(
            derive_seed(derive_seed(cfg.seed, 100 + k as u64), 2),
            iteration as u64,
        );
        let nb = cfg.batch_size;
        let with_prefix = |p: Tensor2| (p.cols() > 0).then_some(p);
        let mut out = Vec::with_capacity(views.len() + 1);
        for (s, v) in views.iter().enumerate() {
            let mut rng = Rng::new(derive_seed(it_seed, s as u64));
            // Real rows and conditioning rows are drawn independently, so no
            // generated value shares its exact parents with a real one.
            let rows: Vec<usize> = (0..nb).map(|_| rng.below(v.targets.rows())).collect();
            let cond_rows: Vec<usize> = (0..nb).map(|_| rng.below(v.targets.rows())).collect();
            let pa = v.parents.select_rows(&cond_rows);
            let labels = match (&v.labels, m.has_label_parent()) {
                (Some(y), true) => Some((
                    rows.iter().map(|&r| y[r]).collect(),
                    cond_rows.iter().map(|&r| y[r]).collect(),
                )),
                (None, true) => return Err(Error::contract("source domain is unlabeled")),
                _ => None,
            };
            let ylab: &[f64] = labels
                .as_ref()
                .map_or(&[][..], |(_, y): &(Vec<f64>, Vec<f64>)| y.as_slice());
            out.push(DomainBatch {
                condition: self.condition(m, ylab, &pa)?,
                noise: rng.gaussian(nb, m.noise_dim)?,
                column: m.changing.then_some(s),
                real: v.joint(&rows)?,
                prefix: with_prefix(pa),
                labels,
                weight: 1.0,
            });
        }
        if (m.changing || !m.has_label_parent()) && cfg.alpha > 0.0 {
            let t = views.len();
            let mut rng = Rng::new(derive_seed(it_seed, t as u64));
            let rows: Vec<usize> = (0..nb).map(|_| rng.below(target.targets.rows())).collect();
            let (cond, pa) = if m.has_label_parent() {
                // Y is unobserved here, so parents come from the upstream
                // modules run ancestrally at the target column.
                let labels = self.context()?.prior.sample(&mut rng, nb);
                let gen = self.run_modules(&vec![t; self.modules.len()], &labels, k, &mut rng)?;
                let features = self.features();
                let idx: Vec<usize> = m
                    .feature_parents()
                    .iter()
                    .map(|p| {
                        features
                            .iter()
                            .position(|f| f == p)
                            .expect("parent is generated")
                    })
                    .collect();
                let pa = gen.select_cols(&idx);
                (self.condition(m, &labels, &pa)?, pa)
            } else {
                let cond_rows: Vec<usize> =
                    (0..nb).map(|_| rng.below(target.targets.rows())).collect();
                let pa = target.parents.select_rows(&cond_rows);
                (pa.clone(), pa)
            };
            out.push(DomainBatch {
                condition: cond,
                noise: rng.gaussian(nb, m.noise_dim)?,
                column: m.changing.then_some(t),
                real: target.joint(&rows)?,
                prefix: with_prefix(pa),
                labels: None,
                weight: cfg.alpha,
            });
        }
        Ok(out)
    }

    /// Fits module `k` alone. Upstream modules must already be fitted when
    /// `k` needs ancestral parents for its target term.
    pub fn train_module(
        &mut self,
        k: usize,
        sources: &[DomainDataset],
        target: &DomainDataset,
        cfg: &TrainConfig,
    ) -> Result<LossTrace> {
        let m = self
            .modules
            .get(k)
            .ok_or_else(|| Error::contract(format!("module index {k} out of range")))?;
        let name = m.name();
        let mut net = m.net()?.clone();
        let mut theta = m.theta.clone();
        let kernel = m.kernel.clone().ok_or_else(|| {
            Error::contract(format!(
                "module {name} has no kernel; call init_training first"
            ))
        })?;
        let lk = self.context()?.label_kernel.clone();
        let views = sources
            .iter()
            .map(|s| ModuleView::new(m, s))
            .collect::<Result<Vec<_>>>()?;
        let tview = ModuleView::new(m, target)?;

        let p = net.param_count();
        let mut params = net.params();
        if let Some(t) = &theta {
            params.extend_from_slice(t.values.data());
        }
        let mut opt = RmsPropState::new(cfg.optimizer, params.len());
        let mut trace = LossTrace::default();
        let m_sources = sources.len();
        for it in 0..cfg.iterations {
            let batches = self.module_batches(k, &views, &tview, cfg, it)?;
            let tvals = theta.as_ref().map(|t| &t.values);
            let terms: Vec<TermGrad> = batches
                .par_iter()
                .map(|b| term_grad(&net, tvals, b, &kernel, &lk))
                .collect::<Result<_>>()?;
            let mut grad = vec![0.0; params.len()];
            let mut total = 0.0;
            let mut target_term = 0.0;
            for (j, (t, b)) in terms.iter().zip(&batches).enumerate() {
                total += b.weight * t.value;
                if j == m_sources {
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
                    module: format!("cgdan module {name}"),
                    iteration: it,
                    reason: format!("non-finite loss or gradient (loss {total})"),
                });
            }
            trace.total.push(total);
            trace.target.push(target_term);
            opt.step(&mut params, &grad)?;
            net.set_params(&params[..p])?;
            if let Some(t) = &mut theta {
                t.values.data_mut().copy_from_slice(&params[p..]);
            }
        }
        let m = &mut self.modules[k];
        m.net = Some(net);
        m.theta = theta;
        Ok(trace)
    }
}

/// Initialises and fits every module in topological order. Returns one
/// loss trace per module.
pub fn train_cgdan(
    model: &CgdanModel,
    sources: &[DomainDataset],
    target: &DomainDataset,
    cfg: &TrainConfig,
) -> Result<(CgdanModel, Vec<LossTrace>)> {
    let mut model = model.clone();
    model.init_training(sources, target, cfg)?;
    let mut traces = Vec::with_capacity(model.modules.len());
    for k in 0..model.modules.len() {
        traces.push(model.train_module(k, sources, target, cfg)?);
    }
    Ok((model, traces))
}

/// Elementwise sum of module traces.
pub fn total_trace(traces: &[LossTrace]) -> LossTrace {
    let len = traces.iter().map(|t| t.total.len()).max().unwrap_or(0);
    let mut out = LossTrace {
        total: vec![0.0; len],
        target: vec![0.0; len],
    };
    for t in traces {
        for (o, v) in out.total.iter_mut().zip(&t.total) {
            *o += v;
        }
        for (o, v) in out.target.iter_mut().zip(&t.target) {
            *o += v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::causal::{collapse_groups, MixedGraph};

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    fn gdag(nodes: &[&str], edges: &[(&str, &str)]) -> GroupDag {
        collapse_groups(&MixedGraph::from_edges(nodes.iter().copied(), edges).unwrap()).unwrap()
    }

    #[test]
    fn chain_modules_and_theta_dims() {
        let g = gdag(&["Y", "X1", "X2"], &[("Y", "X1"), ("X1", "X2")]);
        let m = build_cgdan(&g, &s(&["X1"]), &module_arch()).unwrap();
        assert_eq!(m.modules.len(), 2);
        assert_eq!(m.modules[0].targets, s(&["X1"]));
        assert_eq!(m.modules[0].theta_dim, 1);
        assert_eq!(m.modules[1].theta_dim, 0);
        let m = build_cgdan(&g, &[], &module_arch()).unwrap();
        assert!(m.modules.iter().all(|x| x.theta_dim == 0 && !x.changing));
    }

    #[test]
    fn wiring_follows_graph() {
        let g = gdag(
            &["Y", "X1", "X2"],
            &[("Y", "X1"), ("Y", "X2"), ("X1", "X2")],
        );
        let m = build_cgdan(&g, &[], &module_arch()).unwrap();
        assert_eq!(m.modules[0].parents, s(&["Y"]));
        assert_eq!(m.modules[1].parents, s(&["Y", "X1"]));
    }

    #[test]
    fn label_must_be_root() {
        let g = gdag(&["Y", "X1"], &[("X1", "Y")]);
        assert!(matches!(
            build_cgdan(&g, &[], &module_arch()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn groups_become_joint_modules() {
        let mut pdag =
            MixedGraph::from_edges(["Y", "X1", "X2", "X3"], &[("Y", "X1"), ("X2", "X3")]).unwrap();
        pdag.add_undirected(1, 2).unwrap();
        let m = build_cgdan(&collapse_groups(&pdag).unwrap(), &[], &module_arch()).unwrap();
        assert_eq!(m.modules[0].targets, s(&["X1", "X2"]));
        assert_eq!(m.modules[0].noise_dim, 2);
        assert_eq!(m.modules[1].parents, s(&["X1", "X2"]));
    }

    fn hand_wired() -> CgdanModel {
        let g = gdag(&["Y", "X1", "X2"], &[("Y", "X1"), ("X1", "X2")]);
        let mut arch = module_arch();
        arch.hidden = vec![];
        let mut m = build_cgdan(&g, &[], &arch).unwrap();
        let ctx = FitContext {
            label_space: LabelSpace::Continuous,
            prior: LabelPrior::Empirical { pool: vec![1.0] },
            label_kernel: LabelKernel::Rbf { sigma: 1.0 },
            domains: s(&["a", "t"]),
        };
        m.initialise(ctx, 0).unwrap();
        // Inputs are [parent | e]; weights then bias.
        m.modules[0]
            .net
            .as_mut()
            .unwrap()
            .set_params(&[2.0, 1.0, 0.0])
            .unwrap();
        m.modules[1]
            .net
            .as_mut()
            .unwrap()
            .set_params(&[0.5, 1.0, 0.0])
            .unwrap();
        m
    }

    #[test]
    fn deterministic_chain_without_noise() {
        let mut m = hand_wired();
        for md in &mut m.modules {
            md.net.as_mut().unwrap().zero_input_columns(1..2);
        }
        let d = m
            .ancestral_generate("a", Some(&[1.0]), 1, &mut Rng::new(0))
            .unwrap();
        assert_eq!(d.x.row(0), &[2.0, 1.0]);
    }

    #[test]
    fn affine_chain_mean_within_clt() {
        let m = hand_wired();
        let n = 10_000;
        let d = m
            .ancestral_generate("a", None, n, &mut Rng::new(3))
            .unwrap();
        let mean = d.x.column_means();
        // X1 = 2 + E1 and X2 = 0.5 X1 + E2, so sd(X2) = √1.25.
        assert!((mean[1] - 0.5 * mean[0]).abs() < 4.0 * (1.0 / n as f64).sqrt());
        assert!((mean[0] - 2.0).abs() < 4.0 / (n as f64).sqrt());
    }

    #[test]
    fn module_order_is_canonical() {
        let m = hand_wired();
        let mut rev = m.modules.clone();
        rev.reverse();
        let m2 = CgdanModel::from_modules(rev, m.arch.clone(), m.context.clone()).unwrap();
        assert_eq!(m2.modules, m.modules);
        let a = m
            .ancestral_generate("a", None, 20, &mut Rng::new(9))
            .unwrap();
        let b = m2
            .ancestral_generate("a", None, 20, &mut Rng::new(9))
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unfitted_model_rejected() {
        let g = gdag(&["Y", "X1"], &[("Y", "X1")]);
        let m = build_cgdan(&g, &[], &module_arch()).unwrap();
        assert!(matches!(
            m.ancestral_generate("a", None, 3, &mut Rng::new(0)),
            Err(Error::Contract(_))
        ));
    }
}
