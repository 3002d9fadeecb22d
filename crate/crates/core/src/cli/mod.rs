//! Run configuration, experiment reports and the commands behind the
//! `shiftlab` binary. Every command returns data; the binary prints it and
//! maps errors to exit codes.

mod svg;
pub mod validate;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::adaptation::{
    adapt_and_predict, evaluate, MetricReport, PredictorKind, TargetModel, Task,
};
use crate::causal::{
    cdnod_lite, collapse_groups, markov_blanket, orient_with_root, pc_skeleton, GraphExport,
    MixedGraph, DOMAIN_NODE, LABEL_NODE,
};
use crate::cgdan::{build_cgdan, module_arch, total_trace, train_cgdan, CgdanModel};
use crate::checkpoint::{sha256_hex, Checkpoint};
use crate::data::synthetic::{make_synthetic, GroundTruth, SyntheticSpec};
use crate::data::{load_csv, save_csv, CsvSchema, DomainDataset, LabelSpace};
use crate::error::{Error, Result};
use crate::gdan::{interpolate_domains, train_gdan, LossTrace, TrainConfig};
use crate::numerics::{derive_seed, Rng, Tensor2};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const CHECKPOINT_FILE: &str = "model.ckpt.json";
pub const REPORT_FILE: &str = "report.json";

/// Exit status for an error: configuration, input and capability problems
/// are usage errors (2); anything raised while computing is a failure (1).
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Spec { .. }
        | Error::Io { .. }
        | Error::Json(_)
        | Error::Checkpoint(_)
        | Error::Schema(_)
        | Error::Data(_)
        | Error::Contract(_) => 2,
        _ => 1,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gdan,
    Cgdan,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DataSource {
    Synthetic {
        spec: SyntheticSpec,
    },
    /// Every domain except `target` must be labeled; target labels, when
    /// present, are held out for evaluation.
    Csv {
        path: PathBuf,
        schema: CsvSchema,
        target: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscoveryConfig {
    pub alpha: f64,
    pub root: String,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            root: LABEL_NODE.to_string(),
        }
    }
}

fn check_level(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "invalid level {alpha}: the discovery alpha must lie in (0, 1)"
        )))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub name: String,
    pub data: DataSource,
    pub model: ModelKind,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub discovery: DiscoveryConfig,
    #[serde(default)]
    pub predictor: PredictorKind,
    /// Defaults to classification for categorical labels.
    #[serde(default)]
    pub task: Option<Task>,
    /// Size of the generated training set; defaults to ten per target row.
    #[serde(default)]
    pub generated: Option<usize>,
    pub out_dir: PathBuf,
    /// Drives training and adaptation; overrides `train.seed`.
    pub seed: u64,
}

impl RunConfig {
    /// Reads a config and resolves relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let DataSource::Csv { path: p, .. } = &mut cfg.data {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        Ok(cfg)
    }

    /// Every problem found, before any compute.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.name.trim().is_empty() {
            out.push("name must not be empty".to_string());
        }
        if let Err(e) = self.train.validate() {
            out.push(e.to_string());
        }
        if self.model == ModelKind::Cgdan {
            if let Err(e) = check_level(self.discovery.alpha) {
                out.push(e.to_string());
            }
            if self.discovery.root != LABEL_NODE {
                out.push(format!(
                    "cgdan needs the label `{LABEL_NODE}` as discovery root, got `{}`",
                    self.discovery.root
                ));
            }
        }
        if let PredictorKind::KNearestNeighbor { k: 0 } = self.predictor {
            out.push("predictor k must be positive".to_string());
        }
        if self.generated == Some(0) {
            out.push("generated must be positive".to_string());
        }
        match &self.data {
            DataSource::Csv { path, schema, .. } => {
                if !path.is_file() {
                    out.push(format!("data file {} does not exist", path.display()));
                }
                if schema.features.is_empty() {
                    out.push("csv schema lists no features".to_string());
                }
            }
            DataSource::Synthetic { spec } => {
                if spec.n_per_domain == 0 || spec.n_target == 0 {
                    out.push("synthetic sizes must be positive".to_string());
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p.join("; ")))
        }
    }

    /// The config as it actually runs: seed threaded through.
    pub fn materialized(&self) -> Self {
        let mut c = self.clone();
        c.train.seed = c.seed;
        c
    }

    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(
            serde_json::to_string(&self.materialized())?.as_bytes(),
        ))
    }
}

/// Training data plus whatever is known about the target.
#[derive(Clone, Debug)]
pub struct LoadedData {
    pub sources: Vec<DomainDataset>,
    /// Unlabeled.
    pub target: DomainDataset,
    pub target_labels: Option<Vec<f64>>,
    pub truth: Option<GroundTruth>,
}

impl LoadedData {
    pub fn labeled_target(&self) -> Option<DomainDataset> {
        self.target_labels.as_ref().map(|y| DomainDataset {
            y: Some(y.clone()),
            ..self.target.clone()
        })
    }
}

pub fn load_data(source: &DataSource) -> Result<LoadedData> {
    match source {
        DataSource::Synthetic { spec } => {
            let d = make_synthetic(spec)?;
            Ok(LoadedData {
                target_labels: Some(d.truth.target_labels.clone()),
                sources: d.sources,
                target: d.target,
                truth: Some(d.truth),
            })
        }
        DataSource::Csv {
            path,
            schema,
            target,
        } => {
            if !path.is_file() {
                return Err(Error::io(
                    path,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
                ));
            }
            let mut sources = Vec::new();
            let mut tgt = None;
            for d in load_csv(path, schema)? {
                if &d.domain == target {
                    tgt = Some(d);
                } else if d.y.is_none() {
                    return Err(Error::Data(format!(
                        "source domain `{}` has no labels",
                        d.domain
                    )));
                } else {
                    sources.push(d);
                }
            }
            let t = tgt.ok_or_else(|| {
                Error::Data(format!(
                    "target domain `{target}` not found in {}",
                    path.display()
                ))
            })?;
            if sources.is_empty() {
                return Err(Error::Data("no labeled source domain".into()));
            }
            Ok(LoadedData {
                sources,
                target_labels: t.y.clone(),
                target: t.unlabeled(),
                truth: None,
            })
        }
    }
}

/// θ values one model learned, one row per domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaReport {
    pub module: String,
    pub domains: Vec<String>,
    /// `values[domain][component]`.
    pub values: Vec<Vec<f64>>,
}

fn theta_rows(module: &str, t: &crate::gdan::ThetaMatrix) -> ThetaReport {
    ThetaReport {
        module: module.to_string(),
        domains: t.domains.clone(),
        values: (0..t.domains.len()).map(|s| t.column(s)).collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub initial: f64,
    #[serde(rename = "final")]
    pub last: f64,
}

/// Deterministic outcome of a run; everything here is a function of the
/// config alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMetrics {
    pub loss: LossSummary,
    pub theta: Vec<ThetaReport>,
    pub graph: Option<GraphExport>,
    pub metrics: Vec<MetricReport>,
    pub checkpoint_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub tool_version: String,
    pub name: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub model: ModelKind,
    /// Keyed by `gdan` or module name.
    pub loss_traces: BTreeMap<String, LossTrace>,
    #[serde(flatten)]
    pub results: ReportMetrics,
    pub wall_clock_seconds: f64,
}

impl ExperimentReport {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// True when the embedded config still hashes to the recorded value.
    pub fn hash_matches(&self) -> Result<bool> {
        Ok(self.config.hash()? == self.config_hash)
    }
}

pub struct TrainOutcome {
    pub report: ExperimentReport,
    pub out_dir: PathBuf,
    pub checkpoint: Checkpoint,
}

/// Discovery output trimmed to what CG-DAN needs.
pub struct DiscoveredStructure {
    /// Over `Y` and the features, `S` removed.
    pub graph: MixedGraph,
    pub changing: Vec<String>,
    pub blanket: BTreeSet<String>,
}

/// Runs domain-augmented PC on the sources (plain PC for a single source,
/// when every blanket module is treated as changing) and restricts to the
/// label's Markov blanket.
pub fn discover_structure(sources: &[DomainDataset], alpha: f64) -> Result<DiscoveredStructure> {
    check_level(alpha)?;
    let (full, changing) = if sources.len() >= 2 {
        let r = cdnod_lite(sources, alpha)?;
        (r.mixed_graph()?, Some(r.changing))
    } else {
        (pc_with_label(&sources[0], alpha)?, None)
    };
    let keep: BTreeSet<usize> = (0..full.len())
        .filter(|&i| full.name(i) != DOMAIN_NODE)
        .collect();
    let graph = full.induced(&keep);
    let blanket = markov_blanket(&graph, LABEL_NODE)?;
    let changing = match changing {
        Some(c) => c.into_iter().filter(|v| v != LABEL_NODE).collect(),
        None => blanket.iter().cloned().collect(),
    };
    Ok(DiscoveredStructure {
        graph,
        changing,
        blanket,
    })
}

fn pc_with_label(d: &DomainDataset, alpha: f64) -> Result<MixedGraph> {
    let y = d.labels()?;
    let mut names = vec![LABEL_NODE.to_string()];
    names.extend(d.feature_names.iter().cloned());
    let data = Tensor2::concat_cols(&[&Tensor2::column(y), &d.x])?;
    orient_with_root(&pc_skeleton(&data, &names, alpha)?, &[LABEL_NODE])
}

/// Builds the CG-DAN wiring from a discovered structure.
pub fn cgdan_from_structure(s: &DiscoveredStructure) -> Result<CgdanModel> {
    if s.blanket.is_empty() {
        return Err(Error::Precondition(format!(
            "`{LABEL_NODE}` is not adjacent to any feature"
        )));
    }
    let mut keep: BTreeSet<usize> = BTreeSet::new();
    keep.insert(s.graph.index(LABEL_NODE)?);
    for v in &s.blanket {
        keep.insert(s.graph.index(v)?);
    }
    let gdag = collapse_groups(&s.graph.induced(&keep))?;
    let changing: Vec<String> = s
        .changing
        .iter()
        .filter(|c| s.blanket.contains(*c))
        .cloned()
        .collect();
    build_cgdan(&gdag, &changing, &module_arch())
}

fn default_task(space: &LabelSpace, task: Option<Task>) -> Result<Task> {
    match (task, space) {
        (Some(t), _) => Ok(t),
        (None, LabelSpace::Categorical { .. }) => Ok(Task::Classification),
        (None, LabelSpace::Continuous) => Err(Error::Config(
            "continuous labels need an explicit task, e.g. {\"kind\": \"within-radius\", \"radius\": 1.0}".into(),
        )),
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn losses_csv(traces: &BTreeMap<String, LossTrace>) -> String {
    let mut s = String::from("series,iteration,total,target\n");
    for (name, t) in traces {
        for (i, (a, b)) in t.total.iter().zip(&t.target).enumerate() {
            s.push_str(&format!("{name},{i},{a:e},{b:e}\n"));
        }
    }
    s
}

fn scatter_points(d: &DomainDataset) -> Vec<(f64, f64)> {
    (0..d.len())
        .map(|r| {
            if d.dim() >= 2 {
                (d.x.get(r, 0), d.x.get(r, 1))
            } else {
                (d.x.get(r, 0), d.y.as_ref().map_or(0.0, |y| y[r]))
            }
        })
        .collect()
}

fn scatter_axes(d: &DomainDataset) -> (String, String) {
    if d.dim() >= 2 {
        (d.feature_names[0].clone(), d.feature_names[1].clone())
    } else {
        (d.feature_names[0].clone(), "label".into())
    }
}

/// Full pipeline from one config: load, train, adapt, evaluate, write.
pub fn cmd_train(config_path: impl AsRef<Path>) -> Result<TrainOutcome> {
    let cfg = RunConfig::load(config_path)?;
    run(&cfg)
}

/// [`cmd_train`] on an in-memory config.
pub fn run(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let cfg = cfg.materialized();
    let config_hash = cfg.hash()?;
    let data = load_data(&cfg.data)?;
    let mut traces = BTreeMap::new();
    let (checkpoint, theta, graph) = match cfg.model {
        ModelKind::Gdan => {
            let (m, trace) = train_gdan(&data.sources, &data.target, &cfg.train)?;
            traces.insert("gdan".to_string(), trace);
            let theta = vec![theta_rows("gdan", &m.theta)];
            (Checkpoint::Gdan(m), theta, None)
        }
        ModelKind::Cgdan => {
            let s = discover_structure(&data.sources, cfg.discovery.alpha)?;
            let unfitted = cgdan_from_structure(&s)?;
            let (m, tr) = train_cgdan(&unfitted, &data.sources, &data.target, &cfg.train)?;
            let mut theta = Vec::new();
            for (module, t) in m.modules.iter().zip(tr) {
                if let Some(th) = &module.theta {
                    theta.push(theta_rows(&module.name(), th));
                }
                traces.insert(module.name(), t);
            }
            (
                Checkpoint::Cgdan(m),
                theta,
                Some(s.graph.export(&s.changing)),
            )
        }
    };
    let checkpoint_hash = checkpoint.hash()?;
    let total = match cfg.model {
        ModelKind::Gdan => traces["gdan"].clone(),
        ModelKind::Cgdan => total_trace(&traces.values().cloned().collect::<Vec<_>>()),
    };
    let window = (total.total.len() / 20).max(1);
    let (initial, last) = total.endpoints(window);

    let model: &dyn TargetModel = match &checkpoint {
        Checkpoint::Gdan(m) => m,
        Checkpoint::Cgdan(m) => m,
    };
    let mut rng = Rng::new(derive_seed(cfg.seed, 7));
    let adapted = adapt_and_predict(model, &data.target, cfg.predictor, cfg.generated, &mut rng)?;
    let mut metrics = Vec::new();
    if let Some(y) = &data.target_labels {
        let task = default_task(&model.label_space()?, cfg.task)?;
        let value = evaluate(&adapted.predictions, y, task)?;
        metrics.push(MetricReport::new(
            task,
            value,
            y.len(),
            cfg.seed,
            checkpoint_hash.clone(),
        ));
    }

    create_dir(&cfg.out_dir)?;
    create_dir(&cfg.out_dir.join("plots"))?;
    checkpoint.save(cfg.out_dir.join(CHECKPOINT_FILE))?;
    write(&cfg.out_dir.join("losses.csv"), &losses_csv(&traces))?;
    let series: Vec<(String, Vec<f64>)> = traces
        .iter()
        .map(|(k, v)| (k.clone(), v.total.clone()))
        .collect();
    write(
        &cfg.out_dir.join("plots/losses.svg"),
        &svg::line_plot(&format!("{} loss", cfg.name), &series),
    )?;
    let (xl, yl) = scatter_axes(&adapted.generated);
    let mut sets = vec![(
        "generated target".to_string(),
        scatter_points(&adapted.generated),
    )];
    if let Some(t) = data.labeled_target() {
        sets.insert(0, ("real target".to_string(), scatter_points(&t)));
    }
    write(
        &cfg.out_dir.join("plots/generated.svg"),
        &svg::scatter_plot(&format!("{} target", cfg.name), &xl, &yl, &sets),
    )?;
    if let Some(g) = &graph {
        let mg = MixedGraph::from_export(g)?;
        write(
            &cfg.out_dir.join("graph.dot"),
            &mg.to_dot(&g.changing_modules),
        )?;
        write(
            &cfg.out_dir.join("graph.json"),
            &serde_json::to_string_pretty(g)?,
        )?;
    }

    let report = ExperimentReport {
        tool_version: TOOL_VERSION.to_string(),
        name: cfg.name.clone(),
        config_hash,
        model: cfg.model,
        loss_traces: traces,
        results: ReportMetrics {
            loss: LossSummary { initial, last },
            theta,
            graph,
            metrics,
            checkpoint_hash,
        },
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        config: cfg.clone(),
    };
    write(
        &cfg.out_dir.join(REPORT_FILE),
        &serde_json::to_string_pretty(&report)?,
    )?;
    Ok(TrainOutcome {
        report,
        out_dir: cfg.out_dir.clone(),
        checkpoint,
    })
}

/// What `generate` should sample.
#[derive(Clone, Debug, PartialEq)]
pub enum GenerateMode {
    Domain(String),
    /// Evenly spaced θ between two fitted domains, endpoints included.
    Interpolate {
        a: String,
        b: String,
        count: usize,
    },
    /// Changing module name to the domain whose θ it uses.
    Recombine(BTreeMap<String, String>),
}

/// Parses `X1=s1,X2=t`.
pub fn parse_assignment(s: &str) -> Result<BTreeMap<String, String>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("assignment `{p}` is not module=domain")))?;
            Ok((k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

/// Writes one CSV per generated domain to `out_dir`; file names carry the
/// θ index. Returns the paths in order.
pub fn cmd_generate(
    checkpoint: &Checkpoint,
    mode: &GenerateMode,
    n: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    if n == 0 {
        return Err(Error::Config("n must be positive".into()));
    }
    let mut rng = Rng::new(seed);
    let mut outputs: Vec<(String, DomainDataset)> = Vec::new();
    match (mode, checkpoint) {
        (GenerateMode::Domain(d), Checkpoint::Gdan(m)) => {
            let i = m
                .theta
                .index_of(d)
                .map_err(|e| Error::Config(e.to_string()))?;
            outputs.push((
                format!("theta{i}_{d}.csv"),
                m.sample_domain(d, n, &mut rng)?,
            ));
        }
        (GenerateMode::Domain(d), Checkpoint::Cgdan(m)) => {
            let i = m
                .domain_index(d)
                .map_err(|e| Error::Config(e.to_string()))?;
            outputs.push((
                format!("theta{i}_{d}.csv"),
                m.ancestral_generate(d, None, n, &mut rng)?,
            ));
        }
        (GenerateMode::Interpolate { a, b, count }, Checkpoint::Gdan(m)) => {
            let ta = m.theta_of(a).map_err(|e| Error::Config(e.to_string()))?;
            let tb = m.theta_of(b).map_err(|e| Error::Config(e.to_string()))?;
            let points =
                interpolate_domains(&ta, &tb, *count).map_err(|e| Error::Config(e.to_string()))?;
            for (k, th) in points.iter().enumerate() {
                let name = format!("{a}-{b}-{k}");
                outputs.push((
                    format!("theta{k}_{name}.csv"),
                    m.sample_theta(&name, th, n, &mut rng)?,
                ));
            }
        }
        (GenerateMode::Interpolate { .. }, Checkpoint::Cgdan(_)) => {
            return Err(Error::Config("interpolate requires gdan".into()));
        }
        (GenerateMode::Recombine(assign), Checkpoint::Cgdan(m)) => {
            let ds = m
                .recombine(assign, n, &mut rng)
                .map_err(|e| Error::Config(e.to_string()))?;
            outputs.push(("theta0_recombined.csv".to_string(), ds));
        }
        (GenerateMode::Recombine(_), Checkpoint::Gdan(_)) => {
            return Err(Error::Config("recombine requires cgdan".into()));
        }
    }
    create_dir(out_dir)?;
    let mut paths = Vec::new();
    for (file, ds) in outputs {
        let path = out_dir.join(file);
        save_csv(&path, &[&ds], "domain", Some("y"))?;
        paths.push(path);
    }
    Ok(paths)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscoverOutcome {
    pub graph: GraphExport,
    /// Set when the domain index was used.
    pub changing: Option<Vec<String>>,
    pub files: Vec<PathBuf>,
}

/// PC on pooled labeled data with `root` first, or the domain-augmented
/// variant; writes `graph.dot` and `graph.json`.
pub fn cmd_discover(
    datasets: &[DomainDataset],
    alpha: f64,
    root: &str,
    with_domain_index: bool,
    out_dir: &Path,
) -> Result<DiscoverOutcome> {
    check_level(alpha)?;
    if datasets.is_empty() {
        return Err(Error::Config("no data".into()));
    }
    let labeled: Vec<DomainDataset> = datasets.iter().filter(|d| d.y.is_some()).cloned().collect();
    if labeled.is_empty() {
        return Err(Error::Config("discovery needs labeled domains".into()));
    }
    let (graph, changing) = if with_domain_index {
        if labeled.len() < 2 {
            return Err(Error::Config(format!(
                "--with-domain-index needs at least two labeled domains, found {}",
                labeled.len()
            )));
        }
        if root != LABEL_NODE {
            return Err(Error::Config(format!(
                "with the domain index the root is `{LABEL_NODE}`"
            )));
        }
        let r = cdnod_lite(&labeled, alpha)?;
        (r.graph, Some(r.changing))
    } else {
        let refs: Vec<&DomainDataset> = labeled.iter().collect();
        crate::data::check_consistent(&refs)?;
        let y: Vec<f64> = labeled
            .iter()
            .flat_map(|d| d.labels().unwrap_or(&[]).to_vec())
            .collect();
        let xs = Tensor2::vstack(&labeled.iter().map(|d| &d.x).collect::<Vec<_>>())?;
        let mut names = vec![LABEL_NODE.to_string()];
        names.extend(labeled[0].feature_names.iter().cloned());
        if !names.iter().any(|n| n == root) {
            return Err(Error::Config(format!(
                "root `{root}` is not a variable; known: {names:?}"
            )));
        }
        let data = Tensor2::concat_cols(&[&Tensor2::column(&y), &xs])?;
        let g = orient_with_root(&pc_skeleton(&data, &names, alpha)?, &[root])?;
        (g.export(&[]), None)
    };
    create_dir(out_dir)?;
    let dot = out_dir.join("graph.dot");
    let json = out_dir.join("graph.json");
    let mg = MixedGraph::from_export(&graph)?;
    write(&dot, &mg.to_dot(&graph.changing_modules))?;
    write(&json, &serde_json::to_string_pretty(&graph)?)?;
    Ok(DiscoverOutcome {
        graph,
        changing,
        files: vec![dot, json],
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptOutcome {
    pub predictions_file: PathBuf,
    pub metric: Option<MetricReport>,
}

/// Fits `kind` on generated target rows and writes predictions for
/// `target`; reports a metric when the target is labeled.
pub fn cmd_adapt(
    checkpoint: &Checkpoint,
    target: &DomainDataset,
    kind: PredictorKind,
    task: Option<Task>,
    n: Option<usize>,
    seed: u64,
    out_dir: &Path,
) -> Result<AdaptOutcome> {
    let model: &dyn TargetModel = match checkpoint {
        Checkpoint::Gdan(m) => m,
        Checkpoint::Cgdan(m) => m,
    };
    let adapted = adapt_and_predict(model, &target.unlabeled(), kind, n, &mut Rng::new(seed))?;
    let metric = match &target.y {
        Some(y) => {
            let task = default_task(&model.label_space()?, task)?;
            let value = evaluate(&adapted.predictions, y, task)?;
            Some(MetricReport::new(
                task,
                value,
                y.len(),
                seed,
                checkpoint.hash()?,
            ))
        }
        None => None,
    };
    create_dir(out_dir)?;
    let predictions_file = out_dir.join("predictions.csv");
    let mut s = String::from("row,prediction\n");
    for (i, p) in adapted.predictions.iter().enumerate() {
        s.push_str(&format!("{i},{p}\n"));
    }
    write(&predictions_file, &s)?;
    if let Some(m) = &metric {
        write(
            &out_dir.join("metric.json"),
            &serde_json::to_string_pretty(m)?,
        )?;
    }
    Ok(AdaptOutcome {
        predictions_file,
        metric,
    })
}

/// Human summary of a saved report; fails if its config hash is stale.
pub fn cmd_report(path: &Path) -> Result<String> {
    let file = if path.is_dir() {
        path.join(REPORT_FILE)
    } else {
        path.to_path_buf()
    };
    let r = ExperimentReport::load(&file)?;
    if !r.hash_matches()? {
        return Err(Error::Checkpoint(format!(
            "{}: config hash does not match its config",
            file.display()
        )));
    }
    let mut out = format!(
        "{} ({:?}, shiftlab {})\nconfig hash {}\ncheckpoint {}\nloss {:.6} -> {:.6}\n",
        r.name,
        r.model,
        r.tool_version,
        r.config_hash,
        r.results.checkpoint_hash,
        r.results.loss.initial,
        r.results.loss.last
    );
    for t in &r.results.theta {
        for (d, v) in t.domains.iter().zip(&t.values) {
            out.push_str(&format!("theta {} {d}: {v:?}\n", t.module));
        }
    }
    if let Some(g) = &r.results.graph {
        for [a, b] in &g.directed {
            out.push_str(&format!("edge {a} -> {b}\n"));
        }
        for [a, b] in &g.undirected {
            out.push_str(&format!("edge {a} -- {b}\n"));
        }
        out.push_str(&format!("changing: {}\n", g.changing_modules.join(", ")));
    }
    for m in &r.results.metrics {
        out.push_str(&format!("{} = {:.4} (n = {})\n", m.metric, m.value, m.n));
    }
    out.push_str(&format!("wall clock {:.1}s\n", r.wall_clock_seconds));
    Ok(out)
}
