use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use shiftlab::adaptation::{PredictorKind, Task};
use shiftlab::checkpoint::Checkpoint;
use shiftlab::cli::validate::{self, ValidateOptions};
use shiftlab::cli::{self, load_data, parse_assignment, DataSource, GenerateMode, RunConfig};
use shiftlab::data::{load_csv, CsvSchema, DomainDataset};
use shiftlab::numerics::worker_count;
use shiftlab::{Error, Result};

#[derive(Parser)]
#[command(
    name = "shiftlab",
    version,
    about = "Generative domain adaptation experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a run config and write checkpoint, report and plots.
    Train { config: PathBuf },
    /// Sample labeled rows from a checkpoint.
    Generate {
        checkpoint: PathBuf,
        #[arg(long, conflicts_with_all = ["interpolate", "recombine"])]
        domain: Option<String>,
        /// `a,b,count`
        #[arg(long, conflicts_with = "recombine")]
        interpolate: Option<String>,
        /// `module=domain,...`
        #[arg(long)]
        recombine: Option<String>,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "generated")]
        out: PathBuf,
    },
    /// Constraint-based structure discovery with the label as root.
    Discover {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value = "Y")]
        root: String,
        #[arg(long)]
        with_domain_index: bool,
        #[arg(long, default_value = "discovery")]
        out: PathBuf,
    },
    /// Predict target labels with a classifier trained on generated rows.
    Adapt {
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Domain to predict; defaults to the config's target.
        #[arg(long)]
        target: Option<String>,
        /// JSON predictor, e.g. '{"kind":"k-nearest-neighbor","k":5}'.
        #[arg(long)]
        predictor: Option<String>,
        /// JSON task, e.g. '{"kind":"within-radius","radius":1.0}'.
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "adapt")]
        out: PathBuf,
    },
    /// Check a proposition end to end on its canonical synthetic family.
    Validate {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        prop: u8,
        /// Number of seeds, starting at 0.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        /// Prop 1: all domains share one latent value.
        #[arg(long)]
        identical: bool,
        /// Prop 3: target conditionals equal the source ones.
        #[arg(long)]
        duplicated: bool,
        /// Prop 3: target mean shift.
        #[arg(long)]
        shift: Option<f64>,
    },
    /// Summarise a saved report.
    Report {
        /// Report file or run directory.
        path: PathBuf,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Run config whose data source to use.
    #[arg(long, conflicts_with = "csv")]
    config: Option<PathBuf>,
    #[arg(long, requires_all = ["features", "domain_column"])]
    csv: Option<PathBuf>,
    /// Comma-separated feature columns.
    #[arg(long)]
    features: Option<String>,
    #[arg(long)]
    label: Option<String>,
    #[arg(long = "domain-column")]
    domain_column: Option<String>,
}

impl DataArgs {
    /// All domains, labeled where labels exist, plus the named target.
    fn load(&self) -> Result<(Vec<DomainDataset>, Option<String>)> {
        if let Some(path) = &self.csv {
            let schema = CsvSchema {
                features: self
                    .features
                    .as_deref()
                    .unwrap_or_default()
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect(),
                label: self.label.clone(),
                domain: self.domain_column.clone().unwrap_or_default(),
            };
            return Ok((load_csv(path, &schema)?, None));
        }
        let path = self
            .config
            .as_ref()
            .ok_or_else(|| Error::Config("give --config or --csv".into()))?;
        let cfg = RunConfig::load(path)?;
        let target = match &cfg.data {
            DataSource::Csv { target, .. } => target.clone(),
            DataSource::Synthetic { .. } => shiftlab::data::synthetic::TARGET_DOMAIN.to_string(),
        };
        let d = load_data(&cfg.data)?;
        let mut all = d.sources.clone();
        all.push(d.labeled_target().unwrap_or(d.target));
        Ok((all, Some(target)))
    }
}

fn parse_json<T: serde::de::DeserializeOwned>(what: &str, s: &str) -> Result<T> {
    serde_json::from_str(s).map_err(|e| Error::Config(format!("bad {what} `{s}`: {e}")))
}

fn execute(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Train { config } => {
            let out = cli::cmd_train(&config)?;
            let r = &out.report;
            println!("wrote {}", out.out_dir.display());
            println!("config hash {}", r.config_hash);
            println!(
                "loss {:.6} -> {:.6}",
                r.results.loss.initial, r.results.loss.last
            );
            if let Some(g) = &r.results.graph {
                println!("changing: {}", g.changing_modules.join(", "));
            }
            for m in &r.results.metrics {
                println!("{} {:.4}", m.metric, m.value);
            }
            Ok(0)
        }
        Command::Generate {
            checkpoint,
            domain,
            interpolate,
            recombine,
            n,
            seed,
            out,
        } => {
            let mode = match (domain, interpolate, recombine) {
                (Some(d), None, None) => GenerateMode::Domain(d),
                (None, Some(spec), None) => {
                    let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
                    match parts.as_slice() {
                        [a, b, c] => GenerateMode::Interpolate {
                            a: a.to_string(),
                            b: b.to_string(),
                            count: c.parse().map_err(|_| {
                                Error::Config(format!(
                                    "interpolation count `{c}` is not an integer"
                                ))
                            })?,
                        },
                        _ => return Err(Error::Config("--interpolate takes a,b,count".into())),
                    }
                }
                (None, None, Some(a)) => GenerateMode::Recombine(parse_assignment(&a)?),
                _ => {
                    return Err(Error::Config(
                        "give exactly one of --domain, --interpolate, --recombine".into(),
                    ))
                }
            };
            let ckpt = Checkpoint::load(&checkpoint)?;
            for p in cli::cmd_generate(&ckpt, &mode, n, seed, &out)? {
                println!("{}", p.display());
            }
            Ok(0)
        }
        Command::Discover {
            data,
            alpha,
            root,
            with_domain_index,
            out,
        } => {
            let (datasets, _) = data.load()?;
            let r = cli::cmd_discover(&datasets, alpha, &root, with_domain_index, &out)?;
            for [a, b] in &r.graph.directed {
                println!("{a} -> {b}");
            }
            for [a, b] in &r.graph.undirected {
                println!("{a} -- {b}");
            }
            if let Some(c) = &r.changing {
                println!("changing: {}", c.join(", "));
            }
            Ok(0)
        }
        Command::Adapt {
            checkpoint,
            data,
            target,
            predictor,
            task,
            n,
            seed,
            out,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let (datasets, default_target) = data.load()?;
            let name = target
                .or(default_target)
                .ok_or_else(|| Error::Config("--target is required with --csv".into()))?;
            let t = datasets
                .iter()
                .find(|d| d.domain == name)
                .ok_or_else(|| Error::Config(format!("no domain `{name}` in the data")))?;
            let kind: PredictorKind = predictor
                .map(|p| parse_json("predictor", &p))
                .transpose()?
                .unwrap_or_default();
            let task: Option<Task> = task.map(|t| parse_json("task", &t)).transpose()?;
            let r = cli::cmd_adapt(&ckpt, t, kind, task, n, seed, &out)?;
            println!("{}", r.predictions_file.display());
            if let Some(m) = r.metric {
                println!("{} {:.4}", m.metric, m.value);
            }
            Ok(0)
        }
        Command::Validate {
            prop,
            seeds,
            iterations,
            n,
            identical,
            duplicated,
            shift,
        } => {
            let opts = ValidateOptions {
                seeds: (0..seeds.max(1)).collect(),
                iterations,
                n,
                identical,
                duplicated,
                shift,
            };
            let r = validate::run(prop, &opts)?;
            for s in &r.seeds {
                let vals: Vec<String> = s
                    .values
                    .iter()
                    .map(|(k, v)| format!("{k} {v:.6}"))
                    .collect();
                println!(
                    "seed {} {}: {}",
                    s.seed,
                    if s.passed { "pass" } else { "fail" },
                    vals.join(", ")
                );
            }
            println!(
                "prop {}: {} ({}/{} seeds, {} required)",
                r.prop,
                if r.passed { "pass" } else { "fail" },
                r.pass_count(),
                r.seeds.len(),
                r.required
            );
            Ok(if r.passed { 0 } else { 1 })
        }
        Command::Report { path } => {
            print!("{}", cli::cmd_report(&path)?);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let args = Cli::parse();
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count())
        .build_global()
    {
        eprintln!("warning: {e}");
    }
    match execute(args.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
