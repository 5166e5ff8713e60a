//! Batch command-line pipeline: `synth`, `train`, `predict`, `eval`,
//! `export`, and `infer`.
//!
//! Option precedence is command-line flag over config-file entry over
//! built-in default. The effective configuration is embedded into every
//! output artifact as a `provenance` record (never including `--jobs`, so
//! outputs are byte-identical for any parallelism level). Wall-clock
//! timings go to stderr and, on request, to a `phase,seconds` CSV; they
//! are kept out of the data artifacts for the same reason.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    logistic_unary_train, piecewise_train, pseudolikelihood_train, tree_cll_train,
};
use crate::data::synth::{
    synth_chain_corpus, synth_grid_corpus, synth_tree_corpus, ChainGenConfig, GridGenConfig,
    TreeGenConfig,
};
use crate::data::{
    evaluate, read_corpus_file, read_labelings_file, write_corpus_file, write_labelings_file,
};
use crate::energy::{read_energy_text, write_energy_text, write_energy_uai, Solver};
use crate::error::{Error, Result};
use crate::graph::Labeling;
use crate::inference::{exact_map, icm, tree_map, trws_map, TrwsOptions};
use crate::model_file::{read_model_file, write_model_file, ModelPayload, TrainMethod};
use crate::regress::GbtParams;
use crate::train::{train_lscrf, RegressorKind, SamplingConfig, TrainConfig};

#[derive(Parser)]
#[command(
    name = "lscrf",
    about = "Pairwise CRF training by per-label-pair regression, with MAP inference, baselines, and synthetic data",
    version
)]
struct Cli {
    /// Worker threads for the parallel phases (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// JSON config file; command-line flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for generation, sampling, and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
    /// Train a model on an annotated corpus.
    Train(TrainArgs),
    /// Label a corpus with a trained model.
    Predict(PredictArgs),
    /// Score predicted labelings against ground truth.
    Eval(EvalArgs),
    /// Export a composed energy in an interchange format.
    Export(ExportArgs),
    /// Run MAP inference on an exported energy file.
    Infer(InferArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Corpus kind: tree | chain | grid.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    instances: Option<usize>,
    /// Nodes per tree instance.
    #[arg(long)]
    nodes: Option<usize>,
    /// Number of labels.
    #[arg(long)]
    labels: Option<usize>,
    #[arg(long)]
    edge_dim: Option<usize>,
    /// Tree conditional family: linear | logistic | xor.
    #[arg(long)]
    generator: Option<String>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    coupling: Option<f64>,
    #[arg(long)]
    unary_snr: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// lscrf-linear | lscrf-gbt | lscrf-linear-unary | lscrf-gbt-unary |
    /// logistic | pl | pw | tree-cll.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Boosted trees per pair regressor.
    #[arg(long)]
    trees: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    pair_fraction: Option<f64>,
    #[arg(long)]
    unary_fraction: Option<f64>,
    #[arg(long)]
    min_pair_count: Option<usize>,
    /// Class-balanced subsampling.
    #[arg(long)]
    balance: bool,
    /// Gradient-descent iteration cap for the baseline trainers.
    #[arg(long)]
    max_iter: Option<usize>,
    /// Gradient-norm tolerance for the baseline trainers.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    /// Append phase timings to this CSV.
    #[arg(long)]
    times_csv: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// exact | tree | trws | icm.
    #[arg(long)]
    solver: Option<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    times_csv: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    labelings: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Write the machine-readable report here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    times_csv: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Instance index within the corpus.
    #[arg(long, default_value_t = 0)]
    instance: usize,
    /// grid | uai.
    #[arg(long)]
    format: Option<String>,
    /// loopy | tree.
    #[arg(long)]
    composition: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InferArgs {
    /// Energy in the plain-text interchange format.
    #[arg(long)]
    energy: PathBuf,
    #[arg(long)]
    solver: Option<String>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// Write the result record here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Flat config file; any subset of the keys may be present.
#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    seed: Option<u64>,
    jobs: Option<usize>,
    kind: Option<String>,
    instances: Option<usize>,
    nodes: Option<usize>,
    labels: Option<usize>,
    edge_dim: Option<usize>,
    generator: Option<String>,
    noise: Option<f64>,
    height: Option<usize>,
    width: Option<usize>,
    coupling: Option<f64>,
    unary_snr: Option<f64>,
    method: Option<String>,
    lambda: Option<f64>,
    trees: Option<usize>,
    depth: Option<usize>,
    learning_rate: Option<f64>,
    pair_fraction: Option<f64>,
    unary_fraction: Option<f64>,
    min_pair_count: Option<usize>,
    balance: Option<bool>,
    max_iter: Option<usize>,
    tol: Option<f64>,
    solver: Option<String>,
    format: Option<String>,
    composition: Option<String>,
}

fn load_config(path: &Option<PathBuf>) -> Result<ConfigFile> {
    match path {
        None => Ok(ConfigFile::default()),
        Some(p) => {
            let file = std::fs::File::open(p)?;
            Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
        }
    }
}

struct Phases {
    entries: Vec<(String, f64)>,
}

impl Phases {
    fn new() -> Self {
        Phases {
            entries: Vec::new(),
        }
    }

    fn time<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f()?;
        let secs = start.elapsed().as_secs_f64();
        eprintln!("{name}: {secs:.3}s");
        self.entries.push((name.to_string(), secs));
        Ok(out)
    }

    fn write_csv(&self, path: &Option<PathBuf>) -> Result<()> {
        if let Some(path) = path {
            let mut file = std::fs::File::create(path)?;
            writeln!(file, "phase,wall_time_s")?;
            for (name, secs) in &self.entries {
                writeln!(file, "{name},{secs}")?;
            }
        }
        Ok(())
    }
}

/// Entry point used by the binary: parses arguments, runs the command, and
/// reports errors on stderr with a nonzero exit code.
pub fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(&cli.config)?;
    if let Some(jobs) = cli.jobs.or(config.jobs) {
        if jobs == 0 {
            return Err(Error::InvalidParameter("--jobs must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    }
    let seed = cli.seed.or(config.seed).unwrap_or(0);
    match cli.command {
        Command::Synth(args) => cmd_synth(args, &config, seed),
        Command::Train(args) => cmd_train(args, &config, seed),
        Command::Predict(args) => cmd_predict(args, &config),
        Command::Eval(args) => cmd_eval(args),
        Command::Export(args) => cmd_export(args, &config),
        Command::Infer(args) => cmd_infer(args, &config),
    }
}

fn cmd_synth(args: SynthArgs, config: &ConfigFile, seed: u64) -> Result<()> {
    let kind = args
        .kind
        .or_else(|| config.kind.clone())
        .unwrap_or_else(|| "tree".into());
    let instances = args.instances.or(config.instances).unwrap_or(100);
    let labels = args.labels.or(config.labels).unwrap_or(2);
    let mut corpus = match kind.as_str() {
        "tree" => {
            let gen = TreeGenConfig {
                n_instances: instances,
                m: args.nodes.or(config.nodes).unwrap_or(8),
                r: labels,
                edge_dim: args.edge_dim.or(config.edge_dim).unwrap_or(5),
                family: args
                    .generator
                    .or_else(|| config.generator.clone())
                    .unwrap_or_else(|| "linear".into())
                    .parse()?,
                noise: args.noise.or(config.noise).unwrap_or(0.3),
                seed,
            };
            let mut corpus = synth_tree_corpus(&gen)?;
            corpus.provenance = Some(serde_json::json!({
                "command": "synth",
                "kind": "tree",
                "config": gen,
            }));
            corpus
        }
        "chain" => {
            let gen = ChainGenConfig {
                n_instances: instances,
                m: args.nodes.or(config.nodes).unwrap_or(8),
                r: labels,
                coupling: args.coupling.or(config.coupling).unwrap_or(0.8),
                unary_snr: args.unary_snr.or(config.unary_snr).unwrap_or(1.0),
                xor_features: matches!(
                    args.generator
                        .or_else(|| config.generator.clone())
                        .as_deref(),
                    Some("xor")
                ),
                seed,
            };
            let mut corpus = synth_chain_corpus(&gen)?;
            corpus.provenance = Some(serde_json::json!({
                "command": "synth",
                "kind": "chain",
                "config": gen,
            }));
            corpus
        }
        "grid" => {
            let gen = GridGenConfig {
                n_instances: instances,
                height: args.height.or(config.height).unwrap_or(12),
                width: args.width.or(config.width).unwrap_or(12),
                r: labels,
                coupling: args.coupling.or(config.coupling).unwrap_or(0.8),
                unary_snr: args.unary_snr.or(config.unary_snr).unwrap_or(1.0),
                seed,
            };
            let mut corpus = synth_grid_corpus(&gen)?;
            corpus.provenance = Some(serde_json::json!({
                "command": "synth",
                "kind": "grid",
                "config": gen,
            }));
            corpus
        }
        other => {
            return Err(Error::Unknown {
                what: "corpus kind",
                value: other.into(),
            })
        }
    };
    corpus.provenance = corpus.provenance.take();
    write_corpus_file(&corpus, &args.out)?;
    eprintln!(
        "wrote {} instances ({} labels) to {}",
        corpus.len(),
        labels,
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs, config: &ConfigFile, seed: u64) -> Result<()> {
    let method: TrainMethod = args
        .method
        .or_else(|| config.method.clone())
        .ok_or(Error::InvalidParameter("--method is required".into()))?
        .parse()?;
    let mut phases = Phases::new();
    let corpus = phases.time("read-corpus", || read_corpus_file(&args.corpus))?;
    let labels = corpus.labels()?;
    let lambda = args.lambda.or(config.lambda);
    let max_iter = args.max_iter.or(config.max_iter).unwrap_or(500);
    let tol = args.tol.or(config.tol).unwrap_or(1e-6);

    let lscrf_config = TrainConfig {
        regressor_kind: match method {
            TrainMethod::LscrfGbt | TrainMethod::LscrfGbtUnary => RegressorKind::Gbt,
            _ => RegressorKind::Linear,
        },
        sampling: SamplingConfig {
            unary_fraction: args.unary_fraction.or(config.unary_fraction).unwrap_or(1.0),
            pair_fraction: args.pair_fraction.or(config.pair_fraction).unwrap_or(1.0),
            balance: args.balance || config.balance.unwrap_or(false),
            seed,
        },
        min_pair_count: args.min_pair_count.or(config.min_pair_count).unwrap_or(20),
        rare_pair_constant: 1e-3,
        lambda: lambda.unwrap_or(0.0),
        gbt: GbtParams {
            n_trees: args.trees.or(config.trees).unwrap_or(500),
            depth: args.depth.or(config.depth).unwrap_or(6),
            learning_rate: args.learning_rate.or(config.learning_rate).unwrap_or(0.1),
            seed,
        },
        unary_fallback: false,
        augment_symmetric: false,
        unary_only: matches!(
            method,
            TrainMethod::LscrfLinearUnary | TrainMethod::LscrfGbtUnary
        ),
    };

    let payload = phases.time("train", || match method {
        TrainMethod::LscrfLinear
        | TrainMethod::LscrfGbt
        | TrainMethod::LscrfLinearUnary
        | TrainMethod::LscrfGbtUnary => {
            let model = train_lscrf(&corpus.instances, labels, &lscrf_config)?;
            if model.all_constant {
                eprintln!(
                    "warning: every label pair fell below min_pair_count; the pairwise \
                     part of the model is constant"
                );
            }
            Ok(ModelPayload::Pairwise(model))
        }
        TrainMethod::Logistic | TrainMethod::Pl | TrainMethod::Pw | TrainMethod::TreeCll => {
            let lambda = lambda.unwrap_or(1e-3);
            let fit = match method {
                TrainMethod::Logistic => {
                    logistic_unary_train(&corpus.instances, labels, lambda, max_iter, tol)?
                }
                TrainMethod::Pl => {
                    pseudolikelihood_train(&corpus.instances, labels, lambda, max_iter, tol)?
                }
                TrainMethod::Pw => {
                    piecewise_train(&corpus.instances, labels, lambda, max_iter, tol)?
                }
                _ => tree_cll_train(&corpus.instances, labels, lambda, max_iter, tol)?,
            };
            if !fit.converged {
                eprintln!(
                    "warning: {method} did not reach tolerance {tol:e}; gradient norm {:.3e} \
                     after {} iterations",
                    fit.grad_norm, fit.iterations
                );
            }
            Ok(ModelPayload::LogLinear(fit.model))
        }
    })?;

    let provenance = serde_json::json!({
        "command": "train",
        "method": method,
        "seed": seed,
        "lambda": lambda,
        "lscrf": lscrf_config,
        "max_iter": max_iter,
        "tol": tol,
    });
    write_model_file(&payload, method, Some(provenance), &args.out)?;
    phases.write_csv(&args.times_csv)?;
    eprintln!("wrote model ({method}) to {}", args.out.display());
    Ok(())
}

fn parse_solver(flag: Option<String>, config: &ConfigFile) -> Result<Solver> {
    flag.or_else(|| config.solver.clone())
        .unwrap_or_else(|| "trws".into())
        .parse()
}

fn cmd_predict(args: PredictArgs, config: &ConfigFile) -> Result<()> {
    let solver = parse_solver(args.solver, config)?;
    let mut phases = Phases::new();
    let (payload, method) = phases.time("read-model", || read_model_file(&args.model))?;
    let corpus = phases.time("read-corpus", || read_corpus_file(&args.corpus))?;
    let labelings = phases.time("predict", || {
        corpus
            .instances
            .par_iter()
            .map(|inst| payload.predict(inst, solver))
            .collect::<Result<Vec<Labeling>>>()
    })?;
    let provenance = serde_json::json!({
        "command": "predict",
        "method": method,
        "solver": solver,
    });
    write_labelings_file(&corpus.ids, &labelings, Some(provenance), &args.out)?;
    phases.write_csv(&args.times_csv)?;
    eprintln!(
        "wrote {} labelings to {}",
        labelings.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let mut phases = Phases::new();
    let corpus = phases.time("read-corpus", || read_corpus_file(&args.corpus))?;
    let (ids, predictions) =
        phases.time("read-labelings", || read_labelings_file(&args.labelings))?;
    if ids != corpus.ids {
        return Err(Error::InvalidParameter(
            "labelings ids do not match the corpus".into(),
        ));
    }
    let truths: Vec<Labeling> = corpus
        .instances
        .iter()
        .map(|inst| inst.labels.clone().ok_or(Error::MissingLabels))
        .collect::<Result<_>>()?;
    let labels = corpus.labels()?;
    let report = phases.time("evaluate", || evaluate(&predictions, &truths, labels))?;
    print!("{report}");
    if let Some(out) = &args.out {
        let file = std::fs::File::create(out)?;
        serde_json::to_writer(std::io::BufWriter::new(file), &report)?;
    }
    phases.write_csv(&args.times_csv)?;
    Ok(())
}

fn cmd_export(args: ExportArgs, config: &ConfigFile) -> Result<()> {
    let format = args
        .format
        .or_else(|| config.format.clone())
        .unwrap_or_else(|| "grid".into());
    let composition = args
        .composition
        .or_else(|| config.composition.clone())
        .unwrap_or_else(|| "loopy".into());
    let tree_composition = match composition.as_str() {
        "loopy" => false,
        "tree" => true,
        other => {
            return Err(Error::Unknown {
                what: "composition",
                value: other.into(),
            })
        }
    };
    let (payload, _) = read_model_file(&args.model)?;
    let corpus = read_corpus_file(&args.corpus)?;
    let instance = corpus.instances.get(args.instance).ok_or_else(|| {
        Error::InvalidParameter(format!(
            "instance {} out of range ({} instances)",
            args.instance,
            corpus.len()
        ))
    })?;
    let energy = payload.energy(instance, tree_composition)?;
    let file = std::fs::File::create(&args.out)?;
    let writer = std::io::BufWriter::new(file);
    match format.as_str() {
        "grid" => write_energy_text(&energy, writer)?,
        "uai" => write_energy_uai(&energy, writer)?,
        other => {
            return Err(Error::Unknown {
                what: "export format",
                value: other.into(),
            })
        }
    }
    eprintln!("wrote {format} energy to {}", args.out.display());
    Ok(())
}

#[derive(Serialize)]
struct InferRecord {
    labels: Vec<usize>,
    energy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    lower_bound: Option<f64>,
    iterations: usize,
}

fn cmd_infer(args: InferArgs, config: &ConfigFile) -> Result<()> {
    let solver = parse_solver(args.solver, config)?;
    let file = std::fs::File::open(&args.energy)?;
    let energy = read_energy_text(std::io::BufReader::new(file))?;
    let result = match solver {
        Solver::Exact => exact_map(&energy)?,
        Solver::Tree => tree_map(&energy)?,
        Solver::Trws => trws_map(
            &energy,
            TrwsOptions {
                max_iters: args.max_iters.or(config.max_iter).unwrap_or(200),
                tol: args.tol.or(config.tol).unwrap_or(1e-9),
            },
        )?,
        Solver::Icm => {
            let init = Labeling(vec![0; energy.graph.num_nodes()]);
            icm(
                &energy,
                &init,
                args.max_iters.or(config.max_iter).unwrap_or(100),
            )?
        }
    };
    let record = InferRecord {
        labels: result.labeling.0,
        energy: result.energy,
        lower_bound: result.lower_bound,
        iterations: result.iterations,
    };
    let text = serde_json::to_string(&record)?;
    match &args.out {
        Some(path) => {
            let mut file = std::fs::File::create(path)?;
            writeln!(file, "{text}")?;
        }
        None => println!("{text}"),
    }
    Ok(())
}
