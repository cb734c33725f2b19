//! `repdiff`: compare two embedding matrices from the command line.
//!
//! Exit status is 0 on success, 1 for usage errors and 2 for runtime failures.
//! Failures print one line on stderr: `error[<class>]: <message>`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use repdiff_core::align::{fit_alignment, FitOptions, TraceEntry};
use repdiff_core::difference::DiffKind;
use repdiff_core::npy;
use repdiff_core::pipeline::{self, Representation};
use repdiff_core::report::{self, AlignDirection, Method, RunConfig, Sampler};
use repdiff_core::synth::{generate_pair, PlantedSpec};
use repdiff_core::{Error, NormKind};

#[derive(Parser)]
#[command(name = "repdiff", version, about = "Representational difference explanations for two embedding matrices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Difference explanations in both directions.
    Compare {
        #[command(flatten)]
        inputs: InputArgs,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum)]
        distance: Option<DistanceArg>,
        #[arg(long, value_enum)]
        diff: Option<DiffArg>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long, value_enum)]
        sampler: Option<SamplerArg>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Single-representation baseline explanations scored against the other representation.
    Baseline {
        #[arg(long, value_enum)]
        method: BaselineArg,
        #[command(flatten)]
        inputs: InputArgs,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        nmf_iters: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute the metrics of the explanations stored in a report.
    Eval {
        #[arg(long)]
        report: PathBuf,
        #[command(flatten)]
        inputs: InputArgs,
        /// Defaults to standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cluster disagreement between two runs over their shared items.
    Consistency {
        #[arg(long, num_args = 2, value_names = ["R1", "R2"], required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a planted-difference fixture pair.
    Synth {
        /// JSON planted spec; omitted fields take their defaults.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out_a: PathBuf,
        #[arg(long)]
        out_b: PathBuf,
        /// Item-id sidecar written for both matrices.
        #[arg(long)]
        out_ids: Option<PathBuf>,
        /// Ground-truth labels and planted items as JSON.
        #[arg(long)]
        out_truth: Option<PathBuf>,
    },
    /// Fit a linear map from A to B that maximizes CKA.
    Align {
        #[command(flatten)]
        inputs: PairArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value_t = 0.001)]
        lr: f64,
        #[arg(long, default_value_t = 0.7)]
        train_frac: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct PairArgs {
    #[arg(long)]
    repr_a: PathBuf,
    #[arg(long)]
    repr_b: PathBuf,
    /// Newline-delimited item ids for A (default: row indices).
    #[arg(long)]
    ids_a: Option<PathBuf>,
    #[arg(long)]
    ids_b: Option<PathBuf>,
}

#[derive(Args)]
struct InputArgs {
    #[command(flatten)]
    pair: PairArgs,
    /// Judge embeddings over the same items, enabling clarity, polysemanticity and redundancy.
    #[arg(long)]
    judge: Option<PathBuf>,
    #[arg(long)]
    judge_ids: Option<PathBuf>,
    /// Ground-truth JSON from `synth --out-truth`; adds planted fractions per grid.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_enum)]
    align: Option<AlignArg>,
    #[arg(long = "num-explanations")]
    m: Option<usize>,
    #[arg(long)]
    grid_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Additional BSR normalization; repeatable.
    #[arg(long = "bsr-variant", value_enum)]
    bsr_variants: Vec<DistanceArg>,
    /// Lift the item-count guard.
    #[arg(long)]
    allow_large: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum DistanceArg {
    Neighborhood,
    Maxnorm,
    Localscale,
}

#[derive(Clone, Copy, ValueEnum)]
enum DiffArg {
    Tanh,
    Sub,
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplerArg {
    Spectral,
    Pagerank,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlignArg {
    None,
    A2b,
    B2a,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    Kmeans,
    Pca,
    Nmf,
}

impl From<DistanceArg> for NormKind {
    fn from(d: DistanceArg) -> Self {
        match d {
            DistanceArg::Neighborhood => NormKind::Neighborhood,
            DistanceArg::Maxnorm => NormKind::MaxNormalized,
            DistanceArg::Localscale => NormKind::LocallyScaled,
        }
    }
}

/// Machine-readable failure: a class tag plus a message.
struct Failure {
    class: String,
    message: String,
    code: u8,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            class: "usage".into(),
            message: message.into(),
            code: 1,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            class: e.class().into(),
            message: e.to_string(),
            code: 2,
        }
    }
}

type CliResult<T> = Result<T, Failure>;

#[derive(Serialize, Deserialize)]
struct TruthFile {
    spec: PlantedSpec,
    items: Vec<String>,
    labels: Vec<usize>,
    planted: Vec<bool>,
}

#[derive(Serialize)]
struct TraceFile<'a> {
    best_step: usize,
    best_val_cka: f64,
    split_seed: u64,
    trace: &'a [TraceEntry],
}

fn apply_run_args(cfg: &mut RunConfig, run: &RunArgs) {
    if let Some(a) = run.align {
        cfg.align = match a {
            AlignArg::None => AlignDirection::None,
            AlignArg::A2b => AlignDirection::A2b,
            AlignArg::B2a => AlignDirection::B2a,
        };
    }
    if let Some(m) = run.m {
        cfg.m = m;
    }
    if let Some(g) = run.grid_size {
        cfg.grid_size = g;
    }
    if let Some(s) = run.seed {
        cfg.seed = s;
    }
    cfg.bsr_variants = run.bsr_variants.iter().map(|&k| k.into()).collect();
    if run.allow_large {
        cfg.max_items = usize::MAX;
    }
}

/// Config problems are the caller's fault, so they exit as usage errors.
fn checked(cfg: RunConfig) -> CliResult<RunConfig> {
    cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;
    Ok(cfg)
}

fn load_pair(p: &PairArgs) -> CliResult<(Representation, Representation)> {
    let a = Representation::load(&p.repr_a, p.ids_a.as_deref())?;
    let b = Representation::load(&p.repr_b, p.ids_b.as_deref())?;
    Ok((a, b))
}

fn load_judge(inputs: &InputArgs) -> CliResult<Option<Representation>> {
    match &inputs.judge {
        Some(p) => Ok(Some(Representation::load(p, inputs.judge_ids.as_deref())?)),
        None => Ok(None),
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(report::from_json(&text)?)
}

fn write_text(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| {
            Failure::from(Error::Io {
                path: p.to_path_buf(),
                source: e,
            })
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn annotate(report: &mut report::ComparisonReport, truth: Option<&Path>) -> CliResult<()> {
    let Some(path) = truth else { return Ok(()) };
    let t: TruthFile = read_json(path)?;
    if t.items != report.items {
        return Err(Error::Invalid("ground-truth items differ from the compared items".into()).into());
    }
    pipeline::annotate_planted(report, &t.planted)?;
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Compare {
            inputs,
            run,
            distance,
            diff,
            gamma,
            beta,
            sampler,
            out,
        } => {
            let mut cfg = RunConfig::default();
            apply_run_args(&mut cfg, &run);
            if let Some(d) = distance {
                cfg.distance = d.into();
            }
            if let Some(d) = diff {
                cfg.diff = match d {
                    DiffArg::Tanh => DiffKind::Tanh,
                    DiffArg::Sub => DiffKind::Subtraction,
                };
            }
            if let Some(g) = gamma {
                cfg.gamma = g;
            }
            if let Some(b) = beta {
                cfg.beta = b;
            }
            if let Some(s) = sampler {
                cfg.sampler = match s {
                    SamplerArg::Spectral => Sampler::Spectral,
                    SamplerArg::Pagerank => Sampler::Pagerank,
                };
            }
            let cfg = checked(cfg)?;
            let (a, b) = load_pair(&inputs.pair)?;
            let judge = load_judge(&inputs)?;
            let mut r = pipeline::compare(&a, &b, judge.as_ref(), &cfg)?;
            annotate(&mut r, inputs.truth.as_deref())?;
            report::write_report(&r, &out)?;
        }
        Command::Baseline {
            method,
            inputs,
            run,
            nmf_iters,
            out,
        } => {
            let mut cfg = RunConfig {
                method: match method {
                    BaselineArg::Kmeans => Method::Kmeans,
                    BaselineArg::Pca => Method::Pca,
                    BaselineArg::Nmf => Method::Nmf,
                },
                ..RunConfig::default()
            };
            apply_run_args(&mut cfg, &run);
            if let Some(i) = nmf_iters {
                cfg.nmf_iters = i;
            }
            let cfg = checked(cfg)?;
            let (a, b) = load_pair(&inputs.pair)?;
            let judge = load_judge(&inputs)?;
            let mut r = pipeline::baseline(&a, &b, judge.as_ref(), &cfg)?;
            annotate(&mut r, inputs.truth.as_deref())?;
            report::write_report(&r, &out)?;
        }
        Command::Eval { report: path, inputs, out } => {
            let stored = report::read_report(&path)?;
            let (a, b) = load_pair(&inputs.pair)?;
            let judge = load_judge(&inputs)?;
            let mut r = pipeline::eval(&stored, &a, &b, judge.as_ref())?;
            annotate(&mut r, inputs.truth.as_deref())?;
            write_text(out.as_deref(), &report::to_canonical_json(&r)?)?;
        }
        Command::Consistency { reports, out } => {
            let r1 = report::read_report(&reports[0])?;
            let r2 = report::read_report(&reports[1])?;
            let c = pipeline::consistency(&r1, &r2)?;
            write_text(out.as_deref(), &report::to_canonical_json(&c)?)?;
        }
        Command::Synth {
            spec,
            out_a,
            out_b,
            out_ids,
            out_truth,
        } => {
            let spec: PlantedSpec = match &spec {
                Some(p) => read_json(p)?,
                None => PlantedSpec::default(),
            };
            spec.validate().map_err(|e| Failure::usage(e.to_string()))?;
            let pair = generate_pair(&spec)?;
            npy::write_embeddings(&out_a, &pair.a, out_ids.as_deref())?;
            npy::write_embeddings(&out_b, &pair.b, None)?;
            if let Some(p) = out_truth {
                let t = TruthFile {
                    spec,
                    items: pair.a.items().to_vec(),
                    labels: pair.truth.labels.clone(),
                    planted: pair.truth.planted.clone(),
                };
                write_text(Some(&p), &report::to_canonical_json(&t)?)?;
            }
        }
        Command::Align {
            inputs,
            out,
            trace,
            steps,
            lr,
            train_frac,
            seed,
        } => {
            let opts = FitOptions {
                steps,
                lr,
                train_frac,
                seed,
            };
            if !(lr > 0.0) || !(train_frac > 0.0 && train_frac < 1.0) {
                return Err(Failure::usage("--lr must be positive and --train-frac in (0, 1)"));
            }
            let (a, b) = load_pair(&inputs)?;
            let map = fit_alignment(&a.emb, &b.emb, &opts)?;
            npy::write_matrix(&out, &map.matrix, npy::Dtype::F8)?;
            if let Some(p) = trace {
                let t = TraceFile {
                    best_step: map.best_step,
                    best_val_cka: map.best_val_cka,
                    split_seed: map.split_seed,
                    trace: &map.trace,
                };
                write_text(Some(&p), &report::to_canonical_json(&t)?)?;
            }
        }
    }
    Ok(())
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("error[usage]: {}", one_line(first.trim_start_matches("error: ")));
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error[{}]: {}", f.class, one_line(&f.message));
            ExitCode::from(f.code)
        }
    }
}
