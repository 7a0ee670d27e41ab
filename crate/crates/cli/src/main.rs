use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use lmn_core::harness::{
    gen_pianoroll_task, gen_sequence_task, load_checkpoint, load_sequences, run_experiment,
    run_sweep, save_sequences, ArchKind, ExperimentConfig, ModelSpec, SweepConfig,
};
use lmn_core::laes;
use lmn_core::models::count_params;
use lmn_core::numerics::numerical_rank;
use lmn_core::training::{evaluate, grad_check};
use lmn_core::{LossKind, Matrix, Readout, Sequence, SequenceDataset, Target};

#[derive(Parser)]
#[command(name = "lmn", version, about = "Linear memory networks: LAES fitting, training and experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a closed-form LAES to the inputs of a JSONL corpus.
    FitLaes(FitLaesArgs),
    /// Run one experiment from a JSON config.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a JSONL corpus.
    Eval(EvalArgs),
    /// Compare BPTT gradients against central differences.
    Gradcheck(GradcheckArgs),
    /// Count parameters, or size a model to a budget.
    ParamCount(ParamCountArgs),
    /// Write a synthetic task corpus as JSONL.
    GenData(GenDataArgs),
    /// Run a grid of experiments.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct FitLaesArgs {
    /// JSONL corpus; only the `x` arrays are used.
    #[arg(long)]
    data: PathBuf,
    /// Memory size; defaults to the numerical rank of the data matrix.
    #[arg(long)]
    p: Option<usize>,
    /// Use the incremental SVD instead of the dense one.
    #[arg(long)]
    streaming: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Report directory; overrides `out_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Mse,
    Nmse,
    Bce,
    CrossEntropy,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Mse => LossKind::Mse,
            LossArg::Nmse => LossKind::Nmse,
            LossArg::Bce => LossKind::Bce,
            LossArg::CrossEntropy => LossKind::CrossEntropy,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "mse")]
    loss: LossArg,
    /// Also write `eval.json` into this directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq)]
enum ArchArg {
    Rnn,
    Lmn,
    Urnn,
    Mslmn,
}

impl From<ArchArg> for ArchKind {
    fn from(a: ArchArg) -> Self {
        match a {
            ArchArg::Rnn => ArchKind::Rnn,
            ArchArg::Lmn => ArchKind::Lmn,
            ArchArg::Urnn => ArchKind::Urnn,
            ArchArg::Mslmn => ArchKind::Mslmn,
        }
    }
}

#[derive(Args)]
struct SizeArgs {
    #[arg(long, value_enum, default_value = "lmn")]
    arch: ArchArg,
    #[arg(long, default_value_t = 2)]
    n_x: usize,
    #[arg(long, default_value_t = 1)]
    n_y: usize,
    #[arg(long)]
    n_h: Option<usize>,
    #[arg(long)]
    n_m: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    module_size: Option<usize>,
    #[arg(long)]
    modules: Option<usize>,
    /// Read the output from the hidden state instead of the memory (LMN).
    #[arg(long)]
    hidden_readout: bool,
    #[arg(long)]
    budget: Option<usize>,
}

impl SizeArgs {
    fn spec(&self) -> ModelSpec {
        ModelSpec {
            n_h: self.n_h,
            n_m: self.n_m,
            k: self.k,
            module_size: self.module_size,
            modules: self.modules,
            readout: if self.hidden_readout { Readout::Hidden } else { Readout::Memory },
            budget: self.budget,
            ..ModelSpec::new(self.arch.into())
        }
    }
}

#[derive(Args)]
struct GradcheckArgs {
    #[command(flatten)]
    sizes: SizeArgs,
    /// Take the architecture and data from an experiment config instead.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
    /// Largest acceptable relative error.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
}

#[derive(Args)]
struct ParamCountArgs {
    #[command(flatten)]
    sizes: SizeArgs,
    /// Size the model of an experiment config instead.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Generation,
    Pianoroll,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, value_enum)]
    task: TaskArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 300)]
    length: usize,
    #[arg(long, default_value_t = 40)]
    n_sequences: usize,
    #[arg(long, default_value_t = 88)]
    n_notes: usize,
    /// Directory receiving `dataset.jsonl`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// JSON with a `base` experiment config and a `grid` of dotted-path overrides.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Concurrent runs; defaults to the number of CPUs.
    #[arg(long)]
    jobs: Option<usize>,
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::FitLaes(a) => fit_laes(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::ParamCount(a) => param_count(a),
        Command::GenData(a) => gen_data(a),
        Command::Sweep(a) => sweep(a),
    }
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn fit_laes(a: FitLaesArgs) -> Result<()> {
    let data = load_sequences(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    let rank = numerical_rank(&laes::build_data_matrix(&data)?);
    let p = a.p.unwrap_or(rank);
    let fit = laes::fit(&data, p, a.streaming)?;
    fs::create_dir_all(&a.out)?;
    let summary = json!({
        "p": p,
        "rank": rank,
        "discarded_energy": fit.discarded_energy,
        "singular_values": fit.singular_values,
        "params": fit.params,
    });
    fs::write(a.out.join("laes.json"), serde_json::to_string_pretty(&summary)?)?;

    // truncation curve over every memory size up to p
    let mut csv = String::from("p,total_squared_error,max_abs_error,discarded_energy\n");
    for q in 1..=p {
        let f = laes::fit(&data, q, a.streaming)?;
        let e = laes::prefix_errors(&f.params, &data)?;
        csv.push_str(&format!("{q},{},{},{}\n", e.total_squared, e.max_abs, f.discarded_energy));
    }
    fs::write(a.out.join("truncation.csv"), csv)?;

    let profile = laes::reconstruction_error_profile(&fit.params, &data)?;
    let mut csv = String::from("steps_back,mse\n");
    for (j, e) in profile.iter().enumerate() {
        csv.push_str(&format!("{j},{e}\n"));
    }
    fs::write(a.out.join("error_profile.csv"), csv)?;
    eprintln!("p = {p} (rank {rank}), discarded energy {:.3e}", fit.discarded_energy);
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&a.config)
        .with_context(|| format!("reading config {}", a.config.display()))?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let out = a
        .out
        .or_else(|| cfg.out_dir.clone())
        .context("no output directory: pass --out or set out_dir in the config")?;
    let report = run_experiment(&cfg, &out)?;
    print_json(&report.metrics)
}

fn eval(a: EvalArgs) -> Result<()> {
    let (model, _) = load_checkpoint(&a.checkpoint)
        .with_context(|| format!("loading checkpoint {}", a.checkpoint.display()))?;
    let data = load_sequences(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    let metrics = evaluate(&model, &data, a.loss.into())?;
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("eval.json"), serde_json::to_string_pretty(&metrics)?)?;
    }
    print_json(&metrics)
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let (arch, data, kind) = match &a.config {
        Some(path) => {
            let cfg = ExperimentConfig::load(path)?;
            let (train, _, _) = lmn_core::harness::experiment::build_datasets(&cfg)?;
            let arch = cfg.model.resolve(train.input_dim(), train.output_dim())?;
            let few = SequenceDataset::new(train.iter().take(2).cloned().collect())?;
            (arch, few, cfg.loss())
        }
        None => {
            if a.len == 0 {
                bail!("--len must be at least 1");
            }
            let s = &a.sizes;
            let arch = s.spec().resolve(s.n_x, s.n_y)?;
            let x = Matrix::from_fn(a.len, s.n_x, |_, _| rng.random_range(-1.0..1.0));
            let y = Matrix::from_fn(a.len, s.n_y, |_, _| rng.random_range(-1.0..1.0));
            (arch, SequenceDataset::new(vec![Sequence::new(x, Target::Steps(y))])?, LossKind::Mse)
        }
    };
    let model = arch.build_random(&mut rng)?;
    let batch: Vec<&Sequence> = data.iter().collect();
    let err = grad_check(&model, &batch, kind, a.epsilon)?;
    print_json(&json!({"arch": arch, "max_relative_error": err, "tolerance": a.tol}))?;
    if err.is_nan() || err > a.tol {
        bail!("relative gradient error {err:.3e} exceeds {:.1e}", a.tol);
    }
    Ok(())
}

fn param_count(a: ParamCountArgs) -> Result<()> {
    let arch = match &a.config {
        Some(path) => {
            let cfg = ExperimentConfig::load(path)?;
            let (train, _, _) = lmn_core::harness::experiment::build_datasets(&cfg)?;
            cfg.model.resolve(train.input_dim(), train.output_dim())?
        }
        None => a.sizes.spec().resolve(a.sizes.n_x, a.sizes.n_y)?,
    };
    print_json(&json!({"arch": arch, "params": count_params(&arch)}))
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let data = match a.task {
        TaskArg::Generation => gen_sequence_task(a.seed, a.length)?,
        TaskArg::Pianoroll => gen_pianoroll_task(a.seed, a.n_sequences, a.length, a.n_notes)?,
    };
    fs::create_dir_all(&a.out)?;
    let path = a.out.join("dataset.jsonl");
    save_sequences(&data, &path)?;
    eprintln!("wrote {} sequences to {}", data.len(), display(&path));
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let sweep = SweepConfig::load(&a.config)
        .with_context(|| format!("reading sweep config {}", a.config.display()))?;
    let jobs = a
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let runs = run_sweep(&sweep, &a.out, jobs)?;
    let failed: Vec<String> = runs
        .iter()
        .filter_map(|r| r.outcome.as_ref().err().map(|e| format!("{}: {e}", display(&r.dir))))
        .collect();
    eprintln!("{} runs, {} failed; summary in {}", runs.len(), failed.len(), display(&a.out.join("sweep.csv")));
    if !failed.is_empty() {
        bail!("failed runs:\n  {}", failed.join("\n  "));
    }
    Ok(())
}

fn display(p: &Path) -> String {
    p.display().to_string()
}
