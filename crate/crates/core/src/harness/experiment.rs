//! Running one experiment, or a grid of them, into report directories.
//!
//! Every run directory gets `config.json` (the resolved configuration),
//! `metrics.csv` (one row per recorded epoch and training phase),
//! `final_metrics.json`, `checkpoint.json` and, for the generation task,
//! `predictions.csv`. A failed run leaves a `FAILED` file holding the error.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::checkpoint::{save_checkpoint, CheckpointMeta};
use super::config::{ExperimentConfig, PipelineSpec, TaskSpec};
use super::data::{load_sequences, SequenceDataset, Split};
use super::tasks::{gen_pianoroll_task, gen_sequence_task};
use crate::error::{LmnError, Result};
use crate::models::{ArchSpec, ModelParams};
use crate::pipelines::{lmn_train, mslmn_train, IncrementalSchedule, LmnInitReport};
use crate::training::{evaluate, predict, train, EpochRecord, Metrics};

pub const FAILURE_MARKER: &str = "FAILED";

/// Contents of `final_metrics.json`. The headline `loss`, `nmse`,
/// `frame_accuracy` and `accuracy` come from `eval_split`: the test split
/// when one exists, the training data otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub task: String,
    pub arch: ArchSpec,
    pub pipeline: PipelineSpec,
    pub params: usize,
    pub seed: u64,
    pub eval_split: Split,
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nmse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    pub train: Metrics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val: Option<Metrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<Metrics>,
    /// Epochs trained, summed over all phases.
    pub epochs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_report: Option<LmnInitReport>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub out_dir: PathBuf,
    pub metrics: FinalMetrics,
    pub model: ModelParams,
}

/// Train, validation and test data for a task.
pub fn build_datasets(
    config: &ExperimentConfig,
) -> Result<(SequenceDataset, Option<SequenceDataset>, Option<SequenceDataset>)> {
    let nonempty = |d: SequenceDataset| (!d.is_empty()).then_some(d);
    match &config.task {
        // single sequence: fit and score the same waveform
        TaskSpec::Generation { length } => Ok((gen_sequence_task(config.seed, *length)?, None, None)),
        TaskSpec::Pianoroll { n_sequences, length, n_notes } => {
            let all = gen_pianoroll_task(config.seed, *n_sequences, *length, *n_notes)?;
            Ok((
                all.split(Split::Train),
                nonempty(all.split(Split::Val)),
                nonempty(all.split(Split::Test)),
            ))
        }
        TaskSpec::Classification { path } => {
            let all = load_sequences(path)?;
            let train = all.split(Split::Train);
            if train.is_empty() {
                return Err(LmnError::invalid("classification corpus has no train split"));
            }
            if train.iter().any(|s| s.label().is_none()) {
                return Err(LmnError::invalid("classification sequences need a label"));
            }
            Ok((train, nonempty(all.split(Split::Val)), nonempty(all.split(Split::Test))))
        }
    }
}

struct PhaseHistory {
    phase: String,
    records: Vec<EpochRecord>,
}

/// Runs `config`, writing reports to `out_dir`. On error the directory
/// keeps whatever was written plus a failure marker.
pub fn run_experiment(config: &ExperimentConfig, out_dir: impl AsRef<Path>) -> Result<ExperimentReport> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir)?;
    let marker = out_dir.join(FAILURE_MARKER);
    if marker.exists() {
        fs::remove_file(&marker)?;
    }
    match run_inner(config, out_dir) {
        Ok(report) => Ok(report),
        Err(e) => {
            fs::write(&marker, format!("{e}\n"))?;
            Err(e)
        }
    }
}

fn run_inner(config: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentReport> {
    config.validate()?;
    fs::write(out_dir.join("config.json"), serde_json::to_string_pretty(config)?)?;
    let start = Instant::now();
    let (train_set, val_set, test_set) = build_datasets(config)?;
    let arch = config.model.resolve(train_set.input_dim(), train_set.output_dim())?;
    let cfg = config.train_config();
    let kind = cfg.loss;

    let mut phases = Vec::new();
    let mut init_report = None;
    let model = match (config.pipeline, &arch) {
        (PipelineSpec::Plain, _) => {
            let model = arch.build_random(&mut ChaCha8Rng::seed_from_u64(config.seed))?;
            let out = train(model, &train_set, val_set.as_ref(), &cfg)?;
            phases.push(PhaseHistory { phase: "train".into(), records: out.history });
            out.model
        }
        (PipelineSpec::LmnPretrain { tape_depth }, &ArchSpec::Lmn { n_h, n_m, .. }) => {
            let out = lmn_train(&train_set, val_set.as_ref(), n_h, n_m, tape_depth, &cfg)?;
            phases.push(PhaseHistory { phase: "urnn".into(), records: out.urnn_history });
            phases.push(PhaseHistory { phase: "lmn".into(), records: out.history });
            init_report = Some(out.report);
            ModelParams::Lmn(out.model)
        }
        (
            PipelineSpec::MslmnIncremental { epochs_per_stage },
            &ArchSpec::Mslmn { n_h, module_size, modules, .. },
        ) => {
            let schedule = IncrementalSchedule { epochs_per_stage, modules, module_size };
            let out = mslmn_train(&train_set, val_set.as_ref(), n_h, &schedule, &cfg)?;
            for st in out.stages {
                phases.push(PhaseHistory {
                    phase: format!("stage{}", st.modules),
                    records: st.history,
                });
            }
            ModelParams::Mslmn(out.model)
        }
        (p, a) => {
            return Err(LmnError::invalid(format!(
                "pipeline {p:?} does not apply to {a:?}"
            )))
        }
    };
    write_history(&out_dir.join("metrics.csv"), &phases)?;

    let train_m = evaluate(&model, &train_set, kind)?;
    let val_m = val_set.as_ref().map(|v| evaluate(&model, v, kind)).transpose()?;
    let test_m = test_set.as_ref().map(|t| evaluate(&model, t, kind)).transpose()?;
    let (eval_split, head) = match test_m {
        Some(t) => (Split::Test, t),
        None => (Split::Train, train_m),
    };
    let epochs: usize = phases
        .iter()
        .map(|p| p.records.last().map_or(0, |r| r.epoch))
        .sum();

    if let TaskSpec::Generation { .. } = config.task {
        let seq = &train_set.sequences()[0];
        let pred = predict(&model, &seq.x, kind)?;
        let target = seq.steps().expect("generation has per-step targets");
        let mut csv = String::from("t,target,prediction\n");
        for t in 0..pred.rows() {
            writeln!(csv, "{t},{},{}", target[(t, 0)], pred[(t, 0)]).expect("string write");
        }
        fs::write(out_dir.join("predictions.csv"), csv)?;
    }

    let mut ck_metrics = BTreeMap::from([("loss".to_string(), head.loss)]);
    for (name, v) in [
        ("nmse", head.nmse),
        ("frame_accuracy", head.frame_accuracy),
        ("accuracy", head.accuracy),
    ] {
        if let Some(v) = v {
            ck_metrics.insert(name.to_string(), v);
        }
    }
    let meta = CheckpointMeta { seed: Some(config.seed), epoch: Some(epochs), metrics: ck_metrics };
    save_checkpoint(&model, &meta, out_dir.join("checkpoint.json"))?;

    let metrics = FinalMetrics {
        task: config.task.name().into(),
        params: arch.count_params(),
        arch,
        pipeline: config.pipeline,
        seed: config.seed,
        eval_split,
        loss: head.loss,
        nmse: head.nmse,
        frame_accuracy: head.frame_accuracy,
        accuracy: head.accuracy,
        train: train_m,
        val: val_m,
        test: test_m,
        epochs,
        init_report,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    fs::write(out_dir.join("final_metrics.json"), serde_json::to_string_pretty(&metrics)?)?;
    Ok(ExperimentReport { out_dir: out_dir.to_path_buf(), metrics, model })
}

fn write_history(path: &Path, phases: &[PhaseHistory]) -> Result<()> {
    let mut csv = String::from("phase,epoch,train_loss,val_loss\n");
    for p in phases {
        for r in &p.records {
            let val = r.val_loss.map(|v| v.to_string()).unwrap_or_default();
            writeln!(csv, "{},{},{},{val}", p.phase, r.epoch, r.train_loss).expect("string write");
        }
    }
    fs::write(path, csv)?;
    Ok(())
}

/// `(dotted path, value)` pairs applied to a sweep's base config.
pub type Overrides = Vec<(String, Value)>;

/// A grid over dotted config paths, e.g.
/// `{"base": {...}, "grid": {"seed": [0, 1], "train.learning_rate": [0.01, 0.001]}}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub base: Value,
    #[serde(default)]
    pub grid: BTreeMap<String, Vec<Value>>,
}

impl SweepConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    /// Every grid point as a validated config, with the overrides that
    /// produced it. Keys vary slowest-first in sorted order.
    pub fn expand(&self) -> Result<Vec<(Overrides, ExperimentConfig)>> {
        let keys: Vec<&String> = self.grid.keys().collect();
        if let Some(k) = keys.iter().find(|k| self.grid[**k].is_empty()) {
            return Err(LmnError::invalid(format!("sweep axis \"{k}\" has no values")));
        }
        let total: usize = keys.iter().map(|k| self.grid[*k].len()).product();
        let mut out = Vec::with_capacity(total);
        for mut idx in 0..total {
            let mut picks = Vec::with_capacity(keys.len());
            for k in keys.iter().rev() {
                let axis = &self.grid[*k];
                picks.push(((*k).clone(), axis[idx % axis.len()].clone()));
                idx /= axis.len();
            }
            picks.reverse();
            let mut value = self.base.clone();
            for (path, v) in &picks {
                set_path(&mut value, path, v.clone())?;
            }
            let cfg: ExperimentConfig = serde_json::from_value(value)?;
            cfg.validate()?;
            out.push((picks, cfg));
        }
        Ok(out)
    }
}

fn set_path(root: &mut Value, path: &str, v: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| LmnError::invalid(format!("sweep path \"{path}\" crosses a non-object")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), v);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SweepRun {
    pub dir: PathBuf,
    pub overrides: Overrides,
    pub outcome: std::result::Result<FinalMetrics, String>,
}

/// Runs every grid point in its own `run_NNN` directory, up to `jobs` at a
/// time, and writes `sweep.csv` summarizing them. Failed runs are reported
/// in the summary rather than aborting the sweep.
pub fn run_sweep(sweep: &SweepConfig, out_dir: impl AsRef<Path>, jobs: usize) -> Result<Vec<SweepRun>> {
    let out_dir = out_dir.as_ref();
    let points = sweep.expand()?;
    fs::create_dir_all(out_dir)?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<SweepRun>>> = Mutex::new(vec![None; points.len()]);
    std::thread::scope(|scope| {
        for _ in 0..jobs.max(1).min(points.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((overrides, cfg)) = points.get(i) else { break };
                let dir = out_dir.join(format!("run_{i:03}"));
                let outcome = run_experiment(cfg, &dir)
                    .map(|r| r.metrics)
                    .map_err(|e| e.to_string());
                let run = SweepRun { dir, overrides: overrides.clone(), outcome };
                results.lock().expect("no panics while holding the lock")[i] = Some(run);
            });
        }
    });
    let runs: Vec<SweepRun> = results
        .into_inner()
        .expect("workers finished")
        .into_iter()
        .map(|r| r.expect("every point ran"))
        .collect();

    let keys: Vec<&String> = sweep.grid.keys().collect();
    let mut csv = String::from("run");
    for k in &keys {
        write!(csv, ",{k}").expect("string write");
    }
    csv.push_str(",status,params,loss,nmse,frame_accuracy,accuracy,epochs,wall_time_s\n");
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for (i, run) in runs.iter().enumerate() {
        write!(csv, "{i}").expect("string write");
        for (_, v) in &run.overrides {
            // keep commas out of the cell
            write!(csv, ",{}", v.to_string().replace(',', ";")).expect("string write");
        }
        match &run.outcome {
            Ok(m) => writeln!(
                csv,
                ",ok,{},{},{},{},{},{},{}",
                m.params,
                m.loss,
                opt(m.nmse),
                opt(m.frame_accuracy),
                opt(m.accuracy),
                m.epochs,
                m.wall_time_s
            ),
            Err(_) => writeln!(csv, ",failed,,,,,,,"),
        }
        .expect("string write");
    }
    fs::write(out_dir.join("sweep.csv"), csv)?;
    Ok(runs)
}
