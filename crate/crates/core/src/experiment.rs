//! Multi-seed experiment runner and its on-disk outputs.
//!
//! Layout under `output_dir/name/`:
//! `summary.json`, `series.csv`, and per seed `steps.csv`, `metrics.csv`,
//! `thresholds.csv`, `corrections.csv`, `memory.csv`, `model.json`.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corrector::CorrectionRecord;
use crate::engine::{Engine, EngineConfig, Event};
use crate::metrics::{mean_and_se, PrequentialScorer};
use crate::model::ModelConfig;
use crate::streams::{prepare, StreamSpec};
use crate::{Error, Result};

/// Mixed into the run seed for the engine so stream and model draws are
/// independent.
const ENGINE_SEED_SALT: u64 = 0x5eed_0f_5c11;

/// Class cap in the dataset defaults. Runaway promotion makes every training
/// session wider and slower; this bounds the cost of such runs.
pub const DEFAULT_MAX_CLASSES: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_base_seed")]
    pub base_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    #[serde(default = "default_fading")]
    pub fading_factor: f64,
    /// Skip all file output (summary is still returned).
    #[serde(default = "default_true")]
    pub write_outputs: bool,
    pub stream: StreamSpec,
    /// `engine.model.input_dim = 0` takes the width from the data.
    pub engine: EngineConfig,
}

fn default_runs() -> usize {
    10
}
fn default_base_seed() -> u64 {
    1
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_jobs() -> usize {
    1
}
fn default_fading() -> f64 {
    0.99
}
fn default_true() -> bool {
    true
}

/// Names accepted by [`default_config`].
pub const DATASETS: &[&str] = &[
    "blob", "sea", "vib", "mnist", "kdd99", "forest", "sensorless", "shuttle", "wdn",
];

/// Defaults for a named dataset. Real datasets are CSV replays that expect
/// `data/<name>.csv`.
pub fn default_config(dataset: &str) -> Option<ExperimentConfig> {
    let stream = match dataset {
        "blob" => StreamSpec::blob(),
        "sea" => StreamSpec::sea(),
        "vib" => StreamSpec::vib(),
        other if DATASETS.contains(&other) => {
            StreamSpec::csv(format!("data/{other}.csv"), vec![0, 1])
        }
        _ => return None,
    };
    let dim = stream.dim().unwrap_or(0);
    let model = ModelConfig::preset(dataset, dim)?;
    Some(ExperimentConfig {
        name: dataset.to_string(),
        runs: default_runs(),
        base_seed: default_base_seed(),
        output_dir: default_output_dir(),
        jobs: default_jobs(),
        fading_factor: default_fading(),
        write_outputs: true,
        stream,
        engine: EngineConfig {
            max_classes: Some(DEFAULT_MAX_CLASSES),
            ..EngineConfig::new(model)
        },
    })
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Internal(format!("config serialization: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::config("runs must be at least 1"));
        }
        if self.jobs == 0 {
            return Err(Error::config("jobs must be at least 1"));
        }
        if !(self.fading_factor > 0.0 && self.fading_factor <= 1.0) {
            return Err(Error::config("fading_factor must be in (0, 1]"));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::config("name must be a plain directory name"));
        }
        self.stream.validate()?;
        let mut engine = self.engine.clone();
        if engine.model.input_dim == 0 {
            engine.model.input_dim = 1;
        }
        engine.validate()?;
        if let Some(d) = self.stream.dim() {
            if self.engine.model.input_dim != 0 && self.engine.model.input_dim != d {
                return Err(Error::config(format!(
                    "model input_dim {} does not match the stream width {d}",
                    self.engine.model.input_dim
                )));
            }
        }
        Ok(())
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.runs as u64).map(|i| self.base_seed + i)
    }
}

/// One scored online step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    /// Source timestep in the generated or replayed stream.
    pub t: u64,
    pub true_label: usize,
    pub model_label: usize,
    pub predicted_label: usize,
    pub mapped_label: Option<usize>,
    pub novel: bool,
    pub correct: bool,
    pub recon_loss: f64,
    pub theta: f64,
    pub event: Event,
    pub class_count: usize,
    pub stored: usize,
    pub bound: usize,
    pub en_accuracy: f64,
    pub g_mean: f64,
    pub recalls: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    /// Cumulative EN_Accuracy at the end of the stream.
    pub en_accuracy: f64,
    /// Time-average of the per-step faded G-mean.
    pub g_mean: f64,
    pub false_negative_rate: f64,
    pub final_g_mean: f64,
    pub new_model_events: usize,
    pub incremental_events: usize,
    pub final_class_count: usize,
    pub label_map: Vec<(usize, usize)>,
    pub memory_bound_held: bool,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub summary: RunSummary,
    pub steps: Vec<StepRecord>,
    pub corrections: Vec<(u64, CorrectionRecord)>,
    /// `(step, theta)` at pretraining and after every retraining.
    pub thresholds: Vec<(u64, Vec<f64>)>,
}

impl RunResult {
    /// Source timesteps of `NewModelTrained` events.
    pub fn new_model_times(&self) -> Vec<u64> {
        self.steps
            .iter()
            .filter(|s| s.event == Event::NewModelTrained)
            .map(|s| s.t)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    fn of(values: &[f64]) -> Self {
        let (mean, se) = mean_and_se(values);
        Self { mean, se }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSummary {
    pub name: String,
    pub runs: usize,
    pub base_seed: u64,
    pub en_accuracy: MeanSe,
    pub g_mean: MeanSe,
    pub false_negative_rate: MeanSe,
    pub per_run: Vec<RunSummary>,
}

/// Runs one seed end to end. Writes the per-seed files when `out_dir` is set.
pub fn run_single(config: &ExperimentConfig, seed: u64, out_dir: Option<&Path>) -> Result<RunResult> {
    let mut engine_cfg = config.engine.clone();
    let prepared = prepare(
        &config.stream,
        seed,
        engine_cfg.pretrain_majority_count,
        engine_cfg.pretrain_minority_count,
    )?;
    if engine_cfg.model.input_dim == 0 {
        engine_cfg.model.input_dim = prepared.dim();
    } else if engine_cfg.model.input_dim != prepared.dim() {
        return Err(Error::config(format!(
            "model input_dim {} does not match the data width {}",
            engine_cfg.model.input_dim,
            prepared.dim()
        )));
    }
    engine_cfg.seed = seed ^ ENGINE_SEED_SALT;
    let mut engine = Engine::pretrain(engine_cfg, &prepared.split.pretrain)?;
    let mut scorer = PrequentialScorer::new(config.fading_factor, &prepared.initial_classes);

    let online = &prepared.split.online;
    let mut steps = Vec::with_capacity(online.len());
    let mut corrections = Vec::new();
    let mut thresholds = vec![(0, engine.thresholds().theta.clone())];
    let mut g_sum = 0.0;
    for item in online {
        let out = engine.step(&item.x, Some(item.label))?;
        let internal = out.internal_class();
        let correct = scorer.record(item.label, internal);
        let mapped_label = internal.and_then(|i| scorer.map_internal(i));
        if let Some(p) = &out.promotion {
            scorer.update_label_map(p.class, &p.ground_truths);
        }
        if out.event != Event::None {
            thresholds.push((out.timestep, engine.thresholds().theta.clone()));
        }
        corrections.extend(out.corrections.iter().map(|c| (out.timestep, c.clone())));
        let g = scorer.g_mean();
        g_sum += g;
        let memory = engine.memory();
        steps.push(StepRecord {
            step: out.timestep,
            t: item.t,
            true_label: item.label,
            model_label: out.model_label,
            predicted_label: out.predicted_label,
            mapped_label,
            novel: out.is_novel,
            correct,
            recon_loss: out.recon_loss,
            theta: out.theta_of_predicted,
            event: out.event,
            class_count: engine.class_count(),
            stored: memory.total_stored(),
            bound: memory.capacity_bound(),
            en_accuracy: scorer.en_accuracy(),
            g_mean: g,
            recalls: scorer.recalls(),
        });
    }

    let count = |e| steps.iter().filter(|s| s.event == e).count();
    let summary = RunSummary {
        seed,
        en_accuracy: scorer.en_accuracy(),
        g_mean: if steps.is_empty() { 1.0 } else { g_sum / steps.len() as f64 },
        false_negative_rate: scorer.false_negative_rate(),
        final_g_mean: scorer.g_mean(),
        new_model_events: count(Event::NewModelTrained),
        incremental_events: count(Event::IncrementalTrained),
        final_class_count: engine.class_count(),
        label_map: scorer.label_map().iter().map(|(&a, &b)| (a, b)).collect(),
        memory_bound_held: steps.iter().all(|s| s.stored <= s.bound),
    };
    let result = RunResult {
        summary,
        steps,
        corrections,
        thresholds,
    };
    if let Some(dir) = out_dir {
        write_run(dir, &result, &engine)?;
    }
    Ok(result)
}

/// Runs every seed (in parallel up to `jobs`) and writes the experiment
/// outputs. Results are ordered by seed regardless of scheduling.
pub fn run_experiment(config: &ExperimentConfig) -> Result<(ExperimentSummary, Vec<RunResult>)> {
    config.validate()?;
    let root = config.output_dir.join(&config.name);
    let seeds: Vec<u64> = config.seeds().collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
    let results: Vec<Result<RunResult>> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                log::info!("{}: seed {seed} started", config.name);
                let dir = config.write_outputs.then(|| root.join(seed.to_string()));
                run_single(config, seed, dir.as_deref()).map_err(|e| Error::Run {
                    seed,
                    source: Box::new(e),
                })
            })
            .collect()
    });
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let summary = summarize(config, &results);
    if config.write_outputs {
        fs::create_dir_all(&root)?;
        fs::write(root.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
        write_series(&root.join("series.csv"), &results)?;
    }
    Ok((summary, results))
}

pub fn summarize(config: &ExperimentConfig, results: &[RunResult]) -> ExperimentSummary {
    let col = |f: fn(&RunSummary) -> f64| results.iter().map(|r| f(&r.summary)).collect::<Vec<_>>();
    ExperimentSummary {
        name: config.name.clone(),
        runs: results.len(),
        base_seed: config.base_seed,
        en_accuracy: MeanSe::of(&col(|s| s.en_accuracy)),
        g_mean: MeanSe::of(&col(|s| s.g_mean)),
        false_negative_rate: MeanSe::of(&col(|s| s.false_negative_rate)),
        per_run: results.iter().map(|r| r.summary.clone()).collect(),
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

pub fn write_steps<W: Write>(mut w: W, steps: &[StepRecord]) -> Result<()> {
    writeln!(
        w,
        "step,t,true_label,model_label,predicted_label,mapped_label,novel,correct,recon_loss,theta,event,class_count,stored,bound"
    )?;
    for s in steps {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            s.step,
            s.t,
            s.true_label,
            s.model_label,
            s.predicted_label,
            opt(s.mapped_label),
            u8::from(s.novel),
            u8::from(s.correct),
            s.recon_loss,
            s.theta,
            s.event.as_str(),
            s.class_count,
            s.stored,
            s.bound
        )?;
    }
    w.flush()?;
    Ok(())
}

fn write_metrics<W: Write>(mut w: W, steps: &[StepRecord]) -> Result<()> {
    let classes: BTreeSet<usize> = steps.iter().flat_map(|s| s.recalls.iter().map(|r| r.0)).collect();
    let mut header = String::from("step,t,en_accuracy,g_mean");
    for c in &classes {
        write!(header, ",recall_{c}").expect("string write");
    }
    writeln!(w, "{header}")?;
    for s in steps {
        let mut line = format!("{},{},{},{}", s.step, s.t, s.en_accuracy, s.g_mean);
        for c in &classes {
            let r = s.recalls.iter().find(|r| r.0 == *c).map(|r| r.1);
            write!(line, ",{}", opt(r)).expect("string write");
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

fn write_run(dir: &Path, run: &RunResult, engine: &Engine) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_steps(create(&dir.join("steps.csv"))?, &run.steps)?;
    write_metrics(create(&dir.join("metrics.csv"))?, &run.steps)?;

    let mut w = create(&dir.join("thresholds.csv"))?;
    writeln!(w, "step,class,theta")?;
    for (step, theta) in &run.thresholds {
        for (c, v) in theta.iter().enumerate() {
            writeln!(w, "{step},{c},{v}")?;
        }
    }
    w.flush()?;

    let mut w = create(&dir.join("corrections.csv"))?;
    writeln!(w, "step,class,rho,s,rho_comp,r,k,tau,mdc_before,mdc_after")?;
    for (step, c) in &run.corrections {
        writeln!(
            w,
            "{step},{},{},{},{},{},{},{},{},{}",
            c.class, c.rho, c.s, c.rho_comp, c.r, c.k, c.tau, c.mdc_before, c.mdc_after
        )?;
    }
    w.flush()?;

    engine.memory().export_csv(create(&dir.join("memory.csv"))?)?;
    engine.model().save(dir.join("model.json"))?;
    Ok(())
}

/// Mean and standard error of EN_Accuracy and G-mean at every source
/// timestep, over the runs for which that timestep was online.
fn write_series(path: &Path, results: &[RunResult]) -> Result<()> {
    let mut by_t: std::collections::BTreeMap<u64, (Vec<f64>, Vec<f64>)> = Default::default();
    for r in results {
        for s in &r.steps {
            let e = by_t.entry(s.t).or_default();
            e.0.push(s.en_accuracy);
            e.1.push(s.g_mean);
        }
    }
    let mut w = create(path)?;
    writeln!(w, "t,runs,en_accuracy_mean,en_accuracy_se,g_mean_mean,g_mean_se")?;
    for (t, (en, g)) in &by_t {
        let (em, es) = mean_and_se(en);
        let (gm, gs) = mean_and_se(g);
        writeln!(w, "{t},{},{em},{es},{gm},{gs}", en.len())?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum DiffReport {
    Identical,
    /// First differing line (1-based, header is line 1).
    Differs { line: usize, left: String, right: String },
    LengthMismatch { left: usize, right: usize },
}

impl std::fmt::Display for DiffReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DiffReport::Identical => write!(f, "identical"),
            DiffReport::Differs { line, left, right } => {
                write!(f, "line {line} differs:\n< {left}\n> {right}")
            }
            DiffReport::LengthMismatch { left, right } => {
                write!(f, "length mismatch: {left} vs {right} lines")
            }
        }
    }
}

fn csv_lines(path: &Path) -> Result<Vec<String>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(std::fs::File::open(path)?);
    rdr.records()
        .map(|r| Ok(r?.iter().collect::<Vec<_>>().join(",")))
        .collect()
}

/// Compares two stream CSVs record by record.
pub fn diff_streams(a: &Path, b: &Path) -> Result<DiffReport> {
    let left = csv_lines(a)?;
    let right = csv_lines(b)?;
    if let Some(i) = left.iter().zip(&right).position(|(l, r)| l != r) {
        return Ok(DiffReport::Differs {
            line: i + 1,
            left: left[i].clone(),
            right: right[i].clone(),
        });
    }
    if left.len() != right.len() {
        return Ok(DiffReport::LengthMismatch {
            left: left.len(),
            right: right.len(),
        });
    }
    Ok(DiffReport::Identical)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_exist_and_validate() {
        for d in DATASETS {
            let cfg = default_config(d).unwrap();
            cfg.validate().unwrap();
            let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
            assert_eq!(back, cfg, "{d}");
        }
        assert!(default_config("nope").is_none());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut text = default_config("blob").unwrap().to_toml().unwrap();
        text = text.replacen("runs = 10", "runs = 10\nrunz = 3", 1);
        assert!(matches!(ExperimentConfig::from_toml(&text), Err(Error::Toml(_))));
    }

    #[test]
    fn zero_runs_rejected() {
        let mut cfg = default_config("sea").unwrap();
        cfg.runs = 0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
