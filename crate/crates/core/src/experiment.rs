//! Batch experiments: named training configs crossed with seeds.
//!
//! A run writes into its output directory:
//!
//! * `<name>_<seed>.csv` per (config, seed) with header
//!   `step,batch_size,loss,eval_accuracy,epsilon`;
//! * `summary.csv` with final accuracy mean/std over seeds and final epsilon
//!   per config (nominal and worst-case sensitivity);
//! * `manifest.json`, the fully resolved spec, from which the run can be
//!   replayed bit for bit;
//! * `compare.csv` when run in compare mode.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::model::{Architecture, Model};
use crate::optimizer::{train, RunMetrics, TrainConfig};
use crate::rng::{substream, Stream};

pub const RUN_CSV_HEADER: &str = "step,batch_size,loss,eval_accuracy,epsilon";
pub const SUMMARY_CSV_HEADER: &str =
    "name,runs,final_accuracy_mean,final_accuracy_std,final_epsilon,final_epsilon_strict";
pub const COMPARE_CSV_HEADER: &str =
    "name,final_accuracy_mean,accuracy_std_last10,final_epsilon,mean_update_norm";

/// Evaluation points entering the stability proxy.
pub const STABILITY_WINDOW: usize = 10;

/// Expected minibatch size behind the default sampling rates.
pub const EXPECTED_BATCH: usize = 256;
pub const MNIST_SAMPLING_RATE: f64 = 0.00427;
pub const CIFAR10_SAMPLING_RATE: f64 = 0.00512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSpec {
    Mnist {
        dir: PathBuf,
        train_limit: Option<usize>,
        test_limit: Option<usize>,
    },
    Cifar10 {
        dir: PathBuf,
        train_limit: Option<usize>,
        test_limit: Option<usize>,
    },
    Synth {
        count: usize,
        test_count: usize,
        features: usize,
        classes: usize,
        separation: f64,
        seed: u64,
    },
}

impl DatasetSpec {
    /// Default rate for the dataset: 256 expected examples per
    /// step on the full training set.
    pub fn default_sampling_rate(&self) -> f64 {
        match self {
            DatasetSpec::Mnist { .. } => MNIST_SAMPLING_RATE,
            DatasetSpec::Cifar10 { .. } => CIFAR10_SAMPLING_RATE,
            DatasetSpec::Synth { count, .. } => (EXPECTED_BATCH as f64 / *count as f64).min(1.0),
        }
    }

    fn required_files(&self) -> Vec<PathBuf> {
        match self {
            DatasetSpec::Mnist { dir, .. } => {
                let (a, b) = data::mnist_paths(dir, true);
                let (c, d) = data::mnist_paths(dir, false);
                vec![a, b, c, d]
            }
            DatasetSpec::Cifar10 { dir, .. } => {
                let mut v = data::cifar10_paths(dir, true);
                v.extend(data::cifar10_paths(dir, false));
                v
            }
            DatasetSpec::Synth { .. } => Vec::new(),
        }
    }

    /// Checks that every input file exists.
    pub fn check_present(&self) -> Result<()> {
        match self.required_files().into_iter().find(|p| !p.is_file()) {
            Some(p) => Err(Error::MissingData(p)),
            None => Ok(()),
        }
    }

    /// `(train, test)`.
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        self.check_present()?;
        let limit = |d: Dataset, l: &Option<usize>| match l {
            Some(n) => d.take(*n),
            None => d,
        };
        match self {
            DatasetSpec::Mnist {
                dir,
                train_limit,
                test_limit,
            } => {
                let (ti, tl) = data::mnist_paths(dir, true);
                let (ei, el) = data::mnist_paths(dir, false);
                Ok((
                    limit(data::load_mnist_idx(ti, tl)?, train_limit),
                    limit(data::load_mnist_idx(ei, el)?, test_limit),
                ))
            }
            DatasetSpec::Cifar10 {
                dir,
                train_limit,
                test_limit,
            } => Ok((
                limit(data::load_cifar10(&data::cifar10_paths(dir, true))?, train_limit),
                limit(data::load_cifar10(&data::cifar10_paths(dir, false))?, test_limit),
            )),
            DatasetSpec::Synth {
                count,
                test_count,
                features,
                classes,
                separation,
                seed,
            } => Ok((
                data::synth_gaussians(*count, *features, *classes, *separation, *seed)?,
                data::synth_gaussians(*test_count, *features, *classes, *separation, seed.wrapping_add(1))?,
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedConfig {
    pub name: String,
    /// `seed` and `eval_every` are overwritten per run from the spec.
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub dataset: DatasetSpec,
    pub model: Architecture,
    pub configs: Vec<NamedConfig>,
    pub eval_every: u64,
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.configs.is_empty() {
            return Err(Error::config("configs", "at least one config is required"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seed", "at least one seed is required"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every", "must be at least 1"));
        }
        let mut seen = HashSet::new();
        for c in &self.configs {
            if c.name.is_empty() || c.name.contains(['/', '\\', ',']) {
                return Err(Error::config("name", format!("invalid config name {:?}", c.name)));
            }
            if !seen.insert(c.name.as_str()) {
                return Err(Error::config("name", format!("duplicate config name {:?}", c.name)));
            }
            c.config.validate(None)?;
        }
        let mut seeds = HashSet::new();
        if let Some(s) = self.seeds.iter().find(|s| !seeds.insert(**s)) {
            return Err(Error::config("seed", format!("duplicate seed {s}")));
        }
        if let DatasetSpec::Synth { count, classes, .. } = self.dataset {
            if count < classes {
                return Err(Error::config("count", "fewer examples than classes"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Run,
    Compare,
}

/// Everything needed to replay an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub mode: Mode,
    pub spec: ExperimentSpec,
}

impl Manifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::MissingData(path.to_path_buf()))
            }
            Err(e) => return Err(Error::io(path, e)),
        };
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub name: String,
    pub seed: u64,
    pub config: TrainConfig,
    pub metrics: RunMetrics,
}

#[derive(Debug, Clone)]
pub struct ExperimentResults {
    pub runs: Vec<RunResult>,
}

impl ExperimentResults {
    pub fn runs_for<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a RunResult> + 'a {
        self.runs.iter().filter(move |r| r.name == name)
    }

    pub fn mean_final_accuracy(&self, name: &str) -> f64 {
        mean(&self.runs_for(name).map(|r| r.metrics.final_accuracy()).collect::<Vec<_>>())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub name: String,
    pub final_accuracy_mean: f64,
    pub accuracy_std_last10: f64,
    pub final_epsilon: f64,
    pub mean_update_norm: f64,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Sample standard deviation (`n - 1`); zero for fewer than two values.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Population standard deviation of the last [`STABILITY_WINDOW`]
/// evaluation points of a run.
pub fn stability(metrics: &RunMetrics) -> f64 {
    let evals = metrics.evaluations();
    let tail = &evals[evals.len().saturating_sub(STABILITY_WINDOW)..];
    if tail.is_empty() {
        return 0.0;
    }
    let m = mean(tail);
    (tail.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / tail.len() as f64).sqrt()
}

/// File name of the metrics CSV for one run.
pub fn run_csv_name(name: &str, seed: u64) -> String {
    format!("{name}_{seed}.csv")
}

pub fn run_csv(metrics: &RunMetrics) -> String {
    let mut out = String::with_capacity(64 * (metrics.records.len() + 1));
    out.push_str(RUN_CSV_HEADER);
    out.push('\n');
    for r in &metrics.records {
        let loss = r.loss.map(|l| l.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.step, r.batch_size, loss, r.eval_accuracy, r.epsilon
        );
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Trains every (config, seed) pair; nothing is written to disk.
pub fn execute(spec: &ExperimentSpec) -> Result<ExperimentResults> {
    spec.validate()?;
    let (train_set, test_set) = spec.dataset.load()?;
    for c in &spec.configs {
        c.config.validate(Some(train_set.len()))?;
    }
    let features = train_set.features();
    let classes = train_set.class_count;

    let jobs: Vec<(&NamedConfig, u64)> = spec
        .configs
        .iter()
        .flat_map(|c| spec.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(named, seed)| {
            let mut config = named.config.clone();
            config.seed = seed;
            config.eval_every = spec.eval_every;
            let model0 = Model::init(&spec.model, features, classes, &mut substream(seed, Stream::Init))?;
            log::info!("training {} seed {seed}", named.name);
            let metrics = train(&model0, &train_set, &config, &test_set)?;
            Ok(RunResult {
                name: named.name.clone(),
                seed,
                config,
                metrics,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentResults { runs })
}

fn summary_csv(spec: &ExperimentSpec, results: &ExperimentResults) -> String {
    let mut out = String::new();
    out.push_str(SUMMARY_CSV_HEADER);
    out.push('\n');
    for c in &spec.configs {
        let runs: Vec<&RunResult> = results.runs_for(&c.name).collect();
        let accs: Vec<f64> = runs.iter().map(|r| r.metrics.final_accuracy()).collect();
        let eps = runs.first().map(|r| r.metrics.final_epsilon()).unwrap_or(0.0);
        let strict = runs.first().map(|r| r.metrics.epsilon_strict).unwrap_or(0.0);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            c.name,
            runs.len(),
            mean(&accs),
            sample_std(&accs),
            eps,
            strict
        );
    }
    out
}

/// Per-config comparison rows sorted by mean final accuracy, best first.
pub fn compare_rows(spec: &ExperimentSpec, results: &ExperimentResults) -> Vec<CompareRow> {
    let mut rows: Vec<CompareRow> = spec
        .configs
        .iter()
        .map(|c| {
            let runs: Vec<&RunResult> = results.runs_for(&c.name).collect();
            let pick = |f: &dyn Fn(&RunMetrics) -> f64| {
                mean(&runs.iter().map(|r| f(&r.metrics)).collect::<Vec<_>>())
            };
            CompareRow {
                name: c.name.clone(),
                final_accuracy_mean: pick(&|m| m.final_accuracy()),
                accuracy_std_last10: pick(&stability),
                final_epsilon: runs.first().map(|r| r.metrics.final_epsilon()).unwrap_or(0.0),
                mean_update_norm: pick(&|m| m.mean_update_norm()),
            }
        })
        .collect();
    rows.sort_by(|a, b| b.final_accuracy_mean.total_cmp(&a.final_accuracy_mean));
    rows
}

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut out = String::new();
    out.push_str(COMPARE_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.name, r.final_accuracy_mean, r.accuracy_std_last10, r.final_epsilon, r.mean_update_norm
        );
    }
    out
}

/// Validates, trains, and writes all artifacts for `mode` into `spec.out_dir`.
pub fn run_with_mode(spec: &ExperimentSpec, mode: Mode) -> Result<ExperimentResults> {
    spec.validate()?;
    if mode == Mode::Compare && spec.configs.len() < 2 {
        return Err(Error::config("configs", "compare needs at least two configs"));
    }
    spec.dataset.check_present()?;
    let out = &spec.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let manifest = Manifest {
        version: crate::VERSION.to_string(),
        mode,
        spec: spec.clone(),
    };
    write_file(&out.join("manifest.json"), &serde_json::to_string_pretty(&manifest)?)?;

    let results = execute(spec)?;
    for r in &results.runs {
        write_file(&out.join(run_csv_name(&r.name, r.seed)), &run_csv(&r.metrics))?;
    }
    write_file(&out.join("summary.csv"), &summary_csv(spec, &results))?;
    if mode == Mode::Compare {
        write_file(&out.join("compare.csv"), &compare_csv(&compare_rows(spec, &results)))?;
    }
    Ok(results)
}

pub fn run(spec: &ExperimentSpec) -> Result<ExperimentResults> {
    run_with_mode(spec, Mode::Run)
}

/// Like [`run`], additionally writing `compare.csv`; needs two or more configs.
pub fn compare(spec: &ExperimentSpec) -> Result<Vec<CompareRow>> {
    let results = run_with_mode(spec, Mode::Compare)?;
    Ok(compare_rows(spec, &results))
}

/// Replays a manifest, optionally redirecting the output directory.
pub fn replay(manifest: &Manifest, out_dir: Option<PathBuf>) -> Result<ExperimentResults> {
    let mut spec = manifest.spec.clone();
    if let Some(dir) = out_dir {
        spec.out_dir = dir;
    }
    run_with_mode(&spec, manifest.mode)
}
