//! Flag and config-file resolution into an [`ExperimentSpec`].
//!
//! A config file holds flat `key = value` lines using the long flag names
//! (`clip-norm = 1`, `sigma = 1.1, 0`, ...). Command-line flags override file
//! values. List-valued keys (`transform`, `c`, `k`, `clip-norm`, `sigma`,
//! `seed`) take comma-separated values and expand into a grid of named
//! configs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use dpfg::experiment::{DatasetSpec, ExperimentSpec, NamedConfig};
use dpfg::model::{Activation, Architecture};
use dpfg::optimizer::{NoiseMode, TrainConfig};
use dpfg::{Error, GradientTransform, Result};

#[derive(Debug, Default, Args)]
pub struct SpecArgs {
    /// key = value config file; flags override its entries
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// mnist | cifar10 | synth
    #[arg(long)]
    pub dataset: Option<String>,
    /// Directory holding the dataset files
    #[arg(long = "data-dir")]
    pub data_dir: Option<String>,
    /// logreg | mlp
    #[arg(long)]
    pub model: Option<String>,
    /// Hidden width of the mlp
    #[arg(long)]
    pub hidden: Option<String>,
    /// Hidden activation of the mlp: relu | tanh
    #[arg(long)]
    pub activation: Option<String>,
    /// Comma-separated list of clip | tanh
    #[arg(long)]
    pub transform: Option<String>,
    /// Tanh output scale(s)
    #[arg(long)]
    pub c: Option<String>,
    /// Tanh input expansion(s)
    #[arg(long)]
    pub k: Option<String>,
    /// Clip norm(s)
    #[arg(long = "clip-norm")]
    pub clip_norm: Option<String>,
    /// Noise multiplier(s)
    #[arg(long)]
    pub sigma: Option<String>,
    /// Poisson sampling rate
    #[arg(long)]
    pub q: Option<String>,
    /// Learning rate
    #[arg(long)]
    pub lr: Option<String>,
    /// Training steps
    #[arg(long)]
    pub steps: Option<String>,
    /// Examples per microbatch
    #[arg(long)]
    pub microbatch: Option<String>,
    /// Comma-separated seeds, one repetition each
    #[arg(long)]
    pub seed: Option<String>,
    /// Output directory
    #[arg(long)]
    pub out: Option<String>,
    /// Evaluate every this many steps
    #[arg(long = "eval-every")]
    pub eval_every: Option<String>,
    #[arg(long)]
    pub delta: Option<String>,
    /// nominal | strict
    #[arg(long = "noise-mode")]
    pub noise_mode: Option<String>,
    /// Use only the first N training examples
    #[arg(long = "train-limit")]
    pub train_limit: Option<String>,
    /// Use only the first N test examples
    #[arg(long = "test-limit")]
    pub test_limit: Option<String>,
    /// Synthetic training examples
    #[arg(long = "synth-count")]
    pub synth_count: Option<String>,
    /// Synthetic test examples
    #[arg(long = "synth-test-count")]
    pub synth_test_count: Option<String>,
    #[arg(long)]
    pub features: Option<String>,
    #[arg(long)]
    pub classes: Option<String>,
    /// Distance of the synthetic class means from the origin
    #[arg(long)]
    pub separation: Option<String>,
    /// Seed of the synthetic dataset
    #[arg(long = "data-seed")]
    pub data_seed: Option<String>,
}

impl SpecArgs {
    fn flags(&self) -> Vec<(&'static str, &Option<String>)> {
        vec![
            ("dataset", &self.dataset),
            ("data-dir", &self.data_dir),
            ("model", &self.model),
            ("hidden", &self.hidden),
            ("activation", &self.activation),
            ("transform", &self.transform),
            ("c", &self.c),
            ("k", &self.k),
            ("clip-norm", &self.clip_norm),
            ("sigma", &self.sigma),
            ("q", &self.q),
            ("lr", &self.lr),
            ("steps", &self.steps),
            ("microbatch", &self.microbatch),
            ("seed", &self.seed),
            ("out", &self.out),
            ("eval-every", &self.eval_every),
            ("delta", &self.delta),
            ("noise-mode", &self.noise_mode),
            ("train-limit", &self.train_limit),
            ("test-limit", &self.test_limit),
            ("synth-count", &self.synth_count),
            ("synth-test-count", &self.synth_test_count),
            ("features", &self.features),
            ("classes", &self.classes),
            ("separation", &self.separation),
            ("data-seed", &self.data_seed),
        ]
    }

    /// File entries overlaid with flags.
    pub fn settings(&self) -> Result<Settings> {
        let mut values = match &self.config {
            Some(path) => parse_config_file(path)?,
            None => BTreeMap::new(),
        };
        let known: Vec<&str> = self.flags().iter().map(|(k, _)| *k).collect();
        if let Some(bad) = values.keys().find(|k| !known.contains(&k.as_str())) {
            return Err(Error::Config {
                field: bad.clone(),
                reason: "unknown config key".into(),
            });
        }
        for (key, value) in self.flags() {
            if let Some(v) = value {
                values.insert(key.to_string(), v.clone());
            }
        }
        Ok(Settings { values })
    }
}

fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingData(path.to_path_buf()))
        }
        Err(e) => {
            return Err(Error::Io {
                path: path.to_path_buf(),
                source: e,
            })
        }
    };
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Config {
            field: format!("{}:{}", path.display(), i + 1),
            reason: "expected `key = value`".into(),
        })?;
        out.insert(k.trim().replace('_', "-"), v.trim().to_string());
    }
    Ok(out)
}

pub struct Settings {
    values: BTreeMap<String, String>,
}

fn bad(field: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        field: field.to_string(),
        reason: reason.into(),
    }
}

impl Settings {
    fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.raw(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| bad(key, format!("cannot parse {v:?}")))
            })
            .transpose()
    }

    fn get<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    fn list<T: std::str::FromStr>(&self, key: &str, default: &str) -> Result<Vec<T>> {
        let raw = self.raw(key).unwrap_or(default);
        let items: Vec<T> = raw
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| bad(key, format!("cannot parse {s:?}"))))
            .collect::<Result<_>>()?;
        if items.is_empty() {
            return Err(bad(key, "empty list"));
        }
        Ok(items)
    }

    fn dataset(&self) -> Result<DatasetSpec> {
        let kind = self.raw("dataset").unwrap_or("mnist");
        let train_limit = self.parse("train-limit")?;
        let test_limit = self.parse("test-limit")?;
        match kind {
            "mnist" => Ok(DatasetSpec::Mnist {
                dir: PathBuf::from(self.raw("data-dir").unwrap_or("data/mnist")),
                train_limit,
                test_limit,
            }),
            "cifar10" => Ok(DatasetSpec::Cifar10 {
                dir: PathBuf::from(self.raw("data-dir").unwrap_or("data/cifar-10-batches-bin")),
                train_limit,
                test_limit,
            }),
            "synth" => Ok(DatasetSpec::Synth {
                count: self.get("synth-count", 2000)?,
                test_count: self.get("synth-test-count", 1000)?,
                features: self.get("features", 20)?,
                classes: self.get("classes", 10)?,
                separation: self.get("separation", 3.0)?,
                seed: self.get("data-seed", 0)?,
            }),
            other => Err(bad("dataset", format!("unknown dataset {other:?}"))),
        }
    }

    fn model(&self) -> Result<Architecture> {
        match self.raw("model").unwrap_or("logreg") {
            "logreg" => Ok(Architecture::Logreg),
            "mlp" => {
                let activation = match self.raw("activation").unwrap_or("relu") {
                    "relu" => Activation::Relu,
                    "tanh" => Activation::Tanh,
                    other => return Err(bad("activation", format!("unknown activation {other:?}"))),
                };
                let hidden = self.get("hidden", Architecture::DEFAULT_HIDDEN)?;
                if hidden == 0 {
                    return Err(bad("hidden", "must be at least 1"));
                }
                Ok(Architecture::Mlp { hidden, activation })
            }
            other => Err(bad("model", format!("unknown model {other:?}"))),
        }
    }

    /// Resolves every setting, filling in defaults.
    pub fn resolve(&self) -> Result<ExperimentSpec> {
        let dataset = self.dataset()?;
        let model = self.model()?;
        let q = self.get("q", dataset.default_sampling_rate())?;
        if !(q > 0.0 && q <= 1.0) {
            return Err(bad("q", "sampling rate must lie in (0, 1]"));
        }
        let default_lr = match model {
            Architecture::Logreg => 0.1,
            Architecture::Mlp { .. } => 0.05,
        };
        let lr = self.get("lr", default_lr)?;
        let steps = self.get("steps", (1.0 / q).round().max(1.0) as u64)?;
        let microbatch = self.get("microbatch", TrainConfig::DEFAULT_MICROBATCH)?;
        let delta = self.get("delta", TrainConfig::DEFAULT_DELTA)?;
        let noise_mode = match self.raw("noise-mode").unwrap_or("nominal") {
            "nominal" => NoiseMode::Nominal,
            "strict" => NoiseMode::Strict,
            other => return Err(bad("noise-mode", format!("unknown noise mode {other:?}"))),
        };
        let sigmas: Vec<f64> = self.list("sigma", "1.1")?;
        let kinds: Vec<String> = self.list("transform", "clip,tanh")?;
        let scales: Vec<f64> = self.list("c", "1")?;
        let expansions: Vec<f64> = self.list("k", "1")?;
        let clip_norms: Vec<f64> = self.list("clip-norm", "1")?;

        let mut transforms = Vec::new();
        for kind in &kinds {
            match kind.as_str() {
                "clip" => {
                    for &cn in &clip_norms {
                        transforms.push(GradientTransform::clip(cn).map_err(|_| bad("clip-norm", "must be positive"))?);
                    }
                }
                "tanh" => {
                    for &c in &scales {
                        for &k in &expansions {
                            transforms.push(GradientTransform::tanh(c, k).map_err(|e| match e {
                                Error::Config { field, reason } => bad(&field, reason),
                                e => e,
                            })?);
                        }
                    }
                }
                other => return Err(bad("transform", format!("unknown transform {other:?}"))),
            }
        }

        let mut configs = Vec::new();
        for t in &transforms {
            for &sigma in &sigmas {
                let mut name = t.label();
                if sigmas.len() > 1 {
                    name.push_str(&format!("-sigma{sigma}"));
                }
                let mut config = TrainConfig::new(*t, lr, q, steps);
                config.microbatch_size = microbatch;
                config.noise_multiplier = sigma;
                config.delta = delta;
                config.noise_mode = noise_mode;
                configs.push(NamedConfig { name, config });
            }
        }

        let default_out = format!(
            "runs/{}",
            self.raw("dataset").unwrap_or("mnist")
        );
        Ok(ExperimentSpec {
            dataset,
            model,
            configs,
            eval_every: self.get("eval-every", 10)?,
            out_dir: PathBuf::from(self.raw("out").unwrap_or(&default_out)),
            seeds: self.list("seed", "0")?,
        })
    }
}
