//! The private training loop.
//!
//! Each step draws a Poisson-sampled minibatch, splits it into microbatches,
//! conditions each microbatch gradient with the configured
//! [`GradientTransform`], sums the results in ascending microbatch order, adds
//! one Gaussian noise vector, divides by the number of microbatches and takes
//! a plain SGD step.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accountant::{default_orders, RdpCurve};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::rng::{substream, RunRng, Stream};
use crate::tensor::Tensor;
use crate::transform::{l2_norm, GradientTransform};

/// Microbatches whose gradients are held in memory at once.
const GRADIENT_BLOCK: usize = 64;

/// How the per-coordinate noise standard deviation is derived from `sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    /// std = sigma for every transform; the ledger treats sensitivity as 1.
    #[default]
    Nominal,
    /// std = sigma * sensitivity bound of the transform.
    Strict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub transform: GradientTransform,
    pub learning_rate: f64,
    pub sampling_rate: f64,
    pub microbatch_size: usize,
    pub noise_multiplier: f64,
    pub steps: u64,
    pub seed: u64,
    pub delta: f64,
    /// Evaluate every this many steps (and always on the last one).
    pub eval_every: u64,
    #[serde(default)]
    pub noise_mode: NoiseMode,
}

impl TrainConfig {
    pub const DEFAULT_DELTA: f64 = 1e-5;
    pub const DEFAULT_SIGMA: f64 = 1.1;
    pub const DEFAULT_MICROBATCH: usize = 1;

    pub fn new(transform: GradientTransform, learning_rate: f64, sampling_rate: f64, steps: u64) -> Self {
        Self {
            transform,
            learning_rate,
            sampling_rate,
            microbatch_size: Self::DEFAULT_MICROBATCH,
            noise_multiplier: Self::DEFAULT_SIGMA,
            steps,
            seed: 0,
            delta: Self::DEFAULT_DELTA,
            eval_every: 1,
            noise_mode: NoiseMode::Nominal,
        }
    }

    /// Checks every field; `dataset_size` enables the expected-batch checks.
    pub fn validate(&self, dataset_size: Option<usize>) -> Result<()> {
        self.transform.validate()?;
        if self.steps == 0 {
            return Err(Error::config("steps", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("lr", "learning rate must be positive"));
        }
        if !(self.sampling_rate > 0.0 && self.sampling_rate <= 1.0) {
            return Err(Error::config("q", "sampling rate must lie in (0, 1]"));
        }
        if self.microbatch_size == 0 {
            return Err(Error::config("microbatch", "must be at least 1"));
        }
        if !(self.noise_multiplier >= 0.0 && self.noise_multiplier.is_finite()) {
            return Err(Error::config("sigma", "noise multiplier must be >= 0"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config("delta", "must lie in (0, 1)"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every", "must be at least 1"));
        }
        if let Some(n) = dataset_size {
            let expected = self.sampling_rate * n as f64;
            if expected < 1.0 {
                return Err(Error::config(
                    "q",
                    format!("expected minibatch {expected} is below one example"),
                ));
            }
            if self.microbatch_size as f64 > expected {
                return Err(Error::config(
                    "microbatch",
                    format!(
                        "microbatch size {} exceeds expected minibatch {expected}",
                        self.microbatch_size
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Per-coordinate noise standard deviation for a model with `n` parameters.
    pub fn noise_std(&self, n: usize) -> f64 {
        match self.noise_mode {
            NoiseMode::Nominal => self.noise_multiplier,
            NoiseMode::Strict => self.noise_multiplier * self.transform.sensitivity_bound(n),
        }
    }

    /// Noise multiplier entered into the ledger (noise std over assumed
    /// sensitivity).
    pub fn accounted_noise_multiplier(&self) -> f64 {
        self.noise_multiplier
    }

    /// Noise std divided by the transform's worst-case sensitivity: the
    /// multiplier that yields a guarantee valid for the actual transform.
    pub fn strict_noise_multiplier(&self, n: usize) -> f64 {
        self.noise_std(n) / self.transform.sensitivity_bound(n)
    }
}

/// Poisson sampling: each index joins independently with probability `q`.
pub fn sample_batch<R: Rng + ?Sized>(dataset_size: usize, q: f64, rng: &mut R) -> Vec<usize> {
    (0..dataset_size)
        .filter(|_| rng.random::<f64>() < q)
        .collect()
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub model: Model,
    /// Mean microbatch loss before the update; `None` for an empty batch.
    pub loss: Option<f64>,
    /// L2 norm of the parameter change.
    pub update_norm: f64,
    pub microbatches: usize,
}

/// One private update on the given minibatch.
///
/// An empty minibatch returns the model unchanged and draws no noise.
pub fn dp_step(
    model: &Model,
    inputs: &Tensor,
    labels: &[usize],
    cfg: &TrainConfig,
    noise_rng: &mut RunRng,
) -> Result<StepOutcome> {
    let (batch, _) = inputs.dims2()?;
    if labels.len() != batch {
        return Err(Error::Input(format!("{} labels for {batch} examples", labels.len())));
    }
    if batch == 0 {
        return Ok(StepOutcome {
            model: model.clone(),
            loss: None,
            update_norm: 0.0,
            microbatches: 0,
        });
    }

    let n = model.param_count();
    let ranges: Vec<(usize, usize)> = (0..batch)
        .step_by(cfg.microbatch_size)
        .map(|s| (s, (s + cfg.microbatch_size).min(batch)))
        .collect();
    let mu = ranges.len();

    let mut sum = vec![0.0; n];
    let mut loss_sum = 0.0;
    for block in ranges.chunks(GRADIENT_BLOCK) {
        let grads = block
            .par_iter()
            .map(|&(start, end)| {
                let rows: Vec<usize> = (start..end).collect();
                let x = inputs.select_rows(&rows)?;
                let (loss, grad) = model.loss_and_grad(&x, &labels[start..end])?;
                let mut g = grad.into_data();
                cfg.transform.apply_in_place(&mut g);
                Ok((loss, g))
            })
            .collect::<Result<Vec<_>>>()?;
        for (loss, g) in grads {
            loss_sum += loss;
            for (s, v) in sum.iter_mut().zip(&g) {
                *s += v;
            }
        }
    }

    let std = cfg.noise_std(n);
    if std > 0.0 {
        for s in &mut sum {
            let z: f64 = noise_rng.sample(StandardNormal);
            *s += std * z;
        }
    }
    let inv_mu = 1.0 / mu as f64;
    for s in &mut sum {
        *s *= inv_mu;
    }

    let model = model.apply_update(&sum, cfg.learning_rate)?;
    Ok(StepOutcome {
        model,
        loss: Some(loss_sum * inv_mu),
        update_norm: cfg.learning_rate * l2_norm(&sum),
        microbatches: mu,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based.
    pub step: u64,
    pub batch_size: usize,
    pub loss: Option<f64>,
    /// Most recent evaluation accuracy (carried forward between evaluations).
    pub eval_accuracy: f64,
    /// Whether `eval_accuracy` was measured at this step.
    pub evaluated: bool,
    /// Cumulative epsilon after this step.
    pub epsilon: f64,
    pub update_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub records: Vec<StepRecord>,
    pub final_model: Model,
    /// Final epsilon under the transform's worst-case sensitivity.
    pub epsilon_strict: f64,
}

impl RunMetrics {
    pub fn final_accuracy(&self) -> f64 {
        self.records.last().map(|r| r.eval_accuracy).unwrap_or(0.0)
    }

    pub fn final_epsilon(&self) -> f64 {
        self.records.last().map(|r| r.epsilon).unwrap_or(0.0)
    }

    /// Accuracies at the steps where an evaluation actually ran.
    pub fn evaluations(&self) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.evaluated)
            .map(|r| r.eval_accuracy)
            .collect()
    }

    pub fn mean_update_norm(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().map(|r| r.update_norm).sum::<f64>() / self.records.len() as f64
    }
}

/// Runs `cfg.steps` private updates starting from `model0`.
pub fn train(model0: &Model, dataset: &Dataset, cfg: &TrainConfig, eval_set: &Dataset) -> Result<RunMetrics> {
    cfg.validate(Some(dataset.len()))?;
    let n = model0.param_count();
    let curve = RdpCurve::new(
        cfg.sampling_rate,
        cfg.accounted_noise_multiplier(),
        cfg.delta,
        default_orders(),
    )?;
    let strict = RdpCurve::new(
        cfg.sampling_rate,
        cfg.strict_noise_multiplier(n),
        cfg.delta,
        default_orders(),
    )?;

    let mut sampling_rng = substream(cfg.seed, Stream::Sampling);
    let mut noise_rng = substream(cfg.seed, Stream::Noise);
    let mut model = model0.clone();
    let mut accuracy = model.accuracy(&eval_set.inputs, &eval_set.labels)?;
    let mut records = Vec::with_capacity(cfg.steps as usize);

    for step in 1..=cfg.steps {
        let batch = sample_batch(dataset.len(), cfg.sampling_rate, &mut sampling_rng);
        let (x, y) = dataset.gather(&batch)?;
        let outcome = dp_step(&model, &x, &y, cfg, &mut noise_rng)?;
        model = outcome.model;

        let evaluated = step % cfg.eval_every == 0 || step == cfg.steps;
        if evaluated {
            accuracy = model.accuracy(&eval_set.inputs, &eval_set.labels)?;
        }
        records.push(StepRecord {
            step,
            batch_size: batch.len(),
            loss: outcome.loss,
            eval_accuracy: accuracy,
            evaluated,
            epsilon: curve.epsilon_at(step).0,
            update_norm: outcome.update_norm,
        });
    }

    Ok(RunMetrics {
        records,
        final_model: model,
        epsilon_strict: strict.epsilon_at(cfg.steps).0,
    })
}
