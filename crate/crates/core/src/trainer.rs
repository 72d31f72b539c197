//! Training loop: mean-squared error over the 18 outputs, Adam updates and
//! metric logging.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::graybox_model::{AdamState, ModelError, ModelState};
use crate::linalg2::Operator2;
use crate::mc_simulator::{MeasurementRecord, N_OUTCOMES};
use crate::rng::{self, Purpose};
use crate::util::{pairwise_sum, pairwise_sum_vecs};

/// Examples per gradient chunk; fixes the reduction tree.
const CHUNK: usize = 16;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset does not fit the model: {0}")]
    DatasetSchema(String),
    #[error("loss became non-finite at iteration {0}")]
    NonFiniteLoss(u64),
    #[error("test example {0} reached the backward pass")]
    TestLeak(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: u64,
    /// `None`: full batch up to 400 examples, otherwise 256.
    pub batch_size: Option<usize>,
    pub learning_rate: f64,
    /// Cosine annealing from `learning_rate` down to this value at the last
    /// iteration; `None` keeps the rate constant.
    #[serde(default)]
    pub final_learning_rate: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Test MSE is evaluated every `eval_every` iterations and at the end.
    pub eval_every: u64,
    /// Stop once the training MSE drops below this value.
    pub early_stop: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 3000,
            batch_size: None,
            learning_rate: 1e-3,
            final_learning_rate: Some(1e-5),
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            eval_every: 50,
            early_stop: None,
        }
    }
}

impl TrainConfig {
    /// Step size for 0-based iteration `it`.
    pub fn learning_rate_at(&self, it: u64) -> f64 {
        match self.final_learning_rate {
            Some(end) if self.iterations > 1 => {
                let progress = it.min(self.iterations - 1) as f64 / (self.iterations - 1) as f64;
                end + 0.5 * (self.learning_rate - end) * (1.0 + (std::f64::consts::PI * progress).cos())
            }
            _ => self.learning_rate,
        }
    }

    pub fn resolved_batch(&self, n: usize) -> usize {
        match self.batch_size {
            Some(b) => b.clamp(1, n.max(1)),
            None if n <= 400 => n,
            None => 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub iteration: u64,
    pub train_mse: f64,
    pub test_mse: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub batch_size: usize,
    pub entries: Vec<LogEntry>,
}

impl TrainLog {
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "iteration,train_mse,test_mse,wall_seconds")?;
        for e in &self.entries {
            let test = e.test_mse.map(|v| format!("{v:e}")).unwrap_or_default();
            writeln!(out, "{},{:e},{},{:.3}", e.iteration, e.train_mse, test, e.wall_seconds)?;
        }
        Ok(())
    }

    /// Mean training MSE over each consecutive `window` entries.
    pub fn moving_average(&self, window: usize) -> Vec<f64> {
        self.entries
            .chunks(window)
            .map(|c| c.iter().map(|e| e.train_mse).sum::<f64>() / c.len() as f64)
            .collect()
    }
}

/// Table-style summary of a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub dataset: String,
    pub iterations: u64,
    pub train_mse: f64,
    pub test_mse: Option<f64>,
}

/// Mean of squared differences.
pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64, TrainError> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(TrainError::DatasetSchema(format!(
            "length mismatch {} vs {}",
            pred.len(),
            target.len()
        )));
    }
    let sq: Vec<f64> = pred.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).collect();
    Ok(pairwise_sum(&sq) / pred.len() as f64)
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &TrainConfig) {
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

/// Dataset examples with their control propagators precomputed.
pub struct Prepared<'a> {
    pub dataset: &'a Dataset,
    pub unitaries: Vec<Operator2>,
}

impl<'a> Prepared<'a> {
    pub fn new(model: &ModelState, dataset: &'a Dataset) -> Result<Self, TrainError> {
        check_schema(model, dataset)?;
        let unitaries = dataset
            .examples
            .par_iter()
            .map(|e| model.control_unitary(&e.waveform))
            .collect();
        Ok(Prepared { dataset, unitaries })
    }

    pub fn len(&self) -> usize {
        self.unitaries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unitaries.is_empty()
    }
}

fn check_schema(model: &ModelState, d: &Dataset) -> Result<(), TrainError> {
    if d.header.config.m != model.m_model {
        return Err(TrainError::DatasetSchema(format!(
            "dataset M = {} but model grid is {}",
            d.header.config.m, model.m_model
        )));
    }
    if d.header.layout.width() != model.arch.input_dim || d.header.layout.n_max != model.arch.n_max {
        return Err(TrainError::DatasetSchema("feature layout differs from the model's".into()));
    }
    for e in &d.examples {
        model.check_features(&e.features)?;
    }
    Ok(())
}

/// Per-example predictions.
pub fn predict_all(model: &ModelState, data: &Prepared<'_>) -> Result<Vec<MeasurementRecord>, TrainError> {
    data.dataset
        .examples
        .par_iter()
        .zip(&data.unitaries)
        .map(|(e, u)| Ok(model.predict_with_unitary(&e.features, *u)?.outputs))
        .collect()
}

/// MSE over all examples and outputs.
pub fn evaluate(model: &ModelState, data: &Prepared<'_>) -> Result<f64, TrainError> {
    let preds = predict_all(model, data)?;
    let per: Vec<f64> = preds
        .iter()
        .zip(&data.dataset.examples)
        .map(|(p, e)| p.0.iter().zip(e.measurements.0.iter()).map(|(a, b)| (a - b) * (a - b)).sum())
        .collect();
    Ok(pairwise_sum(&per) / (per.len() * N_OUTCOMES) as f64)
}

/// Batch loss and gradient, reduced in fixed chunks so the result does not
/// depend on the thread count.
pub fn batch_gradient(model: &ModelState, data: &Prepared<'_>, batch: &[usize]) -> (f64, Vec<f64>) {
    let n = model.params.len();
    let weight = 1.0 / (batch.len() * N_OUTCOMES) as f64;
    let parts: Vec<(f64, Vec<f64>)> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = vec![0.0; n];
            let mut sse = 0.0;
            for &i in chunk {
                let e = &data.dataset.examples[i];
                sse += model.accumulate_gradient(&e.features, data.unitaries[i], &e.measurements, weight, &mut g);
            }
            (sse, g)
        })
        .collect();
    let sse: Vec<f64> = parts.iter().map(|p| p.0).collect();
    let grad = pairwise_sum_vecs(parts.into_iter().map(|p| p.1).collect());
    (pairwise_sum(&sse) * weight, grad)
}

fn batch_indices(n: usize, batch: usize, seed: u64, iteration: u64) -> Vec<usize> {
    if batch >= n {
        return (0..n).collect();
    }
    let per_epoch = (n / batch) as u64;
    let epoch = iteration / per_epoch;
    let slot = (iteration % per_epoch) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(Purpose::Batch, &[seed, epoch]));
    order[slot * batch..(slot + 1) * batch].to_vec()
}

/// Train until `model.adam.t` reaches `cfg.iterations`. Resuming from a saved
/// state reproduces the uninterrupted trajectory exactly.
pub fn train(
    mut model: ModelState,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    cfg: &TrainConfig,
    mut on_eval: impl FnMut(&ModelState, &LogEntry),
) -> Result<(ModelState, TrainLog), TrainError> {
    if cfg.iterations == 0 || !(cfg.learning_rate > 0.0) || cfg.final_learning_rate.is_some_and(|r| !(r > 0.0)) {
        return Err(TrainError::DatasetSchema("iterations ≥ 1 and η > 0 required".into()));
    }
    let train_data = Prepared::new(&model, train_set)?;
    if train_data.is_empty() {
        return Err(TrainError::DatasetSchema("empty training set".into()));
    }
    let test_data = test_set.map(|t| Prepared::new(&model, t)).transpose()?;
    let test_ids: HashSet<usize> = test_set
        .filter(|t| t.header.name == train_set.header.name && t.header.seed == train_set.header.seed)
        .map(|t| t.examples.iter().map(|e| e.id).collect())
        .unwrap_or_default();

    let n = train_data.len();
    let batch = cfg.resolved_batch(n);
    let mut log = TrainLog {
        batch_size: batch,
        entries: Vec::new(),
    };
    let start = Instant::now();
    model.meta.dataset = train_set.header.name.clone();
    model.meta.train_seed = cfg.seed;

    while model.adam.t < cfg.iterations {
        let it = model.adam.t;
        let idx = batch_indices(n, batch, cfg.seed, it);
        if let Some(bad) = idx.iter().map(|&i| train_set.examples[i].id).find(|id| test_ids.contains(id)) {
            return Err(TrainError::TestLeak(bad));
        }
        let (loss, grad) = batch_gradient(&model, &train_data, &idx);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(TrainError::NonFiniteLoss(it));
        }
        let mut params = std::mem::take(&mut model.params);
        let step = TrainConfig {
            learning_rate: cfg.learning_rate_at(it),
            ..cfg.clone()
        };
        adam_step(&mut params, &grad, &mut model.adam, &step);
        model.params = params;
        model.meta.iterations = model.adam.t as usize;

        let done = model.adam.t >= cfg.iterations || cfg.early_stop.is_some_and(|s| loss < s);
        let test_mse = match &test_data {
            Some(t) if done || model.adam.t % cfg.eval_every.max(1) == 0 => Some(evaluate(&model, t)?),
            _ => None,
        };
        let entry = LogEntry {
            iteration: it,
            train_mse: loss,
            test_mse,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        if test_mse.is_some() {
            on_eval(&model, &entry);
        }
        log.entries.push(entry);
        if done {
            break;
        }
    }
    Ok((model, log))
}

/// Final train/test MSE of a model.
pub fn summarize(model: &ModelState, train_set: &Dataset, test_set: Option<&Dataset>) -> Result<TrainSummary, TrainError> {
    let train_mse = evaluate(model, &Prepared::new(model, train_set)?)?;
    let test_mse = test_set.map(|t| evaluate(model, &Prepared::new(model, t)?)).transpose()?;
    Ok(TrainSummary {
        dataset: train_set.header.name.clone(),
        iterations: model.adam.t,
        train_mse,
        test_mse,
    })
}

pub fn write_log_csv(log: &TrainLog, path: &Path) -> Result<(), TrainError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    log.write_csv(&mut f)?;
    f.flush()?;
    Ok(())
}
