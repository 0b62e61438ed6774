//! Deterministic mini-batch training on the average quantile loss.
//!
//! Gradients of a batch are computed over fixed-size chunks of samples, one
//! tape per chunk, and summed in chunk order, so results do not depend on
//! the number of worker threads.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::dataset::{WindowSet, WindowSplit};
use crate::error::{Error, Result};
use crate::metrics::{aql, EvalReport, QuantileForecast};
use crate::model::{record_pinball, QuantileModel};

/// Samples per tape when computing batch gradients.
pub const CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub patience: usize,
    pub seeds: Vec<u64>,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 70,
            batch_size: 1024,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            patience: 10,
            seeds: vec![0],
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if self.patience > self.max_epochs {
            return Err(Error::Config(format!(
                "patience ({}) exceeds max_epochs ({})",
                self.patience, self.max_epochs
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::Config(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64, config: &TrainConfig) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(Error::Dimension {
            expected: params.len(),
            actual: grads.len(),
        });
    }
    if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { index });
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
        state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + config.epsilon);
    }
    Ok(())
}

thread_local! {
    static SCRATCH: std::cell::RefCell<Tape> = std::cell::RefCell::new(Tape::new());
}

/// Mean scaled loss and gradient over the samples `batch` of `windows`.
pub fn batch_gradient<M: QuantileModel + ?Sized>(
    model: &M,
    windows: &WindowSet,
    batch: &[usize],
) -> Result<(f64, Vec<f64>)> {
    let n = model.param_count();
    let target = model.target_scaler();
    let parts = batch
        .par_chunks(CHUNK)
        .map(|chunk| -> Result<(f64, Vec<f64>)> {
            SCRATCH.with_borrow_mut(|tape| {
                tape.clear();
                let params = tape.leaves(model.params())?;
                let mut losses = Vec::with_capacity(chunk.len());
                for &i in chunk {
                    let w = windows.get(i);
                    let q = model.record(tape, &params, &w)?;
                    losses.push(record_pinball(tape, &q, target.transform(w.target()))?);
                }
                let total = tape.sum(&losses)?;
                let grads = tape.backward(total);
                Ok((total.value(), grads.leading(n).to_vec()))
            })
        })
        .collect::<Vec<_>>();
    let mut loss = 0.0;
    let mut grad = vec![0.0; n];
    for part in parts {
        let (l, g) = part?;
        loss += l;
        for (acc, x) in grad.iter_mut().zip(g) {
            *acc += x;
        }
    }
    let scale = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((loss * scale, grad))
}

/// Forecasts in price units for every window, in order.
pub fn predict_all<M: QuantileModel + ?Sized>(model: &M, windows: &WindowSet) -> Result<Vec<QuantileForecast>> {
    (0..windows.len())
        .into_par_iter()
        .map(|i| model.predict(&windows.get(i)))
        .collect()
}

pub fn evaluate<M: QuantileModel + ?Sized>(model: &M, windows: &WindowSet) -> Result<EvalReport> {
    let forecasts = predict_all(model, windows)?;
    EvalReport::evaluate(&windows.targets(), &forecasts)
}

fn val_aql<M: QuantileModel + ?Sized>(model: &M, windows: &WindowSet) -> Result<f64> {
    aql(&windows.targets(), &predict_all(model, windows)?)
}

/// Outcome of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub model: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub fold: usize,
    pub initial_train_aql: f64,
    pub initial_val_aql: f64,
    /// Per-epoch training AQL, epochs 1 onward.
    pub train_curve: Vec<f64>,
    pub val_curve: Vec<f64>,
    /// 1-based epoch of the selected checkpoint.
    pub best_epoch: usize,
    pub best_val_aql: f64,
    pub stopped_early: bool,
    pub val: EvalReport,
    pub test: EvalReport,
    pub param_count: usize,
    pub seconds: f64,
}

fn as_loss_error(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::NonFinite { .. } | Error::Domain { .. } => Error::NonFiniteLoss { epoch, batch },
        other => other,
    }
}

/// Trains `model` on `split.train`, selects the epoch with the lowest
/// validation AQL and scores that checkpoint on `split.test`.
pub fn train<M: QuantileModel + ?Sized>(
    model: &mut M,
    split: &WindowSplit,
    config: &TrainConfig,
    model_config: serde_json::Value,
    seed: u64,
    fold: usize,
) -> Result<RunRecord> {
    config.validate()?;
    for (name, set) in [("train", &split.train), ("validation", &split.val), ("test", &split.test)] {
        if set.is_empty() {
            return Err(Error::Data(format!("{name} split has no samples")));
        }
    }
    let started = Instant::now();
    let target_scale = model.target_scaler().scale;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_7a11);
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    let mut state = AdamState::new(model.param_count());

    let initial_train_aql = val_aql(model, &split.train)?;
    let initial_val_aql = val_aql(model, &split.val)?;
    let mut best = (f64::INFINITY, 0, model.params().to_vec());
    let mut train_curve = Vec::new();
    let mut val_curve = Vec::new();
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        let mut weighted = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let (loss, grad) =
                batch_gradient(model, &split.train, batch).map_err(|e| as_loss_error(e, epoch, b))?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            weighted += loss * batch.len() as f64;
            adam_step(model.params_mut(), &grad, &mut state, config.learning_rate, config)?;
        }
        train_curve.push(weighted / order.len() as f64 * target_scale);
        let val = val_aql(model, &split.val).map_err(|e| as_loss_error(e, epoch, 0))?;
        val_curve.push(val);
        log::debug!("epoch {epoch}: train {:.4} val {val:.4}", train_curve[epoch - 1]);
        if val < best.0 {
            best = (val, epoch, model.params().to_vec());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                stopped_early = epoch < config.max_epochs;
                break;
            }
        }
    }

    let (best_val_aql, best_epoch, best_params) = best;
    model.params_mut().copy_from_slice(&best_params);
    let val = evaluate(model, &split.val)?;
    let test = evaluate(model, &split.test)?;
    Ok(RunRecord {
        model: model.name(),
        config: model_config,
        seed,
        fold,
        initial_train_aql,
        initial_val_aql,
        train_curve,
        val_curve,
        best_epoch,
        best_val_aql,
        stopped_early,
        val,
        test,
        param_count: model.param_count(),
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Every trained combination, best first, plus the skipped ones.
#[derive(Debug, Clone)]
pub struct GridOutcome<M> {
    pub runs: Vec<RunRecord>,
    /// Trained models aligned with `runs`, restored to their best checkpoint.
    pub models: Vec<M>,
    pub skipped: Vec<(String, String)>,
}

impl<M> GridOutcome<M> {
    pub fn best(&self) -> &RunRecord {
        &self.runs[0]
    }

    pub fn best_model(&self) -> &M {
        &self.models[0]
    }
}

/// Trains every candidate whose model can be built, then ranks them by
/// validation AQL, parameter count and configuration text.
pub fn grid_search<C, M, F>(
    candidates: &[C],
    build: F,
    split: &WindowSplit,
    config: &TrainConfig,
    seed: u64,
    fold: usize,
) -> Result<GridOutcome<M>>
where
    C: Serialize + Sync,
    M: QuantileModel + Send,
    F: Fn(&C) -> Result<M> + Sync,
{
    if candidates.is_empty() {
        return Err(Error::Config("grid is empty".into()));
    }
    type Outcome<M> = Result<std::result::Result<(RunRecord, M), String>>;
    let results: Vec<(String, Outcome<M>)> = candidates
        .par_iter()
        .map(|c| {
            let value = serde_json::to_value(c).unwrap_or(serde_json::Value::Null);
            let label = value.to_string();
            let outcome = match build(c) {
                Ok(mut model) => train(&mut model, split, config, value, seed, fold).map(|r| Ok((r, model))),
                Err(Error::Config(reason)) => {
                    log::warn!("skipping {label}: {reason}");
                    Ok(Err(reason))
                }
                Err(e) => Err(e),
            };
            (label, outcome)
        })
        .collect();
    let mut trained = Vec::new();
    let mut skipped = Vec::new();
    for (label, outcome) in results {
        match outcome? {
            Ok(run) => trained.push(run),
            Err(reason) => skipped.push((label, reason)),
        }
    }
    if trained.is_empty() {
        return Err(Error::Config("every grid combination is invalid".into()));
    }
    trained.sort_by(|(a, _), (b, _)| {
        a.best_val_aql
            .total_cmp(&b.best_val_aql)
            .then(a.param_count.cmp(&b.param_count))
            .then_with(|| a.config.to_string().cmp(&b.config.to_string()))
    });
    let (runs, models) = trained.into_iter().unzip();
    Ok(GridOutcome { runs, models, skipped })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Mean and population standard deviation.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub group: String,
    pub n: usize,
    pub aql: Stat,
    pub aqcr: Stat,
    pub mae: Stat,
    pub rmse: Stat,
}

/// Test-metric mean and standard deviation per group, groups in first-seen order.
pub fn aggregate<F>(records: &[RunRecord], key: F) -> Vec<AggregateRow>
where
    F: Fn(&RunRecord) -> String,
{
    let mut groups: Vec<(String, Vec<&RunRecord>)> = Vec::new();
    for r in records {
        let k = key(r);
        match groups.iter_mut().find(|(g, _)| *g == k) {
            Some((_, members)) => members.push(r),
            None => groups.push((k, vec![r])),
        }
    }
    groups
        .into_iter()
        .map(|(group, members)| {
            let stat = |f: fn(&EvalReport) -> f64| Stat::of(&members.iter().map(|r| f(&r.test)).collect::<Vec<_>>());
            AggregateRow {
                group,
                n: members.len(),
                aql: stat(|e| e.aql),
                aqcr: stat(|e| e.aqcr),
                mae: stat(|e| e.mae),
                rmse: stat(|e| e.rmse),
            }
        })
        .collect()
}
