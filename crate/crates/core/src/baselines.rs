//! Reference forecasters: naive persistence with delivery-time residual
//! bands, linear quantile regression and an MLP with independent heads.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{DenseLayer, LayerAllocator, Tape, Var};
use crate::dataset::{check_minutes, n_lags, Window, WindowSet};
use crate::error::{Error, Result};
use crate::metrics::{QuantileForecast, QUANTILES};
use crate::model::{check_params, QuantileModel};
use crate::mrinn::glorot_init;
use crate::scaling::{percentile_sorted, sorted_copy, RobustScalerParams, UnitScalers};
use crate::schema::Feature;
use crate::soft_ops::map;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NaiveKind {
    Price,
    Id15,
    Id60,
}

impl NaiveKind {
    pub const ALL: [NaiveKind; 3] = [NaiveKind::Price, NaiveKind::Id15, NaiveKind::Id60];

    pub fn feature(self) -> Feature {
        match self {
            NaiveKind::Price => Feature::Price,
            NaiveKind::Id15 => Feature::PId15,
            NaiveKind::Id60 => Feature::PId60,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            NaiveKind::Price => "price",
            NaiveKind::Id15 => "id15",
            NaiveKind::Id60 => "id60",
        }
    }
}

impl fmt::Display for NaiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for NaiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NaiveKind::ALL
            .into_iter()
            .find(|k| k.tag() == s)
            .ok_or_else(|| Error::Config(format!("unknown naive kind `{s}`")))
    }
}

/// Latest value of the persisted signal, used as the forecast for `t + M`.
pub fn naive_forecast(kind: NaiveKind, window: &Window<'_>) -> f64 {
    window.current(kind.feature())
}

pub const DELIVERY_SLOTS: usize = 96;

/// Residual percentiles per delivery time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualBands {
    pub offsets: Vec<[f64; 7]>,
    /// Delivery times without training residuals, served from the global pool.
    pub fallback: Vec<bool>,
    pub global: [f64; 7],
}

fn percentiles(sorted: &[f64]) -> [f64; 7] {
    QUANTILES.map(|q| percentile_sorted(sorted, q))
}

impl ResidualBands {
    /// Fits bands on the residuals `y - naive` of `train` only.
    pub fn calibrate(kind: NaiveKind, train: &WindowSet) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Data("cannot calibrate residual bands without training samples".into()));
        }
        let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); DELIVERY_SLOTS];
        for w in train.iter() {
            buckets[w.delivery()].push(w.target() - naive_forecast(kind, &w));
        }
        let global = percentiles(&sorted_copy(buckets.iter().flatten().copied()));
        let mut offsets = Vec::with_capacity(DELIVERY_SLOTS);
        let mut fallback = Vec::with_capacity(DELIVERY_SLOTS);
        for bucket in buckets {
            if bucket.is_empty() {
                offsets.push(global);
                fallback.push(true);
            } else {
                offsets.push(percentiles(&sorted_copy(bucket)));
                fallback.push(false);
            }
        }
        let missing = fallback.iter().filter(|f| **f).count();
        if missing > 0 {
            log::warn!("{missing} delivery times have no training residuals; using the global pool");
        }
        Ok(Self {
            offsets,
            fallback,
            global,
        })
    }

    pub fn uses_fallback(&self) -> bool {
        self.fallback.iter().any(|f| *f)
    }

    pub fn forecast(&self, point: f64, delivery: usize) -> QuantileForecast {
        QuantileForecast(self.offsets[delivery].map(|o| point + o))
    }
}

/// Persistence forecast widened by delivery-time residual percentiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveModel {
    pub kind: NaiveKind,
    pub bands: ResidualBands,
}

impl NaiveModel {
    pub fn fit(kind: NaiveKind, train: &WindowSet) -> Result<Self> {
        Ok(Self {
            kind,
            bands: ResidualBands::calibrate(kind, train)?,
        })
    }

    pub fn predict(&self, window: &Window<'_>) -> QuantileForecast {
        self.bands.forecast(naive_forecast(self.kind, window), window.delivery())
    }
}

/// Per-quantile affine map of the latest scaled price.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LqrModel {
    /// `[a_0.10, b_0.10, a_0.25, b_0.25, ...]`.
    pub params: Vec<f64>,
    pub scalers: UnitScalers,
}

impl LqrModel {
    pub const PARAMS: usize = 2 * QUANTILES.len();

    /// Starts from persistence: unit slopes, zero intercepts.
    pub fn new(scalers: UnitScalers) -> Result<Self> {
        scalers.target()?;
        let mut params = vec![0.0; Self::PARAMS];
        for k in 0..QUANTILES.len() {
            params[2 * k] = 1.0;
        }
        Ok(Self { params, scalers })
    }

    pub fn slope(&self, k: usize) -> f64 {
        self.params[2 * k]
    }

    pub fn intercept(&self, k: usize) -> f64 {
        self.params[2 * k + 1]
    }
}

impl QuantileModel for LqrModel {
    fn name(&self) -> String {
        "lqr".into()
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn scalers(&self) -> &UnitScalers {
        &self.scalers
    }

    fn record(&self, tape: &mut Tape, params: &[Var], window: &Window<'_>) -> Result<[Var; 7]> {
        check_params(Self::PARAMS, params)?;
        let x = self.target_scaler().transform(window.current(Feature::Price));
        let x = tape.leaf(x)?;
        let mut out = [x; 7];
        for (k, slot) in out.iter_mut().enumerate() {
            *slot = tape.linear(&params[2 * k..2 * k + 1], &[x], Some(params[2 * k + 1]))?;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: usize,
    pub n_layers: usize,
    /// Lookback N in minutes over the lagged price.
    pub lookback: u32,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            n_layers: 2,
            lookback: 0,
            seed: 0,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.n_layers == 0 {
            return Err(Error::Config("mlp hidden width and n_layers must be at least 1".into()));
        }
        check_minutes("lookback N", self.lookback)
    }
}

/// Dense tanh trunk over the lagged scaled price with seven independent
/// linear outputs. Nothing keeps the outputs ordered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub config: MlpConfig,
    pub layers: Vec<DenseLayer>,
    pub heads: DenseLayer,
    pub params: Vec<f64>,
    pub scalers: UnitScalers,
}

impl MlpModel {
    pub fn new(config: MlpConfig, scalers: UnitScalers) -> Result<Self> {
        config.validate()?;
        scalers.target()?;
        let mut alloc = LayerAllocator::new();
        let mut width = n_lags(config.lookback);
        let mut layers = Vec::with_capacity(config.n_layers);
        for _ in 0..config.n_layers {
            layers.push(alloc.dense(width, config.hidden));
            width = config.hidden;
        }
        let heads = alloc.dense(width, QUANTILES.len());
        let mut all = layers.clone();
        all.push(heads);
        let params = glorot_init(&all, alloc.total(), config.seed);
        Ok(Self {
            config,
            layers,
            heads,
            params,
            scalers,
        })
    }
}

impl QuantileModel for MlpModel {
    fn name(&self) -> String {
        format!(
            "mlp hidden={} n_layers={} N={}",
            self.config.hidden, self.config.n_layers, self.config.lookback
        )
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn scalers(&self) -> &UnitScalers {
        &self.scalers
    }

    fn record(&self, tape: &mut Tape, params: &[Var], window: &Window<'_>) -> Result<[Var; 7]> {
        check_params(self.params.len(), params)?;
        let scaler: RobustScalerParams = self.target_scaler();
        let lags: Vec<f64> = window.lags(Feature::Price).iter().map(|&p| scaler.transform(p)).collect();
        let mut z = tape.leaves(&lags)?;
        for layer in &self.layers {
            let pre = layer.apply(tape, params, &z)?;
            z = map(tape, &pre, |t, x| t.tanh(x))?;
        }
        let out = self.heads.apply(tape, params, &z)?;
        Ok([out[0], out[1], out[2], out[3], out[4], out[5], out[6]])
    }
}
