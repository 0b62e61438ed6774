//! Interface shared by every trainable quantile forecaster.

use crate::autodiff::{Tape, Var};
use crate::dataset::Window;
use crate::error::{Error, Result};
use crate::metrics::{QuantileForecast, QUANTILES};
use crate::scaling::{RobustScalerParams, UnitScalers};
use crate::schema::Feature;

/// A model with a flat parameter vector that records its forward pass on a
/// tape and predicts the seven quantiles in scaled target units.
pub trait QuantileModel: Sync {
    fn name(&self) -> String;

    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];

    fn param_count(&self) -> usize {
        self.params().len()
    }

    fn scalers(&self) -> &UnitScalers;

    /// Records the scaled quantile outputs for `window`. `params` holds one
    /// tape node per parameter, in order.
    fn record(&self, tape: &mut Tape, params: &[Var], window: &Window<'_>) -> Result<[Var; 7]>;

    fn target_scaler(&self) -> RobustScalerParams {
        self.scalers().target().unwrap_or(RobustScalerParams::IDENTITY)
    }

    /// Forecast in price units.
    fn predict(&self, window: &Window<'_>) -> Result<QuantileForecast> {
        let mut tape = Tape::with_capacity(4 * self.param_count());
        let params = tape.leaves(self.params())?;
        let q = self.record(&mut tape, &params, window)?;
        let target = self.target_scaler();
        Ok(QuantileForecast(q.map(|v| target.inverse_transform(v.value()))))
    }
}

/// Average pinball loss of scaled outputs `q` against scaled truth `y`,
/// recorded as a single node.
pub fn record_pinball(tape: &mut Tape, q: &[Var; 7], y: f64) -> Result<Var> {
    let n = QUANTILES.len() as f64;
    let mut coefficients = [0.0; 7];
    let mut constant = 0.0;
    for (k, (&tau, out)) in QUANTILES.iter().zip(q).enumerate() {
        // slope of the pinball loss in y - q on the active side
        let slope = if y >= out.value() { tau } else { tau - 1.0 };
        coefficients[k] = -slope / n;
        constant += slope * y / n;
    }
    tape.combine(q, &coefficients, constant)
}

/// Scaled lag vectors of `features`, in the given order.
pub fn scaled_lags(window: &Window<'_>, features: &[Feature], scalers: &[RobustScalerParams]) -> Vec<Vec<f64>> {
    features
        .iter()
        .zip(scalers)
        .map(|(&f, s)| window.lags(f).iter().map(|&x| s.transform(x)).collect())
        .collect()
}

/// One scaler per feature, in order.
pub fn feature_scalers(scalers: &UnitScalers, features: &[Feature]) -> Result<Vec<RobustScalerParams>> {
    features.iter().map(|&f| scalers.for_feature(f)).collect()
}

pub(crate) fn check_params(expected: usize, params: &[Var]) -> Result<()> {
    if params.len() == expected {
        Ok(())
    } else {
        Err(Error::Dimension {
            expected,
            actual: params.len(),
        })
    }
}
