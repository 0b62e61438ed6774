//! Probabilistic and pointwise forecast scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Quantile levels of every forecast, in ascending order.
pub const QUANTILES: [f64; 7] = [0.10, 0.25, 0.45, 0.50, 0.55, 0.75, 0.90];

/// Position of the median in [`QUANTILES`].
pub const MEDIAN_INDEX: usize = 3;

/// Predictions at the levels of [`QUANTILES`], in EUR/MWh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileForecast(pub [f64; 7]);

impl QuantileForecast {
    pub fn median(&self) -> f64 {
        self.0[MEDIAN_INDEX]
    }

    pub fn values(&self) -> &[f64; 7] {
        &self.0
    }

    /// Number of adjacent pairs with a strictly larger lower quantile.
    pub fn crossings(&self) -> usize {
        self.0.windows(2).filter(|w| w[0] > w[1]).count()
    }

    pub fn is_sorted(&self) -> bool {
        self.crossings() == 0
    }
}

/// Quantile (pinball) loss of one prediction.
pub fn pinball(y: f64, y_hat: f64, tau: f64) -> Result<f64> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Config(format!("quantile level must lie in (0, 1), got {tau}")));
    }
    Ok(pinball_unchecked(y, y_hat, tau))
}

pub(crate) fn pinball_unchecked(y: f64, y_hat: f64, tau: f64) -> f64 {
    if y >= y_hat {
        tau * (y - y_hat)
    } else {
        (1.0 - tau) * (y_hat - y)
    }
}

fn check_aligned(truths: usize, other: usize) -> Result<()> {
    if truths == 0 {
        return Err(Error::Data("cannot score an empty set".into()));
    }
    if truths != other {
        return Err(Error::Dimension {
            expected: truths,
            actual: other,
        });
    }
    Ok(())
}

/// Average quantile loss over all samples and all levels.
pub fn aql(truths: &[f64], forecasts: &[QuantileForecast]) -> Result<f64> {
    check_aligned(truths.len(), forecasts.len())?;
    let total: f64 = truths
        .iter()
        .zip(forecasts)
        .map(|(&y, f)| {
            QUANTILES
                .iter()
                .zip(f.0)
                .map(|(&tau, q)| pinball_unchecked(y, q, tau))
                .sum::<f64>()
        })
        .sum();
    Ok(total / (truths.len() * QUANTILES.len()) as f64)
}

/// Average quantile crossing rate in percent: share of adjacent quantile
/// pairs whose order is violated.
pub fn aqcr(forecasts: &[QuantileForecast]) -> Result<f64> {
    if forecasts.is_empty() {
        return Err(Error::Data("cannot score an empty set".into()));
    }
    let crossings: usize = forecasts.iter().map(QuantileForecast::crossings).sum();
    let pairs = forecasts.len() * (QUANTILES.len() - 1);
    Ok(100.0 * crossings as f64 / pairs as f64)
}

pub fn mae(truths: &[f64], points: &[f64]) -> Result<f64> {
    check_aligned(truths.len(), points.len())?;
    let total: f64 = truths.iter().zip(points).map(|(y, p)| (y - p).abs()).sum();
    Ok(total / truths.len() as f64)
}

pub fn rmse(truths: &[f64], points: &[f64]) -> Result<f64> {
    check_aligned(truths.len(), points.len())?;
    let total: f64 = truths.iter().zip(points).map(|(y, p)| (y - p) * (y - p)).sum();
    Ok((total / truths.len() as f64).sqrt())
}

/// Scores of one model on one evaluation set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub aql: f64,
    pub aqcr: f64,
    pub mae: f64,
    pub rmse: f64,
    pub n: usize,
}

impl EvalReport {
    /// Scores quantile forecasts, using the median as the point forecast.
    pub fn evaluate(truths: &[f64], forecasts: &[QuantileForecast]) -> Result<Self> {
        let medians: Vec<f64> = forecasts.iter().map(QuantileForecast::median).collect();
        Ok(Self {
            aql: aql(truths, forecasts)?,
            aqcr: aqcr(forecasts)?,
            mae: mae(truths, &medians)?,
            rmse: rmse(truths, &medians)?,
            n: truths.len(),
        })
    }
}
