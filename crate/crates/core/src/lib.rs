//! Imbalance settlement engine, scalar reverse-mode autodiff and the
//! market-rule-informed quantile forecaster built on top of them.

pub mod autodiff;
pub mod baselines;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod model;
pub mod mrinn;
pub mod pricing;
pub mod scaling;
pub mod schema;
pub mod soft_ops;
pub mod training;

pub use error::{Error, Result};
pub use metrics::{EvalReport, QuantileForecast, QUANTILES};
pub use pricing::{imbalance_price, MarketSnapshot, PriceBreakdown, PricingConstants};
pub use schema::{Feature, CSV_HEADER};
