use std::sync::Arc;

use chrono::{DateTime, Utc};

use crate::dataset::frame::{delivery_index, FeatureFrame};
use crate::error::{Error, Result};
use crate::schema::Feature;

/// Lags per feature for a lookback of `lookback` minutes: t−N … t inclusive.
pub fn n_lags(lookback: u32) -> usize {
    lookback as usize / 15 + 1
}

pub fn check_minutes(name: &str, minutes: u32) -> Result<()> {
    if !minutes.is_multiple_of(15) {
        return Err(Error::Config(format!("{name} must be a multiple of 15 minutes, got {minutes}")));
    }
    Ok(())
}

#[derive(Debug)]
struct Columns {
    values: Vec<Vec<f64>>,
    ts: Vec<DateTime<Utc>>,
}

/// Rolling-window samples over a frame. Lag vectors are borrowed from the
/// shared columns, so subsets are cheap.
#[derive(Debug, Clone)]
pub struct WindowSet {
    columns: Arc<Columns>,
    lookback: u32,
    horizon: u32,
    origins: Vec<usize>,
}

/// One sample: lags for every feature up to `t`, target at `t + M`.
#[derive(Debug, Clone, Copy)]
pub struct Window<'a> {
    set: &'a WindowSet,
    origin: usize,
}

impl<'a> Window<'a> {
    /// Lag vector of `feature`, oldest first, ending at `t`.
    pub fn lags(&self, feature: Feature) -> &'a [f64] {
        let n = n_lags(self.set.lookback);
        &self.set.columns.values[feature.index()][self.origin + 1 - n..=self.origin]
    }

    /// Value of `feature` at `t`.
    pub fn current(&self, feature: Feature) -> f64 {
        self.set.columns.values[feature.index()][self.origin]
    }

    pub fn target(&self) -> f64 {
        self.set.columns.values[Feature::Price.index()][self.target_row()]
    }

    pub fn origin_ts(&self) -> DateTime<Utc> {
        self.set.columns.ts[self.origin]
    }

    pub fn first_input_ts(&self) -> DateTime<Utc> {
        self.set.columns.ts[self.origin + 1 - n_lags(self.set.lookback)]
    }

    pub fn target_ts(&self) -> DateTime<Utc> {
        self.set.columns.ts[self.target_row()]
    }

    pub fn delivery(&self) -> usize {
        delivery_index(self.target_ts())
    }

    fn target_row(&self) -> usize {
        self.origin + self.set.horizon as usize / 15
    }
}

impl WindowSet {
    pub fn lookback(&self) -> u32 {
        self.lookback
    }

    pub fn horizon(&self) -> u32 {
        self.horizon
    }

    pub fn n_lags(&self) -> usize {
        n_lags(self.lookback)
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn get(&self, i: usize) -> Window<'_> {
        Window {
            set: self,
            origin: self.origins[i],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Window<'_>> + '_ {
        (0..self.len()).map(move |i| self.get(i))
    }

    pub fn targets(&self) -> Vec<f64> {
        self.iter().map(|w| w.target()).collect()
    }

    /// Samples whose target timestamp lies in `[start, end)`.
    pub fn with_targets_between(&self, start: DateTime<Utc>, end: DateTime<Utc>) -> WindowSet {
        let origins = self
            .iter()
            .filter(|w| {
                let ts = w.target_ts();
                ts >= start && ts < end
            })
            .map(|w| w.origin)
            .collect();
        WindowSet {
            columns: Arc::clone(&self.columns),
            lookback: self.lookback,
            horizon: self.horizon,
            origins,
        }
    }

    /// The first `n` samples.
    pub fn truncated(&self, n: usize) -> WindowSet {
        WindowSet {
            columns: Arc::clone(&self.columns),
            lookback: self.lookback,
            horizon: self.horizon,
            origins: self.origins[..n.min(self.len())].to_vec(),
        }
    }
}

/// Builds every causal window over `frame` for lookback `lookback` and
/// horizon `horizon` (both in minutes).
pub fn make_windows(frame: &FeatureFrame, lookback: u32, horizon: u32) -> Result<WindowSet> {
    check_minutes("lookback N", lookback)?;
    check_minutes("horizon M", horizon)?;
    if horizon == 0 {
        return Err(Error::Config("horizon M must be at least 15 minutes".into()));
    }
    let back = lookback as usize / 15;
    let ahead = horizon as usize / 15;
    let rows = frame.len();
    let origins: Vec<usize> = if rows > back + ahead {
        (back..rows - ahead).collect()
    } else {
        log::warn!("frame of {rows} rows is too short for N={lookback}, M={horizon}: no windows");
        Vec::new()
    };
    let columns = Columns {
        values: Feature::ALL.iter().map(|&f| frame.column(f)).collect(),
        ts: frame.snapshots().iter().map(|s| s.ts).collect(),
    };
    Ok(WindowSet {
        columns: Arc::new(columns),
        lookback,
        horizon,
        origins,
    })
}
