use std::ops::Range;

use chrono::{DateTime, Duration, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::dataset::frame::{format_ts, FeatureFrame, RESOLUTION_MINUTES};
use crate::dataset::windows::WindowSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldBoundaries {
    pub train_start: DateTime<Utc>,
    pub val_start: DateTime<Utc>,
    pub test_start: DateTime<Utc>,
    pub test_end: DateTime<Utc>,
}

impl FoldBoundaries {
    fn check(&self) -> Result<()> {
        if !(self.train_start < self.val_start && self.val_start < self.test_start && self.test_start < self.test_end) {
            return Err(Error::Config(format!(
                "fold boundaries must be strictly increasing: {} {} {} {}",
                format_ts(self.train_start),
                format_ts(self.val_start),
                format_ts(self.test_start),
                format_ts(self.test_end)
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub folds: Vec<FoldBoundaries>,
}

fn utc(y: i32, m: u32) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(y, m, 1, 0, 0, 0).unwrap()
}

impl FoldSpec {
    /// Expanding-window protocol over 2022–2025: validation and test blocks
    /// of four months each, shifted by four months per fold.
    pub fn paper() -> Self {
        let months = [utc(2024, 9), utc(2025, 1), utc(2025, 5), utc(2025, 9), utc(2026, 1)];
        let folds = (0..3)
            .map(|i| FoldBoundaries {
                train_start: utc(2022, 1),
                val_start: months[i],
                test_start: months[i + 1],
                test_end: months[i + 2],
            })
            .collect();
        Self { folds }
    }

    pub fn span(&self) -> Option<(DateTime<Utc>, DateTime<Utc>)> {
        let start = self.folds.iter().map(|f| f.train_start).min()?;
        let end = self.folds.iter().map(|f| f.test_end).max()?;
        Some((start, end))
    }

    /// The same boundaries mapped proportionally onto `[start, end)`, snapped
    /// down to the 15-minute grid.
    pub fn rescaled(&self, start: DateTime<Utc>, end: DateTime<Utc>) -> Result<Self> {
        let (from, to) = self
            .span()
            .ok_or_else(|| Error::Config("fold spec has no folds".into()))?;
        let src = (to - from).num_seconds() as f64;
        let dst_steps = (end - start).num_minutes() / RESOLUTION_MINUTES;
        let map = |ts: DateTime<Utc>| {
            let frac = (ts - from).num_seconds() as f64 / src;
            let steps = (frac * dst_steps as f64).floor() as i64;
            start + Duration::minutes(steps * RESOLUTION_MINUTES)
        };
        let folds = self
            .folds
            .iter()
            .map(|f| FoldBoundaries {
                train_start: map(f.train_start),
                val_start: map(f.val_start),
                test_start: map(f.test_start),
                test_end: map(f.test_end),
            })
            .collect();
        let spec = Self { folds };
        spec.validate()?;
        Ok(spec)
    }

    /// Paper boundaries rescaled onto the span of `frame`.
    pub fn proportional(frame: &FeatureFrame) -> Result<Self> {
        match (frame.first_ts(), frame.end_ts()) {
            (Some(start), Some(end)) => Self::paper().rescaled(start, end),
            _ => Err(Error::Data("cannot build folds over an empty frame".into())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds.is_empty() {
            return Err(Error::Config("fold spec has no folds".into()));
        }
        self.folds.iter().try_for_each(FoldBoundaries::check)
    }
}

/// Row ranges of one fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    /// 1-based fold number.
    pub index: usize,
    pub boundaries: FoldBoundaries,
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

/// Windows of one split, selected by target timestamp.
#[derive(Debug, Clone)]
pub struct WindowSplit {
    pub train: WindowSet,
    pub val: WindowSet,
    pub test: WindowSet,
}

impl FoldSplit {
    /// The training rows only; every fitted statistic must come from here.
    pub fn train_frame(&self, frame: &FeatureFrame) -> FeatureFrame {
        frame.slice(self.train.clone())
    }

    pub fn windows(&self, windows: &WindowSet) -> WindowSplit {
        let b = &self.boundaries;
        WindowSplit {
            train: windows.with_targets_between(b.train_start, b.val_start),
            val: windows.with_targets_between(b.val_start, b.test_start),
            test: windows.with_targets_between(b.test_start, b.test_end),
        }
    }
}

pub fn make_folds(frame: &FeatureFrame, spec: &FoldSpec) -> Result<Vec<FoldSplit>> {
    spec.validate()?;
    let (first, end) = match (frame.first_ts(), frame.end_ts()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::Data("cannot build folds over an empty frame".into())),
    };
    let (need_start, need_end) = spec.span().expect("validated");
    if first > need_start {
        return Err(Error::Coverage {
            start: format_ts(need_start),
            end: format_ts(first.min(need_end)),
        });
    }
    if end < need_end {
        return Err(Error::Coverage {
            start: format_ts(end.max(need_start)),
            end: format_ts(need_end),
        });
    }
    Ok(spec
        .folds
        .iter()
        .enumerate()
        .map(|(i, b)| FoldSplit {
            index: i + 1,
            boundaries: *b,
            train: frame.rows_between(b.train_start, b.val_start),
            val: frame.rows_between(b.val_start, b.test_start),
            test: frame.rows_between(b.test_start, b.test_end),
        })
        .collect())
}
