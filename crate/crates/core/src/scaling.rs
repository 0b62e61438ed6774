//! Unit-grouped robust scaling.
//!
//! Features that share a physical unit are concatenated over the training
//! rows and scaled by one median/IQR pair, so rule constants expressed in the
//! same unit can be mapped into the scaled space with the same transform.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::dataset::FeatureFrame;
use crate::error::{Error, Result};
use crate::pricing::PricingConstants;
use crate::schema::Feature;
use crate::soft_ops::{broadcast, LatentVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitGroup {
    PriceEurMwh,
    PowerMw,
    EnergyMwh,
    Dimensionless,
}

impl UnitGroup {
    pub fn name(self) -> &'static str {
        match self {
            UnitGroup::PriceEurMwh => "price_eur_mwh",
            UnitGroup::PowerMw => "power_mw",
            UnitGroup::EnergyMwh => "energy_mwh",
            UnitGroup::Dimensionless => "dimensionless",
        }
    }
}

/// Which unit group every feature and constant belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitAssignment {
    pub features: BTreeMap<Feature, UnitGroup>,
    pub constants: BTreeMap<String, UnitGroup>,
}

impl Default for UnitAssignment {
    fn default() -> Self {
        let features = Feature::ALL
            .into_iter()
            .map(|f| {
                let group = match f {
                    Feature::V | Feature::LId15 | Feature::LId60 => UnitGroup::PowerMw,
                    Feature::EAfrrPos | Feature::EAfrrNeg | Feature::EMfrrPos | Feature::EMfrrNeg => {
                        UnitGroup::EnergyMwh
                    }
                    _ => UnitGroup::PriceEurMwh,
                };
                (f, group)
            })
            .collect();
        let constants = PricingConstants::NAMES
            .into_iter()
            .map(|name| {
                let group = match name {
                    "c0" => UnitGroup::Dimensionless,
                    "c1" | "c2" | "c3" | "c10" => UnitGroup::PriceEurMwh,
                    _ => UnitGroup::PowerMw,
                };
                (name.to_string(), group)
            })
            .collect();
        Self {
            features,
            constants,
        }
    }
}

impl UnitAssignment {
    pub fn feature_group(&self, feature: Feature) -> Result<UnitGroup> {
        self.features
            .get(&feature)
            .copied()
            .ok_or_else(|| Error::Config(format!("feature `{feature}` has no unit group")))
    }

    pub fn constant_group(&self, name: &str) -> Result<UnitGroup> {
        self.constants
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown constant `{name}`")))
    }

    pub fn members(&self, group: UnitGroup) -> Vec<Feature> {
        self.features
            .iter()
            .filter(|(_, g)| **g == group)
            .map(|(f, _)| *f)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        for f in Feature::ALL {
            self.feature_group(f)?;
        }
        for name in PricingConstants::NAMES {
            self.constant_group(name)?;
        }
        if let Some(name) = self.constants.keys().find(|k| PricingConstants::NAMES.iter().all(|n| n != k)) {
            return Err(Error::Config(format!("unknown constant `{name}` in unit assignment")));
        }
        Ok(())
    }
}

/// Percentile with linear interpolation between order statistics of a
/// sorted sample (`q` in `[0, 1]`).
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn sorted_copy(values: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.into_iter().collect();
    v.sort_by(f64::total_cmp);
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustScalerParams {
    pub center: f64,
    pub scale: f64,
}

impl RobustScalerParams {
    pub const IDENTITY: Self = Self {
        center: 0.0,
        scale: 1.0,
    };

    /// Median and interquartile range of all `columns` concatenated.
    pub fn fit(columns: &[&[f64]]) -> Result<Self> {
        let sorted = sorted_copy(columns.iter().flat_map(|c| c.iter().copied()));
        if sorted.is_empty() {
            return Err(Error::Data("cannot fit a scaler on empty data".into()));
        }
        let center = percentile_sorted(&sorted, 0.5);
        let iqr = percentile_sorted(&sorted, 0.75) - percentile_sorted(&sorted, 0.25);
        let scale = if iqr > 0.0 { iqr } else { 1.0 };
        Ok(Self { center, scale })
    }

    pub fn transform(&self, x: f64) -> f64 {
        (x - self.center) / self.scale
    }

    pub fn inverse_transform(&self, y: f64) -> f64 {
        y * self.scale + self.center
    }
}

/// Fitted scalers for every unit group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitScalers {
    pub assignment: UnitAssignment,
    pub groups: BTreeMap<UnitGroup, RobustScalerParams>,
}

impl UnitScalers {
    /// Fits one scaler per group on `train`, which must hold training rows only.
    pub fn fit(assignment: UnitAssignment, train: &FeatureFrame) -> Result<Self> {
        assignment.validate()?;
        if train.is_empty() {
            return Err(Error::Data("cannot fit scalers on an empty training split".into()));
        }
        let mut groups = BTreeMap::new();
        groups.insert(UnitGroup::Dimensionless, RobustScalerParams::IDENTITY);
        for group in [UnitGroup::PriceEurMwh, UnitGroup::PowerMw, UnitGroup::EnergyMwh] {
            let columns: Vec<Vec<f64>> = assignment
                .members(group)
                .into_iter()
                .map(|f| train.column(f))
                .collect();
            if columns.is_empty() {
                continue;
            }
            let refs: Vec<&[f64]> = columns.iter().map(Vec::as_slice).collect();
            groups.insert(group, RobustScalerParams::fit(&refs)?);
        }
        Ok(Self { assignment, groups })
    }

    pub fn group(&self, group: UnitGroup) -> Result<RobustScalerParams> {
        self.groups
            .get(&group)
            .copied()
            .ok_or_else(|| Error::Config(format!("unit group `{}` is not fitted", group.name())))
    }

    pub fn for_feature(&self, feature: Feature) -> Result<RobustScalerParams> {
        self.group(self.assignment.feature_group(feature)?)
    }

    /// Scaler used for the forecast target (the imbalance price).
    pub fn target(&self) -> Result<RobustScalerParams> {
        self.for_feature(Feature::Price)
    }

    /// A rule constant mapped into the scaled space of its unit group.
    pub fn scaled_constant(&self, name: &str, constants: &PricingConstants) -> Result<f64> {
        let value = constants
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown constant `{name}`")))?;
        let group = self.assignment.constant_group(name)?;
        Ok(self.group(group)?.transform(value))
    }
}

/// Scaled constant broadcast to `h` non-parameter nodes.
pub fn transform_constant(
    tape: &mut Tape,
    name: &str,
    constants: &PricingConstants,
    scalers: &UnitScalers,
    h: usize,
) -> Result<LatentVector> {
    let value = scalers.scaled_constant(name, constants)?;
    broadcast(tape, value, h)
}
