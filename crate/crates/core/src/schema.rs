//! Raw feature catalogue shared by ingestion, scaling and the models.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::Error;
use crate::pricing::MarketSnapshot;

/// CSV header, in the exact order files must use.
pub const CSV_HEADER: [&str; 18] = [
    "ts",
    "v",
    "e_afrr_pos",
    "e_afrr_neg",
    "e_mfrr_pos",
    "e_mfrr_neg",
    "p_afrr_pos",
    "p_afrr_neg",
    "p_mfrr_pos",
    "p_mfrr_neg",
    "p_voaa_pos",
    "p_voaa_neg",
    "p_id15",
    "p_id60",
    "p_da",
    "l_id15",
    "l_id60",
    "p",
];

/// One of the K = 17 numeric input signals. `Price` is the observed
/// imbalance price of the current period, used as a lagged input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    V,
    EAfrrPos,
    EAfrrNeg,
    EMfrrPos,
    EMfrrNeg,
    PAfrrPos,
    PAfrrNeg,
    PMfrrPos,
    PMfrrNeg,
    PVoaaPos,
    PVoaaNeg,
    PId15,
    PId60,
    PDa,
    LId15,
    LId60,
    Price,
}

impl Feature {
    pub const ALL: [Feature; 17] = [
        Feature::V,
        Feature::EAfrrPos,
        Feature::EAfrrNeg,
        Feature::EMfrrPos,
        Feature::EMfrrNeg,
        Feature::PAfrrPos,
        Feature::PAfrrNeg,
        Feature::PMfrrPos,
        Feature::PMfrrNeg,
        Feature::PVoaaPos,
        Feature::PVoaaNeg,
        Feature::PId15,
        Feature::PId60,
        Feature::PDa,
        Feature::LId15,
        Feature::LId60,
        Feature::Price,
    ];

    pub const COUNT: usize = 17;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        CSV_HEADER[self.index() + 1]
    }

    /// Inputs used only by the balancing-energy rules.
    pub fn is_balancing(self) -> bool {
        (Feature::EAfrrPos..=Feature::PVoaaNeg).contains(&self)
    }

    pub fn read(self, s: &MarketSnapshot, price: f64) -> f64 {
        match self {
            Feature::V => s.v,
            Feature::EAfrrPos => s.e_afrr_pos,
            Feature::EAfrrNeg => s.e_afrr_neg,
            Feature::EMfrrPos => s.e_mfrr_pos,
            Feature::EMfrrNeg => s.e_mfrr_neg,
            Feature::PAfrrPos => s.p_afrr_pos,
            Feature::PAfrrNeg => s.p_afrr_neg,
            Feature::PMfrrPos => s.p_mfrr_pos,
            Feature::PMfrrNeg => s.p_mfrr_neg,
            Feature::PVoaaPos => s.p_voaa_pos,
            Feature::PVoaaNeg => s.p_voaa_neg,
            Feature::PId15 => s.p_id15,
            Feature::PId60 => s.p_id60,
            Feature::PDa => s.p_da,
            Feature::LId15 => s.l_id15,
            Feature::LId60 => s.l_id60,
            Feature::Price => price,
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Feature::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Schema(format!("unknown feature `{s}`")))
    }
}
