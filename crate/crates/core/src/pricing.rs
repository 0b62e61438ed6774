//! Exact imbalance settlement rules.
//!
//! The settlement price of a quarter hour is the extremum over three
//! components: a balancing-energy price, a liquidity-weighted exchange
//! reference price, and a scarcity-adjusted base price. A negative system
//! imbalance selects the minimum, anything else the maximum.
//!
//! Everything here is hard-branching `f64` arithmetic with no rounding of
//! intermediates. The functions are pure and may be called from any thread.
//!
//! The system imbalance `v` is read as an average-power signal (MW) so that
//! it lives on the same scale as the ramp, deadband and cap thresholds.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rule constants `C0..C10`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PricingConstants {
    /// Relative floor ratio applied to `|price|` in the marked prices.
    pub c0: f64,
    /// Absolute floor for the ID15 marked price (EUR/MWh).
    pub c1: f64,
    /// Absolute floor for the ID60 marked price (EUR/MWh).
    pub c2: f64,
    /// Absolute floor for the day-ahead marked price (EUR/MWh).
    pub c3: f64,
    /// Ramp half-width (MW).
    pub c4: f64,
    /// ID15 liquidity normalizer (MW).
    pub c5: f64,
    /// ID60 liquidity normalizer (MW).
    pub c6: f64,
    /// Scarcity deadband threshold (MW).
    pub c7: f64,
    /// Scarcity cap threshold (MW).
    pub c8: f64,
    /// Imbalance intersection point of the cubic (MW).
    pub c9: f64,
    /// Price intersection point of the cubic (EUR/MWh).
    pub c10: f64,
}

impl Default for PricingConstants {
    fn default() -> Self {
        Self {
            c0: 0.1,
            c1: 5.0,
            c2: 10.0,
            c3: 15.0,
            c4: 50.0,
            c5: 200.0,
            c6: 200.0,
            c7: 200.0,
            c8: 800.0,
            c9: 1000.0,
            c10: 1000.0,
        }
    }
}

impl PricingConstants {
    pub const NAMES: [&'static str; 11] = [
        "c0", "c1", "c2", "c3", "c4", "c5", "c6", "c7", "c8", "c9", "c10",
    ];

    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "c0" => self.c0,
            "c1" => self.c1,
            "c2" => self.c2,
            "c3" => self.c3,
            "c4" => self.c4,
            "c5" => self.c5,
            "c6" => self.c6,
            "c7" => self.c7,
            "c8" => self.c8,
            "c9" => self.c9,
            "c10" => self.c10,
            _ => return None,
        })
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let slot = match name {
            "c0" => &mut self.c0,
            "c1" => &mut self.c1,
            "c2" => &mut self.c2,
            "c3" => &mut self.c3,
            "c4" => &mut self.c4,
            "c5" => &mut self.c5,
            "c6" => &mut self.c6,
            "c7" => &mut self.c7,
            "c8" => &mut self.c8,
            "c9" => &mut self.c9,
            "c10" => &mut self.c10,
            other => {
                return Err(Error::InvalidConstants(format!(
                    "unknown constant `{other}`"
                )))
            }
        };
        *slot = value;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for name in Self::NAMES {
            let value = self.get(name).unwrap_or(f64::NAN);
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidConstants(format!(
                    "{name} must be finite and strictly positive, got {value}"
                )));
            }
        }
        if !(self.c7 < self.c8 && self.c8 < self.c9) {
            return Err(Error::InvalidConstants(format!(
                "thresholds must satisfy c7 < c8 < c9, got {} / {} / {}",
                self.c7, self.c8, self.c9
            )));
        }
        Ok(())
    }

    /// Parses a `name = value` document; unspecified constants keep their defaults.
    pub fn parse_overrides(text: &str) -> Result<Self> {
        let mut constants = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConstants(format!("line {}: expected `name = value`", lineno + 1))
            })?;
            let value: f64 = value.trim().parse().map_err(|_| {
                Error::InvalidConstants(format!(
                    "line {}: `{}` is not a number",
                    lineno + 1,
                    value.trim()
                ))
            })?;
            constants.set(key.trim(), value)?;
        }
        constants.validate()?;
        Ok(constants)
    }
}

/// All raw signals of one 15-minute settlement period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketSnapshot {
    pub ts: DateTime<Utc>,
    /// Signed system imbalance, MW-equivalent.
    pub v: f64,
    pub e_afrr_pos: f64,
    pub e_afrr_neg: f64,
    pub e_mfrr_pos: f64,
    pub e_mfrr_neg: f64,
    pub p_afrr_pos: f64,
    pub p_afrr_neg: f64,
    pub p_mfrr_pos: f64,
    pub p_mfrr_neg: f64,
    /// Value of avoided activation, positive direction.
    pub p_voaa_pos: f64,
    /// Value of avoided activation, negative direction.
    pub p_voaa_neg: f64,
    pub p_id15: f64,
    pub p_id60: f64,
    pub p_da: f64,
    pub l_id15: f64,
    pub l_id60: f64,
    pub p_observed: Option<f64>,
}

impl MarketSnapshot {
    /// A snapshot with every signal zeroed.
    pub fn zeroed(ts: DateTime<Utc>) -> Self {
        Self {
            ts,
            v: 0.0,
            e_afrr_pos: 0.0,
            e_afrr_neg: 0.0,
            e_mfrr_pos: 0.0,
            e_mfrr_neg: 0.0,
            p_afrr_pos: 0.0,
            p_afrr_neg: 0.0,
            p_mfrr_pos: 0.0,
            p_mfrr_neg: 0.0,
            p_voaa_pos: 0.0,
            p_voaa_neg: 0.0,
            p_id15: 0.0,
            p_id60: 0.0,
            p_da: 0.0,
            l_id15: 0.0,
            l_id60: 0.0,
            p_observed: None,
        }
    }

    /// Checks finiteness and sign constraints; returns the first offending field.
    pub fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        let fields: [(&'static str, f64, bool); 16] = [
            ("v", self.v, false),
            ("e_afrr_pos", self.e_afrr_pos, true),
            ("e_afrr_neg", self.e_afrr_neg, true),
            ("e_mfrr_pos", self.e_mfrr_pos, true),
            ("e_mfrr_neg", self.e_mfrr_neg, true),
            ("p_afrr_pos", self.p_afrr_pos, false),
            ("p_afrr_neg", self.p_afrr_neg, false),
            ("p_mfrr_pos", self.p_mfrr_pos, false),
            ("p_mfrr_neg", self.p_mfrr_neg, false),
            ("p_voaa_pos", self.p_voaa_pos, false),
            ("p_voaa_neg", self.p_voaa_neg, false),
            ("p_id15", self.p_id15, false),
            ("p_id60", self.p_id60, false),
            ("p_da", self.p_da, false),
            ("l_id15", self.l_id15, true),
            ("l_id60", self.l_id60, true),
        ];
        for (name, value, non_negative) in fields {
            if !value.is_finite() {
                return Err((name, format!("non-finite value {value}")));
            }
            if non_negative && value < 0.0 {
                return Err((name, format!("must be >= 0, got {value}")));
            }
        }
        if let Some(p) = self.p_observed {
            if !p.is_finite() {
                return Err(("p", format!("non-finite value {p}")));
            }
        }
        Ok(())
    }
}

/// Every intermediate of one settlement evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceBreakdown {
    pub p_bal: f64,
    pub p_mkt: f64,
    pub p_scar: f64,
    pub p_base: f64,
    pub p_act_pos: Option<f64>,
    pub p_act_neg: Option<f64>,
    pub i_pos: bool,
    pub i_neg: bool,
    pub w_id15: f64,
    pub w_id60: f64,
    pub w_da: f64,
    pub ramp_value: f64,
    pub p_final: f64,
}

/// Liquidity weights of the ID15, ID60 and day-ahead references.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiquidityWeights {
    pub id15: f64,
    pub id60: f64,
    pub da: f64,
}

/// Energy-weighted price of the activated aFRR and mFRR volumes in one direction.
pub fn activation_price(e_afrr: f64, p_afrr: f64, e_mfrr: f64, p_mfrr: f64) -> Result<f64> {
    let total = e_afrr + e_mfrr;
    if total <= 0.0 {
        return Err(Error::NoActivation);
    }
    Ok((e_afrr * p_afrr + e_mfrr * p_mfrr) / total)
}

pub fn activation_indicator(e_afrr: f64, e_mfrr: f64) -> bool {
    e_afrr + e_mfrr > 0.0
}

fn balancing_from_parts(
    i_pos: bool,
    i_neg: bool,
    v: f64,
    act_pos: Option<f64>,
    act_neg: Option<f64>,
    voaa_pos: f64,
    voaa_neg: f64,
) -> f64 {
    // The indicators guarantee the activation prices exist on their branches.
    match (i_pos, i_neg) {
        (true, true) if v >= 0.0 => act_pos.unwrap_or(f64::NAN),
        (true, true) => act_neg.unwrap_or(f64::NAN),
        (true, false) => act_pos.unwrap_or(f64::NAN),
        (false, true) => act_neg.unwrap_or(f64::NAN),
        (false, false) if v >= 0.0 => voaa_pos,
        (false, false) => voaa_neg,
    }
}

fn activation_prices(s: &MarketSnapshot) -> (bool, bool, Option<f64>, Option<f64>) {
    let i_pos = activation_indicator(s.e_afrr_pos, s.e_mfrr_pos);
    let i_neg = activation_indicator(s.e_afrr_neg, s.e_mfrr_neg);
    let act_pos = activation_price(s.e_afrr_pos, s.p_afrr_pos, s.e_mfrr_pos, s.p_mfrr_pos).ok();
    let act_neg = activation_price(s.e_afrr_neg, s.p_afrr_neg, s.e_mfrr_neg, s.p_mfrr_neg).ok();
    (i_pos, i_neg, act_pos, act_neg)
}

/// Balancing-energy component: activation price of the active direction, or
/// the value of avoided activation when nothing was activated.
pub fn balancing_component(s: &MarketSnapshot) -> f64 {
    let (i_pos, i_neg, act_pos, act_neg) = activation_prices(s);
    balancing_from_parts(i_pos, i_neg, s.v, act_pos, act_neg, s.p_voaa_pos, s.p_voaa_neg)
}

pub fn ramp(v: f64, c: &PricingConstants) -> f64 {
    if v < -c.c4 {
        -1.0
    } else if v > c.c4 {
        1.0
    } else {
        v / c.c4
    }
}

/// Exchange price shifted by `ramp(v)` times the larger of an absolute floor
/// and a share `c0` of the price magnitude.
pub fn marked_price(p: f64, v: f64, floor_offset: f64, c: &PricingConstants) -> f64 {
    p + ramp(v, c) * floor_offset.max(c.c0 * p.abs())
}

pub fn liquidity_weights(l_id15: f64, l_id60: f64, c: &PricingConstants) -> LiquidityWeights {
    let id15 = (l_id15 / c.c5).min(1.0);
    let id60 = (l_id60 / c.c6).min(1.0 - id15);
    LiquidityWeights {
        id15,
        id60,
        da: 1.0 - id15 - id60,
    }
}

fn weighted(w: &LiquidityWeights, id15: f64, id60: f64, da: f64) -> f64 {
    w.id15 * id15 + w.id60 * id60 + w.da * da
}

pub fn market_component(s: &MarketSnapshot, c: &PricingConstants) -> f64 {
    let w = liquidity_weights(s.l_id15, s.l_id60, c);
    weighted(
        &w,
        marked_price(s.p_id15, s.v, c.c1, c),
        marked_price(s.p_id60, s.v, c.c2, c),
        marked_price(s.p_da, s.v, c.c3, c),
    )
}

/// Liquidity-weighted exchange reference without the ramp adjustment.
pub fn base_price(s: &MarketSnapshot, c: &PricingConstants) -> f64 {
    let w = liquidity_weights(s.l_id15, s.l_id60, c);
    weighted(&w, s.p_id15, s.p_id60, s.p_da)
}

/// Signed cubic scarcity adjustment in `|v|`, zero inside the deadband and
/// saturated beyond the cap.
pub fn scarcity_adjustment(v: f64, c: &PricingConstants) -> f64 {
    let magnitude = v.abs();
    if magnitude <= c.c7 {
        return 0.0;
    }
    let sign = if v >= 0.0 { 1.0 } else { -1.0 };
    let reach = magnitude.min(c.c8);
    sign * c.c10 * ((reach - c.c7) / (c.c9 - c.c7)).powi(3)
}

pub fn scarcity_from_base(p_base: f64, v: f64, c: &PricingConstants) -> f64 {
    if v.abs() <= c.c7 {
        p_base
    } else {
        p_base + scarcity_adjustment(v, c)
    }
}

pub fn scarcity_component(s: &MarketSnapshot, c: &PricingConstants) -> f64 {
    scarcity_from_base(base_price(s, c), s.v, c)
}

/// Extremum rule: minimum of the components for `v < 0`, maximum otherwise.
pub fn select_extremum(v: f64, p_bal: f64, p_mkt: f64, p_scar: f64) -> f64 {
    if v < 0.0 {
        p_bal.min(p_mkt).min(p_scar)
    } else {
        p_bal.max(p_mkt).max(p_scar)
    }
}

/// Full settlement evaluation with all intermediates.
pub fn imbalance_price(s: &MarketSnapshot, c: &PricingConstants) -> PriceBreakdown {
    let (i_pos, i_neg, p_act_pos, p_act_neg) = activation_prices(s);
    let p_bal = balancing_from_parts(
        i_pos,
        i_neg,
        s.v,
        p_act_pos,
        p_act_neg,
        s.p_voaa_pos,
        s.p_voaa_neg,
    );

    let w = liquidity_weights(s.l_id15, s.l_id60, c);
    let ramp_value = ramp(s.v, c);
    let p_mkt = weighted(
        &w,
        marked_price(s.p_id15, s.v, c.c1, c),
        marked_price(s.p_id60, s.v, c.c2, c),
        marked_price(s.p_da, s.v, c.c3, c),
    );
    let p_base = weighted(&w, s.p_id15, s.p_id60, s.p_da);
    let p_scar = scarcity_from_base(p_base, s.v, c);

    PriceBreakdown {
        p_bal,
        p_mkt,
        p_scar,
        p_base,
        p_act_pos,
        p_act_neg,
        i_pos,
        i_neg,
        w_id15: w.id15,
        w_id60: w.id60,
        w_da: w.da,
        ramp_value,
        p_final: select_extremum(s.v, p_bal, p_mkt, p_scar),
    }
}
