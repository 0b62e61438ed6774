//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, TimeZone, Utc};
use mrinn_core::dataset::FeatureFrame;
use mrinn_core::scaling::{RobustScalerParams, UnitAssignment, UnitGroup, UnitScalers};
use mrinn_core::{MarketSnapshot, PricingConstants};
use rand::Rng;

pub fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap()
}

/// Settlement price written out line by line, without the engine's helpers.
pub fn oracle_price(s: &MarketSnapshot, c: &PricingConstants) -> f64 {
    let e_pos = s.e_afrr_pos + s.e_mfrr_pos;
    let e_neg = s.e_afrr_neg + s.e_mfrr_neg;
    let act_pos = (s.e_afrr_pos * s.p_afrr_pos + s.e_mfrr_pos * s.p_mfrr_pos) / e_pos;
    let act_neg = (s.e_afrr_neg * s.p_afrr_neg + s.e_mfrr_neg * s.p_mfrr_neg) / e_neg;
    let p_bal = if e_pos > 0.0 && e_neg > 0.0 {
        if s.v >= 0.0 {
            act_pos
        } else {
            act_neg
        }
    } else if e_pos > 0.0 {
        act_pos
    } else if e_neg > 0.0 {
        act_neg
    } else if s.v >= 0.0 {
        s.p_voaa_pos
    } else {
        s.p_voaa_neg
    };

    let r = (s.v / c.c4).clamp(-1.0, 1.0);
    let w15 = (s.l_id15 / c.c5).min(1.0);
    let w60 = (s.l_id60 / c.c6).min(1.0 - w15);
    let wda = 1.0 - w15 - w60;
    let m15 = s.p_id15 + r * c.c1.max(c.c0 * s.p_id15.abs());
    let m60 = s.p_id60 + r * c.c2.max(c.c0 * s.p_id60.abs());
    let mda = s.p_da + r * c.c3.max(c.c0 * s.p_da.abs());
    let p_mkt = w15 * m15 + w60 * m60 + wda * mda;

    let base = w15 * s.p_id15 + w60 * s.p_id60 + wda * s.p_da;
    let a = s.v.abs();
    let p_scar = if a <= c.c7 {
        base
    } else {
        let sign = if s.v >= 0.0 { 1.0 } else { -1.0 };
        base + sign * c.c10 * ((a.min(c.c8) - c.c7) / (c.c9 - c.c7)).powi(3)
    };

    if s.v < 0.0 {
        p_bal.min(p_mkt).min(p_scar)
    } else {
        p_bal.max(p_mkt).max(p_scar)
    }
}

fn maybe_zero<R: Rng>(rng: &mut R, hi: f64) -> f64 {
    if rng.random_bool(0.35) {
        0.0
    } else {
        rng.random_range(0.0..hi)
    }
}

/// A snapshot exercising every branch: silent directions, zero imbalance,
/// deadband, cap and saturated liquidity all occur with fair probability.
pub fn random_snapshot<R: Rng>(rng: &mut R, ts: DateTime<Utc>) -> MarketSnapshot {
    let mut s = MarketSnapshot::zeroed(ts);
    s.v = match rng.random_range(0..10) {
        0 => 0.0,
        1 => rng.random_range(-60.0..60.0),
        _ => rng.random_range(-1500.0..1500.0),
    };
    s.e_afrr_pos = maybe_zero(rng, 80.0);
    s.e_afrr_neg = maybe_zero(rng, 80.0);
    s.e_mfrr_pos = maybe_zero(rng, 60.0);
    s.e_mfrr_neg = maybe_zero(rng, 60.0);
    for p in [
        &mut s.p_afrr_pos,
        &mut s.p_afrr_neg,
        &mut s.p_mfrr_pos,
        &mut s.p_mfrr_neg,
        &mut s.p_voaa_pos,
        &mut s.p_voaa_neg,
        &mut s.p_id15,
        &mut s.p_id60,
        &mut s.p_da,
    ] {
        *p = rng.random_range(-300.0..600.0);
    }
    s.l_id15 = maybe_zero(rng, 500.0);
    s.l_id60 = maybe_zero(rng, 500.0);
    s
}

/// A frame whose only informative column is the price; every other price
/// column follows it at a fixed offset.
pub fn frame_from_prices(prices: &[f64]) -> FeatureFrame {
    let snaps = prices
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let mut s = MarketSnapshot::zeroed(t0() + Duration::minutes(15 * i as i64));
            s.p_id15 = p - 0.5;
            s.p_id60 = p + 0.5;
            s.p_da = p;
            s.p_afrr_pos = p + 1.0;
            s.p_mfrr_pos = p + 2.0;
            s.p_voaa_pos = p + 1.0;
            s.p_afrr_neg = p - 1.0;
            s.p_mfrr_neg = p - 2.0;
            s.p_voaa_neg = p - 1.0;
            s
        })
        .collect();
    FeatureFrame::new(snaps, prices.to_vec()).unwrap()
}

pub fn fixed_scalers() -> UnitScalers {
    let mut groups = BTreeMap::new();
    groups.insert(UnitGroup::PriceEurMwh, RobustScalerParams { center: 80.0, scale: 40.0 });
    groups.insert(UnitGroup::PowerMw, RobustScalerParams { center: 120.0, scale: 260.0 });
    groups.insert(UnitGroup::EnergyMwh, RobustScalerParams { center: 5.0, scale: 20.0 });
    groups.insert(UnitGroup::Dimensionless, RobustScalerParams::IDENTITY);
    UnitScalers {
        assignment: UnitAssignment::default(),
        groups,
    }
}
