use std::f64::consts::TAU;

use chrono::{DateTime, TimeZone, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::frame::{step, FeatureFrame};
use crate::error::{Error, Result};
use crate::pricing::{imbalance_price, MarketSnapshot, PricingConstants};

/// Generator parameters. Prices in EUR/MWh, imbalance in MW, energies in MWh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub start: DateTime<Utc>,
    /// Stationary standard deviation of the imbalance.
    pub v_sigma: f64,
    /// Per-period autocorrelation of the imbalance.
    pub v_phi: f64,
    pub da_level: f64,
    pub da_amplitude: f64,
    pub da_noise: f64,
    pub id15_noise: f64,
    pub id60_noise: f64,
    /// Autocorrelation of the intraday deviations from day-ahead.
    pub id_phi: f64,
    pub l_id15_median: f64,
    pub l_id60_median: f64,
    pub liquidity_sigma: f64,
    pub energy_noise: f64,
    /// Imbalance beyond which mFRR is activated.
    pub mfrr_threshold: f64,
    pub afrr_spread: f64,
    pub mfrr_spread: f64,
    pub spread_noise: f64,
    pub constants: PricingConstants,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            start: Utc.with_ymd_and_hms(2022, 1, 1, 0, 0, 0).unwrap(),
            v_sigma: 250.0,
            v_phi: 0.8,
            da_level: 80.0,
            da_amplitude: 30.0,
            da_noise: 5.0,
            id15_noise: 12.0,
            id60_noise: 8.0,
            id_phi: 0.7,
            l_id15_median: 150.0,
            l_id60_median: 220.0,
            liquidity_sigma: 0.6,
            energy_noise: 12.0,
            mfrr_threshold: 350.0,
            afrr_spread: 15.0,
            mfrr_spread: 40.0,
            spread_noise: 5.0,
            constants: PricingConstants::default(),
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("v_sigma", self.v_sigma),
            ("liquidity_sigma", self.liquidity_sigma),
            ("l_id15_median", self.l_id15_median),
            ("l_id60_median", self.l_id60_median),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Config(format!("synth.{name} must be > 0, got {value}")));
            }
        }
        let non_negative = [
            ("da_noise", self.da_noise),
            ("id15_noise", self.id15_noise),
            ("id60_noise", self.id60_noise),
            ("energy_noise", self.energy_noise),
            ("spread_noise", self.spread_noise),
            ("mfrr_threshold", self.mfrr_threshold),
        ];
        for (name, value) in non_negative {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::Config(format!("synth.{name} must be >= 0, got {value}")));
            }
        }
        for (name, value) in [("v_phi", self.v_phi), ("id_phi", self.id_phi)] {
            if value.is_nan() || value.abs() >= 1.0 {
                return Err(Error::Config(format!("synth.{name} must lie in (-1, 1), got {value}")));
            }
        }
        self.constants.validate()
    }
}

fn normal(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("validated sigma")
}

/// Seeded synthetic market whose target column is the settlement price of
/// each row.
pub fn generate_synthetic(n_days: usize, seed: u64, params: &SynthParams) -> Result<FeatureFrame> {
    if n_days == 0 {
        return Err(Error::Config("synthetic frame needs at least one day".into()));
    }
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = n_days * 96;

    let std_normal = normal(1.0);
    let v_innovation = params.v_sigma * (1.0 - params.v_phi * params.v_phi).sqrt();
    let id_scale = (1.0 - params.id_phi * params.id_phi).sqrt();
    let l15 = LogNormal::new(params.l_id15_median.ln(), params.liquidity_sigma).expect("validated");
    let l60 = LogNormal::new(params.l_id60_median.ln(), params.liquidity_sigma).expect("validated");
    let energy = normal(params.energy_noise.max(f64::MIN_POSITIVE));
    let spread = normal(params.spread_noise.max(f64::MIN_POSITIVE));

    let mut v = params.v_sigma * std_normal.sample(&mut rng);
    let mut dev15 = 0.0;
    let mut dev60 = 0.0;
    let mut snapshots = Vec::with_capacity(rows);
    let mut prices = Vec::with_capacity(rows);
    for i in 0..rows {
        let ts = params.start + step() * i as i32;
        if i > 0 {
            v = params.v_phi * v + v_innovation * std_normal.sample(&mut rng);
        }
        let phase = (i % 96) as f64 / 96.0;
        let profile = -(TAU * phase).cos() + 0.5 * (2.0 * TAU * phase).sin();
        let p_da = params.da_level + params.da_amplitude * profile + params.da_noise * std_normal.sample(&mut rng);
        dev15 = params.id_phi * dev15 + params.id15_noise * id_scale * std_normal.sample(&mut rng);
        dev60 = params.id_phi * dev60 + params.id60_noise * id_scale * std_normal.sample(&mut rng);
        let p_id15 = p_da + dev15;
        let p_id60 = p_da + dev60;

        let up = v.max(0.0);
        let down = (-v).max(0.0);
        let quarter = 0.25;
        let e_afrr_pos = (quarter * up.min(params.mfrr_threshold) + energy.sample(&mut rng)).max(0.0);
        let e_afrr_neg = (quarter * down.min(params.mfrr_threshold) + energy.sample(&mut rng)).max(0.0);
        let e_mfrr_pos = (quarter * (up - params.mfrr_threshold) + energy.sample(&mut rng)).max(0.0);
        let e_mfrr_neg = (quarter * (down - params.mfrr_threshold) + energy.sample(&mut rng)).max(0.0);

        let p_afrr_pos = p_id15 + params.afrr_spread + 0.02 * up + spread.sample(&mut rng);
        let p_afrr_neg = p_id15 - params.afrr_spread - 0.02 * down + spread.sample(&mut rng);
        let p_mfrr_pos = p_id15 + params.mfrr_spread + 0.04 * up + spread.sample(&mut rng);
        let p_mfrr_neg = p_id15 - params.mfrr_spread - 0.04 * down + spread.sample(&mut rng);

        let mut s = MarketSnapshot {
            ts,
            v,
            e_afrr_pos,
            e_afrr_neg,
            e_mfrr_pos,
            e_mfrr_neg,
            p_afrr_pos,
            p_afrr_neg,
            p_mfrr_pos,
            p_mfrr_neg,
            p_voaa_pos: p_afrr_pos.min(p_mfrr_pos),
            p_voaa_neg: p_afrr_neg.max(p_mfrr_neg),
            p_id15,
            p_id60,
            p_da,
            l_id15: l15.sample(&mut rng),
            l_id60: l60.sample(&mut rng),
            p_observed: None,
        };
        let p = imbalance_price(&s, &params.constants).p_final;
        s.p_observed = Some(p);
        snapshots.push(s);
        prices.push(p);
    }
    FeatureFrame::new(snapshots, prices)
}
