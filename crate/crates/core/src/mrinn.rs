//! Market-rule-informed quantile network.
//!
//! Every raw feature is projected into an `h`-channel latent vector. The
//! settlement rules are then re-assembled on those latents with the soft
//! operators, a small tanh trunk refines the result and a hierarchical head
//! emits seven ordered quantiles.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{DenseLayer, LayerAllocator, Tape, Var};
use crate::dataset::{check_minutes, n_lags, Window};
use crate::error::{Error, Result};
use crate::metrics::MEDIAN_INDEX;
use crate::model::{check_params, feature_scalers, scaled_lags, QuantileModel};
use crate::pricing::PricingConstants;
use crate::scaling::{RobustScalerParams, UnitScalers};
use crate::schema::Feature;
use crate::soft_ops::{
    add, broadcast, map, mul, safe_div, smooth_abs, soft_cond, soft_max, soft_max3, soft_min, soft_min3, soft_sign,
    sub, LatentVector, EPSILON,
};

/// Which price component, if any, is removed from the latent graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    None,
    DropBal,
    DropMkt,
    DropScar,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::None, Ablation::DropBal, Ablation::DropMkt, Ablation::DropScar];

    pub fn tag(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::DropBal => "drop_bal",
            Ablation::DropMkt => "drop_mkt",
            Ablation::DropScar => "drop_scar",
        }
    }

    /// Row label of the ablation table.
    pub fn label(self) -> &'static str {
        match self {
            Ablation::None => "All",
            Ablation::DropBal => "w/o P_bal",
            Ablation::DropMkt => "w/o P_mkt",
            Ablation::DropScar => "w/o P_scar",
        }
    }

    fn keeps_bal(self) -> bool {
        self != Ablation::DropBal
    }

    fn keeps_mkt(self) -> bool {
        self != Ablation::DropMkt
    }

    fn keeps_scar(self) -> bool {
        self != Ablation::DropScar
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.tag() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation `{s}` (expected none, drop_bal, drop_mkt or drop_scar)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MrinnConfig {
    pub h: usize,
    pub n_layers: usize,
    /// Lookback N in minutes.
    pub lookback: u32,
    /// Horizon M in minutes.
    pub horizon: u32,
    pub ablation: Ablation,
    pub seed: u64,
}

impl Default for MrinnConfig {
    fn default() -> Self {
        Self {
            h: 8,
            n_layers: 2,
            lookback: 0,
            horizon: 15,
            ablation: Ablation::None,
            seed: 0,
        }
    }
}

impl MrinnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.h == 0 {
            return Err(Error::Config("h must be at least 1".into()));
        }
        if self.n_layers == 0 {
            return Err(Error::Config("n_layers must be at least 1".into()));
        }
        check_minutes("lookback N", self.lookback)?;
        check_minutes("horizon M", self.horizon)?;
        if self.horizon == 0 {
            return Err(Error::Config("horizon M must be at least 15 minutes".into()));
        }
        Ok(())
    }

    pub fn n_lags(&self) -> usize {
        n_lags(self.lookback)
    }

    /// Input schema: every feature except those used only by an ablated branch.
    pub fn features(&self) -> Vec<Feature> {
        Feature::ALL
            .into_iter()
            .filter(|f| self.ablation.keeps_bal() || !f.is_balancing())
            .collect()
    }
}

/// Features whose latent is passed through softplus to stay non-negative.
fn is_non_negative(f: Feature) -> bool {
    matches!(
        f,
        Feature::EAfrrPos | Feature::EAfrrNeg | Feature::EMfrrPos | Feature::EMfrrNeg | Feature::LId15 | Feature::LId60
    )
}

/// Placement of every dense layer in the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub projections: Vec<(Feature, DenseLayer)>,
    pub balancing_selector: Option<DenseLayer>,
    pub ramp_selector: Option<DenseLayer>,
    pub scarcity_selector: Option<DenseLayer>,
    pub final_selector: DenseLayer,
    pub trunk: Vec<DenseLayer>,
    pub heads: Vec<DenseLayer>,
    pub param_count: usize,
}

impl Architecture {
    pub fn new(config: &MrinnConfig) -> Result<Self> {
        config.validate()?;
        let h = config.h;
        let mut alloc = LayerAllocator::new();
        let projections = config
            .features()
            .into_iter()
            .map(|f| (f, alloc.dense(config.n_lags(), h)))
            .collect();
        let a = config.ablation;
        let balancing_selector = a.keeps_bal().then(|| alloc.dense(3 * h, 6));
        let ramp_selector = a.keeps_mkt().then(|| alloc.dense(h, 3));
        let scarcity_selector = a.keeps_scar().then(|| alloc.dense(h, 3));
        let final_selector = alloc.dense(h, 2);
        let trunk = (0..config.n_layers).map(|_| alloc.dense(h, h)).collect();
        let heads = (0..7).map(|_| alloc.dense(h, 1)).collect();
        Ok(Self {
            projections,
            balancing_selector,
            ramp_selector,
            scarcity_selector,
            final_selector,
            trunk,
            heads,
            param_count: alloc.total(),
        })
    }

    fn layers(&self) -> Vec<DenseLayer> {
        let mut all: Vec<DenseLayer> = self.projections.iter().map(|(_, l)| *l).collect();
        all.extend(self.balancing_selector);
        all.extend(self.ramp_selector);
        all.extend(self.scarcity_selector);
        all.push(self.final_selector);
        all.extend(&self.trunk);
        all.extend(&self.heads);
        all
    }
}

/// Glorot-uniform weights and zero biases.
pub fn glorot_init(layers: &[DenseLayer], total: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = vec![0.0; total];
    for layer in layers {
        let limit = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
        for row in 0..layer.outputs {
            for col in 0..layer.inputs {
                params[layer.weight_index(row, col)] = dist.sample(&mut rng);
            }
        }
    }
    params
}

/// Soft-operator sites instantiated by one latent pricing pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct SiteAudit {
    pub final_cond: usize,
    pub six_way_cond: usize,
    pub three_way_cond: usize,
    pub soft_max_floor: usize,
    pub soft_min_weight: usize,
    pub safe_div: usize,
    pub smooth_abs: usize,
    pub soft_sign: usize,
    pub extremum: usize,
}

/// Rule constants mapped into the scaled space.
#[derive(Debug, Clone, Copy)]
struct ScaledConstants {
    c: [f64; 11],
}

impl ScaledConstants {
    fn new(scalers: &UnitScalers, constants: &PricingConstants) -> Result<Self> {
        let mut c = [0.0; 11];
        for (slot, name) in c.iter_mut().zip(PricingConstants::NAMES) {
            *slot = scalers.scaled_constant(name, constants)?;
        }
        Ok(Self { c })
    }

    /// Reciprocal of a scaled divisor, kept finite when it lands near zero.
    fn recip(x: f64) -> f64 {
        1.0 / (x * x + EPSILON).sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct MrinnModel {
    pub config: MrinnConfig,
    pub arch: Architecture,
    pub params: Vec<f64>,
    pub scalers: UnitScalers,
    pub constants: PricingConstants,
    features: Vec<Feature>,
    input_scalers: Vec<RobustScalerParams>,
    scaled: ScaledConstants,
}

fn scale_vec(tape: &mut Tape, a: &[Var], k: f64) -> Result<LatentVector> {
    map(tape, a, |t, x| t.scale(x, k))
}

/// Hierarchical quantile head: the median plus softplus increments applied
/// outward in both directions.
pub fn quantile_head(tape: &mut Tape, raw: &[Var; 7]) -> Result<[Var; 7]> {
    let mut out = [raw[MEDIAN_INDEX]; 7];
    for k in (0..MEDIAN_INDEX).rev() {
        let step = tape.softplus(raw[k])?;
        out[k] = tape.sub(out[k + 1], step)?;
    }
    for k in MEDIAN_INDEX + 1..7 {
        let step = tape.softplus(raw[k])?;
        out[k] = tape.add(out[k - 1], step)?;
    }
    Ok(out)
}

impl MrinnModel {
    pub fn new(config: MrinnConfig, scalers: UnitScalers, constants: PricingConstants) -> Result<Self> {
        let arch = Architecture::new(&config)?;
        let params = glorot_init(&arch.layers(), arch.param_count, config.seed);
        Self::from_parts(config, arch, params, scalers, constants)
    }

    fn from_parts(
        config: MrinnConfig,
        arch: Architecture,
        params: Vec<f64>,
        scalers: UnitScalers,
        constants: PricingConstants,
    ) -> Result<Self> {
        constants.validate()?;
        if params.len() != arch.param_count {
            return Err(Error::Dimension {
                expected: arch.param_count,
                actual: params.len(),
            });
        }
        let features = config.features();
        let input_scalers = feature_scalers(&scalers, &features)?;
        let scaled = ScaledConstants::new(&scalers, &constants)?;
        Ok(Self {
            config,
            arch,
            params,
            scalers,
            constants,
            features,
            input_scalers,
            scaled,
        })
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    /// Projects each feature's scaled lag vector into `h` channels.
    pub fn project_features(
        &self,
        tape: &mut Tape,
        params: &[Var],
        lags: &[Vec<f64>],
    ) -> Result<BTreeMap<Feature, LatentVector>> {
        if lags.len() != self.arch.projections.len() {
            return Err(Error::Dimension {
                expected: self.arch.projections.len(),
                actual: lags.len(),
            });
        }
        let mut latents = BTreeMap::new();
        for ((feature, layer), values) in self.arch.projections.iter().zip(lags) {
            if values.len() != layer.inputs {
                return Err(Error::Dimension {
                    expected: layer.inputs,
                    actual: values.len(),
                });
            }
            let x = tape.leaves(values)?;
            let mut z = layer.apply(tape, params, &x)?;
            if is_non_negative(*feature) {
                z = map(tape, &z, |t, v| t.softplus(v))?;
            }
            latents.insert(*feature, z);
        }
        Ok(latents)
    }

    /// Latent imbalance price assembled from the settlement rules.
    pub fn latent_price(
        &self,
        tape: &mut Tape,
        params: &[Var],
        latents: &BTreeMap<Feature, LatentVector>,
    ) -> Result<(LatentVector, SiteAudit)> {
        let lat = |f: Feature| -> Result<&LatentVector> {
            latents.get(&f).ok_or_else(|| {
                Error::Config(format!(
                    "feature `{f}` is not an input under ablation `{}`",
                    self.config.ablation
                ))
            })
        };
        let h = self.config.h;
        let c = &self.scaled.c;
        let mut audit = SiteAudit::default();
        let v = lat(Feature::V)?.clone();
        let mut components: Vec<LatentVector> = Vec::with_capacity(3);

        if let Some(selector) = &self.arch.balancing_selector {
            let e_pos = add(tape, lat(Feature::EAfrrPos)?, lat(Feature::EMfrrPos)?)?;
            let e_neg = add(tape, lat(Feature::EAfrrNeg)?, lat(Feature::EMfrrNeg)?)?;
            let a = mul(tape, lat(Feature::EAfrrPos)?, lat(Feature::PAfrrPos)?)?;
            let b = mul(tape, lat(Feature::EMfrrPos)?, lat(Feature::PMfrrPos)?)?;
            let num_pos = add(tape, &a, &b)?;
            let a = mul(tape, lat(Feature::EAfrrNeg)?, lat(Feature::PAfrrNeg)?)?;
            let b = mul(tape, lat(Feature::EMfrrNeg)?, lat(Feature::PMfrrNeg)?)?;
            let num_neg = add(tape, &a, &b)?;
            let act_pos = safe_div(tape, &num_pos, &e_pos)?;
            let act_neg = safe_div(tape, &num_neg, &e_neg)?;
            audit.safe_div += 2;
            let voaa_pos = lat(Feature::PVoaaPos)?;
            let voaa_neg = lat(Feature::PVoaaNeg)?;
            let bal = soft_cond(
                tape,
                params,
                selector,
                &[&act_pos, &act_neg, &act_pos, &act_neg, voaa_pos, voaa_neg],
                &[&e_pos, &e_neg, &v],
            )?;
            audit.six_way_cond += 1;
            components.push(bal.output);
        }

        let keeps_mkt = self.arch.ramp_selector.is_some();
        let keeps_scar = self.arch.scarcity_selector.is_some();
        let (id15, id60, da) = (lat(Feature::PId15)?, lat(Feature::PId60)?, lat(Feature::PDa)?);
        let mut weights = None;
        if keeps_mkt || keeps_scar {
            let one = broadcast(tape, 1.0, h)?;
            let r15 = scale_vec(tape, lat(Feature::LId15)?, ScaledConstants::recip(c[5]))?;
            let w15 = soft_min(tape, &r15, &one)?;
            let r60 = scale_vec(tape, lat(Feature::LId60)?, ScaledConstants::recip(c[6]))?;
            let rest = sub(tape, &one, &w15)?;
            let w60 = soft_min(tape, &r60, &rest)?;
            audit.soft_min_weight += 2;
            let wda = sub(tape, &rest, &w60)?;
            weights = Some([w15, w60, wda]);
        }

        if let Some(selector) = &self.arch.ramp_selector {
            let [w15, w60, wda] = weights.as_ref().expect("weights built with the market branch");
            let lo = broadcast(tape, -1.0, h)?;
            let hi = broadcast(tape, 1.0, h)?;
            let mid = scale_vec(tape, &v, ScaledConstants::recip(c[4]))?;
            let ramp = soft_cond(tape, params, selector, &[&lo, &mid, &hi], &[&v])?;
            audit.three_way_cond += 1;
            let mut marked = Vec::with_capacity(3);
            for (p, offset) in [(id15, c[1]), (id60, c[2]), (da, c[3])] {
                let magnitude = smooth_abs(tape, p)?;
                audit.smooth_abs += 1;
                let share = scale_vec(tape, &magnitude, c[0])?;
                let floor_offset = broadcast(tape, offset, h)?;
                let floor = soft_max(tape, &floor_offset, &share)?;
                audit.soft_max_floor += 1;
                let shift = mul(tape, &ramp.output, &floor)?;
                marked.push(add(tape, p, &shift)?);
            }
            let mut mkt = mul(tape, w15, &marked[0])?;
            for (w, m) in [(w60, &marked[1]), (wda, &marked[2])] {
                let term = mul(tape, w, m)?;
                mkt = add(tape, &mkt, &term)?;
            }
            components.push(mkt);
        }

        if let Some(selector) = &self.arch.scarcity_selector {
            let [w15, w60, wda] = weights.as_ref().expect("weights built with the scarcity branch");
            let mut base = mul(tape, w15, id15)?;
            for (w, p) in [(w60, id60), (wda, da)] {
                let term = mul(tape, w, p)?;
                base = add(tape, &base, &term)?;
            }
            let abs_v = smooth_abs(tape, &v)?;
            audit.smooth_abs += 1;
            let sgn = soft_sign(tape, &v)?;
            audit.soft_sign += 1;
            let width = ScaledConstants::recip(c[9] - c[7]);
            let frac = map(tape, &abs_v, |t, x| t.affine(x, width, -c[7] * width))?;
            let cube = map(tape, &frac, |t, x| {
                let sq = t.mul(x, x)?;
                t.mul(sq, x)
            })?;
            let signed = mul(tape, &sgn, &cube)?;
            let cubic_adj = scale_vec(tape, &signed, c[10])?;
            let cubic = add(tape, &base, &cubic_adj)?;
            let cap = ((c[8] - c[7]) * width).powi(3) * c[10];
            let cap_adj = scale_vec(tape, &sgn, cap)?;
            let capped = add(tape, &base, &cap_adj)?;
            let scar = soft_cond(tape, params, selector, &[&base, &cubic, &capped], &[&abs_v])?;
            audit.three_way_cond += 1;
            components.push(scar.output);
        }

        let (low, high) = match components.as_slice() {
            [a, b, c] => (soft_min3(tape, a, b, c)?, soft_max3(tape, a, b, c)?),
            [a, b] => (soft_min(tape, a, b)?, soft_max(tape, a, b)?),
            _ => return Err(Error::Config("at least two price components are required".into())),
        };
        audit.extremum += 2;
        let chosen = soft_cond(tape, params, &self.arch.final_selector, &[&low, &high], &[&v])?;
        audit.final_cond += 1;
        let price = add(tape, &chosen.output, lat(Feature::Price)?)?;
        Ok((price, audit))
    }

    /// Trunk plus hierarchical head on a latent price.
    pub fn head(&self, tape: &mut Tape, params: &[Var], latent: &[Var]) -> Result<[Var; 7]> {
        let mut z = latent.to_vec();
        for layer in &self.arch.trunk {
            let pre = layer.apply(tape, params, &z)?;
            z = map(tape, &pre, |t, x| t.tanh(x))?;
        }
        let mut raw = [z[0]; 7];
        for (slot, layer) in raw.iter_mut().zip(&self.arch.heads) {
            *slot = layer.apply(tape, params, &z)?[0];
        }
        quantile_head(tape, &raw)
    }

    /// Full scaled forward pass from scaled lag vectors in schema order.
    pub fn record_scaled(&self, tape: &mut Tape, params: &[Var], lags: &[Vec<f64>]) -> Result<[Var; 7]> {
        check_params(self.arch.param_count, params)?;
        let latents = self.project_features(tape, params, lags)?;
        let (price, _) = self.latent_price(tape, params, &latents)?;
        self.head(tape, params, &price)
    }

    pub fn scale_window(&self, window: &Window<'_>) -> Result<Vec<Vec<f64>>> {
        if window.lags(Feature::V).len() != self.config.n_lags() {
            return Err(Error::Dimension {
                expected: self.config.n_lags(),
                actual: window.lags(Feature::V).len(),
            });
        }
        Ok(scaled_lags(window, &self.features, &self.input_scalers))
    }

    /// Structural audit of the latent graph.
    pub fn audit(&self) -> Result<SiteAudit> {
        let mut tape = Tape::new();
        let params = tape.leaves(&self.params)?;
        let lags = vec![vec![0.0; self.config.n_lags()]; self.features.len()];
        let latents = self.project_features(&mut tape, &params, &lags)?;
        Ok(self.latent_price(&mut tape, &params, &latents)?.1)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&Checkpoint::from_model(self))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let checkpoint: Checkpoint = serde_json::from_str(&text)?;
        checkpoint.into_model()
    }
}

/// A model built from `config` with one price component removed.
pub fn ablate(
    config: &MrinnConfig,
    ablation: Ablation,
    scalers: UnitScalers,
    constants: PricingConstants,
) -> Result<MrinnModel> {
    if ablation == Ablation::None {
        return Err(Error::Config("ablate needs drop_bal, drop_mkt or drop_scar".into()));
    }
    MrinnModel::new(MrinnConfig { ablation, ..*config }, scalers, constants)
}

impl QuantileModel for MrinnModel {
    fn name(&self) -> String {
        format!(
            "mrinn h={} n_layers={} N={} M={} ablation={}",
            self.config.h, self.config.n_layers, self.config.lookback, self.config.horizon, self.config.ablation
        )
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn scalers(&self) -> &UnitScalers {
        &self.scalers
    }

    fn record(&self, tape: &mut Tape, params: &[Var], window: &Window<'_>) -> Result<[Var; 7]> {
        let lags = self.scale_window(window)?;
        self.record_scaled(tape, params, &lags)
    }
}

pub const CHECKPOINT_FORMAT: &str = "mrinn-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk model: a JSON document with the configuration, fitted scalers,
/// rule constants and the flat parameter vector in layer order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: MrinnConfig,
    pub scalers: UnitScalers,
    pub constants: PricingConstants,
    pub param_count: usize,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn from_model(model: &MrinnModel) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: model.config,
            scalers: model.scalers.clone(),
            constants: model.constants,
            param_count: model.arch.param_count,
            params: model.params.clone(),
        }
    }

    pub fn into_model(self) -> Result<MrinnModel> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Schema(format!(
                "unsupported checkpoint `{}` version {}",
                self.format, self.version
            )));
        }
        let arch = Architecture::new(&self.config)?;
        if arch.param_count != self.param_count {
            return Err(Error::Dimension {
                expected: arch.param_count,
                actual: self.param_count,
            });
        }
        MrinnModel::from_parts(self.config, arch, self.params, self.scalers, self.constants)
    }
}
