//! Flat `key = value` experiment configuration.
//!
//! Sections are spelled as dotted key prefixes. Lists are comma separated.
//! Every key has a default; unknown keys are rejected so typos fail loudly.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use mrinn_core::dataset::{GapPolicy, LoadOptions, SynthParams};
use mrinn_core::training::TrainConfig;
use mrinn_core::{Error, PricingConstants, Result};

/// Keys that are not derived from a core type, with defaults and a one-line description.
pub const STATIC_KEYS: &[(&str, &str, &str)] = &[
    ("output.dir", "", "output directory under the output root; defaults to the command name"),
    ("data.path", "", "input CSV; empty means generate synthetic data"),
    ("data.strict", "true", "reject rows with invalid cells instead of dropping them"),
    ("data.gaps", "reject", "missing timestamps: reject | ffill"),
    ("synth.days", "365", "days of synthetic data"),
    ("synth.seed", "42", "generator seed"),
    ("folds.mode", "proportional", "paper calendar boundaries or proportional rescaling: paper | proportional"),
    ("folds.use", "1,2,3", "folds to run"),
    ("window.n", "0", "look-back N in minutes"),
    ("window.m", "15", "horizon M in minutes"),
    ("model.family", "mrinn", "model trained by `train`: mrinn | lqr | mlp"),
    ("mrinn.h", "8", "latent width grid"),
    ("mrinn.n_layers", "2", "trunk depth grid"),
    ("mrinn.ablation", "none", "component removed by `train`: none | drop_bal | drop_mkt | drop_scar"),
    ("mlp.hidden", "32", "hidden width grid"),
    ("mlp.n_layers", "2", "depth grid"),
    ("train.max_epochs", "70", "epoch limit"),
    ("train.batch_size", "1024", "samples per Adam step"),
    ("train.learning_rate", "0.001", "Adam step size"),
    ("train.beta1", "0.9", "Adam first-moment decay"),
    ("train.beta2", "0.999", "Adam second-moment decay"),
    ("train.epsilon", "1e-8", "Adam denominator offset"),
    ("train.patience", "10", "epochs without validation improvement before stopping"),
    ("train.shuffle", "true", "reshuffle training samples every epoch"),
    ("seeds", "0", "training seeds"),
    ("baseline.kinds", "price,id15,id60,lqr,mlp", "baselines run by `baseline`"),
    ("ablate.variants", "none,drop_bal,drop_mkt,drop_scar", "variants run by `ablate`"),
    ("sweep.n", "0,60,180,1440", "look-back values of the scaling sweep"),
    ("sweep.m", "15,30,45,60,120,180,360,540,720,1080,1440", "horizon values of the scaling sweep"),
    ("evaluate.from", "", "output directory of an earlier `train` whose checkpoints `evaluate` rescores"),
];

fn synth_defaults() -> Vec<(String, String)> {
    let value = serde_json::to_value(SynthParams::default()).expect("plain struct");
    let mut out = Vec::new();
    if let serde_json::Value::Object(map) = value {
        for (k, v) in map {
            if k == "constants" {
                continue;
            }
            let text = match v {
                serde_json::Value::String(s) => s,
                other => other.to_string(),
            };
            out.push((format!("synth.{k}"), text));
        }
    }
    out
}

/// Every known key with its default value.
pub fn defaults() -> BTreeMap<String, String> {
    let mut map: BTreeMap<String, String> = STATIC_KEYS
        .iter()
        .map(|(k, v, _)| (k.to_string(), v.to_string()))
        .collect();
    map.extend(synth_defaults());
    let c = PricingConstants::default();
    for name in PricingConstants::NAMES {
        map.insert(format!("constants.{name}"), c.get(name).unwrap_or_default().to_string());
    }
    map
}

/// Parses a document into `(key, value)` pairs in order of appearance.
pub fn parse_document(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", i + 1)))?;
        let key = key.trim().to_string();
        if out.iter().any(|(k, _)| *k == key) {
            return Err(Error::Config(format!("line {}: duplicate key `{key}`", i + 1)));
        }
        out.push((key, value.trim().to_string()));
    }
    Ok(out)
}

/// A fully resolved configuration: defaults overlaid with the file and then
/// with command-line `--set` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    values: BTreeMap<String, String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self { values: defaults() }
    }
}

impl ExperimentConfig {
    pub fn from_sources(file: Option<&Path>, sets: &[String]) -> Result<Self> {
        let mut config = Self::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let entries = parse_document(&text).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
                other => other,
            })?;
            for (k, v) in entries {
                config.set(&k, &v)?;
            }
        }
        for pair in sets {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects key=value, got `{pair}`")))?;
            config.set(k.trim(), v.trim())?;
        }
        Ok(config)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(Error::Config(format!("unknown key `{key}`"))),
        }
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("unregistered key {key}"))
    }

    pub fn value<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key);
        raw.parse()
            .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{raw}`")))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let raw = self.get(key);
        let items = raw
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::Config(format!("`{key}`: cannot parse list item `{s}`")))
            })
            .collect::<Result<Vec<T>>>()?;
        if items.is_empty() {
            return Err(Error::Config(format!("`{key}` must list at least one value")));
        }
        Ok(items)
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        match self.get(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            other => Err(Error::Config(format!("`{key}`: expected true or false, got `{other}`"))),
        }
    }

    /// `key = value` lines in key order.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn constants(&self) -> Result<PricingConstants> {
        let mut c = PricingConstants::default();
        for name in PricingConstants::NAMES {
            c.set(name, self.value(&format!("constants.{name}"))?)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn synth_params(&self) -> Result<SynthParams> {
        let mut map = serde_json::Map::new();
        for (key, default) in synth_defaults() {
            let field = key.trim_start_matches("synth.").to_string();
            let raw = self.get(&key);
            let value = if default.parse::<f64>().is_ok() {
                let x: f64 = self.value(&key)?;
                serde_json::json!(x)
            } else {
                serde_json::Value::String(raw.to_string())
            };
            map.insert(field, value);
        }
        map.insert("constants".into(), serde_json::to_value(self.constants()?)?);
        let params: SynthParams = serde_json::from_value(serde_json::Value::Object(map))
            .map_err(|e| Error::Config(format!("synth parameters: {e}")))?;
        params.validate()?;
        Ok(params)
    }

    pub fn load_options(&self) -> Result<LoadOptions> {
        let gaps = match self.get("data.gaps") {
            "reject" => GapPolicy::Reject,
            "ffill" => GapPolicy::ForwardFill,
            other => return Err(Error::Config(format!("`data.gaps`: expected reject or ffill, got `{other}`"))),
        };
        Ok(LoadOptions {
            strict: self.bool("data.strict")?,
            gaps,
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let config = TrainConfig {
            max_epochs: self.value("train.max_epochs")?,
            batch_size: self.value("train.batch_size")?,
            learning_rate: self.value("train.learning_rate")?,
            beta1: self.value("train.beta1")?,
            beta2: self.value("train.beta2")?,
            epsilon: self.value("train.epsilon")?,
            patience: self.value("train.patience")?,
            seeds: self.list("seeds")?,
            shuffle: self.bool("train.shuffle")?,
        };
        config.validate()?;
        Ok(config)
    }
}
