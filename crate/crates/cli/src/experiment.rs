//! Data, folds and the per-run work shared by the experiment commands.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use anyhow::Context as _;
use mrinn_core::baselines::{LqrModel, MlpConfig, MlpModel, NaiveKind, NaiveModel};
use mrinn_core::dataset::{
    generate_synthetic, make_folds, make_windows, FeatureFrame, FoldSpec, FoldSplit, WindowSet, WindowSplit,
};
use mrinn_core::mrinn::{Ablation, Checkpoint, MrinnConfig, MrinnModel};
use mrinn_core::scaling::{UnitAssignment, UnitScalers};
use mrinn_core::training::{evaluate, grid_search, RunRecord, TrainConfig};
use mrinn_core::{Error, EvalReport, PricingConstants, Result};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::output::OutputDir;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Family {
    Mrinn(Ablation),
    Lqr,
    Mlp,
    Naive(NaiveKind),
}

impl Family {
    pub fn tag(self) -> String {
        match self {
            Family::Mrinn(a) => format!("mrinn-{}", a.tag()),
            Family::Lqr => "lqr".into(),
            Family::Mlp => "mlp".into(),
            Family::Naive(k) => format!("naive-{}", k.tag()),
        }
    }

    /// Baseline kinds as named in `baseline.kinds`.
    pub fn baseline(name: &str) -> Result<Self> {
        match name {
            "lqr" => Ok(Family::Lqr),
            "mlp" => Ok(Family::Mlp),
            other => other.parse::<NaiveKind>().map(Family::Naive),
        }
    }

    pub fn parse_tag(tag: &str) -> Result<Self> {
        if let Some(rest) = tag.strip_prefix("mrinn-") {
            return rest.parse().map(Family::Mrinn);
        }
        if let Some(rest) = tag.strip_prefix("naive-") {
            return rest.parse().map(Family::Naive);
        }
        Self::baseline(tag)
    }

    fn is_seeded(self) -> bool {
        !matches!(self, Family::Naive(_))
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

/// One training (or calibration) run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Job {
    pub family: Family,
    pub n: u32,
    pub m: u32,
    /// 1-based fold number.
    pub fold: usize,
    pub seed: u64,
}

impl Job {
    pub fn group(&self) -> String {
        format!("{}-n{}-m{}", self.family, self.n, self.m)
    }

    pub fn id(&self) -> String {
        format!("{}-f{}-s{}", self.group(), self.fold, self.seed)
    }
}

/// Entry of `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub id: String,
    pub group: String,
    pub model: String,
    pub fold: usize,
    pub seed: u64,
    pub n: u32,
    pub m: u32,
    pub dir: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub runs: Vec<RunEntry>,
}

/// Metrics of one finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub id: String,
    pub group: String,
    pub model: String,
    pub fold: usize,
    pub seed: u64,
    pub n: u32,
    pub m: u32,
    pub param_count: usize,
    /// 0 for untrained baselines.
    pub best_epoch: usize,
    pub val: EvalReport,
    pub test: EvalReport,
    pub seconds: f64,
}

impl RunResult {
    pub fn entry(&self) -> RunEntry {
        RunEntry {
            id: self.id.clone(),
            group: self.group.clone(),
            model: self.model.clone(),
            fold: self.fold,
            seed: self.seed,
            n: self.n,
            m: self.m,
            dir: format!("runs/{}", self.id),
        }
    }
}

/// Calibration report of a naive baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveRecord {
    pub model: String,
    pub fold: usize,
    pub uses_fallback: bool,
    pub val: EvalReport,
    pub test: EvalReport,
    pub seconds: f64,
}

pub struct Prepared {
    pub split: WindowSplit,
    pub scalers: UnitScalers,
}

pub struct Experiment {
    pub config: ExperimentConfig,
    pub frame: FeatureFrame,
    pub folds: Vec<FoldSplit>,
    /// Fold numbers selected by `folds.use`.
    pub selected: Vec<usize>,
    pub train: TrainConfig,
    pub constants: PricingConstants,
    windows: Mutex<BTreeMap<(u32, u32), WindowSet>>,
}

pub fn load_frame(config: &ExperimentConfig) -> Result<FeatureFrame> {
    let path = config.get("data.path");
    if path.is_empty() {
        let days: usize = config.value("synth.days")?;
        if days == 0 {
            return Err(Error::Config("synth.days must be at least 1".into()));
        }
        generate_synthetic(days, config.value("synth.seed")?, &config.synth_params()?)
    } else {
        let (frame, report) = FeatureFrame::load_csv(Path::new(path), config.load_options()?)?;
        log::info!(
            "{path}: {} rows read, {} dropped, {} filled",
            report.rows_read,
            report.dropped,
            report.filled
        );
        Ok(frame)
    }
}

impl Experiment {
    pub fn load(config: ExperimentConfig) -> Result<Self> {
        let constants = config.constants()?;
        let train = config.train_config()?;
        let frame = load_frame(&config)?;
        let spec = match config.get("folds.mode") {
            "paper" => FoldSpec::paper(),
            "proportional" => FoldSpec::proportional(&frame)?,
            other => {
                return Err(Error::Config(format!(
                    "`folds.mode`: expected paper or proportional, got `{other}`"
                )))
            }
        };
        let folds = make_folds(&frame, &spec)?;
        let selected: Vec<usize> = config.list("folds.use")?;
        for &f in &selected {
            if f == 0 || f > folds.len() {
                return Err(Error::Config(format!("`folds.use`: fold {f} does not exist (1..={})", folds.len())));
            }
        }
        Ok(Self {
            config,
            frame,
            folds,
            selected,
            train,
            constants,
            windows: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn windows(&self, n: u32, m: u32) -> Result<WindowSet> {
        let mut cache = self.windows.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(w) = cache.get(&(n, m)) {
            return Ok(w.clone());
        }
        let w = make_windows(&self.frame, n, m)?;
        cache.insert((n, m), w.clone());
        Ok(w)
    }

    /// Windows of one fold plus scalers fitted on its training rows.
    pub fn prepare(&self, fold: usize, n: u32, m: u32) -> Result<Prepared> {
        let f = self
            .folds
            .get(fold.wrapping_sub(1))
            .ok_or_else(|| Error::Config(format!("fold {fold} does not exist")))?;
        let split = f.windows(&self.windows(n, m)?);
        for (name, set) in [("train", &split.train), ("validation", &split.val), ("test", &split.test)] {
            if set.is_empty() {
                return Err(Error::Data(format!("fold {fold} has no {name} samples for N={n}, M={m}")));
            }
        }
        let scalers = UnitScalers::fit(UnitAssignment::default(), &f.train_frame(&self.frame))?;
        Ok(Prepared { split, scalers })
    }

    /// Every (fold, seed) run of `family` at one (N, M) cell.
    pub fn jobs(&self, family: Family, n: u32, m: u32) -> Vec<Job> {
        let seeds: &[u64] = if family.is_seeded() {
            &self.train.seeds
        } else {
            &self.train.seeds[..1]
        };
        let mut out = Vec::new();
        for &fold in &self.selected {
            for &seed in seeds {
                out.push(Job {
                    family,
                    n,
                    m,
                    fold,
                    seed,
                });
            }
        }
        out
    }

    fn grid<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>> {
        self.config.list(key)
    }

    /// Runs one job and writes its directory under `out`.
    pub fn run(&self, job: &Job, out: &OutputDir) -> anyhow::Result<RunResult> {
        let id = job.id();
        let started = Instant::now();
        let prepared = self.prepare(job.fold, job.n, job.m).with_context(|| format!("run {id}"))?;
        let mut files: Vec<(&str, serde_json::Value)> = Vec::new();
        let (param_count, best_epoch, val, test) = match job.family {
            Family::Naive(kind) => {
                let model = NaiveModel::fit(kind, &prepared.split.train).with_context(|| format!("run {id}"))?;
                let val = naive_report(&model, &prepared.split.val)?;
                let test = naive_report(&model, &prepared.split.test)?;
                let record = NaiveRecord {
                    model: job.family.tag(),
                    fold: job.fold,
                    uses_fallback: model.bands.uses_fallback(),
                    val,
                    test,
                    seconds: started.elapsed().as_secs_f64(),
                };
                files.push(("record.json", serde_json::to_value(&record)?));
                files.push(("model.json", serde_json::to_value(&model)?));
                (0, 0, val, test)
            }
            family => {
                let (records, model) = self.train_family(family, job, &prepared).with_context(|| format!("run {id}"))?;
                let best = records[0].clone();
                files.push(("record.json", serde_json::to_value(&best)?));
                if records.len() > 1 {
                    files.push(("grid.json", serde_json::to_value(&records)?));
                }
                files.push(("model.json", model));
                (best.param_count, best.best_epoch, best.val, best.test)
            }
        };
        out.write_run(&id, &files)?;
        log::info!("{id}: test AQL {:.4}", test.aql);
        Ok(RunResult {
            id,
            group: job.group(),
            model: job.family.tag(),
            fold: job.fold,
            seed: job.seed,
            n: job.n,
            m: job.m,
            param_count,
            best_epoch,
            val,
            test,
            seconds: started.elapsed().as_secs_f64(),
        })
    }

    /// Grid search of a trainable family; returns the ranked records and the
    /// serialized best model.
    fn train_family(&self, family: Family, job: &Job, p: &Prepared) -> Result<(Vec<RunRecord>, serde_json::Value)> {
        let seed = job.seed;
        match family {
            Family::Mrinn(ablation) => {
                let mut grid = Vec::new();
                for h in self.grid::<usize>("mrinn.h")? {
                    for n_layers in self.grid::<usize>("mrinn.n_layers")? {
                        grid.push(MrinnConfig {
                            h,
                            n_layers,
                            lookback: job.n,
                            horizon: job.m,
                            ablation,
                            seed,
                        });
                    }
                }
                let build = |c: &MrinnConfig| MrinnModel::new(*c, p.scalers.clone(), self.constants);
                let outcome = grid_search(&grid, build, &p.split, &self.train, seed, job.fold)?;
                let model = serde_json::to_value(Checkpoint::from_model(outcome.best_model()))?;
                Ok((outcome.runs, model))
            }
            Family::Mlp => {
                let mut grid = Vec::new();
                for hidden in self.grid::<usize>("mlp.hidden")? {
                    for n_layers in self.grid::<usize>("mlp.n_layers")? {
                        grid.push(MlpConfig {
                            hidden,
                            n_layers,
                            lookback: job.n,
                            seed,
                        });
                    }
                }
                let build = |c: &MlpConfig| MlpModel::new(*c, p.scalers.clone());
                let outcome = grid_search(&grid, build, &p.split, &self.train, seed, job.fold)?;
                let model = serde_json::to_value(outcome.best_model())?;
                Ok((outcome.runs, model))
            }
            Family::Lqr => {
                let grid = [serde_json::json!({ "family": "lqr" })];
                let build = |_: &serde_json::Value| LqrModel::new(p.scalers.clone());
                let outcome = grid_search(&grid, build, &p.split, &self.train, seed, job.fold)?;
                let model = serde_json::to_value(outcome.best_model())?;
                Ok((outcome.runs, model))
            }
            Family::Naive(_) => Err(Error::Config("naive baselines are calibrated, not trained".into())),
        }
    }

    /// Scores a stored model on the validation and test windows of its fold.
    pub fn rescore(&self, entry: &RunEntry, model: &serde_json::Value) -> Result<(EvalReport, EvalReport)> {
        let p = self.prepare(entry.fold, entry.n, entry.m)?;
        let both = |f: &dyn Fn(&WindowSet) -> Result<EvalReport>| -> Result<(EvalReport, EvalReport)> {
            Ok((f(&p.split.val)?, f(&p.split.test)?))
        };
        match Family::parse_tag(&entry.model)? {
            Family::Mrinn(_) => {
                let m = serde_json::from_value::<Checkpoint>(model.clone())?.into_model()?;
                both(&|w| evaluate(&m, w))
            }
            Family::Lqr => {
                let m: LqrModel = serde_json::from_value(model.clone())?;
                both(&|w| evaluate(&m, w))
            }
            Family::Mlp => {
                let m: MlpModel = serde_json::from_value(model.clone())?;
                both(&|w| evaluate(&m, w))
            }
            Family::Naive(_) => {
                let m: NaiveModel = serde_json::from_value(model.clone())?;
                both(&|w| naive_report(&m, w))
            }
        }
    }
}

pub fn naive_report(model: &NaiveModel, windows: &WindowSet) -> Result<EvalReport> {
    let forecasts: Vec<_> = windows.iter().map(|w| model.predict(&w)).collect();
    EvalReport::evaluate(&windows.targets(), &forecasts)
}

