//! The subcommands. Each one resolves its config, writes it next to its
//! outputs and leaves a manifest of every run it performed.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _};
use mrinn_core::dataset::{format_ts, generate_synthetic, FeatureFrame, LoadOptions};
use mrinn_core::mrinn::Ablation;
use mrinn_core::training::Stat;
use mrinn_core::{imbalance_price, EvalReport, PricingConstants};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::experiment::{Experiment, Family, Job, Manifest, RunEntry, RunResult};
use crate::output::{csv_bytes, OutputDir};

pub const PRICE_HEADER: [&str; 15] = [
    "ts", "p", "p_bal", "p_mkt", "p_scar", "p_base", "p_act_pos", "p_act_neg", "i_pos", "i_neg", "w_id15",
    "w_id60", "w_da", "ramp", "p_final",
];

fn num(x: f64) -> String {
    x.to_string()
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn flag(b: bool) -> String {
    if b { "1" } else { "0" }.into()
}

fn write_to(path: Option<&Path>, bytes: &[u8]) -> anyhow::Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            let tmp = p.with_extension("tmp");
            fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
            fs::rename(&tmp, p).with_context(|| format!("renaming into {}", p.display()))?;
        }
        None => std::io::stdout().lock().write_all(bytes)?,
    }
    Ok(())
}

/// Applies the settlement engine to every row of a market-data CSV.
pub fn price(input: &Path, constants: Option<&Path>, output: Option<&Path>, lenient: bool) -> anyhow::Result<()> {
    let c = match constants {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| mrinn_core::Error::io(path, e))?;
            PricingConstants::parse_overrides(&text)?
        }
        None => PricingConstants::default(),
    };
    let options = if lenient { LoadOptions::lenient() } else { LoadOptions::strict() };
    let (frame, report) = FeatureFrame::load_csv(input, options)?;
    if report.dropped > 0 || report.filled > 0 {
        log::warn!("{}: {} rows dropped, {} filled", input.display(), report.dropped, report.filled);
    }
    let rows: Vec<Vec<String>> = frame
        .snapshots()
        .iter()
        .zip(frame.prices())
        .map(|(s, &p)| {
            let b = imbalance_price(s, &c);
            vec![
                format_ts(s.ts),
                num(p),
                num(b.p_bal),
                num(b.p_mkt),
                num(b.p_scar),
                num(b.p_base),
                opt(b.p_act_pos),
                opt(b.p_act_neg),
                flag(b.i_pos),
                flag(b.i_neg),
                num(b.w_id15),
                num(b.w_id60),
                num(b.w_da),
                num(b.ramp_value),
                num(b.p_final),
            ]
        })
        .collect();
    write_to(output, &csv_bytes(&PRICE_HEADER, &rows)?)
}

/// Writes a synthetic market-data CSV.
pub fn synth(config: &ExperimentConfig, output: Option<&Path>) -> anyhow::Result<()> {
    let days: usize = config.value("synth.days")?;
    if days == 0 {
        return Err(mrinn_core::Error::Config("synth.days must be at least 1".into()).into());
    }
    let frame = generate_synthetic(days, config.value("synth.seed")?, &config.synth_params()?)?;
    let mut bytes = Vec::new();
    frame.write_csv(&mut bytes)?;
    write_to(output, &bytes)
}

fn open_output(root: &Path, config: &ExperimentConfig, command: &str) -> anyhow::Result<OutputDir> {
    let name = match config.get("output.dir") {
        "" => command,
        dir => dir,
    };
    let out = OutputDir::create(root.join(name))?;
    out.write("config.txt", config.render().as_bytes())?;
    Ok(out)
}

/// Runs every job, writing each run directory as soon as it finishes.
/// Results come back sorted by run id.
fn run_jobs(exp: &Experiment, jobs: &[Job], out: &OutputDir) -> anyhow::Result<Vec<RunResult>> {
    let results: Vec<anyhow::Result<RunResult>> = jobs.par_iter().map(|job| exp.run(job, out)).collect();
    let mut done = results.into_iter().collect::<anyhow::Result<Vec<_>>>()?;
    done.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(done)
}

#[derive(Serialize)]
struct Metrics<'a> {
    id: &'a str,
    model: &'a str,
    fold: usize,
    seed: u64,
    n: u32,
    m: u32,
    param_count: usize,
    best_epoch: usize,
    val: EvalReport,
    test: EvalReport,
}

struct Group<'a> {
    name: &'a str,
    runs: Vec<&'a RunResult>,
}

impl Group<'_> {
    fn stat(&self, f: fn(&EvalReport) -> f64) -> Stat {
        Stat::of(&self.runs.iter().map(|r| f(&r.test)).collect::<Vec<_>>())
    }
}

fn groups(results: &[RunResult]) -> Vec<Group<'_>> {
    let mut out: Vec<Group<'_>> = Vec::new();
    for r in results {
        match out.iter_mut().find(|g| g.name == r.group) {
            Some(g) => g.runs.push(r),
            None => out.push(Group {
                name: &r.group,
                runs: vec![r],
            }),
        }
    }
    out
}

/// Writes `manifest.json`, `metrics.json`, `summary.csv` and `aggregate.csv`.
fn write_tables(out: &OutputDir, command: &str, results: &[RunResult]) -> anyhow::Result<()> {
    let manifest = Manifest {
        command: command.into(),
        runs: results.iter().map(RunResult::entry).collect(),
    };
    out.write_json("manifest.json", &manifest)?;
    let metrics: Vec<Metrics<'_>> = results
        .iter()
        .map(|r| Metrics {
            id: &r.id,
            model: &r.model,
            fold: r.fold,
            seed: r.seed,
            n: r.n,
            m: r.m,
            param_count: r.param_count,
            best_epoch: r.best_epoch,
            val: r.val,
            test: r.test,
        })
        .collect();
    out.write_json("metrics.json", &metrics)?;
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|r| {
            vec![
                r.id.clone(),
                r.group.clone(),
                r.model.clone(),
                r.fold.to_string(),
                r.seed.to_string(),
                r.n.to_string(),
                r.m.to_string(),
                r.param_count.to_string(),
                r.best_epoch.to_string(),
                num(r.val.aql),
                num(r.test.aql),
                num(r.test.aqcr),
                num(r.test.mae),
                num(r.test.rmse),
            ]
        })
        .collect();
    out.write_csv(
        "summary.csv",
        &[
            "run_id", "group", "model", "fold", "seed", "n", "m", "param_count", "best_epoch", "val_aql", "test_aql",
            "test_aqcr", "test_mae", "test_rmse",
        ],
        &rows,
    )?;
    let rows: Vec<Vec<String>> = groups(results)
        .iter()
        .map(|g| {
            let mut row = vec![g.name.to_string(), g.runs.len().to_string()];
            for f in [
                |e: &EvalReport| e.aql,
                |e: &EvalReport| e.aqcr,
                |e: &EvalReport| e.mae,
                |e: &EvalReport| e.rmse,
            ] {
                let s = g.stat(f);
                row.push(num(s.mean));
                row.push(num(s.std));
            }
            row
        })
        .collect();
    out.write_csv(
        "aggregate.csv",
        &[
            "group", "runs", "aql_mean", "aql_std", "aqcr_mean", "aqcr_std", "mae_mean", "mae_std", "rmse_mean",
            "rmse_std",
        ],
        &rows,
    )
}

fn train_family(config: &ExperimentConfig) -> anyhow::Result<Family> {
    Ok(match config.get("model.family") {
        "mrinn" => Family::Mrinn(config.value("mrinn.ablation")?),
        other => Family::baseline(other)?,
    })
}

fn window(config: &ExperimentConfig) -> anyhow::Result<(u32, u32)> {
    Ok((config.value("window.n")?, config.value("window.m")?))
}

/// Trains `model.family` at (`window.n`, `window.m`) on every selected fold and seed.
pub fn train(root: &Path, config: ExperimentConfig) -> anyhow::Result<PathBuf> {
    let family = train_family(&config)?;
    let (n, m) = window(&config)?;
    let exp = Experiment::load(config)?;
    let out = open_output(root, &exp.config, "train")?;
    let results = run_jobs(&exp, &exp.jobs(family, n, m), &out)?;
    write_tables(&out, "train", &results)?;
    Ok(out.path)
}

/// Calibrates or trains every kind in `baseline.kinds`.
pub fn baseline(root: &Path, config: ExperimentConfig) -> anyhow::Result<PathBuf> {
    let kinds: Vec<String> = config.list("baseline.kinds")?;
    let families = kinds
        .iter()
        .map(|k| Family::baseline(k))
        .collect::<mrinn_core::Result<Vec<_>>>()?;
    let (n, m) = window(&config)?;
    let exp = Experiment::load(config)?;
    let out = open_output(root, &exp.config, "baseline")?;
    let jobs: Vec<Job> = families.iter().flat_map(|&f| exp.jobs(f, n, m)).collect();
    let results = run_jobs(&exp, &jobs, &out)?;
    write_tables(&out, "baseline", &results)?;

    #[derive(Serialize)]
    struct KindReport {
        model: String,
        runs: usize,
        test: EvalReport,
    }
    let reports: Vec<KindReport> = families
        .iter()
        .map(|f| {
            let tag = f.tag();
            let runs: Vec<&RunResult> = results.iter().filter(|r| r.model == tag).collect();
            KindReport {
                model: tag,
                runs: runs.len(),
                test: mean_report(&runs),
            }
        })
        .collect();
    out.write_json("reports.json", &reports)?;
    Ok(out.path)
}

/// Test metrics averaged over runs; `n` is the total sample count.
fn mean_report(runs: &[&RunResult]) -> EvalReport {
    let mean = |f: fn(&EvalReport) -> f64| Stat::of(&runs.iter().map(|r| f(&r.test)).collect::<Vec<_>>()).mean;
    EvalReport {
        aql: mean(|e| e.aql),
        aqcr: mean(|e| e.aqcr),
        mae: mean(|e| e.mae),
        rmse: mean(|e| e.rmse),
        n: runs.iter().map(|r| r.test.n).sum(),
    }
}

/// 1-based ranks by ascending value, ties sharing the lower rank.
fn ranks(values: &[f64]) -> Vec<usize> {
    values
        .iter()
        .map(|v| 1 + values.iter().filter(|w| w.total_cmp(v).is_lt()).count())
        .collect()
}

/// Trains each variant in `ablate.variants` and ranks them by mean test AQL.
pub fn ablate(root: &Path, config: ExperimentConfig) -> anyhow::Result<PathBuf> {
    let variants: Vec<Ablation> = config.list("ablate.variants")?;
    let (n, m) = window(&config)?;
    let exp = Experiment::load(config)?;
    let out = open_output(root, &exp.config, "ablate")?;
    let jobs: Vec<Job> = variants.iter().flat_map(|&a| exp.jobs(Family::Mrinn(a), n, m)).collect();
    let results = run_jobs(&exp, &jobs, &out)?;
    write_tables(&out, "ablate", &results)?;
    let reports: Vec<(Ablation, usize, usize, EvalReport)> = variants
        .iter()
        .map(|&a| {
            let tag = Family::Mrinn(a).tag();
            let runs: Vec<&RunResult> = results.iter().filter(|r| r.model == tag).collect();
            (a, runs.len(), runs[0].param_count, mean_report(&runs))
        })
        .collect();
    let rank = ranks(&reports.iter().map(|r| r.3.aql).collect::<Vec<_>>());
    let rows: Vec<Vec<String>> = reports
        .iter()
        .zip(rank)
        .map(|((a, runs, params, e), rank)| {
            vec![
                a.tag().to_string(),
                a.label().to_string(),
                runs.to_string(),
                params.to_string(),
                num(e.aql),
                num(e.aqcr),
                num(e.mae),
                num(e.rmse),
                rank.to_string(),
            ]
        })
        .collect();
    out.write_csv(
        "ablation.csv",
        &["variant", "label", "runs", "params", "aql", "aqcr", "mae", "rmse", "rank"],
        &rows,
    )?;
    Ok(out.path)
}

/// Average ranks, ties sharing the mean of the positions they span.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .map(|v| {
            let below = values.iter().filter(|w| w.total_cmp(v).is_lt()).count() as f64;
            let equal = values.iter().filter(|w| w.total_cmp(v).is_eq()).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

/// Spearman rank correlation; NaN when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// One `model.family` run per (N, M) cell of `sweep.n` × `sweep.m`.
pub fn sweep(root: &Path, config: ExperimentConfig) -> anyhow::Result<PathBuf> {
    let family = train_family(&config)?;
    let ns: Vec<u32> = config.list("sweep.n")?;
    let ms: Vec<u32> = config.list("sweep.m")?;
    let exp = Experiment::load(config)?;
    let out = open_output(root, &exp.config, "sweep")?;
    let cells: Vec<(u32, u32)> = ns.iter().flat_map(|&n| ms.iter().map(move |&m| (n, m))).collect();
    let jobs: Vec<Job> = cells.iter().flat_map(|&(n, m)| exp.jobs(family, n, m)).collect();
    let results = run_jobs(&exp, &jobs, &out)?;
    write_tables(&out, "sweep", &results)?;
    let mut rows = Vec::new();
    let mut by_n: Vec<(u32, Vec<f64>, Vec<f64>)> = Vec::new();
    for &(n, m) in &cells {
        let runs: Vec<&RunResult> = results.iter().filter(|r| r.n == n && r.m == m).collect();
        let e = mean_report(&runs);
        let seconds: f64 = runs.iter().map(|r| r.seconds).sum();
        rows.push(vec![n.to_string(), m.to_string(), num(e.aql), num(e.mae), num(e.rmse), format!("{seconds:.3}")]);
        match by_n.iter_mut().find(|(k, _, _)| *k == n) {
            Some((_, xs, ys)) => {
                xs.push(m as f64);
                ys.push(e.aql);
            }
            None => by_n.push((n, vec![m as f64], vec![e.aql])),
        }
    }
    out.write_csv("sweep.csv", &["n", "m", "aql", "mae", "rmse", "seconds"], &rows)?;
    let scaling: Vec<Vec<String>> = by_n
        .iter()
        .map(|(n, xs, ys)| {
            let rho = spearman(xs, ys);
            vec![n.to_string(), xs.len().to_string(), if rho.is_finite() { num(rho) } else { String::new() }]
        })
        .collect();
    out.write_csv("scaling.csv", &["n", "points", "spearman_m_aql"], &scaling)?;
    Ok(out.path)
}

/// Rescores the stored models of an earlier run directory on this config's data.
pub fn evaluate(root: &Path, config: ExperimentConfig) -> anyhow::Result<PathBuf> {
    let from = PathBuf::from(config.get("evaluate.from"));
    if from.as_os_str().is_empty() {
        bail!(mrinn_core::Error::Config("`evaluate.from` must name an earlier output directory".into()));
    }
    let from = if from.is_absolute() || from.exists() { from } else { root.join(from) };
    let manifest_path = from.join("manifest.json");
    let text = fs::read_to_string(&manifest_path).map_err(|e| mrinn_core::Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(mrinn_core::Error::from)?;
    let exp = Experiment::load(config)?;
    let out = open_output(root, &exp.config, "evaluate")?;

    #[derive(Serialize)]
    struct Rescored<'a> {
        #[serde(flatten)]
        entry: &'a RunEntry,
        val: EvalReport,
        test: EvalReport,
    }
    let scored = manifest
        .runs
        .par_iter()
        .map(|entry| -> anyhow::Result<Rescored<'_>> {
            let path = from.join(&entry.dir).join("model.json");
            let text = fs::read_to_string(&path).map_err(|e| mrinn_core::Error::io(&path, e))?;
            let model: serde_json::Value = serde_json::from_str(&text).map_err(mrinn_core::Error::from)?;
            let (val, test) = exp.rescore(entry, &model).with_context(|| format!("run {}", entry.id))?;
            Ok(Rescored { entry, val, test })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    out.write_json("metrics.json", &scored)?;
    let rows: Vec<Vec<String>> = scored
        .iter()
        .map(|s| {
            vec![
                s.entry.id.clone(),
                s.entry.model.clone(),
                s.entry.fold.to_string(),
                s.entry.n.to_string(),
                s.entry.m.to_string(),
                num(s.val.aql),
                num(s.test.aql),
                num(s.test.aqcr),
                num(s.test.mae),
                num(s.test.rmse),
            ]
        })
        .collect();
    out.write_csv(
        "evaluation.csv",
        &["run_id", "model", "fold", "n", "m", "val_aql", "test_aql", "test_aqcr", "test_mae", "test_rmse"],
        &rows,
    )?;
    Ok(out.path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_handles_ties_and_constants() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert_eq!(average_ranks(&[5.0, 1.0, 5.0]), [2.5, 1.0, 2.5]);
        assert!(spearman(&[1.0, 2.0], &[4.0, 4.0]).is_nan());
    }

    #[test]
    fn ranks_follow_ascending_order() {
        assert_eq!(ranks(&[3.0, 1.0, 2.0, 1.0]), [4, 1, 3, 1]);
    }
}
