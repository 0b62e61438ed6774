use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mrinn_core::mrinn::MrinnModel;
use tempfile::TempDir;

const SMALL: [&str; 6] = [
    "synth.days=30",
    "train.max_epochs=2",
    "train.patience=2",
    "train.batch_size=256",
    "folds.use=1",
    "mlp.hidden=8",
];

fn mrinn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mrinn"))
        .current_dir(dir)
        .env("MRINN_OUTPUT_ROOT", dir.join("out"))
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = mrinn(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

/// Runs an experiment command on the small config plus `extra` overrides.
fn experiment(dir: &Path, command: &str, extra: &[&str]) -> PathBuf {
    let mut args = vec![command.to_string()];
    for set in SMALL.iter().chain(extra) {
        args.push("--set".into());
        args.push(set.to_string());
    }
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    ok(dir, &refs);
    dir.join("out").join(command)
}

fn table(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let mut rows = vec![r.headers().unwrap().iter().map(String::from).collect()];
    rows.extend(r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()));
    rows
}

fn column(rows: &[Vec<String>], name: &str) -> Vec<String> {
    let i = rows[0].iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    rows[1..].iter().map(|r| r[i].clone()).collect()
}

fn numbers(rows: &[Vec<String>], name: &str) -> Vec<f64> {
    column(rows, name).iter().map(|x| x.parse().unwrap()).collect()
}

#[test]
fn synth_is_sized_and_seed_deterministic() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["synth", "--days", "10", "--seed", "3", "--output", "a.csv"]);
    ok(dir.path(), &["synth", "--days", "10", "--seed", "3", "--output", "b.csv"]);
    ok(dir.path(), &["synth", "--days", "10", "--seed", "4", "--output", "c.csv"]);
    let a = fs::read(dir.path().join("a.csv")).unwrap();
    assert_eq!(table(&dir.path().join("a.csv")).len(), 961);
    assert_eq!(a, fs::read(dir.path().join("b.csv")).unwrap());
    assert_ne!(a, fs::read(dir.path().join("c.csv")).unwrap());
    assert_eq!(mrinn(dir.path(), &["synth", "--days", "0"]).status.code(), Some(2));
}

#[test]
fn price_rechecks_synthetic_prices_exactly() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["synth", "--days", "1", "--output", "day.csv"]);
    ok(dir.path(), &["price", "--input", "day.csv", "--output", "priced.csv"]);
    let day = table(&dir.path().join("day.csv"));
    let priced = table(&dir.path().join("priced.csv"));
    assert_eq!(priced.len(), 97);
    let p = numbers(&day, "p");
    let p_final = numbers(&priced, "p_final");
    assert!(p.iter().zip(&p_final).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert_eq!(column(&priced, "ts"), column(&day, "ts"));
}

#[test]
fn ramp_width_override_touches_only_the_ramp_inside_the_width() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["synth", "--days", "3", "--output", "in.csv"]);
    fs::write(dir.path().join("c.txt"), "# wider ramp\nc4 = 300\n").unwrap();
    ok(dir.path(), &["price", "--input", "in.csv", "--output", "base.csv"]);
    ok(dir.path(), &["price", "--input", "in.csv", "--constants", "c.txt", "--output", "wide.csv"]);
    let input = table(&dir.path().join("in.csv"));
    let base = table(&dir.path().join("base.csv"));
    let wide = table(&dir.path().join("wide.csv"));
    let v = numbers(&input, "v");
    let (r0, r1) = (numbers(&base, "ramp"), numbers(&wide, "ramp"));
    let mut changed = 0;
    for i in 0..v.len() {
        if v[i] != 0.0 && v[i].abs() < 300.0 {
            assert_ne!(r0[i], r1[i], "row {i}, v {}", v[i]);
            assert_eq!(r1[i], v[i] / 300.0);
            changed += 1;
        } else {
            assert_eq!(r0[i], r1[i], "row {i}, v {}", v[i]);
        }
    }
    assert!(changed > 0);
    for name in ["p_bal", "p_scar", "p_base", "w_id15", "w_id60", "w_da", "i_pos", "i_neg"] {
        assert_eq!(column(&base, name), column(&wide, name), "{name}");
    }
}

#[test]
fn bad_inputs_exit_with_code_two() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--days", "1", "--output", "day.csv"]);
    let text = fs::read_to_string(d.join("day.csv")).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let cells: Vec<&str> = lines[5].split(',').collect();
    lines[5] = cells.iter().enumerate().map(|(i, c)| if i == 1 { "abc" } else { c }).collect::<Vec<_>>().join(",");
    fs::write(d.join("bad.csv"), lines.join("\n") + "\n").unwrap();

    let out = mrinn(d, &["price", "--input", "bad.csv"]);
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("row") && msg.contains("column"), "{msg}");
    ok(d, &["price", "--input", "bad.csv", "--lenient", "--output", "lenient.csv"]);
    assert_eq!(table(&d.join("lenient.csv")).len(), 97);

    fs::write(d.join("c.txt"), "c4 = -1\n").unwrap();
    assert_eq!(mrinn(d, &["price", "--input", "day.csv", "--constants", "c.txt"]).status.code(), Some(2));
    assert_eq!(mrinn(d, &["price", "--input", "missing.csv"]).status.code(), Some(2));
    assert_eq!(mrinn(d, &["train", "--set", "train.epochz=3"]).status.code(), Some(2));
    assert_eq!(mrinn(d, &["train", "--set", "folds.use=7"]).status.code(), Some(2));
    fs::write(d.join("run.conf"), "seeds = 1\nseeds = 2\n").unwrap();
    assert_eq!(mrinn(d, &["train", "--config", "run.conf"]).status.code(), Some(2));
    assert_eq!(mrinn(d, &["frobnicate"]).status.code(), Some(2));
}

#[test]
fn divergence_exits_with_code_three_naming_the_run() {
    let dir = TempDir::new().unwrap();
    let mut args = vec!["train"];
    for s in SMALL.iter().chain(&["train.learning_rate=1e300"]) {
        args.extend(["--set", s]);
    }
    let out = mrinn(dir.path(), &args);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("run mrinn-none-n0-m15-f1-s0"));
}

#[test]
fn train_writes_artifacts_and_evaluate_reproduces_them() {
    let dir = TempDir::new().unwrap();
    let out = experiment(dir.path(), "train", &["seeds=0,1"]);
    let config = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(config.contains("seeds = 0,1\n") && config.contains("constants.c4 = 50\n"));
    let summary = table(&out.join("summary.csv"));
    assert_eq!(column(&summary, "run_id"), ["mrinn-none-n0-m15-f1-s0", "mrinn-none-n0-m15-f1-s1"]);
    assert_eq!(column(&summary, "param_count"), ["701", "701"]);
    assert_eq!(table(&out.join("aggregate.csv")).len(), 2);
    for id in column(&summary, "run_id") {
        for file in ["record.json", "model.json"] {
            assert!(out.join("runs").join(&id).join(file).is_file(), "{id}/{file}");
        }
    }

    let eval = experiment(dir.path(), "evaluate", &["evaluate.from=train"]);
    let rescored = table(&eval.join("evaluation.csv"));
    for name in ["val_aql", "test_aql", "test_mae", "test_rmse"] {
        assert_eq!(column(&rescored, name), column(&summary, name), "{name}");
    }
}

#[test]
fn baseline_reports_every_kind() {
    let dir = TempDir::new().unwrap();
    let out = experiment(dir.path(), "baseline", &[]);
    let reports: serde_json::Value = serde_json::from_slice(&fs::read(out.join("reports.json")).unwrap()).unwrap();
    let models: Vec<&str> = reports.as_array().unwrap().iter().map(|r| r["model"].as_str().unwrap()).collect();
    assert_eq!(models, ["naive-price", "naive-id15", "naive-id60", "lqr", "mlp"]);
    for r in reports.as_array().unwrap() {
        assert!(r["test"]["aql"].as_f64().unwrap() > 0.0);
    }
}

#[test]
fn ablate_emits_the_ranked_comparison() {
    let dir = TempDir::new().unwrap();
    let out = experiment(dir.path(), "ablate", &[]);
    let rows = table(&out.join("ablation.csv"));
    assert_eq!(rows.len(), 5);
    assert_eq!(column(&rows, "variant"), ["none", "drop_bal", "drop_mkt", "drop_scar"]);
    assert_eq!(column(&rows, "label")[0], "All");
    let params = numbers(&rows, "params");
    assert!(params[1..].iter().all(|&p| p < params[0]));
    let aql = numbers(&rows, "aql");
    let rank = numbers(&rows, "rank");
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| aql[a].total_cmp(&aql[b]));
    for (pos, &i) in order.iter().enumerate() {
        assert_eq!(rank[i], (pos + 1) as f64);
    }
    let model = MrinnModel::load(out.join("runs/mrinn-drop_bal-n0-m15-f1-s0/model.json")).unwrap();
    let features = format!("{:?}", model.features()).to_lowercase();
    assert!(!features.contains("afrr") && !features.contains("mfrr"), "{features}");
}

#[test]
fn sweep_covers_the_requested_grid() {
    let dir = TempDir::new().unwrap();
    let out = experiment(dir.path(), "sweep", &["sweep.n=0,60", "sweep.m=15,180"]);
    let rows = table(&out.join("sweep.csv"));
    assert_eq!(rows[0], ["n", "m", "aql", "mae", "rmse", "seconds"]);
    assert_eq!(column(&rows, "n"), ["0", "0", "60", "60"]);
    assert_eq!(column(&rows, "m"), ["15", "180", "15", "180"]);
    assert_eq!(column(&table(&out.join("scaling.csv")), "n"), ["0", "60"]);
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["runs"].as_array().unwrap().len(), 4);
}

/// Every output file, with the wall-clock fields blanked.
fn snapshot(root: &Path) -> Vec<(PathBuf, String)> {
    let mut files: Vec<PathBuf> = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push(p);
            }
        }
    }
    files.sort();
    files
        .into_iter()
        .map(|p| {
            let text = fs::read_to_string(&p).unwrap();
            let masked = mask_seconds(&text);
            (p.strip_prefix(root).unwrap().to_path_buf(), masked)
        })
        .collect()
}

fn mask_seconds(text: &str) -> String {
    text.lines()
        .map(|l| {
            if l.trim_start().starts_with("\"seconds\"") {
                "\"seconds\": _".to_string()
            } else {
                l.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn reruns_are_byte_identical_apart_from_timings() {
    let dir = TempDir::new().unwrap();
    experiment(dir.path(), "baseline", &["output.dir=first"]);
    let a = snapshot(&dir.path().join("out/first"));
    experiment(dir.path(), "baseline", &["output.dir=second"]);
    let b = snapshot(&dir.path().join("out/second"));
    assert_eq!(a.len(), b.len());
    for ((pa, ta), (pb, tb)) in a.iter().zip(&b) {
        assert_eq!(pa, pb);
        if pa.file_name().unwrap() == "config.txt" {
            assert_eq!(ta.replace("first", "second"), *tb);
        } else {
            assert_eq!(ta, tb, "{}", pa.display());
        }
    }
}
