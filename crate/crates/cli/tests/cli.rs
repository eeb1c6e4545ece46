use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_tvpvecm"));
    c.env_remove("TVPVECM_OUTPUT_ROOT");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth_data(root: &Path, rank: usize) -> PathBuf {
    let spec = root.join("synth.toml");
    fs::write(&spec, format!("[synth]\nm = 2\nt = 120\nrank = {rank}\nseed = 5\n")).unwrap();
    let out = root.join("synth");
    let o = run(&["synth", "-c", spec.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out.join("data.csv")
}

fn write_config(root: &Path, data: &Path, body: &str) -> PathBuf {
    let cfg = root.join("run.toml");
    let text = format!(
        "[data]\npath = {:?}\ntimestamp = \"timestamp\"\nendogenous = [\"y1\", \"y2\"]\n\n{body}",
        data.to_str().unwrap()
    );
    fs::write(&cfg, text).unwrap();
    cfg
}

const QUICK_MODEL: &str = "[model]\ndraws = 120\nburnin = 60\nthin = 2\nseed = 3\n";

#[test]
fn synth_rank_zero_gives_zero_pi() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    let o = run(&["synth", "--rank", "0", "--m", "3", "--t", "50", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let truth: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("truth.json")).unwrap()).unwrap();
    let pi = truth["pi"].as_array().unwrap();
    assert_eq!(pi.len(), 50);
    assert!(pi.iter().flat_map(|r| r.as_array().unwrap()).all(|v| v.as_f64() == Some(0.0)));
    assert!(out.join("manifest.json").exists());
}

#[test]
fn synth_infeasible_rank_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    let o = run(&["synth", "--rank", "4", "--m", "4", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("rank"));
    assert!(!out.exists());
    assert!(!dir.path().join("s.partial").exists());
}

#[test]
fn estimate_writes_summaries_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_data(dir.path(), 1);
    let cfg = write_config(dir.path(), &data, QUICK_MODEL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = run(&["--threads", "1", "estimate", "-c", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let ppr = fs::read_to_string(a.join("rank_ppr.csv")).unwrap();
    let mut sums = std::collections::BTreeMap::<String, f64>::new();
    for line in ppr.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        *sums.entry(f[0].to_string()).or_default() += f[3].parse::<f64>().unwrap();
    }
    assert_eq!(sums.len(), 120 - 2);
    assert!(sums.values().all(|s| (s - 1.0).abs() < 1e-12));
    for f in ["pi_mean.csv", "rank_ppr.csv", "pip.csv", "volatility.csv", "sv_params.csv", "vol_pca.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let o = run(&["verify", a.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    // The report subcommand rebuilds the same tables from the saved archive.
    let rep = dir.path().join("rep");
    let o = run(&["report", "--archive", a.join("archive").to_str().unwrap(), "--out", rep.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["pi_mean.csv", "rank_ppr.csv", "pip.csv", "volatility.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(rep.join(f)).unwrap(), "{f} differs");
    }

    fs::write(a.join("pip.csv"), "tampered").unwrap();
    let o = run(&["verify", a.to_str().unwrap()]);
    assert_ne!(code(&o), 0);
    assert!(stderr(&o).contains("pip.csv"));
}

#[test]
fn invalid_lag_names_the_field_and_leaves_nothing_behind() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_data(dir.path(), 1);
    let cfg = write_config(dir.path(), &data, "[model]\nlags = 0\nthin = 0\n");
    let out = dir.path().join("e");
    let o = run(&["estimate", "-c", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(err.contains("lags") && err.contains("thin"), "{err}");
    assert!(!out.exists());
    assert!(!dir.path().join("e.partial").exists());
}

#[test]
fn existing_output_needs_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    fs::create_dir(&out).unwrap();
    fs::write(out.join("keep.txt"), "x").unwrap();
    let o = run(&["synth", "--t", "30", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(out.join("keep.txt").exists());
    let o = run(&["synth", "--t", "30", "--out", out.to_str().unwrap(), "--overwrite"]);
    assert_eq!(code(&o), 0);
    assert!(!out.join("keep.txt").exists());
}

#[test]
fn output_root_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .args(["synth", "--t", "30"])
        .env("TVPVECM_OUTPUT_ROOT", dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let entries: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(entries.len(), 1);
    let name = entries[0].as_ref().unwrap().file_name();
    assert!(name.to_string_lossy().starts_with("synth-"));
}

const GRID: &str = r#"
[backtest]
window = 60
holdout = 20
stride = 10
seed = 9

[[models]]
label = "ar-d"
config = { model_class = "ar-differences", tvp = false, sparsify = false, draws = 120, burnin = 60, thin = 2 }

[[models]]
label = "var-d"
config = { model_class = "var-differences", tvp = false, sparsify = false, draws = 120, burnin = 60, thin = 2 }
"#;

fn total(scores: &str, model: &str, stat: &str) -> f64 {
    scores
        .lines()
        .find(|l| l.starts_with(&format!("{model},{stat},")))
        .and_then(|l| l.rsplit(',').next())
        .unwrap()
        .parse()
        .unwrap()
}

#[test]
fn backtest_on_random_walks_scores_both_models_alike() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_data(dir.path(), 0);
    let cfg = write_config(dir.path(), &data, GRID);
    let out = dir.path().join("bt");
    let o = run(&["--threads", "1", "backtest", "-c", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let scores = fs::read_to_string(out.join("scores.csv")).unwrap();
    let ratio = total(&scores, "var-d", "rmse") / total(&scores, "ar-d", "rmse");
    assert!((ratio - 1.0).abs() < 0.1, "rmse ratio {ratio}");
    let losses = fs::read_to_string(out.join("losses_crps.csv")).unwrap();
    assert_eq!(losses.lines().count(), 21);
    let mcs = fs::read_to_string(out.join("mcs_crps.csv")).unwrap();
    assert!(mcs.starts_with("model,rank,p_value,in_set"));
    assert_eq!(mcs.lines().count(), 3);

    let again = dir.path().join("bt2");
    let o = run(&["--threads", "1", "backtest", "-c", cfg.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    for f in ["losses_crps.csv", "losses_squared_error.csv", "mcs_crps.csv", "scores.csv"] {
        assert_eq!(fs::read(out.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn broken_grid_entry_gives_partial_results() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_data(dir.path(), 1);
    let grid = format!(
        "{GRID}\n[[models]]\nlabel = \"broken\"\nconfig = {{ model_class = \"vecm-fixed-rank\", rank = 9, draws = 20, burnin = 10 }}\n"
    );
    let cfg = write_config(dir.path(), &data, &grid);
    let out = dir.path().join("bt");
    let o = run(&["backtest", "-c", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--holdout", "4", "--stride", "4"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    let failures = fs::read_to_string(out.join("failures.csv")).unwrap();
    assert!(failures.lines().skip(1).all(|l| l.starts_with("broken,")));
    let scores = fs::read_to_string(out.join("scores.csv")).unwrap();
    assert!(!scores.contains("broken"));
    assert!(scores.contains("ar-d") && scores.contains("var-d"));
}

#[test]
fn single_model_backtest_keeps_it_in_the_set() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_data(dir.path(), 1);
    let body = "[backtest]\nwindow = 60\nholdout = 5\nstride = 5\n\n[model]\nmodel_class = \"ar-differences\"\ntvp = false\nsparsify = false\ndraws = 60\nburnin = 20\n";
    let cfg = write_config(dir.path(), &data, body);
    let out = dir.path().join("bt");
    let o = run(&["backtest", "-c", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mcs = fs::read_to_string(out.join("mcs_squared_error.csv")).unwrap();
    assert_eq!(mcs.lines().nth(1).unwrap(), "model,1,1,true,false");
}
