use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn plexity(args: &[&str], config: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_plexity")).args(args).arg("--config").arg(config).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A small synthetic fixture; `edit` may rewrite the generated config.
fn small_fixture(edit: impl FnOnce(&mut serde_json::Value)) -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_plexity"))
        .args(["synth", "--corpus-size", "400", "--train-size", "40", "--test-size", "10", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let config = dir.path().join("config.json");
    let mut v: serde_json::Value = serde_json::from_slice(&std::fs::read(&config).unwrap()).unwrap();
    edit(&mut v);
    std::fs::write(&config, serde_json::to_vec_pretty(&v).unwrap()).unwrap();
    (dir, config)
}

fn run_stages(config: &Path, stages: &[&str]) {
    for s in stages {
        let o = plexity(&[s], config);
        assert!(o.status.success(), "{s}: {}", stderr(&o));
    }
}

const UP_TO_INDEX: [&str; 3] = ["ingest", "featurize", "index"];

#[test]
fn zero_k_is_rejected_before_any_work() {
    let (dir, config) = small_fixture(|v| v["pipeline"]["k"] = 0.into());
    let o = plexity(&["ingest"], &config);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(stderr(&o).contains('k'));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn unknown_config_key_is_a_validation_error() {
    let (_dir, config) = small_fixture(|v| v["colour"] = "blue".into());
    assert_eq!(code(&plexity(&["ingest"], &config)), 1);
}

#[test]
fn missing_upstream_artifact_exits_2() {
    let (_dir, config) = small_fixture(|_| {});
    let o = plexity(&["index"], &config);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("plexity featurize") || stderr(&o).contains("plexity ingest"), "{}", stderr(&o));
}

#[test]
fn modified_index_is_stale_unless_forced() {
    let (dir, config) = small_fixture(|_| {});
    run_stages(&config, &UP_TO_INDEX);
    run_stages(&config, &["train-baseline"]);
    let index = dir.path().join("out/index.bin");
    let mut bytes = std::fs::read(&index).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    std::fs::write(&index, bytes).unwrap();
    let o = plexity(&["pseudolabel"], &config);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("plexity index"), "{}", stderr(&o));
    // rebuilding the index clears the condition
    run_stages(&config, &["index", "pseudolabel"]);
}

#[test]
fn force_skips_digest_checks() {
    let (dir, config) = small_fixture(|_| {});
    run_stages(&config, &UP_TO_INDEX);
    run_stages(&config, &["train-baseline"]);
    // rewrite the baseline with identical content but different formatting
    let p = dir.path().join("out/baseline.json");
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&p).unwrap()).unwrap();
    std::fs::write(&p, serde_json::to_vec(&v).unwrap()).unwrap();
    assert_eq!(code(&plexity(&["pseudolabel"], &config)), 2);
    let o = plexity(&["pseudolabel", "--force"], &config);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn held_lock_refuses_to_run() {
    let (dir, config) = small_fixture(|_| {});
    std::fs::create_dir_all(dir.path().join("out")).unwrap();
    std::fs::write(dir.path().join("out/.plexity.lock"), "1\n").unwrap();
    let o = plexity(&["ingest"], &config);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains(".plexity.lock"));
    std::fs::remove_file(dir.path().join("out/.plexity.lock")).unwrap();
    run_stages(&config, &["ingest"]);
    assert!(!dir.path().join("out/.plexity.lock").exists());
}

#[test]
fn zero_weight_stacker_predicts_its_intercept() {
    let (dir, config) = small_fixture(|v| v["setting"] = "ensemble_stacker".into());
    run_stages(&config, &UP_TO_INDEX);
    run_stages(&config, &["train-baseline", "pseudolabel", "train-ensemble"]);
    let manifest = dir.path().join("out/bundle/manifest.json");
    let mut m: serde_json::Value = serde_json::from_slice(&std::fs::read(&manifest).unwrap()).unwrap();
    let agg = &mut m["aggregation"];
    assert_eq!(agg["mode"], "stacker");
    let n = agg["weights"].as_array().unwrap().len();
    agg["weights"] = serde_json::Value::Array(vec![0.0.into(); n]);
    agg["intercept"] = 2.5.into();
    std::fs::write(&manifest, serde_json::to_vec_pretty(&m).unwrap()).unwrap();

    let input = dir.path().join("in.txt");
    std::fs::write(&input, "Ein Satz.\n\nNoch ein deutlich längerer Satz, mit einem Komma.\n").unwrap();
    let out = dir.path().join("pred.tsv");
    let args = |force: bool| {
        let mut a = vec!["predict", "--input", input.to_str().unwrap(), "--output", out.to_str().unwrap()];
        if force {
            a.push("--force");
        }
        a
    };
    assert_eq!(code(&plexity(&args(false), &config)), 2);
    let o = plexity(&args(true), &config);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(&out).unwrap(), "1\t2.500\n3\t2.500\n");
}

#[test]
fn mean_setting_predictions_are_in_range() {
    let (dir, config) = small_fixture(|_| {});
    run_stages(&config, &UP_TO_INDEX);
    run_stages(&config, &["train-baseline", "pseudolabel", "train-ensemble", "evaluate"]);
    assert!(dir.path().join("out/reports/cv_ensemble_mean.json").is_file());
    assert!(dir.path().join("out/reports/test_ensemble_mean.json").is_file());
    let input = dir.path().join("in.txt");
    std::fs::write(&input, "Kurz.\nEin etwas längerer Satz mit mehreren Wörtern.\n").unwrap();
    let o = plexity(&["predict", "--input", input.to_str().unwrap()], &config);
    assert!(o.status.success(), "{}", stderr(&o));
    let pred = std::fs::read_to_string(dir.path().join("out/predictions.tsv")).unwrap();
    let scores: Vec<f64> = pred.lines().map(|l| l.split('\t').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(scores.len(), 2);
    assert!(scores.iter().all(|s| (1.0..=7.0).contains(s)));
}
