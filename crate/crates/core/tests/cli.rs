use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::json;
use shiftlab::cli::ExperimentReport;

fn shiftlab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shiftlab"))
        .args(args)
        .current_dir(dir)
        .env("SHIFTLAB_THREADS", "1")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_json(path: &Path, v: &serde_json::Value) -> PathBuf {
    std::fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
    path.to_path_buf()
}

fn gdan_config(dir: &Path) -> PathBuf {
    write_json(
        &dir.join("gdan.json"),
        &json!({
            "name": "gauss",
            "data": { "source": "synthetic", "spec": {
                "family": "gaussian-classes-1d", "means": [-2.0, 2.0], "std": 1.0,
                "shifts": [0.0], "target_shift": 1.0, "prior": [0.5, 0.5],
                "n_per_domain": 400, "n_target": 400, "seed": 1 } },
            "model": "gdan",
            "train": { "iterations": 150 },
            "out_dir": "run",
            "seed": 2
        }),
    )
}

fn train_gdan_run(dir: &Path) -> PathBuf {
    let o = shiftlab(&["train", gdan_config(dir).to_str().unwrap()], dir);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    dir.join("run")
}

#[test]
fn train_writes_all_artifacts_and_loss_decreases() {
    let tmp = tempfile::tempdir().unwrap();
    let run = train_gdan_run(tmp.path());
    for f in [
        "model.ckpt.json",
        "report.json",
        "losses.csv",
        "plots/losses.svg",
        "plots/generated.svg",
    ] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    let r = ExperimentReport::load(run.join("report.json")).unwrap();
    assert!(r.hash_matches().unwrap());
    assert!(
        r.results.loss.last < r.results.loss.initial,
        "{:?}",
        r.results.loss
    );
    assert_eq!(r.results.metrics.len(), 1);
    assert!(r.results.metrics[0].value > 0.8);

    let o = shiftlab(&["report", run.to_str().unwrap()], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains(&r.config_hash));
}

#[test]
fn generate_modes_and_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let run = train_gdan_run(tmp.path());
    let ckpt = run.join("model.ckpt.json");
    let ck = ckpt.to_str().unwrap();

    let o = shiftlab(
        &["generate", ck, "--domain", "t", "--n", "25", "--out", "g1"],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(tmp.path().join("g1/theta1_t.csv")).unwrap();
    assert_eq!(text.lines().count(), 26);

    let o = shiftlab(
        &[
            "generate",
            ck,
            "--interpolate",
            "s1,t,3",
            "--n",
            "10",
            "--out",
            "g2",
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(std::fs::read_dir(tmp.path().join("g2")).unwrap().count(), 3);

    let o = shiftlab(&["generate", ck, "--recombine", "X1=s1"], tmp.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("recombine requires cgdan"));

    let o = shiftlab(&["generate", ck, "--domain", "mars"], tmp.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("mars"));
}

#[test]
fn tampered_checkpoint_exits_with_config_class_code() {
    let tmp = tempfile::tempdir().unwrap();
    let run = train_gdan_run(tmp.path());
    let path = run.join("model.ckpt.json");
    let mut v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    v["model"]["config"]["alpha"] = json!(0.25);
    write_json(&path, &v);
    let o = shiftlab(
        &["generate", path.to_str().unwrap(), "--domain", "t"],
        tmp.path(),
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("hash mismatch"), "{}", stderr(&o));
}

#[test]
fn adapt_predicts_labeled_target() {
    let tmp = tempfile::tempdir().unwrap();
    let run = train_gdan_run(tmp.path());
    let cfg = tmp.path().join("gdan.json");
    let o = shiftlab(
        &[
            "adapt",
            run.join("model.ckpt.json").to_str().unwrap(),
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            "ad",
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(tmp.path().join("ad/predictions.csv").is_file());
    assert!(tmp.path().join("ad/metric.json").is_file());
    assert!(stdout(&o).contains("accuracy"));
}

#[test]
fn cgdan_run_recovers_the_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_json(
        &tmp.path().join("chain.json"),
        &json!({
            "name": "chain",
            "data": { "source": "synthetic", "spec": {
                "family": "fcm-chain", "domains": 3, "prior": [0.5, 0.5],
                "coefficients": [[1.0, 2.0, 3.0, 1.5], [0.5]], "noise": 1.0,
                "n_per_domain": 1500, "n_target": 1500, "seed": 0 } },
            "model": "cgdan",
            "train": { "iterations": 60 },
            "out_dir": "run",
            "seed": 0
        }),
    );
    let o = shiftlab(&["train", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = ExperimentReport::load(tmp.path().join("run/report.json")).unwrap();
    let g = r.results.graph.unwrap();
    let mut directed = g.directed.clone();
    directed.sort();
    assert_eq!(
        directed,
        vec![
            ["X1".to_string(), "X2".to_string()],
            ["Y".to_string(), "X1".to_string()]
        ]
    );
    assert!(g.undirected.is_empty());
    assert_eq!(g.changing_modules, vec!["X1".to_string()]);
    assert!(tmp.path().join("run/graph.dot").is_file());

    let ck = tmp.path().join("run/model.ckpt.json");
    let o = shiftlab(
        &[
            "generate",
            ck.to_str().unwrap(),
            "--recombine",
            "X1=s2",
            "--n",
            "20",
            "--out",
            "rec",
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = shiftlab(
        &["generate", ck.to_str().unwrap(), "--interpolate", "s1,t,3"],
        tmp.path(),
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn discover_validates_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = gdan_config(tmp.path());
    let c = cfg.to_str().unwrap();
    let o = shiftlab(&["discover", "--config", c, "--alpha", "1.5"], tmp.path());
    assert_eq!(code(&o), 2);
    let o = shiftlab(
        &[
            "discover",
            "--csv",
            "nope.csv",
            "--features",
            "X1",
            "--label",
            "y",
            "--domain-column",
            "d",
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("nope.csv"));
    // One labeled domain cannot carry a domain index.
    let mut csv = String::from("X1,y,d\n");
    for i in 0..50 {
        csv.push_str(&format!("{},{},a\n", i as f64 * 0.1, i % 2));
    }
    std::fs::write(tmp.path().join("one.csv"), csv).unwrap();
    let o = shiftlab(
        &[
            "discover",
            "--csv",
            "one.csv",
            "--features",
            "X1",
            "--label",
            "y",
            "--domain-column",
            "d",
            "--with-domain-index",
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("two labeled domains"));
    let o = shiftlab(&["discover", "--config", c, "--out", "disc"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(
        stdout(&o).contains("Y -> X1") || stdout(&o).contains("Y -- X1"),
        "{}",
        stdout(&o)
    );
    assert!(tmp.path().join("disc/graph.json").is_file());
}

#[test]
fn bad_config_is_reported_before_compute() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_json(
        &tmp.path().join("bad.json"),
        &json!({
            "name": "bad",
            "data": { "source": "synthetic", "spec": {
                "family": "gaussian-classes-1d", "means": [-2.0, 2.0], "std": -1.0,
                "shifts": [0.0], "target_shift": 1.0, "prior": [0.5, 0.5],
                "n_per_domain": 100, "n_target": 100, "seed": 1 } },
            "model": "gdan",
            "train": { "iterations": 0 },
            "out_dir": "run",
            "seed": 2
        }),
    );
    let o = shiftlab(&["train", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(!tmp.path().join("run").exists());
}

#[test]
fn failed_validation_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let o = shiftlab(
        &["validate", "--prop", "3", "--duplicated", "--n", "500"],
        tmp.path(),
    );
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(stdout(&o).contains("prop 3: fail"));
    let o = shiftlab(&["validate", "--prop", "4"], tmp.path());
    assert_eq!(code(&o), 2);
}
