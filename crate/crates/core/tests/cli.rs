use std::path::{Path, PathBuf};
use std::process::Command;

use bvcl::cli::{cmd_gen, cmd_grid, cmd_run, cmd_stats, cmd_uncertainty, ExperimentConfig, UncertaintyOptions};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bvcl"))
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path
}

const TWO_TASKS: &str = r#"{
    "tasks": [
        {"name": "a", "synthetic": {"num_classes": 2, "samples_per_class": 40, "feature_dim": 3,
            "cluster_separation": 1.0, "cluster_scale": 1.0, "seed": 1}},
        {"name": "b", "synthetic": {"num_classes": 2, "samples_per_class": 40, "feature_dim": 3,
            "cluster_separation": 1.0, "cluster_scale": 1.0, "seed": 2}}
    ],
    "hidden_sizes": [8],
    "hyper": {"epochs": 2, "batch_size": 32, "s_train": 2, "s_test": 10, "learning_rate": 0.01, "beta": 0.5},
    "grid": {"learning_rates": [0.01], "betas": [0.5]},
    "seeds": [3]
}"#;

fn config(dir: &Path, body: &str) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_json(body).unwrap();
    cfg.output_dir = Some(dir.to_path_buf());
    cfg
}

#[test]
fn gen_writes_reproducible_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    let first = cmd_gen(&config(&tmp.path().join("one"), TWO_TASKS)).unwrap();
    let second = cmd_gen(&config(&tmp.path().join("two"), TWO_TASKS)).unwrap();
    assert_eq!(first.len(), 2);
    for (a, b) in first.iter().zip(&second) {
        let text = std::fs::read_to_string(a).unwrap();
        assert!(text.starts_with("x0,x1,x2,label\n"));
        assert_eq!(text.lines().count(), 81);
        assert_eq!(text, std::fs::read_to_string(b).unwrap());
    }
}

#[test]
fn generated_files_feed_a_run() {
    let tmp = tempfile::tempdir().unwrap();
    cmd_gen(&config(&tmp.path().join("data"), TWO_TASKS)).unwrap();
    let cfg_path = write_config(
        tmp.path(),
        r#"{"tasks": [{"name": "a", "path": "data/a.csv"}], "hidden_sizes": [4],
            "hyper": {"epochs": 1, "s_test": 5}}"#,
    );
    let status = bin()
        .args(["run", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(tmp.path().join("out"))
        .status()
        .unwrap();
    assert!(status.success());
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("out/run.json")).unwrap()).unwrap();
    let run = &doc["runs"][0];
    let a11 = run["record"]["test_accuracy"]["rows"][0][0].as_f64().unwrap();
    assert_eq!(
        run["test_metrics"]["steps"][0]["average_accuracy"].as_f64().unwrap(),
        a11
    );
    assert_eq!(run["record"]["test_accuracy"]["rows"].as_array().unwrap().len(), 1);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let bad_spec = write_config(
        tmp.path(),
        r#"{"tasks": [{"name": "a", "synthetic": {"num_classes": 0, "samples_per_class": 4, "feature_dim": 2,
            "cluster_separation": 1.0, "cluster_scale": 1.0, "seed": 1}}]}"#,
    );
    let out = bin()
        .args(["gen", "--config"])
        .arg(&bad_spec)
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("num_classes"));

    let missing = write_config(tmp.path(), r#"{"tasks": [{"name": "a", "path": "nowhere.csv"}]}"#);
    let out = bin()
        .args(["run", "--config"])
        .arg(&missing)
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.csv"));

    let unknown = write_config(tmp.path(), r#"{"tasks": [], "colour": "red"}"#);
    let out = bin().args(["run", "--config"]).arg(&unknown).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    let exploding = write_config(
        tmp.path(),
        r#"{"tasks": [{"name": "a", "synthetic": {"num_classes": 2, "samples_per_class": 20, "feature_dim": 2,
            "cluster_separation": 1.0, "cluster_scale": 1e150, "seed": 1}}],
            "standardize": false, "hidden_sizes": [4], "hyper": {"epochs": 2, "learning_rate": 1e300}}"#,
    );
    let out = bin()
        .args(["run", "--config"])
        .arg(&exploding)
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn singleton_grid_matches_run() {
    let tmp = tempfile::tempdir().unwrap();
    let run = cmd_run(&config(&tmp.path().join("run"), TWO_TASKS)).unwrap();
    let grid = cmd_grid(&config(&tmp.path().join("grid"), TWO_TASKS)).unwrap();
    let cell = &grid.reports[0].cells[0];
    assert_eq!(cell.val_metrics, run.runs[0].val_metrics);
    assert_eq!(cell.test_metrics, run.runs[0].test_metrics);
    for best in &grid.reports[0].best {
        assert_eq!(best.test, run.runs[0].test_metrics.steps[best.k - 1]);
    }
}

#[test]
fn default_grid_has_thirty_cell_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let body = TWO_TASKS.replace(r#""grid": {"learning_rates": [0.01], "betas": [0.5]},"#, "");
    let mut cfg = config(tmp.path(), &body);
    cfg.hyper.epochs = 1;
    cfg.hidden_sizes = vec![4];
    let doc = cmd_grid(&cfg).unwrap();
    assert_eq!(doc.reports[0].cells.len(), 30);
    let cells = std::fs::read_to_string(tmp.path().join("grid-cells.csv")).unwrap();
    assert_eq!(cells.lines().count(), 31);
    let best = std::fs::read_to_string(tmp.path().join("grid-best.csv")).unwrap();
    assert_eq!(best.lines().count(), 3);
    for b in &doc.reports[0].best {
        let score = b.val.combined.unwrap();
        assert!(doc.reports[0]
            .cells
            .iter()
            .all(|c| score <= c.val_metrics.steps[b.k - 1].combined.unwrap()));
    }
}

#[test]
fn uncertainty_gates_and_stats() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), TWO_TASKS);
    cmd_run(&cfg).unwrap();

    let open = UncertaintyOptions {
        entropy_threshold: Some(f64::INFINITY),
        ..Default::default()
    };
    let doc = cmd_uncertainty(&cfg, &open).unwrap();
    assert_eq!(doc.summary.len(), 2);
    for s in &doc.summary {
        assert_eq!(s.rejected, 0);
        assert_eq!(s.accuracy_accepted, Some(s.accuracy));
        assert_eq!(s.k_trained, 2);
    }
    let closed = UncertaintyOptions {
        entropy_threshold: Some(0.0),
        ..Default::default()
    };
    let doc = cmd_uncertainty(&cfg, &closed).unwrap();
    assert!(doc
        .summary
        .iter()
        .all(|s| s.accepted == 0 && s.accuracy_accepted.is_none()));

    let csv = tmp.path().join(&doc.csv);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text
        .starts_with("sample_id,task,k_trained,true_label,predicted,correct,entropy_nats,mutual_information_nats\n"));
    let first = cmd_stats(&csv, &tmp.path().join("s1"), Some("a-b")).unwrap();
    let second = cmd_stats(&csv, &tmp.path().join("s2"), Some("a-b")).unwrap();
    assert_eq!(first, second);
    assert_eq!(first.rows.len(), 4);
    assert!(first.rows.iter().all(|r| r.order == "a-b" && r.k == 2));
    let name = "stats-uncertainty-posterior-a-b-seed3.csv";
    assert_eq!(
        std::fs::read(tmp.path().join("s1").join(name)).unwrap(),
        std::fs::read(tmp.path().join("s2").join(name)).unwrap()
    );
}

#[test]
fn uncertainty_rejects_foreign_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    cmd_run(&config(tmp.path(), TWO_TASKS)).unwrap();
    let other = TWO_TASKS.replace(r#""name": "b""#, r#""name": "c""#);
    let opts = UncertaintyOptions {
        checkpoint: Some(tmp.path().join("posterior-a-b-seed3.json")),
        ..Default::default()
    };
    let err = cmd_uncertainty(&config(tmp.path(), &other), &opts).unwrap_err();
    assert_eq!(bvcl::cli::exit_code(&err), 2);
}

#[test]
fn malformed_uncertainty_csv_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("u.csv");
    std::fs::write(&csv, "sample_id,task\n1,a\n").unwrap();
    let out = bin().args(["stats", "--input"]).arg(&csv).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
