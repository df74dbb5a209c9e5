//! End-to-end binary behavior: exit codes, artifact determinism, flag
//! overrides, and report comparison.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use drocks::rocket::TimeSeries;
use drocks::synth;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_drocks"))
}

fn render_tsv(series: &[TimeSeries]) -> String {
    series
        .iter()
        .map(|x| {
            let vals: Vec<String> = x.values.iter().map(|v| format!("{v}")).collect();
            format!("{}\t{}", x.label, vals.join("\t"))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Writes the synthetic two-class dataset in UCR layout and returns the
/// data root.
fn synth_root(dir: &Path) -> PathBuf {
    let ds = synth::frequency_dataset(8, 4, 64, 9).unwrap();
    let root = dir.join("data");
    let ds_dir = root.join("SynthFreq");
    std::fs::create_dir_all(&ds_dir).unwrap();
    std::fs::write(ds_dir.join("SynthFreq_TRAIN.tsv"), render_tsv(&ds.train)).unwrap();
    std::fs::write(ds_dir.join("SynthFreq_TEST.tsv"), render_tsv(&ds.test)).unwrap();
    root
}

/// Writes a three-class dataset for the binary-only rejection path.
fn three_class_root(dir: &Path) -> PathBuf {
    let root = dir.join("data3");
    let ds_dir = root.join("Tri");
    std::fs::create_dir_all(&ds_dir).unwrap();
    let mut rows = String::new();
    for label in 0..3 {
        for i in 0..4 {
            let vals: Vec<String> = (0..16)
                .map(|j| format!("{}", (label * 7 + i * j) as f64 * 0.1 + 0.05))
                .collect();
            rows.push_str(&format!("{label}\t{}\n", vals.join("\t")));
        }
    }
    std::fs::write(ds_dir.join("Tri_TRAIN.tsv"), &rows).unwrap();
    std::fs::write(ds_dir.join("Tri_TEST.tsv"), &rows).unwrap();
    root
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "command failed: {}\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn run_produces_byte_identical_results_on_repeat() {
    let dir = tempfile::tempdir().unwrap();
    let root = synth_root(dir.path());
    let out_dir = dir.path().join("out");
    let config = write_config(
        dir.path(),
        "cfg.json",
        &format!(
            r#"{{"dataset":"SynthFreq","method":"drocks","kernels":20,"clients":2,"rounds":2,"repeats":3,"local_epochs":2,"master_seed":7,"data_root":{:?},"output_dir":{:?}}}"#,
            root, out_dir
        ),
    );

    run_ok(bin().args(["run", "--config"]).arg(&config));
    let csv_path = out_dir.join("results.csv");
    let first = std::fs::read(&csv_path).unwrap();
    let text = String::from_utf8(first.clone()).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# config_hash: "));
    assert_eq!(lines.next().unwrap(), "# master_seed: 7");
    assert_eq!(lines.next().unwrap(), "dataset,method,K,seed,accuracy,macro_f1");
    assert_eq!(lines.count(), 3, "one row per repeat");
    assert!(out_dir.join("summary.json").exists());
    assert!(out_dir.join("rounds_2.jsonl").exists());
    assert!(out_dir.join("model_0.json").exists());
    assert!(out_dir.join("kernels_0.json").exists());

    run_ok(bin().args(["run", "--config"]).arg(&config));
    let second = std::fs::read(&csv_path).unwrap();
    assert_eq!(first, second, "identical config must produce identical bytes");

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["master_seed"], 7);
    assert_eq!(summary["config"]["repeats"], 3);
    assert_eq!(summary["config_hash"], summary["config_hash"].as_str().unwrap());

    // Every JSON artifact leads with the reproduction header, and the
    // model file still parses as a plain model.
    for name in ["model_0.json", "kernels_0.json"] {
        let text = std::fs::read_to_string(out_dir.join(name)).unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!(value["config_hash"].is_string(), "{name} lacks config_hash");
        assert_eq!(value["master_seed"], 7, "{name} lacks master_seed");
    }
    let model_text = std::fs::read_to_string(out_dir.join("model_0.json")).unwrap();
    drocks::linreg::LinearModel::from_json(&model_text).unwrap();
}

#[test]
fn flag_overrides_take_precedence_over_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let root = synth_root(dir.path());
    let out_a = dir.path().join("a");
    let config = write_config(
        dir.path(),
        "cfg.json",
        &format!(
            r#"{{"dataset":"SynthFreq","method":"drocks","kernels":20,"clients":2,"rounds":2,"repeats":3,"local_epochs":2,"data_root":{:?},"output_dir":{:?}}}"#,
            root, out_a
        ),
    );
    let out_b = dir.path().join("b");
    run_ok(
        bin()
            .args(["run", "--config"])
            .arg(&config)
            .args(["--repeats", "1", "--rounds", "1", "--seed", "3"])
            .arg("--out")
            .arg(&out_b),
    );
    assert!(!out_a.exists(), "output_dir override was ignored");
    let text = std::fs::read_to_string(out_b.join("results.csv")).unwrap();
    assert!(text.contains("# master_seed: 3"));
    let rows = text.lines().filter(|l| l.starts_with("SynthFreq,")).count();
    assert_eq!(rows, 1, "repeats override was ignored");
}

#[test]
fn binary_only_method_on_multiclass_data_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let root = three_class_root(dir.path());
    let config = write_config(
        dir.path(),
        "cfg.json",
        &format!(
            r#"{{"dataset":"Tri","method":"frocks","kernels":8,"clients":2,"rounds":1,"repeats":1,"local_epochs":1,"data_root":{:?},"output_dir":{:?}}}"#,
            root,
            dir.path().join("out")
        ),
    );
    let out = bin().args(["run", "--config"]).arg(&config).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("multiclass unsupported"), "stderr: {stderr}");
}

#[test]
fn missing_dataset_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "cfg.json",
        &format!(
            r#"{{"dataset":"Nowhere","method":"drocks","data_root":{:?},"output_dir":{:?}}}"#,
            dir.path().join("data"),
            dir.path().join("out")
        ),
    );
    let out = bin().args(["run", "--config"]).arg(&config).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn malformed_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "cfg.json",
        r#"{"dataset":"X","method":"drocks","no_such_field":1}"#,
    );
    let out = bin().args(["run", "--config"]).arg(&config).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

fn write_report(dir: &Path, name: &str, rows: &[(&str, &str, f64, f64)]) -> PathBuf {
    let mut text =
        String::from("# config_hash: x\n# master_seed: 0\ndataset,method,K,seed,accuracy,macro_f1\n");
    for (ds, m, acc, f1) in rows {
        text.push_str(&format!("{ds},{m},100,1,{acc},{f1}\n"));
    }
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn compare_ranks_methods_and_rejects_empty_intersection() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_report(
        dir.path(),
        "a.csv",
        &[("D1", "drocks", 0.9, 0.9), ("D2", "drocks", 0.8, 0.8)],
    );
    let b = write_report(
        dir.path(),
        "b.csv",
        &[("D1", "frocks", 0.7, 0.7), ("D2", "frocks", 0.6, 0.6)],
    );
    let out = run_ok(bin().arg("compare").arg(&a).arg(&b).args(["--metric", "f1"]));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("method,mean_rank"), "stdout: {stdout}");
    assert!(stdout.contains("drocks,1"), "stdout: {stdout}");
    assert!(stdout.contains("frocks,2"), "stdout: {stdout}");

    let c = write_report(dir.path(), "c.csv", &[("D3", "fedavg_raw", 0.5, 0.5)]);
    let out = bin().arg("compare").arg(&a).arg(&c).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
