use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fmax_core::estimate::TrainedEstimator;
use fmax_core::factor::recover_d;
use fmax_core::io::read_dataset_csv;
use fmax_core::{gfm, LabelPartition};
use tempfile::TempDir;

fn fmax(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fmax")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = fmax(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn generate(dir: &Path, dag: &str, n: &str, seed: &str) {
    ok(&["generate", "--dag", dag, "--n", n, "--seed", seed, "--out", s(dir)]);
}

fn no_temp_files(dir: &Path) {
    for entry in fs::read_dir(dir).unwrap() {
        let name = entry.unwrap().file_name().into_string().unwrap();
        assert!(!name.starts_with(".tmp"), "leftover {name}");
    }
}

#[test]
fn generate_with_zero_rows_writes_only_the_header() {
    let dir = TempDir::new().unwrap();
    generate(dir.path(), "2", "0", "1");
    let text = fs::read_to_string(dir.path().join("data.csv")).unwrap();
    assert_eq!(text, "x1,x2,x3,x4,x5,x6,y1,y2,y3,y4,y5,y6,y7,y8\n");
    no_temp_files(dir.path());
}

#[test]
fn generate_is_deterministic() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    generate(a.path(), "3", "300", "9");
    generate(b.path(), "3", "300", "9");
    for f in ["data.csv", "bn.json", "partition.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let c = TempDir::new().unwrap();
    generate(c.path(), "3", "300", "10");
    assert_ne!(fs::read(a.path().join("data.csv")).unwrap(), fs::read(c.path().join("data.csv")).unwrap());
}

#[test]
fn dag1_partition_file_lists_four_pairs() {
    let dir = TempDir::new().unwrap();
    generate(dir.path(), "1", "5000", "0");
    let p: LabelPartition = serde_json::from_str(&fs::read_to_string(dir.path().join("partition.json")).unwrap()).unwrap();
    assert_eq!(p.blocks(), &[vec![0, 1], vec![2, 3], vec![4, 5], vec![6, 7]]);
    let data = read_dataset_csv(fs::File::open(dir.path().join("data.csv")).unwrap()).unwrap();
    assert_eq!(data.len(), 5000);
}

fn load_model(path: &Path) -> TrainedEstimator {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn trained_model_shapes_follow_the_partition() {
    let dir = TempDir::new().unwrap();
    generate(dir.path(), "2", "200", "3");
    let data = dir.path().join("data.csv");
    let model = dir.path().join("single.json");
    ok(&["train", "--data", s(&data), "--partition", "single", "--lambda-grid", "0.1,1", "--out", s(&model)]);
    let single = load_model(&model);
    assert_eq!(single.blocks.len(), 1);
    assert_eq!(single.blocks[0].count_model.n_classes, 9);
    assert_eq!(single.blocks[0].label_models.len(), 8);

    let part = dir.path().join("singletons.json");
    fs::write(&part, r#"{"m":8,"blocks":[[1],[2],[3],[4],[5],[6],[7],[8]]}"#).unwrap();
    ok(&["train", "--data", s(&data), "--partition", s(&part), "--lambda-grid", "0.1,1", "--out", s(&model)]);
    let split = load_model(&model);
    assert_eq!(split.blocks.len(), 8);
    assert!(split.blocks.iter().all(|b| b.count_model.n_classes == 2 && b.label_models.len() == 1));
    no_temp_files(dir.path());
}

#[test]
fn single_block_predictions_equal_plain_gfm() {
    let dir = TempDir::new().unwrap();
    generate(dir.path(), "1", "300", "4");
    let data = dir.path().join("data.csv");
    let model = dir.path().join("model.json");
    let preds = dir.path().join("preds.csv");
    ok(&["train", "--data", s(&data), "--out", s(&model)]);
    ok(&["predict", "--model", s(&model), "--data", s(&data), "--out", s(&preds)]);
    let est = load_model(&model);
    let input = read_dataset_csv(fs::File::open(&data).unwrap()).unwrap();
    let text = fs::read_to_string(&preds).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("y1,y2,y3,y4,y5,y6,y7,y8"));
    for r in 0..input.len() {
        let p = est.estimate_p_matrix(0, input.x(r)).unwrap();
        let d0 = recover_d(&p).unwrap().get(0).clamp(0.0, 1.0);
        let h = gfm(&p, d0).unwrap().h;
        let expected: Vec<String> = h.as_slice().iter().map(|v| v.to_string()).collect();
        let line = lines.next().unwrap();
        assert!(line.split(',').all(|v| v == "0" || v == "1"));
        assert_eq!(line, expected.join(","), "row {r}");
    }
    assert_eq!(lines.next(), None);
}

#[test]
fn predicting_on_empty_data_writes_only_the_header() {
    let dir = TempDir::new().unwrap();
    generate(dir.path(), "4", "100", "5");
    let model = dir.path().join("model.json");
    ok(&["train", "--data", s(&dir.path().join("data.csv")), "--lambda-grid", "1", "--out", s(&model)]);
    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "x1,x2,x3,x4,x5,x6\n").unwrap();
    let preds = dir.path().join("preds.csv");
    ok(&["predict", "--model", s(&model), "--data", s(&empty), "--out", s(&preds)]);
    assert_eq!(fs::read_to_string(&preds).unwrap(), "y1,y2,y3,y4,y5,y6,y7,y8\n");

    let narrow = dir.path().join("narrow.csv");
    fs::write(&narrow, "x1,x2\n0,1\n").unwrap();
    let out = fmax(&["predict", "--model", s(&model), "--data", s(&narrow), "--out", s(&preds)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("6 features"));
}

#[test]
fn malformed_csv_reports_the_line() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "x1,y1,y2\n0,1,0\n1,0,1\n1,2,0\n").unwrap();
    let out = fmax(&["train", "--data", s(&bad), "--out", s(&dir.path().join("m.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 4"), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!dir.path().join("m.json").exists());
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = TempDir::new().unwrap();
    assert_eq!(fmax(&[]).status.code(), Some(1));
    assert_eq!(fmax(&["generate", "--dag", "1"]).status.code(), Some(1));
    assert_eq!(fmax(&["generate", "--dag", "7", "--n", "5", "--out", s(dir.path())]).status.code(), Some(1));
    assert_eq!(fmax(&["oracle-check", "--m", "12"]).status.code(), Some(1));
    assert_eq!(fmax(&["oracle-check", "--m", "0"]).status.code(), Some(1));
    let missing = dir.path().join("missing.csv");
    assert_eq!(fmax(&["discover", "--data", s(&missing), "--out", s(&dir.path().join("p.json"))]).status.code(), Some(2));
    generate(dir.path(), "1", "50", "0");
    let (data, target) = (dir.path().join("data.csv"), dir.path().join("p.json"));
    let args = ["discover", "--data", s(&data), "--alpha", "2", "--out", s(&target)];
    assert_eq!(fmax(&args).status.code(), Some(1));
    assert_eq!(fmax(&["--help"]).status.code(), Some(0));
}

#[test]
fn oracle_check_reports_tiny_deviations() {
    let out = ok(&["oracle-check", "--m", "1", "--trials", "100"]);
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(text.contains("gfm max deviation: 0e0"), "{text}");
    ok(&["oracle-check", "--m", "6", "--trials", "50", "--seed", "3"]);
}

#[test]
fn discover_writes_a_valid_partition_and_report() {
    let dir = TempDir::new().unwrap();
    generate(dir.path(), "2", "2000", "6");
    let out = dir.path().join("found.json");
    let report = dir.path().join("report.csv");
    ok(&["discover", "--data", s(&dir.path().join("data.csv")), "--out", s(&out), "--report", s(&report)]);
    let p: LabelPartition = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(p.m(), 8);
    let text = fs::read_to_string(&report).unwrap();
    assert_eq!(text.lines().count(), 1 + 28);
    no_temp_files(dir.path());
}

#[test]
fn experiment_writes_results_summary_and_diagnostics() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"scenarios":["DAG2"],"train_sizes":[50],"test_size":50,"repetitions":2,"seed":3}"#).unwrap();
    let (res, sum, diag) = (dir.path().join("r.csv"), dir.path().join("s.csv"), dir.path().join("d.csv"));
    ok(&[
        "experiment", "--config", s(&cfg), "--methods", "GFM,FGFM_true", "--out", s(&res), "--summary", s(&sum),
        "--diagnostics", s(&diag),
    ]);
    let results = fs::read_to_string(&res).unwrap();
    assert!(results.starts_with("scenario,method,train_size,repetition,mean_f,wall_time_ms\n"));
    assert_eq!(results.lines().count(), 1 + 2 * 2);
    assert_eq!(fs::read_to_string(&sum).unwrap().lines().count(), 1 + 2);
    assert_eq!(fs::read_to_string(&diag).unwrap().lines().count(), 1 + 2 * 2);

    fs::write(&cfg, "{not json").unwrap();
    assert_eq!(fmax(&["experiment", "--config", s(&cfg), "--out", s(&res)]).status.code(), Some(1));
    no_temp_files(dir.path());
}
