use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hashtrace"))
        .args(args)
        .output()
        .expect("spawn hashtrace")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["train"]).status.code(), Some(1));
    assert_eq!(run(&["gen-data", "--groups", "many", "--out", "x"]).status.code(), Some(1));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let out = run(&["trace", "--index", s(&missing), "--model", s(&missing), "--video", s(&missing)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    let out = run(&["train", "--data", s(&missing), "--out", s(&missing)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gen_train_trace_eval_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let model = dir.path().join("model");
    let evals = dir.path().join("eval");
    let reports = dir.path().join("report");
    ok(&["gen-data", "--groups", "8", "--fakes", "3", "--frames", "12", "--seed", "3", "--out", s(&data)]);
    assert!(data.join("manifest.tsv").is_file());

    ok(&["train", "--data", s(&data), "--iters", "40", "--lr", "1e-3", "--out", s(&model)]);
    for f in ["model.vthp", "index.vthx", "history.csv"] {
        assert!(model.join(f).is_file(), "{f}");
    }
    let history = fs::read_to_string(model.join("history.csv")).unwrap();
    assert_eq!(history.lines().next(), Some("iter,loss,inter_mean,intra_mean,mean_bit"));
    assert_eq!(history.lines().count(), 41);

    let (index, ckpt) = (model.join("index.vthx"), model.join("model.vthp"));
    let line = ok(&["trace", "--index", s(&index), "--model", s(&ckpt), "--video", s(&data.join("g0002/original"))]);
    let fields: Vec<&str> = line.trim_end().split('\t').collect();
    assert_eq!(fields.len(), 4, "{line}");
    let distance: u32 = fields[2].parse().unwrap();
    let runner_up: u32 = fields[3].parse().unwrap();
    assert!(distance <= runner_up && runner_up <= 64);

    let table = ok(&[
        "eval", "--index", s(&index), "--model", s(&ckpt), "--data", s(&data), "--perturb", "original,crop",
        "--out", s(&evals),
    ]);
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 2, "{table}");
    assert!(rows[0].starts_with("original\t64\t") && rows[1].starts_with("crop\t64\t"));
    let robustness = fs::read_to_string(evals.join("robustness.csv")).unwrap();
    assert_eq!(robustness.lines().next(), Some("perturbation,k,accuracy"));
    assert!(evals.join("confusion.csv").is_file());

    fs::copy(model.join("history.csv"), evals.join("history.csv")).unwrap();
    ok(&["report", "--in", s(&evals), "--out", s(&reports)]);
    assert!(reports.join("summary.csv").is_file());
    assert!(reports.join("robustness_drop.csv").is_file());
}

#[test]
fn localize_writes_masks_and_miou() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let pred = dir.path().join("pred");
    ok(&["gen-data", "--groups", "2", "--fakes", "2", "--frames", "6", "--seed", "9", "--out", s(&data)]);
    let out = ok(&[
        "localize", "--fake", s(&data.join("g0000/fake_00")), "--original", s(&data.join("g0000/original")),
        "--out", s(&pred),
    ]);
    let v: f64 = out.trim().strip_prefix("mIoU=").expect("mIoU line").parse().unwrap();
    assert!((0.0..=1.0).contains(&v));
    let masks = fs::read_dir(&pred)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("pred_mask_"))
        .count();
    assert_eq!(masks, 6);
}

#[test]
fn ablate_writes_one_history_per_activation() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("abl");
    ok(&["gen-data", "--groups", "8", "--fakes", "3", "--frames", "10", "--out", s(&data)]);
    let table = ok(&[
        "ablate", "--mode", "intra", "--data", s(&data), "--iters", "5", "--activations", "tanh,relu", "--out",
        s(&out),
    ]);
    assert_eq!(table.lines().count(), 3, "{table}");
    assert!(out.join("ablation_intra_tanh.csv").is_file());
    assert!(out.join("ablation_intra_relu.csv").is_file());
    assert_eq!(run(&["ablate", "--mode", "neither", "--data", s(&data), "--out", s(&out)]).status.code(), Some(1));
}
