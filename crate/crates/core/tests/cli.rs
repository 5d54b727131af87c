use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cropseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cropseg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(args: &[&str]) -> i32 {
    cropseg(args).status.code().expect("exit code")
}

fn ok(args: &[&str]) {
    let out = cropseg(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL_TRAIN: [&str; 10] = [
    "--tile", "16", "--epochs", "2", "--levels", "2", "--base-channels", "3", "--folds", "2",
];

#[test]
fn help_and_version_succeed() {
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["--version"]), 0);
    assert_eq!(code(&["train", "--help"]), 0);
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(code(&[]), 1);
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["train", "--bogus"]), 1);
    assert_eq!(code(&["train", "--data", "/does/not/exist", "--out", s(&out)]), 1);
    assert_eq!(code(&["train", "--loss", "hinge"]), 1);
    assert_eq!(code(&["synthesize", "--out", s(&out), "--format", "tiff"]), 1);
    let cfg = dir.path().join("bad.config");
    fs::write(&cfg, "no equals sign\n").unwrap();
    assert_eq!(code(&["synthesize", "--config", s(&cfg), "--out", s(&out)]), 1);
}

#[test]
fn invalid_training_configuration_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    ok(&["synthesize", "--out", s(&ds), "--size", "16", "--years", "a"]);
    let out = dir.path().join("m");
    assert_eq!(code(&["train", "--data", s(&ds), "--out", s(&out), "--tile", "12", "--levels", "3"]), 1);
    assert_eq!(code(&["train", "--data", s(&ds), "--out", s(&out), "--tile", "16", "--folds", "5"]), 1);
}

#[test]
fn corrupted_dataset_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    ok(&["synthesize", "--out", s(&ds), "--size", "16", "--years", "a"]);
    let cube = ds.join("a").join("cube.bin");
    let mut bytes = fs::read(&cube).unwrap();
    bytes[100] ^= 0xff;
    fs::write(&cube, bytes).unwrap();
    let out = dir.path().join("m");
    assert_eq!(code(&["train", "--data", s(&ds), "--out", s(&out), "--tile", "16", "--folds", "1"]), 2);
}

#[test]
fn failing_gradient_check_exits_three() {
    assert_eq!(code(&["gradcheck", "--seeds", "2", "--filter", "layer/Conv2d"]), 0);
    let out = cropseg(&["gradcheck", "--seeds", "2", "--filter", "layer/Conv2d", "--perturb", "0.01"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL layer/Conv2d"));
}

#[test]
fn preprocess_is_deterministic_and_records_its_config() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    ok(&["synthesize", "--out", s(&raw), "--format", "raw", "--size", "24", "--seed", "7"]);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["preprocess", "--raw", s(&raw), "--out", s(&a), "--test-years", "2019"]);
    ok(&["preprocess", "--raw", s(&raw), "--out", s(&b), "--test-years", "2019"]);
    for year in ["2017", "2018", "2019"] {
        for f in ["cube.bin", "labels.bin", "mask.bin", "manifest"] {
            assert_eq!(fs::read(a.join(year).join(f)).unwrap(), fs::read(b.join(year).join(f)).unwrap(), "{year}/{f}");
        }
    }
    let config = fs::read_to_string(a.join("run.config")).unwrap();
    assert!(config.contains("command=preprocess"));
    assert!(config.contains("seed=0"));
    assert!(config.contains("excluded_pixels.2017="));
}

#[test]
fn config_file_values_apply_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.config");
    let out = dir.path().join("ds");
    fs::write(&cfg, format!("out={}\nsize=8\nyears=x\nseed=11\n", out.display())).unwrap();
    ok(&["synthesize", "--config", s(&cfg), "--size", "16"]);
    let written = fs::read_to_string(out.join("run.config")).unwrap();
    assert!(written.contains("size=16"));
    assert!(written.contains("seed=11"));
    assert!(out.join("x").join("manifest").is_file());
}

#[test]
fn full_pipeline_and_job_count_independence() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    ok(&["synthesize", "--out", s(&ds), "--size", "32", "--test-years", "2019", "--seed", "3"]);
    let (m1, m2) = (dir.path().join("m1"), dir.path().join("m2"));
    let train = |out: &Path, jobs: &str| {
        let mut args = vec!["train", "--data", s(&ds), "--test-years", "2019", "--seed", "3"];
        args.extend(SMALL_TRAIN);
        args.extend(["--out", s(out), "--jobs", jobs]);
        ok(&args);
    };
    train(&m1, "1");
    train(&m2, "2");
    for f in ["history.csv", "summary.csv", "fold0.weights", "fold1.weights"] {
        assert_eq!(fs::read(m1.join(f)).unwrap(), fs::read(m2.join(f)).unwrap(), "{f}");
    }
    let history = fs::read_to_string(m1.join("history.csv")).unwrap();
    assert_eq!(history.lines().next(), Some("epoch,fold,train_loss,val_kappa,shuffle_seed"));
    assert_eq!(history.lines().count(), 1 + 2 * 2);

    let pred = dir.path().join("pred");
    assert_eq!(code(&["predict", "--models", s(&m1), "--data", s(&ds), "--out", s(&pred)]), 1);
    ok(&["predict", "--models", s(&m1), "--data", s(&ds), "--out", s(&pred), "--folds", "2", "--render"]);
    let probs = fs::read(pred.join("2019").join("probs.bin")).unwrap();
    assert_eq!(probs.len(), 3 * 32 * 32 * 4);
    assert!(pred.join("2019").join("classes.ppm").is_file());

    let eval = dir.path().join("eval");
    ok(&["evaluate", "--pred", s(&pred), "--data", s(&ds), "--out", s(&eval), "--render"]);
    let metrics = fs::read_to_string(eval.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert!(lines[0].starts_with("year,valid_pixels,kappa,ma_pa,ma_ua"));
    assert_eq!(lines.len(), 1 + 3 + 1);
    assert!(lines[4].starts_with("all,"));
    for f in ["difference.bin", "confusion.csv", "difference.ppm", "prediction.ppm", "reference.ppm"] {
        assert!(eval.join("2017").join(f).is_file(), "{f}");
    }
    for out in [&ds, &m1, &pred, &eval] {
        assert!(fs::read_to_string(out.join("run.config")).unwrap().contains("seed="));
    }
}
