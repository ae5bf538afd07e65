use std::path::Path;
use std::process::{Command, Output};

fn tadet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tadet"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const TINY_CONFIG: &str = r#"
seed = 3

[encoder]
input_dim = 8
embed_dim = 8
levels = 3
group_count = 2
ffn_expansion = 2

[decoder]
num_classes = 2
bins = 4

[training]
epochs = 1
warmup_epochs = 1
eval_every = 1
"#;

fn synth(dir: &Path) -> String {
    let data = dir.join("data");
    let data_s = data.to_str().unwrap().to_string();
    let out = tadet(&[
        "synth",
        "--out",
        &data_s,
        "--videos",
        "5",
        "--frames",
        "64",
        "--dim",
        "8",
        "--classes",
        "2",
        "--seed",
        "1",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("wrote 5 videos"));
    data_s
}

#[test]
fn synth_train_infer_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, TINY_CONFIG).unwrap();
    let run = dir.path().join("run");
    let run_s = run.to_str().unwrap();

    let out = tadet(&[
        "train",
        "--data",
        &data,
        "--out",
        run_s,
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let ckpt = run.join("model.ckpt");
    assert!(ckpt.is_file());
    let metrics = std::fs::read_to_string(run.join("metrics.tsv")).unwrap();
    assert_eq!(metrics.lines().count(), 2);

    // Resume extends the run by one epoch.
    let out = tadet(&[
        "train", "--data", &data, "--out", run_s, "--resume", "--epochs", "2",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = std::fs::read_to_string(run.join("metrics.tsv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);

    let dets = dir.path().join("dets.jsonl");
    let out = tadet(&[
        "infer",
        "--data",
        &data,
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--split",
        "all",
        "--out",
        dets.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(std::fs::read_to_string(&dets).unwrap().lines().count() > 0);

    let from_file = tadet(&[
        "eval",
        "--data",
        &data,
        "--detections",
        dets.to_str().unwrap(),
        "--split",
        "all",
    ]);
    assert_eq!(
        code(&from_file),
        0,
        "{}",
        String::from_utf8_lossy(&from_file.stderr)
    );
    let json = dir.path().join("report.json");
    let from_ckpt = tadet(&[
        "eval",
        "--data",
        &data,
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--split",
        "all",
        "--json",
        json.to_str().unwrap(),
    ]);
    assert_eq!(
        code(&from_ckpt),
        0,
        "{}",
        String::from_utf8_lossy(&from_ckpt.stderr)
    );
    assert_eq!(stdout(&from_file), stdout(&from_ckpt));
    assert!(stdout(&from_ckpt).contains("Avg"));
    assert!(json.is_file());

    let custom = tadet(&[
        "eval",
        "--data",
        &data,
        "--detections",
        dets.to_str().unwrap(),
        "--thresholds",
        "0.5,0.75",
    ]);
    assert_eq!(code(&custom), 0);
    assert!(stdout(&custom).contains("75"));
}

#[test]
fn gradcheck_passes_and_catches_injected_faults() {
    let ok = tadet(&["gradcheck", "--points", "1"]);
    assert_eq!(code(&ok), 0, "{}", stdout(&ok));
    assert!(stdout(&ok).contains("full_loss"));
    let bad = tadet(&["gradcheck", "--points", "1", "--inject-fault"]);
    assert_eq!(code(&bad), 3);
    assert!(stdout(&bad).contains("FAIL"));
}

#[test]
fn selftest_includes_oracle_suites() {
    let out = tadet(&["selftest", "--points", "1"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(stdout(&out).contains("soft_nms_bitwise"));
    assert!(stdout(&out).contains("spectral_filter"));
}

#[test]
fn exit_codes_follow_error_kinds() {
    let dir = tempfile::tempdir().unwrap();
    // Usage error.
    assert_eq!(code(&tadet(&["train"])), 2);
    // Bad config value.
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[training]\nbase_lr = -1.0\n").unwrap();
    let data = synth(dir.path());
    let out = tadet(&[
        "train",
        "--data",
        &data,
        "--out",
        dir.path().join("r").to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    // Unknown config key.
    std::fs::write(&cfg, "[training]\nlearning_rate = 0.1\n").unwrap();
    let out = tadet(&[
        "train",
        "--data",
        &data,
        "--out",
        dir.path().join("r").to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    // Missing dataset.
    let missing = dir.path().join("nowhere");
    let out = tadet(&[
        "eval",
        "--data",
        missing.to_str().unwrap(),
        "--detections",
        "x.jsonl",
    ]);
    assert_eq!(code(&out), 4);
    // Bad threshold grid.
    assert_eq!(
        code(&tadet(&[
            "eval",
            "--data",
            &data,
            "--detections",
            "x",
            "--thresholds",
            "0.9:0.1:0.3"
        ])),
        2
    );
}
