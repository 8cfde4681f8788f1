use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cfaa::checkpoint;
use cfaa::config::RunConfig;
use cfaa::pipeline::{align_diagnostics, format_diagnostics, prepare_from_files};

fn cfaa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfaa"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// A small synthetic fixture that survives the 30-record source filter.
const FIXTURE: &[&str] = &[
    "--synth-users", "160",
    "--synth-items", "60",
    "--synth-density", "0.6",
    "--synth-target-density", "0.25",
    "--batch-size", "32",
    "--epochs", "3",
    "--steps-per-epoch", "12",
    "--lr", "0.01",
    "--seed", "4",
];

fn run_ok(command: &str, data: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec![command, "--data-dir", data.to_str().unwrap(), "--out-dir", out.to_str().unwrap()];
    args.extend_from_slice(FIXTURE);
    args.extend_from_slice(extra);
    let o = cfaa(&args);
    assert!(o.status.success(), "{command} failed: {}", stderr(&o));
}

#[test]
fn misspelled_key_is_rejected_by_name() {
    let o = cfaa(&["train", "--lamda_O", "0.5"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("lamda_o"), "{}", stderr(&o));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "seed = 1\nlamda_O = 0.5\n").unwrap();
    let o = cfaa(&["train", "--config", cfg.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("lamda_o"), "{}", stderr(&o));
}

#[test]
fn missing_files_are_named() {
    let o = cfaa(&["train", "--data-dir", "/definitely/not/here"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("/definitely/not/here/source.tsv"), "{}", stderr(&o));

    let o = cfaa(&["evaluate", "--config", "/nope/run.cfg"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("/nope/run.cfg"), "{}", stderr(&o));
}

#[test]
fn unknown_command_fails() {
    let o = cfaa(&["fit"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("fit"));
}

fn read(path: PathBuf) -> String {
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn train_evaluate_and_diagnose() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("out");
    run_ok("synth-data", &data, &out, &[]);
    for f in ["source.tsv", "target.tsv", "source_users.cfae", "target_items.cfae", "synth-data.resolved.cfg"] {
        assert!(data.join(f).exists(), "{f} missing");
    }

    run_ok("train", &data, &out, &["--arm", "base"]);
    assert!(out.join("model.ckpt").exists());
    let epochs = read(out.join("epochs.tsv"));
    let rows: Vec<Vec<&str>> = epochs.lines().skip(1).map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 3);
    let means: Vec<f64> = rows.iter().map(|r| r[3].parse().unwrap()).collect();
    for (e, r) in rows.iter().enumerate() {
        assert_eq!(r[0], "4");
        assert_eq!(r[2], (e + 1).to_string());
    }
    assert!(means.windows(2).all(|w| w[1] <= w[0]), "epoch means {means:?}");
    let losses = read(out.join("losses.tsv"));
    assert_eq!(losses.lines().count(), 1 + 36);
    let resolved = read(out.join("train.resolved.cfg"));
    assert!(resolved.contains("seed = 4") && resolved.contains("arm = base"));

    run_ok("evaluate", &data, &out, &["--arm", "base"]);
    let metrics = read(out.join("metrics.txt"));
    assert!(metrics.contains("hr@10=") && metrics.contains("seed=4"));
    let json = metrics.lines().last().unwrap();
    let record: serde_json::Value = serde_json::from_str(json).unwrap();
    assert_eq!(record["arm"], "base");

    run_ok("align-diagnostics", &data, &out, &["--arm", "base"]);
    let written = read(out.join("alignment.txt"));
    let cfg = RunConfig::from_file(&out.join("align-diagnostics.resolved.cfg")).unwrap();
    let ckpt = checkpoint::load(&out.join("model.ckpt")).unwrap();
    let prepared = prepare_from_files(&cfg).unwrap();
    let direct = align_diagnostics(&ckpt.params, &prepared, &cfg).unwrap();
    assert_eq!(written, format_diagnostics(&cfg, &direct));
}

#[test]
fn resolved_config_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let first = dir.path().join("first");
    run_ok("synth-data", &data, &first, &[]);
    run_ok("train", &data, &first, &["--epochs", "1"]);
    let second = dir.path().join("second");
    let cfg = first.join("train.resolved.cfg");
    let o = cfaa(&["train", "--config", cfg.to_str().unwrap(), "--out-dir", second.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["losses.tsv", "epochs.tsv"] {
        let a = std::fs::read(first.join(f)).unwrap();
        let b = std::fs::read(second.join(f)).unwrap();
        assert!(a == b, "{f} differs between runs");
    }
    // the stored config records each run's own out_dir, so compare the trained state
    let a = checkpoint::load(&first.join("model.ckpt")).unwrap();
    let b = checkpoint::load(&second.join("model.ckpt")).unwrap();
    assert!(a.params == b.params, "parameters differ between runs");
    assert!(a.adam == b.adam, "optimizer state differs between runs");
}
