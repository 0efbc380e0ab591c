use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn smoke() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.conf")
}

fn lab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_unlearn-lab"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn smoke_pipeline_through_the_binary() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let config = smoke();
    let config = config.to_str().unwrap();

    let o = lab(&["--config", config, "finetune"], &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("prepared.txt").exists());

    let o = lab(&["--config", config, "unlearn"], &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("epoch   2"));
    assert!(stdout.contains("best ES trade-off"));

    let o = lab(&["--config", config, "evaluate"], &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(report["es_retain"].is_number());

    let o = lab(&["--config", config, "plot-data", "--svg"], &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for kind in ["weight_vs_loss", "ktl_histogram", "beta_curves", "telemetry"] {
        assert!(out.join("plots").join(format!("{kind}.csv")).exists(), "{kind}");
    }
}

#[test]
fn sweep_and_corpus_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let config = smoke();
    let config = config.to_str().unwrap();

    let corpus = tmp.path().join("corpus");
    let o = lab(&["--config", config, "gen-corpus"], &corpus);
    assert_eq!(code(&o), 0);
    assert!(corpus.join("corpus/pairs.jsonl").exists());

    let sweep = tmp.path().join("sweep");
    let o = lab(
        &["--config", config, "sweep", "--grid", "unlearn.lambda=0,1", "--format", "json"],
        &sweep,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(sweep.join("sweep.csv").exists() && sweep.join("sweep.json").exists());
    assert!(sweep.join("cell_001/report.json").exists());
}

#[test]
fn validation_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let bad = tmp.path().join("bad.conf");

    std::fs::write(&bad, "unlearn.nonsense = 1\n").unwrap();
    assert_eq!(code(&lab(&["--config", bad.to_str().unwrap(), "unlearn"], &out)), 2);

    std::fs::write(&bad, "unlearn.objective = npo\nunlearn.reference = false\n").unwrap();
    assert_eq!(code(&lab(&["--config", bad.to_str().unwrap(), "unlearn"], &out)), 2);

    let missing = tmp.path().join("missing.conf");
    assert_eq!(code(&lab(&["--config", missing.to_str().unwrap(), "unlearn"], &out)), 2);
    assert_eq!(code(&lab(&["no-such-command"], &out)), 2);
}

#[test]
fn runtime_errors_exit_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("empty");
    let ckpt = tmp.path().join("garbage.ckpt");
    std::fs::write(&ckpt, b"not a checkpoint").unwrap();
    let config = smoke();
    let o = lab(
        &["--config", config.to_str().unwrap(), "evaluate", "--checkpoint", ckpt.to_str().unwrap()],
        &out,
    );
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}
