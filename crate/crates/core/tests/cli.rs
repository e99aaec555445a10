//! Black-box tests of the command-line driver.

mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::{bin, fixtures, snapshot};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .current_dir(dir)
        .args(args)
        .env_remove("CONTOUR_RATER_LOG")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Copies the three-speech fixture into a fresh directory.
fn three() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for e in std::fs::read_dir(fixtures().join("three")).unwrap() {
        let p = e.unwrap().path();
        std::fs::copy(&p, dir.path().join(p.file_name().unwrap())).unwrap();
    }
    dir
}

#[test]
fn contours_writes_one_csv_per_speech_and_a_manifest() {
    let dir = three();
    let o = run(dir.path(), &["--config", "run.toml", "contours"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("out/contours");
    let csvs: Vec<_> = std::fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| {
            let p = e.unwrap().path();
            (p.extension()? == "csv").then_some(p)
        })
        .collect();
    assert_eq!(csvs.len(), 3);
    let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("seed = 7"), "{manifest}");
    assert!(manifest.contains("contours"), "{manifest}");
}

#[test]
fn config_paths_resolve_against_the_config_directory() {
    let dir = three();
    let elsewhere = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    let o = run(
        elsewhere.path(),
        &["--config", config.to_str().unwrap(), "ingest"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("out/ingest/labels.csv").is_file());
    assert!(std::fs::read_dir(elsewhere.path())
        .unwrap()
        .next()
        .is_none());
}

#[test]
fn fluency_reads_shared_and_per_speech_alignments() {
    let dir = three();
    let o = run(dir.path(), &["--config", "run.toml", "fluency"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("out/fluency/fluency.csv")).unwrap();
    for id in ["sp01", "sp02", "sp03"] {
        assert!(
            text.lines().any(|l| l.starts_with(id)),
            "{id} missing:\n{text}"
        );
    }
}

#[test]
fn stage_reruns_are_byte_identical() {
    let dir = three();
    for stage in ["ingest", "contours", "fluency"] {
        assert!(run(dir.path(), &["--config", "run.toml", stage])
            .status
            .success());
    }
    let first = snapshot(&dir.path().join("out"));
    for stage in ["ingest", "contours", "fluency"] {
        assert!(
            run(dir.path(), &["--config", "run.toml", "--jobs", "3", stage])
                .status
                .success()
        );
    }
    assert_eq!(first, snapshot(&dir.path().join("out")));
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "--seed", "3", "--out", "o", "synth", "--n", "12", "--aux-n", "10",
    ];
    assert!(run(dir.path(), &args).status.success());
    let first = snapshot(&dir.path().join("o"));
    assert!(!first.is_empty());
    assert!(run(dir.path(), &args).status.success());
    assert_eq!(first, snapshot(&dir.path().join("o")));
}

#[test]
fn evaluate_without_checkpoint_names_the_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(dir.path(), &["--out", "o", "synth", "--n", "12"])
        .status
        .success());
    let o = run(
        dir.path(),
        &["--out", "o", "evaluate", "--category", "funny"],
    );
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(
        err.contains("finetune") && err.contains("funny.ckpt"),
        "{err}"
    );
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["ingest", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).to_lowercase().contains("usage"));
}

#[test]
fn help_exits_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("explain"));
}

#[test]
fn missing_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["--config", "nope.toml", "ingest"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nope.toml"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "seed = 1\nwindow_size = 4\n").unwrap();
    let o = run(dir.path(), &["--config", "bad.toml", "ingest"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("window_size"), "{}", stderr(&o));
}

#[test]
fn unknown_category_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(dir.path(), &["--out", "o", "synth", "--n", "12"])
        .status
        .success());
    let o = run(
        dir.path(),
        &["--out", "o", "pretrain", "--category", "boring"],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("boring"));
}

#[test]
fn report_without_inputs_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["--out", "empty", "report"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn log_level_comes_from_the_environment() {
    let dir = three();
    let quiet = run(dir.path(), &["--config", "run.toml", "ingest"]);
    assert!(quiet.stderr.is_empty(), "{}", stderr(&quiet));
    let loud = Command::new(bin())
        .current_dir(dir.path())
        .args(["--config", "run.toml", "ingest"])
        .env("CONTOUR_RATER_LOG", "debug")
        .output()
        .unwrap();
    assert!(loud.status.success());
    assert!(!loud.stderr.is_empty());
}

#[test]
fn bundled_demo_config_is_valid() {
    let config = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/demo.toml");
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &[
            "--config",
            config.to_str().unwrap(),
            "--out",
            "o",
            "synth",
            "--n",
            "12",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
}
