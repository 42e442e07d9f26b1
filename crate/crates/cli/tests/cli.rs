use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polyglot-probe"))
        .args(args)
        .current_dir(dir)
        .env("POLYGLOT_PROBE_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

fn synth(dir: &Path, out: &str, languages: &str) {
    ok(
        dir,
        &[
            "gen-synthetic",
            "--seed",
            "3",
            "--out",
            out,
            "--languages",
            languages,
            "--concepts",
            "20",
            "--sentences",
            "10",
        ],
    );
}

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["--help"][..], &["--version"], &["lens", "--help"]] {
        assert_eq!(run(dir.path(), args).status.code(), Some(0), "{args:?}");
    }
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["no-such-command"]).status.code(), Some(1));
    assert_eq!(run(dir.path(), &["stats", "--mode", "sideways"]).status.code(), Some(1));
}

#[test]
fn missing_input_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &[
            "gen-codemix",
            "--out",
            "cm",
            "--corpus",
            "absent.jsonl",
            "--dict",
            "a:b=absent.tsv",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    let m = manifest(&dir.path().join("cm"));
    assert!(m["error"].as_str().unwrap().contains("absent.jsonl"));
    assert_eq!(m["outputs"].as_object().map_or(0, |o| o.len()), 0);
}

#[test]
fn lens_rejects_mismatched_vocabulary() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "s2", "2");
    synth(dir.path(), "s3", "3");
    ok(
        dir.path(),
        &[
            "train",
            "--out",
            "m",
            "--prompts",
            "s2/train_prompts.jsonl",
            "--vocab",
            "s2/vocab.json",
            "--n-layers",
            "1",
            "--d-model",
            "16",
            "--n-heads",
            "2",
            "--d-ff",
            "16",
            "--steps",
            "2",
            "--batch",
            "2",
        ],
    );
    let out = run(
        dir.path(),
        &[
            "lens",
            "--out",
            "l",
            "--model",
            "m/model.ttlm",
            "--vocab",
            "s3/vocab.json",
            "--synonyms",
            "s3/synonyms.json",
            "--prompts",
            "s3/eval_prompts.jsonl",
        ],
    );
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(manifest(&dir.path().join("l"))["error"].is_string());
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("cfg.toml"),
        "seed = 1\n[gen-synthetic]\nconcepts = 15\nlanguages = 2\n",
    )
    .unwrap();
    ok(
        dir.path(),
        &[
            "--config",
            "cfg.toml",
            "gen-synthetic",
            "--out",
            "s",
            "--concepts",
            "12",
        ],
    );
    let m = manifest(&dir.path().join("s"));
    assert_eq!(m["config"]["concepts"], 12);
    assert_eq!(m["config"]["languages"], 2);
    assert_eq!(m["config"]["seed"], 1);
    let notes = m["overrides"].to_string();
    assert!(notes.contains("concepts"), "{notes}");

    let out = run(
        dir.path(),
        &[
            "--config",
            "cfg.toml",
            "--strict-config",
            "gen-synthetic",
            "--out",
            "t",
            "--concepts",
            "12",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("15") && err.contains("12"), "{err}");
}

#[test]
fn unknown_config_key_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("cfg.json"),
        r#"{"gen-synthetic": {"concepts": 10, "colour": "red"}}"#,
    )
    .unwrap();
    let out = run(dir.path(), &["--config", "cfg.json", "gen-synthetic", "--out", "s"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn codemix_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "s", "3");
    let mut outputs = Vec::new();
    for out in ["a", "b"] {
        ok(
            dir.path(),
            &[
                "gen-codemix",
                "--seed",
                "42",
                "--out",
                out,
                "--corpus",
                "s/parallel.jsonl",
                "--dict-dir",
                "s",
                "--ratio",
                "0.5",
            ],
        );
        outputs.push(std::fs::read(dir.path().join(out).join("codemix.jsonl")).unwrap());
    }
    assert!(!outputs[0].is_empty());
    assert_eq!(outputs[0], outputs[1]);
}
