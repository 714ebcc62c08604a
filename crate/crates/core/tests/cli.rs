//! End-to-end runs of the `uprobe` binary.

mod common;

use std::fs;

use common::{artifacts, pipeline, uprobe};
use uprobe_core::report::{sha256_file, RunManifest};

#[test]
fn every_subcommand_is_byte_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());
    let (fa, fb) = (artifacts(a.path()), artifacts(b.path()));
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    for (name, bytes) in &fa {
        assert!(bytes == &fb[name], "{name} differs between identical runs");
    }
    for expected in ["table2.csv", "attn.csv", "attn.json", "distance.csv", "sweep.csv", "cosine.csv", "probe.report.csv"] {
        assert!(fa.contains_key(expected), "missing {expected}");
    }

    // manifests exist for all thirteen subcommands and hash what they list
    let manifests: Vec<_> = fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.to_string_lossy().ends_with(".manifest.json"))
        .collect();
    assert_eq!(manifests.len(), 13);
    for m in manifests {
        let manifest: RunManifest = serde_json::from_slice(&fs::read(&m).unwrap()).unwrap();
        assert_eq!(manifest.seeds["seed"], 5);
        assert!(!manifest.outputs.is_empty(), "{} lists no outputs", m.display());
        for rec in manifest.inputs.iter().chain(&manifest.outputs) {
            let path = a.path().join(&rec.path);
            assert_eq!(sha256_file(&path).unwrap(), rec.sha256, "{}", rec.path);
        }
    }
    let table = fs::read_to_string(a.path().join("table2.csv")).unwrap();
    assert!(table.starts_with("block,row,0,1,2\n"));
    for row in ["Number of Directions", "Loss in Layers", "Loss in Layers (Random)", "NA Performance Drop", "NA Performance Drop (Random)"] {
        assert!(table.contains(&format!("noun@cue,{row},")), "missing row {row}");
    }
}

#[test]
fn different_seeds_give_different_corpora() {
    let dir = tempfile::tempdir().unwrap();
    for seed in ["1", "2"] {
        let out = uprobe(dir.path(), &["--seed", seed, "gen-corpus", "--n", "50", "--out", &format!("c{seed}.jsonl")]);
        assert!(out.status.success());
    }
    assert_ne!(fs::read(dir.path().join("c1.jsonl")).unwrap(), fs::read(dir.path().join("c2.jsonl")).unwrap());
}

#[test]
fn exit_codes_distinguish_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| uprobe(dir.path(), args).status.code();
    assert_eq!(code(&["--help"]), Some(0));
    assert_eq!(code(&["no-such-command"]), Some(2));
    assert_eq!(code(&["gen-corpus", "--bogus-flag"]), Some(2));
    assert_eq!(code(&["inlp", "--reps", "missing.repr", "--dev", "missing.repr", "--out", "x.proj"]), Some(2));
    assert_eq!(code(&["--config", "missing.toml", "gen-corpus"]), Some(2));
    fs::write(dir.path().join("bad.toml"), "[train]\nsteps = \"many\"\n").unwrap();
    assert_eq!(code(&["--config", "bad.toml", "gen-corpus"]), Some(2));
    fs::write(dir.path().join("bad.jsonl"), "{not json\n").unwrap();
    assert_eq!(code(&["train-lm", "--corpus", "bad.jsonl"]), Some(2));
    assert_eq!(code(&["gen-corpus", "--n", "0"]), Some(2));
}
