//! Helpers shared by the integration tests that drive the `uprobe` binary.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;

const CONFIG: &str = r#"
[model]
n_layers = 2
n_heads = 2
hidden_dim = 16
ffn_dim = 16
max_seq_len = 32

[train]
steps = 20
batch_size = 8
log_every = 10

[probe]
max_iter = 100

[inlp]
max_iter = 4

[control]
draws = 2
"#;

pub fn uprobe(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_uprobe"))
        .current_dir(dir)
        .env("UPROBE_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let mut full = vec!["--config", "cfg.toml", "--seed", "5", "--threads", "2"];
    full.extend_from_slice(args);
    let out = uprobe(dir, &full);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Every subcommand once, in pipeline order.
pub fn pipeline(dir: &Path) {
    fs::write(dir.join("cfg.toml"), CONFIG).unwrap();
    ok(dir, &["gen-corpus", "--n", "240", "--split"]);
    ok(dir, &["train-lm", "--corpus", "corpus.train.jsonl"]);
    for (prefix, data) in [("tr", "corpus.train.jsonl"), ("dv", "corpus.dev.jsonl")] {
        ok(
            dir,
            &["dump-reps", "--model", "model.upml", "--data", data, "--category", "noun,masked_verb", "--out-prefix", prefix],
        );
    }
    ok(
        dir,
        &[
            "train-probes",
            "--train",
            "tr.noun.l0.repr",
            "tr.masked_verb.l2.repr",
            "--dev",
            "dv.noun.l0.repr",
            "dv.masked_verb.l2.repr",
        ],
    );
    ok(dir, &["cosine", "--probes", "probe.noun.l0.json", "probe.masked_verb.l2.json"]);
    ok(dir, &["cross-eval", "--probes", "probe.noun.l0.json", "--reps", "dv.noun.l0.repr", "dv.masked_verb.l0.repr"]);
    for l in 0..3 {
        let (tr, dv, out) = (format!("tr.noun.l{l}.repr"), format!("dv.noun.l{l}.repr"), format!("noun.l{l}.proj"));
        ok(dir, &["inlp", "--reps", &tr, "--dev", &dv, "--out", &out]);
    }
    let projs = ["noun.l0.proj", "noun.l1.proj", "noun.l2.proj"];
    let mut args = vec!["amnesic-sweep", "--model", "model.upml", "--data", "corpus.test.jsonl", "--position", "cue", "--projectors"];
    args.extend(projs);
    ok(dir, &args);
    ok(dir, &["cross-sweep", "--model", "model.upml", "--data", "corpus.test.jsonl", "--projectors", "noun.l0.proj"]);
    for extra in [None, Some("--random")] {
        let mut args = vec![
            "info-loss",
            "--model",
            "model.upml",
            "--train",
            "corpus.train.jsonl",
            "--dev",
            "corpus.dev.jsonl",
            "--position",
            "cue",
            "--category",
            "noun",
            "--out",
            if extra.is_some() { "info_loss_random" } else { "info_loss" },
            "--projectors",
        ];
        args.extend(projs);
        args.extend(extra);
        ok(dir, &args);
    }
    ok(dir, &["attn-sweep", "--model", "model.upml", "--data", "corpus.test.jsonl"]);
    ok(dir, &["distance", "--model", "model.upml", "--data", "corpus.test.jsonl", "--kind", "target_to_cue"]);
    ok(
        dir,
        &[
            "report",
            "--kind",
            "table2",
            "--sweeps",
            "sweep.json",
            "--info-loss",
            "info_loss.json",
            "--info-loss-random",
            "info_loss_random.json",
        ],
    );
}

pub fn artifacts(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| !p.to_string_lossy().ends_with(".manifest.json"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}
pub mod oracle;
