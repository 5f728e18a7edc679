//! The binary end to end: every subcommand against a synthetic dataset,
//! plus the error paths that must exit nonzero with a usable message.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::tempdir;

fn hkgnn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hkgnn"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = hkgnn(dir, args);
    assert!(
        out.status.success(),
        "hkgnn {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn err(dir: &Path, args: &[&str]) -> String {
    let out = hkgnn(dir, args);
    assert!(!out.status.success(), "hkgnn {args:?} unexpectedly succeeded");
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const TINY_CONFIG: &str = "\
seed = 3

[kg]
d = 16
alpha = 8
epochs = 2
batch_size = 64
n_negatives = 2

[gnn]
layers = 1

[asm]
n_h = 2
m = 8
dropout = 0.0
lr = 1e-3
epochs = 2
batch_size = 16

[eval]
batch_size = 8
";

fn synth_and_prepare(dir: &Path, least_fraction: &str) {
    ok(
        dir,
        &[
            "synth", "--users", "10", "--pois", "8", "--checkins", "300", "--seed", "5", "--out",
            "raw",
        ],
    );
    ok(
        dir,
        &[
            "prepare",
            "--checkins",
            "raw/checkins.tsv",
            "--pois",
            "raw/pois.csv",
            "--friendships",
            "raw/friendships.tsv",
            "--out",
            "prep",
            "--least-fraction",
            least_fraction,
        ],
    );
    fs::write(dir.join("tiny.toml"), TINY_CONFIG).unwrap();
}

#[test]
fn full_pipeline_on_synthetic_data() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    synth_and_prepare(d, "0.3");

    ok(d, &["train-kg", "--data", "prep", "--config", "tiny.toml", "--out", "kg.ckpt"]);
    ok(
        d,
        &[
            "train", "--data", "prep", "--kg", "kg.ckpt", "--config", "tiny.toml", "--out",
            "full.ckpt",
        ],
    );

    let table = ok(d, &["evaluate", "--data", "prep", "--checkpoint", "full.ckpt"]);
    for metric in ["Acc@1", "Acc@5", "Acc@10", "MRR", "AR"] {
        assert!(table.contains(metric), "missing {metric} in:\n{table}");
    }
    assert!(table.contains("config_hash"), "{table}");
    assert!(table.contains("build_id"), "{table}");
    assert!(d.join("full.ckpt.report.json").exists());
    assert!(d.join("full.ckpt.ranks.jsonl").exists());

    let least = ok(d, &["evaluate", "--data", "prep", "--checkpoint", "full.ckpt", "--least"]);
    assert!(least.contains("least-visited"), "{least}");

    let recs = ok(
        d,
        &[
            "recommend",
            "--data",
            "prep",
            "--checkpoint",
            "full.ckpt",
            "--user",
            "u00",
            "--time",
            "2012-07-04T18:30:00-05:00",
            "--k",
            "4",
        ],
    );
    assert_eq!(recs.lines().count(), 5, "{recs}");
    assert!(recs.lines().skip(1).all(|l| l.contains("score")), "{recs}");
}

#[test]
fn empty_least_visited_set_is_an_explicit_error() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    synth_and_prepare(d, "0");
    ok(d, &["train-kg", "--data", "prep", "--config", "tiny.toml", "--out", "kg.ckpt"]);
    ok(
        d,
        &[
            "train", "--data", "prep", "--kg", "kg.ckpt", "--config", "tiny.toml", "--out",
            "full.ckpt",
        ],
    );
    let msg = err(d, &["evaluate", "--data", "prep", "--checkpoint", "full.ckpt", "--least"]);
    assert!(msg.contains("empty test set"), "{msg}");
}

#[test]
fn sweep_emits_one_row_per_value() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    synth_and_prepare(d, "0.3");
    let out = ok(
        d,
        &["sweep", "--data", "prep", "--config", "tiny.toml", "--param", "gnn.layers=1,2,3"],
    );
    let rows: Vec<&str> =
        out.lines().filter(|l| l.starts_with("gnn.layers=")).collect();
    assert_eq!(rows.len(), 3, "{out}");
    for v in ["gnn.layers=1", "gnn.layers=2", "gnn.layers=3"] {
        assert!(rows.iter().any(|r| r.starts_with(v)), "{out}");
    }
}

#[test]
fn config_errors_name_the_offending_key() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    synth_and_prepare(d, "0.3");

    fs::write(d.join("zero.toml"), "[kg]\nd = 0\n").unwrap();
    let msg = err(d, &["train-kg", "--data", "prep", "--config", "zero.toml", "--out", "x.ckpt"]);
    assert!(msg.contains("kg.d"), "{msg}");

    fs::write(d.join("unknown.toml"), "[kg]\nwidth = 32\n").unwrap();
    let msg =
        err(d, &["train-kg", "--data", "prep", "--config", "unknown.toml", "--out", "x.ckpt"]);
    assert!(msg.contains("width"), "{msg}");

    let msg = err(
        d,
        &["sweep", "--data", "prep", "--config", "tiny.toml", "--param", "window=1,2"],
    );
    assert!(msg.contains("window"), "{msg}");
}

#[test]
fn ablate_runs_the_requested_variants() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    synth_and_prepare(d, "0.3");
    let out = ok(
        d,
        &[
            "ablate",
            "--data",
            "prep",
            "--config",
            "tiny.toml",
            "--variant",
            "full",
            "--variant",
            "no-refine",
            "--variant",
            "no-mobility",
        ],
    );
    assert!(out.contains("full"), "{out}");
    assert!(out.contains("w/o graph refinement"), "{out}");
    assert!(out.contains("w/o mobility facts"), "{out}");
    assert_eq!(out.lines().count(), 4, "{out}");
}

#[test]
fn same_seed_means_identical_checkpoints() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    synth_and_prepare(d, "0.3");
    ok(
        d,
        &[
            "train-kg", "--data", "prep", "--config", "tiny.toml", "--out", "a.ckpt", "--seed",
            "42",
        ],
    );
    ok(
        d,
        &[
            "train-kg", "--data", "prep", "--config", "tiny.toml", "--out", "b.ckpt", "--seed",
            "42",
        ],
    );
    ok(
        d,
        &[
            "train-kg", "--data", "prep", "--config", "tiny.toml", "--out", "c.ckpt", "--seed",
            "43",
        ],
    );
    let a = fs::read(d.join("a.ckpt")).unwrap();
    let b = fs::read(d.join("b.ckpt")).unwrap();
    let c = fs::read(d.join("c.ckpt")).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn missing_inputs_fail_with_the_path_in_the_message() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    let msg = err(d, &["evaluate", "--data", "nowhere", "--checkpoint", "x.ckpt"]);
    assert!(msg.contains("nowhere"), "{msg}");
}
