use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Stdio};

use serde_json::Value;

const SMALL: &str = "\
seed=3
world.users=150
world.authors=30
world.products=60
world.categories=5
world.clusters=8
world.warm_videos=160
world.cold_videos=40
world.history_len=10
world.full_impressions=2000
world.test_impressions=600
model.attn_dim=8
model.hidden=16,8
model.video_dim=8
model.item_dim=8
neighbors_k=4
semantic_k=4
batch_size=256
bench.requests=20
";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_coldstart"));
    c.env("RUST_LOG", "warn");
    c
}

fn run_ok(dir: &Path, args: &[&str]) -> String {
    let out = bin().current_dir(dir).arg("--config").arg("small.conf").args(args).output().unwrap();
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn manifest(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const INPUTS: [&str; 6] = ["--graph", "graph", "--users", "world/users.tsv", "--neighbors", "nb.bin"];

fn pipeline(dir: &Path) {
    std::fs::write(dir.join("small.conf"), SMALL).unwrap();
    run_ok(dir, &["synth-data", "--out", "world"]);
    run_ok(dir, &["build-graph", "--videos", "world/videos.tsv", "--out", "graph"]);
    run_ok(dir, &["sample-neighbors", "--graph", "graph", "--out", "nb.bin"]);
    let mut a = vec!["pretrain", "--train", "world/d_full.tsv", "--out", "pre.ckpt"];
    a.extend(INPUTS);
    run_ok(dir, &a);
    let mut a = vec![
        "finetune",
        "--checkpoint",
        "pre.ckpt",
        "--train",
        "world/d_cold.tsv",
        "--full",
        "world/d_full.tsv",
        "--out",
        "ft.ckpt",
    ];
    a.extend(INPUTS);
    run_ok(dir, &a);
}

#[test]
fn end_to_end_pipeline_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());

    let mut args = vec!["eval", "--checkpoint", "ft.ckpt", "--test", "world/d_test.tsv", "--out", "eval.tsv"];
    args.extend(INPUTS);
    let report = run_ok(a.path(), &args);
    let auc: f64 = report.lines().find_map(|l| l.strip_prefix("auc\t")).unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&auc));

    // Same seeds: identical output hashes, apart from the directory prefix.
    for m in ["world/synth.manifest.json", "graph/graph.manifest.json", "nb.bin.manifest.json", "pre.ckpt.manifest.json", "ft.ckpt.manifest.json"] {
        let (ma, mb) = (manifest(&a.path().join(m)), manifest(&b.path().join(m)));
        assert_eq!(ma["outputs"], mb["outputs"], "{m}");
        assert!(!ma["outputs"].as_object().unwrap().is_empty());
        assert_eq!(ma["config"], mb["config"]);
    }
    let m = manifest(&a.path().join("ft.ckpt.manifest.json"));
    assert_eq!(m["command"], "finetune");
    assert_eq!(m["seeds"]["seed"], 3);
    assert!(m["inputs"].as_object().unwrap().contains_key("pre.ckpt"));

    let dump = run_ok(a.path(), &["dump-checkpoint", "--checkpoint", "ft.ckpt"]);
    assert!(dump.starts_with("version 1\nconfig "), "{dump}");
    let dump = run_ok(a.path(), &["dump-neighbors", "--neighbors", "nb.bin"]);
    assert!(dump.contains("records=40"));
}

#[test]
fn serve_and_bench() {
    let d = tempfile::tempdir().unwrap();
    pipeline(d.path());
    let mut child = bin()
        .current_dir(d.path())
        .args(["--config", "small.conf", "--manifest", "serve.json", "serve", "--checkpoint", "ft.ckpt", "--addr", "127.0.0.1:0"])
        .args(INPUTS)
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").unwrap().to_string();

    let mut s = TcpStream::connect(&addr).unwrap();
    s.write_all(b"u1\tv1\tv170,v171\nnot a request\nu1\t-\t-\n").unwrap();
    let mut r = BufReader::new(s.try_clone().unwrap());
    let mut replies = Vec::new();
    for _ in 0..3 {
        let mut l = String::new();
        r.read_line(&mut l).unwrap();
        replies.push(l);
    }
    assert!(replies[0].starts_with("OK\t") && replies[0].trim_end().split('\t').nth(2).unwrap().split(',').count() == 2);
    assert!(replies[1].starts_with("ERR\t"));
    assert!(replies[2].trim_end().ends_with("\t-"));

    let out = run_ok(d.path(), &["bench", "--addr", &addr, "--graph", "graph", "--users", "world/users.tsv", "--out", "bench.tsv"]);
    assert!(out.contains("delta_server_us"), "{out}");
    child.kill().unwrap();
    child.wait().unwrap();
    assert_eq!(manifest(&d.path().join("serve.json"))["command"], "serve");
}

#[test]
fn checkpoint_version_mismatch_is_reported() {
    let d = tempfile::tempdir().unwrap();
    pipeline(d.path());
    let mut bytes = std::fs::read(d.path().join("ft.ckpt")).unwrap();
    bytes[8..12].copy_from_slice(&99u32.to_le_bytes());
    std::fs::write(d.path().join("old.ckpt"), bytes).unwrap();
    let out = bin()
        .current_dir(d.path())
        .args(["--config", "small.conf", "eval", "--checkpoint", "old.ckpt", "--test", "world/d_test.tsv", "--out", "e.tsv"])
        .args(INPUTS)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("error[version]") && err.contains("v99"), "{err}");
}

#[test]
fn usage_and_input_errors() {
    let d = tempfile::tempdir().unwrap();
    let out = bin().args(["synth-data", "--bogus"]).output().unwrap();
    assert!(!out.status.success());
    let out = bin().current_dir(d.path()).args(["--set", "nope=1", "synth-data", "--out", "w"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().current_dir(d.path()).args(["build-graph", "--videos", "missing.tsv", "--out", "g"]).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
}
