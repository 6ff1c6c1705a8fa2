use std::path::Path;
use std::process::{Command, Output};

fn reimts(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reimts"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = reimts(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn small_data(dir: &Path, name: &str, seed: &str) -> String {
    let out = dir.join(name);
    ok(&["generate", "--preset", "benchmark", "--num-samples", "60", "--num-variables", "3", "--seed", seed, "--out", out.to_str().unwrap()]);
    out.join("manifest.txt").to_str().unwrap().to_string()
}

#[test]
fn generate_is_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    small_data(dir.path(), "a", "4");
    small_data(dir.path(), "b", "4");
    small_data(dir.path(), "c", "5");
    let read = |d: &str, f: &str| std::fs::read(dir.path().join(d).join(f)).unwrap();
    assert_eq!(read("a", "tuples.csv"), read("b", "tuples.csv"));
    assert_ne!(read("a", "tuples.csv"), read("c", "tuples.csv"));
    // the manifests differ only in the recorded command line
    let strip = |b: Vec<u8>| {
        String::from_utf8(b)
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with("meta.argv="))
            .map(String::from)
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(read("a", "manifest.txt")), strip(read("b", "manifest.txt")));
}

#[test]
fn exit_codes_separate_usage_and_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.txt");
    let out = reimts(&["train", "--data", missing.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(reimts(&["train", "--levels", "48,20"]).status.code(), Some(2));
    assert_eq!(reimts(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn train_eval_and_ablate_write_their_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path(), "d", "1");
    let run = dir.path().join("run");
    let common = ["--seeds", "7", "--max-epochs", "2", "--patience", "1", "--hidden-dim", "4"];

    let mut args = vec!["train", "--data", &data, "--out", run.to_str().unwrap()];
    args.extend(common);
    ok(&args);
    let ck = run.join("checkpoints").join("full-seed7.json");
    assert!(ck.exists());
    let text = ok(&["eval", "--data", &data, "--checkpoint", ck.to_str().unwrap(), "--split", "val"]);
    let record: serde_json::Value = serde_json::from_str(text.trim()).unwrap();
    let saved: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&ck).unwrap()).unwrap();
    assert_eq!(record["metrics"]["mse"], saved["val_loss"]);

    let abl = dir.path().join("abl");
    let mut args = vec!["ablate", "--data", &data, "--ablations", "full,rp_split", "--out", abl.to_str().unwrap()];
    args.extend(common);
    ok(&args);
    let table = std::fs::read_to_string(abl.join("ablation.md")).unwrap();
    assert!(table.contains("full") && table.contains("rp_split"), "{table}");
    assert!(abl.join("ablation.csv").exists());
    let records = std::fs::read_to_string(abl.join("results.jsonl")).unwrap();
    assert_eq!(records.lines().filter(|l| l.contains("\"record\":\"run\"")).count(), 2);
}
