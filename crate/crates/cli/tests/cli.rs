use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sshnet_core::imgcore::load_image;

fn sshnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sshnet")).args(args).output().expect("binary runs")
}

fn ok(out: &Output) -> String {
    let stdout = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(out.status.success(), "command failed\nstdout:\n{stdout}\nstderr:\n{}", String::from_utf8_lossy(&out.stderr));
    stdout
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Tiny model and schedule so runs finish in seconds.
fn write_config(dir: &Path) -> PathBuf {
    let text = format!(
        r#"name = "t"
runs_dir = "{runs}"

[corpus]
root = "{corpus}"

[model]
base_width = 8
level_depths = [1, 1, 1, 1, 1]
heads = [1, 2, 2, 2, 1]
nrd_bottleneck = 1

[train]
batch = 2
crop = 32
alpha = 0.0
epochs = 1000
max_steps = 3
eval_every = 0
seed = 5
"#,
        runs = dir.join("runs").display(),
        corpus = dir.join("corpus").display()
    );
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

/// Four 48×48 scenes, a train split and a one-watermark test split.
fn corpus(dir: &Path) -> PathBuf {
    let cfg = write_config(dir);
    let scenes = dir.join("scenes");
    ok(&sshnet(&["scenes", "--out", s(&scenes), "--count", "4", "--height", "48", "--width", "48", "--seed", "9"]));
    let common = ["--images", s(&scenes), "--sigmas", "25", "--alphas", "0.5", "--no-previews", "--seed", "11"];
    let c = s(&cfg);
    ok(&sshnet(&[&["synth", "-c", c, "--split", "train"][..], &common[..]].concat()));
    ok(&sshnet(&[&["synth", "-c", c, "--split", "test", "--watermarks", "0"][..], &common[..]].concat()));
    cfg
}

fn manifest_hash(stdout: &str) -> String {
    stdout.split("sha256 ").nth(1).expect("hash printed").trim().to_string()
}

#[test]
fn synth_enumerates_test_grid_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = dir.path().join("scenes");
    ok(&sshnet(&["scenes", "--out", s(&scenes), "--count", "3", "--height", "40", "--width", "40"]));
    let run = |out: &str| {
        let out = dir.path().join(out);
        let stdout = ok(&sshnet(&[
            "synth", "--images", s(&scenes), "--out", s(&out), "--split", "test", "--sigmas", "25", "--alphas", "0.3",
            "--no-previews", "--seed", "4",
        ]));
        (out, stdout)
    };
    let (a, out_a) = run("a");
    let (_, out_b) = run("b");
    assert!(out_a.contains("records 36"), "3 images x 12 watermarks: {out_a}");
    assert_eq!(manifest_hash(&out_a), manifest_hash(&out_b));
    assert!(a.join("test.config.toml").is_file());
    let lines = fs::read_to_string(a.join("test.jsonl")).unwrap().lines().count();
    assert_eq!(lines, 36);
}

#[test]
fn synth_with_empty_image_dir_fails_without_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let out_dir = dir.path().join("out");
    let out = sshnet(&["synth", "--images", s(&empty), "--out", s(&out_dir)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no PNG images"));
    assert!(!out_dir.join("train.jsonl").exists());
}

#[test]
fn validation_lists_every_problem_at_once() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = sshnet(&["train", "-c", s(&cfg), "--batch", "0", "--crop", "30", "--alpha", "0.5", "--name", "bad"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    for needle in ["batch must be at least 1", "crop 30", "training manifest", "extractor"] {
        assert!(err.contains(needle), "missing {needle:?} in:\n{err}");
    }
    assert!(!dir.path().join("runs/bad").exists(), "nothing is written before validation passes");
}

#[test]
fn unknown_config_keys_are_rejected() {
    let out = sshnet(&["show-config", "--set", "train.learning_rate=1"]);
    assert!(!out.status.success());
    let shown = ok(&sshnet(&["show-config", "--set", "train.lr0=0.5", "--set", "model.variant=dense_mdta"]));
    assert!(shown.contains("lr0 = 0.5") && shown.contains("variant = \"dense_mdta\""), "{shown}");
}

#[test]
fn train_eval_and_gates_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = corpus(dir.path());
    let c = s(&cfg);
    ok(&sshnet(&["train", "-c", c, "--name", "one"]));
    ok(&sshnet(&["train", "-c", c, "--name", "two"]));
    let runs = dir.path().join("runs");
    for sub in ["config.toml", "checkpoints/latest.ckpt", "logs/train.jsonl", "logs/summary.json", "plots/loss.png"] {
        assert!(runs.join("one").join(sub).is_file(), "missing {sub}");
    }
    let steps = fs::read_to_string(runs.join("one/logs/train.jsonl")).unwrap().lines().count();
    assert_eq!(steps, 3);
    let sha = |name: &str| json(&runs.join(name).join("logs/summary.json"))["checkpoint_sha256"].clone();
    assert_eq!(sha("one"), sha("two"), "same seed gives the same checkpoint bytes");

    // Resuming a finished run is a no-op on the checkpoint.
    ok(&sshnet(&["train", "-c", c, "--name", "one", "--resume"]));
    assert_eq!(sha("one"), sha("two"));
    assert_eq!(fs::read_to_string(runs.join("one/logs/train.jsonl")).unwrap().lines().count(), 3);

    ok(&sshnet(&["eval", "-c", c, "--name", "one", "--dump-images"]));
    let eval = runs.join("one/eval");
    let metrics = json(&eval.join("metrics.json"));
    assert_eq!(metrics["items"].as_array().unwrap().len(), 4);
    assert!(eval.join("metrics.csv").is_file() && eval.join("eval.config.toml").is_file());
    let dumped: Vec<String> = fs::read_dir(eval.join("images")).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    for role in ["y_hat", "y_n", "y_wn"] {
        assert_eq!(dumped.iter().filter(|n| n.ends_with(&format!("_{role}.png"))).count(), 4, "{role}: {dumped:?}");
    }

    ok(&sshnet(&["gates", "-c", c, "--name", "one", "--limit", "3"]));
    let gates = runs.join("one/plots/gates");
    let montage = load_image(gates.join("montage.png")).unwrap();
    assert_eq!(montage.dims(), (3 * 48, 3 * 48), "3 panels wide, one row per image");
    let report = json(&gates.join("gates.json"));
    assert_eq!(report["images"].as_array().unwrap().len(), 3);
}

#[test]
fn zeroed_gate_head_gives_constant_half() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = corpus(dir.path());
    ok(&sshnet(&["gates", "-c", s(&cfg), "--untrained", "--zero-gate", "--limit", "2"]));
    let report = json(&dir.path().join("runs/t/plots/gates/gates.json"));
    assert_eq!(report["fraction_below"].as_f64().unwrap(), 0.0);
    for img in report["images"].as_array().unwrap() {
        assert_eq!(img["mean"].as_f64().unwrap(), 0.5);
        assert_eq!(img["std"].as_f64().unwrap(), 0.0);
    }
}

#[test]
fn eval_identity_scores_the_degraded_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = corpus(dir.path());
    let out = dir.path().join("baseline");
    ok(&sshnet(&["eval", "-c", s(&cfg), "--identity", "--out", s(&out)]));
    let psnr = json(&out.join("metrics.json"))["overall"]["psnr"]["mean"].as_f64().unwrap();
    assert!(psnr > 10.0 && psnr < 40.0, "{psnr}");
}

#[test]
fn bench_reports_counts_and_reference_checks() {
    let dir = tempfile::tempdir().unwrap();
    let runs = dir.path().join("runs");
    let r = s(&runs);
    ok(&sshnet(&["bench", "--set", &format!("runs_dir={r:?}"), "--name", "full", "--no-latency"]));
    ok(&sshnet(&["bench", "--set", &format!("runs_dir={r:?}"), "--name", "dual", "--variant", "dual_encoders", "--no-latency"]));
    let full = json(&runs.join("full/bench/bench.json"));
    let dual = json(&runs.join("dual/bench/bench.json"));
    assert!(full["params_check"]["pass"].as_bool().unwrap());
    assert!(full["compute_check"]["pass"].as_bool().unwrap());
    let ratio = full["flops_ratio_double"].as_f64().unwrap();
    assert!((ratio - 4.0).abs() < 0.05, "{ratio}");
    let p = |v: &Value| v["counts"]["params"].as_u64().unwrap();
    assert!(p(&dual) > p(&full));
    assert!(dual["counts"]["flops"].as_u64().unwrap() > full["counts"]["flops"].as_u64().unwrap());
    assert_eq!(dual["full"]["params"].as_u64().unwrap(), p(&full));
}

#[test]
fn bench_times_a_small_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    ok(&sshnet(&["bench", "-c", s(&cfg), "--size", "32", "--runs", "2", "--warmup", "1"]));
    let report = json(&dir.path().join("runs/t/bench/bench.json"));
    assert_eq!(report["latency"]["runs"].as_u64().unwrap(), 2);
    assert!(report["latency"]["mean_ms"].as_f64().unwrap() > 0.0);
    assert!(!report["default_architecture"].as_bool().unwrap());
}

#[test]
fn ablation_shares_corpus_and_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = corpus(dir.path());
    ok(&sshnet(&["ablate", "-c", s(&cfg), "--variants", "se_nrd_only,full", "--max-steps", "2", "--name", "abl"]));
    let run = dir.path().join("runs/abl");
    let report = json(&run.join("ablation.json"));
    assert!(report["corpus_consistent"].as_bool().unwrap());
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r["ok"].as_bool().unwrap() && r["psnr"].as_f64().is_some()));
    let table = fs::read_to_string(run.join("ablation.md")).unwrap();
    assert!(table.contains("se_nrd_only") && table.contains("| full |"));
    assert!(run.join("ablation.csv").is_file() && run.join("plots/ablation_psnr.png").is_file());
    assert!(run.join("ablate/full/config.toml").is_file());
}

#[test]
fn ablation_rejects_unknown_variants_up_front() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = corpus(dir.path());
    let out = sshnet(&["ablate", "-c", s(&cfg), "--variants", "full,nope", "--name", "abl"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown variant"));
    assert!(!dir.path().join("runs/abl").exists());
}
