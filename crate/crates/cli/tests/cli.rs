use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn res(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_res")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Tiny network and short scenarios so a full train/infer round trip runs in seconds.
fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("small.toml");
    fs::write(
        &path,
        r#"
seed = 7

[unet]
widths = [2, 4, 4, 8, 8]

[train]
epochs = 2
minibatch_size = 4

[simulator]
duration_s = 3.0
"#,
    )
    .unwrap();
    path
}

fn simulate(cfg: &Path, out: &Path, n: &str) -> Output {
    res(&["--config", s(cfg), "simulate", "-n", n, "--out", s(out)])
}

#[test]
fn simulate_produces_each_talk_mode_reproducibly() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(code(&simulate(&cfg, &a, "3")), 0);
    assert_eq!(code(&simulate(&cfg, &b, "3")), 0);

    let mut modes = Vec::new();
    for i in 0..3 {
        let name = format!("utt_{i:05}");
        let manifest = fs::read_to_string(a.join(&name).join("manifest.toml")).unwrap();
        let mode = manifest.lines().find(|l| l.starts_with("mode")).unwrap().to_string();
        modes.push(mode);
        for stem in ["m", "r", "d", "f", "w"] {
            let wav = format!("{stem}.wav");
            assert_eq!(fs::read(a.join(&name).join(&wav)).unwrap(), fs::read(b.join(&name).join(&wav)).unwrap());
        }
    }
    modes.sort();
    modes.dedup();
    assert_eq!(modes.len(), 3, "{modes:?}");
}

#[test]
fn simulate_refuses_to_overwrite_without_force() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("corpus");
    assert_eq!(code(&simulate(&cfg, &out, "2")), 0);
    assert_eq!(code(&simulate(&cfg, &out, "1")), 1);
    assert!(out.join("utt_00001").exists());
    let forced = res(&["--config", s(&cfg), "simulate", "-n", "1", "--out", s(&out), "--force"]);
    assert_eq!(code(&forced), 0);
    assert!(out.join("utt_00000").exists());
    assert!(!out.join("utt_00001").exists());
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&res(&["frobnicate"])), 1);
    assert_eq!(code(&res(&["simulate"])), 1);
    assert_eq!(code(&res(&["--help"])), 0);
    assert_eq!(code(&res(&["--alpha", "-1", "config"])), 1);

    let missing = tmp.path().join("missing.resunet");
    assert_eq!(code(&res(&["budget", "--model", s(&missing)])), 2);
    assert_eq!(code(&res(&["--config", s(&tmp.path().join("none.toml")), "config"])), 2);
    let corrupt = tmp.path().join("bad.resunet");
    fs::write(&corrupt, b"not a model").unwrap();
    assert_eq!(code(&res(&["budget", "--model", s(&corrupt)])), 2);
}

fn budget_lines(out: &Output) -> Vec<(String, String)> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn field<'a>(lines: &'a [(String, String)], key: &str) -> &'a str {
    &lines.iter().find(|(k, _)| k == key).unwrap().1
}

#[test]
fn budget_defaults_are_within_budget() {
    let out = res(&["budget"]);
    assert_eq!(code(&out), 0);
    let lines = budget_lines(&out);
    let params: usize = field(&lines, "trainable_params").parse().unwrap();
    assert!((115_000..=157_000).contains(&params), "{params}");
    let gflops: f64 = field(&lines, "total_gflops_per_s").parse().unwrap();
    assert!(gflops > 0.4 && gflops < 6.4, "{gflops}");
    assert_eq!(field(&lines, "flags"), "none");
}

#[test]
fn budget_flags_doubled_widths() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("wide.toml");
    fs::write(&cfg, "[unet]\nwidths = [16, 32, 64, 128, 512]\n").unwrap();
    let out = res(&["--config", s(&cfg), "budget"]);
    assert_eq!(code(&out), 0);
    let lines = budget_lines(&out);
    assert!(field(&lines, "flags").contains("param overage"), "{lines:?}");
}

fn train_and_infer(cfg: &Path, data: &Path, dir: &Path) -> (Vec<u8>, Vec<u8>) {
    fs::create_dir_all(dir).unwrap();
    let model = dir.join("model.resunet");
    let log = dir.join("loss.jsonl");
    let train = res(&["--config", s(cfg), "train", "--data", s(data), "--model", s(&model), "--log", s(&log)]);
    assert_eq!(code(&train), 0, "{}", String::from_utf8_lossy(&train.stderr));
    let utt = data.join("utt_00002");
    let p = dir.join("p.wav");
    let infer = res(&[
        "infer",
        "--model",
        s(&model),
        "--mic",
        s(&utt.join("m.wav")),
        "--far",
        s(&utt.join("r.wav")),
        "--out",
        s(&p),
    ]);
    assert_eq!(code(&infer), 0, "{}", String::from_utf8_lossy(&infer.stderr));
    (fs::read(log).unwrap(), fs::read(p).unwrap())
}

#[test]
fn train_and_infer_are_deterministic() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path());
    let data = tmp.path().join("corpus");
    assert_eq!(code(&simulate(&cfg, &data, "3")), 0);
    let (log_a, wav_a) = train_and_infer(&cfg, &data, &tmp.path().join("run_a"));
    let (log_b, wav_b) = train_and_infer(&cfg, &data, &tmp.path().join("run_b"));
    assert!(!log_a.is_empty());
    assert_eq!(log_a, log_b);
    assert_eq!(wav_a, wav_b);

    let eval = res(&[
        "--config",
        s(&cfg),
        "evaluate",
        "--data",
        s(&data),
        "--model",
        s(&tmp.path().join("run_a/model.resunet")),
        "--report-dir",
        s(&tmp.path().join("report")),
    ]);
    assert_eq!(code(&eval), 0, "{}", String::from_utf8_lossy(&eval.stderr));
    let metrics = fs::read_to_string(tmp.path().join("report/metrics.txt")).unwrap();
    assert!(metrics.contains("erle"), "{metrics}");
}
