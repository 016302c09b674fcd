use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use sha2::{Digest, Sha256};
use tempfile::TempDir;

const SPEC: &str = r#"
width = 24
height = 24
bands = 12
lidar_channels = 1
classes = 3
planted_bands = [1, 4, 7, 10]
lidar_redundant_bands = [2, 5]
noise_sigma = 0.05
seed = 11
block_size = 6
"#;

const MODEL: &str = r#"
patch_size = 3
embed_dim = 8
encoder_layers = 1
heads = 2
head_dim = 4
mlp_dim = 16
"#;

fn bandsel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bandsel")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn ok(out: Output) -> Output {
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    tmp: TempDir,
    data: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let spec = tmp.path().join("spec.toml");
        fs::write(&spec, SPEC).unwrap();
        fs::write(tmp.path().join("model.toml"), MODEL).unwrap();
        let data = tmp.path().join("data");
        ok(bandsel(&["synth", s(&spec), "--out", s(&data), "--train-per-class", "20"]));
        Self { tmp, data }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.tmp.path().join(name)
    }

    fn train(&self, out: &str, extra: &[&str]) -> Output {
        let out = self.path(out);
        let model = self.path("model.toml");
        let mut args = vec!["train", s(&self.data), "--model", s(&model), "--out", s(&out)];
        args.extend_from_slice(extra);
        bandsel(&args)
    }
}

fn sha(path: &Path) -> Vec<u8> {
    Sha256::digest(fs::read(path).unwrap()).to_vec()
}

fn dir_hashes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "run_manifest.json" {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), sha(&p)));
            }
        }
    }
    out.sort();
    out
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("run_manifest.json")).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

#[test]
fn synth_writes_scene_and_is_reproducible() {
    let f = Fixture::new();
    for name in ["cube.toml", "cube.bin", "lidar.toml", "labels.toml", "truth.json", "split.toml"] {
        assert!(f.data.join(name).exists(), "{name}");
    }
    assert_eq!(manifest(&f.data)["status"], "complete");
    let again = f.path("again");
    ok(bandsel(&["synth", s(&f.path("spec.toml")), "--out", s(&again), "--train-per-class", "20"]));
    assert_eq!(dir_hashes(&f.data), dir_hashes(&again));
    let other = f.path("other");
    ok(bandsel(&["synth", s(&f.path("spec.toml")), "--out", s(&other), "--seed", "12"]));
    assert_ne!(sha(&f.data.join("cube.bin")), sha(&other.join("cube.bin")));
}

#[test]
fn synth_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    assert_eq!(code(&bandsel(&["synth", s(&tmp.path().join("missing.toml")), "--out", s(&out)])), 2);
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, SPEC.replace("classes = 3", "classes = 1")).unwrap();
    assert_eq!(code(&bandsel(&["synth", s(&bad), "--out", s(&out)])), 2);
    assert_eq!(manifest(&out)["status"], "failed");
    assert_eq!(code(&bandsel(&["frobnicate"])), 2);
}

#[test]
fn correlate_ranks_redundant_bands_first() {
    let f = Fixture::new();
    let out = f.path("corr");
    ok(bandsel(&["correlate", s(&f.data.join("cube.toml")), s(&f.data.join("lidar.toml")), "--out", s(&out)]));
    let rows = csv_rows(&out.join("correlation_ch0.csv"));
    assert_eq!(rows.len(), 12);
    let mut by_r: Vec<(usize, f64)> = rows.iter().map(|r| (r[0].parse().unwrap(), r[1].parse::<f64>().unwrap().abs())).collect();
    by_r.sort_by(|a, b| b.1.total_cmp(&a.1));
    let top: Vec<usize> = by_r[..2].iter().map(|x| x.0).collect();
    assert!(top.contains(&2) && top.contains(&5), "{by_r:?}");

    let selfcorr = f.path("self");
    let cube = f.data.join("cube.toml");
    ok(bandsel(&["correlate", s(&cube), s(&cube), "--out", s(&selfcorr)]));
    let r: f64 = csv_rows(&selfcorr.join("correlation_ch0.csv"))[0][1].parse().unwrap();
    assert!((r - 1.0).abs() < 1e-12, "{r}");
}

#[test]
fn correlate_rejects_mismatched_rasters() {
    let f = Fixture::new();
    let spec = f.path("small.toml");
    fs::write(&spec, SPEC.replace("width = 24", "width = 18")).unwrap();
    let small = f.path("small");
    ok(bandsel(&["synth", s(&spec), "--out", s(&small)]));
    let out = bandsel(&["correlate", s(&f.data.join("cube.toml")), s(&small.join("lidar.toml")), "--out", s(&f.path("c"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn train_micro_run() {
    let f = Fixture::new();
    let t = Instant::now();
    ok(f.train("run", &["--epochs", "8", "--lr", "0.003", "--augment", "--threads", "1"]));
    assert!(t.elapsed().as_secs() < 60);
    let run = f.path("run");
    assert!(run.join("checkpoint/checkpoint.toml").exists());
    let log = csv_rows(&run.join("runlog.csv"));
    assert!(!log.is_empty() && log.len() <= 50);
    let m = manifest(&run);
    assert_eq!(m["status"], "complete");
    let labeled = m["summary"]["labeled_train_pixels"].as_u64().unwrap();
    let val = m["summary"]["val_samples"].as_u64().unwrap();
    assert_eq!(m["summary"]["train_samples"].as_u64().unwrap(), 5 * (labeled - val));
    assert_eq!(m["config"]["train"]["augment"], true);

    ok(f.train("plain", &["--epochs", "2", "--no-augment"]));
    let m = manifest(&f.path("plain"));
    assert_eq!(m["summary"]["train_samples"].as_u64().unwrap(), labeled - m["summary"]["val_samples"].as_u64().unwrap());
}

#[test]
fn train_is_deterministic_with_one_thread() {
    let f = Fixture::new();
    ok(f.train("a", &["--epochs", "3", "--threads", "1", "--seed", "5"]));
    ok(f.train("b", &["--epochs", "3", "--threads", "1", "--seed", "5"]));
    let (a, b) = (f.path("a"), f.path("b"));
    assert_eq!(dir_hashes(&a.join("checkpoint")), dir_hashes(&b.join("checkpoint")));
    assert_eq!(fs::read(a.join("runlog.csv")).unwrap(), fs::read(b.join("runlog.csv")).unwrap());
}

#[test]
fn train_usage_errors() {
    let f = Fixture::new();
    assert_eq!(code(&f.train("x", &["--batch-size", "0"])), 2);
    assert_eq!(code(&f.train("x", &["--arch", "transformer"])), 2);
    let bad_model = f.path("bad_model.toml");
    fs::write(&bad_model, format!("{MODEL}bands = 7\n")).unwrap();
    let out = bandsel(&["train", s(&f.data), "--model", s(&bad_model), "--out", s(&f.path("x"))]);
    assert_eq!(code(&out), 2);
    let out = bandsel(&["train", s(&f.path("nowhere")), "--out", s(&f.path("x"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn select_and_eval_pipeline() {
    let f = Fixture::new();
    ok(f.train("cross", &["--epochs", "3", "--lr", "0.003"]));
    ok(f.train("hsi", &["--epochs", "2", "--arch", "hsi_only"]));
    let ckpt = f.path("cross/checkpoint");
    let sel = f.path("sel");
    ok(bandsel(&["select", s(&ckpt), s(&f.data), "--k", "10", "--out", s(&sel)]));
    let bands: Vec<usize> = fs::read_to_string(sel.join("bands.txt")).unwrap().lines().map(|l| l.parse().unwrap()).collect();
    assert_eq!(bands.len(), 10);
    assert_eq!(csv_rows(&sel.join("ranking.csv")).len(), 12);

    for strategy in ["self-a", "selfA"] {
        ok(bandsel(&["select", s(&ckpt), s(&f.data), "--strategy", strategy, "--k", "3", "--out", s(&f.path("sa"))]));
    }
    let hsi = f.path("hsi/checkpoint");
    ok(bandsel(&["select", s(&hsi), s(&f.data), "--strategy", "self-b", "--k", "3", "--out", s(&f.path("sb"))]));
    let mismatch = bandsel(&["select", s(&hsi), s(&f.data), "--strategy", "cross", "--k", "3", "--out", s(&f.path("m"))]);
    assert_eq!(code(&mismatch), 2);
    assert_eq!(code(&bandsel(&["select", s(&ckpt), s(&f.data), "--k", "13", "--out", s(&f.path("m"))])), 2);
    assert_eq!(code(&bandsel(&["select", s(&ckpt), s(&f.data), "--k", "0", "--out", s(&f.path("m"))])), 2);

    let ev = f.path("ev");
    let ranking = sel.join("ranking.csv");
    ok(bandsel(&["eval", s(&f.data), "--ranking", s(&ranking), "--counts", "4,8", "--epochs", "5", "--out", s(&ev)]));
    let rows = csv_rows(&ev.join("metrics.csv"));
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][0], "4 bands");
    assert!(fs::read_to_string(ev.join("metrics.txt")).unwrap().contains("Kappa"));
}

#[test]
fn eval_planted_bands_separate_classes() {
    let f = Fixture::new();
    let planted = f.path("planted.txt");
    fs::write(&planted, "1\n4\n7\n10\n").unwrap();
    let a = f.path("ev_a");
    ok(bandsel(&["eval", s(&f.data), "--bands", s(&planted), "--seed", "3", "--out", s(&a)]));
    let oa: f64 = csv_rows(&a.join("metrics.csv"))[0][1].parse().unwrap();
    assert!(oa >= 0.95, "oa {oa}");

    let b = f.path("ev_b");
    ok(bandsel(&["eval", s(&f.data), "--bands", s(&planted), "--seed", "3", "--out", s(&b)]));
    assert_eq!(fs::read(a.join("metrics.csv")).unwrap(), fs::read(b.join("metrics.csv")).unwrap());

    let all = f.path("ev_all");
    ok(bandsel(&["eval", s(&f.data), "--all-bands", "--epochs", "20", "--out", s(&all)]));
    assert_eq!(csv_rows(&all.join("metrics.csv"))[0][0], "all 12 bands");
}

#[test]
fn eval_usage_errors() {
    let f = Fixture::new();
    let empty = f.path("empty.txt");
    fs::write(&empty, "").unwrap();
    assert_eq!(code(&bandsel(&["eval", s(&f.data), "--bands", s(&empty), "--out", s(&f.path("e"))])), 2);
    assert_eq!(code(&bandsel(&["eval", s(&f.data), "--out", s(&f.path("e"))])), 2);
    let out_of_range = f.path("oor.txt");
    fs::write(&out_of_range, "3\n40\n").unwrap();
    assert_eq!(code(&bandsel(&["eval", s(&f.data), "--bands", s(&out_of_range), "--out", s(&f.path("e"))])), 2);
}
