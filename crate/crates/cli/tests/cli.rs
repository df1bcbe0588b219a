use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use stresnet::dataset::{degrade, synthetic_sequence, write_yuv420, DegradeSpec};
use stresnet::model::{self, StresNetWeights};
use tempfile::TempDir;

fn stresnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stresnet"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = stresnet(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Clip {
    dir: TempDir,
    width: usize,
    height: usize,
    frames: usize,
}

impl Clip {
    fn new(width: usize, height: usize, frames: usize) -> Self {
        let dir = TempDir::new().unwrap();
        let original = synthetic_sequence(width, height, frames, 9);
        write_yuv420(dir.path().join("original.yuv"), &original, None).unwrap();
        let degraded = degrade(&original, DegradeSpec::with_step(16.0));
        write_yuv420(dir.path().join("degraded.yuv"), &degraded, None).unwrap();
        Clip {
            dir,
            width,
            height,
            frames,
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn dims(&self) -> Vec<String> {
        vec![
            "--width".into(),
            self.width.to_string(),
            "--height".into(),
            self.height.to_string(),
            "--frames".into(),
            self.frames.to_string(),
        ]
    }

    fn run(&self, args: &[&str]) -> String {
        let dims = self.dims();
        let mut all: Vec<&str> = args.to_vec();
        all.extend(dims.iter().map(String::as_str));
        ok(&all)
    }
}

fn manifest(path: &Path) -> Value {
    let mut name = path.file_name().unwrap().to_os_string();
    name.push(".manifest.json");
    serde_json::from_str(&fs::read_to_string(path.with_file_name(name)).unwrap()).unwrap()
}

#[test]
fn extract_counts_and_is_reproducible() {
    let clip = Clip::new(64, 64, 2);
    let (a, b) = (clip.path("a.stds"), clip.path("b.stds"));
    for out in [&a, &b] {
        let stdout = clip.run(&[
            "extract",
            "--pristine",
            s(&clip.path("original.yuv")),
            "--degraded",
            s(&clip.path("degraded.yuv")),
            "--stride",
            "28",
            "--seed",
            "5",
            "--out",
            s(out),
        ]);
        assert_eq!(stdout.trim(), "1 samples");
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let m = manifest(&a);
    assert_eq!(m["command"], "extract");
    assert_eq!(m["config"]["stride"], 28);
    assert_eq!(m["results"]["samples"], 1);
}

#[test]
fn missing_input_names_the_path() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope.yuv");
    let out = stresnet(&[
        "extract",
        "--pristine",
        s(&missing),
        "--degrade",
        "16",
        "--width",
        "64",
        "--height",
        "64",
        "--frames",
        "2",
        "--out",
        s(&dir.path().join("x.stds")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.yuv"));
}

#[test]
fn train_resolves_defaults_and_honours_overrides() {
    let clip = Clip::new(64, 64, 3);
    let store = clip.path("s.stds");
    clip.run(&[
        "extract",
        "--pristine",
        s(&clip.path("original.yuv")),
        "--degrade",
        "16",
        "--qp",
        "37",
        "--out",
        s(&store),
    ]);
    let model_path = clip.path("m.strn");
    let stdout = ok(&[
        "train",
        "--store",
        s(&store),
        "--iterations",
        "3",
        "--batch-size",
        "2",
        "--log-every",
        "1",
        "--checkpoint-every",
        "2",
        "--out",
        s(&model_path),
    ]);
    assert!(stdout.contains("final loss"));
    let hp = &manifest(&model_path)["config"]["hyper_params"];
    assert_eq!(hp["qp"], 37);
    assert_eq!(hp["learning_rate"], 1e-8);
    assert_eq!(hp["beta1"], 0.9);
    assert_eq!(hp["beta2"], 0.988);
    assert_eq!(hp["iterations"], 3);

    let weights = model::load_file(&model_path).unwrap();
    assert_eq!(weights.qp(), 37);
    let log = fs::read_to_string(clip.path("m.loss.tsv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines.len(), 3);
    for (i, line) in lines.iter().enumerate() {
        let (iter, loss) = line.split_once('\t').unwrap();
        assert_eq!(iter, (i + 1).to_string());
        assert!(loss.parse::<f64>().unwrap() >= 0.0);
    }
    assert!(clip.path("m.iter0000002.strn").exists());
}

#[test]
fn zero_model_filter_is_identity() {
    let clip = Clip::new(80, 72, 3);
    let model_path = clip.path("zero.strn");
    model::save_file(&StresNetWeights::zeros(22), &model_path).unwrap();
    let out = clip.path("out.yuv");
    let stdout = clip.run(&[
        "filter",
        "--model",
        s(&model_path),
        "--degraded",
        s(&clip.path("degraded.yuv")),
        "--original",
        s(&clip.path("original.yuv")),
        "--out",
        s(&out),
    ]);
    assert!(stdout.contains("flags enabled 0/12"), "{stdout}");
    assert_eq!(
        fs::read(&out).unwrap(),
        fs::read(clip.path("degraded.yuv")).unwrap()
    );
    let flags = fs::read_to_string(clip.path("out.flags.txt")).unwrap();
    assert_eq!(flags.lines().count(), 3);
    assert!(flags
        .lines()
        .all(|l| l.split_once(' ').unwrap().1 == "0000"));
    let trace = fs::read_to_string(clip.path("out.trace.csv")).unwrap();
    assert_eq!(
        trace.lines().next(),
        Some("frame,ctu_row,ctu_col,d1,d2,flag")
    );
    assert_eq!(trace.lines().count(), 1 + 2 * 4);
}

fn last_number(text: &str, prefix: &str) -> f64 {
    let line = text.lines().find(|l| l.starts_with(prefix)).unwrap();
    line.split_whitespace()
        .filter_map(|w| w.parse().ok())
        .next_back()
        .unwrap()
}

#[test]
fn filter_gain_matches_eval_and_replay_matches_filter() {
    let clip = Clip::new(70, 66, 3);
    let mut weights = stresnet::init_weights(27, 4);
    weights.scale(20.0);
    let model_path = clip.path("m.strn");
    model::save_file(&weights, &model_path).unwrap();
    let out = clip.path("f.yuv");
    let stdout = clip.run(&[
        "filter",
        "--model",
        s(&model_path),
        "--degraded",
        s(&clip.path("degraded.yuv")),
        "--original",
        s(&clip.path("original.yuv")),
        "--mode",
        "out_of_loop",
        "--out",
        s(&out),
    ]);
    let gain = last_number(&stdout, "mean PSNR gain");

    let psnr = |a: &Path| {
        let text = clip.run(&["eval", "--psnr", s(&clip.path("original.yuv")), s(a)]);
        last_number(&text, "mean")
    };
    let recomputed = psnr(&out) - psnr(&clip.path("degraded.yuv"));
    assert!((gain - recomputed).abs() < 5e-6, "{gain} vs {recomputed}");

    let replayed = clip.path("r.yuv");
    clip.run(&[
        "replay",
        "--model",
        s(&model_path),
        "--degraded",
        s(&clip.path("degraded.yuv")),
        "--flags",
        s(&clip.path("f.flags.txt")),
        "--mode",
        "out_of_loop",
        "--out",
        s(&replayed),
    ]);
    assert_eq!(fs::read(&replayed).unwrap(), fs::read(&out).unwrap());
}

#[test]
fn eval_reports() {
    let clip = Clip::new(16, 16, 2);
    let original = s(&clip.path("original.yuv")).to_string();
    let same = clip.run(&["eval", "--psnr", &original, &original]);
    assert!(same.lines().all(|l| l.ends_with("inf dB")), "{same}");

    let csv = clip.path("rd.csv");
    fs::write(
        &csv,
        "rate,psnr\n1000,34.1\n1800,36.3\n3200,38.4\n6000,40.2\n",
    )
    .unwrap();
    let bd = ok(&["eval", "--bdrate", s(&csv), s(&csv)]);
    assert_eq!(bd.trim(), "BD-rate 0.00%");

    let dt = ok(&["eval", "--dt", "100", "135.7"]);
    assert_eq!(dt.trim(), "increment 35.7%, ratio 135.7%");
}

#[test]
fn eval_requires_one_metric() {
    assert!(!stresnet(&["eval"]).status.success());
    assert!(!stresnet(&["eval", "--dt", "1", "2", "--bdrate", "a", "b"])
        .status
        .success());
}

#[test]
fn demo_runs_end_to_end() {
    let dir = TempDir::new().unwrap();
    let stdout = ok(&[
        "--threads",
        "1",
        "demo",
        "--out-dir",
        s(dir.path()),
        "--width",
        "64",
        "--height",
        "64",
        "--frames",
        "3",
        "--iterations",
        "5",
    ]);
    assert!(stdout.contains("mean PSNR gain"));
    for name in [
        "original.yuv",
        "degraded.yuv",
        "samples.stds",
        "model.strn",
        "filtered.yuv",
    ] {
        assert!(dir.path().join(name).exists(), "{name} missing");
    }
    let gain = last_number(&stdout, "mean PSNR gain");
    assert!(gain >= 0.0);
}
