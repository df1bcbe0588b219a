use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde_json::{json, Value};

use stresnet::dataset::{
    self, degrade, extract_samples, read_reference_file, read_yuv420, shuffle_store, write_yuv420,
    DegradeSpec, Yuv420Video,
};
use stresnet::metrics::{self, read_rd_csv, timing_ratio, timing_report, TimingPair};
use stresnet::model::{self, StresNetWeights};
use stresnet::pipeline::{replay_sequence, CtuFlagMap, CtuGrid};
use stresnet::trainer::{self, HyperParams, LossRecord, TrainObserver};
use stresnet::{filter_sequence, FrameSequence, SampleStore};

use crate::manifest::{self, path_str};
use crate::{DemoArgs, Dims, EvalArgs, ExtractArgs, FilterArgs, ReplayArgs, TrainArgs};

impl Dims {
    fn validate(&self) -> Result<()> {
        ensure!(
            self.width > 0 && self.height > 0 && self.frames > 0,
            "width, height and frames must be positive (got {}x{}, {} frames)",
            self.width,
            self.height,
            self.frames
        );
        Ok(())
    }

    fn json(&self) -> Value {
        json!({ "width": self.width, "height": self.height, "frames": self.frames })
    }
}

/// `dir/stem<suffix>` next to `path`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn opt_path(p: &Option<PathBuf>) -> Value {
    p.as_deref().map_or(Value::Null, path_str)
}

fn read_video(path: &Path, dims: &Dims) -> Result<Yuv420Video> {
    read_yuv420(path, dims.width, dims.height, dims.frames)
        .with_context(|| format!("reading video {}", path.display()))
}

fn apply_refs(seq: &mut FrameSequence, refs: &Option<PathBuf>) -> Result<()> {
    if let Some(path) = refs {
        let map = read_reference_file(path, seq.len())
            .with_context(|| format!("reading reference map {}", path.display()))?;
        seq.set_references(map)
            .with_context(|| format!("applying reference map {}", path.display()))?;
    }
    Ok(())
}

fn frame_psnrs(a: &FrameSequence, b: &FrameSequence) -> Result<Vec<f64>> {
    a.check_aligned(b)?;
    a.frames()
        .iter()
        .zip(b.frames())
        .map(|(x, y)| Ok(metrics::psnr(x, y)?))
        .collect()
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn extract(a: &ExtractArgs) -> Result<()> {
    a.dims.validate()?;
    ensure!(a.stride > 0, "stride must be at least 1");
    if let Some(step) = a.degrade {
        ensure!(
            step > 0.0 && step.is_finite(),
            "--degrade step must be positive, got {step}"
        );
    }
    ensure!(
        a.degraded_out.is_none() || a.degrade.is_some(),
        "--degraded-out only applies with --degrade"
    );

    let pristine = read_video(&a.pristine, &a.dims)?;
    let mut degraded = match (&a.degraded, a.degrade) {
        (Some(path), _) => read_video(path, &a.dims)?.luma,
        (None, Some(step)) => degrade(&pristine.luma, DegradeSpec::with_step(step)),
        (None, None) => unreachable!("clap requires one source"),
    };
    apply_refs(&mut degraded, &a.refs)?;
    if let Some(path) = &a.degraded_out {
        write_yuv420(path, &degraded, Some(&pristine.chroma))
            .with_context(|| format!("writing {}", path.display()))?;
    }

    let samples = extract_samples(&pristine.luma, &degraded, a.stride)?;
    ensure!(
        !samples.is_empty(),
        "no samples: frames must be at least {0}x{0} and have a reference",
        dataset::BLOCK_SIZE
    );
    let store = shuffle_store(samples, a.seed, a.qp)?;
    store
        .save_file(&a.out)
        .with_context(|| format!("writing {}", a.out.display()))?;
    println!("{} samples", store.len());

    manifest::write(
        &a.out,
        "extract",
        json!({
            "pristine": path_str(&a.pristine),
            "degraded": opt_path(&a.degraded),
            "degrade_step": a.degrade,
            "degraded_out": opt_path(&a.degraded_out),
            "dims": a.dims.json(),
            "refs": opt_path(&a.refs),
            "stride": a.stride,
            "block_size": dataset::BLOCK_SIZE,
            "seed": a.seed,
            "qp": a.qp,
            "out": path_str(&a.out),
        }),
        json!({ "samples": store.len() }),
    )?;
    Ok(())
}

fn resolve_hyper_params(a: &TrainArgs, store: &SampleStore) -> Result<HyperParams> {
    let qp = a.qp.unwrap_or(store.qp);
    let mut hp = HyperParams::for_qp(qp)?;
    hp.base_learning_rate = a.lr.unwrap_or(hp.base_learning_rate);
    hp.momentum = a.beta1.unwrap_or(hp.momentum);
    hp.momentum2 = a.beta2.unwrap_or(hp.momentum2);
    hp.adam_epsilon = a.epsilon.unwrap_or(hp.adam_epsilon);
    hp.iterations = a.iterations.unwrap_or(hp.iterations);
    hp.batch_size = a.batch_size.unwrap_or(hp.batch_size);
    hp.seed = a.seed.unwrap_or(hp.seed);
    hp.init_std = a.init_std.unwrap_or(hp.init_std);
    hp.log_every = a.log_every.unwrap_or(hp.log_every);
    hp.checkpoint_every = a.checkpoint_every.unwrap_or(hp.checkpoint_every);
    hp.holdout = a.holdout.unwrap_or(hp.holdout);
    hp.validate()?;
    Ok(hp)
}

fn hyper_params_json(hp: &HyperParams) -> Value {
    json!({
        "qp": hp.qp,
        "learning_rate": hp.base_learning_rate,
        "beta1": hp.momentum,
        "beta2": hp.momentum2,
        "epsilon": hp.adam_epsilon,
        "iterations": hp.iterations,
        "batch_size": hp.batch_size,
        "seed": hp.seed,
        "init_std": hp.init_std,
        "log_every": hp.log_every,
        "checkpoint_every": hp.checkpoint_every,
        "holdout": hp.holdout,
    })
}

struct FileObserver {
    log: BufWriter<File>,
    total: u64,
    checkpoints: Option<PathBuf>,
    written: Vec<PathBuf>,
}

impl TrainObserver for FileObserver {
    fn on_log(&mut self, r: LossRecord) -> stresnet::Result<()> {
        writeln!(self.log, "{}\t{}", r.iteration, r.mean_loss)?;
        self.log.flush()?;
        log::info!(
            "iteration {}/{}: loss {:.6}",
            r.iteration,
            self.total,
            r.mean_loss
        );
        Ok(())
    }

    fn on_checkpoint(&mut self, iteration: u64, weights: &StresNetWeights) -> stresnet::Result<()> {
        if let Some(base) = &self.checkpoints {
            if iteration < self.total {
                let path = sibling(base, &format!(".iter{iteration:07}.strn"));
                model::save_file(weights, &path)?;
                self.written.push(path);
            }
        }
        Ok(())
    }
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let store = SampleStore::load_file(&a.store)
        .with_context(|| format!("reading store {}", a.store.display()))?;
    let hp = resolve_hyper_params(a, &store)?;
    let log_path = a
        .log
        .clone()
        .unwrap_or_else(|| sibling(&a.out, ".loss.tsv"));
    let log_file =
        File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    let mut observer = FileObserver {
        log: BufWriter::new(log_file),
        total: hp.iterations,
        checkpoints: (!a.no_checkpoints).then(|| a.out.clone()),
        written: Vec::new(),
    };
    log::info!(
        "training on {} samples: qp {}, lr {:e}, batch {}, {} iterations",
        store.len(),
        hp.qp,
        hp.base_learning_rate,
        hp.batch_size,
        hp.iterations
    );
    let (weights, report) = trainer::train(&store, &hp, &mut observer)?;
    model::save_file(&weights, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    println!("initial loss {}", report.initial_loss);
    println!("final loss {}", report.final_loss);

    manifest::write(
        &a.out,
        "train",
        json!({
            "store": path_str(&a.store),
            "store_samples": store.len(),
            "store_seed": store.shuffle_seed,
            "hyper_params": hyper_params_json(&hp),
            "log": path_str(&log_path),
            "checkpoints": !a.no_checkpoints,
            "out": path_str(&a.out),
        }),
        json!({
            "initial_loss": report.initial_loss,
            "final_loss": report.final_loss,
            "evaluated_samples": report.evaluated_samples,
            "checkpoint_files": observer.written.iter().map(|p| path_str(p)).collect::<Vec<_>>(),
        }),
    )?;
    Ok(())
}

fn load_model(path: &Path) -> Result<StresNetWeights> {
    model::load_file(path).with_context(|| format!("reading model {}", path.display()))
}

pub fn filter(a: &FilterArgs) -> Result<()> {
    a.dims.validate()?;
    let weights = load_model(&a.model)?;
    let mut degraded = read_video(&a.degraded, &a.dims)?;
    let original = read_video(&a.original, &a.dims)?.luma;
    apply_refs(&mut degraded.luma, &a.refs)?;

    let outcome = filter_sequence(&weights, &degraded.luma, &original, a.mode)?;
    let flags_path = a
        .flags
        .clone()
        .unwrap_or_else(|| sibling(&a.out, ".flags.txt"));
    let trace_path = a
        .trace
        .clone()
        .unwrap_or_else(|| sibling(&a.out, ".trace.csv"));
    write_yuv420(&a.out, &outcome.filtered, Some(&degraded.chroma))
        .with_context(|| format!("writing {}", a.out.display()))?;
    outcome
        .flags
        .write_file(&flags_path)
        .with_context(|| format!("writing {}", flags_path.display()))?;
    fs::write(&trace_path, outcome.trace.to_csv())
        .with_context(|| format!("writing {}", trace_path.display()))?;

    let before = frame_psnrs(&original, &degraded.luma)?;
    let after = frame_psnrs(&original, &outcome.filtered)?;
    let gain = mean(&after) - mean(&before);
    let total = outcome.flags.grid.len() * outcome.flags.frames.len();
    println!("flags enabled {}/{}", outcome.flags.enabled_count(), total);
    println!(
        "mean PSNR {:.6} dB -> {:.6} dB",
        mean(&before),
        mean(&after)
    );
    println!("mean PSNR gain {gain:.6} dB");

    manifest::write(
        &a.out,
        "filter",
        json!({
            "model": path_str(&a.model),
            "model_qp": weights.qp(),
            "degraded": path_str(&a.degraded),
            "original": path_str(&a.original),
            "dims": a.dims.json(),
            "refs": opt_path(&a.refs),
            "mode": a.mode.to_string(),
            "out": path_str(&a.out),
            "flags": path_str(&flags_path),
            "trace": path_str(&trace_path),
        }),
        json!({
            "flags_enabled": outcome.flags.enabled_count(),
            "ctus": total,
            "mean_psnr_degraded": mean(&before),
            "mean_psnr_filtered": mean(&after),
            "mean_psnr_gain": gain,
        }),
    )?;
    Ok(())
}

pub fn replay(a: &ReplayArgs) -> Result<()> {
    a.dims.validate()?;
    let weights = load_model(&a.model)?;
    let mut degraded = read_video(&a.degraded, &a.dims)?;
    apply_refs(&mut degraded.luma, &a.refs)?;
    let grid = CtuGrid::new(a.dims.width, a.dims.height);
    let flags = CtuFlagMap::read_file(&a.flags, grid)
        .with_context(|| format!("reading flags {}", a.flags.display()))?;
    let rebuilt = replay_sequence(&weights, &degraded.luma, &flags, a.mode)?;
    write_yuv420(&a.out, &rebuilt, Some(&degraded.chroma))
        .with_context(|| format!("writing {}", a.out.display()))?;
    println!("{} flagged CTUs replayed", flags.enabled_count());
    manifest::write(
        &a.out,
        "replay",
        json!({
            "model": path_str(&a.model),
            "degraded": path_str(&a.degraded),
            "flags": path_str(&a.flags),
            "dims": a.dims.json(),
            "refs": opt_path(&a.refs),
            "mode": a.mode.to_string(),
            "out": path_str(&a.out),
        }),
        json!({ "flags_enabled": flags.enabled_count() }),
    )?;
    Ok(())
}

/// `-0.00%` reads as a regression; print rounded-away signs as zero.
fn percent(value: f64) -> String {
    let text = format!("{value:.2}%");
    if text == "-0.00%" {
        "0.00%".into()
    } else {
        text
    }
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    if let Some(files) = &a.psnr {
        let (Some(width), Some(height), Some(frames)) = (a.width, a.height, a.frames) else {
            bail!("--psnr needs --width, --height and --frames");
        };
        let dims = Dims {
            width,
            height,
            frames,
        };
        dims.validate()?;
        let x = read_video(&files[0], &dims)?.luma;
        let y = read_video(&files[1], &dims)?.luma;
        let values = frame_psnrs(&x, &y)?;
        for (i, v) in values.iter().enumerate() {
            println!("frame {i}: {v:.6} dB");
        }
        println!("mean {:.6} dB", mean(&values));
    } else if let Some(files) = &a.bdrate {
        let anchor =
            read_rd_csv(&files[0]).with_context(|| format!("reading {}", files[0].display()))?;
        let test =
            read_rd_csv(&files[1]).with_context(|| format!("reading {}", files[1].display()))?;
        let bd = metrics::bd_rate_detailed(&anchor, &test)?;
        if bd.non_monotone {
            log::warn!("an RD curve is not monotone; the fit may be unreliable");
        }
        println!("BD-rate {}", percent(bd.percent));
    } else if let Some(times) = &a.dt {
        let pair = TimingPair::new(times[0], times[1]);
        log::debug!("time increment ratio {}", timing_ratio(pair)?);
        println!("{}", timing_report(pair)?);
    }
    Ok(())
}

/// Short runs need a larger initial scale than the default for gradients to
/// reach the early layers.
const DEMO_INIT_STD: f64 = 0.01;

pub fn demo(a: &DemoArgs) -> Result<()> {
    let dims = Dims {
        width: a.width,
        height: a.height,
        frames: a.frames,
    };
    dims.validate()?;
    ensure!(a.frames >= 2, "the demo needs at least two frames");
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let file = |name: &str| a.out_dir.join(name);

    let original = dataset::synthetic_sequence(a.width, a.height, a.frames, a.seed);
    write_yuv420(file("original.yuv"), &original, None)?;
    println!("== extract");
    extract(&ExtractArgs {
        pristine: file("original.yuv"),
        degraded: None,
        degrade: Some(a.step),
        degraded_out: Some(file("degraded.yuv")),
        dims: dims.clone(),
        refs: None,
        stride: 14,
        seed: a.seed,
        qp: 22,
        out: file("samples.stds"),
    })?;
    println!("== train");
    train(&TrainArgs {
        store: file("samples.stds"),
        qp: Some(22),
        lr: Some(1e-4),
        beta1: None,
        beta2: None,
        epsilon: None,
        iterations: Some(a.iterations),
        batch_size: Some(4),
        seed: Some(a.seed),
        init_std: Some(DEMO_INIT_STD),
        log_every: Some(a.iterations.div_ceil(10).max(1)),
        checkpoint_every: None,
        holdout: None,
        log: None,
        no_checkpoints: true,
        out: file("model.strn"),
    })?;
    println!("== filter");
    filter(&FilterArgs {
        model: file("model.strn"),
        degraded: file("degraded.yuv"),
        original: file("original.yuv"),
        dims: dims.clone(),
        refs: None,
        mode: stresnet::FilterMode::InLoop,
        out: file("filtered.yuv"),
        flags: None,
        trace: None,
    })?;
    println!("== eval");
    eval(&EvalArgs {
        psnr: Some(vec![file("original.yuv"), file("filtered.yuv")]),
        bdrate: None,
        dt: None,
        width: Some(a.width),
        height: Some(a.height),
        frames: Some(a.frames),
    })?;
    Ok(())
}
