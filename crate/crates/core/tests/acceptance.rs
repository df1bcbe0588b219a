//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use stresnet::dataset::{
    degrade, extract_samples, shuffle_store, synthetic_sequence, DegradeSpec, DEFAULT_STRIDE,
};
use stresnet::metrics::{
    bd_rate_detailed, mse, psnr, timing_ratio, timing_report, RdPoint, TimingPair,
};
use stresnet::model::{LAYERS, PARAM_COUNT, WEIGHT_COUNT};
use stresnet::pipeline::{replay_sequence, CtuFlagMap, CtuGrid, FilterMode};
use stresnet::tensor::conv2d_same;
use stresnet::trainer::{loss, loss_and_gradient, train_samples, HyperParams, NoObserver};
use stresnet::{
    filter_sequence, init_weights, ConvKernel, FrameSequence, LumaPlane, StresNetWeights, Tensor,
    TrainingSample,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// --- architecture --------------------------------------------------------

fn architecture() -> Outcome {
    let model = init_weights(22, 0);
    let expected = [
        (800, 5, 32),
        (288, 3, 32),
        (9216, 3, 16),
        (1152, 3, 8),
        (8, 1, 1),
    ];
    for (i, (layer, &(weights, k, maps))) in model.layers().iter().zip(&expected).enumerate() {
        let got = (
            layer.weight_count(),
            layer.kernel_height(),
            layer.out_channels(),
        );
        check(
            got == (weights, k, maps) && layer.kernel_width() == k,
            || format!("conv{}: {got:?}, expected {:?}", i + 1, (weights, k, maps)),
        )?;
    }
    check(LAYERS.len() == 5, || "layer table".into())?;
    check(
        model.weight_count() == 11_464 && WEIGHT_COUNT == 11_464,
        || format!("{} weights", model.weight_count()),
    )?;
    check(
        model.param_count() == 11_553 && PARAM_COUNT == 11_553,
        || format!("{} parameters", model.param_count()),
    )?;
    Ok("11464 weights (800/288/9216/1152/8), 11553 parameters".into())
}

// --- convolution oracle ------------------------------------------------------

fn five_loop_conv(input: &Tensor, k: &ConvKernel) -> Tensor {
    let (h, w) = (input.height() as isize, input.width() as isize);
    let (ph, pw) = (
        (k.kernel_height() / 2) as isize,
        (k.kernel_width() / 2) as isize,
    );
    Tensor::from_fn(
        input.height(),
        input.width(),
        k.out_channels(),
        |r, c, co| {
            let mut sum = k.bias()[co];
            for ci in 0..k.in_channels() {
                for kr in 0..k.kernel_height() {
                    for kc in 0..k.kernel_width() {
                        let y = r as isize + kr as isize - ph;
                        let x = c as isize + kc as isize - pw;
                        if (0..h).contains(&y) && (0..w).contains(&x) {
                            sum += input.get(y as usize, x as usize, ci) * k.weight(co, ci, kr, kc);
                        }
                    }
                }
            }
            sum
        },
    )
}

fn random_kernel(rng: &mut ChaCha8Rng, co: usize, ci: usize, kh: usize, kw: usize) -> ConvKernel {
    let weights = (0..co * ci * kh * kw)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let bias = (0..co).map(|_| rng.random_range(-1.0..1.0)).collect();
    ConvKernel::new(co, ci, kh, kw, weights, bias).unwrap()
}

fn conv_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0417);
    let mut worst = 0.0f64;
    let mut cases = 0;
    // 120 general instances, then the channel counts the network uses.
    let mut shapes: Vec<(usize, usize, usize, usize, usize, usize)> = (0..120)
        .map(|_| {
            let odd = [1, 3, 5];
            (
                rng.random_range(1..=16),
                rng.random_range(1..=16),
                rng.random_range(1..=8),
                rng.random_range(1..=8),
                odd[rng.random_range(0..3)],
                odd[rng.random_range(0..3)],
            )
        })
        .collect();
    for (ci, co, k) in [(1, 32, 5), (1, 32, 3), (64, 16, 3), (16, 8, 3), (8, 1, 1)] {
        shapes.push((16, 16, ci, co, k, k));
        shapes.push((7, 13, ci, co, k, k));
    }
    for (h, w, ci, co, kh, kw) in shapes {
        let input = Tensor::from_fn(h, w, ci, |_, _, _| rng.random_range(-1.0..1.0));
        let kernel = random_kernel(&mut rng, co, ci, kh, kw);
        let fast = conv2d_same(&input, &kernel).map_err(err)?;
        let slow = five_loop_conv(&input, &kernel);
        let e = fast
            .data()
            .iter()
            .zip(slow.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst = worst.max(e);
        cases += 1;
    }
    check(worst < 1e-6, || format!("max abs error {worst:e}"))?;
    Ok(format!("{cases} instances, max abs error {worst:.1e}"))
}

// --- gradient check ----------------------------------------------------------

/// Weights whose channels sit far on one side of the ReLU kink: each channel
/// bias is +2 or -2 and the weights are small, so a 1e-3 step never flips an
/// activation and both ReLU branches are exercised.
fn kink_free_model(rng: &mut ChaCha8Rng) -> StresNetWeights {
    let mut model = StresNetWeights::zeros(22);
    for (i, layer) in model.layers_mut().iter_mut().enumerate() {
        let fan_in = layer.in_channels() * layer.kernel_height() * layer.kernel_width();
        let normal = Normal::new(0.0, 0.25 / (fan_in as f64).sqrt()).unwrap();
        let last = i == 4;
        let (weights, bias) = layer.params_mut();
        for w in weights {
            *w = normal.sample(rng);
        }
        for b in bias {
            *b = if last || rng.random_bool(0.75) {
                2.0
            } else {
                -2.0
            };
        }
    }
    model
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9AD);
    let h = 1e-3;
    let mut worst_rel = 0.0f64;
    let mut checked = 0usize;
    let mut zero = 0usize;
    for batch_index in 0..5 {
        let model = kink_free_model(&mut rng);
        let batch: Vec<TrainingSample> = (0..2)
            .map(|_| {
                let mut block = || Tensor::from_fn(8, 8, 1, |_, _, _| rng.random_range(0.0..1.0));
                TrainingSample::new(block(), block(), block()).unwrap()
            })
            .collect();
        let (_, grad) = loss_and_gradient(&model, &batch).map_err(err)?;
        let analytic = grad.to_flat();
        let base = model.to_flat();
        check(analytic.len() == PARAM_COUNT, || {
            format!("{} gradients", analytic.len())
        })?;
        let mut probe = model.clone();
        let mut params = base.clone();
        for i in 0..base.len() {
            params[i] = base[i] + h;
            probe.copy_from_flat(&params).map_err(err)?;
            let up = loss(&probe, &batch).map_err(err)?;
            params[i] = base[i] - h;
            probe.copy_from_flat(&params).map_err(err)?;
            let down = loss(&probe, &batch).map_err(err)?;
            params[i] = base[i];
            let numeric = (up - down) / (2.0 * h);
            let diff = (numeric - analytic[i]).abs();
            let scale = numeric.abs().max(analytic[i].abs());
            let rel = if scale > 0.0 { diff / scale } else { 0.0 };
            if scale > 1e-6 {
                worst_rel = worst_rel.max(rel);
            }
            check(rel < 1e-3 || diff < 1e-8, || {
                format!(
                    "batch {batch_index} parameter {i}: analytic {} numeric {numeric}",
                    analytic[i]
                )
            })?;
            zero += usize::from(scale <= 1e-8);
            checked += 1;
        }
    }
    Ok(format!(
        "{checked} checks over 5 batches ({zero} near-zero), worst relative error {worst_rel:.1e}"
    ))
}

// --- residue identity --------------------------------------------------------

fn random_plane(rng: &mut ChaCha8Rng, w: usize, h: usize) -> LumaPlane {
    LumaPlane::new(w, h, (0..w * h).map(|_| rng.random::<u8>()).collect()).unwrap()
}

fn random_sequence(rng: &mut ChaCha8Rng, w: usize, h: usize, n: usize) -> FrameSequence {
    let frames = (0..n).map(|_| random_plane(rng, w, h)).collect();
    let refs = (0..n)
        .map(|i| {
            if i == 0 || rng.random_bool(0.2) {
                None
            } else {
                Some(rng.random_range(0..i))
            }
        })
        .collect();
    FrameSequence::with_references(w, h, frames, refs).unwrap()
}

fn residue_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let zero = StresNetWeights::zeros(27);
    let mut frames = 0;
    for (w, h) in [(64, 64), (100, 70), (130, 40)] {
        let original = random_sequence(&mut rng, w, h, 4);
        let degraded = degrade(&original, DegradeSpec::with_step(16.0));
        for mode in [FilterMode::InLoop, FilterMode::OutOfLoop] {
            let out = filter_sequence(&zero, &degraded, &original, mode).map_err(err)?;
            check(out.filtered == degraded, || {
                format!("{w}x{h} {mode}: output differs from input")
            })?;
            check(out.flags.enabled_count() == 0, || {
                format!("{w}x{h} {mode}: a flag was enabled")
            })?;
            frames += degraded.len();
        }
    }
    Ok(format!("{frames} frames bit-identical, all flags off"))
}

// --- training smoke ----------------------------------------------------------

fn smoke_samples() -> Vec<TrainingSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    (0..32)
        .map(|_| {
            let current = Tensor::from_fn(16, 16, 1, |_, _, _| rng.random_range(0.1..0.8));
            let colocated = Tensor::from_fn(16, 16, 1, |_, _, _| rng.random_range(0.1..0.8));
            let target = Tensor::from_fn(16, 16, 1, |r, c, _| current.get(r, c, 0) + 0.05);
            TrainingSample::new(colocated, current, target).unwrap()
        })
        .collect()
}

fn training_smoke() -> Outcome {
    let samples = smoke_samples();
    let hp = HyperParams {
        base_learning_rate: 1e-4,
        iterations: 2_000,
        batch_size: 8,
        seed: 7,
        ..HyperParams::for_qp(22).map_err(err)?
    };
    let (w1, r1) = train_samples(&samples, &hp, &mut NoObserver).map_err(err)?;
    let (w2, r2) = train_samples(&samples, &hp, &mut NoObserver).map_err(err)?;
    let ratio = r1.final_loss / r1.initial_loss;
    check(ratio <= 0.10, || {
        format!(
            "loss {:.4e} -> {:.4e} ({:.1}%)",
            r1.initial_loss,
            r1.final_loss,
            100.0 * ratio
        )
    })?;
    check(w1 == w2 && r1 == r2, || {
        "two runs with the same seed differ".into()
    })?;
    Ok(format!(
        "loss {:.4e} -> {:.4e} ({:.2}% of initial), runs identical",
        r1.initial_loss,
        r1.final_loss,
        100.0 * ratio
    ))
}

// --- desk experiment ---------------------------------------------------------

fn desk_experiment() -> Outcome {
    let original = synthetic_sequence(128, 96, 20, 2024);
    let degraded = degrade(&original, DegradeSpec::with_step(16.0));
    let train_original = original.slice(0..10).map_err(err)?;
    let train_degraded = degraded.slice(0..10).map_err(err)?;
    let samples = extract_samples(&train_original, &train_degraded, DEFAULT_STRIDE).map_err(err)?;
    let store = shuffle_store(samples, 11, 22).map_err(err)?;
    let hp = HyperParams {
        base_learning_rate: 1e-4,
        iterations: 10_000,
        batch_size: 2,
        seed: 3,
        // At the default 0.001 scale, gradients of the early layers stay
        // below Adam's epsilon for the whole of a short run.
        init_std: 0.01,
        ..HyperParams::for_qp(22).map_err(err)?
    };
    let (model, report) = train_samples(&store.samples, &hp, &mut NoObserver).map_err(err)?;

    let out = filter_sequence(&model, &degraded, &original, FilterMode::InLoop).map_err(err)?;
    let mut gain_sum = 0.0;
    let mut flags = 0;
    for i in 10..20 {
        let before = mse(original.frame(i), degraded.frame(i)).map_err(err)?;
        let after = mse(original.frame(i), out.filtered.frame(i)).map_err(err)?;
        check(after <= before, || {
            format!("frame {i}: MSE {after} above degraded {before}")
        })?;
        gain_sum += psnr(original.frame(i), out.filtered.frame(i)).map_err(err)?
            - psnr(original.frame(i), degraded.frame(i)).map_err(err)?;
        flags += out.flags.frames[i].iter().filter(|&&f| f).count();
    }
    let gain = gain_sum / 10.0;
    check(gain > 0.0 && flags > 0, || {
        format!("mean gain {gain:.4} dB with {flags} flags")
    })?;
    Ok(format!(
        "{} samples, train loss {:.3} -> {:.3}; frames 11-20: mean gain {gain:.3} dB, {flags}/{} CTUs on",
        store.len(),
        report.initial_loss,
        report.final_loss,
        10 * out.flags.grid.len()
    ))
}

// --- flag soundness and replay -------------------------------------------------

fn random_model(rng: &mut ChaCha8Rng) -> StresNetWeights {
    let mut model = init_weights(32, rng.random());
    let scale = rng.random_range(5.0..60.0);
    model.scale(scale);
    model
}

fn flag_soundness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut entries = 0;
    let mut on = 0;
    for case in 0..20 {
        let (w, h) = (rng.random_range(20..140), rng.random_range(20..100));
        let model = random_model(&mut rng);
        let original = random_sequence(&mut rng, w, h, 3);
        let degraded = degrade(
            &original,
            DegradeSpec::with_step(rng.random_range(4.0..40.0)),
        );
        let mode = if case % 2 == 0 {
            FilterMode::InLoop
        } else {
            FilterMode::OutOfLoop
        };
        let out = filter_sequence(&model, &degraded, &original, mode).map_err(err)?;
        let grid = CtuGrid::new(w, h);
        for e in &out.trace.entries {
            let d = e.decision;
            check(d.flag == (d.d2 < d.d1), || {
                format!("case {case}: inconsistent entry {e:?}")
            })?;
            let rect = grid.rect(e.ctu_row, e.ctu_col);
            let orig = original.frame(e.frame).block(rect).map_err(err)?;
            let d1 = stresnet::metrics::mse_bytes(
                &degraded.frame(e.frame).block(rect).map_err(err)?,
                &orig,
            )
            .map_err(err)?;
            check(d1 == d.d1, || {
                format!("case {case}: recorded D1 {} recomputed {d1}", d.d1)
            })?;
            let flag = out.flags.frames[e.frame][e.ctu_row * grid.cols + e.ctu_col];
            check(flag == d.flag, || {
                format!("case {case}: flag map disagrees with trace")
            })?;
            entries += 1;
            on += usize::from(d.flag);
        }
        check(out.trace.unsound_entries().is_empty(), || {
            "unsound trace entries".into()
        })?;
    }
    check(on > 0 && on < entries, || {
        format!("{on}/{entries} flags on; need both outcomes")
    })?;
    Ok(format!("{entries} CTU decisions consistent ({on} on)"))
}

fn replay() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut cases = 0;
    let mut on = 0;
    for case in 0..12 {
        let (w, h) = (rng.random_range(16..150), rng.random_range(16..110));
        let model = random_model(&mut rng);
        let original = random_sequence(&mut rng, w, h, 4);
        let degraded = degrade(
            &original,
            DegradeSpec::with_step(rng.random_range(4.0..40.0)),
        );
        let mode = if case % 2 == 0 {
            FilterMode::InLoop
        } else {
            FilterMode::OutOfLoop
        };
        let out = filter_sequence(&model, &degraded, &original, mode).map_err(err)?;
        let sidecar = out.flags.to_sidecar();
        let flags = CtuFlagMap::parse_sidecar(&sidecar, CtuGrid::new(w, h)).map_err(err)?;
        let rebuilt = replay_sequence(&model, &degraded, &flags, mode).map_err(err)?;
        check(rebuilt == out.filtered, || {
            format!("case {case} ({w}x{h}, {mode}): replay differs")
        })?;
        cases += 1;
        on += flags.enabled_count();
    }
    Ok(format!(
        "{cases} cases byte-identical ({on} flagged CTUs replayed)"
    ))
}

// --- metrics -------------------------------------------------------------------

fn bd_rate_checks() -> Outcome {
    let anchor: Vec<RdPoint> = [
        (1000.0, 34.1),
        (1800.0, 36.3),
        (3200.0, 38.4),
        (6000.0, 40.2),
    ]
    .iter()
    .map(|&(r, p)| RdPoint::new(r, p))
    .collect();
    let same = bd_rate_detailed(&anchor, &anchor).map_err(err)?;
    check(same.percent.abs() < 1e-9, || {
        format!("identical curves: {}%", same.percent)
    })?;
    check(format!("{:.2}%", same.percent) == "0.00%", || {
        "identical curves do not print 0.00%".into()
    })?;

    let scaled: Vec<RdPoint> = anchor
        .iter()
        .map(|p| RdPoint::new(p.rate * 1.10, p.psnr))
        .collect();
    let up = bd_rate_detailed(&anchor, &scaled).map_err(err)?;
    check((up.percent - 10.0).abs() < 1e-6, || {
        format!("x1.10 rates: {}%", up.percent)
    })?;

    let other: Vec<RdPoint> = [
        (950.0, 34.4),
        (1700.0, 36.5),
        (3100.0, 38.7),
        (5900.0, 40.3),
    ]
    .iter()
    .map(|&(r, p)| RdPoint::new(r, p))
    .collect();
    let ab = bd_rate_detailed(&anchor, &other).map_err(err)?;
    let ba = bd_rate_detailed(&other, &anchor).map_err(err)?;
    let asym = (ab.log_delta + ba.log_delta).abs();
    check(asym < 1e-9, || format!("log-domain asymmetry {asym:e}"))?;
    Ok(format!(
        "identity {:.1e}%, x1.10 -> {:.9}%, asymmetry {asym:.1e}",
        same.percent, up.percent
    ))
}

fn timing() -> Outcome {
    let pair = TimingPair::new(100.0, 135.7);
    let ratio = timing_ratio(pair).map_err(err)?;
    check((ratio - 0.357).abs() <= 4.0 * f64::EPSILON * 0.357, || {
        format!("ratio {ratio}")
    })?;
    let report = timing_report(pair).map_err(err)?;
    check(report.contains("135.7%"), || format!("report {report:?}"))?;
    Ok(format!("ratio {ratio}, report \"{report}\""))
}

// --- runner ----------------------------------------------------------------------

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("architecture", Duration::from_secs(1), architecture),
        ("convolution oracle", Duration::from_secs(10), conv_oracle),
        ("gradient check", Duration::from_secs(120), gradient_check),
        ("residue identity", Duration::from_secs(5), residue_identity),
        ("training smoke", Duration::from_secs(300), training_smoke),
        (
            "desk experiment",
            Duration::from_secs(1800),
            desk_experiment,
        ),
        ("flag soundness", Duration::from_secs(30), flag_soundness),
        ("replay", Duration::from_secs(30), replay),
        ("bd-rate", Duration::from_secs(1), bd_rate_checks),
        ("timing ratio", Duration::from_secs(1), timing),
    ];
    let only: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let previous_hook = panic::take_hook();
    panic::set_hook(Box::new(|_| {}));

    let mut failures = 0;
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let (ok, detail) = match result {
            Ok(d) if elapsed <= *budget => (true, d),
            Ok(d) => (false, format!("{d}; over the {budget:?} budget")),
            Err(e) => (false, e),
        };
        failures += usize::from(!ok);
        println!(
            "[{:>2}] {:<20} {} ({:.2?}): {detail}",
            i + 1,
            name,
            if ok { "PASS" } else { "FAIL" },
            elapsed
        );
    }
    panic::set_hook(previous_hook);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}
