//! Mean-squared-error training with Adam.
//!
//! The loss over a batch of `N` samples is `(1/N) Σ ‖F(colocated, current) − target‖²`,
//! with the squared norm summed over every pixel of the block.

use rayon::prelude::*;

use crate::dataset::{SampleStore, TrainingSample};
use crate::error::{ensure, Error, Result};
use crate::model::{
    self, forward_with_intermediates, init_weights_with_std, Gradient, StresNetWeights,
};
use crate::tensor::{
    self, concat_channels, conv2d_same_backward, conv2d_same_backward_params, split_channels,
    Tensor,
};

#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    pub qp: i16,
    pub base_learning_rate: f64,
    /// Adam β1.
    pub momentum: f64,
    /// Adam β2.
    pub momentum2: f64,
    pub iterations: u64,
    pub batch_size: usize,
    pub adam_epsilon: f64,
    pub seed: u64,
    /// Standard deviation of the Gaussian weight initialization.
    pub init_std: f64,
    /// Iterations per loss-log line.
    pub log_every: u64,
    /// Iterations between checkpoints; a final checkpoint is always written.
    pub checkpoint_every: u64,
    /// Samples at the end of the store kept out of training and used for the
    /// reported initial/final loss. With 0 the training samples themselves
    /// are evaluated.
    pub holdout: usize,
}

impl HyperParams {
    /// Default settings for the four trained QPs (22, 27, 32, 37).
    pub fn for_qp(qp: i16) -> Result<Self> {
        let (lr, momentum2, iterations) = match qp {
            22 => (1e-6, 0.999, 600_000),
            27 => (1e-7, 0.990, 600_000),
            32 => (1e-8, 0.988, 300_000),
            37 => (1e-8, 0.988, 300_000),
            other => {
                return Err(Error::Config(format!(
                    "no default hyper-parameters for QP {other}; use 22, 27, 32 or 37"
                )))
            }
        };
        Ok(HyperParams {
            qp,
            base_learning_rate: lr,
            momentum: 0.9,
            momentum2,
            iterations,
            batch_size: 128,
            adam_epsilon: 1e-8,
            seed: 0,
            init_std: model::INIT_STD,
            log_every: 100,
            checkpoint_every: 10_000,
            holdout: 0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.base_learning_rate > 0.0 && self.base_learning_rate.is_finite()) {
            return bad(format!(
                "learning rate {} must be positive",
                self.base_learning_rate
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(0.0..1.0).contains(&self.momentum2) {
            return bad(format!(
                "momenta ({}, {}) must lie in [0, 1)",
                self.momentum, self.momentum2
            ));
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return bad(format!(
                "init std {} must be finite and non-negative",
                self.init_std
            ));
        }
        if !(self.adam_epsilon > 0.0 && self.adam_epsilon.is_finite()) {
            return bad(format!("epsilon {} must be positive", self.adam_epsilon));
        }
        if self.iterations == 0 || self.batch_size == 0 {
            return bad("iterations and batch size must be positive".into());
        }
        if self.log_every == 0 || self.checkpoint_every == 0 {
            return bad("log and checkpoint intervals must be positive".into());
        }
        Ok(())
    }
}

/// First and second moment estimates, one slot per parameter in
/// [`StresNetWeights::iter_params`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
}

impl AdamState {
    pub fn new(param_count: usize) -> Self {
        AdamState {
            step: 0,
            first_moment: vec![0.0; param_count],
            second_moment: vec![0.0; param_count],
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn update(
        &mut self,
        params: &mut [f64],
        grad: &[f64],
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    ) -> Result<()> {
        ensure!(
            params.len() == grad.len() && params.len() == self.first_moment.len(),
            "Adam state for {} parameters given {} parameters and {} gradients",
            self.first_moment.len(),
            params.len(),
            grad.len()
        );
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
        Ok(())
    }
}

pub fn adam_step(
    mut weights: StresNetWeights,
    gradient: &Gradient,
    mut state: AdamState,
    hp: &HyperParams,
) -> Result<(StresNetWeights, AdamState)> {
    let mut params = weights.to_flat();
    state.update(
        &mut params,
        &gradient.to_flat(),
        hp.base_learning_rate,
        hp.momentum,
        hp.momentum2,
        hp.adam_epsilon,
    )?;
    weights.copy_from_flat(&params)?;
    Ok((weights, state))
}

fn check_batch(batch: &[TrainingSample]) -> Result<()> {
    ensure!(!batch.is_empty(), "batch is empty");
    let shape = batch[0].current.shape();
    ensure!(
        batch.iter().all(|s| s.current.shape() == shape),
        "batch samples differ in shape"
    );
    Ok(())
}

fn sample_error(weights: &StresNetWeights, sample: &TrainingSample) -> Result<f64> {
    let out = model::forward(weights, &sample.current, &sample.colocated)?;
    ensure!(
        out.shape() == sample.target.shape(),
        "target shape {:?} differs from block shape {:?}",
        sample.target.shape(),
        out.shape()
    );
    Ok(out
        .data()
        .iter()
        .zip(sample.target.data())
        .map(|(o, t)| (o - t) * (o - t))
        .sum())
}

/// Batch-mean of the per-sample squared error.
pub fn loss(weights: &StresNetWeights, batch: &[TrainingSample]) -> Result<f64> {
    check_batch(batch)?;
    let errors = batch
        .par_iter()
        .map(|s| sample_error(weights, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(errors.iter().sum::<f64>() / batch.len() as f64)
}

/// Loss and its exact gradient for one sample; `scale` multiplies the
/// gradient (the caller passes `1/N`).
fn sample_loss_and_gradient(
    weights: &StresNetWeights,
    sample: &TrainingSample,
    scale: f64,
) -> Result<(f64, Gradient)> {
    let pass = forward_with_intermediates(weights, &sample.current, &sample.colocated)?;
    let im = &pass.intermediates;
    ensure!(
        pass.output.shape() == sample.target.shape(),
        "target shape {:?} differs from block shape {:?}",
        sample.target.shape(),
        pass.output.shape()
    );
    let (h, w) = (pass.output.height(), pass.output.width());
    let mut err = 0.0;
    let mut d_output = Vec::with_capacity(h * w);
    for (o, t) in pass.output.data().iter().zip(sample.target.data()) {
        let diff = o - t;
        err += diff * diff;
        d_output.push(2.0 * scale * diff);
    }
    // output = current + residue, so the residue receives d_output unchanged.
    let mut d_residue = Tensor::new(h, w, 1, d_output)?;
    if model::FINAL_RELU {
        d_residue = tensor::relu_backward(&im.residue, &d_residue)?;
    }

    let [conv1, conv2, conv3, conv4, conv5] = weights.layers();
    let mut grad = StresNetWeights::zeros(weights.qp());
    let g = grad.layers_mut();

    let g5 = conv2d_same_backward(&im.refined, conv5, &d_residue)?;
    let d_refined = tensor::relu_backward(&im.refined, &g5.input)?;
    let g4 = conv2d_same_backward(&im.fused, conv4, &d_refined)?;
    let d_fused = tensor::relu_backward(&im.fused, &g4.input)?;
    let stacked = concat_channels(&im.current_features, &im.reference_features)?;
    let g3 = conv2d_same_backward(&stacked, conv3, &d_fused)?;
    let (d_cur, d_ref) = split_channels(&g3.input, conv1.out_channels())?;
    let d_cur = tensor::relu_backward(&im.current_features, &d_cur)?;
    let d_ref = tensor::relu_backward(&im.reference_features, &d_ref)?;
    let (w1, b1) = conv2d_same_backward_params(&sample.current, conv1, &d_cur)?;
    let (w2, b2) = conv2d_same_backward_params(&sample.colocated, conv2, &d_ref)?;

    let parts = [
        (w1, b1),
        (w2, b2),
        (g3.weights, g3.bias),
        (g4.weights, g4.bias),
        (g5.weights, g5.bias),
    ];
    for (layer, (wg, bg)) in g.iter_mut().zip(parts) {
        layer.weights_mut().copy_from_slice(&wg);
        layer.bias_mut().copy_from_slice(&bg);
    }
    Ok((err, grad))
}

/// Batch loss and gradient. Samples are processed in parallel and reduced
/// in index order, so the result does not depend on thread scheduling.
pub fn loss_and_gradient(
    weights: &StresNetWeights,
    batch: &[TrainingSample],
) -> Result<(f64, Gradient)> {
    check_batch(batch)?;
    let scale = 1.0 / batch.len() as f64;
    let parts = batch
        .par_iter()
        .map(|s| sample_loss_and_gradient(weights, s, scale))
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    let mut grad = StresNetWeights::zeros(weights.qp());
    for (err, g) in &parts {
        total += err;
        grad.accumulate(g);
    }
    Ok((total * scale, grad))
}

/// Gradient of [`loss`] with respect to every weight and bias.
pub fn backward(weights: &StresNetWeights, batch: &[TrainingSample]) -> Result<Gradient> {
    loss_and_gradient(weights, batch).map(|(_, g)| g)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub iteration: u64,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean batch loss over each logging interval.
    pub log: Vec<LossRecord>,
    /// Evaluation-set loss before the first update.
    pub initial_loss: f64,
    /// Evaluation-set loss of the returned weights.
    pub final_loss: f64,
    pub evaluated_samples: usize,
}

/// Receives loss-log lines and checkpoints as training proceeds.
pub trait TrainObserver {
    fn on_log(&mut self, _record: LossRecord) -> Result<()> {
        Ok(())
    }

    fn on_checkpoint(&mut self, _iteration: u64, _weights: &StresNetWeights) -> Result<()> {
        Ok(())
    }
}

/// Ignores everything.
pub struct NoObserver;

impl TrainObserver for NoObserver {}

/// Trains from a fresh initialization on the (already shuffled) store.
pub fn train(
    store: &SampleStore,
    hp: &HyperParams,
    observer: &mut dyn TrainObserver,
) -> Result<(StresNetWeights, TrainReport)> {
    train_samples(&store.samples, hp, observer)
}

/// Batches are read sequentially with wrap-around; the learning rate is
/// constant.
pub fn train_samples(
    samples: &[TrainingSample],
    hp: &HyperParams,
    observer: &mut dyn TrainObserver,
) -> Result<(StresNetWeights, TrainReport)> {
    hp.validate()?;
    if samples.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if hp.holdout >= samples.len() {
        return Err(Error::Config(format!(
            "holdout of {} leaves no training samples out of {}",
            hp.holdout,
            samples.len()
        )));
    }
    let (training, held_out) = samples.split_at(samples.len() - hp.holdout);
    if training.len() < hp.batch_size {
        return Err(Error::Config(format!(
            "{} training samples cannot fill one batch of {}",
            training.len(),
            hp.batch_size
        )));
    }
    let evaluation = if held_out.is_empty() {
        training
    } else {
        held_out
    };

    let mut weights = init_weights_with_std(hp.qp, hp.seed, hp.init_std);
    let mut state = AdamState::new(weights.param_count());
    let mut params = weights.to_flat();
    let initial_loss = loss(&weights, evaluation)?;

    let mut log = Vec::new();
    let mut interval_sum = 0.0;
    let mut interval_len = 0u64;
    let mut batch = Vec::with_capacity(hp.batch_size);
    let mut cursor = 0usize;

    for iteration in 1..=hp.iterations {
        batch.clear();
        for _ in 0..hp.batch_size {
            batch.push(training[cursor].clone());
            cursor = (cursor + 1) % training.len();
        }
        let (batch_loss, grad) = loss_and_gradient(&weights, &batch)?;
        if !batch_loss.is_finite() {
            return Err(Error::Domain(format!(
                "loss diverged to {batch_loss} at iteration {iteration}"
            )));
        }
        state.update(
            &mut params,
            &grad.to_flat(),
            hp.base_learning_rate,
            hp.momentum,
            hp.momentum2,
            hp.adam_epsilon,
        )?;
        weights.copy_from_flat(&params)?;

        interval_sum += batch_loss;
        interval_len += 1;
        if iteration % hp.log_every == 0 || iteration == hp.iterations {
            let record = LossRecord {
                iteration,
                mean_loss: interval_sum / interval_len as f64,
            };
            log::debug!("iteration {iteration}: loss {:.6}", record.mean_loss);
            observer.on_log(record)?;
            log.push(record);
            interval_sum = 0.0;
            interval_len = 0;
        }
        if iteration % hp.checkpoint_every == 0 || iteration == hp.iterations {
            observer.on_checkpoint(iteration, &weights)?;
        }
    }

    let final_loss = loss(&weights, evaluation)?;
    Ok((
        weights,
        TrainReport {
            log,
            initial_loss,
            final_loss,
            evaluated_samples: evaluation.len(),
        },
    ))
}

/// Formats the loss log as `iteration<TAB>mean_loss` lines.
pub fn format_loss_log(records: &[LossRecord]) -> String {
    records
        .iter()
        .map(|r| format!("{}\t{}\n", r.iteration, r.mean_loss))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{forward, init_weights};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sample(rng: &mut ChaCha8Rng, size: usize) -> TrainingSample {
        let mut block = || Tensor::from_fn(size, size, 1, |_, _, _| rng.random_range(0.0..1.0));
        TrainingSample::new(block(), block(), block()).unwrap()
    }

    #[test]
    fn table_defaults() {
        let cases = [
            (22, 1e-6, 0.999, 600_000),
            (27, 1e-7, 0.990, 600_000),
            (32, 1e-8, 0.988, 300_000),
            (37, 1e-8, 0.988, 300_000),
        ];
        for (qp, lr, b2, iters) in cases {
            let hp = HyperParams::for_qp(qp).unwrap();
            assert_eq!(
                (
                    hp.base_learning_rate,
                    hp.momentum,
                    hp.momentum2,
                    hp.iterations,
                    hp.batch_size
                ),
                (lr, 0.9, b2, iters, 128)
            );
        }
        assert!(HyperParams::for_qp(30).is_err());
    }

    #[test]
    fn loss_is_zero_at_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = init_weights(22, 3);
        let batch: Vec<_> = (0..3)
            .map(|_| {
                let s = random_sample(&mut rng, 6);
                let target = forward(&w, &s.current, &s.colocated).unwrap();
                TrainingSample::new(s.colocated, s.current, target).unwrap()
            })
            .collect();
        assert_eq!(loss(&w, &batch).unwrap(), 0.0);
        let grad = backward(&w, &batch).unwrap();
        assert!(grad.iter_params().all(|&g| g == 0.0));
    }

    #[test]
    fn constant_offset_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch: Vec<_> = (0..4)
            .map(|_| {
                let s = random_sample(&mut rng, 38);
                let target = Tensor::new(
                    38,
                    38,
                    1,
                    s.current.data().iter().map(|v| v + 1.0).collect(),
                )
                .unwrap();
                TrainingSample::new(s.colocated, s.current, target).unwrap()
            })
            .collect();
        let l = loss(&StresNetWeights::zeros(22), &batch).unwrap();
        assert!((l - 1444.0).abs() < 1e-9);
    }

    #[test]
    fn loss_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = init_weights(22, 4);
        let batch: Vec<_> = (0..3).map(|_| random_sample(&mut rng, 7)).collect();
        let mut total = 0.0;
        for s in &batch {
            let out = forward(&w, &s.current, &s.colocated).unwrap();
            for r in 0..7 {
                for c in 0..7 {
                    let d = out.get(r, c, 0) - s.target.get(r, c, 0);
                    total += d * d;
                }
            }
        }
        assert!((loss(&w, &batch).unwrap() - total / 3.0).abs() < 1e-9);
        assert!(loss(&w, &[]).is_err());
    }

    #[test]
    fn gradient_is_linear_in_loss_scale() {
        // Duplicating every sample leaves the mean loss unchanged; doubling
        // the residual doubles the gradient.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut w = init_weights(22, 5);
        w.scale(100.0);
        let s = random_sample(&mut rng, 5);
        let out = forward(&w, &s.current, &s.colocated).unwrap();
        let shifted = |k: f64| {
            let target = Tensor::new(
                5,
                5,
                1,
                out.data()
                    .iter()
                    .zip(s.target.data())
                    .map(|(o, t)| o - k * (o - t))
                    .collect(),
            )
            .unwrap();
            TrainingSample::new(s.colocated.clone(), s.current.clone(), target).unwrap()
        };
        let g1 = backward(&w, &[shifted(1.0)]).unwrap();
        let g2 = backward(&w, &[shifted(2.0)]).unwrap();
        for (a, b) in g1.iter_params().zip(g2.iter_params()) {
            assert!((2.0 * a - b).abs() <= 1e-9 * b.abs() + 1e-18);
        }
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let w = init_weights(22, 6);
        let hp = HyperParams::for_qp(22).unwrap();
        let zero = StresNetWeights::zeros(22);
        let (next, state) =
            adam_step(w.clone(), &zero, AdamState::new(w.param_count()), &hp).unwrap();
        assert_eq!(next, w);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut state = AdamState::new(3);
        let mut params = vec![1.0, 1.0, 1.0];
        state
            .update(&mut params, &[0.5, -3.0, 1e-3], 0.01, 0.9, 0.999, 1e-8)
            .unwrap();
        assert!((params[0] - 0.99).abs() < 1e-6);
        assert!((params[1] - 1.01).abs() < 1e-6);
        assert!((params[2] - 0.99).abs() < 1e-4);
        assert!(state.second_moment.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn adam_converges_on_scalar_quadratic() {
        let mut state = AdamState::new(1);
        let mut theta = [0.0];
        for _ in 0..100 {
            let g = 2.0 * (theta[0] - 3.0);
            state
                .update(&mut theta, &[g], 0.1, 0.9, 0.999, 1e-8)
                .unwrap();
        }
        assert!((theta[0] - 3.0).abs() < 0.05, "theta {}", theta[0]);
    }

    #[test]
    fn training_rejects_small_datasets() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let samples: Vec<_> = (0..3).map(|_| random_sample(&mut rng, 4)).collect();
        let mut hp = HyperParams::for_qp(22).unwrap();
        hp.iterations = 1;
        assert!(matches!(
            train_samples(&samples, &hp, &mut NoObserver),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            train_samples(&[], &hp, &mut NoObserver),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn observer_sees_logs_and_checkpoints() {
        #[derive(Default)]
        struct Recorder {
            logs: Vec<u64>,
            checkpoints: Vec<u64>,
        }
        impl TrainObserver for Recorder {
            fn on_log(&mut self, r: LossRecord) -> Result<()> {
                self.logs.push(r.iteration);
                Ok(())
            }
            fn on_checkpoint(&mut self, i: u64, _: &StresNetWeights) -> Result<()> {
                self.checkpoints.push(i);
                Ok(())
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let samples: Vec<_> = (0..4).map(|_| random_sample(&mut rng, 4)).collect();
        let mut hp = HyperParams::for_qp(27).unwrap();
        hp.iterations = 25;
        hp.batch_size = 2;
        hp.log_every = 10;
        hp.checkpoint_every = 20;
        let mut rec = Recorder::default();
        let (w, report) = train_samples(&samples, &hp, &mut rec).unwrap();
        assert_eq!(rec.logs, vec![10, 20, 25]);
        assert_eq!(rec.checkpoints, vec![20, 25]);
        assert_eq!(w.qp(), 27);
        assert_eq!(report.log.len(), 3);
        assert!(report
            .log
            .iter()
            .all(|r| r.mean_loss >= 0.0 && r.mean_loss.is_finite()));
        assert_eq!(format_loss_log(&report.log[..1]).split('\t').count(), 2);
    }
}
