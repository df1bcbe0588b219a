//! The four-layer spatial-temporal residual network.
//!
//! ```text
//! current ──conv1 5x5 (32)──relu──┐
//!                                 concat (64)──conv3 3x3 (16)──relu──conv4 3x3 (8)──relu──conv5 1x1 (1)──┐
//! colocated ─conv2 3x3 (32)──relu─┘                                                                     │
//! current ───────────────────────────────────────────────────────────────────────────────────────────(+)──> output
//! ```
//!
//! Inputs are single-channel luma blocks normalized to `[0, 1]`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{ensure, Error, Result};
use crate::tensor::{self, concat_channels, conv2d_same, ConvKernel, Tensor};

/// `(out_channels, in_channels, kernel_size)` for conv1..conv5.
pub const LAYERS: [(usize, usize, usize); 5] =
    [(32, 1, 5), (32, 1, 3), (16, 64, 3), (8, 16, 3), (1, 8, 1)];

/// Weights excluding biases.
pub const WEIGHT_COUNT: usize = 11_464;
pub const BIAS_COUNT: usize = 89;
pub const PARAM_COUNT: usize = WEIGHT_COUNT + BIAS_COUNT;

/// Standard deviation of the Gaussian weight initialization.
pub const INIT_STD: f64 = 0.001;

/// Whether the residue passes through a ReLU (non-negative corrections only).
pub const FINAL_RELU: bool = cfg!(feature = "literal-final-relu");

pub const MODEL_MAGIC: &[u8; 4] = b"STRN";
pub const MODEL_VERSION: u16 = 1;

/// Maps an 8-bit sample into the network's `[0, 1]` domain.
///
/// The quotient is rounded to `f32` so that sample stores, which hold 32-bit
/// floats, reproduce in-memory samples exactly.
#[inline]
pub fn normalize(byte: u8) -> f64 {
    (byte as f32 / 255.0) as f64
}

/// Inverse of [`normalize`]: scale, round half away from zero, clamp.
#[inline]
pub fn denormalize(value: f64) -> u8 {
    (value * 255.0).round().clamp(0.0, 255.0) as u8
}

#[derive(Debug, Clone, PartialEq)]
pub struct StresNetWeights {
    qp: i16,
    layers: [ConvKernel; 5],
}

/// Gradient of a scalar loss, laid out exactly like the weights it differentiates.
pub type Gradient = StresNetWeights;

impl StresNetWeights {
    pub fn from_layers(qp: i16, layers: [ConvKernel; 5]) -> Result<Self> {
        for (i, (layer, &(out, input, k))) in layers.iter().zip(LAYERS.iter()).enumerate() {
            ensure!(
                layer.out_channels() == out
                    && layer.in_channels() == input
                    && layer.kernel_height() == k
                    && layer.kernel_width() == k,
                "conv{} must be {out}x{input}x{k}x{k}, got {}x{}x{}x{}",
                i + 1,
                layer.out_channels(),
                layer.in_channels(),
                layer.kernel_height(),
                layer.kernel_width()
            );
        }
        Ok(StresNetWeights { qp, layers })
    }

    /// All weights and biases zero: the network reduces to the identity.
    pub fn zeros(qp: i16) -> Self {
        StresNetWeights {
            qp,
            layers: LAYERS.map(|(out, input, k)| ConvKernel::zeros(out, input, k, k)),
        }
    }

    pub fn qp(&self) -> i16 {
        self.qp
    }

    pub fn set_qp(&mut self, qp: i16) {
        self.qp = qp;
    }

    pub fn layers(&self) -> &[ConvKernel; 5] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [ConvKernel; 5] {
        &mut self.layers
    }

    pub fn conv1(&self) -> &ConvKernel {
        &self.layers[0]
    }

    pub fn conv2(&self) -> &ConvKernel {
        &self.layers[1]
    }

    pub fn conv3(&self) -> &ConvKernel {
        &self.layers[2]
    }

    pub fn conv4(&self) -> &ConvKernel {
        &self.layers[3]
    }

    pub fn conv5(&self) -> &ConvKernel {
        &self.layers[4]
    }

    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(ConvKernel::weight_count).sum()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight_count() + l.bias().len())
            .sum()
    }

    /// Parameters in serialization order: for each layer its weights, then its biases.
    pub fn iter_params(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights().iter().chain(l.bias().iter()))
    }

    pub fn iter_params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| {
            let (w, b) = l.params_mut();
            w.iter_mut().chain(b.iter_mut())
        })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.iter_params().copied().collect()
    }

    pub fn copy_from_flat(&mut self, values: &[f64]) -> Result<()> {
        ensure!(
            values.len() == self.param_count(),
            "expected {} parameters, got {}",
            self.param_count(),
            values.len()
        );
        for (p, v) in self.iter_params_mut().zip(values) {
            *p = *v;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.iter_params().all(|v| v.is_finite())
    }

    /// Multiplies every parameter by `factor`.
    pub fn scale(&mut self, factor: f64) {
        for p in self.iter_params_mut() {
            *p *= factor;
        }
    }

    /// Accumulates `other` into `self`, parameter by parameter.
    pub fn accumulate(&mut self, other: &StresNetWeights) {
        for (p, q) in self.iter_params_mut().zip(other.iter_params()) {
            *p += q;
        }
    }
}

/// Gaussian(0, 0.001) weights from a seeded generator, zero biases.
pub fn init_weights(qp: i16, seed: u64) -> StresNetWeights {
    init_weights_with_std(qp, seed, INIT_STD)
}

/// Like [`init_weights`] with a different standard deviation.
pub fn init_weights_with_std(qp: i16, seed: u64, std: f64) -> StresNetWeights {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, std).expect("finite, non-negative std");
    let mut weights = StresNetWeights::zeros(qp);
    for layer in weights.layers_mut() {
        for w in layer.weights_mut() {
            *w = normal.sample(&mut rng);
        }
    }
    weights
}

/// Post-activation feature maps of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Intermediates {
    /// relu(conv1(current)), 32 channels.
    pub current_features: Tensor,
    /// relu(conv2(colocated)), 32 channels.
    pub reference_features: Tensor,
    /// relu(conv3(concat)), 16 channels.
    pub fused: Tensor,
    /// relu(conv4(fused)), 8 channels.
    pub refined: Tensor,
    /// conv5 output (through ReLU only with `literal-final-relu`), 1 channel.
    pub residue: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPass {
    pub output: Tensor,
    pub intermediates: Intermediates,
}

fn check_inputs(current: &Tensor, colocated: &Tensor) -> Result<()> {
    ensure!(
        current.channels() == 1,
        "current block must be single-channel, got {}",
        current.channels()
    );
    ensure!(
        current.shape() == colocated.shape(),
        "current {:?} and colocated {:?} blocks differ in shape",
        current.shape(),
        colocated.shape()
    );
    Ok(())
}

pub fn forward_with_intermediates(
    weights: &StresNetWeights,
    current: &Tensor,
    colocated: &Tensor,
) -> Result<ForwardPass> {
    check_inputs(current, colocated)?;
    let [conv1, conv2, conv3, conv4, conv5] = &weights.layers;

    let mut current_features = conv2d_same(current, conv1)?;
    tensor::relu_in_place(&mut current_features);
    let mut reference_features = conv2d_same(colocated, conv2)?;
    tensor::relu_in_place(&mut reference_features);

    let stacked = concat_channels(&current_features, &reference_features)?;
    let mut fused = conv2d_same(&stacked, conv3)?;
    tensor::relu_in_place(&mut fused);
    let mut refined = conv2d_same(&fused, conv4)?;
    tensor::relu_in_place(&mut refined);
    let mut residue = conv2d_same(&refined, conv5)?;
    if FINAL_RELU {
        tensor::relu_in_place(&mut residue);
    }
    let output = tensor::add(current, &residue)?;

    Ok(ForwardPass {
        output,
        intermediates: Intermediates {
            current_features,
            reference_features,
            fused,
            refined,
            residue,
        },
    })
}

/// Restored block: `current` plus the predicted residue.
pub fn forward(weights: &StresNetWeights, current: &Tensor, colocated: &Tensor) -> Result<Tensor> {
    forward_with_intermediates(weights, current, colocated).map(|pass| pass.output)
}

pub fn save<W: Write>(weights: &StresNetWeights, mut writer: W) -> Result<()> {
    writer.write_all(MODEL_MAGIC)?;
    writer.write_all(&MODEL_VERSION.to_le_bytes())?;
    writer.write_all(&weights.qp.to_le_bytes())?;
    for v in weights.iter_params() {
        writer.write_all(&(*v as f32).to_le_bytes())?;
    }
    writer.flush()?;
    Ok(())
}

pub fn load<R: Read>(mut reader: R) -> Result<StresNetWeights> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let header = 4 + 2 + 2;
    let expected = header + PARAM_COUNT * 4;
    if bytes.len() < 4 || &bytes[..4] != MODEL_MAGIC {
        return Err(Error::Format {
            field: "magic",
            message: format!("expected {:?}", String::from_utf8_lossy(MODEL_MAGIC)),
        });
    }
    if bytes.len() < header {
        return Err(Error::Format {
            field: "length",
            message: format!("header needs {header} bytes, file has {}", bytes.len()),
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != MODEL_VERSION {
        return Err(Error::Format {
            field: "version",
            message: format!("unsupported version {version}, expected {MODEL_VERSION}"),
        });
    }
    if bytes.len() != expected {
        return Err(Error::Format {
            field: "length",
            message: format!("expected {expected} bytes, file has {}", bytes.len()),
        });
    }
    let qp = i16::from_le_bytes([bytes[6], bytes[7]]);
    let mut weights = StresNetWeights::zeros(qp);
    for (p, chunk) in weights
        .iter_params_mut()
        .zip(bytes[header..].chunks_exact(4))
    {
        *p = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk")) as f64;
    }
    if !weights.is_finite() {
        return Err(Error::Format {
            field: "weights",
            message: "non-finite value".into(),
        });
    }
    Ok(weights)
}

pub fn save_file(weights: &StresNetWeights, path: impl AsRef<Path>) -> Result<()> {
    save(weights, BufWriter::new(File::create(path)?))
}

pub fn load_file(path: impl AsRef<Path>) -> Result<StresNetWeights> {
    load(BufReader::new(File::open(path)?))
}
