//! Training triplets: extraction from pristine/degraded frame pairs, the
//! one-time shuffle, and the binary sample store.

mod degrade;
mod frames;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use degrade::{degrade, degrade_frame, DegradeSpec};
pub use frames::{
    chroma_plane_len, load_yuv, read_reference_file, read_yuv420, write_yuv420, yuv420_frame_len,
    FrameSequence, LumaPlane, Rect, Yuv420Video,
};

use crate::error::{ensure, Error, Result};
use crate::model::normalize;
use crate::tensor::Tensor;

/// Side length of a training block.
pub const BLOCK_SIZE: usize = 38;
/// Pixels shared by horizontally or vertically adjacent training blocks.
pub const DEFAULT_OVERLAP: usize = 10;
pub const DEFAULT_STRIDE: usize = BLOCK_SIZE - DEFAULT_OVERLAP;

pub const STORE_MAGIC: &[u8; 4] = b"STDS";
pub const STORE_VERSION: u16 = 1;
const STORE_HEADER_LEN: usize = 4 + 2 + 4 + 2 + 2 + 8;

/// `(colocated reference block, degraded current block, pristine current block)`,
/// each a single-channel tensor normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub colocated: Tensor,
    pub current: Tensor,
    pub target: Tensor,
}

impl TrainingSample {
    pub fn new(colocated: Tensor, current: Tensor, target: Tensor) -> Result<Self> {
        ensure!(
            current.channels() == 1
                && colocated.shape() == current.shape()
                && target.shape() == current.shape(),
            "sample blocks must share one single-channel shape"
        );
        Ok(TrainingSample {
            colocated,
            current,
            target,
        })
    }

    /// Builds a sample from three raster-order byte blocks of `size`×`size`.
    pub fn from_bytes(
        size: usize,
        colocated: &[u8],
        current: &[u8],
        target: &[u8],
    ) -> Result<Self> {
        let to_tensor = |bytes: &[u8]| {
            Tensor::new(size, size, 1, bytes.iter().map(|&b| normalize(b)).collect())
        };
        Self::new(
            to_tensor(colocated)?,
            to_tensor(current)?,
            to_tensor(target)?,
        )
    }

    pub fn height(&self) -> usize {
        self.current.height()
    }

    pub fn width(&self) -> usize {
        self.current.width()
    }
}

/// Where an extracted sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleOrigin {
    pub frame: usize,
    pub reference: usize,
    pub rect: Rect,
}

/// Top-left offsets along one axis of length `extent`.
pub fn placements(extent: usize, block: usize, stride: usize) -> Vec<usize> {
    if extent < block {
        return Vec::new();
    }
    (0..=extent - block).step_by(stride).collect()
}

/// Every `BLOCK_SIZE` block at multiples of `stride`, for every frame that
/// has a reference, in frame-major then raster order.
pub fn extract_samples_with_origins(
    pristine: &FrameSequence,
    degraded: &FrameSequence,
    stride: usize,
) -> Result<Vec<(SampleOrigin, TrainingSample)>> {
    if stride == 0 {
        return Err(Error::Config("stride must be at least 1".into()));
    }
    pristine.check_aligned(degraded)?;
    let (w, h) = (degraded.width(), degraded.height());
    if w < BLOCK_SIZE || h < BLOCK_SIZE {
        log::warn!("{w}x{h} frames are smaller than {BLOCK_SIZE}x{BLOCK_SIZE} blocks; no samples extracted");
        return Ok(Vec::new());
    }
    let rows = placements(h, BLOCK_SIZE, stride);
    let cols = placements(w, BLOCK_SIZE, stride);
    let mut out = Vec::new();
    for frame in 0..degraded.len() {
        let Some(reference) = degraded.reference(frame) else {
            continue;
        };
        for &y in &rows {
            for &x in &cols {
                let rect = Rect::new(x, y, BLOCK_SIZE, BLOCK_SIZE);
                let sample = TrainingSample::from_bytes(
                    BLOCK_SIZE,
                    &degraded.frame(reference).block(rect)?,
                    &degraded.frame(frame).block(rect)?,
                    &pristine.frame(frame).block(rect)?,
                )?;
                out.push((
                    SampleOrigin {
                        frame,
                        reference,
                        rect,
                    },
                    sample,
                ));
            }
        }
    }
    Ok(out)
}

/// Training triplets per the degraded sequence's reference map. The default
/// stride is [`DEFAULT_STRIDE`] (38-pixel blocks overlapping by 10).
pub fn extract_samples(
    pristine: &FrameSequence,
    degraded: &FrameSequence,
    stride: usize,
) -> Result<Vec<TrainingSample>> {
    Ok(extract_samples_with_origins(pristine, degraded, stride)?
        .into_iter()
        .map(|(_, s)| s)
        .collect())
}

/// Shuffled samples plus the header fields of the store file.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleStore {
    pub qp: i16,
    pub shuffle_seed: u64,
    pub block_size: usize,
    pub samples: Vec<TrainingSample>,
}

/// Fisher–Yates permutation driven by a seeded ChaCha generator.
pub fn shuffle_store(mut samples: Vec<TrainingSample>, seed: u64, qp: i16) -> Result<SampleStore> {
    ensure!(!samples.is_empty(), "cannot build an empty sample store");
    let block_size = samples[0].height();
    ensure!(
        samples
            .iter()
            .all(|s| s.height() == block_size && s.width() == block_size),
        "all samples must be {block_size}x{block_size}"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    samples.shuffle(&mut rng);
    Ok(SampleStore {
        qp,
        shuffle_seed: seed,
        block_size,
        samples,
    })
}

impl SampleStore {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn write<W: Write>(&self, mut writer: W) -> Result<()> {
        let count = u32::try_from(self.samples.len())
            .map_err(|_| Error::Config("too many samples for one store".into()))?;
        let block = u16::try_from(self.block_size)
            .map_err(|_| Error::Config("block size does not fit the store header".into()))?;
        writer.write_all(STORE_MAGIC)?;
        writer.write_all(&STORE_VERSION.to_le_bytes())?;
        writer.write_all(&count.to_le_bytes())?;
        writer.write_all(&block.to_le_bytes())?;
        writer.write_all(&self.qp.to_le_bytes())?;
        writer.write_all(&self.shuffle_seed.to_le_bytes())?;
        let mut buf = Vec::with_capacity(3 * self.block_size * self.block_size * 4);
        for s in &self.samples {
            buf.clear();
            for t in [&s.colocated, &s.current, &s.target] {
                for v in t.data() {
                    buf.extend_from_slice(&(*v as f32).to_le_bytes());
                }
            }
            writer.write_all(&buf)?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut reader: R) -> Result<Self> {
        let mut header = [0u8; STORE_HEADER_LEN];
        reader.read_exact(&mut header).map_err(|_| Error::Format {
            field: "length",
            message: "file shorter than the store header".into(),
        })?;
        if &header[..4] != STORE_MAGIC {
            return Err(Error::Format {
                field: "magic",
                message: format!("expected {:?}", String::from_utf8_lossy(STORE_MAGIC)),
            });
        }
        let version = u16::from_le_bytes([header[4], header[5]]);
        if version != STORE_VERSION {
            return Err(Error::Format {
                field: "version",
                message: format!("unsupported version {version}, expected {STORE_VERSION}"),
            });
        }
        let count = u32::from_le_bytes(header[6..10].try_into().unwrap()) as usize;
        let block_size = u16::from_le_bytes([header[10], header[11]]) as usize;
        let qp = i16::from_le_bytes([header[12], header[13]]);
        let shuffle_seed = u64::from_le_bytes(header[14..22].try_into().unwrap());
        if count == 0 {
            return Err(Error::Format {
                field: "count",
                message: "store holds no samples".into(),
            });
        }
        if block_size == 0 {
            return Err(Error::Format {
                field: "block size",
                message: "block size is zero".into(),
            });
        }

        let mut payload = Vec::new();
        reader.read_to_end(&mut payload)?;
        let plane = block_size * block_size;
        let record = 3 * plane * 4;
        if payload.len() != count * record {
            return Err(Error::Format {
                field: "length",
                message: format!(
                    "{count} records need {} bytes, found {}",
                    count * record,
                    payload.len()
                ),
            });
        }
        let mut samples = Vec::with_capacity(count);
        for rec in payload.chunks_exact(record) {
            let mut planes = rec.chunks_exact(plane * 4).map(|bytes| {
                let data = bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect();
                Tensor::new(block_size, block_size, 1, data)
            });
            let colocated = planes.next().unwrap()?;
            let current = planes.next().unwrap()?;
            let target = planes.next().unwrap()?;
            samples.push(TrainingSample::new(colocated, current, target)?);
        }
        Ok(SampleStore {
            qp,
            shuffle_seed,
            block_size,
            samples,
        })
    }

    pub fn save_file(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(BufWriter::new(File::create(path)?))
    }

    pub fn load_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }
}

/// Deterministic test video: a smooth gradient, drifting sinusoidal texture
/// and a few moving discs, so consecutive frames are correlated.
pub fn synthetic_sequence(width: usize, height: usize, frames: usize, seed: u64) -> FrameSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fx = rng.random_range(0.05..0.25);
    let fy = rng.random_range(0.05..0.25);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let discs: Vec<(f64, f64, f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.random_range(0.0..width as f64),
                rng.random_range(0.0..height as f64),
                rng.random_range(4.0..(width.min(height) as f64 / 4.0).max(5.0)),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-90.0..90.0),
            )
        })
        .collect();

    let planes = (0..frames)
        .map(|t| {
            let t = t as f64;
            let mut data = Vec::with_capacity(width * height);
            for y in 0..height {
                for x in 0..width {
                    let (xf, yf) = (x as f64, y as f64);
                    let mut v = 60.0 + 100.0 * xf / width as f64 + 40.0 * yf / height as f64;
                    v += 25.0 * ((xf + 1.5 * t) * fx + phase).sin() * ((yf + 0.7 * t) * fy).cos();
                    for &(cx, cy, r, vx, vy, shade) in &discs {
                        let (dx, dy) = (xf - (cx + vx * t), yf - (cy + vy * t));
                        if dx * dx + dy * dy < r * r {
                            v += shade;
                        }
                    }
                    data.push(v.round().clamp(0.0, 255.0) as u8);
                }
            }
            LumaPlane::new(width, height, data).expect("sized plane")
        })
        .collect();
    FrameSequence::new(width, height, planes).expect("consistent frames")
}
