use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{ensure, Error, Result};

/// Axis-aligned rectangle in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub fn new(x: usize, y: usize, width: usize, height: usize) -> Self {
        Rect {
            x,
            y,
            width,
            height,
        }
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }
}

/// One 8-bit luma plane.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LumaPlane {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl LumaPlane {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        ensure!(width > 0 && height > 0, "plane dimensions must be positive");
        ensure!(
            data.len() == width * height,
            "{width}x{height} plane needs {} bytes, got {}",
            width * height,
            data.len()
        );
        Ok(LumaPlane {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        LumaPlane {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        self.data[y * self.width + x] = value;
    }

    pub fn contains(&self, rect: Rect) -> bool {
        rect.width > 0
            && rect.height > 0
            && rect.x + rect.width <= self.width
            && rect.y + rect.height <= self.height
    }

    /// Copies `rect` out in raster order.
    pub fn block(&self, rect: Rect) -> Result<Vec<u8>> {
        ensure!(
            self.contains(rect),
            "{rect:?} outside {}x{} plane",
            self.width,
            self.height
        );
        let mut out = Vec::with_capacity(rect.area());
        for y in rect.y..rect.y + rect.height {
            let start = y * self.width + rect.x;
            out.extend_from_slice(&self.data[start..start + rect.width]);
        }
        Ok(out)
    }

    pub fn write_block(&mut self, rect: Rect, block: &[u8]) -> Result<()> {
        ensure!(
            self.contains(rect),
            "{rect:?} outside {}x{} plane",
            self.width,
            self.height
        );
        ensure!(
            block.len() == rect.area(),
            "block has {} samples, {rect:?} needs {}",
            block.len(),
            rect.area()
        );
        for (row, src) in block.chunks_exact(rect.width).enumerate() {
            let start = (rect.y + row) * self.width + rect.x;
            self.data[start..start + rect.width].copy_from_slice(src);
        }
        Ok(())
    }
}

/// Luma frames of one sequence plus, per frame, the index of the frame it
/// predicts from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameSequence {
    width: usize,
    height: usize,
    frames: Vec<LumaPlane>,
    reference_index: Vec<Option<usize>>,
}

impl FrameSequence {
    /// Each frame references the one before it; frame 0 has no reference.
    pub fn new(width: usize, height: usize, frames: Vec<LumaPlane>) -> Result<Self> {
        let refs = (0..frames.len()).map(|i| i.checked_sub(1)).collect();
        Self::with_references(width, height, frames, refs)
    }

    pub fn with_references(
        width: usize,
        height: usize,
        frames: Vec<LumaPlane>,
        reference_index: Vec<Option<usize>>,
    ) -> Result<Self> {
        ensure!(width > 0 && height > 0, "frame dimensions must be positive");
        for (i, f) in frames.iter().enumerate() {
            ensure!(
                f.width() == width && f.height() == height,
                "frame {i} is {}x{}, sequence is {width}x{height}",
                f.width(),
                f.height()
            );
        }
        validate_references(&reference_index, frames.len())?;
        Ok(FrameSequence {
            width,
            height,
            frames,
            reference_index,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[LumaPlane] {
        &self.frames
    }

    pub fn frame(&self, index: usize) -> &LumaPlane {
        &self.frames[index]
    }

    pub fn frame_mut(&mut self, index: usize) -> &mut LumaPlane {
        &mut self.frames[index]
    }

    pub fn reference_index(&self) -> &[Option<usize>] {
        &self.reference_index
    }

    pub fn reference(&self, index: usize) -> Option<usize> {
        self.reference_index[index]
    }

    pub fn set_references(&mut self, reference_index: Vec<Option<usize>>) -> Result<()> {
        validate_references(&reference_index, self.frames.len())?;
        self.reference_index = reference_index;
        Ok(())
    }

    /// Same frames and reference map with every plane replaced by `f(index, plane)`.
    pub fn map_frames(&self, mut f: impl FnMut(usize, &LumaPlane) -> LumaPlane) -> Self {
        FrameSequence {
            width: self.width,
            height: self.height,
            frames: self
                .frames
                .iter()
                .enumerate()
                .map(|(i, p)| f(i, p))
                .collect(),
            reference_index: self.reference_index.clone(),
        }
    }

    /// Frames `range`, re-indexed from zero. References that fall outside the
    /// range are dropped.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        ensure!(
            range.start <= range.end && range.end <= self.len(),
            "frame range {range:?} outside sequence of {} frames",
            self.len()
        );
        let refs = range
            .clone()
            .map(|i| {
                self.reference_index[i]
                    .filter(|&r| r >= range.start)
                    .map(|r| r - range.start)
            })
            .collect();
        Self::with_references(self.width, self.height, self.frames[range].to_vec(), refs)
    }

    /// Fails unless `other` has the same dimensions and frame count.
    pub fn check_aligned(&self, other: &FrameSequence) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::Alignment(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        if self.len() != other.len() {
            return Err(Error::Alignment(format!(
                "{} frames vs {} frames",
                self.len(),
                other.len()
            )));
        }
        Ok(())
    }
}

fn validate_references(refs: &[Option<usize>], frames: usize) -> Result<()> {
    ensure!(
        refs.len() == frames,
        "reference map has {} entries for {frames} frames",
        refs.len()
    );
    for (i, r) in refs.iter().enumerate() {
        if let Some(r) = r {
            ensure!(*r < i, "frame {i} cannot reference frame {r}");
        }
    }
    Ok(())
}

/// Bytes per chroma plane of an 8-bit 4:2:0 frame.
pub fn chroma_plane_len(width: usize, height: usize) -> usize {
    width.div_ceil(2) * height.div_ceil(2)
}

/// Bytes per 8-bit 4:2:0 planar frame.
pub fn yuv420_frame_len(width: usize, height: usize) -> usize {
    width * height + 2 * chroma_plane_len(width, height)
}

/// Raw 4:2:0 video: luma as a [`FrameSequence`], chroma kept as opaque bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Yuv420Video {
    pub luma: FrameSequence,
    /// U then V plane of each frame.
    pub chroma: Vec<Vec<u8>>,
}

pub fn read_yuv420(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
    frame_count: usize,
) -> Result<Yuv420Video> {
    let path = path.as_ref();
    ensure!(width > 0 && height > 0, "frame dimensions must be positive");
    let frame_len = yuv420_frame_len(width, height);
    let expected = (frame_len * frame_count) as u64;
    let actual = std::fs::metadata(path)?.len();
    if actual < expected {
        return Err(Error::Truncated {
            what: path.display().to_string(),
            expected,
            actual,
        });
    }
    let mut reader = BufReader::new(File::open(path)?);
    let mut frames = Vec::with_capacity(frame_count);
    let mut chroma = Vec::with_capacity(frame_count);
    let luma_len = width * height;
    for _ in 0..frame_count {
        let mut buf = vec![0u8; frame_len];
        reader.read_exact(&mut buf)?;
        let uv = buf.split_off(luma_len);
        frames.push(LumaPlane::new(width, height, buf)?);
        chroma.push(uv);
    }
    Ok(Yuv420Video {
        luma: FrameSequence::new(width, height, frames)?,
        chroma,
    })
}

/// Luma planes of the first `frame_count` frames; chroma is skipped.
pub fn load_yuv(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
    frame_count: usize,
) -> Result<FrameSequence> {
    read_yuv420(path, width, height, frame_count).map(|v| v.luma)
}

/// Writes planar 4:2:0. Without `chroma`, both chroma planes are mid-grey.
pub fn write_yuv420(
    path: impl AsRef<Path>,
    luma: &FrameSequence,
    chroma: Option<&[Vec<u8>]>,
) -> Result<()> {
    let uv_len = 2 * chroma_plane_len(luma.width(), luma.height());
    if let Some(chroma) = chroma {
        ensure!(
            chroma.len() == luma.len(),
            "{} chroma frames for {} luma frames",
            chroma.len(),
            luma.len()
        );
        ensure!(
            chroma.iter().all(|c| c.len() == uv_len),
            "chroma frames must hold {uv_len} bytes"
        );
    }
    let grey = vec![128u8; uv_len];
    let mut writer = BufWriter::new(File::create(path)?);
    for (i, frame) in luma.frames().iter().enumerate() {
        writer.write_all(frame.data())?;
        writer.write_all(chroma.map_or(&grey, |c| &c[i]))?;
    }
    writer.flush()?;
    Ok(())
}

/// Parses a reference-index file: one integer per line, `-1` for none.
pub fn read_reference_file(
    path: impl AsRef<Path>,
    frame_count: usize,
) -> Result<Vec<Option<usize>>> {
    let reader = BufReader::new(File::open(path)?);
    let mut refs = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let value: i64 = line.parse().map_err(|_| Error::Format {
            field: "reference index",
            message: format!("line {}: {line:?} is not an integer", lineno + 1),
        })?;
        refs.push(match value {
            -1 => None,
            v if v >= 0 => Some(v as usize),
            v => {
                return Err(Error::Format {
                    field: "reference index",
                    message: format!("line {}: {v} is negative", lineno + 1),
                })
            }
        });
    }
    if refs.len() != frame_count {
        return Err(Error::Format {
            field: "reference index",
            message: format!("{} entries for {frame_count} frames", refs.len()),
        });
    }
    validate_references(&refs, frame_count)?;
    Ok(refs)
}
