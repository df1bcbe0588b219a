//! CTU-level filtering with distortion-gated on/off flags.
//!
//! Each 64×64 coding tree unit of a frame that has a reference is run through
//! the network together with the co-located rectangle of its reference frame.
//! Rate is identical with and without the filter, so the rate-distortion
//! comparison reduces to comparing the two distortions: the flag is set iff
//! the filtered CTU has strictly lower MSE against the original.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::dataset::{FrameSequence, LumaPlane, Rect};
use crate::error::{ensure, Error, Result};
use crate::metrics::mse_bytes;
use crate::model::{denormalize, forward, normalize, StresNetWeights};
use crate::tensor::Tensor;

pub const CTU_SIZE: usize = 64;

/// Partition of a frame into CTUs, edge CTUs included.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CtuGrid {
    pub width: usize,
    pub height: usize,
    pub ctu_size: usize,
    pub rows: usize,
    pub cols: usize,
}

impl CtuGrid {
    pub fn new(width: usize, height: usize) -> Self {
        Self::with_ctu_size(width, height, CTU_SIZE)
    }

    pub fn with_ctu_size(width: usize, height: usize, ctu_size: usize) -> Self {
        assert!(ctu_size > 0);
        CtuGrid {
            width,
            height,
            ctu_size,
            rows: height.div_ceil(ctu_size),
            cols: width.div_ceil(ctu_size),
        }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rect(&self, row: usize, col: usize) -> Rect {
        let x = col * self.ctu_size;
        let y = row * self.ctu_size;
        Rect::new(
            x,
            y,
            self.ctu_size.min(self.width - x),
            self.ctu_size.min(self.height - y),
        )
    }

    /// `(row, col, rect)` in raster order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, Rect)> + '_ {
        (0..self.rows).flat_map(move |r| (0..self.cols).map(move |c| (r, c, self.rect(r, c))))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterMode {
    /// Reconstructed (flag-applied) frames serve as references.
    InLoop,
    /// The degraded frames serve as references.
    OutOfLoop,
}

impl std::str::FromStr for FilterMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "in_loop" | "in-loop" => Ok(FilterMode::InLoop),
            "out_of_loop" | "out-of-loop" => Ok(FilterMode::OutOfLoop),
            other => Err(Error::Config(format!(
                "unknown filter mode {other:?}; expected in_loop or out_of_loop"
            ))),
        }
    }
}

impl std::fmt::Display for FilterMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FilterMode::InLoop => "in_loop",
            FilterMode::OutOfLoop => "out_of_loop",
        })
    }
}

fn block_tensor(plane: &LumaPlane, rect: Rect) -> Result<Tensor> {
    let bytes = plane.block(rect)?;
    Tensor::new(
        rect.height,
        rect.width,
        1,
        bytes.into_iter().map(normalize).collect(),
    )
}

/// Runs the network on one CTU and its co-located reference rectangle.
/// Zero padding is confined to the CTU. Returns raster-order bytes.
pub fn filter_ctu(
    weights: &StresNetWeights,
    degraded: &LumaPlane,
    reference: &LumaPlane,
    rect: Rect,
) -> Result<Vec<u8>> {
    ensure!(
        degraded.width() == reference.width() && degraded.height() == reference.height(),
        "reference frame {}x{} differs from current {}x{}",
        reference.width(),
        reference.height(),
        degraded.width(),
        degraded.height()
    );
    let current = block_tensor(degraded, rect)?;
    let colocated = block_tensor(reference, rect)?;
    let restored = forward(weights, &current, &colocated)?;
    Ok(restored.data().iter().map(|&v| denormalize(v)).collect())
}

/// Distortions with and without the filter and the resulting flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdDecision {
    /// MSE of the unfiltered CTU against the original.
    pub d1: f64,
    /// MSE of the filtered CTU against the original.
    pub d2: f64,
    pub flag: bool,
}

/// Enables the filter iff it strictly lowers the MSE; ties keep it off.
pub fn decide_flag(original: &[u8], degraded: &[u8], filtered: &[u8]) -> Result<RdDecision> {
    ensure!(
        original.len() == degraded.len() && original.len() == filtered.len(),
        "CTU blocks differ in size: {}, {}, {}",
        original.len(),
        degraded.len(),
        filtered.len()
    );
    let d1 = mse_bytes(degraded, original)?;
    let d2 = mse_bytes(filtered, original)?;
    Ok(RdDecision {
        d1,
        d2,
        flag: d2 < d1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CtuDecision {
    pub frame: usize,
    pub ctu_row: usize,
    pub ctu_col: usize,
    pub decision: RdDecision,
}

/// Per-CTU distortions for every filtered frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RdDecisionTrace {
    pub entries: Vec<CtuDecision>,
}

impl RdDecisionTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame,ctu_row,ctu_col,d1,d2,flag\n");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                e.frame,
                e.ctu_row,
                e.ctu_col,
                e.decision.d1,
                e.decision.d2,
                u8::from(e.decision.flag)
            );
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Format {
            field: "trace",
            message: format!("line {line}: {msg}"),
        };
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad(i + 1, "expected 6 columns"));
            }
            let int = |s: &str| s.parse::<usize>().map_err(|_| bad(i + 1, "bad integer"));
            let real = |s: &str| s.parse::<f64>().map_err(|_| bad(i + 1, "bad number"));
            let flag = match f[5] {
                "0" => false,
                "1" => true,
                _ => return Err(bad(i + 1, "flag must be 0 or 1")),
            };
            entries.push(CtuDecision {
                frame: int(f[0])?,
                ctu_row: int(f[1])?,
                ctu_col: int(f[2])?,
                decision: RdDecision {
                    d1: real(f[3])?,
                    d2: real(f[4])?,
                    flag,
                },
            });
        }
        Ok(RdDecisionTrace { entries })
    }

    /// Entries whose recorded flag disagrees with `d2 < d1`.
    pub fn unsound_entries(&self) -> Vec<&CtuDecision> {
        self.entries
            .iter()
            .filter(|e| e.decision.flag != (e.decision.d2 < e.decision.d1))
            .collect()
    }
}

/// Raster-order CTU flags for each frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CtuFlagMap {
    pub grid: CtuGrid,
    pub frames: Vec<Vec<bool>>,
}

impl CtuFlagMap {
    pub fn new(grid: CtuGrid, frame_count: usize) -> Self {
        CtuFlagMap {
            grid,
            frames: vec![vec![false; grid.len()]; frame_count],
        }
    }

    pub fn enabled_count(&self) -> usize {
        self.frames.iter().flatten().filter(|&&f| f).count()
    }

    /// One line per frame: index, space, then one `0`/`1` per CTU.
    pub fn to_sidecar(&self) -> String {
        let mut out = String::new();
        for (i, flags) in self.frames.iter().enumerate() {
            let bits: String = flags.iter().map(|&f| if f { '1' } else { '0' }).collect();
            let _ = writeln!(out, "{i} {bits}");
        }
        out
    }

    pub fn parse_sidecar(text: &str, grid: CtuGrid) -> Result<Self> {
        let mut frames = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: String| Error::Format {
                field: "flags",
                message: format!("line {}: {msg}", lineno + 1),
            };
            let (index, bits) = line
                .split_once(' ')
                .ok_or_else(|| bad("expected `<frame> <bits>`".into()))?;
            let index: usize = index
                .parse()
                .map_err(|_| bad(format!("bad frame index {index:?}")))?;
            if index != frames.len() {
                return Err(bad(format!(
                    "expected frame {}, found {index}",
                    frames.len()
                )));
            }
            let flags = bits
                .trim_end()
                .chars()
                .map(|c| match c {
                    '0' => Ok(false),
                    '1' => Ok(true),
                    other => Err(bad(format!("invalid flag character {other:?}"))),
                })
                .collect::<Result<Vec<_>>>()?;
            if flags.len() != grid.len() {
                return Err(bad(format!(
                    "{} flags for {} CTUs",
                    flags.len(),
                    grid.len()
                )));
            }
            frames.push(flags);
        }
        Ok(CtuFlagMap { grid, frames })
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(fs::write(path, self.to_sidecar())?)
    }

    pub fn read_file(path: impl AsRef<Path>, grid: CtuGrid) -> Result<Self> {
        Self::parse_sidecar(&fs::read_to_string(path)?, grid)
    }
}

/// Replaces every flagged CTU of `degraded` with its filtered block.
/// `filtered_blocks` is indexed in raster CTU order; blocks of unflagged CTUs
/// are ignored and may be empty.
pub fn apply_flags(
    degraded: &LumaPlane,
    filtered_blocks: &[Vec<u8>],
    flags: &[bool],
) -> Result<LumaPlane> {
    let grid = CtuGrid::new(degraded.width(), degraded.height());
    if flags.len() != grid.len() || filtered_blocks.len() != grid.len() {
        return Err(Error::Format {
            field: "flags",
            message: format!(
                "{} flags and {} blocks for a {}-CTU frame",
                flags.len(),
                filtered_blocks.len(),
                grid.len()
            ),
        });
    }
    let mut out = degraded.clone();
    for ((_, _, rect), (block, &flag)) in grid.iter().zip(filtered_blocks.iter().zip(flags)) {
        if flag {
            out.write_block(rect, block)?;
        }
    }
    Ok(out)
}

/// Everything the encoder-side pipeline produces.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub filtered: FrameSequence,
    pub flags: CtuFlagMap,
    pub trace: RdDecisionTrace,
}

/// Filters one frame against its reference and decides each CTU's flag.
pub fn filter_frame(
    weights: &StresNetWeights,
    degraded: &LumaPlane,
    reference: &LumaPlane,
    original: &LumaPlane,
) -> Result<(LumaPlane, Vec<bool>, Vec<RdDecision>)> {
    let grid = CtuGrid::new(degraded.width(), degraded.height());
    let rects: Vec<Rect> = grid.iter().map(|(_, _, r)| r).collect();
    let per_ctu = rects
        .par_iter()
        .map(|&rect| {
            let filtered = filter_ctu(weights, degraded, reference, rect)?;
            let decision = decide_flag(&original.block(rect)?, &degraded.block(rect)?, &filtered)?;
            Ok((filtered, decision))
        })
        .collect::<Result<Vec<_>>>()?;
    let (blocks, decisions): (Vec<_>, Vec<_>) = per_ctu.into_iter().unzip();
    let flags: Vec<bool> = decisions.iter().map(|d| d.flag).collect();
    let reconstructed = apply_flags(degraded, &blocks, &flags)?;
    Ok((reconstructed, flags, decisions))
}

/// Encoder side: filters every frame that has a reference, choosing flags
/// against `original`. Frames without a reference pass through with all
/// flags off and no trace entries.
pub fn filter_sequence(
    weights: &StresNetWeights,
    degraded: &FrameSequence,
    original: &FrameSequence,
    mode: FilterMode,
) -> Result<FilterOutcome> {
    degraded.check_aligned(original)?;
    let grid = CtuGrid::new(degraded.width(), degraded.height());
    let mut flags = CtuFlagMap::new(grid, degraded.len());
    let mut trace = RdDecisionTrace::default();
    let mut output = degraded.clone();

    for i in 0..degraded.len() {
        let Some(r) = degraded.reference(i) else {
            continue;
        };
        let reference = match mode {
            FilterMode::InLoop => output.frame(r),
            FilterMode::OutOfLoop => degraded.frame(r),
        };
        let (frame, frame_flags, decisions) =
            filter_frame(weights, degraded.frame(i), reference, original.frame(i))?;
        for ((row, col, _), decision) in grid.iter().zip(decisions) {
            trace.entries.push(CtuDecision {
                frame: i,
                ctu_row: row,
                ctu_col: col,
                decision,
            });
        }
        *output.frame_mut(i) = frame;
        flags.frames[i] = frame_flags;
    }
    Ok(FilterOutcome {
        filtered: output,
        flags,
        trace,
    })
}

/// Decoder side: rebuilds the filtered sequence from the degraded frames
/// and signalled flags alone, running the network only on flagged CTUs.
pub fn replay_sequence(
    weights: &StresNetWeights,
    degraded: &FrameSequence,
    flags: &CtuFlagMap,
    mode: FilterMode,
) -> Result<FrameSequence> {
    let grid = CtuGrid::new(degraded.width(), degraded.height());
    if flags.grid != grid || flags.frames.len() != degraded.len() {
        return Err(Error::Format {
            field: "flags",
            message: format!(
                "flag map covers {} frames of {}x{} CTUs, sequence has {} frames of {}x{}",
                flags.frames.len(),
                flags.grid.cols,
                flags.grid.rows,
                degraded.len(),
                grid.cols,
                grid.rows
            ),
        });
    }
    let mut output = degraded.clone();
    for i in 0..degraded.len() {
        let frame_flags = &flags.frames[i];
        let Some(r) = degraded.reference(i) else {
            if frame_flags.iter().any(|&f| f) {
                return Err(Error::Format {
                    field: "flags",
                    message: format!("frame {i} has no reference but has enabled flags"),
                });
            }
            continue;
        };
        let reference = match mode {
            FilterMode::InLoop => output.frame(r),
            FilterMode::OutOfLoop => degraded.frame(r),
        };
        let blocks = grid
            .iter()
            .zip(frame_flags)
            .collect::<Vec<_>>()
            .par_iter()
            .map(|&((_, _, rect), &flag)| {
                if flag {
                    filter_ctu(weights, degraded.frame(i), reference, rect)
                } else {
                    Ok(Vec::new())
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let frame = apply_flags(degraded.frame(i), &blocks, frame_flags)?;
        *output.frame_mut(i) = frame;
    }
    Ok(output)
}
