//! Stand-in codec: 8×8 orthonormal DCT-II, uniform scalar quantization of
//! every coefficient, inverse DCT. Produces the blocking and ringing a real
//! encoder leaves behind, deterministically.

use std::f64::consts::PI;

use super::frames::{FrameSequence, LumaPlane};

const N: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegradeSpec {
    /// Uniform quantizer step applied to all DCT coefficients.
    pub step: f64,
}

impl DegradeSpec {
    pub fn with_step(step: f64) -> Self {
        assert!(
            step > 0.0 && step.is_finite(),
            "quantizer step must be positive"
        );
        DegradeSpec { step }
    }

    /// HEVC-style step size: doubles every 6 QP, 1.0 at QP 4.
    pub fn from_qp(qp: i32) -> Self {
        Self::with_step(2f64.powf((qp - 4) as f64 / 6.0))
    }
}

fn dct_matrix() -> [[f64; N]; N] {
    let mut m = [[0.0; N]; N];
    for (u, row) in m.iter_mut().enumerate() {
        let scale = if u == 0 {
            (1.0 / N as f64).sqrt()
        } else {
            (2.0 / N as f64).sqrt()
        };
        for (x, v) in row.iter_mut().enumerate() {
            *v = scale * (((2 * x + 1) * u) as f64 * PI / (2 * N) as f64).cos();
        }
    }
    m
}

/// Quantizes one frame. Partial blocks at the right/bottom edge are
/// extended by edge replication and only their in-frame part is written.
#[allow(clippy::needless_range_loop)]
pub fn degrade_frame(frame: &LumaPlane, spec: DegradeSpec) -> LumaPlane {
    let basis = dct_matrix();
    let (w, h) = (frame.width(), frame.height());
    let mut out = frame.clone();
    let mut block = [[0.0f64; N]; N];
    let mut tmp = [[0.0f64; N]; N];

    for by in (0..h).step_by(N) {
        for bx in (0..w).step_by(N) {
            for (y, row) in block.iter_mut().enumerate() {
                for (x, v) in row.iter_mut().enumerate() {
                    *v = frame.get((bx + x).min(w - 1), (by + y).min(h - 1)) as f64;
                }
            }
            // coeffs = B · X · Bᵀ
            for u in 0..N {
                for x in 0..N {
                    tmp[u][x] = (0..N).map(|y| basis[u][y] * block[y][x]).sum();
                }
            }
            for u in 0..N {
                for v in 0..N {
                    let c: f64 = (0..N).map(|x| tmp[u][x] * basis[v][x]).sum();
                    block[u][v] = (c / spec.step).round() * spec.step;
                }
            }
            // X = Bᵀ · coeffs · B
            for y in 0..N {
                for v in 0..N {
                    tmp[y][v] = (0..N).map(|u| basis[u][y] * block[u][v]).sum();
                }
            }
            for y in 0..N.min(h - by) {
                for x in 0..N.min(w - bx) {
                    let value: f64 = (0..N).map(|v| tmp[y][v] * basis[v][x]).sum();
                    out.set(bx + x, by + y, value.round().clamp(0.0, 255.0) as u8);
                }
            }
        }
    }
    out
}

/// Degrades every frame; the reference map is kept.
pub fn degrade(pristine: &FrameSequence, spec: DegradeSpec) -> FrameSequence {
    pristine.map_frames(|_, frame| degrade_frame(frame, spec))
}
