//! Objective quality and cost measures.

use std::path::Path;

use crate::dataset::LumaPlane;
use crate::error::{ensure, Error, Result};

/// Peak sample value for 8-bit video.
pub const PEAK: f64 = 255.0;

pub fn mse_bytes(a: &[u8], b: &[u8]) -> Result<f64> {
    ensure!(
        a.len() == b.len(),
        "cannot compare {} samples with {}",
        a.len(),
        b.len()
    );
    ensure!(!a.is_empty(), "cannot compare empty blocks");
    let sum: u64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as i64 - y as i64;
            (d * d) as u64
        })
        .sum();
    Ok(sum as f64 / a.len() as f64)
}

pub fn mse(a: &LumaPlane, b: &LumaPlane) -> Result<f64> {
    ensure!(
        a.width() == b.width() && a.height() == b.height(),
        "cannot compare {}x{} with {}x{}",
        a.width(),
        a.height(),
        b.width(),
        b.height()
    );
    mse_bytes(a.data(), b.data())
}

/// `10·log10(255²/mse)`; `f64::INFINITY` when `mse == 0`.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (PEAK * PEAK / mse).log10()
    }
}

pub fn psnr(a: &LumaPlane, b: &LumaPlane) -> Result<f64> {
    mse(a, b).map(psnr_from_mse)
}

/// One point of a rate-distortion curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdPoint {
    pub rate: f64,
    pub psnr: f64,
}

impl RdPoint {
    pub fn new(rate: f64, psnr: f64) -> Self {
        RdPoint { rate, psnr }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BdRate {
    /// Average rate difference of test vs anchor, in percent. Negative is a saving.
    pub percent: f64,
    /// Mean difference of `log10(rate)` over the shared PSNR interval.
    pub log_delta: f64,
    pub psnr_low: f64,
    pub psnr_high: f64,
    /// Some curve had rate not increasing with PSNR.
    pub non_monotone: bool,
}

/// Bjontegaard delta-rate between two curves, in percent.
pub fn bd_rate(anchor: &[RdPoint], test: &[RdPoint]) -> Result<f64> {
    bd_rate_detailed(anchor, test).map(|r| r.percent)
}

/// Fits a cubic to `log10(rate)` as a function of PSNR for each curve,
/// integrates both over the common PSNR interval in closed form and converts
/// the mean log difference to a percentage.
pub fn bd_rate_detailed(anchor: &[RdPoint], test: &[RdPoint]) -> Result<BdRate> {
    let anchor_monotone = validate_curve(anchor)?;
    let test_monotone = validate_curve(test)?;
    let range = |pts: &[RdPoint]| {
        pts.iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p.psnr), hi.max(p.psnr))
            })
    };
    let (a_lo, a_hi) = range(anchor);
    let (t_lo, t_hi) = range(test);
    let (lo, hi) = (a_lo.max(t_lo), a_hi.min(t_hi));
    if lo >= hi {
        return Err(Error::Domain(format!(
            "PSNR ranges [{a_lo}, {a_hi}] and [{t_lo}, {t_hi}] do not overlap"
        )));
    }
    let non_monotone = !(anchor_monotone && test_monotone);
    if non_monotone {
        log::warn!("rate does not increase with PSNR on every curve; BD-rate may be unreliable");
    }

    // Fit in PSNR coordinates centred on the shared interval for conditioning.
    let centre = 0.5 * (lo + hi);
    let anchor_poly = fit_cubic(anchor, centre)?;
    let test_poly = fit_cubic(test, centre)?;
    let (x0, x1) = (lo - centre, hi - centre);
    let area = |c: &[f64; 4]| integrate_cubic(c, x1) - integrate_cubic(c, x0);
    let log_delta = (area(&test_poly) - area(&anchor_poly)) / (hi - lo);
    Ok(BdRate {
        percent: 100.0 * (10f64.powf(log_delta) - 1.0),
        log_delta,
        psnr_low: lo,
        psnr_high: hi,
        non_monotone,
    })
}

/// Checks arity and distinctness; returns whether rate increases with PSNR.
fn validate_curve(points: &[RdPoint]) -> Result<bool> {
    if points.len() < 4 {
        return Err(Error::Arity {
            required: 4,
            actual: points.len(),
        });
    }
    for p in points {
        ensure!(
            p.rate > 0.0 && p.rate.is_finite(),
            "rate {} must be positive and finite",
            p.rate
        );
        ensure!(p.psnr.is_finite(), "PSNR {} must be finite", p.psnr);
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.psnr.total_cmp(&b.psnr));
    for w in sorted.windows(2) {
        ensure!(w[0].psnr != w[1].psnr, "duplicate PSNR {}", w[0].psnr);
    }
    Ok(sorted.windows(2).all(|w| w[0].rate < w[1].rate))
}

/// Least-squares cubic `c0 + c1·x + c2·x² + c3·x³` through `(psnr − centre,
/// log10(rate))`, via the normal equations.
fn fit_cubic(points: &[RdPoint], centre: f64) -> Result<[f64; 4]> {
    let mut ata = [[0.0; 4]; 4];
    let mut atb = [0.0; 4];
    for p in points {
        let x = p.psnr - centre;
        let y = p.rate.log10();
        let powers = [1.0, x, x * x, x * x * x];
        for i in 0..4 {
            for j in 0..4 {
                ata[i][j] += powers[i] * powers[j];
            }
            atb[i] += powers[i] * y;
        }
    }
    solve4(ata, atb)
}

/// Gaussian elimination with partial pivoting.
#[allow(clippy::needless_range_loop)]
fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Result<[f64; 4]> {
    for col in 0..4 {
        let pivot = (col..4)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot][col].abs() < 1e-300 {
            return Err(Error::Domain("singular cubic fit".into()));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let tail: f64 = (row + 1..4).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Ok(x)
}

/// Antiderivative of the cubic at `x`.
fn integrate_cubic(c: &[f64; 4], x: f64) -> f64 {
    x * (c[0] + x * (c[1] / 2.0 + x * (c[2] / 3.0 + x * c[3] / 4.0)))
}

/// Parses `rate,psnr` lines. Blank lines, `#` comments and a non-numeric
/// header line are skipped.
pub fn parse_rd_csv(text: &str) -> Result<Vec<RdPoint>> {
    let mut points = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed = match fields.as_slice() {
            [rate, psnr] => rate.parse::<f64>().ok().zip(psnr.parse::<f64>().ok()),
            _ => None,
        };
        match parsed {
            Some((rate, psnr)) => points.push(RdPoint::new(rate, psnr)),
            None if points.is_empty() && lineno == 0 => continue,
            None => {
                return Err(Error::Format {
                    field: "rd point",
                    message: format!("line {}: expected `rate,psnr`, got {line:?}", lineno + 1),
                })
            }
        }
    }
    Ok(points)
}

pub fn read_rd_csv(path: impl AsRef<Path>) -> Result<Vec<RdPoint>> {
    parse_rd_csv(&std::fs::read_to_string(path)?)
}

/// Run times of the unmodified and the modified system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingPair {
    pub baseline_seconds: f64,
    pub modified_seconds: f64,
}

impl TimingPair {
    pub fn new(baseline_seconds: f64, modified_seconds: f64) -> Self {
        TimingPair {
            baseline_seconds,
            modified_seconds,
        }
    }

    fn check(&self) -> Result<()> {
        ensure!(
            self.baseline_seconds > 0.0 && self.baseline_seconds.is_finite(),
            "baseline time {} must be positive",
            self.baseline_seconds
        );
        ensure!(
            self.modified_seconds > 0.0 && self.modified_seconds.is_finite(),
            "modified time {} must be positive",
            self.modified_seconds
        );
        Ok(())
    }
}

/// Relative time increase `(T' − T) / T`.
pub fn timing_ratio(t: TimingPair) -> Result<f64> {
    t.check()?;
    Ok((t.modified_seconds - t.baseline_seconds) / t.baseline_seconds)
}

/// Plain ratio `T' / T`.
pub fn relative_time(t: TimingPair) -> Result<f64> {
    t.check()?;
    Ok(t.modified_seconds / t.baseline_seconds)
}

/// Both timing figures as printed by the command-line tool.
pub fn timing_report(t: TimingPair) -> Result<String> {
    Ok(format!(
        "increment {:.1}%, ratio {:.1}%",
        100.0 * timing_ratio(t)?,
        100.0 * relative_time(t)?
    ))
}
