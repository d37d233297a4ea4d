//! Eccentricity undistortion: find the capillary border in a polar slice,
//! fit its one-period sinusoid, and shift every column back into the
//! capillary frame.
//!
//! The probe offset makes the glass border row a sinusoid in the column
//! index, `row(u) = d + a*sin(omega*u + phi)` with one period per
//! rotation. [`binarize_border`] turns a slice into border candidate
//! points, [`fit_sine`] recovers the model robustly, and [`unwarp`]
//! applies the inverse per-column shift.

mod enhance;
mod fit;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::Image;
use crate::phantom::BScanPolar;

pub use enhance::{clahe, enhance, wavelet_denoise, EnhanceParams};
pub use fit::{fit_sine, RansacParams};

#[derive(Debug, Error)]
pub enum UndistortError {
    #[error("invalid parameter: {0}")]
    Config(String),
}

/// Errors from the robust sinusoid fit.
#[derive(Debug, Error)]
pub enum FitError {
    #[error("need at least 4 border points, found {found}")]
    InsufficientData { found: usize },

    #[error("border points span fewer than 3 distinct columns")]
    Degenerate,

    #[error("column span must be at least 2, got {0}")]
    BadSpan(usize),

    #[error("invalid fit parameter: {0}")]
    Config(String),

    /// The consensus never reached `min_inlier_fraction`. The best-effort
    /// model travels along so callers can inspect or override.
    #[error("best model explains only {:.3} of the points (minimum {required:.3})", report.inlier_fraction)]
    Rejected { required: f64, report: Box<FitReport> },
}

/// Border sinusoid in slice units: depth rows over angle columns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SineModel {
    /// Amplitude in rows; the eccentricity over the depth resolution.
    pub a: f64,
    /// Angular frequency per column; one period per rotation.
    pub omega: f64,
    /// Phase in [-pi, pi).
    pub phi: f64,
    /// Mean border row; the capillary outer radius over the depth resolution.
    pub d: f64,
}

impl SineModel {
    pub fn eval(&self, x: f64) -> f64 {
        self.a * (self.omega * x + self.phi).sin() + self.d
    }
}

/// Diagnostics of one sinusoid fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: SineModel,
    /// Fraction of input points within the inlier tolerance of the model.
    pub inlier_fraction: f64,
    /// RMS residual over the inliers, in rows.
    pub residual_rms: f64,
    pub iterations_used: u32,
    pub point_count: usize,
}

/// A per-slice fit outcome as consumed by volume assembly: the report plus
/// whether the slice passed acceptance (rejected slices can be force-used
/// with an explicit override).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceFit {
    pub report: FitReport,
    pub accepted: bool,
}

/// Controls for [`binarize_border`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BinarizeParams {
    /// Odd side length of the local-mean window.
    pub window: usize,
    /// A pixel is foreground when it exceeds its local mean by this many
    /// intensity counts.
    pub offset: f64,
    /// Depth-row band `[lo, hi)` to search. `None` searches everywhere,
    /// which can lock onto deeper structure; callers that know the
    /// geometry should always pass the band around the expected border.
    pub band: Option<(u32, u32)>,
    /// Runs shorter than this are noise unless nothing longer exists.
    pub min_run: usize,
}

impl Default for BinarizeParams {
    fn default() -> Self {
        Self { window: 31, offset: 1285.0, band: None, min_run: 2 }
    }
}

fn integral_image(img: &Image<u16>) -> Vec<u64> {
    let (w, h) = (img.width(), img.height());
    let mut acc = vec![0u64; (w + 1) * (h + 1)];
    for y in 0..h {
        let row = img.row(y);
        let mut run = 0u64;
        for x in 0..w {
            run += u64::from(row[x]);
            acc[(y + 1) * (w + 1) + (x + 1)] = acc[y * (w + 1) + (x + 1)] + run;
        }
    }
    acc
}

/// Sum over the clamped window centered at `(x, y)` with half-width `r`,
/// and the pixel count of that window.
fn window_sum(acc: &[u64], w: usize, h: usize, x: usize, y: usize, r: usize) -> (u64, u64) {
    let x0 = x.saturating_sub(r);
    let y0 = y.saturating_sub(r);
    let x1 = (x + r + 1).min(w);
    let y1 = (y + r + 1).min(h);
    let stride = w + 1;
    let sum = acc[y1 * stride + x1] + acc[y0 * stride + x0]
        - acc[y0 * stride + x1]
        - acc[y1 * stride + x0];
    (sum, ((x1 - x0) * (y1 - y0)) as u64)
}

/// Find border candidate points: one `(column, depth row)` pair per column
/// that shows a strong interface inside the search band.
///
/// Foreground is everything exceeding its local mean by `offset`. Within a
/// column the bottom-most foreground run of at least `min_run` pixels wins;
/// that convention selects the outer glass interface when both capillary
/// faces binarize, because the outer face always sits deeper. Columns with
/// no foreground contribute nothing.
pub fn binarize_border(
    slice: &BScanPolar,
    params: &BinarizeParams,
) -> Result<Vec<(u32, u32)>, UndistortError> {
    if params.window < 3 || params.window % 2 == 0 {
        return Err(UndistortError::Config(format!(
            "window must be odd and at least 3, got {}",
            params.window
        )));
    }
    if params.min_run == 0 {
        return Err(UndistortError::Config("min_run must be at least 1".into()));
    }
    let img = slice.image();
    let (w, h) = (img.width(), img.height());
    let (lo, hi) = match params.band {
        Some((lo, hi)) => {
            if lo >= hi {
                return Err(UndistortError::Config(format!("band ({lo}, {hi}) is empty")));
            }
            (lo as usize, (hi as usize).min(w))
        }
        None => (0, w),
    };
    if lo >= w {
        return Err(UndistortError::Config(format!(
            "band starts at row {lo} but slices only have {w} depth rows"
        )));
    }

    let acc = integral_image(img);
    let r = params.window / 2;
    let mut points = Vec::with_capacity(h);
    let mut flags = vec![false; hi - lo];

    for u in 0..h {
        let row = img.row(u);
        for v in lo..hi {
            let (sum, count) = window_sum(&acc, w, h, v, u, r);
            let mean = sum as f64 / count as f64;
            flags[v - lo] = f64::from(row[v]) > mean + params.offset;
        }

        // Collect foreground runs along depth within the band.
        let mut runs: Vec<(usize, usize)> = Vec::new();
        let mut start = None;
        for (i, &f) in flags.iter().enumerate() {
            match (f, start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    runs.push((s, i));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            runs.push((s, flags.len()));
        }
        if runs.is_empty() {
            continue;
        }

        // Bottom-most adequate run, else the deepest of the longest runs.
        let chosen = runs
            .iter()
            .rev()
            .find(|(s, e)| e - s >= params.min_run)
            .copied()
            .unwrap_or_else(|| {
                let best_len = runs.iter().map(|(s, e)| e - s).max().unwrap();
                runs.iter().rev().find(|(s, e)| e - s == best_len).copied().unwrap()
            });

        // Report the brightest pixel of the run as the border row.
        let (s, e) = chosen;
        let peak = (s..e).max_by_key(|&i| row[lo + i]).unwrap();
        points.push((u as u32, (lo + peak) as u32));
    }
    Ok(points)
}

/// Resampling mode for [`unwarp`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interp {
    Linear,
    Nearest,
}

/// Undo the eccentric-probe distortion: shift every column so the border
/// model lands flat on row `model.d`. Samples pulled from outside the
/// depth range come back as zero.
pub fn unwarp(slice: &BScanPolar, model: &SineModel, interp: Interp) -> BScanPolar {
    let img = slice.image();
    let (w, h) = (img.width(), img.height());
    let mut out = Image::new(w, h, 0u16);
    for u in 0..h {
        let shift = model.eval(u as f64) - model.d;
        let src_row = img.row(u);
        let dst_row = out.row_mut(u);
        match interp {
            Interp::Nearest => {
                for (v, dst) in dst_row.iter_mut().enumerate() {
                    let src = (v as f64 + shift).round();
                    if src >= 0.0 && src < w as f64 {
                        *dst = src_row[src as usize];
                    }
                }
            }
            Interp::Linear => {
                for (v, dst) in dst_row.iter_mut().enumerate() {
                    let src = v as f64 + shift;
                    let i0 = src.floor();
                    let frac = src - i0;
                    let i0 = i0 as isize;
                    let a = if i0 >= 0 && (i0 as usize) < w { f64::from(src_row[i0 as usize]) } else { 0.0 };
                    let i1 = i0 + 1;
                    let b = if i1 >= 0 && (i1 as usize) < w { f64::from(src_row[i1 as usize]) } else { 0.0 };
                    *dst = ((1.0 - frac) * a + frac * b).round() as u16;
                }
            }
        }
    }
    BScanPolar::from_image(out, slice.axial_position_um)
}
