//! Collapse unwarped slices to wall-depth signals and stack them.
//!
//! After unwarping, the capillary border is flat and everything below it
//! belongs to the hole wall. Cropping below the border leaves one peak per
//! column (the wall interface); its row is the local wall radius in depth
//! samples and its height the local reflectance. Stacking one signal per
//! slice gives the 2D surface map the segmentation stage consumes, and
//! cropping every unwarped slice to a common depth window gives a dense
//! hollow-cylinder volume.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::Image;
use crate::phantom::{BScanPolar, VolumeStack};
use crate::undistort::{unwarp, Interp, SliceFit};

#[derive(Debug, Error)]
pub enum SurfaceError {
    #[error("crop start {start} is not below the depth extent {depth}")]
    CropOutOfRange { start: u32, depth: u32 },

    #[error("slice fit count {fits} does not match slice count {slices}")]
    FitCount { fits: usize, slices: usize },

    #[error("{count} slice(s) failed the border fit (first: slice {first}); set allow_rejected to use their best-effort models")]
    RejectedSlices { count: usize, first: usize },

    #[error("slice {index} has {found} columns, expected {expected}")]
    ColumnMismatch { index: usize, found: usize, expected: usize },

    #[error("crop start count {starts} does not match signal count {signals}")]
    StartCount { starts: usize, signals: usize },

    #[error("empty input: {0}")]
    Empty(String),
}

/// Keep only depth rows at and below `border_row + margin`.
pub fn crop_below_border(
    slice: &BScanPolar,
    border_row: u32,
    margin: u32,
) -> Result<BScanPolar, SurfaceError> {
    let depth = slice.depth_count();
    let start = border_row as usize + margin as usize;
    if start >= depth {
        return Err(SurfaceError::CropOutOfRange { start: start as u32, depth: depth as u32 });
    }
    let mut img = Image::new(depth - start, slice.angle_count(), 0u16);
    for u in 0..slice.angle_count() {
        img.row_mut(u).copy_from_slice(&slice.a_scan(u)[start..]);
    }
    Ok(BScanPolar::from_image(img, slice.axial_position_um))
}

/// One slice collapsed to per-column wall readings. Depth rows are
/// relative to whatever crop produced the slice.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSignal {
    pub depth_rows: Vec<u32>,
    pub intensity: Vec<u16>,
    pub valid: Vec<bool>,
}

/// Default peak acceptance floor: mean plus two standard deviations of the
/// slice, so empty columns (no surface in range) read as invalid.
pub fn default_min_peak(slice: &BScanPolar) -> u16 {
    let n = slice.image().len() as f64;
    let mut sum = 0.0;
    let mut sq = 0.0;
    for &v in slice.image().as_slice() {
        let v = f64::from(v);
        sum += v;
        sq += v * v;
    }
    let mean = sum / n;
    let var = (sq / n - mean * mean).max(0.0);
    (mean + 2.0 * var.sqrt()).clamp(0.0, 65535.0) as u16
}

/// Maximum-intensity projection along depth, per column. Columns whose
/// peak stays below `min_peak` are flagged invalid; ties resolve to the
/// shallower row.
pub fn extract_depth(slice: &BScanPolar, min_peak: u16) -> ColumnSignal {
    let cols = slice.angle_count();
    let mut depth_rows = Vec::with_capacity(cols);
    let mut intensity = Vec::with_capacity(cols);
    let mut valid = Vec::with_capacity(cols);
    for u in 0..cols {
        let mut best_v = 0usize;
        let mut best = 0u16;
        for (v, &val) in slice.a_scan(u).iter().enumerate() {
            if val > best {
                best = val;
                best_v = v;
            }
        }
        depth_rows.push(best_v as u32);
        intensity.push(best);
        valid.push(best >= min_peak);
    }
    ColumnSignal { depth_rows, intensity, valid }
}

/// The stacked wall map: one row per slice, one column per angle.
/// `depth_rows` holds absolute unwarped depth rows (crop start included),
/// so multiplying by `depth_resolution_um` gives the wall radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceMap {
    pub depth_rows: Image<f64>,
    pub intensity: Image<u16>,
    pub valid: Image<bool>,
    pub depth_resolution_um: f64,
    pub pullback_step_um: f64,
}

impl SurfaceMap {
    pub fn angle_columns(&self) -> usize {
        self.depth_rows.width()
    }

    pub fn slice_count(&self) -> usize {
        self.depth_rows.height()
    }
}

/// Linear interpolation across invalid columns, wrapping around the
/// rotation. `depth` and `intensity` are patched in place; an all-invalid
/// row is left untouched (the caller keeps its fill).
fn patch_invalid_columns(depth: &mut [f64], intensity: &mut [u16], valid: &[bool]) {
    let w = valid.len();
    let valid_idx: Vec<usize> = (0..w).filter(|&i| valid[i]).collect();
    if valid_idx.is_empty() || valid_idx.len() == w {
        return;
    }
    for (vi, &a) in valid_idx.iter().enumerate() {
        let b = valid_idx[(vi + 1) % valid_idx.len()];
        let gap = (b + w - a - 1) % w;
        for t in 1..=gap {
            let idx = (a + t) % w;
            let f = t as f64 / (gap + 1) as f64;
            depth[idx] = depth[a] + (depth[b] - depth[a]) * f;
            intensity[idx] =
                (f64::from(intensity[a]) + (f64::from(intensity[b]) - f64::from(intensity[a])) * f)
                    .round() as u16;
        }
    }
}

/// Stack per-slice signals into a [`SurfaceMap`]. `crop_starts[s]` is the
/// absolute depth row of signal row 0 in slice `s`; it restores absolute
/// depth so the map is comparable across slices with different crops.
pub fn stack_surface(
    signals: &[ColumnSignal],
    crop_starts: &[u32],
    depth_resolution_um: f64,
    pullback_step_um: f64,
) -> Result<SurfaceMap, SurfaceError> {
    if signals.is_empty() {
        return Err(SurfaceError::Empty("no signals to stack".into()));
    }
    if crop_starts.len() != signals.len() {
        return Err(SurfaceError::StartCount { starts: crop_starts.len(), signals: signals.len() });
    }
    let cols = signals[0].depth_rows.len();
    for (index, s) in signals.iter().enumerate() {
        let found = s.depth_rows.len();
        if found != cols || s.intensity.len() != cols || s.valid.len() != cols {
            return Err(SurfaceError::ColumnMismatch { index, found, expected: cols });
        }
    }

    let mut depth = Image::new(cols, signals.len(), 0.0f64);
    let mut intensity = Image::new(cols, signals.len(), 0u16);
    let mut valid = Image::new(cols, signals.len(), false);
    for (s, sig) in signals.iter().enumerate() {
        let drow = depth.row_mut(s);
        let irow = intensity.row_mut(s);
        for x in 0..cols {
            drow[x] = f64::from(crop_starts[s]) + f64::from(sig.depth_rows[x]);
            irow[x] = sig.intensity[x];
        }
        patch_invalid_columns(drow, irow, &sig.valid);
        valid.row_mut(s).copy_from_slice(&sig.valid);
    }
    Ok(SurfaceMap { depth_rows: depth, intensity, valid, depth_resolution_um, pullback_step_um })
}

/// Dense cropped volume of the hole wall in the capillary frame.
#[derive(Debug, Clone, PartialEq)]
pub struct HollowCylinderVolume {
    /// `[slice][angle][depth]`, row-major.
    pub voxels: Vec<u16>,
    pub slice_count: usize,
    pub angle_columns: usize,
    pub depth_rows: usize,
    pub depth_resolution_um: f64,
    pub pullback_step_um: f64,
    /// Nominal radius of depth row 0; per-slice exact rows are below.
    pub inner_radius_um: f64,
    pub crop_start_rows: Vec<u32>,
}

impl HollowCylinderVolume {
    pub fn a_scan(&self, s: usize, u: usize) -> &[u16] {
        let base = (s * self.angle_columns + u) * self.depth_rows;
        &self.voxels[base..base + self.depth_rows]
    }
}

/// Unwarp every slice with its fitted border model and crop them to a
/// common depth window starting `margin` rows below each border.
///
/// Slices whose fit was rejected abort assembly unless `allow_rejected`
/// is set, in which case their best-effort models are used anyway.
pub fn build_volume(
    stack: &VolumeStack,
    fits: &[SliceFit],
    margin: u32,
    allow_rejected: bool,
) -> Result<HollowCylinderVolume, SurfaceError> {
    if stack.slices.is_empty() {
        return Err(SurfaceError::Empty("stack has no slices".into()));
    }
    if fits.len() != stack.slices.len() {
        return Err(SurfaceError::FitCount { fits: fits.len(), slices: stack.slices.len() });
    }
    let rejected: Vec<usize> =
        fits.iter().enumerate().filter(|(_, f)| !f.accepted).map(|(i, _)| i).collect();
    if !rejected.is_empty() && !allow_rejected {
        return Err(SurfaceError::RejectedSlices { count: rejected.len(), first: rejected[0] });
    }

    let depth = stack.depth_count();
    let cols = stack.angle_count();
    let mut starts = Vec::with_capacity(fits.len());
    for f in fits {
        let start = f.report.model.d.round().max(0.0) as u32 + margin;
        if (start as usize) >= depth {
            return Err(SurfaceError::CropOutOfRange { start, depth: depth as u32 });
        }
        starts.push(start);
    }
    let common_rows = starts.iter().map(|&s| depth - s as usize).min().unwrap();

    let mut voxels = Vec::with_capacity(stack.slices.len() * cols * common_rows);
    for (slice, (fit, &start)) in stack.slices.iter().zip(fits.iter().zip(&starts)) {
        if slice.angle_count() != cols {
            return Err(SurfaceError::ColumnMismatch {
                index: voxels.len() / (cols * common_rows),
                found: slice.angle_count(),
                expected: cols,
            });
        }
        let flat = unwarp(slice, &fit.report.model, Interp::Linear);
        for u in 0..cols {
            let a_scan = flat.a_scan(u);
            voxels.extend_from_slice(&a_scan[start as usize..start as usize + common_rows]);
        }
    }

    let mut sorted = starts.clone();
    sorted.sort_unstable();
    let nominal = sorted[sorted.len() / 2];
    Ok(HollowCylinderVolume {
        voxels,
        slice_count: stack.slices.len(),
        angle_columns: cols,
        depth_rows: common_rows,
        depth_resolution_um: stack.depth_resolution_um,
        pullback_step_um: stack.pullback_step_um,
        inner_radius_um: f64::from(nominal) * stack.depth_resolution_um,
        crop_start_rows: starts,
    })
}
