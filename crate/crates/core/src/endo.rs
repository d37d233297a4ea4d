//! Annulus-camera simulation and panorama stitching.
//!
//! A forward-viewing probe pulled through the hole sees the wall as a
//! bright ring: each frame is an annulus whose radial coordinate maps to
//! a short axial window around the probe position. Unrolling the annulus
//! to polar coordinates gives one stripe of wall texture per frame, and
//! stitching the center band of consecutive stripes builds a panorama of
//! the whole wall, comparable against the depth-sensing surface map.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use thiserror::Error;

use crate::image::Image;
use crate::phantom::{stream_rng, PhantomGeometry};

/// Render band margin beyond the mapped annulus, in pixels. Keeps the
/// bilinear footprint of rim samples fully inside rendered content.
const RIM_PAD_PX: f64 = 2.0;

#[derive(Debug, Error)]
pub enum EndoError {
    #[error("configuration: {0}")]
    Config(String),

    #[error("frame_size_px {found} is below the minimum {min}")]
    FrameSize { found: u32, min: u32 },

    #[error("unroll needs at least 2 columns, got {found}")]
    Columns { found: usize },

    #[error("stripe {index} is {found_w}x{found_h}, expected {want_w}x{want_h}")]
    StripeShape { index: usize, found_w: usize, found_h: usize, want_w: usize, want_h: usize },

    #[error("stitch band of {band} rows exceeds the stripe height {rows}")]
    BandTooWide { band: usize, rows: usize },

    #[error("empty input: {0}")]
    Empty(String),
}

/// Annulus-camera acquisition settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndoConfig {
    /// Probe advance between frames, micrometers.
    pub feed_step_um: f64,
    /// Square frame edge, pixels.
    pub frame_size_px: u32,
    /// Axial span mapped across the annulus width, micrometers.
    pub axial_window_um: f64,
    /// Inner annulus radius as a fraction of the frame edge.
    pub r_inner_frac: f64,
    /// Outer annulus radius as a fraction of the frame edge.
    pub r_outer_frac: f64,
    /// Multiplicative speckle amplitude; 0 renders noiseless frames.
    pub speckle_sigma: f64,
    /// Additive uniform background amplitude in [0, 1).
    pub background_level: f64,
    pub seed: u64,
}

impl Default for EndoConfig {
    fn default() -> Self {
        Self {
            feed_step_um: 400.0,
            frame_size_px: 256,
            axial_window_um: 1200.0,
            r_inner_frac: 0.2,
            r_outer_frac: 0.45,
            speckle_sigma: 0.0,
            background_level: 0.0,
            seed: 29,
        }
    }
}

impl EndoConfig {
    pub fn validate(&self) -> Result<(), EndoError> {
        const MIN_FRAME: u32 = 64;
        if self.frame_size_px < MIN_FRAME {
            return Err(EndoError::FrameSize { found: self.frame_size_px, min: MIN_FRAME });
        }
        if !(self.feed_step_um.is_finite() && self.feed_step_um > 0.0) {
            return Err(EndoError::Config("feed_step_um must be positive".into()));
        }
        if !(self.axial_window_um.is_finite() && self.axial_window_um > 0.0) {
            return Err(EndoError::Config("axial_window_um must be positive".into()));
        }
        if !(self.r_inner_frac > 0.0 && self.r_inner_frac < self.r_outer_frac) {
            return Err(EndoError::Config(
                "r_inner_frac must be positive and below r_outer_frac".into(),
            ));
        }
        if self.r_outer_frac > 0.5 {
            return Err(EndoError::Config("r_outer_frac cannot exceed 0.5".into()));
        }
        let size = f64::from(self.frame_size_px);
        if self.r_inner_frac * size < RIM_PAD_PX + 1.0 {
            return Err(EndoError::Config("inner annulus radius is too small in pixels".into()));
        }
        if (self.r_outer_frac - self.r_inner_frac) * size < 4.0 {
            return Err(EndoError::Config("annulus is too thin to resolve".into()));
        }
        if !(self.speckle_sigma.is_finite() && self.speckle_sigma >= 0.0) {
            return Err(EndoError::Config("speckle_sigma must be non-negative".into()));
        }
        if !(self.background_level.is_finite()
            && (0.0..1.0).contains(&self.background_level))
        {
            return Err(EndoError::Config("background_level must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// One rendered annulus frame with the geometry needed to unroll it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnulusFrame {
    pub image: Image<u16>,
    /// Ring center in pixel coordinates (same for x and y on square frames).
    pub center_px: (f64, f64),
    pub r_inner_px: f64,
    pub r_outer_px: f64,
    /// Probe position along the hole axis for this frame.
    pub axial_position_um: f64,
    pub axial_window_um: f64,
}

/// Render the frame sequence for one pullback: frames every
/// `feed_step_um` from the hole entrance, plus a final frame at the far
/// end so the last stretch of wall is always covered.
pub fn simulate_endo_frames(
    geom: &PhantomGeometry,
    cfg: &EndoConfig,
) -> Result<Vec<AnnulusFrame>, EndoError> {
    cfg.validate()?;
    let length = geom.model().hole_length_um;
    let count = (length / cfg.feed_step_um).ceil().max(1.0) as usize;
    let mut positions: Vec<f64> = (0..count).map(|k| k as f64 * cfg.feed_step_um).collect();
    positions.push(length);

    let frames = positions
        .iter()
        .enumerate()
        .map(|(index, &z)| render_frame(geom, cfg, z, index as u64))
        .collect();
    Ok(frames)
}

fn render_frame(geom: &PhantomGeometry, cfg: &EndoConfig, z_probe: f64, stream: u64) -> AnnulusFrame {
    let size = cfg.frame_size_px as usize;
    let c = (size as f64 - 1.0) / 2.0;
    let r_in = cfg.r_inner_frac * size as f64;
    let r_out = cfg.r_outer_frac * size as f64;
    let rho_mid = (r_in + r_out) / 2.0;
    let scale = cfg.axial_window_um / (r_out - r_in);
    let length = geom.model().hole_length_um;
    let scatter = geom.model().scatter_base;
    let mut rng = stream_rng(cfg.seed, stream);
    let noisy = cfg.speckle_sigma > 0.0 || cfg.background_level > 0.0;

    let mut image = Image::new(size, size, 0u16);
    for y in 0..size {
        let dy = y as f64 - c;
        let row = image.row_mut(y);
        for (x, out) in row.iter_mut().enumerate() {
            let dx = x as f64 - c;
            let rho = dx.hypot(dy);
            if rho < r_in - RIM_PAD_PX || rho > r_out + RIM_PAD_PX {
                continue;
            }
            let alpha = dy.atan2(dx);
            let z = (z_probe + (rho.clamp(r_in, r_out) - rho_mid) * scale).clamp(0.0, length);
            let mut v = if geom.breach_depth_um(z, alpha) > 0.0 { 1.0 } else { scatter };
            if noisy {
                if cfg.speckle_sigma > 0.0 {
                    let n: f64 = rng.sample(StandardNormal);
                    v *= 1.0 + cfg.speckle_sigma * n;
                }
                if cfg.background_level > 0.0 {
                    v += cfg.background_level * rng.random::<f64>();
                }
            }
            *out = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
        }
    }
    AnnulusFrame {
        image,
        center_px: (c, c),
        r_inner_px: r_in,
        r_outer_px: r_out,
        axial_position_um: z_probe,
        axial_window_um: cfg.axial_window_um,
    }
}

fn bilinear(img: &Image<u16>, px: f64, py: f64) -> f64 {
    let x0 = px.floor();
    let y0 = py.floor();
    let fx = px - x0;
    let fy = py - y0;
    let tap = |ix: f64, iy: f64| -> f64 {
        if ix < 0.0 || iy < 0.0 || ix >= img.width() as f64 || iy >= img.height() as f64 {
            0.0
        } else {
            f64::from(img.get(ix as usize, iy as usize))
        }
    };
    let v00 = tap(x0, y0);
    let v10 = tap(x0 + 1.0, y0);
    let v01 = tap(x0, y0 + 1.0);
    let v11 = tap(x0 + 1.0, y0 + 1.0);
    v00 * (1.0 - fx) * (1.0 - fy)
        + v10 * fx * (1.0 - fy)
        + v01 * (1.0 - fx) * fy
        + v11 * fx * fy
}

/// Number of rows an unrolled stripe of this frame has: one per pixel of
/// annulus thickness, endpoints included.
pub fn unroll_rows(frame: &AnnulusFrame) -> usize {
    (frame.r_outer_px - frame.r_inner_px).ceil() as usize + 1
}

/// Resample the annulus onto a polar grid. Row 0 is the inner radius
/// (earliest axial position in the window), column `x` is the angle
/// `2*pi*x / columns`; samples are bilinear, out-of-frame reads as 0.
pub fn unroll_frame(frame: &AnnulusFrame, columns: usize) -> Result<Image<u16>, EndoError> {
    if columns < 2 {
        return Err(EndoError::Columns { found: columns });
    }
    let span = frame.r_outer_px - frame.r_inner_px;
    if !(span.is_finite() && span > 0.0) {
        return Err(EndoError::Config("frame annulus has no radial extent".into()));
    }
    let rows = unroll_rows(frame);
    let (cx, cy) = frame.center_px;
    let mut out = Image::new(columns, rows, 0u16);
    for r in 0..rows {
        let rho = frame.r_inner_px + span * r as f64 / (rows - 1) as f64;
        let row = out.row_mut(r);
        for (x, slot) in row.iter_mut().enumerate() {
            let alpha = TAU * x as f64 / columns as f64;
            let (sin_a, cos_a) = alpha.sin_cos();
            *slot = bilinear(&frame.image, cx + rho * cos_a, cy + rho * sin_a).round() as u16;
        }
    }
    Ok(out)
}

/// Stitched wall panorama: rows advance along the hole axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panorama {
    pub image: Image<u16>,
    /// Axial position of each panorama row, micrometers.
    pub row_z_um: Vec<f64>,
    /// Axial spacing between adjacent rows, micrometers.
    pub um_per_row: f64,
}

/// Concatenate the center band of each stripe. The band is as many rows
/// as one feed step covers, so consecutive stripes tile the axis without
/// gaps or overlap; `um_per_row` is the stripe's own axial row spacing
/// (`axial_window_um / (rows - 1)`).
pub fn stitch(
    stripes: &[Image<u16>],
    feed_step_um: f64,
    um_per_row: f64,
) -> Result<Panorama, EndoError> {
    if stripes.is_empty() {
        return Err(EndoError::Empty("no stripes to stitch".into()));
    }
    if !(feed_step_um.is_finite() && feed_step_um > 0.0) {
        return Err(EndoError::Config("feed_step_um must be positive".into()));
    }
    if !(um_per_row.is_finite() && um_per_row > 0.0) {
        return Err(EndoError::Config("um_per_row must be positive".into()));
    }
    let width = stripes[0].width();
    let rows = stripes[0].height();
    for (index, s) in stripes.iter().enumerate() {
        if s.width() != width || s.height() != rows {
            return Err(EndoError::StripeShape {
                index,
                found_w: s.width(),
                found_h: s.height(),
                want_w: width,
                want_h: rows,
            });
        }
    }
    let band = (feed_step_um / um_per_row).round().max(1.0) as usize;
    if band > rows {
        return Err(EndoError::BandTooWide { band, rows });
    }
    let start = (rows - band) / 2;
    let mid = (rows - 1) as f64 / 2.0;

    let mut image = Image::new(width, band * stripes.len(), 0u16);
    let mut row_z_um = Vec::with_capacity(band * stripes.len());
    for (k, stripe) in stripes.iter().enumerate() {
        let z_k = k as f64 * feed_step_um;
        for j in 0..band {
            image.row_mut(k * band + j).copy_from_slice(stripe.row(start + j));
            row_z_um.push(z_k + ((start + j) as f64 - mid) * um_per_row);
        }
    }
    Ok(Panorama { image, row_z_um, um_per_row })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{build_phantom, PhantomModel, Pocket, PocketKind};

    fn bare_phantom() -> PhantomGeometry {
        build_phantom(&PhantomModel { pockets: Vec::new(), ..PhantomModel::default() }).unwrap()
    }

    #[test]
    fn frame_positions_step_by_feed_and_end_at_the_far_wall() {
        let cfg = EndoConfig::default();
        let frames = simulate_endo_frames(&bare_phantom(), &cfg).unwrap();
        // 4000 um hole, 400 um feed: frames at 0..3600, plus the far end.
        assert_eq!(frames.len(), 11);
        assert_eq!(frames[9].axial_position_um, 3600.0);
        assert_eq!(frames[10].axial_position_um, 4000.0);

        let cfg = EndoConfig { feed_step_um: 300.0, ..EndoConfig::default() };
        let frames = simulate_endo_frames(&bare_phantom(), &cfg).unwrap();
        assert_eq!(frames.len(), 15);
        assert_eq!(frames[13].axial_position_um, 3900.0);
        assert_eq!(frames[14].axial_position_um, 4000.0);
    }

    #[test]
    fn tiny_frames_and_bad_radii_are_rejected() {
        let cfg = EndoConfig { frame_size_px: 32, ..EndoConfig::default() };
        assert!(matches!(
            simulate_endo_frames(&bare_phantom(), &cfg),
            Err(EndoError::FrameSize { found: 32, min: 64 })
        ));
        let cfg = EndoConfig { r_inner_frac: 0.5, r_outer_frac: 0.4, ..EndoConfig::default() };
        assert!(matches!(
            simulate_endo_frames(&bare_phantom(), &cfg),
            Err(EndoError::Config(_))
        ));
    }

    #[test]
    fn smooth_wall_renders_a_uniform_ring_over_black() {
        let cfg = EndoConfig::default();
        let frame = &simulate_endo_frames(&bare_phantom(), &cfg).unwrap()[0];
        let c = frame.center_px.0;
        let fill = (bare_phantom().model().scatter_base * 65535.0).round() as u16;
        // Center and far corner are outside the annulus.
        assert_eq!(frame.image.get(c as usize, c as usize), 0);
        assert_eq!(frame.image.get(0, 0), 0);
        // A pixel at mid-annulus radius carries the wall reflectance.
        let mid = (frame.r_inner_px + frame.r_outer_px) / 2.0;
        assert_eq!(frame.image.get((c + mid) as usize, c as usize), fill);
    }

    #[test]
    fn a_pocket_lights_up_at_its_angle_and_depth() {
        let model = PhantomModel {
            pockets: vec![Pocket {
                kind: PocketKind::Sphere,
                center_um: [1750.0, 0.0, 2000.0],
                axis: [0.0, 0.0, 1.0],
                radius_um: 600.0,
            }],
            ..PhantomModel::default()
        };
        let geom = build_phantom(&model).unwrap();
        let cfg = EndoConfig::default();
        let frames = simulate_endo_frames(&geom, &cfg).unwrap();
        // Frame 5 sits at z = 2000, dead center of the pocket.
        let frame = &frames[5];
        assert_eq!(frame.axial_position_um, 2000.0);
        let c = frame.center_px.0;
        let mid = (frame.r_inner_px + frame.r_outer_px) / 2.0;
        // The pocket is at angle 0 (+x); the opposite side stays smooth wall.
        assert_eq!(frame.image.get((c + mid) as usize, c as usize), 65535);
        let fill = (geom.model().scatter_base * 65535.0).round() as u16;
        assert_eq!(frame.image.get((c - mid) as usize, c as usize), fill);
    }

    #[test]
    fn unrolling_a_smooth_ring_is_flat() {
        let cfg = EndoConfig::default();
        let frame = &simulate_endo_frames(&bare_phantom(), &cfg).unwrap()[3];
        let stripe = unroll_frame(frame, 64).unwrap();
        assert_eq!(stripe.height(), unroll_rows(frame));
        let fill = (bare_phantom().model().scatter_base * 65535.0).round() as f64;
        for y in 0..stripe.height() {
            for x in 0..stripe.width() {
                let v = f64::from(stripe.get(x, y));
                assert!(
                    (v - fill).abs() <= 1.0,
                    "stripe[{x},{y}] = {v}, expected about {fill}"
                );
            }
        }
    }

    #[test]
    fn unroll_commutes_with_quarter_turns() {
        let model = PhantomModel {
            pockets: vec![Pocket {
                kind: PocketKind::Sphere,
                center_um: [1236.0, 1236.0, 2000.0],
                axis: [0.0, 0.0, 1.0],
                radius_um: 500.0,
            }],
            ..PhantomModel::default()
        };
        let geom = build_phantom(&model).unwrap();
        let frame = &simulate_endo_frames(&geom, &EndoConfig::default()).unwrap()[5];
        let n = frame.image.width();
        // Quarter-turn the raw image about the frame center.
        let rotated = Image::from_fn(n, n, |x, y| frame.image.get(y, n - 1 - x));
        let turned = AnnulusFrame { image: rotated, ..frame.clone() };

        let w = 64;
        let a = unroll_frame(frame, w).unwrap();
        let b = unroll_frame(&turned, w).unwrap();
        // Rotating the frame shifts the unrolled stripe by a quarter width.
        for y in 0..a.height() {
            for x in 0..w {
                let va = i32::from(a.get(x, y));
                let vb = i32::from(b.get((x + w / 4) % w, y));
                assert!(
                    (va - vb).abs() <= 1,
                    "mismatch at ({x},{y}): {va} vs {vb}"
                );
            }
        }
    }

    #[test]
    fn stitch_takes_the_center_band_and_tracks_axial_position() {
        let stripes: Vec<Image<u16>> =
            (0..3).map(|k| Image::from_fn(5, 8, |_, y| (k * 100 + y) as u16)).collect();
        // 8-row stripes spanning 80 um: 10 um/row, 40 um feed -> 4-row band.
        let pano = stitch(&stripes, 40.0, 10.0).unwrap();
        assert_eq!(pano.image.height(), 12);
        assert_eq!(pano.image.width(), 5);
        // Band starts at row (8 - 4) / 2 = 2 of each stripe.
        assert_eq!(pano.image.get(0, 0), 2);
        assert_eq!(pano.image.get(0, 4), 102);
        // Row z: stripe row (start + j) offset from the stripe middle 3.5.
        assert!((pano.row_z_um[0] - (-15.0)).abs() < 1e-9);
        assert!((pano.row_z_um[4] - 25.0).abs() < 1e-9);
        assert!((pano.row_z_um[11] - 95.0).abs() < 1e-9);
    }

    #[test]
    fn stitch_rejects_mismatched_or_oversized_bands() {
        let a = Image::new(5, 8, 0u16);
        let b = Image::new(5, 7, 0u16);
        assert!(matches!(
            stitch(&[a.clone(), b], 40.0, 10.0),
            Err(EndoError::StripeShape { index: 1, .. })
        ));
        assert!(matches!(
            stitch(&[a], 200.0, 10.0),
            Err(EndoError::BandTooWide { band: 20, rows: 8 })
        ));
    }
}
