//! Surface-map directories: a PGM pair plus validity mask plus `meta.json`.
//!
//! `depth.pgm` stores the unwarped depth row of the wall per (slice, angle)
//! cell, rounded to u16; `intensity.pgm` keeps the peak intensity reduced to
//! 8 bits for quick inspection; `valid.pgm` marks cells whose depth came
//! from a real peak rather than neighbor interpolation.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::io::{pgm, FormatError};
use crate::surface::SurfaceMap;

const SURFACE_TAG: &str = "octds-surface-1";

#[derive(Debug, Serialize, Deserialize)]
struct SurfaceMeta {
    format: String,
    angle_columns: usize,
    slice_count: usize,
    depth_resolution_um: f64,
    pullback_step_um: f64,
}

pub fn write_surface_map(dir: &Path, map: &SurfaceMap) -> Result<(), FormatError> {
    fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e))?;

    let mut depth_px = crate::image::Image::new(map.depth_rows.width(), map.depth_rows.height(), 0u16);
    for y in 0..map.depth_rows.height() {
        for x in 0..map.depth_rows.width() {
            let v = map.depth_rows.get(x, y);
            if !v.is_finite() || v < 0.0 || v > f64::from(u16::MAX) {
                return Err(FormatError::Range { x, y, value: v });
            }
            depth_px.set(x, y, v.round() as u16);
        }
    }
    pgm::write_pgm_u16(&dir.join("depth.pgm"), &depth_px)?;
    pgm::write_pgm_u8(&dir.join("intensity.pgm"), &map.intensity.map(|v| (v >> 8) as u8))?;
    pgm::write_mask(&dir.join("valid.pgm"), &map.valid)?;

    let meta = SurfaceMeta {
        format: SURFACE_TAG.into(),
        angle_columns: map.depth_rows.width(),
        slice_count: map.depth_rows.height(),
        depth_resolution_um: map.depth_resolution_um,
        pullback_step_um: map.pullback_step_um,
    };
    let path = dir.join("meta.json");
    let text = serde_json::to_string_pretty(&meta)
        .map_err(|e| FormatError::Json { path: path.clone(), source: e })?;
    fs::write(&path, text + "\n").map_err(|e| FormatError::io(&path, e))
}

/// Read a map written by [`write_surface_map`]. Depth comes back quantized
/// to whole rows (that is what the container stores) and intensity widened
/// back into the high byte.
pub fn read_surface_map(dir: &Path) -> Result<SurfaceMap, FormatError> {
    let meta_path = dir.join("meta.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| FormatError::io(&meta_path, e))?;
    let meta: SurfaceMeta = serde_json::from_str(&text)
        .map_err(|e| FormatError::Json { path: meta_path, source: e })?;
    if meta.format != SURFACE_TAG {
        return Err(FormatError::FormatTag { found: meta.format });
    }

    let depth_px = pgm::read_pgm(&dir.join("depth.pgm"))?.into_u16();
    let intensity = pgm::read_pgm(&dir.join("intensity.pgm"))?.into_u16().map(|v| v << 8);
    let valid = pgm::read_mask(&dir.join("valid.pgm"))?;
    for (name, (w, h)) in [
        ("depth.pgm", (depth_px.width(), depth_px.height())),
        ("intensity.pgm", (intensity.width(), intensity.height())),
        ("valid.pgm", (valid.width(), valid.height())),
    ] {
        if (w, h) != (meta.angle_columns, meta.slice_count) {
            let _ = name;
            return Err(FormatError::Shape {
                want_w: meta.angle_columns,
                want_h: meta.slice_count,
                found_w: w,
                found_h: h,
            });
        }
    }

    Ok(SurfaceMap {
        depth_rows: depth_px.map(f64::from),
        intensity,
        valid,
        depth_resolution_um: meta.depth_resolution_um,
        pullback_step_um: meta.pullback_step_um,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;

    #[test]
    fn round_trip_quantizes_depth_to_rows() {
        let map = SurfaceMap {
            depth_rows: Image::from_fn(6, 3, |x, y| 150.0 + x as f64 + 0.4 * y as f64),
            intensity: Image::from_fn(6, 3, |x, y| ((x + y) * 4096) as u16),
            valid: Image::from_fn(6, 3, |x, _| x != 2),
            depth_resolution_um: 10.0,
            pullback_step_um: 100.0,
        };
        let dir = tempfile::tempdir().unwrap();
        write_surface_map(dir.path(), &map).unwrap();
        let back = read_surface_map(dir.path()).unwrap();
        assert_eq!(back.valid, map.valid);
        assert_eq!(back.depth_resolution_um, 10.0);
        for y in 0..3 {
            for x in 0..6 {
                assert_eq!(back.depth_rows.get(x, y), map.depth_rows.get(x, y).round());
                // Intensity keeps its top byte.
                assert_eq!(back.intensity.get(x, y) >> 8, map.intensity.get(x, y) >> 8);
            }
        }
    }

    #[test]
    fn out_of_range_depth_is_an_error() {
        let map = SurfaceMap {
            depth_rows: Image::new(2, 2, -1.0),
            intensity: Image::new(2, 2, 0),
            valid: Image::new(2, 2, true),
            depth_resolution_um: 10.0,
            pullback_step_um: 100.0,
        };
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            write_surface_map(dir.path(), &map),
            Err(FormatError::Range { x: 0, y: 0, .. })
        ));
    }
}
