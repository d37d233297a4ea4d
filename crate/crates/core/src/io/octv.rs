//! Stack directories: `meta.json` plus one raw u16 little-endian file per
//! slice, row-major with rows = angle columns and columns = depth samples.
//!
//! The same container carries both polar B-scan stacks (straight from the
//! scanner or after unwarping) and cropped hollow-cylinder volumes; the
//! latter add a `cylinder` section to the metadata.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::image::Image;
use crate::io::FormatError;
use crate::phantom::{BScanPolar, GeometryMeta, VolumeStack};
use crate::surface::HollowCylinderVolume;

pub const FORMAT_TAG: &str = "octv-1";
pub const DTYPE_U16LE: &str = "u16le";

/// Contents of `meta.json`. Shapes live here and only here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackMeta {
    pub format: String,
    pub dtype: String,
    pub slice_count: usize,
    pub a_scans_per_rotation: usize,
    pub depth_samples: usize,
    pub depth_resolution_um: f64,
    pub pullback_step_um: f64,
    /// Seed the stack was simulated with, when it came from the simulator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Acquisition geometry, when known. Downstream stages use it to place
    /// the border search band; absence just widens the search.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<GeometryMeta>,
    /// Present on cropped cylinder volumes only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cylinder: Option<CylinderMeta>,
}

/// Cylindrical-mapping metadata for cropped volumes: depth row 0 of slice
/// `s` sits at physical radius `inner_radius_um` and was cut at unwarped
/// row `crop_start_rows[s]` of the source slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CylinderMeta {
    pub inner_radius_um: f64,
    pub crop_start_rows: Vec<u32>,
}

fn slice_file(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("slice_{index:05}.bin"))
}

fn write_meta(dir: &Path, meta: &StackMeta) -> Result<(), FormatError> {
    let path = dir.join("meta.json");
    let text = serde_json::to_string_pretty(meta)
        .map_err(|e| FormatError::Json { path: path.clone(), source: e })?;
    fs::write(&path, text + "\n").map_err(|e| FormatError::io(&path, e))
}

fn read_meta(dir: &Path) -> Result<StackMeta, FormatError> {
    let path = dir.join("meta.json");
    let text = fs::read_to_string(&path).map_err(|e| FormatError::io(&path, e))?;
    let meta: StackMeta =
        serde_json::from_str(&text).map_err(|e| FormatError::Json { path, source: e })?;
    if meta.format != FORMAT_TAG {
        return Err(FormatError::FormatTag { found: meta.format });
    }
    if meta.dtype != DTYPE_U16LE {
        return Err(FormatError::Dtype { found: meta.dtype });
    }
    if meta.slice_count == 0 || meta.a_scans_per_rotation == 0 || meta.depth_samples == 0 {
        return Err(FormatError::Meta("slice_count, a_scans_per_rotation and depth_samples must all be nonzero".into()));
    }
    Ok(meta)
}

fn write_samples(path: &Path, samples: &[u16]) -> Result<(), FormatError> {
    let mut bytes = Vec::with_capacity(samples.len() * 2);
    for &v in samples {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| FormatError::io(path, e))
}

fn read_samples(dir: &Path, index: usize, expected: usize) -> Result<Vec<u16>, FormatError> {
    let path = slice_file(dir, index);
    let bytes = match fs::read(&path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(FormatError::MissingSlice { index, path });
        }
        Err(e) => return Err(FormatError::io(&path, e)),
    };
    if bytes.len() != expected * 2 {
        return Err(FormatError::SliceSize {
            index,
            expected: (expected * 2) as u64,
            found: bytes.len() as u64,
        });
    }
    Ok(bytes.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect())
}

/// Write a polar B-scan stack. Every slice must share one shape.
pub fn write_stack(dir: &Path, stack: &VolumeStack) -> Result<(), FormatError> {
    let first = stack
        .slices
        .first()
        .ok_or_else(|| FormatError::Meta("refusing to write an empty stack".into()))?;
    let (angles, depth) = (first.angle_count(), first.depth_count());
    for (i, s) in stack.slices.iter().enumerate() {
        if s.angle_count() != angles || s.depth_count() != depth {
            return Err(FormatError::Shape {
                want_w: depth,
                want_h: angles,
                found_w: s.depth_count(),
                found_h: s.angle_count(),
            });
        }
        let _ = i;
    }

    fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e))?;
    write_meta(
        dir,
        &StackMeta {
            format: FORMAT_TAG.into(),
            dtype: DTYPE_U16LE.into(),
            slice_count: stack.slices.len(),
            a_scans_per_rotation: angles,
            depth_samples: depth,
            depth_resolution_um: stack.depth_resolution_um,
            pullback_step_um: stack.pullback_step_um,
            seed: stack.seed,
            geometry: stack.geometry.clone(),
            cylinder: None,
        },
    )?;
    for (i, s) in stack.slices.iter().enumerate() {
        write_samples(&slice_file(dir, i), s.image().as_slice())?;
    }
    Ok(())
}

/// Read a polar B-scan stack written by [`write_stack`].
pub fn read_stack(dir: &Path) -> Result<VolumeStack, FormatError> {
    let meta = read_meta(dir)?;
    if meta.cylinder.is_some() {
        return Err(FormatError::Meta(
            "directory holds a cropped cylinder volume, not a polar stack".into(),
        ));
    }
    let per_slice = meta.a_scans_per_rotation * meta.depth_samples;
    let mut slices = Vec::with_capacity(meta.slice_count);
    for i in 0..meta.slice_count {
        let samples = read_samples(dir, i, per_slice)?;
        let img = Image::from_vec(meta.depth_samples, meta.a_scans_per_rotation, samples).unwrap();
        slices.push(BScanPolar::from_image(img, i as f64 * meta.pullback_step_um));
    }
    Ok(VolumeStack {
        slices,
        depth_resolution_um: meta.depth_resolution_um,
        pullback_step_um: meta.pullback_step_um,
        geometry: meta.geometry,
        seed: meta.seed,
    })
}

/// Write a cropped hollow-cylinder volume.
pub fn write_volume(dir: &Path, vol: &HollowCylinderVolume) -> Result<(), FormatError> {
    if vol.slice_count == 0 {
        return Err(FormatError::Meta("refusing to write an empty volume".into()));
    }
    fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e))?;
    write_meta(
        dir,
        &StackMeta {
            format: FORMAT_TAG.into(),
            dtype: DTYPE_U16LE.into(),
            slice_count: vol.slice_count,
            a_scans_per_rotation: vol.angle_columns,
            depth_samples: vol.depth_rows,
            depth_resolution_um: vol.depth_resolution_um,
            pullback_step_um: vol.pullback_step_um,
            seed: None,
            geometry: None,
            cylinder: Some(CylinderMeta {
                inner_radius_um: vol.inner_radius_um,
                crop_start_rows: vol.crop_start_rows.clone(),
            }),
        },
    )?;
    let per_slice = vol.angle_columns * vol.depth_rows;
    for i in 0..vol.slice_count {
        write_samples(&slice_file(dir, i), &vol.voxels[i * per_slice..(i + 1) * per_slice])?;
    }
    Ok(())
}

/// Read a volume written by [`write_volume`].
pub fn read_volume(dir: &Path) -> Result<HollowCylinderVolume, FormatError> {
    let meta = read_meta(dir)?;
    let cylinder = meta
        .cylinder
        .ok_or_else(|| FormatError::Meta("missing cylinder section: not a cropped volume".into()))?;
    if cylinder.crop_start_rows.len() != meta.slice_count {
        return Err(FormatError::Meta(format!(
            "crop_start_rows has {} entries for {} slices",
            cylinder.crop_start_rows.len(),
            meta.slice_count
        )));
    }
    let per_slice = meta.a_scans_per_rotation * meta.depth_samples;
    let mut voxels = Vec::with_capacity(per_slice * meta.slice_count);
    for i in 0..meta.slice_count {
        voxels.extend_from_slice(&read_samples(dir, i, per_slice)?);
    }
    Ok(HollowCylinderVolume {
        voxels,
        slice_count: meta.slice_count,
        angle_columns: meta.a_scans_per_rotation,
        depth_rows: meta.depth_samples,
        depth_resolution_um: meta.depth_resolution_um,
        pullback_step_um: meta.pullback_step_um,
        inner_radius_um: cylinder.inner_radius_um,
        crop_start_rows: cylinder.crop_start_rows,
    })
}
