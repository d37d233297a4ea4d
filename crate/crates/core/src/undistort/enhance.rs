//! Slice enhancement before border detection: a single-level Haar wavelet
//! soft-threshold to knock down speckle, then contrast-limited adaptive
//! histogram equalization so a fixed binarization offset works across
//! bright and dim regions of the scan.

use serde::{Deserialize, Serialize};

use super::UndistortError;
use crate::image::Image;
use crate::phantom::BScanPolar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnhanceParams {
    /// Scales the universal wavelet threshold; 0 disables denoising.
    pub wavelet_threshold_scale: f64,
    /// CLAHE tile grid: (tiles across depth, tiles across columns).
    pub clahe_tiles: (usize, usize),
    /// Contrast limit as a multiple of the uniform histogram level.
    pub clahe_clip: f64,
    /// Histogram resolution for equalization.
    pub clahe_bins: usize,
}

impl Default for EnhanceParams {
    fn default() -> Self {
        Self { wavelet_threshold_scale: 1.0, clahe_tiles: (8, 8), clahe_clip: 2.0, clahe_bins: 256 }
    }
}

/// Denoise, then equalize. Output dimensions always match the input.
pub fn enhance(slice: &BScanPolar, params: &EnhanceParams) -> Result<BScanPolar, UndistortError> {
    if !(params.wavelet_threshold_scale >= 0.0) {
        return Err(UndistortError::Config("wavelet_threshold_scale must be non-negative".into()));
    }
    let denoised = if params.wavelet_threshold_scale > 0.0 {
        wavelet_denoise(slice.image(), params.wavelet_threshold_scale)
    } else {
        slice.image().clone()
    };
    let equalized = clahe(&denoised, params.clahe_tiles, params.clahe_clip, params.clahe_bins)?;
    Ok(BScanPolar::from_image(equalized, slice.axial_position_um))
}

/// Single-level 2D Haar transform, soft threshold on the detail bands,
/// inverse transform. The threshold is the universal one: the noise sigma
/// estimated from the diagonal band median, times `sqrt(2 ln n)`, times
/// `threshold_scale`. Odd trailing rows/columns pass through untouched.
pub fn wavelet_denoise(img: &Image<u16>, threshold_scale: f64) -> Image<u16> {
    let (w, h) = (img.width(), img.height());
    let (we, he) = (w & !1, h & !1);
    if we == 0 || he == 0 || threshold_scale <= 0.0 {
        return img.clone();
    }

    let mut a: Vec<f64> = img.as_slice().iter().map(|&v| f64::from(v)).collect();
    let c = std::f64::consts::FRAC_1_SQRT_2;
    let mut scratch = vec![0.0f64; w.max(h)];

    // Forward: rows then columns, halves layout (approx | detail).
    for y in 0..he {
        let row = &mut a[y * w..y * w + we];
        for i in 0..we / 2 {
            let (p, q) = (row[2 * i], row[2 * i + 1]);
            scratch[i] = (p + q) * c;
            scratch[we / 2 + i] = (p - q) * c;
        }
        row.copy_from_slice(&scratch[..we]);
    }
    for x in 0..we {
        for i in 0..he / 2 {
            let (p, q) = (a[(2 * i) * w + x], a[(2 * i + 1) * w + x]);
            scratch[i] = (p + q) * c;
            scratch[he / 2 + i] = (p - q) * c;
        }
        for i in 0..he {
            a[i * w + x] = scratch[i];
        }
    }

    // Noise sigma from the diagonal detail band.
    let mut hh: Vec<f64> = (he / 2..he)
        .flat_map(|y| (we / 2..we).map(move |x| (y, x)))
        .map(|(y, x)| a[y * w + x].abs())
        .collect();
    let mid = hh.len() / 2;
    let (_, median, _) = hh.select_nth_unstable_by(mid, f64::total_cmp);
    let sigma = *median / 0.6745;
    let t = threshold_scale * sigma * (2.0 * ((we * he) as f64).ln()).sqrt();

    if t > 0.0 {
        let soft = |v: f64| v.signum() * (v.abs() - t).max(0.0);
        for y in 0..he {
            for x in 0..we {
                // Everything outside the approximation quadrant is detail.
                if x >= we / 2 || y >= he / 2 {
                    a[y * w + x] = soft(a[y * w + x]);
                }
            }
        }
    }

    // Inverse: columns then rows.
    for x in 0..we {
        for i in 0..he / 2 {
            let (s, d) = (a[i * w + x], a[(he / 2 + i) * w + x]);
            scratch[2 * i] = (s + d) * c;
            scratch[2 * i + 1] = (s - d) * c;
        }
        for i in 0..he {
            a[i * w + x] = scratch[i];
        }
    }
    for y in 0..he {
        let row = &mut a[y * w..y * w + we];
        for i in 0..we / 2 {
            let (s, d) = (row[i], row[we / 2 + i]);
            scratch[2 * i] = (s + d) * c;
            scratch[2 * i + 1] = (s - d) * c;
        }
        row.copy_from_slice(&scratch[..we]);
    }

    let data = a.iter().map(|&v| v.round().clamp(0.0, 65535.0) as u16).collect();
    Image::from_vec(w, h, data).unwrap()
}

fn tile_ranges(extent: usize, tiles: usize) -> Vec<(usize, usize)> {
    (0..tiles).map(|i| (i * extent / tiles, (i + 1) * extent / tiles)).collect()
}

/// Contrast-limited adaptive histogram equalization on a u16 image.
///
/// Each tile gets a clipped-histogram equalization LUT; pixels blend the
/// four surrounding tile LUTs bilinearly, which removes tile seams.
pub fn clahe(
    img: &Image<u16>,
    tiles: (usize, usize),
    clip: f64,
    bins: usize,
) -> Result<Image<u16>, UndistortError> {
    let (tx, ty) = tiles;
    let (w, h) = (img.width(), img.height());
    if tx == 0 || ty == 0 {
        return Err(UndistortError::Config("clahe_tiles must be positive in both directions".into()));
    }
    if tx > w || ty > h {
        return Err(UndistortError::Config(format!(
            "clahe tile grid {tx}x{ty} exceeds the {w}x{h} image"
        )));
    }
    if !(2..=65536).contains(&bins) {
        return Err(UndistortError::Config(format!("clahe_bins must lie in [2, 65536], got {bins}")));
    }
    if !(clip > 0.0) {
        return Err(UndistortError::Config("clahe_clip must be positive".into()));
    }

    let bin_of = |v: u16| -> usize { (u64::from(v) * bins as u64 / 65536) as usize };
    let xs = tile_ranges(w, tx);
    let ys = tile_ranges(h, ty);

    let mut luts: Vec<Vec<u16>> = Vec::with_capacity(tx * ty);
    for &(y0, y1) in &ys {
        for &(x0, x1) in &xs {
            let area = ((x1 - x0) * (y1 - y0)) as u64;
            let mut hist = vec![0u64; bins];
            for y in y0..y1 {
                for &v in &img.row(y)[x0..x1] {
                    hist[bin_of(v)] += 1;
                }
            }

            // Clip and spread the excess uniformly (remainder striped).
            let limit = ((clip * area as f64 / bins as f64).round() as u64).max(1);
            let mut excess = 0u64;
            for hv in hist.iter_mut() {
                if *hv > limit {
                    excess += *hv - limit;
                    *hv = limit;
                }
            }
            let per_bin = excess / bins as u64;
            let rem = (excess % bins as u64) as usize;
            for hv in hist.iter_mut() {
                *hv += per_bin;
            }
            if rem > 0 {
                let step = (bins / rem).max(1);
                for k in 0..rem {
                    hist[(k * step) % bins] += 1;
                }
            }

            let scale = 65535.0 / area as f64;
            let mut cum = 0u64;
            let lut = hist
                .iter()
                .map(|&hv| {
                    cum += hv;
                    (cum as f64 * scale).round().clamp(0.0, 65535.0) as u16
                })
                .collect();
            luts.push(lut);
        }
    }

    // Per-coordinate interpolation tables between tile centers.
    let centers = |ranges: &[(usize, usize)]| -> Vec<f64> {
        ranges.iter().map(|&(a, b)| (a + b - 1) as f64 / 2.0).collect()
    };
    let seg_table = |coords: &[f64], extent: usize| -> Vec<(usize, usize, f64)> {
        (0..extent)
            .map(|p| {
                let p = p as f64;
                if p <= coords[0] {
                    (0, 0, 0.0)
                } else if p >= *coords.last().unwrap() {
                    (coords.len() - 1, coords.len() - 1, 0.0)
                } else {
                    let i = coords.iter().rposition(|&cv| cv <= p).unwrap();
                    let i1 = (i + 1).min(coords.len() - 1);
                    let f = if i1 == i { 0.0 } else { (p - coords[i]) / (coords[i1] - coords[i]) };
                    (i, i1, f)
                }
            })
            .collect()
    };
    let xseg = seg_table(&centers(&xs), w);
    let yseg = seg_table(&centers(&ys), h);

    let mut out = Image::new(w, h, 0u16);
    for y in 0..h {
        let (j0, j1, fy) = yseg[y];
        let src_row = img.row(y);
        let dst_row = out.row_mut(y);
        for x in 0..w {
            let (i0, i1, fx) = xseg[x];
            let b = bin_of(src_row[x]);
            let l00 = f64::from(luts[j0 * tx + i0][b]);
            let l01 = f64::from(luts[j0 * tx + i1][b]);
            let l10 = f64::from(luts[j1 * tx + i0][b]);
            let l11 = f64::from(luts[j1 * tx + i1][b]);
            let top = l00 + (l01 - l00) * fx;
            let bot = l10 + (l11 - l10) * fx;
            dst_row[x] = (top + (bot - top) * fy).round() as u16;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noisy_flat(w: usize, h: usize, level: u16, spread: u16) -> Image<u16> {
        // Deterministic LCG noise: tests must not depend on global RNG state.
        let mut state = 0x2545_F491_4F6C_DD1Du64;
        Image::from_fn(w, h, |_, _| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let r = ((state >> 33) % (2 * u64::from(spread) + 1)) as i64 - i64::from(spread);
            (i64::from(level) + r) as u16
        })
    }

    fn std_dev(img: &Image<u16>) -> f64 {
        let n = img.len() as f64;
        let mean = img.as_slice().iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        (img.as_slice().iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / n).sqrt()
    }

    #[test]
    fn denoise_is_identity_on_a_constant_image() {
        let img = Image::new(64, 32, 12345u16);
        assert_eq!(wavelet_denoise(&img, 1.0), img);
    }

    #[test]
    fn denoise_shrinks_noise_and_keeps_the_mean() {
        let img = noisy_flat(128, 64, 20000, 3000);
        let out = wavelet_denoise(&img, 1.0);
        assert_eq!(out.width(), 128);
        // One decomposition level can at best halve white noise: killing
        // all three detail bands leaves the 2x2-average band, whose std
        // is sigma/2. Expect to land just above that floor.
        let ratio = std_dev(&out) / std_dev(&img);
        assert!(ratio < 0.55, "noise ratio {ratio} not near the 0.5 floor");
        assert!(ratio > 0.4, "ratio {ratio} below the 1-level floor: details leaked");
        let mean_in = img.as_slice().iter().map(|&v| f64::from(v)).sum::<f64>() / img.len() as f64;
        let mean_out = out.as_slice().iter().map(|&v| f64::from(v)).sum::<f64>() / out.len() as f64;
        assert!((mean_in - mean_out).abs() < 100.0);
    }

    #[test]
    fn clahe_stretches_low_contrast() {
        // A dim ramp occupying a tenth of the range.
        let img = Image::from_fn(128, 128, |x, _| (x * 6500 / 128) as u16);
        let out = clahe(&img, (4, 4), 4.0, 256).unwrap();
        let max_in = *img.as_slice().iter().max().unwrap();
        let max_out = *out.as_slice().iter().max().unwrap();
        assert!(max_out > 2 * max_in, "contrast not stretched: {max_in} -> {max_out}");
    }

    #[test]
    fn clahe_rejects_tile_grid_larger_than_image() {
        let img = Image::new(4, 4, 0u16);
        let err = clahe(&img, (8, 8), 2.0, 256).unwrap_err();
        assert!(err.to_string().contains("exceeds"), "{err}");
    }

    #[test]
    fn clahe_rejects_bad_bins() {
        let img = Image::new(16, 16, 0u16);
        assert!(clahe(&img, (2, 2), 2.0, 1).is_err());
        assert!(clahe(&img, (2, 2), 2.0, 70000).is_err());
    }

    #[test]
    fn enhance_is_deterministic_and_shape_preserving() {
        let slice = BScanPolar::from_image(noisy_flat(96, 48, 9000, 4000), 250.0);
        let params = EnhanceParams::default();
        let a = enhance(&slice, &params).unwrap();
        let b = enhance(&slice, &params).unwrap();
        assert_eq!(a.image(), b.image());
        assert_eq!(a.depth_count(), 96);
        assert_eq!(a.angle_count(), 48);
        assert_eq!(a.axial_position_um, 250.0);
    }
}
