//! Pattern segmentation and mask comparison.
//!
//! Both sensing paths end in a binary wall-pattern mask: the depth map
//! marks pockets as locally deeper (or dimmer) wall, the panorama marks
//! them as bright texture. Thresholds come from the minimum cross-entropy
//! criterion, picked by its classic fixed-point iteration; masks are then
//! compared by Jaccard overlap and per-pixel difference labels.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::endo::Panorama;
use crate::image::Image;
use crate::surface::SurfaceMap;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("mask shapes differ: {a_w}x{a_h} vs {b_w}x{b_h}")]
    DimMismatch { a_w: usize, a_h: usize, b_w: usize, b_h: usize },

    #[error("histogram is degenerate: {0}")]
    Degenerate(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("configuration: {0}")]
    Config(String),
}

/// Threshold a histogram by minimum cross entropy.
///
/// Bins are scored at value `bin + 1` so the zero bin contributes mass
/// without a zero logarithm. Starting from the global mean, the cut
/// moves to `(mu_a - mu_b) / (ln mu_a - ln mu_b)` — the means of the
/// classes it currently separates — until it shifts by less than half a
/// bin. Returns the last background bin `B`: a sample is foreground when
/// its bin index exceeds `B`.
pub fn li_threshold_hist(hist: &[u64]) -> Result<usize, MetricsError> {
    if hist.len() < 2 {
        return Err(MetricsError::Degenerate("histogram needs at least 2 bins".into()));
    }
    let nonzero: Vec<usize> = (0..hist.len()).filter(|&b| hist[b] > 0).collect();
    if nonzero.len() < 2 {
        return Err(MetricsError::Degenerate(
            "histogram has fewer than 2 occupied bins".into(),
        ));
    }
    let first = nonzero[0];
    let last = *nonzero.last().unwrap();

    let value = |bin: usize| (bin + 1) as f64;
    let total_mass: f64 = hist.iter().enumerate().map(|(b, &h)| h as f64 * value(b)).sum();
    let total_count: f64 = hist.iter().map(|&h| h as f64).sum();
    let mut t = total_mass / total_count;

    for _ in 0..256 {
        let mut mass_a = 0.0;
        let mut count_a = 0.0;
        let mut mass_b = 0.0;
        let mut count_b = 0.0;
        for (b, &h) in hist.iter().enumerate() {
            let h = h as f64;
            if h == 0.0 {
                continue;
            }
            if value(b) <= t {
                mass_a += h * value(b);
                count_a += h;
            } else {
                mass_b += h * value(b);
                count_b += h;
            }
        }
        // A cut past every sample can only happen transiently; nudge it
        // back inside the occupied range.
        if count_a == 0.0 {
            t = value(first);
            continue;
        }
        if count_b == 0.0 {
            t = value(last) - 1.0;
            continue;
        }
        let mu_a = mass_a / count_a;
        let mu_b = mass_b / count_b;
        let next = (mu_a - mu_b) / (mu_a.ln() - mu_b.ln());
        if !next.is_finite() {
            break;
        }
        let done = (next - t).abs() < 0.5;
        t = next;
        if done {
            break;
        }
    }

    let b = (t - 1.0).floor();
    let b = if b.is_finite() { b.max(0.0) as usize } else { first };
    Ok(b.clamp(first, last - 1))
}

/// [`li_threshold_hist`] over raw 8-bit samples; returns the threshold
/// value: foreground is `v > threshold`.
pub fn li_threshold_u8(values: &[u8]) -> Result<u8, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty("no samples to threshold".into()));
    }
    let mut hist = [0u64; 256];
    for &v in values {
        hist[v as usize] += 1;
    }
    li_threshold_hist(&hist).map(|b| b as u8)
}

/// [`li_threshold_hist`] over 16-bit samples binned by their high byte;
/// returns the threshold value: foreground is `v > threshold`.
pub fn li_threshold_u16(values: &[u16]) -> Result<u16, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty("no samples to threshold".into()));
    }
    let mut hist = [0u64; 256];
    for &v in values {
        hist[(v >> 8) as usize] += 1;
    }
    li_threshold_hist(&hist).map(|b| ((b as u16) << 8) | 0x00FF)
}

/// Where a mask came from, recorded alongside it on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSource {
    OctDepth,
    OctIntensity,
    Endo,
    GroundTruth,
}

/// A binary wall-pattern mask plus its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternMask {
    pub mask: Image<bool>,
    pub source: MaskSource,
}

impl PatternMask {
    pub fn new(mask: Image<bool>, source: MaskSource) -> Self {
        Self { mask, source }
    }

    pub fn foreground_px(&self) -> usize {
        self.mask.as_slice().iter().filter(|&&v| v).count()
    }
}

/// Which surface-map channel the segmentation thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentChannel {
    Depth,
    Intensity,
}

/// Threshold a surface map into a pattern mask.
///
/// On the depth channel pockets are the far class (`depth > cut`); on
/// the intensity channel they are the dim class by default, since deeper
/// wall returns less light. A flat channel yields an all-background mask
/// and no threshold rather than an error.
pub fn segment_surface(
    map: &SurfaceMap,
    channel: SegmentChannel,
    intensity_bright_foreground: bool,
) -> Result<(PatternMask, Option<f64>), MetricsError> {
    if map.depth_rows.is_empty() {
        return Err(MetricsError::Empty("surface map has no pixels".into()));
    }
    match channel {
        SegmentChannel::Depth => {
            let vals = map.depth_rows.as_slice();
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &v in vals {
                lo = lo.min(v);
                hi = hi.max(v);
            }
            let span = hi - lo;
            if !(span.is_finite() && span > 1e-9) {
                let mask = Image::new(map.depth_rows.width(), map.depth_rows.height(), false);
                return Ok((PatternMask::new(mask, MaskSource::OctDepth), None));
            }
            let bin_of = |v: f64| (((v - lo) / span * 256.0) as usize).min(255);
            let mut hist = [0u64; 256];
            for &v in vals {
                hist[bin_of(v)] += 1;
            }
            match li_threshold_hist(&hist) {
                Ok(b) => {
                    let mask = map.depth_rows.map(|v| bin_of(v) > b);
                    let cut = lo + (b + 1) as f64 / 256.0 * span;
                    Ok((PatternMask::new(mask, MaskSource::OctDepth), Some(cut)))
                }
                Err(MetricsError::Degenerate(_)) => {
                    let mask = Image::new(map.depth_rows.width(), map.depth_rows.height(), false);
                    Ok((PatternMask::new(mask, MaskSource::OctDepth), None))
                }
                Err(e) => Err(e),
            }
        }
        SegmentChannel::Intensity => {
            match li_threshold_u16(map.intensity.as_slice()) {
                Ok(thr) => {
                    let mask = if intensity_bright_foreground {
                        map.intensity.map(|v| v > thr)
                    } else {
                        map.intensity.map(|v| v <= thr)
                    };
                    Ok((PatternMask::new(mask, MaskSource::OctIntensity), Some(f64::from(thr))))
                }
                Err(MetricsError::Degenerate(_)) => {
                    let mask = Image::new(map.intensity.width(), map.intensity.height(), false);
                    Ok((PatternMask::new(mask, MaskSource::OctIntensity), None))
                }
                Err(e) => Err(e),
            }
        }
    }
}

/// Threshold a stitched panorama into a pattern mask. Pockets image
/// bright against the wall texture, so the default keeps the high class.
pub fn segment_panorama(
    pano: &Panorama,
    bright_foreground: bool,
) -> Result<(PatternMask, Option<f64>), MetricsError> {
    if pano.image.is_empty() {
        return Err(MetricsError::Empty("panorama has no pixels".into()));
    }
    match li_threshold_u16(pano.image.as_slice()) {
        Ok(thr) => {
            let mask = if bright_foreground {
                pano.image.map(|v| v > thr)
            } else {
                pano.image.map(|v| v <= thr)
            };
            Ok((PatternMask::new(mask, MaskSource::Endo), Some(f64::from(thr))))
        }
        Err(MetricsError::Degenerate(_)) => {
            let mask = Image::new(pano.image.width(), pano.image.height(), false);
            Ok((PatternMask::new(mask, MaskSource::Endo), None))
        }
        Err(e) => Err(e),
    }
}

/// Overlap summary between two masks of equal shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub jaccard: f64,
    pub intersection_px: u64,
    pub union_px: u64,
    pub a_px: u64,
    pub b_px: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub threshold_used: Option<f64>,
}

/// Jaccard overlap `|A intersect B| / |A union B|`; two empty masks
/// count as perfect agreement.
pub fn jaccard(a: &PatternMask, b: &PatternMask) -> Result<MetricsReport, MetricsError> {
    check_dims(&a.mask, &b.mask)?;
    let mut inter = 0u64;
    let mut union = 0u64;
    let mut a_px = 0u64;
    let mut b_px = 0u64;
    for (&va, &vb) in a.mask.as_slice().iter().zip(b.mask.as_slice()) {
        a_px += u64::from(va);
        b_px += u64::from(vb);
        inter += u64::from(va && vb);
        union += u64::from(va || vb);
    }
    let jaccard = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
    Ok(MetricsReport {
        jaccard,
        intersection_px: inter,
        union_px: union,
        a_px,
        b_px,
        threshold_used: None,
    })
}

/// Meaning of each label value in a difference image.
pub const DIFFERENCE_LEGEND: &str = "0=neither 1=a_only 2=b_only 3=both";

/// Per-pixel agreement labels between two masks (see
/// [`DIFFERENCE_LEGEND`]).
pub fn difference_image(a: &PatternMask, b: &PatternMask) -> Result<Image<u8>, MetricsError> {
    check_dims(&a.mask, &b.mask)?;
    let w = a.mask.width();
    let h = a.mask.height();
    let mut out = Image::new(w, h, 0u8);
    for (slot, (&va, &vb)) in
        out.as_mut_slice().iter_mut().zip(a.mask.as_slice().iter().zip(b.mask.as_slice()))
    {
        *slot = u8::from(va) | (u8::from(vb) << 1);
    }
    Ok(out)
}

/// Nearest-neighbor resample, for comparing masks built on different
/// grids. Sampling is center-aligned in both axes.
pub fn resample_mask(mask: &Image<bool>, width: usize, height: usize) -> Result<Image<bool>, MetricsError> {
    if width == 0 || height == 0 {
        return Err(MetricsError::Config("resample target must be non-empty".into()));
    }
    if mask.is_empty() {
        return Err(MetricsError::Empty("cannot resample an empty mask".into()));
    }
    let sw = mask.width() as f64;
    let sh = mask.height() as f64;
    Ok(Image::from_fn(width, height, |x, y| {
        let sx = (((x as f64 + 0.5) * sw / width as f64).floor() as usize).min(mask.width() - 1);
        let sy = (((y as f64 + 0.5) * sh / height as f64).floor() as usize).min(mask.height() - 1);
        mask.get(sx, sy)
    }))
}

fn check_dims(a: &Image<bool>, b: &Image<bool>) -> Result<(), MetricsError> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(MetricsError::DimMismatch {
            a_w: a.width(),
            a_h: a.height(),
            b_w: b.width(),
            b_h: b.height(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute-force minimum cross entropy: try every admissible cut and
    /// keep the best score.
    fn exhaustive_li(hist: &[u64]) -> usize {
        let nonzero: Vec<usize> = (0..hist.len()).filter(|&b| hist[b] > 0).collect();
        let first = nonzero[0];
        let last = *nonzero.last().unwrap();
        let mut best_b = first;
        let mut best = f64::NEG_INFINITY;
        for b in first..last {
            let (mut ma, mut ca, mut mb, mut cb) = (0.0, 0.0, 0.0, 0.0);
            for (bin, &h) in hist.iter().enumerate() {
                let x = (bin + 1) as f64;
                let h = h as f64;
                if bin <= b {
                    ma += h * x;
                    ca += h;
                } else {
                    mb += h * x;
                    cb += h;
                }
            }
            if ca == 0.0 || cb == 0.0 {
                continue;
            }
            let score = ma * (ma / ca).ln() + mb * (mb / cb).ln();
            if score > best {
                best = score;
                best_b = b;
            }
        }
        best_b
    }

    /// The classification a cut induces on the occupied bins.
    fn partition(hist: &[u64], b: usize) -> Vec<bool> {
        (0..hist.len()).filter(|&bin| hist[bin] > 0).map(|bin| bin > b).collect()
    }

    #[test]
    fn two_spikes_split_between_the_modes() {
        let mut hist = [0u64; 256];
        hist[50] = 100;
        hist[200] = 100;
        let b = li_threshold_hist(&hist).unwrap();
        assert_eq!(b, 108);
        assert_eq!(partition(&hist, b), partition(&hist, exhaustive_li(&hist)));
    }

    #[test]
    fn skewed_mixture_matches_the_exhaustive_cut() {
        // Two binomial-ish lumps of very different mass.
        let mut hist = [0u64; 256];
        for (i, h) in [(30usize, 400u64), (35, 900), (40, 1400), (45, 900), (50, 400)] {
            hist[i] = h;
        }
        for (i, h) in [(180usize, 40u64), (190, 90), (200, 140), (210, 90), (220, 40)] {
            hist[i] = h;
        }
        let b = li_threshold_hist(&hist).unwrap();
        assert_eq!(partition(&hist, b), partition(&hist, exhaustive_li(&hist)));
    }

    #[test]
    fn single_occupied_bin_is_degenerate() {
        let mut hist = [0u64; 256];
        hist[77] = 1000;
        assert!(matches!(li_threshold_hist(&hist), Err(MetricsError::Degenerate(_))));
    }

    #[test]
    fn byte_and_word_thresholds_agree_on_scaled_data() {
        let bytes: Vec<u8> = (0..500).map(|i| if i % 3 == 0 { 40 } else { 210 }).collect();
        let words: Vec<u16> = bytes.iter().map(|&b| (u16::from(b) << 8) | 0x80).collect();
        let tb = li_threshold_u8(&bytes).unwrap();
        let tw = li_threshold_u16(&words).unwrap();
        assert_eq!(tw >> 8, u16::from(tb));
        // The reported values really separate the two populations.
        assert!(40 < tb && tb < 210);
        assert!(words.iter().all(|&w| (w > tw) == (w >> 8 > u16::from(tb))));
    }

    #[test]
    fn jaccard_counts_and_empty_convention() {
        let a = PatternMask::new(
            Image::from_vec(2, 2, vec![true, true, false, false]).unwrap(),
            MaskSource::GroundTruth,
        );
        let b = PatternMask::new(
            Image::from_vec(2, 2, vec![true, false, true, false]).unwrap(),
            MaskSource::OctDepth,
        );
        let r = jaccard(&a, &b).unwrap();
        assert_eq!(r.intersection_px, 1);
        assert_eq!(r.union_px, 3);
        assert!((r.jaccard - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!((r.a_px, r.b_px), (2, 2));

        let empty = PatternMask::new(Image::new(2, 2, false), MaskSource::Endo);
        assert_eq!(jaccard(&empty, &empty).unwrap().jaccard, 1.0);

        let odd = PatternMask::new(Image::new(3, 2, false), MaskSource::Endo);
        assert!(matches!(jaccard(&a, &odd), Err(MetricsError::DimMismatch { .. })));
    }

    #[test]
    fn difference_labels_cover_all_four_cases() {
        let a = PatternMask::new(
            Image::from_vec(4, 1, vec![false, true, false, true]).unwrap(),
            MaskSource::OctDepth,
        );
        let b = PatternMask::new(
            Image::from_vec(4, 1, vec![false, false, true, true]).unwrap(),
            MaskSource::Endo,
        );
        let d = difference_image(&a, &b).unwrap();
        assert_eq!(d.as_slice(), &[0, 1, 2, 3]);
    }

    #[test]
    fn depth_segmentation_finds_the_deep_blob() {
        use crate::surface::SurfaceMap;
        let mut depth = Image::new(16, 8, 200.0f64);
        for y in 2..5 {
            for x in 4..9 {
                depth.set(x, y, 262.0);
            }
        }
        let map = SurfaceMap {
            depth_rows: depth,
            intensity: Image::new(16, 8, 30000u16),
            valid: Image::new(16, 8, true),
            depth_resolution_um: 10.0,
            pullback_step_um: 100.0,
        };
        let (mask, thr) = segment_surface(&map, SegmentChannel::Depth, false).unwrap();
        let cut = thr.unwrap();
        assert!(cut > 200.0 && cut < 262.0, "cut = {cut}");
        assert_eq!(mask.foreground_px(), 15);
        assert!(mask.mask.get(5, 3));
        assert!(!mask.mask.get(0, 0));
    }

    #[test]
    fn flat_maps_segment_to_all_background() {
        let map = SurfaceMap {
            depth_rows: Image::new(8, 4, 150.0f64),
            intensity: Image::new(8, 4, 20000u16),
            valid: Image::new(8, 4, true),
            depth_resolution_um: 10.0,
            pullback_step_um: 100.0,
        };
        let (mask, thr) = segment_surface(&map, SegmentChannel::Depth, false).unwrap();
        assert!(thr.is_none());
        assert_eq!(mask.foreground_px(), 0);
        let (mask, thr) = segment_surface(&map, SegmentChannel::Intensity, false).unwrap();
        assert!(thr.is_none());
        assert_eq!(mask.foreground_px(), 0);
    }

    #[test]
    fn intensity_polarity_defaults_to_dim_foreground() {
        let mut intensity = Image::new(10, 10, 40000u16);
        for x in 0..3 {
            intensity.set(x, 0, 9000);
        }
        let map = SurfaceMap {
            depth_rows: Image::new(10, 10, 200.0f64),
            intensity,
            valid: Image::new(10, 10, true),
            depth_resolution_um: 10.0,
            pullback_step_um: 100.0,
        };
        let (dim, _) = segment_surface(&map, SegmentChannel::Intensity, false).unwrap();
        assert_eq!(dim.foreground_px(), 3);
        assert!(dim.mask.get(0, 0));
        let (bright, _) = segment_surface(&map, SegmentChannel::Intensity, true).unwrap();
        assert_eq!(bright.foreground_px(), 97);
    }

    #[test]
    fn resample_preserves_blocks_under_upscale() {
        let mask = Image::from_vec(2, 1, vec![true, false]).unwrap();
        let up = resample_mask(&mask, 6, 2).unwrap();
        for y in 0..2 {
            for x in 0..6 {
                assert_eq!(up.get(x, y), x < 3, "({x},{y})");
            }
        }
        let same = resample_mask(&mask, 2, 1).unwrap();
        assert_eq!(same, mask);
    }

    proptest! {
        #[test]
        fn jaccard_is_symmetric_bounded_and_consistent(
            bits_a in proptest::collection::vec(any::<bool>(), 24),
            bits_b in proptest::collection::vec(any::<bool>(), 24),
        ) {
            let a = PatternMask::new(Image::from_vec(6, 4, bits_a).unwrap(), MaskSource::OctDepth);
            let b = PatternMask::new(Image::from_vec(6, 4, bits_b).unwrap(), MaskSource::Endo);
            let ab = jaccard(&a, &b).unwrap();
            let ba = jaccard(&b, &a).unwrap();
            prop_assert_eq!(ab.jaccard, ba.jaccard);
            prop_assert!((0.0..=1.0).contains(&ab.jaccard));
            prop_assert_eq!(jaccard(&a, &a).unwrap().jaccard, 1.0);

            let d = difference_image(&a, &b).unwrap();
            let both = d.as_slice().iter().filter(|&&v| v == 3).count() as u64;
            let only = d.as_slice().iter().filter(|&&v| v == 1 || v == 2).count() as u64;
            prop_assert_eq!(both, ab.intersection_px);
            prop_assert_eq!(both + only, ab.union_px);
        }
    }
}
