//! Staged end-to-end runs over one working directory.
//!
//! Every stage reads its inputs from, and writes its outputs under, a
//! single output directory, so the chain can run as one call or be
//! re-entered per stage from the command line:
//!
//! ```text
//! out/
//!   config.json        resolved configuration snapshot
//!   raw/               simulated polar stack (with geometry + seed)
//!   truth/             ground-truth mask, wall depth, border parameters
//!   undistorted/       enhanced, unwarped stack for inspection
//!   fits.json          per-slice border fits
//!   surface/           stacked wall surface map
//!   volume/            cropped hollow-cylinder volume
//!   endo/              annulus frames and the stitched panorama
//!   masks/             segmented pattern masks
//!   compare/           overlap reports and difference images
//!   report.json        run summary
//! ```
//!
//! Stages report progress through a caller-supplied event sink; the
//! library itself never prints.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

use crate::endo::{
    simulate_endo_frames, stitch, unroll_frame, EndoConfig, EndoError, Panorama,
};
use crate::io::{octv, pgm, surface_map, FormatError};
use crate::metrics::{
    difference_image, jaccard, resample_mask, segment_panorama, segment_surface, MaskSource,
    MetricsError, MetricsReport, PatternMask, SegmentChannel, DIFFERENCE_LEGEND,
};
use crate::phantom::{
    build_phantom, simulate_oct, AcquisitionConfig, GroundTruth, PhantomError, PhantomModel,
    VolumeStack,
};
use crate::surface::{
    build_volume, crop_below_border, default_min_peak, extract_depth, stack_surface,
    HollowCylinderVolume, SurfaceError, SurfaceMap,
};
use crate::undistort::{
    binarize_border, enhance, fit_sine, unwarp, BinarizeParams, EnhanceParams, FitError, Interp,
    RansacParams, SliceFit, UndistortError,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Phantom(#[from] PhantomError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Undistort(#[from] UndistortError),
    #[error(transparent)]
    Surface(#[from] SurfaceError),
    #[error(transparent)]
    Endo(#[from] EndoError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("slice {slice}: border fit failed: {source}")]
    SliceFit { slice: usize, source: FitError },
    #[error("configuration: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl PipelineError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }
}

/// Mask channel and polarity choices for the segmentation stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationConfig {
    /// Which surface-map channel to threshold.
    pub channel: SegmentChannel,
    /// Treat bright surface-map intensity as foreground (pockets image
    /// dim on the intensity channel, so the default keeps the low class).
    pub intensity_bright_foreground: bool,
    /// Treat bright panorama pixels as foreground (pockets image bright).
    pub endo_bright_foreground: bool,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            channel: SegmentChannel::Depth,
            intensity_bright_foreground: false,
            endo_bright_foreground: true,
        }
    }
}

/// Full run configuration. Every field has a default, so a config file
/// only needs the values it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed; when set it re-seeds acquisition noise, the annulus
    /// camera, and the border fit deterministically.
    pub seed: Option<u64>,
    /// Worker threads; 0 keeps the library default.
    pub parallel: usize,
    /// Default output directory, overridable on the command line.
    pub out_dir: Option<PathBuf>,
    pub phantom: PhantomModel,
    pub acquisition: AcquisitionConfig,
    pub endo: EndoConfig,
    pub enhance: EnhanceParams,
    pub binarize: BinarizeParams,
    pub ransac: RansacParams,
    /// Rows to skip below the fitted border before looking for the wall.
    pub crop_margin: u32,
    /// Angle columns of each unrolled annulus stripe.
    pub unroll_columns: usize,
    pub segmentation: SegmentationConfig,
    /// Use best-effort border models for slices the fit rejected instead
    /// of stopping.
    pub allow_rejected_fits: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: None,
            parallel: 0,
            out_dir: None,
            phantom: PhantomModel::default(),
            acquisition: AcquisitionConfig::desk_default(),
            endo: EndoConfig::default(),
            enhance: EnhanceParams::default(),
            binarize: BinarizeParams::default(),
            ransac: RansacParams::default(),
            crop_margin: 8,
            unroll_columns: 720,
            segmentation: SegmentationConfig::default(),
            allow_rejected_fits: false,
        }
    }
}

impl PipelineConfig {
    /// Apply the master seed to every seeded stage. Idempotent, so
    /// stages can resolve an already-resolved configuration freely.
    pub fn resolved(&self) -> Self {
        let mut cfg = self.clone();
        if let Some(s) = cfg.seed {
            cfg.acquisition.noise.seed = s;
            cfg.endo.seed = s ^ 0x454e_444f; // distinct stream per stage
            cfg.ransac.seed = s ^ 0x4649_545f;
        }
        cfg
    }
}

/// Progress notification emitted at stage boundaries.
#[derive(Debug, Clone, Serialize)]
pub struct StageEvent {
    pub stage: &'static str,
    /// `"started"`, `"finished"`, or `"failed"`.
    pub status: &'static str,
    pub elapsed_ms: u128,
    pub detail: String,
}

type Events<'a> = &'a mut (dyn FnMut(&StageEvent) + Send);

fn emit(events: Events, stage: &'static str, status: &'static str, elapsed_ms: u128, detail: String) {
    events(&StageEvent { stage, status, elapsed_ms, detail });
}

fn finish<T>(
    events: Events,
    stage: &'static str,
    t0: Instant,
    result: Result<T, PipelineError>,
    detail: impl FnOnce(&T) -> String,
) -> Result<T, PipelineError> {
    let elapsed = t0.elapsed().as_millis();
    match &result {
        Ok(v) => emit(events, stage, "finished", elapsed, detail(v)),
        Err(e) => emit(events, stage, "failed", elapsed, e.to_string()),
    }
    result
}

/// Run a closure on a dedicated rayon pool of `parallel` threads, or on
/// the default pool when `parallel` is 0.
pub fn with_pool<T: Send>(
    parallel: usize,
    f: impl FnOnce() -> T + Send,
) -> Result<T, PipelineError> {
    if parallel == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel)
        .build()
        .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| PipelineError::Config(format!("serializing {}: {e}", path.display())))?;
    fs::write(path, text + "\n").map_err(|e| PipelineError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| FormatError::Json { path: path.to_path_buf(), source: e }.into())
}

/// Simulate the scan and write `raw/` plus `truth/`.
pub fn run_simulate(
    cfg: &PipelineConfig,
    out: &Path,
    events: Events,
) -> Result<(VolumeStack, GroundTruth), PipelineError> {
    emit(events, "simulate", "started", 0, String::new());
    let t0 = Instant::now();
    let result = (|| {
        let cfg = cfg.resolved();
        let geom = build_phantom(&cfg.phantom)?;
        let (stack, truth) = simulate_oct(&geom, &cfg.acquisition)?;
        octv::write_stack(&out.join("raw"), &stack)?;

        let truth_dir = out.join("truth");
        fs::create_dir_all(&truth_dir).map_err(|e| PipelineError::io(&truth_dir, e))?;
        pgm::write_mask(&truth_dir.join("pattern_mask.pgm"), &truth.pattern_mask)?;
        let depth_px = truth.surface_depth_um.map(|v| {
            if v.is_finite() { v.round().clamp(0.0, 65535.0) as u16 } else { 65535 }
        });
        pgm::write_pgm_u16(&truth_dir.join("surface_depth_um.pgm"), &depth_px)?;
        write_json(&truth_dir.join("sine_params.json"), &truth.sine_params)?;
        Ok((stack, truth))
    })();
    finish(events, "simulate", t0, result, |(stack, _)| {
        format!(
            "slices={} columns={} depth={}",
            stack.slices.len(),
            stack.angle_count(),
            stack.depth_count()
        )
    })
}

/// Detection band around the capillary outer interface, derived from the
/// recorded geometry when the configuration does not pin one.
fn border_band(cfg: &PipelineConfig, stack: &VolumeStack) -> Option<(u32, u32)> {
    if cfg.binarize.band.is_some() {
        return cfg.binarize.band;
    }
    let g = stack.geometry.as_ref()?;
    let delta = stack.depth_resolution_um;
    let center = (g.capillary_outer_radius_um + g.glass_index_shift_um) / delta;
    // Drift rotates the border phase but never its amplitude, so the
    // eccentricity alone bounds how far the border can stray.
    let sway = g.eccentricity_um / delta + 8.0;
    let lo = (center - sway).floor().max(0.0) as u32;
    let hi = ((center + sway).ceil().max(0.0) as u32).min(stack.depth_count() as u32);
    (lo < hi).then_some((lo, hi))
}

/// Enhance, detect, and fit the border of every raw slice; write the
/// unwarped enhanced stack and `fits.json`.
pub fn run_undistort(cfg: &PipelineConfig, out: &Path, events: Events) -> Result<Vec<SliceFit>, PipelineError> {
    emit(events, "undistort", "started", 0, String::new());
    let t0 = Instant::now();
    let result = (|| {
        let cfg = cfg.resolved();
        let stack = octv::read_stack(&out.join("raw"))?;
        let mut binarize = cfg.binarize.clone();
        binarize.band = border_band(&cfg, &stack);
        let span = stack.angle_count();

        let per_slice: Vec<(crate::phantom::BScanPolar, SliceFit)> = stack
            .slices
            .par_iter()
            .enumerate()
            .map(|(s, slice)| {
                let enhanced = enhance(slice, &cfg.enhance)?;
                let points = binarize_border(&enhanced, &binarize)?;
                let points: Vec<(f64, f64)> =
                    points.iter().map(|&(u, v)| (f64::from(u), f64::from(v))).collect();
                let params = RansacParams { seed: cfg.ransac.seed ^ s as u64, ..cfg.ransac.clone() };
                let fit = match fit_sine(&points, span, &params) {
                    Ok(report) => SliceFit { report, accepted: true },
                    Err(FitError::Rejected { report, .. }) => {
                        SliceFit { report: *report, accepted: false }
                    }
                    Err(source) => return Err(PipelineError::SliceFit { slice: s, source }),
                };
                let flat = unwarp(&enhanced, &fit.report.model, Interp::Linear);
                Ok((flat, fit))
            })
            .collect::<Result<_, _>>()?;

        let (flattened, fits): (Vec<_>, Vec<_>) = per_slice.into_iter().unzip();
        let aligned = VolumeStack {
            slices: flattened,
            depth_resolution_um: stack.depth_resolution_um,
            pullback_step_um: stack.pullback_step_um,
            geometry: None,
            seed: stack.seed,
        };
        octv::write_stack(&out.join("undistorted"), &aligned)?;
        write_json(&out.join("fits.json"), &fits)?;
        Ok(fits)
    })();
    finish(events, "undistort", t0, result, |fits| {
        let accepted = fits.iter().filter(|f| f.accepted).count();
        format!("accepted={accepted}/{}", fits.len())
    })
}

fn load_fits(out: &Path, slices: usize, allow_rejected: bool) -> Result<Vec<SliceFit>, PipelineError> {
    let fits: Vec<SliceFit> = read_json(&out.join("fits.json"))?;
    if fits.len() != slices {
        return Err(SurfaceError::FitCount { fits: fits.len(), slices }.into());
    }
    let rejected: Vec<usize> =
        fits.iter().enumerate().filter(|(_, f)| !f.accepted).map(|(i, _)| i).collect();
    if !rejected.is_empty() && !allow_rejected {
        return Err(
            SurfaceError::RejectedSlices { count: rejected.len(), first: rejected[0] }.into()
        );
    }
    Ok(fits)
}

/// Unwarp the raw slices, collapse each to a wall-depth signal, and
/// write the stacked surface map.
///
/// Depth extraction runs on the raw (not enhanced) slices: contrast
/// equalization reshuffles intensities locally, and the wall peak needs
/// its physical brightness for the projection to be trustworthy.
pub fn run_surface(cfg: &PipelineConfig, out: &Path, events: Events) -> Result<SurfaceMap, PipelineError> {
    emit(events, "surface", "started", 0, String::new());
    let t0 = Instant::now();
    let result = (|| {
        let cfg = cfg.resolved();
        let stack = octv::read_stack(&out.join("raw"))?;
        let fits = load_fits(out, stack.slices.len(), cfg.allow_rejected_fits)?;

        let per_slice: Vec<(crate::surface::ColumnSignal, u32)> = stack
            .slices
            .par_iter()
            .zip(&fits)
            .map(|(slice, fit)| {
                let flat = unwarp(slice, &fit.report.model, Interp::Linear);
                let border = fit.report.model.d.round().max(0.0) as u32;
                let cropped = crop_below_border(&flat, border, cfg.crop_margin)?;
                let min_peak = default_min_peak(&cropped);
                Ok((extract_depth(&cropped, min_peak), border + cfg.crop_margin))
            })
            .collect::<Result<_, PipelineError>>()?;

        let (signals, starts): (Vec<_>, Vec<_>) = per_slice.into_iter().unzip();
        let map =
            stack_surface(&signals, &starts, stack.depth_resolution_um, stack.pullback_step_um)?;
        surface_map::write_surface_map(&out.join("surface"), &map)?;
        Ok(map)
    })();
    finish(events, "surface", t0, result, |map| {
        let total = map.valid.len();
        let valid = map.valid.as_slice().iter().filter(|&&v| v).count();
        format!("columns_valid={valid}/{total}")
    })
}

/// Assemble and write the cropped hollow-cylinder volume.
pub fn run_volume(
    cfg: &PipelineConfig,
    out: &Path,
    events: Events,
) -> Result<HollowCylinderVolume, PipelineError> {
    emit(events, "volume", "started", 0, String::new());
    let t0 = Instant::now();
    let result = (|| {
        let cfg = cfg.resolved();
        let stack = octv::read_stack(&out.join("raw"))?;
        let fits = load_fits(out, stack.slices.len(), cfg.allow_rejected_fits)?;
        let vol = build_volume(&stack, &fits, cfg.crop_margin, cfg.allow_rejected_fits)?;
        octv::write_volume(&out.join("volume"), &vol)?;
        Ok(vol)
    })();
    finish(events, "volume", t0, result, |vol| {
        format!("voxels={}x{}x{}", vol.slice_count, vol.angle_columns, vol.depth_rows)
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EndoMeta {
    format: String,
    frame_count: usize,
    unroll_columns: usize,
    feed_step_um: f64,
    um_per_row: f64,
    row_z_um: Vec<f64>,
}

const ENDO_TAG: &str = "octds-endo-1";

/// Simulate the annulus camera, unroll every frame, and write the
/// stitched panorama.
pub fn run_endostitch(cfg: &PipelineConfig, out: &Path, events: Events) -> Result<Panorama, PipelineError> {
    emit(events, "endostitch", "started", 0, String::new());
    let t0 = Instant::now();
    let result = (|| {
        let cfg = cfg.resolved();
        let geom = build_phantom(&cfg.phantom)?;
        let frames = simulate_endo_frames(&geom, &cfg.endo)?;

        let endo_dir = out.join("endo");
        fs::create_dir_all(&endo_dir).map_err(|e| PipelineError::io(&endo_dir, e))?;
        let mut stripes = Vec::with_capacity(frames.len());
        for (i, frame) in frames.iter().enumerate() {
            pgm::write_pgm_u16(&endo_dir.join(format!("frame_{i:05}.pgm")), &frame.image)?;
            stripes.push(unroll_frame(frame, cfg.unroll_columns)?);
        }
        let rows = stripes[0].height();
        let um_per_row = frames[0].axial_window_um / (rows - 1) as f64;
        let pano = stitch(&stripes, cfg.endo.feed_step_um, um_per_row)?;

        pgm::write_pgm_u16(&endo_dir.join("panorama.pgm"), &pano.image)?;
        write_json(
            &endo_dir.join("meta.json"),
            &EndoMeta {
                format: ENDO_TAG.into(),
                frame_count: frames.len(),
                unroll_columns: cfg.unroll_columns,
                feed_step_um: cfg.endo.feed_step_um,
                um_per_row: pano.um_per_row,
                row_z_um: pano.row_z_um.clone(),
            },
        )?;
        Ok(pano)
    })();
    finish(events, "endostitch", t0, result, |pano| {
        format!("panorama={}x{}", pano.image.width(), pano.image.height())
    })
}

fn read_panorama(out: &Path) -> Result<Panorama, PipelineError> {
    let endo_dir = out.join("endo");
    let meta: EndoMeta = read_json(&endo_dir.join("meta.json"))?;
    if meta.format != ENDO_TAG {
        return Err(FormatError::FormatTag { found: meta.format }.into());
    }
    let image = match pgm::read_pgm(&endo_dir.join("panorama.pgm"))? {
        pgm::PgmImage::U16(img) => img,
        pgm::PgmImage::U8(img) => img.map(|v| u16::from(v) << 8),
    };
    Ok(Panorama { image, row_z_um: meta.row_z_um, um_per_row: meta.um_per_row })
}

/// Threshold summary for one produced mask.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskInfo {
    pub source: MaskSource,
    pub file: String,
    pub threshold: Option<f64>,
    pub foreground_px: usize,
}

/// Segment the surface map (and the panorama, when present) into masks.
pub fn run_segment(cfg: &PipelineConfig, out: &Path, events: Events) -> Result<Vec<MaskInfo>, PipelineError> {
    emit(events, "segment", "started", 0, String::new());
    let t0 = Instant::now();
    let result = (|| {
        let cfg = cfg.resolved();
        let masks_dir = out.join("masks");
        fs::create_dir_all(&masks_dir).map_err(|e| PipelineError::io(&masks_dir, e))?;
        let mut infos = Vec::new();

        let map = surface_map::read_surface_map(&out.join("surface"))?;
        let (mask, threshold) = segment_surface(
            &map,
            cfg.segmentation.channel,
            cfg.segmentation.intensity_bright_foreground,
        )?;
        pgm::write_mask(&masks_dir.join("oct_mask.pgm"), &mask.mask)?;
        infos.push(MaskInfo {
            source: mask.source,
            file: "masks/oct_mask.pgm".into(),
            threshold,
            foreground_px: mask.foreground_px(),
        });

        if out.join("endo").join("meta.json").exists() {
            let pano = read_panorama(out)?;
            let (mask, threshold) =
                segment_panorama(&pano, cfg.segmentation.endo_bright_foreground)?;
            pgm::write_mask(&masks_dir.join("endo_mask.pgm"), &mask.mask)?;
            infos.push(MaskInfo {
                source: mask.source,
                file: "masks/endo_mask.pgm".into(),
                threshold,
                foreground_px: mask.foreground_px(),
            });
        }
        write_json(&masks_dir.join("meta.json"), &infos)?;
        Ok(infos)
    })();
    finish(events, "segment", t0, result, |infos| {
        let parts: Vec<String> =
            infos.iter().map(|i| format!("{:?}={}px", i.source, i.foreground_px)).collect();
        parts.join(" ")
    })
}

/// One mask-vs-mask overlap result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareEntry {
    pub a: MaskSource,
    pub b: MaskSource,
    pub report: MetricsReport,
    pub difference_file: String,
}

fn source_tag(s: MaskSource) -> &'static str {
    match s {
        MaskSource::OctDepth | MaskSource::OctIntensity => "oct",
        MaskSource::Endo => "endo",
        MaskSource::GroundTruth => "truth",
    }
}

/// Compare the pattern masks pairwise on the grid of the first mask;
/// the second is resampled nearest-neighbor when shapes differ.
fn compare_pair(
    dir: &Path,
    a: &PatternMask,
    b: &PatternMask,
    threshold: Option<f64>,
) -> Result<CompareEntry, PipelineError> {
    let b_on_a = if b.mask.width() == a.mask.width() && b.mask.height() == a.mask.height() {
        b.clone()
    } else {
        PatternMask::new(resample_mask(&b.mask, a.mask.width(), a.mask.height())?, b.source)
    };
    let mut report = jaccard(a, &b_on_a)?;
    report.threshold_used = threshold;
    let diff = difference_image(a, &b_on_a)?;
    let name = format!("diff_{}_vs_{}.pgm", source_tag(a.source), source_tag(b.source));
    // Spread the four labels across the 8-bit range for viewing.
    pgm::write_pgm_u8(&dir.join(&name), &diff.map(|v| v * 85))?;
    Ok(CompareEntry {
        a: a.source,
        b: b.source,
        report,
        difference_file: format!("compare/{name}"),
    })
}

/// Score every available mask pair and write `compare/report.json`.
pub fn run_compare(cfg: &PipelineConfig, out: &Path, events: Events) -> Result<Vec<CompareEntry>, PipelineError> {
    emit(events, "compare", "started", 0, String::new());
    let t0 = Instant::now();
    let result = (|| {
        let cfg = cfg.resolved();
        let dir = out.join("compare");
        fs::create_dir_all(&dir).map_err(|e| PipelineError::io(&dir, e))?;

        let oct_source = match cfg.segmentation.channel {
            SegmentChannel::Depth => MaskSource::OctDepth,
            SegmentChannel::Intensity => MaskSource::OctIntensity,
        };
        let masks_meta: Vec<MaskInfo> = read_json(&out.join("masks").join("meta.json"))?;
        let threshold_of = |s: MaskSource| {
            masks_meta.iter().find(|m| m.source == s).and_then(|m| m.threshold)
        };

        let oct = PatternMask::new(
            pgm::read_mask(&out.join("masks").join("oct_mask.pgm"))?,
            oct_source,
        );
        let endo_path = out.join("masks").join("endo_mask.pgm");
        let endo = endo_path
            .exists()
            .then(|| pgm::read_mask(&endo_path).map(|m| PatternMask::new(m, MaskSource::Endo)))
            .transpose()?;
        let truth_path = out.join("truth").join("pattern_mask.pgm");
        let truth = truth_path
            .exists()
            .then(|| {
                pgm::read_mask(&truth_path).map(|m| PatternMask::new(m, MaskSource::GroundTruth))
            })
            .transpose()?;

        let mut entries = Vec::new();
        if let Some(truth) = &truth {
            entries.push(compare_pair(&dir, &oct, truth, threshold_of(oct.source))?);
            if let Some(endo) = &endo {
                entries.push(compare_pair(&dir, endo, truth, threshold_of(MaskSource::Endo))?);
            }
        }
        if let Some(endo) = &endo {
            entries.push(compare_pair(&dir, &oct, endo, threshold_of(oct.source))?);
        }
        if entries.is_empty() {
            return Err(PipelineError::Config(
                "nothing to compare: need at least two of oct mask, endo mask, ground truth".into(),
            ));
        }

        #[derive(Serialize)]
        struct CompareReport<'a> {
            legend: &'static str,
            entries: &'a [CompareEntry],
        }
        write_json(&dir.join("report.json"), &CompareReport { legend: DIFFERENCE_LEGEND, entries: &entries })?;
        Ok(entries)
    })();
    finish(events, "compare", t0, result, |entries| {
        let parts: Vec<String> = entries
            .iter()
            .map(|e| {
                format!("{}_vs_{}={:.4}", source_tag(e.a), source_tag(e.b), e.report.jaccard)
            })
            .collect();
        parts.join(" ")
    })
}

/// Summary of a full pipeline run, also written to `report.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineReport {
    pub slice_count: usize,
    pub angle_columns: usize,
    pub depth_samples: usize,
    pub accepted_fits: usize,
    pub rejected_slices: Vec<usize>,
    pub masks: Vec<MaskInfo>,
    pub comparisons: Vec<CompareEntry>,
    pub total_ms: u128,
}

/// Run every stage in order under `out`.
pub fn run_pipeline(
    cfg: &PipelineConfig,
    out: &Path,
    events: Events,
) -> Result<PipelineReport, PipelineError> {
    let cfg = cfg.resolved();
    let t0 = Instant::now();
    fs::create_dir_all(out).map_err(|e| PipelineError::io(out, e))?;
    write_json(&out.join("config.json"), &cfg)?;

    with_pool(cfg.parallel, move || -> Result<PipelineReport, PipelineError> {
        let (stack, _truth) = run_simulate(&cfg, out, events)?;
        let fits = run_undistort(&cfg, out, events)?;
        run_surface(&cfg, out, events)?;
        run_volume(&cfg, out, events)?;
        run_endostitch(&cfg, out, events)?;
        let masks = run_segment(&cfg, out, events)?;
        let comparisons = run_compare(&cfg, out, events)?;

        let report = PipelineReport {
            slice_count: stack.slices.len(),
            angle_columns: stack.angle_count(),
            depth_samples: stack.depth_count(),
            accepted_fits: fits.iter().filter(|f| f.accepted).count(),
            rejected_slices: fits
                .iter()
                .enumerate()
                .filter(|(_, f)| !f.accepted)
                .map(|(i, _)| i)
                .collect(),
            masks,
            comparisons,
            total_ms: t0.elapsed().as_millis(),
        };
        write_json(&out.join("report.json"), &report)?;
        Ok(report)
    })?
}
