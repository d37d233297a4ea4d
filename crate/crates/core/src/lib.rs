//! Catheter-based OCT desk scanner: phantom simulation and reconstruction.
//!
//! The crate models a rotational OCT probe pulled back through the drilled
//! hole of a resin phantom. Each rotation yields a polar B-scan (angle
//! columns by depth rows); the pullback yields a stack of such slices. The
//! processing chain undoes the eccentric-probe distortion (the capillary
//! glass border traces a one-period sinusoid across each slice), collapses
//! every slice to a 1D wall-depth signal, stacks those signals into a 2D
//! surface map of the hole wall, and segments the milled pocket pattern so
//! it can be scored against ground truth or against a stitched panorama
//! from a forward-viewing endoscope.
//!
//! Module map:
//!
//! * [`image`]   - flat 2D containers shared by every stage
//! * [`phantom`] - phantom geometry and the OCT slice simulator
//! * [`io`]      - PGM and stack-directory readers/writers
//! * [`undistort`] - enhancement, border detection, RANSAC sinusoid fit, unwarp
//! * [`surface`] - depth extraction, surface map stacking, volume assembly
//! * [`endo`]    - annulus-camera frames, unrolling, panorama stitching
//! * [`metrics`] - minimum cross-entropy threshold, masks, Jaccard scoring
//! * [`pipeline`] - staged end-to-end runs over an output directory

pub mod endo;
pub mod image;
pub mod io;
pub mod metrics;
pub mod phantom;
pub mod pipeline;
pub mod surface;
pub mod undistort;

pub use endo::{
    simulate_endo_frames, stitch, unroll_frame, unroll_rows, AnnulusFrame, EndoConfig, EndoError,
    Panorama,
};
pub use image::Image;
pub use io::{FormatError, StackMeta};
pub use metrics::{
    difference_image, jaccard, li_threshold_hist, li_threshold_u16, li_threshold_u8, resample_mask,
    segment_panorama, segment_surface, MaskSource, MetricsError, MetricsReport, PatternMask,
    SegmentChannel, DIFFERENCE_LEGEND,
};
pub use phantom::{
    build_phantom, simulate_oct, AcquisitionConfig, BScanPolar, GeometryMeta, GroundTruth,
    NoiseConfig, PhantomError, PhantomGeometry, PhantomModel, Pocket, PocketKind, VolumeStack,
};
pub use pipeline::{
    run_compare, run_endostitch, run_pipeline, run_segment, run_simulate, run_surface,
    run_undistort, run_volume, PipelineConfig, PipelineError, PipelineReport, StageEvent,
};
pub use surface::{
    build_volume, crop_below_border, default_min_peak, extract_depth, stack_surface, ColumnSignal,
    HollowCylinderVolume, SurfaceError, SurfaceMap,
};
pub use undistort::{
    binarize_border, enhance, fit_sine, unwarp, BinarizeParams, EnhanceParams, FitError, FitReport,
    Interp, RansacParams, SineModel, SliceFit, UndistortError,
};
