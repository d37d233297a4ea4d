//! Drilled-phantom geometry and the rotational OCT pullback simulator.
//!
//! The phantom is a resin block with a cylindrical hole along z. Milled
//! pockets (spherical or cylindrical voids) breach the hole wall and form
//! the pattern every downstream stage tries to recover. A catheter probe
//! spins inside a glass capillary seated in the hole; one rotation yields a
//! polar B-scan of `a_scans_per_rotation` columns by `depth_samples` rows,
//! and the pullback yields one such slice every `pullback_step_um`.
//!
//! The probe axis sits `eccentricity_um` away from the capillary axis, so
//! every interface appears at `true_radius - e*cos(theta - phase)` along
//! the beam. The simulator renders interfaces at exactly this first-order
//! depth, which makes the capillary border of every slice an exact
//! one-period sinusoid in the column index; that is the distortion model
//! the fitting stage inverts, and higher-order chord corrections are out
//! of scope by definition of the imaging model.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};
use thiserror::Error;

use crate::image::Image;
use crate::undistort::SineModel;

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("invalid phantom model: {0}")]
    Model(String),

    #[error("invalid acquisition config: {0}")]
    Config(String),

    #[error("phantom and acquisition are incompatible: {0}")]
    Incompatible(String),
}

/// Kind of milled void.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PocketKind {
    Sphere,
    /// Infinite cylinder; the pocket is its intersection with the block.
    Cylinder,
}

/// One milled void. Coordinates are Cartesian micrometers with the hole
/// axis along +z, z = 0 at the pullback start, and x pointing at angle 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pocket {
    pub kind: PocketKind,
    pub center_um: [f64; 3],
    /// Cylinder axis direction; ignored for spheres. Normalized at build.
    #[serde(default = "default_axis")]
    pub axis: [f64; 3],
    pub radius_um: f64,
}

fn default_axis() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

/// Declarative phantom description, validated by [`build_phantom`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomModel {
    pub hole_radius_um: f64,
    pub hole_length_um: f64,
    pub pockets: Vec<Pocket>,
    /// Bulk reflectivity of intact resin, in [0, 1]. Pocket interiors are
    /// air and show only the far-wall interface.
    pub scatter_base: f64,
    /// Seeds the frozen fine-grain scatter texture of the material.
    pub rng_seed: u64,
}

impl Default for PhantomModel {
    fn default() -> Self {
        Self::desk_default()
    }
}

impl PhantomModel {
    /// Bench-top phantom used throughout the tests: a 1.5 mm radius hole,
    /// three ball-milled side pockets and one slanted groove.
    pub fn desk_default() -> Self {
        let tang = |theta: f64| [-f64::sin(theta), f64::cos(theta), 0.0];
        let on_wall = |theta: f64, radius: f64, z: f64| {
            [radius * theta.cos(), radius * theta.sin(), z]
        };
        let groove_dir = {
            let t = tang(1.9);
            [0.4 * t[0], 0.4 * t[1], 1.0]
        };
        Self {
            hole_radius_um: 1500.0,
            hole_length_um: 4000.0,
            pockets: vec![
                Pocket {
                    kind: PocketKind::Sphere,
                    center_um: on_wall(0.8, 1750.0, 900.0),
                    axis: default_axis(),
                    radius_um: 600.0,
                },
                Pocket {
                    kind: PocketKind::Sphere,
                    center_um: on_wall(2.9, 1700.0, 1900.0),
                    axis: default_axis(),
                    radius_um: 400.0,
                },
                Pocket {
                    kind: PocketKind::Sphere,
                    center_um: on_wall(4.6, 1800.0, 3000.0),
                    axis: default_axis(),
                    radius_um: 700.0,
                },
                Pocket {
                    kind: PocketKind::Cylinder,
                    center_um: on_wall(1.9, 1650.0, 3300.0),
                    axis: groove_dir,
                    radius_um: 300.0,
                },
            ],
            scatter_base: 0.35,
            rng_seed: 11,
        }
    }
}

/// Validated phantom ready for ray queries.
#[derive(Debug, Clone)]
pub struct PhantomGeometry {
    model: PhantomModel,
}

/// Validate a [`PhantomModel`]. Cylinder axes are normalized here; all
/// other values pass through unchanged.
pub fn build_phantom(spec: &PhantomModel) -> Result<PhantomGeometry, PhantomError> {
    let mut model = spec.clone();
    if !(model.hole_radius_um > 0.0) {
        return Err(PhantomError::Model("hole_radius_um must be positive".into()));
    }
    if !(model.hole_length_um > 0.0) {
        return Err(PhantomError::Model("hole_length_um must be positive".into()));
    }
    if !(0.0..=1.0).contains(&model.scatter_base) {
        return Err(PhantomError::Model("scatter_base must lie in [0, 1]".into()));
    }
    for (i, p) in model.pockets.iter_mut().enumerate() {
        if !(p.radius_um > 0.0) {
            return Err(PhantomError::Model(format!("pockets[{i}].radius_um must be positive")));
        }
        if p.center_um.iter().any(|v| !v.is_finite()) {
            return Err(PhantomError::Model(format!("pockets[{i}].center_um must be finite")));
        }
        if p.kind == PocketKind::Cylinder {
            let n = norm3(p.axis);
            if !(n > 1e-12) {
                return Err(PhantomError::Model(format!(
                    "pockets[{i}].axis must have nonzero length"
                )));
            }
            p.axis = [p.axis[0] / n, p.axis[1] / n, p.axis[2] / n];
        }
    }
    Ok(PhantomGeometry { model })
}

fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Parametric interval where the ray `o + t d` runs inside the pocket.
fn pocket_interval(p: &Pocket, o: [f64; 3], d: [f64; 3]) -> Option<(f64, f64)> {
    match p.kind {
        PocketKind::Sphere => {
            let m = sub3(p.center_um, o);
            let tm = dot3(m, d);
            let disc = tm * tm - (dot3(m, m) - p.radius_um * p.radius_um);
            (disc > 0.0).then(|| {
                let s = disc.sqrt();
                (tm - s, tm + s)
            })
        }
        PocketKind::Cylinder => {
            let m = sub3(o, p.center_um);
            let md = sub3(m, scale3(p.axis, dot3(m, p.axis)));
            let dd = sub3(d, scale3(p.axis, dot3(d, p.axis)));
            let a = dot3(dd, dd);
            let b = dot3(md, dd);
            let c = dot3(md, md) - p.radius_um * p.radius_um;
            if a < 1e-12 {
                // Ray parallel to the cylinder axis: inside forever or never.
                return (c < 0.0).then_some((f64::NEG_INFINITY, f64::INFINITY));
            }
            let disc = b * b - a * c;
            (disc > 0.0).then(|| {
                let s = disc.sqrt();
                ((-b - s) / a, (-b + s) / a)
            })
        }
    }
}

fn scale3(v: [f64; 3], s: f64) -> [f64; 3] {
    [v[0] * s, v[1] * s, v[2] * s]
}

impl PhantomGeometry {
    pub fn model(&self) -> &PhantomModel {
        &self.model
    }

    pub fn hole_radius_um(&self) -> f64 {
        self.model.hole_radius_um
    }

    pub fn hole_length_um(&self) -> f64 {
        self.model.hole_length_um
    }

    /// Radius of the first material surface along the ray from the hole
    /// axis at height `z_um` in direction `theta_rad`.
    ///
    /// The sweep starts at the hole radius and walks the union of pocket
    /// intervals: any pocket covering the current radius pushes the wall
    /// out to the pocket's far side. A void that contains the whole ray
    /// (a cylinder parallel to the beam around it) yields `f64::INFINITY`;
    /// callers clamp that to their imaging range.
    pub fn wall_radius_um(&self, z_um: f64, theta_rad: f64) -> f64 {
        let o = [0.0, 0.0, z_um];
        let d = [theta_rad.cos(), theta_rad.sin(), 0.0];
        let mut t = self.model.hole_radius_um;

        let mut ivs: Vec<(f64, f64)> = self
            .model
            .pockets
            .iter()
            .filter_map(|p| pocket_interval(p, o, d))
            .filter(|&(_, hi)| hi > t)
            .collect();
        ivs.sort_by(|x, y| x.0.total_cmp(&y.0));
        for (lo, hi) in ivs {
            if lo > t + 1e-9 {
                break;
            }
            if hi > t {
                t = hi;
            }
            if t.is_infinite() {
                break;
            }
        }
        t
    }

    /// How far the wall at `(z, theta)` recedes behind the intact hole
    /// wall; zero where no pocket breaches the surface.
    pub fn breach_depth_um(&self, z_um: f64, theta_rad: f64) -> f64 {
        self.wall_radius_um(z_um, theta_rad) - self.model.hole_radius_um
    }

    /// Frozen per-phantom scatter texture in [0.85, 1.15], piecewise
    /// constant over 50 um x 1.4 degree surface cells. Purely cosmetic
    /// modulation of the subsurface tail; never moves an interface.
    pub fn scatter_texture(&self, z_um: f64, theta_rad: f64) -> f64 {
        let zi = (z_um / 50.0).floor() as i64 as u64;
        let ai = ((theta_rad.rem_euclid(TAU) / TAU * 256.0) as u64) & 255;
        let mut s = self.model.rng_seed
            ^ zi.wrapping_mul(0x9E37_79B9_7F4A_7C15)
            ^ ai.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
        let h = splitmix64(&mut s);
        0.85 + 0.30 * ((h >> 11) as f64 / (1u64 << 53) as f64)
    }
}

/// Noise realization controls. `seed` picks the realization; everything
/// else scales one physical effect and can be zeroed independently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub seed: u64,
    /// Multiplicative speckle: each sample is scaled by `1 + sigma * n`.
    pub speckle_sigma: f64,
    /// Std of the rotation-angle jitter, radians.
    pub nurd_amplitude_rad: f64,
    /// Correlation length of the jitter along the column axis, in columns.
    pub nurd_correlation_cols: f64,
    /// Additive uniform noise floor as a fraction of full scale.
    pub background_level: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            speckle_sigma: 0.0,
            nurd_amplitude_rad: 0.0,
            nurd_correlation_cols: 25.0,
            background_level: 0.02,
        }
    }
}

/// Scanner and probe-placement parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcquisitionConfig {
    pub a_scan_rate_hz: f64,
    pub rotation_rate_rps: f64,
    pub pullback_step_um: f64,
    pub pullback_length_um: f64,
    pub depth_samples: usize,
    pub depth_resolution_um: f64,
    /// Axial point-spread sigma of rendered interface peaks.
    pub axial_psf_sigma_um: f64,
    /// Depth constant of the exponential sensitivity falloff.
    pub sensitivity_rolloff_um: f64,
    pub catheter_radius_um: f64,
    pub capillary_inner_radius_um: f64,
    pub capillary_outer_radius_um: f64,
    /// Extra optical path picked up crossing the capillary glass.
    pub glass_index_shift_um: f64,
    /// Probe-axis offset from the capillary axis.
    pub eccentricity_um: f64,
    pub eccentricity_phase_rad: f64,
    /// Slow per-slice rotation of the eccentricity phase.
    pub eccentricity_drift_rad_per_slice: f64,
    pub noise: NoiseConfig,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self::desk_default()
    }
}

impl AcquisitionConfig {
    /// Test-sized default: 1024 columns x 512 depth rows x 40 slices.
    pub fn desk_default() -> Self {
        Self {
            a_scan_rate_hz: 102_400.0,
            rotation_rate_rps: 100.0,
            pullback_step_um: 100.0,
            pullback_length_um: 4000.0,
            depth_samples: 512,
            depth_resolution_um: 10.0,
            axial_psf_sigma_um: 12.0,
            sensitivity_rolloff_um: 4000.0,
            catheter_radius_um: 450.0,
            capillary_inner_radius_um: 750.0,
            capillary_outer_radius_um: 900.0,
            glass_index_shift_um: 0.0,
            eccentricity_um: 150.0,
            eccentricity_phase_rad: 0.6,
            eccentricity_drift_rad_per_slice: 0.0,
            noise: NoiseConfig::default(),
        }
    }

    /// Production scanner geometry: 91 kHz A-scan rate at 6.5 rotations
    /// per second (14 000 columns per turn), 200 um pullback steps over
    /// 30 mm (150 slices).
    pub fn paper_scale() -> Self {
        Self {
            a_scan_rate_hz: 91_000.0,
            rotation_rate_rps: 6.5,
            pullback_step_um: 200.0,
            pullback_length_um: 30_000.0,
            ..Self::desk_default()
        }
    }

    /// Columns per slice, `a_scan_rate_hz / rotation_rate_rps`.
    pub fn a_scans_per_rotation(&self) -> usize {
        (self.a_scan_rate_hz / self.rotation_rate_rps).round() as usize
    }

    /// Slices in the pullback, `floor(pullback_length / pullback_step)`.
    pub fn slice_count(&self) -> usize {
        (self.pullback_length_um / self.pullback_step_um + 1e-9).floor() as usize
    }

    pub fn validate(&self) -> Result<(), PhantomError> {
        let err = |msg: String| Err(PhantomError::Config(msg));
        if !(self.a_scan_rate_hz > 0.0) || !(self.rotation_rate_rps > 0.0) {
            return err("a_scan_rate_hz and rotation_rate_rps must be positive".into());
        }
        let ratio = self.a_scan_rate_hz / self.rotation_rate_rps;
        if (ratio - ratio.round()).abs() > 1e-6 * ratio.max(1.0) {
            return err(format!(
                "a_scan_rate_hz / rotation_rate_rps = {ratio} must be a whole number of columns"
            ));
        }
        if self.a_scans_per_rotation() < 8 {
            return err("a_scan_rate_hz / rotation_rate_rps must be at least 8 columns".into());
        }
        if !(self.pullback_step_um > 0.0) {
            return err("pullback_step_um must be positive".into());
        }
        if self.pullback_length_um < self.pullback_step_um {
            return err("pullback_length_um must cover at least one pullback_step_um".into());
        }
        if self.depth_samples < 16 {
            return err("depth_samples must be at least 16".into());
        }
        if !(self.depth_resolution_um > 0.0) {
            return err("depth_resolution_um must be positive".into());
        }
        if !(self.axial_psf_sigma_um > 0.0) {
            return err("axial_psf_sigma_um must be positive".into());
        }
        if !(self.sensitivity_rolloff_um > 0.0) {
            return err("sensitivity_rolloff_um must be positive".into());
        }
        if !(self.catheter_radius_um > 0.0) {
            return err("catheter_radius_um must be positive".into());
        }
        if !(self.capillary_inner_radius_um > self.catheter_radius_um) {
            return err("capillary_inner_radius_um must exceed catheter_radius_um".into());
        }
        if !(self.capillary_outer_radius_um > self.capillary_inner_radius_um) {
            return err("capillary_outer_radius_um must exceed capillary_inner_radius_um".into());
        }
        if !(self.glass_index_shift_um >= 0.0) {
            return err("glass_index_shift_um must be non-negative".into());
        }
        if !(self.eccentricity_um >= 0.0) {
            return err("eccentricity_um must be non-negative".into());
        }
        if self.eccentricity_um + self.catheter_radius_um > self.capillary_inner_radius_um + 1e-9 {
            return err(format!(
                "catheter cannot fit at this offset: eccentricity_um ({}) + catheter_radius_um ({}) exceeds capillary_inner_radius_um ({})",
                self.eccentricity_um, self.catheter_radius_um, self.capillary_inner_radius_um
            ));
        }
        let n = &self.noise;
        if !(n.speckle_sigma >= 0.0) || !(n.nurd_amplitude_rad >= 0.0) {
            return err("noise.speckle_sigma and noise.nurd_amplitude_rad must be non-negative".into());
        }
        if !(n.nurd_correlation_cols > 0.0) {
            return err("noise.nurd_correlation_cols must be positive".into());
        }
        if !(0.0..1.0).contains(&n.background_level) {
            return err("noise.background_level must lie in [0, 1)".into());
        }
        Ok(())
    }

    fn validate_against(&self, geom: &PhantomGeometry) -> Result<(), PhantomError> {
        let err = |msg: String| Err(PhantomError::Incompatible(msg));
        if self.capillary_outer_radius_um > geom.hole_radius_um() + 1e-9 {
            return err(format!(
                "capillary_outer_radius_um ({}) exceeds hole_radius_um ({})",
                self.capillary_outer_radius_um,
                geom.hole_radius_um()
            ));
        }
        if self.pullback_length_um > geom.hole_length_um() + 1e-9 {
            return err(format!(
                "pullback_length_um ({}) exceeds hole_length_um ({})",
                self.pullback_length_um,
                geom.hole_length_um()
            ));
        }
        let range = self.depth_samples as f64 * self.depth_resolution_um;
        let border_max = self.capillary_outer_radius_um + self.glass_index_shift_um + self.eccentricity_um;
        if border_max >= range - 2.0 * self.depth_resolution_um {
            return err(format!(
                "capillary border at {border_max} um would leave the {range} um imaging range"
            ));
        }
        let wall_max = geom.hole_radius_um() + self.glass_index_shift_um + self.eccentricity_um;
        if wall_max >= range - 2.0 * self.depth_resolution_um {
            return err(format!(
                "hole wall at {wall_max} um would leave the {range} um imaging range"
            ));
        }
        Ok(())
    }
}

/// Acquisition-geometry provenance carried in stack metadata so later
/// stages can place their border search band and scale depths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryMeta {
    pub hole_radius_um: f64,
    pub catheter_radius_um: f64,
    pub capillary_inner_radius_um: f64,
    pub capillary_outer_radius_um: f64,
    pub glass_index_shift_um: f64,
    pub eccentricity_um: f64,
    pub eccentricity_phase_rad: f64,
    pub eccentricity_drift_rad_per_slice: f64,
}

/// One polar slice: row `u` is the A-scan at probe angle `2*pi*u/n`,
/// sample `v` sits at depth `v * depth_resolution_um` from the probe.
#[derive(Debug, Clone, PartialEq)]
pub struct BScanPolar {
    intensity: Image<u16>,
    pub axial_position_um: f64,
}

impl BScanPolar {
    pub fn from_image(intensity: Image<u16>, axial_position_um: f64) -> Self {
        Self { intensity, axial_position_um }
    }

    /// Angle columns in this slice (one per A-scan).
    pub fn angle_count(&self) -> usize {
        self.intensity.height()
    }

    /// Depth samples per A-scan.
    pub fn depth_count(&self) -> usize {
        self.intensity.width()
    }

    #[inline]
    pub fn at(&self, u: usize, v: usize) -> u16 {
        self.intensity.get(v, u)
    }

    pub fn a_scan(&self, u: usize) -> &[u16] {
        self.intensity.row(u)
    }

    pub fn a_scan_mut(&mut self, u: usize) -> &mut [u16] {
        self.intensity.row_mut(u)
    }

    /// Backing image: width = depth samples, height = angle columns.
    pub fn image(&self) -> &Image<u16> {
        &self.intensity
    }

    pub fn image_mut(&mut self) -> &mut Image<u16> {
        &mut self.intensity
    }
}

/// A full pullback of polar slices plus the metadata that travels with it.
#[derive(Debug, Clone)]
pub struct VolumeStack {
    pub slices: Vec<BScanPolar>,
    pub depth_resolution_um: f64,
    pub pullback_step_um: f64,
    pub geometry: Option<GeometryMeta>,
    pub seed: Option<u64>,
}

impl VolumeStack {
    pub fn angle_count(&self) -> usize {
        self.slices.first().map_or(0, BScanPolar::angle_count)
    }

    pub fn depth_count(&self) -> usize {
        self.slices.first().map_or(0, BScanPolar::depth_count)
    }
}

/// What the scanner actually looked at, on the scan grid: wall radius and
/// pocket membership per (slice, column), plus the per-slice border
/// sinusoid implied by the probe placement. Noise never touches these.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// Wall radius in um; width = columns, height = slices. Can hold
    /// `f64::INFINITY` where a degenerate void swallows the beam.
    pub surface_depth_um: Image<f64>,
    /// True where the wall recedes more than one depth sample.
    pub pattern_mask: Image<bool>,
    /// Border model per slice, in row/column units of the slice.
    pub sine_params: Vec<SineModel>,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent RNG stream for (seed, stream index). Slices draw their
/// noise from their own stream, so parallel rendering order cannot change
/// any output byte.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut state = seed ^ stream.wrapping_mul(0xA076_1D64_78BD_642F);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Angle jitter profile: white Gaussian noise circularly smoothed to the
/// requested correlation length, rescaled so its std stays `amplitude`.
fn nurd_profile(rng: &mut ChaCha8Rng, n: usize, amplitude_rad: f64, correlation_cols: f64) -> Vec<f64> {
    if amplitude_rad == 0.0 {
        return vec![0.0; n];
    }
    let white: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let radius = (3.0 * correlation_cols).ceil() as isize;
    let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
    for k in -radius..=radius {
        kernel.push((-0.5 * (k as f64 / correlation_cols).powi(2)).exp());
    }
    // Normalize by the l2 norm: unit-variance input stays unit variance.
    let l2 = kernel.iter().map(|k| k * k).sum::<f64>().sqrt();
    let mut out = vec![0.0; n];
    for (u, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, k) in kernel.iter().enumerate() {
            let idx = (u as isize + j as isize - radius).rem_euclid(n as isize) as usize;
            acc += k * white[idx];
        }
        *o = amplitude_rad * acc / l2;
    }
    out
}

fn normalize_phase(phi: f64) -> f64 {
    let mut p = phi.rem_euclid(TAU);
    if p >= PI {
        p -= TAU;
    }
    p
}

struct SliceRender {
    scan: BScanPolar,
    truth_depth: Vec<f64>,
    truth_mask: Vec<bool>,
    sine: SineModel,
}

fn render_slice(geom: &PhantomGeometry, cfg: &AcquisitionConfig, s: usize) -> SliceRender {
    let u_count = cfg.a_scans_per_rotation();
    let depth = cfg.depth_samples;
    let delta = cfg.depth_resolution_um;
    let omega = TAU / u_count as f64;
    let z = s as f64 * cfg.pullback_step_um;
    let shift = cfg.glass_index_shift_um;
    let ecc = cfg.eccentricity_um;
    let phi_e = cfg.eccentricity_phase_rad + cfg.eccentricity_drift_rad_per_slice * s as f64;
    let psf = cfg.axial_psf_sigma_um;
    let noise = &cfg.noise;

    let mut rng = stream_rng(noise.seed, s as u64);
    let jitter = nurd_profile(&mut rng, u_count, noise.nurd_amplitude_rad, noise.nurd_correlation_cols);

    let range_um = depth as f64 * delta;
    let mut img = Image::new(depth, u_count, 0u16);
    let mut truth_depth = Vec::with_capacity(u_count);
    let mut truth_mask = Vec::with_capacity(u_count);

    // Subsurface tail: scatter decays over this length behind the wall.
    const SCATTER_DECAY_UM: f64 = 600.0;
    // Interface peak amplitudes before rolloff, as fractions of full scale.
    const GLASS_INNER_AMP: f64 = 0.50;
    const GLASS_OUTER_AMP: f64 = 0.62;
    const WALL_AMP: f64 = 0.90;

    let peak = |t: f64, center: f64, amp: f64| -> f64 {
        let d = t - center;
        if d.abs() > 6.0 * psf {
            0.0
        } else {
            amp * (-0.5 * (d / psf).powi(2)).exp()
        }
    };

    for u in 0..u_count {
        // Ground truth samples the commanded angle; jitter only moves what
        // the probe actually looked at.
        let nominal_theta = omega * u as f64;
        let wall_nominal = geom.wall_radius_um(z, nominal_theta);
        truth_depth.push(wall_nominal);
        truth_mask.push(wall_nominal - geom.hole_radius_um() > delta);

        let theta = nominal_theta + jitter[u];
        let offset = ecc * (theta - phi_e).cos();
        let t_glass_in = cfg.capillary_inner_radius_um - offset;
        let t_glass_out = cfg.capillary_outer_radius_um + shift - offset;
        let wall = geom.wall_radius_um(z, theta);
        let t_wall = (wall + shift - offset).min(range_um * 4.0);
        let roll = |t: f64| (-t / cfg.sensitivity_rolloff_um).exp();
        // Scatter rises at the wall surface itself, so the wall peak always
        // tops its own tail and per-column argmax stays within one sample.
        let scatter_amp = geom.model().scatter_base * geom.scatter_texture(z, theta) * roll(t_wall);

        let amp_glass_in = GLASS_INNER_AMP * roll(t_glass_in);
        let amp_glass_out = GLASS_OUTER_AMP * roll(t_glass_out);
        let amp_wall = WALL_AMP * roll(t_wall);

        let row = img.row_mut(u);
        for (v, out) in row.iter_mut().enumerate() {
            let t = v as f64 * delta;
            let mut sig = peak(t, t_glass_in, amp_glass_in)
                + peak(t, t_glass_out, amp_glass_out)
                + peak(t, t_wall, amp_wall);
            if t >= t_wall {
                sig += scatter_amp * (-(t - t_wall) / SCATTER_DECAY_UM).exp();
            }
            if noise.speckle_sigma > 0.0 {
                let n: f64 = rng.sample(StandardNormal);
                sig *= (1.0 + noise.speckle_sigma * n).max(0.0);
            }
            if noise.background_level > 0.0 {
                sig += noise.background_level * rng.random::<f64>();
            }
            *out = (sig.clamp(0.0, 1.0) * 65535.0).round() as u16;
        }
    }

    let sine = SineModel {
        a: ecc / delta,
        omega,
        phi: normalize_phase(-phi_e - PI / 2.0),
        d: (cfg.capillary_outer_radius_um + shift) / delta,
    };

    SliceRender { scan: BScanPolar::from_image(img, z), truth_depth, truth_mask, sine }
}

/// Simulate a full pullback. Returns the slice stack plus per-column
/// ground truth on the same grid. Identical inputs give identical bytes
/// regardless of how many threads render slices.
pub fn simulate_oct(
    geom: &PhantomGeometry,
    cfg: &AcquisitionConfig,
) -> Result<(VolumeStack, GroundTruth), PhantomError> {
    cfg.validate()?;
    cfg.validate_against(geom)?;

    let s_count = cfg.slice_count();
    let u_count = cfg.a_scans_per_rotation();
    let renders: Vec<SliceRender> =
        (0..s_count).into_par_iter().map(|s| render_slice(geom, cfg, s)).collect();

    let mut slices = Vec::with_capacity(s_count);
    let mut depth_map = Image::new(u_count, s_count, 0.0f64);
    let mut mask = Image::new(u_count, s_count, false);
    let mut sines = Vec::with_capacity(s_count);
    for (s, r) in renders.into_iter().enumerate() {
        slices.push(r.scan);
        depth_map.row_mut(s).copy_from_slice(&r.truth_depth);
        mask.row_mut(s).copy_from_slice(&r.truth_mask);
        sines.push(r.sine);
    }

    let stack = VolumeStack {
        slices,
        depth_resolution_um: cfg.depth_resolution_um,
        pullback_step_um: cfg.pullback_step_um,
        geometry: Some(GeometryMeta {
            hole_radius_um: geom.hole_radius_um(),
            catheter_radius_um: cfg.catheter_radius_um,
            capillary_inner_radius_um: cfg.capillary_inner_radius_um,
            capillary_outer_radius_um: cfg.capillary_outer_radius_um,
            glass_index_shift_um: cfg.glass_index_shift_um,
            eccentricity_um: cfg.eccentricity_um,
            eccentricity_phase_rad: cfg.eccentricity_phase_rad,
            eccentricity_drift_rad_per_slice: cfg.eccentricity_drift_rad_per_slice,
        }),
        seed: Some(cfg.noise.seed),
    };
    let truth = GroundTruth { surface_depth_um: depth_map, pattern_mask: mask, sine_params: sines };
    Ok((stack, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bare_phantom(pockets: Vec<Pocket>) -> PhantomGeometry {
        build_phantom(&PhantomModel {
            hole_radius_um: 1500.0,
            hole_length_um: 4000.0,
            pockets,
            scatter_base: 0.35,
            rng_seed: 1,
        })
        .unwrap()
    }

    fn sphere(center: [f64; 3], r: f64) -> Pocket {
        Pocket { kind: PocketKind::Sphere, center_um: center, axis: default_axis(), radius_um: r }
    }

    #[test]
    fn intact_wall_is_the_hole_radius() {
        let geom = bare_phantom(vec![]);
        assert_eq!(geom.wall_radius_um(1000.0, 1.0), 1500.0);
        assert_eq!(geom.breach_depth_um(0.0, 3.0), 0.0);
    }

    #[test]
    fn sphere_centered_on_the_wall_reads_center_radius_plus_r() {
        // Ray through the pocket center: wall = center radius + pocket radius.
        let theta: f64 = 0.8;
        let geom = bare_phantom(vec![sphere([1500.0 * theta.cos(), 1500.0 * theta.sin(), 900.0], 500.0)]);
        let wall = geom.wall_radius_um(900.0, theta);
        assert!((wall - 2000.0).abs() < 1e-9, "wall = {wall}");
        // Away from the pocket the wall is intact.
        assert_eq!(geom.wall_radius_um(900.0, theta + PI), 1500.0);
        assert_eq!(geom.wall_radius_um(3900.0, theta), 1500.0);
    }

    #[test]
    fn embedded_sphere_shows_only_its_far_side() {
        // Center at radius 1700, r = 400: the void dips 200 um inside the
        // wall, so the breach floor along the center ray is 1700 + 400.
        let geom = bare_phantom(vec![sphere([1700.0, 0.0, 500.0], 400.0)]);
        assert!((geom.wall_radius_um(500.0, 0.0) - 2100.0).abs() < 1e-9);
        // Just outside the breach disk (chord half-width 346.4 um in y at
        // this z) the wall is intact even though the void sits behind it.
        let breach_halfwidth = (400.0f64.powi(2) - 200.0f64.powi(2)).sqrt();
        let just_outside = (breach_halfwidth + 2.0) / 1500.0;
        assert_eq!(geom.wall_radius_um(500.0, just_outside.atan()), 1500.0);
    }

    #[test]
    fn overlapping_voids_union_their_intervals() {
        // Two spheres chained along the ray: [1400, 1800] then [1750, 2100].
        let geom = bare_phantom(vec![sphere([1600.0, 0.0, 0.0], 200.0), sphere([1925.0, 0.0, 0.0], 175.0)]);
        assert!((geom.wall_radius_um(0.0, 0.0) - 2100.0).abs() < 1e-9);
    }

    #[test]
    fn detached_void_behind_the_wall_is_invisible() {
        // Interval [1600, 1800] never touches the sweep start at 1500.
        let geom = bare_phantom(vec![sphere([1700.0, 0.0, 0.0], 100.0)]);
        assert_eq!(geom.wall_radius_um(0.0, 0.0), 1500.0);
    }

    #[test]
    fn coaxial_cylinder_void_swallows_the_beam() {
        let geom = bare_phantom(vec![Pocket {
            kind: PocketKind::Cylinder,
            center_um: [0.0, 0.0, 0.0],
            axis: [1.0, 0.0, 0.0],
            radius_um: 2000.0,
        }]);
        // The ray at theta = 0 runs along the cylinder axis inside the void.
        assert_eq!(geom.wall_radius_um(0.0, 0.0), f64::INFINITY);
    }

    #[test]
    fn build_phantom_names_the_offending_field() {
        let mut model = PhantomModel::desk_default();
        model.pockets[2].radius_um = -1.0;
        let err = build_phantom(&model).unwrap_err();
        assert!(err.to_string().contains("pockets[2].radius_um"), "{err}");
    }

    #[test]
    fn validate_rejects_probe_that_cannot_fit() {
        let mut cfg = AcquisitionConfig::desk_default();
        cfg.eccentricity_um = 400.0; // 450 + 400 > 750
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("catheter cannot fit"), "{err}");
    }

    #[test]
    fn paper_scale_arithmetic() {
        let cfg = AcquisitionConfig::paper_scale();
        assert_eq!(cfg.a_scans_per_rotation(), 14_000);
        assert_eq!(cfg.slice_count(), 150);
    }

    fn tiny_cfg() -> AcquisitionConfig {
        AcquisitionConfig {
            a_scan_rate_hz: 12_800.0,
            rotation_rate_rps: 100.0, // 128 columns
            pullback_step_um: 500.0,
            pullback_length_um: 2000.0, // 4 slices
            depth_samples: 256,
            ..AcquisitionConfig::desk_default()
        }
    }

    #[test]
    fn simulate_is_deterministic_and_shaped() {
        let geom = build_phantom(&PhantomModel::desk_default()).unwrap();
        let cfg = tiny_cfg();
        let (a, truth) = simulate_oct(&geom, &cfg).unwrap();
        let (b, _) = simulate_oct(&geom, &cfg).unwrap();
        assert_eq!(a.slices.len(), 4);
        assert_eq!(a.angle_count(), 128);
        assert_eq!(a.depth_count(), 256);
        assert_eq!(truth.surface_depth_um.width(), 128);
        assert_eq!(truth.surface_depth_um.height(), 4);
        assert_eq!(truth.sine_params.len(), 4);
        for (x, y) in a.slices.iter().zip(&b.slices) {
            assert_eq!(x.image(), y.image());
        }
    }

    #[test]
    fn noiseless_border_follows_the_sine_model() {
        let geom = bare_phantom(vec![]);
        let mut cfg = tiny_cfg();
        cfg.noise.background_level = 0.0;
        cfg.eccentricity_um = 200.0;
        cfg.eccentricity_phase_rad = 1.1;
        let (stack, truth) = simulate_oct(&geom, &cfg).unwrap();
        let slice = &stack.slices[0];
        let sine = &truth.sine_params[0];

        // The brightest sample in the capillary band of each column must sit
        // within one sample of the predicted border row.
        for u in 0..slice.angle_count() {
            let predicted = sine.a * (sine.omega * u as f64 + sine.phi).sin() + sine.d;
            let band = 60..120usize;
            let a_scan = slice.a_scan(u);
            let peak_row = band
                .clone()
                .max_by_key(|&v| a_scan[v])
                .unwrap();
            assert!(
                (peak_row as f64 - predicted).abs() <= 1.0,
                "column {u}: peak at {peak_row}, predicted {predicted:.2}"
            );
        }
    }

    #[test]
    fn eccentric_offset_moves_every_interface_together() {
        let geom = bare_phantom(vec![]);
        let mut cfg = tiny_cfg();
        cfg.noise.background_level = 0.0;
        cfg.eccentricity_um = 250.0;
        cfg.eccentricity_phase_rad = 0.0;
        let (stack, _) = simulate_oct(&geom, &cfg).unwrap();
        let slice = &stack.slices[0];
        // Column 0 looks straight along the offset: everything 250 um nearer.
        let wall_row = (1500.0 - 250.0) / 10.0;
        let a_scan = slice.a_scan(0);
        let peak = (115..140).max_by_key(|&v| a_scan[v]).unwrap();
        assert_eq!(peak, wall_row as usize);
    }
}
