//! `octds` — drive the desk OCT scanner pipeline stage by stage.
//!
//! Every subcommand works inside one output directory: `simulate` seeds
//! it with a raw stack and ground truth, later stages read what earlier
//! stages wrote. Results go to stdout as a single JSON document; stage
//! progress goes to stderr as JSON lines, filtered by the `OCTDS_LOG`
//! environment variable (`quiet`, `info`, or `debug`).

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

use octds_core::pipeline::{
    run_compare, run_endostitch, run_pipeline, run_segment, run_simulate, run_surface,
    run_undistort, run_volume, with_pool, PipelineConfig, PipelineError, StageEvent,
};
use octds_core::SegmentChannel;

#[derive(Parser)]
#[command(
    name = "octds",
    version,
    about = "Desk OCT scanner: simulate a drilled phantom, undo probe distortion, map and score the wall pattern"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration file (JSON). Omitted fields take defaults.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Master seed; re-seeds every randomized stage deterministically.
    #[arg(long)]
    seed: Option<u64>,

    /// Worker threads (0 = library default).
    #[arg(long)]
    parallel: Option<usize>,

    /// Working directory holding all stage inputs and outputs.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateOverrides {
    /// Probe-axis offset from the capillary axis, micrometers.
    #[arg(long = "eccentricity-um", value_name = "UM")]
    eccentricity_um: Option<f64>,

    /// Rotation-jitter standard deviation, radians.
    #[arg(long = "nurd-rad", value_name = "RAD")]
    nurd_rad: Option<f64>,

    /// Multiplicative speckle amplitude.
    #[arg(long = "speckle-sigma", value_name = "SIGMA")]
    speckle_sigma: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ChannelArg {
    /// Threshold the wall-depth channel.
    Depth,
    /// Threshold the wall-intensity channel.
    Intensity,
}

impl From<ChannelArg> for SegmentChannel {
    fn from(c: ChannelArg) -> Self {
        match c {
            ChannelArg::Depth => SegmentChannel::Depth,
            ChannelArg::Intensity => SegmentChannel::Intensity,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the OCT scan; writes raw/ and truth/.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        overrides: SimulateOverrides,
    },
    /// Fit and remove the border distortion; writes undistorted/ and fits.json.
    Undistort {
        #[command(flatten)]
        common: Common,
    },
    /// Collapse slices to the wall surface map; writes surface/.
    Surface {
        #[command(flatten)]
        common: Common,
        /// Rows to skip below the fitted border.
        #[arg(long = "crop-margin", value_name = "ROWS")]
        crop_margin: Option<u32>,
    },
    /// Assemble the cropped wall volume; writes volume/.
    Volume {
        #[command(flatten)]
        common: Common,
        /// Rows to skip below the fitted border.
        #[arg(long = "crop-margin", value_name = "ROWS")]
        crop_margin: Option<u32>,
    },
    /// Simulate the annulus camera and stitch the panorama; writes endo/.
    Endostitch {
        #[command(flatten)]
        common: Common,
        /// Multiplicative speckle amplitude for the camera frames.
        #[arg(long = "speckle-sigma", value_name = "SIGMA")]
        speckle_sigma: Option<f64>,
    },
    /// Segment pattern masks from the surface map and panorama; writes masks/.
    Segment {
        #[command(flatten)]
        common: Common,
        /// Surface-map channel to threshold.
        #[arg(long)]
        channel: Option<ChannelArg>,
    },
    /// Score mask overlap pairwise; writes compare/.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Surface-map channel the OCT mask was built from.
        #[arg(long)]
        channel: Option<ChannelArg>,
    },
    /// Run every stage in order.
    Pipeline {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        overrides: SimulateOverrides,
        #[arg(long = "crop-margin", value_name = "ROWS")]
        crop_margin: Option<u32>,
        #[arg(long)]
        channel: Option<ChannelArg>,
    },
}

fn load_config(common: &Common) -> Result<(PipelineConfig, PathBuf), String> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("reading {}: {e}", path.display()))?;
            serde_json::from_str::<PipelineConfig>(&text)
                .map_err(|e| format!("parsing {}: {e}", path.display()))?
        }
        None => PipelineConfig::default(),
    };
    if common.seed.is_some() {
        cfg.seed = common.seed;
    }
    if let Some(p) = common.parallel {
        cfg.parallel = p;
    }
    let out = common
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| "no output directory: pass --out or set out_dir in the config".to_string())?;
    cfg.out_dir = Some(out.clone());
    Ok((cfg, out))
}

fn apply_simulate_overrides(cfg: &mut PipelineConfig, ov: &SimulateOverrides) {
    if let Some(e) = ov.eccentricity_um {
        cfg.acquisition.eccentricity_um = e;
    }
    if let Some(n) = ov.nurd_rad {
        cfg.acquisition.noise.nurd_amplitude_rad = n;
    }
    if let Some(s) = ov.speckle_sigma {
        cfg.acquisition.noise.speckle_sigma = s;
    }
}

/// Stage-progress printer honoring `OCTDS_LOG`.
fn event_sink() -> impl FnMut(&StageEvent) + Send {
    let level = match std::env::var("OCTDS_LOG").as_deref() {
        Ok("quiet") => 0,
        Ok("debug") => 2,
        _ => 1,
    };
    move |e: &StageEvent| {
        let show = match e.status {
            "started" => level >= 2,
            _ => level >= 1,
        };
        if show {
            if let Ok(line) = serde_json::to_string(e) {
                eprintln!("{line}");
            }
        }
    }
}

fn run(cli: Cli) -> Result<serde_json::Value, String> {
    let mut sink = event_sink();
    let fail = |e: PipelineError| e.to_string();

    match cli.command {
        Command::Simulate { common, overrides } => {
            let (mut cfg, out) = load_config(&common)?;
            apply_simulate_overrides(&mut cfg, &overrides);
            let (stack, _) = with_pool(cfg.parallel, || run_simulate(&cfg, &out, &mut sink))
                .map_err(fail)?
                .map_err(fail)?;
            Ok(serde_json::json!({
                "slices": stack.slices.len(),
                "columns": stack.angle_count(),
                "depth": stack.depth_count(),
                "out": out.display().to_string(),
            }))
        }
        Command::Undistort { common } => {
            let (cfg, out) = load_config(&common)?;
            let fits = with_pool(cfg.parallel, || run_undistort(&cfg, &out, &mut sink))
                .map_err(fail)?
                .map_err(fail)?;
            let rejected: Vec<usize> = fits
                .iter()
                .enumerate()
                .filter(|(_, f)| !f.accepted)
                .map(|(i, _)| i)
                .collect();
            Ok(serde_json::json!({
                "total": fits.len(),
                "accepted": fits.len() - rejected.len(),
                "rejected": rejected,
            }))
        }
        Command::Surface { common, crop_margin } => {
            let (mut cfg, out) = load_config(&common)?;
            if let Some(m) = crop_margin {
                cfg.crop_margin = m;
            }
            let map = with_pool(cfg.parallel, || run_surface(&cfg, &out, &mut sink))
                .map_err(fail)?
                .map_err(fail)?;
            let valid = map.valid.as_slice().iter().filter(|&&v| v).count();
            Ok(serde_json::json!({
                "angle_columns": map.angle_columns(),
                "slices": map.slice_count(),
                "valid_columns": valid,
                "total_columns": map.valid.len(),
            }))
        }
        Command::Volume { common, crop_margin } => {
            let (mut cfg, out) = load_config(&common)?;
            if let Some(m) = crop_margin {
                cfg.crop_margin = m;
            }
            let vol = with_pool(cfg.parallel, || run_volume(&cfg, &out, &mut sink))
                .map_err(fail)?
                .map_err(fail)?;
            Ok(serde_json::json!({
                "slices": vol.slice_count,
                "angle_columns": vol.angle_columns,
                "depth_rows": vol.depth_rows,
                "inner_radius_um": vol.inner_radius_um,
            }))
        }
        Command::Endostitch { common, speckle_sigma } => {
            let (mut cfg, out) = load_config(&common)?;
            if let Some(s) = speckle_sigma {
                cfg.endo.speckle_sigma = s;
            }
            let pano = with_pool(cfg.parallel, || run_endostitch(&cfg, &out, &mut sink))
                .map_err(fail)?
                .map_err(fail)?;
            Ok(serde_json::json!({
                "panorama_width": pano.image.width(),
                "panorama_height": pano.image.height(),
                "um_per_row": pano.um_per_row,
            }))
        }
        Command::Segment { common, channel } => {
            let (mut cfg, out) = load_config(&common)?;
            if let Some(c) = channel {
                cfg.segmentation.channel = c.into();
            }
            let infos = with_pool(cfg.parallel, || run_segment(&cfg, &out, &mut sink))
                .map_err(fail)?
                .map_err(fail)?;
            serde_json::to_value(&infos).map_err(|e| e.to_string())
        }
        Command::Compare { common, channel } => {
            let (mut cfg, out) = load_config(&common)?;
            if let Some(c) = channel {
                cfg.segmentation.channel = c.into();
            }
            let entries = with_pool(cfg.parallel, || run_compare(&cfg, &out, &mut sink))
                .map_err(fail)?
                .map_err(fail)?;
            serde_json::to_value(&entries).map_err(|e| e.to_string())
        }
        Command::Pipeline { common, overrides, crop_margin, channel } => {
            let (mut cfg, out) = load_config(&common)?;
            apply_simulate_overrides(&mut cfg, &overrides);
            if let Some(m) = crop_margin {
                cfg.crop_margin = m;
            }
            if let Some(c) = channel {
                cfg.segmentation.channel = c.into();
            }
            let report = run_pipeline(&cfg, &out, &mut sink).map_err(fail)?;
            serde_json::to_value(&report).map_err(|e| e.to_string())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(value) => {
            println!("{}", serde_json::to_string_pretty(&value).unwrap_or_else(|_| "{}".into()));
            ExitCode::SUCCESS
        }
        Err(message) => {
            println!("{}", serde_json::json!({ "error": message }));
            ExitCode::FAILURE
        }
    }
}
