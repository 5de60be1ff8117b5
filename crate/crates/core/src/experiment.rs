//! End-to-end runs: simulate an acquisition, stream it through the SPE
//! bank and the floating-point reference side by side, reconstruct both
//! and score them. The CLI and the acceptance suite drive these.

use rayon::prelude::*;

use crate::error::{config_err, Result};
use crate::fxp::FxpFormat;
use crate::io::TimestampStream;
use crate::reference::{evaluate, histogram_build, local_cmm, ErrorReport, FlpAccumulator, DEFAULT_CMM_WINDOW};
use crate::sensor::{
    apply_stop_delay, checkerboard_mask, generate_frame, make_two_depth_scene, rect_mask, FrameSeeds, IrfModel,
    Scene, ScenePixel,
};
use crate::solver::{
    build_depth_map, lut_truncation_offset, Background, DepthMap, NormalizedSketch, ReconstructOptions,
    Reconstructor, SolverKind,
};
use crate::spe::{Frame, SketchFrame, SpeState};
use crate::splines::{SketchConfig, SketchRom, SplineMode, DEFAULT_LUT_DEPTH, TDC_BINS};

#[derive(Clone, Debug, PartialEq)]
pub enum MaskSpec {
    /// Centered rectangle covering this fraction of each side.
    Rect(f64),
    Checkerboard(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub enum SceneKind {
    Uniform { tof_bins: f64 },
    TwoDepth { fg_bins: f64, bg_bins: f64, mask: MaskSpec },
    /// Time of flight rising linearly in row-major order.
    Ramp { from_bins: f64, to_bins: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub detection_prob: f64,
    pub signal_fraction: f64,
}

impl SceneSpec {
    pub fn build(&self, rows: usize, cols: usize) -> Result<Scene> {
        let px = |t| ScenePixel::target(t, self.detection_prob, self.signal_fraction);
        match &self.kind {
            SceneKind::Uniform { tof_bins } => Scene::uniform(rows, cols, px(*tof_bins)),
            SceneKind::TwoDepth { fg_bins, bg_bins, mask } => {
                let mask = match *mask {
                    MaskSpec::Rect(f) => rect_mask(rows, cols, f),
                    MaskSpec::Checkerboard(c) => checkerboard_mask(rows, cols, c),
                };
                make_two_depth_scene(rows, cols, px(*fg_bins), px(*bg_bins), &mask)
            }
            SceneKind::Ramp { from_bins, to_bins } => {
                let n = rows * cols;
                let step = if n > 1 { (to_bins - from_bins) / (n - 1) as f64 } else { 0.0 };
                Scene::new(rows, cols, (0..n).map(|k| px(from_bins + step * k as f64)).collect())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OffsetMode {
    /// `(T / depth - 1) / 2`, undoing the mean address truncation.
    Auto,
    Fixed(f64),
}

impl OffsetMode {
    pub fn resolve(&self, depth: usize) -> f64 {
        match *self {
            OffsetMode::Auto => lut_truncation_offset(depth, TDC_BINS),
            OffsetMode::Fixed(v) => v,
        }
    }
}

/// Everything one simulated acquisition and its reconstruction need.
#[derive(Clone, Debug, PartialEq)]
pub struct Experiment {
    pub sketch: SketchConfig,
    pub mode: SplineMode,
    pub lut_depth: usize,
    pub total_bits: u32,
    pub frac_bits: u32,
    pub scene: SceneSpec,
    pub irf: IrfModel,
    pub seed: u64,
    pub background: Background,
    pub solver: SolverKind,
    pub offset: OffsetMode,
    pub cmm_window: u32,
    pub stop_delay_bins: f64,
}

impl Default for Experiment {
    fn default() -> Self {
        Self {
            sketch: SketchConfig::default(),
            mode: SplineMode::LINEAR,
            lut_depth: DEFAULT_LUT_DEPTH,
            total_bits: 16,
            frac_bits: 7,
            scene: SceneSpec {
                kind: SceneKind::Uniform { tof_bins: 1536.0 },
                detection_prob: 0.8,
                signal_fraction: 0.9,
            },
            irf: IrfModel::default(),
            seed: 1,
            background: Background::MinSketch,
            solver: SolverKind::Auto,
            offset: OffsetMode::Auto,
            cmm_window: DEFAULT_CMM_WINDOW,
            stop_delay_bins: 0.0,
        }
    }
}

impl Experiment {
    pub fn format(&self) -> Result<FxpFormat> {
        FxpFormat::new(self.total_bits, self.frac_bits, self.mode.is_signed())
    }

    pub fn rom(&self) -> Result<SketchRom> {
        SketchRom::build(self.mode, self.lut_depth, self.format()?, self.sketch.sketch_size)
    }

    pub fn scene(&self) -> Result<Scene> {
        let scene = self.scene.build(self.sketch.rows, self.sketch.cols)?;
        Ok(if self.stop_delay_bins != 0.0 {
            apply_stop_delay(&scene, self.stop_delay_bins)
        } else {
            scene
        })
    }

    /// Checks every module precondition before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.sketch.validate()?;
        let rom = self.rom()?;
        SpeState::new(self.sketch, rom)?;
        self.irf.validate()?;
        self.scene()?;
        Reconstructor::new(self.mode, self.sketch.sketch_size, self.sketch.bins, self.online_options())?;
        Ok(())
    }

    pub fn online_options(&self) -> ReconstructOptions {
        ReconstructOptions {
            background: self.background,
            solver: self.solver,
            offset_bins: self.offset.resolve(self.lut_depth),
        }
    }

    /// The floating-point path reads the basis at the exact timestamp and
    /// needs no truncation offset.
    pub fn offline_options(&self) -> ReconstructOptions {
        ReconstructOptions {
            offset_bins: 0.0,
            ..self.online_options()
        }
    }
}

pub struct Acquisition {
    pub sketches: SketchFrame,
    pub saturation_events: u64,
    pub flp: Vec<Option<NormalizedSketch>>,
    pub timestamps: Option<TimestampStream>,
    pub truth: DepthMap,
}

/// Simulates `fmax` frames. `on_frame` sees every frame as it is produced
/// (used to stream the timestamp file to disk).
pub fn acquire<F>(exp: &Experiment, keep_timestamps: bool, mut on_frame: F) -> Result<Acquisition>
where
    F: FnMut(&Frame) -> Result<()>,
{
    exp.validate()?;
    let scene = exp.scene()?;
    let mut spe = SpeState::new(exp.sketch, exp.rom()?)?;
    let mut flp = FlpAccumulator::new(exp.sketch, exp.mode);
    let mut kept = Vec::new();
    for seed in FrameSeeds::new(exp.seed).take(exp.sketch.fmax as usize) {
        let frame = generate_frame(&scene, &exp.irf, seed)?;
        spe.run_frame(&frame)?;
        flp.add_frame(&frame)?;
        on_frame(&frame)?;
        if keep_timestamps {
            kept.push(frame);
        }
    }
    let saturation_events = spe.saturation_events();
    Ok(Acquisition {
        sketches: spe.readout()?,
        saturation_events,
        flp: flp.sketches(),
        timestamps: keep_timestamps.then_some(TimestampStream {
            rows: exp.sketch.rows,
            cols: exp.sketch.cols,
            bins: exp.sketch.bins,
            frames: kept,
        }),
        truth: DepthMap::new(scene.rows(), scene.cols(), scene.truth())?,
    })
}

/// Local center of mass per pixel from the raw stream.
pub fn cmm_depth_map(stream: &TimestampStream, window: u32) -> Result<DepthMap> {
    let tof = (0..stream.rows * stream.cols)
        .into_par_iter()
        .map(|k| local_cmm(&histogram_build(&stream.pixel_series(k), stream.bins), window))
        .collect();
    DepthMap::new(stream.rows, stream.cols, tof)
}

pub struct PointResult {
    pub online: DepthMap,
    pub offline: DepthMap,
    pub truth: DepthMap,
    pub cmm: DepthMap,
    pub vs_flp: ErrorReport,
    pub vs_truth: ErrorReport,
    pub vs_cmm: ErrorReport,
    pub saturation_events: u64,
}

/// One acquisition scored against the floating-point reconstruction, the
/// scene ground truth and the local center of mass.
pub fn run_point(exp: &Experiment) -> Result<PointResult> {
    let acq = acquire(exp, true, |_| Ok(()))?;
    let online = build_depth_map(&acq.sketches, &exp.online_options())?;
    let offline = Reconstructor::new(exp.mode, exp.sketch.sketch_size, exp.sketch.bins, exp.offline_options())?
        .depth_map(exp.sketch.rows, exp.sketch.cols, &acq.flp)?;
    let cmm = cmm_depth_map(acq.timestamps.as_ref().expect("kept"), exp.cmm_window)?;
    Ok(PointResult {
        vs_flp: evaluate(&online, &offline, &exp.sketch)?,
        vs_truth: evaluate(&online, &acq.truth, &exp.sketch)?,
        vs_cmm: evaluate(&online, &cmm, &exp.sketch)?,
        online,
        offline,
        truth: acq.truth,
        cmm,
        saturation_events: acq.saturation_events,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    LutDepth,
    StopDelay,
    FxpFracBits,
    DetectionProb,
}

impl std::str::FromStr for SweepAxis {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lut_depth" => Ok(Self::LutDepth),
            "stop_delay" => Ok(Self::StopDelay),
            "fxp_frac_bits" => Ok(Self::FxpFracBits),
            "detection_prob" => Ok(Self::DetectionProb),
            other => Err(config_err!(
                "unknown sweep axis `{other}` (lut_depth, stop_delay, fxp_frac_bits, detection_prob)"
            )),
        }
    }
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            Self::LutDepth => "lut_depth",
            Self::StopDelay => "stop_delay",
            Self::FxpFracBits => "fxp_frac_bits",
            Self::DetectionProb => "detection_prob",
        }
    }

    pub fn apply(&self, base: &Experiment, value: f64) -> Result<Experiment> {
        let mut exp = base.clone();
        let whole = |v: f64| {
            if v.fract() != 0.0 || v < 0.0 {
                Err(config_err!("{} needs a non-negative integer, got {v}", self.name()))
            } else {
                Ok(v as u64)
            }
        };
        match self {
            Self::LutDepth => exp.lut_depth = whole(value)? as usize,
            Self::FxpFracBits => exp.frac_bits = whole(value)? as u32,
            Self::StopDelay => exp.stop_delay_bins = base.stop_delay_bins + value,
            Self::DetectionProb => exp.scene.detection_prob = value,
        }
        Ok(exp)
    }
}

/// The distance study: fifteen STOP delays of 250 bins (10 ns at 40 ps).
pub fn default_stop_delays() -> Vec<f64> {
    (1..=15).map(|k| 250.0 * f64::from(k)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub mean_depth_bins: f64,
    pub truth_mean_bins: f64,
    pub saturation_events: u64,
    pub vs_flp: ErrorReport,
    pub vs_truth: ErrorReport,
    pub vs_cmm: ErrorReport,
}

impl SweepRow {
    pub fn csv_header(axis: SweepAxis) -> String {
        let metrics = |p: &str| {
            format!("{p}_mean_abs_error_bins,{p}_rmse_bins,{p}_mean_log10_error,{p}_mean_error_bins")
        };
        format!(
            "{},mean_depth_bins,truth_mean_bins,saturation_events,valid_pixels,{},{},{},byte_ratio,frame_ratio",
            axis.name(),
            metrics("flp"),
            metrics("truth"),
            metrics("cmm")
        )
    }

    pub fn csv_row(&self) -> String {
        let m = |r: &ErrorReport| {
            format!("{:.6},{:.6},{:.6},{:.6}", r.mean_abs_error, r.rmse, r.mean_log_error, r.mean_error)
        };
        format!(
            "{},{:.6},{:.6},{},{},{},{},{},{:.4},{}",
            self.value,
            self.mean_depth_bins,
            self.truth_mean_bins,
            self.saturation_events,
            self.vs_truth.valid_pixels,
            m(&self.vs_flp),
            m(&self.vs_truth),
            m(&self.vs_cmm),
            self.vs_truth.byte_ratio,
            self.vs_truth.frame_ratio
        )
    }
}

/// Every point is validated before the first one runs; all points share
/// the base seed.
pub fn run_sweep(base: &Experiment, axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(config_err!("sweep over {} has no values", axis.name()));
    }
    let points = values
        .iter()
        .map(|&v| {
            let exp = axis.apply(base, v)?;
            exp.validate()?;
            Ok((v, exp))
        })
        .collect::<Result<Vec<_>>>()?;
    points
        .into_iter()
        .map(|(value, exp)| {
            let r = run_point(&exp)?;
            Ok(SweepRow {
                value,
                mean_depth_bins: r.online.mean().unwrap_or(f64::NAN),
                truth_mean_bins: r.truth.mean().unwrap_or(f64::NAN),
                saturation_events: r.saturation_events,
                vs_flp: r.vs_flp,
                vs_truth: r.vs_truth,
                vs_cmm: r.vs_cmm,
            })
        })
        .collect()
}

/// Ordinary least squares `y = slope·x + intercept`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    (sxx > 0.0).then(|| {
        let slope = sxy / sxx;
        (slope, my - slope * mx)
    })
}
