//! Run configuration: one TOML file, every key optional, command-line
//! flags applied on top.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use sketch_core::experiment::{default_stop_delays, Experiment, MaskSpec, OffsetMode, SceneKind, SceneSpec, SweepAxis};
use sketch_core::solver::{Background, SolverKind};
use sketch_core::{IrfModel, IrfShape, SketchConfig, SplineMode, TDC_BINS};

use crate::CliError;

/// A number, or a keyword such as `"auto"`.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum NumOr {
    Num(f64),
    Word(String),
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: String,
    pub lut_depth: usize,
    pub total_bits: u32,
    pub frac_bits: u32,
    pub sketch_size: u32,
    pub fmax: u32,
    pub rows: usize,
    pub cols: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub scene: SceneConfig,
    pub irf: IrfConfig,
    pub reconstruct: ReconstructConfig,
    pub sweep: SweepConfig,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// `uniform`, `two_depth` or `ramp`.
    pub kind: String,
    pub tof_bins: f64,
    pub fg_bins: f64,
    pub bg_bins: f64,
    /// `rect` or `checkerboard`.
    pub mask: String,
    pub mask_fraction: f64,
    pub checker_cell: usize,
    pub from_bins: f64,
    pub to_bins: f64,
    pub detection_prob: f64,
    pub signal_fraction: f64,
    pub stop_delay_bins: f64,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct IrfConfig {
    /// `gaussian` or `delta`.
    pub shape: String,
    pub fwhm_bins: f64,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructConfig {
    /// `auto` (M·min z), `none`, or a fixed background fraction.
    pub background: NumOr,
    /// `auto`, `linear`, `fourier` or `grid`.
    pub solver: String,
    /// `auto` ((T/depth - 1)/2) or a fixed offset in bins.
    pub lut_offset: NumOr,
    pub cmm_window: u32,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: Option<String>,
    pub values: Option<Vec<f64>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sketch = SketchConfig::default();
        Self {
            mode: "p1".into(),
            lut_depth: 256,
            total_bits: 16,
            frac_bits: 7,
            sketch_size: sketch.sketch_size,
            fmax: sketch.fmax,
            rows: sketch.rows,
            cols: sketch.cols,
            seed: 1,
            out: PathBuf::from("out"),
            scene: SceneConfig::default(),
            irf: IrfConfig::default(),
            reconstruct: ReconstructConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl Default for SceneConfig {
    fn default() -> Self {
        // an object at 1.3 m in front of a board 1 m behind it
        Self {
            kind: "two_depth".into(),
            tof_bins: 1536.0,
            fg_bins: 217.0,
            bg_bins: 384.0,
            mask: "rect".into(),
            mask_fraction: 0.4,
            checker_cell: 8,
            from_bins: 150.0,
            to_bins: 3950.0,
            detection_prob: 0.8,
            signal_fraction: 0.9,
            stop_delay_bins: 0.0,
        }
    }
}

impl Default for IrfConfig {
    fn default() -> Self {
        Self {
            shape: "gaussian".into(),
            fwhm_bins: 50.0,
        }
    }
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        Self {
            background: NumOr::Word("auto".into()),
            solver: "auto".into(),
            lut_offset: NumOr::Word("auto".into()),
            cmm_window: 25,
        }
    }
}

fn config_error(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| config_error(format!("cannot read {}: {e}", p.display())))?;
                Self::parse(&text)
            }
        }
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| config_error(e.to_string()))
    }

    pub fn spline_mode(&self) -> Result<SplineMode, CliError> {
        self.mode.parse().map_err(|e: sketch_core::Error| config_error(e.to_string()))
    }

    pub fn sketch_config(&self) -> SketchConfig {
        SketchConfig {
            bins: TDC_BINS,
            sketch_size: self.sketch_size,
            rows: self.rows,
            cols: self.cols,
            fmax: self.fmax,
        }
    }

    pub fn background(&self) -> Result<Background, CliError> {
        match &self.reconstruct.background {
            NumOr::Num(b) if (0.0..=1.0).contains(b) => Ok(Background::Fixed(*b)),
            NumOr::Word(w) if w == "auto" => Ok(Background::MinSketch),
            NumOr::Word(w) if w == "none" => Ok(Background::None),
            other => Err(config_error(format!("background must be auto, none or in [0, 1], got {other:?}"))),
        }
    }

    pub fn solver(&self) -> Result<SolverKind, CliError> {
        match self.reconstruct.solver.as_str() {
            "auto" => Ok(SolverKind::Auto),
            "linear" => Ok(SolverKind::Linear),
            "fourier" => Ok(SolverKind::Fourier),
            "grid" => Ok(SolverKind::Grid),
            other => Err(config_error(format!("unknown solver `{other}`"))),
        }
    }

    pub fn offset(&self) -> Result<OffsetMode, CliError> {
        match &self.reconstruct.lut_offset {
            NumOr::Num(v) => Ok(OffsetMode::Fixed(*v)),
            NumOr::Word(w) if w == "auto" => Ok(OffsetMode::Auto),
            other => Err(config_error(format!("lut_offset must be auto or a number, got {other:?}"))),
        }
    }

    fn scene_spec(&self) -> Result<SceneSpec, CliError> {
        let s = &self.scene;
        let kind = match s.kind.as_str() {
            "uniform" => SceneKind::Uniform { tof_bins: s.tof_bins },
            "two_depth" => SceneKind::TwoDepth {
                fg_bins: s.fg_bins,
                bg_bins: s.bg_bins,
                mask: match s.mask.as_str() {
                    "rect" => MaskSpec::Rect(s.mask_fraction),
                    "checkerboard" => MaskSpec::Checkerboard(s.checker_cell),
                    other => return Err(config_error(format!("unknown mask `{other}`"))),
                },
            },
            "ramp" => SceneKind::Ramp {
                from_bins: s.from_bins,
                to_bins: s.to_bins,
            },
            other => return Err(config_error(format!("unknown scene kind `{other}`"))),
        };
        Ok(SceneSpec {
            kind,
            detection_prob: s.detection_prob,
            signal_fraction: s.signal_fraction,
        })
    }

    fn irf(&self) -> Result<IrfModel, CliError> {
        let shape = match self.irf.shape.as_str() {
            "gaussian" => IrfShape::Gaussian,
            "delta" => IrfShape::Delta,
            other => return Err(config_error(format!("unknown IRF shape `{other}`"))),
        };
        Ok(IrfModel {
            shape,
            fwhm_bins: if shape == IrfShape::Delta { 0.0 } else { self.irf.fwhm_bins },
        })
    }

    /// Maps onto the library experiment and checks every precondition.
    pub fn experiment(&self) -> Result<Experiment, CliError> {
        let exp = Experiment {
            sketch: self.sketch_config(),
            mode: self.spline_mode()?,
            lut_depth: self.lut_depth,
            total_bits: self.total_bits,
            frac_bits: self.frac_bits,
            scene: self.scene_spec()?,
            irf: self.irf()?,
            seed: self.seed,
            background: self.background()?,
            solver: self.solver()?,
            offset: self.offset()?,
            cmm_window: self.reconstruct.cmm_window,
            stop_delay_bins: self.scene.stop_delay_bins,
        };
        exp.validate().map_err(|e| config_error(e.to_string()))?;
        Ok(exp)
    }

    pub fn sweep_plan(&self) -> Result<(SweepAxis, Vec<f64>), CliError> {
        let axis: SweepAxis = self
            .sweep
            .axis
            .as_deref()
            .ok_or_else(|| config_error("sweep needs an axis"))?
            .parse()
            .map_err(|e: sketch_core::Error| config_error(e.to_string()))?;
        let values = match &self.sweep.values {
            Some(v) => v.clone(),
            None => match axis {
                SweepAxis::LutDepth => vec![32.0, 64.0, 128.0, 256.0],
                SweepAxis::StopDelay => default_stop_delays(),
                SweepAxis::FxpFracBits => vec![5.0, 6.0, 7.0],
                SweepAxis::DetectionProb => vec![0.1, 0.3, 0.5, 0.8, 1.0],
            },
        };
        if values.is_empty() {
            return Err(config_error(format!("sweep over {} has no values", axis.name())));
        }
        Ok((axis, values))
    }
}
