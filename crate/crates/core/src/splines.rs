//! Spline basis functions and the quantized ROM tables indexed by the SPEs.
//!
//! The polynomial bases are causal cardinal B-splines: `N_p` lives on
//! `[0, p + 1]`, so one photon touches exactly `p + 1` of the `M` sketches.
//! The Fourier basis is a single full-period cosine; the per-SPE argument
//! shift turns one table into cos, sin, -cos, -sin for `M = 4`.

use std::f64::consts::TAU;
use std::fmt;

use crate::error::{config_err, usage_err, Result};
use crate::fxp::{FxpFormat, FxpValue};

/// Number of TDC bins of the 12-bit sensor.
pub const TDC_BINS: u32 = 4096;
/// Default sketch size.
pub const DEFAULT_SKETCH_SIZE: u32 = 4;
/// ROM depth used by the hardware build.
pub const DEFAULT_LUT_DEPTH: usize = 256;
/// Frames accumulated per readout in the default acquisition.
pub const DEFAULT_FMAX: u32 = 512;
pub const SENSOR_ROWS: usize = 192;
pub const SENSOR_COLS: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SplineMode {
    /// Cardinal B-spline of the given degree (1 or 2).
    Polynomial(u8),
    Fourier,
}

impl SplineMode {
    pub const LINEAR: SplineMode = SplineMode::Polynomial(1);
    pub const QUADRATIC: SplineMode = SplineMode::Polynomial(2);
    pub const ALL: [SplineMode; 3] = [Self::LINEAR, Self::QUADRATIC, Self::Fourier];

    pub fn validate(&self, sketch_size: u32) -> Result<()> {
        match *self {
            SplineMode::Polynomial(p) if !(1..=2).contains(&p) => {
                Err(config_err!("polynomial degree {p} not supported (1 or 2)"))
            }
            SplineMode::Polynomial(p) if u32::from(p) + 1 > sketch_size => Err(config_err!(
                "degree {p} spline support does not fit a sketch of size {sketch_size}"
            )),
            _ => Ok(()),
        }
    }

    /// Fourier values are signed, polynomial values are not.
    pub fn is_signed(&self) -> bool {
        matches!(self, SplineMode::Fourier)
    }

    /// Code used in the ROM and sketch file headers.
    pub fn code(&self) -> u8 {
        match *self {
            SplineMode::Polynomial(p) => p,
            SplineMode::Fourier => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 | 2 => Some(SplineMode::Polynomial(code)),
            3 => Some(SplineMode::Fourier),
            _ => None,
        }
    }

    /// Average of the basis over one sketch period: what a uniformly
    /// distributed photon contributes to each sketch in expectation.
    pub fn period_mean(&self, sketch_size: u32) -> f64 {
        match self {
            SplineMode::Polynomial(_) => 1.0 / f64::from(sketch_size),
            SplineMode::Fourier => 0.0,
        }
    }

    /// Largest |dφ/dt| with `t` measured in cells.
    pub fn max_slope(&self, sketch_size: u32) -> f64 {
        match self {
            SplineMode::Polynomial(_) => 1.0,
            SplineMode::Fourier => TAU / f64::from(sketch_size),
        }
    }

    /// Unchecked evaluation; `t` is expected in `[0, sketch_size)`.
    #[inline]
    pub fn eval(&self, t: f64, sketch_size: u32) -> f64 {
        match *self {
            SplineMode::Polynomial(1) => {
                if t < 1.0 {
                    t
                } else if t < 2.0 {
                    2.0 - t
                } else {
                    0.0
                }
            }
            SplineMode::Polynomial(_) => {
                if t < 1.0 {
                    0.5 * t * t
                } else if t < 2.0 {
                    let c = t - 1.5;
                    0.75 - c * c
                } else if t < 3.0 {
                    let r = 3.0 - t;
                    0.5 * r * r
                } else {
                    0.0
                }
            }
            SplineMode::Fourier => (TAU * t / f64::from(sketch_size)).cos(),
        }
    }
}

impl fmt::Display for SplineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplineMode::Polynomial(p) => write!(f, "p{p}"),
            SplineMode::Fourier => f.write_str("fourier"),
        }
    }
}

impl std::str::FromStr for SplineMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "p1" | "linear" => Ok(Self::LINEAR),
            "p2" | "quadratic" => Ok(Self::QUADRATIC),
            "fourier" => Ok(Self::Fourier),
            other => Err(config_err!("unknown spline mode `{other}`")),
        }
    }
}

/// Basis value at `t` cells, `t` in `[0, sketch_size)`.
pub fn spline_basis_eval(mode: SplineMode, t: f64, sketch_size: u32) -> Result<f64> {
    if !(0.0..f64::from(sketch_size)).contains(&t) {
        return Err(usage_err!("basis argument {t} outside [0, {sketch_size})"));
    }
    Ok(mode.eval(t, sketch_size))
}

/// Geometry of the sketch: `T` bins split into `M` cells of `Δ = T / M`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SketchConfig {
    pub bins: u32,
    pub sketch_size: u32,
    pub rows: usize,
    pub cols: usize,
    pub fmax: u32,
}

impl Default for SketchConfig {
    fn default() -> Self {
        Self {
            bins: TDC_BINS,
            sketch_size: DEFAULT_SKETCH_SIZE,
            rows: SENSOR_ROWS,
            cols: SENSOR_COLS,
            fmax: DEFAULT_FMAX,
        }
    }
}

impl SketchConfig {
    pub fn with_dims(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            ..Self::default()
        }
    }

    pub fn delta(&self) -> u32 {
        self.bins / self.sketch_size
    }

    pub fn pixels(&self) -> usize {
        self.rows * self.cols
    }

    pub fn bins_bits(&self) -> u32 {
        self.bins.trailing_zeros()
    }

    pub fn delta_shift(&self) -> u32 {
        self.delta().trailing_zeros()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.bins.is_power_of_two() || !(16..=65536).contains(&self.bins) {
            return Err(config_err!("bin count {} must be a power of two in [16, 65536]", self.bins));
        }
        if !self.sketch_size.is_power_of_two() || self.sketch_size < 2 || self.sketch_size > self.bins {
            return Err(config_err!("sketch size {} must be a power of two >= 2", self.sketch_size));
        }
        if self.rows == 0 || self.cols == 0 {
            return Err(config_err!("pixel array {}x{} is empty", self.rows, self.cols));
        }
        if self.fmax == 0 {
            return Err(config_err!("fmax must be at least one frame"));
        }
        Ok(())
    }

    /// The accumulation budget for maximal entries in `fmt`.
    pub fn check_budget(&self, fmt: FxpFormat) -> Result<()> {
        if u64::from(self.fmax) > fmt.frame_budget() {
            return Err(config_err!(
                "fmax {} exceeds the {} frame budget of {fmt}",
                self.fmax,
                fmt.frame_budget()
            ));
        }
        Ok(())
    }
}

/// Checks the ROM depth rule; returns `log2(depth)`.
pub fn validate_depth(depth: usize) -> Result<u32> {
    if !depth.is_power_of_two() || !(32..=512).contains(&depth) {
        return Err(config_err!("LUT depth {depth} must be a power of two in [32, 512]"));
    }
    Ok(depth.trailing_zeros())
}

/// Precomputed quantized basis table for one spline mode.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SketchRom {
    mode: SplineMode,
    fmt: FxpFormat,
    entries: Vec<FxpValue>,
}

impl SketchRom {
    /// `entries[b] = quantize(clamp(φ(b·M/depth), ±(1 - 2^-F)))`.
    pub fn build(mode: SplineMode, depth: usize, fmt: FxpFormat, sketch_size: u32) -> Result<Self> {
        validate_depth(depth)?;
        mode.validate(sketch_size)?;
        Self::check_signedness(mode, fmt)?;
        let limit = 1.0 - fmt.lsb();
        let entries = (0..depth)
            .map(|b| {
                let t = b as f64 * f64::from(sketch_size) / depth as f64;
                let v = mode.eval(t, sketch_size).clamp(-limit, limit);
                FxpValue::quantize(v, fmt).value
            })
            .collect();
        Ok(Self { mode, fmt, entries })
    }

    /// Rebuilds a ROM from stored raws, as read back from a ROM file.
    pub fn from_raws(mode: SplineMode, fmt: FxpFormat, raws: &[i128]) -> Result<Self> {
        validate_depth(raws.len())?;
        Self::check_signedness(mode, fmt)?;
        let entries = raws
            .iter()
            .map(|&r| FxpValue::from_raw(r, fmt))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { mode, fmt, entries })
    }

    fn check_signedness(mode: SplineMode, fmt: FxpFormat) -> Result<()> {
        if mode.is_signed() != fmt.is_signed() {
            return Err(config_err!(
                "{mode} tables need a {} format, got {fmt}",
                if mode.is_signed() { "signed" } else { "unsigned" }
            ));
        }
        Ok(())
    }

    pub fn mode(&self) -> SplineMode {
        self.mode
    }

    pub fn depth(&self) -> usize {
        self.entries.len()
    }

    pub fn format(&self) -> FxpFormat {
        self.fmt
    }

    pub fn entries(&self) -> &[FxpValue] {
        &self.entries
    }

    pub fn lookup(&self, addr: usize) -> Result<FxpValue> {
        self.entries
            .get(addr)
            .copied()
            .ok_or_else(|| usage_err!("ROM address {addr} outside depth {}", self.depth()))
    }

    #[inline]
    pub(crate) fn raw_at(&self, addr: usize) -> i128 {
        self.entries[addr].raw()
    }
}

pub fn rom_lookup(rom: &SketchRom, addr: usize) -> Result<FxpValue> {
    rom.lookup(addr)
}
