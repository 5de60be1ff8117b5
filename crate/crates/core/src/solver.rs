//! Offline reconstruction: divide the accumulated sketches by the photon
//! count, then invert the forward model of a single return: a closed-form
//! pair ratio for the linear basis, a two-point phase for the Fourier basis
//! and a dense grid search that serves every mode.

use std::f64::consts::TAU;

use rayon::prelude::*;
use thiserror::Error;

use crate::error::{config_err, usage_err, Result};
use crate::fxp::FxpValue;
use crate::spe::SketchFrame;
use crate::splines::{SplineMode, TDC_BINS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Error)]
pub enum InvalidPixel {
    #[error("no photons detected")]
    NoPhotons,
    #[error("nothing left after background removal")]
    NoSignal,
    #[error("sketch carries no phase")]
    NoPhase,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedSketch {
    pub z: Vec<f64>,
    pub n: u32,
    pub pixel: (usize, usize),
}

/// `z_i = accum_i / n`; `None` when the pixel saw no photons.
pub fn normalize(accum: &[FxpValue], n: u32, pixel: (usize, usize)) -> Option<NormalizedSketch> {
    (n > 0).then(|| NormalizedSketch {
        z: accum.iter().map(|v| v.to_real() / f64::from(n)).collect(),
        n,
        pixel,
    })
}

fn wrap_bins(t: f64, bins: u32) -> f64 {
    let t = t.rem_euclid(f64::from(bins));
    if t >= f64::from(bins) {
        0.0
    } else {
        t
    }
}

/// Closed-form inverse of the linear (hat) sketch.
///
/// A return at `t = Δ·(j + 1 + u)`, `u ∈ [0, 1)`, puts `1 - u` in sketch `j`
/// and `u` in sketch `j + 1`; the strongest adjacent pair locates `j` and
/// their ratio gives `u`.
pub fn solve_linear(sketch: &NormalizedSketch, background: f64, bins: u32) -> Result<f64, InvalidPixel> {
    let m = sketch.z.len();
    let floor = background / m as f64;
    let y: Vec<f64> = sketch.z.iter().map(|&v| (v - floor).max(0.0)).collect();
    let mut best = None::<(usize, f64)>;
    for j in 0..m {
        let pair = y[j] + y[(j + 1) % m];
        if best.is_none_or(|(_, b)| pair > b) {
            best = Some((j, pair));
        }
    }
    let (j, pair) = best.ok_or(InvalidPixel::NoSignal)?;
    if pair.is_nan() || pair <= 0.0 {
        return Err(InvalidPixel::NoSignal);
    }
    let delta = f64::from(bins) / m as f64;
    let u = y[(j + 1) % m] / pair;
    Ok(wrap_bins(delta * (j as f64 + 1.0 + u), bins))
}

/// Phase of the first harmonic, `atan2(s, c)` mapped onto the bin axis.
/// A uniform offset added to all sketches cancels in the differences.
pub fn solve_fourier(sketch: &NormalizedSketch, bins: u32) -> Result<f64, InvalidPixel> {
    let z = &sketch.z;
    let m = z.len();
    let (c, s) = if m == 4 {
        ((z[0] - z[2]) / 2.0, (z[1] - z[3]) / 2.0)
    } else {
        let k = 2.0 / m as f64;
        z.iter().enumerate().fold((0.0, 0.0), |(c, s), (i, &v)| {
            let a = TAU * i as f64 / m as f64;
            (c + k * v * a.cos(), s + k * v * a.sin())
        })
    };
    if c.hypot(s) <= 1e-12 {
        return Err(InvalidPixel::NoPhase);
    }
    Ok(wrap_bins(f64::from(bins) / TAU * s.atan2(c), bins))
}

/// Noiseless single-return sketch of a return at `t` bins.
pub fn forward_sketch(mode: SplineMode, t: f64, bins: u32, sketch_size: u32) -> Vec<f64> {
    let delta = f64::from(bins) / f64::from(sketch_size);
    (0..sketch_size)
        .map(|i| {
            let b = (t - f64::from(i) * delta).rem_euclid(f64::from(bins));
            mode.eval(b / delta, sketch_size)
        })
        .collect()
}

/// Exhaustive least-squares fit over candidate positions.
#[derive(Clone, Debug)]
pub struct GridSolver {
    mode: SplineMode,
    bins: u32,
    sketch_size: usize,
    step: f64,
    table: Vec<f64>,
}

impl GridSolver {
    pub const STEP_BINS: f64 = 0.25;

    pub fn new(mode: SplineMode, bins: u32, sketch_size: u32) -> Self {
        let steps = (f64::from(bins) / Self::STEP_BINS) as usize;
        let table = (0..steps)
            .flat_map(|k| forward_sketch(mode, k as f64 * Self::STEP_BINS, bins, sketch_size))
            .collect();
        Self {
            mode,
            bins,
            sketch_size: sketch_size as usize,
            step: Self::STEP_BINS,
            table,
        }
    }

    /// Position minimizing `|z - ((1 - b)·φ(t) + b·mean φ)|²`; the first
    /// (smallest) candidate wins ties.
    pub fn solve(&self, sketch: &NormalizedSketch, background: f64) -> f64 {
        let m = self.sketch_size;
        debug_assert_eq!(sketch.z.len(), m);
        let scale = 1.0 - background;
        let floor = background * self.mode.period_mean(m as u32);
        let mut best = (0usize, f64::INFINITY);
        for (k, model) in self.table.chunks_exact(m).enumerate() {
            let d: f64 = sketch
                .z
                .iter()
                .zip(model)
                .map(|(&z, &phi)| {
                    let r = z - (scale * phi + floor);
                    r * r
                })
                .sum();
            if d < best.1 {
                best = (k, d);
            }
        }
        best.0 as f64 * self.step
    }

    pub fn bins(&self) -> u32 {
        self.bins
    }
}

/// One-shot grid solve; build a [`GridSolver`] to reuse the table.
pub fn solve_grid(mode: SplineMode, sketch: &NormalizedSketch, background: f64, bins: u32) -> f64 {
    GridSolver::new(mode, bins, sketch.z.len() as u32).solve(sketch, background)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Background {
    None,
    Fixed(f64),
    /// `b = M·min_i z_i` for polynomial modes, zero for Fourier.
    MinSketch,
}

impl Background {
    pub fn estimate(&self, mode: SplineMode, z: &[f64]) -> f64 {
        match *self {
            Background::None => 0.0,
            Background::Fixed(b) => b,
            Background::MinSketch if mode.is_signed() => 0.0,
            Background::MinSketch => {
                z.len() as f64 * z.iter().copied().fold(f64::INFINITY, f64::min).max(0.0)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolverKind {
    /// Linear closed form for p=1, phase for Fourier, grid for p=2.
    Auto,
    Linear,
    Fourier,
    Grid,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReconstructOptions {
    pub background: Background,
    pub solver: SolverKind,
    /// Added to every estimate, then wrapped. Compensates the truncating
    /// ROM address shift, see [`lut_truncation_offset`].
    pub offset_bins: f64,
}

impl Default for ReconstructOptions {
    fn default() -> Self {
        Self {
            background: Background::MinSketch,
            solver: SolverKind::Auto,
            offset_bins: 0.0,
        }
    }
}

/// Mean position lost by `B >> shift`: a ROM address reads the basis at the
/// start of its `T / depth` bin cell, `(R_dc - 1) / 2` bins early on average.
pub fn lut_truncation_offset(depth: usize, bins: u32) -> f64 {
    (f64::from(bins) / depth as f64 - 1.0) / 2.0
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub rows: usize,
    pub cols: usize,
    pub tof_bins: Vec<Option<f64>>,
}

impl DepthMap {
    pub fn new(rows: usize, cols: usize, tof_bins: Vec<Option<f64>>) -> Result<Self> {
        if tof_bins.len() != rows * cols {
            return Err(usage_err!("{} depths for a {rows}x{cols} map", tof_bins.len()));
        }
        Ok(Self { rows, cols, tof_bins })
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.tof_bins[row * self.cols + col]
    }

    pub fn meters(&self) -> Vec<Option<f64>> {
        self.tof_bins
            .iter()
            .map(|t| t.map(crate::sensor::bins_to_meters))
            .collect()
    }

    pub fn valid_count(&self) -> usize {
        self.tof_bins.iter().flatten().count()
    }

    /// Mean of the valid entries.
    pub fn mean(&self) -> Option<f64> {
        let n = self.valid_count();
        (n > 0).then(|| self.tof_bins.iter().flatten().sum::<f64>() / n as f64)
    }
}

/// Per-pixel solving shared by the online and offline paths.
pub struct Reconstructor {
    mode: SplineMode,
    bins: u32,
    opts: ReconstructOptions,
    kind: SolverKind,
    grid: Option<GridSolver>,
}

impl Reconstructor {
    pub fn new(mode: SplineMode, sketch_size: u32, bins: u32, opts: ReconstructOptions) -> Result<Self> {
        let kind = match (opts.solver, mode) {
            (SolverKind::Auto, SplineMode::Polynomial(1)) => SolverKind::Linear,
            (SolverKind::Auto, SplineMode::Fourier) => SolverKind::Fourier,
            (SolverKind::Auto, _) => SolverKind::Grid,
            (SolverKind::Linear, SplineMode::Polynomial(1)) => SolverKind::Linear,
            (SolverKind::Fourier, SplineMode::Fourier) => SolverKind::Fourier,
            (SolverKind::Grid, _) => SolverKind::Grid,
            (k, m) => return Err(config_err!("{k:?} solver does not apply to {m} sketches")),
        };
        let grid = (kind == SolverKind::Grid).then(|| GridSolver::new(mode, bins, sketch_size));
        Ok(Self {
            mode,
            bins,
            opts,
            kind,
            grid,
        })
    }

    pub fn solve(&self, sketch: &NormalizedSketch) -> Result<f64, InvalidPixel> {
        let b = self.opts.background.estimate(self.mode, &sketch.z);
        let t = match self.kind {
            SolverKind::Linear => solve_linear(sketch, b, self.bins)?,
            SolverKind::Fourier => solve_fourier(sketch, self.bins)?,
            _ => self.grid.as_ref().expect("grid built").solve(sketch, b),
        };
        Ok(wrap_bins(t + self.opts.offset_bins, self.bins))
    }

    pub fn depth_map(&self, rows: usize, cols: usize, sketches: &[Option<NormalizedSketch>]) -> Result<DepthMap> {
        let tof = sketches
            .par_iter()
            .map(|s| s.as_ref().and_then(|s| self.solve(s).ok()))
            .collect();
        DepthMap::new(rows, cols, tof)
    }
}

/// Normalizes every record of an acquisition.
pub fn normalize_frame(frame: &SketchFrame) -> Result<Vec<Option<NormalizedSketch>>> {
    frame.validate()?;
    Ok(frame
        .records
        .par_iter()
        .enumerate()
        .map(|(k, r)| {
            let (vals, n) = r.unpack(frame.fmt);
            normalize(&vals, u32::from(n), (k / frame.cols, k % frame.cols))
        })
        .collect())
}

/// Depth map of an online acquisition.
pub fn build_depth_map(frame: &SketchFrame, opts: &ReconstructOptions) -> Result<DepthMap> {
    let sketches = normalize_frame(frame)?;
    Reconstructor::new(frame.mode, crate::spe::LANES as u32, TDC_BINS, *opts)?
        .depth_map(frame.rows, frame.cols, &sketches)
}
