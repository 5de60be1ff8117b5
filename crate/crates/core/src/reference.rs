//! Full-precision references and error metrics.
//!
//! The floating-point sketch evaluates the basis at the exact timestamp
//! (no ROM, no address shift, no quantization). Histograms feed the local
//! center-of-mass pseudo ground truth. Errors are measured circularly on
//! the bin axis because time of flight wraps modulo `T`.

use rayon::prelude::*;

use crate::error::{usage_err, Result};
use crate::solver::{DepthMap, NormalizedSketch};
use crate::spe::{Frame, PackedSketchRecord, SpadTimestamp};
use crate::splines::{SketchConfig, SplineMode};

/// Bytes per raw timestamp in the stream file.
pub const TIMESTAMP_BYTES: usize = 2;
/// Default half-width of the center-of-mass window.
pub const DEFAULT_CMM_WINDOW: u32 = 25;

/// Basis values of every lane for one code, at full precision.
fn lanes_at(code: u32, mode: SplineMode, cfg: &SketchConfig, out: &mut [f64]) {
    let delta = f64::from(cfg.delta());
    for (i, v) in out.iter_mut().enumerate() {
        let b = (i64::from(code) - i as i64 * i64::from(cfg.delta())).rem_euclid(i64::from(cfg.bins));
        *v = mode.eval(b as f64 / delta, cfg.sketch_size);
    }
}

/// The sketch of a photon list evaluated with the continuous basis.
pub fn flp_sketch(
    timestamps: &[SpadTimestamp],
    mode: SplineMode,
    cfg: &SketchConfig,
    pixel: (usize, usize),
) -> Option<NormalizedSketch> {
    let m = cfg.sketch_size as usize;
    let mut sum = vec![0.0; m];
    let mut lanes = vec![0.0; m];
    let mut n = 0u32;
    for x in timestamps.iter().filter(|x| x.is_photon()) {
        lanes_at(u32::from(x.code()), mode, cfg, &mut lanes);
        sum.iter_mut().zip(&lanes).for_each(|(s, v)| *s += v);
        n += 1;
    }
    (n > 0).then(|| NormalizedSketch {
        z: sum.into_iter().map(|s| s / f64::from(n)).collect(),
        n,
        pixel,
    })
}

/// Streaming floating-point counterpart of the SPE bank, for whole frames.
#[derive(Clone, Debug)]
pub struct FlpAccumulator {
    cfg: SketchConfig,
    mode: SplineMode,
    table: Vec<f64>,
    sums: Vec<f64>,
    counts: Vec<u32>,
}

impl FlpAccumulator {
    pub fn new(cfg: SketchConfig, mode: SplineMode) -> Self {
        let m = cfg.sketch_size as usize;
        let mut table = vec![0.0; cfg.bins as usize * m];
        for (code, lanes) in table.chunks_exact_mut(m).enumerate() {
            lanes_at(code as u32, mode, &cfg, lanes);
        }
        Self {
            sums: vec![0.0; cfg.pixels() * m],
            counts: vec![0; cfg.pixels()],
            cfg,
            mode,
            table,
        }
    }

    pub fn mode(&self) -> SplineMode {
        self.mode
    }

    pub fn add_frame(&mut self, frame: &Frame) -> Result<()> {
        if frame.rows() != self.cfg.rows || frame.cols() != self.cfg.cols {
            return Err(usage_err!("frame size does not match the accumulator"));
        }
        let m = self.cfg.sketch_size as usize;
        let table = &self.table;
        self.sums
            .par_chunks_mut(m)
            .zip(self.counts.par_iter_mut())
            .zip(frame.codes().par_iter())
            .for_each(|((sum, n), x)| {
                if x.is_photon() {
                    let lanes = &table[usize::from(x.code()) * m..][..m];
                    sum.iter_mut().zip(lanes).for_each(|(s, v)| *s += v);
                    *n += 1;
                }
            });
        Ok(())
    }

    pub fn sketches(&self) -> Vec<Option<NormalizedSketch>> {
        let m = self.cfg.sketch_size as usize;
        let cols = self.cfg.cols;
        self.sums
            .chunks_exact(m)
            .zip(&self.counts)
            .enumerate()
            .map(|(k, (sum, &n))| {
                (n > 0).then(|| NormalizedSketch {
                    z: sum.iter().map(|s| s / f64::from(n)).collect(),
                    n,
                    pixel: (k / cols, k % cols),
                })
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Histogram {
    counts: Vec<u32>,
}

impl Histogram {
    pub fn new(bins: u32) -> Self {
        Self {
            counts: vec![0; bins as usize],
        }
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }

    pub fn add(&mut self, x: SpadTimestamp) {
        if x.is_photon() {
            self.counts[usize::from(x.code())] += 1;
        }
    }

    /// Sketch computed from the histogram: `Σ_x counts[x]·φ(x) / n`.
    pub fn sketch(&self, mode: SplineMode, cfg: &SketchConfig, pixel: (usize, usize)) -> Option<NormalizedSketch> {
        let m = cfg.sketch_size as usize;
        let n = self.total();
        if n == 0 {
            return None;
        }
        let mut sum = vec![0.0; m];
        let mut lanes = vec![0.0; m];
        for (x, &c) in self.counts.iter().enumerate().filter(|(_, &c)| c > 0) {
            lanes_at(x as u32, mode, cfg, &mut lanes);
            sum.iter_mut().zip(&lanes).for_each(|(s, v)| *s += f64::from(c) * v);
        }
        Some(NormalizedSketch {
            z: sum.into_iter().map(|s| s / n as f64).collect(),
            n: n as u32,
            pixel,
        })
    }
}

pub fn histogram_build(timestamps: &[SpadTimestamp], bins: u32) -> Histogram {
    let mut h = Histogram::new(bins);
    timestamps.iter().for_each(|&x| h.add(x));
    h
}

/// Centroid of the `±window` bins around the tallest bin (first on ties),
/// wrapping around the period.
pub fn local_cmm(h: &Histogram, window: u32) -> Option<f64> {
    let bins = h.counts.len() as i64;
    let (peak, &top) = h
        .counts
        .iter()
        .enumerate()
        .fold((0, &0), |best, cur| if cur.1 > best.1 { cur } else { best });
    if top == 0 {
        return None;
    }
    let w = i64::from(window);
    let (mut mass, mut moment) = (0.0, 0.0);
    for k in -w..=w {
        let x = peak as i64 + k;
        let c = f64::from(h.counts[x.rem_euclid(bins) as usize]);
        mass += c;
        moment += c * x as f64;
    }
    Some((moment / mass).rem_euclid(bins as f64))
}

/// Signed circular error folded into `(-T/2, T/2]`.
pub fn circular_error(est: f64, reference: f64, bins: u32) -> f64 {
    let t = f64::from(bins);
    let e = (est - reference).rem_euclid(t);
    if e > t / 2.0 {
        e - t
    } else {
        e
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompressionRatio {
    /// Input frames per emitted sketch frame.
    pub frame_ratio: f64,
    /// Raw timestamp bytes per packed sketch bytes.
    pub byte_ratio: f64,
}

pub fn compression_ratio(cfg: &SketchConfig) -> CompressionRatio {
    let pixels = cfg.pixels() as f64;
    let raw = f64::from(cfg.fmax) * pixels * TIMESTAMP_BYTES as f64;
    let packed = pixels * PackedSketchRecord::BYTES as f64;
    CompressionRatio {
        frame_ratio: f64::from(cfg.fmax),
        byte_ratio: raw / packed,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorReport {
    /// Signed circular error per pixel; `None` where either side is invalid.
    pub per_pixel_error_bins: DepthMap,
    pub valid_pixels: usize,
    pub mean_abs_error: f64,
    pub rmse: f64,
    /// Mean of `log10(|e| + 1)`.
    pub mean_log_error: f64,
    pub mean_error: f64,
    pub byte_ratio: f64,
    pub frame_ratio: f64,
}

impl ErrorReport {
    pub const CSV_HEADER: &'static str =
        "valid_pixels,mean_abs_error_bins,rmse_bins,mean_log10_error,mean_error_bins,byte_ratio,frame_ratio";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.4},{}",
            self.valid_pixels,
            self.mean_abs_error,
            self.rmse,
            self.mean_log_error,
            self.mean_error,
            self.byte_ratio,
            self.frame_ratio
        )
    }
}

pub fn evaluate(est: &DepthMap, reference: &DepthMap, cfg: &SketchConfig) -> Result<ErrorReport> {
    if est.rows != reference.rows || est.cols != reference.cols {
        return Err(usage_err!(
            "depth maps {}x{} and {}x{} differ in size",
            est.rows,
            est.cols,
            reference.rows,
            reference.cols
        ));
    }
    let errors: Vec<Option<f64>> = est
        .tof_bins
        .iter()
        .zip(&reference.tof_bins)
        .map(|(e, r)| Some(circular_error((*e)?, (*r)?, cfg.bins)))
        .collect();
    let valid: Vec<f64> = errors.iter().flatten().copied().collect();
    if valid.is_empty() {
        return Err(usage_err!("no pixel is valid in both maps"));
    }
    let n = valid.len() as f64;
    let ratio = compression_ratio(cfg);
    Ok(ErrorReport {
        valid_pixels: valid.len(),
        mean_abs_error: valid.iter().map(|e| e.abs()).sum::<f64>() / n,
        rmse: (valid.iter().map(|e| e * e).sum::<f64>() / n).sqrt(),
        mean_log_error: valid.iter().map(|e| (e.abs() + 1.0).log10()).sum::<f64>() / n,
        mean_error: valid.iter().sum::<f64>() / n,
        byte_ratio: ratio.byte_ratio,
        frame_ratio: ratio.frame_ratio,
        per_pixel_error_bins: DepthMap::new(est.rows, est.cols, errors)?,
    })
}

/// Largest per-lane |a - b| for each pixel valid on both sides.
pub fn sketch_abs_diff(a: &[Option<NormalizedSketch>], b: &[Option<NormalizedSketch>]) -> Vec<Option<f64>> {
    a.iter()
        .zip(b)
        .map(|(a, b)| {
            let (a, b) = (a.as_ref()?, b.as_ref()?);
            Some(a.z.iter().zip(&b.z).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
        })
        .collect()
}
