//! Synthetic single-event SPAD array. Each pixel reports at most one photon
//! per frame; a detected photon is either a signal return spread by the
//! IRF around the pixel's time of flight or a uniformly distributed
//! background event.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{config_err, Result};
use crate::spe::{Frame, SpadTimestamp};
use crate::splines::TDC_BINS;

/// Nominal TDC bin width.
pub const BIN_SECONDS: f64 = 40e-12;
/// Default Gaussian IRF width in bins (2 ns pulse over 40 ps bins).
pub const DEFAULT_IRF_FWHM_BINS: f64 = 50.0;

const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScenePixel {
    pub tof_bins: f64,
    pub detection_prob: f64,
    pub signal_fraction: f64,
    pub active: bool,
}

impl ScenePixel {
    pub fn target(tof_bins: f64, detection_prob: f64, signal_fraction: f64) -> Self {
        Self {
            tof_bins,
            detection_prob,
            signal_fraction,
            active: true,
        }
    }

    fn validate(&self) -> Result<()> {
        let unit = 0.0..=1.0;
        if !unit.contains(&self.detection_prob) || !unit.contains(&self.signal_fraction) {
            return Err(config_err!(
                "detection probability {} and signal fraction {} must lie in [0, 1]",
                self.detection_prob,
                self.signal_fraction
            ));
        }
        if !(0.0..f64::from(TDC_BINS)).contains(&self.tof_bins) {
            return Err(config_err!("time of flight {} outside [0, {TDC_BINS})", self.tof_bins));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    rows: usize,
    cols: usize,
    pixels: Vec<ScenePixel>,
}

impl Scene {
    pub fn new(rows: usize, cols: usize, pixels: Vec<ScenePixel>) -> Result<Self> {
        if pixels.len() != rows * cols || pixels.is_empty() {
            return Err(config_err!("{} scene pixels for a {rows}x{cols} array", pixels.len()));
        }
        pixels.iter().try_for_each(ScenePixel::validate)?;
        Ok(Self { rows, cols, pixels })
    }

    pub fn uniform(rows: usize, cols: usize, pixel: ScenePixel) -> Result<Self> {
        Self::new(rows, cols, vec![pixel; rows * cols])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn pixels(&self) -> &[ScenePixel] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [ScenePixel] {
        &mut self.pixels
    }

    /// Ground-truth time of flight per pixel; `None` for inactive pixels.
    pub fn truth(&self) -> Vec<Option<f64>> {
        self.pixels
            .iter()
            .map(|p| p.active.then_some(p.tof_bins))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum IrfShape {
    Gaussian,
    Delta,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IrfModel {
    pub shape: IrfShape,
    pub fwhm_bins: f64,
}

impl IrfModel {
    pub const DELTA: IrfModel = IrfModel {
        shape: IrfShape::Delta,
        fwhm_bins: 0.0,
    };

    pub fn gaussian(fwhm_bins: f64) -> Result<Self> {
        let irf = Self {
            shape: IrfShape::Gaussian,
            fwhm_bins,
        };
        irf.validate()?;
        Ok(irf)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.fwhm_bins.is_finite() || self.fwhm_bins < 0.0 {
            return Err(config_err!("IRF width {} must be a finite non-negative", self.fwhm_bins));
        }
        if self.shape == IrfShape::Delta && self.fwhm_bins != 0.0 {
            return Err(config_err!("a delta IRF has zero width"));
        }
        Ok(())
    }

    pub fn sigma_bins(&self) -> f64 {
        self.fwhm_bins / FWHM_PER_SIGMA
    }
}

impl Default for IrfModel {
    fn default() -> Self {
        Self {
            shape: IrfShape::Gaussian,
            fwhm_bins: DEFAULT_IRF_FWHM_BINS,
        }
    }
}

/// Round, wrap into the TDC range and move a draw of 0 onto code 1.
fn to_code(t: f64) -> SpadTimestamp {
    let code = (t.round() as i64).rem_euclid(i64::from(TDC_BINS)) as u16;
    SpadTimestamp::new(code.max(1)).expect("wrapped into TDC range")
}

fn draw_pixel<R: Rng>(p: &ScenePixel, noise: Option<&Normal<f64>>, rng: &mut R) -> SpadTimestamp {
    // Fixed draw count per pixel keeps the stream aligned whatever the outcome.
    let detect: f64 = rng.random();
    let is_signal: f64 = rng.random();
    let uniform: f64 = rng.random();
    let jitter = noise.map_or(0.0, |n| n.sample(rng));
    if !p.active || detect >= p.detection_prob {
        return SpadTimestamp::NONE;
    }
    if is_signal < p.signal_fraction {
        to_code(p.tof_bins + jitter)
    } else {
        to_code(uniform * f64::from(TDC_BINS))
    }
}

/// One frame of the array. Each row draws from its own ChaCha stream of
/// `seed`, so the result is independent of thread scheduling.
pub fn generate_frame(scene: &Scene, irf: &IrfModel, seed: u64) -> Result<Frame> {
    irf.validate()?;
    let noise = match irf.shape {
        IrfShape::Gaussian if irf.fwhm_bins > 0.0 => Some(
            Normal::new(0.0, irf.sigma_bins())
                .map_err(|e| config_err!("IRF: {e}"))?,
        ),
        _ => None,
    };
    let cols = scene.cols;
    let codes: Vec<SpadTimestamp> = scene
        .pixels
        .par_chunks(cols)
        .enumerate()
        .flat_map_iter(|(row, pixels)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(row as u64);
            pixels
                .iter()
                .map(|p| draw_pixel(p, noise.as_ref(), &mut rng))
                .collect::<Vec<_>>()
        })
        .collect();
    Frame::new(scene.rows, cols, codes)
}

/// Derives per-frame seeds for an acquisition from one run seed.
#[derive(Clone, Debug)]
pub struct FrameSeeds(ChaCha8Rng);

impl FrameSeeds {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }
}

impl Iterator for FrameSeeds {
    type Item = u64;

    fn next(&mut self) -> Option<u64> {
        Some(self.0.next_u64())
    }
}

/// Shift every pixel's time of flight as a delayed STOP signal would.
pub fn apply_stop_delay(scene: &Scene, delay_bins: f64) -> Scene {
    let mut out = scene.clone();
    let bins = f64::from(TDC_BINS);
    for p in &mut out.pixels {
        p.tof_bins = (p.tof_bins + delay_bins).rem_euclid(bins);
    }
    out
}

/// Foreground where `mask` is set, background elsewhere.
pub fn make_two_depth_scene(
    rows: usize,
    cols: usize,
    fg: ScenePixel,
    bg: ScenePixel,
    mask: &[bool],
) -> Result<Scene> {
    if mask.len() != rows * cols {
        return Err(config_err!("mask of {} entries for a {rows}x{cols} array", mask.len()));
    }
    Scene::new(
        rows,
        cols,
        mask.iter().map(|&m| if m { fg } else { bg }).collect(),
    )
}

/// Centered rectangle covering `fraction` of each dimension.
pub fn rect_mask(rows: usize, cols: usize, fraction: f64) -> Vec<bool> {
    let (h, w) = ((rows as f64 * fraction) as usize, (cols as f64 * fraction) as usize);
    let (r0, c0) = ((rows - h) / 2, (cols - w) / 2);
    (0..rows * cols)
        .map(|k| {
            let (r, c) = (k / cols, k % cols);
            (r0..r0 + h).contains(&r) && (c0..c0 + w).contains(&c)
        })
        .collect()
}

pub fn checkerboard_mask(rows: usize, cols: usize, cell: usize) -> Vec<bool> {
    let cell = cell.max(1);
    (0..rows * cols)
        .map(|k| ((k / cols) / cell + (k % cols) / cell) % 2 == 1)
        .collect()
}

/// Distance in meters of a round trip lasting `tof_bins` TDC bins.
pub fn bins_to_meters(tof_bins: f64) -> f64 {
    const C: f64 = 299_792_458.0;
    tof_bins * BIN_SECONDS * C / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_delta_scene() {
        let scene = Scene::uniform(6, 5, ScenePixel::target(1536.0, 1.0, 1.0)).unwrap();
        let f = generate_frame(&scene, &IrfModel::DELTA, 1).unwrap();
        assert!(f.codes().iter().all(|c| c.code() == 1536));
    }

    #[test]
    fn no_detection_gives_zero_codes() {
        let scene = Scene::uniform(6, 5, ScenePixel::target(1536.0, 0.0, 1.0)).unwrap();
        let f = generate_frame(&scene, &IrfModel::default(), 1).unwrap();
        assert!(f.codes().iter().all(|c| !c.is_photon()));
    }

    #[test]
    fn inactive_pixels_are_silent() {
        let mut p = ScenePixel::target(100.0, 1.0, 0.5);
        p.active = false;
        let scene = Scene::uniform(3, 3, p).unwrap();
        let f = generate_frame(&scene, &IrfModel::default(), 9).unwrap();
        assert!(f.codes().iter().all(|c| !c.is_photon()));
    }

    #[test]
    fn invalid_probabilities_rejected() {
        assert!(Scene::uniform(2, 2, ScenePixel::target(10.0, 1.5, 1.0)).is_err());
        assert!(Scene::uniform(2, 2, ScenePixel::target(10.0, 0.5, -0.1)).is_err());
        assert!(Scene::uniform(2, 2, ScenePixel::target(4096.0, 0.5, 0.5)).is_err());
        assert!(IrfModel::gaussian(-1.0).is_err());
        assert!(IrfModel { shape: IrfShape::Delta, fwhm_bins: 3.0 }.validate().is_err());
    }

    #[test]
    fn detection_counts_follow_binomial() {
        let (rows, cols, frames, p) = (8, 8, 512, 0.3);
        let scene = Scene::uniform(rows, cols, ScenePixel::target(2000.0, p, 0.5)).unwrap();
        let mut counts = vec![0u32; rows * cols];
        for seed in FrameSeeds::new(42).take(frames) {
            let f = generate_frame(&scene, &IrfModel::default(), seed).unwrap();
            for (c, code) in counts.iter_mut().zip(f.codes()) {
                *c += u32::from(code.is_photon());
            }
        }
        let mean = frames as f64 * p;
        let sigma = (frames as f64 * p * (1.0 - p)).sqrt();
        for c in &counts {
            assert!((f64::from(*c) - mean).abs() < 5.0 * sigma, "count {c}");
        }
        // aggregate zero-code frequency
        let total = (rows * cols * frames) as f64;
        let zeros = total - counts.iter().map(|&c| f64::from(c)).sum::<f64>();
        let sigma_all = (total * p * (1.0 - p)).sqrt();
        assert!((zeros - total * (1.0 - p)).abs() < 5.0 * sigma_all);
    }

    #[test]
    fn reproducible_per_seed() {
        let scene = Scene::uniform(7, 9, ScenePixel::target(300.0, 0.7, 0.6)).unwrap();
        let irf = IrfModel::default();
        let a = generate_frame(&scene, &irf, 11).unwrap();
        let b = generate_frame(&scene, &irf, 11).unwrap();
        let c = generate_frame(&scene, &irf, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let s1: Vec<u64> = FrameSeeds::new(5).take(4).collect();
        let s2: Vec<u64> = FrameSeeds::new(5).take(4).collect();
        assert_eq!(s1, s2);
    }

    #[test]
    fn codes_stay_in_range_and_skip_zero() {
        let scene = Scene::uniform(16, 16, ScenePixel::target(2.0, 1.0, 0.5)).unwrap();
        let irf = IrfModel::gaussian(50.0).unwrap();
        for seed in FrameSeeds::new(1).take(20) {
            let f = generate_frame(&scene, &irf, seed).unwrap();
            assert!(f.codes().iter().all(|c| (1..4096).contains(&c.code())));
        }
    }

    #[test]
    fn stop_delay() {
        let scene = Scene::uniform(2, 2, ScenePixel::target(4000.0, 1.0, 1.0)).unwrap();
        assert_eq!(apply_stop_delay(&scene, 0.0), scene);
        let moved = apply_stop_delay(&scene, 200.0);
        assert!(moved.pixels().iter().all(|p| p.tof_bins == 104.0));

        let mut s = Scene::uniform(1, 1, ScenePixel::target(0.0, 1.0, 1.0)).unwrap();
        for _ in 0..15 {
            s = apply_stop_delay(&s, 250.0);
        }
        assert_eq!(s.pixels()[0].tof_bins, 3750.0);
    }

    #[test]
    fn two_depth_scenes() {
        let fg = ScenePixel::target(2166.0, 1.0, 1.0);
        let bg = ScenePixel::target(2333.0, 1.0, 1.0);
        let (rows, cols) = (12, 10);
        let none = make_two_depth_scene(rows, cols, fg, bg, &[false; 120]).unwrap();
        assert!(none.pixels().iter().all(|p| p.tof_bins == 2333.0));
        let all = make_two_depth_scene(rows, cols, fg, bg, &[true; 120]).unwrap();
        assert!(all.pixels().iter().all(|p| p.tof_bins == 2166.0));

        let board = make_two_depth_scene(rows, cols, fg, bg, &checkerboard_mask(rows, cols, 2)).unwrap();
        let mut modes: Vec<(u64, usize)> = Vec::new();
        for t in board.truth().into_iter().flatten() {
            match modes.iter_mut().find(|(v, _)| *v == t.to_bits()) {
                Some(m) => m.1 += 1,
                None => modes.push((t.to_bits(), 1)),
            }
        }
        assert_eq!(modes.len(), 2);
        assert!(modes.iter().all(|&(_, n)| n == 60));
        assert!(make_two_depth_scene(rows, cols, fg, bg, &[true]).is_err());
    }

    #[test]
    fn rect_mask_is_centered() {
        let m = rect_mask(10, 10, 0.4);
        assert_eq!(m.iter().filter(|&&b| b).count(), 16);
        assert!(m[3 * 10 + 3] && m[6 * 10 + 6] && !m[2 * 10 + 3]);
    }

    #[test]
    fn meters_per_bin() {
        assert!((bins_to_meters(1.0) - 0.005_995_849_16).abs() < 1e-10);
    }
}
