//! Emulation of the four streaming sketch processing elements.
//!
//! Per photon each SPE runs a modulo unit (`B = (X - i·Δ) mod T`), a binary
//! shift down to a ROM address, one ROM fetch and one saturating
//! read-modify-write of the pixel's accumulator. A second BRAM counts
//! photons. Nothing is emitted until `fmax` frames have been accumulated,
//! then every pixel is packed into the FIFO word layout.

use rayon::prelude::*;

use crate::error::{config_err, usage_err, Result};
use crate::fxp::{FxpFormat, FxpValue};
use crate::splines::{validate_depth, SketchConfig, SketchRom, SplineMode, TDC_BINS};

/// Number of SPEs; fixed by the two 32-bit FIFOs of two lanes each.
pub const LANES: usize = 4;

/// One TDC code. Code 0 is the "no photon this frame" sentinel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(transparent)]
pub struct SpadTimestamp(u16);

impl SpadTimestamp {
    pub const NONE: SpadTimestamp = SpadTimestamp(0);

    pub fn new(code: u16) -> Result<Self> {
        if u32::from(code) >= TDC_BINS {
            return Err(usage_err!("TDC code {code} exceeds 12 bits"));
        }
        Ok(Self(code))
    }

    pub fn code(&self) -> u16 {
        self.0
    }

    pub fn is_photon(&self) -> bool {
        self.0 != 0
    }
}

/// One readout of the whole array: a timestamp per pixel, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    rows: usize,
    cols: usize,
    codes: Vec<SpadTimestamp>,
}

impl Frame {
    pub fn new(rows: usize, cols: usize, codes: Vec<SpadTimestamp>) -> Result<Self> {
        if codes.len() != rows * cols {
            return Err(usage_err!(
                "frame of {} codes does not match {rows}x{cols}",
                codes.len()
            ));
        }
        Ok(Self { rows, cols, codes })
    }

    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            codes: vec![SpadTimestamp::NONE; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, code: SpadTimestamp) -> Self {
        Self {
            rows,
            cols,
            codes: vec![code; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn codes(&self) -> &[SpadTimestamp] {
        &self.codes
    }

    pub fn get(&self, row: usize, col: usize) -> SpadTimestamp {
        self.codes[row * self.cols + col]
    }
}

/// `(X - i·Δ) mod T` as the hardware does it: shift, subtract, compare,
/// conditionally add `T` back.
#[inline]
pub fn modulo_unit(x: u32, i: u32, cfg: &SketchConfig) -> u32 {
    let d = x as i32 - (i << cfg.delta_shift()) as i32;
    if d < 0 {
        (d + cfg.bins as i32) as u32
    } else {
        d as u32
    }
}

/// Downscale `B` to a ROM address by shifting out `log2 T - log2 depth` bits.
#[inline]
pub fn lut_address(b: u32, depth: usize, cfg: &SketchConfig) -> usize {
    (b >> (cfg.bins_bits() - depth.trailing_zeros())) as usize
}

/// FIFO words for one pixel. Lane 0 sits in the low half of `fifo1`,
/// lane 2 in the low half of `fifo2`; the photon count fills the low half
/// of `pc_word`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct PackedSketchRecord {
    pub fifo1: u32,
    pub fifo2: u32,
    pub pc_word: u32,
}

impl PackedSketchRecord {
    pub const BYTES: usize = 12;

    pub fn pack(raws: [i128; LANES], count: u16, fmt: FxpFormat) -> Self {
        let lane = |k: usize| fmt.to_bits(raws[k]) as u32 & 0xFFFF;
        Self {
            fifo1: lane(0) | (lane(1) << 16),
            fifo2: lane(2) | (lane(3) << 16),
            pc_word: u32::from(count),
        }
    }

    pub fn unpack(&self, fmt: FxpFormat) -> ([FxpValue; LANES], u16) {
        let halves = [
            self.fifo1 & 0xFFFF,
            self.fifo1 >> 16,
            self.fifo2 & 0xFFFF,
            self.fifo2 >> 16,
        ];
        let values = halves.map(|h| {
            let raw = fmt.from_bits(u64::from(h));
            let (raw, _) = fmt.saturate_raw(raw);
            FxpValue::from_raw(raw, fmt).expect("saturated raw is in range")
        });
        (values, (self.pc_word & 0xFFFF) as u16)
    }

    pub fn to_le_bytes(&self) -> [u8; Self::BYTES] {
        let mut out = [0u8; Self::BYTES];
        out[0..4].copy_from_slice(&self.fifo1.to_le_bytes());
        out[4..8].copy_from_slice(&self.fifo2.to_le_bytes());
        out[8..12].copy_from_slice(&self.pc_word.to_le_bytes());
        out
    }

    pub fn from_le_bytes(bytes: [u8; Self::BYTES]) -> Self {
        let word = |k: usize| u32::from_le_bytes(bytes[k..k + 4].try_into().unwrap());
        Self {
            fifo1: word(0),
            fifo2: word(4),
            pc_word: word(8),
        }
    }
}

/// Free-function form of [`PackedSketchRecord::unpack`].
pub fn unpack(record: &PackedSketchRecord, fmt: FxpFormat) -> ([FxpValue; LANES], u16) {
    record.unpack(fmt)
}

/// The compressed output of one acquisition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SketchFrame {
    pub rows: usize,
    pub cols: usize,
    pub fmax: u32,
    pub mode: SplineMode,
    pub depth: usize,
    pub fmt: FxpFormat,
    pub records: Vec<PackedSketchRecord>,
}

impl SketchFrame {
    pub fn pixels(&self) -> usize {
        self.rows * self.cols
    }

    /// Bin size of one ROM address, `T / depth`.
    pub fn downscale_ratio(&self) -> u32 {
        TDC_BINS / self.depth as u32
    }

    pub fn validate(&self) -> Result<()> {
        validate_depth(self.depth)?;
        if self.records.len() != self.pixels() {
            return Err(usage_err!(
                "{} records for a {}x{} array",
                self.records.len(),
                self.rows,
                self.cols
            ));
        }
        if self.mode.is_signed() != self.fmt.is_signed() || self.fmt.total_bits() > 16 {
            return Err(config_err!("format {} does not suit {} sketches", self.fmt, self.mode));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SpeState {
    config: SketchConfig,
    rom: SketchRom,
    fmt: FxpFormat,
    addr_shift: u32,
    accum: Vec<[i32; LANES]>,
    photon_counts: Vec<u16>,
    frame_index: u32,
    saturation_events: u64,
}

impl SpeState {
    /// Fails if the configuration could overflow the accumulators.
    pub fn new(config: SketchConfig, rom: SketchRom) -> Result<Self> {
        config.check_budget(rom.format())?;
        Self::new_unbudgeted(config, rom)
    }

    /// Skips the frame-budget check so overflow behaviour can be probed
    /// directly; all other configuration rules still apply.
    pub fn new_unbudgeted(config: SketchConfig, rom: SketchRom) -> Result<Self> {
        config.validate()?;
        if config.sketch_size as usize != LANES {
            return Err(config_err!(
                "the SPE bank is built for M = {LANES}, got {}",
                config.sketch_size
            ));
        }
        if rom.depth() > config.bins as usize {
            return Err(config_err!("ROM depth {} exceeds {} bins", rom.depth(), config.bins));
        }
        if rom.format().total_bits() > 16 {
            return Err(config_err!("{} does not fit the 16-bit FIFO lanes", rom.format()));
        }
        let pixels = config.pixels();
        Ok(Self {
            addr_shift: config.bins_bits() - rom.depth().trailing_zeros(),
            fmt: rom.format(),
            config,
            rom,
            accum: vec![[0; LANES]; pixels],
            photon_counts: vec![0; pixels],
            frame_index: 0,
            saturation_events: 0,
        })
    }

    pub fn config(&self) -> &SketchConfig {
        &self.config
    }

    pub fn rom(&self) -> &SketchRom {
        &self.rom
    }

    pub fn frame_index(&self) -> u32 {
        self.frame_index
    }

    pub fn saturation_events(&self) -> u64 {
        self.saturation_events
    }

    pub fn photon_count(&self, row: usize, col: usize) -> u16 {
        self.photon_counts[row * self.config.cols + col]
    }

    pub fn accumulators(&self, row: usize, col: usize) -> [FxpValue; LANES] {
        self.accum[row * self.config.cols + col]
            .map(|r| FxpValue::from_raw(i128::from(r), self.fmt).expect("accumulator in range"))
    }

    /// Raw accumulator lanes, row-major.
    pub fn raw_accumulators(&self) -> &[[i32; LANES]] {
        &self.accum
    }

    fn pixel_index(&self, row: usize, col: usize) -> Result<usize> {
        if row >= self.config.rows || col >= self.config.cols {
            return Err(usage_err!(
                "pixel ({row}, {col}) outside {}x{}",
                self.config.rows,
                self.config.cols
            ));
        }
        Ok(row * self.config.cols + col)
    }

    fn ensure_open(&self) -> Result<()> {
        if self.frame_index >= self.config.fmax {
            return Err(usage_err!(
                "acquisition already holds {} of {} frames",
                self.frame_index,
                self.config.fmax
            ));
        }
        Ok(())
    }

    /// Feed one timestamp for one pixel of the current frame.
    pub fn spe_step(&mut self, row: usize, col: usize, x: SpadTimestamp) -> Result<()> {
        self.ensure_open()?;
        let idx = self.pixel_index(row, col)?;
        if u32::from(x.code()) >= self.config.bins {
            return Err(usage_err!("code {} outside {} bins", x.code(), self.config.bins));
        }
        let datapath = Datapath::new(&self.rom, self.fmt, self.config, self.addr_shift);
        let sat = datapath.accumulate(&mut self.accum[idx], &mut self.photon_counts[idx], x);
        self.saturation_events += sat;
        Ok(())
    }

    /// Streams a full frame row-major through the SPEs and closes it.
    /// Rows are processed in parallel; per-pixel updates are disjoint.
    pub fn run_frame(&mut self, frame: &Frame) -> Result<()> {
        self.ensure_open()?;
        if frame.rows() != self.config.rows || frame.cols() != self.config.cols {
            return Err(usage_err!(
                "frame {}x{} does not match array {}x{}",
                frame.rows(),
                frame.cols(),
                self.config.rows,
                self.config.cols
            ));
        }
        if let Some(bad) = frame
            .codes()
            .iter()
            .find(|c| u32::from(c.code()) >= self.config.bins)
        {
            return Err(usage_err!("code {} outside {} bins", bad.code(), self.config.bins));
        }
        let datapath = Datapath::new(&self.rom, self.fmt, self.config, self.addr_shift);
        let cols = self.config.cols;
        let sat: u64 = self
            .accum
            .par_chunks_mut(cols)
            .zip(self.photon_counts.par_chunks_mut(cols))
            .zip(frame.codes().par_chunks(cols))
            .map(|((acc_row, pc_row), codes)| {
                acc_row
                    .iter_mut()
                    .zip(pc_row.iter_mut())
                    .zip(codes)
                    .map(|((acc, pc), &x)| datapath.accumulate(acc, pc, x))
                    .sum::<u64>()
            })
            .sum();
        self.saturation_events += sat;
        self.frame_index += 1;
        Ok(())
    }

    /// Closes the current frame after feeding pixels with [`spe_step`].
    ///
    /// [`spe_step`]: SpeState::spe_step
    pub fn end_frame(&mut self) -> Result<()> {
        self.ensure_open()?;
        self.frame_index += 1;
        Ok(())
    }

    /// Packs every pixel and clears the accumulators for the next
    /// acquisition. Only allowed once exactly `fmax` frames are in.
    pub fn readout(&mut self) -> Result<SketchFrame> {
        if self.frame_index != self.config.fmax {
            return Err(usage_err!(
                "readout after {} of {} frames",
                self.frame_index,
                self.config.fmax
            ));
        }
        let fmt = self.fmt;
        let records = self
            .accum
            .iter()
            .zip(&self.photon_counts)
            .map(|(acc, &pc)| PackedSketchRecord::pack(acc.map(i128::from), pc, fmt))
            .collect();
        self.accum.iter_mut().for_each(|a| *a = [0; LANES]);
        self.photon_counts.iter_mut().for_each(|c| *c = 0);
        self.frame_index = 0;
        Ok(SketchFrame {
            rows: self.config.rows,
            cols: self.config.cols,
            fmax: self.config.fmax,
            mode: self.rom.mode(),
            depth: self.rom.depth(),
            fmt,
            records,
        })
    }
}

/// Borrowed view of everything one photon update needs.
struct Datapath<'a> {
    rom: &'a SketchRom,
    fmt: FxpFormat,
    cfg: SketchConfig,
    addr_shift: u32,
}

impl<'a> Datapath<'a> {
    fn new(rom: &'a SketchRom, fmt: FxpFormat, cfg: SketchConfig, addr_shift: u32) -> Self {
        Self {
            rom,
            fmt,
            cfg,
            addr_shift,
        }
    }

    /// Returns the number of lanes that saturated.
    #[inline]
    fn accumulate(&self, acc: &mut [i32; LANES], pc: &mut u16, x: SpadTimestamp) -> u64 {
        if !x.is_photon() {
            return 0;
        }
        let mut sat = 0;
        for (i, lane) in acc.iter_mut().enumerate() {
            let b = modulo_unit(u32::from(x.code()), i as u32, &self.cfg);
            let entry = self.rom.raw_at((b >> self.addr_shift) as usize);
            let (sum, clipped) = self.fmt.add_raw_saturating(i128::from(*lane), entry);
            *lane = sum as i32;
            sat += u64::from(clipped);
        }
        *pc = pc.saturating_add(1);
        sat
    }
}
