//! Little-endian artifact files.
//!
//! | file        | header                                                        | body                              |
//! |-------------|---------------------------------------------------------------|-----------------------------------|
//! | ROM         | `"SKR"`, mode u8, depth u16, I u8, F u8 (8 bytes)             | depth × u16 raw                   |
//! | timestamps  | `"SKTS"`, rows, cols, frames, T as u32 (20 bytes)             | frames × rows × cols × u16 code   |
//! | sketches    | `"SKZF"`, rows, cols, fmax, mode, depth, I, F as u32 (32 B)   | rows × cols × (fifo1, fifo2, pc)  |
//! | depth map   | `"SKDM"`, rows, cols as u32 (12 bytes)                        | rows × cols × f32, NaN = invalid  |

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{format_err, Error, Result};
use crate::fxp::FxpFormat;
use crate::solver::DepthMap;
use crate::spe::{Frame, PackedSketchRecord, SketchFrame, SpadTimestamp};
use crate::splines::{validate_depth, SketchRom, SplineMode};

pub const ROM_MAGIC: &[u8; 3] = b"SKR";
pub const TIMESTAMP_MAGIC: &[u8; 4] = b"SKTS";
pub const SKETCH_MAGIC: &[u8; 4] = b"SKZF";
pub const DEPTH_MAGIC: &[u8; 4] = b"SKDM";
/// Bit pattern written for invalid depth-map pixels.
pub const INVALID_DEPTH_BITS: u32 = 0x7FC0_0000;

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => format_err!("file is truncated"),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn expect_magic<R: Read>(r: &mut R, magic: &[u8]) -> Result<()> {
    let mut b = vec![0u8; magic.len()];
    read_exact(r, &mut b)?;
    if b != magic {
        return Err(format_err!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&b),
            String::from_utf8_lossy(magic)
        ));
    }
    Ok(())
}

fn expect_end<R: Read>(r: &mut R) -> Result<()> {
    let mut b = [0u8; 1];
    match r.read(&mut b)? {
        0 => Ok(()),
        _ => Err(format_err!("trailing bytes after payload")),
    }
}

fn fmt_from_header(mode: SplineMode, total: u32, frac: u32) -> Result<FxpFormat> {
    FxpFormat::new(total, frac, mode.is_signed()).map_err(|e| format_err!("{e}"))
}

/// Write through a temp file in the target directory, then rename into
/// place, so readers never observe a partial file.
pub fn write_atomic<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut builder = tempfile::Builder::new();
    #[cfg(unix)]
    builder.permissions(std::os::unix::fs::PermissionsExt::from_mode(0o644));
    let tmp = builder.tempfile_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        body(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn open_reader(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

pub fn write_rom<W: Write + ?Sized>(w: &mut W, rom: &SketchRom) -> Result<()> {
    let fmt = rom.format();
    if fmt.total_bits() > 16 {
        return Err(format_err!("ROM entries of {fmt} do not fit 16 bits"));
    }
    w.write_all(ROM_MAGIC)?;
    w.write_all(&[rom.mode().code()])?;
    w.write_all(&(rom.depth() as u16).to_le_bytes())?;
    w.write_all(&[fmt.total_bits() as u8, fmt.frac_bits() as u8])?;
    for e in rom.entries() {
        w.write_all(&(fmt.to_bits(e.raw()) as u16).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_rom<R: Read>(r: &mut R) -> Result<SketchRom> {
    expect_magic(r, ROM_MAGIC)?;
    let mut h = [0u8; 5];
    read_exact(r, &mut h)?;
    let mode = SplineMode::from_code(h[0]).ok_or_else(|| format_err!("unknown mode code {}", h[0]))?;
    let depth = usize::from(u16::from_le_bytes([h[1], h[2]]));
    validate_depth(depth).map_err(|e| format_err!("{e}"))?;
    let fmt = fmt_from_header(mode, u32::from(h[3]), u32::from(h[4]))?;
    let raws = (0..depth)
        .map(|_| Ok(fmt.from_bits(u64::from(read_u16(r)?))))
        .collect::<Result<Vec<_>>>()?;
    expect_end(r)?;
    SketchRom::from_raws(mode, fmt, &raws).map_err(|e| format_err!("{e}"))
}

/// Streaming writer for the timestamp file; the frame count is fixed up
/// front so the header can be written first.
pub struct TimestampWriter<'a, W: Write + ?Sized> {
    w: &'a mut W,
    rows: usize,
    cols: usize,
    remaining: u32,
}

impl<'a, W: Write + ?Sized> TimestampWriter<'a, W> {
    pub fn new(w: &'a mut W, rows: usize, cols: usize, frames: u32, bins: u32) -> Result<Self> {
        w.write_all(TIMESTAMP_MAGIC)?;
        for v in [rows as u32, cols as u32, frames, bins] {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(Self {
            w,
            rows,
            cols,
            remaining: frames,
        })
    }

    pub fn write_frame(&mut self, frame: &Frame) -> Result<()> {
        if self.remaining == 0 || frame.rows() != self.rows || frame.cols() != self.cols {
            return Err(format_err!("frame does not fit the declared stream"));
        }
        let bytes: Vec<u8> = frame
            .codes()
            .iter()
            .flat_map(|c| c.code().to_le_bytes())
            .collect();
        self.w.write_all(&bytes)?;
        self.remaining -= 1;
        Ok(())
    }

    pub fn finish(self) -> Result<()> {
        if self.remaining != 0 {
            return Err(format_err!("{} declared frames never written", self.remaining));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TimestampStream {
    pub rows: usize,
    pub cols: usize,
    pub bins: u32,
    pub frames: Vec<Frame>,
}

impl TimestampStream {
    /// All timestamps of one pixel in frame order.
    pub fn pixel_series(&self, index: usize) -> Vec<SpadTimestamp> {
        self.frames.iter().map(|f| f.codes()[index]).collect()
    }
}

pub fn write_timestamps<W: Write + ?Sized>(w: &mut W, stream: &TimestampStream) -> Result<()> {
    let mut tw = TimestampWriter::new(w, stream.rows, stream.cols, stream.frames.len() as u32, stream.bins)?;
    stream.frames.iter().try_for_each(|f| tw.write_frame(f))?;
    tw.finish()
}

pub fn read_timestamps<R: Read>(r: &mut R) -> Result<TimestampStream> {
    expect_magic(r, TIMESTAMP_MAGIC)?;
    let rows = read_u32(r)? as usize;
    let cols = read_u32(r)? as usize;
    let frames = read_u32(r)?;
    let bins = read_u32(r)?;
    if rows == 0 || cols == 0 || bins == 0 || bins > 65536 {
        return Err(format_err!("implausible stream header {rows}x{cols}, T={bins}"));
    }
    let mut buf = vec![0u8; rows * cols * 2];
    let mut out = Vec::with_capacity(frames as usize);
    for _ in 0..frames {
        read_exact(r, &mut buf)?;
        let codes = buf
            .chunks_exact(2)
            .map(|b| {
                let c = u16::from_le_bytes([b[0], b[1]]);
                if u32::from(c) >= bins {
                    return Err(format_err!("code {c} outside {bins} bins"));
                }
                SpadTimestamp::new(c).map_err(|e| format_err!("{e}"))
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(Frame::new(rows, cols, codes)?);
    }
    expect_end(r)?;
    Ok(TimestampStream {
        rows,
        cols,
        bins,
        frames: out,
    })
}

pub fn write_sketches<W: Write + ?Sized>(w: &mut W, frame: &SketchFrame) -> Result<()> {
    frame.validate()?;
    w.write_all(SKETCH_MAGIC)?;
    let header = [
        frame.rows as u32,
        frame.cols as u32,
        frame.fmax,
        u32::from(frame.mode.code()),
        frame.depth as u32,
        frame.fmt.total_bits(),
        frame.fmt.frac_bits(),
    ];
    for v in header {
        w.write_all(&v.to_le_bytes())?;
    }
    let body: Vec<u8> = frame.records.iter().flat_map(|r| r.to_le_bytes()).collect();
    w.write_all(&body)?;
    Ok(())
}

pub fn read_sketches<R: Read>(r: &mut R) -> Result<SketchFrame> {
    expect_magic(r, SKETCH_MAGIC)?;
    let mut h = [0u32; 7];
    for v in &mut h {
        *v = read_u32(r)?;
    }
    let [rows, cols, fmax, mode, depth, total, frac] = h;
    let mode = u8::try_from(mode)
        .ok()
        .and_then(SplineMode::from_code)
        .ok_or_else(|| format_err!("unknown mode code {mode}"))?;
    let fmt = fmt_from_header(mode, total, frac)?;
    let (rows, cols) = (rows as usize, cols as usize);
    if rows == 0 || cols == 0 {
        return Err(format_err!("empty sketch array"));
    }
    let mut records = Vec::with_capacity(rows * cols);
    let mut b = [0u8; PackedSketchRecord::BYTES];
    for _ in 0..rows * cols {
        read_exact(r, &mut b)?;
        records.push(PackedSketchRecord::from_le_bytes(b));
    }
    expect_end(r)?;
    let frame = SketchFrame {
        rows,
        cols,
        fmax,
        mode,
        depth: depth as usize,
        fmt,
        records,
    };
    frame.validate().map_err(|e| format_err!("{e}"))?;
    Ok(frame)
}

pub fn write_depth_map<W: Write + ?Sized>(w: &mut W, map: &DepthMap) -> Result<()> {
    w.write_all(DEPTH_MAGIC)?;
    w.write_all(&(map.rows as u32).to_le_bytes())?;
    w.write_all(&(map.cols as u32).to_le_bytes())?;
    let body: Vec<u8> = map
        .tof_bins
        .iter()
        .flat_map(|t| {
            let bits = match t {
                Some(v) if !v.is_nan() => (*v as f32).to_bits(),
                _ => INVALID_DEPTH_BITS,
            };
            bits.to_le_bytes()
        })
        .collect();
    w.write_all(&body)?;
    Ok(())
}

pub fn read_depth_map<R: Read>(r: &mut R) -> Result<DepthMap> {
    expect_magic(r, DEPTH_MAGIC)?;
    let rows = read_u32(r)? as usize;
    let cols = read_u32(r)? as usize;
    let mut tof = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        let v = f32::from_bits(read_u32(r)?);
        tof.push((!v.is_nan()).then_some(f64::from(v)));
    }
    expect_end(r)?;
    DepthMap::new(rows, cols, tof)
}

/// `row,col,value` with an empty value for invalid pixels.
pub fn write_map_csv<W: Write + ?Sized>(w: &mut W, map: &DepthMap, column: &str) -> Result<()> {
    writeln!(w, "row,col,{column}")?;
    for (k, t) in map.tof_bins.iter().enumerate() {
        match t {
            Some(v) => writeln!(w, "{},{},{v:.4}", k / map.cols, k % map.cols)?,
            None => writeln!(w, "{},{},", k / map.cols, k % map.cols)?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spe::SpeState;
    use crate::splines::SketchConfig;

    fn rom_bytes(rom: &SketchRom) -> Vec<u8> {
        let mut v = Vec::new();
        write_rom(&mut v, rom).unwrap();
        v
    }

    #[test]
    fn rom_layout_and_round_trip() {
        let rom = SketchRom::build(SplineMode::LINEAR, 256, FxpFormat::Q16_7, 4).unwrap();
        let bytes = rom_bytes(&rom);
        assert_eq!(bytes.len(), 8 + 512);
        assert_eq!(&bytes[..8], &[b'S', b'K', b'R', 1, 0, 1, 16, 7]);
        assert_eq!(&bytes[8 + 128..8 + 130], &127u16.to_le_bytes());
        let back = read_rom(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, rom);
        assert_eq!(rom_bytes(&back), bytes);

        let f = SketchRom::build(SplineMode::Fourier, 64, FxpFormat::signed(16, 7).unwrap(), 4).unwrap();
        assert_eq!(read_rom(&mut rom_bytes(&f).as_slice()).unwrap(), f);
    }

    #[test]
    fn rom_rejects_garbage() {
        let rom = SketchRom::build(SplineMode::LINEAR, 32, FxpFormat::Q16_7, 4).unwrap();
        let bytes = rom_bytes(&rom);
        assert!(matches!(read_rom(&mut &bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_rom(&mut bad.as_slice()), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[3] = 9;
        assert!(matches!(read_rom(&mut bad.as_slice()), Err(Error::Format(_))));
        let mut long = bytes;
        long.push(0);
        assert!(matches!(read_rom(&mut long.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn timestamps_round_trip() {
        let codes = |k: u16| (0..6).map(|i| SpadTimestamp::new(k * 7 + i).unwrap()).collect();
        let stream = TimestampStream {
            rows: 2,
            cols: 3,
            bins: 4096,
            frames: (0..4).map(|k| Frame::new(2, 3, codes(k)).unwrap()).collect(),
        };
        let mut v = Vec::new();
        write_timestamps(&mut v, &stream).unwrap();
        assert_eq!(v.len(), 20 + 4 * 6 * 2);
        assert_eq!(&v[..4], b"SKTS");
        let back = read_timestamps(&mut v.as_slice()).unwrap();
        assert_eq!(back, stream);
        assert_eq!(back.pixel_series(1).iter().map(|c| c.code()).collect::<Vec<_>>(), vec![1, 8, 15, 22]);
        assert!(read_timestamps(&mut &v[..v.len() - 2]).is_err());
    }

    #[test]
    fn timestamp_writer_enforces_count() {
        let mut v = Vec::new();
        let tw = TimestampWriter::new(&mut v, 1, 1, 2, 4096).unwrap();
        assert!(tw.finish().is_err());
    }

    #[test]
    fn sketches_round_trip() {
        let cfg = SketchConfig {
            rows: 2,
            cols: 2,
            fmax: 1,
            ..SketchConfig::default()
        };
        let rom = SketchRom::build(SplineMode::LINEAR, 256, FxpFormat::Q16_7, 4).unwrap();
        let mut s = SpeState::new(cfg, rom).unwrap();
        s.run_frame(&Frame::filled(2, 2, SpadTimestamp::new(1536).unwrap())).unwrap();
        let frame = s.readout().unwrap();
        let mut v = Vec::new();
        write_sketches(&mut v, &frame).unwrap();
        assert_eq!(v.len(), 32 + 4 * 12);
        assert_eq!(&v[32..44], &[0x40, 0, 0x40, 0, 0, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(read_sketches(&mut v.as_slice()).unwrap(), frame);
        assert!(matches!(read_sketches(&mut &v[..40]), Err(Error::Format(_))));
    }

    #[test]
    fn depth_map_round_trip() {
        let map = DepthMap::new(1, 3, vec![Some(1536.25), None, Some(0.1)]).unwrap();
        let mut v = Vec::new();
        write_depth_map(&mut v, &map).unwrap();
        assert_eq!(&v[16..20], &INVALID_DEPTH_BITS.to_le_bytes());
        let back = read_depth_map(&mut v.as_slice()).unwrap();
        assert_eq!(back.tof_bins[0], Some(1536.25));
        assert_eq!(back.tof_bins[1], None);
        let mut again = Vec::new();
        write_depth_map(&mut again, &back).unwrap();
        assert_eq!(again, v);
    }
}
