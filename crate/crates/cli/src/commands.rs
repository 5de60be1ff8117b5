use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use sketch_core::experiment;
use sketch_core::io::{self as skio, TimestampWriter};
use sketch_core::reference::sketch_abs_diff;
use sketch_core::solver::{build_depth_map, Reconstructor};
use sketch_core::{
    compression_ratio, DepthMap, ErrorReport, FlpAccumulator, FxpFormat, ReconstructOptions, SketchConfig,
    SketchFrame, SketchRom, SplineMode, LANES,
};

use crate::config::RunConfig;
use crate::{CliError, ReconstructArgs};

pub const TIMESTAMPS_FILE: &str = "timestamps.skts";
pub const SKETCHES_FILE: &str = "sketches.skzf";
pub const TRUTH_FILE: &str = "truth.skdm";

fn out_dir(cfg: &RunConfig) -> Result<&Path, CliError> {
    fs::create_dir_all(&cfg.out).map_err(|e| CliError::Io(format!("{}: {e}", cfg.out.display())))?;
    Ok(&cfg.out)
}

fn with_path(path: &Path, e: sketch_core::Error) -> CliError {
    match CliError::from(e) {
        CliError::Io(m) => CliError::Io(format!("{}: {m}", path.display())),
        other => other,
    }
}

fn save<F>(path: &Path, body: F) -> Result<(), CliError>
where
    F: FnOnce(&mut dyn Write) -> sketch_core::Result<()>,
{
    skio::write_atomic(path, body).map_err(|e| with_path(path, e))
}

fn load<T>(path: &Path, read: fn(&mut std::io::BufReader<fs::File>) -> sketch_core::Result<T>) -> Result<T, CliError> {
    skio::open_reader(path)
        .and_then(|mut r| read(&mut r))
        .map_err(|e| with_path(path, e))
}

fn save_map(dir: &Path, stem: &str, column: &str, map: &DepthMap) -> Result<(), CliError> {
    save(&dir.join(format!("{stem}.skdm")), |w| skio::write_depth_map(w, map))?;
    save(&dir.join(format!("{stem}.csv")), |w| skio::write_map_csv(w, map, column))
}

pub fn genlut(cfg: &RunConfig) -> Result<(), CliError> {
    // every ROM is built before anything is written
    let roms = SplineMode::ALL
        .iter()
        .map(|&mode| {
            let fmt = FxpFormat::new(cfg.total_bits, cfg.frac_bits, mode.is_signed())?;
            SketchRom::build(mode, cfg.lut_depth, fmt, cfg.sketch_size)
        })
        .collect::<sketch_core::Result<Vec<_>>>()?;
    let dir = out_dir(cfg)?;
    for rom in &roms {
        let mut bytes = Vec::new();
        skio::write_rom(&mut bytes, rom)?;
        let path = dir.join(format!("rom_{}.bin", rom.mode()));
        save(&path, |w| Ok(w.write_all(&bytes)?))?;
        println!(
            "{}  {}  mode={} depth={} format={}",
            hex::encode(Sha256::digest(&bytes)),
            path.display(),
            rom.mode(),
            rom.depth(),
            rom.format()
        );
    }
    Ok(())
}

pub fn acquire(cfg: &RunConfig) -> Result<(), CliError> {
    let exp = cfg.experiment()?;
    let dir = out_dir(cfg)?;
    let ts_path = dir.join(TIMESTAMPS_FILE);
    let mut acq = None;
    save(&ts_path, |w| {
        let mut tw = TimestampWriter::new(w, exp.sketch.rows, exp.sketch.cols, exp.sketch.fmax, exp.sketch.bins)?;
        acq = Some(experiment::acquire(&exp, false, |f| tw.write_frame(f))?);
        tw.finish()
    })?;
    let acq = acq.expect("acquisition ran");
    save(&dir.join(SKETCHES_FILE), |w| skio::write_sketches(w, &acq.sketches))?;
    save(&dir.join(TRUTH_FILE), |w| skio::write_depth_map(w, &acq.truth))?;
    let ratio = compression_ratio(&exp.sketch);
    println!("frames={}", exp.sketch.fmax);
    println!("pixels={}", exp.sketch.pixels());
    println!("saturation_events={}", acq.saturation_events);
    println!("frame_ratio={}", ratio.frame_ratio);
    println!("byte_ratio={:.4}", ratio.byte_ratio);
    Ok(())
}

fn frame_config(frame: &SketchFrame) -> SketchConfig {
    SketchConfig {
        fmax: frame.fmax,
        ..SketchConfig::with_dims(frame.rows, frame.cols)
    }
}

fn same_size(a: &DepthMap, b: &DepthMap, what: &Path) -> Result<(), CliError> {
    if (a.rows, a.cols) != (b.rows, b.cols) {
        return Err(CliError::Io(format!(
            "{}: {}x{} map does not match the {}x{} sketch frame",
            what.display(),
            b.rows,
            b.cols,
            a.rows,
            a.cols
        )));
    }
    Ok(())
}

pub fn reconstruct(cfg: &RunConfig, args: &ReconstructArgs) -> Result<(), CliError> {
    let background = cfg.background()?;
    let solver = cfg.solver()?;
    let offset = cfg.offset()?;
    let sketch_path = args.sketches.clone().unwrap_or_else(|| cfg.out.join(SKETCHES_FILE));
    let frame = load(&sketch_path, skio::read_sketches)?;
    let reference = args.reference.as_deref().map(|p| load(p, skio::read_depth_map)).transpose()?;
    let stream = args.timestamps.as_deref().map(|p| load(p, skio::read_timestamps)).transpose()?;

    let online = ReconstructOptions {
        background,
        solver,
        offset_bins: offset.resolve(frame.depth),
    };
    let depth = build_depth_map(&frame, &online)?;
    let fcfg = frame_config(&frame);
    let dir = out_dir(cfg)?;
    save_map(dir, "depth", "tof_bins", &depth)?;

    let mut reports: Vec<(&str, ErrorReport)> = Vec::new();
    let mut score = |label, r: &DepthMap| match sketch_core::reference::evaluate(&depth, r, &fcfg) {
        Ok(rep) => {
            reports.push((label, rep));
            Ok(())
        }
        Err(sketch_core::Error::Usage(m)) => {
            eprintln!("spadsketch: no {label} score: {m}");
            Ok(())
        }
        Err(e) => Err(CliError::from(e)),
    };

    if let Some(r) = &reference {
        same_size(&depth, r, args.reference.as_deref().expect("given"))?;
        score("reference", r)?;
    }
    if let Some(stream) = &stream {
        let path = args.timestamps.as_deref().expect("given");
        if (stream.rows, stream.cols) != (frame.rows, frame.cols) {
            return Err(CliError::Io(format!(
                "{}: {}x{} stream does not match the {}x{} sketch frame",
                path.display(),
                stream.rows,
                stream.cols,
                frame.rows,
                frame.cols
            )));
        }
        let scfg = SketchConfig {
            bins: stream.bins,
            fmax: stream.frames.len() as u32,
            ..fcfg
        };
        let mut flp = FlpAccumulator::new(scfg, frame.mode);
        for f in &stream.frames {
            flp.add_frame(f)?;
        }
        let flp = flp.sketches();
        // exact timestamps carry no address truncation
        let offline = ReconstructOptions {
            offset_bins: 0.0,
            ..online
        };
        let flp_depth = Reconstructor::new(frame.mode, LANES as u32, stream.bins, offline)?
            .depth_map(frame.rows, frame.cols, &flp)?;
        let cmm = experiment::cmm_depth_map(stream, cfg.reconstruct.cmm_window)?;
        let fxp = sketch_core::solver::normalize_frame(&frame)?;
        let diff = DepthMap::new(frame.rows, frame.cols, sketch_abs_diff(&fxp, &flp))?;
        save_map(dir, "flp_depth", "tof_bins", &flp_depth)?;
        save_map(dir, "cmm_depth", "tof_bins", &cmm)?;
        save_map(dir, "sketch_diff", "abs_diff", &diff)?;
        score("flp", &flp_depth)?;
        score("cmm", &cmm)?;
    }

    if !reports.is_empty() {
        let report_path: PathBuf = dir.join("report.csv");
        save(&report_path, |w| {
            writeln!(w, "reference,{}", ErrorReport::CSV_HEADER)?;
            for (label, r) in &reports {
                writeln!(w, "{label},{}", r.csv_row())?;
            }
            Ok(())
        })?;
        for (label, r) in &reports {
            save_map(dir, &format!("error_{label}"), "error_bins", &r.per_pixel_error_bins)?;
            println!(
                "{label}: valid={} mae_bins={:.4} rmse_bins={:.4}",
                r.valid_pixels, r.mean_abs_error, r.rmse
            );
        }
    }
    println!("valid_pixels={}/{}", depth.valid_count(), frame.pixels());
    if let Some(m) = depth.mean() {
        println!("mean_tof_bins={m:.4}");
    }
    Ok(())
}

pub fn sweep(cfg: &RunConfig) -> Result<(), CliError> {
    let (axis, values) = cfg.sweep_plan()?;
    let exp = cfg.experiment()?;
    let rows = experiment::run_sweep(&exp, axis, &values)?;
    let dir = out_dir(cfg)?;
    let path = dir.join(format!("sweep_{}.csv", axis.name()));
    save(&path, |w| {
        writeln!(w, "{}", experiment::SweepRow::csv_header(axis))?;
        for r in &rows {
            writeln!(w, "{}", r.csv_row())?;
        }
        Ok(())
    })?;
    for r in &rows {
        println!(
            "{}={} mae_vs_flp={:.4} mae_vs_truth={:.4} saturation_events={}",
            axis.name(),
            r.value,
            r.vs_flp.mean_abs_error,
            r.vs_truth.mean_abs_error,
            r.saturation_events
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}
