use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sketch_core::io::{read_depth_map, read_rom, read_sketches};

fn spadsketch(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spadsketch"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn spadsketch")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = spadsketch(dir, args);
    assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

const SMALL: &[&str] = &["--rows", "12", "--cols", "10"];

fn acquire(dir: &Path, out: &str, extra: &[&str]) -> String {
    let mut args = vec!["acquire", "--out", out];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    ok(dir, &args)
}

#[test]
fn genlut_writes_three_roms() {
    let t = tempfile::tempdir().unwrap();
    let stdout = ok(t.path(), &["genlut", "--out", "roms"]);
    assert_eq!(stdout.lines().count(), 3);
    let p1 = read_rom(&mut fs::File::open(t.path().join("roms/rom_p1.bin")).unwrap()).unwrap();
    assert_eq!(p1.depth(), 256);
    assert_eq!(p1.lookup(64).unwrap().raw(), 127);
    assert_eq!(p1.lookup(0).unwrap().raw(), 0);
    let f = read_rom(&mut fs::File::open(t.path().join("roms/rom_fourier.bin")).unwrap()).unwrap();
    assert!(f.format().is_signed());
    assert_eq!(f.lookup(0).unwrap().raw(), 127);
    assert_eq!(f.lookup(128).unwrap().raw(), -127);
    // checksum column matches the file
    let again = ok(t.path(), &["genlut", "--out", "roms"]);
    assert_eq!(stdout, again);
}

#[test]
fn genlut_rejects_bad_depth() {
    let t = tempfile::tempdir().unwrap();
    for depth in ["0", "100", "1024"] {
        let out = spadsketch(t.path(), &["genlut", "--lut-depth", depth, "--out", "o"]);
        assert_eq!(code(&out), 2, "depth {depth}");
    }
    assert!(!t.path().join("o").exists());
}

#[test]
fn config_file_and_flag_precedence() {
    let t = tempfile::tempdir().unwrap();
    fs::write(t.path().join("run.toml"), "lut_depth = 64\nfrac_bits = 6\n").unwrap();
    ok(t.path(), &["--config", "run.toml", "genlut", "--out", "a"]);
    ok(t.path(), &["--config", "run.toml", "genlut", "--lut-depth", "128", "--out", "b"]);
    let a = read_rom(&mut fs::File::open(t.path().join("a/rom_p2.bin")).unwrap()).unwrap();
    let b = read_rom(&mut fs::File::open(t.path().join("b/rom_p2.bin")).unwrap()).unwrap();
    assert_eq!((a.depth(), a.format().frac_bits()), (64, 6));
    assert_eq!((b.depth(), b.format().frac_bits()), (128, 6));

    fs::write(t.path().join("bad.toml"), "lut_dept = 64\n").unwrap();
    assert_eq!(code(&spadsketch(t.path(), &["--config", "bad.toml", "genlut"])), 2);
    assert_eq!(code(&spadsketch(t.path(), &["--config", "missing.toml", "genlut"])), 2);
}

#[test]
fn acquisition_is_deterministic() {
    let t = tempfile::tempdir().unwrap();
    let s1 = acquire(t.path(), "a", &["--seed", "9"]);
    let s2 = acquire(t.path(), "b", &["--seed", "9", "--threads", "1"]);
    acquire(t.path(), "c", &["--seed", "10"]);
    assert_eq!(s1, s2);
    for f in ["timestamps.skts", "sketches.skzf", "truth.skdm"] {
        let a = fs::read(t.path().join("a").join(f)).unwrap();
        let b = fs::read(t.path().join("b").join(f)).unwrap();
        assert!(a == b, "{f} differs between identical runs");
    }
    let a = fs::read(t.path().join("a/timestamps.skts")).unwrap();
    let c = fs::read(t.path().join("c/timestamps.skts")).unwrap();
    assert_ne!(a, c);
}

#[test]
fn acquire_reports_compression() {
    let t = tempfile::tempdir().unwrap();
    let stdout = acquire(t.path(), "o", &[]);
    assert!(stdout.contains("frame_ratio=512"), "{stdout}");
    assert!(stdout.contains("byte_ratio=85.3333"), "{stdout}");
    assert!(stdout.contains("saturation_events=0"), "{stdout}");
    let ts = fs::metadata(t.path().join("o/timestamps.skts")).unwrap().len();
    let sk = fs::metadata(t.path().join("o/sketches.skzf")).unwrap().len();
    assert_eq!(ts, 20 + 512 * 120 * 2);
    assert_eq!(sk, 32 + 120 * 12);
}

#[test]
fn acquire_reconstruct_round_trip() {
    let t = tempfile::tempdir().unwrap();
    acquire(t.path(), "o", &["--scene", "uniform", "--tof-bins", "1200"]);
    let stdout = ok(
        t.path(),
        &[
            "reconstruct",
            "--out",
            "o",
            "--timestamps",
            "o/timestamps.skts",
            "--reference",
            "o/truth.skdm",
        ],
    );
    assert!(stdout.contains("valid_pixels=120/120"), "{stdout}");
    let frame = read_sketches(&mut fs::File::open(t.path().join("o/sketches.skzf")).unwrap()).unwrap();
    assert_eq!((frame.rows, frame.cols, frame.fmax), (12, 10, 512));
    let depth = read_depth_map(&mut fs::File::open(t.path().join("o/depth.skdm")).unwrap()).unwrap();
    let mean = depth.mean().unwrap();
    assert!((mean - 1200.0).abs() < 5.0, "mean {mean}");
    let report = fs::read_to_string(t.path().join("o/report.csv")).unwrap();
    let labels: Vec<&str> = report.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(labels, ["reference", "flp", "cmm"]);
    let flp_mae: f64 = report.lines().nth(2).unwrap().split(',').nth(2).unwrap().parse().unwrap();
    assert!(flp_mae < 1.0, "{report}");
    for f in ["depth.csv", "flp_depth.skdm", "cmm_depth.skdm", "sketch_diff.skdm", "error_reference.skdm"] {
        assert!(t.path().join("o").join(f).exists(), "{f}");
    }
}

#[test]
fn reconstruct_is_byte_identical() {
    let t = tempfile::tempdir().unwrap();
    acquire(t.path(), "o", &[]);
    ok(t.path(), &["reconstruct", "--sketches", "o/sketches.skzf", "--out", "r1"]);
    ok(t.path(), &["--threads", "3", "reconstruct", "--sketches", "o/sketches.skzf", "--out", "r2"]);
    assert_eq!(
        fs::read(t.path().join("r1/depth.skdm")).unwrap(),
        fs::read(t.path().join("r2/depth.skdm")).unwrap()
    );
}

#[test]
fn malformed_inputs_exit_3() {
    let t = tempfile::tempdir().unwrap();
    acquire(t.path(), "o", &[]);
    let full = fs::read(t.path().join("o/sketches.skzf")).unwrap();
    fs::write(t.path().join("short.skzf"), &full[..full.len() - 5]).unwrap();
    let mut long = full.clone();
    long.push(0);
    fs::write(t.path().join("long.skzf"), &long).unwrap();
    let mut magic = full.clone();
    magic[0] = b'X';
    fs::write(t.path().join("magic.skzf"), &magic).unwrap();
    for f in ["short.skzf", "long.skzf", "magic.skzf", "absent.skzf", "o/truth.skdm"] {
        let out = spadsketch(t.path(), &["reconstruct", "--sketches", f, "--out", "r"]);
        assert_eq!(code(&out), 3, "{f}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let ts = fs::read(t.path().join("o/timestamps.skts")).unwrap();
    fs::write(t.path().join("short.skts"), &ts[..ts.len() / 2]).unwrap();
    let out = spadsketch(t.path(), &["reconstruct", "--out", "o", "--timestamps", "short.skts"]);
    assert_eq!(code(&out), 3);
}

#[test]
fn mismatched_reference_exits_3() {
    let t = tempfile::tempdir().unwrap();
    acquire(t.path(), "a", &[]);
    ok(t.path(), &["acquire", "--out", "b", "--rows", "4", "--cols", "4"]);
    let out = spadsketch(t.path(), &["reconstruct", "--out", "a", "--reference", "b/truth.skdm"]);
    assert_eq!(code(&out), 3);
}

#[test]
fn config_errors_exit_2() {
    let t = tempfile::tempdir().unwrap();
    let cases: &[&[&str]] = &[
        &["sweep", "--axis", "colour"],
        &["sweep", "--axis", "lut_depth", "--values"],
        &["sweep"],
        &["acquire", "--mode", "cubic"],
        &["acquire", "--mode", "fourier"],
        &["acquire", "--detection-prob", "1.5"],
        &["acquire", "--frac-bits", "20"],
        &["acquire", "--scene", "ring"],
        &["reconstruct", "--solver", "newton"],
        &["reconstruct", "--background", "often"],
        &["--threads", "0", "genlut"],
        &["frobnicate"],
    ];
    for args in cases {
        assert_eq!(code(&spadsketch(t.path(), args)), 2, "{args:?}");
    }
}

#[test]
fn sweep_writes_csv() {
    let t = tempfile::tempdir().unwrap();
    let mut args = vec!["sweep", "--axis", "lut_depth", "--values", "32,256", "--out", "s"];
    args.extend_from_slice(SMALL);
    ok(t.path(), &args);
    let csv = fs::read_to_string(t.path().join("s/sweep_lut_depth.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("lut_depth,"));
    assert!(lines[1].starts_with("32,"));
    assert!(lines[2].starts_with("256,"));
}
