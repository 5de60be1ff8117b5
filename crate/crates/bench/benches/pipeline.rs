use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use sketch_core::experiment::Experiment;
use sketch_core::sensor::generate_frame;
use sketch_core::solver::{build_depth_map, GridSolver};
use sketch_core::{SketchConfig, SpeState, SplineMode, TDC_BINS};

fn experiment() -> Experiment {
    Experiment::default()
}

fn bench_generate(c: &mut Criterion) {
    let exp = experiment();
    let scene = exp.scene().unwrap();
    let mut g = c.benchmark_group("sensor");
    g.throughput(Throughput::Elements(exp.sketch.pixels() as u64));
    g.bench_function("generate_frame_192x128", |b| {
        let mut seed = 0;
        b.iter(|| {
            seed += 1;
            generate_frame(&scene, &exp.irf, black_box(seed)).unwrap()
        })
    });
    g.finish();
}

fn bench_spe(c: &mut Criterion) {
    let exp = experiment();
    let frame = generate_frame(&exp.scene().unwrap(), &exp.irf, 5).unwrap();
    let mut g = c.benchmark_group("spe");
    g.throughput(Throughput::Elements(exp.sketch.pixels() as u64));
    for mode in SplineMode::ALL {
        let mut e = exp.clone();
        e.mode = mode;
        e.sketch.fmax = 256;
        let rom = e.rom().unwrap();
        let mut spe = SpeState::new(e.sketch, rom).unwrap();
        g.bench_function(format!("run_frame_{mode}"), |b| {
            b.iter(|| {
                spe.run_frame(black_box(&frame)).unwrap();
                if spe.frame_index() == e.sketch.fmax {
                    spe.readout().unwrap();
                }
            })
        });
    }
    g.finish();
}

fn bench_reconstruct(c: &mut Criterion) {
    let mut g = c.benchmark_group("solver");
    let mut sketch = None;
    for mode in [SplineMode::LINEAR, SplineMode::QUADRATIC] {
        let mut exp = experiment();
        exp.mode = mode;
        exp.sketch = SketchConfig::with_dims(48, 32);
        let acq = sketch_core::experiment::acquire(&exp, false, |_| Ok(())).unwrap();
        sketch.get_or_insert_with(|| acq.flp[0].clone().unwrap());
        let opts = exp.online_options();
        g.throughput(Throughput::Elements(exp.sketch.pixels() as u64));
        g.bench_function(format!("build_depth_map_{mode}_48x32"), |b| {
            b.iter(|| build_depth_map(black_box(&acq.sketches), &opts).unwrap())
        });
    }
    g.bench_function("grid_table_p2", |b| b.iter(|| GridSolver::new(SplineMode::QUADRATIC, TDC_BINS, 4)));
    let sketch = sketch.unwrap();
    let grid = GridSolver::new(SplineMode::QUADRATIC, TDC_BINS, 4);
    g.throughput(Throughput::Elements(1));
    g.bench_function("grid_solve_p2", |b| b.iter(|| grid.solve(black_box(&sketch), 0.1)));
    g.finish();
}

criterion_group!(benches, bench_generate, bench_spe, bench_reconstruct);
criterion_main!(benches);
