use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use predvae::composer::{generate, random_seed_window};
use predvae::eval::{default_threshold_grid, sweep};
use predvae::roll::{notes_to_roll, notes_to_roll_padded, roll_to_notes, PianoRoll, PitchBand, GRID_MS};
use predvae::synthetic::style_corpus;
use predvae::trainer::split_by_song;
use predvae::window::{make_windows, WindowSpec};
use predvae::{parse_midi, write_midi, ModelDims, ModelParameters, MusicModel};

/// The synthetic songs moved onto the full piano band.
fn piano_songs(n_songs: usize, seconds: usize, seed: u64) -> Vec<(String, PianoRoll)> {
    style_corpus(n_songs, seconds, seed)
        .into_iter()
        .map(|(id, roll)| {
            let notes = roll_to_notes(&roll, GRID_MS);
            (id, notes_to_roll_padded(&notes, PitchBand::PIANO, GRID_MS, roll.n_cols()).unwrap().roll)
        })
        .collect()
}

fn ingest(c: &mut Criterion) {
    // a three-minute song
    let (_, roll) = piano_songs(1, 180, 9).remove(0);
    let notes = roll_to_notes(&roll, GRID_MS);
    let bytes = write_midi(&notes);
    let spec = WindowSpec::new(9).unwrap();
    c.bench_function("parse_midi", |b| b.iter(|| parse_midi(black_box(&bytes)).unwrap()));
    c.bench_function("notes_to_roll", |b| {
        b.iter(|| notes_to_roll(black_box(&notes), PitchBand::PIANO, GRID_MS).unwrap())
    });
    c.bench_function("make_windows_T9", |b| b.iter(|| make_windows(black_box(&roll), &spec, "bench").unwrap()));
}

fn model(seconds: usize, hidden: usize, latent: usize) -> MusicModel {
    let spec = WindowSpec::new(seconds).unwrap();
    let dims = ModelDims::new(spec.input_dim(PitchBand::PIANO.n_pitches()), hidden, latent).unwrap();
    MusicModel::new(ModelParameters::init(dims, 4), spec, PitchBand::PIANO).unwrap()
}

fn evaluate(c: &mut Criterion) {
    let mut group = c.benchmark_group("evaluation");
    group.sample_size(10);
    let m = model(3, 256, 64);
    let split = split_by_song(&piano_songs(6, 40, 3), &m.window, 0.2, 1).unwrap();
    let grid = default_threshold_grid();
    group.bench_function("sweep_46_thresholds", |b| {
        b.iter(|| sweep(&m, black_box(&split.train_pairs), &split.test_pairs, &grid).unwrap())
    });
    group.finish();
}

fn compose(c: &mut Criterion) {
    let mut group = c.benchmark_group("generation");
    group.sample_size(10);
    let m = model(9, 750, 200);
    let seed = random_seed_window(&m, 0, 0.5).unwrap();
    group.bench_function("ten_seconds_T9_H750_Z200", |b| {
        b.iter(|| generate(&m, black_box(&seed), 10, 0.5, None).unwrap())
    });
    group.finish();
}

criterion_group!(benches, ingest, evaluate, compose);
criterion_main!(benches);
