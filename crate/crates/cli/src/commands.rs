use std::fmt::Write as _;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use predvae::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use predvae::composer::{self, CompositionState, Feedback};
use predvae::eval::{self, per_step_metrics, split_metrics, window_metrics, MetricsReport, ReportRow, SweepResult};
use predvae::roll::{roll_to_notes, PitchBand, GRID_MS};
use predvae::trainer::{self, split_by_song, SplitDataset, TrainingConfig};
use predvae::window::{flatten_window, make_windows, WindowSpec};
use predvae::{write_midi_with_length, ModelDims, MusicModel};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::corpus::{self, Song, MANIFEST};
use crate::plot::{self, Series};
use crate::Failure;

pub const CHECKPOINT_FILE: &str = "model.vaec";
pub const CONFIG_SNAPSHOT: &str = "run.conf";

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

/// Creates the output directory and records the effective configuration.
fn prepare_out(c: &RunConfig) -> Result<(), Failure> {
    fs::create_dir_all(&c.out).map_err(|e| Failure::Data(format!("{}: {e}", c.out.display())))?;
    write(&c.out.join(CONFIG_SNAPSHOT), c.to_text())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

fn require_corpus(c: &RunConfig) -> Result<&str, Failure> {
    c.corpus.as_deref().ok_or_else(|| Failure::Usage("--corpus is required".into()))
}

fn require_checkpoint(c: &RunConfig) -> Result<Checkpoint, Failure> {
    let path = c
        .checkpoint
        .as_ref()
        .ok_or_else(|| Failure::Usage("--checkpoint is required".into()))?;
    load_checkpoint(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn training_config(c: &RunConfig, arch: (usize, usize, usize), band: PitchBand) -> Result<TrainingConfig, Failure> {
    let (t, h, z) = arch;
    let spec = WindowSpec::new(t).map_err(|e| Failure::Usage(e.to_string()))?;
    let dims = ModelDims::new(spec.input_dim(band.n_pitches()), h, z).map_err(|e| Failure::Usage(e.to_string()))?;
    let mut tc = TrainingConfig::new(spec, dims);
    tc.beta = c.beta;
    tc.learning_rate = c.learning_rate;
    tc.batch_size = c.batch;
    tc.max_steps = c.steps;
    tc.seed = c.seed;
    tc.test_fraction = c.test_fraction;
    tc.deterministic = c.deterministic;
    tc.eval_every = c.eval_every;
    tc.early_stop_patience = c.early_stop_patience;
    tc.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(tc)
}

/// Splits by song, refusing corpora with no song long enough for a window pair.
fn split_songs(songs: &[Song], tc: &TrainingConfig, c: &RunConfig) -> Result<SplitDataset, Failure> {
    let split = split_by_song(songs, &tc.window_spec, c.test_fraction, c.seed)?;
    if split.train_pairs.is_empty() {
        return Err(Failure::Data(format!(
            "no training song has the {} columns one window pair needs",
            tc.window_spec.width() + 10
        )));
    }
    Ok(split)
}

fn sweep_rows(result: &SweepResult) -> Vec<ReportRow> {
    result
        .rows
        .iter()
        .flat_map(|r| [ReportRow::new("train", "full", r.train), ReportRow::new("test", "full", r.test)])
        .collect()
}

fn report_csv(rows: &[ReportRow]) -> Vec<u8> {
    let mut out = Vec::new();
    eval::write_report_csv(rows, &mut out).expect("writing to memory");
    out
}

fn threshold_figure(result: &SweepResult) -> String {
    let series = |name: &str, pick: &dyn Fn(&eval::SweepRow) -> f64| {
        Series::new(name, result.rows.iter().map(|r| (r.threshold, pick(r))).collect())
    };
    plot::line_chart(
        "Sensitivity, PPV and F1 by threshold",
        "threshold",
        "score",
        &[
            series("train SEN", &|r| r.train.sen),
            series("train PPV", &|r| r.train.ppv),
            series("train F1", &|r| r.train.f1),
            series("test SEN", &|r| r.test.sen).dashed(),
            series("test PPV", &|r| r.test.ppv).dashed(),
            series("test F1", &|r| r.test.f1).dashed(),
        ],
        Some((0.0, 1.0)),
    )
}

fn write_sweep(out: &Path, result: &SweepResult) -> Result<(), Failure> {
    write(&out.join("sweep.csv"), report_csv(&sweep_rows(result)))?;
    write(&out.join("thresholds.svg"), threshold_figure(result))
}

pub fn ingest(c: &RunConfig) -> Result<(), Failure> {
    let dir = PathBuf::from(require_corpus(c)?);
    if !dir.is_dir() {
        return Err(Failure::Data(format!("{} is not a directory", dir.display())));
    }
    let band = c.band().map_err(Failure::Usage)?;
    let songs = corpus::ingest_dir(&dir, band)?;
    if songs.is_empty() {
        return Err(Failure::Data(format!("no MIDI file in {} could be ingested", dir.display())));
    }
    prepare_out(c)?;
    let rolls = c.out.join("rolls");
    fs::create_dir_all(&rolls)?;
    let mut manifest = String::from("song,file,n_cols,notes,dropped,dangling\n");
    for s in &songs {
        write(&rolls.join(format!("{}.roll", s.id)), s.roll.to_text())?;
        writeln!(
            manifest,
            "{},{},{},{},{},{}",
            s.id,
            csv_field(&s.file.display().to_string()),
            s.roll.n_cols(),
            s.notes,
            s.dropped,
            s.dangling
        )
        .unwrap();
    }
    write(&c.out.join(MANIFEST), manifest)?;
    println!("ingested {} songs into {}", songs.len(), c.out.display());
    Ok(())
}

/// Split recorded in a checkpoint, or a fresh seeded split.
fn recover_split(ckpt: &Checkpoint, songs: &[Song], c: &RunConfig) -> Result<SplitDataset, Failure> {
    let spec = ckpt.model.window;
    let recorded: Option<Vec<String>> = ckpt
        .metadata
        .get("test_songs")
        .and_then(|s| serde_json::from_str(s).ok());
    let Some(test_ids) = recorded.filter(|ids| songs.iter().any(|(id, _)| ids.contains(id))) else {
        return Ok(split_by_song(songs, &spec, c.test_fraction, c.seed)?);
    };
    let mut split = SplitDataset::default();
    for (id, roll) in songs {
        let pairs = match make_windows(roll, &spec, id) {
            Ok(p) => p,
            Err(e) => {
                log::warn!("skipping {id}: {e}");
                continue;
            }
        };
        if test_ids.contains(id) {
            split.test_pairs.extend(pairs);
            split.test_songs.push(id.clone());
        } else {
            split.train_pairs.extend(pairs);
            split.train_songs.push(id.clone());
        }
    }
    if split.train_pairs.is_empty() || split.test_pairs.is_empty() {
        return Err(Failure::Data("corpus does not cover both sides of the recorded split".into()));
    }
    Ok(split)
}

pub fn train(c: &RunConfig) -> Result<(), Failure> {
    let arch = c.single_arch().map_err(Failure::Usage)?;
    let band = c.band().map_err(Failure::Usage)?;
    let tc = training_config(c, arch, band)?;
    let songs = corpus::load_songs(require_corpus(c)?, band, c.seed)?;
    let split = split_songs(&songs, &tc, c)?;
    prepare_out(c)?;
    log::info!(
        "training T={} H={} Z={} on {} windows from {} songs ({} held out)",
        arch.0,
        arch.1,
        arch.2,
        split.train_pairs.len(),
        split.train_songs.len(),
        split.test_songs.len()
    );
    let outcome = trainer::train(&tc, &split)?;
    let model = MusicModel::new(outcome.params, tc.window_spec, band)?;
    let result = eval::sweep(&model, &split.train_pairs, &split.test_pairs, &c.threshold_grid)?;
    let theta = c.threshold.unwrap_or(result.best_threshold);

    let mut ckpt = Checkpoint::new(model, c.beta);
    ckpt.threshold = Some(theta);
    let meta = &mut ckpt.metadata;
    meta.insert("corpus".into(), c.corpus.clone().unwrap_or_default());
    meta.insert("seed".into(), c.seed.to_string());
    meta.insert("steps".into(), outcome.history.steps.len().to_string());
    meta.insert("test_fraction".into(), c.test_fraction.to_string());
    meta.insert("train_songs".into(), serde_json::to_string(&split.train_songs).unwrap());
    meta.insert("test_songs".into(), serde_json::to_string(&split.test_songs).unwrap());
    let path = c.out.join(CHECKPOINT_FILE);
    save_checkpoint(&path, &ckpt)?;

    let mut history = Vec::new();
    outcome.history.write_csv(&mut history)?;
    write(&c.out.join("history.csv"), history)?;
    let mut test_loss = String::from("step,epoch,test_loss\n");
    for e in &outcome.history.evals {
        writeln!(test_loss, "{},{},{}", e.step, e.epoch, e.test_loss).unwrap();
    }
    write(&c.out.join("test_loss.csv"), test_loss)?;
    let mut split_csv = String::from("song,side\n");
    for s in &split.train_songs {
        writeln!(split_csv, "{s},train").unwrap();
    }
    for s in &split.test_songs {
        writeln!(split_csv, "{s},test").unwrap();
    }
    write(&c.out.join("split.csv"), split_csv)?;
    write_sweep(&c.out, &result)?;
    let losses: Vec<(f64, f64)> = outcome.history.steps.iter().map(|r| (r.step as f64, r.total)).collect();
    let tests: Vec<(f64, f64)> = outcome.history.evals.iter().map(|r| (r.step as f64, r.test_loss)).collect();
    write(
        &c.out.join("loss.svg"),
        plot::line_chart("Training loss", "step", "negative ELBO", &[Series::new("train batch", losses), Series::new("test", tests)], None),
    )?;

    let best = result.best();
    println!(
        "best threshold {:.2}: train F1 {:.4} standard accuracy {:.4}, test F1 {:.4} standard accuracy {:.4}; checkpoint {} (threshold {theta})",
        best.threshold,
        best.train.f1,
        best.train.acc,
        best.test.f1,
        best.test.acc,
        path.display()
    );
    Ok(())
}

pub fn sweep(c: &RunConfig) -> Result<(), Failure> {
    let ckpt = require_checkpoint(c)?;
    let songs = corpus::load_songs(require_corpus(c)?, ckpt.model.band, c.seed)?;
    let split = recover_split(&ckpt, &songs, c)?;
    let result = eval::sweep(&ckpt.model, &split.train_pairs, &split.test_pairs, &c.threshold_grid)?;
    prepare_out(c)?;
    write_sweep(&c.out, &result)?;
    let best = result.best();
    println!(
        "best threshold {:.2}: train F1 {:.4}, test F1 {:.4} ({} thresholds)",
        best.threshold,
        best.train.f1,
        best.test.f1,
        result.rows.len()
    );
    Ok(())
}

pub fn eval(c: &RunConfig) -> Result<(), Failure> {
    let ckpt = require_checkpoint(c)?;
    let model = &ckpt.model;
    let songs = corpus::load_songs(require_corpus(c)?, model.band, c.seed)?;
    let split = recover_split(&ckpt, &songs, c)?;
    let result = eval::sweep(model, &split.train_pairs, &split.test_pairs, &c.threshold_grid)?;
    let theta = c.threshold.or(ckpt.threshold).unwrap_or(result.best_threshold);
    prepare_out(c)?;
    write_sweep(&c.out, &result)?;

    let sides = [("train", &split.train_pairs), ("test", &split.test_pairs)];
    let mut segment_rows = Vec::new();
    let mut step_rows = Vec::new();
    let mut steps: Vec<(&str, Vec<MetricsReport>)> = Vec::new();
    for (side, pairs) in sides {
        let full = window_metrics(model, pairs, theta)?;
        let (recon, pred) = split_metrics(model, pairs, theta)?;
        segment_rows.push(ReportRow::new(side, "full", full));
        segment_rows.push(ReportRow::new(side, "reconstruction", recon));
        segment_rows.push(ReportRow::new(side, "prediction", pred));
        let per_step = per_step_metrics(model, pairs, theta)?;
        for (k, r) in per_step.iter().enumerate() {
            step_rows.push(ReportRow::new(side, &format!("{}ms", (k + 1) as u64 * GRID_MS), *r));
        }
        steps.push((side, per_step));
    }
    write(&c.out.join("segments.csv"), report_csv(&segment_rows))?;
    write(&c.out.join("per_step.csv"), report_csv(&step_rows))?;

    let pick = |side: &str, segment: &str| {
        segment_rows
            .iter()
            .find(|r| r.side == side && r.segment == segment)
            .map(|r| r.report)
            .unwrap()
    };
    let categories = vec!["train".to_owned(), "test".to_owned()];
    let bars = |metric: fn(&MetricsReport) -> f64, segment: &str| {
        categories.iter().map(|s| metric(&pick(s, segment))).collect::<Vec<_>>()
    };
    write(
        &c.out.join("segments.svg"),
        plot::bar_chart(
            &format!("Reconstruction vs prediction (threshold {theta})"),
            "score",
            &categories,
            &[
                ("reconstruction F1".into(), bars(|r| r.f1, "reconstruction")),
                ("prediction F1".into(), bars(|r| r.f1, "prediction")),
                ("reconstruction standard accuracy".into(), bars(|r| r.acc, "reconstruction")),
                ("prediction standard accuracy".into(), bars(|r| r.acc, "prediction")),
            ],
            1.0,
        ),
    )?;
    let mut series = Vec::new();
    for (side, reports) in &steps {
        let points = |metric: fn(&MetricsReport) -> f64| {
            reports
                .iter()
                .enumerate()
                .map(|(k, r)| (((k + 1) as u64 * GRID_MS) as f64, metric(r)))
                .collect::<Vec<_>>()
        };
        let f1 = Series::new(format!("{side} F1"), points(|r| r.f1));
        let acc = Series::new(format!("{side} standard accuracy"), points(|r| r.acc));
        if *side == "test" {
            series.extend([f1.dashed(), acc.dashed()]);
        } else {
            series.extend([f1, acc]);
        }
    }
    write(
        &c.out.join("per_step.svg"),
        plot::line_chart("Prediction by time into the new second", "ms after known music", "score", &series, Some((0.0, 1.0))),
    )?;

    let best = result.best();
    println!("best threshold {:.2}: train F1 {:.4}, test F1 {:.4}", best.threshold, best.train.f1, best.test.f1);
    for (side, _) in sides {
        let (r, p) = (pick(side, "reconstruction"), pick(side, "prediction"));
        println!(
            "{side} at threshold {theta}: reconstruction F1 {:.4} standard accuracy {:.4}; prediction F1 {:.4} standard accuracy {:.4}",
            r.f1, r.acc, p.f1, p.acc
        );
    }
    Ok(())
}

struct GridRow {
    arch: (usize, usize, usize),
    outcome: Result<(SweepResult, f64), Failure>,
}

fn grid_cell(c: &RunConfig, songs: &[Song], band: PitchBand, arch: (usize, usize, usize)) -> GridRow {
    let run = || -> Result<(SweepResult, f64), Failure> {
        let tc = training_config(c, arch, band)?;
        let split = split_songs(songs, &tc, c)?;
        let outcome = trainer::train(&tc, &split)?;
        let final_loss = outcome.history.steps.last().map_or(f64::NAN, |s| s.total);
        let model = MusicModel::new(outcome.params, tc.window_spec, band)?;
        let result = eval::sweep(&model, &split.train_pairs, &split.test_pairs, &c.threshold_grid)?;
        Ok((result, final_loss))
    };
    let outcome = run();
    match &outcome {
        Ok((r, _)) => log::info!("T={} H={} Z={}: train F1 {:.4}", arch.0, arch.1, arch.2, r.best().train.f1),
        Err(e) => log::warn!("T={} H={} Z={} failed: {}", arch.0, arch.1, arch.2, e.message()),
    }
    GridRow { arch, outcome }
}

pub fn grid(c: &RunConfig) -> Result<(), Failure> {
    let band = c.band().map_err(Failure::Usage)?;
    let songs = corpus::load_songs(require_corpus(c)?, band, c.seed)?;
    let cells = c.grid_cells();
    prepare_out(c)?;
    let rows: Vec<GridRow> = if c.jobs <= 1 {
        cells.iter().map(|&a| grid_cell(c, &songs, band, a)).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(c.jobs)
            .build()
            .map_err(|e| Failure::Usage(e.to_string()))?;
        pool.install(|| cells.par_iter().map(|&a| grid_cell(c, &songs, band, a)).collect())
    };

    let mut csv = String::from(
        "window_sec,hidden,latent,beta,steps,status,best_threshold,train_acc,train_f1,test_acc,test_f1,final_train_loss,message\n",
    );
    let mut labels = Vec::new();
    let mut bars: [Vec<f64>; 4] = Default::default();
    for row in &rows {
        let (t, h, z) = row.arch;
        match &row.outcome {
            Ok((result, loss)) => {
                let best = result.best();
                writeln!(
                    csv,
                    "{t},{h},{z},{},{},ok,{},{},{},{},{},{loss},",
                    c.beta, c.steps, best.threshold, best.train.acc, best.train.f1, best.test.acc, best.test.f1
                )
                .unwrap();
                labels.push(format!("T{t} H{h} Z{z}"));
                for (k, v) in [best.train.f1, best.test.f1, best.train.acc, best.test.acc].into_iter().enumerate() {
                    bars[k].push(v);
                }
            }
            Err(e) => {
                writeln!(csv, "{t},{h},{z},{},{},failed,,,,,,,{}", c.beta, c.steps, csv_field(e.message())).unwrap();
            }
        }
    }
    write(&c.out.join("grid.csv"), csv)?;
    let [train_f1, test_f1, train_acc, test_acc] = bars;
    write(
        &c.out.join("grid.svg"),
        plot::bar_chart(
            "Best-threshold scores per configuration",
            "score",
            &labels,
            &[
                ("train F1".into(), train_f1),
                ("test F1".into(), test_f1),
                ("train standard accuracy".into(), train_acc),
                ("test standard accuracy".into(), test_acc),
            ],
            1.0,
        ),
    )?;

    let ok: Vec<&GridRow> = rows.iter().filter(|r| r.outcome.is_ok()).collect();
    // selection follows training F1
    let best = ok.iter().max_by(|a, b| {
        let f = |r: &GridRow| r.outcome.as_ref().map(|(s, _)| s.best().train.f1).unwrap_or(f64::MIN);
        f(a).total_cmp(&f(b))
    });
    match best {
        Some(row) => {
            let (t, h, z) = row.arch;
            let r = row.outcome.as_ref().unwrap().0.best();
            println!(
                "{} of {} configurations trained; selected T={t} H={h} Z={z}: train F1 {:.4}, test F1 {:.4} at threshold {:.2}",
                ok.len(),
                rows.len(),
                r.train.f1,
                r.test.f1,
                r.threshold
            );
            Ok(())
        }
        None => Err(rows.into_iter().find_map(|r| r.outcome.err()).expect("grid has at least one cell")),
    }
}

pub fn generate(c: &RunConfig, seed_midi: Option<&Path>, steer: &[(usize, f64)], feedback: Feedback) -> Result<(), Failure> {
    if c.seconds == 0 {
        return Err(Failure::Usage("--seconds must be at least 1".into()));
    }
    let ckpt = require_checkpoint(c)?;
    let model = &ckpt.model;
    let theta = c.threshold.or(ckpt.threshold).unwrap_or(0.5);
    let width = model.width();
    let seed_window = match seed_midi {
        Some(path) => {
            let song = corpus::ingest_file(path, model.band)?;
            if song.roll.n_cols() < width {
                return Err(Failure::Data(format!(
                    "{} is {} columns long; the seed needs {width}",
                    path.display(),
                    song.roll.n_cols()
                )));
            }
            flatten_window(&song.roll, 0, width)
        }
        None => composer::random_seed_window(model, c.seed, theta)?,
    };
    let latent_dim = model.dims().latent_dim;
    let mut delta = vec![0.0; latent_dim];
    for &(dim, d) in steer {
        let one = composer::perturb_latent(latent_dim, dim, d).map_err(|e| Failure::Usage(e.to_string()))?;
        delta.iter_mut().zip(one).for_each(|(a, b)| *a += b);
    }
    let delta = (!steer.is_empty()).then_some(delta);

    let mut state = CompositionState::new(model, &seed_window)?.with_feedback(feedback);
    for _ in 0..composer::steps_for_seconds(model, c.seconds) {
        state.step(model, theta, delta.as_deref())?;
    }
    let roll = state.roll(model);
    prepare_out(c)?;
    let midi = c.out.join("generated.mid");
    let length_ms = roll.n_cols() as u64 * GRID_MS;
    write(&midi, write_midi_with_length(&roll_to_notes(&roll, GRID_MS), length_ms))?;
    write(&c.out.join("generated.roll"), roll.to_text())?;
    write(&c.out.join("generated.svg"), plot::roll_image(&roll, width))?;
    println!(
        "generated {} new columns after a {width}-column seed at threshold {theta}: {}",
        state.generated_cols(),
        midi.display()
    );
    Ok(())
}

pub fn serve(c: &RunConfig, host: &str, static_dir: Option<PathBuf>) -> Result<(), Failure> {
    let ckpt = require_checkpoint(c)?;
    let addr: SocketAddr = format!("{host}:{}", c.port)
        .parse()
        .map_err(|e| Failure::Usage(format!("bad listen address {host}:{}: {e}", c.port)))?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    runtime.block_on(predvae_service::serve(ckpt, addr, static_dir))?;
    Ok(())
}
