//! `predvae` command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

mod commands;
mod config;
mod corpus;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use predvae::composer::Feedback;

use crate::config::{parse_threshold_grid, RunConfig};

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numeric(m) => m,
        }
    }
}

impl From<predvae::Error> for Failure {
    fn from(e: predvae::Error) -> Self {
        match e {
            predvae::Error::NonFiniteLoss { .. } => Failure::Numeric(e.to_string()),
            predvae::Error::InvalidConfig(_) => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "predvae", version, about = "Predictive beta-VAE for polyphonic piano-roll music")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and quantize a directory of MIDI files into text rolls and a manifest.
    Ingest {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train and sweep every (window, hidden, latent) combination.
    Grid {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        thresholds: ThresholdArgs,
        /// Grid cells trained in parallel.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Train one model and write a checkpoint.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        thresholds: ThresholdArgs,
    },
    /// Evaluate a checkpoint: threshold sweep, reconstruction vs prediction,
    /// and per-step prediction metrics, as CSV and SVG.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        thresholds: ThresholdArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Sweep thresholds for a checkpoint.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        thresholds: ThresholdArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Continue a seed window and write the result as MIDI.
    Generate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        seconds: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
        /// Seed from the first window of this MIDI file instead of a random latent draw.
        #[arg(long)]
        seed_midi: Option<PathBuf>,
        /// Latent steering applied at every step, as DIM=DELTA (repeatable).
        #[arg(long = "steer", value_parser = parse_steer)]
        steer: Vec<(usize, f64)>,
        #[arg(long, value_enum, default_value_t = FeedbackArg::Binary)]
        feedback: FeedbackArg,
    },
    /// Serve the HTTP API for a checkpoint.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Directory served at `/` (the studio front end).
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// MIDI directory or file, ingested directory, or synthetic:tiny / synthetic:style.
    #[arg(long)]
    corpus: Option<String>,
    /// `key = value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Pitch band as LO-HI (MIDI numbers).
    #[arg(long, value_parser = parse_band)]
    band: Option<(u8, u8)>,
}

#[derive(Args)]
struct ModelArgs {
    /// Window length T in seconds (comma list for grid).
    #[arg(long, value_delimiter = ',')]
    window_sec: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    latent: Option<Vec<usize>>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    test_fraction: Option<f64>,
    /// Thread-count independent gradient reduction (on by default).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    deterministic: Option<bool>,
}

#[derive(Args)]
struct ThresholdArgs {
    #[arg(long)]
    threshold: Option<f64>,
    /// Comma list or START:STOP:STEP.
    #[arg(long, value_parser = parse_grid)]
    threshold_grid: Option<Grid>,
}

#[derive(Clone)]
struct Grid(Vec<f64>);

fn parse_grid(s: &str) -> Result<Grid, String> {
    parse_threshold_grid(s).map(Grid)
}

#[derive(Clone, Copy, ValueEnum)]
enum FeedbackArg {
    Binary,
    Probabilities,
    Splice,
}

impl From<FeedbackArg> for Feedback {
    fn from(f: FeedbackArg) -> Self {
        match f {
            FeedbackArg::Binary => Feedback::Binary,
            FeedbackArg::Probabilities => Feedback::Probabilities,
            FeedbackArg::Splice => Feedback::Splice,
        }
    }
}

fn parse_band(s: &str) -> Result<(u8, u8), String> {
    let (lo, hi) = s.split_once('-').ok_or("expected LO-HI")?;
    Ok((lo.trim().parse().map_err(|_| "bad LO")?, hi.trim().parse().map_err(|_| "bad HI")?))
}

fn parse_steer(s: &str) -> Result<(usize, f64), String> {
    let (dim, delta) = s.split_once('=').ok_or("expected DIM=DELTA")?;
    Ok((dim.trim().parse().map_err(|_| "bad DIM")?, delta.trim().parse().map_err(|_| "bad DELTA")?))
}

fn load_config(path: Option<&PathBuf>) -> Result<RunConfig, Failure> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
            RunConfig::from_text(&text).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))
        }
    }
}

fn apply<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl CommonArgs {
    fn resolve(self) -> Result<RunConfig, Failure> {
        let mut c = load_config(self.config.as_ref())?;
        if self.corpus.is_some() {
            c.corpus = self.corpus;
        }
        apply(&mut c.out, self.out);
        apply(&mut c.seed, self.seed);
        if let Some((lo, hi)) = self.band {
            c.pitch_lo = lo;
            c.pitch_hi = hi;
        }
        c.band().map_err(Failure::Usage)?;
        Ok(c)
    }
}

impl ModelArgs {
    fn apply_to(self, c: &mut RunConfig) {
        if self.window_sec.is_some() {
            c.window_sec = self.window_sec;
        }
        if self.hidden.is_some() {
            c.hidden = self.hidden;
        }
        if self.latent.is_some() {
            c.latent = self.latent;
        }
        apply(&mut c.beta, self.beta);
        apply(&mut c.learning_rate, self.learning_rate);
        apply(&mut c.steps, self.steps);
        apply(&mut c.batch, self.batch);
        apply(&mut c.test_fraction, self.test_fraction);
        apply(&mut c.deterministic, self.deterministic);
    }
}

impl ThresholdArgs {
    fn apply_to(self, c: &mut RunConfig) -> Result<(), Failure> {
        if let Some(t) = self.threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(Failure::Usage(format!("threshold {t} outside [0, 1]")));
            }
            c.threshold = Some(t);
        }
        apply(&mut c.threshold_grid, self.threshold_grid.map(|g| g.0));
        Ok(())
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Ingest { common } => commands::ingest(&common.resolve()?),
        Command::Grid { common, model, thresholds, jobs } => {
            let mut c = common.resolve()?;
            model.apply_to(&mut c);
            thresholds.apply_to(&mut c)?;
            apply(&mut c.jobs, jobs);
            commands::grid(&c)
        }
        Command::Train { common, model, thresholds } => {
            let mut c = common.resolve()?;
            model.apply_to(&mut c);
            thresholds.apply_to(&mut c)?;
            commands::train(&c)
        }
        Command::Eval { common, thresholds, checkpoint } => {
            let mut c = common.resolve()?;
            thresholds.apply_to(&mut c)?;
            if checkpoint.is_some() {
                c.checkpoint = checkpoint;
            }
            commands::eval(&c)
        }
        Command::Sweep { common, thresholds, checkpoint } => {
            let mut c = common.resolve()?;
            thresholds.apply_to(&mut c)?;
            if checkpoint.is_some() {
                c.checkpoint = checkpoint;
            }
            commands::sweep(&c)
        }
        Command::Generate { common, checkpoint, seconds, threshold, seed_midi, steer, feedback } => {
            let mut c = common.resolve()?;
            if checkpoint.is_some() {
                c.checkpoint = checkpoint;
            }
            apply(&mut c.seconds, seconds);
            ThresholdArgs { threshold, threshold_grid: None }.apply_to(&mut c)?;
            commands::generate(&c, seed_midi.as_deref(), &steer, feedback.into())
        }
        Command::Serve { config, checkpoint, port, host, static_dir } => {
            let mut c = load_config(config.as_ref())?;
            if checkpoint.is_some() {
                c.checkpoint = checkpoint;
            }
            apply(&mut c.port, port);
            commands::serve(&c, &host, static_dir)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
