//! Run configuration: `key = value` files layered under command-line flags.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use predvae::eval::default_threshold_grid;
use predvae::roll::PitchBand;

/// Architecture used when a single model is trained.
pub const DEFAULT_WINDOW_SEC: usize = 9;
pub const DEFAULT_HIDDEN: usize = 750;
pub const DEFAULT_LATENT: usize = 200;

/// Grid searched when no lists are given.
pub const GRID_WINDOW_SEC: [usize; 10] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10];
pub const GRID_HIDDEN: [usize; 2] = [500, 750];
pub const GRID_LATENT: [usize; 2] = [100, 200];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub corpus: Option<String>,
    pub out: PathBuf,
    pub seed: u64,
    pub pitch_lo: u8,
    pub pitch_hi: u8,
    pub window_sec: Option<Vec<usize>>,
    pub hidden: Option<Vec<usize>>,
    pub latent: Option<Vec<usize>>,
    pub beta: f64,
    pub learning_rate: f64,
    pub batch: usize,
    pub steps: usize,
    pub test_fraction: f64,
    pub deterministic: bool,
    pub eval_every: usize,
    pub early_stop_patience: Option<usize>,
    pub threshold: Option<f64>,
    pub threshold_grid: Vec<f64>,
    pub jobs: usize,
    pub seconds: usize,
    pub checkpoint: Option<PathBuf>,
    pub port: u16,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: None,
            out: PathBuf::from("out"),
            seed: 1,
            pitch_lo: PitchBand::PIANO.lo,
            pitch_hi: PitchBand::PIANO.hi,
            window_sec: None,
            hidden: None,
            latent: None,
            beta: 0.5,
            learning_rate: 1e-3,
            batch: 64,
            steps: 1000,
            test_fraction: 0.2,
            deterministic: true,
            eval_every: 0,
            early_stop_patience: None,
            threshold: None,
            threshold_grid: default_threshold_grid(),
            jobs: 1,
            seconds: 10,
            checkpoint: None,
            port: 8080,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("invalid value {value:?} for {key}"))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, String> {
    let items: Vec<T> = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect::<Result<_, _>>()?;
    if items.is_empty() {
        return Err(format!("{key} needs at least one value"));
    }
    Ok(items)
}

fn parse_optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>, String> {
    match value {
        "" | "none" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(format!("invalid value {value:?} for {key}")),
    }
}

/// A comma list of thresholds, or an inclusive range `start:stop:step`.
pub fn parse_threshold_grid(value: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = value.split(':').map(str::trim).collect();
    let grid = match parts.as_slice() {
        [start, stop, step] => {
            let (start, stop, step): (f64, f64, f64) = (
                parse("threshold_grid", start)?,
                parse("threshold_grid", stop)?,
                parse("threshold_grid", step)?,
            );
            if step <= 0.0 || stop < start {
                return Err(format!("empty threshold range {value:?}"));
            }
            let n = ((stop - start) / step + 1e-9).floor() as usize;
            (0..=n)
                .map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9)
                .collect()
        }
        [_] => parse_list("threshold_grid", value)?,
        _ => return Err(format!("invalid threshold grid {value:?}")),
    };
    if let Some(t) = grid.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(format!("threshold {t} outside [0, 1]"));
    }
    Ok(grid)
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(", ")
}

impl RunConfig {
    /// Reads `key = value` lines over the defaults. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn from_text(text: &str) -> Result<Self, String> {
        let mut config = RunConfig::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key = value", n + 1))?;
            config
                .set(key.trim(), value.trim())
                .map_err(|e| format!("line {}: {e}", n + 1))?;
        }
        Ok(config)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "corpus" => self.corpus = (!value.is_empty()).then(|| value.to_owned()),
            "out" => self.out = PathBuf::from(value),
            "seed" => self.seed = parse(key, value)?,
            "pitch_lo" => self.pitch_lo = parse(key, value)?,
            "pitch_hi" => self.pitch_hi = parse(key, value)?,
            "window_sec" => self.window_sec = Some(parse_list(key, value)?),
            "hidden" => self.hidden = Some(parse_list(key, value)?),
            "latent" => self.latent = Some(parse_list(key, value)?),
            "beta" => self.beta = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "steps" => self.steps = parse(key, value)?,
            "test_fraction" => self.test_fraction = parse(key, value)?,
            "deterministic" => self.deterministic = parse_bool(key, value)?,
            "eval_every" => self.eval_every = parse(key, value)?,
            "early_stop_patience" => self.early_stop_patience = parse_optional(key, value)?,
            "threshold" => self.threshold = parse_optional(key, value)?,
            "threshold_grid" => self.threshold_grid = parse_threshold_grid(value)?,
            "jobs" => self.jobs = parse(key, value)?,
            "seconds" => self.seconds = parse(key, value)?,
            "checkpoint" => self.checkpoint = (!value.is_empty()).then(|| PathBuf::from(value)),
            "port" => self.port = parse(key, value)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Every key, in the format [`RunConfig::from_text`] reads.
    pub fn to_text(&self) -> String {
        let opt_list = |v: &Option<Vec<usize>>| v.as_deref().map(join).unwrap_or_default();
        let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
        let mut s = String::new();
        // unset lists and paths are left out
        let mut line = |k: &str, v: String| {
            if !v.is_empty() {
                writeln!(s, "{k} = {v}").unwrap();
            }
        };
        line("corpus", self.corpus.clone().unwrap_or_default());
        line("out", self.out.display().to_string());
        line("seed", self.seed.to_string());
        line("pitch_lo", self.pitch_lo.to_string());
        line("pitch_hi", self.pitch_hi.to_string());
        line("window_sec", opt_list(&self.window_sec));
        line("hidden", opt_list(&self.hidden));
        line("latent", opt_list(&self.latent));
        line("beta", self.beta.to_string());
        line("learning_rate", self.learning_rate.to_string());
        line("batch", self.batch.to_string());
        line("steps", self.steps.to_string());
        line("test_fraction", self.test_fraction.to_string());
        line("deterministic", self.deterministic.to_string());
        line("eval_every", self.eval_every.to_string());
        line("early_stop_patience", opt(self.early_stop_patience.map(|p| p.to_string())));
        line("threshold", opt(self.threshold.map(|t| t.to_string())));
        line("threshold_grid", join(&self.threshold_grid));
        line("jobs", self.jobs.to_string());
        line("seconds", self.seconds.to_string());
        line("checkpoint", self.checkpoint.as_ref().map(|p| p.display().to_string()).unwrap_or_default());
        line("port", self.port.to_string());
        s
    }

    pub fn band(&self) -> Result<PitchBand, String> {
        PitchBand::new(self.pitch_lo, self.pitch_hi).map_err(|e| e.to_string())
    }

    /// The single architecture for commands that train one model.
    pub fn single_arch(&self) -> Result<(usize, usize, usize), String> {
        let one = |name: &str, list: &Option<Vec<usize>>, default: usize| match list.as_deref() {
            None => Ok(default),
            Some([v]) => Ok(*v),
            Some(_) => Err(format!("{name} lists more than one value; use the grid command")),
        };
        Ok((
            one("window_sec", &self.window_sec, DEFAULT_WINDOW_SEC)?,
            one("hidden", &self.hidden, DEFAULT_HIDDEN)?,
            one("latent", &self.latent, DEFAULT_LATENT)?,
        ))
    }

    /// Every (window_sec, hidden, latent) combination of the grid.
    pub fn grid_cells(&self) -> Vec<(usize, usize, usize)> {
        let windows = self.window_sec.clone().unwrap_or(GRID_WINDOW_SEC.to_vec());
        let hidden = self.hidden.clone().unwrap_or(GRID_HIDDEN.to_vec());
        let latent = self.latent.clone().unwrap_or(GRID_LATENT.to_vec());
        let mut cells = Vec::new();
        for &t in &windows {
            for &h in &hidden {
                for &z in &latent {
                    cells.push((t, h, z));
                }
            }
        }
        cells
    }
}
