//! Autoregressive generation and latent steering.
//!
//! Each step encodes the current window, optionally shifts the latent mean
//! by a delta, decodes, thresholds, and keeps the last `stride` columns as
//! new music. What is fed back as the next input depends on [`Feedback`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::eval::apply_threshold;
use crate::model::MusicModel;
use crate::roll::PianoRoll;
use crate::vae::{reparameterize, LatentCode};
use crate::window::flatten_window;

/// Seed value reserved for the latent-space origin in [`random_seed_window`].
pub const ORIGIN_SEED: u64 = 0;

/// What the loop feeds back as the next input window.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feedback {
    /// The whole thresholded output window.
    #[default]
    Binary,
    /// The raw output probabilities.
    Probabilities,
    /// The last window of the accumulated roll (known music plus new columns).
    Splice,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentMode {
    /// Decode the posterior mean.
    #[default]
    Mean,
    /// Sample around the mean with a seeded noise stream.
    Sample { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    /// Thresholded output window, flattened pitch-major.
    pub next_window: Vec<u8>,
    /// The last `stride` output columns.
    pub new_cols: PianoRoll,
    pub latent: LatentCode,
    pub probs: Vec<f64>,
}

fn step_with_noise<T: Copy + Into<f64>>(
    model: &MusicModel,
    window: &[T],
    theta: f64,
    latent_delta: Option<&[f64]>,
    noise: Option<&[f64]>,
) -> Result<StepOutput> {
    let latent = model.encode(window)?;
    let mut z = match noise {
        Some(noise) => reparameterize(&latent, noise)?,
        None => latent.mu.clone(),
    };
    if let Some(delta) = latent_delta {
        check_len("latent delta", z.len(), delta.len())?;
        z.iter_mut().zip(delta).for_each(|(v, d)| *v += d);
    }
    let probs = model.decode(&z)?;
    let next_window = apply_threshold(&probs, theta);
    let width = model.width();
    let out = PianoRoll::from_cells(model.band, width, next_window.clone())?;
    let new_cols = out.slice_cols(width - model.stride(), width);
    Ok(StepOutput {
        next_window,
        new_cols,
        latent,
        probs,
    })
}

/// One deterministic loop step from `window` (z = mu + delta).
pub fn continue_window<T: Copy + Into<f64>>(
    model: &MusicModel,
    window: &[T],
    theta: f64,
    latent_delta: Option<&[f64]>,
) -> Result<StepOutput> {
    step_with_noise(model, window, theta, latent_delta, None)
}

/// A delta that is zero except `delta` at `dim`.
pub fn perturb_latent(latent_dim: usize, dim: usize, delta: f64) -> Result<Vec<f64>> {
    if dim >= latent_dim {
        return Err(Error::IndexOutOfRange {
            index: dim,
            len: latent_dim,
        });
    }
    let mut v = vec![0.0; latent_dim];
    v[dim] = delta;
    Ok(v)
}

/// Decodes a standard-normal latent draw into a binary window.
/// [`ORIGIN_SEED`] decodes the origin instead.
pub fn random_seed_window(model: &MusicModel, seed: u64, theta: f64) -> Result<Vec<u8>> {
    let z = random_latent(model.dims().latent_dim, seed);
    Ok(apply_threshold(&model.decode(&z)?, theta))
}

pub fn random_latent(latent_dim: usize, seed: u64) -> Vec<f64> {
    if seed == ORIGIN_SEED {
        return vec![0.0; latent_dim];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..latent_dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// State of one generation session.
#[derive(Debug, Clone)]
pub struct CompositionState {
    current_window: Vec<f64>,
    /// Pitch-major rows of seed plus generated columns.
    rows: Vec<Vec<u8>>,
    seed_cols: usize,
    last_latent: Option<LatentCode>,
    step_count: usize,
    feedback: Feedback,
    noise: Option<ChaCha8Rng>,
    width: usize,
}

impl CompositionState {
    pub fn new(model: &MusicModel, seed_window: &[u8]) -> Result<Self> {
        check_len("seed window", model.dims().input_dim, seed_window.len())?;
        if seed_window.iter().any(|&c| c > 1) {
            return Err(Error::InvalidConfig("seed window cells must be 0 or 1".into()));
        }
        let width = model.width();
        Ok(Self {
            current_window: seed_window.iter().map(|&c| f64::from(c)).collect(),
            rows: seed_window.chunks(width).map(<[u8]>::to_vec).collect(),
            seed_cols: width,
            last_latent: None,
            step_count: 0,
            feedback: Feedback::default(),
            noise: None,
            width,
        })
    }

    /// Seeds from the first window of a roll.
    pub fn from_roll(model: &MusicModel, roll: &PianoRoll) -> Result<Self> {
        if roll.band() != model.band {
            return Err(Error::InvalidConfig("seed roll pitch band differs from the model's".into()));
        }
        if roll.n_cols() < model.width() {
            return Err(Error::TooShort {
                n_cols: roll.n_cols(),
                needed: model.width(),
            });
        }
        Self::new(model, &flatten_window(roll, 0, model.width()))
    }

    pub fn with_feedback(mut self, feedback: Feedback) -> Self {
        self.feedback = feedback;
        self
    }

    pub fn with_latent_mode(mut self, mode: LatentMode) -> Self {
        self.noise = match mode {
            LatentMode::Mean => None,
            LatentMode::Sample { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        };
        self
    }

    pub fn current_window(&self) -> &[f64] {
        &self.current_window
    }

    pub fn last_latent(&self) -> Option<&LatentCode> {
        self.last_latent.as_ref()
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn feedback(&self) -> Feedback {
        self.feedback
    }

    pub fn n_cols(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn generated_cols(&self) -> usize {
        self.n_cols() - self.seed_cols
    }

    /// Seed columns followed by every generated column.
    pub fn roll(&self, model: &MusicModel) -> PianoRoll {
        let n_cols = self.n_cols();
        PianoRoll::from_cells(model.band, n_cols, self.rows.concat())
            .expect("rows are binary and rectangular")
    }

    /// Runs one loop step and appends its new columns.
    pub fn step(&mut self, model: &MusicModel, theta: f64, latent_delta: Option<&[f64]>) -> Result<StepOutput> {
        check_len("window width", self.width, model.width())?;
        let noise: Option<Vec<f64>> = self.noise.as_mut().map(|rng| {
            (0..model.dims().latent_dim)
                .map(|_| StandardNormal.sample(rng))
                .collect()
        });
        let out = step_with_noise(model, &self.current_window, theta, latent_delta, noise.as_deref())?;
        for (r, row) in self.rows.iter_mut().enumerate() {
            row.extend_from_slice(out.new_cols.row(r));
        }
        self.current_window = match self.feedback {
            Feedback::Binary => out.next_window.iter().map(|&c| f64::from(c)).collect(),
            Feedback::Probabilities => out.probs.clone(),
            Feedback::Splice => {
                let start = self.n_cols() - self.width;
                self.rows
                    .iter()
                    .flat_map(|row| row[start..].iter().map(|&c| f64::from(c)))
                    .collect()
            }
        };
        self.last_latent = Some(out.latent.clone());
        self.step_count += 1;
        Ok(out)
    }
}

/// Number of loop steps needed to produce `seconds` of new music.
pub fn steps_for_seconds(model: &MusicModel, seconds: usize) -> usize {
    (seconds * 10).div_ceil(model.stride())
}

/// Continues `seed_window` for `seconds` with binary feedback; `deltas[i]`
/// steers step `i` (missing entries mean no steering). Returns the seed
/// columns followed by the new ones.
pub fn generate(
    model: &MusicModel,
    seed_window: &[u8],
    seconds: usize,
    theta: f64,
    deltas: Option<&[Vec<f64>]>,
) -> Result<PianoRoll> {
    if seconds == 0 {
        return Err(Error::InvalidConfig("generate needs at least one second".into()));
    }
    let mut state = CompositionState::new(model, seed_window)?;
    for i in 0..steps_for_seconds(model, seconds) {
        let delta = deltas.and_then(|d| d.get(i)).map(Vec::as_slice);
        state.step(model, theta, delta)?;
    }
    Ok(state.roll(model))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roll::PitchBand;
    use crate::vae::{ModelDims, ModelParameters};
    use crate::window::WindowSpec;

    fn model(seconds: usize, seed: u64) -> MusicModel {
        let band = PitchBand::new(60, 63).unwrap();
        let spec = WindowSpec::new(seconds).unwrap();
        let dims = ModelDims::new(spec.input_dim(4), 6, 3).unwrap();
        MusicModel::new(ModelParameters::init(dims, seed), spec, band).unwrap()
    }

    fn window(m: &MusicModel) -> Vec<u8> {
        (0..m.dims().input_dim).map(|i| (i % 3 == 0) as u8).collect()
    }

    #[test]
    fn continue_is_deterministic_and_silent_at_threshold_one() {
        let m = model(2, 1);
        let w = window(&m);
        let a = continue_window(&m, &w, 0.5, None).unwrap();
        let b = continue_window(&m, &w, 0.5, Some(&[0.0; 3])).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.new_cols.n_cols(), 10);
        let silent = continue_window(&m, &w, 1.0, None).unwrap();
        assert_eq!(silent.new_cols.active_cells(), 0);
        assert!(continue_window(&m, &w, 0.5, Some(&[0.0; 2])).is_err());
    }

    #[test]
    fn perturbations_compose_by_addition() {
        let a = perturb_latent(4, 1, 0.5).unwrap();
        let b = perturb_latent(4, 3, -2.0).unwrap();
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        assert_eq!(sum, vec![0.0, 0.5, 0.0, -2.0]);
        assert_eq!(perturb_latent(4, 2, 0.0).unwrap(), vec![0.0; 4]);
        assert!(matches!(perturb_latent(4, 4, 1.0), Err(Error::IndexOutOfRange { index: 4, len: 4 })));
    }

    #[test]
    fn generation_lengths() {
        let m = model(2, 2);
        let w = window(&m);
        assert_eq!(generate(&m, &w, 1, 0.5, None).unwrap().n_cols(), 20 + 10);
        assert_eq!(generate(&m, &w, 3, 0.5, None).unwrap().n_cols(), 20 + 30);
        let half = model(1, 2);
        let w = window(&half);
        assert_eq!(steps_for_seconds(&half, 3), 6);
        assert_eq!(generate(&half, &w, 3, 0.5, None).unwrap().n_cols(), 10 + 30);
        assert!(generate(&half, &w, 0, 0.5, None).is_err());
    }

    #[test]
    fn seed_windows() {
        let m = model(2, 3);
        let a = random_seed_window(&m, 17, 0.5).unwrap();
        assert_eq!(a, random_seed_window(&m, 17, 0.5).unwrap());
        assert_eq!(a.len(), m.dims().input_dim);
        assert!(a.iter().all(|&c| c <= 1));
        let origin = random_seed_window(&m, ORIGIN_SEED, 0.5).unwrap();
        assert_eq!(origin, apply_threshold(&m.decode(&[0.0; 3]).unwrap(), 0.5));
    }

    #[test]
    fn binary_feedback_slides_the_output() {
        let m = model(2, 4);
        let mut state = CompositionState::new(&m, &window(&m)).unwrap();
        let first = state.step(&m, 0.45, None).unwrap();
        let fed: Vec<u8> = state.current_window().iter().map(|&v| v as u8).collect();
        assert_eq!(fed, first.next_window);
        assert_eq!(state.step_count(), 1);
        assert_eq!(state.generated_cols(), 10);
    }

    #[test]
    fn splice_feedback_keeps_the_window_on_the_roll() {
        let m = model(2, 5);
        let mut state = CompositionState::new(&m, &window(&m))
            .unwrap()
            .with_feedback(Feedback::Splice);
        for _ in 0..3 {
            state.step(&m, 0.45, None).unwrap();
            let roll = state.roll(&m);
            let tail = flatten_window(&roll, roll.n_cols() - 20, 20);
            let fed: Vec<u8> = state.current_window().iter().map(|&v| v as u8).collect();
            assert_eq!(fed, tail);
        }
    }

    #[test]
    fn sampling_mode_is_seeded() {
        let m = model(2, 6);
        let run = |seed| {
            let mut s = CompositionState::new(&m, &window(&m))
                .unwrap()
                .with_latent_mode(LatentMode::Sample { seed });
            for _ in 0..4 {
                s.step(&m, 0.5, None).unwrap();
            }
            s.roll(&m)
        };
        assert_eq!(run(9), run(9));
    }
}
