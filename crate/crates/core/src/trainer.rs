//! Song-level train/test splits and minibatch Adam on the negative ELBO.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::roll::PianoRoll;
use crate::vae::{Gradients, LossBreakdown, ModelDims, ModelParameters};
use crate::window::{make_windows, WindowPair, WindowSpec};

/// Examples per gradient chunk when the determinism flag is set.
const DETERMINISTIC_CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub window_spec: WindowSpec,
    pub dims: ModelDims,
    pub beta: f64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub seed: u64,
    pub test_fraction: f64,
    /// Reduce minibatch gradients in fixed-size chunks so results do not
    /// depend on the thread count.
    pub deterministic: bool,
    /// Steps between test-loss evaluations; 0 means once per epoch.
    pub eval_every: usize,
    /// Stop after this many evaluations without test-loss improvement.
    pub early_stop_patience: Option<usize>,
}

impl TrainingConfig {
    pub fn new(window_spec: WindowSpec, dims: ModelDims) -> Self {
        let adam = AdamConfig::default();
        Self {
            window_spec,
            dims,
            beta: 0.5,
            learning_rate: adam.learning_rate,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_eps: adam.eps,
            batch_size: 64,
            max_steps: 1000,
            seed: 0,
            test_fraction: 0.2,
            deterministic: true,
            eval_every: 0,
            early_stop_patience: None,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.window_spec.validate()?;
        self.dims.validate()?;
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!("test_fraction must be in (0, 1), got {}", self.test_fraction));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.beta.is_nan() || self.beta < 0.0 {
            return bad(format!("beta must be non-negative, got {}", self.beta));
        }
        if !self.dims.input_dim.is_multiple_of(self.window_spec.width()) {
            return bad(format!(
                "input_dim {} is not a multiple of the window width {}",
                self.dims.input_dim,
                self.window_spec.width()
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplitDataset {
    pub train_pairs: Vec<WindowPair>,
    pub test_pairs: Vec<WindowPair>,
    pub train_songs: Vec<String>,
    pub test_songs: Vec<String>,
}

/// Shuffles songs with `seed` and holds out the smallest suffix covering at
/// least `test_fraction` of all columns, keeping one song on each side.
/// Songs too short for a single window pair contribute no pairs.
pub fn split_by_song(
    songs: &[(String, PianoRoll)],
    spec: &WindowSpec,
    test_fraction: f64,
    seed: u64,
) -> Result<SplitDataset> {
    if songs.len() < 2 {
        return Err(Error::TooFewSongs(songs.len()));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!("test_fraction must be in (0, 1), got {test_fraction}")));
    }
    let mut order: Vec<usize> = (0..songs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let total: usize = songs.iter().map(|(_, r)| r.n_cols()).sum();
    let wanted = test_fraction * total as f64;
    let mut n_test = 0;
    let mut covered = 0;
    for &i in order.iter().rev() {
        if n_test == songs.len() - 1 || (n_test > 0 && covered as f64 >= wanted) {
            break;
        }
        covered += songs[i].1.n_cols();
        n_test += 1;
    }
    let (train_idx, test_idx) = order.split_at(songs.len() - n_test);

    let mut out = SplitDataset::default();
    for (indices, pairs, names) in [
        (train_idx, &mut out.train_pairs, &mut out.train_songs),
        (test_idx, &mut out.test_pairs, &mut out.test_songs),
    ] {
        for &i in indices {
            let (name, roll) = &songs[i];
            names.push(name.clone());
            match make_windows(roll, spec, name) {
                Ok(p) => pairs.extend(p),
                Err(Error::TooShort { .. }) => log::warn!("song {name} is too short for one window pair"),
                Err(e) => return Err(e),
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub total: f64,
    pub recon_bce: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    pub epoch: usize,
    pub test_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingHistory {
    /// Minibatch mean losses, measured before each update.
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
    pub early_stopped: bool,
}

impl TrainingHistory {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "step,total,recon_bce,kl")?;
        for r in &self.steps {
            writeln!(out, "{},{},{},{}", r.step, r.total, r.recon_bce, r.kl)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub params: ModelParameters,
    pub history: TrainingHistory,
}

/// Mean loss over `pairs` with the latent mean (no sampling).
pub fn mean_loss(params: &ModelParameters, pairs: &[WindowPair], beta: f64) -> Result<LossBreakdown> {
    let zero = vec![0.0; params.dims().latent_dim];
    let losses = pairs
        .par_iter()
        .map(|p| params.elbo_loss(&p.x, &p.y, beta, &zero).map(|(l, _)| l))
        .collect::<Result<Vec<_>>>()?;
    Ok(average(&losses, beta))
}

fn average(losses: &[LossBreakdown], beta: f64) -> LossBreakdown {
    let n = losses.len().max(1) as f64;
    let (mut total, mut recon, mut kl) = (0.0, 0.0, 0.0);
    for l in losses {
        total += l.total;
        recon += l.recon_bce;
        kl += l.kl;
    }
    LossBreakdown {
        total: total / n,
        recon_bce: recon / n,
        kl: kl / n,
        beta,
    }
}

/// Trains a freshly initialized model.
pub fn train(config: &TrainingConfig, dataset: &SplitDataset) -> Result<TrainingOutcome> {
    config.validate()?;
    train_from(config, dataset, ModelParameters::init(config.dims, config.seed))
}

/// Trains starting from `params`.
pub fn train_from(
    config: &TrainingConfig,
    dataset: &SplitDataset,
    mut params: ModelParameters,
) -> Result<TrainingOutcome> {
    config.validate()?;
    if params.dims() != config.dims {
        return Err(Error::InvalidConfig("initial parameters do not match config dims".into()));
    }
    let pairs = &dataset.train_pairs;
    if pairs.is_empty() {
        return Err(Error::InvalidConfig("training side has no window pairs".into()));
    }
    for p in pairs.iter().chain(&dataset.test_pairs) {
        check_len("window pair input", config.dims.input_dim, p.x.len())?;
        check_len("window pair target", config.dims.input_dim, p.y.len())?;
    }

    let latent = config.dims.latent_dim;
    let batch = config.batch_size;
    let chunk = if config.deterministic {
        DETERMINISTIC_CHUNK
    } else {
        batch.div_ceil(rayon::current_num_threads()).max(1)
    };
    let steps_per_epoch = pairs.len().div_ceil(batch);
    let eval_every = if config.eval_every == 0 { steps_per_epoch } else { config.eval_every };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut adam = Adam::new(config.adam(), &params);
    let mut history = TrainingHistory::default();
    let mut best_test = f64::INFINITY;
    let mut since_best = 0;

    for step in 0..config.max_steps {
        let examples: Vec<(usize, Vec<f64>)> = (0..batch)
            .map(|_| {
                let idx = rng.random_range(0..pairs.len());
                let noise: Vec<f64> = (0..latent).map(|_| rng.sample(StandardNormal)).collect();
                (idx, noise)
            })
            .collect();

        let partials = examples
            .par_chunks(chunk)
            .map(|part| -> Result<(Gradients, Vec<LossBreakdown>)> {
                let mut grads = Gradients::zeros(config.dims);
                let mut losses = Vec::with_capacity(part.len());
                for (idx, noise) in part {
                    let pair = &pairs[*idx];
                    let (loss, cache) = params.elbo_loss(&pair.x, &pair.y, config.beta, noise)?;
                    params.backward_into(&pair.x, &pair.y, &cache, 1.0, &mut grads)?;
                    losses.push(loss);
                }
                Ok((grads, losses))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut grads = Gradients::zeros(config.dims);
        let mut losses = Vec::with_capacity(batch);
        for (g, l) in partials {
            grads.add_scaled(&g, 1.0);
            losses.extend(l);
        }
        let loss = average(&losses, config.beta);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                total: loss.total,
                recon: loss.recon_bce,
                kl: loss.kl,
            });
        }
        history.steps.push(StepRecord {
            step,
            total: loss.total,
            recon_bce: loss.recon_bce,
            kl: loss.kl,
        });

        grads.scale(1.0 / batch as f64);
        adam.step(&mut params, &grads);

        if (step + 1) % eval_every == 0 && !dataset.test_pairs.is_empty() {
            let test = mean_loss(&params, &dataset.test_pairs, config.beta)?;
            history.evals.push(EvalRecord {
                step: step + 1,
                epoch: (step + 1) / steps_per_epoch,
                test_loss: test.total,
            });
            if test.total < best_test {
                best_test = test.total;
                since_best = 0;
            } else {
                since_best += 1;
            }
            if config.early_stop_patience.is_some_and(|p| since_best >= p) {
                log::info!("early stop at step {} (test loss plateau)", step + 1);
                history.early_stopped = true;
                break;
            }
        }
    }
    if !params.is_finite() {
        return Err(Error::NonFiniteLoss {
            step: history.steps.len(),
            total: f64::NAN,
            recon: f64::NAN,
            kl: f64::NAN,
        });
    }
    Ok(TrainingOutcome { params, history })
}
