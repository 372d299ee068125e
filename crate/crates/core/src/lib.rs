//! Predictive variational autoencoder for polyphonic music.
//!
//! Music is held as a binary piano roll (pitch x 100 ms steps). A window of
//! `T` seconds is encoded into a Gaussian latent code and decoded into the
//! window advanced by one prediction stride, so the decoder both re-states
//! the known music and predicts the next second. Feeding outputs back in
//! gives an autoregressive composer that can be steered by editing the
//! latent code.
//!
//! Layout:
//! - [`midi`]: Standard MIDI File reader and format-0 writer
//! - [`roll`]: note events, piano rolls, quantization, text format
//! - [`window`]: (input, target) window pairs
//! - [`vae`]: parameters, forward passes, ELBO loss, analytic gradients
//! - [`optim`]: the Adam optimizer
//! - [`trainer`]: song-level splits and the training loop
//! - [`checkpoint`]: self-describing binary model files
//! - [`eval`]: thresholding, confusion metrics, sweeps and breakdowns
//! - [`composer`]: generation loop and latent steering
//! - [`synthetic`]: small deterministic corpora for demos and tests

pub mod checkpoint;
pub mod composer;
pub mod error;
pub mod eval;
pub mod midi;
pub mod model;
pub mod optim;
pub mod roll;
pub mod synthetic;
pub mod trainer;
pub mod vae;
pub mod window;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use composer::{CompositionState, Feedback, LatentMode};
pub use error::{Error, Result};
pub use eval::{ConfusionCounts, MetricsReport, SweepResult, WindowPredictor};
pub use midi::{parse_midi, write_midi, write_midi_with_length, MidiNotes};
pub use model::MusicModel;
pub use roll::{NoteEvent, PianoRoll, PitchBand};
pub use trainer::{SplitDataset, TrainingConfig, TrainingHistory};
pub use vae::{Gradients, LatentCode, LossBreakdown, ModelDims, ModelParameters};
pub use window::{WindowPair, WindowSpec};
