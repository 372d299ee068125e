use std::io;

/// Errors produced by the core library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed MIDI file: {0}")]
    MalformedFile(String),

    #[error("no notes left after quantization ({dropped} out of band)")]
    EmptyAfterQuantization { dropped: usize },

    #[error("roll too short: {n_cols} columns, need at least {needed}")]
    TooShort { n_cols: usize, needed: usize },

    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("forward cache does not match the parameters")]
    StaleCache,

    #[error("need at least 2 songs to split, got {0}")]
    TooFewSongs(usize),

    #[error("non-finite loss at step {step}: total={total} recon={recon} kl={kl}")]
    NonFiniteLoss {
        step: usize,
        total: f64,
        recon: f64,
        kl: f64,
    },

    #[error("confusion counts are empty")]
    EmptyCounts,

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            actual,
        })
    }
}
