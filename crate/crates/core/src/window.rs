//! Slicing rolls into (input, target) window pairs.
//!
//! Windows are flattened pitch-major: cell `(row, t)` of a window lives at
//! index `row * width + t`. Checkpoints record this order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::roll::{PianoRoll, GRID_MS};

/// Tag stored in checkpoints for the flattening order.
pub const FLATTEN_ORDER: &str = "pitch-major";

/// Columns between consecutive input windows (one second).
pub const HOP_COLS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WindowSpec {
    pub window_seconds: usize,
    pub grid_ms: u64,
    pub stride_cols: usize,
}

impl WindowSpec {
    /// Window of `seconds` on the 100 ms grid; predictions advance one
    /// second, or half a second for one-second windows.
    pub fn new(seconds: usize) -> Result<Self> {
        if seconds == 0 {
            return Err(Error::InvalidConfig("window must be at least 1 second".into()));
        }
        Ok(Self {
            window_seconds: seconds,
            grid_ms: GRID_MS,
            stride_cols: if seconds == 1 { 5 } else { 10 },
        })
    }

    /// Window width in columns.
    pub fn width(&self) -> usize {
        self.window_seconds * 10
    }

    pub fn stride(&self) -> usize {
        self.stride_cols
    }

    /// Columns of each output window that re-state the input.
    pub fn overlap(&self) -> usize {
        self.width() - self.stride_cols
    }

    pub fn input_dim(&self, n_pitches: usize) -> usize {
        n_pitches * self.width()
    }

    pub fn validate(&self) -> Result<()> {
        let expected = WindowSpec::new(self.window_seconds)?;
        if *self != expected {
            return Err(Error::InvalidConfig(format!(
                "window spec {self:?} is inconsistent; expected {expected:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowPair {
    pub x: Vec<u8>,
    pub y: Vec<u8>,
    pub source_song: String,
    pub source_offset_cols: usize,
}

/// Flattens columns `[start, start + width)` of a roll, pitch-major.
pub fn flatten_window(roll: &PianoRoll, start: usize, width: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(roll.n_pitches() * width);
    for r in 0..roll.n_pitches() {
        out.extend_from_slice(&roll.row(r)[start..start + width]);
    }
    out
}

/// Rebuilds a roll from a flattened window.
pub fn unflatten_window(roll_like: &PianoRoll, window: &[u8], width: usize) -> Result<PianoRoll> {
    PianoRoll::from_cells(roll_like.band(), width, window.to_vec())
}

/// All window pairs of a song, with inputs one second apart.
pub fn make_windows(roll: &PianoRoll, spec: &WindowSpec, song: &str) -> Result<Vec<WindowPair>> {
    let width = spec.width();
    let needed = width + spec.stride_cols;
    if roll.n_cols() < needed {
        return Err(Error::TooShort {
            n_cols: roll.n_cols(),
            needed,
        });
    }
    Ok((0..=roll.n_cols() - needed)
        .step_by(HOP_COLS)
        .map(|t| WindowPair {
            x: flatten_window(roll, t, width),
            y: flatten_window(roll, t + spec.stride_cols, width),
            source_song: song.to_owned(),
            source_offset_cols: t,
        })
        .collect())
}
