//! Note events and the binary piano-roll matrix.
//!
//! A roll has one row per pitch in its [`PitchBand`] (lowest pitch first)
//! and one column per 100 ms grid step. Cells are stored row-major.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default grid resolution in milliseconds.
pub const GRID_MS: u64 = 100;

/// A sounding note on an absolute millisecond timeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NoteEvent {
    pub pitch: u8,
    pub onset_ms: u64,
    pub duration_ms: u64,
}

impl NoteEvent {
    pub fn new(pitch: u8, onset_ms: u64, duration_ms: u64) -> Self {
        debug_assert!(pitch <= 127);
        debug_assert!(duration_ms >= 1);
        Self {
            pitch,
            onset_ms,
            duration_ms,
        }
    }

    pub fn end_ms(&self) -> u64 {
        self.onset_ms + self.duration_ms
    }
}

/// Inclusive range of MIDI pitches modeled by a roll.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PitchBand {
    pub lo: u8,
    pub hi: u8,
}

impl PitchBand {
    /// The 88 piano keys, A0 (21) to C8 (108).
    pub const PIANO: PitchBand = PitchBand { lo: 21, hi: 108 };

    pub fn new(lo: u8, hi: u8) -> Result<Self> {
        if lo > hi || hi > 127 {
            return Err(Error::InvalidConfig(format!("invalid pitch band {lo}..={hi}")));
        }
        Ok(Self { lo, hi })
    }

    pub fn n_pitches(&self) -> usize {
        (self.hi - self.lo) as usize + 1
    }

    pub fn contains(&self, pitch: u8) -> bool {
        (self.lo..=self.hi).contains(&pitch)
    }

    pub fn row_of(&self, pitch: u8) -> Option<usize> {
        self.contains(pitch).then(|| (pitch - self.lo) as usize)
    }
}

impl Default for PitchBand {
    fn default() -> Self {
        Self::PIANO
    }
}

/// Binary pitch x time matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PianoRoll {
    band: PitchBand,
    n_cols: usize,
    cells: Vec<u8>,
}

impl PianoRoll {
    /// An all-silent roll.
    pub fn zeros(band: PitchBand, n_cols: usize) -> Self {
        assert!(n_cols >= 1, "a piano roll needs at least one column");
        Self {
            band,
            n_cols,
            cells: vec![0; band.n_pitches() * n_cols],
        }
    }

    /// Builds a roll from row-major cells; every cell must be 0 or 1.
    pub fn from_cells(band: PitchBand, n_cols: usize, cells: Vec<u8>) -> Result<Self> {
        if n_cols == 0 {
            return Err(Error::InvalidConfig("piano roll with zero columns".into()));
        }
        crate::error::check_len("piano roll cells", band.n_pitches() * n_cols, cells.len())?;
        if cells.iter().any(|&c| c > 1) {
            return Err(Error::InvalidConfig("piano roll cell outside {0, 1}".into()));
        }
        Ok(Self {
            band,
            n_cols,
            cells,
        })
    }

    pub fn band(&self) -> PitchBand {
        self.band
    }

    pub fn n_pitches(&self) -> usize {
        self.band.n_pitches()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn row(&self, row: usize) -> &[u8] {
        &self.cells[row * self.n_cols..(row + 1) * self.n_cols]
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.cells[row * self.n_cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, on: bool) {
        self.cells[row * self.n_cols + col] = on as u8;
    }

    pub fn active_cells(&self) -> usize {
        self.cells.iter().map(|&c| c as usize).sum()
    }

    /// Columns `[start, end)` as a new roll.
    pub fn slice_cols(&self, start: usize, end: usize) -> PianoRoll {
        assert!(start < end && end <= self.n_cols);
        let width = end - start;
        let mut cells = Vec::with_capacity(self.n_pitches() * width);
        for r in 0..self.n_pitches() {
            cells.extend_from_slice(&self.row(r)[start..end]);
        }
        PianoRoll {
            band: self.band,
            n_cols: width,
            cells,
        }
    }

    /// Appends the columns of `other` (same band) to the right.
    pub fn concat(&self, other: &PianoRoll) -> Result<PianoRoll> {
        if self.band != other.band {
            return Err(Error::InvalidConfig("cannot concatenate rolls with different bands".into()));
        }
        let n_cols = self.n_cols + other.n_cols;
        let mut cells = Vec::with_capacity(self.n_pitches() * n_cols);
        for r in 0..self.n_pitches() {
            cells.extend_from_slice(self.row(r));
            cells.extend_from_slice(other.row(r));
        }
        Ok(PianoRoll {
            band: self.band,
            n_cols,
            cells,
        })
    }

    /// Serializes to the text format: a `pitch_lo pitch_hi n_cols` header,
    /// then one line of `0`/`1` characters per pitch, lowest pitch first.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.cells.len() + self.n_pitches() + 16);
        let _ = writeln!(out, "{} {} {}", self.band.lo, self.band.hi, self.n_cols);
        for r in 0..self.n_pitches() {
            out.extend(self.row(r).iter().map(|&c| if c == 1 { '1' } else { '0' }));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<PianoRoll> {
        let bad = |msg: &str| Error::InvalidConfig(format!("text roll: {msg}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| bad("missing header"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(bad("header must be `pitch_lo pitch_hi n_cols`"));
        }
        let lo: u8 = fields[0].parse().map_err(|_| bad("bad pitch_lo"))?;
        let hi: u8 = fields[1].parse().map_err(|_| bad("bad pitch_hi"))?;
        let n_cols: usize = fields[2].parse().map_err(|_| bad("bad n_cols"))?;
        let band = PitchBand::new(lo, hi)?;
        let mut cells = Vec::with_capacity(band.n_pitches() * n_cols);
        let mut rows = 0;
        for line in lines {
            let line = line.trim();
            if line.len() != n_cols {
                return Err(bad("row length differs from n_cols"));
            }
            for ch in line.bytes() {
                match ch {
                    b'0' => cells.push(0),
                    b'1' => cells.push(1),
                    _ => return Err(bad("cells must be 0 or 1")),
                }
            }
            rows += 1;
        }
        if rows != band.n_pitches() {
            return Err(bad("row count differs from the pitch band"));
        }
        PianoRoll::from_cells(band, n_cols, cells)
    }
}

/// Result of quantizing a note list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Quantized {
    pub roll: PianoRoll,
    /// Notes whose pitch fell outside the band.
    pub dropped: usize,
}

/// Grid column span `[first, last]` of a note: the first column is
/// `floor(onset / grid)`, the last is `ceil(end / grid) - 1`, never before
/// the first.
pub fn quantize_span(note: &NoteEvent, grid_ms: u64) -> (usize, usize) {
    let first = note.onset_ms / grid_ms;
    let last = note.end_ms().div_ceil(grid_ms).saturating_sub(1).max(first);
    (first as usize, last as usize)
}

/// Quantizes notes into a roll just long enough to hold them.
pub fn notes_to_roll(notes: &[NoteEvent], band: PitchBand, grid_ms: u64) -> Result<Quantized> {
    quantize(notes, band, grid_ms, None)
}

/// Like [`notes_to_roll`], but pads the roll with silence up to `min_cols`.
pub fn notes_to_roll_padded(
    notes: &[NoteEvent],
    band: PitchBand,
    grid_ms: u64,
    min_cols: usize,
) -> Result<Quantized> {
    quantize(notes, band, grid_ms, Some(min_cols))
}

fn quantize(
    notes: &[NoteEvent],
    band: PitchBand,
    grid_ms: u64,
    min_cols: Option<usize>,
) -> Result<Quantized> {
    assert!(grid_ms > 0, "grid resolution must be positive");
    let mut per_row: Vec<Vec<(usize, usize)>> = vec![Vec::new(); band.n_pitches()];
    let mut dropped = 0;
    let mut n_cols = 0;
    for note in notes {
        match band.row_of(note.pitch) {
            Some(row) => {
                let span = quantize_span(note, grid_ms);
                n_cols = n_cols.max(span.1 + 1);
                per_row[row].push(span);
            }
            None => dropped += 1,
        }
    }
    if n_cols == 0 {
        return Err(Error::EmptyAfterQuantization { dropped });
    }
    let n_cols = n_cols.max(min_cols.unwrap_or(0));
    let mut roll = PianoRoll::zeros(band, n_cols);
    for (row, spans) in per_row.iter_mut().enumerate() {
        if spans.is_empty() {
            continue;
        }
        spans.sort_unstable();
        paint_row(&mut roll.cells[row * n_cols..(row + 1) * n_cols], spans);
    }
    Ok(Quantized { roll, dropped })
}

/// Paints sorted spans into one row and applies the separation rule: when a
/// note starts at or right after the end of an earlier note on the same
/// pitch, the column before its onset is cleared, unless that would leave
/// some note with no sounding column (the notes then merge).
fn paint_row(row: &mut [u8], spans: &[(usize, usize)]) {
    for &(a, b) in spans {
        row[a..=b].fill(1);
    }
    let mut cleared: Vec<usize> = Vec::new();
    let mut prev_last = spans[0].1;
    for &(start, last) in &spans[1..] {
        if start <= prev_last + 1 && start >= 1 {
            let col = start - 1;
            let erases_a_note = spans.iter().any(|&(a, b)| {
                (a..=b).contains(&col) && (a..=b).all(|c| c == col || cleared.contains(&c))
            });
            if !erases_a_note && !cleared.contains(&col) {
                row[col] = 0;
                cleared.push(col);
            }
        }
        prev_last = prev_last.max(last);
    }
}

/// Extracts one note per maximal run of 1s, sorted by (onset, pitch).
pub fn roll_to_notes(roll: &PianoRoll, grid_ms: u64) -> Vec<NoteEvent> {
    let mut notes = Vec::new();
    for r in 0..roll.n_pitches() {
        let pitch = roll.band.lo + r as u8;
        let row = roll.row(r);
        let mut c = 0;
        while c < row.len() {
            if row[c] == 1 {
                let start = c;
                while c < row.len() && row[c] == 1 {
                    c += 1;
                }
                notes.push(NoteEvent::new(
                    pitch,
                    start as u64 * grid_ms,
                    (c - start) as u64 * grid_ms,
                ));
            } else {
                c += 1;
            }
        }
    }
    notes.sort_by_key(|n| (n.onset_ms, n.pitch));
    notes
}
