//! Small deterministic corpora for demos, tests and benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::roll::{PianoRoll, PitchBand};

/// Band used by the synthetic corpora: two octaves from C3.
pub const SYNTH_BAND: PitchBand = PitchBand { lo: 48, hi: 71 };

/// Repeats `pattern` (one list of sounding rows per column) for `n_cols`
/// columns, starting `phase` columns into the pattern.
pub fn repeating_song(band: PitchBand, pattern: &[&[usize]], n_cols: usize, phase: usize) -> PianoRoll {
    let mut roll = PianoRoll::zeros(band, n_cols);
    for c in 0..n_cols {
        for &row in pattern[(c + phase) % pattern.len()] {
            roll.set(row, c, true);
        }
    }
    roll
}

/// Two 20-second songs built from short repeating figures: an arpeggio of
/// two-column notes over a held bass, and a two-voice figure.
pub fn tiny_corpus() -> Vec<(String, PianoRoll)> {
    let band = SYNTH_BAND;
    let arpeggio: &[&[usize]] = &[&[0, 12], &[0, 12], &[0], &[0, 16], &[0, 16], &[0], &[0, 19], &[0, 19], &[0]];
    let two_voice: &[&[usize]] = &[&[5, 21], &[5, 21], &[5], &[9, 17], &[9, 17], &[9], &[7, 14], &[7]];
    vec![
        ("tiny-arpeggio".to_owned(), repeating_song(band, arpeggio, 200, 0)),
        ("tiny-two-voice".to_owned(), repeating_song(band, two_voice, 200, 0)),
    ]
}

/// One-second figures shared by every song of [`style_corpus`].
fn motifs() -> Vec<Vec<Vec<usize>>> {
    // (rows, onset, length) triples within a 10-column second
    let figures: [&[(usize, usize, usize)]; 4] = [
        &[(0, 0, 4), (12, 0, 2), (16, 2, 2), (19, 5, 4)],
        &[(5, 0, 4), (17, 0, 3), (21, 4, 2), (17, 7, 2)],
        &[(7, 0, 4), (19, 0, 2), (14, 3, 3), (11, 7, 2)],
        &[(0, 0, 9), (12, 1, 3), (16, 5, 2), (12, 8, 1)],
    ];
    figures
        .iter()
        .map(|notes| {
            let mut cols = vec![Vec::new(); 10];
            for &(row, onset, len) in *notes {
                for col in &mut cols[onset..onset + len] {
                    col.push(row);
                }
            }
            cols
        })
        .collect()
}

/// Songs in one shared style: a fixed cycle of four one-second figures,
/// each song entering the cycle at its own point, with an occasional
/// repeated bar. Songs cycle through three transpositions so that every
/// key appears in more than one song.
pub fn style_corpus(n_songs: usize, seconds: usize, seed: u64) -> Vec<(String, PianoRoll)> {
    let band = SYNTH_BAND;
    let figures = motifs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_songs)
        .map(|s| {
            let transpose = s % 3;
            let mut figure = rng.random_range(0..figures.len());
            let mut roll = PianoRoll::zeros(band, seconds * 10);
            for sec in 0..seconds {
                for (c, rows) in figures[figure].iter().enumerate() {
                    for &row in rows {
                        roll.set(row + transpose, sec * 10 + c, true);
                    }
                }
                // mostly advance through the cycle, sometimes repeat a figure
                if rng.random_bool(0.85) {
                    figure = (figure + 1) % figures.len();
                }
            }
            (format!("style-{s:02}"), roll)
        })
        .collect()
}
