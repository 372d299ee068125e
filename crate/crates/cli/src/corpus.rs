//! Loading songs from MIDI files, ingested roll directories or the
//! built-in synthetic corpora.

use std::fs;
use std::path::{Path, PathBuf};

use predvae::roll::{notes_to_roll, notes_to_roll_padded, roll_to_notes, PianoRoll, PitchBand, GRID_MS};
use predvae::synthetic::{style_corpus, tiny_corpus};
use predvae::parse_midi;

use crate::Failure;

pub const MANIFEST: &str = "manifest.csv";

pub type Song = (String, PianoRoll);

/// One successfully ingested MIDI file.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub id: String,
    pub file: PathBuf,
    pub roll: PianoRoll,
    pub notes: usize,
    pub dropped: usize,
    pub dangling: usize,
}

fn is_midi(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("mid") || e.eq_ignore_ascii_case("midi"))
}

/// Parses and quantizes one file.
pub fn ingest_file(path: &Path, band: PitchBand) -> Result<Ingested, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    let parsed = parse_midi(&bytes).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    let q = notes_to_roll(&parsed.notes, band, GRID_MS).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    // ids end up in CSV files and file names
    let id = path
        .file_stem()
        .unwrap_or_default()
        .to_string_lossy()
        .chars()
        .map(|ch| if ch.is_alphanumeric() || "-_.".contains(ch) { ch } else { '_' })
        .collect();
    Ok(Ingested {
        id,
        file: path.to_path_buf(),
        roll: q.roll,
        notes: parsed.notes.len(),
        dropped: q.dropped,
        dangling: parsed.dangling,
    })
}

/// Ingests every MIDI file in `dir` (sorted by name), logging and skipping
/// the ones that fail. Song ids are file stems made unique.
pub fn ingest_dir(dir: &Path, band: PitchBand) -> Result<Vec<Ingested>, Failure> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_midi(p))
        .collect();
    files.sort();
    let mut songs: Vec<Ingested> = Vec::new();
    for file in files {
        match ingest_file(&file, band) {
            Ok(mut song) => {
                let base = song.id.clone();
                let mut k = 2;
                while songs.iter().any(|s| s.id == song.id) {
                    song.id = format!("{base}-{k}");
                    k += 1;
                }
                songs.push(song);
            }
            Err(e) => log::warn!("skipping {}", e.message()),
        }
    }
    Ok(songs)
}

/// Moves a roll into another pitch band through its notes.
fn rebanded(roll: PianoRoll, band: PitchBand) -> Result<PianoRoll, Failure> {
    if roll.band() == band {
        return Ok(roll);
    }
    let n_cols = roll.n_cols();
    Ok(notes_to_roll_padded(&roll_to_notes(&roll, GRID_MS), band, GRID_MS, n_cols)?.roll)
}

fn read_manifest(dir: &Path, band: PitchBand) -> Result<Vec<Song>, Failure> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let mut songs = Vec::new();
    for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let id = line.split(',').next().unwrap_or_default();
        let path = dir.join("rolls").join(format!("{id}.roll"));
        let roll_text = fs::read_to_string(&path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
        let roll = PianoRoll::from_text(&roll_text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
        songs.push((id.to_owned(), rebanded(roll, band)?));
    }
    Ok(songs)
}

/// Resolves a corpus spec: `synthetic:tiny`, `synthetic:style`, an
/// ingested directory (with a manifest), a directory of MIDI files, or a
/// single MIDI file.
pub fn load_songs(spec: &str, band: PitchBand, seed: u64) -> Result<Vec<Song>, Failure> {
    let songs = match spec {
        "synthetic:tiny" => tiny_corpus(),
        "synthetic:style" => style_corpus(6, 40, seed),
        _ if spec.starts_with("synthetic:") => return Err(Failure::Usage(format!("unknown synthetic corpus {spec:?}"))),
        _ => {
            let path = Path::new(spec);
            if path.join(MANIFEST).is_file() {
                return read_manifest(path, band);
            } else if path.is_dir() {
                return Ok(ingest_dir(path, band)?.into_iter().map(|s| (s.id, s.roll)).collect());
            } else if path.is_file() {
                let s = ingest_file(path, band)?;
                return Ok(vec![(s.id, s.roll)]);
            } else {
                return Err(Failure::Data(format!("corpus {spec} does not exist")));
            }
        }
    };
    songs
        .into_iter()
        .map(|(id, roll)| Ok((id, rebanded(roll, band)?)))
        .collect()
}
