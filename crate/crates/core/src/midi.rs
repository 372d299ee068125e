//! Standard MIDI File reading (formats 0 and 1) and format-0 writing.
//!
//! Only note on/off and tempo events matter here. All tracks are merged
//! onto one millisecond timeline using a global tempo map, percussion
//! (channel 10) is dropped, and a note-on with velocity 0 counts as a
//! note-off.

use std::collections::{BTreeMap, VecDeque};

use crate::error::{Error, Result};
use crate::roll::NoteEvent;

/// Microseconds per quarter note when no tempo event is present (120 bpm).
pub const DEFAULT_TEMPO: u32 = 500_000;
/// Ticks per quarter note used by [`write_midi`].
pub const WRITE_DIVISION: u16 = 480;
/// Velocity of every note written by [`write_midi`].
pub const WRITE_VELOCITY: u8 = 80;

const PERCUSSION_CHANNEL: u8 = 9;

/// Notes decoded from a file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MidiNotes {
    /// Sorted by (onset, pitch, duration).
    pub notes: Vec<NoteEvent>,
    /// Note-ons still open at end of track, closed there.
    pub dangling: usize,
    /// Time of the latest end-of-track event.
    pub length_ms: u64,
}

impl MidiNotes {
    pub fn has_warnings(&self) -> bool {
        self.dangling > 0
    }
}

#[derive(Debug, Clone, Copy)]
enum Timing {
    /// Ticks per quarter note.
    Metrical(u16),
    /// Frames per second and ticks per frame.
    Timecode { fps: u8, ticks_per_frame: u8 },
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::MalformedFile(msg.into())
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    fn is_empty(&self) -> bool {
        self.pos >= self.data.len()
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.data.len())
            .ok_or_else(|| malformed(format!("unexpected end of data at byte {}", self.pos)))?;
        let out = &self.data[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn peek(&self) -> Result<u8> {
        self.data
            .get(self.pos)
            .copied()
            .ok_or_else(|| malformed("unexpected end of track"))
    }

    fn u32_be(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    /// Variable-length quantity, at most four bytes.
    fn vlq(&mut self) -> Result<u32> {
        let mut value = 0u32;
        for _ in 0..4 {
            let b = self.u8()?;
            value = (value << 7) | u32::from(b & 0x7f);
            if b & 0x80 == 0 {
                return Ok(value);
            }
        }
        Err(malformed("variable-length quantity longer than 4 bytes"))
    }

    fn data_byte(&mut self) -> Result<u8> {
        let b = self.u8()?;
        if b & 0x80 != 0 {
            return Err(malformed(format!("status byte {b:#04x} where a data byte was expected")));
        }
        Ok(b)
    }
}

#[derive(Debug, Clone, Copy)]
enum TrackEvent {
    On { channel: u8, key: u8 },
    Off { channel: u8, key: u8 },
    Tempo(u32),
    End,
}

struct Track {
    events: Vec<(u64, TrackEvent)>,
}

fn parse_track(body: &[u8]) -> Result<Track> {
    let mut cur = Cursor::new(body);
    let mut tick = 0u64;
    let mut running: Option<u8> = None;
    let mut events = Vec::new();
    loop {
        if cur.is_empty() {
            return Err(malformed("track ends without an end-of-track event"));
        }
        tick += u64::from(cur.vlq()?);
        let first = cur.peek()?;
        let status = if first & 0x80 != 0 {
            cur.pos += 1;
            first
        } else {
            running.ok_or_else(|| malformed("data byte without running status"))?
        };
        match status {
            0x80..=0xef => {
                running = Some(status);
                let channel = status & 0x0f;
                match status & 0xf0 {
                    0x80 => {
                        let key = cur.data_byte()?;
                        cur.data_byte()?;
                        events.push((tick, TrackEvent::Off { channel, key }));
                    }
                    0x90 => {
                        let key = cur.data_byte()?;
                        let velocity = cur.data_byte()?;
                        let ev = if velocity == 0 {
                            TrackEvent::Off { channel, key }
                        } else {
                            TrackEvent::On { channel, key }
                        };
                        events.push((tick, ev));
                    }
                    0xc0 | 0xd0 => {
                        cur.data_byte()?;
                    }
                    _ => {
                        cur.data_byte()?;
                        cur.data_byte()?;
                    }
                }
            }
            0xf0 | 0xf7 => {
                running = None;
                let len = cur.vlq()? as usize;
                cur.take(len)?;
            }
            0xff => {
                running = None;
                let kind = cur.u8()?;
                let len = cur.vlq()? as usize;
                let data = cur.take(len)?;
                match kind {
                    0x2f => {
                        events.push((tick, TrackEvent::End));
                        if !cur.is_empty() {
                            return Err(malformed("data after end-of-track event"));
                        }
                        return Ok(Track { events });
                    }
                    0x51 => {
                        if len != 3 {
                            return Err(malformed("tempo event with length other than 3"));
                        }
                        let tempo = u32::from_be_bytes([0, data[0], data[1], data[2]]);
                        if tempo == 0 {
                            return Err(malformed("zero tempo"));
                        }
                        events.push((tick, TrackEvent::Tempo(tempo)));
                    }
                    _ => {}
                }
            }
            other => return Err(malformed(format!("unexpected status byte {other:#04x} in track"))),
        }
    }
}

/// Tick to millisecond conversion honoring tempo changes.
struct TempoMap {
    timing: Timing,
    /// (tick, microseconds * division at that tick, tempo from that tick on)
    segments: Vec<(u64, u128, u32)>,
}

impl TempoMap {
    fn new(timing: Timing, changes: &BTreeMap<u64, u32>) -> Self {
        let mut segments = vec![(0u64, 0u128, DEFAULT_TEMPO)];
        if let Timing::Metrical(_) = timing {
            for (&tick, &tempo) in changes {
                let &(t0, acc, tempo0) = segments.last().unwrap();
                if tick == t0 {
                    segments.last_mut().unwrap().2 = tempo;
                } else {
                    let acc = acc + u128::from(tick - t0) * u128::from(tempo0);
                    segments.push((tick, acc, tempo));
                }
            }
        }
        Self { timing, segments }
    }

    fn to_ms(&self, tick: u64) -> u64 {
        match self.timing {
            Timing::Metrical(division) => {
                let idx = self.segments.partition_point(|s| s.0 <= tick) - 1;
                let (t0, acc, tempo) = self.segments[idx];
                let scaled = acc + u128::from(tick - t0) * u128::from(tempo);
                let denom = u128::from(division) * 1000;
                ((scaled + denom / 2) / denom) as u64
            }
            Timing::Timecode { fps, ticks_per_frame } => {
                let denom = u128::from(fps) * u128::from(ticks_per_frame);
                ((u128::from(tick) * 1000 + denom / 2) / denom) as u64
            }
        }
    }
}

/// Decodes every note of a Standard MIDI File.
pub fn parse_midi(bytes: &[u8]) -> Result<MidiNotes> {
    let mut cur = Cursor::new(bytes);
    if cur.take(4).map_err(|_| malformed("file shorter than a header"))? != b"MThd" {
        return Err(malformed("bad header magic"));
    }
    let header_len = cur.u32_be()? as usize;
    if header_len < 6 {
        return Err(malformed("header chunk shorter than 6 bytes"));
    }
    let header = cur.take(header_len)?;
    let format = u16::from_be_bytes([header[0], header[1]]);
    let n_tracks = u16::from_be_bytes([header[2], header[3]]) as usize;
    let division = u16::from_be_bytes([header[4], header[5]]);
    match format {
        0 if n_tracks != 1 => return Err(malformed("format 0 file must have exactly one track")),
        0 | 1 => {}
        2 => return Err(malformed("format 2 files are not supported")),
        other => return Err(malformed(format!("unknown format {other}"))),
    }
    let timing = if division & 0x8000 != 0 {
        let fps = (-(((division >> 8) as u8) as i8)) as u8;
        let ticks_per_frame = (division & 0xff) as u8;
        if !matches!(fps, 24 | 25 | 29 | 30) || ticks_per_frame == 0 {
            return Err(malformed("invalid timecode division"));
        }
        Timing::Timecode { fps, ticks_per_frame }
    } else if division == 0 {
        return Err(malformed("zero ticks per quarter note"));
    } else {
        Timing::Metrical(division)
    };

    let mut tracks = Vec::with_capacity(n_tracks);
    while tracks.len() < n_tracks {
        if cur.is_empty() {
            return Err(malformed(format!(
                "header declares {n_tracks} tracks, found {}",
                tracks.len()
            )));
        }
        let kind = cur.take(4)?;
        let len = cur.u32_be()? as usize;
        let body = cur
            .take(len)
            .map_err(|_| malformed("chunk length runs past end of file"))?;
        if kind == b"MTrk" {
            tracks.push(parse_track(body)?);
        } else if !kind.iter().all(|b| b.is_ascii_graphic()) {
            return Err(malformed("corrupt chunk type"));
        }
    }

    let tempo_changes: BTreeMap<u64, u32> = tracks
        .iter()
        .flat_map(|t| t.events.iter())
        .filter_map(|&(tick, ev)| match ev {
            TrackEvent::Tempo(tempo) => Some((tick, tempo)),
            _ => None,
        })
        .collect();
    let tempo = TempoMap::new(timing, &tempo_changes);

    let mut out = MidiNotes::default();
    for track in &tracks {
        let mut open: BTreeMap<(u8, u8), VecDeque<u64>> = BTreeMap::new();
        let mut end_tick = 0;
        for &(tick, ev) in &track.events {
            match ev {
                TrackEvent::On { channel, key } if channel != PERCUSSION_CHANNEL => {
                    open.entry((channel, key)).or_default().push_back(tick);
                }
                TrackEvent::Off { channel, key } if channel != PERCUSSION_CHANNEL => {
                    if let Some(start) = open.get_mut(&(channel, key)).and_then(|q| q.pop_front()) {
                        out.notes.push(make_note(&tempo, key, start, tick));
                    }
                }
                TrackEvent::End => end_tick = tick,
                _ => {}
            }
        }
        out.length_ms = out.length_ms.max(tempo.to_ms(end_tick));
        for ((_, key), starts) in open {
            for start in starts {
                log::warn!("closing dangling note-on (pitch {key}) at end of track");
                out.dangling += 1;
                out.notes.push(make_note(&tempo, key, start, end_tick));
            }
        }
    }
    out.notes.sort_by_key(|n| (n.onset_ms, n.pitch, n.duration_ms));
    Ok(out)
}

fn make_note(tempo: &TempoMap, key: u8, start: u64, end: u64) -> NoteEvent {
    let onset = tempo.to_ms(start);
    let end = tempo.to_ms(end);
    NoteEvent::new(key, onset, end.saturating_sub(onset).max(1))
}

fn push_vlq(out: &mut Vec<u8>, mut value: u32) {
    let mut buf = [0u8; 4];
    let mut n = 0;
    loop {
        buf[n] = (value & 0x7f) as u8;
        n += 1;
        value >>= 7;
        if value == 0 {
            break;
        }
    }
    for i in (0..n).rev() {
        out.push(if i > 0 { buf[i] | 0x80 } else { buf[i] });
    }
}

/// Writes notes as a format-0 file on channel 1: division 480, tempo
/// 500000 us per quarter, velocity 80.
pub fn write_midi(notes: &[NoteEvent]) -> Vec<u8> {
    write_midi_with_length(notes, 0)
}

/// Like [`write_midi`], with the end of track placed no earlier than
/// `length_ms` so trailing silence is kept.
pub fn write_midi_with_length(notes: &[NoteEvent], length_ms: u64) -> Vec<u8> {
    // 1 ms = 480 / 500 ticks at this division and tempo
    let to_ticks = |ms: u64| (ms * u64::from(WRITE_DIVISION) + 250) / 500;
    // (tick, is_on, key); offs sort before ons at the same tick
    let mut events: Vec<(u64, bool, u8)> = Vec::with_capacity(notes.len() * 2);
    for n in notes {
        let start = to_ticks(n.onset_ms);
        let end = to_ticks(n.end_ms()).max(start + 1);
        events.push((start, true, n.pitch));
        events.push((end, false, n.pitch));
    }
    events.sort();

    let mut track = Vec::with_capacity(events.len() * 4 + 16);
    track.extend_from_slice(&[0x00, 0xff, 0x51, 0x03]);
    track.extend_from_slice(&DEFAULT_TEMPO.to_be_bytes()[1..]);
    let mut last = 0;
    for (tick, on, key) in events {
        push_vlq(&mut track, (tick - last) as u32);
        last = tick;
        if on {
            track.extend_from_slice(&[0x90, key, WRITE_VELOCITY]);
        } else {
            track.extend_from_slice(&[0x80, key, 0]);
        }
    }
    push_vlq(&mut track, to_ticks(length_ms).saturating_sub(last) as u32);
    track.extend_from_slice(&[0xff, 0x2f, 0x00]);

    let mut out = Vec::with_capacity(track.len() + 22);
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&WRITE_DIVISION.to_be_bytes());
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(track.len() as u32).to_be_bytes());
    out.extend_from_slice(&track);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smf(format: u16, division: u16, tracks: &[&[u8]]) -> Vec<u8> {
        let mut out = b"MThd".to_vec();
        out.extend_from_slice(&6u32.to_be_bytes());
        out.extend_from_slice(&format.to_be_bytes());
        out.extend_from_slice(&(tracks.len() as u16).to_be_bytes());
        out.extend_from_slice(&division.to_be_bytes());
        for t in tracks {
            out.extend_from_slice(b"MTrk");
            out.extend_from_slice(&(t.len() as u32).to_be_bytes());
            out.extend_from_slice(t);
        }
        out
    }

    #[test]
    fn vlq_encoding() {
        for (value, bytes) in [
            (0u32, vec![0x00]),
            (0x7f, vec![0x7f]),
            (0x80, vec![0x81, 0x00]),
            (480, vec![0x83, 0x60]),
            (0x0fff_ffff, vec![0xff, 0xff, 0xff, 0x7f]),
        ] {
            let mut out = Vec::new();
            push_vlq(&mut out, value);
            assert_eq!(out, bytes);
            assert_eq!(Cursor::new(&bytes).vlq().unwrap(), value);
        }
        assert!(Cursor::new(&[0x80, 0x80, 0x80, 0x80, 0x00]).vlq().is_err());
    }

    #[test]
    fn tempo_change_mid_song() {
        // quarter at 120 bpm, then tempo doubles the quarter length
        let track: &[u8] = &[
            0x00, 0x90, 60, 64, //
            0x83, 0x60, 0xff, 0x51, 0x03, 0x0f, 0x42, 0x40, // 480: tempo 1_000_000
            0x00, 0x80, 60, 0, //
            0x00, 0x90, 62, 64, //
            0x83, 0x60, 0x80, 62, 0, // 960
            0x00, 0xff, 0x2f, 0x00,
        ];
        let notes = parse_midi(&smf(0, 480, &[track])).unwrap().notes;
        assert_eq!(notes, vec![NoteEvent::new(60, 0, 500), NoteEvent::new(62, 500, 1000)]);
    }

    #[test]
    fn percussion_is_dropped() {
        let track: &[u8] = &[
            0x00, 0x99, 36, 100, 0x60, 0x89, 36, 0, //
            0x00, 0x90, 60, 100, 0x60, 0x80, 60, 0, //
            0x00, 0xff, 0x2f, 0x00,
        ];
        // the piano note starts after the drum hit ends
        let notes = parse_midi(&smf(0, 96, &[track])).unwrap().notes;
        assert_eq!(notes, vec![NoteEvent::new(60, 500, 500)]);
    }

    #[test]
    fn format_1_uses_tempo_from_first_track() {
        let conductor: &[u8] = &[0x00, 0xff, 0x51, 0x03, 0x03, 0xd0, 0x90, 0x00, 0xff, 0x2f, 0x00];
        let notes: &[u8] = &[0x00, 0x90, 64, 90, 0x83, 0x60, 0x90, 64, 0, 0x00, 0xff, 0x2f, 0x00];
        let parsed = parse_midi(&smf(1, 480, &[conductor, notes])).unwrap();
        // tempo 250_000 us per quarter -> 480 ticks last 250 ms
        assert_eq!(parsed.notes, vec![NoteEvent::new(64, 0, 250)]);
    }

    #[test]
    fn dangling_note_closes_at_end_of_track() {
        let track: &[u8] = &[0x00, 0x90, 60, 64, 0x83, 0x60, 0xff, 0x2f, 0x00];
        let parsed = parse_midi(&smf(0, 480, &[track])).unwrap();
        assert_eq!(parsed.notes, vec![NoteEvent::new(60, 0, 500)]);
        assert_eq!(parsed.dangling, 1);
        assert!(parsed.has_warnings());
    }

    #[test]
    fn smpte_division() {
        // 25 fps, 40 ticks per frame -> 1 ms per tick
        let division = u16::from_be_bytes([(-25i8) as u8, 40]);
        let track: &[u8] = &[0x00, 0x90, 60, 64, 0x64, 0x80, 60, 0, 0x00, 0xff, 0x2f, 0x00];
        let notes = parse_midi(&smf(0, division, &[track])).unwrap().notes;
        assert_eq!(notes, vec![NoteEvent::new(60, 0, 100)]);
    }

    #[test]
    fn unknown_chunks_are_skipped() {
        let mut bytes = smf(0, 480, &[]);
        bytes[11] = 1; // one track
        bytes.extend_from_slice(b"XFIH");
        bytes.extend_from_slice(&3u32.to_be_bytes());
        bytes.extend_from_slice(&[1, 2, 3]);
        bytes.extend_from_slice(b"MTrk");
        bytes.extend_from_slice(&4u32.to_be_bytes());
        bytes.extend_from_slice(&[0x00, 0xff, 0x2f, 0x00]);
        assert!(parse_midi(&bytes).unwrap().notes.is_empty());
    }

    #[test]
    fn structural_errors() {
        let eot: &[u8] = &[0x00, 0xff, 0x2f, 0x00];
        let cases: Vec<Vec<u8>> = vec![
            Vec::new(),
            b"MThx\0\0\0\x06\0\0\0\x01\x01\xe0".to_vec(),
            smf(2, 480, &[eot]),
            smf(0, 0, &[eot]),
            smf(0, 480, &[eot, eot]),
            smf(0, 480, &[&[0x00, 0x90, 60, 64]]),
            smf(0, 480, &[&[0x00, 60, 64, 0x00, 0xff, 0x2f, 0x00]]),
            smf(0, 480, &[&[0x00, 0x90, 0xbc, 64, 0x00, 0xff, 0x2f, 0x00]]),
            smf(0, 480, &[&[0x00, 0xf3, 0x01, 0x00, 0xff, 0x2f, 0x00]]),
            smf(0, 480, &[&[0x00, 0xff, 0x2f, 0x00, 0x00]]),
        ];
        for (i, bytes) in cases.iter().enumerate() {
            assert!(
                matches!(parse_midi(bytes), Err(Error::MalformedFile(_))),
                "case {i} should be malformed"
            );
        }
    }

    #[test]
    fn written_files_parse_back() {
        let notes = vec![
            NoteEvent::new(60, 0, 400),
            NoteEvent::new(64, 0, 100),
            NoteEvent::new(60, 500, 500),
        ];
        let parsed = parse_midi(&write_midi(&notes)).unwrap();
        assert_eq!(parsed.notes, notes);
        assert_eq!(parsed.dangling, 0);
        assert_eq!(parsed.length_ms, 1000);
        let padded = parse_midi(&write_midi_with_length(&notes, 3000)).unwrap();
        assert_eq!(padded.notes, notes);
        assert_eq!(padded.length_ms, 3000);
    }
}
