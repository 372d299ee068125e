#![allow(dead_code)]

use predvae::eval::WindowPredictor;
use predvae::vae::{ModelDims, ModelParameters};
use predvae::window::WindowSpec;
use predvae::{NoteEvent, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Builds an SMF byte stream from raw track bodies.
pub fn smf(format: u16, division: u16, tracks: &[&[u8]]) -> Vec<u8> {
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

pub struct Fixture {
    pub name: &'static str,
    pub bytes: Vec<u8>,
    pub expected: Vec<NoteEvent>,
}

/// Hand-encoded files with hand-computed note lists.
pub fn midi_fixtures() -> Vec<Fixture> {
    vec![
        Fixture {
            // 480 ticks at 500000 us / 480 ticks = 500 ms
            name: "single note",
            bytes: smf(0, 480, &[&[0x00, 0x90, 60, 64, 0x83, 0x60, 0x80, 60, 0, 0x00, 0xff, 0x2f, 0x00]]),
            expected: vec![NoteEvent::new(60, 0, 500)],
        },
        Fixture {
            name: "end of track only",
            bytes: smf(0, 480, &[&[0x00, 0xff, 0x2f, 0x00]]),
            expected: vec![],
        },
        Fixture {
            // second note-on omits its status byte; offs are velocity-0 note-ons
            name: "running status",
            bytes: smf(
                0,
                480,
                &[&[
                    0x00, 0x90, 60, 64, //
                    0x00, 64, 64, //
                    0x83, 0x60, 60, 0, //
                    0x81, 0x70, 64, 0, //
                    0x00, 0xff, 0x2f, 0x00,
                ]],
            ),
            // 240 ticks = 250 ms
            expected: vec![NoteEvent::new(60, 0, 500), NoteEvent::new(64, 0, 750)],
        },
        Fixture {
            name: "format 1 with conductor track and tempo change",
            bytes: smf(
                1,
                96,
                &[
                    &[
                        0x00, 0xff, 0x51, 0x03, 0x07, 0xa1, 0x20, // 500000
                        0x81, 0x40, 0xff, 0x51, 0x03, 0x03, 0xd0, 0x90, // tick 192: 250000
                        0x00, 0xff, 0x2f, 0x00,
                    ],
                    &[
                        0x00, 0xc0, 0x00, // program change
                        0x60, 0x91, 67, 100, // tick 96 (500 ms), channel 2
                        0x60, 0xb1, 64, 127, // tick 192 controller
                        0x00, 0x81, 67, 64, // tick 192 (1000 ms)
                        0x60, 0x99, 38, 90, // percussion, dropped
                        0x00, 0x91, 69, 90, // tick 288 = 1000 + 96 * 250000 / 96 us = 1250 ms
                        0x60, 0x89, 38, 0, //
                        0x00, 0x81, 69, 0, // tick 384 = 1500 ms
                        0x00, 0xff, 0x2f, 0x00,
                    ],
                ],
            ),
            expected: vec![NoteEvent::new(67, 500, 500), NoteEvent::new(69, 1250, 250)],
        },
        Fixture {
            name: "sysex and meta events between notes",
            bytes: smf(
                0,
                480,
                &[&[
                    0x00, 0xf0, 0x03, 0x7e, 0x7f, 0xf7, //
                    0x00, 0xff, 0x03, 0x04, b'p', b'i', b'a', b'n', //
                    0x00, 0x90, 72, 80, //
                    0x00, 0xff, 0x01, 0x01, b'x', //
                    0x81, 0x70, 0x80, 72, 0, // 240 ticks
                    0x00, 0xff, 0x2f, 0x00,
                ]],
            ),
            expected: vec![NoteEvent::new(72, 0, 250)],
        },
    ]
}

/// Structurally broken files: each must be rejected.
pub fn malformed_fixtures() -> Vec<(&'static str, Vec<u8>)> {
    let good = &midi_fixtures()[0].bytes;
    let mut bad_magic = good.clone();
    bad_magic[1] = b'x';
    let mut bad_track_magic = good.clone();
    bad_track_magic[14] = 0;
    let mut long_chunk = good.clone();
    long_chunk[21] += 1;
    let mut short_header = good.clone();
    short_header[7] = 5;
    let mut too_many_tracks = good.clone();
    too_many_tracks[11] = 2;
    vec![
        ("empty", Vec::new()),
        ("bad header magic", bad_magic),
        ("bad track magic", bad_track_magic),
        ("chunk length past end", long_chunk),
        ("header shorter than six bytes", short_header),
        ("missing track", too_many_tracks),
        ("no end of track", smf(0, 480, &[&[0x00, 0x90, 60, 64]])),
        ("data byte without status", smf(0, 480, &[&[0x00, 60, 64, 0x00, 0xff, 0x2f, 0x00]])),
        ("status inside data", smf(0, 480, &[&[0x00, 0x90, 0x90, 64, 0x00, 0xff, 0x2f, 0x00]])),
        ("system common in file", smf(0, 480, &[&[0x00, 0xf2, 0, 0, 0x00, 0xff, 0x2f, 0x00]])),
        ("overlong delta", smf(0, 480, &[&[0xff, 0xff, 0xff, 0xff, 0x7f, 0xff, 0x2f, 0x00]])),
        ("bad tempo length", smf(0, 480, &[&[0x00, 0xff, 0x51, 0x02, 0x07, 0xa1, 0x00, 0xff, 0x2f, 0x00]])),
        ("format 2", smf(2, 480, &[&[0x00, 0xff, 0x2f, 0x00]])),
        ("zero division", smf(0, 0, &[&[0x00, 0xff, 0x2f, 0x00]])),
    ]
}

/// Central finite-difference gradient of the ELBO loss with respect to
/// every parameter, in tensor order. Perturbations happen in the `f32`
/// parameter storage; the step actually taken is used as the denominator.
pub fn finite_difference_gradients(
    params: &ModelParameters,
    x: &[u8],
    y: &[u8],
    beta: f64,
    noise: &[f64],
    step: f64,
) -> Vec<Vec<f64>> {
    let loss = |p: &ModelParameters| p.elbo_loss(x, y, beta, noise).unwrap().0.total;
    let mut work = params.clone();
    let mut out = Vec::new();
    for t in 0..10 {
        let n = params.tensors()[t].len();
        let mut grads = Vec::with_capacity(n);
        for i in 0..n {
            let original = params.tensors()[t][i];
            let plus = (f64::from(original) + step) as f32;
            let minus = (f64::from(original) - step) as f32;
            work.tensors_mut()[t][i] = plus;
            let l_plus = loss(&work);
            work.tensors_mut()[t][i] = minus;
            let l_minus = loss(&work);
            work.tensors_mut()[t][i] = original;
            grads.push((l_plus - l_minus) / (f64::from(plus) - f64::from(minus)));
        }
        out.push(grads);
    }
    out
}

/// Random model with non-zero biases so every path carries signal.
pub fn random_params(dims: ModelDims, seed: u64) -> ModelParameters {
    let mut params = ModelParameters::init(dims, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for t in params.tensors_mut() {
        for v in t.iter_mut() {
            *v += rng.random_range(-0.3f32..0.3);
        }
    }
    params
}

pub fn random_binary(rng: &mut impl Rng, len: usize, density: f64) -> Vec<u8> {
    (0..len).map(|_| rng.random_bool(density) as u8).collect()
}

/// Predictor returning fixed probabilities for every window, keyed by the
/// window's position in a list.
pub struct TablePredictor {
    pub spec: WindowSpec,
    pub table: Vec<(Vec<u8>, Vec<f64>)>,
}

impl WindowPredictor for TablePredictor {
    fn window_spec(&self) -> WindowSpec {
        self.spec
    }

    fn predict_window(&self, x: &[u8]) -> Result<Vec<f64>> {
        Ok(self
            .table
            .iter()
            .find(|(k, _)| k == x)
            .map(|(_, v)| v.clone())
            .expect("window present in table"))
    }
}
