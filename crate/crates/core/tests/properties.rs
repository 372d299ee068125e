mod common;

use common::TablePredictor;
use predvae::eval::{apply_threshold, confusion, metrics, window_metrics};
use predvae::roll::{notes_to_roll_padded, roll_to_notes, PianoRoll, PitchBand, GRID_MS};
use predvae::vae::{kl_divergence, LatentCode, ModelDims, ModelParameters};
use predvae::window::{flatten_window, make_windows, WindowPair, WindowSpec};
use proptest::prelude::*;

fn roll_strategy() -> impl Strategy<Value = PianoRoll> {
    (21u8..100, 0u8..8, 1usize..50).prop_flat_map(|(lo, span, n_cols)| {
        let band = PitchBand::new(lo, lo + span).unwrap();
        proptest::collection::vec(0u8..2, band.n_pitches() * n_cols)
            .prop_map(move |cells| PianoRoll::from_cells(band, n_cols, cells).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn roll_note_roll_is_identity(roll in roll_strategy()) {
        // a silent roll has no notes to rebuild from
        prop_assume!(roll.active_cells() > 0);
        let notes = roll_to_notes(&roll, GRID_MS);
        let back = notes_to_roll_padded(&notes, roll.band(), GRID_MS, roll.n_cols()).unwrap();
        prop_assert_eq!(back.dropped, 0);
        prop_assert_eq!(back.roll, roll);
    }

    #[test]
    fn windows_match_roll_slices(seconds in 1usize..4, extra in 0usize..35, seed in any::<u64>()) {
        let band = PitchBand::new(60, 62).unwrap();
        let spec = WindowSpec::new(seconds).unwrap();
        let n_cols = spec.width() + spec.stride() + extra;
        let cells: Vec<u8> = (0..band.n_pitches() * n_cols)
            .map(|i| ((seed.rotate_left(i as u32 % 64) ^ i as u64) & 1) as u8)
            .collect();
        let roll = PianoRoll::from_cells(band, n_cols, cells).unwrap();
        let pairs = make_windows(&roll, &spec, "p").unwrap();
        prop_assert!(!pairs.is_empty());
        for p in &pairs {
            let o = p.source_offset_cols;
            prop_assert!(o + spec.stride() + spec.width() <= n_cols);
            prop_assert_eq!(&p.x, &flatten_window(&roll, o, spec.width()));
            prop_assert_eq!(&p.y, &flatten_window(&roll, o + spec.stride(), spec.width()));
            // overlap: y's leading columns are x's trailing columns
            for r in 0..band.n_pitches() {
                for c in 0..spec.overlap() {
                    let w = spec.width();
                    prop_assert_eq!(p.y[r * w + c], p.x[r * w + c + spec.stride()]);
                }
            }
        }
    }

    #[test]
    fn kl_is_non_negative(
        mu in proptest::collection::vec(-5.0f64..5.0, 1..10),
        lv in proptest::collection::vec(-6.0f64..6.0, 10),
    ) {
        let logvar = lv[..mu.len()].to_vec();
        let kl = kl_divergence(&LatentCode { mu, logvar });
        prop_assert!(kl >= 0.0);
    }

    #[test]
    fn decoded_probabilities_stay_open(seed in any::<u64>(), scale in 0.0f64..200.0) {
        let params = ModelParameters::init(ModelDims::new(12, 5, 3).unwrap(), seed);
        let z = [scale, -scale, 0.5 * scale];
        for p in params.decode(&z).unwrap() {
            prop_assert!(p > 0.0 && p < 1.0);
        }
    }

    #[test]
    fn sensitivity_never_rises_with_threshold(
        probs in proptest::collection::vec(0.0f64..1.0, 1..60),
        bits in proptest::collection::vec(0u8..2, 60),
        a in 0.0f64..1.0,
        b in 0.0f64..1.0,
    ) {
        let target = &bits[..probs.len()];
        let (lo, hi) = (a.min(b), a.max(b));
        let low = metrics(confusion(&apply_threshold(&probs, lo), target).unwrap(), lo).unwrap();
        let high = metrics(confusion(&apply_threshold(&probs, hi), target).unwrap(), hi).unwrap();
        prop_assert!(high.sen <= low.sen);
        prop_assert!(high.counts.predicted_positive() <= low.counts.predicted_positive());
        for r in [low, high] {
            for v in [r.acc, r.sen, r.ppv, r.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn batch_metrics_equal_concatenated_counts(
        probs in proptest::collection::vec(0.001f64..0.999, 40),
        bits in proptest::collection::vec(0u8..2, 40),
        theta in 0.0f64..1.0,
    ) {
        let spec = WindowSpec::new(1).unwrap();
        // two pitches, two windows of width 10
        let pairs: Vec<WindowPair> = (0..2)
            .map(|k| WindowPair {
                x: (0..20).map(|i| (i == k) as u8).collect(),
                y: bits[k * 20..(k + 1) * 20].to_vec(),
                source_song: "s".into(),
                source_offset_cols: 0,
            })
            .collect();
        let table = pairs
            .iter()
            .enumerate()
            .map(|(k, p)| (p.x.clone(), probs[k * 20..(k + 1) * 20].to_vec()))
            .collect();
        let predictor = TablePredictor { spec, table };
        let batched = window_metrics(&predictor, &pairs, theta).unwrap();
        let direct = confusion(&apply_threshold(&probs, theta), &bits).unwrap();
        prop_assert_eq!(batched.counts, direct);
    }
}
