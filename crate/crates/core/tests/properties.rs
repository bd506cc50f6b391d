mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::count_rates;
use spoofnet_core::dataio::{crop_resize, BBox, Label, Manifest, SampleRecord, Subset};
use spoofnet_core::eval::{report_from_scores, threshold_sweep, ScoredSample, COMBINED};
use spoofnet_core::layers::{inception_forward, InceptionParams, InceptionSpec};
use spoofnet_core::spoofnet::{classify, Decision, LivenessScore};
use spoofnet_core::tensor::Tensor;
use spoofnet_core::training::{sgd_update, stratified_split, EarlyStopping};

fn label() -> impl Strategy<Value = Label> {
    prop_oneof![
        Just(Label::Live),
        Just(Label::Printed),
        Just(Label::Contact)
    ]
}

fn scored(dataset: &'static str) -> impl Strategy<Value = ScoredSample> {
    (label(), 0.0..=100.0f64, any::<bool>()).prop_map(move |(label, score, whole)| ScoredSample {
        image_path: String::new(),
        dataset: dataset.into(),
        label,
        score: if whole { score.round() } else { score },
        stage2_ran: true,
    })
}

proptest! {
    #[test]
    fn error_rates_are_monotone_in_threshold(
        samples in prop::collection::vec(scored("d"), 1..200),
        mut taus in prop::collection::btree_set(0u32..=1000, 2..20),
    ) {
        let taus: Vec<f64> = std::mem::take(&mut taus).into_iter().map(|t| t as f64 / 10.0).collect();
        let refs: Vec<&ScoredSample> = samples.iter().collect();
        let rows = threshold_sweep("d", &refs, &taus).unwrap();
        for w in rows.windows(2) {
            if let (Some(a), Some(b)) = (w[0].apcer, w[1].apcer) {
                prop_assert!(b <= a);
            }
            if let (Some(a), Some(b)) = (w[0].bpcer, w[1].bpcer) {
                prop_assert!(b >= a);
            }
        }
        let pairs: Vec<(Label, f64)> = samples.iter().map(|s| (s.label, s.score)).collect();
        for r in &rows {
            prop_assert_eq!((r.apcer, r.bpcer), count_rates(&pairs, r.threshold));
        }
    }

    #[test]
    fn combined_row_pools_counts(
        a in prop::collection::vec(scored("a"), 1..80),
        b in prop::collection::vec(scored("b"), 1..80),
        tau in 0.0..=100.0f64,
    ) {
        let all: Vec<ScoredSample> = a.iter().chain(&b).cloned().collect();
        let rows = report_from_scores(&all, &[tau], true).unwrap();
        prop_assert_eq!(rows.len(), 3);
        let combined = rows.iter().find(|r| r.dataset == COMBINED).unwrap();
        let pairs: Vec<(Label, f64)> = all.iter().map(|s| (s.label, s.score)).collect();
        prop_assert_eq!((combined.apcer, combined.bpcer), count_rates(&pairs, tau));
        prop_assert_eq!(combined.n_attack, rows[0].n_attack + rows[1].n_attack);
        prop_assert_eq!(combined.n_bonafide, rows[0].n_bonafide + rows[1].n_bonafide);
    }

    #[test]
    fn raising_threshold_never_turns_attack_into_bonafide(
        value in 0.0..=100.0f64,
        t1 in 0.0..=100.0f64,
        t2 in 0.0..=100.0f64,
    ) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let s = LivenessScore { value, stage2_ran: true, p1: 1.0, p2: Some(value / 100.0) };
        let at_lo = classify(&s, lo).unwrap();
        let at_hi = classify(&s, hi).unwrap();
        prop_assert!(!(at_lo == Decision::Attack && at_hi == Decision::Bonafide));
        prop_assert_eq!(at_lo == Decision::Bonafide, value >= lo);
    }

    #[test]
    fn inception_preserves_spatial_extent(
        widths in prop::array::uniform6(1usize..4),
        c in 1usize..4,
        h in 1usize..9,
        w in 1usize..9,
        seed in any::<u64>(),
    ) {
        let spec = InceptionSpec::new(widths[0], widths[1], widths[2], widths[3], widths[4], widths[5]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = InceptionParams::<f32>::he_normal(&spec, c, &mut rng);
        let x = Tensor::from_fn(&[2, c, h, w], |i| (i % 7) as f32 * 0.1);
        let (y, _) = inception_forward(&x, &spec, &params).unwrap();
        prop_assert_eq!(y.shape(), &[2, spec.out_channels(), h, w][..]);
    }

    #[test]
    fn manifest_round_trip(rows in prop::collection::vec(
        (label(), "[a-z]{1,6}", any::<bool>(), prop::option::of((0usize..300, 0usize..300, 1usize..300, 1usize..300))),
        0..30,
    )) {
        let dir = tempfile::tempdir().unwrap();
        let records: Vec<SampleRecord> = rows
            .into_iter()
            .enumerate()
            .map(|(i, (label, dataset, train, bbox))| SampleRecord {
                image_path: format!("img/{i}.pgm"),
                label,
                dataset,
                subset: if train { Subset::Train } else { Subset::Test },
                bbox: bbox.map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h).unwrap()),
            })
            .collect();
        let m = Manifest::new(records, dir.path()).unwrap();
        let path = dir.path().join("manifest.csv");
        m.write(&path).unwrap();
        let back = Manifest::load(&path).unwrap();
        prop_assert_eq!(back.records, m.records);
    }

    #[test]
    fn full_frame_resize_is_identity(h in 1usize..12, w in 1usize..12, seed in any::<u8>()) {
        let side = h.max(w);
        let x = Tensor::from_fn(&[1, 1, side, side], |i| ((i * 31 + seed as usize) % 256) as f32 / 255.0);
        let y = crop_resize(&x, None, side).unwrap();
        prop_assert_eq!(y.data(), x.data());
    }

    #[test]
    fn small_step_decreases_quadratic(w0 in -10.0..10.0f64, lr in 1e-6..1e-2f64) {
        prop_assume!(w0.abs() > 1e-6);
        let mut w = vec![w0];
        let mut v = vec![0.0];
        sgd_update(&mut w, &[w0], &mut v, lr, 0.0, 0.9).unwrap();
        prop_assert!(0.5 * w[0] * w[0] < 0.5 * w0 * w0);
    }

    #[test]
    fn best_epoch_holds_the_minimum_loss(losses in prop::collection::vec(0.0..10.0f64, 1..40), patience in 1usize..6) {
        let mut es = EarlyStopping::new(patience, 1e-6);
        let mut seen = Vec::new();
        for (i, &l) in losses.iter().enumerate() {
            seen.push(l);
            if es.observe(i + 1, l).stop {
                break;
            }
        }
        let best = es.best_loss().unwrap();
        prop_assert!(seen.iter().all(|&l| l >= best - 1e-6));
        prop_assert_eq!(seen[es.best_epoch().unwrap() - 1], best);
    }

    #[test]
    fn split_partitions_every_class(live in 2usize..60, printed in 2usize..60, contact in 2usize..60, seed in any::<u64>()) {
        let mut records = Vec::new();
        for (label, n) in [(Label::Live, live), (Label::Printed, printed), (Label::Contact, contact)] {
            for i in 0..n {
                records.push(SampleRecord {
                    image_path: format!("{label}{i}"),
                    label,
                    dataset: "d".into(),
                    subset: Subset::Train,
                    bbox: None,
                });
            }
        }
        let (train, val) = stratified_split(&records, 0.8, seed).unwrap();
        for (label, n) in [(Label::Live, live), (Label::Printed, printed), (Label::Contact, contact)] {
            let k = train.iter().filter(|r| r.label == label).count();
            prop_assert_eq!(k, (0.8 * n as f64 + 1e-9).floor() as usize);
        }
        let mut all: Vec<&str> = train.iter().chain(&val).map(|r| r.image_path.as_str()).collect();
        all.sort_unstable();
        let mut expected: Vec<&str> = records.iter().map(|r| r.image_path.as_str()).collect();
        expected.sort_unstable();
        prop_assert_eq!(all, expected);
    }
}
