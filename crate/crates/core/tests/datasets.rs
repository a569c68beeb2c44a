use bilevel::data::{
    decode_tensors, encode_tensors, generate, load_tensors, render_blob, render_glyph,
    save_tensors, shift_image, DataError, Dataset, SyntheticTaskSpec, TaskKind,
};
use bilevel::tensor::{Array, Tensor};
use bilevel::vision::{apply_color, ImageBatch};
use proptest::prelude::*;

fn noiseless(mut spec: SyntheticTaskSpec) -> SyntheticTaskSpec {
    spec.noise_std = 0.0;
    spec.train_per_class = 8;
    spec.test_per_class = 8;
    spec
}

fn image(ds: &Dataset, i: usize) -> &[f64] {
    let [c, h, w] = ds.image_shape();
    let per = c * h * w;
    &ds.images().data()[i * per..(i + 1) * per]
}

#[test]
fn generation_is_deterministic_per_seed() {
    for spec in [
        SyntheticTaskSpec::translated_glyphs(),
        SyntheticTaskSpec::hue_shifted_blobs(),
    ] {
        let (a_tr, a_te) = generate(&spec, 5).unwrap();
        let (b_tr, b_te) = generate(&spec, 5).unwrap();
        assert_eq!(a_tr.images(), b_tr.images());
        assert_eq!(a_te.images(), b_te.images());
        assert_eq!(a_te.meta(), b_te.meta());
        let (c_tr, _) = generate(&spec, 6).unwrap();
        assert_ne!(a_tr.images(), c_tr.images());
    }
}

#[test]
fn classes_are_balanced() {
    let spec = SyntheticTaskSpec::translated_glyphs();
    let (tr, te) = generate(&spec, 0).unwrap();
    assert_eq!(tr.class_counts(), vec![64; 4]);
    assert_eq!(te.class_counts(), vec![64; 4]);
    assert_eq!(tr.image_shape(), [1, 16, 16]);
    let (tr, _) = generate(&SyntheticTaskSpec::hue_shifted_blobs(), 0).unwrap();
    assert_eq!(tr.image_shape(), [3, 16, 16]);
}

#[test]
fn glyph_offsets_are_reproduced_exactly() {
    let spec = noiseless(SyntheticTaskSpec::translated_glyphs());
    let (tr, te) = generate(&spec, 11).unwrap();
    for i in 0..tr.len() {
        let m = tr.meta()[i];
        assert_eq!((m.dx, m.dy), (0, 0));
        assert_eq!(
            image(&tr, i),
            render_glyph(&spec, tr.labels()[i], 0, 0)
                .unwrap()
                .as_slice()
        );
    }
    let mut moved = 0;
    for i in 0..te.len() {
        let m = te.meta()[i];
        assert!(m.dx.abs() <= 3 && m.dy.abs() <= 3);
        moved += usize::from(m.dx != 0 || m.dy != 0);
        let base = render_glyph(&spec, te.labels()[i], 0, 0).unwrap();
        assert_eq!(
            image(&te, i),
            shift_image(&base, 16, 16, m.dx, m.dy).as_slice()
        );
    }
    assert!(moved > 0);
}

#[test]
fn zero_test_range_makes_splits_alike() {
    let mut spec = noiseless(SyntheticTaskSpec::translated_glyphs());
    spec.test_range = 0.0;
    let (tr, te) = generate(&spec, 2).unwrap();
    for i in 0..tr.len() {
        assert_eq!(tr.labels()[i], te.labels()[i]);
        assert_eq!(image(&tr, i), image(&te, i));
    }
}

#[test]
fn blob_test_shift_matches_color_op() {
    let spec = noiseless(SyntheticTaskSpec::hue_shifted_blobs());
    let (_, te) = generate(&spec, 4).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..te.len() {
        let m = te.meta()[i];
        assert!(m.hue.abs() <= 0.25);
        let base = render_blob(&spec, te.labels()[i], m.dx, m.dy);
        let img = ImageBatch::from_array(Array::new(vec![1, 3, 16, 16], base).unwrap()).unwrap();
        let p = Tensor::constant(Array::new(vec![1, 4], vec![m.hue, 0.0, 0.0, 0.0]).unwrap());
        let shifted = apply_color(&img, &p).unwrap();
        for (a, b) in shifted.tensor().data().iter().zip(image(&te, i)) {
            worst = worst.max((a - b).abs());
        }
    }
    assert!(worst <= 1e-6, "max deviation {worst}");
}

#[test]
fn centered_glyphs_are_linearly_separable() {
    // Nearest class mean is a linear rule; it must classify the centered
    // training set perfectly at the default noise level.
    let spec = SyntheticTaskSpec::translated_glyphs();
    let (tr, _) = generate(&spec, 9).unwrap();
    let per = 16 * 16;
    let mut means = vec![vec![0.0; per]; 4];
    for i in 0..tr.len() {
        for (m, v) in means[tr.labels()[i]].iter_mut().zip(image(&tr, i)) {
            *m += v / 64.0;
        }
    }
    let correct = (0..tr.len())
        .filter(|&i| {
            let x = image(&tr, i);
            let score = |c: usize| {
                let w = &means[c];
                let dot: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
                dot - 0.5 * w.iter().map(|a| a * a).sum::<f64>()
            };
            let best = (0..4)
                .max_by(|&a, &b| score(a).total_cmp(&score(b)))
                .unwrap();
            best == tr.labels()[i]
        })
        .count();
    assert_eq!(correct, tr.len());
}

#[test]
fn invalid_specs_are_rejected() {
    let mut spec = SyntheticTaskSpec::translated_glyphs();
    spec.test_range = 1.5;
    assert!(matches!(generate(&spec, 0), Err(DataError::Spec(_))));
    let mut spec = SyntheticTaskSpec::hue_shifted_blobs();
    spec.test_range = 0.7;
    assert!(generate(&spec, 0).is_err());
    let mut spec = SyntheticTaskSpec::translated_glyphs();
    spec.num_classes = 20;
    assert!(generate(&spec, 0).is_err());
}

#[test]
fn partial_task_json_uses_task_defaults() {
    let spec: SyntheticTaskSpec = serde_json::from_str(r#"{"task":"hue_shifted_blobs"}"#).unwrap();
    assert_eq!(spec.task, TaskKind::HueShiftedBlobs);
    assert_eq!(spec.test_range, 0.25);
    assert!(serde_json::from_str::<SyntheticTaskSpec>(r#"{"bogus":1}"#).is_err());
}

fn entry() -> impl Strategy<Value = (String, Array)> {
    (
        "[a-z][a-z0-9._]{0,12}",
        prop::collection::vec(0usize..4, 0..4),
    )
        .prop_flat_map(|(name, shape)| {
            let n: usize = shape.iter().product();
            prop::collection::vec(any::<f64>(), n)
                .prop_map(move |data| (name.clone(), Array::new(shape.clone(), data).unwrap()))
        })
}

fn bits(a: &Array) -> Vec<u64> {
    a.data().iter().map(|v| v.to_bits()).collect()
}

proptest! {
    #[test]
    fn blvt_round_trips_bitwise(entries in prop::collection::vec(entry(), 0..6)) {
        let mut seen = std::collections::HashSet::new();
        let entries: Vec<_> = entries.into_iter().filter(|(n, _)| seen.insert(n.clone())).collect();
        let bytes = encode_tensors(&entries).unwrap();
        let back = decode_tensors(&bytes).unwrap();
        prop_assert_eq!(back.len(), entries.len());
        for ((n1, a1), (n2, a2)) in entries.iter().zip(&back) {
            prop_assert_eq!(n1, n2);
            prop_assert_eq!(a1.shape(), a2.shape());
            prop_assert_eq!(bits(a1), bits(a2));
        }
    }

    #[test]
    fn blvt_rejects_truncation(entries in prop::collection::vec(entry(), 1..4), cut in 1usize..64) {
        let mut seen = std::collections::HashSet::new();
        let entries: Vec<_> = entries.into_iter().filter(|(n, _)| seen.insert(n.clone())).collect();
        let bytes = encode_tensors(&entries).unwrap();
        let keep = bytes.len().saturating_sub(cut);
        prop_assert!(decode_tensors(&bytes[..keep]).is_err());
    }
}

#[test]
fn blvt_file_round_trip_and_bad_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.blvt");
    let entries = vec![
        (
            "a".to_string(),
            Array::new(vec![2, 2], vec![1.0, -0.0, f64::MIN_POSITIVE, 3.5]).unwrap(),
        ),
        ("empty".to_string(), Array::new(vec![0, 3], vec![]).unwrap()),
    ];
    save_tensors(&path, &entries).unwrap();
    let back = load_tensors(&path).unwrap();
    assert_eq!(back.len(), 2);
    assert_eq!(bits(&back[0].1), bits(&entries[0].1));
    assert_eq!(back[1].1.shape(), &[0, 3]);

    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] ^= 0xff;
    assert!(matches!(decode_tensors(&bytes), Err(DataError::Format(_))));
}
