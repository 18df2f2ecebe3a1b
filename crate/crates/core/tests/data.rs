use std::collections::BTreeSet;

use frea_core::data::{
    derive_seed, epoch_order, iterate, kfold_split, load_dataset, oracle_transform, synth_generate,
    synth_mr, Dataset, PrepOptions, SamplePair, Split, SYNTH_Q,
};
use frea_core::image_ops::{freq_split, write_image, write_pgm, ImageFile};
use frea_core::objectives::evaluate_pair;
use frea_core::trainer::{evaluate, OraclePredictor};
use frea_core::FreaError;
use proptest::prelude::*;

fn opts() -> PrepOptions {
    PrepOptions::default()
}

#[test]
fn generator_is_deterministic_and_prefix_stable() {
    let a = synth_generate(5, &opts(), 3).unwrap();
    let b = synth_generate(5, &opts(), 3).unwrap();
    assert_eq!(a, b);
    let longer = synth_generate(7, &opts(), 3).unwrap();
    for (x, y) in a.samples().iter().zip(longer.samples()) {
        assert_eq!(x.mr_image, y.mr_image);
        assert_eq!(x.pet_image, y.pet_image);
    }
    let other = synth_generate(5, &opts(), 4).unwrap();
    assert_ne!(a.samples()[0].mr_image, other.samples()[0].mr_image);
    assert_eq!(a.subject_ids(), ["subj000", "subj001", "subj002", "subj003", "subj004"]);
}

#[test]
fn generator_rejects_bad_arguments() {
    assert!(synth_generate(2, &opts(), 0).is_err());
    let odd = PrepOptions { size: 96, ..opts() };
    assert!(synth_generate(3, &odd, 0).is_err());
}

#[test]
fn synthetic_images_are_in_range_with_a_body() {
    let mr = synth_mr(64, 1).unwrap();
    assert_eq!((mr.height, mr.width, mr.q), (64, 64, SYNTH_Q));
    assert!(mr.pixels.iter().all(|v| (0.0..=SYNTH_Q).contains(v)));
    // background corner stays dark
    assert!(mr.pixels[0] < 1.0);
    let lit = mr.pixels.iter().filter(|&&v| v > 0.01 * SYNTH_Q).count();
    assert!(lit > 64 * 64 / 4 && lit < 64 * 64, "{lit}");
    let pet = oracle_transform(&mr).unwrap();
    assert!(pet.pixels.iter().all(|v| (0.0..=SYNTH_Q).contains(v)));
    assert_ne!(pet.pixels, mr.pixels);
}

#[test]
fn oracle_predictor_is_perfect() {
    let ds = synth_generate(4, &opts(), 5).unwrap();
    let all: Vec<&SamplePair> = ds.samples().iter().collect();
    let report = evaluate(&mut OraclePredictor, &all, 0, 0.01).unwrap();
    for r in &report.rows {
        assert_eq!(r.metrics.mae, 0.0);
        assert_eq!(r.metrics.ssim, 1.0);
        assert_eq!(r.metrics.psnr, f64::INFINITY);
    }
    assert_eq!(report.to_csv().lines().count(), 1 + 4 + 2);
}

#[test]
fn sample_tensors_are_normalized_and_bands_scaled() {
    let ds = synth_generate(4, &opts(), 6).unwrap();
    let (mut low_peak, mut high_peak) = (0.0f64, 0.0f64);
    for s in ds.samples() {
        assert_eq!(s.mr.shape(), [1, 1, 64, 64]);
        for (t, img) in [(&s.mr, &s.mr_image), (&s.pet, &s.pet_image)] {
            for (v, p) in t.data().iter().zip(&img.pixels) {
                assert!((v - (2.0 * p / SYNTH_Q - 1.0)).abs() < 1e-15);
            }
        }
        assert_eq!(s.low_scale, ds.samples()[0].low_scale);
        let bands = freq_split(&s.pet, opts().sigma, opts().kernel_size).unwrap();
        let (low, high) = s.unscaled_bands();
        assert!(low.max_abs_diff(&bands.low).unwrap() < 1e-12);
        assert!(high.max_abs_diff(&bands.high).unwrap() < 1e-12);
        let peak = |t: &frea_core::Tensor| t.data().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        low_peak = low_peak.max(peak(&s.pet_low));
        high_peak = high_peak.max(peak(&s.pet_high));
    }
    assert!((low_peak - 1.0).abs() < 1e-12);
    assert!((high_peak - 1.0).abs() < 1e-12);
}

#[test]
fn dataset_rejects_duplicates() {
    let ds = synth_generate(3, &opts(), 7).unwrap();
    let mut v = ds.samples().to_vec();
    v.push(v[0].clone());
    assert!(matches!(Dataset::new(v), Err(FreaError::Dataset(_))));
    assert!(ds.get("subj001").is_some());
    assert!(ds.get("nobody").is_none());
}

fn write_pair(dir: &std::path::Path, id: &str, img: &ImageFile, ext: &str) {
    write_image(dir.join(format!("{id}_mr.{ext}")), img).unwrap();
    write_image(dir.join(format!("{id}_pet.{ext}")), img).unwrap();
}

fn ramp(h: usize, w: usize) -> ImageFile {
    ImageFile::new(h, w, 1, 65535.0, (0..h * w).map(|i| i as f64).collect()).unwrap()
}

#[test]
fn load_pairs_and_crops() {
    let dir = tempfile::tempdir().unwrap();
    let big = ramp(300, 300);
    write_pair(dir.path(), "b", &big, "raw");
    write_pair(dir.path(), "a", &ramp(256, 256), "pgm");
    std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
    let ds = load_dataset(dir.path(), &PrepOptions { size: 256, ..opts() }).unwrap();
    assert_eq!(ds.subject_ids(), ["a", "b"]);
    let b = ds.get("b").unwrap();
    // (300 - 256) / 2 = 22 on both axes
    assert_eq!(b.mr_image.pixels[0], (22 * 300 + 22) as f64);
    assert_eq!(b.mr_image.pixels[256 * 256 - 1], ((22 + 255) * 300 + 22 + 255) as f64);
    assert_eq!(ds.get("a").unwrap().mr_image.pixels[5], 5.0);
}

#[test]
fn load_errors() {
    let small = ramp(64, 64);
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_dataset(dir.path(), &opts()), Err(FreaError::Dataset(_))));

    write_image(dir.path().join("x_mr.raw"), &small).unwrap();
    let err = load_dataset(dir.path(), &opts()).unwrap_err().to_string();
    assert!(err.contains("missing PET"), "{err}");

    write_image(dir.path().join("x_pet.raw"), &ramp(64, 65)).unwrap();
    let err = load_dataset(dir.path(), &opts()).unwrap_err().to_string();
    assert!(err.contains("MR is"), "{err}");

    write_image(dir.path().join("x_pet.raw"), &small).unwrap();
    write_pgm(dir.path().join("x_pet.pgm"), &small).unwrap();
    let err = load_dataset(dir.path(), &opts()).unwrap_err().to_string();
    assert!(err.contains("both"), "{err}");

    let dir = tempfile::tempdir().unwrap();
    write_pair(dir.path(), "y", &ramp(32, 32), "raw");
    assert!(load_dataset(dir.path(), &opts()).is_err());

    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("z_mr.raw"), b"garbage").unwrap();
    std::fs::write(dir.path().join("z_pet.raw"), b"garbage").unwrap();
    assert!(matches!(load_dataset(dir.path(), &opts()), Err(FreaError::UnsupportedFormat(_))));
}

#[test]
fn loaded_synthetic_data_matches_generated() {
    let ds = synth_generate(3, &opts(), 8).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for s in ds.samples() {
        write_image(dir.path().join(format!("{}_mr.raw", s.subject_id)), &s.mr_image).unwrap();
        write_image(dir.path().join(format!("{}_pet.raw", s.subject_id)), &s.pet_image).unwrap();
    }
    let back = load_dataset(dir.path(), &opts()).unwrap();
    assert_eq!(back.subject_ids(), ds.subject_ids());
    for (a, b) in back.samples().iter().zip(ds.samples()) {
        // raw storage is f32
        let m = evaluate_pair(&b.pet_image, &a.pet_image, 0.01).unwrap();
        assert!(m.mae < 1e-4);
    }
}

#[test]
fn kfold_split_properties() {
    let ds = synth_generate(30, &opts(), 9).unwrap();
    let f = kfold_split(&ds, 3, 1).unwrap();
    assert_eq!(f.folds.len(), 30);
    let sizes: Vec<usize> = (0..3).map(|k| f.members(k).len()).collect();
    assert_eq!(sizes, [10, 10, 10]);
    assert_eq!(f, kfold_split(&ds, 3, 1).unwrap());
    assert_ne!(f, kfold_split(&ds, 3, 2).unwrap());
    assert!(kfold_split(&ds, 1, 0).is_err());
    assert!(kfold_split(&ds, 31, 0).is_err());

    let seven = kfold_split(&ds, 7, 0).unwrap();
    let sizes: BTreeSet<usize> = (0..7).map(|k| seven.members(k).len()).collect();
    assert_eq!(sizes, [4, 5].into_iter().collect());
}

#[test]
fn iterate_orders() {
    let ds = synth_generate(9, &opts(), 10).unwrap();
    let f = kfold_split(&ds, 3, 0).unwrap();
    let test = iterate(&ds, &f, 1, Split::Test, 0, 0).unwrap();
    let ids: Vec<&str> = test.iter().map(|s| s.subject_id.as_str()).collect();
    assert_eq!(ids, f.members(1));
    assert_eq!(ids, iterate(&ds, &f, 1, Split::Test, 5, 3).unwrap().iter().map(|s| s.subject_id.as_str()).collect::<Vec<_>>());

    let ids_of = |v: Vec<&SamplePair>| v.iter().map(|s| s.subject_id.clone()).collect::<Vec<_>>();
    let e0 = ids_of(iterate(&ds, &f, 1, Split::Train, 0, 0).unwrap());
    let e0b = ids_of(iterate(&ds, &f, 1, Split::Train, 0, 0).unwrap());
    assert_eq!(e0, e0b);
    assert_eq!(e0.len(), 6);
    let orders: BTreeSet<Vec<String>> =
        (0..8).map(|e| ids_of(iterate(&ds, &f, 1, Split::Train, 0, e).unwrap())).collect();
    assert!(orders.len() > 1, "epochs never reshuffle");
    let mut sorted = e0.clone();
    sorted.sort();
    let mut members: Vec<String> = (0..3).filter(|&k| k != 1).flat_map(|k| f.members(k)).map(String::from).collect();
    members.sort();
    assert_eq!(sorted, members);
    assert!(iterate(&ds, &f, 3, Split::Test, 0, 0).is_err());
}

#[test]
fn derive_seed_separates_streams() {
    let seeds: BTreeSet<u64> = (0..4)
        .flat_map(|s| (0..50).map(move |i| derive_seed(7, s, i)))
        .collect();
    assert_eq!(seeds.len(), 200);
    assert_eq!(derive_seed(1, 2, 3), derive_seed(1, 2, 3));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn folds_partition_subjects(n in 3usize..24, k in 2usize..6, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let ds = synth_generate(n, &opts(), 0).unwrap();
        let f = kfold_split(&ds, k, seed).unwrap();
        let mut all: Vec<&str> = (0..k).flat_map(|i| f.members(i)).collect();
        all.sort();
        prop_assert_eq!(all, ds.subject_ids());
        let sizes: Vec<usize> = (0..k).map(|i| f.members(i).len()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn epoch_order_is_a_permutation(seed in any::<u64>(), epoch in 0usize..100) {
        let ds = synth_generate(5, &opts(), 1).unwrap();
        let all: Vec<&SamplePair> = ds.samples().iter().collect();
        let mut ids: Vec<&str> = epoch_order(&all, seed, epoch).iter().map(|s| s.subject_id.as_str()).collect();
        ids.sort();
        prop_assert_eq!(ids, ds.subject_ids());
    }
}
