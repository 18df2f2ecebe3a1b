use frea_core::data::{kfold_split, synth_generate, PrepOptions, SamplePair};
use frea_core::frea_unet::{checkpoint, Ablation, FreaUnetModel};
use frea_core::objectives::CSV_HEADER;
use frea_core::tensor::Mode;
use frea_core::trainer::{
    ablate, cross_validate, evaluate, fit, lr_at, train_round, Preset, TrainConfig,
};
use frea_core::FreaError;

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        ..TrainConfig::default()
    }
}

#[test]
fn lr_schedule() {
    let mut c = quick(10);
    assert!((0..10).all(|e| lr_at(&c, e) == c.lr));
    c.lr_decay = true;
    assert_eq!(lr_at(&c, 0), c.lr);
    assert_eq!(lr_at(&c, 5), c.lr);
    let tail: Vec<f64> = (5..10).map(|e| lr_at(&c, e)).collect();
    assert!(tail.windows(2).all(|w| w[1] < w[0]));
    assert!(lr_at(&c, 9) > 0.0);
}

#[test]
fn fit_is_deterministic_and_leaves_eval_mode() {
    let ds = synth_generate(3, &PrepOptions::default(), 1).unwrap();
    let train: Vec<&SamplePair> = ds.samples().iter().collect();
    let mut seen = Vec::new();
    let (a, ha) = fit(&quick(3), &train, &mut |e, l| seen.push((e, l.total))).unwrap();
    let (b, hb) = fit(&quick(3), &train, &mut |_, _| {}).unwrap();
    assert_eq!(a.mode(), Mode::Eval);
    assert_eq!(a.params(), b.params());
    assert_eq!(a.bn_stats(), b.bn_stats());
    assert_eq!(ha, hb);
    assert_eq!(seen.iter().map(|s| s.0).collect::<Vec<_>>(), [1, 2, 3]);
    assert_eq!(seen[2].1, ha[2].total);

    let other = TrainConfig {
        shuffle_seed: 9,
        ..quick(3)
    };
    let (c, _) = fit(&other, &train, &mut |_, _| {}).unwrap();
    assert_ne!(a.params(), c.params());
}

#[test]
fn fit_rejects_empty_and_invalid() {
    assert!(matches!(fit(&quick(1), &[], &mut |_, _| {}), Err(FreaError::Dataset(_))));
    let ds = synth_generate(3, &PrepOptions::default(), 1).unwrap();
    let train: Vec<&SamplePair> = ds.samples().iter().collect();
    assert!(matches!(fit(&quick(0), &train, &mut |_, _| {}), Err(FreaError::Config(_))));
}

#[test]
fn training_lowers_the_loss() {
    let ds = synth_generate(3, &PrepOptions::default(), 2).unwrap();
    let train: Vec<&SamplePair> = ds.samples().iter().collect();
    let config = TrainConfig { lr: 1e-3, ..quick(25) };
    let (_, h) = fit(&config, &train, &mut |_, _| {}).unwrap();
    assert!(h.last().unwrap().total < 0.7 * h[0].total, "{} -> {}", h[0].total, h.last().unwrap().total);
}

#[test]
fn train_round_writes_checkpoint_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth_generate(6, &PrepOptions::default(), 3).unwrap();
    let config = TrainConfig {
        out_dir: Some(dir.path().to_path_buf()),
        ..quick(1)
    };
    let folds = kfold_split(&ds, 3, config.data_seed).unwrap();
    let (mut model, rec) = train_round(&config, &ds, &folds, 2, &mut |_, _| {}).unwrap();
    let bytes = std::fs::read(dir.path().join("round2.ckpt")).unwrap();
    assert_eq!(checkpoint::content_hash(&bytes), rec.checkpoint_hash);
    let mut loaded = checkpoint::from_bytes(&bytes).unwrap();
    loaded.eval();
    let test: Vec<&SamplePair> = folds.members(2).iter().map(|id| ds.get(id).unwrap()).collect();
    let again = evaluate(&mut loaded, &test, 2, config.mask_threshold).unwrap();
    assert_eq!(again, rec.report);
    assert_eq!(evaluate(&mut model, &test, 2, 0.01).unwrap(), rec.report);
    let csv = std::fs::read_to_string(dir.path().join("round2.csv")).unwrap();
    assert_eq!(csv, rec.report.to_csv());
    assert!(csv.starts_with(CSV_HEADER));
    assert_eq!(csv.lines().count(), 1 + 2 + 2);
    assert!(rec.report.rows.iter().all(|r| r.fold == 2));
}

#[test]
fn cross_validation_covers_every_subject_once() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth_generate(6, &PrepOptions::default(), 4).unwrap();
    let config = TrainConfig {
        out_dir: Some(dir.path().join("cv")),
        ..quick(1)
    };
    let mut calls = Vec::new();
    let rec = cross_validate(&config, &ds, &mut |r, e, _| calls.push((r, e))).unwrap();
    assert_eq!(calls, [(0, 1), (1, 1), (2, 1)]);
    let mut ids: Vec<&str> = rec.aggregate.rows.iter().map(|r| r.sample_id.as_str()).collect();
    ids.sort();
    assert_eq!(ids, ds.subject_ids());
    for r in &rec.rounds {
        for row in &r.report.rows {
            assert_eq!(rec.folds.fold_of(&row.sample_id), Some(r.round));
        }
    }
    let out = dir.path().join("cv");
    for f in ["round0.ckpt", "round1.ckpt", "round2.ckpt", "round0.csv", "metrics.csv", "summary.txt"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let summary = std::fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("epochs = 1"));
    assert!(summary.contains("round 2: n=2"));
    assert!(summary.contains("# aggregate"));
}

#[test]
fn ablation_runs_each_arm_with_its_switches() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth_generate(4, &PrepOptions::default(), 5).unwrap();
    let config = TrainConfig {
        k: 2,
        out_dir: Some(dir.path().to_path_buf()),
        ..quick(1)
    };
    let report = ablate(&config, &ds, &mut |_, _, _, _| {}).unwrap();
    assert_eq!(report.arms.iter().map(|a| a.0).collect::<Vec<_>>(), Ablation::ALL);
    for (arm, rec) in &report.arms {
        assert!(rec.config_text.contains(&format!("ablation = {}", arm.name())));
        let ckpt = dir.path().join(arm.name()).join("round0.ckpt");
        let m: FreaUnetModel = checkpoint::load(ckpt).unwrap();
        assert_eq!((m.config().use_attention, m.config().use_freq_branches), arm.switches());
    }
    let table = std::fs::read_to_string(dir.path().join("ablation.txt")).unwrap();
    assert_eq!(table, report.table());
}

#[test]
fn config_text_round_trip_and_errors() {
    let mut c = TrainConfig::with_preset(Preset::Full);
    c.epochs = 7;
    c.lr = 1e-3;
    c.ablation = Some(Ablation::WoAtt);
    c.model.lambda_rec = 0.0;
    let back = TrainConfig::from_text(&c.to_text()).unwrap();
    assert_eq!(back, c);

    let c = TrainConfig::from_text("# comment\nepochs = 3 # trailing\n\npreset = full\n").unwrap();
    assert_eq!(c.epochs, 3);
    assert_eq!(c.model.input_size, 256);
    // preset applies before the other keys whatever their order
    let c = TrainConfig::from_text("input_size = 128\npreset = full\n").unwrap();
    assert_eq!(c.model.input_size, 128);

    for bad in ["epochs: 3", "nonsense = 1", "epochs = many", "preset = huge", "ablation = gan"] {
        assert!(matches!(TrainConfig::from_text(bad), Err(FreaError::Config(_))), "{bad}");
    }
    let invalid = [
        TrainConfig { lr: 0.0, ..quick(1) },
        TrainConfig { beta1: 1.0, ..quick(1) },
        TrainConfig { kernel_size: 4, ..quick(1) },
        TrainConfig { k: 1, ..quick(1) },
        TrainConfig { mask_threshold: 1.0, ..quick(1) },
    ];
    for c in invalid {
        assert!(c.validate().is_err(), "{c:?}");
    }
}

#[test]
fn config_file_load() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("run.conf");
    std::fs::write(&p, "epochs = 4\nk = 5\n").unwrap();
    let c = TrainConfig::load(&p).unwrap();
    assert_eq!((c.epochs, c.k), (4, 5));
    assert!(matches!(TrainConfig::load(dir.path().join("missing")), Err(FreaError::Io { .. })));
}
