use bilevel::bilevel::sgd_reference_step;
use bilevel::data::generate;
use bilevel::data::TaskKind;
use bilevel::experiment::{
    load_summary, run_experiment, run_to_dir, summarize, ExperimentConfig, ExperimentError,
    MetricsRecord, Mode, RunSummary, METRICS_HEADER,
};
use bilevel::nn::{classifier_forward, init_classifier, AugmentKind, AugmenterSize, AugmenterSpec};
use bilevel::rng::derive;
use rand::seq::SliceRandom;

fn small(mode: Mode) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(mode);
    cfg.task.train_per_class = 20;
    cfg.task.test_per_class = 10;
    cfg.epochs = 3;
    cfg.batch_size = 16;
    cfg.seed = 7;
    if mode.uses_augmenter() {
        cfg.augmenter = Some(AugmenterSpec::new(
            AugmenterSize::Small,
            AugmentKind::Translation,
        ));
    }
    cfg
}

fn run(cfg: &ExperimentConfig) -> (RunSummary, Vec<MetricsRecord>) {
    let mut rows = Vec::new();
    let (s, _) = run_experiment(cfg, &mut |r| rows.push(r.clone())).unwrap();
    (s, rows)
}

fn strip_wall(rows: &[MetricsRecord]) -> Vec<MetricsRecord> {
    rows.iter()
        .cloned()
        .map(|mut r| {
            r.wall_time_ms = 0.0;
            r
        })
        .collect()
}

#[test]
fn none_matches_plain_sgd_loop() {
    let cfg = small(Mode::None);
    let (_, outcome) = run_experiment(&cfg, &mut |_| {}).unwrap();

    // Independent loop: shuffle, hold out the validation share, plain SGD on
    // each training chunk.
    let (train_set, _) = generate(&cfg.task, cfg.seed).unwrap();
    let spec = cfg.classifier_spec();
    let mut omega = init_classifier(&spec, &mut derive(cfg.seed, 11));
    let mut shuffle = derive(cfg.seed, 10);
    let n = train_set.len();
    let n_tr = n - (n as f64 * cfg.val_fraction).round() as usize;
    for _ in 0..cfg.epochs {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut shuffle);
        for chunk in perm[..n_tr].chunks(cfg.batch_size) {
            let (img, labels) = train_set.batch(chunk);
            omega = sgd_reference_step(
                &omega,
                cfg.hypergrad.inner_lr,
                cfg.hypergrad.clip_norm,
                |w| Ok(classifier_forward(&spec, &img, w)?.softmax_cross_entropy(&labels)?),
            )
            .unwrap();
        }
    }
    assert!(outcome.omega.bitwise_eq(&omega));
}

#[test]
fn frozen_learned_equals_baseline_bitwise() {
    let (base, base_rows) = run(&small(Mode::None));
    let mut cfg = small(Mode::Learned);
    cfg.freeze_augmenter_output = true;
    let (learned, rows) = run(&cfg);
    assert_eq!(strip_wall(&base_rows), strip_wall(&rows));
    assert_eq!(
        base.final_test_accuracy.to_bits(),
        learned.final_test_accuracy.to_bits()
    );
}

#[test]
fn zero_predefined_ranges_equal_baseline() {
    let (base, base_rows) = run(&small(Mode::None));
    let (pre, rows) = run(&small(Mode::Predefined));
    assert_eq!(strip_wall(&base_rows), strip_wall(&rows));
    assert_eq!(base.final_test_accuracy, pre.final_test_accuracy);
}

#[test]
fn single_zero_grid_equals_baseline() {
    let (base, _) = run(&small(Mode::None));
    let mut cfg = small(Mode::ValidatedMagnitude);
    cfg.magnitude_grid = vec![0.0];
    let (vm, _) = run(&cfg);
    assert_eq!(vm.final_test_accuracy, base.final_test_accuracy);
    assert_eq!(vm.cost_multiplier, 1);
    assert_eq!(vm.selected_magnitude, Some(0.0));
}

#[test]
fn validated_magnitude_cost_is_grid_size() {
    let mut cfg = small(Mode::ValidatedMagnitude);
    cfg.magnitude_grid = vec![0.0, 1.0, 2.0];
    let (vm, _) = run(&cfg);
    assert_eq!(vm.cost_multiplier, 3);
    assert_eq!(vm.grid.len(), 3);
    let sel = vm.selected_magnitude.unwrap();
    let best = vm.grid.iter().find(|g| g.magnitude == sel).unwrap();
    assert!(vm.grid.iter().all(|g| g.val_accuracy <= best.val_accuracy));
    assert_eq!(vm.final_test_accuracy, best.test_accuracy);
}

#[test]
fn one_outer_step_per_inner_step_when_k_and_j_are_one() {
    let (s, rows) = run(&small(Mode::Learned));
    assert_eq!(s.inner_steps, s.outer_steps);
    assert_eq!(rows.len(), s.outer_steps);

    let mut cfg = small(Mode::Learned);
    cfg.hypergrad.k = 2;
    cfg.hypergrad.j = 2;
    let (s2, rows2) = run(&cfg);
    assert_eq!(s2.inner_steps, s.inner_steps);
    assert_eq!(s2.outer_steps, rows2.len());
    assert_eq!(
        s2.outer_steps,
        cfg.epochs * (s.inner_steps / cfg.epochs).div_ceil(2)
    );
}

#[test]
fn learned_mode_moves_the_augmenter() {
    let mut cfg = small(Mode::Learned);
    cfg.hypergrad.outer_lr = 0.05;
    let (_, rows) = run(&cfg);
    assert_eq!(rows[0].mean_abs_affine_delta, 0.0);
    assert!(rows.iter().any(|r| r.mean_abs_affine_delta > 0.0));
    assert!(rows
        .iter()
        .all(|r| r.train_loss.is_finite() && r.val_loss.is_finite()));
}

#[test]
fn test_accuracy_logged_once_per_epoch() {
    let cfg = small(Mode::None);
    let (_, rows) = run(&cfg);
    let logged: Vec<usize> = rows
        .iter()
        .filter(|r| r.test_accuracy.is_some())
        .map(|r| r.epoch)
        .collect();
    assert_eq!(logged, (0..cfg.epochs).collect::<Vec<_>>());
}

#[test]
fn run_directory_contents() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(Mode::Predefined);
    let s = run_to_dir(&cfg, dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), METRICS_HEADER);
    // J = 1, so one row per inner step.
    assert_eq!(csv.lines().count(), 1 + s.inner_steps);
    assert!(dir.path().join("weights.blvt").exists());
    assert!(dir.path().join("data_manifest.json").exists());
    assert_eq!(load_summary(dir.path()).unwrap(), s);
}

#[test]
fn summary_table_arithmetic() {
    let base = small(Mode::None);
    let mk = |mode: Mode, acc: f64, wall: f64, cost: usize| RunSummary {
        schema_version: 1,
        name: String::new(),
        mode,
        task: TaskKind::TranslatedGlyphs,
        seed: 0,
        final_test_accuracy: acc,
        final_val_accuracy: 1.0,
        cost_multiplier: cost,
        inner_steps: 0,
        outer_steps: 0,
        wall_time_ms: wall,
        selected_magnitude: None,
        grid: vec![],
        config: base.clone(),
    };
    let runs = vec![
        mk(Mode::Learned, 0.8, 300.0, 1),
        mk(Mode::None, 0.5, 100.0, 1),
        mk(Mode::None, 0.7, 100.0, 1),
        mk(Mode::ValidatedMagnitude, 0.9, 500.0, 5),
    ];
    let t = summarize(&runs).unwrap();
    let modes: Vec<Mode> = t.rows.iter().map(|r| r.mode).collect();
    assert_eq!(
        modes,
        vec![Mode::None, Mode::ValidatedMagnitude, Mode::Learned]
    );
    assert!((t.rows[0].mean_test_accuracy - 0.6).abs() < 1e-15);
    assert!((t.rows[0].std_test_accuracy - 0.1).abs() < 1e-12);
    assert_eq!(t.rows[1].cost_multiplier, 5.0);
    assert_eq!(t.rows[2].relative_wall_time, Some(3.0));
    assert_eq!(t.to_csv().lines().count(), 4);

    let mut mixed = runs.clone();
    mixed[0].task = TaskKind::HueShiftedBlobs;
    assert!(matches!(
        summarize(&mixed),
        Err(ExperimentError::Summary(_))
    ));
    assert!(summarize(&[]).is_err());
}

#[test]
fn malformed_configs_are_config_errors() {
    for text in [
        r#"{"mode":"sideways"}"#,
        r#"{"mode":"learned"}"#,
        r#"{"mode":"none","epochs":0}"#,
        r#"{"mode":"none","unknown":1}"#,
        r#"{"mode":"learned","augmenter":{"size":"small","kind":"translation"},"hypergrad":{"k":3,"j":1}}"#,
        r#"{"mode":"validated_magnitude","magnitude_grid":[]}"#,
        r#"{"mode":"predefined","predefined":{"hue":0.2}}"#,
    ] {
        let err = ExperimentConfig::from_json(text).unwrap_err();
        assert!(
            err.is_config() || matches!(err, ExperimentError::Json(_)),
            "{text}: {err}"
        );
    }
}
