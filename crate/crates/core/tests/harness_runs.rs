use std::fs;

use trajaudit::attacks::read_scores;
use trajaudit::harness::{
    compare_reports, preset, read_json, run_experiment, AuditReport, DataSource, ExperimentConfig,
    CONFIG_FILE, REPORT_FILE, ROC_FILE, SCORES_FILE,
};
use trajaudit::metrics::{auc, audit_metrics};
use trajaudit::targets::TrainConfig;
use trajaudit::traj::{synth_mobility, write_trajectories, BoundingBox, SynthParams};
use trajaudit::Error;

/// A cut-down preset that trains in well under a second.
fn quick(family: &str) -> ExperimentConfig {
    let mut cfg = preset(family).unwrap();
    cfg.name = format!("quick-{family}");
    cfg.train = TrainConfig {
        epochs: 5,
        batch_size: 8,
        hidden: vec![16],
        generator_hidden: vec![8],
        ..cfg.train
    };
    cfg.split.members = 24;
    cfg.split.non_members = 24;
    cfg.attack.probe_timesteps = 10;
    cfg
}

#[test]
fn identical_runs_write_identical_bytes() {
    for name in ["leaky-gan", "leaky-diffusion"] {
        let cfg = quick(name);
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ra = run_experiment(&cfg, a.path()).unwrap();
        let rb = run_experiment(&cfg, b.path()).unwrap();
        for f in [SCORES_FILE, ROC_FILE, CONFIG_FILE] {
            assert_eq!(
                fs::read(a.path().join(f)).unwrap(),
                fs::read(b.path().join(f)).unwrap(),
                "{f}"
            );
        }
        assert_eq!(ra.without_timing(), rb.without_timing());
        assert!(compare_reports(&ra, &rb).is_empty());

        let c = tempfile::tempdir().unwrap();
        run_experiment(&cfg.clone().with_master_seed(7), c.path()).unwrap();
        assert_ne!(
            fs::read(a.path().join(SCORES_FILE)).unwrap(),
            fs::read(c.path().join(SCORES_FILE)).unwrap()
        );
    }
}

#[test]
fn report_auc_is_recomputable_from_the_scores_file() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&quick("leaky-diffusion"), dir.path()).unwrap();
    let scores = read_scores(&dir.path().join(SCORES_FILE)).unwrap();
    assert!((auc(&scores).unwrap() - report.metrics.auc).abs() <= 1e-12);
    let (_, curve) = audit_metrics(&scores).unwrap();
    assert_eq!(
        fs::read_to_string(dir.path().join(ROC_FILE)).unwrap(),
        curve.to_csv()
    );

    let on_disk: AuditReport = read_json(&dir.path().join(REPORT_FILE)).unwrap();
    assert_eq!(on_disk, report);
    assert_eq!(report.metrics.n_members, 24);
    assert_eq!(report.score_summary.non_members.count, 24);
    let training = report.training.as_ref().unwrap();
    assert_eq!(training.epochs, 5);
    assert!(report.config.is_some() && report.dp.is_none());
    assert!(!report.notes.is_empty());
}

#[test]
fn dp_runs_report_parameters_without_claiming_epsilon() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick("leaky-gan").with_dp(Some(trajaudit::dp::DpConfig::new(1.0, 1.0)));
    let report = run_experiment(&cfg, dir.path()).unwrap();
    let dp = report.dp.unwrap();
    assert_eq!((dp.clip_norm, dp.noise_multiplier), (1.0, 1.0));
    assert_eq!(dp.steps, 5 * 3);
    assert_eq!(dp.epsilon, None);
}

#[test]
fn failed_stage_is_named_and_leaves_no_outputs() {
    let mut cfg = quick("leaky-diffusion");
    cfg.train.learning_rate = 1e200;
    cfg.train.optimizer = trajaudit::nn::OptimizerKind::Sgd;
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("run");
    match run_experiment(&cfg, &out) {
        Err(e @ Error::Stage { stage: "train", .. }) => assert_eq!(e.exit_code(), 3),
        other => panic!("expected a train-stage error, got {:?}", other.map(|_| ())),
    }
    assert!(!out.exists());

    let existing = tempfile::tempdir().unwrap();
    fs::write(existing.path().join("keep.txt"), "x").unwrap();
    assert!(run_experiment(&cfg, existing.path()).is_err());
    let left: Vec<_> = fs::read_dir(existing.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(left, vec![std::ffi::OsString::from("keep.txt")]);
}

#[test]
fn invalid_config_is_a_validation_failure() {
    let mut cfg = quick("leaky-gan");
    cfg.attack = trajaudit::attacks::AttackConfig::loss_based(10, 0);
    let dir = tempfile::tempdir().unwrap();
    let err = run_experiment(&cfg, dir.path()).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(fs::read_dir(dir.path()).unwrap().next().is_none());
}

#[test]
fn csv_data_source_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("walks.csv");
    let box_ = BoundingBox {
        min_lon: 104.0,
        max_lon: 104.2,
        min_lat: 30.6,
        max_lat: 30.8,
    };
    let walks = synth_mobility(48, 10, 3, &SynthParams::default()).unwrap();
    write_trajectories(&csv, &walks, &box_).unwrap();
    let mut cfg = quick("leaky-diffusion");
    cfg.data = DataSource::Csv {
        path: csv,
        seq_len: 10,
        bounds: Some(box_),
    };
    let out = dir.path().join("out");
    let report = run_experiment(&cfg, &out).unwrap();
    assert_eq!(report.metrics.n_members + report.metrics.n_non_members, 48);
    assert!(report.notes.iter().all(|n| !n.contains("synthetic")));
}
