use trajaudit::dp::DpConfig;
use trajaudit::harness::{compare_reports, preset, run_experiment, AuditReport};

fn run(name: &str, dp: Option<DpConfig>) -> AuditReport {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&preset(name).unwrap().with_dp(dp), dir.path()).unwrap()
}

#[test]
fn leaky_presets_outscore_safe_presets() {
    let a = |name| run(name, None).metrics.auc;
    let (lg, sg) = (a("leaky-gan"), a("safe-gan"));
    assert!(lg > sg, "gan: leaky {lg}, safe {sg}");
    let (ld, sd) = (a("leaky-diffusion"), a("safe-diffusion"));
    assert!(ld > sd, "diffusion: leaky {ld}, safe {sd}");
}

#[test]
fn defended_run_compares_below_the_undefended_one() {
    let plain = run("leaky-gan", None);
    let defended = run("leaky-gan", Some(DpConfig::new(1.0, 1.0)));
    let diff = compare_reports(&plain, &defended);
    assert!(diff.auc_delta < 0.0, "{diff:?}");
    assert!(!diff.family_mismatch);
    let paths: Vec<&str> = diff.config_diffs.iter().map(|d| d.path.as_str()).collect();
    assert!(
        paths.contains(&"dp.clip_norm") && paths.contains(&"train.dp.noise_multiplier"),
        "{paths:?}"
    );
}
