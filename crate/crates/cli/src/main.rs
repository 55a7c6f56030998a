//! `trajaudit`: membership-inference audits of trajectory generators.
//!
//! Stages (`gen-data`, `train`, `attack`, `report`) share one output
//! directory and rebuild the member/non-member split from the config, so a
//! staged run and `audit` produce the same bytes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use trajaudit::attacks::{read_scores, write_scores};
use trajaudit::dp::{verify_dp, verify_dp_exhaustive, DpConfig, MechanismFile};
use trajaudit::harness::{
    attack_target, compare_reports, prepare_dataset, preset, read_json, report_from_scores,
    run_experiment, train_target, write_json, AuditReport, ExperimentConfig, CONFIG_FILE,
    MEMBERS_FILE, MODEL_DIR, NON_MEMBERS_FILE, PRESETS, REPORT_FILE, SCORES_FILE,
};
use trajaudit::targets::Target;
use trajaudit::traj::write_trajectories;
use trajaudit::Error;

#[derive(Parser)]
#[command(
    name = "trajaudit",
    version,
    about = "Membership-inference privacy audits for trajectory generators"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the member and non-member trajectory CSVs.
    GenData(ExperimentArgs),
    /// Train the target model and write its checkpoint.
    Train(ExperimentArgs),
    /// Score members and non-members against a trained checkpoint.
    Attack(ExperimentArgs),
    /// Compute metrics from scores.csv and write roc.csv and report.json.
    Report(ExperimentArgs),
    /// Run the full pipeline.
    Audit(ExperimentArgs),
    /// Check a discrete mechanism for (ε, δ)-differential privacy.
    VerifyDp(VerifyArgs),
    /// Diff two audit reports.
    Compare(CompareArgs),
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment config (JSON).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Bundled preset name.
    #[arg(long)]
    preset: Option<String>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Enable DP-SGD with this per-example clip norm.
    #[arg(long, requires = "dp_noise")]
    dp_clip: Option<f64>,
    /// DP-SGD noise multiplier.
    #[arg(long, requires = "dp_clip")]
    dp_noise: Option<f64>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Mechanism specification (JSON).
    #[arg(long)]
    mechanism: PathBuf,
    #[arg(long)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
    /// Also enumerate every output subset (at most 20 outputs).
    #[arg(long)]
    exhaustive: bool,
    /// Write the verdict to `<out>/verdict.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Baseline report.json.
    a: PathBuf,
    /// Report compared against the baseline.
    b: PathBuf,
    /// Write the diff to `<out>/diff.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

impl ExperimentArgs {
    /// Config from `--config`, `--preset`, or a `config.json` already in
    /// the output directory, in that order.
    fn config(&self) -> CliResult<ExperimentConfig> {
        let existing = self.out.join(CONFIG_FILE);
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => read_json(path)?,
            (None, Some(name)) => preset(name)?,
            (None, None) if existing.is_file() => read_json(&existing)?,
            (None, None) => {
                return Err(Failure::Usage(format!(
                    "one of --config or --preset is required (presets: {})",
                    PRESETS.join(", ")
                )))
            }
        };
        if let Some(seed) = self.seed {
            cfg = cfg.with_master_seed(seed);
        }
        if let (Some(c), Some(s)) = (self.dp_clip, self.dp_noise) {
            cfg = cfg.with_dp(Some(DpConfig::new(c, s)));
        }
        cfg.validate()?;
        Ok(cfg.resolved())
    }

    fn out_dir(&self) -> CliResult<&Path> {
        fs::create_dir_all(&self.out).map_err(|e| Error::Io {
            path: self.out.clone(),
            source: e,
        })?;
        Ok(&self.out)
    }
}

fn gen_data(args: &ExperimentArgs) -> CliResult<()> {
    let cfg = args.config()?;
    let out = args.out_dir()?;
    let ds = prepare_dataset(&cfg)?;
    write_json(&out.join(CONFIG_FILE), &cfg)?;
    write_trajectories(&out.join(MEMBERS_FILE), &ds.members, &ds.bounds)?;
    write_trajectories(&out.join(NON_MEMBERS_FILE), &ds.non_members, &ds.bounds)?;
    println!(
        "wrote {} members and {} non-members to {}",
        ds.members.len(),
        ds.non_members.len(),
        out.display()
    );
    Ok(())
}

fn train(args: &ExperimentArgs) -> CliResult<()> {
    let cfg = args.config()?;
    let out = args.out_dir()?;
    let ds = prepare_dataset(&cfg)?;
    let target = train_target(&cfg, &ds.members)?;
    write_json(&out.join(CONFIG_FILE), &cfg)?;
    target.save(&out.join(MODEL_DIR))?;
    println!(
        "trained {} target on {} trajectories",
        target.family(),
        ds.members.len()
    );
    Ok(())
}

fn attack(args: &ExperimentArgs) -> CliResult<()> {
    let cfg = args.config()?;
    let out = args.out_dir()?;
    let target = Target::load(&out.join(MODEL_DIR))?;
    if target.family() != cfg.family {
        return Err(Error::Config(format!(
            "checkpoint is a {} target but the config is {}",
            target.family(),
            cfg.family
        ))
        .into());
    }
    let ds = prepare_dataset(&cfg)?;
    let scores = attack_target(&cfg, &target, &ds)?;
    write_scores(&out.join(SCORES_FILE), &scores)?;
    println!("scored {} samples", scores.len());
    Ok(())
}

fn report(args: &ExperimentArgs) -> CliResult<()> {
    let cfg = args.config()?;
    let out = args.out_dir()?;
    let scores = read_scores(&out.join(SCORES_FILE))?;
    let model_dir = out.join(MODEL_DIR);
    let target = if model_dir.is_dir() {
        Some(Target::load(&model_dir)?)
    } else {
        None
    };
    let report = report_from_scores(Some(&cfg), target.as_ref(), &scores, out)?;
    print_summary(&report);
    Ok(())
}

fn audit(args: &ExperimentArgs) -> CliResult<()> {
    let cfg = args.config()?;
    let report = run_experiment(&cfg, &args.out)?;
    print_summary(&report);
    println!("report written to {}", args.out.join(REPORT_FILE).display());
    Ok(())
}

fn print_summary(report: &AuditReport) {
    let m = &report.metrics;
    let tprs: Vec<String> = m
        .tpr_at_fpr
        .iter()
        .map(|t| format!("tpr@fpr={}: {:.4}", t.target_fpr, t.tpr))
        .collect();
    println!(
        "{}: auc {:.4}, {} ({} members, {} non-members, {:.1}s)",
        report.experiment.as_deref().unwrap_or("audit"),
        m.auc,
        tprs.join(", "),
        m.n_members,
        m.n_non_members,
        report.wall_clock_seconds
    );
}

fn verify(args: &VerifyArgs) -> CliResult<()> {
    let (mech, adjacency) = MechanismFile::load(&args.mechanism)?.into_parts()?;
    let verdict = verify_dp(&mech, &adjacency, args.epsilon, args.delta)?;
    if args.exhaustive {
        let brute = verify_dp_exhaustive(&mech, &adjacency, args.epsilon, args.delta)?;
        if brute.holds() != verdict.holds() {
            return Err(Error::Numeric(
                "subset enumeration disagrees with the max-sum check".into(),
            )
            .into());
        }
    }
    emit(&verdict, args.out.as_deref(), "verdict.json")
}

fn compare(args: &CompareArgs) -> CliResult<()> {
    let a: AuditReport = read_json(&args.a)?;
    let b: AuditReport = read_json(&args.b)?;
    emit(&compare_reports(&a, &b), args.out.as_deref(), "diff.json")
}

fn emit<T: serde::Serialize>(value: &T, out: Option<&Path>, file: &str) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    println!("{text}");
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        write_json(&dir.join(file), value)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Attack(a) => attack(a),
        Command::Report(a) => report(a),
        Command::Audit(a) => audit(a),
        Command::VerifyDp(a) => verify(a),
        Command::Compare(a) => compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }
}
