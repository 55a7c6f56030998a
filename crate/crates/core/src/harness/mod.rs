//! Experiment orchestration: data → target training → attack → metrics →
//! report, all keyed off one master seed.
//!
//! An output directory holds, after a full run:
//!
//! | file              | contents                                   |
//! |-------------------|--------------------------------------------|
//! | `config.json`     | resolved [`ExperimentConfig`]              |
//! | `members.csv`     | member pool (trajectory CSV schema)        |
//! | `non_members.csv` | non-member pool                            |
//! | `model/`          | target checkpoint                          |
//! | `scores.csv`      | `sample_id,score,is_member`                |
//! | `roc.csv`         | `threshold,fpr,tpr`                        |
//! | `report.json`     | [`AuditReport`]                            |

mod config;
mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub use config::{
    preset, DataSource, ExperimentConfig, SplitSizes, StageSeeds, DEFAULT_MASTER_SEED, PRESETS,
};
pub use report::{compare_reports, AuditReport, FieldDiff, ReportDiff, ScoreShift, ScoreSummary};

use crate::attacks::{run_attack_parallel, write_scores, ScoredSample};
use crate::error::{Error, Result};
use crate::metrics::audit_metrics;
use crate::targets::{train_diffusion, train_gan, Family, Target};
use crate::traj::{
    load_trajectories, split_membership, synth_mobility, write_trajectories, MembershipDataset,
    Trajectory,
};

pub const CONFIG_FILE: &str = "config.json";
pub const MEMBERS_FILE: &str = "members.csv";
pub const NON_MEMBERS_FILE: &str = "non_members.csv";
pub const MODEL_DIR: &str = "model";
pub const SCORES_FILE: &str = "scores.csv";
pub const ROC_FILE: &str = "roc.csv";
pub const REPORT_FILE: &str = "report.json";

/// Environment variable capping scoring threads.
pub const THREADS_ENV: &str = "TRAJAUDIT_THREADS";

/// Worker count for scoring: `TRAJAUDIT_THREADS` if set to a positive
/// integer, otherwise the available parallelism.
pub fn worker_count() -> usize {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
    {
        Some(n) if n > 0 => n,
        _ => available,
    }
}

/// Every trajectory the data stage produces, before splitting.
pub fn load_data(config: &ExperimentConfig) -> Result<Vec<Trajectory>> {
    let seeds = StageSeeds::from_master(config.master_seed);
    match &config.data {
        DataSource::Synthetic { seq_len, params } => {
            let n = config.split.members + config.split.non_members;
            synth_mobility(n, *seq_len, seeds.data, params)
        }
        DataSource::Csv {
            path,
            seq_len,
            bounds,
        } => Ok(load_trajectories(path, *seq_len, *bounds)?.0),
    }
}

/// Splits the data stage's output into members (the training set) and
/// non-members.
pub fn prepare_dataset(config: &ExperimentConfig) -> Result<MembershipDataset> {
    let all = load_data(config)?;
    let seeds = StageSeeds::from_master(config.master_seed);
    split_membership(
        &all,
        config.split.members,
        config.split.non_members,
        seeds.split,
    )
}

/// Trains the configured target on `members`.
pub fn train_target(config: &ExperimentConfig, members: &[Trajectory]) -> Result<Target> {
    let resolved = config.resolved();
    Ok(match config.family {
        Family::Gan => Target::Gan(train_gan(members, &resolved.train)?),
        Family::Diffusion => Target::Diffusion(train_diffusion(
            members,
            &resolved.train,
            &resolved.schedule,
        )?),
    })
}

pub fn attack_target(
    config: &ExperimentConfig,
    target: &Target,
    dataset: &MembershipDataset,
) -> Result<Vec<ScoredSample>> {
    let resolved = config.resolved();
    run_attack_parallel(target, dataset, &resolved.attack, worker_count())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Files written so far, removed again if a later stage fails.
struct Outputs {
    files: Vec<PathBuf>,
    dirs: Vec<PathBuf>,
    armed: bool,
}

impl Outputs {
    fn new() -> Self {
        Self {
            files: Vec::new(),
            dirs: Vec::new(),
            armed: true,
        }
    }

    fn file(&mut self, path: PathBuf) -> PathBuf {
        self.files.push(path.clone());
        path
    }

    fn commit(mut self) {
        self.armed = false;
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.armed {
            for f in &self.files {
                let _ = fs::remove_file(f);
            }
            for d in self.dirs.iter().rev() {
                let _ = fs::remove_dir(d);
            }
        }
    }
}

/// Runs the full pipeline for `config`, writing every artifact into `out`.
/// Two runs with the same config produce byte-identical `scores.csv` and
/// `roc.csv`; the report differs only in `wall_clock_seconds`. On failure,
/// the files this run created are removed.
pub fn run_experiment(config: &ExperimentConfig, out: &Path) -> Result<AuditReport> {
    let started = Instant::now();
    config.validate().map_err(Error::in_stage("config"))?;
    let resolved = config.resolved();

    let mut outputs = Outputs::new();
    if !out.exists() {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        outputs.dirs.push(out.to_path_buf());
    }
    write_json(&outputs.file(out.join(CONFIG_FILE)), &resolved)?;

    let dataset = prepare_dataset(&resolved).map_err(Error::in_stage("data"))?;
    write_trajectories(
        &outputs.file(out.join(MEMBERS_FILE)),
        &dataset.members,
        &dataset.bounds,
    )?;
    write_trajectories(
        &outputs.file(out.join(NON_MEMBERS_FILE)),
        &dataset.non_members,
        &dataset.bounds,
    )?;

    let target = train_target(&resolved, &dataset.members).map_err(Error::in_stage("train"))?;
    let model_dir = out.join(MODEL_DIR);
    if !model_dir.exists() {
        outputs.dirs.push(model_dir.clone());
    }
    for p in target.save(&model_dir).map_err(Error::in_stage("train"))? {
        outputs.file(p);
    }

    let scores = attack_target(&resolved, &target, &dataset).map_err(Error::in_stage("attack"))?;
    write_scores(&outputs.file(out.join(SCORES_FILE)), &scores)?;

    let report = build_report(
        Some(&resolved),
        Some(&target),
        &scores,
        started.elapsed().as_secs_f64(),
    )
    .map_err(Error::in_stage("report"))?;
    write_report(&mut outputs, out, &report, &scores)?;
    outputs.commit();
    Ok(report)
}

fn write_report(
    outputs: &mut Outputs,
    out: &Path,
    report: &AuditReport,
    scores: &[ScoredSample],
) -> Result<()> {
    let (_, curve) = audit_metrics(scores)?;
    curve.write_csv(&outputs.file(out.join(ROC_FILE)))?;
    write_json(&outputs.file(out.join(REPORT_FILE)), report)
}

/// Builds a report from scored samples, with the config and target echoed
/// when available.
pub fn build_report(
    config: Option<&ExperimentConfig>,
    target: Option<&Target>,
    scores: &[ScoredSample],
    wall_clock_seconds: f64,
) -> Result<AuditReport> {
    report::build(config, target, scores, wall_clock_seconds)
}

/// Writes `roc.csv` and `report.json` for existing scores (the `report`
/// subcommand).
pub fn report_from_scores(
    config: Option<&ExperimentConfig>,
    target: Option<&Target>,
    scores: &[ScoredSample],
    out: &Path,
) -> Result<AuditReport> {
    let started = Instant::now();
    let report = build_report(config, target, scores, 0.0)?;
    let report = AuditReport {
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        ..report
    };
    let mut outputs = Outputs::new();
    write_report(&mut outputs, out, &report, scores)?;
    outputs.commit();
    Ok(report)
}
