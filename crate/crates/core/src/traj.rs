//! Trajectories: data model, CSV ingestion, normalization, a seeded
//! synthetic mobility generator, and member/non-member splitting.

use std::collections::HashSet;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    pub points: Vec<Point>,
}

impl Trajectory {
    /// Checks strict time monotonicity, non-negative time and the
    /// normalized coordinate range.
    pub fn validate(&self) -> Result<()> {
        for p in &self.points {
            if !(p.t >= 0.0) {
                return Err(Error::Validation(format!(
                    "trajectory {} has negative timestamp {}",
                    self.id, p.t
                )));
            }
            if !(-1.0..=1.0).contains(&p.x) || !(-1.0..=1.0).contains(&p.y) {
                return Err(Error::Validation(format!(
                    "trajectory {} has a point outside [-1, 1]²",
                    self.id
                )));
            }
        }
        if self.points.windows(2).any(|w| !(w[0].t < w[1].t)) {
            return Err(Error::Validation(format!(
                "trajectory {} has non-increasing timestamps",
                self.id
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `[x0, y0, x1, y1, …]`: the model input. Time is not a model channel.
    pub fn flatten(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.x, p.y]).collect()
    }

    /// Builds a trajectory from flattened coordinates, clipping into
    /// `[-1, 1]²` and assigning unit-interval timestamps `0, 1, 2, …`.
    pub fn from_flat(id: impl Into<String>, flat: &[f64]) -> Self {
        let points = flat
            .chunks_exact(2)
            .enumerate()
            .map(|(i, xy)| Point {
                x: xy[0].clamp(-1.0, 1.0),
                y: xy[1].clamp(-1.0, 1.0),
                t: i as f64,
            })
            .collect();
        Self {
            id: id.into(),
            points,
        }
    }
}

/// Raw coordinate box used for the affine map into `[-1, 1]²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_lon: f64,
    pub max_lon: f64,
    pub min_lat: f64,
    pub max_lat: f64,
}

impl BoundingBox {
    /// The box that leaves already-normalized coordinates unchanged.
    pub const UNIT: BoundingBox = BoundingBox {
        min_lon: -1.0,
        max_lon: 1.0,
        min_lat: -1.0,
        max_lat: 1.0,
    };

    pub fn validate(&self) -> Result<()> {
        let ok = |lo: f64, hi: f64| lo.is_finite() && hi.is_finite() && lo < hi;
        if ok(self.min_lon, self.max_lon) && ok(self.min_lat, self.max_lat) {
            Ok(())
        } else {
            Err(Error::Validation(format!(
                "degenerate bounding box {self:?}"
            )))
        }
    }

    fn contains(&self, lon: f64, lat: f64) -> bool {
        (self.min_lon..=self.max_lon).contains(&lon) && (self.min_lat..=self.max_lat).contains(&lat)
    }

    pub fn normalize(&self, lon: f64, lat: f64) -> (f64, f64) {
        (
            2.0 * (lon - self.min_lon) / (self.max_lon - self.min_lon) - 1.0,
            2.0 * (lat - self.min_lat) / (self.max_lat - self.min_lat) - 1.0,
        )
    }

    pub fn denormalize(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.min_lon + (x + 1.0) / 2.0 * (self.max_lon - self.min_lon),
            self.min_lat + (y + 1.0) / 2.0 * (self.max_lat - self.min_lat),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipDataset {
    pub members: Vec<Trajectory>,
    pub non_members: Vec<Trajectory>,
    pub bounds: BoundingBox,
}

impl MembershipDataset {
    pub fn validate(&self) -> Result<()> {
        if self.members.is_empty() || self.non_members.is_empty() {
            return Err(Error::ClassMissing {
                members: self.members.len(),
                non_members: self.non_members.len(),
            });
        }
        let ids: HashSet<&str> = self.members.iter().map(|t| t.id.as_str()).collect();
        if let Some(t) = self
            .non_members
            .iter()
            .find(|t| ids.contains(t.id.as_str()))
        {
            return Err(Error::Validation(format!(
                "trajectory {} is in both pools",
                t.id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    traj_id: String,
    seq: u64,
    lon: f64,
    lat: f64,
    t: f64,
}

struct RawTrajectory {
    id: String,
    rows: Vec<(f64, f64, f64)>,
}

fn parse_rows(path: &Path) -> Result<Vec<RawTrajectory>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    let headers = reader.headers().map_err(|e| csv_error(&e))?.clone();
    if headers.is_empty() {
        return Err(Error::EmptyInput(format!("{} is empty", path.display())));
    }
    let expected = ["traj_id", "seq", "lon", "lat", "t"];
    if headers.iter().ne(expected) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`", expected.join(",")),
        });
    }

    let mut out: Vec<RawTrajectory> = Vec::new();
    let mut seen = HashSet::new();
    for record in reader.deserialize::<CsvRow>() {
        let row = record.map_err(|e| csv_error(&e))?;
        let starts_new = out.last().is_none_or(|t| t.id != row.traj_id);
        if starts_new {
            if !seen.insert(row.traj_id.clone()) {
                return Err(Error::Validation(format!(
                    "rows of trajectory {} are not contiguous",
                    row.traj_id
                )));
            }
            out.push(RawTrajectory {
                id: row.traj_id.clone(),
                rows: Vec::new(),
            });
        }
        let traj = out.last_mut().expect("pushed above");
        if row.seq as usize != traj.rows.len() {
            return Err(Error::Validation(format!(
                "trajectory {} has seq {} where {} was expected",
                traj.id,
                row.seq,
                traj.rows.len()
            )));
        }
        if !(row.lon.is_finite() && row.lat.is_finite() && row.t.is_finite()) {
            return Err(Error::Validation(format!(
                "trajectory {} has a non-finite value at seq {}",
                traj.id, row.seq
            )));
        }
        traj.rows.push((row.lon, row.lat, row.t));
    }
    if out.is_empty() {
        return Err(Error::EmptyInput(format!("{} has no rows", path.display())));
    }
    Ok(out)
}

fn csv_error(e: &csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    let message = match e.kind() {
        csv::ErrorKind::Deserialize { err, .. } => err.to_string(),
        _ => e.to_string(),
    };
    Error::Parse { line, message }
}

/// Reads the trajectory CSV (`traj_id,seq,lon,lat,t`), keeps the last
/// `seq_len` points of each trajectory, drops shorter ones and maps
/// coordinates into `[-1, 1]²`. With no `bounds`, the box is inferred
/// from every row in the file.
pub fn load_trajectories(
    path: &Path,
    seq_len: usize,
    bounds: Option<BoundingBox>,
) -> Result<(Vec<Trajectory>, BoundingBox)> {
    if seq_len < 2 {
        return Err(Error::Config(format!(
            "seq_len must be at least 2, got {seq_len}"
        )));
    }
    let raw = parse_rows(path)?;

    for traj in &raw {
        if traj.rows.iter().any(|r| r.2 < 0.0) {
            return Err(Error::Validation(format!(
                "trajectory {} has a negative timestamp",
                traj.id
            )));
        }
        if traj.rows.windows(2).any(|w| !(w[0].2 < w[1].2)) {
            return Err(Error::Validation(format!(
                "trajectory {} has non-monotonic timestamps",
                traj.id
            )));
        }
    }

    let bounds = match bounds {
        Some(b) => b,
        None => {
            let mut b = BoundingBox {
                min_lon: f64::INFINITY,
                max_lon: f64::NEG_INFINITY,
                min_lat: f64::INFINITY,
                max_lat: f64::NEG_INFINITY,
            };
            for &(lon, lat, _) in raw.iter().flat_map(|t| &t.rows) {
                b.min_lon = b.min_lon.min(lon);
                b.max_lon = b.max_lon.max(lon);
                b.min_lat = b.min_lat.min(lat);
                b.max_lat = b.max_lat.max(lat);
            }
            b
        }
    };
    bounds.validate()?;

    let mut out = Vec::new();
    for traj in raw {
        if traj.rows.len() < seq_len {
            continue;
        }
        let kept = &traj.rows[traj.rows.len() - seq_len..];
        let mut points = Vec::with_capacity(seq_len);
        for &(lon, lat, t) in kept {
            if !bounds.contains(lon, lat) {
                return Err(Error::Validation(format!(
                    "trajectory {} has point ({lon}, {lat}) outside the bounding box",
                    traj.id
                )));
            }
            let (x, y) = bounds.normalize(lon, lat);
            points.push(Point {
                x: x.clamp(-1.0, 1.0),
                y: y.clamp(-1.0, 1.0),
                t,
            });
        }
        out.push(Trajectory {
            id: traj.id,
            points,
        });
    }
    Ok((out, bounds))
}

/// Writes trajectories in the ingest CSV schema, mapping normalized
/// coordinates back through `bounds`.
pub fn write_trajectories(
    path: &Path,
    trajectories: &[Trajectory],
    bounds: &BoundingBox,
) -> Result<()> {
    let mut text = String::from("traj_id,seq,lon,lat,t\n");
    for traj in trajectories {
        for (i, p) in traj.points.iter().enumerate() {
            let (lon, lat) = bounds.denormalize(p.x, p.y);
            text.push_str(&format!("{},{i},{lon},{lat},{}\n", traj.id, p.t));
        }
    }
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Knobs of the anchor-attracted random walk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    /// Number of fixed anchor points (stand-ins for points of interest).
    pub anchors: usize,
    /// Standard deviation of the Gaussian step noise.
    pub step_scale: f64,
    /// Fraction of the remaining distance to the anchor covered per step.
    #[serde(default = "default_attraction")]
    pub attraction: f64,
}

fn default_attraction() -> f64 {
    0.3
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            anchors: 3,
            step_scale: 0.05,
            attraction: default_attraction(),
        }
    }
}

impl SynthParams {
    fn validate(&self) -> Result<()> {
        if self.anchors == 0 {
            return Err(Error::Config("anchor count must be at least 1".into()));
        }
        if !(self.step_scale > 0.0 && self.step_scale.is_finite()) {
            return Err(Error::Config(format!(
                "step scale must be positive, got {}",
                self.step_scale
            )));
        }
        if !(0.0..=1.0).contains(&self.attraction) {
            return Err(Error::Config(format!(
                "attraction must be in [0, 1], got {}",
                self.attraction
            )));
        }
        Ok(())
    }
}

/// The anchor points `synth_mobility` uses for a given seed, drawn
/// uniformly from `[-0.7, 0.7]²`.
pub fn synth_anchors(seed: u64, params: &SynthParams) -> Vec<(f64, f64)> {
    let mut rng = rng_from_seed(derive_seed(seed, "anchors"));
    (0..params.anchors)
        .map(|_| (rng.random_range(-0.7..=0.7), rng.random_range(-0.7..=0.7)))
        .collect()
}

/// Generates `n` random walks of `seq_len` points. Each walk starts
/// uniformly in the unit square, picks one anchor and drifts toward it with
/// Gaussian jitter; coordinates are clipped to `[-1, 1]²` and timestamps
/// are `0, 1, 2, …`.
pub fn synth_mobility(
    n: usize,
    seq_len: usize,
    seed: u64,
    params: &SynthParams,
) -> Result<Vec<Trajectory>> {
    if n == 0 {
        return Err(Error::Config("trajectory count must be at least 1".into()));
    }
    if seq_len < 2 {
        return Err(Error::Config(format!(
            "seq_len must be at least 2, got {seq_len}"
        )));
    }
    params.validate()?;
    let anchors = synth_anchors(seed, params);
    let mut rng = rng_from_seed(derive_seed(seed, "walks"));
    let width = digits(n);
    let out = (0..n)
        .map(|i| {
            let (ax, ay) = anchors[rng.random_range(0..anchors.len())];
            let mut x: f64 = rng.random_range(-1.0..=1.0);
            let mut y: f64 = rng.random_range(-1.0..=1.0);
            let mut points = Vec::with_capacity(seq_len);
            for step in 0..seq_len {
                if step > 0 {
                    let nx: f64 = StandardNormal.sample(&mut rng);
                    let ny: f64 = StandardNormal.sample(&mut rng);
                    x = (x + params.attraction * (ax - x) + params.step_scale * nx)
                        .clamp(-1.0, 1.0);
                    y = (y + params.attraction * (ay - y) + params.step_scale * ny)
                        .clamp(-1.0, 1.0);
                }
                points.push(Point {
                    x,
                    y,
                    t: step as f64,
                });
            }
            Trajectory {
                id: format!("syn-{i:0width$}"),
                points,
            }
        })
        .collect();
    Ok(out)
}

fn digits(n: usize) -> usize {
    n.saturating_sub(1).to_string().len()
}

/// Samples disjoint member and non-member pools without replacement.
pub fn split_membership(
    trajectories: &[Trajectory],
    member_count: usize,
    non_member_count: usize,
    seed: u64,
) -> Result<MembershipDataset> {
    let required = member_count + non_member_count;
    if required > trajectories.len() {
        return Err(Error::InsufficientData {
            required,
            available: trajectories.len(),
        });
    }
    let mut ids = HashSet::with_capacity(trajectories.len());
    if let Some(dup) = trajectories.iter().find(|t| !ids.insert(t.id.as_str())) {
        return Err(Error::Validation(format!(
            "duplicate trajectory id {}",
            dup.id
        )));
    }
    let mut order: Vec<usize> = (0..trajectories.len()).collect();
    order.shuffle(&mut rng_from_seed(seed));
    let pick = |idx: &[usize]| idx.iter().map(|&i| trajectories[i].clone()).collect();
    Ok(MembershipDataset {
        members: pick(&order[..member_count]),
        non_members: pick(&order[member_count..required]),
        bounds: BoundingBox::UNIT,
    })
}
