//! Trajectory data model, ETH/UCY-style text ingestion and a synthetic scene
//! generator.
//!
//! Text files hold one observation per line, `frame_id ped_id x y`, separated
//! by whitespace. Each pedestrian's track is cut into overlapping windows of
//! `t_pas + t_fut` observations. Coordinates stay in the file's native units.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A 2-D position in scene units.
pub type Point = [f64; 2];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajPoint {
    pub t: u64,
    pub x: f64,
    pub y: f64,
}

impl TrajPoint {
    pub fn xy(&self) -> Point {
        [self.x, self.y]
    }
}

/// One observed window: `t_pas` past steps followed by `t_fut` future steps.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    person_id: i64,
    points: Vec<TrajPoint>,
    t_pas: usize,
    t_fut: usize,
}

impl Trajectory {
    pub fn new(person_id: i64, points: Vec<TrajPoint>, t_pas: usize, t_fut: usize) -> Result<Self> {
        if t_pas < 2 || t_fut < 1 {
            return Err(Error::Data(format!(
                "trajectory needs t_pas >= 2 and t_fut >= 1, got {t_pas}/{t_fut}"
            )));
        }
        if points.len() != t_pas + t_fut {
            return Err(Error::shape(format!(
                "trajectory has {} points, expected {}",
                points.len(),
                t_pas + t_fut
            )));
        }
        if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::Data("non-finite coordinate".into()));
        }
        if points.windows(2).any(|w| w[1].t <= w[0].t) {
            return Err(Error::Data(format!(
                "frames of pedestrian {person_id} are not strictly increasing"
            )));
        }
        Ok(Self { person_id, points, t_pas, t_fut })
    }

    /// Builds a trajectory from bare coordinates, numbering frames from 0.
    pub fn from_xy(person_id: i64, xy: &[Point], t_pas: usize, t_fut: usize) -> Result<Self> {
        let points = xy
            .iter()
            .enumerate()
            .map(|(i, p)| TrajPoint { t: i as u64, x: p[0], y: p[1] })
            .collect();
        Self::new(person_id, points, t_pas, t_fut)
    }

    pub fn person_id(&self) -> i64 {
        self.person_id
    }

    pub fn points(&self) -> &[TrajPoint] {
        &self.points
    }

    pub fn t_pas(&self) -> usize {
        self.t_pas
    }

    pub fn t_fut(&self) -> usize {
        self.t_fut
    }

    pub fn xy(&self) -> Vec<Point> {
        self.points.iter().map(TrajPoint::xy).collect()
    }

    pub fn past(&self) -> Vec<Point> {
        self.points[..self.t_pas].iter().map(TrajPoint::xy).collect()
    }

    pub fn future(&self) -> Vec<Point> {
        self.points[self.t_pas..].iter().map(TrajPoint::xy).collect()
    }
}

/// Per-class semantic occupancy grid standing in for a segmented scene image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RasterRepr", into = "RasterRepr")]
pub struct SceneRaster {
    n_cls: usize,
    h: usize,
    w: usize,
    grid: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RasterRepr {
    n_cls: usize,
    h: usize,
    w: usize,
    grid: Vec<f64>,
}

impl TryFrom<RasterRepr> for SceneRaster {
    type Error = Error;

    fn try_from(r: RasterRepr) -> Result<Self> {
        SceneRaster::new(r.n_cls, r.h, r.w, r.grid)
    }
}

impl From<SceneRaster> for RasterRepr {
    fn from(r: SceneRaster) -> Self {
        RasterRepr { n_cls: r.n_cls, h: r.h, w: r.w, grid: r.grid }
    }
}

impl SceneRaster {
    pub const DEFAULT_CLASSES: usize = 8;
    pub const DEFAULT_SIDE: usize = 16;

    /// `grid` is `n_cls × h × w`, row-major.
    pub fn new(n_cls: usize, h: usize, w: usize, grid: Vec<f64>) -> Result<Self> {
        if n_cls == 0 || h == 0 || w == 0 {
            return Err(Error::shape("raster dimensions must be positive"));
        }
        if grid.len() != n_cls * h * w {
            return Err(Error::shape(format!(
                "raster grid has {} cells, expected {}",
                grid.len(),
                n_cls * h * w
            )));
        }
        if grid.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Data("raster occupancy outside [0, 1]".into()));
        }
        Ok(Self { n_cls, h, w, grid })
    }

    pub fn zeros(n_cls: usize, h: usize, w: usize) -> Result<Self> {
        Self::new(n_cls, h, w, vec![0.0; n_cls * h * w])
    }

    pub fn n_cls(&self) -> usize {
        self.n_cls
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn get(&self, class: usize, row: usize, col: usize) -> f64 {
        self.grid[(class * self.h + row) * self.w + col]
    }

    pub fn set(&mut self, class: usize, row: usize, col: usize, value: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::Data(format!("occupancy {value} outside [0, 1]")));
        }
        self.grid[(class * self.h + row) * self.w + col] = value;
        Ok(())
    }

    /// The flattened `h·w` plane of one class.
    pub fn class_plane(&self, class: usize) -> &[f64] {
        let hw = self.h * self.w;
        &self.grid[class * hw..(class + 1) * hw]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    trajectories: Vec<Trajectory>,
    scene: SceneRaster,
    split: Vec<Split>,
}

impl Dataset {
    /// All trajectories start in the training split.
    pub fn new(trajectories: Vec<Trajectory>, scene: SceneRaster) -> Result<Self> {
        if let Some(first) = trajectories.first() {
            let (p, f) = (first.t_pas, first.t_fut);
            if trajectories.iter().any(|t| t.t_pas != p || t.t_fut != f) {
                return Err(Error::Data("trajectories disagree on t_pas/t_fut".into()));
            }
        }
        let split = vec![Split::Train; trajectories.len()];
        Ok(Self { trajectories, scene, split })
    }

    pub fn with_scene(mut self, scene: SceneRaster) -> Self {
        self.scene = scene;
        self
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn scene(&self) -> &SceneRaster {
        &self.scene
    }

    pub fn split_labels(&self) -> &[Split] {
        &self.split
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Assigns `round(n · test_fraction)` randomly chosen trajectories to the
    /// test split and the rest to train. Trajectory order is unchanged.
    pub fn split_by_fraction(&mut self, test_fraction: f64, seed: u64) -> Result<()> {
        if !(0.0..=1.0).contains(&test_fraction) {
            return Err(Error::config(format!("test_fraction {test_fraction} outside [0, 1]")));
        }
        let n = self.trajectories.len();
        let n_test = (n as f64 * test_fraction).round() as usize;
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        self.split = vec![Split::Train; n];
        for &i in &idx[..n_test] {
            self.split[i] = Split::Test;
        }
        Ok(())
    }

    pub fn set_split(&mut self, split: Vec<Split>) -> Result<()> {
        if split.len() != self.trajectories.len() {
            return Err(Error::shape("split labels must cover every trajectory"));
        }
        self.split = split;
        Ok(())
    }

    pub fn subset(&self, which: Split) -> Vec<Trajectory> {
        self.trajectories
            .iter()
            .zip(&self.split)
            .filter(|(_, s)| **s == which)
            .map(|(t, _)| t.clone())
            .collect()
    }

    pub fn train(&self) -> Vec<Trajectory> {
        self.subset(Split::Train)
    }

    pub fn test(&self) -> Vec<Trajectory> {
        self.subset(Split::Test)
    }

    /// Concatenates two datasets sharing a scene; `other` becomes the test split.
    pub fn from_train_test(train: Dataset, test: Dataset) -> Result<Self> {
        let mut trajectories = train.trajectories;
        let n_train = trajectories.len();
        trajectories.extend(test.trajectories);
        let mut ds = Dataset::new(trajectories, train.scene)?;
        for s in &mut ds.split[n_train..] {
            *s = Split::Test;
        }
        Ok(ds)
    }
}

/// Number of windows of length `t_pas + t_fut` advanced by `stride` that fit
/// into a track of `len` observations.
pub fn window_count(len: usize, t_pas: usize, t_fut: usize, stride: usize) -> usize {
    let span = t_pas + t_fut;
    if len < span || stride == 0 {
        0
    } else {
        (len - span) / stride + 1
    }
}

/// Reads a `frame_id ped_id x y` file and cuts every track into windows.
///
/// Tracks are split wherever consecutive frames are further apart than the
/// file's nominal frame step (the most common positive step); gaps are never
/// interpolated. Columns past the fourth are ignored.
pub fn load_trajectory_file(
    path: impl AsRef<Path>,
    t_pas: usize,
    t_fut: usize,
    stride: usize,
) -> Result<Dataset> {
    let text = fs::read_to_string(path.as_ref())?;
    parse_trajectories(&text, t_pas, t_fut, stride)
}

pub fn parse_trajectories(text: &str, t_pas: usize, t_fut: usize, stride: usize) -> Result<Dataset> {
    if t_pas < 2 || t_fut < 1 || stride < 1 {
        return Err(Error::config(format!(
            "invalid window parameters t_pas={t_pas} t_fut={t_fut} stride={stride}"
        )));
    }
    let mut order: Vec<i64> = Vec::new();
    let mut tracks: HashMap<i64, Vec<TrajPoint>> = HashMap::new();
    let mut warned = false;

    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = trimmed.split_whitespace().collect();
        if cols.len() < 4 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 4 columns, found {}", cols.len()),
            });
        }
        if cols.len() > 4 && !warned {
            log::warn!("line {line_no}: ignoring {} extra column(s)", cols.len() - 4);
            warned = true;
        }
        let num = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
                line: line_no,
                msg: format!("invalid {what} {s:?}"),
            })
        };
        let frame = num(cols[0], "frame id")?;
        let ped = num(cols[1], "pedestrian id")?;
        let x = num(cols[2], "x")?;
        let y = num(cols[3], "y")?;
        if frame < 0.0 || frame.fract() != 0.0 {
            return Err(Error::Parse { line: line_no, msg: format!("frame id {frame} is not a non-negative integer") });
        }
        if ped.fract() != 0.0 {
            return Err(Error::Parse { line: line_no, msg: format!("pedestrian id {ped} is not an integer") });
        }
        let ped = ped as i64;
        let t = frame as u64;
        let track = tracks.entry(ped).or_insert_with(|| {
            order.push(ped);
            Vec::new()
        });
        if let Some(last) = track.last() {
            if t <= last.t {
                return Err(Error::Data(format!(
                    "line {line_no}: frame {t} of pedestrian {ped} does not follow frame {}",
                    last.t
                )));
            }
        }
        track.push(TrajPoint { t, x, y });
    }

    let step = nominal_step(tracks.values());
    let mut out = Vec::new();
    for ped in order {
        let track = &tracks[&ped];
        for segment in split_at_gaps(track, step) {
            let n = window_count(segment.len(), t_pas, t_fut, stride);
            for k in 0..n {
                let start = k * stride;
                let window = segment[start..start + t_pas + t_fut].to_vec();
                out.push(Trajectory::new(ped, window, t_pas, t_fut)?);
            }
        }
    }
    let scene = SceneRaster::zeros(SceneRaster::DEFAULT_CLASSES, SceneRaster::DEFAULT_SIDE, SceneRaster::DEFAULT_SIDE)?;
    Dataset::new(out, scene)
}

fn nominal_step<'a>(tracks: impl Iterator<Item = &'a Vec<TrajPoint>>) -> Option<u64> {
    let mut counts: HashMap<u64, usize> = HashMap::new();
    for track in tracks {
        for w in track.windows(2) {
            *counts.entry(w[1].t - w[0].t).or_default() += 1;
        }
    }
    // Most frequent step; the smaller step wins a tie.
    counts.into_iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0))).map(|(s, _)| s)
}

fn split_at_gaps(track: &[TrajPoint], step: Option<u64>) -> Vec<&[TrajPoint]> {
    let Some(step) = step else {
        return vec![track];
    };
    let mut segments = Vec::new();
    let mut start = 0;
    for i in 1..track.len() {
        if track[i].t - track[i - 1].t > step {
            segments.push(&track[start..i]);
            start = i;
        }
    }
    segments.push(&track[start..]);
    segments
}

/// Writes trajectories in the `frame_id ped_id x y` format, one track per
/// trajectory with the trajectory's position in the dataset as its id.
pub fn dump_trajectories(trajectories: &[Trajectory]) -> String {
    let mut s = String::new();
    for (i, traj) in trajectories.iter().enumerate() {
        for p in &traj.points {
            let _ = writeln!(s, "{}\t{}\t{}\t{}", p.t, i, p.x, p.y);
        }
    }
    s
}

pub fn dump(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, dump_trajectories(&dataset.trajectories))?;
    Ok(())
}

/// Parameters of the synthetic scene generator.
#[derive(Clone, Debug)]
pub struct SyntheticSpec {
    pub n_groups: usize,
    pub per_group: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    pub t_pas: usize,
    pub t_fut: usize,
    pub n_cls: usize,
    pub side: usize,
    /// Scene extent in scene units (square).
    pub extent: f64,
    /// Path length covered by one full window at nominal speed.
    pub path_length: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_groups: 3,
            per_group: 10,
            noise_sigma: 0.0,
            seed: 0,
            t_pas: 8,
            t_fut: 12,
            n_cls: SceneRaster::DEFAULT_CLASSES,
            side: SceneRaster::DEFAULT_SIDE,
            extent: 16.0,
            path_length: 10.0,
        }
    }
}

pub const CLASS_OBSTACLE: usize = 0;
pub const CLASS_WALKABLE: usize = 1;
pub const CLASS_CURB: usize = 2;

/// A walking pattern: a polyline traversed at constant speed.
#[derive(Clone, Debug)]
pub struct Template {
    pub vertices: Vec<Point>,
}

impl Template {
    /// Position at arc length `s`; extrapolates linearly past either end.
    pub fn at(&self, s: f64) -> Point {
        let v = &self.vertices;
        let mut remaining = s;
        if remaining <= 0.0 {
            let d = unit(v[0], v[1]);
            return [v[0][0] + remaining * d[0], v[0][1] + remaining * d[1]];
        }
        for w in v.windows(2) {
            let len = dist(w[0], w[1]);
            if remaining <= len {
                let d = unit(w[0], w[1]);
                return [w[0][0] + remaining * d[0], w[0][1] + remaining * d[1]];
            }
            remaining -= len;
        }
        let n = v.len();
        let d = unit(v[n - 2], v[n - 1]);
        [v[n - 1][0] + remaining * d[0], v[n - 1][1] + remaining * d[1]]
    }

    fn initial_normal(&self) -> Point {
        let d = unit(self.vertices[0], self.vertices[1]);
        [-d[1], d[0]]
    }

    fn initial_direction(&self) -> Point {
        unit(self.vertices[0], self.vertices[1])
    }
}

fn dist(a: Point, b: Point) -> f64 {
    ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
}

fn unit(a: Point, b: Point) -> Point {
    let l = dist(a, b);
    [(b[0] - a[0]) / l, (b[1] - a[1]) / l]
}

/// The walking pattern of group `g` in a 16×16 scene scaled to `extent`.
///
/// Groups 0..3 are a straight lane, a right turn, and a walk to the curb that
/// turns back. Later groups are rotated, mirrored and shifted copies.
pub fn group_template(g: usize, extent: f64) -> Template {
    let base: Vec<Point> = match g % 3 {
        0 => vec![[1.0, 4.0], [15.0, 4.0]],
        1 => vec![[4.0, 1.0], [4.0, 6.0], [15.0, 6.0]],
        _ => vec![[2.0, 11.0], [8.0, 11.0], [8.0, 12.0], [1.0, 12.0]],
    };
    let quarter_turns = (g / 3) % 4;
    let mirrored = (g / 12) % 2 == 1;
    let shift = 0.5 * (g / 24) as f64;
    let scale = extent / 16.0;
    let vertices = base
        .into_iter()
        .map(|[mut x, mut y]| {
            if mirrored {
                x = 16.0 - x;
            }
            for _ in 0..quarter_turns {
                let (cx, cy) = (x - 8.0, y - 8.0);
                x = 8.0 - cy;
                y = 8.0 + cx;
            }
            [(x + shift) * scale, (y + shift) * scale]
        })
        .collect();
    Template { vertices }
}

/// Generates `n_groups × per_group` trajectories on a default 8-class 16×16
/// raster. See [`generate_synthetic`].
pub fn generate_synthetic_scene(
    n_groups: usize,
    per_group: usize,
    noise_sigma: f64,
    seed: u64,
    t_pas: usize,
    t_fut: usize,
) -> Result<Dataset> {
    generate_synthetic(&SyntheticSpec {
        n_groups,
        per_group,
        noise_sigma,
        seed,
        t_pas,
        t_fut,
        ..SyntheticSpec::default()
    })
}

/// Generates a multi-regularity scene: every group walks one template and each
/// instance perturbs it with noise scaled by `noise_sigma`:
///
/// * speed factor `1 + 2σ·z`,
/// * a rigid offset of `4σ·z` along and `4σ·z` across the initial heading,
/// * independent per-point jitter `σ·z`,
///
/// with `z` standard normal draws. With `σ = 0` every instance equals its
/// template exactly. Trajectories are emitted group by group.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.n_groups < 1 || spec.per_group < 1 {
        return Err(Error::config("n_groups and per_group must be at least 1"));
    }
    if !(spec.noise_sigma >= 0.0) || !spec.noise_sigma.is_finite() {
        return Err(Error::config("noise_sigma must be finite and non-negative"));
    }
    if spec.t_pas < 2 || spec.t_fut < 1 {
        return Err(Error::config("t_pas must be >= 2 and t_fut >= 1"));
    }
    let total = spec.t_pas + spec.t_fut;
    let speed = spec.path_length * spec.extent / 16.0 / (total - 1) as f64;
    let sigma = spec.noise_sigma;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };

    let mut trajectories = Vec::with_capacity(spec.n_groups * spec.per_group);
    for g in 0..spec.n_groups {
        let template = group_template(g, spec.extent);
        let normal_dir = template.initial_normal();
        let heading = template.initial_direction();
        for _ in 0..spec.per_group {
            let speed_factor = 1.0 + 2.0 * sigma * normal();
            let along = 4.0 * sigma * normal();
            let across = 4.0 * sigma * normal();
            let offset = [
                along * heading[0] + across * normal_dir[0],
                along * heading[1] + across * normal_dir[1],
            ];
            let points: Vec<TrajPoint> = (0..total)
                .map(|i| {
                    let p = template.at(i as f64 * speed * speed_factor);
                    let jx = sigma * normal();
                    let jy = sigma * normal();
                    TrajPoint { t: i as u64, x: p[0] + offset[0] + jx, y: p[1] + offset[1] + jy }
                })
                .collect();
            let id = trajectories.len() as i64;
            trajectories.push(Trajectory::new(id, points, spec.t_pas, spec.t_fut)?);
        }
    }
    let scene = synthetic_raster(spec, speed)?;
    Dataset::new(trajectories, scene)
}

/// Marks cells within one cell of any template path as walkable, their outer
/// ring as curb, and everything else as obstacle.
fn synthetic_raster(spec: &SyntheticSpec, speed: f64) -> Result<SceneRaster> {
    let (side, n_cls) = (spec.side, spec.n_cls.max(1));
    let cell = spec.extent / side as f64;
    let mut walk = vec![false; side * side];
    let reach = speed * (spec.t_pas + spec.t_fut) as f64 * 1.2;
    for g in 0..spec.n_groups {
        let template = group_template(g, spec.extent);
        let samples = (reach / (cell * 0.25)).ceil() as usize;
        for k in 0..=samples {
            let p = template.at(reach * k as f64 / samples as f64);
            let col = (p[0] / cell).floor();
            let row = (p[1] / cell).floor();
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (r, c) = (row + dr as f64, col + dc as f64);
                    if r >= 0.0 && c >= 0.0 && (r as usize) < side && (c as usize) < side {
                        walk[r as usize * side + c as usize] = true;
                    }
                }
            }
        }
    }
    let mut raster = SceneRaster::zeros(n_cls, side, side)?;
    for r in 0..side {
        for c in 0..side {
            if walk[r * side + c] {
                if n_cls > CLASS_WALKABLE {
                    raster.set(CLASS_WALKABLE, r, c, 1.0)?;
                }
                continue;
            }
            let near_walk = (r.saturating_sub(1)..=(r + 1).min(side - 1))
                .any(|rr| (c.saturating_sub(1)..=(c + 1).min(side - 1)).any(|cc| walk[rr * side + cc]));
            if near_walk && n_cls > CLASS_CURB {
                raster.set(CLASS_CURB, r, c, 1.0)?;
            } else {
                raster.set(CLASS_OBSTACLE, r, c, 1.0)?;
            }
        }
    }
    Ok(raster)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn track_file(frames: usize) -> String {
        (0..frames).map(|f| format!("{}\t1\t{}\t{}\n", f * 10, f as f64 * 0.5, 1.0)).collect()
    }

    #[test]
    fn one_full_window() {
        let ds = parse_trajectories(&track_file(20), 8, 12, 20).unwrap();
        assert_eq!(ds.len(), 1);
        let ds = parse_trajectories(&track_file(20), 8, 12, 1).unwrap();
        assert_eq!(ds.len(), 1);
    }

    #[test]
    fn short_track_skipped() {
        let ds = parse_trajectories(&track_file(19), 8, 12, 1).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn window_count_formula() {
        for len in 0..60 {
            for stride in 1..7 {
                let text = track_file(len);
                let ds = parse_trajectories(&text, 3, 4, stride).unwrap();
                let expected = if len < 7 { 0 } else { (len - 7) / stride + 1 };
                assert_eq!(ds.len(), expected, "len {len} stride {stride}");
                assert_eq!(window_count(len, 3, 4, stride), expected);
            }
        }
    }

    #[test]
    fn malformed_line_names_line() {
        let text = "0 1 0.0 0.0\n10 1 oops 0.0\n";
        match parse_trajectories(text, 2, 1, 1) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(parse_trajectories("0 1 2\n", 2, 1, 1), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn non_monotone_frames_rejected() {
        let text = "10 1 0 0\n0 1 1 1\n";
        assert!(matches!(parse_trajectories(text, 2, 1, 1), Err(Error::Data(_))));
    }

    #[test]
    fn extra_columns_ignored() {
        let text: String = (0..3).map(|f| format!("{f} 4 {f}.5 2.0 9 9\n")).collect();
        let ds = parse_trajectories(&text, 2, 1, 1).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.trajectories()[0].future(), vec![[2.5, 2.0]]);
    }

    #[test]
    fn float_ids_accepted() {
        let text = "780.0 1.0 8.46 3.59\n790.0 1.0 8.0 3.5\n800.0 1.0 7.5 3.4\n";
        let ds = parse_trajectories(text, 2, 1, 1).unwrap();
        assert_eq!(ds.trajectories()[0].person_id(), 1);
        assert_eq!(ds.trajectories()[0].points()[0].t, 780);
    }

    #[test]
    fn gaps_split_tracks() {
        // frames 0..5 then a jump to 9..14: two 5-long segments, no window spans the gap
        let mut text = String::new();
        for f in (0..5).chain(9..14) {
            text.push_str(&format!("{f} 1 {f} 0\n"));
        }
        let ds = parse_trajectories(&text, 3, 2, 1).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.trajectories()[1].points()[0].t, 9);
    }

    #[test]
    fn input_order_preserved() {
        let mut text = String::new();
        for f in 0..4 {
            text.push_str(&format!("{f} 7 {f} 0\n{f} 3 0 {f}\n"));
        }
        let ds = parse_trajectories(&text, 2, 1, 1).unwrap();
        let ids: Vec<i64> = ds.trajectories().iter().map(|t| t.person_id()).collect();
        assert_eq!(ids, vec![7, 7, 3, 3]);
    }

    #[test]
    fn zero_noise_collapses_groups() {
        let ds = generate_synthetic_scene(3, 10, 0.0, 1, 8, 12).unwrap();
        assert_eq!(ds.len(), 30);
        let mut distinct: Vec<Vec<Point>> = Vec::new();
        for t in ds.trajectories() {
            if !distinct.contains(&t.xy()) {
                distinct.push(t.xy());
            }
        }
        assert_eq!(distinct.len(), 3);
        for (g, chunk) in ds.trajectories().chunks(10).enumerate() {
            let template = group_template(g, 16.0);
            let speed = 10.0 / 19.0;
            for t in chunk {
                for (i, p) in t.xy().iter().enumerate() {
                    assert_eq!(*p, template.at(i as f64 * speed));
                }
            }
        }
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = generate_synthetic_scene(4, 5, 0.1, 42, 8, 12).unwrap();
        let b = generate_synthetic_scene(4, 5, 0.1, 42, 8, 12).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_scene(4, 5, 0.1, 43, 8, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn turn_back_template_returns() {
        let t = group_template(2, 16.0);
        let start = t.at(0.0);
        let far = t.at(6.0);
        let back = t.at(12.0);
        assert!(dist(start, back) < dist(start, far));
    }

    #[test]
    fn raster_marks_lanes_walkable() {
        let ds = generate_synthetic_scene(3, 1, 0.0, 0, 8, 12).unwrap();
        let r = ds.scene();
        assert_eq!((r.n_cls(), r.h(), r.w()), (8, 16, 16));
        for p in ds.trajectories()[0].xy() {
            let (row, col) = (p[1].floor() as usize, p[0].floor() as usize);
            assert_eq!(r.get(CLASS_WALKABLE, row, col), 1.0);
        }
        // each cell belongs to exactly one of the three used classes
        for row in 0..16 {
            for col in 0..16 {
                let s: f64 = (0..8).map(|c| r.get(c, row, col)).sum();
                assert_eq!(s, 1.0);
            }
        }
    }

    #[test]
    fn raster_json_roundtrip_and_validation() {
        let ds = generate_synthetic_scene(3, 1, 0.0, 0, 8, 12).unwrap();
        let json = ds.scene().to_json().unwrap();
        assert_eq!(&SceneRaster::from_json(&json).unwrap(), ds.scene());
        assert!(SceneRaster::from_json(r#"{"n_cls":1,"h":1,"w":2,"grid":[0.5]}"#).is_err());
        assert!(SceneRaster::from_json(r#"{"n_cls":1,"h":1,"w":1,"grid":[1.5]}"#).is_err());
    }

    #[test]
    fn split_is_total_and_disjoint() {
        let mut ds = generate_synthetic_scene(3, 200, 0.05, 9, 8, 12).unwrap();
        ds.split_by_fraction(1.0 / 6.0, 3).unwrap();
        assert_eq!(ds.test().len(), 100);
        assert_eq!(ds.train().len(), 500);
    }

    #[test]
    fn trajectory_invariants() {
        assert!(Trajectory::from_xy(0, &[[0.0, 0.0]; 3], 1, 2).is_err());
        assert!(Trajectory::from_xy(0, &[[0.0, 0.0]; 3], 2, 2).is_err());
        assert!(Trajectory::from_xy(0, &[[f64::NAN, 0.0]; 3], 2, 1).is_err());
    }
}
