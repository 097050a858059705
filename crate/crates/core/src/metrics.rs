//! Displacement metrics.
//!
//! ADE and FDE compare a predicted future with the ground truth directly.
//! CS-ADE and CS-FDE compare it with the Bézier-smoothed ground truth; the
//! prediction itself is scored raw unless explicitly requested otherwise.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::smoothing::{smooth_target, smooth_trajectory, ControlRule, SmoothingDomain};
use crate::trajdata::{Point, SceneRaster, Trajectory};

fn check_shapes(pred: &[Point], gt: &[Point]) -> Result<()> {
    if pred.len() != gt.len() || gt.is_empty() {
        return Err(Error::shape(format!("prediction has {} steps, ground truth {}", pred.len(), gt.len())));
    }
    Ok(())
}

fn l2(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Mean per-step Euclidean distance.
pub fn ade(pred: &[Point], gt: &[Point]) -> Result<f64> {
    check_shapes(pred, gt)?;
    Ok(pred.iter().zip(gt).map(|(a, b)| l2(*a, *b)).sum::<f64>() / gt.len() as f64)
}

/// Euclidean distance at the last step.
pub fn fde(pred: &[Point], gt: &[Point]) -> Result<f64> {
    check_shapes(pred, gt)?;
    Ok(l2(pred[pred.len() - 1], gt[gt.len() - 1]))
}

pub fn cs_ade(pred: &[Point], gt: &[Point], rule: ControlRule) -> Result<f64> {
    check_shapes(pred, gt)?;
    ade(pred, &smooth_trajectory(gt, rule)?)
}

pub fn cs_fde(pred: &[Point], gt: &[Point], rule: ControlRule) -> Result<f64> {
    check_shapes(pred, gt)?;
    fde(pred, &smooth_trajectory(gt, rule)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Ade,
    Fde,
    CsAde,
    CsFde,
}

impl Metric {
    pub fn eval(self, pred: &[Point], gt: &[Point], rule: ControlRule) -> Result<f64> {
        match self {
            Metric::Ade => ade(pred, gt),
            Metric::Fde => fde(pred, gt),
            Metric::CsAde => cs_ade(pred, gt, rule),
            Metric::CsFde => cs_fde(pred, gt, rule),
        }
    }
}

/// Smallest `metric` value over all predictions.
pub fn best_of_k(preds: &[Vec<Point>], gt: &[Point], metric: Metric, rule: ControlRule) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::shape("best-of-k needs at least one prediction"));
    }
    preds.iter().try_fold(f64::INFINITY, |best, p| Ok(best.min(metric.eval(p, gt, rule)?)))
}

/// Maps an observed past and scene raster to candidate futures.
pub trait Predictor: Sync {
    fn predict(&self, past: &[Point], scene: &SceneRaster, k: usize) -> Result<Vec<Vec<Point>>>;
}

/// Repeats the last observed step for the whole future.
#[derive(Clone, Copy, Debug)]
pub struct ConstantVelocity {
    pub t_fut: usize,
}

impl Predictor for ConstantVelocity {
    fn predict(&self, past: &[Point], _scene: &SceneRaster, _k: usize) -> Result<Vec<Vec<Point>>> {
        if past.len() < 2 {
            return Err(Error::shape("constant velocity needs two observed points"));
        }
        let last = past[past.len() - 1];
        let prev = past[past.len() - 2];
        let v = [last[0] - prev[0], last[1] - prev[1]];
        Ok(vec![(1..=self.t_fut).map(|s| [last[0] + s as f64 * v[0], last[1] + s as f64 * v[1]]).collect()])
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct EvalOptions {
    pub control: ControlRule,
    pub domain: SmoothingDomain,
    /// Also smooth each prediction before scoring CS metrics.
    pub smooth_predictions: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMetrics {
    pub index: usize,
    pub person_id: i64,
    pub ade: f64,
    pub fde: f64,
    pub cs_ade: f64,
    pub cs_fde: f64,
    pub past: Vec<Point>,
    /// The candidate with the lowest ADE.
    pub best_prediction: Vec<Point>,
    pub ground_truth: Vec<Point>,
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricMeans {
    pub ade: f64,
    pub fde: f64,
    pub cs_ade: f64,
    pub cs_fde: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_trajectory: Vec<TrajectoryMetrics>,
    pub aggregate: MetricMeans,
    pub best_of_k: usize,
    pub n: usize,
}

/// Scores `predictor` on `test` with best-of-`k` per metric. Trajectories
/// are scored in parallel and reduced in input order.
pub fn evaluate(
    test: &[Trajectory],
    scene: &SceneRaster,
    predictor: &dyn Predictor,
    k: usize,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if k == 0 {
        return Err(Error::config("best-of-k needs k >= 1"));
    }
    let per_trajectory = test
        .par_iter()
        .enumerate()
        .map(|(index, traj)| score_one(index, traj, scene, predictor, k, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_rows(per_trajectory, k))
}

fn score_one(
    index: usize,
    traj: &Trajectory,
    scene: &SceneRaster,
    predictor: &dyn Predictor,
    k: usize,
    opts: &EvalOptions,
) -> Result<TrajectoryMetrics> {
    let past = traj.past();
    let gt = traj.future();
    let preds = predictor.predict(&past, scene, k).map_err(|e| Error::Evaluation { index, msg: e.to_string() })?;
    if preds.is_empty() || preds.len() > k || preds.iter().any(|p| p.len() != gt.len()) {
        return Err(Error::Evaluation {
            index,
            msg: format!("predictor returned {} candidate(s) with lengths {:?}, expected up to {k} of {}", preds.len(), preds.iter().map(Vec::len).collect::<Vec<_>>(), gt.len()),
        });
    }
    if preds.iter().flatten().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Evaluation { index, msg: "non-finite prediction".into() });
    }
    let smoothed_gt = smooth_target(traj, opts.control, opts.domain)?;
    let cs_preds: Vec<Vec<Point>> = if opts.smooth_predictions {
        preds.iter().map(|p| smooth_trajectory(p, opts.control)).collect::<Result<_>>()?
    } else {
        preds.clone()
    };
    let mut best = (f64::INFINITY, 0);
    for (i, p) in preds.iter().enumerate() {
        let a = ade(p, &gt)?;
        if a < best.0 {
            best = (a, i);
        }
    }
    Ok(TrajectoryMetrics {
        index,
        person_id: traj.person_id(),
        ade: best.0,
        fde: best_of_k(&preds, &gt, Metric::Fde, opts.control)?,
        cs_ade: best_of_k(&cs_preds, &smoothed_gt, Metric::Ade, opts.control)?,
        cs_fde: best_of_k(&cs_preds, &smoothed_gt, Metric::Fde, opts.control)?,
        past,
        best_prediction: preds[best.1].clone(),
        ground_truth: gt,
    })
}

impl EvalReport {
    pub fn from_rows(per_trajectory: Vec<TrajectoryMetrics>, best_of_k: usize) -> Self {
        let n = per_trajectory.len();
        let mut agg = MetricMeans::default();
        if n > 0 {
            for r in &per_trajectory {
                agg.ade += r.ade;
                agg.fde += r.fde;
                agg.cs_ade += r.cs_ade;
                agg.cs_fde += r.cs_fde;
            }
            let nf = n as f64;
            agg = MetricMeans { ade: agg.ade / nf, fde: agg.fde / nf, cs_ade: agg.cs_ade / nf, cs_fde: agg.cs_fde / nf };
        }
        Self { per_trajectory, aggregate: agg, best_of_k, n }
    }

    /// One row per trajectory followed by a `mean` row. Point lists are
    /// encoded as `x y;x y;...`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,person_id,ade,fde,cs_ade,cs_fde,past,prediction,ground_truth\n");
        for r in &self.per_trajectory {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.index,
                r.person_id,
                r.ade,
                r.fde,
                r.cs_ade,
                r.cs_fde,
                encode_points(&r.past),
                encode_points(&r.best_prediction),
                encode_points(&r.ground_truth)
            );
        }
        let a = &self.aggregate;
        let _ = writeln!(s, "mean,,{},{},{},{},,,", a.ade, a.fde, a.cs_ade, a.cs_fde);
        s
    }

    /// Parses the output of [`EvalReport::to_csv`].
    pub fn from_csv(text: &str, best_of_k: usize) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let mut rows = Vec::new();
        let mut aggregate = None;
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            let field = |k: usize| rec.get(k).ok_or_else(|| Error::Format(format!("row {}: missing column {k}", i + 2)));
            let num = |k: usize| -> Result<f64> {
                field(k)?.parse::<f64>().map_err(|_| Error::Format(format!("row {}: column {k} is not a number", i + 2)))
            };
            if field(0)? == "mean" {
                aggregate = Some(MetricMeans { ade: num(2)?, fde: num(3)?, cs_ade: num(4)?, cs_fde: num(5)? });
                continue;
            }
            rows.push(TrajectoryMetrics {
                index: field(0)?.parse().map_err(|_| Error::Format(format!("row {}: bad index", i + 2)))?,
                person_id: field(1)?.parse().map_err(|_| Error::Format(format!("row {}: bad person id", i + 2)))?,
                ade: num(2)?,
                fde: num(3)?,
                cs_ade: num(4)?,
                cs_fde: num(5)?,
                past: decode_points(field(6)?)?,
                best_prediction: decode_points(field(7)?)?,
                ground_truth: decode_points(field(8)?)?,
            });
        }
        let mut report = EvalReport::from_rows(rows, best_of_k);
        if let Some(a) = aggregate {
            report.aggregate = a;
        }
        Ok(report)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write(&self, csv_path: impl AsRef<Path>, json_path: impl AsRef<Path>) -> Result<()> {
        fs::write(csv_path, self.to_csv())?;
        fs::write(json_path, self.to_json()?)?;
        Ok(())
    }
}

/// Unweighted mean of per-scene means.
pub fn aggregate_scenes(reports: &[EvalReport]) -> MetricMeans {
    let n = reports.len().max(1) as f64;
    let mut m = MetricMeans::default();
    for r in reports {
        m.ade += r.aggregate.ade / n;
        m.fde += r.aggregate.fde / n;
        m.cs_ade += r.aggregate.cs_ade / n;
        m.cs_fde += r.aggregate.cs_fde / n;
    }
    m
}

pub fn encode_points(points: &[Point]) -> String {
    points.iter().map(|p| format!("{} {}", p[0], p[1])).collect::<Vec<_>>().join(";")
}

pub fn decode_points(s: &str) -> Result<Vec<Point>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(';')
        .map(|pair| {
            let mut it = pair.split_whitespace().map(str::parse::<f64>);
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(x)), Some(Ok(y)), None) => Ok([x, y]),
                _ => Err(Error::Format(format!("bad point {pair:?}"))),
            }
        })
        .collect()
}
