//! Quadratic Bézier curve smoothing.
//!
//! A trajectory of `n` points is replaced by `n` samples of the quadratic
//! Bézier curve through its first and last point, taken at equidistant
//! parameters `t_j = j / (n - 1)`. The control point is chosen by a
//! [`ControlRule`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajdata::{Point, Trajectory};

/// How the control point of the smoothing curve is chosen. Serialized as
/// `mid`, `lsq` or `literal:<t0>`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(try_from = "String", into = "String")]
pub enum ControlRule {
    /// `control = (1 - t0)·start + t0·end`. Every smoothed point then lies on
    /// the chord between the endpoints.
    Literal { t0: f64 },
    /// The raw point at index `(n - 1) / 2` for odd `n`; for even `n` the
    /// midpoint of the two central points.
    #[default]
    MidTrajectoryPoint,
    /// The control point minimizing the summed squared distance between the
    /// curve samples and the raw points.
    LeastSquaresFit,
}

impl fmt::Display for ControlRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControlRule::Literal { t0 } => write!(f, "literal:{t0}"),
            ControlRule::MidTrajectoryPoint => f.write_str("mid"),
            ControlRule::LeastSquaresFit => f.write_str("lsq"),
        }
    }
}

impl FromStr for ControlRule {
    type Err = Error;

    /// Parses `mid`, `lsq` or `literal:<t0>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mid" => Ok(ControlRule::MidTrajectoryPoint),
            "lsq" => Ok(ControlRule::LeastSquaresFit),
            other => {
                let t0 = other
                    .strip_prefix("literal:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| Error::config(format!("unknown control rule {other:?}; use mid, lsq or literal:<t0>")))?;
                if !(0.0..=1.0).contains(&t0) {
                    return Err(Error::config(format!("literal control parameter {t0} outside [0, 1]")));
                }
                Ok(ControlRule::Literal { t0 })
            }
        }
    }
}

impl TryFrom<String> for ControlRule {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ControlRule> for String {
    fn from(r: ControlRule) -> String {
        r.to_string()
    }
}

/// Which part of a trajectory the smoother sees when building a target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingDomain {
    /// Smooth the future segment alone.
    #[default]
    Future,
    /// Smooth the whole past+future window and keep the future samples.
    Full,
}

impl FromStr for SmoothingDomain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "future" => Ok(SmoothingDomain::Future),
            "full" => Ok(SmoothingDomain::Full),
            other => Err(Error::config(format!("unknown smoothing domain {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BezierSpec {
    pub start: Point,
    pub control: Point,
    pub end: Point,
}

impl BezierSpec {
    pub fn new(start: Point, control: Point, end: Point) -> Result<Self> {
        if [start, control, end].iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Domain("Bézier points must be finite".into()));
        }
        Ok(Self { start, control, end })
    }

    /// Builds the curve for `points` under `rule`.
    pub fn fit(points: &[Point], rule: ControlRule) -> Result<Self> {
        let n = points.len();
        if n < 2 {
            return Err(Error::shape(format!("smoothing needs at least 2 points, got {n}")));
        }
        let (start, end) = (points[0], points[n - 1]);
        let control = match rule {
            ControlRule::Literal { t0 } => {
                if !(0.0..=1.0).contains(&t0) {
                    return Err(Error::Domain(format!("t0 = {t0} outside [0, 1]")));
                }
                lerp(start, end, t0)
            }
            ControlRule::MidTrajectoryPoint if n % 2 == 1 => points[(n - 1) / 2],
            ControlRule::MidTrajectoryPoint => lerp(points[n / 2 - 1], points[n / 2], 0.5),
            ControlRule::LeastSquaresFit => least_squares_control(points),
        };
        Self::new(start, control, end)
    }

    fn eval_unchecked(&self, t: f64) -> Point {
        let u = 1.0 - t;
        let (a, b, c) = (u * u, 2.0 * u * t, t * t);
        [
            a * self.start[0] + b * self.control[0] + c * self.end[0],
            a * self.start[1] + b * self.control[1] + c * self.end[1],
        ]
    }
}

fn lerp(a: Point, b: Point, t: f64) -> Point {
    [(1.0 - t) * a[0] + t * b[0], (1.0 - t) * a[1] + t * b[1]]
}

/// Closed-form minimizer of `Σ_j ‖B(t_j) - p_j‖²` over the control point.
/// With two points the problem is degenerate and the chord midpoint is used.
fn least_squares_control(points: &[Point]) -> Point {
    let n = points.len();
    let (start, end) = (points[0], points[n - 1]);
    let mut num = [0.0, 0.0];
    let mut den = 0.0;
    for (j, p) in points.iter().enumerate() {
        let t = j as f64 / (n - 1) as f64;
        let u = 1.0 - t;
        let b = 2.0 * u * t;
        for k in 0..2 {
            num[k] += b * (p[k] - u * u * start[k] - t * t * end[k]);
        }
        den += b * b;
    }
    if den == 0.0 {
        lerp(start, end, 0.5)
    } else {
        [num[0] / den, num[1] / den]
    }
}

/// `(1-t)²·start + 2(1-t)t·control + t²·end` for `t ∈ [0, 1]`.
pub fn bezier_eval(spec: &BezierSpec, t: f64) -> Result<Point> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("Bézier parameter {t} outside [0, 1]")));
    }
    Ok(spec.eval_unchecked(t))
}

/// Resamples `points` on its smoothing curve. Endpoints are kept bit-exact.
pub fn smooth_trajectory(points: &[Point], rule: ControlRule) -> Result<Vec<Point>> {
    let spec = BezierSpec::fit(points, rule)?;
    let n = points.len();
    let mut out: Vec<Point> = (0..n).map(|j| spec.eval_unchecked(j as f64 / (n - 1) as f64)).collect();
    out[0] = points[0];
    out[n - 1] = points[n - 1];
    Ok(out)
}

/// Smoothed future of `traj`.
pub fn smooth_future(traj: &Trajectory, rule: ControlRule) -> Result<Vec<Point>> {
    smooth_trajectory(&traj.future(), rule)
}

/// Smoothing target for a trajectory: either the smoothed future alone or the
/// future samples of the smoothed full window.
pub fn smooth_target(traj: &Trajectory, rule: ControlRule, domain: SmoothingDomain) -> Result<Vec<Point>> {
    match domain {
        SmoothingDomain::Future => smooth_future(traj, rule),
        SmoothingDomain::Full => {
            let full = smooth_trajectory(&traj.xy(), rule)?;
            Ok(full[traj.t_pas()..].to_vec())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: Point, b: Point, tol: f64) -> bool {
        (a[0] - b[0]).abs() <= tol && (a[1] - b[1]).abs() <= tol
    }

    #[test]
    fn endpoints_and_midpoint() {
        let spec = BezierSpec::new([0.0, 0.0], [1.0, 2.0], [2.0, 0.0]).unwrap();
        assert_eq!(bezier_eval(&spec, 0.0).unwrap(), [0.0, 0.0]);
        assert_eq!(bezier_eval(&spec, 1.0).unwrap(), [2.0, 0.0]);
        assert_eq!(bezier_eval(&spec, 0.5).unwrap(), [1.0, 1.0]);
    }

    #[test]
    fn out_of_range_parameter() {
        let spec = BezierSpec::new([0.0, 0.0], [1.0, 2.0], [2.0, 0.0]).unwrap();
        assert!(matches!(bezier_eval(&spec, -0.1), Err(Error::Domain(_))));
        assert!(matches!(bezier_eval(&spec, 1.5), Err(Error::Domain(_))));
    }

    #[test]
    fn midpoint_control_degenerates_to_segment() {
        let (s, e) = ([1.0, -2.0], [5.0, 4.0]);
        let spec = BezierSpec::new(s, lerp(s, e, 0.5), e).unwrap();
        for k in 0..=20 {
            let t = k as f64 / 20.0;
            let p = bezier_eval(&spec, t).unwrap();
            // on the segment: cross product with the chord vanishes
            let cross = (p[0] - s[0]) * (e[1] - s[1]) - (p[1] - s[1]) * (e[0] - s[0]);
            assert!(cross.abs() < 1e-12);
        }
    }

    #[test]
    fn straight_equally_spaced_is_fixed_point() {
        let pts: Vec<Point> = (0..12).map(|i| [0.3 * i as f64 + 1.0, -0.7 * i as f64]).collect();
        for rule in [ControlRule::MidTrajectoryPoint, ControlRule::LeastSquaresFit] {
            let out = smooth_trajectory(&pts, rule).unwrap();
            for (a, b) in out.iter().zip(&pts) {
                assert!(close(*a, *b, 1e-9), "{rule:?}");
            }
        }
    }

    #[test]
    fn three_point_hand_case() {
        let out = smooth_trajectory(&[[0.0, 0.0], [0.0, 2.0], [2.0, 2.0]], ControlRule::MidTrajectoryPoint).unwrap();
        assert!(close(out[1], [0.5, 1.5], 1e-15));
    }

    #[test]
    fn too_short_is_shape_error() {
        assert!(matches!(smooth_trajectory(&[[0.0, 0.0]], ControlRule::default()), Err(Error::Shape(_))));
    }

    #[test]
    fn literal_rule_collapses_onto_chord() {
        let pts = [[0.0, 0.0], [3.0, 5.0], [1.0, -4.0], [6.0, 0.0]];
        let out = smooth_trajectory(&pts, ControlRule::Literal { t0: 0.3 }).unwrap();
        for p in out {
            assert!(p[1].abs() < 1e-12);
        }
    }

    #[test]
    fn zig_deviation_peaks_at_zig() {
        // straight future with a single sideways zig at index 6
        let mut pts: Vec<Point> = (0..12).map(|i| [i as f64, 0.0]).collect();
        pts[6][1] = 3.0;
        let smooth = smooth_trajectory(&pts, ControlRule::MidTrajectoryPoint).unwrap();
        let dev: Vec<f64> = smooth
            .iter()
            .zip(&pts)
            .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
            .collect();
        let argmax = (0..dev.len()).max_by(|&a, &b| dev[a].total_cmp(&dev[b])).unwrap();
        assert_eq!(argmax, 6);
    }

    #[test]
    fn least_squares_beats_other_rules() {
        let pts: Vec<Point> = (0..15).map(|i| {
            let t = i as f64 / 14.0;
            [10.0 * t, 4.0 * (std::f64::consts::PI * t).sin() + 0.3 * (7.0 * t).cos()]
        }).collect();
        let sse = |rule| {
            smooth_trajectory(&pts, rule).unwrap().iter().zip(&pts)
                .map(|(a, b)| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sum::<f64>()
        };
        assert!(sse(ControlRule::LeastSquaresFit) <= sse(ControlRule::MidTrajectoryPoint) + 1e-12);
    }

    #[test]
    fn rule_parsing() {
        assert_eq!("mid".parse::<ControlRule>().unwrap(), ControlRule::MidTrajectoryPoint);
        assert_eq!("lsq".parse::<ControlRule>().unwrap(), ControlRule::LeastSquaresFit);
        assert_eq!("literal:0.25".parse::<ControlRule>().unwrap(), ControlRule::Literal { t0: 0.25 });
        assert!("literal:2".parse::<ControlRule>().is_err());
        assert!("spline".parse::<ControlRule>().is_err());
        let r = ControlRule::Literal { t0: 0.5 };
        assert_eq!(r.to_string().parse::<ControlRule>().unwrap(), r);
    }

    fn points_strategy() -> impl Strategy<Value = Vec<Point>> {
        prop::collection::vec((-50.0..50.0f64, -50.0..50.0f64).prop_map(|(x, y)| [x, y]), 2..30)
    }

    fn rule_strategy() -> impl Strategy<Value = ControlRule> {
        prop_oneof![
            Just(ControlRule::MidTrajectoryPoint),
            Just(ControlRule::LeastSquaresFit),
            (0.0..=1.0f64).prop_map(|t0| ControlRule::Literal { t0 }),
        ]
    }

    proptest! {
        #[test]
        fn endpoints_exact(pts in points_strategy(), rule in rule_strategy()) {
            let out = smooth_trajectory(&pts, rule).unwrap();
            prop_assert_eq!(out[0], pts[0]);
            prop_assert_eq!(out[pts.len() - 1], pts[pts.len() - 1]);
        }

        #[test]
        fn lsq_recovers_sampled_bezier(
            s in (-9.0..9.0f64, -9.0..9.0f64), c in (-9.0..9.0f64, -9.0..9.0f64),
            e in (-9.0..9.0f64, -9.0..9.0f64), n in 3usize..25,
        ) {
            let spec = BezierSpec::new([s.0, s.1], [c.0, c.1], [e.0, e.1]).unwrap();
            let pts: Vec<Point> = (0..n).map(|j| spec.eval_unchecked(j as f64 / (n - 1) as f64)).collect();
            let out = smooth_trajectory(&pts, ControlRule::LeastSquaresFit).unwrap();
            for j in 0..n {
                prop_assert!(close(out[j], pts[j], 1e-9));
            }
        }

        #[test]
        fn smoothing_twice_is_smoothing_once(pts in points_strategy(), t0 in 0.0..=1.0f64) {
            for rule in [ControlRule::LeastSquaresFit, ControlRule::Literal { t0 }] {
                let once = smooth_trajectory(&pts, rule).unwrap();
                let twice = smooth_trajectory(&once, rule).unwrap();
                for (a, b) in once.iter().zip(&twice) {
                    prop_assert!(close(*a, *b, 1e-9));
                }
            }
        }
    }
}
