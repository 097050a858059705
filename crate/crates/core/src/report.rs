//! Static SVG rendering of an evaluation report: sampled trajectories on the
//! left (observed blue, predicted red, ground truth green) and a bar chart of
//! the aggregate metrics on the right. Output depends only on the report.

use std::fmt::Write;

use crate::metrics::EvalReport;
use crate::trajdata::Point;

const W: f64 = 900.0;
const H: f64 = 420.0;
const PANEL: f64 = 400.0;
const MARGIN: f64 = 40.0;

pub const OBSERVED_COLOR: &str = "#1f4fd1";
pub const PREDICTED_COLOR: &str = "#d62728";
pub const TRUTH_COLOR: &str = "#2ca02c";

struct Frame {
    min: Point,
    scale: f64,
    x0: f64,
}

impl Frame {
    fn map(&self, p: Point) -> (f64, f64) {
        let x = self.x0 + MARGIN + (p[0] - self.min[0]) * self.scale;
        let y = MARGIN + PANEL - (p[1] - self.min[1]) * self.scale;
        (x, y)
    }
}

fn polyline(out: &mut String, f: &Frame, pts: &[Point], color: &str, class: &str) {
    let coords: Vec<String> = pts
        .iter()
        .map(|&p| {
            let (x, y) = f.map(p);
            format!("{x:.2},{y:.2}")
        })
        .collect();
    let _ = writeln!(
        out,
        r#"<polyline class="{class}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
        coords.join(" ")
    );
}

fn axes(out: &mut String, x0: f64) {
    let (l, b, r, t) = (x0 + MARGIN, MARGIN + PANEL, x0 + MARGIN + PANEL, MARGIN);
    let _ = writeln!(out, r#"<line class="axis" x1="{l}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/>"#);
    let _ = writeln!(out, r#"<line class="axis" x1="{l}" y1="{b}" x2="{l}" y2="{t}" stroke="black"/>"#);
}

/// Render the first `samples` trajectories and the metric means.
pub fn render_svg(report: &EvalReport, samples: usize) -> String {
    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    axes(&mut out, 0.0);
    axes(&mut out, W / 2.0);

    let rows: Vec<_> = report.per_trajectory.iter().take(samples).collect();
    let all: Vec<Point> = rows
        .iter()
        .flat_map(|r| r.past.iter().chain(&r.best_prediction).chain(&r.ground_truth).copied())
        .filter(|p| p[0].is_finite() && p[1].is_finite())
        .collect();
    if !all.is_empty() {
        let min = [all.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min), all.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min)];
        let max = [all.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max), all.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max)];
        let span = (max[0] - min[0]).max(max[1] - min[1]).max(1e-9);
        let frame = Frame { min, scale: PANEL / span, x0: 0.0 };
        for r in &rows {
            let _ = writeln!(out, r#"<g class="trajectory" data-index="{}">"#, r.index);
            polyline(&mut out, &frame, &r.past, OBSERVED_COLOR, "observed");
            // predicted and ground-truth futures start from the last observed point
            let last = r.past.last().copied();
            let joined = |f: &[Point]| last.into_iter().chain(f.iter().copied()).collect::<Vec<_>>();
            polyline(&mut out, &frame, &joined(&r.best_prediction), PREDICTED_COLOR, "predicted");
            polyline(&mut out, &frame, &joined(&r.ground_truth), TRUTH_COLOR, "ground-truth");
            let _ = writeln!(out, "</g>");
        }
    }

    if report.n > 0 {
        let a = &report.aggregate;
        let bars = [("ADE", a.ade), ("FDE", a.fde), ("CS-ADE", a.cs_ade), ("CS-FDE", a.cs_fde)];
        let top = bars.iter().map(|b| b.1).filter(|v| v.is_finite()).fold(0.0, f64::max).max(1e-9);
        let slot = PANEL / bars.len() as f64;
        for (i, (name, v)) in bars.iter().enumerate() {
            let h = if v.is_finite() { v / top * (PANEL - 20.0) } else { 0.0 };
            let x = W / 2.0 + MARGIN + i as f64 * slot + slot * 0.2;
            let y = MARGIN + PANEL - h;
            let _ = writeln!(
                out,
                r##"<rect class="bar" x="{x:.2}" y="{y:.2}" width="{:.2}" height="{h:.2}" fill="#777777"/>"##,
                slot * 0.6
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{name} {v:.3}</text>"#,
                x + slot * 0.3,
                MARGIN + PANEL + 15.0
            );
        }
    }
    out.push_str("</svg>\n");
    out
}
