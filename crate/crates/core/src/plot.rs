//! Deterministic, dependency-free SVG renderers for the pipeline's
//! diagnostic figures: multi-series line charts, the smoothing-sweep
//! objective curve, measured-vs-reconstructed overlays, and planar phase
//! portraits combining a direction field, an integrated trajectory, and
//! the located critical points.
//!
//! Every renderer is a pure function of its inputs — coordinates are
//! formatted with fixed precision and series are drawn in input order —
//! so artifacts are reproducible bitwise across runs.

use crate::ode::{QuadraticModel, Trajectory};
use crate::stability::{CriticalPoint, StabilityClass};
use crate::sweep::SweepReport;
use nalgebra::Vector2;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("nothing to plot: {0}")]
    Empty(&'static str),
    #[error("non-finite coordinate in series '{0}'")]
    NonFinite(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 520.0;
const MARGIN_LEFT: f64 = 72.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 48.0;
const MARGIN_BOTTOM: f64 = 56.0;

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

/// How a series is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesKind {
    Line,
    Scatter,
}

/// One labelled data series for [`line_chart`].
#[derive(Debug, Clone)]
pub struct PlotSeries {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub kind: SeriesKind,
}

impl PlotSeries {
    pub fn line(label: &str, points: Vec<(f64, f64)>) -> Self {
        PlotSeries {
            label: label.to_string(),
            points,
            kind: SeriesKind::Line,
        }
    }

    pub fn scatter(label: &str, points: Vec<(f64, f64)>) -> Self {
        PlotSeries {
            label: label.to_string(),
            points,
            kind: SeriesKind::Scatter,
        }
    }
}

/// Data-to-pixel mapping for the plot area.
struct Frame {
    x_lo: f64,
    x_hi: f64,
    y_lo: f64,
    y_hi: f64,
}

impl Frame {
    /// Padded bounds around the data extents; degenerate spans get a unit
    /// of slack so single points still render.
    fn around(xs: impl Iterator<Item = f64>, ys: impl Iterator<Item = f64>) -> Frame {
        let bound = |it: &mut dyn Iterator<Item = f64>| {
            it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            })
        };
        let (mut x_lo, mut x_hi) = bound(&mut { xs });
        let (mut y_lo, mut y_hi) = bound(&mut { ys });
        let pad = |lo: &mut f64, hi: &mut f64| {
            let span = *hi - *lo;
            let p = if span > 0.0 {
                0.05 * span
            } else {
                0.5 + lo.abs() * 0.05
            };
            *lo -= p;
            *hi += p;
        };
        pad(&mut x_lo, &mut x_hi);
        pad(&mut y_lo, &mut y_hi);
        Frame {
            x_lo,
            x_hi,
            y_lo,
            y_hi,
        }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN_LEFT
            + (x - self.x_lo) / (self.x_hi - self.x_lo) * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    /// SVG y grows downward, data y grows upward.
    fn py(&self, y: f64) -> f64 {
        HEIGHT
            - MARGIN_BOTTOM
            - (y - self.y_lo) / (self.y_hi - self.y_lo) * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    }
}

/// Fixed-precision pixel coordinate (keeps output small and reproducible).
fn px(v: f64) -> String {
    format!("{v:.2}")
}

/// Round tick positions covering `[lo, hi]` using a 1-2-5 step ladder.
fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let span = hi - lo;
    if !(span > 0.0) || target == 0 {
        return vec![lo];
    }
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let step = mag
        * if norm <= 1.5 {
            1.0
        } else if norm <= 3.0 {
            2.0
        } else if norm <= 7.0 {
            5.0
        } else {
            10.0
        };
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + step * 1e-9 {
        // Snap values like -0.0 or 0.30000000000000004 onto the step grid.
        out.push((t / step).round() * step);
        t += step;
    }
    out
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if !(1e-3..1e5).contains(&a) {
        return format!("{v:.1e}");
    }
    let mut s = format!("{v:.4}");
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    s
}

fn validate(series: &[PlotSeries]) -> Result<(), PlotError> {
    if series.is_empty() || series.iter().all(|s| s.points.is_empty()) {
        return Err(PlotError::Empty("no series or all series empty"));
    }
    for s in series {
        if s.points
            .iter()
            .any(|(x, y)| !x.is_finite() || !y.is_finite())
        {
            return Err(PlotError::NonFinite(s.label.clone()));
        }
    }
    Ok(())
}

fn open_svg(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"monospace\" font-size=\"12\">"
    );
    let _ = writeln!(
        out,
        "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>"
    );
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>",
        px(WIDTH / 2.0),
        escape(title)
    );
}

fn draw_axes(out: &mut String, frame: &Frame, x_label: &str, y_label: &str) {
    let (x0, x1) = (MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
    let (y0, y1) = (HEIGHT - MARGIN_BOTTOM, MARGIN_TOP);
    let _ = writeln!(
        out,
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#333\"/>",
        px(x0),
        px(y1),
        px(x1 - x0),
        px(y0 - y1)
    );
    for t in nice_ticks(frame.x_lo, frame.x_hi, 8) {
        let xp = frame.px(t);
        let _ = writeln!(
            out,
            "<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"#333\"/>",
            px(xp),
            px(y0),
            px(y0 + 5.0)
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            px(xp),
            px(y0 + 20.0),
            fmt_tick(t)
        );
    }
    for t in nice_ticks(frame.y_lo, frame.y_hi, 6) {
        let yp = frame.py(t);
        let _ = writeln!(
            out,
            "<line x1=\"{0}\" y1=\"{2}\" x2=\"{1}\" y2=\"{2}\" stroke=\"#333\"/>",
            px(x0 - 5.0),
            px(x0),
            px(yp)
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" dominant-baseline=\"middle\">{}</text>",
            px(x0 - 9.0),
            px(yp),
            fmt_tick(t)
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
        px((x0 + x1) / 2.0),
        px(HEIGHT - 14.0),
        escape(x_label)
    );
    let _ = writeln!(
        out,
        "<text x=\"18\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">{}</text>",
        px((y0 + y1) / 2.0),
        px((y0 + y1) / 2.0),
        escape(y_label)
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Render labelled series over shared axes. Series are drawn (and colored)
/// in input order; the legend sits inside the top-right corner.
pub fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[PlotSeries],
) -> Result<String, PlotError> {
    validate(series)?;
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let ys = series.iter().flat_map(|s| s.points.iter().map(|p| p.1));
    let frame = Frame::around(xs, ys);
    let mut out = String::new();
    open_svg(&mut out, title);
    draw_axes(&mut out, &frame, x_label, y_label);
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        match s.kind {
            SeriesKind::Line => {
                let pts: Vec<String> = s
                    .points
                    .iter()
                    .map(|(x, y)| format!("{},{}", px(frame.px(*x)), px(frame.py(*y))))
                    .collect();
                let _ = writeln!(
                    out,
                    "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
                    pts.join(" ")
                );
            }
            SeriesKind::Scatter => {
                for (x, y) in &s.points {
                    let _ = writeln!(
                        out,
                        "<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"{color}\"/>",
                        px(frame.px(*x)),
                        px(frame.py(*y))
                    );
                }
            }
        }
        // Legend row i.
        let ly = MARGIN_TOP + 14.0 + 16.0 * i as f64;
        let lx = WIDTH - MARGIN_RIGHT - 150.0;
        let _ = writeln!(
            out,
            "<line x1=\"{}\" y1=\"{2}\" x2=\"{}\" y2=\"{2}\" stroke=\"{color}\" stroke-width=\"3\"/>",
            px(lx),
            px(lx + 18.0),
            px(ly)
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" dominant-baseline=\"middle\">{}</text>",
            px(lx + 24.0),
            px(ly),
            escape(&s.label)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Objective curve of the smoothing sweep: worst per-species average RMSE
/// against the smoothing factor, with the selected factor marked. Grid
/// cells where no station fit succeeded are omitted from the curve.
pub fn sweep_chart(report: &SweepReport) -> Result<String, PlotError> {
    let curve: Vec<(f64, f64)> = report
        .avg_rmse
        .iter()
        .filter_map(|c| c.worst.map(|w| (c.alpha, w)))
        .collect();
    if curve.is_empty() {
        return Err(PlotError::Empty("no feasible sweep cells"));
    }
    let series = [
        PlotSeries::line("worst avg RMSE", curve),
        PlotSeries::scatter(
            "selected alpha",
            vec![(report.alpha_star, report.objective)],
        ),
    ];
    line_chart(
        "Smoothing sweep objective",
        "smoothing factor",
        "worst average RMSE",
        &series,
    )
}

/// Overlay of the measured first coordinate and the corrected delay
/// reconstruction of the second, on the shared time axis.
pub fn reconstruction_chart(
    times: &[f64],
    measured: &[f64],
    reconstructed: &[f64],
) -> Result<String, PlotError> {
    if times.len() != measured.len() || times.len() != reconstructed.len() {
        return Err(PlotError::Empty("mismatched reconstruction lengths"));
    }
    let pair = |ys: &[f64]| times.iter().copied().zip(ys.iter().copied()).collect();
    let series = [
        PlotSeries::line("measured", pair(measured)),
        PlotSeries::line("reconstructed", pair(reconstructed)),
    ];
    line_chart(
        "Delay-embedding reconstruction",
        "time (h)",
        "standardized concentration",
        &series,
    )
}

/// Phase-portrait configuration: plotting window, direction-field
/// resolution, and axis labels.
#[derive(Debug, Clone)]
pub struct PortraitOptions {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    /// Direction-field nodes per axis.
    pub quiver: usize,
    /// Plot critical points in original units (`physical`) instead of
    /// standardized coordinates.
    pub physical_coords: bool,
}

impl PortraitOptions {
    /// Standardized-coordinate window sized to cover a trajectory and the
    /// real critical points, with 15% slack.
    pub fn covering(
        title: &str,
        trajectory: Option<&Trajectory>,
        points: &[CriticalPoint],
    ) -> Self {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        if let Some(t) = trajectory {
            xs.extend(t.states.iter().map(|s| s[0]));
            ys.extend(t.states.iter().map(|s| s[1]));
        }
        for p in points.iter().filter(|p| p.is_real) {
            xs.push(p.z[0].re);
            ys.push(p.z[1].re);
        }
        if xs.is_empty() {
            xs = vec![-1.0, 1.0];
            ys = vec![-1.0, 1.0];
        }
        let range = |v: &[f64]| {
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let pad = if hi > lo { 0.15 * (hi - lo) } else { 1.0 };
            (lo - pad, hi + pad)
        };
        PortraitOptions {
            title: title.to_string(),
            x_label: "y1 (standardized NO2)".to_string(),
            y_label: "y2 (standardized O3)".to_string(),
            x_range: range(&xs),
            y_range: range(&ys),
            quiver: 20,
            physical_coords: false,
        }
    }
}

fn class_style(class: Option<StabilityClass>) -> (&'static str, &'static str) {
    // (fill, stroke): solid markers for attracting classes, hollow for
    // repelling ones, saddle and degenerate in their own hues.
    match class {
        Some(StabilityClass::StableNode) => ("#2ca02c", "#2ca02c"),
        Some(StabilityClass::UnstableNode) => ("white", "#d62728"),
        Some(StabilityClass::StableSpiral) => ("#1f77b4", "#1f77b4"),
        Some(StabilityClass::UnstableSpiral) => ("white", "#9467bd"),
        Some(StabilityClass::Saddle) => ("#ff7f0e", "#ff7f0e"),
        Some(StabilityClass::Degenerate) | None => ("#7f7f7f", "#7f7f7f"),
    }
}

/// Phase portrait of a planar quadratic model: a direction field sampled
/// on a regular grid (arrow length fixed, orientation from the vector
/// field), an optional integrated trajectory, and markers for the real
/// critical points colored by stability class.
pub fn phase_portrait(
    model: &QuadraticModel,
    trajectory: Option<&Trajectory>,
    points: &[CriticalPoint],
    opts: &PortraitOptions,
) -> Result<String, PlotError> {
    if !(opts.x_range.0 < opts.x_range.1 && opts.y_range.0 < opts.y_range.1) {
        return Err(PlotError::Empty("empty portrait window"));
    }
    if opts.quiver < 2 {
        return Err(PlotError::Empty("quiver grid needs at least 2 nodes"));
    }
    let frame = Frame {
        x_lo: opts.x_range.0,
        x_hi: opts.x_range.1,
        y_lo: opts.y_range.0,
        y_hi: opts.y_range.1,
    };
    let mut out = String::new();
    open_svg(&mut out, &opts.title);
    draw_axes(&mut out, &frame, &opts.x_label, &opts.y_label);

    // Direction field: unit-length arrows at grid nodes.
    let n = opts.quiver;
    let cell_w = (WIDTH - MARGIN_LEFT - MARGIN_RIGHT) / n as f64;
    let cell_h = (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM) / n as f64;
    let arm = 0.38 * cell_w.min(cell_h);
    for i in 0..n {
        for j in 0..n {
            let x = frame.x_lo + (i as f64 + 0.5) / n as f64 * (frame.x_hi - frame.x_lo);
            let y = frame.y_lo + (j as f64 + 0.5) / n as f64 * (frame.y_hi - frame.y_lo);
            let v = model.evaluate_rhs(&Vector2::new(x, y));
            let norm = v.norm();
            if !norm.is_finite() || norm < 1e-12 {
                continue;
            }
            // Pixel-space direction (y flipped).
            let (dx, dy) = (v[0] / norm, -v[1] / norm);
            let (cx, cy) = (frame.px(x), frame.py(y));
            let (tx, ty) = (cx + dx * arm, cy + dy * arm);
            let (bx, by) = (cx - dx * arm, cy - dy * arm);
            // Shaft plus a two-segment head rotated ±30 degrees off the
            // reversed direction.
            let (hx, hy) = (-dx, -dy);
            let (c30, s30) = (0.866_025_403_784_438_6, 0.5);
            let h1 = (hx * c30 - hy * s30, hx * s30 + hy * c30);
            let h2 = (hx * c30 + hy * s30, -hx * s30 + hy * c30);
            let head = arm * 0.5;
            let _ = writeln!(
                out,
                "<path class=\"quiver\" d=\"M{},{} L{},{} M{},{} L{},{} M{},{} L{},{}\" \
                 stroke=\"#999\" fill=\"none\" stroke-width=\"1\"/>",
                px(bx),
                px(by),
                px(tx),
                px(ty),
                px(tx),
                px(ty),
                px(tx + h1.0 * head),
                px(ty + h1.1 * head),
                px(tx),
                px(ty),
                px(tx + h2.0 * head),
                px(ty + h2.1 * head)
            );
        }
    }

    if let Some(t) = trajectory {
        let pts: Vec<String> = t
            .states
            .iter()
            .map(|s| format!("{},{}", px(frame.px(s[0])), px(frame.py(s[1]))))
            .collect();
        let _ = writeln!(
            out,
            "<polyline class=\"trajectory\" points=\"{}\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\"/>",
            pts.join(" ")
        );
    }

    for p in points.iter().filter(|p| p.is_real) {
        let coords = if opts.physical_coords {
            match p.physical {
                Some(c) => c,
                None => continue,
            }
        } else {
            [p.z[0].re, p.z[1].re]
        };
        let (fill, stroke) = class_style(p.class);
        let label = p
            .class
            .map_or("unclassified".to_string(), |c| c.to_string());
        let _ = writeln!(
            out,
            "<circle class=\"critical-point\" cx=\"{}\" cy=\"{}\" r=\"6\" fill=\"{fill}\" \
             stroke=\"{stroke}\" stroke-width=\"2\"><title>{}</title></circle>",
            px(frame.px(coords[0])),
            px(frame.py(coords[1])),
            escape(&label)
        );
    }

    out.push_str("</svg>\n");
    Ok(out)
}

/// Write a rendered SVG string to disk.
pub fn write_svg(path: &Path, svg: &str) -> Result<(), PlotError> {
    std::fs::write(path, svg)?;
    Ok(())
}
