//! Deterministic SVG plots of traces and their derived analytics.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::analytics::{interpolated_area_plot, AreaSeries};
use crate::error::{Error, Result};
use crate::ham::MaskMode;
use crate::trace::TraceFile;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlotKind {
    Ham,
    Areas,
    Diff,
    Interp,
    Layerwise,
}

impl std::str::FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ham" => PlotKind::Ham,
            "areas" => PlotKind::Areas,
            "diff" => PlotKind::Diff,
            "interp" => PlotKind::Interp,
            "layerwise" => PlotKind::Layerwise,
            other => {
                return Err(Error::Config(format!("unknown plot kind `{other}` (ham, areas, diff, interp, layerwise)")))
            }
        })
    }
}

#[derive(Clone, Debug)]
pub struct PlotSpec {
    pub kind: PlotKind,
    /// Labelled traces; later traces are drawn darker.
    pub traces: Vec<(String, TraceFile)>,
    pub title: Option<String>,
    /// Grid size for interpolated area plots.
    pub grid: usize,
}

impl PlotSpec {
    pub fn new(kind: PlotKind, traces: Vec<(String, TraceFile)>) -> Self {
        PlotSpec { kind, traces, title: None, grid: 101 }
    }
}

const W: f64 = 720.0;
const H: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

const CAUSAL: (u8, u8, u8) = (31, 119, 180);
const ANTICAUSAL: (u8, u8, u8) = (214, 39, 40);
const PALETTE: [(u8, u8, u8); 8] = [
    (31, 119, 180),
    (214, 39, 40),
    (44, 160, 44),
    (148, 103, 189),
    (255, 127, 14),
    (140, 86, 75),
    (227, 119, 194),
    (23, 190, 207),
];

fn mode_colour(mode: MaskMode) -> (u8, u8, u8) {
    match mode {
        MaskMode::Causal => CAUSAL,
        MaskMode::Anticausal => ANTICAUSAL,
    }
}

/// Mixes `base` towards white; item `i` of `n` gets darker as `i` grows.
fn shade(base: (u8, u8, u8), i: usize, n: usize) -> String {
    let t = if n <= 1 { 1.0 } else { 0.3 + 0.7 * i as f64 / (n - 1) as f64 };
    let mix = |c: u8| (255.0 - t * (255.0 - f64::from(c))).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(base.0), mix(base.1), mix(base.2))
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn num(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn tick_label(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 {
        "0".into()
    } else if !(1e-3..1e4).contains(&a) {
        format!("{v:.2e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

struct Series {
    label: String,
    colour: String,
    dashed: bool,
    points: Vec<(f64, f64)>,
}

struct Marker {
    x: f64,
    y: f64,
    colour: String,
}

struct Chart {
    title: String,
    x_label: String,
    y_label: String,
    x_range: (f64, f64),
    y_range: Option<(f64, f64)>,
    series: Vec<Series>,
    markers: Vec<Marker>,
}

impl Chart {
    fn new(title: impl Into<String>, x_label: &str, y_label: &str, x_range: (f64, f64)) -> Self {
        Chart {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            x_range,
            y_range: None,
            series: Vec::new(),
            markers: Vec::new(),
        }
    }

    fn y_bounds(&self) -> (f64, f64) {
        if let Some(r) = self.y_range {
            return r;
        }
        let ys = self.series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).chain(self.markers.iter().map(|m| m.y));
        let (mut lo, mut hi) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), y| (l.min(y), h.max(y)));
        if !lo.is_finite() || !hi.is_finite() {
            return (0.0, 1.0);
        }
        lo = lo.min(0.0);
        if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
            hi = lo + 1.0;
        }
        let pad = 0.05 * (hi - lo);
        (if lo < 0.0 { lo - pad } else { lo }, hi + pad)
    }

    fn render(&self) -> String {
        let (x0, x1) = self.x_range;
        let (y0, y1) = self.y_bounds();
        let pw = W - LEFT - RIGHT;
        let ph = H - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, num(LEFT + pw / 2.0), esc(&self.title));

        for k in 0..=5 {
            let f = k as f64 / 5.0;
            let xv = x0 + f * (x1 - x0);
            let yv = y0 + f * (y1 - y0);
            let (px, py) = (sx(xv), sy(yv));
            let _ = writeln!(
                s,
                r##"<line x1="{px}" y1="{t}" x2="{px}" y2="{b}" stroke="#e6e6e6"/><text x="{px}" y="{ty}" text-anchor="middle">{lab}</text>"##,
                px = num(px),
                t = num(TOP),
                b = num(TOP + ph),
                ty = num(TOP + ph + 16.0),
                lab = tick_label(xv)
            );
            let _ = writeln!(
                s,
                r##"<line x1="{l}" y1="{py}" x2="{r}" y2="{py}" stroke="#e6e6e6"/><text x="{tx}" y="{ty}" text-anchor="end">{lab}</text>"##,
                l = num(LEFT),
                r = num(LEFT + pw),
                py = num(py),
                tx = num(LEFT - 6.0),
                ty = num(py + 4.0),
                lab = tick_label(yv)
            );
        }
        if y0 < 0.0 && y1 > 0.0 {
            let _ = writeln!(s, r##"<line x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="#888888"/>"##, num(LEFT), num(LEFT + pw), y = num(sy(0.0)));
        }
        let _ = writeln!(
            s,
            r##"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#333333"/>"##,
            num(LEFT),
            num(TOP),
            num(pw),
            num(ph)
        );
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, num(LEFT + pw / 2.0), num(H - 12.0), esc(&self.x_label));
        let _ = writeln!(
            s,
            r#"<text x="16" y="{y}" text-anchor="middle" transform="rotate(-90 16 {y})">{}</text>"#,
            esc(&self.y_label),
            y = num(TOP + ph / 2.0)
        );

        for ser in &self.series {
            let pts: Vec<String> = ser.points.iter().map(|&(x, y)| format!("{},{}", num(sx(x)), num(sy(y)))).collect();
            let dash = if ser.dashed { r#" stroke-dasharray="6 4""# } else { "" };
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{}" stroke-width="1.8"{dash} points="{}"/>"#,
                ser.colour,
                pts.join(" ")
            );
        }
        for m in &self.markers {
            let _ = writeln!(
                s,
                r##"<circle cx="{}" cy="{}" r="4.5" fill="{}" stroke="#000000"/>"##,
                num(sx(m.x)),
                num(sy(m.y)),
                m.colour
            );
        }
        for (i, ser) in self.series.iter().enumerate() {
            let y = TOP + 8.0 + 16.0 * i as f64;
            let x = W - RIGHT + 10.0;
            let dash = if ser.dashed { r#" stroke-dasharray="6 4""# } else { "" };
            let _ = writeln!(
                s,
                r#"<line x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="{}" stroke-width="2"{dash}/><text x="{}" y="{}">{}</text>"#,
                num(x),
                num(x + 22.0),
                ser.colour,
                num(x + 28.0),
                num(y + 4.0),
                esc(&ser.label),
                y = num(y)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn points(values: &[f64]) -> Vec<(f64, f64)> {
    values.iter().enumerate().map(|(i, &v)| (i as f64, v)).collect()
}

fn common_horizon(spec: &PlotSpec) -> Result<usize> {
    let h = spec.traces[0].1.horizon();
    if let Some((label, _)) = spec.traces.iter().find(|(_, t)| t.horizon() != h) {
        return Err(Error::Config(format!("trace `{label}` has a different horizon; use an interp plot")));
    }
    Ok(h)
}

fn suffix(label: &str, n: usize) -> String {
    if n > 1 {
        format!(" [{label}]")
    } else {
        String::new()
    }
}

fn ham_chart(spec: &PlotSpec, title: String) -> Result<Chart> {
    let h = common_horizon(spec)?;
    let mut chart = Chart::new(title, "cut ĥ", "gradient norm average", (0.0, h as f64));
    let n = spec.traces.len();
    for (i, (label, t)) in spec.traces.iter().enumerate() {
        let (lines, _) = t.compute_areas(t.line_scope())?;
        for (c, l) in t.curves.iter().zip(&lines) {
            let colour = shade(mode_colour(c.mode), i, n);
            chart.series.push(Series {
                label: format!("{}{}", c.mode, suffix(label, n)),
                colour: colour.clone(),
                dashed: false,
                points: points(&c.overall),
            });
            chart.series.push(Series {
                label: format!("{} line{}", c.mode, suffix(label, n)),
                colour,
                dashed: true,
                points: vec![(0.0, l.at(0.0)), (h as f64, l.at(h as f64))],
            });
        }
        if !t.partial {
            let e = t.compute_difference()?.equivariant;
            if e.found {
                chart.markers.push(Marker { x: e.t, y: e.value, colour: shade((0, 0, 0), i, n) });
            }
        }
    }
    Ok(chart)
}

fn areas_chart(spec: &PlotSpec, title: String) -> Result<Chart> {
    let h = common_horizon(spec)?;
    let mut chart = Chart::new(title, "cut ĥ", "cumulative signed area A(ĥ)", (0.0, h as f64));
    let n = spec.traces.len();
    for (i, (label, t)) in spec.traces.iter().enumerate() {
        let (_, areas) = t.compute_areas(t.line_scope())?;
        for a in &areas {
            chart.series.push(Series {
                label: format!("A {}{}", a.mode, suffix(label, n)),
                colour: shade(mode_colour(a.mode), i, n),
                dashed: false,
                points: points(&a.values),
            });
        }
    }
    Ok(chart)
}

fn diff_chart(spec: &PlotSpec, title: String) -> Result<Chart> {
    let h = common_horizon(spec)?;
    let mut chart = Chart::new(title, "t", "normalized difference d(t)", (0.0, h as f64));
    chart.y_range = Some((-1.1, 1.1));
    let n = spec.traces.len();
    for (i, (label, t)) in spec.traces.iter().enumerate() {
        let d = t.compute_difference()?;
        let colour = shade((60, 60, 60), i, n);
        chart.series.push(Series { label: format!("d{}", suffix(label, n)), colour: colour.clone(), dashed: false, points: points(&d.values) });
        for &x in &d.equivariant.crossings {
            chart.markers.push(Marker { x, y: -1.0, colour: colour.clone() });
        }
    }
    Ok(chart)
}

fn interp_chart(spec: &PlotSpec, title: String) -> Result<Chart> {
    if spec.traces.len() < 2 {
        return Err(Error::Config("an interpolated area plot needs at least 2 traces".into()));
    }
    let mut series = Vec::new();
    for (label, t) in &spec.traces {
        let (_, areas) = t.compute_areas(t.line_scope())?;
        series.extend(areas.into_iter().map(|a| AreaSeries { label: label.clone(), mode: a.mode, values: a.values }));
    }
    let plot = interpolated_area_plot(&series, spec.grid)?;
    let mut chart = Chart::new(title, "ĥ / H", "A(ĥ) / max |A|", (0.0, 1.0));
    chart.y_range = Some((-1.05, 1.05));
    let labels: Vec<&String> = spec.traces.iter().map(|t| &t.0).collect();
    for s in &plot.series {
        let i = labels.iter().position(|l| **l == s.label).unwrap_or(0);
        chart.series.push(Series {
            label: format!("{} {}", s.label, s.mode),
            colour: shade(PALETTE[i % PALETTE.len()], 1, 1),
            dashed: s.mode == MaskMode::Anticausal,
            points: plot.x.iter().copied().zip(s.y.iter().copied()).collect(),
        });
    }
    Ok(chart)
}

fn layerwise_chart(spec: &PlotSpec, title: String) -> Result<Chart> {
    let h = common_horizon(spec)?;
    let mut chart = Chart::new(title, "cut ĥ", "layer gradient norm average", (0.0, h as f64));
    let n = spec.traces.len();
    for (i, (label, t)) in spec.traces.iter().enumerate() {
        if t.curves.iter().all(|c| c.per_layer.is_empty()) {
            return Err(Error::Config(format!("trace `{label}` has no per-layer curves")));
        }
        for c in &t.curves {
            for (j, (name, v)) in c.per_layer.iter().enumerate() {
                chart.series.push(Series {
                    label: format!("{name} {}{}", c.mode, suffix(label, n)),
                    colour: shade(PALETTE[j % PALETTE.len()], i, n),
                    dashed: c.mode == MaskMode::Anticausal,
                    points: points(v),
                });
            }
        }
    }
    Ok(chart)
}

/// Renders `spec` to an SVG document.
pub fn render(spec: &PlotSpec) -> Result<String> {
    if spec.traces.is_empty() {
        return Err(Error::Config("nothing to plot: no traces".into()));
    }
    let first = &spec.traces[0].1;
    let default_title = match spec.kind {
        PlotKind::Ham => format!("Horizon activation map ({} model)", first.model.kind),
        PlotKind::Areas => "Signed areas against proportionality lines".to_string(),
        PlotKind::Diff => "Causal minus anticausal, normalized".to_string(),
        PlotKind::Interp => "Interpolated area plot".to_string(),
        PlotKind::Layerwise => format!("Layer-wise horizon activation map ({} model)", first.model.kind),
    };
    let title = spec.title.clone().unwrap_or(default_title);
    let chart = match spec.kind {
        PlotKind::Ham => ham_chart(spec, title)?,
        PlotKind::Areas => areas_chart(spec, title)?,
        PlotKind::Diff => diff_chart(spec, title)?,
        PlotKind::Interp => interp_chart(spec, title)?,
        PlotKind::Layerwise => layerwise_chart(spec, title)?,
    };
    Ok(chart.render())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::tests::sample;

    fn spec(kind: PlotKind, n: usize) -> PlotSpec {
        PlotSpec::new(kind, (0..n).map(|i| (format!("epoch {i}"), sample(6))).collect())
    }

    #[test]
    fn every_kind_renders_deterministically() {
        for kind in [PlotKind::Ham, PlotKind::Areas, PlotKind::Diff, PlotKind::Interp, PlotKind::Layerwise] {
            let s = spec(kind, 2);
            let a = render(&s).unwrap();
            assert_eq!(a, render(&s).unwrap());
            assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
            assert!(a.contains("<polyline"));
        }
    }

    #[test]
    fn diff_marks_crossings_on_the_floor() {
        let svg = render(&spec(PlotKind::Diff, 1)).unwrap();
        let floor = format!("cy=\"{}\"", num(TOP + (H - TOP - BOTTOM) - (-1.0 + 1.1) / 2.2 * (H - TOP - BOTTOM)));
        assert!(svg.contains(&floor), "{svg}");
    }

    #[test]
    fn all_zero_curves_render_flat() {
        let mut t = sample(4);
        for c in &mut t.curves {
            c.overall.iter_mut().for_each(|v| *v = 0.0);
        }
        let svg = render(&PlotSpec::new(PlotKind::Ham, vec![("z".into(), t)])).unwrap();
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn interp_needs_two_traces() {
        assert!(render(&spec(PlotKind::Interp, 1)).is_err());
        assert!(render(&PlotSpec::new(PlotKind::Ham, vec![])).is_err());
    }

    #[test]
    fn later_traces_are_darker() {
        assert_eq!(shade((0, 0, 0), 0, 1), "#000000");
        let light = shade(CAUSAL, 0, 3);
        let dark = shade(CAUSAL, 2, 3);
        assert!(light > dark);
    }
}
