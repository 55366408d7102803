//! Geometry over HAM curves: proportionality lines, cumulative signed areas,
//! equivariant points, difference curves and interpolated area plots.
//!
//! Every function works on plain value slices with `H + 1` points, read as a
//! piecewise-linear curve over `[0, H]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ham::{HamCurve, MaskMode};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LineScope {
    /// Each mode uses its own maximum.
    #[default]
    PerMode,
    /// Both modes share the maximum over both curves.
    Global,
}

impl std::str::FromStr for LineScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-mode" => Ok(LineScope::PerMode),
            "global" => Ok(LineScope::Global),
            other => Err(Error::Config(format!("unknown line scope `{other}` (per-mode, global)"))),
        }
    }
}

/// The straight line a curve follows when gradient mass is spread evenly
/// over the horizon.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProportionalityLine {
    pub mode: MaskMode,
    pub horizon: usize,
    pub g: f64,
}

impl ProportionalityLine {
    pub fn new(mode: MaskMode, horizon: usize, g: f64) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Config("horizon must be >= 1".into()));
        }
        if !(g >= 0.0) || !g.is_finite() {
            return Err(Error::Config(format!("line height {g} must be finite and nonnegative")));
        }
        Ok(ProportionalityLine { mode, horizon, g })
    }

    /// Height of the line at `x ∈ [0, H]`.
    pub fn at(&self, x: f64) -> f64 {
        let h = self.horizon as f64;
        match self.mode {
            MaskMode::Causal => self.g * x / h,
            MaskMode::Anticausal => self.g * (h - x) / h,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        (0..=self.horizon).map(|i| self.at(i as f64)).collect()
    }
}

fn check_curve(values: &[f64]) -> Result<usize> {
    if values.len() < 2 {
        return Err(Error::shape("curve", format!("need at least 2 points, got {}", values.len())));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("curve value {i} is not finite")));
    }
    Ok(values.len() - 1)
}

fn curve_max(values: &[f64]) -> f64 {
    values.iter().copied().fold(0.0, f64::max)
}

/// Per-mode line of a curve.
pub fn proportionality_line(curve: &HamCurve) -> Result<ProportionalityLine> {
    check_curve(&curve.overall)?;
    ProportionalityLine::new(curve.mode, curve.horizon, curve_max(&curve.overall))
}

/// Lines for every supplied curve under `scope`.
pub fn proportionality_lines(curves: &[&HamCurve], scope: LineScope) -> Result<Vec<ProportionalityLine>> {
    if curves.is_empty() {
        return Err(Error::Config("no curves".into()));
    }
    let global = curves.iter().map(|c| curve_max(&c.overall)).fold(0.0, f64::max);
    curves
        .iter()
        .map(|c| match scope {
            LineScope::PerMode => proportionality_line(c),
            LineScope::Global => {
                check_curve(&c.overall)?;
                ProportionalityLine::new(c.mode, c.horizon, global)
            }
        })
        .collect()
}

/// A maximal stretch where the curve is strictly above (`sign = 1`) or
/// strictly below (`sign = -1`) its line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub sign: i8,
    pub start: f64,
    pub end: f64,
    /// Closed polygon: curve points left to right, then the line back.
    pub vertices: Vec<[f64; 2]>,
    /// Signed area, positive above the line.
    pub area: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AreaCurve {
    pub mode: MaskMode,
    /// `A(ĥ)` for `ĥ = 0..=H`.
    pub values: Vec<f64>,
    pub regions: Vec<Region>,
}

impl AreaCurve {
    pub fn horizon(&self) -> usize {
        self.values.len() - 1
    }
}

/// Shoelace area, positive for counter-clockwise polygons. Coordinates are
/// taken relative to the first vertex to limit cancellation.
pub fn shoelace(poly: &[[f64; 2]]) -> f64 {
    let Some(&[x0, y0]) = poly.first() else { return 0.0 };
    let n = poly.len();
    let mut s = 0.0;
    for i in 0..n {
        let [xa, ya] = poly[i];
        let [xb, yb] = poly[(i + 1) % n];
        s += (xa - x0) * (yb - y0) - (xb - x0) * (ya - y0);
    }
    0.5 * s
}

fn interp(values: &[f64], x: f64) -> f64 {
    let last = values.len() - 1;
    let x = x.clamp(0.0, last as f64);
    let i = (x.floor() as usize).min(last - 1);
    let f = x - i as f64;
    if f == 0.0 {
        values[i]
    } else {
        values[i] + f * (values[i + 1] - values[i])
    }
}

/// Polygon between the curve and the line over `[a, b]`; curve vertices at
/// integers strictly inside are kept.
fn band_polygon(values: &[f64], line: &ProportionalityLine, a: f64, b: f64) -> Vec<[f64; 2]> {
    let mut poly = vec![[a, interp(values, a)]];
    let mut k = a.floor() as usize + 1;
    while (k as f64) < b {
        poly.push([k as f64, values[k]]);
        k += 1;
    }
    poly.push([b, interp(values, b)]);
    poly.push([b, line.at(b)]);
    poly.push([a, line.at(a)]);
    poly
}

/// Cumulative signed area between `values` and `line`, clipped by a vertical
/// cut at each integer `ĥ`.
pub fn signed_area(values: &[f64], line: &ProportionalityLine) -> Result<AreaCurve> {
    let h = check_curve(values)?;
    if h != line.horizon {
        return Err(Error::shape("signed_area", format!("curve has horizon {h}, line has {}", line.horizon)));
    }
    let diff: Vec<f64> = (0..=h).map(|i| values[i] - line.at(i as f64)).collect();
    let sign = |v: f64| -> i8 {
        if v > 0.0 {
            1
        } else if v < 0.0 {
            -1
        } else {
            0
        }
    };

    // Pieces between consecutive breakpoints (integers and crossings).
    let mut pieces: Vec<(f64, f64, i8)> = Vec::new();
    for i in 0..h {
        let (d0, d1) = (diff[i], diff[i + 1]);
        let (s0, s1) = (sign(d0), sign(d1));
        let (a, b) = (i as f64, (i + 1) as f64);
        if s0 * s1 < 0 {
            let x = a + d0 / (d0 - d1);
            pieces.push((a, x, s0));
            pieces.push((x, b, s1));
        } else {
            pieces.push((a, b, if s0 != 0 { s0 } else { s1 }));
        }
    }

    let mut spans: Vec<(f64, f64, i8)> = Vec::new();
    for (a, b, s) in pieces {
        if s == 0 {
            continue;
        }
        match spans.last_mut() {
            // Merge only across an integer vertex that is off the line.
            Some(last) if last.2 == s && last.1 == a && a.fract() == 0.0 && diff[a as usize] != 0.0 => last.1 = b,
            _ => spans.push((a, b, s)),
        }
    }

    let regions: Vec<Region> = spans
        .into_iter()
        .map(|(start, end, s)| {
            let vertices = band_polygon(values, line, start, end);
            // Curve left-to-right then line back is clockwise when above.
            let area = -shoelace(&vertices);
            Region { sign: s, start, end, vertices, area }
        })
        .collect();

    let mut out = vec![0.0; h + 1];
    let (mut done, mut next) = (0.0, 0);
    for (cut, slot) in out.iter_mut().enumerate() {
        let c = cut as f64;
        while next < regions.len() && regions[next].end <= c {
            done += regions[next].area;
            next += 1;
        }
        *slot = match regions.get(next) {
            Some(r) if r.start < c => done - shoelace(&band_polygon(values, line, r.start, c)),
            _ => done,
        };
    }
    Ok(AreaCurve { mode: line.mode, values: out, regions })
}

/// Where the causal and anticausal curves meet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivariantPoint {
    /// First crossing; 0 when none was found.
    pub t: f64,
    /// The common value of both curves at `t`.
    pub value: f64,
    pub found: bool,
    /// Set when the curves coincide on a whole interval, so every point
    /// there is a crossing.
    pub degenerate: bool,
    pub crossings: Vec<f64>,
}

fn shared_horizon(causal: &[f64], anticausal: &[f64]) -> Result<usize> {
    let h = check_curve(causal)?;
    let ha = check_curve(anticausal)?;
    if h != ha {
        return Err(Error::shape("curve pair", format!("causal horizon {h} != anticausal horizon {ha}")));
    }
    Ok(h)
}

pub fn equivariant_point(causal: &[f64], anticausal: &[f64]) -> Result<EquivariantPoint> {
    let h = shared_horizon(causal, anticausal)?;
    let raw: Vec<f64> = causal.iter().zip(anticausal).map(|(c, a)| c - a).collect();
    let mut crossings = Vec::new();
    let mut degenerate = false;
    for t in 0..=h {
        if raw[t] == 0.0 {
            crossings.push(t as f64);
            if t < h && raw[t + 1] == 0.0 {
                degenerate = true;
            }
        } else if t < h && raw[t + 1] != 0.0 && (raw[t] > 0.0) != (raw[t + 1] > 0.0) {
            crossings.push(t as f64 + raw[t] / (raw[t] - raw[t + 1]));
        }
    }
    let found = !crossings.is_empty();
    let t = crossings.first().copied().unwrap_or(0.0);
    let value = if found { interp(causal, t) } else { 0.0 };
    Ok(EquivariantPoint { t, value, found, degenerate, crossings })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DifferenceCurve {
    /// `d(t)` in `[-1, 1]`.
    pub values: Vec<f64>,
    /// Largest absolute raw difference; 0 when the curves are identical.
    pub normalizer: f64,
    pub equivariant: EquivariantPoint,
}

pub fn difference_curve(causal: &[f64], anticausal: &[f64]) -> Result<DifferenceCurve> {
    shared_horizon(causal, anticausal)?;
    let raw: Vec<f64> = causal.iter().zip(anticausal).map(|(c, a)| c - a).collect();
    let normalizer = raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let values = if normalizer > 0.0 {
        raw.iter().map(|v| (v / normalizer).clamp(-1.0, 1.0)).collect()
    } else {
        vec![0.0; raw.len()]
    };
    Ok(DifferenceCurve { values, normalizer, equivariant: equivariant_point(causal, anticausal)? })
}

/// One area curve to place on the shared `[0, 1]` axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AreaSeries {
    pub label: String,
    pub mode: MaskMode,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpolatedSeries {
    pub label: String,
    pub mode: MaskMode,
    pub horizon: usize,
    pub y: Vec<f64>,
    /// The source areas were all zero, so `y` is all zero.
    pub all_zero: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpolatedAreaPlot {
    pub x: Vec<f64>,
    pub series: Vec<InterpolatedSeries>,
}

pub fn interpolated_area_plot(series: &[AreaSeries], grid: usize) -> Result<InterpolatedAreaPlot> {
    if series.is_empty() {
        return Err(Error::Config("no area curves to interpolate".into()));
    }
    if grid < 2 {
        return Err(Error::Config(format!("grid size {grid} must be >= 2")));
    }
    let x: Vec<f64> = (0..grid).map(|i| i as f64 / (grid - 1) as f64).collect();
    let mut out = Vec::with_capacity(series.len());
    for s in series {
        let h = check_curve(&s.values)?;
        let peak = s.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let y = x
            .iter()
            .map(|&xi| if peak > 0.0 { (interp(&s.values, xi * h as f64) / peak).clamp(-1.0, 1.0) } else { 0.0 })
            .collect();
        out.push(InterpolatedSeries { label: s.label.clone(), mode: s.mode, horizon: h, y, all_zero: peak == 0.0 });
    }
    Ok(InterpolatedAreaPlot { x, series: out })
}
