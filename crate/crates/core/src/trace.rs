//! Trace files: the JSON bundle of HAM curves plus the metadata needed to
//! analyse and render them without the model or data.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analytics::{
    difference_curve, proportionality_lines, signed_area, AreaCurve, DifferenceCurve, LineScope, ProportionalityLine,
};
use crate::error::{Error, Result};
use crate::ham::{HamCurve, MaskMode, NormKind, Reduction};

pub const TRACE_FORMAT: &str = "hamkit-trace";
pub const TRACE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMeta {
    /// Architecture name; free-form for traces produced elsewhere.
    pub kind: String,
    #[serde(default)]
    pub config_digest: Option<String>,
    #[serde(default)]
    pub epoch: Option<usize>,
    /// Batch size the model was trained with.
    #[serde(default)]
    pub train_batch_size: Option<usize>,
    pub lookback: usize,
    pub horizon: usize,
    #[serde(default)]
    pub param_count: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub split: String,
    pub lookback: usize,
    pub horizon: usize,
    pub stride: usize,
    pub windows: usize,
    #[serde(default)]
    pub scaler_digest: Option<String>,
    #[serde(default)]
    pub source: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HamMeta {
    /// Batch size used to average gradient norms.
    pub batch_size: usize,
    pub norm: NormKind,
    pub reduction: Reduction,
    pub train_mode: bool,
    pub seed: u64,
    /// `fast` or `naive`.
    pub method: String,
}

/// Conventions the derived analytics were computed under.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Conventions {
    pub line_scope: LineScope,
    pub area_clipping: String,
    pub difference_normalizer: String,
}

impl Conventions {
    pub fn new(scope: LineScope) -> Self {
        Conventions { line_scope: scope, area_clipping: "vertical".into(), difference_normalizer: "max-abs".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceAnalytics {
    pub conventions: Conventions,
    #[serde(default)]
    pub lines: Vec<ProportionalityLine>,
    #[serde(default)]
    pub areas: Vec<AreaCurve>,
    #[serde(default)]
    pub difference: Option<DifferenceCurve>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceFile {
    pub format: String,
    pub version: u32,
    pub model: ModelMeta,
    pub dataset: DatasetMeta,
    pub ham: HamMeta,
    /// One curve per mode, causal first.
    pub curves: Vec<HamCurve>,
    /// Set when only one mode is present.
    pub partial: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analytics: Option<TraceAnalytics>,
}

impl TraceFile {
    pub fn new(model: ModelMeta, dataset: DatasetMeta, ham: HamMeta, mut curves: Vec<HamCurve>) -> Result<Self> {
        curves.sort_by_key(|c| c.mode);
        let partial = curves.len() < 2;
        let t = TraceFile {
            format: TRACE_FORMAT.into(),
            version: TRACE_VERSION,
            model,
            dataset,
            ham,
            curves,
            partial,
            analytics: None,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn horizon(&self) -> usize {
        self.model.horizon
    }

    pub fn curve(&self, mode: MaskMode) -> Option<&HamCurve> {
        self.curves.iter().find(|c| c.mode == mode)
    }

    pub fn both(&self) -> Result<(&HamCurve, &HamCurve)> {
        match (self.curve(MaskMode::Causal), self.curve(MaskMode::Anticausal)) {
            (Some(c), Some(a)) => Ok((c, a)),
            (_, None) => Err(Error::validation("$.curves", "anticausal mode is missing")),
            (None, _) => Err(Error::validation("$.curves", "causal mode is missing")),
        }
    }

    /// Checks every invariant serde cannot express.
    pub fn validate(&self) -> Result<()> {
        if self.format != TRACE_FORMAT {
            return Err(Error::validation("$.format", format!("expected `{TRACE_FORMAT}`, found `{}`", self.format)));
        }
        if self.version != TRACE_VERSION {
            return Err(Error::validation("$.version", format!("unsupported version {}", self.version)));
        }
        let h = self.model.horizon;
        if h == 0 {
            return Err(Error::validation("$.model.horizon", "must be >= 1"));
        }
        if self.dataset.horizon != h {
            return Err(Error::validation("$.dataset.horizon", format!("{} differs from model horizon {h}", self.dataset.horizon)));
        }
        if self.curves.is_empty() {
            return Err(Error::validation("$.curves", "no curves"));
        }
        if self.curves.len() > 2 {
            return Err(Error::validation("$.curves", format!("{} curves; at most one per mode", self.curves.len())));
        }
        let mut seen = BTreeSet::new();
        for (i, c) in self.curves.iter().enumerate() {
            let at = format!("$.curves[{i}]");
            if !seen.insert(c.mode) {
                return Err(Error::validation(format!("{at}.mode"), format!("duplicate {} curve", c.mode)));
            }
            if c.horizon != h {
                return Err(Error::validation(format!("{at}.horizon"), format!("{} differs from model horizon {h}", c.horizon)));
            }
            check_values(&format!("{at}.overall"), &c.overall, h + 1)?;
            for (name, v) in &c.per_layer {
                check_values(&format!("{at}.per_layer.{name}"), v, h + 1)?;
            }
        }
        if self.partial != (self.curves.len() < 2) {
            return Err(Error::validation(
                "$.partial",
                format!("is {} but {} mode(s) are present", self.partial, self.curves.len()),
            ));
        }
        if let Some(a) = &self.analytics {
            for (i, l) in a.lines.iter().enumerate() {
                if l.horizon != h {
                    return Err(Error::validation(format!("$.analytics.lines[{i}].horizon"), "differs from model horizon"));
                }
            }
            for (i, ar) in a.areas.iter().enumerate() {
                if ar.values.len() != h + 1 {
                    return Err(Error::validation(
                        format!("$.analytics.areas[{i}].values"),
                        format!("expected {} values, found {}", h + 1, ar.values.len()),
                    ));
                }
            }
            if let Some(d) = &a.difference {
                if d.values.len() != h + 1 {
                    return Err(Error::validation(
                        "$.analytics.difference.values",
                        format!("expected {} values, found {}", h + 1, d.values.len()),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Parses and validates; schema errors name the offending JSON path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let t: TraceFile = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." { "$".to_string() } else { format!("$.{path}") };
            Error::validation(path, e.into_inner().to_string())
        })?;
        t.validate()?;
        Ok(t)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.validate()?;
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Lines and areas for every present mode.
    pub fn compute_areas(&self, scope: LineScope) -> Result<(Vec<ProportionalityLine>, Vec<AreaCurve>)> {
        let curves: Vec<&HamCurve> = self.curves.iter().collect();
        let lines = proportionality_lines(&curves, scope)?;
        let areas = curves
            .iter()
            .zip(&lines)
            .map(|(c, l)| signed_area(&c.overall, l))
            .collect::<Result<Vec<_>>>()?;
        Ok((lines, areas))
    }

    pub fn compute_difference(&self) -> Result<DifferenceCurve> {
        let (c, a) = self.both()?;
        difference_curve(&c.overall, &a.overall)
    }

    fn analytics_mut(&mut self, scope: LineScope) -> &mut TraceAnalytics {
        self.analytics.get_or_insert_with(|| TraceAnalytics {
            conventions: Conventions::new(scope),
            lines: Vec::new(),
            areas: Vec::new(),
            difference: None,
        })
    }

    /// Stores lines and areas; keeps an existing difference curve.
    pub fn attach_areas(&mut self, scope: LineScope) -> Result<()> {
        let (lines, areas) = self.compute_areas(scope)?;
        let a = self.analytics_mut(scope);
        a.conventions.line_scope = scope;
        a.lines = lines;
        a.areas = areas;
        Ok(())
    }

    pub fn attach_difference(&mut self) -> Result<()> {
        let d = self.compute_difference()?;
        self.analytics_mut(LineScope::default()).difference = Some(d);
        Ok(())
    }

    pub fn line_scope(&self) -> LineScope {
        self.analytics.as_ref().map(|a| a.conventions.line_scope).unwrap_or_default()
    }
}

fn check_values(path: &str, v: &[f64], expected: usize) -> Result<()> {
    if v.len() != expected {
        return Err(Error::validation(path, format!("expected {expected} values (H + 1), found {}", v.len())));
    }
    if let Some(i) = v.iter().position(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::validation(format!("{path}[{i}]"), format!("norm average {} must be finite and >= 0", v[i])));
    }
    Ok(())
}

/// Writes one row per cut with curves, lines, areas and the difference curve.
/// Columns depending on a missing mode are dropped and a `#` note says so.
pub fn export_csv(trace: &TraceFile, out: &mut impl Write) -> Result<()> {
    let h = trace.horizon();
    let (lines, areas) = trace.compute_areas(trace.line_scope())?;
    let mut cols: Vec<(&str, Vec<f64>)> = Vec::new();
    let causal = trace.curves.iter().position(|c| c.mode == MaskMode::Causal);
    let anti = trace.curves.iter().position(|c| c.mode == MaskMode::Anticausal);
    if let Some(i) = causal {
        cols.push(("causal", trace.curves[i].overall.clone()));
    }
    if let Some(i) = anti {
        cols.push(("anticausal", trace.curves[i].overall.clone()));
    }
    if let Some(i) = causal {
        cols.push(("line_c", lines[i].values()));
    }
    if let Some(i) = anti {
        cols.push(("line_a", lines[i].values()));
    }
    if let Some(i) = causal {
        cols.push(("A_c", areas[i].values.clone()));
    }
    if let Some(i) = anti {
        cols.push(("A_a", areas[i].values.clone()));
    }
    let io = |e| Error::io("<csv>", e);
    if trace.partial {
        let missing = if causal.is_none() { MaskMode::Causal } else { MaskMode::Anticausal };
        writeln!(out, "# partial trace: {missing} mode missing; its columns and d are omitted").map_err(io)?;
    } else {
        cols.push(("d", trace.compute_difference()?.values));
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["h"];
    header.extend(cols.iter().map(|c| c.0));
    w.write_record(&header)?;
    for t in 0..=h {
        let mut row = vec![t.to_string()];
        row.extend(cols.iter().map(|c| c.1[t].to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

/// Reads the curve columns of an exported CSV back.
pub fn import_csv(text: &str) -> Result<Vec<HamCurve>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let header = r.headers()?.clone();
    let idx = |name: &str| header.iter().position(|h| h == name);
    let cols: Vec<(MaskMode, usize)> = [(MaskMode::Causal, "causal"), (MaskMode::Anticausal, "anticausal")]
        .into_iter()
        .filter_map(|(m, n)| idx(n).map(|i| (m, i)))
        .collect();
    if cols.is_empty() {
        return Err(Error::validation("csv header", "neither `causal` nor `anticausal` column present"));
    }
    let mut values = vec![Vec::new(); cols.len()];
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        for (k, (_, i)) in cols.iter().enumerate() {
            let cell = rec.get(*i).unwrap_or("");
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::validation(format!("csv row {}, column {}", row + 1, &header[*i]), format!("`{cell}` is not a number")))?;
            values[k].push(v);
        }
    }
    if values[0].len() < 2 {
        return Err(Error::validation("csv", "need at least 2 rows"));
    }
    Ok(cols
        .iter()
        .zip(values)
        .map(|((mode, _), v)| HamCurve { mode: *mode, horizon: v.len() - 1, overall: v, per_layer: Default::default() })
        .collect())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn sample(h: usize) -> TraceFile {
        let causal: Vec<f64> = (0..=h).map(|i| (i as f64).sqrt() * 1.1).collect();
        let anti: Vec<f64> = (0..=h).map(|i| ((h - i) as f64).powf(0.7) * 0.3 + 1e-17 * i as f64).collect();
        let mut layer = std::collections::BTreeMap::new();
        layer.insert("linear.weight".to_string(), causal.iter().map(|v| v / 3.0).collect());
        TraceFile::new(
            ModelMeta {
                kind: "linear".into(),
                config_digest: Some("00ff".into()),
                epoch: Some(3),
                train_batch_size: Some(32),
                lookback: 8,
                horizon: h,
                param_count: Some(8 * h + h),
            },
            DatasetMeta {
                split: "train".into(),
                lookback: 8,
                horizon: h,
                stride: 1,
                windows: 100,
                scaler_digest: None,
                source: Some("synthetic".into()),
            },
            HamMeta {
                batch_size: 64,
                norm: NormKind::L2,
                reduction: Reduction::MeanOfLayers,
                train_mode: true,
                seed: 0,
                method: "fast".into(),
            },
            vec![
                HamCurve { mode: MaskMode::Anticausal, horizon: h, overall: anti, per_layer: Default::default() },
                HamCurve { mode: MaskMode::Causal, horizon: h, overall: causal, per_layer: layer },
            ],
        )
        .unwrap()
    }

    #[test]
    fn write_read_write_is_byte_stable() {
        let mut t = sample(5);
        t.attach_areas(LineScope::PerMode).unwrap();
        t.attach_difference().unwrap();
        let a = t.to_json().unwrap();
        let back = TraceFile::from_json(&a).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_json().unwrap(), a);
        assert_eq!(t.curves[0].mode, MaskMode::Causal);
    }

    #[test]
    fn wrong_curve_length_names_the_path() {
        let mut t = sample(4);
        t.curves[1].overall.pop();
        let err = TraceFile::from_json(&serde_json::to_string(&t).unwrap()).unwrap_err();
        match err {
            Error::Validation { path, .. } => assert_eq!(path, "$.curves[1].overall"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn schema_errors_name_the_path() {
        let mut v: serde_json::Value = serde_json::from_str(&sample(3).to_json().unwrap()).unwrap();
        v["curves"][0]["overall"][2] = serde_json::json!("x");
        let err = TraceFile::from_json(&v.to_string()).unwrap_err();
        assert!(matches!(&err, Error::Validation { path, .. } if path == "$.curves[0].overall[2]"), "{err}");

        let mut v: serde_json::Value = serde_json::from_str(&sample(3).to_json().unwrap()).unwrap();
        v["model"]["colour"] = serde_json::json!(1);
        assert!(matches!(TraceFile::from_json(&v.to_string()), Err(Error::Validation { .. })));
        assert!(matches!(TraceFile::from_json("{"), Err(Error::Validation { .. })));
    }

    #[test]
    fn partial_flag_must_match() {
        let mut t = sample(3);
        t.curves.pop();
        assert!(matches!(t.validate(), Err(Error::Validation { path, .. }) if path == "$.partial"));
        t.partial = true;
        t.validate().unwrap();
        assert!(t.compute_difference().is_err());
    }

    #[test]
    fn negative_norm_rejected() {
        let mut t = sample(3);
        t.curves[0].per_layer.get_mut("linear.weight").unwrap()[1] = -1.0;
        let err = t.validate().unwrap_err().to_string();
        assert!(err.contains("$.curves[0].per_layer.linear.weight[1]"), "{err}");
    }

    #[test]
    fn csv_rows_and_round_trip() {
        let t = sample(2);
        let mut buf = Vec::new();
        export_csv(&t, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "h,causal,anticausal,line_c,line_a,A_c,A_a,d");
        assert_eq!(lines.len(), 4);
        let back = import_csv(&text).unwrap();
        for (c, b) in t.curves.iter().zip(&back) {
            assert_eq!(c.mode, b.mode);
            for (x, y) in c.overall.iter().zip(&b.overall) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn csv_partial_drops_columns() {
        let mut t = sample(2);
        t.curves.retain(|c| c.mode == MaskMode::Causal);
        t.partial = true;
        let mut buf = Vec::new();
        export_csv(&t, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# partial trace: anticausal mode missing"));
        assert!(text.lines().nth(1).unwrap() == "h,causal,line_c,A_c");
        assert_eq!(import_csv(&text).unwrap().len(), 1);
    }
}
