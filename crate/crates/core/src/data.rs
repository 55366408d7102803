//! Series frames: CSV ingestion, synthetic generation, chronological
//! splits, standardization and sliding windows.

use std::f64::consts::PI;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A `T × C` matrix of observations.
///
/// `offset` is the global time index of the first row, so frames cut out of
/// a longer series keep their absolute position (the cycle model reads its
/// phase from it).
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesFrame {
    values: Vec<f64>,
    len: usize,
    channels: Vec<String>,
    timestamps: Option<Vec<String>>,
    offset: usize,
}

impl SeriesFrame {
    pub fn new(values: Vec<f64>, channels: Vec<String>, timestamps: Option<Vec<String>>) -> Result<Self> {
        let c = channels.len();
        if c == 0 {
            return Err(Error::Data("frame needs at least one channel".into()));
        }
        if !values.len().is_multiple_of(c) {
            return Err(Error::Data(format!("{} values do not fill {c} channels", values.len())));
        }
        let len = values.len() / c;
        if let Some(ts) = &timestamps {
            if ts.len() != len {
                return Err(Error::Data(format!("{} timestamps for {len} rows", ts.len())));
            }
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite value at row {}, column {}", i / c, i % c)));
        }
        Ok(SeriesFrame { values, len, channels, timestamps, offset: 0 })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn timestamps(&self) -> Option<&[String]> {
        self.timestamps.as_deref()
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, t: usize, c: usize) -> f64 {
        self.values[t * self.channels.len() + c]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let c = self.channels.len();
        &self.values[t * c..(t + 1) * c]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.len).map(|t| self.get(t, c)).collect()
    }

    /// Rows `start..end`, keeping the global offset.
    pub fn slice_rows(&self, start: usize, end: usize) -> SeriesFrame {
        let c = self.channels.len();
        SeriesFrame {
            values: self.values[start * c..end * c].to_vec(),
            len: end - start,
            channels: self.channels.clone(),
            timestamps: self.timestamps.as_ref().map(|ts| ts[start..end].to_vec()),
            offset: self.offset + start,
        }
    }

    pub fn with_offset(mut self, offset: usize) -> Self {
        self.offset = offset;
        self
    }

    pub fn select_channel(&self, name: &str) -> Result<SeriesFrame> {
        let Some(idx) = self.channels.iter().position(|c| c == name) else {
            return Err(Error::Data(format!(
                "unknown channel `{name}`; available: {}",
                self.channels.join(", ")
            )));
        };
        Ok(SeriesFrame {
            values: self.column(idx),
            len: self.len,
            channels: vec![name.to_string()],
            timestamps: self.timestamps.clone(),
            offset: self.offset,
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = Vec::with_capacity(self.channels.len() + 1);
        if self.timestamps.is_some() {
            header.push("date".to_string());
        }
        header.extend(self.channels.iter().cloned());
        w.write_record(&header)?;
        for t in 0..self.len {
            let mut rec = Vec::with_capacity(header.len());
            if let Some(ts) = &self.timestamps {
                rec.push(ts[t].clone());
            }
            rec.extend(self.row(t).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum GapPolicy {
    #[default]
    Reject,
    ForwardFill,
}

fn looks_like_date_header(h: &str) -> bool {
    matches!(h.trim().to_ascii_lowercase().as_str(), "date" | "datetime" | "time" | "timestamp")
}

/// Reads an ETT-style CSV: a header row, an optional leading date column and
/// numeric channels. The first column is treated as a date column when its
/// header names a date/time or its first cell is not a number.
pub fn load_csv(path: &Path, gaps: GapPolicy) -> Result<SeriesFrame> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let records: Vec<csv::StringRecord> = rdr.records().collect::<std::result::Result<_, _>>()?;
    if records.is_empty() || headers.is_empty() {
        return Err(Error::Data(format!("{}: empty file", path.display())));
    }
    if records.len() < 2 {
        return Err(Error::Data(format!("{}: need at least 2 rows", path.display())));
    }
    let first_cell = records[0].get(0).unwrap_or("");
    let has_date = looks_like_date_header(&headers[0]) || first_cell.parse::<f64>().is_err();
    let skip = usize::from(has_date);
    let channels: Vec<String> = headers[skip..].to_vec();
    if channels.is_empty() {
        return Err(Error::Data(format!("{}: no numeric columns", path.display())));
    }
    let c = channels.len();
    let mut values = Vec::with_capacity(records.len() * c);
    let mut timestamps = has_date.then(Vec::new);
    let mut last: Option<Vec<f64>> = None;
    for (r, rec) in records.iter().enumerate() {
        if rec.len() != headers.len() {
            return Err(Error::Data(format!(
                "row {}: expected {} cells, found {}",
                r + 1,
                headers.len(),
                rec.len()
            )));
        }
        if let Some(ts) = timestamps.as_mut() {
            ts.push(rec[0].to_string());
        }
        let mut row = Vec::with_capacity(c);
        for (j, cell) in rec.iter().skip(skip).enumerate() {
            let v = if cell.is_empty() {
                match (gaps, &last) {
                    (GapPolicy::ForwardFill, Some(prev)) => prev[j],
                    _ => {
                        return Err(Error::Data(format!(
                            "row {}, column `{}`: missing value",
                            r + 1,
                            channels[j]
                        )))
                    }
                }
            } else {
                cell.parse::<f64>().map_err(|_| {
                    Error::Data(format!("row {}, column `{}`: not a number: {cell:?}", r + 1, channels[j]))
                })?
            };
            row.push(v);
        }
        values.extend_from_slice(&row);
        last = Some(row);
    }
    SeriesFrame::new(values, channels, timestamps)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SineComponent {
    pub period: f64,
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthChannel {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub components: Vec<SineComponent>,
}

/// Closed form per channel: `Σ amp·sin(2πt/period + phase) + slope·t + noise`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub length: usize,
    pub channels: Vec<SynthChannel>,
    #[serde(default)]
    pub slope: f64,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub seed: u64,
}

pub fn synth(cfg: &SynthConfig) -> Result<SeriesFrame> {
    if cfg.length < 2 {
        return Err(Error::Config("synthetic length must be at least 2".into()));
    }
    if cfg.channels.is_empty() {
        return Err(Error::Config("synthetic config needs at least one channel".into()));
    }
    if !(cfg.noise_std >= 0.0) {
        return Err(Error::Config(format!("noise std {} must be nonnegative", cfg.noise_std)));
    }
    for (i, ch) in cfg.channels.iter().enumerate() {
        for comp in &ch.components {
            if !(comp.period > 0.0) {
                return Err(Error::Config(format!("channel {i}: period {} must be positive", comp.period)));
            }
        }
    }
    let c = cfg.channels.len();
    let names = cfg
        .channels
        .iter()
        .enumerate()
        .map(|(i, ch)| ch.name.clone().unwrap_or_else(|| format!("ch{i}")))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_std.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let mut values = Vec::with_capacity(cfg.length * c);
    for t in 0..cfg.length {
        let tf = t as f64;
        for ch in &cfg.channels {
            let mut v = cfg.slope * tf;
            for comp in &ch.components {
                v += comp.amplitude * (2.0 * PI * tf / comp.period + comp.phase).sin();
            }
            if cfg.noise_std > 0.0 {
                v += noise.sample(&mut rng);
            }
            values.push(v);
        }
    }
    SeriesFrame::new(values, names, None)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { train: 0.6, val: 0.2, test: 0.2 }
    }
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let s = SplitSpec { train, val, test };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let r = [self.train, self.val, self.test];
        if r.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config(format!("split ratios must be nonnegative: {r:?}")));
        }
        if ((r[0] + r[1] + r[2]) - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios must sum to 1: {r:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: SeriesFrame,
    pub val: SeriesFrame,
    pub test: SeriesFrame,
}

impl Splits {
    pub fn get(&self, name: &str) -> Result<&SeriesFrame> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(Error::Config(format!("unknown split `{other}` (train, val, test)"))),
        }
    }
}

/// Chronological split with boundaries at `floor(T·r1)` and
/// `floor(T·(r1 + r2))`; the rounding remainder lands in the test split.
pub fn split(frame: &SeriesFrame, spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    let t = frame.len() as f64;
    // The epsilon absorbs representation error such as 100 * 0.6 = 59.999...
    let b1 = (t * spec.train + 1e-9).floor() as usize;
    let b2 = (t * (spec.train + spec.val) + 1e-9).floor() as usize;
    let b2 = b2.min(frame.len());
    if b1 == 0 || b2 <= b1 || b2 >= frame.len() {
        return Err(Error::Data(format!(
            "split of {} rows at {b1}/{b2} leaves an empty part",
            frame.len()
        )));
    }
    Ok(Splits {
        train: frame.slice_rows(0, b1),
        val: frame.slice_rows(b1, b2),
        test: frame.slice_rows(b2, frame.len()),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub lookback: usize,
    pub horizon: usize,
    #[serde(default = "one")]
    pub stride: usize,
}

fn one() -> usize {
    1
}

impl WindowSpec {
    pub fn new(lookback: usize, horizon: usize, stride: usize) -> Result<Self> {
        if lookback == 0 || horizon == 0 || stride == 0 {
            return Err(Error::Config(format!(
                "window needs lookback, horizon, stride >= 1 (got {lookback}, {horizon}, {stride})"
            )));
        }
        Ok(WindowSpec { lookback, horizon, stride })
    }

    pub fn count(&self, len: usize) -> usize {
        if len < self.lookback + self.horizon {
            0
        } else {
            (len - self.lookback - self.horizon) / self.stride + 1
        }
    }
}

/// One training example: `lookback × C` inputs followed by `horizon × C`
/// targets. `start` is the global time index of the first input row.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub input: Tensor,
    pub target: Tensor,
    pub start: usize,
}

pub fn windows(frame: &SeriesFrame, spec: &WindowSpec) -> Result<Vec<Window>> {
    if spec.lookback == 0 || spec.horizon == 0 || spec.stride == 0 {
        return Err(Error::Config("window lookback, horizon and stride must be >= 1".into()));
    }
    if frame.len() < spec.lookback + spec.horizon {
        return Err(Error::Data(format!(
            "{} rows cannot hold a window of lookback {} + horizon {}",
            frame.len(),
            spec.lookback,
            spec.horizon
        )));
    }
    let c = frame.n_channels();
    let (l, h) = (spec.lookback, spec.horizon);
    let n = spec.count(frame.len());
    (0..n)
        .map(|i| {
            let s = i * spec.stride;
            let input = frame.values()[s * c..(s + l) * c].to_vec();
            let target = frame.values()[(s + l) * c..(s + l + h) * c].to_vec();
            Ok(Window {
                input: Tensor::matrix(l, c, input)?,
                target: Tensor::matrix(h, c, target)?,
                start: frame.offset() + s,
            })
        })
        .collect()
}

/// Per-channel mean and population standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    /// Short hex digest of the JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("scaler serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }

    pub fn fit(train: &SeriesFrame) -> Result<Scaler> {
        let c = train.n_channels();
        let n = train.len() as f64;
        let mut mean = vec![0.0; c];
        let mut std = vec![0.0; c];
        for j in 0..c {
            let col = train.column(j);
            let m = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            mean[j] = m;
            std[j] = var.sqrt();
            if !(std[j] > 1e-12 * m.abs().max(1.0)) {
                return Err(Error::Data(format!(
                    "channel `{}` is constant on the training split",
                    train.channels()[j]
                )));
            }
        }
        Ok(Scaler { mean, std })
    }

    fn check(&self, frame: &SeriesFrame) -> Result<()> {
        if frame.n_channels() != self.mean.len() {
            return Err(Error::Data(format!(
                "scaler fit on {} channels applied to {}",
                self.mean.len(),
                frame.n_channels()
            )));
        }
        Ok(())
    }

    pub fn transform(&self, frame: &SeriesFrame) -> Result<SeriesFrame> {
        self.check(frame)?;
        let c = self.mean.len();
        let mut out = frame.clone();
        for (i, v) in out.values.iter_mut().enumerate() {
            let j = i % c;
            *v = (*v - self.mean[j]) / self.std[j];
        }
        Ok(out)
    }

    pub fn inverse(&self, frame: &SeriesFrame) -> Result<SeriesFrame> {
        self.check(frame)?;
        let c = self.mean.len();
        let mut out = frame.clone();
        for (i, v) in out.values.iter_mut().enumerate() {
            let j = i % c;
            *v = *v * self.std[j] + self.mean[j];
        }
        Ok(out)
    }

    /// Fits on `splits.train` and transforms all three splits with it.
    pub fn standardize(splits: &Splits) -> Result<(Scaler, Splits)> {
        let scaler = Scaler::fit(&splits.train)?;
        let out = Splits {
            train: scaler.transform(&splits.train)?,
            val: scaler.transform(&splits.val)?,
            test: scaler.transform(&splits.test)?,
        };
        Ok((scaler, out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn frame(t: usize, c: usize) -> SeriesFrame {
        let values = (0..t * c).map(|i| i as f64 * 0.5 + (i % 3) as f64).collect();
        let names = (0..c).map(|i| format!("c{i}")).collect();
        SeriesFrame::new(values, names, None).unwrap()
    }

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_plain_and_dated() {
        let f = write_tmp("a,b\n1,2\n3,4\n5,6\n");
        let fr = load_csv(f.path(), GapPolicy::Reject).unwrap();
        assert_eq!((fr.len(), fr.n_channels()), (3, 2));
        assert_eq!(fr.row(2), &[5.0, 6.0]);
        assert!(fr.timestamps().is_none());

        let f = write_tmp("date,x,y\n2016-07-01 00:00:00,1,2\n2016-07-01 00:15:00,3,4\n");
        let fr = load_csv(f.path(), GapPolicy::Reject).unwrap();
        assert_eq!(fr.channels(), &["x".to_string(), "y".to_string()]);
        assert_eq!(fr.timestamps().unwrap()[1], "2016-07-01 00:15:00");
    }

    #[test]
    fn csv_ett_layout() {
        let mut s = String::from("date,HUFL,HULL,MUFL,MULL,LUFL,LULL,OT\n");
        for i in 0..100 {
            s.push_str(&format!("2016-07-01 {:02}:{:02}:00", i / 4, (i % 4) * 15));
            for c in 0..7 {
                s.push_str(&format!(",{}", i * 7 + c));
            }
            s.push('\n');
        }
        let fr = load_csv(write_tmp(&s).path(), GapPolicy::Reject).unwrap();
        assert_eq!((fr.len(), fr.n_channels()), (100, 7));
    }

    #[test]
    fn csv_errors() {
        let err = load_csv(write_tmp("a,b\n1,2\n3,x\n").path(), GapPolicy::Reject).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 2") && msg.contains("`b`"), "{msg}");
        assert!(load_csv(write_tmp("").path(), GapPolicy::Reject).is_err());
        assert!(load_csv(write_tmp("a,b\n").path(), GapPolicy::Reject).is_err());
    }

    #[test]
    fn csv_gaps() {
        let f = write_tmp("a,b\n1,2\n3,\n5,6\n");
        assert!(load_csv(f.path(), GapPolicy::Reject).is_err());
        let fr = load_csv(f.path(), GapPolicy::ForwardFill).unwrap();
        assert_eq!(fr.row(1), &[3.0, 2.0]);
    }

    fn sine_cfg(amplitude: f64, phase: f64, slope: f64, noise: f64) -> SynthConfig {
        SynthConfig {
            length: 50,
            channels: vec![SynthChannel {
                name: None,
                components: vec![SineComponent { period: 12.0, amplitude, phase }],
            }],
            slope,
            noise_std: noise,
            seed: 7,
        }
    }

    #[test]
    fn synth_closed_form() {
        let z = synth(&sine_cfg(0.0, 0.3, 0.0, 0.0)).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));

        let s = synth(&sine_cfg(2.0, 0.3, 0.0, 0.0)).unwrap();
        assert_eq!(s.get(0, 0), 2.0 * 0.3f64.sin());

        let a = synth(&sine_cfg(1.0, 0.0, 0.1, 0.5)).unwrap();
        let b = synth(&sine_cfg(1.0, 0.0, 0.1, 0.5)).unwrap();
        assert_eq!(a, b);

        let mut bad = sine_cfg(1.0, 0.0, 0.0, 0.0);
        bad.channels[0].components[0].period = 0.0;
        assert!(synth(&bad).is_err());
    }

    #[test]
    fn split_lengths() {
        let s = split(&frame(100, 1), &SplitSpec::default()).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (60, 20, 20));
        let s = split(&frame(101, 1), &SplitSpec::default()).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (60, 20, 21));
        assert_eq!(s.val.offset(), 60);
        assert!(split(&frame(10, 1), &SplitSpec { train: 1.0, val: 0.0, test: 0.0 }).is_err());
        assert!(SplitSpec::new(0.5, 0.2, 0.2).is_err());
    }

    #[test]
    fn window_counts() {
        let w = |t, l, h, s| windows(&frame(t, 2), &WindowSpec::new(l, h, s).unwrap()).map(|v| v.len());
        assert_eq!(w(10, 4, 2, 1).unwrap(), 5);
        assert_eq!(w(6, 4, 2, 1).unwrap(), 1);
        assert_eq!(w(12, 4, 2, 2).unwrap(), 4);
        assert!(w(5, 4, 2, 1).is_err());
    }

    #[test]
    fn windows_do_not_overlap_their_targets() {
        let fr = frame(10, 1);
        let ws = windows(&fr, &WindowSpec::new(4, 2, 1).unwrap()).unwrap();
        for (i, w) in ws.iter().enumerate() {
            assert_eq!(w.start, i);
            assert_eq!(w.input.data(), &fr.values()[i..i + 4]);
            assert_eq!(w.target.data(), &fr.values()[i + 4..i + 6]);
        }
    }

    #[test]
    fn standardize_closed_form() {
        let fr = SeriesFrame::new(vec![1.0, 2.0, 3.0], vec!["x".into()], None).unwrap();
        let sc = Scaler::fit(&fr).unwrap();
        assert_eq!(sc.mean, vec![2.0]);
        let c = 1.0 / (2.0f64 / 3.0).sqrt();
        let z = sc.transform(&fr).unwrap();
        for (a, b) in z.values().iter().zip([-c, 0.0, c]) {
            assert!((a - b).abs() < 1e-12);
        }
        let constant = SeriesFrame::new(vec![4.0; 5], vec!["k".into()], None).unwrap();
        assert!(Scaler::fit(&constant).is_err());
    }

    #[test]
    fn validation_uses_train_statistics() {
        let values: Vec<f64> = (0..100).map(|i| (i * i) as f64).collect();
        let fr = SeriesFrame::new(values, vec!["x".into()], None).unwrap();
        let sp = split(&fr, &SplitSpec::default()).unwrap();
        let (sc, z) = Scaler::standardize(&sp).unwrap();
        assert_eq!(sc, Scaler::fit(&sp.train).unwrap());
        let m: f64 = z.train.values().iter().sum::<f64>() / 60.0;
        let v: f64 = z.train.values().iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 60.0;
        assert!(m.abs() < 1e-9 && (v.sqrt() - 1.0).abs() < 1e-9);
        let own = Scaler::fit(&sp.val).unwrap();
        assert_ne!(own, sc);
        assert_eq!(z.val, sc.transform(&sp.val).unwrap());
    }

    #[test]
    fn channel_selection() {
        let fr = frame(20, 7);
        let one = fr.select_channel("c3").unwrap();
        assert_eq!((one.len(), one.n_channels()), (20, 1));
        let err = fr.select_channel("nope").unwrap_err().to_string();
        assert!(err.contains("c0") && err.contains("c6"), "{err}");

        let spec = WindowSpec::new(4, 2, 1).unwrap();
        let a = windows(&one, &spec).unwrap();
        let b = windows(&fr, &spec).unwrap();
        for (wa, wb) in a.iter().zip(&b) {
            let col: Vec<f64> = (0..4).map(|t| wb.input.get2(t, 3)).collect();
            assert_eq!(wa.input.data(), col.as_slice());
        }
    }

    proptest! {
        #[test]
        fn split_concatenation_identity(t in 10usize..400, r1 in 0.2f64..0.7, r2 in 0.05f64..0.2) {
            let fr = frame(t, 2);
            let spec = SplitSpec { train: r1, val: r2, test: 1.0 - r1 - r2 };
            if let Ok(s) = split(&fr, &spec) {
                let mut joined = s.train.values().to_vec();
                joined.extend_from_slice(s.val.values());
                joined.extend_from_slice(s.test.values());
                prop_assert_eq!(joined.as_slice(), fr.values());
            }
        }

        #[test]
        fn window_count_formula(t in 2usize..200, l in 1usize..20, h in 1usize..20, stride in 1usize..5) {
            let fr = frame(t, 1);
            let spec = WindowSpec::new(l, h, stride).unwrap();
            match windows(&fr, &spec) {
                Ok(ws) => prop_assert_eq!(ws.len(), (t - l - h) / stride + 1),
                Err(_) => prop_assert!(t < l + h),
            }
        }

        #[test]
        fn standardize_round_trip(mut vals in proptest::collection::vec(-1e3f64..1e3, 6..60)) {
            vals.truncate(vals.len() / 2 * 2);
            let fr = SeriesFrame::new(vals, vec!["a".into(), "b".into()], None).unwrap();
            if let Ok(sc) = Scaler::fit(&fr) {
                let back = sc.inverse(&sc.transform(&fr).unwrap()).unwrap();
                for (x, y) in back.values().iter().zip(fr.values()) {
                    prop_assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
                }
            }
        }
    }
}
