//! Desk-scale forecasting models built on the autodiff tape.
//!
//! * `linear`: one `H × L` map shared across channels, plus bias.
//! * `nlinear`: the same map applied to the window minus its last
//!   timestep, with the last value added back (switchable for ablation).
//! * `mlp`: channels flattened into one `L·C` input, ReLU hidden layers
//!   with inverted dropout, `H·C` outputs.
//! * `cycle`: a learnable `|Q| × C` queue of per-phase values; the linear
//!   head forecasts the residual of the window from the phase-aligned queue
//!   and the aligned queue slice is added back to the forecast.
//!
//! Layer names (`linear.weight`, `linear.bias`, `cycle.queue`,
//! `mlp.<i>.weight`, `mlp.<i>.bias`) are stable: layer-wise curves and
//! checkpoint files refer to parameters by these names.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{ParamGroup, Tape, Var};
use crate::data::Window;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Linear,
    Nlinear,
    Mlp,
    Cycle,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ModelKind::Linear),
            "nlinear" => Ok(ModelKind::Nlinear),
            "mlp" => Ok(ModelKind::Mlp),
            "cycle" => Ok(ModelKind::Cycle),
            other => Err(Error::Config(format!("unknown model kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ModelKind::Linear => "linear",
            ModelKind::Nlinear => "nlinear",
            ModelKind::Mlp => "mlp",
            ModelKind::Cycle => "cycle",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub lookback: usize,
    pub horizon: usize,
    pub channels: usize,
    /// Hidden layer widths (mlp only).
    #[serde(default)]
    pub hidden: Vec<usize>,
    /// Dropout probability on hidden activations (mlp only).
    #[serde(default)]
    pub dropout: f64,
    /// Queue length |Q| (cycle only).
    #[serde(default)]
    pub cycle_len: usize,
    /// Last-value normalization (nlinear only).
    #[serde(default = "yes")]
    pub normalize: bool,
    #[serde(default)]
    pub seed: u64,
}

fn yes() -> bool {
    true
}

impl ModelConfig {
    pub fn new(kind: ModelKind, lookback: usize, horizon: usize, channels: usize) -> Self {
        ModelConfig {
            kind,
            lookback,
            horizon,
            channels,
            hidden: Vec::new(),
            dropout: 0.0,
            cycle_len: 0,
            normalize: true,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lookback == 0 || self.horizon == 0 || self.channels == 0 {
            return Err(Error::Config(format!(
                "lookback, horizon and channels must be >= 1 (got {}, {}, {})",
                self.lookback, self.horizon, self.channels
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        match self.kind {
            ModelKind::Cycle if self.cycle_len == 0 => {
                Err(Error::Config("cycle model needs a queue length >= 1".into()))
            }
            ModelKind::Mlp if self.hidden.contains(&0) => {
                Err(Error::Config("mlp hidden widths must be >= 1".into()))
            }
            _ => Ok(()),
        }
    }

    /// Short hex digest of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let hash = Sha256::digest(json.as_bytes());
        hex::encode(&hash[..8])
    }

    fn layout(&self) -> Layout {
        match self.kind {
            ModelKind::Mlp => Layout::Flattened,
            _ => Layout::HorizonMajor,
        }
    }

    fn mlp_widths(&self) -> Vec<usize> {
        let mut w = vec![self.lookback * self.channels];
        w.extend(&self.hidden);
        w.push(self.horizon * self.channels);
        w
    }
}

/// How a batch of windows is laid out in the input/prediction matrices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    /// `[steps, B·C]`: row = timestep, column `b·C + c`.
    HorizonMajor,
    /// `[steps·C, B]`: row `t·C + c`, column = window.
    Flattened,
}

/// Inputs and targets of a batch of windows in a model's layout.
#[derive(Clone, Debug)]
pub struct Batch {
    pub input: Tensor,
    pub target: Tensor,
    pub starts: Vec<usize>,
    pub layout: Layout,
    pub horizon: usize,
    pub channels: usize,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.starts.len()
    }

    /// Rearranges a prediction matrix of this batch into `H × C` forecasts.
    pub fn split_forecasts(&self, pred: &Tensor) -> Vec<Tensor> {
        let (h, c, b) = (self.horizon, self.channels, self.size());
        (0..b)
            .map(|w| {
                let mut out = Vec::with_capacity(h * c);
                for t in 0..h {
                    for ch in 0..c {
                        out.push(match self.layout {
                            Layout::HorizonMajor => pred.get2(t, w * c + ch),
                            Layout::Flattened => pred.get2(t * c + ch, w),
                        });
                    }
                }
                Tensor::matrix(h, c, out).expect("forecast shape")
            })
            .collect()
    }
}

fn stack(layout: Layout, mats: &[&Tensor], steps: usize, c: usize) -> Result<Tensor> {
    let b = mats.len();
    let mut out = vec![0.0; steps * c * b];
    for (w, m) in mats.iter().enumerate() {
        if m.dims2() != Some((steps, c)) {
            return Err(Error::shape(
                "batch",
                format!("window {w} has shape {:?}, expected [{steps}, {c}]", m.shape()),
            ));
        }
        for t in 0..steps {
            for ch in 0..c {
                let v = m.get2(t, ch);
                match layout {
                    Layout::HorizonMajor => out[t * b * c + w * c + ch] = v,
                    Layout::Flattened => out[(t * c + ch) * b + w] = v,
                }
            }
        }
    }
    match layout {
        Layout::HorizonMajor => Tensor::matrix(steps, b * c, out),
        Layout::Flattened => Tensor::matrix(steps * c, b, out),
    }
}

/// Per-call forward options.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForwardCtx {
    /// Dropout is active only in train mode.
    pub train_mode: bool,
    /// Seeds the dropout masks; equal seeds replay identical masks.
    pub dropout_seed: u64,
}

impl ForwardCtx {
    pub fn eval() -> Self {
        ForwardCtx { train_mode: false, dropout_seed: 0 }
    }

    pub fn train(dropout_seed: u64) -> Self {
        ForwardCtx { train_mode: true, dropout_seed }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForecastModel {
    pub config: ModelConfig,
    pub params: Vec<ParamGroup>,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::matrix(rows, cols, data).expect("init shape")
}

impl ForecastModel {
    /// Deterministic initialization from `config.seed`: weights uniform in
    /// `±1/sqrt(fan_in)`, biases and the cycle queue zero.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (l, h, c) = (config.lookback, config.horizon, config.channels);
        let mut params = Vec::new();
        match config.kind {
            ModelKind::Linear | ModelKind::Nlinear | ModelKind::Cycle => {
                params.push(ParamGroup::new("linear.weight", uniform(&mut rng, h, l, l)));
                params.push(ParamGroup::new("linear.bias", Tensor::zeros(&[h, 1])));
                if config.kind == ModelKind::Cycle {
                    params.push(ParamGroup::new("cycle.queue", Tensor::zeros(&[config.cycle_len, c])));
                }
            }
            ModelKind::Mlp => {
                let widths = config.mlp_widths();
                for (i, pair) in widths.windows(2).enumerate() {
                    let (fan_in, fan_out) = (pair[0], pair[1]);
                    params.push(ParamGroup::new(
                        format!("mlp.{i}.weight"),
                        uniform(&mut rng, fan_out, fan_in, fan_in),
                    ));
                    params.push(ParamGroup::new(format!("mlp.{i}.bias"), Tensor::zeros(&[fan_out, 1])));
                }
            }
        }
        Ok(ForecastModel { config, params })
    }

    pub fn param_groups(&self) -> Vec<&str> {
        self.params.iter().map(|p| p.name.as_str()).collect()
    }

    pub fn param(&self, name: &str) -> Option<&ParamGroup> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut ParamGroup> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(ParamGroup::numel).sum()
    }

    pub fn batch(&self, windows: &[&Window]) -> Result<Batch> {
        if windows.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let cfg = &self.config;
        let layout = cfg.layout();
        let inputs: Vec<&Tensor> = windows.iter().map(|w| &w.input).collect();
        let targets: Vec<&Tensor> = windows.iter().map(|w| &w.target).collect();
        Ok(Batch {
            input: stack(layout, &inputs, cfg.lookback, cfg.channels)?,
            target: stack(layout, &targets, cfg.horizon, cfg.channels)?,
            starts: windows.iter().map(|w| w.start).collect(),
            layout,
            horizon: cfg.horizon,
            channels: cfg.channels,
        })
    }

    /// Records the forward pass of `batch` on `tape`, registering every
    /// parameter group, and returns the prediction in the batch layout.
    pub fn forward(&self, tape: &mut Tape, batch: &Batch, ctx: ForwardCtx) -> Result<Var> {
        let cfg = &self.config;
        if batch.layout != cfg.layout() || batch.horizon != cfg.horizon || batch.channels != cfg.channels {
            return Err(Error::shape("forward", "batch was built for a different model"));
        }
        let mut vars = Vec::with_capacity(self.params.len());
        for p in &self.params {
            vars.push(tape.param(&p.name, &p.value)?);
        }
        let var = |name: &str| -> Var {
            let i = self.params.iter().position(|p| p.name == name).expect("registered param");
            vars[i]
        };
        let x = tape.constant(batch.input.clone());
        let cols = batch.input.shape()[1];
        let b = batch.size();
        match cfg.kind {
            ModelKind::Linear => self.linear_head(tape, x, var("linear.weight"), var("linear.bias"), cols),
            ModelKind::Nlinear => {
                if !cfg.normalize {
                    return self.linear_head(tape, x, var("linear.weight"), var("linear.bias"), cols);
                }
                let mut sel = vec![0.0; cfg.lookback];
                sel[cfg.lookback - 1] = 1.0;
                let sel = tape.constant(Tensor::matrix(1, cfg.lookback, sel)?);
                let last = tape.matmul(sel, x)?;
                let centered = tape.broadcast_sub_last(x, last)?;
                let head = self.linear_head(tape, centered, var("linear.weight"), var("linear.bias"), cols)?;
                let ones = tape.constant(Tensor::full(&[cfg.horizon, 1], 1.0));
                let back = tape.matmul(ones, last)?;
                tape.add(head, back)
            }
            ModelKind::Cycle => {
                let q = cfg.cycle_len;
                let queue = var("cycle.queue");
                let in_phase: Vec<usize> = batch.starts.iter().map(|s| s % q).collect();
                let out_phase: Vec<usize> = batch.starts.iter().map(|s| (s + cfg.lookback) % q).collect();
                let q_in = tape.gather_cyclic(queue, &in_phase, cfg.lookback)?;
                let q_out = tape.gather_cyclic(queue, &out_phase, cfg.horizon)?;
                let resid = tape.sub(x, q_in)?;
                let head = self.linear_head(tape, resid, var("linear.weight"), var("linear.bias"), cols)?;
                tape.add(head, q_out)
            }
            ModelKind::Mlp => {
                let n_layers = cfg.mlp_widths().len() - 1;
                let ones_b = tape.constant(Tensor::full(&[1, b], 1.0));
                let mut rng = ChaCha8Rng::seed_from_u64(ctx.dropout_seed);
                let keep = 1.0 - cfg.dropout;
                let mut z = x;
                for i in 0..n_layers {
                    let w = var(&format!("mlp.{i}.weight"));
                    let bias = var(&format!("mlp.{i}.bias"));
                    let wz = tape.matmul(w, z)?;
                    let bb = tape.matmul(bias, ones_b)?;
                    z = tape.add(wz, bb)?;
                    if i + 1 < n_layers {
                        z = tape.relu(z)?;
                        if ctx.train_mode && cfg.dropout > 0.0 {
                            let shape = tape.value(z).shape().to_vec();
                            let n: usize = shape.iter().product();
                            let mask = (0..n).map(|_| if rng.gen::<f64>() < keep { 1.0 } else { 0.0 }).collect();
                            z = tape.dropout_masked(z, &Tensor::new(shape, mask)?, keep)?;
                        }
                    }
                }
                Ok(z)
            }
        }
    }

    fn linear_head(&self, tape: &mut Tape, x: Var, w: Var, bias: Var, cols: usize) -> Result<Var> {
        let wx = tape.matmul(w, x)?;
        let ones = tape.constant(Tensor::full(&[1, cols], 1.0));
        let bb = tape.matmul(bias, ones)?;
        tape.add(wx, bb)
    }

    /// Forecasts one `L × C` window whose first row sits at global time
    /// `step_index` (the cycle model reads its phase from it).
    pub fn forecast(&self, window: &Tensor, train_mode: bool, step_index: i64) -> Result<Tensor> {
        if step_index < 0 {
            return Err(Error::Config(format!("step index {step_index} is negative")));
        }
        let cfg = &self.config;
        if window.dims2() != Some((cfg.lookback, cfg.channels)) {
            return Err(Error::shape(
                "forecast",
                format!("window {:?}, model expects [{}, {}]", window.shape(), cfg.lookback, cfg.channels),
            ));
        }
        let w = Window {
            input: window.clone(),
            target: Tensor::zeros(&[cfg.horizon, cfg.channels]),
            start: step_index as usize,
        };
        let batch = self.batch(&[&w])?;
        let mut tape = Tape::new();
        let ctx = ForwardCtx { train_mode, dropout_seed: cfg.seed ^ step_index as u64 };
        let pred = self.forward(&mut tape, &batch, ctx)?;
        Ok(batch.split_forecasts(tape.value(pred)).remove(0))
    }

    pub fn save(&self, path: &Path, epoch: usize) -> Result<()> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: 1,
            epoch,
            config: self.config.clone(),
            params: self.params.clone(),
        };
        let json = serde_json::to_string_pretty(&ck)?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(Self, usize)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::validation("$.format", format!("expected `{CHECKPOINT_FORMAT}`")));
        }
        let template = ForecastModel::init(ck.config.clone())?;
        if template.params.len() != ck.params.len() {
            return Err(Error::validation("$.params", "parameter groups do not match the config"));
        }
        for (i, (t, p)) in template.params.iter().zip(&ck.params).enumerate() {
            if t.name != p.name || t.value.shape() != p.value.shape() {
                return Err(Error::validation(
                    format!("$.params[{i}]"),
                    format!("expected `{}` {:?}", t.name, t.value.shape()),
                ));
            }
        }
        Ok((ForecastModel { config: ck.config, params: ck.params }, ck.epoch))
    }
}

const CHECKPOINT_FORMAT: &str = "hamkit-checkpoint";

/// On-disk checkpoint: config plus named parameter tensors.
#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    epoch: usize,
    config: ModelConfig,
    params: Vec<ParamGroup>,
}

/// Per-timestep loss `l_h` (squared error averaged over channels and over
/// the windows of the batch) as an `H × 1` column.
pub fn per_timestep_loss(tape: &mut Tape, pred: Var, batch: &Batch) -> Result<Var> {
    let target = tape.constant(batch.target.clone());
    let diff = tape.sub(pred, target)?;
    let sq = tape.square(diff)?;
    match batch.layout {
        Layout::HorizonMajor => tape.mean_axis(sq, Some(1)),
        Layout::Flattened => {
            let rows = tape.mean_axis(sq, Some(1))?;
            let (h, c) = (batch.horizon, batch.channels);
            let mut s = vec![0.0; h * h * c];
            for t in 0..h {
                for ch in 0..c {
                    s[t * h * c + t * c + ch] = 1.0 / c as f64;
                }
            }
            let s = tape.constant(Tensor::matrix(h, h * c, s)?);
            tape.matmul(s, rows)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(kind: ModelKind, l: usize, h: usize, c: usize) -> ModelConfig {
        ModelConfig { seed: 11, ..ModelConfig::new(kind, l, h, c) }
    }

    fn zero_weights(m: &mut ForecastModel) {
        for p in &mut m.params {
            if p.name != "cycle.queue" {
                p.value.fill(0.0);
            }
        }
    }

    fn window(l: usize, c: usize, shift: f64) -> Tensor {
        let data = (0..l * c).map(|i| ((i * 7 % 5) as f64) * 0.3 - 0.4 + shift).collect();
        Tensor::matrix(l, c, data).unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let a = ForecastModel::init(cfg(ModelKind::Mlp, 6, 3, 2)).unwrap();
        let b = ForecastModel::init(cfg(ModelKind::Mlp, 6, 3, 2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn layer_shapes_and_counts() {
        let lin = ForecastModel::init(cfg(ModelKind::Linear, 4, 2, 1)).unwrap();
        assert_eq!(lin.param_groups(), vec!["linear.weight", "linear.bias"]);
        assert_eq!(lin.params[0].value.shape(), &[2, 4]);
        assert_eq!(lin.params[1].value.numel(), 2);
        assert!(lin.params[1].value.data().iter().all(|&v| v == 0.0));

        let mlp = ForecastModel::init(ModelConfig { hidden: vec![8], ..cfg(ModelKind::Mlp, 4, 2, 1) }).unwrap();
        assert_eq!(mlp.param_count(), 4 * 8 + 8 + 8 * 2 + 2);

        let deep = ForecastModel::init(ModelConfig { hidden: vec![8, 8], ..cfg(ModelKind::Mlp, 4, 2, 1) }).unwrap();
        let names = deep.param_groups();
        assert_eq!(names.iter().filter(|n| n.ends_with("weight")).count(), 3);
        assert_eq!(names.iter().filter(|n| n.ends_with("bias")).count(), 3);

        let nl = ForecastModel::init(cfg(ModelKind::Nlinear, 4, 2, 1)).unwrap();
        assert_eq!(nl.param_groups(), vec!["linear.weight", "linear.bias"]);

        let cy = ForecastModel::init(ModelConfig { cycle_len: 5, ..cfg(ModelKind::Cycle, 4, 2, 1) }).unwrap();
        assert!(cy.param_groups().contains(&"cycle.queue"));
    }

    #[test]
    fn invalid_configs() {
        assert!(ForecastModel::init(cfg(ModelKind::Linear, 0, 2, 1)).is_err());
        assert!(ForecastModel::init(cfg(ModelKind::Cycle, 4, 2, 1)).is_err());
        let bad_dropout = ModelConfig { dropout: 1.0, ..cfg(ModelKind::Mlp, 4, 2, 1) };
        assert!(ForecastModel::init(bad_dropout).is_err());
    }

    #[test]
    fn nlinear_zero_weights_repeat_last_value() {
        let mut m = ForecastModel::init(cfg(ModelKind::Nlinear, 5, 3, 2)).unwrap();
        zero_weights(&mut m);
        let w = window(5, 2, 0.0);
        let f = m.forecast(&w, false, 0).unwrap();
        for t in 0..3 {
            assert_eq!(f.row(t), w.row(4));
        }
        let mut off = ForecastModel::init(ModelConfig { normalize: false, ..cfg(ModelKind::Nlinear, 5, 3, 2) }).unwrap();
        zero_weights(&mut off);
        assert!(off.forecast(&w, false, 0).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn nlinear_shift_invariance_is_the_ablation_signature() {
        let on = ForecastModel::init(cfg(ModelKind::Nlinear, 6, 4, 3)).unwrap();
        let off = ForecastModel::init(ModelConfig { normalize: false, ..cfg(ModelKind::Nlinear, 6, 4, 3) }).unwrap();
        let shift = 2.75;
        let (w0, w1) = (window(6, 3, 0.0), window(6, 3, shift));
        let (a, b) = (on.forecast(&w0, false, 0).unwrap(), on.forecast(&w1, false, 0).unwrap());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((y - x - shift).abs() < 1e-9);
        }
        let (a, b) = (off.forecast(&w0, false, 0).unwrap(), off.forecast(&w1, false, 0).unwrap());
        let worst = a.data().iter().zip(b.data()).map(|(x, y)| (y - x - shift).abs()).fold(0.0, f64::max);
        assert!(worst > 1e-3);
    }

    #[test]
    fn eval_mode_ignores_dropout_seed() {
        let m = ForecastModel::init(ModelConfig { hidden: vec![16], dropout: 0.5, ..cfg(ModelKind::Mlp, 6, 3, 2) }).unwrap();
        let w = Window { input: window(6, 2, 0.0), target: Tensor::zeros(&[3, 2]), start: 0 };
        let batch = m.batch(&[&w]).unwrap();
        let run = |ctx| {
            let mut tape = Tape::new();
            let p = m.forward(&mut tape, &batch, ctx).unwrap();
            tape.value(p).clone()
        };
        let e1 = run(ForwardCtx { train_mode: false, dropout_seed: 1 });
        let e2 = run(ForwardCtx { train_mode: false, dropout_seed: 2 });
        assert_eq!(e1, e2);
        let t1 = run(ForwardCtx::train(1));
        let t2 = run(ForwardCtx::train(2));
        assert_ne!(t1, t2);
        assert_eq!(t1, run(ForwardCtx::train(1)));
    }

    #[test]
    fn cycle_with_least_squares_queue_reproduces_the_period() {
        let q = 6;
        let period: Vec<f64> = (0..q).map(|i| (i as f64 * 1.3).sin() + 0.2 * i as f64).collect();
        let series: Vec<f64> = (0..120).map(|t| period[t % q]).collect();
        // Least-squares queue under zero head weights: per-phase mean.
        let mut queue = vec![0.0; q];
        let mut counts = vec![0usize; q];
        for (t, v) in series.iter().enumerate() {
            queue[t % q] += v;
            counts[t % q] += 1;
        }
        for (v, n) in queue.iter_mut().zip(&counts) {
            *v /= *n as f64;
        }
        let mut m = ForecastModel::init(ModelConfig { cycle_len: q, ..cfg(ModelKind::Cycle, 8, 5, 1) }).unwrap();
        zero_weights(&mut m);
        m.param_mut("cycle.queue").unwrap().value = Tensor::matrix(q, 1, queue.clone()).unwrap();
        for start in [0usize, 3, 17, 40] {
            let w = Tensor::matrix(8, 1, series[start..start + 8].to_vec()).unwrap();
            let f = m.forecast(&w, false, start as i64).unwrap();
            for h in 0..5 {
                let want = queue[(start + 8 + h) % q];
                assert!((f.data()[h] - want).abs() < 1e-12);
                assert!((f.data()[h] - series[start + 8 + h]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forecast_errors() {
        let m = ForecastModel::init(cfg(ModelKind::Linear, 4, 2, 1)).unwrap();
        assert!(m.forecast(&Tensor::zeros(&[3, 1]), false, 0).is_err());
        assert!(m.forecast(&Tensor::zeros(&[4, 1]), false, -1).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = ForecastModel::init(ModelConfig { cycle_len: 3, ..cfg(ModelKind::Cycle, 4, 2, 2) }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        m.save(&path, 4).unwrap();
        let (back, epoch) = ForecastModel::load(&path).unwrap();
        assert_eq!(epoch, 4);
        assert_eq!(back, m);
    }

    #[test]
    fn layouts_agree_on_per_timestep_loss() {
        // The same windows and forecasts give the same l_h in either layout.
        let ws: Vec<Window> = (0..3)
            .map(|i| Window {
                input: window(4, 2, i as f64),
                target: window(3, 2, 0.5 * i as f64),
                start: i,
            })
            .collect();
        let refs: Vec<&Window> = ws.iter().collect();
        let preds: Vec<Tensor> = (0..3).map(|i| window(3, 2, -(i as f64))).collect();
        let mut results = Vec::new();
        for layout in [Layout::HorizonMajor, Layout::Flattened] {
            let pr: Vec<&Tensor> = preds.iter().collect();
            let tg: Vec<&Tensor> = ws.iter().map(|w| &w.target).collect();
            let batch = Batch {
                input: stack(layout, &refs.iter().map(|w| &w.input).collect::<Vec<_>>(), 4, 2).unwrap(),
                target: stack(layout, &tg, 3, 2).unwrap(),
                starts: vec![0, 1, 2],
                layout,
                horizon: 3,
                channels: 2,
            };
            let mut tape = Tape::new();
            let p = tape.constant(stack(layout, &pr, 3, 2).unwrap());
            let l = per_timestep_loss(&mut tape, p, &batch).unwrap();
            results.push(tape.value(l).data().to_vec());
        }
        for (a, b) in results[0].iter().zip(&results[1]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
