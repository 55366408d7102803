//! Mini training loop: SGD/Adam, exponential learning-rate decay, early
//! stopping on validation MSE, and a full parameter snapshot per epoch.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamGroup, Tape};
use crate::data::Window;
use crate::error::{Error, Result};
use crate::mix_seed;
use crate::model::{per_timestep_loss, ForecastModel, ForwardCtx};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    #[serde(default = "beta1")]
    pub beta1: f64,
    #[serde(default = "beta2")]
    pub beta2: f64,
    #[serde(default = "adam_eps")]
    pub eps: f64,
    /// Multiplies the learning rate after every epoch.
    #[serde(default = "no_decay")]
    pub lr_decay: f64,
}

fn beta1() -> f64 {
    0.9
}
fn beta2() -> f64 {
    0.999
}
fn adam_eps() -> f64 {
    1e-8
}
fn no_decay() -> f64 {
    1.0
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        OptimizerConfig { kind: OptimizerKind::Sgd, lr, beta1: beta1(), beta2: beta2(), eps: adam_eps(), lr_decay: 1.0 }
    }

    pub fn adam(lr: f64) -> Self {
        OptimizerConfig { kind: OptimizerKind::Adam, ..OptimizerConfig::sgd(lr) }
    }

    pub fn validate(&self) -> Result<()> {
        // A zero rate is allowed: it turns an epoch into a pure evaluation pass.
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate {} must be nonnegative", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} = {b} outside [0, 1)")));
            }
        }
        if !(self.lr_decay > 0.0) {
            return Err(Error::Config(format!("lr decay {} must be positive", self.lr_decay)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    lr: f64,
    steps: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig, params: &[ParamGroup]) -> Result<Self> {
        cfg.validate()?;
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        Ok(Optimizer { cfg, lr: cfg.lr, steps: 0, m: zeros.clone(), v: zeros })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Applies the gradients currently stored in `params`.
    pub fn step(&mut self, params: &mut [ParamGroup]) {
        self.steps += 1;
        let c = &self.cfg;
        for (i, p) in params.iter_mut().enumerate() {
            let g = p.grad();
            let w = p.value.data_mut();
            match c.kind {
                OptimizerKind::Sgd => {
                    for (wj, gj) in w.iter_mut().zip(g.data()) {
                        *wj -= self.lr * gj;
                    }
                }
                OptimizerKind::Adam => {
                    let bc1 = 1.0 - c.beta1.powi(self.steps);
                    let bc2 = 1.0 - c.beta2.powi(self.steps);
                    for (j, (wj, gj)) in w.iter_mut().zip(g.data()).enumerate() {
                        let m = &mut self.m[i][j];
                        let v = &mut self.v[i][j];
                        *m = c.beta1 * *m + (1.0 - c.beta1) * gj;
                        *v = c.beta2 * *v + (1.0 - c.beta2) * gj * gj;
                        let mhat = *m / bc1;
                        let vhat = *v / bc2;
                        *wj -= self.lr * mhat / (vhat.sqrt() + c.eps);
                    }
                }
            }
        }
    }

    pub fn end_epoch(&mut self) {
        self.lr *= self.cfg.lr_decay;
    }
}

/// One shuffled pass over `windows`; returns the mean training MSE,
/// weighted by batch size.
pub fn train_epoch(
    model: &mut ForecastModel,
    windows: &[Window],
    batch_size: usize,
    opt: &mut Optimizer,
    seed: u64,
    epoch: usize,
) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::Data("no training windows".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be >= 1".into()));
    }
    let epoch_seed = mix_seed(seed, epoch as u64);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
    let mut total = 0.0;
    for (bi, idx) in order.chunks(batch_size).enumerate() {
        let refs: Vec<&Window> = idx.iter().map(|&i| &windows[i]).collect();
        let batch = model.batch(&refs)?;
        let mut tape = Tape::new();
        let pred = model.forward(&mut tape, &batch, ForwardCtx::train(mix_seed(epoch_seed, bi as u64)))?;
        let lt = per_timestep_loss(&mut tape, pred, &batch)?;
        let loss = tape.mean_axis(lt, None)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Numeric(format!("training loss diverged at epoch {epoch}, batch {bi}")));
        }
        total += value * refs.len() as f64;
        tape.backward(loss, &mut model.params)?;
        opt.step(&mut model.params);
    }
    opt.end_epoch();
    Ok(total / windows.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
}

/// Dropout-free MSE and MAE over every forecast entry.
pub fn evaluate(model: &ForecastModel, windows: &[Window]) -> Result<Metrics> {
    if windows.is_empty() {
        return Ok(Metrics { mse: 0.0, mae: 0.0 });
    }
    let (mut se, mut ae, mut n) = (0.0, 0.0, 0usize);
    for chunk in windows.chunks(256) {
        let refs: Vec<&Window> = chunk.iter().collect();
        let batch = model.batch(&refs)?;
        let mut tape = Tape::new();
        let pred = model.forward(&mut tape, &batch, ForwardCtx::eval())?;
        for (p, t) in tape.value(pred).data().iter().zip(batch.target.data()) {
            let d = p - t;
            se += d * d;
            ae += d.abs();
            n += 1;
        }
    }
    Ok(Metrics { mse: se / n as f64, mae: ae / n as f64 })
}

/// Patience-based early stopping on a monitored loss.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Result<Self> {
        if patience == 0 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        Ok(EarlyStopping { patience, best: f64::INFINITY, best_epoch: 0, wait: 0 })
    }

    /// Records `loss` for `epoch`; true once `patience` epochs in a row failed
    /// to improve on the best loss.
    pub fn update(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.wait = 0;
            false
        } else {
            self.wait += 1;
            self.wait >= self.patience
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    /// Epochs to keep training after early stopping fires.
    #[serde(default)]
    pub extra_epochs: usize,
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss of the epoch; for epoch 0 the initial model's
    /// training MSE.
    pub train_loss: f64,
    pub val_mse: f64,
    pub val_mae: f64,
}

#[derive(Clone, Debug)]
pub struct TrainRun {
    /// `checkpoints[e]` is the model after epoch `e`; index 0 is the
    /// initialization.
    pub checkpoints: Vec<ForecastModel>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_epoch: Option<usize>,
}

pub fn fit(mut model: ForecastModel, train: &[Window], val: &[Window], cfg: &FitConfig) -> Result<TrainRun> {
    let mut stopper = EarlyStopping::new(cfg.patience)?;
    let mut opt = Optimizer::new(cfg.optimizer, &model.params)?;
    let v0 = evaluate(&model, val)?;
    let mut history = vec![EpochRecord {
        epoch: 0,
        train_loss: evaluate(&model, train)?.mse,
        val_mse: v0.mse,
        val_mae: v0.mae,
    }];
    let mut checkpoints = vec![model.clone()];
    let mut stopped_epoch = None;
    let mut remaining = None;
    for epoch in 1..=cfg.epochs {
        let train_loss = train_epoch(&mut model, train, cfg.batch_size, &mut opt, cfg.seed, epoch)?;
        let v = evaluate(&model, val)?;
        history.push(EpochRecord { epoch, train_loss, val_mse: v.mse, val_mae: v.mae });
        let mut snapshot = model.clone();
        snapshot.params.iter_mut().for_each(ParamGroup::zero_grad);
        checkpoints.push(snapshot);
        match remaining {
            Some(n) => {
                if n == 1 {
                    break;
                }
                remaining = Some(n - 1);
            }
            None => {
                if stopper.update(epoch, v.mse) {
                    stopped_epoch = Some(epoch);
                    if cfg.extra_epochs == 0 {
                        break;
                    }
                    remaining = Some(cfg.extra_epochs);
                }
            }
        }
    }
    Ok(TrainRun { checkpoints, history, best_epoch: stopper.best_epoch(), stopped_epoch })
}

/// `run.json` in a run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: u32,
    pub fit: FitConfig,
    pub best_epoch: usize,
    pub stopped_epoch: Option<usize>,
    pub epochs: usize,
    /// Free-form description of the data the run was trained on.
    pub data: serde_json::Value,
}

pub const RUN_FORMAT: &str = "hamkit-run";

pub fn checkpoint_path(dir: &Path, epoch: usize) -> std::path::PathBuf {
    dir.join("checkpoints").join(format!("epoch_{epoch:03}.json"))
}

impl TrainRun {
    /// Writes `run.json`, `config.json`, `losses.csv` and one checkpoint file
    /// per epoch under `dir`.
    pub fn save(&self, dir: &Path, fit: &FitConfig, data: serde_json::Value) -> Result<()> {
        let ck_dir = dir.join("checkpoints");
        std::fs::create_dir_all(&ck_dir).map_err(|e| Error::io(&ck_dir, e))?;
        for (epoch, m) in self.checkpoints.iter().enumerate() {
            m.save(&checkpoint_path(dir, epoch), epoch)?;
        }
        let config = &self.checkpoints[0].config;
        let cfg_path = dir.join("config.json");
        std::fs::write(&cfg_path, serde_json::to_string_pretty(config)? + "\n").map_err(|e| Error::io(&cfg_path, e))?;

        let manifest = RunManifest {
            format: RUN_FORMAT.into(),
            version: 1,
            fit: fit.clone(),
            best_epoch: self.best_epoch,
            stopped_epoch: self.stopped_epoch,
            epochs: self.checkpoints.len() - 1,
            data,
        };
        let run_path = dir.join("run.json");
        std::fs::write(&run_path, serde_json::to_string_pretty(&manifest)? + "\n")
            .map_err(|e| Error::io(&run_path, e))?;

        let mut w = csv::Writer::from_path(dir.join("losses.csv"))?;
        w.write_record(["epoch", "train_loss", "val_mse", "val_mae"])?;
        for r in &self.history {
            w.write_record([
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.val_mse.to_string(),
                r.val_mae.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(dir.join("losses.csv"), e))?;
        Ok(())
    }
}

pub fn load_manifest(dir: &Path) -> Result<RunManifest> {
    let path = dir.join("run.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: RunManifest = serde_json::from_str(&text)?;
    if m.format != RUN_FORMAT {
        return Err(Error::validation("$.format", format!("expected `{RUN_FORMAT}`")));
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{self, SeriesFrame, WindowSpec};
    use crate::model::{ModelConfig, ModelKind};
    use crate::tensor::Tensor;

    fn scalar_param(w: f64) -> Vec<ParamGroup> {
        let mut p = vec![ParamGroup::new("w", Tensor::scalar(w))];
        // d(w²)/dw
        p[0].set_grad(Tensor::scalar(2.0 * w)).unwrap();
        p
    }

    #[test]
    fn sgd_step_on_square() {
        let mut p = scalar_param(3.0);
        let mut opt = Optimizer::new(OptimizerConfig::sgd(0.1), &p).unwrap();
        opt.step(&mut p);
        assert!((p[0].value.item() - 2.4).abs() < 1e-15);
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let lr = 0.05;
        let mut p = scalar_param(3.0);
        let mut opt = Optimizer::new(OptimizerConfig::adam(lr), &p).unwrap();
        opt.step(&mut p);
        let moved = p[0].value.item() - 3.0;
        assert!(moved < 0.0);
        assert!(moved.abs() <= lr * (1.0 + 1e-8));
        assert!((moved.abs() - lr).abs() < 1e-9);
    }

    #[test]
    fn lr_decay_is_exponential() {
        let p = scalar_param(1.0);
        let mut opt = Optimizer::new(OptimizerConfig { lr_decay: 0.5, ..OptimizerConfig::sgd(0.8) }, &p).unwrap();
        opt.end_epoch();
        opt.end_epoch();
        assert_eq!(opt.lr(), 0.2);
        assert!(Optimizer::new(OptimizerConfig::sgd(-1.0), &p).is_err());
        assert!(Optimizer::new(OptimizerConfig { beta1: 1.0, ..OptimizerConfig::adam(0.1) }, &p).is_err());
    }

    fn trend_windows(len: usize, l: usize, h: usize) -> Vec<Window> {
        let vals: Vec<f64> = (0..len).map(|t| -1.0 + 2.0 * t as f64 / len as f64).collect();
        let fr = SeriesFrame::new(vals, vec!["x".into()], None).unwrap();
        data::windows(&fr, &WindowSpec::new(l, h, 1).unwrap()).unwrap()
    }

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let ws = trend_windows(40, 4, 2);
        let mut m = ForecastModel::init(ModelConfig::new(ModelKind::Linear, 4, 2, 1)).unwrap();
        let before = m.clone();
        let mut opt = Optimizer::new(OptimizerConfig::adam(0.0), &m.params).unwrap();
        let loss = train_epoch(&mut m, &ws, 8, &mut opt, 1, 1).unwrap();
        assert!(loss > 0.0);
        for (a, b) in m.params.iter().zip(&before.params) {
            assert_eq!(a.value, b.value);
        }
        assert!(train_epoch(&mut m, &[], 8, &mut opt, 1, 1).is_err());
    }

    #[test]
    fn metrics_on_known_errors() {
        let ws = trend_windows(30, 3, 2);
        let mut m = ForecastModel::init(ModelConfig::new(ModelKind::Linear, 3, 2, 1)).unwrap();
        for p in &mut m.params {
            p.value.fill(0.0);
        }
        // zero forecasts: error = -target
        let zero = evaluate(&m, &ws).unwrap();
        assert!(zero.mae <= zero.mse.sqrt() + 1e-15);

        let perfect: Vec<Window> = ws.iter().map(|w| Window { target: Tensor::zeros(&[2, 1]), ..w.clone() }).collect();
        let mt = evaluate(&m, &perfect).unwrap();
        assert_eq!((mt.mse, mt.mae), (0.0, 0.0));

        let off: Vec<Window> = ws.iter().map(|w| Window { target: Tensor::full(&[2, 1], -1.0), ..w.clone() }).collect();
        let mt = evaluate(&m, &off).unwrap();
        assert_eq!((mt.mse, mt.mae), (1.0, 1.0));
    }

    #[test]
    fn patience_definition() {
        let mut es = EarlyStopping::new(2).unwrap();
        let vals = [1.0, 2.0, 3.0, 4.0];
        let mut stop = None;
        for (i, v) in vals.iter().enumerate() {
            if es.update(i + 1, *v) {
                stop = Some(i + 1);
                break;
            }
        }
        assert_eq!(stop, Some(3));
        assert_eq!(es.best_epoch(), 1);
        assert!(EarlyStopping::new(0).is_err());
    }

    fn noisy_split() -> (Vec<Window>, Vec<Window>) {
        let cfg = data::SynthConfig {
            length: 160,
            channels: vec![data::SynthChannel {
                name: None,
                components: vec![data::SineComponent { period: 16.0, amplitude: 1.0, phase: 0.0 }],
            }],
            slope: 0.0,
            noise_std: 0.8,
            seed: 3,
        };
        let fr = data::synth(&cfg).unwrap();
        let sp = data::split(&fr, &data::SplitSpec::default()).unwrap();
        let spec = WindowSpec::new(8, 4, 1).unwrap();
        (data::windows(&sp.train, &spec).unwrap(), data::windows(&sp.val, &spec).unwrap())
    }

    #[test]
    fn continuing_past_the_stop_keeps_the_stop_epoch() {
        let (tr, va) = noisy_split();
        let model = ForecastModel::init(ModelConfig {
            hidden: vec![32],
            seed: 2,
            ..ModelConfig::new(ModelKind::Mlp, 8, 4, 1)
        })
        .unwrap();
        let base = FitConfig {
            epochs: 200,
            patience: 2,
            batch_size: 8,
            extra_epochs: 0,
            optimizer: OptimizerConfig::adam(0.01),
            seed: 9,
        };
        let a = fit(model.clone(), &tr, &va, &base).unwrap();
        let stop = a.stopped_epoch.expect("noisy data overfits");
        assert_eq!(a.checkpoints.len(), stop + 1);
        let b = fit(model, &tr, &va, &FitConfig { extra_epochs: 5, ..base }).unwrap();
        assert_eq!(b.stopped_epoch, Some(stop));
        assert_eq!(b.best_epoch, a.best_epoch);
        assert_eq!(b.checkpoints.len(), stop + 1 + 5);
        assert_eq!(a.history, b.history[..=stop]);
        assert_eq!(b.checkpoints[0], ForecastModel::init(b.checkpoints[0].config.clone()).unwrap());
    }

    #[test]
    fn linear_fits_a_noiseless_trend() {
        let ws = trend_windows(200, 6, 3);
        let model = ForecastModel::init(ModelConfig { seed: 4, ..ModelConfig::new(ModelKind::Linear, 6, 3, 1) }).unwrap();
        let cfg = FitConfig {
            epochs: 150,
            patience: 1000,
            batch_size: 16,
            extra_epochs: 0,
            optimizer: OptimizerConfig::adam(0.01),
            seed: 1,
        };
        let run = fit(model, &ws, &ws, &cfg).unwrap();
        let last = run.checkpoints.last().unwrap();
        assert!(evaluate(last, &ws).unwrap().mse < 1e-3);
    }

    #[test]
    fn fixed_seeds_reproduce_losses() {
        let (tr, va) = noisy_split();
        let model = ForecastModel::init(ModelConfig {
            hidden: vec![8],
            dropout: 0.2,
            seed: 2,
            ..ModelConfig::new(ModelKind::Mlp, 8, 4, 1)
        })
        .unwrap();
        let cfg = FitConfig {
            epochs: 4,
            patience: 10,
            batch_size: 16,
            extra_epochs: 0,
            optimizer: OptimizerConfig::sgd(0.05),
            seed: 9,
        };
        let a = fit(model.clone(), &tr, &va, &cfg).unwrap();
        let b = fit(model, &tr, &va, &cfg).unwrap();
        assert_eq!(a.history, b.history);
    }
}
