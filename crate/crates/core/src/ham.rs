//! Horizon activation maps.
//!
//! For a horizon of `H` steps and a cut `ĥ ∈ 0..=H`, the causal mask keeps
//! timesteps `1..=ĥ` of the regression loss and the anti-causal mask keeps
//! `ĥ+1..=H`. The masked loss of a batch is `Σ_h mask_h · l_h / H`, where
//! `l_h` is the squared error at timestep `h` averaged over channels and
//! windows; the divisor stays `H` however many steps are kept. A curve holds,
//! for every cut, the parameter-gradient norm of that loss, reduced over
//! layers and averaged over the batches of a dataset.
//!
//! Two routes compute the curves:
//!
//! * [`ham_naive`] backpropagates every masked loss separately; it is the
//!   reference.
//! * [`ham_fast`] runs one forward pass per batch, sweeps back once per
//!   timestep to get `g_h = ∇θ l_h / H`, and reads both modes off running
//!   prefix and suffix sums of the `g_h`. The gradient is linear in the mask,
//!   so the two routes agree up to floating-point reassociation.
//!
//! Gradients are taken at a frozen checkpoint and never applied. Dropout
//! masks are seeded per batch, so every cut and both modes see the same
//! masks and batch order.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape, Var};
use crate::data::Window;
use crate::error::{Error, Result};
use crate::mix_seed;
use crate::model::{per_timestep_loss, Batch, ForecastModel, ForwardCtx};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    Causal,
    Anticausal,
}

impl MaskMode {
    pub const BOTH: [MaskMode; 2] = [MaskMode::Causal, MaskMode::Anticausal];
}

impl fmt::Display for MaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskMode::Causal => "causal",
            MaskMode::Anticausal => "anticausal",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HorizonMask {
    pub mode: MaskMode,
    pub cut: usize,
    pub horizon: usize,
    /// `bits[i]` covers timestep `i + 1`.
    pub bits: Vec<bool>,
}

pub fn make_mask(mode: MaskMode, cut: usize, horizon: usize) -> Result<HorizonMask> {
    if cut > horizon {
        return Err(Error::Config(format!("mask cut {cut} outside 0..={horizon}")));
    }
    let bits = (1..=horizon)
        .map(|h| match mode {
            MaskMode::Causal => h <= cut,
            MaskMode::Anticausal => h > cut,
        })
        .collect();
    Ok(HorizonMask { mode, cut, horizon, bits })
}

impl HorizonMask {
    /// `1 × H` row of `bit / H`, the weights of `l_h` in the masked loss.
    fn weights(&self) -> Tensor {
        let h = self.horizon as f64;
        let w = self.bits.iter().map(|&b| if b { 1.0 / h } else { 0.0 }).collect();
        Tensor::matrix(1, self.horizon, w).expect("mask row")
    }
}

/// Masked loss of one `H × C` forecast: per-timestep squared error averaged
/// over channels, summed over the kept timesteps, divided by `H`.
pub fn masked_loss(preds: &Tensor, targets: &Tensor, mask: &HorizonMask) -> Result<f64> {
    if preds.shape() != targets.shape() {
        return Err(Error::shape("masked_loss", format!("{:?} vs {:?}", preds.shape(), targets.shape())));
    }
    let (h, c) = preds
        .dims2()
        .ok_or_else(|| Error::shape("masked_loss", format!("expected [H, C], got {:?}", preds.shape())))?;
    if h != mask.horizon {
        return Err(Error::shape("masked_loss", format!("{h} timesteps vs mask horizon {}", mask.horizon)));
    }
    let mut total = 0.0;
    for t in 0..h {
        if mask.bits[t] {
            let lt: f64 = (0..c).map(|j| (preds.get2(t, j) - targets.get2(t, j)).powi(2)).sum::<f64>() / c as f64;
            total += lt;
        }
    }
    Ok(total / h as f64)
}

/// Masked loss on a tape, from the `H × 1` per-timestep losses.
pub fn masked_loss_var(tape: &mut Tape, per_timestep: Var, mask: &HorizonMask) -> Result<Var> {
    let w = tape.constant(mask.weights());
    tape.matmul(w, per_timestep)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    L1,
    #[default]
    L2,
    Linf,
}

impl NormKind {
    pub fn apply(self, v: &[f64]) -> f64 {
        match self {
            NormKind::L1 => v.iter().map(|x| x.abs()).sum(),
            NormKind::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            NormKind::Linf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
        }
    }
}

impl std::str::FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(NormKind::L1),
            "l2" => Ok(NormKind::L2),
            "linf" => Ok(NormKind::Linf),
            other => Err(Error::Config(format!("unknown norm `{other}` (l1, l2, linf)"))),
        }
    }
}

/// How per-layer gradients become the overall value of a curve point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Arithmetic mean of the per-layer norms.
    #[default]
    MeanOfLayers,
    /// One norm over the concatenation of all layer gradients.
    Concatenated,
}

impl std::str::FromStr for Reduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" | "mean_of_layers" => Ok(Reduction::MeanOfLayers),
            "concat" | "concatenated" => Ok(Reduction::Concatenated),
            other => Err(Error::Config(format!("unknown reduction `{other}` (mean, concat)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HamConfig {
    pub batch_size: usize,
    #[serde(default)]
    pub norm: NormKind,
    #[serde(default)]
    pub reduction: Reduction,
    /// Seeds the replayed dropout masks.
    #[serde(default)]
    pub seed: u64,
    /// Run the model with dropout active, as during training.
    #[serde(default = "yes")]
    pub train_mode: bool,
    /// Worker threads over batches; results are merged in batch order.
    #[serde(default = "one", skip_serializing)]
    pub threads: usize,
}

fn yes() -> bool {
    true
}

fn one() -> usize {
    1
}

impl HamConfig {
    pub fn new(batch_size: usize) -> Self {
        HamConfig {
            batch_size,
            norm: NormKind::L2,
            reduction: Reduction::MeanOfLayers,
            seed: 0,
            train_mode: true,
            threads: 1,
        }
    }

    fn ctx(&self, batch_index: usize) -> ForwardCtx {
        ForwardCtx { train_mode: self.train_mode, dropout_seed: mix_seed(self.seed, batch_index as u64) }
    }
}

/// One mode's curve: `H + 1` values indexed by the cut `ĥ = 0..=H`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HamCurve {
    pub mode: MaskMode,
    pub horizon: usize,
    pub overall: Vec<f64>,
    #[serde(default)]
    pub per_layer: BTreeMap<String, Vec<f64>>,
}

impl HamCurve {
    /// The full-loss gradient norm average (`causal[H]` or `anticausal[0]`).
    pub fn full_value(&self) -> f64 {
        match self.mode {
            MaskMode::Causal => self.overall[self.horizon],
            MaskMode::Anticausal => self.overall[0],
        }
    }

    pub fn scaled(&self, k: f64) -> HamCurve {
        let mut c = self.clone();
        c.overall.iter_mut().for_each(|v| *v *= k);
        c.per_layer.values_mut().for_each(|s| s.iter_mut().for_each(|v| *v *= k));
        c
    }

    /// The curve restricted to one layer, as an overall curve.
    pub fn layer(&self, name: &str) -> Option<HamCurve> {
        self.per_layer.get(name).map(|v| HamCurve {
            mode: self.mode,
            horizon: self.horizon,
            overall: v.clone(),
            per_layer: BTreeMap::new(),
        })
    }
}

/// A loss term added to the masked regression loss.
pub trait AuxLoss: Send + Sync {
    fn name(&self) -> &str;

    /// Builds the scalar (`[1, 1]`) term on a tape where the model's
    /// parameters are already registered.
    fn build(&self, tape: &mut Tape, model: &ForecastModel) -> Result<Var>;

    /// Whether the term splits into per-timestep pieces that a horizon mask
    /// could select.
    fn per_timestep(&self) -> bool {
        false
    }
}

/// `λ · Σ θ²` over every parameter group.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct L2Penalty {
    pub lambda: f64,
}

impl AuxLoss for L2Penalty {
    fn name(&self) -> &str {
        "l2_penalty"
    }

    fn build(&self, tape: &mut Tape, model: &ForecastModel) -> Result<Var> {
        let mut total: Option<Var> = None;
        for p in &model.params {
            let v = tape
                .param_var(&p.name)
                .ok_or_else(|| Error::Config(format!("parameter `{}` not on tape", p.name)))?;
            let sq = tape.square(v)?;
            let mean = tape.mean_axis(sq, None)?;
            let k = tape.constant(Tensor::matrix(1, 1, vec![self.lambda * p.numel() as f64])?);
            let term = tape.matmul(k, mean)?;
            total = Some(match total {
                Some(t) => tape.add(t, term)?,
                None => term,
            });
        }
        total.ok_or_else(|| Error::Config("model has no parameters".into()))
    }
}

/// The regression loss that horizon masks act on, plus auxiliary terms that
/// are always included in full.
#[derive(Default)]
pub struct CompositeLoss {
    unmaskable: Vec<Box<dyn AuxLoss>>,
}

impl CompositeLoss {
    pub fn regression_only() -> Self {
        CompositeLoss::default()
    }

    pub fn register_unmaskable_loss(mut self, term: impl AuxLoss + 'static) -> Self {
        self.unmaskable.push(Box::new(term));
        self
    }

    /// Masking an extra term requires it to decompose per timestep; none of
    /// the provided terms do, so this only admits terms that declare it.
    pub fn register_masked_loss(self, term: impl AuxLoss + 'static) -> Result<Self> {
        if !term.per_timestep() {
            return Err(Error::Config(format!(
                "loss term `{}` does not decompose per timestep; register it as unmaskable",
                term.name()
            )));
        }
        Err(Error::Config(format!(
            "masked auxiliary terms are not supported (term `{}`); register it as unmaskable",
            term.name()
        )))
    }

    pub fn has_aux(&self) -> bool {
        !self.unmaskable.is_empty()
    }

    fn build_aux(&self, tape: &mut Tape, model: &ForecastModel) -> Result<Option<Var>> {
        let mut total: Option<Var> = None;
        for t in &self.unmaskable {
            let v = t.build(tape, model)?;
            if !tape.value(v).is_scalar() {
                return Err(Error::shape("aux loss", format!("term `{}` is not scalar", t.name())));
            }
            total = Some(match total {
                Some(acc) => tape.add(acc, v)?,
                None => v,
            });
        }
        Ok(total)
    }
}

impl fmt::Debug for CompositeLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.unmaskable.iter().map(|t| t.name()).collect();
        f.debug_struct("CompositeLoss").field("unmaskable", &names).finish()
    }
}

/// Gradient of one loss, flattened per layer in model declaration order.
type LayerGrads = Vec<Vec<f64>>;

fn layer_grads(model: &ForecastModel, grads: &Gradients) -> LayerGrads {
    model
        .params
        .iter()
        .map(|p| grads.get(&p.name).map(|t| t.data().to_vec()).unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect()
}

fn point_norms(grads: &LayerGrads, cfg: &HamConfig) -> (f64, Vec<f64>) {
    let per_layer: Vec<f64> = grads.iter().map(|g| cfg.norm.apply(g)).collect();
    let overall = match cfg.reduction {
        Reduction::MeanOfLayers => per_layer.iter().sum::<f64>() / per_layer.len() as f64,
        Reduction::Concatenated => {
            let flat: Vec<f64> = grads.iter().flatten().copied().collect();
            cfg.norm.apply(&flat)
        }
    };
    (overall, per_layer)
}

/// Norms of one batch for every cut of one mode.
struct BatchNorms {
    weight: f64,
    overall: Vec<f64>,
    per_layer: Vec<Vec<f64>>,
}

fn batches(windows: &[Window], batch_size: usize) -> Result<Vec<Vec<&Window>>> {
    if windows.is_empty() {
        return Err(Error::Data("HAM needs at least one window".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be >= 1".into()));
    }
    Ok(windows.chunks(batch_size).map(|c| c.iter().collect()).collect())
}

/// Runs `work` over batches, possibly on several threads, and returns the
/// results in batch order.
fn over_batches<T: Send>(
    model: &ForecastModel,
    windows: &[Window],
    cfg: &HamConfig,
    work: impl Fn(usize, &Batch) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    let groups = batches(windows, cfg.batch_size)?;
    let built: Vec<Batch> = groups.iter().map(|g| model.batch(g)).collect::<Result<_>>()?;
    let threads = cfg.threads.max(1).min(built.len());
    if threads <= 1 {
        return built.iter().enumerate().map(|(i, b)| work(i, b)).collect();
    }
    let chunk = built.len().div_ceil(threads);
    let work = &work;
    let parts: Vec<Result<Vec<T>>> = std::thread::scope(|s| {
        let handles: Vec<_> = built
            .chunks(chunk)
            .enumerate()
            .map(|(k, part)| {
                s.spawn(move || {
                    part.iter().enumerate().map(|(j, b)| work(k * chunk + j, b)).collect::<Result<Vec<T>>>()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("HAM worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(built.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

fn average(model: &ForecastModel, mode: MaskMode, horizon: usize, parts: &[BatchNorms]) -> Result<HamCurve> {
    let total: f64 = parts.iter().map(|p| p.weight).sum();
    let n_layers = model.params.len();
    let mut overall = vec![0.0; horizon + 1];
    let mut layers = vec![vec![0.0; horizon + 1]; n_layers];
    for p in parts {
        for k in 0..=horizon {
            overall[k] += p.weight * p.overall[k];
            for (l, acc) in layers.iter_mut().enumerate() {
                acc[k] += p.weight * p.per_layer[k][l];
            }
        }
    }
    overall.iter_mut().for_each(|v| *v /= total);
    layers.iter_mut().for_each(|s| s.iter_mut().for_each(|v| *v /= total));
    if let Some(bad) = overall.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("{mode} curve is not finite at cut {bad}")));
    }
    let per_layer = model.params.iter().map(|p| p.name.clone()).zip(layers).collect();
    Ok(HamCurve { mode, horizon, overall, per_layer })
}

/// Masked-backprop reference: one forward and backward per batch, cut and
/// mode.
pub fn ham_naive(
    model: &ForecastModel,
    windows: &[Window],
    mode: MaskMode,
    cfg: &HamConfig,
    loss: &CompositeLoss,
) -> Result<HamCurve> {
    let horizon = model.config.horizon;
    let parts = over_batches(model, windows, cfg, |bi, batch| {
        let mut overall = Vec::with_capacity(horizon + 1);
        let mut per_layer = Vec::with_capacity(horizon + 1);
        for cut in 0..=horizon {
            let g = masked_gradient(model, batch, &make_mask(mode, cut, horizon)?, cfg.ctx(bi), loss)?;
            let (o, l) = point_norms(&g, cfg);
            overall.push(o);
            per_layer.push(l);
        }
        Ok(BatchNorms { weight: batch.size() as f64, overall, per_layer })
    })?;
    average(model, mode, horizon, &parts)
}

fn masked_gradient(
    model: &ForecastModel,
    batch: &Batch,
    mask: &HorizonMask,
    ctx: ForwardCtx,
    loss: &CompositeLoss,
) -> Result<LayerGrads> {
    let mut tape = Tape::new();
    let pred = model.forward(&mut tape, batch, ctx)?;
    let lt = per_timestep_loss(&mut tape, pred, batch)?;
    let mut total = masked_loss_var(&mut tape, lt, mask)?;
    if let Some(aux) = loss.build_aux(&mut tape, model)? {
        total = tape.add(total, aux)?;
    }
    Ok(layer_grads(model, &tape.gradients(total)?))
}

/// Per-timestep gradients `g_h = ∇θ l_h / H` of one batch, plus the gradient
/// of the auxiliary terms if any.
fn timestep_gradients(
    model: &ForecastModel,
    batch: &Batch,
    ctx: ForwardCtx,
    loss: &CompositeLoss,
) -> Result<(Vec<LayerGrads>, Option<LayerGrads>)> {
    let horizon = model.config.horizon;
    let mut tape = Tape::new();
    let pred = model.forward(&mut tape, batch, ctx)?;
    let lt = per_timestep_loss(&mut tape, pred, batch)?;
    let mut per_step = Vec::with_capacity(horizon);
    let mut seed = Tensor::zeros(&[horizon, 1]);
    for h in 0..horizon {
        seed.fill(0.0);
        seed.data_mut()[h] = 1.0 / horizon as f64;
        per_step.push(layer_grads(model, &tape.vjp(lt, &seed)?));
    }
    let aux = match loss.build_aux(&mut tape, model)? {
        Some(v) => Some(layer_grads(model, &tape.gradients(v)?)),
        None => None,
    };
    Ok((per_step, aux))
}

fn add_into(acc: &mut LayerGrads, g: &LayerGrads) {
    for (a, b) in acc.iter_mut().zip(g) {
        for (x, y) in a.iter_mut().zip(b) {
            *x += y;
        }
    }
}

fn with_aux<'a>(g: &'a LayerGrads, aux: &Option<LayerGrads>) -> std::borrow::Cow<'a, LayerGrads> {
    match aux {
        Some(a) => {
            let mut out = g.clone();
            add_into(&mut out, a);
            std::borrow::Cow::Owned(out)
        }
        None => std::borrow::Cow::Borrowed(g),
    }
}

/// Both modes from one forward pass per batch, via prefix and suffix sums of
/// the per-timestep gradients.
pub fn ham_fast(
    model: &ForecastModel,
    windows: &[Window],
    cfg: &HamConfig,
    loss: &CompositeLoss,
) -> Result<(HamCurve, HamCurve)> {
    let horizon = model.config.horizon;
    let parts = over_batches(model, windows, cfg, |bi, batch| {
        let (steps, aux) = timestep_gradients(model, batch, cfg.ctx(bi), loss)?;
        let zero: LayerGrads = model.params.iter().map(|p| vec![0.0; p.numel()]).collect();
        let weight = batch.size() as f64;

        let mut causal = BatchNorms { weight, overall: Vec::new(), per_layer: Vec::new() };
        let mut prefix = zero.clone();
        for k in 0..=horizon {
            if k > 0 {
                add_into(&mut prefix, &steps[k - 1]);
            }
            let (o, l) = point_norms(&with_aux(&prefix, &aux), cfg);
            causal.overall.push(o);
            causal.per_layer.push(l);
        }

        let mut anti = BatchNorms {
            weight,
            overall: vec![0.0; horizon + 1],
            per_layer: vec![Vec::new(); horizon + 1],
        };
        let mut suffix = zero;
        for k in (0..=horizon).rev() {
            if k < horizon {
                add_into(&mut suffix, &steps[k]);
            }
            let (o, l) = point_norms(&with_aux(&suffix, &aux), cfg);
            anti.overall[k] = o;
            anti.per_layer[k] = l;
        }
        Ok((causal, anti))
    })?;
    let (c, a): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
    Ok((average(model, MaskMode::Causal, horizon, &c)?, average(model, MaskMode::Anticausal, horizon, &a)?))
}

/// Result of checking `∇(causal ĥ) + ∇(anticausal ĥ) = ∇(full)` per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct DecompositionReport {
    pub ok: bool,
    /// Largest per-layer `‖g_c + g_a − g_full‖₂ / ‖g_full‖₂` (absolute when
    /// the full gradient vanishes).
    pub max_deviation: f64,
    pub per_layer: Vec<(String, f64)>,
    pub causal_norm: f64,
    pub anticausal_norm: f64,
}

pub const DECOMPOSITION_TOLERANCE: f64 = 1e-10;

pub fn decomposition_check(
    model: &ForecastModel,
    windows: &[Window],
    cut: usize,
    ctx: ForwardCtx,
) -> Result<DecompositionReport> {
    let horizon = model.config.horizon;
    let refs: Vec<&Window> = windows.iter().collect();
    let batch = model.batch(&refs)?;
    let loss = CompositeLoss::regression_only();
    let gc = masked_gradient(model, &batch, &make_mask(MaskMode::Causal, cut, horizon)?, ctx, &loss)?;
    let ga = masked_gradient(model, &batch, &make_mask(MaskMode::Anticausal, cut, horizon)?, ctx, &loss)?;
    let gf = masked_gradient(model, &batch, &make_mask(MaskMode::Causal, horizon, horizon)?, ctx, &loss)?;
    let mut per_layer = Vec::with_capacity(gf.len());
    let mut max_dev: f64 = 0.0;
    for (i, p) in model.params.iter().enumerate() {
        let resid: Vec<f64> = gc[i].iter().zip(&ga[i]).zip(&gf[i]).map(|((c, a), f)| c + a - f).collect();
        let scale = NormKind::L2.apply(&gf[i]);
        let r = NormKind::L2.apply(&resid);
        let dev = if scale > 0.0 { r / scale } else { r };
        max_dev = max_dev.max(dev);
        per_layer.push((p.name.clone(), dev));
    }
    let flat = |g: &LayerGrads| NormKind::L2.apply(&g.iter().flatten().copied().collect::<Vec<_>>());
    Ok(DecompositionReport {
        ok: max_dev < DECOMPOSITION_TOLERANCE,
        max_deviation: max_dev,
        per_layer,
        causal_norm: flat(&gc),
        anticausal_norm: flat(&ga),
    })
}

/// Largest relative deviation between two curves of the same mode, over the
/// overall values and every layer.
pub fn max_relative_deviation(a: &HamCurve, b: &HamCurve) -> f64 {
    let rel = |x: &[f64], y: &[f64]| {
        let scale = x.iter().chain(y).fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max) / scale
    };
    let mut worst = rel(&a.overall, &b.overall);
    for (name, v) in &a.per_layer {
        if let Some(w) = b.per_layer.get(name) {
            worst = worst.max(rel(v, w));
        }
    }
    worst
}
