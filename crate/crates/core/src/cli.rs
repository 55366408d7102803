//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::analytics::{interpolated_area_plot, AreaSeries, LineScope};
use crate::data::{self, GapPolicy, Scaler, SineComponent, SplitSpec, SynthChannel, SynthConfig, Window, WindowSpec};
use crate::error::{Error, Result};
use crate::ham::{ham_fast, ham_naive, CompositeLoss, HamConfig, HamCurve, MaskMode, NormKind, Reduction};
use crate::model::{ForecastModel, ModelConfig, ModelKind};
use crate::render::{render, PlotKind, PlotSpec};
use crate::trace::{export_csv, DatasetMeta, HamMeta, ModelMeta, TraceFile};
use crate::train::{checkpoint_path, fit, load_manifest, FitConfig, OptimizerConfig, OptimizerKind};

#[derive(Debug, Parser)]
#[command(name = "hamkit", version, about = "Horizon activation maps for forecasting models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic series as CSV.
    Synth(SynthArgs),
    /// Train a model and save every epoch's checkpoint.
    Train(TrainArgs),
    /// Compute causal/anticausal curves for a checkpoint and write a trace.
    Ham(HamArgs),
    /// Attach proportionality lines and signed area curves to a trace.
    Areas(AreasArgs),
    /// Attach the normalized difference curve and equivariant points.
    Diff(TraceInOut),
    /// Resample the area curves of several traces onto a shared [0, 1] grid.
    Interp(InterpArgs),
    /// Render traces as SVG.
    Render(RenderArgs),
    /// Validate an external trace file.
    Ingest(IngestArgs),
    /// Train at several batch sizes and trace every epoch.
    Sweep(SweepArgs),
    /// Export a trace as CSV.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// JSON synthetic config; overrides the shape flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    pub length: usize,
    #[arg(long, default_value_t = 1)]
    pub channels: usize,
    /// Comma-separated sine periods, shared by all channels.
    #[arg(long, value_delimiter = ',', default_values_t = vec![24.0])]
    pub periods: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub amplitude: f64,
    #[arg(long, default_value_t = 0.0)]
    pub slope: f64,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Input CSV (optional date column, numeric channels).
    #[arg(long)]
    pub data: PathBuf,
    /// Keep only this channel.
    #[arg(long)]
    pub channel: Option<String>,
    /// Forward-fill missing cells instead of rejecting them.
    #[arg(long)]
    pub ffill: bool,
    /// Train/val/test fractions.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = vec![0.6, 0.2, 0.2])]
    pub split: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// Skip per-channel standardization.
    #[arg(long)]
    pub raw: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, default_value = "linear")]
    pub model: ModelKind,
    #[arg(long, default_value_t = 96)]
    pub lookback: usize,
    #[arg(long, default_value_t = 24)]
    pub horizon: usize,
    /// Hidden widths of the mlp.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 0.0)]
    pub dropout: f64,
    /// Queue length of the cycle model.
    #[arg(long, default_value_t = 0)]
    pub cycle_len: usize,
    /// Disable last-value normalization (nlinear).
    #[arg(long)]
    pub no_normalize: bool,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 3)]
    pub patience: usize,
    /// Epochs to continue after early stopping fires.
    #[arg(long, default_value_t = 0)]
    pub extra_epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value = "adam", value_parser = ["adam", "sgd"])]
    pub optimizer: String,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lr_decay: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Run directory to create.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModeArg {
    Both,
    Causal,
    Anticausal,
}

#[derive(Debug, Clone, Args)]
pub struct HamOpts {
    /// Batch size for averaging gradient norms.
    #[arg(long = "ham-batch-size", id = "ham_batch_size", default_value_t = 256)]
    pub batch_size: usize,
    #[arg(long, default_value = "l2")]
    pub norm: NormKind,
    /// Layer reduction: mean or concat.
    #[arg(long, default_value = "mean")]
    pub reduction: Reduction,
    /// Disable dropout while computing gradients.
    #[arg(long)]
    pub eval_mode: bool,
    /// Keep per-layer curves in the trace.
    #[arg(long)]
    pub layerwise: bool,
    /// Worker threads over batches.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct HamArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    pub run: PathBuf,
    /// Checkpoint epoch; defaults to the best epoch.
    #[arg(long)]
    pub epoch: Option<usize>,
    #[arg(long, default_value = "train", value_parser = ["train", "val", "test"])]
    pub split: String,
    #[arg(long, value_enum, default_value_t = ModeArg::Both)]
    pub mode: ModeArg,
    /// Use the masked-backprop reference instead of prefix sums.
    #[arg(long)]
    pub naive: bool,
    #[command(flatten)]
    pub opts: HamOpts,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TraceInOut {
    #[arg(long)]
    pub trace: PathBuf,
    /// Output path; defaults to rewriting the input.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AreasArgs {
    #[command(flatten)]
    pub io: TraceInOut,
    /// Proportionality-line height: per-mode or global maximum.
    #[arg(long, default_value = "per-mode")]
    pub scope: LineScope,
}

#[derive(Debug, Args)]
pub struct InterpArgs {
    #[arg(long = "trace", required = true)]
    pub traces: Vec<PathBuf>,
    /// Labels, one per trace; defaults to file stems.
    #[arg(long = "label")]
    pub labels: Vec<String>,
    #[arg(long, default_value_t = 101)]
    pub grid: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub kind: PlotKind,
    /// Traces in sequence order; later ones are drawn darker.
    #[arg(long = "trace", required = true)]
    pub traces: Vec<PathBuf>,
    #[arg(long = "label")]
    pub labels: Vec<String>,
    #[arg(long)]
    pub title: Option<String>,
    #[arg(long, default_value_t = 101)]
    pub grid: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub trace: PathBuf,
    /// Write the validated trace in canonical form.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long, value_delimiter = ',', required = true)]
    pub batch_sizes: Vec<usize>,
    #[command(flatten)]
    pub ham: HamOpts,
    /// Cells trained in parallel.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// How a run's data were prepared; stored in the run manifest so `ham` can
/// rebuild the same windows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    pub path: PathBuf,
    pub channel: Option<String>,
    pub ffill: bool,
    pub split: SplitSpec,
    pub stride: usize,
    pub standardize: bool,
}

pub struct Prepared {
    pub train: Vec<Window>,
    pub val: Vec<Window>,
    pub test: Vec<Window>,
    pub scaler: Option<Scaler>,
    pub window: WindowSpec,
}

impl Prepared {
    pub fn split(&self, name: &str) -> Result<&[Window]> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

impl DataSpec {
    fn from_args(a: &DataArgs) -> Result<Self> {
        Ok(DataSpec {
            path: a.data.clone(),
            channel: a.channel.clone(),
            ffill: a.ffill,
            split: SplitSpec::new(a.split[0], a.split[1], a.split[2])?,
            stride: a.stride,
            standardize: !a.raw,
        })
    }

    pub fn prepare(&self, lookback: usize, horizon: usize) -> Result<Prepared> {
        let gaps = if self.ffill { GapPolicy::ForwardFill } else { GapPolicy::Reject };
        let mut frame = data::load_csv(&self.path, gaps)?;
        if let Some(c) = &self.channel {
            frame = frame.select_channel(c)?;
        }
        let splits = data::split(&frame, &self.split)?;
        let (scaler, splits) = if self.standardize {
            let (s, sp) = Scaler::standardize(&splits)?;
            (Some(s), sp)
        } else {
            (None, splits)
        };
        let window = WindowSpec::new(lookback, horizon, self.stride)?;
        Ok(Prepared {
            train: data::windows(&splits.train, &window)?,
            val: data::windows(&splits.val, &window)?,
            test: data::windows(&splits.test, &window)?,
            scaler,
            window,
        })
    }
}

fn model_config(m: &ModelArgs, channels: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        hidden: m.hidden.clone(),
        dropout: m.dropout,
        cycle_len: m.cycle_len,
        normalize: !m.no_normalize,
        seed,
        ..ModelConfig::new(m.model, m.lookback, m.horizon, channels)
    }
}

fn fit_config(f: &FitArgs, batch_size: usize, seed: u64) -> FitConfig {
    let kind = if f.optimizer == "sgd" { OptimizerKind::Sgd } else { OptimizerKind::Adam };
    let optimizer = OptimizerConfig { kind, lr_decay: f.lr_decay, ..OptimizerConfig::sgd(f.lr) };
    FitConfig { epochs: f.epochs, patience: f.patience, batch_size, extra_epochs: f.extra_epochs, optimizer, seed }
}

fn ham_config(o: &HamOpts, seed: u64) -> HamConfig {
    HamConfig {
        batch_size: o.batch_size,
        norm: o.norm,
        reduction: o.reduction,
        seed,
        train_mode: !o.eval_mode,
        threads: o.threads.max(1),
    }
}

fn channels_of(p: &Prepared) -> Result<usize> {
    p.train
        .first()
        .map(|w| w.input.shape()[1])
        .ok_or_else(|| Error::Data("training split yields no windows".into()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text)?
        }
        None => SynthConfig {
            length: a.length,
            channels: (0..a.channels)
                .map(|c| SynthChannel {
                    name: None,
                    components: a
                        .periods
                        .iter()
                        .map(|&period| SineComponent {
                            period,
                            amplitude: a.amplitude,
                            phase: c as f64 * std::f64::consts::PI / (a.channels as f64 + 1.0),
                        })
                        .collect(),
                })
                .collect(),
            slope: a.slope,
            noise_std: a.noise,
            seed: a.seed,
        },
    };
    let frame = data::synth(&cfg)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    frame.write_csv(&a.out)?;
    println!("wrote {} rows x {} channels to {}", frame.len(), frame.n_channels(), a.out.display());
    Ok(())
}

fn data_json(spec: &DataSpec, p: &Prepared) -> Result<serde_json::Value> {
    Ok(serde_json::json!({
        "spec": serde_json::to_value(spec)?,
        "scaler": serde_json::to_value(&p.scaler)?,
        "windows": { "train": p.train.len(), "val": p.val.len(), "test": p.test.len() },
    }))
}

fn train_one(spec: &DataSpec, p: &Prepared, m: &ModelArgs, f: &FitArgs, batch: usize, seed: u64, out: &Path) -> Result<crate::train::TrainRun> {
    let model = ForecastModel::init(model_config(m, channels_of(p)?, seed))?;
    let fc = fit_config(f, batch, seed);
    let run = fit(model, &p.train, &p.val, &fc)?;
    run.save(out, &fc, data_json(spec, p)?)?;
    Ok(run)
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let spec = DataSpec::from_args(&a.data)?;
    let p = spec.prepare(a.model.lookback, a.model.horizon)?;
    let run = train_one(&spec, &p, &a.model, &a.fit, a.fit.batch_size, a.seed, &a.out)?;
    let last = run.history.last().expect("epoch 0 is always recorded");
    println!(
        "trained {} epochs; best epoch {}; early stop {}; final val mse {:.6}",
        run.history.len() - 1,
        run.best_epoch,
        run.stopped_epoch.map_or("none".to_string(), |e| e.to_string()),
        last.val_mse
    );
    Ok(())
}

struct TraceJob<'a> {
    model: &'a ForecastModel,
    epoch: usize,
    train_batch_size: usize,
    windows: &'a [Window],
    split: &'a str,
    prepared: &'a Prepared,
    source: &'a Path,
    mode: ModeArg,
    naive: bool,
    cfg: HamConfig,
    layerwise: bool,
}

fn make_trace(job: &TraceJob) -> Result<TraceFile> {
    let loss = CompositeLoss::regression_only();
    let modes: Vec<MaskMode> = match job.mode {
        ModeArg::Both => MaskMode::BOTH.to_vec(),
        ModeArg::Causal => vec![MaskMode::Causal],
        ModeArg::Anticausal => vec![MaskMode::Anticausal],
    };
    let mut curves: Vec<HamCurve> = if job.naive {
        modes.iter().map(|&m| ham_naive(job.model, job.windows, m, &job.cfg, &loss)).collect::<Result<_>>()?
    } else {
        let (c, a) = ham_fast(job.model, job.windows, &job.cfg, &loss)?;
        [c, a].into_iter().filter(|c| modes.contains(&c.mode)).collect()
    };
    if !job.layerwise {
        curves.iter_mut().for_each(|c| c.per_layer.clear());
    }
    let cfg = &job.model.config;
    TraceFile::new(
        ModelMeta {
            kind: cfg.kind.to_string(),
            config_digest: Some(cfg.digest()),
            epoch: Some(job.epoch),
            train_batch_size: Some(job.train_batch_size),
            lookback: cfg.lookback,
            horizon: cfg.horizon,
            param_count: Some(job.model.param_count()),
        },
        DatasetMeta {
            split: job.split.to_string(),
            lookback: job.prepared.window.lookback,
            horizon: job.prepared.window.horizon,
            stride: job.prepared.window.stride,
            windows: job.windows.len(),
            scaler_digest: job.prepared.scaler.as_ref().map(Scaler::digest),
            source: Some(job.source.display().to_string()),
        },
        HamMeta {
            batch_size: job.cfg.batch_size,
            norm: job.cfg.norm,
            reduction: job.cfg.reduction,
            train_mode: job.cfg.train_mode,
            seed: job.cfg.seed,
            method: if job.naive { "naive" } else { "fast" }.into(),
        },
        curves,
    )
}

fn cmd_ham(a: &HamArgs) -> Result<()> {
    let manifest = load_manifest(&a.run)?;
    let spec: DataSpec = serde_json::from_value(manifest.data["spec"].clone())
        .map_err(|e| Error::validation("$.data.spec", e.to_string()))?;
    let epoch = a.epoch.unwrap_or(manifest.best_epoch);
    if epoch > manifest.epochs {
        return Err(Error::Config(format!("epoch {epoch} not in run (0..={})", manifest.epochs)));
    }
    let (model, _) = ForecastModel::load(&checkpoint_path(&a.run, epoch))?;
    let p = spec.prepare(model.config.lookback, model.config.horizon)?;
    let windows = p.split(&a.split)?;
    let trace = make_trace(&TraceJob {
        model: &model,
        epoch,
        train_batch_size: manifest.fit.batch_size,
        windows,
        split: &a.split,
        prepared: &p,
        source: &spec.path,
        mode: a.mode,
        naive: a.naive,
        cfg: ham_config(&a.opts, a.seed),
        layerwise: a.opts.layerwise,
    })?;
    write_text(&a.out, &trace.to_json()?)?;
    for c in &trace.curves {
        println!("{} full-gradient norm average: {:.6e}", c.mode, c.full_value());
    }
    Ok(())
}

fn cmd_areas(a: &AreasArgs) -> Result<()> {
    let mut t = TraceFile::read(&a.io.trace)?;
    t.attach_areas(a.scope)?;
    write_text(a.io.out.as_ref().unwrap_or(&a.io.trace), &t.to_json()?)?;
    if let Some(an) = &t.analytics {
        for ar in &an.areas {
            println!("{} A(H) = {:.6e} over {} region(s)", ar.mode, ar.values[ar.horizon()], ar.regions.len());
        }
    }
    Ok(())
}

fn cmd_diff(a: &TraceInOut) -> Result<()> {
    let mut t = TraceFile::read(&a.trace)?;
    t.attach_difference()?;
    write_text(a.out.as_ref().unwrap_or(&a.trace), &t.to_json()?)?;
    if let Some(d) = t.analytics.as_ref().and_then(|an| an.difference.as_ref()) {
        let e = &d.equivariant;
        if e.found {
            println!("equivariant point t* = {:.6} (value {:.6e}, {} crossing(s))", e.t, e.value, e.crossings.len());
        } else {
            println!("no equivariant point");
        }
    }
    Ok(())
}

fn labelled(traces: &[PathBuf], labels: &[String]) -> Result<Vec<(String, TraceFile)>> {
    if !labels.is_empty() && labels.len() != traces.len() {
        return Err(Error::Config(format!("{} labels for {} traces", labels.len(), traces.len())));
    }
    traces
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let label = labels
                .get(i)
                .cloned()
                .unwrap_or_else(|| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
            Ok((label, TraceFile::read(p)?))
        })
        .collect()
}

fn cmd_interp(a: &InterpArgs) -> Result<()> {
    if a.traces.len() < 2 {
        return Err(Error::Config("interp needs at least 2 traces".into()));
    }
    let mut series = Vec::new();
    for (label, t) in labelled(&a.traces, &a.labels)? {
        let (_, areas) = t.compute_areas(t.line_scope())?;
        series.extend(areas.into_iter().map(|ar| AreaSeries { label: label.clone(), mode: ar.mode, values: ar.values }));
    }
    let plot = interpolated_area_plot(&series, a.grid)?;
    write_text(&a.out, &(serde_json::to_string_pretty(&plot)? + "\n"))?;
    println!("wrote {} series on a {}-point grid", plot.series.len(), plot.x.len());
    Ok(())
}

fn cmd_render(a: &RenderArgs) -> Result<()> {
    let spec = PlotSpec { kind: a.kind, traces: labelled(&a.traces, &a.labels)?, title: a.title.clone(), grid: a.grid };
    write_text(&a.out, &render(&spec)?)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn cmd_ingest(a: &IngestArgs) -> Result<()> {
    let t = TraceFile::read(&a.trace)?;
    if let Some(out) = &a.out {
        write_text(out, &t.to_json()?)?;
    }
    println!(
        "ok: {} model, H = {}, modes: {}{}",
        t.model.kind,
        t.horizon(),
        t.curves.iter().map(|c| c.mode.to_string()).collect::<Vec<_>>().join(", "),
        if t.partial { " (partial)" } else { "" }
    );
    Ok(())
}

struct SweepRow {
    batch_size: usize,
    best_epoch: usize,
    stopped_epoch: Option<usize>,
    converged_norm: f64,
}

fn sweep_cell(a: &SweepArgs, spec: &DataSpec, p: &Prepared, bs: usize) -> Result<SweepRow> {
    let cell = a.out.join(format!("bs_{bs}"));
    let run = train_one(spec, p, &a.model, &a.fit, bs, a.seed, &cell.join("run"))?;
    let cfg = ham_config(&a.ham, a.seed);
    let mut converged_norm = f64::NAN;
    for (epoch, model) in run.checkpoints.iter().enumerate() {
        let trace = make_trace(&TraceJob {
            model,
            epoch,
            train_batch_size: bs,
            windows: &p.train,
            split: "train",
            prepared: p,
            source: &spec.path,
            mode: ModeArg::Both,
            naive: false,
            cfg,
            layerwise: a.ham.layerwise,
        })?;
        if epoch == run.best_epoch {
            converged_norm = trace.curves[0].full_value();
        }
        write_text(&cell.join("traces").join(format!("epoch_{epoch:03}.json")), &trace.to_json()?)?;
    }
    Ok(SweepRow { batch_size: bs, best_epoch: run.best_epoch, stopped_epoch: run.stopped_epoch, converged_norm })
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    if a.batch_sizes.contains(&0) {
        return Err(Error::Config("batch sizes must be >= 1".into()));
    }
    let spec = DataSpec::from_args(&a.data)?;
    let p = spec.prepare(a.model.lookback, a.model.horizon)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let jobs = a.jobs.max(1);
    let mut rows: Vec<Result<SweepRow>> = Vec::new();
    for chunk in a.batch_sizes.chunks(jobs) {
        if jobs == 1 {
            rows.push(sweep_cell(a, &spec, &p, chunk[0]));
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = chunk.iter().map(|&bs| { let (spec, p) = (&spec, &p); s.spawn(move || sweep_cell(a, spec, p, bs)) }).collect();
                rows.extend(handles.into_iter().map(|h| h.join().expect("sweep worker panicked")));
            });
        }
    }
    let mut w = csv::Writer::from_path(a.out.join("sweep.csv"))?;
    w.write_record(["batch_size", "best_epoch", "stopped_epoch", "converged_full_norm"])?;
    for r in rows {
        let r = r?;
        w.write_record([
            r.batch_size.to_string(),
            r.best_epoch.to_string(),
            r.stopped_epoch.map(|e| e.to_string()).unwrap_or_default(),
            r.converged_norm.to_string(),
        ])?;
        println!("batch size {}: converged full-gradient norm average {:.6e}", r.batch_size, r.converged_norm);
    }
    w.flush().map_err(|e| Error::io(a.out.join("sweep.csv"), e))?;
    Ok(())
}

fn cmd_export(a: &ExportArgs) -> Result<()> {
    let t = TraceFile::read(&a.trace)?;
    let mut buf = Vec::new();
    export_csv(&t, &mut buf)?;
    write_text(&a.out, &String::from_utf8(buf).expect("csv is utf-8"))?;
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Ham(a) => cmd_ham(a),
        Command::Areas(a) => cmd_areas(a),
        Command::Diff(a) => cmd_diff(a),
        Command::Interp(a) => cmd_interp(a),
        Command::Render(a) => cmd_render(a),
        Command::Ingest(a) => cmd_ingest(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Export(a) => cmd_export(a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
