use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use log::info;
use semcom_core::channel::{Channel, ChannelSpec};
use semcom_core::data_io::{load_clip, write_svc1, DataError, VideoClip};
use semcom_core::metrics::{report, MetricError, MetricReport};
use semcom_core::nn_core::ParamStore;
use semcom_core::semantic_codec::{CodecError, ModelConfig, Transceiver};
use semcom_core::train_eval::{
    evaluate, evaluate_digital, load_checkpoint, matched_grid, mismatch_grid, save_checkpoint, train, write_loss_csv,
    write_sweep_csv, Checkpoint, EvalOptions, GridPoint, SweepResult, TrainError,
};
use serde::Serialize;
use thiserror::Error;

use crate::config::{load_dataset, ConfigError, RunConfig};
use crate::plot::{plot_sweep, XAxis};

pub const CHECKPOINT_FILE: &str = "checkpoint.safetensors";
pub const LOSS_FILE: &str = "loss.csv";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("plot: {0}")]
    Plot(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.display().to_string(), source }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

#[derive(Debug)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub loss_csv: PathBuf,
    pub steps: usize,
    pub final_loss: Option<f64>,
}

/// Train from scratch, or fine-tune `init` when given, and write the
/// checkpoint and loss curve into the configured output directory.
pub fn cmd_train(cfg: &RunConfig, init: Option<&Path>, data_root: Option<&Path>) -> Result<TrainSummary, CliError> {
    let data = cfg.load_dataset(data_root)?;
    let model = Transceiver::new(cfg.model.clone())?;
    let (params, start) = match init {
        Some(p) => {
            let ck = load_checkpoint(p)?;
            if ck.config != cfg.model {
                return Err(TrainError::IncompatibleCheckpoint(format!(
                    "{} was trained with a different model config",
                    p.display()
                ))
                .into());
            }
            (ck.params, ck.step)
        }
        None => (model.init::<f32>(cfg.seed), 0),
    };
    info!(
        "training {} parameters on {} clips, {} symbols per clip",
        params.num_elements(),
        data.len(),
        model.symbols_per_clip()
    );
    let every = (cfg.train.steps / 20).max(1);
    let out = train(&model, params, &cfg.train, &data, |r, _| {
        if r.step % every == 0 || r.step + 1 == cfg.train.steps {
            info!("step {} loss {:.6}", r.step, r.loss);
        }
    })?;
    let checkpoint = cfg.output_dir.join(CHECKPOINT_FILE);
    let loss_csv = cfg.output_dir.join(LOSS_FILE);
    std::fs::create_dir_all(&cfg.output_dir).map_err(io_err(&cfg.output_dir))?;
    let ck = Checkpoint {
        config: cfg.model.clone(),
        fingerprint: cfg.fingerprint(),
        step: start + cfg.train.steps,
        params: out.params,
    };
    save_checkpoint(&checkpoint, &ck)?;
    write_loss_csv(create(&loss_csv)?, &out.losses)?;
    Ok(TrainSummary { checkpoint, loss_csv, steps: out.losses.len(), final_loss: out.losses.last().map(|r| r.loss) })
}

pub struct SweepArgs<'a> {
    pub config: Option<&'a RunConfig>,
    pub checkpoint: Option<&'a Path>,
    pub grid: &'a [f64],
    /// Hold `snr_test` here and read the grid as estimates.
    pub mismatch_snr_test: Option<f64>,
    pub with_baseline: bool,
    pub seed: u64,
    pub out: &'a Path,
    pub plot: Option<&'a Path>,
    pub data_root: Option<&'a Path>,
}

/// Noiseless grid entries need an SNR for the attention modules; use the top
/// of the training range.
fn noiseless_estimate(cfg: Option<&RunConfig>) -> f64 {
    cfg.map(|c| c.train.snr_high_db).unwrap_or(15.0)
}

/// Clips from the config, or every clip under the data root without one.
/// Synthetic clips use the config seed so they match the training set.
fn dataset(cfg: Option<&RunConfig>, model: &ModelConfig, data_root: Option<&Path>) -> Result<Vec<VideoClip>, CliError> {
    match cfg {
        Some(c) => Ok(load_dataset(&c.data, model, c.seed, data_root)?),
        None if data_root.is_some() => Ok(load_dataset(&Default::default(), model, 0, data_root)?),
        None => Err(CliError::Usage("no dataset: pass --config or set SEMCOM_DATA_DIR".into())),
    }
}

/// The model and weights to evaluate: a checkpoint when given, otherwise
/// freshly initialized weights for the configured model.
fn model_and_params(
    cfg: Option<&RunConfig>,
    checkpoint: Option<&Path>,
    seed: u64,
) -> Result<(Transceiver, ParamStore<f32>), CliError> {
    match (checkpoint, cfg) {
        (Some(p), _) => {
            let ck = load_checkpoint(p)?;
            let model = Transceiver::new(ck.config)?;
            model.check_params(&ck.params).map_err(|e| TrainError::IncompatibleCheckpoint(e.to_string()))?;
            Ok((model, ck.params))
        }
        (None, Some(c)) => {
            let model = Transceiver::new(c.model.clone())?;
            let params = model.init(seed);
            Ok((model, params))
        }
        (None, None) => Err(CliError::Usage("pass --checkpoint or --config".into())),
    }
}

fn eval_options(cfg: Option<&RunConfig>, seed: u64, with_baseline: bool) -> EvalOptions {
    let e = cfg.map(|c| c.eval.clone()).unwrap_or_default();
    EvalOptions { seed, batch_size: e.batch_size, with_baseline, baseline_bits: e.baseline_bits }
}

fn write_result(result: &SweepResult, out: &Path, plot: Option<&Path>, x: XAxis) -> Result<(), CliError> {
    write_sweep_csv(create(out)?, result)?;
    if let Some(p) = plot {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        plot_sweep(result, x, p).map_err(CliError::Plot)?;
    }
    Ok(())
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<SweepResult, CliError> {
    if args.grid.is_empty() {
        return Err(CliError::Usage("empty grid".into()));
    }
    let (model, params) = model_and_params(args.config, args.checkpoint, args.seed)?;
    let data = dataset(args.config, model.config(), args.data_root)?;
    let high = noiseless_estimate(args.config);
    let (grid, axis): (Vec<GridPoint>, XAxis) = match args.mismatch_snr_test {
        Some(test) => {
            if args.grid.iter().any(|v| !v.is_finite()) {
                return Err(CliError::Usage("estimates in a mismatch grid must be finite".into()));
            }
            (mismatch_grid(test, args.grid), XAxis::SnrEst)
        }
        None => {
            let mut g = matched_grid(args.grid);
            for p in g.iter_mut().filter(|p| p.is_noiseless()) {
                p.snr_est_db = high;
            }
            (g, XAxis::SnrTest)
        }
    };
    let opts = eval_options(args.config, args.seed, args.with_baseline);
    let result = evaluate(&model, &params, &data, &grid, &opts)?;
    write_result(&result, args.out, args.plot, axis)?;
    Ok(result)
}

pub struct BaselineArgs<'a> {
    pub config: &'a RunConfig,
    pub grid: &'a [f64],
    pub seed: u64,
    pub out: &'a Path,
    pub plot: Option<&'a Path>,
    pub data_root: Option<&'a Path>,
}

pub fn cmd_baseline(args: &BaselineArgs) -> Result<SweepResult, CliError> {
    if !args.grid.iter().any(|v| v.is_finite()) {
        return Err(CliError::Usage("the baseline grid needs at least one finite SNR".into()));
    }
    let data = args.config.load_dataset(args.data_root)?;
    let opts = eval_options(Some(args.config), args.seed, true);
    let result = evaluate_digital(&data, args.grid, &opts)?;
    write_result(&result, args.out, args.plot, XAxis::SnrTest)?;
    Ok(result)
}

pub struct TransmitArgs<'a> {
    pub checkpoint: &'a Path,
    pub clip: &'a Path,
    /// `inf` selects the noiseless channel.
    pub snr_test_db: f64,
    /// Defaults to `snr_test_db`, or 15 dB on a noiseless link.
    pub snr_est_db: Option<f64>,
    pub seed: u64,
    pub out: &'a Path,
    pub report_csv: Option<&'a Path>,
    pub data_root: Option<&'a Path>,
}

#[derive(Serialize)]
struct ReportRow {
    frame: String,
    psnr_db: f64,
    ms_ssim: f64,
}

/// Resolve a clip path, falling back to the data root for relative paths
/// that do not exist from the working directory.
fn resolve(path: &Path, data_root: Option<&Path>) -> PathBuf {
    match data_root {
        Some(root) if path.is_relative() && !path.exists() => root.join(path),
        _ => path.to_path_buf(),
    }
}

pub fn cmd_transmit(args: &TransmitArgs) -> Result<MetricReport, CliError> {
    if args.snr_test_db.is_nan() {
        return Err(CliError::Usage("snr must be a number or inf".into()));
    }
    let ck = load_checkpoint(args.checkpoint)?;
    let model = Transceiver::new(ck.config)?;
    model.check_params(&ck.params).map_err(|e| TrainError::IncompatibleCheckpoint(e.to_string()))?;
    let cfg = model.config();
    let clip = load_clip(&resolve(args.clip, args.data_root), cfg.group_size, (cfg.height, cfg.width), cfg.t)?;
    let spec = if args.snr_test_db.is_infinite() {
        ChannelSpec::noiseless(args.snr_est_db.unwrap_or(15.0))
    } else {
        ChannelSpec::awgn(args.snr_test_db).with_estimate(args.snr_est_db.unwrap_or(args.snr_test_db))
    }
    .with_seed(args.seed);
    let mut channel = Channel::from_spec(&spec);
    let shape = [&[1], clip.frames().shape()].concat();
    let frames = clip.frames().clone().reshape(&shape);
    let out = model.transmit_batch(&ck.params, &frames, &spec, &mut channel)?;
    let rec = out.reshape(clip.frames().shape());
    let rep = report(clip.frames(), &rec)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    write_svc1(args.out, &rec)?;
    if let Some(path) = args.report_csv {
        let mut wr = csv::Writer::from_writer(create(path)?);
        let io = |e: csv::Error| CliError::Train(TrainError::Csv(e));
        for (i, f) in rep.per_frame.iter().enumerate() {
            wr.serialize(ReportRow { frame: i.to_string(), psnr_db: f.psnr_db, ms_ssim: f.ms_ssim }).map_err(io)?;
        }
        wr.serialize(ReportRow { frame: "all".into(), psnr_db: rep.psnr_db, ms_ssim: rep.ms_ssim }).map_err(io)?;
        wr.flush().map_err(io_err(path))?;
    }
    Ok(rep)
}
