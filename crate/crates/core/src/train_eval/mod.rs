//! Training with a random-SNR curriculum, evaluation sweeps and checkpoints.

mod checkpoint;
mod eval;
mod optim;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semcom_tensor::{Graph, Real, Tensor, Var};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use eval::{
    evaluate, evaluate_digital, matched_grid, mismatch_grid, read_sweep_csv, write_sweep_csv, EvalOptions, GridPoint,
    SweepResult, SweepRow, System,
};
pub use optim::Adam;

use crate::channel::{Channel, ChannelFamily, ChannelSpec};
use crate::data_io::VideoClip;
use crate::metrics::ms_ssim_graph;
use crate::nn_core::{Ctx, ParamStore};
use crate::semantic_codec::{CodecError, Transceiver};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("loss became non-finite at step {step}")]
    Diverged { step: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Metric(#[from] crate::metrics::MetricError),
    #[error(transparent)]
    Digital(#[from] crate::digital_baseline::DigitalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("checkpoint format: {0}")]
    Format(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean squared error over every reconstructed frame.
    #[default]
    Mse,
    /// MSE plus `ms_ssim_weight * (1 - MS-SSIM)`.
    MseMsSsim,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_snr_low")]
    pub snr_low_db: f64,
    #[serde(default = "default_snr_high")]
    pub snr_high_db: f64,
    #[serde(default)]
    pub loss: LossKind,
    #[serde(default = "default_ms_ssim_weight")]
    pub ms_ssim_weight: f64,
    /// Channel used during training. On a noiseless link the noise-attention
    /// modules are fed `snr_high_db`.
    #[serde(default = "default_family")]
    pub channel: ChannelFamily,
}

fn default_batch() -> usize {
    8
}
fn default_snr_low() -> f64 {
    -5.0
}
fn default_snr_high() -> f64 {
    15.0
}
fn default_ms_ssim_weight() -> f64 {
    0.1
}
fn default_family() -> ChannelFamily {
    ChannelFamily::Awgn
}

impl TrainConfig {
    pub fn new(steps: usize, seed: u64) -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: default_batch(),
            steps,
            seed,
            snr_low_db: default_snr_low(),
            snr_high_db: default_snr_high(),
            loss: LossKind::Mse,
            ms_ssim_weight: default_ms_ssim_weight(),
            channel: ChannelFamily::Awgn,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if !(self.snr_low_db.is_finite() && self.snr_high_db.is_finite() && self.snr_low_db <= self.snr_high_db) {
            return Err(TrainError::Config(format!(
                "snr range [{}, {}] is not a finite interval",
                self.snr_low_db, self.snr_high_db
            )));
        }
        if !(self.ms_ssim_weight >= 0.0 && self.ms_ssim_weight.is_finite()) {
            return Err(TrainError::Config(format!(
                "ms_ssim_weight must be non-negative, got {}",
                self.ms_ssim_weight
            )));
        }
        Ok(())
    }
}

/// Uniform SNR draws in `[low, high]` dB from a seeded stream.
#[derive(Clone, Debug)]
pub struct SnrSampler {
    low: f64,
    high: f64,
    rng: ChaCha8Rng,
}

impl SnrSampler {
    pub fn new(low: f64, high: f64, seed: u64) -> Self {
        assert!(low <= high, "empty SNR range [{low}, {high}]");
        SnrSampler { low, high, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn sample(&mut self) -> f64 {
        sample_snr((self.low, self.high), &mut self.rng)
    }
}

pub fn sample_snr(range: (f64, f64), rng: &mut impl Rng) -> f64 {
    let (low, high) = range;
    if low == high {
        return low;
    }
    rng.random_range(low..=high)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub loss: f64,
    pub snr_db: f64,
}

pub struct TrainOutcome {
    pub params: ParamStore<f32>,
    pub losses: Vec<LossRecord>,
}

/// Stack clips into `[b, n, h, w, 3]`.
pub fn stack_clips(clips: &[&VideoClip]) -> Tensor<f32> {
    let frames: Vec<&Tensor<f32>> = clips.iter().map(|c| c.frames()).collect();
    Tensor::stack(&frames)
}

/// Runs `cfg.steps` optimizer steps starting from `params`. `on_step` sees
/// every record together with the updated parameters.
pub fn train(
    model: &Transceiver,
    params: ParamStore<f32>,
    cfg: &TrainConfig,
    data: &[VideoClip],
    mut on_step: impl FnMut(&LossRecord, &ParamStore<f32>),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    model.check_params(&params)?;
    for c in data {
        let shape = [&[1], c.frames().shape()].concat();
        model.check_batch(&shape)?;
    }
    let mut params = params;
    let mut opt = Adam::new(cfg.learning_rate);
    let mut snr = SnrSampler::new(cfg.snr_low_db, cfg.snr_high_db, cfg.seed ^ 0x5eed_0001);
    let mut channel = Channel::new(cfg.seed ^ 0x5eed_0002);
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0003);
    let full_batch = cfg.batch_size >= data.len();
    let all = full_batch.then(|| stack_clips(&data.iter().collect::<Vec<_>>()));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = data.len();
    let mut losses = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let batch = match &all {
            Some(t) => t.clone(),
            None => {
                let mut picked = Vec::with_capacity(cfg.batch_size);
                while picked.len() < cfg.batch_size {
                    if cursor == order.len() {
                        order.shuffle(&mut order_rng);
                        cursor = 0;
                    }
                    picked.push(&data[order[cursor]]);
                    cursor += 1;
                }
                stack_clips(&picked)
            }
        };
        let b = batch.dim(0);
        let snr_db = snr.sample();
        let spec = match cfg.channel {
            ChannelFamily::Awgn => ChannelSpec::awgn(snr_db),
            ChannelFamily::Noiseless => ChannelSpec::noiseless(cfg.snr_high_db),
        };
        let noise = model.draw_noise(&mut channel, &spec, b);
        let (loss, grads) = {
            let mut ctx = Ctx::train(&params);
            let pass = model.forward(&mut ctx, &batch, spec.snr_est_db, noise)?;
            let target = ctx.constant(batch);
            let loss = training_loss(&mut ctx.g, pass.clip, target, cfg)?;
            (ctx.value(loss).item() as f64, ctx.param_grads(loss))
        };
        if !loss.is_finite() {
            return Err(TrainError::Diverged { step });
        }
        opt.step(&mut params, &grads);
        let rec = LossRecord { step, loss, snr_db: spec.snr_est_db };
        on_step(&rec, &params);
        losses.push(rec);
    }
    Ok(TrainOutcome { params, losses })
}

fn training_loss<T: Real>(g: &mut Graph<T>, rec: Var, target: Var, cfg: &TrainConfig) -> Result<Var, TrainError> {
    let mse = g.mse(rec, target);
    match cfg.loss {
        LossKind::Mse => Ok(mse),
        LossKind::MseMsSsim => {
            let s = g.shape(rec).to_vec();
            let frames = [s[..s.len() - 3].iter().product(), s[s.len() - 3], s[s.len() - 2], s[s.len() - 1]];
            let a = g.reshape(rec, &frames);
            let b = g.reshape(target, &frames);
            let ms = ms_ssim_graph(g, a, b)?;
            let penalty = g.affine(ms, -cfg.ms_ssim_weight, cfg.ms_ssim_weight);
            Ok(g.add(mse, penalty))
        }
    }
}

/// Loss curve CSV with header `step,loss,snr_db`.
pub fn write_loss_csv<W: std::io::Write>(w: W, losses: &[LossRecord]) -> Result<(), TrainError> {
    let mut wr = csv::Writer::from_writer(w);
    for r in losses {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_loss_csv<R: std::io::Read>(r: R) -> Result<Vec<LossRecord>, TrainError> {
    let mut rd = csv::Reader::from_reader(r);
    Ok(rd.deserialize().collect::<Result<_, _>>()?)
}
