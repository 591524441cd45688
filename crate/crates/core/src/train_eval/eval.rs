//! Evaluation sweeps over `(snr_test, snr_est)` grids.

use serde::{Deserialize, Serialize};

use super::{stack_clips, TrainError};
use crate::channel::{Channel, ChannelSpec};
use crate::data_io::VideoClip;
use crate::digital_baseline::{run_with_channel, DigitalConfig};
use crate::metrics::{ms_ssim, psnr};
use crate::nn_core::ParamStore;
use crate::semantic_codec::Transceiver;

/// One sweep point. `snr_test_db = inf` means a noiseless channel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridPoint {
    pub snr_test_db: f64,
    pub snr_est_db: f64,
}

impl GridPoint {
    pub fn matched(snr_db: f64) -> Self {
        GridPoint { snr_test_db: snr_db, snr_est_db: snr_db }
    }

    pub fn is_noiseless(&self) -> bool {
        self.snr_test_db == f64::INFINITY
    }

    fn spec(&self, seed: u64) -> ChannelSpec {
        let spec = if self.is_noiseless() {
            ChannelSpec::noiseless(self.snr_est_db)
        } else {
            ChannelSpec::awgn(self.snr_test_db).with_estimate(self.snr_est_db)
        };
        spec.with_seed(seed)
    }
}

/// `snr_test = snr_est` at every value.
pub fn matched_grid(values: &[f64]) -> Vec<GridPoint> {
    values.iter().map(|&v| GridPoint::matched(v)).collect()
}

/// Fixed `snr_test`, varying estimate.
pub fn mismatch_grid(snr_test_db: f64, estimates: &[f64]) -> Vec<GridPoint> {
    estimates.iter().map(|&e| GridPoint { snr_test_db, snr_est_db: e }).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum System {
    Learned,
    Digital,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub snr_test_db: f64,
    pub snr_est_db: f64,
    pub rho: f64,
    pub psnr_db: f64,
    pub ms_ssim: f64,
    pub symbols: usize,
    pub system: System,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn learned(&self) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(|r| r.system == System::Learned)
    }

    pub fn digital(&self) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(|r| r.system == System::Digital)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    /// Every grid point reuses this noise seed, so rows differ only in SNR.
    pub seed: u64,
    pub batch_size: usize,
    pub with_baseline: bool,
    pub baseline_bits: u32,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { seed: 0, batch_size: 8, with_baseline: false, baseline_bits: 8 }
    }
}

/// Mean PSNR and MS-SSIM over the dataset at each grid point; digital rows
/// follow for each distinct finite `snr_test` when requested.
pub fn evaluate(
    model: &Transceiver,
    params: &ParamStore<f32>,
    data: &[VideoClip],
    grid: &[GridPoint],
    opts: &EvalOptions,
) -> Result<SweepResult, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if grid.is_empty() {
        return Err(TrainError::Config("empty evaluation grid".into()));
    }
    model.check_params(params).map_err(|e| TrainError::IncompatibleCheckpoint(e.to_string()))?;
    let plan = *model.plan();
    let mut rows = Vec::new();
    for point in grid {
        let spec = point.spec(opts.seed);
        let mut channel = Channel::from_spec(&spec);
        let (mut p_sum, mut s_sum) = (0.0, 0.0);
        for chunk in data.chunks(opts.batch_size.max(1)) {
            let frames = stack_clips(&chunk.iter().collect::<Vec<_>>());
            let out = model.transmit_batch(params, &frames, &spec, &mut channel)?;
            for (i, clip) in chunk.iter().enumerate() {
                let rec = out.narrow0(i, 1).reshape(clip.frames().shape());
                p_sum += psnr(clip.frames(), &rec)?;
                s_sum += ms_ssim(clip.frames(), &rec)?;
            }
        }
        let n = data.len() as f64;
        rows.push(SweepRow {
            snr_test_db: point.snr_test_db,
            snr_est_db: point.snr_est_db,
            rho: plan.achieved.rho,
            psnr_db: p_sum / n,
            ms_ssim: s_sum / n,
            symbols: plan.symbols,
            system: System::Learned,
        });
    }
    if opts.with_baseline {
        let snrs: Vec<f64> = grid.iter().filter(|p| !p.is_noiseless()).map(|p| p.snr_test_db).collect();
        rows.extend(evaluate_digital(data, &snrs, opts)?.rows);
    }
    Ok(SweepResult { rows })
}

/// Digital baseline rows, one per distinct finite SNR in `snrs`.
pub fn evaluate_digital(data: &[VideoClip], snrs: &[f64], opts: &EvalOptions) -> Result<SweepResult, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut seen: Vec<f64> = Vec::new();
    let mut rows = Vec::new();
    for &snr in snrs.iter().filter(|s| s.is_finite()) {
        if seen.contains(&snr) {
            continue;
        }
        seen.push(snr);
        rows.push(digital_row(data, snr, opts)?);
    }
    Ok(SweepResult { rows })
}

fn digital_row(data: &[VideoClip], snr_db: f64, opts: &EvalOptions) -> Result<SweepRow, TrainError> {
    let cfg = DigitalConfig { bits_per_pixel: opts.baseline_bits, snr_test_db: snr_db, power: 1.0, seed: opts.seed };
    let mut channel = Channel::new(opts.seed);
    let (mut p_sum, mut s_sum) = (0.0, 0.0);
    for clip in data {
        let r = run_with_channel(clip, &cfg, &mut channel)?;
        p_sum += r.psnr_db;
        s_sum += ms_ssim(clip.frames(), r.reconstructed.frames())?;
    }
    let m = data[0].source_dim();
    // One BPSK symbol per coded bit.
    let symbols = (m * opts.baseline_bits as usize).div_ceil(4) * 7;
    let n = data.len() as f64;
    Ok(SweepRow {
        snr_test_db: snr_db,
        snr_est_db: snr_db,
        rho: symbols as f64 / m as f64,
        psnr_db: p_sum / n,
        ms_ssim: s_sum / n,
        symbols,
        system: System::Digital,
    })
}

/// Header `snr_test_db,snr_est_db,rho,psnr_db,ms_ssim,symbols,system`.
pub fn write_sweep_csv<W: std::io::Write>(w: W, result: &SweepResult) -> Result<(), TrainError> {
    let mut wr = csv::Writer::from_writer(w);
    for r in &result.rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_sweep_csv<R: std::io::Read>(r: R) -> Result<SweepResult, TrainError> {
    let mut rd = csv::Reader::from_reader(r);
    Ok(SweepResult { rows: rd.deserialize().collect::<Result<_, _>>()? })
}
