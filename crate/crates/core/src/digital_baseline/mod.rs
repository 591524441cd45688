//! Separation-based digital reference chain: uniform quantizer, systematic
//! Hamming(7,4), BPSK over the AWGN channel, hard decisions.
//!
//! BPSK uses only the real axis, so each bit sees noise of variance
//! `sigma^2 / 2` under the channel's per-complex-symbol convention and the raw
//! bit error rate is `Q(sqrt(2 T / sigma^2))`.

use semcom_tensor::Tensor;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::channel::{sigma_from_snr, Channel};
use crate::data_io::{DataError, VideoClip};
use crate::metrics::{psnr, MetricError};

#[derive(Debug, Error)]
pub enum DigitalError {
    #[error("bits per pixel must be in 1..=16, got {0}")]
    BadDepth(u32),
    #[error("snr_test_db must be finite, got {0}")]
    NonFiniteSnr(f64),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DigitalConfig {
    pub bits_per_pixel: u32,
    pub snr_test_db: f64,
    #[serde(default = "one")]
    pub power: f64,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

impl DigitalConfig {
    pub fn new(snr_test_db: f64) -> Self {
        DigitalConfig { bits_per_pixel: 8, snr_test_db, power: 1.0, seed: 0 }
    }

    pub fn validate(&self) -> Result<(), DigitalError> {
        if !(1..=16).contains(&self.bits_per_pixel) {
            return Err(DigitalError::BadDepth(self.bits_per_pixel));
        }
        if !self.snr_test_db.is_finite() {
            return Err(DigitalError::NonFiniteSnr(self.snr_test_db));
        }
        Ok(())
    }
}

/// Uniform quantization of `[0, 1]` to `2^bits` levels, most significant bit first.
pub fn quantize(values: &[f32], bits: u32) -> Vec<u8> {
    let levels = ((1u32 << bits) - 1) as f32;
    let mut out = Vec::with_capacity(values.len() * bits as usize);
    for &v in values {
        let q = (v.clamp(0.0, 1.0) * levels).round() as u32;
        out.extend((0..bits).rev().map(|b| ((q >> b) & 1) as u8));
    }
    out
}

pub fn dequantize(bits: &[u8], depth: u32) -> Vec<f32> {
    let levels = ((1u32 << depth) - 1) as f32;
    bits.chunks_exact(depth as usize)
        .map(|c| c.iter().fold(0u32, |acc, &b| (acc << 1) | b as u32) as f32 / levels)
        .collect()
}

/// Parity bits of the systematic code `[d1 d2 d3 d4 p1 p2 p3]`.
fn parity(d: &[u8]) -> [u8; 3] {
    [d[0] ^ d[1] ^ d[3], d[0] ^ d[2] ^ d[3], d[1] ^ d[2] ^ d[3]]
}

/// Syndrome of each single-bit error position.
const SYNDROMES: [[u8; 3]; 7] = [[1, 1, 0], [1, 0, 1], [0, 1, 1], [1, 1, 1], [1, 0, 0], [0, 1, 0], [0, 0, 1]];

/// Hamming(7,4) encoding; the input is zero-padded to a multiple of 4.
pub fn fec_encode(bits: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(bits.len().div_ceil(4) * 7);
    for chunk in bits.chunks(4) {
        let mut d = [0u8; 4];
        d[..chunk.len()].copy_from_slice(chunk);
        out.extend_from_slice(&d);
        out.extend_from_slice(&parity(&d));
    }
    out
}

/// Syndrome decoding: any single error per block is corrected; heavier
/// patterns are miscorrected.
pub fn fec_decode(coded: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(coded.len() / 7 * 4);
    for block in coded.chunks_exact(7) {
        let mut b: [u8; 7] = block.try_into().unwrap();
        let p = parity(&b[..4]);
        let s = [p[0] ^ b[4], p[1] ^ b[5], p[2] ^ b[6]];
        if s != [0, 0, 0] {
            let pos = SYNDROMES.iter().position(|x| *x == s).expect("every nonzero syndrome is listed");
            b[pos] ^= 1;
        }
        out.extend_from_slice(&b[..4]);
    }
    out
}

/// `0 -> -sqrt(T)`, `1 -> +sqrt(T)`.
pub fn bpsk_modulate(bits: &[u8], power: f64) -> Vec<f64> {
    let a = power.sqrt();
    bits.iter().map(|&b| if b == 1 { a } else { -a }).collect()
}

pub fn hard_decision(received: &[f64]) -> Vec<u8> {
    received.iter().map(|&r| u8::from(r > 0.0)).collect()
}

/// Gaussian tail `Q(x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Theoretical uncoded BPSK bit error rate at `snr_db = 10 log10(T / sigma^2)`.
pub fn bpsk_ber(snr_db: f64) -> f64 {
    q_function((2.0 * 10f64.powf(snr_db / 10.0)).sqrt())
}

/// Send bits through BPSK and the AWGN channel, returning hard decisions.
pub fn bpsk_over_awgn(bits: &[u8], snr_db: f64, power: f64, channel: &mut Channel) -> Vec<u8> {
    let sigma2 = sigma_from_snr(snr_db, power);
    let noise = channel.real_noise(bits.len(), sigma2 / 2.0);
    let rx: Vec<f64> = bpsk_modulate(bits, power).iter().zip(noise).map(|(s, n)| s + n).collect();
    hard_decision(&rx)
}

pub fn bit_error_rate(a: &[u8], b: &[u8]) -> f64 {
    let errors = a.iter().zip(b).filter(|(x, y)| x != y).count();
    errors as f64 / a.len().max(1) as f64
}

#[derive(Clone, Debug)]
pub struct DigitalResult {
    pub reconstructed: VideoClip,
    pub psnr_db: f64,
    pub channel_ber: f64,
    pub decoded_ber: f64,
}

pub fn run_digital_pipeline(clip: &VideoClip, cfg: &DigitalConfig) -> Result<DigitalResult, DigitalError> {
    let mut channel = Channel::new(cfg.seed);
    run_with_channel(clip, cfg, &mut channel)
}

/// As [`run_digital_pipeline`], drawing noise from an existing channel.
pub fn run_with_channel(
    clip: &VideoClip,
    cfg: &DigitalConfig,
    channel: &mut Channel,
) -> Result<DigitalResult, DigitalError> {
    cfg.validate()?;
    let src = quantize(clip.frames().data(), cfg.bits_per_pixel);
    let coded = fec_encode(&src);
    let rx = bpsk_over_awgn(&coded, cfg.snr_test_db, cfg.power, channel);
    let mut decoded = fec_decode(&rx);
    decoded.truncate(src.len());
    let values = dequantize(&decoded, cfg.bits_per_pixel);
    let frames = Tensor::from_vec(clip.frames().shape(), values);
    let reconstructed = VideoClip::new(frames, clip.frame_rate, clip.clip_id.clone())?;
    Ok(DigitalResult {
        psnr_db: psnr(clip.frames(), reconstructed.frames())?,
        reconstructed,
        channel_ber: bit_error_rate(&coded, &rx),
        decoded_ber: bit_error_rate(&src, &decoded),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_bit_threshold() {
        assert_eq!(quantize(&[0.6, 0.4], 1), vec![1, 0]);
        assert_eq!(quantize(&[0.0], 8), vec![0; 8]);
        assert_eq!(quantize(&[1.0], 8), vec![1; 8]);
    }

    #[test]
    fn all_zero_codeword() {
        assert_eq!(fec_encode(&[0, 0, 0, 0]), vec![0; 7]);
    }

    #[test]
    fn encode_pads_to_whole_blocks() {
        assert_eq!(fec_encode(&[1]).len(), 7);
        assert_eq!(fec_decode(&fec_encode(&[1, 0, 1, 1, 1]))[..5], [1, 0, 1, 1, 1]);
    }

    #[test]
    fn syndromes_match_parity_columns() {
        for (pos, s) in SYNDROMES.iter().enumerate() {
            let mut c = [0u8; 7];
            c[pos] = 1;
            let p = parity(&c[..4]);
            assert_eq!([p[0] ^ c[4], p[1] ^ c[5], p[2] ^ c[6]], *s);
        }
    }

    #[test]
    fn depth_is_validated() {
        let mut cfg = DigitalConfig::new(10.0);
        cfg.bits_per_pixel = 17;
        assert!(matches!(cfg.validate(), Err(DigitalError::BadDepth(17))));
    }
}
