//! Power normalization and the simulated AWGN channel.
//!
//! Noise is circular complex Gaussian with variance `sigma^2` per complex
//! symbol, i.e. `sigma^2 / 2` on each of the real and imaginary parts, where
//! `sigma^2 = T / 10^(snr_db / 10)`.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("cannot normalize an all-zero symbol vector")]
    ZeroVector,
    #[error("power constraint must be positive and finite, got {0}")]
    BadPower(f64),
    #[error("{name} must be finite, got {value}")]
    NonFinite { name: &'static str, value: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelFamily {
    Awgn,
    Noiseless,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub family: ChannelFamily,
    /// True channel SNR in dB. Ignored by the noiseless family.
    pub snr_test_db: f64,
    /// SNR in dB handed to the noise-attention modules.
    pub snr_est_db: f64,
    #[serde(default = "default_power")]
    pub power: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_power() -> f64 {
    1.0
}

impl ChannelSpec {
    pub fn awgn(snr_db: f64) -> Self {
        ChannelSpec { family: ChannelFamily::Awgn, snr_test_db: snr_db, snr_est_db: snr_db, power: 1.0, seed: 0 }
    }

    /// A noiseless link; `snr_est_db` still conditions the model.
    pub fn noiseless(snr_est_db: f64) -> Self {
        ChannelSpec { family: ChannelFamily::Noiseless, snr_test_db: f64::INFINITY, snr_est_db, power: 1.0, seed: 0 }
    }

    pub fn with_estimate(mut self, snr_est_db: f64) -> Self {
        self.snr_est_db = snr_est_db;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        if !(self.power > 0.0 && self.power.is_finite()) {
            return Err(ChannelError::BadPower(self.power));
        }
        if !self.snr_est_db.is_finite() {
            return Err(ChannelError::NonFinite { name: "snr_est_db", value: self.snr_est_db });
        }
        if self.family == ChannelFamily::Awgn && !self.snr_test_db.is_finite() {
            return Err(ChannelError::NonFinite { name: "snr_test_db", value: self.snr_test_db });
        }
        Ok(())
    }

    /// Noise variance per complex symbol; zero for the noiseless family.
    pub fn noise_variance(&self) -> f64 {
        match self.family {
            ChannelFamily::Awgn => sigma_from_snr(self.snr_test_db, self.power),
            ChannelFamily::Noiseless => 0.0,
        }
    }
}

/// Complex baseband symbols with their measured average power.
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolFrame {
    pub symbols: Vec<Complex64>,
    pub power: f64,
}

impl SymbolFrame {
    pub fn new(symbols: Vec<Complex64>) -> Self {
        let power = average_power(&symbols);
        SymbolFrame { symbols, power }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

pub fn average_power(x: &[Complex64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|z| z.norm_sqr()).sum::<f64>() / x.len() as f64
}

/// Scale `x` to average power `power`: `y = x * sqrt(k T) / ||x||`.
pub fn normalize_power(x: &[Complex64], power: f64) -> Result<SymbolFrame, ChannelError> {
    if !(power > 0.0 && power.is_finite()) {
        return Err(ChannelError::BadPower(power));
    }
    let norm = x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(ChannelError::ZeroVector);
    }
    if !norm.is_finite() {
        return Err(ChannelError::NonFinite { name: "symbol norm", value: norm });
    }
    let s = (x.len() as f64 * power).sqrt() / norm;
    Ok(SymbolFrame::new(x.iter().map(|z| z * s).collect()))
}

/// `sigma^2 = T / 10^(snr_db / 10)`.
pub fn sigma_from_snr(snr_db: f64, power: f64) -> f64 {
    power / 10f64.powf(snr_db / 10.0)
}

/// `10 log10(T / sigma^2)`.
pub fn snr_from_sigma(sigma2: f64, power: f64) -> f64 {
    10.0 * (power / sigma2).log10()
}

/// A seeded noise source. Each worker owns one.
#[derive(Clone, Debug)]
pub struct Channel {
    rng: ChaCha8Rng,
}

impl Channel {
    pub fn new(seed: u64) -> Self {
        Channel { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn from_spec(spec: &ChannelSpec) -> Self {
        Self::new(spec.seed)
    }

    /// `len` independent real Gaussians with the given variance.
    pub fn real_noise(&mut self, len: usize, variance: f64) -> Vec<f64> {
        let sd = variance.sqrt();
        (0..len)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                sd * z
            })
            .collect()
    }

    /// Circular complex noise with variance `sigma2` per symbol.
    pub fn complex_noise(&mut self, len: usize, sigma2: f64) -> Vec<Complex64> {
        let v = self.real_noise(2 * len, sigma2 / 2.0);
        v.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect()
    }

    pub fn transmit(&mut self, frame: &SymbolFrame, spec: &ChannelSpec) -> Result<Vec<Complex64>, ChannelError> {
        spec.validate()?;
        match spec.family {
            ChannelFamily::Noiseless => Ok(frame.symbols.clone()),
            ChannelFamily::Awgn => {
                let noise = self.complex_noise(frame.len(), spec.noise_variance());
                Ok(frame.symbols.iter().zip(noise).map(|(y, n)| y + n).collect())
            }
        }
    }
}

/// One-shot transmission using the spec's own seed.
pub fn transmit(frame: &SymbolFrame, spec: &ChannelSpec) -> Result<Vec<Complex64>, ChannelError> {
    Channel::from_spec(spec).transmit(frame, spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_norm_scaling() {
        let y = normalize_power(&[Complex64::new(3.0, 4.0)], 1.0).unwrap();
        assert!((y.symbols[0] - Complex64::new(0.6, 0.8)).norm() < 1e-15);
        assert!((y.power - 1.0).abs() < 1e-15);
    }

    #[test]
    fn normalized_frame_is_a_fixed_point() {
        let x: Vec<Complex64> = (0..16).map(|i| Complex64::new((i as f64).sin(), (i as f64).cos())).collect();
        let y = normalize_power(&x, 2.0).unwrap();
        let z = normalize_power(&y.symbols, 2.0).unwrap();
        for (a, b) in y.symbols.iter().zip(&z.symbols) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn zero_vector_rejected() {
        assert_eq!(normalize_power(&[Complex64::new(0.0, 0.0); 3], 1.0), Err(ChannelError::ZeroVector));
    }

    #[test]
    fn sigma_definition() {
        assert_eq!(sigma_from_snr(0.0, 1.0), 1.0);
        assert!((sigma_from_snr(10.0, 1.0) - 0.1).abs() < 1e-15);
        assert!((sigma_from_snr(-5.0, 1.0) - 3.162_277_660_168_379).abs() < 1e-12);
        assert!((snr_from_sigma(sigma_from_snr(7.5, 2.0), 2.0) - 7.5).abs() < 1e-12);
    }

    #[test]
    fn noiseless_is_bit_exact() {
        let f = SymbolFrame::new(vec![Complex64::new(0.25, -1.5); 5]);
        assert_eq!(transmit(&f, &ChannelSpec::noiseless(10.0)).unwrap(), f.symbols);
    }

    #[test]
    fn non_finite_estimate_rejected() {
        let spec = ChannelSpec::awgn(3.0).with_estimate(f64::NAN);
        let f = SymbolFrame::new(vec![Complex64::new(1.0, 0.0)]);
        assert!(matches!(transmit(&f, &spec), Err(ChannelError::NonFinite { .. })));
    }
}
