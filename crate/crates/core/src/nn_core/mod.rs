//! Differentiable building blocks shared by the encoder and decoder.

mod attention;
mod block;
mod gdn;
mod layers;
mod params;

use semcom_tensor::{Real, Tensor};
use thiserror::Error;

pub use attention::{
    noise_attention, noise_attention_graph, NoiseAttention, NoiseAttentionParams, SeWeights, DEFAULT_SQUEEZE_RATIO,
};
pub use block::{CnnBlock, Role};
pub use gdn::{gdn, gdn_graph, Gdn, GdnParams, BETA_MIN};
pub use layers::{Conv, ConvSpec, Linear, Prelu};
pub use params::{Ctx, ParamStore};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("channel mismatch: expected {expected}, got {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("bad shape: {0}")]
    BadShape(String),
    #[error("{channels} channels not divisible by {factor}^2")]
    BadChannelCount { channels: usize, factor: usize },
    #[error("non-finite SNR estimate {0}")]
    NonFiniteSnr(f64),
    #[error("bad convolution spec: {0}")]
    BadConvSpec(String),
    #[error("squeeze ratio {ratio} does not divide {channels} channels")]
    BadSqueezeRatio { channels: usize, ratio: usize },
}

/// Sub-pixel upscaling `[.., h, w, c*r*r] -> [.., h*r, w*r, c]` of a rank-3
/// or rank-4 tensor.
pub fn pixel_shuffle<T: Real>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>, NnError> {
    let (batched, rank3) = as_batched(x)?;
    let c = batched.dim(3);
    if r == 0 || c % (r * r) != 0 {
        return Err(NnError::BadChannelCount { channels: c, factor: r });
    }
    let y = semcom_tensor::pixel_shuffle(&batched, r);
    Ok(if rank3 { unbatch(y) } else { y })
}

/// Inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle<T: Real>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>, NnError> {
    let (batched, rank3) = as_batched(x)?;
    if r == 0 || batched.dim(1) % r != 0 || batched.dim(2) % r != 0 {
        return Err(NnError::BadShape(format!("{:?} not divisible by {r}", x.shape())));
    }
    let y = semcom_tensor::pixel_unshuffle(&batched, r);
    Ok(if rank3 { unbatch(y) } else { y })
}

fn as_batched<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, bool), NnError> {
    match x.rank() {
        3 => Ok((x.clone().reshape(&[1, x.dim(0), x.dim(1), x.dim(2)]), true)),
        4 => Ok((x.clone(), false)),
        _ => Err(NnError::BadShape(format!("expected rank 3 or 4, got {:?}", x.shape()))),
    }
}

fn unbatch<T: Real>(y: Tensor<T>) -> Tensor<T> {
    let s = y.shape()[1..].to_vec();
    y.reshape(&s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixel_shuffle_shape_law() {
        let x = Tensor::<f32>::from_fn(&[2, 2, 4], |i| i as f32);
        let y = pixel_shuffle(&x, 2).unwrap();
        assert_eq!(y.shape(), &[4, 4, 1]);
        assert_eq!(pixel_shuffle(&x, 1).unwrap(), x);
        assert_eq!(pixel_unshuffle(&y, 2).unwrap(), x);
    }

    #[test]
    fn pixel_shuffle_rejects_bad_channel_count() {
        let x = Tensor::<f32>::zeros(&[2, 2, 6]);
        assert_eq!(pixel_shuffle(&x, 2).unwrap_err(), NnError::BadChannelCount { channels: 6, factor: 2 });
    }
}
