//! SNR-conditioned squeeze-and-excitation ("noise attention").
//!
//! ```text
//! z  = avgpool(u)                 [c]
//! z' = concat(z, snr_db)          [c + 1]
//! w  = sigmoid(fc2(relu(fc1(z'))))  in (0, 1)^c
//! out = u + u * w
//! ```

use rand_chacha::ChaCha8Rng;
use semcom_tensor::{Graph, Real, Tensor, Var};

use super::layers::Linear;
use super::params::{normal_tensor, Ctx, ParamStore};
use super::NnError;

pub const DEFAULT_SQUEEZE_RATIO: usize = 4;

/// Graph nodes of the two bottleneck layers.
#[derive(Clone, Copy, Debug)]
pub struct SeWeights {
    pub fc1_w: Var,
    pub fc1_b: Var,
    pub fc2_w: Var,
    pub fc2_b: Var,
}

/// `u: [n, h, w, c]`, `snr_db: [n, 1]`.
pub fn noise_attention_graph<T: Real>(g: &mut Graph<T>, u: Var, snr_db: Var, se: SeWeights) -> Var {
    let w = channel_weights(g, u, snr_db, se);
    let scaled = g.scale_channels(u, w);
    g.add(u, scaled)
}

fn channel_weights<T: Real>(g: &mut Graph<T>, u: Var, snr_db: Var, se: SeWeights) -> Var {
    let z = g.global_avg_pool(u);
    let z = g.concat(&[z, snr_db]);
    let h = g.matmul(z, se.fc1_w, false, false);
    let h = g.add_last(h, se.fc1_b);
    let h = g.relu(h);
    let a = g.matmul(h, se.fc2_w, false, false);
    let a = g.add_last(a, se.fc2_b);
    g.sigmoid(a)
}

/// Explicit weights of one noise-attention block.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseAttentionParams<T> {
    pub squeeze_ratio: usize,
    /// `[c + 1, c / r]`
    pub fc1_w: Tensor<T>,
    pub fc1_b: Tensor<T>,
    /// `[c / r, c]`
    pub fc2_w: Tensor<T>,
    pub fc2_b: Tensor<T>,
}

impl<T: Real> NoiseAttentionParams<T> {
    fn check_ratio(channels: usize, ratio: usize) -> Result<usize, NnError> {
        if ratio == 0 || !channels.is_multiple_of(ratio) {
            return Err(NnError::BadSqueezeRatio { channels, ratio });
        }
        Ok(channels / ratio)
    }

    pub fn zeros(channels: usize, ratio: usize) -> Result<Self, NnError> {
        let hidden = Self::check_ratio(channels, ratio)?;
        Ok(NoiseAttentionParams {
            squeeze_ratio: ratio,
            fc1_w: Tensor::zeros(&[channels + 1, hidden]),
            fc1_b: Tensor::zeros(&[hidden]),
            fc2_w: Tensor::zeros(&[hidden, channels]),
            fc2_b: Tensor::zeros(&[channels]),
        })
    }

    pub fn random(channels: usize, ratio: usize, rng: &mut ChaCha8Rng) -> Result<Self, NnError> {
        let hidden = Self::check_ratio(channels, ratio)?;
        Ok(NoiseAttentionParams {
            squeeze_ratio: ratio,
            fc1_w: normal_tensor(&[channels + 1, hidden], 0.5, rng),
            fc1_b: normal_tensor(&[hidden], 0.1, rng),
            fc2_w: normal_tensor(&[hidden, channels], 0.5, rng),
            fc2_b: normal_tensor(&[channels], 0.1, rng),
        })
    }

    pub fn channels(&self) -> usize {
        self.fc2_b.len()
    }
}

/// Noise attention on `u` of shape `[h, w, c]` or `[n, h, w, c]`.
pub fn noise_attention<T: Real>(
    u: &Tensor<T>,
    snr_est_db: f64,
    p: &NoiseAttentionParams<T>,
) -> Result<Tensor<T>, NnError> {
    if !snr_est_db.is_finite() {
        return Err(NnError::NonFiniteSnr(snr_est_db));
    }
    let batched = match u.rank() {
        3 => u.clone().reshape(&[1, u.dim(0), u.dim(1), u.dim(2)]),
        4 => u.clone(),
        _ => return Err(NnError::BadShape(format!("noise attention input {:?}", u.shape()))),
    };
    if batched.dim(3) != p.channels() {
        return Err(NnError::ChannelMismatch { expected: p.channels(), got: batched.dim(3) });
    }
    let n = batched.dim(0);
    let mut g = Graph::inference();
    let uv = g.constant(batched);
    let snr = g.constant(Tensor::full(&[n, 1], T::from_f64_lossy(snr_est_db)));
    let se = SeWeights {
        fc1_w: g.constant(p.fc1_w.clone()),
        fc1_b: g.constant(p.fc1_b.clone()),
        fc2_w: g.constant(p.fc2_w.clone()),
        fc2_b: g.constant(p.fc2_b.clone()),
    };
    let y = noise_attention_graph(&mut g, uv, snr, se);
    Ok(g.value(y).clone().reshape(u.shape()))
}

/// Learned noise-attention block.
#[derive(Clone, Debug)]
pub struct NoiseAttention {
    fc1: Linear,
    fc2: Linear,
    name: String,
}

impl NoiseAttention {
    pub fn new(name: impl Into<String>, channels: usize, ratio: usize) -> Result<Self, NnError> {
        let name = name.into();
        let hidden = NoiseAttentionParams::<f32>::check_ratio(channels, ratio)?;
        Ok(NoiseAttention {
            fc1: Linear::new(format!("{name}.fc1"), channels + 1, hidden),
            fc2: Linear::new(format!("{name}.fc2"), hidden, channels),
            name,
        })
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) {
        self.fc1.init(store, rng);
        self.fc2.init(store, rng);
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, u: Var, snr_db: Var) -> Var {
        let se = SeWeights {
            fc1_w: ctx.p(&format!("{}.fc1.w", self.name)),
            fc1_b: ctx.p(&format!("{}.fc1.b", self.name)),
            fc2_w: ctx.p(&format!("{}.fc2.w", self.name)),
            fc2_b: ctx.p(&format!("{}.fc2.b", self.name)),
        };
        noise_attention_graph(&mut ctx.g, u, snr_db, se)
    }
}
