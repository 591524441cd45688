use rand_chacha::ChaCha8Rng;
use semcom_tensor::{Padding, Real, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::params::{normal_tensor, Ctx, ParamStore};
use super::NnError;

/// Convolution hyper-parameters: kernel `m`, `o` output channels, stride `s`
/// (written `m x m x o/s`). Padding always preserves `ceil(size / s)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel: usize,
    pub out_channels: usize,
    pub stride: usize,
}

impl ConvSpec {
    pub fn new(kernel: usize, out_channels: usize, stride: usize) -> Result<Self, NnError> {
        if ![1, 3, 5, 7].contains(&kernel) {
            return Err(NnError::BadConvSpec(format!("kernel {kernel} not in {{1,3,5,7}}")));
        }
        if !(1..=2).contains(&stride) {
            return Err(NnError::BadConvSpec(format!("stride {stride} not in {{1,2}}")));
        }
        if out_channels == 0 {
            return Err(NnError::BadConvSpec("zero output channels".into()));
        }
        Ok(ConvSpec { kernel, out_channels, stride })
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    name: String,
    in_channels: usize,
    spec: ConvSpec,
    padding: Padding,
    std_scale: f64,
}

impl Conv {
    pub fn new(name: impl Into<String>, in_channels: usize, spec: ConvSpec) -> Self {
        Conv { name: name.into(), in_channels, spec, padding: Padding::Zero, std_scale: 1.0 }
    }

    pub fn with_padding(mut self, padding: Padding) -> Self {
        self.padding = padding;
        self
    }

    /// Multiply the initial weight scale (e.g. to start a residual branch small).
    pub fn with_init_scale(mut self, scale: f64) -> Self {
        self.std_scale = scale;
        self
    }

    pub fn spec(&self) -> ConvSpec {
        self.spec
    }

    pub fn weight_name(&self) -> String {
        format!("{}.w", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.b", self.name)
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) {
        let k = self.spec.kernel;
        let fan_in = (k * k * self.in_channels) as f64;
        let std = self.std_scale * (2.0 / fan_in).sqrt();
        store.insert(self.weight_name(), normal_tensor(&[k, k, self.in_channels, self.spec.out_channels], std, rng));
        store.insert(self.bias_name(), Tensor::zeros(&[self.spec.out_channels]));
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Var {
        let w = ctx.p(&self.weight_name());
        let b = ctx.p(&self.bias_name());
        let y = ctx.g.conv2d(x, w, self.spec.stride, self.padding);
        ctx.g.add_last(y, b)
    }
}

/// Fully connected layer over the last axis.
#[derive(Clone, Debug)]
pub struct Linear {
    name: String,
    in_features: usize,
    out_features: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, in_features: usize, out_features: usize) -> Self {
        Linear { name: name.into(), in_features, out_features }
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) {
        let std = (1.0 / self.in_features as f64).sqrt();
        store.insert(format!("{}.w", self.name), normal_tensor(&[self.in_features, self.out_features], std, rng));
        store.insert(format!("{}.b", self.name), Tensor::zeros(&[self.out_features]));
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Var {
        let w = ctx.p(&format!("{}.w", self.name));
        let b = ctx.p(&format!("{}.b", self.name));
        let y = ctx.g.matmul(x, w, false, false);
        ctx.g.add_last(y, b)
    }
}

/// PReLU with a learned slope per channel.
#[derive(Clone, Debug)]
pub struct Prelu {
    name: String,
    channels: usize,
}

impl Prelu {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        Prelu { name: name.into(), channels }
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, _rng: &mut ChaCha8Rng) {
        store.insert(format!("{}.alpha", self.name), Tensor::full(&[self.channels], T::from_f64_lossy(0.25)));
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Var {
        let a = ctx.p(&format!("{}.alpha", self.name));
        ctx.g.prelu(x, a)
    }
}
