//! Encoder and decoder sub-networks.

use rand_chacha::ChaCha8Rng;
use semcom_tensor::{Real, Var};

use crate::nn_core::{Conv, ConvSpec, Ctx, Linear, NnError, NoiseAttention, ParamStore, Prelu};

fn spec(kernel: usize, out_channels: usize, stride: usize) -> ConvSpec {
    ConvSpec { kernel, out_channels, stride }
}

/// Dual-feature gate: `F' = a * reduce(F) + (1 - a) * lift(S')` with
/// `a = sigmoid(gate(reduce(F) || lift(S')))`.
#[derive(Clone, Debug)]
pub struct FeatureChoice {
    reduce: Conv,
    lift: Conv,
    gate: Conv,
}

/// How the gate of [`FeatureChoice`] is set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Gate {
    Learned,
    Forced(f64),
}

impl FeatureChoice {
    pub fn new(name: &str, flow_channels: usize, key_channels: usize, out: usize) -> Self {
        FeatureChoice {
            reduce: Conv::new(format!("{name}.reduce"), flow_channels, spec(1, out, 1)),
            lift: Conv::new(format!("{name}.lift"), key_channels, spec(1, out, 1)),
            gate: Conv::new(format!("{name}.gate"), 2 * out, spec(1, out, 1)),
        }
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) {
        self.reduce.init(store, rng);
        self.lift.init(store, rng);
        self.gate.init(store, rng);
    }

    /// `S'` lifted to the output width; shared with the fusion stage.
    pub fn lift<T: Real>(&self, ctx: &mut Ctx<'_, T>, s: Var) -> Var {
        self.lift.forward(ctx, s)
    }

    /// `lifted` is [`FeatureChoice::lift`] of `S'`.
    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, f: Var, lifted: Var, gate: Gate) -> Var {
        let fr = self.reduce.forward(ctx, f);
        let ls = lifted;
        let a = match gate {
            Gate::Learned => {
                let both = ctx.g.concat(&[fr, ls]);
                let logits = self.gate.forward(ctx, both);
                ctx.g.sigmoid(logits)
            }
            Gate::Forced(v) => {
                let shape = ctx.g.shape(fr).to_vec();
                ctx.constant(semcom_tensor::Tensor::full(&shape, T::from_f64_lossy(v)))
            }
        };
        let diff = ctx.g.sub(fr, ls);
        let gated = ctx.g.mul(a, diff);
        ctx.g.add(ls, gated)
    }
}

/// Two-branch selective-kernel fusion (3x3 and 5x5) followed by noise attention.
#[derive(Clone, Debug)]
pub struct FeatureFusion {
    branch_a: Conv,
    branch_b: Conv,
    squeeze: Linear,
    logit_a: Linear,
    logit_b: Linear,
    attention: NoiseAttention,
}

/// Graph nodes produced by [`FeatureFusion::forward`].
#[derive(Clone, Copy, Debug)]
pub struct FusionVars {
    pub branch_a: Var,
    pub branch_b: Var,
    /// `[b, c]`; the weight of branch B is `1 - w_a`.
    pub w_a: Var,
    /// Before noise attention.
    pub mixed: Var,
    pub out: Var,
}

impl FeatureFusion {
    pub fn new(name: &str, channels: usize, squeeze_ratio: usize) -> Result<Self, NnError> {
        let hidden = (channels / squeeze_ratio).max(1);
        Ok(FeatureFusion {
            branch_a: Conv::new(format!("{name}.branch3"), 2 * channels, spec(3, channels, 1)),
            branch_b: Conv::new(format!("{name}.branch5"), 2 * channels, spec(5, channels, 1)),
            squeeze: Linear::new(format!("{name}.squeeze"), channels, hidden),
            logit_a: Linear::new(format!("{name}.logit3"), hidden, channels),
            logit_b: Linear::new(format!("{name}.logit5"), hidden, channels),
            attention: NoiseAttention::new(format!("{name}.na"), channels, squeeze_ratio)?,
        })
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) {
        self.branch_a.init(store, rng);
        self.branch_b.init(store, rng);
        self.squeeze.init(store, rng);
        self.logit_a.init(store, rng);
        self.logit_b.init(store, rng);
        self.attention.init(store, rng);
    }

    /// `fc`: chosen features `F'`; `lifted`: `S'` at the same width.
    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, fc: Var, lifted: Var, snr: Var) -> FusionVars {
        let x = ctx.g.concat(&[fc, lifted]);
        let a = self.branch_a.forward(ctx, x);
        let b = self.branch_b.forward(ctx, x);
        let sum = ctx.g.add(a, b);
        let s = ctx.g.global_avg_pool(sum);
        let z = self.squeeze.forward(ctx, s);
        let z = ctx.g.relu(z);
        let la = self.logit_a.forward(ctx, z);
        let lb = self.logit_b.forward(ctx, z);
        // Two-way softmax: w_a = e^la / (e^la + e^lb) = sigmoid(la - lb).
        let d = ctx.g.sub(la, lb);
        let w_a = ctx.g.sigmoid(d);
        let diff = ctx.g.sub(a, b);
        let weighted = ctx.g.scale_channels(diff, w_a);
        let mixed = ctx.g.add(b, weighted);
        let out = self.attention.forward(ctx, mixed, snr);
        FusionVars { branch_a: a, branch_b: b, w_a, mixed, out }
    }
}

/// `conv3x3 -> PReLU -> conv3x3`.
#[derive(Clone, Debug)]
pub struct ConvStack {
    conv1: Conv,
    act: Prelu,
    conv2: Conv,
}

impl ConvStack {
    pub fn new(name: &str, cin: usize, hidden: usize, cout: usize) -> Self {
        ConvStack {
            conv1: Conv::new(format!("{name}.conv1"), cin, spec(3, hidden, 1)),
            act: Prelu::new(format!("{name}.act"), hidden),
            conv2: Conv::new(format!("{name}.conv2"), hidden, spec(3, cout, 1)),
        }
    }

    fn with_output_scale(mut self, scale: f64) -> Self {
        self.conv2 = self.conv2.with_init_scale(scale);
        self
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) {
        self.conv1.init(store, rng);
        self.act.init(store, rng);
        self.conv2.init(store, rng);
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Var {
        let h = self.conv1.forward(ctx, x);
        let h = self.act.forward(ctx, h);
        self.conv2.forward(ctx, h)
    }
}

/// Residual branches start near zero so stacked blocks begin close to the
/// identity.
const RESIDUAL_INIT_SCALE: f64 = 0.1;

/// `x' + conv(PReLU(conv(x)))`, where `x'` is `x` or its 1x1 projection.
#[derive(Clone, Debug)]
pub struct ResBlock {
    body: ConvStack,
    project: Option<Conv>,
}

impl ResBlock {
    pub fn new(name: &str, cin: usize, cout: usize) -> Self {
        ResBlock {
            body: ConvStack::new(name, cin, cout, cout).with_output_scale(RESIDUAL_INIT_SCALE),
            project: (cin != cout).then(|| Conv::new(format!("{name}.proj"), cin, spec(1, cout, 1))),
        }
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) {
        self.body.init(store, rng);
        if let Some(p) = &self.project {
            p.init(store, rng);
        }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Var {
        let skip = match &self.project {
            Some(p) => p.forward(ctx, x),
            None => x,
        };
        let body = self.body.forward(ctx, x);
        ctx.g.add(skip, body)
    }
}

/// Depth-2 residual U-Net; noise attention sits in the upsampling path.
#[derive(Clone, Debug)]
pub struct ResUNet {
    enc0: ResBlock,
    down1: Conv,
    down1_act: Prelu,
    enc1: ResBlock,
    down2: Conv,
    down2_act: Prelu,
    bottleneck: ResBlock,
    up1: Conv,
    up1_act: Prelu,
    up1_res: ResBlock,
    up1_na: NoiseAttention,
    up2: Conv,
    up2_act: Prelu,
    up2_na: NoiseAttention,
    out: Conv,
}

impl ResUNet {
    pub fn new(name: &str, cin: usize, widths: [usize; 3], cout: usize, squeeze_ratio: usize) -> Result<Self, NnError> {
        let [w0, w1, w2] = widths;
        for (c, r) in [(w1, 2), (w2, 2)] {
            if c % (r * r) != 0 {
                return Err(NnError::BadChannelCount { channels: c, factor: r });
            }
        }
        Ok(ResUNet {
            enc0: ResBlock::new(&format!("{name}.enc0"), cin, w0),
            down1: Conv::new(format!("{name}.down1"), w0, spec(3, w1, 2)),
            down1_act: Prelu::new(format!("{name}.down1_act"), w1),
            enc1: ResBlock::new(&format!("{name}.enc1"), w1, w1),
            down2: Conv::new(format!("{name}.down2"), w1, spec(3, w2, 2)),
            down2_act: Prelu::new(format!("{name}.down2_act"), w2),
            bottleneck: ResBlock::new(&format!("{name}.bottleneck"), w2, w2),
            up1: Conv::new(format!("{name}.up1"), w2 / 4 + w1, spec(3, w1, 1)),
            up1_act: Prelu::new(format!("{name}.up1_act"), w1),
            up1_res: ResBlock::new(&format!("{name}.up1_res"), w1, w1),
            up1_na: NoiseAttention::new(format!("{name}.up1_na"), w1, squeeze_ratio)?,
            up2: Conv::new(format!("{name}.up2"), w1 / 4 + w0, spec(3, w0, 1)),
            up2_act: Prelu::new(format!("{name}.up2_act"), w0),
            up2_na: NoiseAttention::new(format!("{name}.up2_na"), w0, squeeze_ratio)?,
            out: Conv::new(format!("{name}.out"), w0, spec(1, cout, 1)),
        })
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) {
        self.enc0.init(store, rng);
        self.down1.init(store, rng);
        self.down1_act.init(store, rng);
        self.enc1.init(store, rng);
        self.down2.init(store, rng);
        self.down2_act.init(store, rng);
        self.bottleneck.init(store, rng);
        self.up1.init(store, rng);
        self.up1_act.init(store, rng);
        self.up1_res.init(store, rng);
        self.up1_na.init(store, rng);
        self.up2.init(store, rng);
        self.up2_act.init(store, rng);
        self.up2_na.init(store, rng);
        self.out.init(store, rng);
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var, snr: Var) -> Var {
        let s0 = self.enc0.forward(ctx, x);
        let h = self.down1.forward(ctx, s0);
        let h = self.down1_act.forward(ctx, h);
        let s1 = self.enc1.forward(ctx, h);
        let h = self.down2.forward(ctx, s1);
        let h = self.down2_act.forward(ctx, h);
        let h = self.bottleneck.forward(ctx, h);

        let h = ctx.g.pixel_shuffle(h, 2);
        let h = ctx.g.concat(&[h, s1]);
        let h = self.up1.forward(ctx, h);
        let h = self.up1_act.forward(ctx, h);
        let h = self.up1_res.forward(ctx, h);
        let h = self.up1_na.forward(ctx, h, snr);

        let h = ctx.g.pixel_shuffle(h, 2);
        let h = ctx.g.concat(&[h, s0]);
        let h = self.up2.forward(ctx, h);
        let h = self.up2_act.forward(ctx, h);
        let h = self.up2_na.forward(ctx, h, snr);
        self.out.forward(ctx, h)
    }
}

/// Attention-feature module: `trunk(x) * (1 + sigmoid(mask(x)))`.
#[derive(Clone, Debug)]
pub struct AfModule {
    trunk: Conv,
    trunk_act: Prelu,
    mask: Conv,
}

impl AfModule {
    pub fn new(name: &str, channels: usize) -> Self {
        AfModule {
            trunk: Conv::new(format!("{name}.trunk"), channels, spec(3, channels, 1)),
            trunk_act: Prelu::new(format!("{name}.trunk_act"), channels),
            mask: Conv::new(format!("{name}.mask"), channels, spec(3, channels, 1)),
        }
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) {
        self.trunk.init(store, rng);
        self.trunk_act.init(store, rng);
        self.mask.init(store, rng);
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Var {
        let t = self.trunk.forward(ctx, x);
        let t = self.trunk_act.forward(ctx, t);
        let m = self.mask.forward(ctx, x);
        let m = ctx.g.sigmoid(m);
        let tm = ctx.g.mul(t, m);
        ctx.g.add(t, tm)
    }
}
