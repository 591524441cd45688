//! The full transceiver: semantic encoder, channel coder and frame-prediction
//! decoder.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use semcom_tensor::{Real, Tensor, Var};

use super::config::{ChannelPlan, ModelConfig};
use super::modules::{AfModule, ConvStack, FeatureChoice, FeatureFusion, FusionVars, Gate, ResUNet};
use super::CodecError;
use crate::channel::{Channel, ChannelFamily, ChannelSpec};
use crate::flow_matching::{flow_graph, FeatureNet, FlowField};
use crate::nn_core::{CnnBlock, ConvSpec, Ctx, NoiseAttention, ParamStore, Role};

/// Graph nodes of the transmitter side.
#[derive(Clone, Copy, Debug)]
pub struct EncoderVars {
    /// `[b, H, W, 4]` at full resolution.
    pub flow: Var,
    pub key_latent: Var,
    pub flow_latent: Var,
    pub chosen: Var,
    pub fusion: FusionVars,
}

/// Graph nodes of one end-to-end pass.
#[derive(Clone, Copy, Debug)]
pub struct Pass {
    pub encoder: EncoderVars,
    /// `[b, 2 c']` before power normalization.
    pub code: Var,
    /// Normalized channel input.
    pub sent: Var,
    pub received: Var,
    pub key_hat: Var,
    pub fused_hat: Var,
    /// Predicted features `L`.
    pub predicted: Var,
    pub key_frame: Var,
    pub pred_frame: Var,
    /// `[b, N, H, W, 3]`.
    pub clip: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLatents<T> {
    pub flow_latent: Tensor<T>,
    pub key_latent: Tensor<T>,
    pub chosen: Tensor<T>,
    pub fused: Tensor<T>,
}

/// Code maps and the complex symbols they reshape into.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelCode<T> {
    pub y1: Tensor<T>,
    pub y2: Tensor<T>,
    pub symbols: Vec<Complex64>,
}

#[derive(Clone, Debug)]
pub struct Transceiver {
    cfg: ModelConfig,
    plan: ChannelPlan,
    features: FeatureNet,
    key_enc: CnnBlock,
    key_na: NoiseAttention,
    flow_enc: CnnBlock,
    flow_na: NoiseAttention,
    choice: FeatureChoice,
    fusion: FeatureFusion,
    code_key: ConvStack,
    code_pred: ConvStack,
    decode_key: ConvStack,
    decode_key_na: NoiseAttention,
    decode_pred: ConvStack,
    decode_pred_na: NoiseAttention,
    unet: ResUNet,
    af_key: AfModule,
    af_pred: AfModule,
    key_dec: CnnBlock,
    pred_dec: CnnBlock,
}

fn spec(kernel: usize, out_channels: usize, stride: usize) -> ConvSpec {
    ConvSpec { kernel, out_channels, stride }
}

/// Stride-2 stages ending in `out` channels.
fn strided(stages: usize, kernel: usize, hidden: usize, out: usize) -> Vec<ConvSpec> {
    (0..stages).map(|i| spec(kernel, if i + 1 == stages { out } else { hidden }, 2)).collect()
}

impl Transceiver {
    pub fn new(cfg: ModelConfig) -> Result<Self, CodecError> {
        cfg.validate()?;
        let plan = cfg.plan()?;
        let r = cfg.squeeze_ratio;
        let s = cfg.stages();
        let yc = plan.code_channels();
        let (kc, fc, uc) = (cfg.key_channels, cfg.fused_channels, cfg.flow_channels);
        Ok(Transceiver {
            features: FeatureNet::new("flow.features", cfg.flow_dim, cfg.flow_padding),
            key_enc: CnnBlock::new("enc.key", Role::Encoder, 3, &strided(s, 5, cfg.enc_hidden, kc), false)?,
            key_na: NoiseAttention::new("enc.key_na", kc, r)?,
            flow_enc: CnnBlock::new(
                "enc.flow",
                Role::Encoder,
                4,
                &[spec(3, cfg.enc_hidden, 1), spec(3, uc, 1)],
                false,
            )?,
            flow_na: NoiseAttention::new("enc.flow_na", uc, r)?,
            choice: FeatureChoice::new("enc.choice", uc, kc, fc),
            fusion: FeatureFusion::new("enc.fusion", fc, r)?,
            code_key: ConvStack::new("chan.enc_key", kc, cfg.channel_hidden, plan.y1),
            code_pred: ConvStack::new("chan.enc_pred", fc, cfg.channel_hidden, plan.y2),
            decode_key: ConvStack::new("chan.dec_key", yc, cfg.channel_hidden, kc),
            decode_key_na: NoiseAttention::new("chan.dec_key_na", kc, r)?,
            decode_pred: ConvStack::new("chan.dec_pred", yc, cfg.channel_hidden, fc),
            decode_pred_na: NoiseAttention::new("chan.dec_pred_na", fc, r)?,
            unet: ResUNet::new("dec.unet", fc + kc, cfg.unet_widths, kc, r)?,
            af_key: AfModule::new("dec.af_key", kc),
            af_pred: AfModule::new("dec.af_pred", kc),
            key_dec: CnnBlock::new("dec.key", Role::Decoder, kc, &strided(s, 3, cfg.dec_hidden, 3), true)?,
            pred_dec: CnnBlock::new("dec.pred", Role::Decoder, kc, &strided(s, 3, cfg.dec_hidden, 3), true)?,
            cfg,
            plan,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn plan(&self) -> &ChannelPlan {
        &self.plan
    }

    /// Complex symbols sent per clip.
    pub fn symbols_per_clip(&self) -> usize {
        self.plan.symbols
    }

    pub fn init<T: Real>(&self, seed: u64) -> ParamStore<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        self.features.init(&mut store, &mut rng);
        self.key_enc.init(&mut store, &mut rng);
        self.key_na.init(&mut store, &mut rng);
        self.flow_enc.init(&mut store, &mut rng);
        self.flow_na.init(&mut store, &mut rng);
        self.choice.init(&mut store, &mut rng);
        self.fusion.init(&mut store, &mut rng);
        self.code_key.init(&mut store, &mut rng);
        self.code_pred.init(&mut store, &mut rng);
        self.decode_key.init(&mut store, &mut rng);
        self.decode_key_na.init(&mut store, &mut rng);
        self.decode_pred.init(&mut store, &mut rng);
        self.decode_pred_na.init(&mut store, &mut rng);
        self.unet.init(&mut store, &mut rng);
        self.af_key.init(&mut store, &mut rng);
        self.af_pred.init(&mut store, &mut rng);
        self.key_dec.init(&mut store, &mut rng);
        self.pred_dec.init(&mut store, &mut rng);
        store
    }

    /// Reject a parameter store that does not match this architecture.
    pub fn check_params<T: Real>(&self, params: &ParamStore<T>) -> Result<(), CodecError> {
        let reference = self.init::<T>(0);
        for (name, t) in reference.iter() {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                Some(p) => {
                    return Err(CodecError::Incompatible(format!(
                        "{name}: expected shape {:?}, found {:?}",
                        t.shape(),
                        p.shape()
                    )))
                }
                None => return Err(CodecError::Incompatible(format!("missing parameter {name}"))),
            }
        }
        if params.len() != reference.len() {
            return Err(CodecError::Incompatible(format!(
                "expected {} tensors, found {}",
                reference.len(),
                params.len()
            )));
        }
        Ok(())
    }

    /// `[b, 1]` SNR column fed to every noise-attention module.
    pub fn snr_input<T: Real>(&self, ctx: &mut Ctx<'_, T>, batch: usize, snr_db: f64) -> Var {
        ctx.constant(Tensor::full(&[batch, 1], T::from_f64_lossy(snr_db)))
    }

    pub fn flow<T: Real>(&self, ctx: &mut Ctx<'_, T>, key: Var, last: Var) -> Var {
        let f1 = self.features.forward(ctx, key);
        let f2 = self.features.forward(ctx, last);
        flow_graph(&mut ctx.g, f1, f2)
    }

    /// `flow` is the full-resolution `[b, H, W, 4]` field.
    pub fn encode<T: Real>(&self, ctx: &mut Ctx<'_, T>, key: Var, flow: Var, snr: Var) -> EncoderVars {
        // Flow is in pixels; bring it to roughly unit scale for the encoder.
        let pooled = ctx.g.avg_pool(flow, self.cfg.t);
        let pooled = ctx.g.scale(pooled, 2.0 / self.cfg.height.max(self.cfg.width) as f64);
        let s = self.key_enc.forward(ctx, key);
        let s = self.key_na.forward(ctx, s, snr);
        let f = self.flow_enc.forward(ctx, pooled);
        let f = self.flow_na.forward(ctx, f, snr);
        let lifted = self.choice.lift(ctx, s);
        let chosen = self.choice.forward(ctx, f, lifted, Gate::Learned);
        let fusion = self.fusion.forward(ctx, chosen, lifted, snr);
        EncoderVars { flow, key_latent: s, flow_latent: f, chosen, fusion }
    }

    /// `[b, 2 c']` real code; consecutive pairs are the real and imaginary
    /// parts of one symbol.
    pub fn channel_encode_graph<T: Real>(&self, ctx: &mut Ctx<'_, T>, key_latent: Var, fused: Var) -> Var {
        let y1 = self.code_key.forward(ctx, key_latent);
        let y2 = self.code_pred.forward(ctx, fused);
        let y = ctx.g.concat(&[y1, y2]);
        let b = ctx.g.shape(y)[0];
        ctx.g.reshape(y, &[b, 2 * self.plan.symbols])
    }

    /// Per-clip power normalization plus optional additive noise `[b, 2 c']`.
    pub fn channel_graph<T: Real>(&self, ctx: &mut Ctx<'_, T>, code: Var, noise: Option<Tensor<T>>) -> (Var, Var) {
        let norm = (self.plan.symbols as f64 * self.cfg.power).sqrt();
        let sent = ctx.g.normalize_rows(code, norm);
        let received = match noise {
            Some(n) => {
                let n = ctx.constant(n);
                ctx.g.add(sent, n)
            }
            None => sent,
        };
        (sent, received)
    }

    pub fn channel_decode_graph<T: Real>(&self, ctx: &mut Ctx<'_, T>, received: Var, snr: Var) -> (Var, Var) {
        let b = ctx.g.shape(received)[0];
        let (h, w) = self.cfg.latent_hw();
        let y = ctx.g.reshape(received, &[b, h, w, self.plan.code_channels()]);
        let s = self.decode_key.forward(ctx, y);
        let s = self.decode_key_na.forward(ctx, s, snr);
        let f = self.decode_pred.forward(ctx, y);
        let f = self.decode_pred_na.forward(ctx, f, snr);
        (s, f)
    }

    /// Returns `(L, K, P)`.
    pub fn predict_graph<T: Real>(
        &self,
        ctx: &mut Ctx<'_, T>,
        key_hat: Var,
        fused_hat: Var,
        snr: Var,
    ) -> (Var, Var, Var) {
        let x = ctx.g.concat(&[fused_hat, key_hat]);
        let l = self.unet.forward(ctx, x, snr);
        let p = self.af_pred.forward(ctx, l);
        let p = self.pred_dec.forward(ctx, p);
        let k = self.af_key.forward(ctx, key_hat);
        let k = self.key_dec.forward(ctx, k);
        (l, k, p)
    }

    /// Linear blend from `K` (frame 0) to `P` (frame `n - 1`), `[b, n, H, W, 3]`.
    pub fn interpolate_graph<T: Real>(&self, ctx: &mut Ctx<'_, T>, key: Var, pred: Var, n: usize) -> Var {
        let s = ctx.g.shape(key).to_vec();
        let per = s[1] * s[2] * s[3];
        let k = ctx.g.reshape(key, &[s[0], per]);
        let p = ctx.g.reshape(pred, &[s[0], per]);
        let diff = ctx.g.sub(p, k);
        let mut frames = vec![k];
        for j in 1..n - 1 {
            let step = ctx.g.scale(diff, j as f64 / (n - 1) as f64);
            frames.push(ctx.g.add(k, step));
        }
        frames.push(p);
        let all = ctx.g.concat(&frames);
        ctx.g.reshape(all, &[s[0], n, s[1], s[2], s[3]])
    }

    /// Encode, transmit and decode a batch of clips `[b, N, H, W, 3]`.
    pub fn forward<T: Real>(
        &self,
        ctx: &mut Ctx<'_, T>,
        frames: &Tensor<T>,
        snr_est_db: f64,
        noise: Option<Tensor<T>>,
    ) -> Result<Pass, CodecError> {
        self.check_batch(frames.shape())?;
        let b = frames.dim(0);
        let n = frames.dim(1);
        let key = ctx.constant(select_frame(frames, 0));
        let last = ctx.constant(select_frame(frames, n - 1));
        let snr = self.snr_input(ctx, b, snr_est_db);
        let flow = self.flow(ctx, key, last);
        let encoder = self.encode(ctx, key, flow, snr);
        let code = self.channel_encode_graph(ctx, encoder.key_latent, encoder.fusion.out);
        let (sent, received) = self.channel_graph(ctx, code, noise);
        let (key_hat, fused_hat) = self.channel_decode_graph(ctx, received, snr);
        let (predicted, key_frame, pred_frame) = self.predict_graph(ctx, key_hat, fused_hat, snr);
        let clip = self.interpolate_graph(ctx, key_frame, pred_frame, n);
        Ok(Pass { encoder, code, sent, received, key_hat, fused_hat, predicted, key_frame, pred_frame, clip })
    }

    pub fn check_batch(&self, shape: &[usize]) -> Result<(), CodecError> {
        let c = &self.cfg;
        if shape.len() != 5 || shape[1] < 2 || shape[2] != c.height || shape[3] != c.width || shape[4] != 3 {
            return Err(CodecError::ShapeMismatch(format!(
                "expected [b, n >= 2, {}, {}, 3], got {shape:?}",
                c.height, c.width
            )));
        }
        if shape[0] == 0 {
            return Err(CodecError::ShapeMismatch("empty batch".into()));
        }
        Ok(())
    }

    /// Channel noise for a batch, `None` on a noiseless link.
    pub fn draw_noise<T: Real>(&self, channel: &mut Channel, spec: &ChannelSpec, batch: usize) -> Option<Tensor<T>> {
        match spec.family {
            ChannelFamily::Noiseless => None,
            ChannelFamily::Awgn => {
                let len = batch * 2 * self.plan.symbols;
                let v = channel.real_noise(len, spec.noise_variance() / 2.0);
                Some(Tensor::from_vec(&[batch, 2 * self.plan.symbols], v.into_iter().map(T::from_f64_lossy).collect()))
            }
        }
    }

    /// Inference over a batch; returns reconstructed clips `[b, N, H, W, 3]`.
    pub fn transmit_batch<T: Real>(
        &self,
        params: &ParamStore<T>,
        frames: &Tensor<T>,
        spec: &ChannelSpec,
        channel: &mut Channel,
    ) -> Result<Tensor<T>, CodecError> {
        spec.validate()?;
        self.check_batch(frames.shape())?;
        let noise = self.draw_noise(channel, spec, frames.dim(0));
        let mut ctx = Ctx::inference(params);
        let pass = self.forward(&mut ctx, frames, spec.snr_est_db, noise)?;
        Ok(ctx.value(pass.clip).clone())
    }

    fn single(&self, x: &Tensor<impl Real>, channels: usize, what: &str) -> Result<(), CodecError> {
        let (h, w) = self.cfg.latent_hw();
        if x.shape() != [h, w, channels] {
            return Err(CodecError::ShapeMismatch(format!(
                "{what}: expected [{h}, {w}, {channels}], got {:?}",
                x.shape()
            )));
        }
        Ok(())
    }

    /// Bidirectional flow between the first and last frame of a clip `[n, H, W, 3]`.
    pub fn compute_flow<T: Real>(&self, params: &ParamStore<T>, clip: &Tensor<T>) -> Result<FlowField<T>, CodecError> {
        let frames = clip.clone().reshape(&[&[1], clip.shape()].concat());
        self.check_batch(frames.shape())?;
        let n = frames.dim(1);
        let mut ctx = Ctx::inference(params);
        let key = ctx.constant(select_frame(&frames, 0));
        let last = ctx.constant(select_frame(&frames, n - 1));
        let v = self.flow(&mut ctx, key, last);
        Ok(FlowField { v: unbatch(ctx.value(v)) })
    }

    pub fn encode_semantics<T: Real>(
        &self,
        params: &ParamStore<T>,
        clip: &Tensor<T>,
        flow: &FlowField<T>,
        snr_est_db: f64,
    ) -> Result<EncoderLatents<T>, CodecError> {
        let frames = clip.clone().reshape(&[&[1], clip.shape()].concat());
        self.check_batch(frames.shape())?;
        if flow.v.shape() != [self.cfg.height, self.cfg.width, 4] {
            return Err(CodecError::ShapeMismatch(format!("flow {:?} does not match the clip", flow.v.shape())));
        }
        let mut ctx = Ctx::inference(params);
        let key = ctx.constant(select_frame(&frames, 0));
        let fv = ctx.constant(flow.v.clone().reshape(&[1, self.cfg.height, self.cfg.width, 4]));
        let snr = self.snr_input(&mut ctx, 1, snr_est_db);
        let e = self.encode(&mut ctx, key, fv, snr);
        Ok(EncoderLatents {
            flow_latent: unbatch(ctx.value(e.flow_latent)),
            key_latent: unbatch(ctx.value(e.key_latent)),
            chosen: unbatch(ctx.value(e.chosen)),
            fused: unbatch(ctx.value(e.fusion.out)),
        })
    }

    pub fn feature_choice<T: Real>(
        &self,
        params: &ParamStore<T>,
        flow_latent: &Tensor<T>,
        key_latent: &Tensor<T>,
        gate: Gate,
    ) -> Result<Tensor<T>, CodecError> {
        self.single(flow_latent, self.cfg.flow_channels, "flow latent")?;
        self.single(key_latent, self.cfg.key_channels, "key latent")?;
        let mut ctx = Ctx::inference(params);
        let f = ctx.constant(batch1(flow_latent));
        let s = ctx.constant(batch1(key_latent));
        let lifted = self.choice.lift(&mut ctx, s);
        let y = self.choice.forward(&mut ctx, f, lifted, gate);
        Ok(unbatch(ctx.value(y)))
    }

    /// Returns `F''` and the branch-A weights `w_a` (`[c]`).
    pub fn feature_fusion<T: Real>(
        &self,
        params: &ParamStore<T>,
        chosen: &Tensor<T>,
        key_latent: &Tensor<T>,
        snr_est_db: f64,
    ) -> Result<(Tensor<T>, Tensor<T>), CodecError> {
        self.single(chosen, self.cfg.fused_channels, "chosen features")?;
        self.single(key_latent, self.cfg.key_channels, "key latent")?;
        let mut ctx = Ctx::inference(params);
        let fc = ctx.constant(batch1(chosen));
        let s = ctx.constant(batch1(key_latent));
        let snr = self.snr_input(&mut ctx, 1, snr_est_db);
        let lifted = self.choice.lift(&mut ctx, s);
        let v = self.fusion.forward(&mut ctx, fc, lifted, snr);
        let w = ctx.value(v.w_a).clone();
        let c = w.len();
        Ok((unbatch(ctx.value(v.out)), w.reshape(&[c])))
    }

    /// Code maps and unnormalized symbols for one clip's latents.
    pub fn channel_encode<T: Real>(
        &self,
        params: &ParamStore<T>,
        key_latent: &Tensor<T>,
        fused: &Tensor<T>,
    ) -> Result<ChannelCode<T>, CodecError> {
        self.single(key_latent, self.cfg.key_channels, "key latent")?;
        self.single(fused, self.cfg.fused_channels, "fused features")?;
        let mut ctx = Ctx::inference(params);
        let s = ctx.constant(batch1(key_latent));
        let f = ctx.constant(batch1(fused));
        let y1 = self.code_key.forward(&mut ctx, s);
        let y2 = self.code_pred.forward(&mut ctx, f);
        let y = ctx.g.concat(&[y1, y2]);
        let symbols = to_complex(ctx.value(y).data());
        if symbols.len() != self.plan.symbols {
            return Err(CodecError::BudgetMismatch { expected: self.plan.symbols, got: symbols.len() });
        }
        Ok(ChannelCode { y1: unbatch(ctx.value(y1)), y2: unbatch(ctx.value(y2)), symbols })
    }

    /// Received symbols back to `(S'^, F''^)`.
    pub fn channel_decode<T: Real>(
        &self,
        params: &ParamStore<T>,
        symbols: &[Complex64],
        snr_est_db: f64,
    ) -> Result<(Tensor<T>, Tensor<T>), CodecError> {
        if symbols.len() != self.plan.symbols {
            return Err(CodecError::LengthMismatch { expected: self.plan.symbols, got: symbols.len() });
        }
        let mut ctx = Ctx::inference(params);
        let r = ctx.constant(Tensor::from_vec(&[1, 2 * symbols.len()], from_complex(symbols)));
        let snr = self.snr_input(&mut ctx, 1, snr_est_db);
        let (s, f) = self.channel_decode_graph(&mut ctx, r, snr);
        Ok((unbatch(ctx.value(s)), unbatch(ctx.value(f))))
    }

    /// Key frame `K` and predicted frame `P`, both `[H, W, 3]`.
    pub fn predict_frame<T: Real>(
        &self,
        params: &ParamStore<T>,
        key_hat: &Tensor<T>,
        fused_hat: &Tensor<T>,
        snr_est_db: f64,
    ) -> Result<(Tensor<T>, Tensor<T>), CodecError> {
        self.single(key_hat, self.cfg.key_channels, "received key latent")?;
        self.single(fused_hat, self.cfg.fused_channels, "received fused features")?;
        let mut ctx = Ctx::inference(params);
        let s = ctx.constant(batch1(key_hat));
        let f = ctx.constant(batch1(fused_hat));
        let snr = self.snr_input(&mut ctx, 1, snr_est_db);
        let (_, k, p) = self.predict_graph(&mut ctx, s, f, snr);
        Ok((unbatch(ctx.value(k)), unbatch(ctx.value(p))))
    }
}

/// Frame `j` of every clip in `[b, n, h, w, c]`, as `[b, h, w, c]`.
pub fn select_frame<T: Real>(frames: &Tensor<T>, j: usize) -> Tensor<T> {
    let s = frames.shape();
    let per = s[2] * s[3] * s[4];
    let mut out = Vec::with_capacity(s[0] * per);
    for b in 0..s[0] {
        let start = (b * s[1] + j) * per;
        out.extend_from_slice(&frames.data()[start..start + per]);
    }
    Tensor::from_vec(&[s[0], s[2], s[3], s[4]], out)
}

fn batch1<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.clone().reshape(&[&[1], x.shape()].concat())
}

fn unbatch<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.clone().reshape(&x.shape()[1..])
}

/// Consecutive `(re, im)` pairs to complex symbols.
pub fn to_complex<T: Real>(v: &[T]) -> Vec<Complex64> {
    v.chunks_exact(2).map(|p| Complex64::new(p[0].as_f64(), p[1].as_f64())).collect()
}

pub fn from_complex<T: Real>(z: &[Complex64]) -> Vec<T> {
    z.iter().flat_map(|c| [T::from_f64_lossy(c.re), T::from_f64_lossy(c.im)]).collect()
}

/// `N` frames blending linearly from `K` to `P`.
pub fn interpolate_sequence<T: Real>(key: &Tensor<T>, pred: &Tensor<T>, n: usize) -> Result<Tensor<T>, CodecError> {
    if key.shape() != pred.shape() {
        return Err(CodecError::ShapeMismatch(format!("{:?} vs {:?}", key.shape(), pred.shape())));
    }
    if n < 2 {
        return Err(CodecError::ShapeMismatch(format!("need at least 2 frames, got {n}")));
    }
    let mut frames = Vec::with_capacity(n);
    for j in 0..n {
        if j == 0 {
            frames.push(key.clone());
        } else if j == n - 1 {
            frames.push(pred.clone());
        } else {
            let a = T::from_f64_lossy(j as f64 / (n - 1) as f64);
            frames.push(key.zip_map(pred, |k, p| k + a * (p - k)));
        }
    }
    let refs: Vec<&Tensor<T>> = frames.iter().collect();
    Ok(Tensor::stack(&refs))
}
