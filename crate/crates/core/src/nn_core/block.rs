//! Convolutional feature-learning blocks.
//!
//! Encoder stages are `conv -> GDN -> PReLU`, with strided convolutions doing
//! the downsampling. Decoder stages are `pixel shuffle -> conv -> IGDN -> PReLU`;
//! a stride of 2 in a decoder [`ConvSpec`] means "upscale by 2 first". A block
//! built with `sigmoid_out` ends in `conv -> sigmoid` instead, so it emits
//! values in `[0, 1]`.

use rand_chacha::ChaCha8Rng;
use semcom_tensor::{Real, Tensor, Var};

use super::gdn::Gdn;
use super::layers::{Conv, ConvSpec, Prelu};
use super::params::{Ctx, ParamStore};
use super::NnError;

const SIGMOID_INIT_SCALE: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Encoder,
    Decoder,
}

#[derive(Clone, Debug)]
struct Stage {
    upscale: usize,
    conv: Conv,
    post: Option<(Gdn, Prelu)>,
}

#[derive(Clone, Debug)]
pub struct CnnBlock {
    role: Role,
    in_channels: usize,
    out_channels: usize,
    stages: Vec<Stage>,
}

impl CnnBlock {
    pub fn new(
        name: &str,
        role: Role,
        in_channels: usize,
        specs: &[ConvSpec],
        sigmoid_out: bool,
    ) -> Result<Self, NnError> {
        if specs.is_empty() {
            return Err(NnError::BadConvSpec("empty CNN block".into()));
        }
        let mut channels = in_channels;
        let mut stages = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let spec = ConvSpec::new(spec.kernel, spec.out_channels, spec.stride)?;
            let prefix = format!("{name}.stage{i}");
            let (upscale, conv_spec) = match role {
                Role::Encoder => (1, spec),
                Role::Decoder => {
                    let r = spec.stride;
                    if !channels.is_multiple_of(r * r) {
                        return Err(NnError::BadChannelCount { channels, factor: r });
                    }
                    channels /= r * r;
                    (r, ConvSpec { stride: 1, ..spec })
                }
            };
            let last = i + 1 == specs.len();
            let mut conv = Conv::new(format!("{prefix}.conv"), channels, conv_spec);
            if last && sigmoid_out {
                // Start with unsaturated sigmoids.
                conv = conv.with_init_scale(SIGMOID_INIT_SCALE);
            }
            let post = if last && sigmoid_out {
                None
            } else {
                let c = spec.out_channels;
                Some((
                    Gdn::new(format!("{prefix}.gdn"), c, role == Role::Decoder),
                    Prelu::new(format!("{prefix}.act"), c),
                ))
            };
            stages.push(Stage { upscale, conv, post });
            channels = spec.out_channels;
        }
        Ok(CnnBlock { role, in_channels, out_channels: channels, stages })
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    /// Spatial down- (encoder) or up- (decoder) sampling factor.
    pub fn scale(&self) -> usize {
        self.stages
            .iter()
            .map(|s| match self.role {
                Role::Encoder => s.conv.spec().stride,
                Role::Decoder => s.upscale,
            })
            .product()
    }

    /// Reject inputs the block cannot process.
    pub fn check_input(&self, shape: &[usize]) -> Result<(), NnError> {
        if shape.len() != 4 || shape[3] != self.in_channels {
            return Err(NnError::BadShape(format!("expected [n, h, w, {}], got {shape:?}", self.in_channels)));
        }
        if self.role == Role::Encoder {
            let f = self.scale();
            if !shape[1].is_multiple_of(f) || !shape[2].is_multiple_of(f) {
                return Err(NnError::BadShape(format!(
                    "spatial dims {}x{} not divisible by total stride {f}",
                    shape[1], shape[2]
                )));
            }
        }
        Ok(())
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) {
        for s in &self.stages {
            s.conv.init(store, rng);
            if let Some((gdn, act)) = &s.post {
                gdn.init(store, rng);
                act.init(store, rng);
            }
        }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Var {
        let mut h = x;
        for s in &self.stages {
            if s.upscale > 1 {
                h = ctx.g.pixel_shuffle(h, s.upscale);
            }
            h = s.conv.forward(ctx, h);
            h = match &s.post {
                Some((gdn, act)) => {
                    let n = gdn.forward(ctx, h);
                    act.forward(ctx, n)
                }
                None => ctx.g.sigmoid(h),
            };
        }
        h
    }

    /// Run the block on a plain tensor.
    pub fn apply<T: Real>(&self, params: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        self.check_input(x.shape())?;
        let mut ctx = Ctx::inference(params);
        let xv = ctx.constant(x.clone());
        let y = self.forward(&mut ctx, xv);
        Ok(ctx.value(y).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn spec(k: usize, o: usize, s: usize) -> ConvSpec {
        ConvSpec::new(k, o, s).unwrap()
    }

    #[test]
    fn encoder_stride_arithmetic() {
        let enc = CnnBlock::new("e", Role::Encoder, 3, &[spec(5, 8, 2), spec(5, 16, 2)], false).unwrap();
        let mut store = ParamStore::<f64>::new();
        enc.init(&mut store, &mut ChaCha8Rng::seed_from_u64(0));
        let y = enc.apply(&store, &Tensor::full(&[1, 16, 16, 3], 0.5)).unwrap();
        assert_eq!(y.shape(), &[1, 4, 4, 16]);
        assert_eq!(enc.scale(), 4);
    }

    #[test]
    fn decoder_round_trips_shape_and_ends_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = CnnBlock::new("e", Role::Encoder, 3, &[spec(5, 8, 2), spec(5, 16, 2)], false).unwrap();
        let dec = CnnBlock::new("d", Role::Decoder, 16, &[spec(3, 8, 2), spec(3, 3, 2)], true).unwrap();
        let mut store = ParamStore::<f64>::new();
        enc.init(&mut store, &mut rng);
        dec.init(&mut store, &mut rng);
        let x = Tensor::from_fn(&[2, 16, 16, 3], |i| ((i * 7919) % 101) as f64 / 100.0);
        let z = enc.apply(&store, &x).unwrap();
        let y = dec.apply(&store, &z.map(|v| v * 1e3)).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn encoder_rejects_indivisible_input() {
        let enc = CnnBlock::new("e", Role::Encoder, 3, &[spec(3, 4, 2), spec(3, 4, 2)], false).unwrap();
        assert!(matches!(enc.check_input(&[1, 10, 8, 3]), Err(NnError::BadShape(_))));
    }

    #[test]
    fn decoder_needs_channels_divisible_by_square_factor() {
        let err = CnnBlock::new("d", Role::Decoder, 6, &[spec(3, 4, 2)], false).unwrap_err();
        assert_eq!(err, NnError::BadChannelCount { channels: 6, factor: 2 });
    }
}
