//! Dense features and bidirectional optical flow by global matching.
//!
//! ```text
//! C    = F1 F2^T / sqrt(D)          [P, P], P = H' W'
//! G^   = softmax_rows(C) G          G holds each position's (x, y)
//! V    = G^ - G                     forward flow
//! ```
//! The backward flow repeats the matching with `C^T`.

use rand_chacha::ChaCha8Rng;
use semcom_tensor::{Graph, Padding, Real, Tensor, Var};
use thiserror::Error;

use crate::nn_core::{Conv, ConvSpec, Ctx, ParamStore};

/// Largest matching grid. The correlation volume is `P x P`.
pub const MAX_POSITIONS: usize = 4096;

pub const DEFAULT_FEATURE_DIM: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
    #[error("matching grid of {0} positions exceeds {MAX_POSITIONS}")]
    TooManyPositions(usize),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("bad shape: {0}")]
    BadShape(String),
}

/// Per-pixel features of two frames, each `[h, w, d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseFeatures<T> {
    pub f1: Tensor<T>,
    pub f2: Tensor<T>,
}

impl<T: Real> DenseFeatures<T> {
    pub fn new(f1: Tensor<T>, f2: Tensor<T>) -> Result<Self, FlowError> {
        if f1.shape() != f2.shape() {
            return Err(FlowError::ShapeMismatch(f1.shape().to_vec(), f2.shape().to_vec()));
        }
        if f1.rank() != 3 || f1.dim(2) == 0 {
            return Err(FlowError::BadShape(format!("features must be [h, w, d], got {:?}", f1.shape())));
        }
        if !f1.all_finite() || !f2.all_finite() {
            return Err(FlowError::NonFinite("features"));
        }
        let p = f1.dim(0) * f1.dim(1);
        if p > MAX_POSITIONS {
            return Err(FlowError::TooManyPositions(p));
        }
        Ok(DenseFeatures { f1, f2 })
    }

    pub fn height(&self) -> usize {
        self.f1.dim(0)
    }

    pub fn width(&self) -> usize {
        self.f1.dim(1)
    }

    pub fn dim(&self) -> usize {
        self.f1.dim(2)
    }

    pub fn positions(&self) -> usize {
        self.height() * self.width()
    }
}

/// `[h, w, 4]`: forward `(dx, dy)` then backward `(dx, dy)`, in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField<T> {
    pub v: Tensor<T>,
}

impl<T: Real> FlowField<T> {
    pub fn height(&self) -> usize {
        self.v.dim(0)
    }

    pub fn width(&self) -> usize {
        self.v.dim(1)
    }

    /// Forward `(dx, dy)` at `(x, y)`.
    pub fn forward_at(&self, x: usize, y: usize) -> (T, T) {
        let i = (y * self.width() + x) * 4;
        (self.v.data()[i], self.v.data()[i + 1])
    }

    pub fn backward_at(&self, x: usize, y: usize) -> (T, T) {
        let i = (y * self.width() + x) * 4;
        (self.v.data()[i + 2], self.v.data()[i + 3])
    }
}

/// `[h * w, 2]` integer pixel coordinates `(x, y)` in row-major order.
pub fn pixel_grid<T: Real>(h: usize, w: usize) -> Tensor<T> {
    Tensor::from_fn(&[h * w, 2], |i| {
        let p = i / 2;
        T::from_usize(if i % 2 == 0 { p % w } else { p / w }).unwrap()
    })
}

/// Two 3x3 convolutions with a ReLU between, shared by both frames.
#[derive(Clone, Debug)]
pub struct FeatureNet {
    conv1: Conv,
    conv2: Conv,
    dim: usize,
}

impl FeatureNet {
    pub fn new(name: &str, dim: usize, padding: Padding) -> Self {
        let spec = |o| ConvSpec { kernel: 3, out_channels: o, stride: 1 };
        FeatureNet {
            conv1: Conv::new(format!("{name}.conv1"), 3, spec(dim)).with_padding(padding),
            conv2: Conv::new(format!("{name}.conv2"), dim, spec(dim)).with_padding(padding),
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) {
        self.conv1.init(store, rng);
        self.conv2.init(store, rng);
    }

    /// `[b, h, w, 3] -> [b, h, w, d]`.
    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, frames: Var) -> Var {
        let h = self.conv1.forward(ctx, frames);
        let h = ctx.g.relu(h);
        self.conv2.forward(ctx, h)
    }
}

/// Run the shared feature net on two `[h, w, 3]` frames.
pub fn extract_features<T: Real>(
    frame1: &Tensor<T>,
    frame2: &Tensor<T>,
    net: &FeatureNet,
    params: &ParamStore<T>,
) -> Result<DenseFeatures<T>, FlowError> {
    if frame1.shape() != frame2.shape() {
        return Err(FlowError::ShapeMismatch(frame1.shape().to_vec(), frame2.shape().to_vec()));
    }
    if frame1.rank() != 3 || frame1.dim(2) != 3 {
        return Err(FlowError::BadShape(format!("frames must be [h, w, 3], got {:?}", frame1.shape())));
    }
    let (h, w) = (frame1.dim(0), frame1.dim(1));
    let pair = Tensor::stack(&[frame1, frame2]);
    let mut ctx = Ctx::inference(params);
    let x = ctx.constant(pair);
    let y = net.forward(&mut ctx, x);
    let f = ctx.value(y);
    let d = net.dim();
    DenseFeatures::new(f.narrow0(0, 1).reshape(&[h, w, d]), f.narrow0(1, 1).reshape(&[h, w, d]))
}

/// `C[p, q] = <f1[p], f2[q]> / sqrt(D)`.
pub fn correlation_volume<T: Real>(feats: &DenseFeatures<T>) -> Tensor<T> {
    let (p, d) = (feats.positions(), feats.dim());
    let mut g = Graph::inference();
    let a = g.constant(feats.f1.clone().reshape(&[p, d]));
    let b = g.constant(feats.f2.clone().reshape(&[p, d]));
    let c = correlation_graph(&mut g, a, b, d);
    g.value(c).clone()
}

/// Soft-argmax matching: `[P, P]` correlations to `[h, w, 2]` flow.
pub fn match_and_flow<T: Real>(corr: &Tensor<T>, grid: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>, FlowError> {
    let p = h * w;
    if corr.shape() != [p, p] {
        return Err(FlowError::BadShape(format!("correlation {:?} for a {h}x{w} grid", corr.shape())));
    }
    if grid.shape() != [p, 2] {
        return Err(FlowError::BadShape(format!("grid {:?} for a {h}x{w} grid", grid.shape())));
    }
    if !corr.all_finite() {
        return Err(FlowError::NonFinite("correlation"));
    }
    let mut g = Graph::inference();
    let c = g.constant(corr.clone());
    let gr = g.constant(grid.clone());
    let v = match_graph(&mut g, c, gr);
    Ok(g.value(v).clone().reshape(&[h, w, 2]))
}

pub fn bidirectional_flow<T: Real>(feats: &DenseFeatures<T>) -> Result<FlowField<T>, FlowError> {
    let (h, w) = (feats.height(), feats.width());
    let corr = correlation_volume(feats);
    if !corr.all_finite() {
        return Err(FlowError::NonFinite("correlation"));
    }
    let grid = pixel_grid(h, w);
    let fwd = match_and_flow(&corr, &grid, h, w)?;
    let mut g = Graph::inference();
    let c = g.constant(corr);
    let ct = g.transpose_last2(c);
    let bwd = match_and_flow(g.value(ct), &grid, h, w)?;
    let mut g = Graph::inference();
    let (a, b) = (g.constant(fwd), g.constant(bwd));
    let v = g.concat(&[a, b]);
    Ok(FlowField { v: g.value(v).clone() })
}

/// `[.., P, D] x [.., P, D] -> [.., P, P]`, scaled by `1 / sqrt(D)`.
pub fn correlation_graph<T: Real>(g: &mut Graph<T>, f1: Var, f2: Var, d: usize) -> Var {
    let f1 = g.scale(f1, 1.0 / (d as f64).sqrt());
    g.matmul(f1, f2, false, true)
}

/// `softmax_rows(C) G - G` for `C: [.., P, P]` and `G` of matching rank.
pub fn match_graph<T: Real>(g: &mut Graph<T>, corr: Var, grid: Var) -> Var {
    let s = g.softmax_last(corr);
    let matched = g.matmul(s, grid, false, false);
    g.sub(matched, grid)
}

/// Batched bidirectional flow from features `[b, h, w, d]` to `[b, h, w, 4]`.
pub fn flow_graph<T: Real>(g: &mut Graph<T>, f1: Var, f2: Var) -> Var {
    let s = g.shape(f1).to_vec();
    let (b, h, w, d) = (s[0], s[1], s[2], s[3]);
    let p = h * w;
    assert!(p <= MAX_POSITIONS, "matching grid of {p} positions exceeds {MAX_POSITIONS}");
    let a = g.reshape(f1, &[b, p, d]);
    let c2 = g.reshape(f2, &[b, p, d]);
    let grid = pixel_grid::<T>(h, w);
    let batched: Vec<&Tensor<T>> = (0..b).map(|_| &grid).collect();
    let grid = g.constant(Tensor::stack(&batched).reshape(&[b, p, 2]));
    // The backward volume is the transpose; a second product is cheaper than
    // transposing P x P twice per step.
    let corr = correlation_graph(g, a, c2, d);
    let fwd = match_graph(g, corr, grid);
    let corr_t = correlation_graph(g, c2, a, d);
    let bwd = match_graph(g, corr_t, grid);
    let v = g.concat(&[fwd, bwd]);
    g.reshape(v, &[b, h, w, 4])
}
