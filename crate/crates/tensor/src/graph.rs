//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s together with
//! the forward value. [`Graph::backward`] walks the tape in reverse and
//! returns the gradient of a scalar with respect to every node that depends
//! on a leaf created with `requires_grad = true`.

use serde::{Deserialize, Serialize};

use crate::conv::{col2im, im2col, ConvGeometry};
use crate::real::{gemm, MatRef, Real};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Border handling for "same" convolutions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    #[default]
    Zero,
    /// Wrap around the image borders (torus topology).
    Circular,
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddLast(Var, Var),
    MulLast(Var, Var),
    Affine(Var, T),
    Square(Var),
    Sqrt(Var),
    Powf(Var, T),
    Sigmoid(Var),
    Relu(Var),
    Softplus(Var),
    Prelu(Var, Var),
    Conv2d { x: Var, w: Var, geom: ConvGeometry, cols: Option<Vec<T>> },
    MatMul { a: Var, b: Var, trans_a: bool, trans_b: bool },
    TransposeLast2(Var),
    SoftmaxLast(Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    GlobalAvgPool(Var),
    AvgPool(Var, usize),
    ScaleChannels(Var, Var),
    PixelShuffle(Var, usize),
    Reshape(Var),
    NormalizeRows(Var, T),
    Sum(Var),
    Mean(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Operation tape.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    record: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), record: true }
    }

    /// A graph that never tracks gradients: cheaper for inference since no
    /// backward buffers are kept.
    pub fn inference() -> Self {
        Graph { nodes: Vec::new(), record: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        let needs_grad = requires_grad && self.record;
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = self.record && inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        let op = if needs_grad { op } else { Op::Leaf };
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(y, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(y, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(y, Op::Mul(a, b), &[a, b])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a).zip_map(self.value(b), |x, y| x / y);
        self.push(y, Op::Div(a, b), &[a, b])
    }

    /// `x + b` with `b` broadcast along every axis but the last.
    pub fn add_last(&mut self, x: Var, b: Var) -> Var {
        let y = broadcast_last(self.value(x), self.value(b), |u, v| u + v);
        self.push(y, Op::AddLast(x, b), &[x, b])
    }

    /// `x * s` with `s` broadcast along every axis but the last.
    pub fn mul_last(&mut self, x: Var, s: Var) -> Var {
        let y = broadcast_last(self.value(x), self.value(s), |u, v| u * v);
        self.push(y, Op::MulLast(x, s), &[x, s])
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let (s, b) = (T::from_f64_lossy(scale), T::from_f64_lossy(shift));
        let y = self.value(x).map(|v| s * v + b);
        self.push(y, Op::Affine(x, s), &[x])
    }

    pub fn scale(&mut self, x: Var, scale: f64) -> Var {
        self.affine(x, scale, 0.0)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v * v);
        self.push(y, Op::Square(x), &[x])
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.sqrt());
        self.push(y, Op::Sqrt(x), &[x])
    }

    /// `x^p` elementwise; `x` must be positive where `p < 1`.
    pub fn powf(&mut self, x: Var, p: f64) -> Var {
        let e = T::from_f64_lossy(p);
        let y = self.value(x).map(|v| v.powf(e));
        self.push(y, Op::Powf(x, e), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).map(sigmoid);
        self.push(y, Op::Sigmoid(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.max(T::zero()));
        self.push(y, Op::Relu(x), &[x])
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let y = self.value(x).map(softplus);
        self.push(y, Op::Softplus(x), &[x])
    }

    /// Parametric ReLU with one slope per channel (last axis).
    pub fn prelu(&mut self, x: Var, alpha: Var) -> Var {
        let y = broadcast_last(self.value(x), self.value(alpha), |u, a| if u > T::zero() { u } else { a * u });
        self.push(y, Op::Prelu(x, alpha), &[x, alpha])
    }

    /// "Same" 2-D convolution of `x: [n, h, w, cin]` with `w: [k, k, cin, cout]`.
    ///
    /// The kernel size must be odd; the output is `[n, ceil(h/stride), ceil(w/stride), cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, padding: Padding) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert_eq!(xs.len(), 4, "conv2d input must be [n, h, w, c], got {xs:?}");
        assert_eq!(ws.len(), 4, "conv2d kernel must be [k, k, cin, cout], got {ws:?}");
        assert_eq!(ws[0], ws[1], "square kernels only");
        assert_eq!(ws[0] % 2, 1, "odd kernels only");
        assert_eq!(ws[2], xs[3], "conv2d channel mismatch: input {xs:?}, kernel {ws:?}");
        let geom = ConvGeometry::new(xs[0], xs[1], xs[2], xs[3], ws[0], stride, padding);
        let cout = ws[3];
        let rows = geom.rows();
        let mut out = vec![T::zero(); rows * cout];
        let wm = MatRef::new(self.value(w).data(), geom.patch(), cout);
        let cols = if geom.is_pointwise() {
            gemm(MatRef::new(self.value(x).data(), rows, geom.patch()), wm, T::zero(), &mut out);
            None
        } else {
            let cols = im2col(self.value(x).data(), &geom);
            gemm(MatRef::new(&cols, rows, geom.patch()), wm, T::zero(), &mut out);
            Some(cols)
        };
        let y = Tensor::from_vec(&[xs[0], geom.out_h, geom.out_w, cout], out);
        let cols = if self.needs(w) { cols } else { None };
        self.push(y, Op::Conv2d { x, w, geom, cols }, &[x, w])
    }

    /// Matrix product of rank-2 or batched rank-3 operands.
    pub fn matmul(&mut self, a: Var, b: Var, trans_a: bool, trans_b: bool) -> Var {
        let y = matmul_forward(self.value(a), self.value(b), trans_a, trans_b);
        self.push(y, Op::MatMul { a, b, trans_a, trans_b }, &[a, b])
    }

    pub fn transpose_last2(&mut self, x: Var) -> Var {
        let y = transpose_last2(self.value(x));
        self.push(y, Op::TransposeLast2(x), &[x])
    }

    /// Softmax over the last axis.
    pub fn softmax_last(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let l = xv.last_dim();
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(l) {
            let m = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v = *v / s;
            }
        }
        let y = Tensor::from_vec(xv.shape(), out);
        self.push(y, Op::SoftmaxLast(x), &[x])
    }

    /// Concatenate along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let lead: Vec<usize> = {
            let s = self.shape(parts[0]);
            s[..s.len() - 1].to_vec()
        };
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let s = self.shape(p);
                assert_eq!(&s[..s.len() - 1], &lead[..], "concat leading shape mismatch");
                s[s.len() - 1]
            })
            .collect();
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let y = Tensor::from_vec(&shape, out);
        self.push(y, Op::Concat(parts.to_vec()), parts)
    }

    /// `len` entries of the last axis starting at `start`.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        let w = xv.last_dim();
        assert!(start + len <= w, "slice_last out of range");
        let rows = xv.len() / w.max(1);
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&xv.data()[r * w + start..r * w + start + len]);
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let y = Tensor::from_vec(&shape, out);
        self.push(y, Op::Slice { x, start }, &[x])
    }

    /// `[n, h, w, c] -> [n, c]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let s = xv.shape();
        assert_eq!(s.len(), 4, "global_avg_pool expects [n, h, w, c]");
        let (n, hw, c) = (s[0], s[1] * s[2], s[3]);
        let inv = T::one() / T::from_usize(hw).unwrap();
        let mut out = vec![T::zero(); n * c];
        for b in 0..n {
            for p in 0..hw {
                let row = &xv.data()[(b * hw + p) * c..(b * hw + p + 1) * c];
                for (o, &v) in out[b * c..(b + 1) * c].iter_mut().zip(row) {
                    *o += v;
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= inv);
        let y = Tensor::from_vec(&[n, c], out);
        self.push(y, Op::GlobalAvgPool(x), &[x])
    }

    /// Non-overlapping `factor x factor` average pooling.
    pub fn avg_pool(&mut self, x: Var, factor: usize) -> Var {
        let y = avg_pool(self.value(x), factor);
        self.push(y, Op::AvgPool(x, factor), &[x])
    }

    /// `x: [n, h, w, c]` times per-sample channel weights `s: [n, c]`.
    pub fn scale_channels(&mut self, x: Var, s: Var) -> Var {
        let xv = self.value(x);
        let sv = self.value(s);
        let xs = xv.shape();
        assert_eq!(xs.len(), 4);
        assert_eq!(sv.shape(), &[xs[0], xs[3]], "scale_channels weight shape");
        let (hw, c) = (xs[1] * xs[2], xs[3]);
        let mut out = xv.data().to_vec();
        for (i, px) in out.chunks_mut(c).enumerate() {
            let b = i / hw;
            for (v, &w) in px.iter_mut().zip(&sv.data()[b * c..(b + 1) * c]) {
                *v *= w;
            }
        }
        let y = Tensor::from_vec(xs, out);
        self.push(y, Op::ScaleChannels(x, s), &[x, s])
    }

    /// Sub-pixel rearrangement `[n, h, w, c*r*r] -> [n, h*r, w*r, c]`.
    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Var {
        let y = pixel_shuffle(self.value(x), r);
        self.push(y, Op::PixelShuffle(x, r), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let y = self.value(x).clone().reshape(shape);
        self.push(y, Op::Reshape(x), &[x])
    }

    /// Rescale every row of `x: [n, l]` to Euclidean norm `norm`.
    pub fn normalize_rows(&mut self, x: Var, norm: f64) -> Var {
        let c = T::from_f64_lossy(norm);
        let xv = self.value(x);
        assert_eq!(xv.rank(), 2, "normalize_rows expects [n, l]");
        let l = xv.last_dim();
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(l) {
            let s = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            for v in row.iter_mut() {
                *v = c * *v / s;
            }
        }
        let y = Tensor::from_vec(xv.shape(), out);
        self.push(y, Op::NormalizeRows(x, c), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(self.value(x).sum());
        self.push(y, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(self.value(x).mean());
        self.push(y, Op::Mean(x), &[x])
    }

    /// Mean squared difference, a scalar.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        let d2 = self.square(d);
        self.mean(d2)
    }

    /// Reverse pass from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.needs(loss) {
            return Gradients { grads };
        }
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.needs(v) {
            return;
        }
        debug_assert_eq!(g.shape(), self.value(v).shape(), "gradient shape for node {}", v.0);
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            &Op::Add(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.clone());
            }
            &Op::Sub(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.map(|v| -v));
            }
            &Op::Mul(a, b) => {
                if self.needs(a) {
                    self.accumulate(grads, a, g.zip_map(self.value(b), |u, v| u * v));
                }
                if self.needs(b) {
                    self.accumulate(grads, b, g.zip_map(self.value(a), |u, v| u * v));
                }
            }
            &Op::Div(a, b) => {
                let bv = self.value(b);
                if self.needs(a) {
                    self.accumulate(grads, a, g.zip_map(bv, |u, v| u / v));
                }
                if self.needs(b) {
                    // d(a/b)/db = -y/b
                    let t = g.zip_map(y, |u, q| u * q);
                    self.accumulate(grads, b, t.zip_map(bv, |u, v| -u / v));
                }
            }
            &Op::AddLast(x, b) => {
                self.accumulate(grads, x, g.clone());
                if self.needs(b) {
                    self.accumulate(grads, b, reduce_last(g, None));
                }
            }
            &Op::MulLast(x, s) => {
                if self.needs(x) {
                    let gx = broadcast_last(g, self.value(s), |u, v| u * v);
                    self.accumulate(grads, x, gx);
                }
                if self.needs(s) {
                    self.accumulate(grads, s, reduce_last(g, Some(self.value(x))));
                }
            }
            &Op::Affine(x, s) => self.accumulate(grads, x, g.map(|v| v * s)),
            &Op::Square(x) => {
                let two = T::one() + T::one();
                self.accumulate(grads, x, g.zip_map(self.value(x), |u, v| two * u * v));
            }
            &Op::Sqrt(x) => {
                let half = T::from_f64_lossy(0.5);
                self.accumulate(grads, x, g.zip_map(y, |u, r| half * u / r));
            }
            &Op::Powf(x, e) => {
                let d = self.value(x).zip_map(y, |v, r| e * r / v);
                self.accumulate(grads, x, g.zip_map(&d, |u, v| u * v));
            }
            &Op::Sigmoid(x) => {
                self.accumulate(grads, x, g.zip_map(y, |u, s| u * s * (T::one() - s)));
            }
            &Op::Relu(x) => {
                self.accumulate(grads, x, g.zip_map(self.value(x), |u, v| if v > T::zero() { u } else { T::zero() }));
            }
            &Op::Softplus(x) => {
                self.accumulate(grads, x, g.zip_map(self.value(x), |u, v| u * sigmoid(v)));
            }
            &Op::Prelu(x, alpha) => {
                let xv = self.value(x);
                let av = self.value(alpha);
                if self.needs(x) {
                    let mut gx = g.clone();
                    let c = av.len();
                    for (j, (gv, &v)) in gx.data_mut().iter_mut().zip(xv.data()).enumerate() {
                        if v <= T::zero() {
                            *gv *= av.data()[j % c];
                        }
                    }
                    self.accumulate(grads, x, gx);
                }
                if self.needs(alpha) {
                    let masked = g.zip_map(xv, |u, v| if v > T::zero() { T::zero() } else { u * v });
                    self.accumulate(grads, alpha, reduce_last(&masked, None));
                }
            }
            Op::Conv2d { x, w, geom, cols } => {
                let (x, w) = (*x, *w);
                let cout = self.value(w).last_dim();
                let rows = geom.rows();
                let gm = MatRef::new(g.data(), rows, cout);
                if self.needs(w) {
                    let mut gw = vec![T::zero(); geom.patch() * cout];
                    let colsm = match cols {
                        Some(c) => MatRef::new(c.as_slice(), rows, geom.patch()),
                        None => MatRef::new(self.value(x).data(), rows, geom.patch()),
                    };
                    gemm(colsm.t(), gm, T::zero(), &mut gw);
                    self.accumulate(grads, w, Tensor::from_vec(self.value(w).shape(), gw));
                }
                if self.needs(x) {
                    let wm = MatRef::new(self.value(w).data(), geom.patch(), cout);
                    let mut gcols = vec![T::zero(); rows * geom.patch()];
                    gemm(gm, wm.t(), T::zero(), &mut gcols);
                    let gx = if geom.is_pointwise() { gcols } else { col2im(&gcols, geom) };
                    self.accumulate(grads, x, Tensor::from_vec(self.value(x).shape(), gx));
                }
            }
            &Op::MatMul { a, b, trans_a, trans_b } => {
                let (av, bv) = (self.value(a), self.value(b));
                if self.needs(a) {
                    // dA = G B^T, or its transpose when A was stored transposed
                    let ga = if trans_a {
                        matmul_forward(bv, g, trans_b, true)
                    } else {
                        matmul_forward(g, bv, false, !trans_b)
                    };
                    self.accumulate(grads, a, ga);
                }
                if self.needs(b) {
                    let gb = if trans_b {
                        matmul_forward(g, av, true, trans_a)
                    } else {
                        matmul_forward(av, g, !trans_a, false)
                    };
                    self.accumulate(grads, b, gb);
                }
            }
            &Op::TransposeLast2(x) => self.accumulate(grads, x, transpose_last2(g)),
            &Op::SoftmaxLast(x) => {
                let l = y.last_dim();
                let mut gx = g.clone();
                for (gr, yr) in gx.data_mut().chunks_mut(l).zip(y.data().chunks(l)) {
                    let dot: T = gr.iter().zip(yr).map(|(&u, &v)| u * v).sum();
                    for (u, &v) in gr.iter_mut().zip(yr) {
                        *u = v * (*u - dot);
                    }
                }
                self.accumulate(grads, x, gx);
            }
            Op::Concat(parts) => {
                let total = y.last_dim();
                let rows = y.len() / total.max(1);
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).last_dim();
                    if self.needs(p) {
                        let mut gp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            gp.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                        }
                        self.accumulate(grads, p, Tensor::from_vec(self.value(p).shape(), gp));
                    }
                    offset += w;
                }
            }
            &Op::Slice { x, start } => {
                let xv = self.value(x);
                let w = xv.last_dim();
                let len = y.last_dim();
                let mut gx = Tensor::zeros(xv.shape());
                for (r, gr) in g.data().chunks(len.max(1)).enumerate() {
                    gx.data_mut()[r * w + start..r * w + start + len].copy_from_slice(gr);
                }
                self.accumulate(grads, x, gx);
            }
            &Op::GlobalAvgPool(x) => {
                let s = self.value(x).shape().to_vec();
                let (hw, c) = (s[1] * s[2], s[3]);
                let inv = T::one() / T::from_usize(hw).unwrap();
                let gx = Tensor::from_fn(&s, |j| {
                    let b = j / (hw * c);
                    g.data()[b * c + j % c] * inv
                });
                self.accumulate(grads, x, gx);
            }
            &Op::AvgPool(x, f) => {
                let s = self.value(x).shape().to_vec();
                let (h, w, c) = (s[1], s[2], s[3]);
                let (oh, ow) = (h / f, w / f);
                let inv = T::one() / T::from_usize(f * f).unwrap();
                let gx = Tensor::from_fn(&s, |j| {
                    let ch = j % c;
                    let xx = (j / c) % w;
                    let yy = (j / (c * w)) % h;
                    let b = j / (c * w * h);
                    g.data()[((b * oh + yy / f) * ow + xx / f) * c + ch] * inv
                });
                self.accumulate(grads, x, gx);
            }
            &Op::ScaleChannels(x, s) => {
                let xv = self.value(x);
                let sv = self.value(s);
                let xs = xv.shape();
                let (hw, c) = (xs[1] * xs[2], xs[3]);
                if self.needs(x) {
                    let mut gx = g.clone();
                    for (i, px) in gx.data_mut().chunks_mut(c).enumerate() {
                        let b = i / hw;
                        for (v, &w) in px.iter_mut().zip(&sv.data()[b * c..(b + 1) * c]) {
                            *v *= w;
                        }
                    }
                    self.accumulate(grads, x, gx);
                }
                if self.needs(s) {
                    let mut gs = Tensor::zeros(sv.shape());
                    for (i, (gp, xp)) in g.data().chunks(c).zip(xv.data().chunks(c)).enumerate() {
                        let b = i / hw;
                        for ((acc, &u), &v) in gs.data_mut()[b * c..(b + 1) * c].iter_mut().zip(gp).zip(xp) {
                            *acc += u * v;
                        }
                    }
                    self.accumulate(grads, s, gs);
                }
            }
            &Op::PixelShuffle(x, r) => self.accumulate(grads, x, pixel_unshuffle(g, r)),
            &Op::Reshape(x) => {
                let gx = g.clone().reshape(self.value(x).shape());
                self.accumulate(grads, x, gx);
            }
            &Op::NormalizeRows(x, c) => {
                let xv = self.value(x);
                let l = xv.last_dim();
                let mut gx = g.clone();
                for (gr, xr) in gx.data_mut().chunks_mut(l).zip(xv.data().chunks(l)) {
                    let norm = xr.iter().map(|&v| v * v).sum::<T>().sqrt();
                    let dot: T = gr.iter().zip(xr).map(|(&u, &v)| u * v).sum::<T>() / norm;
                    for (u, &v) in gr.iter_mut().zip(xr) {
                        *u = c / norm * (*u - v / norm * dot);
                    }
                }
                self.accumulate(grads, x, gx);
            }
            &Op::Sum(x) => {
                let gv = g.item();
                self.accumulate(grads, x, Tensor::full(self.value(x).shape(), gv));
            }
            &Op::Mean(x) => {
                let n = T::from_usize(self.value(x).len().max(1)).unwrap();
                let gv = g.item() / n;
                self.accumulate(grads, x, Tensor::full(self.value(x).shape(), gv));
            }
        }
    }
}

pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softplus<T: Real>(v: T) -> T {
    v.max(T::zero()) + (-v.abs()).exp().ln_1p()
}

fn broadcast_last<T: Real>(x: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let c = b.len();
    assert_eq!(x.last_dim(), c, "broadcast over last axis: {:?} vs {:?}", x.shape(), b.shape());
    let data = x.data().iter().enumerate().map(|(j, &v)| f(v, b.data()[j % c])).collect();
    Tensor::from_vec(x.shape(), data)
}

/// Sum over all leading axes, optionally of `g * x`.
fn reduce_last<T: Real>(g: &Tensor<T>, x: Option<&Tensor<T>>) -> Tensor<T> {
    let c = g.last_dim();
    let mut out = vec![T::zero(); c];
    match x {
        Some(x) => {
            for (j, (&u, &v)) in g.data().iter().zip(x.data()).enumerate() {
                out[j % c] += u * v;
            }
        }
        None => {
            for (j, &u) in g.data().iter().enumerate() {
                out[j % c] += u;
            }
        }
    }
    Tensor::from_vec(&[c], out)
}

fn matmul_forward<T: Real>(a: &Tensor<T>, b: &Tensor<T>, trans_a: bool, trans_b: bool) -> Tensor<T> {
    assert_eq!(a.rank(), b.rank(), "matmul operands must have equal rank");
    let (batch, a2, b2) = match a.rank() {
        2 => (1, a.shape(), b.shape()),
        3 => {
            assert_eq!(a.dim(0), b.dim(0), "matmul batch mismatch");
            (a.dim(0), &a.shape()[1..], &b.shape()[1..])
        }
        r => panic!("matmul supports rank 2 or 3, got {r}"),
    };
    let (m, k) = if trans_a { (a2[1], a2[0]) } else { (a2[0], a2[1]) };
    let (kb, n) = if trans_b { (b2[1], b2[0]) } else { (b2[0], b2[1]) };
    assert_eq!(k, kb, "matmul inner mismatch: {:?} x {:?}", a.shape(), b.shape());
    let (sa, sb) = (a2[0] * a2[1], b2[0] * b2[1]);
    let mut out = vec![T::zero(); batch * m * n];
    for i in 0..batch {
        let am = MatRef::new(&a.data()[i * sa..(i + 1) * sa], a2[0], a2[1]);
        let bm = MatRef::new(&b.data()[i * sb..(i + 1) * sb], b2[0], b2[1]);
        let am = if trans_a { am.t() } else { am };
        let bm = if trans_b { bm.t() } else { bm };
        gemm(am, bm, T::zero(), &mut out[i * m * n..(i + 1) * m * n]);
    }
    let shape: Vec<usize> = if a.rank() == 2 { vec![m, n] } else { vec![batch, m, n] };
    Tensor::from_vec(&shape, out)
}

fn transpose_last2<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    assert!(s.len() >= 2, "transpose needs rank >= 2");
    let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
    let batch = x.len() / (r * c).max(1);
    let mut out = vec![T::zero(); x.len()];
    for b in 0..batch {
        let src = &x.data()[b * r * c..(b + 1) * r * c];
        let dst = &mut out[b * r * c..(b + 1) * r * c];
        for i in 0..r {
            for j in 0..c {
                dst[j * r + i] = src[i * c + j];
            }
        }
    }
    let mut shape = s.to_vec();
    let n = shape.len();
    shape.swap(n - 1, n - 2);
    Tensor::from_vec(&shape, out)
}

/// Non-overlapping average pooling of an `[n, h, w, c]` tensor.
pub fn avg_pool<T: Real>(x: &Tensor<T>, f: usize) -> Tensor<T> {
    let s = x.shape();
    assert_eq!(s.len(), 4, "avg_pool expects [n, h, w, c]");
    assert!(f >= 1 && s[1].is_multiple_of(f) && s[2].is_multiple_of(f), "avg_pool factor {f} does not divide {s:?}");
    let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
    let (oh, ow) = (h / f, w / f);
    let inv = T::one() / T::from_usize(f * f).unwrap();
    let mut out = vec![T::zero(); n * oh * ow * c];
    for b in 0..n {
        for yy in 0..h {
            for xx in 0..w {
                let src = &x.data()[((b * h + yy) * w + xx) * c..][..c];
                let dst = &mut out[((b * oh + yy / f) * ow + xx / f) * c..][..c];
                for (o, &v) in dst.iter_mut().zip(src) {
                    *o += v * inv;
                }
            }
        }
    }
    Tensor::from_vec(&[n, oh, ow, c], out)
}

/// `[n, h, w, c*r*r] -> [n, h*r, w*r, c]`; output channel `ch` at sub-position
/// `(i, j)` reads input channel `ch*r*r + i*r + j`.
pub fn pixel_shuffle<T: Real>(x: &Tensor<T>, r: usize) -> Tensor<T> {
    let s = x.shape();
    assert_eq!(s.len(), 4, "pixel_shuffle expects [n, h, w, c]");
    assert!(r >= 1 && s[3].is_multiple_of(r * r), "channels {} not divisible by {}", s[3], r * r);
    let (n, h, w, cin) = (s[0], s[1], s[2], s[3]);
    let c = cin / (r * r);
    let (oh, ow) = (h * r, w * r);
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        for yy in 0..h {
            for xx in 0..w {
                let src = &x.data()[((b * h + yy) * w + xx) * cin..][..cin];
                for i in 0..r {
                    for j in 0..r {
                        let dst = ((b * oh + yy * r + i) * ow + xx * r + j) * c;
                        for ch in 0..c {
                            out[dst + ch] = src[ch * r * r + i * r + j];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[n, oh, ow, c], out)
}

/// Inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle<T: Real>(x: &Tensor<T>, r: usize) -> Tensor<T> {
    let s = x.shape();
    assert_eq!(s.len(), 4, "pixel_unshuffle expects [n, h, w, c]");
    assert!(r >= 1 && s[1].is_multiple_of(r) && s[2].is_multiple_of(r), "spatial dims of {s:?} not divisible by {r}");
    let (n, oh, ow, c) = (s[0], s[1], s[2], s[3]);
    let (h, w, cin) = (oh / r, ow / r, c * r * r);
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        for yy in 0..h {
            for xx in 0..w {
                let dst = ((b * h + yy) * w + xx) * cin;
                for i in 0..r {
                    for j in 0..r {
                        let src = ((b * oh + yy * r + i) * ow + xx * r + j) * c;
                        for ch in 0..c {
                            out[dst + ch * r * r + i * r + j] = x.data()[src + ch];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[n, h, w, cin], out)
}
