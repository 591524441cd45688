//! Patch extraction for NHWC convolutions.
//!
//! A convolution is lowered to one matrix product: every output pixel owns a
//! row of `k * k * cin` input values ("columns"), laid out `(ky, kx, cin)` to
//! match a `[k, k, cin, cout]` kernel read as a `(k*k*cin) x cout` matrix.

use crate::graph::Padding;
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: Padding,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(
        batch: usize,
        in_h: usize,
        in_w: usize,
        channels: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
    ) -> Self {
        assert!(stride >= 1, "stride must be positive");
        let pad = kernel / 2;
        let out_h = (in_h + 2 * pad - kernel) / stride + 1;
        let out_w = (in_w + 2 * pad - kernel) / stride + 1;
        ConvGeometry { batch, in_h, in_w, channels, kernel, stride, padding, out_h, out_w }
    }

    /// Number of output pixels (rows of the column matrix).
    pub fn rows(&self) -> usize {
        self.batch * self.out_h * self.out_w
    }

    /// Length of one patch (columns of the column matrix).
    pub fn patch(&self) -> usize {
        self.kernel * self.kernel * self.channels
    }

    /// 1x1 stride-1 convolutions use the input directly as the column matrix.
    pub fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1
    }

    fn source(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - (self.kernel / 2) as isize;
        if (0..extent as isize).contains(&pos) {
            return Some(pos as usize);
        }
        match self.padding {
            Padding::Zero => None,
            Padding::Circular => Some(pos.rem_euclid(extent as isize) as usize),
        }
    }
}

pub fn im2col<T: Real>(x: &[T], g: &ConvGeometry) -> Vec<T> {
    let c = g.channels;
    let k = g.kernel;
    let patch = g.patch();
    let mut cols = vec![T::zero(); g.rows() * patch];
    for b in 0..g.batch {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let row = ((b * g.out_h + oy) * g.out_w + ox) * patch;
                for ky in 0..k {
                    let Some(iy) = g.source(oy, ky, g.in_h) else { continue };
                    for kx in 0..k {
                        let Some(ix) = g.source(ox, kx, g.in_w) else { continue };
                        let src = ((b * g.in_h + iy) * g.in_w + ix) * c;
                        let dst = row + (ky * k + kx) * c;
                        cols[dst..dst + c].copy_from_slice(&x[src..src + c]);
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add patch gradients back onto the input grid.
pub fn col2im<T: Real>(cols: &[T], g: &ConvGeometry) -> Vec<T> {
    let c = g.channels;
    let k = g.kernel;
    let patch = g.patch();
    let mut x = vec![T::zero(); g.batch * g.in_h * g.in_w * c];
    for b in 0..g.batch {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let row = ((b * g.out_h + oy) * g.out_w + ox) * patch;
                for ky in 0..k {
                    let Some(iy) = g.source(oy, ky, g.in_h) else { continue };
                    for kx in 0..k {
                        let Some(ix) = g.source(ox, kx, g.in_w) else { continue };
                        let dst = ((b * g.in_h + iy) * g.in_w + ix) * c;
                        let src = row + (ky * k + kx) * c;
                        for (d, &s) in x[dst..dst + c].iter_mut().zip(&cols[src..src + c]) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
    x
}
