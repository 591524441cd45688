//! Reconstruction quality: PSNR and MS-SSIM.
//!
//! Both take clips shaped `[n, h, w, c]` (or single frames `[h, w, c]`) with
//! values in `[0, 1]` and work in `f64` internally.

use semcom_tensor::{Graph, Padding, Real, Tensor, Var};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reported for identical inputs, and the cap for everything else.
pub const PSNR_MAX: f64 = 100.0;

pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// Smallest frame side MS-SSIM accepts.
pub const MIN_SIDE: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
    #[error("frames of {h}x{w} are below the {MIN_SIDE}x{MIN_SIDE} minimum")]
    TooSmall { h: usize, w: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub psnr_db: f64,
    pub ms_ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ms_ssim: f64,
    pub per_frame: Vec<FrameMetrics>,
}

struct Frames {
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl Frames {
    fn frame(&self, i: usize) -> std::ops::Range<usize> {
        let len = self.h * self.w * self.c;
        i * len..(i + 1) * len
    }
}

fn frames<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Frames, MetricError> {
    if a.shape() != b.shape() || !(a.rank() == 3 || a.rank() == 4) {
        return Err(MetricError::ShapeMismatch(a.shape().to_vec(), b.shape().to_vec()));
    }
    let s = a.shape();
    let (n, h, w, c) = if s.len() == 4 { (s[0], s[1], s[2], s[3]) } else { (1, s[0], s[1], s[2]) };
    Ok(Frames {
        n,
        h,
        w,
        c,
        a: a.data().iter().map(|v| v.as_f64()).collect(),
        b: b.data().iter().map(|v| v.as_f64()).collect(),
    })
}

fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        PSNR_MAX
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_MAX)
    }
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// `10 log10(1 / MSE)` with the MSE taken over every pixel of every frame.
pub fn psnr<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64, MetricError> {
    let f = frames(a, b)?;
    Ok(psnr_from_mse(mse(&f.a, &f.b)))
}

pub fn mse_of<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64, MetricError> {
    let f = frames(a, b)?;
    Ok(mse(&f.a, &f.b))
}

/// Number of scales used for an `h x w` frame: `floor(log2(min / 11)) + 1`,
/// clamped to `1..=5`.
pub fn ms_ssim_scales(h: usize, w: usize) -> usize {
    let m = h.min(w);
    let mut scales = 1;
    while scales < 5 && m >> scales >= WINDOW {
        scales += 1;
    }
    scales
}

/// MS-SSIM averaged over frames and color channels.
pub fn ms_ssim<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64, MetricError> {
    let f = frames(a, b)?;
    check_size(f.h, f.w)?;
    let mut total = 0.0;
    for i in 0..f.n {
        total += frame_ms_ssim(&f, i);
    }
    Ok(total / f.n as f64)
}

/// Per-frame and clip-level PSNR and MS-SSIM.
pub fn report<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<MetricReport, MetricError> {
    let f = frames(a, b)?;
    check_size(f.h, f.w)?;
    let per_frame = (0..f.n)
        .map(|i| {
            let r = f.frame(i);
            FrameMetrics { psnr_db: psnr_from_mse(mse(&f.a[r.clone()], &f.b[r])), ms_ssim: frame_ms_ssim(&f, i) }
        })
        .collect::<Vec<_>>();
    let ms = per_frame.iter().map(|m| m.ms_ssim).sum::<f64>() / f.n as f64;
    Ok(MetricReport { psnr_db: psnr_from_mse(mse(&f.a, &f.b)), ms_ssim: ms, per_frame })
}

fn check_size(h: usize, w: usize) -> Result<(), MetricError> {
    if h < MIN_SIDE || w < MIN_SIDE {
        return Err(MetricError::TooSmall { h, w });
    }
    Ok(())
}

fn frame_ms_ssim(f: &Frames, i: usize) -> f64 {
    let r = f.frame(i);
    let (fa, fb) = (&f.a[r.clone()], &f.b[r]);
    let mut acc = 0.0;
    for ch in 0..f.c {
        let pa: Vec<f64> = fa.iter().skip(ch).step_by(f.c).copied().collect();
        let pb: Vec<f64> = fb.iter().skip(ch).step_by(f.c).copied().collect();
        acc += plane_ms_ssim(Plane { h: f.h, w: f.w, v: pa }, Plane { h: f.h, w: f.w, v: pb });
    }
    acc / f.c as f64
}

/// Floor applied to each per-scale term before the fractional power.
const GRAPH_FLOOR: f64 = 1e-6;

/// MS-SSIM of two `[n, h, w, c]` graph values as a differentiable scalar,
/// averaged over frames and channels. Agrees with [`ms_ssim`] except that
/// negative terms are floored at a small positive value instead of zero, and
/// the scale count also stops where a side no longer halves evenly.
pub fn ms_ssim_graph<T: Real>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var, MetricError> {
    let shape = g.shape(a).to_vec();
    if shape != g.shape(b) || shape.len() != 4 {
        return Err(MetricError::ShapeMismatch(shape, g.shape(b).to_vec()));
    }
    let (n, mut h, mut w, c) = (shape[0], shape[1], shape[2], shape[3]);
    check_size(h, w)?;
    let mut scales = 1;
    while scales < ms_ssim_scales(h, w) && h % (1 << scales) == 0 && w % (1 << scales) == 0 {
        scales += 1;
    }
    let wsum: f64 = MS_SSIM_WEIGHTS[..scales].iter().sum();
    let (mut a, mut b) = (a, b);
    let mut out: Option<Var> = None;
    for (s, weight) in MS_SSIM_WEIGHTS[..scales].iter().enumerate() {
        let side = h.min(w).min(WINDOW);
        let k = if side % 2 == 0 { side - 1 } else { side };
        let kernel = g.constant(diagonal_window(k, c));
        let filter = |g: &mut Graph<T>, x: Var| g.conv2d(x, kernel, 1, Padding::Zero);
        let mu_a = filter(g, a);
        let mu_b = filter(g, b);
        let sq_a = g.square(a);
        let sq_b = g.square(b);
        let prod = g.mul(a, b);
        let aa = filter(g, sq_a);
        let bb = filter(g, sq_b);
        let ab = filter(g, prod);
        let mu_aa = g.square(mu_a);
        let mu_bb = g.square(mu_b);
        let mu_ab = g.mul(mu_a, mu_b);
        let var_a = g.sub(aa, mu_aa);
        let var_b = g.sub(bb, mu_bb);
        let cov = g.sub(ab, mu_ab);
        let num = g.affine(cov, 2.0, K2 * K2);
        let den = g.add(var_a, var_b);
        let den = g.affine(den, 1.0, K2 * K2);
        let mut term = g.div(num, den);
        if s + 1 == scales {
            let num = g.affine(mu_ab, 2.0, K1 * K1);
            let den = g.add(mu_aa, mu_bb);
            let den = g.affine(den, 1.0, K1 * K1);
            let lum = g.div(num, den);
            term = g.mul(term, lum);
        }
        let mask = g.constant(valid_mask(n, h, w, c, k));
        let masked = g.mul(term, mask);
        let mean = g.global_avg_pool(masked);
        let pos = g.relu(mean);
        let pos = g.affine(pos, 1.0, GRAPH_FLOOR);
        let factor = g.powf(pos, weight / wsum);
        out = Some(match out {
            Some(o) => g.mul(o, factor),
            None => factor,
        });
        if s + 1 < scales {
            a = g.avg_pool(a, 2);
            b = g.avg_pool(b, 2);
            h /= 2;
            w /= 2;
        }
    }
    Ok(g.mean(out.expect("at least one scale")))
}

/// `[k, k, c, c]` kernel applying the 2-D Gaussian window to each channel
/// separately.
fn diagonal_window<T: Real>(k: usize, c: usize) -> Tensor<T> {
    let g = gaussian_window(k, SIGMA);
    Tensor::from_fn(&[k, k, c, c], |i| {
        let (o, rest) = (i % c, i / c);
        let (ci, rest) = (rest % c, rest / c);
        let (x, y) = (rest % k, rest / k);
        T::from_f64_lossy(if ci == o { g[y] * g[x] } else { 0.0 })
    })
}

/// Selects the window centers whose support lies inside the frame, scaled so
/// a global average over the masked map is the mean over those centers.
fn valid_mask<T: Real>(n: usize, h: usize, w: usize, c: usize, k: usize) -> Tensor<T> {
    let r = k / 2;
    let count = ((h - k + 1) * (w - k + 1)) as f64;
    let v = T::from_f64_lossy((h * w) as f64 / count);
    Tensor::from_fn(&[n, h, w, c], |i| {
        let p = (i / c) % (h * w);
        let (y, x) = (p / w, p % w);
        if (r..h - r).contains(&y) && (r..w - r).contains(&x) {
            v
        } else {
            T::zero()
        }
    })
}

#[derive(Clone)]
struct Plane {
    h: usize,
    w: usize,
    v: Vec<f64>,
}

impl Plane {
    /// 2x2 mean, dropping a trailing odd row or column.
    fn downsample(&self) -> Plane {
        let (h, w) = (self.h / 2, self.w / 2);
        let mut v = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let p = |dy: usize, dx: usize| self.v[(2 * y + dy) * self.w + 2 * x + dx];
                v.push(0.25 * (p(0, 0) + p(0, 1) + p(1, 0) + p(1, 1)));
            }
        }
        Plane { h, w, v }
    }

    /// Valid-mode separable filtering.
    fn filter(&self, k: &[f64]) -> Plane {
        let n = k.len();
        let (oh, ow) = (self.h - n + 1, self.w - n + 1);
        let mut tmp = vec![0.0; self.h * ow];
        for y in 0..self.h {
            let row = &self.v[y * self.w..(y + 1) * self.w];
            for x in 0..ow {
                tmp[y * ow + x] = k.iter().zip(&row[x..x + n]).map(|(a, b)| a * b).sum();
            }
        }
        let mut v = vec![0.0; oh * ow];
        for y in 0..oh {
            for x in 0..ow {
                v[y * ow + x] = k.iter().enumerate().map(|(j, kj)| kj * tmp[(y + j) * ow + x]).sum();
            }
        }
        Plane { h: oh, w: ow, v }
    }

    fn zip(&self, o: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane { h: self.h, w: self.w, v: self.v.iter().zip(&o.v).map(|(&a, &b)| f(a, b)).collect() }
    }
}

/// Normalized 1-D Gaussian of odd length `n`.
pub fn gaussian_window(n: usize, sigma: f64) -> Vec<f64> {
    let c = (n / 2) as f64;
    let g: Vec<f64> = (0..n).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Mean SSIM (luminance times contrast-structure) and mean
/// contrast-structure at one scale.
fn ssim_terms(a: &Plane, b: &Plane) -> (f64, f64) {
    let side = a.h.min(a.w).min(WINDOW);
    let n = if side.is_multiple_of(2) { side - 1 } else { side };
    let k = gaussian_window(n, SIGMA);
    let (c1, c2) = ((K1 * K1), (K2 * K2));
    let mu_a = a.filter(&k);
    let mu_b = b.filter(&k);
    let aa = a.zip(a, |x, y| x * y).filter(&k);
    let bb = b.zip(b, |x, y| x * y).filter(&k);
    let ab = a.zip(b, |x, y| x * y).filter(&k);
    let (mut full, mut cs) = (0.0, 0.0);
    for i in 0..mu_a.v.len() {
        let (ma, mb) = (mu_a.v[i], mu_b.v[i]);
        let va = aa.v[i] - ma * ma;
        let vb = bb.v[i] - mb * mb;
        let cov = ab.v[i] - ma * mb;
        let l = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        let c = (2.0 * cov + c2) / (va + vb + c2);
        full += l * c;
        cs += c;
    }
    let m = mu_a.v.len() as f64;
    (full / m, cs / m)
}

fn plane_ms_ssim(a: Plane, b: Plane) -> f64 {
    if a.v == b.v {
        return 1.0;
    }
    let scales = ms_ssim_scales(a.h, a.w);
    let wsum: f64 = MS_SSIM_WEIGHTS[..scales].iter().sum();
    let (mut a, mut b) = (a, b);
    let mut out = 1.0;
    for (s, w) in MS_SSIM_WEIGHTS[..scales].iter().enumerate() {
        let (ssim, cs) = ssim_terms(&a, &b);
        let term = if s + 1 == scales { ssim } else { cs };
        out *= term.max(0.0).powf(w / wsum);
        if s + 1 < scales {
            a = a.downsample();
            b = b.downsample();
        }
    }
    out.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_inputs_hit_the_sentinels() {
        let a = Tensor::<f32>::from_fn(&[2, 16, 16, 3], |i| (i % 17) as f32 / 16.0);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_MAX);
        assert_eq!(ms_ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn constant_offset_psnr() {
        let a = Tensor::<f64>::full(&[1, 8, 8, 3], 0.2);
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn black_vs_white_is_near_zero() {
        let a = Tensor::<f64>::zeros(&[1, 32, 32, 3]);
        let b = Tensor::<f64>::full(&[1, 32, 32, 3], 1.0);
        assert!(ms_ssim(&a, &b).unwrap() < 0.05);
    }

    #[test]
    fn scale_count() {
        assert_eq!(ms_ssim_scales(8, 8), 1);
        assert_eq!(ms_ssim_scales(32, 32), 2);
        assert_eq!(ms_ssim_scales(175, 200), 4);
        assert_eq!(ms_ssim_scales(176, 176), 5);
        assert_eq!(ms_ssim_scales(1024, 1024), 5);
    }

    #[test]
    fn errors() {
        let a = Tensor::<f64>::zeros(&[1, 8, 8, 3]);
        let b = Tensor::<f64>::zeros(&[1, 8, 4, 3]);
        assert!(matches!(psnr(&a, &b), Err(MetricError::ShapeMismatch(..))));
        let small = Tensor::<f64>::zeros(&[1, 4, 8, 3]);
        assert_eq!(ms_ssim(&small, &small), Err(MetricError::TooSmall { h: 4, w: 8 }));
    }
}
