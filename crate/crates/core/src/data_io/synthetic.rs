//! Deterministic synthetic clips for tests and desk-scale training.
//!
//! Translate and constant clips start from a smooth periodic image: a few
//! integer-frequency cosines per channel, so circular shifts are seamless.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semcom_tensor::Tensor;
use serde::{Deserialize, Serialize};

use super::{DataError, VideoClip};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticKind {
    /// A static scene: every frame equals the first.
    Constant,
    /// Each frame is the previous one circularly shifted by `(dx, dy)`.
    Translate,
    /// Independent uniform pixels.
    Noise,
}

const MODES: usize = 3;
const MAX_FREQ: i64 = 2;

fn smooth_image(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let mut img = vec![0.5f64; h * w * 3];
    for c in 0..3 {
        for _ in 0..MODES {
            let (fx, fy) = loop {
                let f = (rng.random_range(-MAX_FREQ..=MAX_FREQ), rng.random_range(0..=MAX_FREQ));
                if f != (0, 0) {
                    break f;
                }
            };
            let amp = rng.random_range(0.05..0.13);
            let phase = rng.random_range(0.0..TAU);
            for y in 0..h {
                for x in 0..w {
                    let arg = TAU * (fx as f64 * x as f64 / w as f64 + fy as f64 * y as f64 / h as f64) + phase;
                    img[(y * w + x) * 3 + c] += amp * arg.cos();
                }
            }
        }
    }
    img.into_iter().map(|v| v as f32).collect()
}

/// Circular shift of one `[h, w, 3]` frame by `(dx, dy)`.
pub(crate) fn roll(frame: &[f32], h: usize, w: usize, dx: i64, dy: i64) -> Vec<f32> {
    let mut out = vec![0.0; frame.len()];
    for y in 0..h {
        let sy = (y as i64 - dy).rem_euclid(h as i64) as usize;
        for x in 0..w {
            let sx = (x as i64 - dx).rem_euclid(w as i64) as usize;
            out[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&frame[(sy * w + sx) * 3..(sy * w + sx) * 3 + 3]);
        }
    }
    out
}

pub fn make_synthetic_clip(
    kind: SyntheticKind,
    h: usize,
    w: usize,
    n: usize,
    shift: (i64, i64),
    seed: u64,
) -> Result<VideoClip, DataError> {
    let (dx, dy) = shift;
    if kind == SyntheticKind::Translate && (dx.unsigned_abs() as usize >= w || dy.unsigned_abs() as usize >= h) {
        return Err(DataError::BadShift { dx, dy, w, h });
    }
    if n < 2 {
        return Err(DataError::TooFewFrames { needed: 2, found: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * h * w * 3);
    match kind {
        SyntheticKind::Noise => data.extend((0..n * h * w * 3).map(|_| rng.random_range(0.0f32..=1.0))),
        SyntheticKind::Constant | SyntheticKind::Translate => {
            let mut frame = smooth_image(h, w, &mut rng);
            for _ in 0..n {
                data.extend_from_slice(&frame);
                if kind == SyntheticKind::Translate {
                    frame = roll(&frame, h, w, dx, dy);
                }
            }
        }
    }
    let id = format!("{kind:?}-{seed}").to_lowercase();
    VideoClip::new(Tensor::from_vec(&[n, h, w, 3], data), 30.0, id)
}

/// `count` clips of one kind; translate clips get shifts drawn from
/// `[-max_shift, max_shift]`.
pub fn make_synthetic_dataset(
    kind: SyntheticKind,
    count: usize,
    h: usize,
    w: usize,
    n: usize,
    max_shift: i64,
    seed: u64,
) -> Result<Vec<VideoClip>, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let shift = (rng.random_range(-max_shift..=max_shift), rng.random_range(-max_shift..=max_shift));
            make_synthetic_clip(kind, h, w, n, shift, seed.wrapping_mul(1_000_003).wrapping_add(i as u64))
        })
        .collect()
}
