use semcom_tensor::Padding;
use serde::{Deserialize, Serialize};

use super::CodecError;
use crate::data_io::{budget_for, BandwidthBudget};
use crate::flow_matching::MAX_POSITIONS;

/// Architecture and bandwidth settings of one transceiver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    pub group_size: usize,
    /// Spatial downsampling factor of the semantic encoder.
    pub t: usize,
    /// Target bandwidth ratio `k / (3 H W N)`.
    pub rho: f64,
    /// Feature dimension `D` of the matching network.
    pub flow_dim: usize,
    #[serde(default)]
    pub flow_padding: Padding,
    /// Channels of the key latent `S'` and of the predicted features `L`.
    pub key_channels: usize,
    /// Channels of the flow latent `F`.
    pub flow_channels: usize,
    /// Channels of `F'` and `F''`.
    pub fused_channels: usize,
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    pub channel_hidden: usize,
    pub unet_widths: [usize; 3],
    pub squeeze_ratio: usize,
    /// Average symbol power constraint `T`.
    pub power: f64,
}

/// `t = 8` from 64x64 upwards, `t = 4` below.
pub fn default_t(height: usize, width: usize) -> usize {
    if height.min(width) >= 64 {
        8
    } else {
        4
    }
}

impl ModelConfig {
    /// Published latent widths: `F` 512, `S'` 128, `F'`/`F''` 256, Res-UNet
    /// (192, 256, 384).
    pub fn paper(height: usize, width: usize, rho: f64) -> Self {
        ModelConfig {
            height,
            width,
            group_size: 2,
            t: default_t(height, width),
            rho,
            flow_dim: 32,
            flow_padding: Padding::Zero,
            key_channels: 128,
            flow_channels: 512,
            fused_channels: 256,
            enc_hidden: 128,
            dec_hidden: 128,
            channel_hidden: 128,
            unet_widths: [192, 256, 384],
            squeeze_ratio: 4,
            power: 1.0,
        }
    }

    /// Same topology with narrow layers, sized for CPU training runs.
    pub fn desk(height: usize, width: usize, rho: f64) -> Self {
        ModelConfig {
            flow_dim: 16,
            key_channels: 32,
            flow_channels: 32,
            fused_channels: 32,
            enc_hidden: 32,
            dec_hidden: 32,
            channel_hidden: 32,
            unet_widths: [32, 48, 64],
            ..Self::paper(height, width, rho)
        }
    }

    pub fn latent_hw(&self) -> (usize, usize) {
        (self.height / self.t, self.width / self.t)
    }

    /// Number of stride-2 stages, `log2 t`.
    pub fn stages(&self) -> usize {
        self.t.trailing_zeros() as usize
    }

    pub fn source_dim(&self) -> usize {
        3 * self.height * self.width * self.group_size
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        let bad = |m: String| Err(CodecError::Config(m));
        if self.group_size < 2 {
            return bad(format!("group_size must be at least 2, got {}", self.group_size));
        }
        if self.t < 2 || !self.t.is_power_of_two() {
            return bad(format!("t must be a power of two >= 2, got {}", self.t));
        }
        if !self.height.is_multiple_of(self.t) || !self.width.is_multiple_of(self.t) {
            return bad(format!("{}x{} is not divisible by t = {}", self.height, self.width, self.t));
        }
        let (lh, lw) = self.latent_hw();
        if lh % 4 != 0 || lw % 4 != 0 {
            return bad(format!("latent grid {lh}x{lw} must be divisible by 4 for the Res-UNet"));
        }
        if self.height * self.width > MAX_POSITIONS {
            return bad(format!("{}x{} exceeds the {MAX_POSITIONS}-position matching cap", self.height, self.width));
        }
        if !(self.power > 0.0 && self.power.is_finite()) {
            return bad(format!("power must be positive, got {}", self.power));
        }
        let widths = [
            ("flow_dim", self.flow_dim),
            ("key_channels", self.key_channels),
            ("flow_channels", self.flow_channels),
            ("fused_channels", self.fused_channels),
            ("enc_hidden", self.enc_hidden),
            ("dec_hidden", self.dec_hidden),
            ("channel_hidden", self.channel_hidden),
        ];
        for (name, v) in widths {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        for (name, v) in [("key_channels", self.key_channels), ("dec_hidden", self.dec_hidden)] {
            if v % 4 != 0 {
                return bad(format!("{name} = {v} must be divisible by 4 for pixel shuffle"));
            }
        }
        let [w0, w1, w2] = self.unet_widths;
        if w1 % 4 != 0 || w2 % 4 != 0 || w0 == 0 {
            return bad(format!("unet_widths {:?}: the two deeper widths must be divisible by 4", self.unet_widths));
        }
        let r = self.squeeze_ratio;
        for (name, c) in [
            ("key_channels", self.key_channels),
            ("flow_channels", self.flow_channels),
            ("fused_channels", self.fused_channels),
            ("unet_widths[0]", w0),
            ("unet_widths[1]", w1),
        ] {
            if r == 0 || c % r != 0 {
                return bad(format!("squeeze_ratio {r} does not divide {name} = {c}"));
            }
        }
        self.plan().map(|_| ())
    }

    pub fn plan(&self) -> Result<ChannelPlan, CodecError> {
        let target = budget_for(self.rho, self.height, self.width, self.group_size)?;
        let (lh, lw) = self.latent_hw();
        ChannelPlan::search(target, lh * lw)
    }
}

/// Channel widths `(y1, y2)` of the two code maps and the resulting count
/// `c' = (H/t)(W/t)(y1 + y2) / 2` of complex symbols per clip.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelPlan {
    pub y1: usize,
    pub y2: usize,
    pub symbols: usize,
    pub target: BandwidthBudget,
    pub achieved: BandwidthBudget,
}

impl ChannelPlan {
    /// Exhaustive search for the pair with `c'` nearest `k`; `y1 + y2` is kept
    /// even and ties go to the larger `y2`.
    pub fn search(target: BandwidthBudget, positions: usize) -> Result<Self, CodecError> {
        if positions == 0 {
            return Err(CodecError::Config("empty latent grid".into()));
        }
        let max = 4 * target.k / positions + 4;
        let mut best: Option<(usize, usize, usize)> = None;
        for y1 in 1..=max {
            for y2 in 1..=max {
                if (y1 + y2) % 2 != 0 {
                    continue;
                }
                let c = positions * (y1 + y2) / 2;
                let better = match best {
                    None => true,
                    Some((b1, b2, bc)) => {
                        let (d, bd) = (c.abs_diff(target.k), bc.abs_diff(target.k));
                        d < bd || (d == bd && (y2 > b2 || (y2 == b2 && y1 < b1)))
                    }
                };
                if better {
                    best = Some((y1, y2, c));
                }
            }
        }
        let (y1, y2, symbols) = best.expect("search space is nonempty");
        Ok(ChannelPlan { y1, y2, symbols, target, achieved: BandwidthBudget::new(symbols, target.m) })
    }

    pub fn code_channels(&self) -> usize {
        self.y1 + self.y2
    }
}
