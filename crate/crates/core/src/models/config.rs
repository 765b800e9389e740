use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::pair::{output_extent, UPSCALE};

/// Smallest input extent the generator accepts per axis.
pub const MIN_INPUT: usize = 7;

/// `8n − 42` per axis, rejecting extents below [`MIN_INPUT`].
pub fn checked_output_extents(input: [usize; 3]) -> Result<[usize; 3]> {
    let mut out = [0; 3];
    for (o, &n) in out.iter_mut().zip(&input) {
        if n < MIN_INPUT {
            return Err(Error::InvalidArgument(format!(
                "input extent {n} below the minimum {MIN_INPUT}"
            )));
        }
        *o = output_extent(n).expect("n ≥ 7 gives a positive extent");
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Feature widths at scales 1, 2, 4, 8.
    pub channels: [usize; 4],
    pub channel_cap: usize,
    pub kernel: usize,
    pub upsample_stages: usize,
    pub noise_enabled: bool,
    pub leaky_slope: f64,
    /// Declared input window `[radial, lat, lon]`.
    pub input_window: [usize; 3],
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            in_channels: 4,
            out_channels: 4,
            channels: [128, 64, 32, 16],
            channel_cap: 128,
            kernel: 3,
            upsample_stages: 3,
            noise_enabled: true,
            leaky_slope: 0.2,
            input_window: [30, 20, 10],
        }
    }
}

impl GeneratorConfig {
    /// Desk-scale configuration: 8³ windows, widths capped at 32.
    pub fn micro() -> Self {
        Self {
            channels: [32, 16, 8, 4],
            channel_cap: 32,
            input_window: [8, 8, 8],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel != 3 || self.upsample_stages != 3 {
            return invalid(format!(
                "only 3³ kernels with 3 upsample stages are supported (got kernel {}, {} stages)",
                self.kernel, self.upsample_stages
            ));
        }
        if self.in_channels == 0 || self.out_channels == 0 || self.channels.contains(&0) {
            return invalid("channel counts must be positive");
        }
        if let Some(&c) = self.channels.iter().find(|&&c| c > self.channel_cap) {
            return invalid(format!("channel width {c} exceeds cap {}", self.channel_cap));
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return invalid(format!("leaky slope {} outside [0, 1)", self.leaky_slope));
        }
        self.output_extents(self.input_window)?;
        Ok(())
    }

    /// Output extents for an input window, or an error when any axis is
    /// below [`MIN_INPUT`].
    pub fn output_extents(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        checked_output_extents(input)
    }

    pub fn output_window(&self) -> [usize; 3] {
        self.output_extents(self.input_window)
            .expect("validated config")
    }

    /// Extents after each stage for input `n`: scale 1, 2, 4, 8.
    pub fn stage_extents(n: usize) -> [usize; 4] {
        let s1 = n - 2;
        let s2 = 2 * s1 - 4;
        let s4 = 2 * s2 - 4;
        let s8 = 2 * s4 - 2;
        debug_assert_eq!(s8, UPSCALE * n - 42);
        [s1, s2, s4, s8]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CriticConfig {
    pub in_channels: usize,
    /// Widths of the three conv/pool blocks.
    pub channels: [usize; 3],
    pub channel_cap: usize,
    pub leaky_slope: f64,
    /// Candidate/condition footprint `[radial, lat, lon]`.
    pub footprint: [usize; 3],
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self {
            in_channels: 8,
            channels: [32, 64, 128],
            channel_cap: 128,
            leaky_slope: 0.2,
            footprint: [198, 118, 38],
        }
    }
}

impl CriticConfig {
    pub fn micro() -> Self {
        Self {
            channels: [16, 32, 32],
            channel_cap: 32,
            footprint: [22, 22, 22],
            ..Self::default()
        }
    }

    /// Critic matching a generator's output footprint.
    pub fn for_generator(g: &GeneratorConfig) -> Self {
        let base = if g.channel_cap <= 32 {
            Self::micro()
        } else {
            Self::default()
        };
        Self {
            in_channels: 2 * g.out_channels,
            footprint: g.output_window(),
            ..base
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.channels.contains(&0) {
            return invalid("channel counts must be positive");
        }
        if let Some(&c) = self.channels.iter().find(|&&c| c > self.channel_cap) {
            return invalid(format!("channel width {c} exceeds cap {}", self.channel_cap));
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return invalid(format!("leaky slope {} outside [0, 1)", self.leaky_slope));
        }
        for &m in &self.footprint {
            let mut e = m;
            for _ in 0..3 {
                if e < 4 {
                    return invalid(format!(
                        "footprint {:?} too small for three conv/pool blocks",
                        self.footprint
                    ));
                }
                e = (e - 2) / 2;
            }
        }
        Ok(())
    }
}
