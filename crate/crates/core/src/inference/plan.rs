use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::pair::{MARGIN, UPSCALE};

/// Low-res window starts `[0, stride, 2·stride, …]` tiling `lr_cols`
/// columns exactly once around the circle.
pub fn plan_wedges(lr_cols: usize, stride: usize) -> Result<Vec<usize>> {
    if lr_cols == 0 {
        return invalid("cannot plan wedges over zero longitude columns");
    }
    if stride == 0 || lr_cols % stride != 0 {
        return invalid(format!(
            "stride {stride} does not divide {lr_cols} low-res longitude columns"
        ));
    }
    Ok((0..lr_cols).step_by(stride).collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlendMode {
    /// Linear ramps across each overlap.
    #[default]
    Feather,
    /// Uniform weight over the whole wedge.
    Average,
    /// Center crop of one stride per wedge, no overlap.
    Hard,
}

impl FromStr for BlendMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "feather" => Ok(Self::Feather),
            "average" => Ok(Self::Average),
            "hard" => Ok(Self::Hard),
            _ => invalid(format!("unknown blend mode {s:?} (feather|average|hard)")),
        }
    }
}

impl fmt::Display for BlendMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Feather => "feather",
            Self::Average => "average",
            Self::Hard => "hard",
        })
    }
}

/// Where each wedge lands on the high-res circle and how it is weighted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StitchPlan {
    pub stride_lr: usize,
    pub starts: Vec<usize>,
    pub hr_starts: Vec<usize>,
    /// High-res longitude columns of the full shell.
    pub hr_lon: usize,
    pub wedge_width: usize,
    pub blend: BlendMode,
}

impl StitchPlan {
    pub fn new(lr_cols: usize, stride: usize, wedge_width: usize, blend: BlendMode) -> Result<Self> {
        let starts = plan_wedges(lr_cols, stride)?;
        if wedge_width == 0 {
            return invalid("wedge width must be positive");
        }
        let hr_lon = UPSCALE * lr_cols;
        let hr_starts = starts.iter().map(|s| (UPSCALE * s + MARGIN) % hr_lon).collect();
        Ok(Self {
            stride_lr: stride,
            starts,
            hr_starts,
            hr_lon,
            wedge_width,
            blend,
        })
    }

    pub fn stride_hr(&self) -> usize {
        UPSCALE * self.stride_lr
    }

    /// Columns shared by adjacent wedges.
    pub fn overlap(&self) -> usize {
        self.wedge_width.saturating_sub(self.stride_hr())
    }

    /// Blend weight of each wedge column.
    pub fn weights(&self) -> Vec<f64> {
        let w = self.wedge_width;
        match self.blend {
            BlendMode::Average => vec![1.0; w],
            BlendMode::Feather => {
                let l = self.overlap() as f64;
                if l == 0.0 {
                    return vec![1.0; w];
                }
                (0..w)
                    .map(|j| {
                        let j = j as f64;
                        1f64.min((j + 0.5) / l).min((w as f64 - j - 0.5) / l)
                    })
                    .collect()
            }
            BlendMode::Hard => {
                let s = self.stride_hr();
                if w <= s {
                    return vec![1.0; w];
                }
                let c0 = (w - s) / 2;
                (0..w).map(|j| if (c0..c0 + s).contains(&j) { 1.0 } else { 0.0 }).collect()
            }
        }
    }

    /// Raw accumulated weight per high-res column, before normalization.
    pub fn column_weight(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.hr_lon];
        let weights = self.weights();
        for &h in &self.hr_starts {
            for (j, &wt) in weights.iter().enumerate() {
                acc[(h + j) % self.hr_lon] += wt;
            }
        }
        acc
    }

    /// Number of wedges contributing nonzero weight to each column.
    pub fn multiplicity(&self) -> Vec<usize> {
        self.contributors().iter().map(Vec::len).collect()
    }

    fn contributors(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.hr_lon];
        let weights = self.weights();
        for (k, &h) in self.hr_starts.iter().enumerate() {
            for (j, &wt) in weights.iter().enumerate() {
                let c = (h + j) % self.hr_lon;
                if wt > 0.0 && !out[c].contains(&k) {
                    out[c].push(k);
                }
            }
        }
        for c in &mut out {
            c.sort_unstable();
        }
        out
    }

    /// Columns `b` whose contributing wedges differ from those of column
    /// `b − 1` (circularly): the places a seam can appear.
    pub fn boundaries(&self) -> Vec<usize> {
        let c = self.contributors();
        let w = self.hr_lon;
        (0..w).filter(|&b| c[b] != c[(b + w - 1) % w]).collect()
    }

    /// Structured-text echo written next to stitched exports.
    pub fn to_toml(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Echo<'a> {
            #[serde(flatten)]
            plan: &'a StitchPlan,
            stride_hr: usize,
            overlap: usize,
            boundaries: Vec<usize>,
        }
        toml::to_string(&Echo {
            plan: self,
            stride_hr: self.stride_hr(),
            overlap: self.overlap(),
            boundaries: self.boundaries(),
        })
        .map_err(|e| Error::Format(format!("stitch plan: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plans() {
        assert_eq!(plan_wedges(27, 3).unwrap(), vec![0, 3, 6, 9, 12, 15, 18, 21, 24]);
        assert_eq!(plan_wedges(27, 27).unwrap(), vec![0]);
        assert!(plan_wedges(27, 4).is_err());
        assert!(plan_wedges(27, 0).is_err());
    }

    #[test]
    fn feather_ramps_sum_to_one_in_overlap() {
        let p = StitchPlan::new(27, 3, 38, BlendMode::Feather).unwrap();
        assert_eq!(p.overlap(), 14);
        for w in p.column_weight() {
            assert!((w - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn hard_crop_takes_one_stride() {
        let p = StitchPlan::new(27, 3, 38, BlendMode::Hard).unwrap();
        let w = p.weights();
        assert_eq!(w.iter().filter(|&&x| x == 1.0).count(), 24);
        assert_eq!(w[6], 0.0);
        assert_eq!(w[7], 1.0);
        assert_eq!(w[31], 0.0);
        assert!(p.multiplicity().iter().all(|&m| m == 1));
        assert_eq!(p.boundaries().len(), 9);
    }

    #[test]
    fn echo_parses() {
        let p = StitchPlan::new(27, 3, 38, BlendMode::Average).unwrap();
        let v: toml::Value = toml::from_str(&p.to_toml().unwrap()).unwrap();
        assert_eq!(v["overlap"].as_integer(), Some(14));
        assert_eq!(v["blend"].as_str(), Some("average"));
    }
}
