//! Aligned (low-res conditioning window, high-res target window) extraction.
//!
//! The generator maps an input window of `n` samples per axis to `8n − 42`
//! samples, centered: the low-res window spans `8n` high-res samples and the
//! target sits 21 high-res samples in from each side.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::prep::{mirror_pad_axis, select_radial};
use super::shell::ShellGrid;

pub const UPSCALE: usize = 8;
/// Total valid-convolution shrinkage of the generator, in output samples.
pub const SHRINK: usize = 42;
/// Target inset from the low-res footprint on each side, in output samples.
pub const MARGIN: usize = SHRINK / 2;

/// Output extent for an input extent `n`, if positive.
pub fn output_extent(n: usize) -> Option<usize> {
    (UPSCALE * n).checked_sub(SHRINK).filter(|&m| m > 0)
}

/// Input window extents `[radial, lat, lon]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairGeometry {
    pub window: [usize; 3],
}

impl Default for PairGeometry {
    fn default() -> Self {
        Self {
            window: [30, 20, 10],
        }
    }
}

/// Latitude bookkeeping shared by pair extraction and wedge stitching.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LatLayout {
    /// Mirror rows added to each side of the low-res grid.
    pub lr_pad: usize,
    /// First target row in unpadded high-res coordinates (negative: the
    /// target extends past the pole into mirrored rows).
    pub hr_start: i64,
}

impl PairGeometry {
    pub fn new(window: [usize; 3]) -> Result<Self> {
        let g = Self { window };
        g.target()?;
        Ok(g)
    }

    /// `[radial, lat, lon]` extents of the target window.
    pub fn target(&self) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for (o, &n) in out.iter_mut().zip(&self.window) {
            *o = output_extent(n).ok_or_else(|| {
                Error::InvalidArgument(format!("input extent {n} yields no output"))
            })?;
        }
        Ok(out)
    }

    /// Latitude alignment for a high-res grid of `hr_h` rows whose low-res
    /// counterpart has `lr_h` rows (after symmetric mirror padding to a
    /// multiple of 8).
    pub fn lat_layout(&self, hr_h: usize, lr_h: usize) -> Result<LatLayout> {
        let n = self.window[1];
        let footprint = UPSCALE * lr_h;
        if footprint < hr_h || (footprint - hr_h) % 2 != 0 {
            return shape_err(format!(
                "{lr_h} low-res rows do not symmetrically cover {hr_h} high-res rows"
            ));
        }
        let pre_pad = ((footprint - hr_h) / 2) as i64;
        if n < lr_h || (n - lr_h) % 2 != 0 {
            return shape_err(format!(
                "latitude window {n} cannot be centered on {lr_h} low-res rows"
            ));
        }
        let lr_pad = (n - lr_h) / 2;
        if lr_pad >= lr_h {
            return shape_err(format!(
                "latitude window {n} needs {lr_pad} mirror rows on {lr_h} low-res rows"
            ));
        }
        let hr_start = -(UPSCALE as i64) * lr_pad as i64 - pre_pad + MARGIN as i64;
        Ok(LatLayout { lr_pad, hr_start })
    }

    /// First high-res target column for a low-res window starting at `lon_start`.
    pub fn hr_lon_start(&self, lon_start: usize, hr_w: usize) -> usize {
        (UPSCALE * lon_start + MARGIN) % hr_w
    }

    /// First of the centered consecutive high-res radial layers.
    pub fn hr_radial_start(&self, hr_r: usize) -> Result<usize> {
        let m = self.target()?[0];
        if m > hr_r {
            return shape_err(format!("target needs {m} radial layers, grid has {hr_r}"));
        }
        Ok((hr_r - m) / 2)
    }
}

/// One aligned training example.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair<T> {
    pub input: Tensor<T>,
    pub target: Tensor<T>,
    pub lon_start: usize,
    pub hr_lon_start: usize,
    pub hr_lat_start: i64,
    pub hr_radial_start: usize,
    pub timestep: u64,
}

fn check_provenance<T: Scalar>(hr: &ShellGrid<T>, lr: &ShellGrid<T>) -> Result<()> {
    if hr.timestep() != lr.timestep() {
        return Err(Error::Provenance(format!(
            "high-res timestep {} vs low-res timestep {}",
            hr.timestep(),
            lr.timestep()
        )));
    }
    if hr.stats() != lr.stats() {
        return Err(Error::Provenance(
            "high-res and low-res grids carry different normalization stats".into(),
        ));
    }
    if hr.variables() != lr.variables() {
        return Err(Error::Provenance("variable lists differ".into()));
    }
    Ok(())
}

/// Circular longitude window of `n` columns starting at `start`.
pub(crate) fn lon_window<T: Scalar>(x: &Tensor<T>, start: usize, n: usize) -> Tensor<T> {
    let shape = x.shape();
    let w = *shape.last().unwrap();
    let mut out = Vec::with_capacity(x.len() / w * n);
    for row in x.data().chunks(w) {
        for j in 0..n {
            out.push(row[(start + j) % w]);
        }
    }
    let mut s = shape.to_vec();
    *s.last_mut().unwrap() = n;
    Tensor::new(&s, out).expect("window shape")
}

/// Low-res conditioning window at `lon_start`: radial selection, latitude
/// mirror padding, circular longitude window.
pub fn conditioning_window<T: Scalar>(
    lr: &ShellGrid<T>,
    lon_start: usize,
    geometry: &PairGeometry,
    hr_lat: usize,
) -> Result<Tensor<T>> {
    let [n_r, _, n_lon] = geometry.window;
    let lr_sel = if lr.radial_count() == n_r {
        lr.clone()
    } else {
        select_radial(lr, n_r)?
    };
    let layout = geometry.lat_layout(hr_lat, lr.lat())?;
    let padded = mirror_pad_axis(lr_sel.values(), 2, layout.lr_pad, layout.lr_pad)?;
    if lon_start >= lr.lon() {
        return invalid(format!(
            "lon_start {lon_start} outside 0..{}",
            lr.lon()
        ));
    }
    Ok(lon_window(&padded, lon_start, n_lon))
}

/// Cuts the training pair for the low-res window starting at column `lon_start`.
pub fn extract_pair<T: Scalar>(
    hr: &ShellGrid<T>,
    lr: &ShellGrid<T>,
    lon_start: usize,
    geometry: &PairGeometry,
) -> Result<TrainingPair<T>> {
    check_provenance(hr, lr)?;
    let [_, hr_r, hr_h, hr_w] = hr.dims();
    if hr_w != UPSCALE * lr.lon() {
        return shape_err(format!(
            "high-res longitude {hr_w} is not {UPSCALE}× low-res longitude {}",
            lr.lon()
        ));
    }
    let input = conditioning_window(lr, lon_start, geometry, hr_h)?;
    let [m_r, m_lat, m_lon] = geometry.target()?;
    let layout = geometry.lat_layout(hr_h, lr.lat())?;

    let r0 = geometry.hr_radial_start(hr_r)?;
    let v = hr.var_count();
    let radial = hr
        .values()
        .crop(&[0, r0, 0, 0], &[v, m_r, hr_h, hr_w])?;
    let before = (-layout.hr_start).max(0) as usize;
    let after = (layout.hr_start + m_lat as i64 - hr_h as i64).max(0) as usize;
    let padded = mirror_pad_axis(&radial, 2, before, after)?;
    let row0 = (layout.hr_start + before as i64) as usize;
    let rows = padded.crop(&[0, 0, row0, 0], &[v, m_r, m_lat, hr_w])?;
    let hr_lon_start = geometry.hr_lon_start(lon_start, hr_w);
    let target = lon_window(&rows, hr_lon_start, m_lon);

    Ok(TrainingPair {
        input,
        target,
        lon_start,
        hr_lon_start,
        hr_lat_start: layout.hr_start,
        hr_radial_start: r0,
        timestep: hr.timestep(),
    })
}
