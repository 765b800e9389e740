use crate::error::{invalid, shape_err, Error, Result};
use crate::grid::ShellGrid;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::plan::{BlendMode, StitchPlan};
use super::seam::{seam_metric, SeamReport};
use super::wedge::{ShellFrame, Surrogate, Wedge, WedgeGeometry, WedgeNoise};

/// Weighted accumulator for a `[variables, radial, lat, lon]` shell.
///
/// Blend weights depend only on the wedge column, so the weight map is kept
/// per longitude column.
#[derive(Clone, Debug)]
pub struct ShellAssembly {
    dims: [usize; 4],
    acc: Vec<f64>,
    weight: Vec<f64>,
    timestep: Option<u64>,
    wedge_shape: Option<Vec<usize>>,
}

impl ShellAssembly {
    pub fn new(dims: [usize; 4]) -> Self {
        Self {
            dims,
            acc: vec![0.0; dims.iter().product()],
            weight: vec![0.0; dims[3]],
            timestep: None,
            wedge_shape: None,
        }
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    /// Accumulated weight of every longitude column.
    pub fn column_weights(&self) -> &[f64] {
        &self.weight
    }

    /// Adds `wedge` with per-column `weights`, dropping wedge rows outside
    /// the shell's latitude range.
    pub fn add<T: Scalar>(&mut self, wedge: &Wedge<T>, weights: &[f64]) -> Result<()> {
        let [v, r, h, w] = self.dims;
        let [wv, wr, wh, ww] = wedge.data.dims4()?;
        if wv != v || wr != r {
            return shape_err(format!(
                "wedge {:?} does not match shell {:?}",
                wedge.data.shape(),
                self.dims
            ));
        }
        if weights.len() != ww {
            return shape_err(format!("{} blend weights for {ww} wedge columns", weights.len()));
        }
        if let Some(t) = self.timestep {
            if t != wedge.timestep {
                return Err(Error::Provenance(format!(
                    "wedge from timestep {} stitched into timestep {t}",
                    wedge.timestep
                )));
            }
        }
        if let Some(s) = &self.wedge_shape {
            if s.as_slice() != wedge.data.shape() {
                return shape_err(format!(
                    "wedge shape {:?} differs from earlier wedge {s:?}",
                    wedge.data.shape()
                ));
            }
        }
        let row0 = -wedge.hr_lat_start;
        if row0 < 0 || row0 + h as i64 > wh as i64 {
            return shape_err(format!(
                "wedge rows [{}, {}) do not cover the {h} shell rows",
                wedge.hr_lat_start,
                wedge.hr_lat_start + wh as i64
            ));
        }
        self.timestep = Some(wedge.timestep);
        self.wedge_shape = Some(wedge.data.shape().to_vec());
        let row0 = row0 as usize;
        let data = wedge.data.data();
        for (j, &wt) in weights.iter().enumerate() {
            if wt == 0.0 {
                continue;
            }
            let col = (wedge.hr_lon_start + j) % w;
            self.weight[col] += wt;
            for plane in 0..v * r {
                for y in 0..h {
                    let src = (plane * wh + row0 + y) * ww + j;
                    let dst = (plane * h + y) * w + col;
                    self.acc[dst] += wt * data[src].to_f64_lossy();
                }
            }
        }
        Ok(())
    }

    /// Divides by the accumulated weight. Fails naming every column no
    /// wedge reached.
    pub fn finalize<T: Scalar>(self) -> Result<Tensor<T>> {
        let holes: Vec<usize> = (0..self.dims[3]).filter(|&c| self.weight[c] <= 0.0).collect();
        if !holes.is_empty() {
            return Err(Error::CoverageHole(holes));
        }
        let w = self.dims[3];
        let data = self
            .acc
            .iter()
            .enumerate()
            .map(|(i, &a)| T::lit(a / self.weight[i % w]))
            .collect();
        Tensor::new(&self.dims, data)
    }
}

/// Stitches `wedges` placed per `plan` into a shell with `lat` rows.
pub fn stitch<T: Scalar>(wedges: &[Wedge<T>], plan: &StitchPlan, lat: usize) -> Result<Tensor<T>> {
    let first = wedges
        .first()
        .ok_or_else(|| Error::InvalidArgument("no wedges to stitch".into()))?;
    if wedges.len() != plan.starts.len() {
        return invalid(format!(
            "{} wedges for a plan of {}",
            wedges.len(),
            plan.starts.len()
        ));
    }
    let [v, r, _, _] = first.data.dims4()?;
    let mut asm = ShellAssembly::new([v, r, lat, plan.hr_lon]);
    let weights = plan.weights();
    for (wedge, (&s, &h)) in wedges.iter().zip(plan.starts.iter().zip(&plan.hr_starts)) {
        if wedge.width() != plan.wedge_width || wedge.lon_start != s || wedge.hr_lon_start != h {
            return Err(Error::Provenance(format!(
                "wedge at low-res column {} (high-res {}, width {}) does not match plan slot {s} (high-res {h}, width {})",
                wedge.lon_start,
                wedge.hr_lon_start,
                wedge.width(),
                plan.wedge_width
            )));
        }
        asm.add(wedge, &weights)?;
    }
    asm.finalize()
}

/// The high-res shell restricted to the radial layers a wedge covers: what
/// a perfect surrogate would stitch to.
pub fn truth_shell<T: Scalar>(hr: &ShellGrid<T>, geo: &WedgeGeometry) -> Result<ShellGrid<T>> {
    let [v, _, h, w] = hr.dims();
    let values = hr
        .values()
        .crop(&[0, geo.radial_start, 0, 0], &[v, geo.out[0], h, w])?;
    hr.with_values(values)
}

/// A stitched shell with its plan and seam report.
#[derive(Clone, Debug)]
pub struct StitchedShell<T> {
    pub shell: ShellGrid<T>,
    pub plan: StitchPlan,
    pub seam: SeamReport,
}

impl<T: Scalar> Surrogate<T> {
    /// Generates every wedge of the plan and stitches the full shell.
    pub fn shell(
        &self,
        lr: &ShellGrid<T>,
        frame: ShellFrame,
        stride: usize,
        blend: BlendMode,
        noise: &WedgeNoise,
        workers: usize,
    ) -> Result<StitchedShell<T>> {
        let geo = self.geometry(lr, frame)?;
        geo.check_lat_cover()?;
        let plan = StitchPlan::new(lr.lon(), stride, geo.out[2], blend)?;
        let wedges = self.wedges(lr, frame, &plan.starts, noise, workers)?;
        let values = stitch(&wedges, &plan, frame.lat)?;
        let seam = seam_metric(&values, &plan.boundaries())?;
        let shell = ShellGrid::new(lr.variables().to_vec(), lr.timestep(), values)?
            .with_stats(lr.stats().map(<[_]>::to_vec))?;
        Ok(StitchedShell { shell, plan, seam })
    }
}
