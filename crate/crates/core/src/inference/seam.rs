use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeamReport {
    /// Mean |Δ| across column pairs `(b − 1, b)` for each boundary `b`.
    pub per_boundary: Vec<(usize, f64)>,
    pub boundary_mean: f64,
    /// Mean |Δ| over all other adjacent column pairs.
    pub interior_mean: f64,
    /// `boundary_mean / interior_mean`; 0 when both are 0.
    pub ratio: f64,
}

/// Longitude-difference statistics of a `[variables, radial, lat, lon]`
/// shell at the given boundary columns versus everywhere else. Pairs wrap
/// around, so boundary 0 compares the last column with the first.
pub fn seam_metric<T: Scalar>(shell: &Tensor<T>, boundaries: &[usize]) -> Result<SeamReport> {
    let [v, r, h, w] = shell.dims4()?;
    if let Some(&b) = boundaries.iter().find(|&&b| b >= w) {
        return Err(Error::Index(format!("boundary column {b} outside 0..{w}")));
    }
    let rows = v * r * h;
    let mut col_sum = vec![0.0f64; w];
    for row in shell.data().chunks(w) {
        for c in 0..w {
            let prev = row[(c + w - 1) % w];
            col_sum[c] += (row[c] - prev).abs().to_f64_lossy();
        }
    }
    let mean = |c: usize| col_sum[c] / rows as f64;
    let mut is_boundary = vec![false; w];
    for &b in boundaries {
        is_boundary[b] = true;
    }
    let per_boundary: Vec<(usize, f64)> = boundaries.iter().map(|&b| (b, mean(b))).collect();
    let avg = |it: &mut dyn Iterator<Item = f64>| {
        let (s, n) = it.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
        if n == 0 {
            0.0
        } else {
            s / n as f64
        }
    };
    let boundary_mean = avg(&mut per_boundary.iter().map(|p| p.1));
    let interior_mean = avg(&mut (0..w).filter(|&c| !is_boundary[c]).map(mean));
    let ratio = if boundary_mean == 0.0 && interior_mean == 0.0 {
        0.0
    } else {
        boundary_mean / interior_mean
    };
    Ok(SeamReport {
        per_boundary,
        boundary_mean,
        interior_mean,
        ratio,
    })
}
