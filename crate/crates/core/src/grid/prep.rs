//! Preparation steps applied to shell grids before training.

use crate::autodiff::kernels::{apply_taps, linear_taps};
use crate::error::{invalid, shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::shell::{ShellGrid, VarStats};

/// Target extent for `n` scaled by `ratio`, rounded to nearest.
pub fn scaled_extent(n: usize, ratio: f64) -> usize {
    (n as f64 * ratio).round() as usize
}

/// Bilinear lat/lon rescale of every radial layer of every variable.
/// Latitude is clamped at the poles; longitude wraps.
pub fn rescale_latlon<T: Scalar>(grid: &ShellGrid<T>, ratio: f64) -> Result<ShellGrid<T>> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return invalid(format!("rescale ratio {ratio} outside (0, 1]"));
    }
    let [_, _, h, w] = grid.dims();
    let (nh, nw) = (scaled_extent(h, ratio), scaled_extent(w, ratio));
    if nh == 0 || nw == 0 {
        return invalid(format!(
            "rescaling {h}×{w} by {ratio} leaves a non-positive extent"
        ));
    }
    let y = apply_taps(grid.values(), 2, &linear_taps(h, nh, false));
    let y = apply_taps(&y, 3, &linear_taps(w, nw, true));
    grid.with_values(y)
}

/// Per-variable min/max over a set of raw grids.
pub fn compute_stats<'a, T: Scalar>(
    grids: impl IntoIterator<Item = &'a ShellGrid<T>>,
) -> Result<Vec<VarStats>> {
    let mut acc: Option<Vec<(f64, f64)>> = None;
    for g in grids {
        let v = g.var_count();
        let acc = acc.get_or_insert_with(|| vec![(f64::INFINITY, f64::NEG_INFINITY); v]);
        if acc.len() != v {
            return shape_err("grids disagree on variable count");
        }
        for (i, slot) in acc.iter_mut().enumerate() {
            for &x in g.variable(i) {
                let x = x.to_f64_lossy();
                slot.0 = slot.0.min(x);
                slot.1 = slot.1.max(x);
            }
        }
    }
    let acc = acc.ok_or_else(|| Error::InvalidArgument("no grids to compute stats over".into()))?;
    // stats are stored as f32; round outward so every value stays in range
    Ok(acc
        .into_iter()
        .map(|(lo, hi)| {
            let mut l = lo as f32;
            if l as f64 > lo {
                l = l.next_down();
            }
            let mut h = hi as f32;
            if (h as f64) < hi {
                h = h.next_up();
            }
            VarStats::new(l as f64, h as f64)
        })
        .collect())
}

/// Maps each variable into `[0, 1]` with the given stats. Degenerate
/// variables map to 0.5.
pub fn normalize_with<T: Scalar>(grid: &ShellGrid<T>, stats: &[VarStats]) -> Result<ShellGrid<T>> {
    if grid.stats().is_some() {
        return invalid("grid is already normalized");
    }
    if stats.len() != grid.var_count() {
        return shape_err(format!(
            "{} stats entries for {} variables",
            stats.len(),
            grid.var_count()
        ));
    }
    let [v, r, h, w] = grid.dims();
    let per = r * h * w;
    let mut out = grid.values().data().to_vec();
    for (var, st) in stats.iter().enumerate().take(v) {
        let chunk = &mut out[var * per..(var + 1) * per];
        if st.degenerate {
            chunk.fill(T::lit(0.5));
            continue;
        }
        let lo = T::lit(st.min);
        let span = T::lit(st.range());
        for x in chunk {
            *x = ((*x - lo) / span).max(T::zero()).min(T::one());
        }
    }
    grid.with_values(Tensor::new(&[v, r, h, w], out)?)?
        .with_stats(Some(stats.to_vec()))
}

/// Normalizes with stats computed from this grid alone.
pub fn minmax_normalize<T: Scalar>(grid: &ShellGrid<T>) -> Result<(ShellGrid<T>, Vec<VarStats>)> {
    let stats = compute_stats([grid])?;
    Ok((normalize_with(grid, &stats)?, stats))
}

/// Inverse of [`normalize_with`]. Degenerate variables restore their constant.
pub fn denormalize<T: Scalar>(grid: &ShellGrid<T>) -> Result<ShellGrid<T>> {
    let stats = grid
        .stats()
        .ok_or_else(|| Error::InvalidArgument("grid is not normalized".into()))?
        .to_vec();
    let [v, r, h, w] = grid.dims();
    let per = r * h * w;
    let mut out = grid.values().data().to_vec();
    for (var, st) in stats.iter().enumerate().take(v) {
        let lo = T::lit(st.min);
        let span = T::lit(st.range());
        for x in &mut out[var * per..(var + 1) * per] {
            *x = if st.degenerate { lo } else { *x * span + lo };
        }
    }
    grid.with_values(Tensor::new(&[v, r, h, w], out)?)?
        .with_stats(None)
}

/// Reflects `axis` excluding the boundary sample: padding `[a,b,c,d]` by 2 on
/// the left prepends `[c,b]`.
pub fn mirror_pad_axis<T: Scalar>(
    x: &Tensor<T>,
    axis: usize,
    before: usize,
    after: usize,
) -> Result<Tensor<T>> {
    let shape = x.shape();
    if axis >= shape.len() {
        return shape_err(format!("axis {axis} out of range for {shape:?}"));
    }
    let n = shape[axis];
    if before >= n || after >= n {
        return invalid(format!(
            "mirror pad ({before}, {after}) must be smaller than the axis extent {n}"
        ));
    }
    if before == 0 && after == 0 {
        return Ok(x.clone());
    }
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let m = n + before + after;
    let src_index = |i: usize| -> usize {
        let j = i as i64 - before as i64;
        if j < 0 {
            (-j) as usize
        } else if j as usize >= n {
            2 * (n - 1) - j as usize
        } else {
            j as usize
        }
    };
    let data = x.data();
    let mut out = Vec::with_capacity(outer * m * inner);
    for o in 0..outer {
        for i in 0..m {
            let s = (o * n + src_index(i)) * inner;
            out.extend_from_slice(&data[s..s + inner]);
        }
    }
    let mut out_shape = shape.to_vec();
    out_shape[axis] = m;
    Tensor::new(&out_shape, out)
}

/// Per-axis `(before, after)` pad amounts over radial, latitude, longitude.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PadAmounts {
    pub radial: (usize, usize),
    pub lat: (usize, usize),
    pub lon: (usize, usize),
}

impl PadAmounts {
    pub fn lat(before: usize, after: usize) -> Self {
        Self {
            lat: (before, after),
            ..Self::default()
        }
    }
}

pub fn mirror_pad<T: Scalar>(grid: &ShellGrid<T>, pad: PadAmounts) -> Result<ShellGrid<T>> {
    let mut v = mirror_pad_axis(grid.values(), 1, pad.radial.0, pad.radial.1)?;
    v = mirror_pad_axis(&v, 2, pad.lat.0, pad.lat.1)?;
    v = mirror_pad_axis(&v, 3, pad.lon.0, pad.lon.1)?;
    grid.with_values(v)
}

/// Mean over each `factor × factor` lat/lon block, per radial layer.
pub fn block_downsample_latlon<T: Scalar>(grid: &ShellGrid<T>, factor: usize) -> Result<ShellGrid<T>> {
    if factor == 0 {
        return invalid("downsample factor must be positive");
    }
    let [v, r, h, w] = grid.dims();
    if h % factor != 0 || w % factor != 0 {
        return invalid(format!(
            "{h}×{w} is not divisible by {factor}; mirror-pad first"
        ));
    }
    let (oh, ow) = (h / factor, w / factor);
    let inv = T::one() / T::from_usize(factor * factor).unwrap();
    let src = grid.values().data();
    let mut out = Vec::with_capacity(v * r * oh * ow);
    for layer in src.chunks(h * w) {
        for by in 0..oh {
            for bx in 0..ow {
                let mut s = T::zero();
                for dy in 0..factor {
                    let row = &layer[(by * factor + dy) * w + bx * factor..][..factor];
                    for &x in row {
                        s += x;
                    }
                }
                out.push(s * inv);
            }
        }
    }
    grid.with_values(Tensor::new(&[v, r, oh, ow], out)?)
}

/// `round(linspace(0, R−1, n))`.
pub fn radial_indices(r: usize, n: usize) -> Result<Vec<usize>> {
    if n < 2 || n > r {
        return invalid(format!("cannot select {n} radial layers out of {r} (need 2 ≤ n ≤ R)"));
    }
    let step = (r - 1) as f64 / (n - 1) as f64;
    Ok((0..n).map(|i| (i as f64 * step).round() as usize).collect())
}

/// Keeps `n` radial layers equally spaced between the innermost and outermost.
pub fn select_radial<T: Scalar>(grid: &ShellGrid<T>, n: usize) -> Result<ShellGrid<T>> {
    let [v, r, h, w] = grid.dims();
    let idx = radial_indices(r, n)?;
    let mut out = Vec::with_capacity(v * n * h * w);
    for var in 0..v {
        for &ri in &idx {
            out.extend_from_slice(grid.layer(var, ri));
        }
    }
    grid.with_values(Tensor::new(&[v, n, h, w], out)?)
}

/// Circular longitude shift: column `j` moves to `(j + k) mod W`.
pub fn rotate_lon<T: Scalar>(grid: &ShellGrid<T>, k: i64) -> Result<ShellGrid<T>> {
    grid.with_values(rotate_lon_tensor(grid.values(), k))
}

/// [`rotate_lon`] on the last axis of any tensor.
pub fn rotate_lon_tensor<T: Scalar>(x: &Tensor<T>, k: i64) -> Tensor<T> {
    let w = *x.shape().last().expect("rank ≥ 1");
    let s = k.rem_euclid(w as i64) as usize;
    if s == 0 {
        return x.clone();
    }
    let mut out = Vec::with_capacity(x.len());
    for row in x.data().chunks(w) {
        out.extend_from_slice(&row[w - s..]);
        out.extend_from_slice(&row[..w - s]);
    }
    Tensor::new(x.shape(), out).expect("same shape")
}
