//! Forward kernels on plain tensors. The tape in `graph` composes these; the
//! adjoint pairs (resize/resize_adjoint, pool/pool_adjoint, crop/pad) are
//! exact transposes of each other so gradients stay consistent at every order.

use crate::error::{invalid, shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{row_major_strides, Tensor};

/// Upper bound on the number of elements in one im2col buffer.
const COLS_BUDGET: usize = 1 << 22;

fn conv_out_extent(n: usize, k: usize) -> Result<usize> {
    if n < k {
        return shape_err(format!("spatial extent {n} smaller than kernel {k}"));
    }
    Ok(n - k + 1)
}

/// Fills `cols` (rows `ci,kd,kh,kw`; columns `od in planes, oh, ow`) for
/// output depth planes `[d0, d0 + planes)`.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    x: &[T],
    [ci_n, _d, h, w]: [usize; 4],
    k: usize,
    [ho, wo]: [usize; 2],
    d0: usize,
    planes: usize,
    cols: &mut Vec<T>,
) {
    let p = planes * ho * wo;
    cols.clear();
    cols.resize(ci_n * k * k * k * p, T::zero());
    let plane = h * w;
    let chan = x.len() / ci_n;
    let mut row = 0;
    for ci in 0..ci_n {
        let xc = &x[ci * chan..(ci + 1) * chan];
        for kd in 0..k {
            for kh in 0..k {
                for kw in 0..k {
                    let dst = &mut cols[row * p..(row + 1) * p];
                    let mut o = 0;
                    for pd in 0..planes {
                        let src_plane = &xc[(d0 + pd + kd) * plane..];
                        for oh in 0..ho {
                            let s = (oh + kh) * w + kw;
                            dst[o..o + wo].copy_from_slice(&src_plane[s..s + wo]);
                            o += wo;
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn planes_per_chunk(rows: usize, plane_cols: usize, total: usize) -> usize {
    (COLS_BUDGET / (rows * plane_cols).max(1)).clamp(1, total)
}

/// Valid-mode 3-D cross-correlation without bias.
/// `x: Ci×D×H×W`, `w: Co×Ci×k×k×k` → `Co×(D−k+1)×(H−k+1)×(W−k+1)`.
pub fn conv3d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
    let [ci_n, d, h, wd] = x.dims4()?;
    let (co_n, k) = match w.shape() {
        &[co, ci, k0, k1, k2] if ci == ci_n && k0 == k1 && k1 == k2 => (co, k0),
        s => {
            return shape_err(format!(
                "kernel shape {s:?} incompatible with input of {ci_n} channels"
            ))
        }
    };
    let (dout, hout, wout) = (
        conv_out_extent(d, k)?,
        conv_out_extent(h, k)?,
        conv_out_extent(wd, k)?,
    );
    let rows = ci_n * k * k * k;
    let plane_cols = hout * wout;
    let out_chan = dout * plane_cols;
    let mut out = vec![T::zero(); co_n * out_chan];
    let chunk = planes_per_chunk(rows, plane_cols, dout);
    let mut cols = Vec::new();
    let mut d0 = 0;
    while d0 < dout {
        let planes = chunk.min(dout - d0);
        im2col(x.data(), [ci_n, d, h, wd], k, [hout, wout], d0, planes, &mut cols);
        let p = planes * plane_cols;
        T::gemm_strided(
            co_n,
            rows,
            p,
            w.data(),
            (rows, 1),
            &cols,
            (p, 1),
            T::zero(),
            &mut out[d0 * plane_cols..],
            (out_chan, 1),
        );
        d0 += planes;
    }
    Tensor::new(&[co_n, dout, hout, wout], out)
}

/// Kernel gradient of [`conv3d`]: `gw[co, ci, κ] = Σ_p x[ci, p + κ] · g[co, p]`.
pub fn conv3d_kernel_grad<T: Scalar>(x: &Tensor<T>, g: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    let [ci_n, d, h, wd] = x.dims4()?;
    let [co_n, dout, hout, wout] = g.dims4()?;
    if conv_out_extent(d, k)? != dout || conv_out_extent(h, k)? != hout || conv_out_extent(wd, k)? != wout
    {
        return shape_err(format!(
            "kernel-gradient operands {:?} and {:?} disagree for kernel {k}",
            x.shape(),
            g.shape()
        ));
    }
    let rows = ci_n * k * k * k;
    let plane_cols = hout * wout;
    let out_chan = dout * plane_cols;
    let mut gw = vec![T::zero(); co_n * rows];
    let chunk = planes_per_chunk(rows, plane_cols, dout);
    let mut cols = Vec::new();
    let mut d0 = 0;
    let mut beta = T::zero();
    while d0 < dout {
        let planes = chunk.min(dout - d0);
        im2col(x.data(), [ci_n, d, h, wd], k, [hout, wout], d0, planes, &mut cols);
        let p = planes * plane_cols;
        // gw += g_chunk (co × p) · colsᵀ (p × rows)
        T::gemm_strided(
            co_n,
            p,
            rows,
            &g.data()[d0 * plane_cols..],
            (out_chan, 1),
            &cols,
            (1, p),
            beta,
            &mut gw,
            (rows, 1),
        );
        beta = T::one();
        d0 += planes;
    }
    Tensor::new(&[co_n, ci_n, k, k, k], gw)
}

/// Input gradient of [`conv3d`] (full correlation with the flipped,
/// channel-transposed kernel). `g: Co×D'×H'×W'` → `Ci×D×H×W`.
pub fn conv3d_transpose<T: Scalar>(g: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
    let [co_n, ..] = g.dims4()?;
    let (ci_n, k) = match w.shape() {
        &[co, ci, k0, k1, k2] if co == co_n && k0 == k1 && k1 == k2 => (ci, k0),
        s => {
            return shape_err(format!(
                "kernel shape {s:?} incompatible with gradient of {co_n} channels"
            ))
        }
    };
    let padded = pad_spatial(g, k - 1)?;
    let k3 = k * k * k;
    let wd = w.data();
    let mut flipped = vec![T::zero(); w.len()];
    for co in 0..co_n {
        for ci in 0..ci_n {
            let src = &wd[(co * ci_n + ci) * k3..(co * ci_n + ci + 1) * k3];
            let dst = &mut flipped[(ci * co_n + co) * k3..(ci * co_n + co + 1) * k3];
            for (i, v) in src.iter().enumerate() {
                dst[k3 - 1 - i] = *v;
            }
        }
    }
    let wf = Tensor::new(&[ci_n, co_n, k, k, k], flipped)?;
    conv3d(&padded, &wf)
}

/// Zero-pads every spatial axis of a `C×D×H×W` tensor by `p` on both sides.
fn pad_spatial<T: Scalar>(x: &Tensor<T>, p: usize) -> Result<Tensor<T>> {
    let [c, d, h, w] = x.dims4()?;
    pad(x, &[0, p, p, p], &[c, d + 2 * p, h + 2 * p, w + 2 * p])
}

/// Embeds `x` into a zero tensor of `out_shape` at `offset`. Adjoint of [`crop`].
pub fn pad<T: Scalar>(x: &Tensor<T>, offset: &[usize], out_shape: &[usize]) -> Result<Tensor<T>> {
    let rank = x.rank();
    if offset.len() != rank || out_shape.len() != rank {
        return shape_err("pad: rank mismatch");
    }
    for a in 0..rank {
        if offset[a] + x.shape()[a] > out_shape[a] {
            return shape_err(format!(
                "pad: {:?} at {offset:?} does not fit in {out_shape:?}",
                x.shape()
            ));
        }
    }
    let mut out = Tensor::zeros(out_shape);
    if rank == 0 {
        out.data_mut()[0] = x.item();
        return Ok(out);
    }
    let st = row_major_strides(out_shape);
    let inner = x.shape()[rank - 1];
    let outer: usize = x.shape()[..rank - 1].iter().product();
    let mut idx = vec![0usize; rank - 1];
    let src = x.data();
    let dst = out.data_mut();
    for row in 0..outer {
        let mut off = offset[rank - 1];
        for a in 0..rank - 1 {
            off += (offset[a] + idx[a]) * st[a];
        }
        dst[off..off + inner].copy_from_slice(&src[row * inner..(row + 1) * inner]);
        for a in (0..rank - 1).rev() {
            idx[a] += 1;
            if idx[a] < x.shape()[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    Ok(out)
}

/// Extracts the block of `extent` at `offset`.
pub fn crop<T: Scalar>(x: &Tensor<T>, offset: &[usize], extent: &[usize]) -> Result<Tensor<T>> {
    x.crop(offset, extent)
}

/// Two-tap linear interpolation table for one axis: `(i0, i1, w0, w1)` per
/// output sample.
pub(crate) type Taps = Vec<(usize, usize, f64, f64)>;

/// Half-voxel-aligned linear interpolation from `n_in` to `n_out` samples.
/// Output `i` reads source coordinate `(i + 0.5)·n_in/n_out − 0.5`, clamped to
/// `[0, n_in − 1]` or wrapped when `circular`.
pub(crate) fn linear_taps(n_in: usize, n_out: usize, circular: bool) -> Taps {
    let ratio = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|i| {
            let src = (i as f64 + 0.5) * ratio - 0.5;
            if circular {
                let f = src.floor();
                let t = src - f;
                let i0 = (f as i64).rem_euclid(n_in as i64) as usize;
                let i1 = (i0 + 1) % n_in;
                (i0, i1, 1.0 - t, t)
            } else {
                let s = src.clamp(0.0, (n_in - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                let t = s - i0 as f64;
                (i0, i1, 1.0 - t, t)
            }
        })
        .collect()
}

/// Applies `taps` along `axis`, producing an axis of `taps.len()` samples.
pub(crate) fn apply_taps<T: Scalar>(x: &Tensor<T>, axis: usize, taps: &Taps) -> Tensor<T> {
    let shape = x.shape();
    let n = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let m = taps.len();
    let mut out_shape = shape.to_vec();
    out_shape[axis] = m;
    let src = x.data();
    let mut out = vec![T::zero(); outer * m * inner];
    let taps_t: Vec<(usize, usize, T, T)> = taps
        .iter()
        .map(|&(a, b, wa, wb)| (a, b, T::lit(wa), T::lit(wb)))
        .collect();
    for o in 0..outer {
        let xs = &src[o * n * inner..(o + 1) * n * inner];
        let ys = &mut out[o * m * inner..(o + 1) * m * inner];
        for (i, &(i0, i1, w0, w1)) in taps_t.iter().enumerate() {
            let a = &xs[i0 * inner..(i0 + 1) * inner];
            let b = &xs[i1 * inner..(i1 + 1) * inner];
            for ((y, &va), &vb) in ys[i * inner..(i + 1) * inner].iter_mut().zip(a).zip(b) {
                *y = w0 * va + w1 * vb;
            }
        }
    }
    Tensor::new(&out_shape, out).expect("tap output shape")
}

/// Transpose of [`apply_taps`]: scatters an axis of `taps.len()` samples back
/// onto `n_in` samples.
pub(crate) fn apply_taps_adjoint<T: Scalar>(
    g: &Tensor<T>,
    axis: usize,
    taps: &Taps,
    n_in: usize,
) -> Tensor<T> {
    let shape = g.shape();
    let m = shape[axis];
    debug_assert_eq!(m, taps.len());
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out_shape = shape.to_vec();
    out_shape[axis] = n_in;
    let src = g.data();
    let mut out = vec![T::zero(); outer * n_in * inner];
    let taps_t: Vec<(usize, usize, T, T)> = taps
        .iter()
        .map(|&(a, b, wa, wb)| (a, b, T::lit(wa), T::lit(wb)))
        .collect();
    for o in 0..outer {
        let gs = &src[o * m * inner..(o + 1) * m * inner];
        let xs = &mut out[o * n_in * inner..(o + 1) * n_in * inner];
        for (i, &(i0, i1, w0, w1)) in taps_t.iter().enumerate() {
            let gi = &gs[i * inner..(i + 1) * inner];
            for (x, &v) in xs[i0 * inner..(i0 + 1) * inner].iter_mut().zip(gi) {
                *x += w0 * v;
            }
            for (x, &v) in xs[i1 * inner..(i1 + 1) * inner].iter_mut().zip(gi) {
                *x += w1 * v;
            }
        }
    }
    Tensor::new(&out_shape, out).expect("tap adjoint shape")
}

/// Trilinear resize of a `C×D×H×W` tensor by an integer factor with
/// half-voxel alignment and edge clamping.
pub fn trilinear_resize<T: Scalar>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor == 0 {
        return invalid("resize factor must be at least 1");
    }
    let [_, d, h, w] = x.dims4()?;
    if factor == 1 {
        return Ok(x.clone());
    }
    let mut y = apply_taps(x, 1, &linear_taps(d, d * factor, false));
    y = apply_taps(&y, 2, &linear_taps(h, h * factor, false));
    Ok(apply_taps(&y, 3, &linear_taps(w, w * factor, false)))
}

/// Adjoint of [`trilinear_resize`]: maps a gradient on the fine grid back to
/// the coarse grid of spatial extents `src`.
pub fn trilinear_resize_adjoint<T: Scalar>(
    g: &Tensor<T>,
    factor: usize,
    src: [usize; 3],
) -> Result<Tensor<T>> {
    if factor == 0 {
        return invalid("resize factor must be at least 1");
    }
    let [_, d, h, w] = g.dims4()?;
    if d != src[0] * factor || h != src[1] * factor || w != src[2] * factor {
        return shape_err(format!(
            "resize adjoint: {:?} is not {src:?} scaled by {factor}",
            g.shape()
        ));
    }
    if factor == 1 {
        return Ok(g.clone());
    }
    let mut y = apply_taps_adjoint(g, 3, &linear_taps(src[2], w, false), src[2]);
    y = apply_taps_adjoint(&y, 2, &linear_taps(src[1], h, false), src[1]);
    Ok(apply_taps_adjoint(&y, 1, &linear_taps(src[0], d, false), src[0]))
}

/// 2× mean pooling over the three spatial axes; a trailing odd sample on any
/// axis is dropped.
pub fn mean_pool2<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [c, d, h, w] = x.dims4()?;
    let (od, oh, ow) = (d / 2, h / 2, w / 2);
    if od == 0 || oh == 0 || ow == 0 {
        return shape_err(format!("mean pool of {:?} leaves an empty axis", x.shape()));
    }
    let eighth = T::lit(0.125);
    let src = x.data();
    let mut out = Vec::with_capacity(c * od * oh * ow);
    for ch in 0..c {
        for z in 0..od {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut s = T::zero();
                    for dz in 0..2 {
                        for dy in 0..2 {
                            let base = ((ch * d + 2 * z + dz) * h + 2 * y + dy) * w + 2 * xx;
                            s += src[base] + src[base + 1];
                        }
                    }
                    out.push(s * eighth);
                }
            }
        }
    }
    Tensor::new(&[c, od, oh, ow], out)
}

/// Adjoint of [`mean_pool2`] onto an input of spatial extents `src`.
pub fn mean_pool2_adjoint<T: Scalar>(g: &Tensor<T>, src: [usize; 3]) -> Result<Tensor<T>> {
    let [c, od, oh, ow] = g.dims4()?;
    let [d, h, w] = src;
    if d / 2 != od || h / 2 != oh || w / 2 != ow {
        return shape_err(format!("pool adjoint: {:?} does not pool from {src:?}", g.shape()));
    }
    let eighth = T::lit(0.125);
    let gs = g.data();
    let mut out = vec![T::zero(); c * d * h * w];
    for ch in 0..c {
        for z in 0..od {
            for y in 0..oh {
                for xx in 0..ow {
                    let v = gs[((ch * od + z) * oh + y) * ow + xx] * eighth;
                    for dz in 0..2 {
                        for dy in 0..2 {
                            let base = ((ch * d + 2 * z + dz) * h + 2 * y + dy) * w + 2 * xx;
                            out[base] = v;
                            out[base + 1] = v;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[c, d, h, w], out)
}

/// Sum over all non-leading axes: `C×…` → `C`.
pub fn channel_sum<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let c = *x.shape().first().ok_or_else(|| {
        crate::error::Error::Shape("channel_sum of a rank-0 tensor".into())
    })?;
    let per = x.len() / c;
    Tensor::new(
        &[c],
        x.data()
            .chunks(per)
            .map(|ch| ch.iter().fold(T::zero(), |a, &v| a + v))
            .collect(),
    )
}

/// Repeats `b[c]` over every element of channel `c` in `shape`.
pub fn channel_broadcast<T: Scalar>(b: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    if b.rank() != 1 || shape.first() != Some(&b.len()) {
        return shape_err(format!(
            "cannot broadcast {:?} over channels of {shape:?}",
            b.shape()
        ));
    }
    let per: usize = shape[1..].iter().product();
    let mut out = Vec::with_capacity(b.len() * per);
    for &v in b.data() {
        out.extend(std::iter::repeat_n(v, per));
    }
    Tensor::new(shape, out)
}

/// `y[c, …] = x[c, …] · s[c]`.
pub fn mul_channel<T: Scalar>(x: &Tensor<T>, s: &Tensor<T>) -> Result<Tensor<T>> {
    let c = x.shape().first().copied().unwrap_or(0);
    if s.rank() != 1 || s.len() != c {
        return shape_err(format!(
            "channel scale {:?} does not match {:?}",
            s.shape(),
            x.shape()
        ));
    }
    let per = x.len() / c;
    let mut out = x.data().to_vec();
    for (chunk, &sv) in out.chunks_mut(per).zip(s.data()) {
        for v in chunk {
            *v *= sv;
        }
    }
    Tensor::new(x.shape(), out)
}

/// Concatenates along the leading (channel) axis.
pub fn concat_channels<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| crate::error::Error::Shape("concat of zero tensors".into()))?;
    let rest = &first.shape()[1..];
    let mut c = 0;
    let mut data = Vec::new();
    for p in parts {
        if p.rank() != first.rank() || &p.shape()[1..] != rest {
            return shape_err(format!(
                "concat: {:?} vs {:?}",
                p.shape(),
                first.shape()
            ));
        }
        c += p.shape()[0];
        data.extend_from_slice(p.data());
    }
    let mut shape = first.shape().to_vec();
    shape[0] = c;
    Tensor::new(&shape, data)
}
