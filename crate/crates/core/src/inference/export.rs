use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{save_volume, ShellGrid, VarStats};
use crate::scalar::Scalar;

pub fn export_shell<T: Scalar>(shell: &ShellGrid<T>, path: impl AsRef<Path>) -> Result<()> {
    save_volume(shell, path)
}

/// One `lat × lon` layer as f32, after bounds checks.
pub fn slice_layer<T: Scalar>(shell: &ShellGrid<T>, var: usize, radial: usize) -> Result<Vec<f32>> {
    let [v, r, _, _] = shell.dims();
    if var >= v {
        return Err(Error::Index(format!("variable {var} outside 0..{}", v - 1)));
    }
    if radial >= r {
        return Err(Error::Index(format!(
            "radial index {radial} outside 0..{}",
            r.saturating_sub(1)
        )));
    }
    Ok(shell
        .layer(var, radial)
        .iter()
        .map(|x| x.to_f64_lossy() as f32)
        .collect())
}

/// Sidecar describing an exported slice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceInfo {
    pub variable: String,
    pub var_index: usize,
    pub radial: usize,
    pub timestep: u64,
    pub lat: usize,
    pub lon: usize,
    pub value_min: f32,
    pub value_max: f32,
    /// Physical range behind the normalized values, when known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stats: Option<VarStats>,
}

#[derive(Clone, Debug)]
pub struct SliceFiles {
    pub raw: PathBuf,
    pub image: PathBuf,
    pub info: PathBuf,
}

/// 8-bit greyscale levels. Normalized shells map `[0, 1]` onto `0..=255`;
/// others stretch their own range.
pub fn grey_levels(values: &[f32], normalized: bool) -> Vec<u8> {
    let (lo, hi) = if normalized {
        (0.0, 1.0)
    } else {
        values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)))
    };
    let span = hi - lo;
    values
        .iter()
        .map(|&x| {
            if !(span > 0.0) {
                return 128;
            }
            (((x - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8
        })
        .collect()
}

/// Writes `<stem>.f32` (little-endian, row-major), `<stem>.png` and
/// `<stem>.toml`.
pub fn export_slice<T: Scalar>(
    shell: &ShellGrid<T>,
    var: usize,
    radial: usize,
    stem: impl AsRef<Path>,
) -> Result<SliceFiles> {
    let values = slice_layer(shell, var, radial)?;
    let stem = stem.as_ref();
    let files = SliceFiles {
        raw: stem.with_extension("f32"),
        image: stem.with_extension("png"),
        info: stem.with_extension("toml"),
    };
    let [_, _, h, w] = shell.dims();
    let bytes: Vec<u8> = values.iter().flat_map(|x| x.to_le_bytes()).collect();
    std::fs::write(&files.raw, bytes)?;

    let grey = grey_levels(&values, shell.stats().is_some());
    image::GrayImage::from_raw(w as u32, h as u32, grey)
        .ok_or_else(|| Error::Format("slice image buffer size".into()))?
        .save(&files.image)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::Io(io),
            other => Error::Format(format!("png encode: {other}")),
        })?;

    let (value_min, value_max) = values
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let info = SliceInfo {
        variable: shell.variables()[var].clone(),
        var_index: var,
        radial,
        timestep: shell.timestep(),
        lat: h,
        lon: w,
        value_min,
        value_max,
        stats: shell.stats().map(|s| s[var]),
    };
    let text = toml::to_string(&info).map_err(|e| Error::Format(format!("slice info: {e}")))?;
    std::fs::write(&files.info, text)?;
    Ok(files)
}
