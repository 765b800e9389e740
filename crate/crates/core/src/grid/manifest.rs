//! Dataset manifest: the TOML file tying raw volumes, preparation
//! parameters, shared normalization stats and prepared pairs together.
//!
//! Paths are stored relative to the directory holding the manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

use super::io::{load_volume, read_volume_header, save_volume};
use super::pair::{PairGeometry, UPSCALE};
use super::synth::synth_shell;
use super::prep::{
    block_downsample_latlon, compute_stats, mirror_pad, normalize_with, rescale_latlon,
    select_radial, PadAmounts,
};
use super::shell::{ShellGrid, VarStats};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrepParams {
    /// Lat/lon rescale ratio in `(0, 1]`.
    pub scale_ratio: f64,
    pub downsample: usize,
    /// Mirror rows `(before, after)` added to the rescaled high-res grid
    /// before downsampling.
    pub lat_pad: (usize, usize),
    /// Radial layers kept in the low-res grid.
    pub radial_select: usize,
    #[serde(default)]
    pub geometry: PairGeometry,
}

impl Default for PrepParams {
    fn default() -> Self {
        Self {
            scale_ratio: 0.6,
            downsample: UPSCALE,
            lat_pad: (2, 2),
            radial_select: 30,
            geometry: PairGeometry::default(),
        }
    }
}

impl PrepParams {
    /// Desk-scale preparation: 4×22×32×64 raw grids, no rescale or lat
    /// padding, 8 radial layers, 8³ input windows.
    pub fn micro() -> Self {
        Self {
            scale_ratio: 1.0,
            downsample: UPSCALE,
            lat_pad: (0, 0),
            radial_select: 8,
            geometry: PairGeometry::new([8, 8, 8]).expect("valid micro window"),
        }
    }
}

/// Raw grid extents matching [`PrepParams::micro`].
pub const MICRO_DIMS: [usize; 4] = [4, 22, 32, 64];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeEntry {
    pub path: PathBuf,
    pub timestep: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreparedEntry {
    pub timestep: u64,
    /// Rescaled, normalized high-res grid.
    pub hr: PathBuf,
    /// Padded, downsampled, radially selected low-res grid.
    pub lr: PathBuf,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub prep: PrepParams,
    #[serde(default)]
    pub volumes: Vec<VolumeEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<Vec<VarStats>>,
    #[serde(default)]
    pub prepared: Vec<PreparedEntry>,
}

impl DatasetManifest {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(format!("manifest: {e}")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("manifest: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    /// Hex SHA-256 of the normalization stats, the reference checkpoints
    /// carry to prove they were trained against this dataset.
    pub fn stats_digest(&self) -> Option<String> {
        self.stats.as_ref().map(|s| stats_digest(s))
    }

    /// Checks every referenced file exists and dimensions agree.
    pub fn validate(&self, base: &Path) -> Result<()> {
        let mut raw_dims = None;
        for v in &self.volumes {
            let h = read_volume_header(base.join(&v.path)).map_err(|e| with_path(e, &v.path))?;
            if *raw_dims.get_or_insert(h.dims) != h.dims {
                return invalid(format!(
                    "{} has dims {:?}, other raw volumes {:?}",
                    v.path.display(),
                    h.dims,
                    raw_dims.unwrap()
                ));
            }
        }
        if !self.prepared.is_empty() && self.stats.is_none() {
            return invalid("prepared volumes listed without normalization stats");
        }
        let mut dims = None;
        for p in &self.prepared {
            let hr = read_volume_header(base.join(&p.hr)).map_err(|e| with_path(e, &p.hr))?;
            let lr = read_volume_header(base.join(&p.lr)).map_err(|e| with_path(e, &p.lr))?;
            if hr.timestep != p.timestep || lr.timestep != p.timestep {
                return Err(Error::Provenance(format!(
                    "timestep {} does not match its files",
                    p.timestep
                )));
            }
            if hr.stats.as_ref() != self.stats.as_ref() || lr.stats.as_ref() != self.stats.as_ref() {
                return Err(Error::Provenance(format!(
                    "timestep {} was normalized with different stats",
                    p.timestep
                )));
            }
            let pair = (hr.dims, lr.dims);
            if *dims.get_or_insert(pair) != pair {
                return invalid(format!("timestep {} has mismatched dimensions", p.timestep));
            }
            if hr.dims[3] != self.prep.downsample * lr.dims[3] {
                return invalid(format!(
                    "timestep {}: high-res longitude {} vs low-res {}",
                    p.timestep, hr.dims[3], lr.dims[3]
                ));
            }
        }
        Ok(())
    }

    /// Loads the prepared pair for entry `i`.
    pub fn load_prepared<T: Scalar>(&self, base: &Path, i: usize) -> Result<(ShellGrid<T>, ShellGrid<T>)> {
        let p = self
            .prepared
            .get(i)
            .ok_or_else(|| Error::Index(format!("no prepared entry {i}")))?;
        Ok((load_volume(base.join(&p.hr))?, load_volume(base.join(&p.lr))?))
    }
}

fn with_path(e: Error, p: &Path) -> Error {
    match e {
        Error::Io(io) => Error::InvalidArgument(format!("{}: {io}", p.display())),
        other => Error::Format(format!("{}: {other}", p.display())),
    }
}

pub fn stats_digest(stats: &[VarStats]) -> String {
    let mut h = Sha256::new();
    for s in stats {
        h.update((s.min as f32).to_le_bytes());
        h.update((s.max as f32).to_le_bytes());
        h.update([s.degenerate as u8]);
    }
    hex::encode(h.finalize())
}

/// High-res and low-res grids from one raw grid, given shared stats.
pub fn prepare_grid<T: Scalar>(
    raw: &ShellGrid<T>,
    prep: &PrepParams,
    stats: &[VarStats],
) -> Result<(ShellGrid<T>, ShellGrid<T>)> {
    let scaled = if prep.scale_ratio == 1.0 {
        raw.clone()
    } else {
        rescale_latlon(raw, prep.scale_ratio)?
    };
    let hr = normalize_with(&scaled, stats)?;
    let padded = mirror_pad(&hr, PadAmounts::lat(prep.lat_pad.0, prep.lat_pad.1))?;
    let lr = block_downsample_latlon(&padded, prep.downsample)?;
    let lr = select_radial(&lr, prep.radial_select)?;
    Ok((hr, lr))
}

/// Synthetic plume volume prepared with its own stats under `prep`.
pub fn synth_prepared<T: Scalar>(
    seed: u64,
    dims: [usize; 4],
    plumes: usize,
    prep: &PrepParams,
) -> Result<(ShellGrid<T>, ShellGrid<T>)> {
    let raw = synth_shell::<T>(seed, dims, plumes)?;
    let scaled = if prep.scale_ratio == 1.0 {
        raw
    } else {
        rescale_latlon(&raw, prep.scale_ratio)?
    };
    let stats = compute_stats([&scaled])?;
    let mut p = prep.clone();
    p.scale_ratio = 1.0;
    prepare_grid(&scaled, &p, &stats)
}

/// Runs rescale → normalize → pad → downsample → radial selection over
/// every raw volume and writes the prepared volumes plus an updated
/// manifest into `out`. Returns the updated manifest.
pub fn prepare_dataset(manifest: &DatasetManifest, base: &Path, out: &Path) -> Result<DatasetManifest> {
    if manifest.volumes.is_empty() {
        return invalid("manifest lists no raw volumes");
    }
    manifest.validate(base)?;
    fs::create_dir_all(out)?;
    // two passes so only one raw volume is resident at a time
    let mut stats: Option<Vec<VarStats>> = None;
    for v in &manifest.volumes {
        let raw: ShellGrid<f32> = load_volume(base.join(&v.path))?;
        let scaled = if manifest.prep.scale_ratio == 1.0 {
            raw
        } else {
            rescale_latlon(&raw, manifest.prep.scale_ratio)?
        };
        let s = compute_stats([&scaled])?;
        stats = Some(match stats {
            None => s,
            Some(acc) => acc
                .iter()
                .zip(&s)
                .map(|(a, b)| VarStats::new(a.min.min(b.min), a.max.max(b.max)))
                .collect(),
        });
    }
    let stats = stats.unwrap();
    let mut updated = manifest.clone();
    updated.stats = Some(stats.clone());
    updated.prepared.clear();
    for v in &manifest.volumes {
        let mut raw: ShellGrid<f32> = load_volume(base.join(&v.path))?;
        raw.set_timestep(v.timestep);
        let (hr, lr) = prepare_grid(&raw, &manifest.prep, &stats)?;
        let hr_name = PathBuf::from(format!("hr_{:06}.egv", v.timestep));
        let lr_name = PathBuf::from(format!("lr_{:06}.egv", v.timestep));
        save_volume(&hr, out.join(&hr_name))?;
        save_volume(&lr, out.join(&lr_name))?;
        updated.prepared.push(PreparedEntry {
            timestep: v.timestep,
            hr: hr_name,
            lr: lr_name,
        });
    }
    // raw paths stay valid relative to the new manifest location
    for v in &mut updated.volumes {
        let abs = base.join(&v.path);
        v.path = fs::canonicalize(&abs).unwrap_or(abs);
    }
    updated.save(out.join("manifest.toml"))?;
    Ok(updated)
}
