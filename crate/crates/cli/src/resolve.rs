//! Locating the low-res input and high-res frame behind a `--volume` path.

use std::path::{Path, PathBuf};

use earthgan::grid::io::read_volume_header;
use earthgan::grid::{load_volume, DatasetManifest, ShellGrid};
use earthgan::inference::ShellFrame;

use crate::error::{CliError, CliResult};

/// Adds the offending path to I/O errors.
pub fn at_path<T>(r: earthgan::Result<T>, path: &Path) -> CliResult<T> {
    r.map_err(|e| {
        let mut err = CliError::from(e);
        err.message = format!("{}: {}", path.display(), err.message);
        err
    })
}

pub fn load_manifest(path: &Path) -> CliResult<(DatasetManifest, PathBuf)> {
    let m = at_path(DatasetManifest::load(path), path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((m, base))
}

pub struct VolumeSource {
    pub lr: ShellGrid<f32>,
    pub frame: ShellFrame,
    /// Prepared high-res volume of the same timestep, when known.
    pub hr_path: Option<PathBuf>,
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

/// `volume` is a prepared EGV1 file, either the low-res or the high-res
/// member of a manifest entry. The manifest defaults to `manifest.toml` in
/// the volume's directory. An explicit `frame` (`radial, lat, lon`) lets a
/// bare low-res volume be used without a manifest.
pub fn resolve_volume(
    volume: &Path,
    manifest: Option<&Path>,
    frame: Option<[usize; 3]>,
) -> CliResult<VolumeSource> {
    if !volume.exists() {
        return Err(CliError::validation(format!("{}: no such volume", volume.display())));
    }
    let sibling = volume.parent().map(|d| d.join("manifest.toml"));
    let manifest_path = match manifest {
        Some(p) => Some(p.to_path_buf()),
        None => sibling.filter(|p| p.exists()),
    };
    if let Some(mp) = manifest_path {
        let (m, base) = load_manifest(&mp)?;
        let entry = m
            .prepared
            .iter()
            .find(|e| same_file(&base.join(&e.lr), volume) || same_file(&base.join(&e.hr), volume));
        if let Some(e) = entry {
            let lr_path = base.join(&e.lr);
            let hr_path = base.join(&e.hr);
            let lr = at_path(load_volume(&lr_path), &lr_path)?;
            let frame = match frame {
                Some([radial, lat, lon]) => ShellFrame { radial, lat, lon },
                None => {
                    let h = at_path(read_volume_header(&hr_path), &hr_path)?;
                    ShellFrame {
                        radial: h.dims[1],
                        lat: h.dims[2],
                        lon: h.dims[3],
                    }
                }
            };
            return Ok(VolumeSource {
                lr,
                frame,
                hr_path: Some(hr_path),
            });
        }
        if frame.is_none() {
            return Err(CliError::validation(format!(
                "{} is not a prepared volume of {}",
                volume.display(),
                mp.display()
            )));
        }
    }
    match frame {
        Some([radial, lat, lon]) => Ok(VolumeSource {
            lr: at_path(load_volume(volume), volume)?,
            frame: ShellFrame { radial, lat, lon },
            hr_path: None,
        }),
        None => Err(CliError::validation(format!(
            "cannot determine the high-res frame of {}; pass --manifest or --frame",
            volume.display()
        ))),
    }
}
