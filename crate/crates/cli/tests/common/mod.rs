#![allow(dead_code)]

use std::path::{Path, PathBuf};

use earthgan::grid::manifest::{prepare_dataset, VolumeEntry};
use earthgan::grid::pair::PairGeometry;
use earthgan::grid::{save_volume, synth_shell, DatasetManifest, PrepParams};
use earthgan::models::{Checkpoint, Generator, GeneratorConfig};
use earthgan_cli::server::ServerConfig;

/// 108×216 shells with 22 radial layers.
pub const SHELL_DIMS: [usize; 4] = [4, 22, 108, 216];

pub fn shell_prep() -> PrepParams {
    PrepParams {
        scale_ratio: 1.0,
        downsample: 8,
        lat_pad: (2, 2),
        radial_select: 8,
        geometry: PairGeometry::new([8, 20, 10]).unwrap(),
    }
}

/// Micro channel widths over the full-latitude window.
pub fn shell_generator() -> GeneratorConfig {
    GeneratorConfig {
        input_window: [8, 20, 10],
        ..GeneratorConfig::micro()
    }
}

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub manifest: PathBuf,
    pub checkpoint: PathBuf,
}

impl Fixture {
    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn config(&self) -> ServerConfig {
        ServerConfig {
            checkpoint: self.checkpoint.clone(),
            manifest: self.manifest.clone(),
            ..ServerConfig::default()
        }
    }

    /// Prepared high-res volume of the first timestep.
    pub fn hr_volume(&self) -> PathBuf {
        self.path().join("prepared/hr_000000.egv")
    }

    pub fn lr_volume(&self) -> PathBuf {
        self.path().join("prepared/lr_000000.egv")
    }
}

/// Two synthetic timesteps prepared into `prepared/`, plus an untrained
/// generator checkpoint carrying the dataset's stats reference.
pub fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let mut m = DatasetManifest {
        prep: shell_prep(),
        ..Default::default()
    };
    for t in 0..2u64 {
        let mut g = synth_shell::<f32>(40 + t, SHELL_DIMS, 5).unwrap();
        g.set_timestep(t);
        let name = format!("raw_{t}.egv");
        save_volume(&g, dir.path().join(&name)).unwrap();
        m.volumes.push(VolumeEntry {
            path: name.into(),
            timestep: t,
        });
    }
    m.save(dir.path().join("raw.toml")).unwrap();
    let out = dir.path().join("prepared");
    let p = prepare_dataset(&m, dir.path(), &out).unwrap();
    let mut ck = Checkpoint::generator_only(Generator::<f32>::new(shell_generator(), 3).unwrap());
    ck.stats_ref = p.stats_digest();
    let run = dir.path().join("run");
    std::fs::create_dir_all(&run).unwrap();
    let checkpoint = run.join("model.egw");
    ck.save(&checkpoint).unwrap();
    Fixture {
        manifest: out.join("manifest.toml"),
        checkpoint,
        dir,
    }
}
