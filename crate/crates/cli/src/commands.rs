use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use earthgan::grid::io::{decode_header, VOLUME_MAGIC};
use earthgan::grid::manifest::prepare_dataset;
use earthgan::grid::{save_volume, synth_shell, ShellGrid};
use earthgan::inference::{export_shell, BlendMode, Surrogate, WedgeNoise};
use earthgan::models::checkpoint::{read_container, WEIGHTS_MAGIC};
use earthgan::models::Checkpoint;
use earthgan::training::{train, RunConfig};

use crate::error::{CliError, CliResult};
use crate::resolve::{at_path, load_manifest, resolve_volume};
use crate::server::{self, ServerConfig};

const ENV_HELP: &str = "Environment:
  EARTHGAN_BIND      overrides the service bind address (serve)
  EARTHGAN_WORKERS   overrides the service worker-pool size (serve)

Exit codes: 0 success, 1 usage error, 2 format/validation error, 3 runtime failure.";

#[derive(Debug, Parser)]
#[command(name = "earthgan", version, about = "Mantle-convection super-resolution surrogate", after_help = ENV_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

fn parse_dims<const N: usize>(s: &str) -> Result<[usize; N], String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|_| format!("bad dimension {p:?}")))
        .collect::<Result<_, _>>()?;
    parts
        .try_into()
        .map_err(|v: Vec<usize>| format!("expected {N} comma-separated dimensions, got {}", v.len()))
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rescale, normalize, downsample and radially select every raw volume.
    Prepare {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic plume shell.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Variables, radial, lat, lon.
        #[arg(long, value_parser = parse_dims::<4>, default_value = "4,22,32,64")]
        dims: [usize; 4],
        #[arg(long, default_value_t = 6)]
        plumes: usize,
        #[arg(long, default_value_t = 0)]
        timestep: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a prepared dataset.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Run configuration (TOML with [generator], [critic], [train]).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Generate one wedge.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        /// Prepared volume (low-res or high-res member of a manifest entry).
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        lon_start: usize,
        /// zero | seed:N | avg:N
        #[arg(long, default_value = "zero")]
        noise: WedgeNoise,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// High-res radial,lat,lon when no manifest describes the volume.
        #[arg(long, value_parser = parse_dims::<3>)]
        frame: Option<[usize; 3]>,
    },
    /// Generate and stitch a full 360° shell.
    Stitch {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        volume: PathBuf,
        /// Low-res columns between wedge starts.
        #[arg(long, default_value_t = 3)]
        stride: usize,
        /// feather | average | hard
        #[arg(long, default_value = "feather")]
        blend: BlendMode,
        #[arg(long, default_value = "zero")]
        noise: WedgeNoise,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, value_parser = parse_dims::<3>)]
        frame: Option<[usize; 3]>,
    },
    /// Start the HTTP service.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = "EARTHGAN_BIND")]
        bind: Option<String>,
        #[arg(long, env = "EARTHGAN_WORKERS")]
        workers: Option<usize>,
    },
    /// Print header, shape and stats of an EGV1 or EGW1 file.
    Inspect {
        #[arg(long)]
        file: PathBuf,
    },
}

fn load_surrogate(path: &Path) -> CliResult<(Surrogate<f32>, String)> {
    let ck = at_path(Checkpoint::<f32>::load(path), path)?;
    let fp = ck.fingerprint();
    Ok((Surrogate::new(ck.generator, ck.stats_ref), fp))
}

fn toml_text<T: serde::Serialize>(v: &T) -> CliResult<String> {
    toml::to_string(v).map_err(|e| CliError::runtime(format!("encoding report: {e}")))
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> CliResult<()> {
    match cli.command {
        Command::Prepare { manifest, out: dir } => {
            let (m, base) = load_manifest(&manifest)?;
            let p = prepare_dataset(&m, &base, &dir)?;
            writeln!(
                out,
                "prepared {} volumes into {} (stats {})",
                p.prepared.len(),
                dir.display(),
                p.stats_digest().unwrap_or_default()
            )?;
        }
        Command::Synth {
            seed,
            dims,
            plumes,
            timestep,
            out: path,
        } => {
            let mut g = synth_shell::<f32>(seed, dims, plumes)?;
            g.set_timestep(timestep);
            save_volume(&g, &path)?;
            writeln!(out, "wrote {} dims {:?}", path.display(), g.dims())?;
        }
        Command::Train {
            manifest,
            config,
            out: dir,
            resume,
        } => {
            let (m, base) = load_manifest(&manifest)?;
            let text = std::fs::read_to_string(&config)
                .map_err(|e| CliError::validation(format!("{}: {e}", config.display())))?;
            let run = RunConfig::from_toml(&text)?;
            let s = train(&m, &base, &run, &dir, resume.as_deref())?;
            writeln!(
                out,
                "trained to step {}; {} checkpoints; metrics {}",
                s.steps,
                s.checkpoints.len(),
                s.metrics.display()
            )?;
        }
        Command::Infer {
            ckpt,
            volume,
            lon_start,
            noise,
            out: path,
            manifest,
            frame,
        } => {
            let (s, _) = load_surrogate(&ckpt)?;
            let src = resolve_volume(&volume, manifest.as_deref(), frame)?;
            let w = s.wedge(&src.lr, src.frame, lon_start, &noise)?;
            let grid = ShellGrid::new(src.lr.variables().to_vec(), w.timestep, w.data)?
                .with_stats(src.lr.stats().map(<[_]>::to_vec))?;
            save_volume(&grid, &path)?;
            writeln!(
                out,
                "wrote wedge {} dims {:?} hr_lon_start {} noise {noise}",
                path.display(),
                grid.dims(),
                w.hr_lon_start
            )?;
        }
        Command::Stitch {
            ckpt,
            volume,
            stride,
            blend,
            noise,
            workers,
            out: path,
            manifest,
            frame,
        } => {
            let (s, fingerprint) = load_surrogate(&ckpt)?;
            let src = resolve_volume(&volume, manifest.as_deref(), frame)?;
            let r = s.shell(&src.lr, src.frame, stride, blend, &noise, workers)?;
            export_shell(&r.shell, &path)?;
            #[derive(serde::Serialize)]
            struct Report<'a> {
                checkpoint: String,
                noise: String,
                plan: toml::Value,
                seam: &'a earthgan::inference::SeamReport,
            }
            let plan: toml::Value = toml::from_str(&r.plan.to_toml()?)
                .map_err(|e| CliError::runtime(format!("plan echo: {e}")))?;
            let report_path = path.with_extension("stitch.toml");
            let report = Report {
                checkpoint: fingerprint,
                noise: noise.to_string(),
                plan,
                seam: &r.seam,
            };
            std::fs::write(&report_path, toml_text(&report)?)?;
            writeln!(
                out,
                "wrote shell {} dims {:?}; seam ratio {:.4}; report {}",
                path.display(),
                r.shell.dims(),
                r.seam.ratio,
                report_path.display()
            )?;
        }
        Command::Serve {
            config,
            bind,
            workers,
        } => {
            let mut cfg = ServerConfig::load(&config)?;
            if let Some(b) = bind {
                cfg.bind = b;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(server::serve(cfg))?;
        }
        Command::Inspect { file } => inspect(&file, out)?,
    }
    Ok(())
}

fn inspect(path: &Path, out: &mut dyn Write) -> CliResult<()> {
    let bytes = std::fs::read(path).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    let mut doc = toml::Table::new();
    let put = |d: &mut toml::Table, k: &str, v: toml::Value| {
        d.insert(k.into(), v);
    };
    let int = |x: usize| toml::Value::Integer(x as i64);
    if bytes.starts_with(VOLUME_MAGIC) {
        let h = at_path(decode_header(&bytes), path)?;
        put(&mut doc, "format", "EGV1".into());
        put(&mut doc, "version", int(h.version as usize));
        put(&mut doc, "dims", toml::Value::Array(h.dims.iter().map(|&d| int(d)).collect()));
        put(&mut doc, "timestep", int(h.timestep as usize));
        put(
            &mut doc,
            "variables",
            toml::Value::Array(h.variables.iter().map(|v| v.as_str().into()).collect()),
        );
        if let Some(stats) = &h.stats {
            let mut st = toml::Table::new();
            for (name, s) in h.variables.iter().zip(stats) {
                st.insert(
                    name.clone(),
                    toml::Value::Array(vec![s.min.into(), s.max.into()]),
                );
            }
            put(&mut doc, "stats", toml::Value::Table(st));
            put(
                &mut doc,
                "stats_ref",
                earthgan::grid::manifest::stats_digest(stats).into(),
            );
        }
    } else if bytes.starts_with(WEIGHTS_MAGIC) {
        let (header, records) = at_path(read_container(&bytes), path)?;
        put(&mut doc, "format", "EGW1".into());
        put(&mut doc, "tensors", int(records.len()));
        put(&mut doc, "parameters", int(records.iter().map(|(_, t)| t.len()).sum()));
        let h: toml::Table = toml::from_str(&header)
            .map_err(|e| CliError::validation(format!("{}: header: {e}", path.display())))?;
        put(&mut doc, "header", toml::Value::Table(h));
    } else {
        return Err(CliError::validation(format!(
            "{}: not an EGV1 or EGW1 file",
            path.display()
        )));
    }
    write!(out, "{}", toml_text(&doc)?)?;
    Ok(())
}
