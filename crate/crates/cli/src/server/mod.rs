//! Read-only HTTP service over one checkpoint and one prepared dataset.

mod handlers;

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::routing::get;
use axum::Router;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::{OnceCell, Semaphore};

use earthgan::grid::io::read_volume_header;
use earthgan::grid::{load_volume, ShellGrid};
use earthgan::inference::{plan_wedges, truth_shell, BlendMode, ShellFrame, Surrogate, WedgeGeometry};
use earthgan::models::Checkpoint;

use crate::error::{CliError, CliResult};
use crate::resolve::{at_path, load_manifest};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    pub bind: String,
    pub checkpoint: PathBuf,
    pub manifest: PathBuf,
    /// Concurrent generation jobs; further requests get 503.
    pub workers: usize,
    pub timeout_secs: f64,
    pub stride: usize,
    pub blend: BlendMode,
    /// Load prepared high-res volumes as the `truth` source.
    pub truth: bool,
    /// Stitched EGV1 shells served as `fake` for their timestep instead of
    /// running the model.
    pub precomputed: Vec<PathBuf>,
    /// Metrics log; defaults to `metrics.csv` beside the checkpoint.
    pub metrics: Option<PathBuf>,
    /// Stitched shells kept in memory.
    pub cache_capacity: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            checkpoint: PathBuf::new(),
            manifest: PathBuf::new(),
            workers: 2,
            timeout_secs: 120.0,
            stride: 3,
            blend: BlendMode::Feather,
            truth: true,
            precomputed: Vec::new(),
            metrics: None,
            cache_capacity: 16,
        }
    }
}

impl ServerConfig {
    /// Reads a TOML config; relative paths resolve against its directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
        let mut cfg: Self = toml::from_str(&text)
            .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.checkpoint);
        fix(&mut cfg.manifest);
        cfg.precomputed.iter_mut().for_each(fix);
        if let Some(m) = cfg.metrics.as_mut() {
            fix(m);
        }
        Ok(cfg)
    }
}

struct Timestep {
    lr: ShellGrid<f32>,
    truth: Option<ShellGrid<f32>>,
    precomputed: Option<Arc<ShellGrid<f32>>>,
}

type ShellCell = Arc<OnceCell<Arc<ShellGrid<f32>>>>;

struct Inner {
    surrogate: Surrogate<f32>,
    frame: ShellFrame,
    geometry: WedgeGeometry,
    steps: BTreeMap<u64, Timestep>,
    meta: serde_json::Value,
    pool: Arc<Semaphore>,
    timeout: Duration,
    stride: usize,
    blend: BlendMode,
    metrics: Option<PathBuf>,
    cache: Mutex<ShellCache>,
    cache_capacity: usize,
    computed: AtomicUsize,
}

#[derive(Default)]
struct ShellCache {
    cells: HashMap<(u64, String), ShellCell>,
    order: VecDeque<(u64, String)>,
}

/// Shared service state; cheap to clone.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

fn crop_to(shell: ShellGrid<f32>, geo: &WedgeGeometry) -> CliResult<ShellGrid<f32>> {
    if shell.radial_count() == geo.out[0] {
        return Ok(shell);
    }
    Ok(truth_shell(&shell, geo)?)
}

impl AppState {
    pub fn load(cfg: &ServerConfig) -> CliResult<Self> {
        if cfg.workers == 0 {
            return Err(CliError::validation("workers must be at least 1"));
        }
        if !(cfg.timeout_secs > 0.0) {
            return Err(CliError::validation("timeout_secs must be positive"));
        }
        let ck = at_path(Checkpoint::<f32>::load(&cfg.checkpoint), &cfg.checkpoint)?;
        let (manifest, base) = load_manifest(&cfg.manifest)?;
        at_path(manifest.validate(&base), &cfg.manifest)?;
        if manifest.prepared.is_empty() {
            return Err(CliError::validation(format!(
                "{} lists no prepared volumes",
                cfg.manifest.display()
            )));
        }
        if ck.stats_ref != manifest.stats_digest() {
            return Err(CliError::validation(format!(
                "checkpoint stats reference {:?} does not match manifest stats {:?}",
                ck.stats_ref,
                manifest.stats_digest()
            )));
        }
        let fingerprint = ck.fingerprint();
        let (step, epoch, stats_ref) = (ck.step, ck.epoch, ck.stats_ref.clone());
        let surrogate = Surrogate::new(ck.generator, ck.stats_ref);

        let first = &manifest.prepared[0];
        let hr_head = at_path(read_volume_header(base.join(&first.hr)), &first.hr)?;
        let frame = ShellFrame {
            radial: hr_head.dims[1],
            lat: hr_head.dims[2],
            lon: hr_head.dims[3],
        };
        let mut precomputed = BTreeMap::new();
        let mut steps = BTreeMap::new();
        let mut geometry = None;
        for e in &manifest.prepared {
            let lr: ShellGrid<f32> = at_path(load_volume(base.join(&e.lr)), &e.lr)?;
            let geo = surrogate.geometry(&lr, frame)?;
            geo.check_lat_cover()?;
            plan_wedges(lr.lon(), cfg.stride)?;
            let truth = if cfg.truth {
                let hr = at_path(load_volume(base.join(&e.hr)), &e.hr)?;
                Some(truth_shell(&hr, &geo)?)
            } else {
                None
            };
            geometry = Some(geo);
            steps.insert(
                e.timestep,
                Timestep {
                    lr,
                    truth,
                    precomputed: None,
                },
            );
        }
        let geometry = geometry.expect("at least one prepared volume");
        for p in &cfg.precomputed {
            let g = crop_to(at_path(load_volume(p), p)?, &geometry)?;
            let want = geometry.shell_dims(g.var_count());
            if g.dims() != want {
                return Err(CliError::validation(format!(
                    "{}: precomputed shell dims {:?}, expected {want:?}",
                    p.display(),
                    g.dims()
                )));
            }
            precomputed.insert(g.timestep(), Arc::new(g));
        }
        for (t, g) in precomputed {
            match steps.get_mut(&t) {
                Some(s) => s.precomputed = Some(g),
                None => {
                    return Err(CliError::validation(format!(
                        "precomputed shell for unknown timestep {t}"
                    )))
                }
            }
        }
        let metrics = cfg
            .metrics
            .clone()
            .or_else(|| cfg.checkpoint.parent().map(|d| d.join("metrics.csv")))
            .filter(|p| p.exists());

        let any = steps.values().next().expect("non-empty");
        let has_truth = any.truth.is_some();
        let mut sources = vec!["fake"];
        if has_truth {
            sources.extend(["truth", "diff"]);
        }
        let [v, r, h, w] = geometry.shell_dims(any.lr.var_count());
        let stats: Vec<_> = any
            .lr
            .variables()
            .iter()
            .zip(any.lr.stats().unwrap_or_default())
            .map(|(n, s)| json!({"variable": n, "min": s.min, "max": s.max, "degenerate": s.degenerate}))
            .collect();
        let meta = json!({
            "variables": any.lr.variables(),
            "dims": {"variables": v, "radial": r, "lat": h, "lon": w},
            "radial_count": r,
            "frame": {"radial": frame.radial, "lat": frame.lat, "lon": frame.lon},
            "timesteps": steps.keys().collect::<Vec<_>>(),
            "checkpoint": {
                "fingerprint": fingerprint,
                "step": step,
                "epoch": epoch,
                "stats_ref": stats_ref,
            },
            "stats": stats,
            "sources": sources,
            "noise": ["zero", "seed:N", "avg:N"],
            "stitch": {
                "stride": cfg.stride,
                "blend": cfg.blend,
                "wedges": any.lr.lon() / cfg.stride,
                "wedge_dims": [v, geometry.out[0], geometry.out[1], geometry.out[2]],
            },
            "lon_starts": any.lr.lon(),
            "metrics": metrics.is_some(),
        });
        Ok(Self {
            inner: Arc::new(Inner {
                surrogate,
                frame,
                geometry,
                steps,
                meta,
                pool: Arc::new(Semaphore::new(cfg.workers)),
                timeout: Duration::from_secs_f64(cfg.timeout_secs),
                stride: cfg.stride,
                blend: cfg.blend,
                metrics,
                cache: Mutex::new(ShellCache::default()),
                cache_capacity: cfg.cache_capacity,
                computed: AtomicUsize::new(0),
            }),
        })
    }

    /// Shells generated so far (cache misses that ran the model).
    pub fn shells_computed(&self) -> usize {
        self.inner.computed.load(Ordering::SeqCst)
    }

    pub fn meta(&self) -> &serde_json::Value {
        &self.inner.meta
    }

    /// The cache cell for `key`, evicting the oldest entry when full.
    fn shell_cell(&self, key: (u64, String)) -> ShellCell {
        let capacity = self.inner.cache_capacity;
        let mut c = self.inner.cache.lock().expect("cache lock");
        if let Some(cell) = c.cells.get(&key) {
            return cell.clone();
        }
        while c.order.len() >= capacity.max(1) {
            if let Some(old) = c.order.pop_front() {
                c.cells.remove(&old);
            }
        }
        let cell = ShellCell::default();
        c.cells.insert(key.clone(), cell.clone());
        c.order.push_back(key);
        cell
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/meta", get(handlers::meta))
        .route("/api/shell", get(handlers::shell))
        .route("/api/wedge", get(handlers::wedge))
        .route("/api/metrics", get(handlers::metrics))
        .with_state(state)
}

pub async fn serve(cfg: ServerConfig) -> CliResult<()> {
    let state = tokio::task::spawn_blocking({
        let cfg = cfg.clone();
        move || AppState::load(&cfg)
    })
    .await
    .map_err(|e| CliError::runtime(format!("loading service state: {e}")))??;
    let listener = tokio::net::TcpListener::bind(&cfg.bind)
        .await
        .map_err(|e| CliError::runtime(format!("bind {}: {e}", cfg.bind)))?;
    eprintln!("earthgan: listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| CliError::runtime(format!("server: {e}")))
}
