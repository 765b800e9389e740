use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{invalid, shape_err, Error, Result};
use crate::grid::manifest::stats_digest;
use crate::grid::pair::{conditioning_window, LatLayout, PairGeometry, TrainingPair, UPSCALE};
use crate::grid::ShellGrid;
use crate::models::{Generator, NoiseMode};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const STREAM_WEDGE: u64 = 0x3ED6;

/// Noise handling for one wedge.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum WedgeNoise {
    Zero,
    Seeded(u64),
    /// Voxelwise mean over one forward pass per seed.
    Averaged(Vec<u64>),
}

impl WedgeNoise {
    /// `n` seeds `0..n`.
    pub fn averaged(n: usize) -> Result<Self> {
        if n == 0 {
            return invalid("averaged noise needs at least one sample");
        }
        Ok(Self::Averaged((0..n as u64).collect()))
    }

    /// Generator noise seed for wedge `lon_start`. Each wedge gets its own
    /// realization so neighbouring wedges are independent.
    fn wedge_seed(seed: u64, lon_start: usize) -> u64 {
        rng::stream(seed, STREAM_WEDGE, lon_start as u64).random()
    }
}

impl FromStr for WedgeNoise {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parse = |v: &str| {
            v.parse::<u64>()
                .map_err(|_| Error::InvalidArgument(format!("bad noise count/seed {v:?}")))
        };
        match s.split_once(':') {
            None if s == "zero" => Ok(Self::Zero),
            Some(("seed", v)) => Ok(Self::Seeded(parse(v)?)),
            Some(("avg", v)) => Self::averaged(parse(v)? as usize),
            _ => invalid(format!("unknown noise mode {s:?} (zero|seed:N|avg:N)")),
        }
    }
}

impl fmt::Display for WedgeNoise {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero => f.write_str("zero"),
            Self::Seeded(k) => write!(f, "seed:{k}"),
            Self::Averaged(s) if s.iter().copied().eq(0..s.len() as u64) => {
                write!(f, "avg:{}", s.len())
            }
            Self::Averaged(s) => write!(f, "avg{s:?}"),
        }
    }
}

/// High-res shell extents `[radial, lat, lon]` that wedges are placed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ShellFrame {
    pub radial: usize,
    pub lat: usize,
    pub lon: usize,
}

impl ShellFrame {
    pub fn of<T: Scalar>(hr: &ShellGrid<T>) -> Self {
        let [_, radial, lat, lon] = hr.dims();
        Self { radial, lat, lon }
    }
}

/// Placement of a generator window inside a shell frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WedgeGeometry {
    pub pair: PairGeometry,
    /// Output extents `[radial, lat, lon]`.
    pub out: [usize; 3],
    pub lat: LatLayout,
    pub radial_start: usize,
    pub frame: ShellFrame,
}

impl WedgeGeometry {
    pub fn new(window: [usize; 3], lr_lat: usize, lr_lon: usize, frame: ShellFrame) -> Result<Self> {
        let pair = PairGeometry::new(window)?;
        if frame.lon != UPSCALE * lr_lon {
            return shape_err(format!(
                "shell longitude {} is not {UPSCALE}× low-res longitude {lr_lon}",
                frame.lon
            ));
        }
        Ok(Self {
            pair,
            out: pair.target()?,
            lat: pair.lat_layout(frame.lat, lr_lat)?,
            radial_start: pair.hr_radial_start(frame.radial)?,
            frame,
        })
    }

    /// Dimensions of the stitched shell: the frame restricted to the
    /// radial layers the generator produces.
    pub fn shell_dims(&self, vars: usize) -> [usize; 4] {
        [vars, self.out[0], self.frame.lat, self.frame.lon]
    }

    /// Fails unless every wedge spans all latitude rows of the frame.
    pub fn check_lat_cover(&self) -> Result<()> {
        let start = self.lat.hr_start;
        if start > 0 || start + (self.out[1] as i64) < self.frame.lat as i64 {
            return shape_err(format!(
                "wedge rows [{start}, {}) do not cover the {} shell rows",
                start + self.out[1] as i64,
                self.frame.lat
            ));
        }
        Ok(())
    }
}

/// One generated (or truth-cut) longitudinal slice.
#[derive(Clone, Debug, PartialEq)]
pub struct Wedge<T> {
    /// `[variables, radial, lat, lon]`.
    pub data: Tensor<T>,
    pub lon_start: usize,
    pub hr_lon_start: usize,
    pub hr_lat_start: i64,
    pub hr_radial_start: usize,
    pub timestep: u64,
}

impl<T: Scalar> Wedge<T> {
    /// The target of a training pair, i.e. a truth wedge.
    pub fn from_pair(p: &TrainingPair<T>) -> Self {
        Self {
            data: p.target.clone(),
            lon_start: p.lon_start,
            hr_lon_start: p.hr_lon_start,
            hr_lat_start: p.hr_lat_start,
            hr_radial_start: p.hr_radial_start,
            timestep: p.timestep,
        }
    }

    pub fn width(&self) -> usize {
        *self.data.shape().last().unwrap()
    }
}

/// Rejects low-res grids not normalized with the stats the model was
/// trained on. Models without a stats reference accept any grid.
pub fn check_stats<T: Scalar>(stats_ref: Option<&str>, lr: &ShellGrid<T>) -> Result<()> {
    let Some(want) = stats_ref else {
        return Ok(());
    };
    match lr.stats() {
        Some(s) if stats_digest(s) == want => Ok(()),
        Some(s) => Err(Error::Provenance(format!(
            "volume normalized with stats {} but the model expects {want}",
            stats_digest(s)
        ))),
        None => Err(Error::Provenance(format!(
            "volume carries no normalization stats; the model expects {want}"
        ))),
    }
}

/// A generator plus the normalization it was trained against.
#[derive(Clone, Debug)]
pub struct Surrogate<T> {
    pub generator: Generator<T>,
    pub stats_ref: Option<String>,
}

impl<T: Scalar> Surrogate<T> {
    pub fn new(generator: Generator<T>, stats_ref: Option<String>) -> Self {
        Self {
            generator,
            stats_ref,
        }
    }

    pub fn geometry(&self, lr: &ShellGrid<T>, frame: ShellFrame) -> Result<WedgeGeometry> {
        WedgeGeometry::new(self.generator.config.input_window, lr.lat(), lr.lon(), frame)
    }

    /// Generates the wedge conditioned on the low-res window at `lon_start`.
    pub fn wedge(
        &self,
        lr: &ShellGrid<T>,
        frame: ShellFrame,
        lon_start: usize,
        noise: &WedgeNoise,
    ) -> Result<Wedge<T>> {
        check_stats(self.stats_ref.as_deref(), lr)?;
        let geo = self.geometry(lr, frame)?;
        self.wedge_unchecked(lr, &geo, lon_start, noise)
    }

    fn wedge_unchecked(
        &self,
        lr: &ShellGrid<T>,
        geo: &WedgeGeometry,
        lon_start: usize,
        noise: &WedgeNoise,
    ) -> Result<Wedge<T>> {
        let x = conditioning_window(lr, lon_start, &geo.pair, geo.frame.lat)?;
        let g = &self.generator;
        let data = match noise {
            WedgeNoise::Zero => g.forward(&x, NoiseMode::Zero)?,
            WedgeNoise::Seeded(k) => {
                g.forward(&x, NoiseMode::Seeded(WedgeNoise::wedge_seed(*k, lon_start)))?
            }
            WedgeNoise::Averaged(seeds) => {
                if seeds.is_empty() {
                    return invalid("averaged noise needs at least one seed");
                }
                // fixed summation order keeps the mean independent of seed order
                let mut seeds = seeds.clone();
                seeds.sort_unstable();
                let mut acc: Option<(Vec<usize>, Vec<f64>)> = None;
                for s in &seeds {
                    let y = g.forward(&x, NoiseMode::Seeded(WedgeNoise::wedge_seed(*s, lon_start)))?;
                    match &mut acc {
                        None => {
                            acc = Some((
                                y.shape().to_vec(),
                                y.data().iter().map(|v| v.to_f64_lossy()).collect(),
                            ))
                        }
                        Some((_, a)) => {
                            for (ai, v) in a.iter_mut().zip(y.data()) {
                                *ai += v.to_f64_lossy();
                            }
                        }
                    }
                }
                let (shape, sum) = acc.expect("non-empty seeds");
                let n = seeds.len() as f64;
                Tensor::new(&shape, sum.into_iter().map(|v| T::lit(v / n)).collect())?
            }
        };
        Ok(Wedge {
            data,
            lon_start,
            hr_lon_start: geo.pair.hr_lon_start(lon_start, geo.frame.lon),
            hr_lat_start: geo.lat.hr_start,
            hr_radial_start: geo.radial_start,
            timestep: lr.timestep(),
        })
    }

    /// Wedges for every start, spread over up to `workers` threads. Output
    /// order follows `starts` regardless of scheduling.
    pub fn wedges(
        &self,
        lr: &ShellGrid<T>,
        frame: ShellFrame,
        starts: &[usize],
        noise: &WedgeNoise,
        workers: usize,
    ) -> Result<Vec<Wedge<T>>> {
        check_stats(self.stats_ref.as_deref(), lr)?;
        let geo = self.geometry(lr, frame)?;
        let workers = workers.clamp(1, starts.len().max(1));
        if workers == 1 {
            return starts
                .iter()
                .map(|&s| self.wedge_unchecked(lr, &geo, s, noise))
                .collect();
        }
        let chunk = starts.len().div_ceil(workers);
        std::thread::scope(|scope| {
            let handles: Vec<_> = starts
                .chunks(chunk)
                .map(|part| {
                    let geo = &geo;
                    scope.spawn(move || {
                        part.iter()
                            .map(|&s| self.wedge_unchecked(lr, geo, s, noise))
                            .collect::<Result<Vec<_>>>()
                    })
                })
                .collect();
            let mut out = Vec::with_capacity(starts.len());
            for h in handles {
                out.extend(h.join().expect("wedge worker panicked")?);
            }
            Ok(out)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_parsing() {
        assert_eq!("zero".parse::<WedgeNoise>().unwrap(), WedgeNoise::Zero);
        assert_eq!("seed:7".parse::<WedgeNoise>().unwrap(), WedgeNoise::Seeded(7));
        assert_eq!(
            "avg:3".parse::<WedgeNoise>().unwrap(),
            WedgeNoise::Averaged(vec![0, 1, 2])
        );
        for bad in ["avg:0", "seed:x", "seed", "noise", ""] {
            assert!(bad.parse::<WedgeNoise>().is_err(), "{bad}");
        }
        for s in ["zero", "seed:12", "avg:4"] {
            assert_eq!(s.parse::<WedgeNoise>().unwrap().to_string(), s);
        }
    }

    #[test]
    fn paper_geometry() {
        let frame = ShellFrame {
            radial: 201,
            lat: 108,
            lon: 216,
        };
        let g = WedgeGeometry::new([30, 20, 10], 14, 27, frame).unwrap();
        assert_eq!(g.out, [198, 118, 38]);
        assert_eq!(g.lat.hr_start, -5);
        assert_eq!(g.radial_start, 1);
        assert_eq!(g.shell_dims(4), [4, 198, 108, 216]);
        g.check_lat_cover().unwrap();
    }
}
