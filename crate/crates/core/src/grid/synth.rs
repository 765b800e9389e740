//! Deterministic synthetic mantle-like shells for desk-scale experiments.
//!
//! Temperature is a conductive radial profile plus Gaussian plumes rising
//! from the core; velocities are spatial derivatives of a smooth potential
//! built from the same plume footprints plus a low-order overturn mode.

use std::f64::consts::PI;

use rand::Rng;

use crate::error::{invalid, Result};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::shell::ShellGrid;

struct Plume {
    center: [f64; 3],
    width: f64,
    amplitude: f64,
    top: f64,
    swirl: f64,
}

fn unit(lat: f64, lon: f64) -> [f64; 3] {
    [lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin()]
}

/// Latitude (radians, north first) of row `i` of `h`.
fn row_lat(i: usize, h: usize) -> f64 {
    PI / 2.0 - (i as f64 + 0.5) * PI / h as f64
}

fn col_lon(j: usize, w: usize) -> f64 {
    (j as f64 + 0.5) * 2.0 * PI / w as f64
}

/// Synthetic raw (unnormalized) shell of `dims = [V, R, H, W]`.
pub fn synth_shell<T: Scalar>(seed: u64, dims: [usize; 4], plume_count: usize) -> Result<ShellGrid<T>> {
    let [v, r, h, w] = dims;
    if dims.iter().any(|&d| d == 0) {
        return invalid(format!("synthetic dims must be positive, got {dims:?}"));
    }
    let mut g = rng::stream(seed, 0x5917, 0);
    let plumes: Vec<Plume> = (0..plume_count)
        .map(|_| {
            // uniform on the sphere
            let z: f64 = g.random_range(-0.9..0.9);
            let lon: f64 = g.random_range(0.0..2.0 * PI);
            Plume {
                center: unit(z.asin(), lon),
                width: g.random_range(0.08..0.45),
                amplitude: g.random_range(0.2..0.7) * if g.random_bool(0.8) { 1.0 } else { -1.0 },
                top: g.random_range(0.45..1.0),
                swirl: g.random_range(-1.0..1.0),
            }
        })
        .collect();
    let mode_phase: f64 = g.random_range(0.0..2.0 * PI);
    let mode_order: f64 = g.random_range(1..=3) as f64;

    let rho = |ri: usize| if r == 1 { 0.5 } else { ri as f64 / (r - 1) as f64 };
    let units: Vec<[f64; 3]> = (0..h * w)
        .map(|i| unit(row_lat(i / w, h), col_lon(i % w, w)))
        .collect();
    // angular footprints, one H×W table per plume
    let foot: Vec<Vec<f64>> = plumes
        .iter()
        .map(|p| {
            units
                .iter()
                .map(|u| {
                    let c = u[0] * p.center[0] + u[1] * p.center[1] + u[2] * p.center[2];
                    let chord2 = 2.0 * (1.0 - c);
                    (-chord2 / (2.0 * p.width * p.width)).exp()
                })
                .collect()
        })
        .collect();
    let rise: Vec<Vec<f64>> = plumes
        .iter()
        .map(|p| {
            (0..r)
                .map(|ri| 1.0 / (1.0 + ((rho(ri) - p.top) / 0.06).exp()))
                .collect()
        })
        .collect();

    let n = r * h * w;
    let mut temp = vec![0.0f64; n];
    let mut psi = vec![0.0f64; n];
    for ri in 0..r {
        let p = rho(ri);
        let shell = (PI * p).sin();
        for i in 0..h * w {
            let (lat, lon) = (row_lat(i / w, h), col_lon(i % w, w));
            let mut t = 1.0 - p;
            let mut s = 0.4 * shell * lat.cos() * (mode_order * lon + mode_phase).sin();
            for (k, pl) in plumes.iter().enumerate() {
                t += pl.amplitude * foot[k][i] * rise[k][ri];
                s += pl.swirl * foot[k][i] * shell;
            }
            temp[ri * h * w + i] = t;
            psi[ri * h * w + i] = s;
        }
    }

    // derivatives with respect to (ρ, latitude, longitude) in natural units
    let d_rho = if r > 1 { 1.0 / (r - 1) as f64 } else { 1.0 };
    let d_lat = PI / h as f64;
    let d_lon = 2.0 * PI / w as f64;
    let at = |ri: usize, hi: usize, wi: usize| psi[(ri * h + hi) * w + wi];
    let central = |lo: f64, hi: f64, steps: usize, d: f64| {
        if steps == 0 {
            0.0
        } else {
            (hi - lo) / (steps as f64 * d)
        }
    };
    let mut vel = [vec![0.0f64; n], vec![0.0f64; n], vec![0.0f64; n]];
    for ri in 0..r {
        let (r0, r1) = (ri.saturating_sub(1), (ri + 1).min(r - 1));
        for hi in 0..h {
            let (h0, h1) = (hi.saturating_sub(1), (hi + 1).min(h - 1));
            for wi in 0..w {
                let idx = (ri * h + hi) * w + wi;
                vel[0][idx] = central(at(r0, hi, wi), at(r1, hi, wi), r1 - r0, d_rho);
                vel[1][idx] = central(at(ri, h1, wi), at(ri, h0, wi), h1 - h0, d_lat);
                let (w0, w1) = ((wi + w - 1) % w, (wi + 1) % w);
                vel[2][idx] = if w > 1 {
                    (at(ri, hi, w1) - at(ri, hi, w0)) / (2.0 * d_lon)
                } else {
                    0.0
                };
            }
        }
    }

    let mut values = Vec::with_capacity(v * n);
    for var in 0..v {
        let src = match var {
            0 => &temp,
            1..=3 => &vel[var - 1],
            _ => &psi,
        };
        values.extend(src.iter().map(|&x| T::lit(x)));
    }
    ShellGrid::new(ShellGrid::<T>::default_names(v), 0, Tensor::new(&dims, values)?)
}
