use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::SpaceError;

/// Kernel tails beyond this many bandwidths are dropped (below e^-32).
const TRUNCATE_BW: f64 = 8.0;
const POINT_CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bandwidth {
    /// Scott's rule per axis, `sigma * n^(-1/6)`.
    Scott,
    Fixed(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridBounds {
    pub x: (f64, f64),
    pub y: (f64, f64),
}

impl GridBounds {
    /// Bounding box of `coords` padded by `pad` bandwidths on each side.
    pub fn covering(coords: &[[f64; 2]], bandwidth: (f64, f64), pad: f64) -> Self {
        let mut x = (f64::INFINITY, f64::NEG_INFINITY);
        let mut y = (f64::INFINITY, f64::NEG_INFINITY);
        for p in coords {
            x = (x.0.min(p[0]), x.1.max(p[0]));
            y = (y.0.min(p[1]), y.1.max(p[1]));
        }
        Self {
            x: (x.0 - pad * bandwidth.0, x.1 + pad * bandwidth.0),
            y: (y.0 - pad * bandwidth.1, y.1 + pad * bandwidth.1),
        }
    }
}

/// Normalized density on a `grid_size x grid_size` lattice of cell centres.
/// `grid[iy * grid_size + ix]`, `iy = 0` at the bottom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityMap {
    pub label: String,
    pub grid_size: usize,
    pub grid: Vec<f64>,
    pub bounds: GridBounds,
    pub bandwidth: (f64, f64),
    pub n_points: usize,
}

impl DensityMap {
    pub fn cell(&self, ix: usize, iy: usize) -> f64 {
        self.grid[iy * self.grid_size + ix]
    }

    pub fn max(&self) -> f64 {
        self.grid.iter().copied().fold(0.0, f64::max)
    }
}

fn population_std(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = v.clone().count() as f64;
    let mean = v.clone().sum::<f64>() / n;
    (v.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
}

/// Scott's rule per axis. A zero-spread axis falls back to 1e-3.
pub fn scott_bandwidth(coords: &[[f64; 2]]) -> (f64, f64) {
    let n = coords.len().max(1) as f64;
    let factor = n.powf(-1.0 / 6.0);
    let bw = |axis: usize| {
        let s = population_std(coords.iter().map(|p| p[axis]));
        if s > 0.0 && s.is_finite() {
            s * factor
        } else {
            1e-3
        }
    };
    (bw(0), bw(1))
}

fn kernel_window(centres: &[f64], at: f64, bw: f64) -> (usize, Vec<f64>) {
    let g = centres.len();
    let lo = centres.partition_point(|&c| c < at - TRUNCATE_BW * bw);
    let hi = centres.partition_point(|&c| c <= at + TRUNCATE_BW * bw);
    let w = centres[lo..hi.max(lo)]
        .iter()
        .map(|&c| {
            let u = (c - at) / bw;
            (-0.5 * u * u).exp()
        })
        .collect();
    (lo.min(g), w)
}

/// Gaussian product-kernel density of `coords` evaluated over `bounds`.
///
/// Accumulation runs over fixed-size point chunks whose partial grids are
/// summed in chunk order, so the result is independent of thread count.
pub fn density_map(
    label: &str,
    coords: &[[f64; 2]],
    grid_size: usize,
    bandwidth: Bandwidth,
    bounds: GridBounds,
) -> Result<DensityMap, SpaceError> {
    if coords.len() < 2 {
        return Err(SpaceError::TooFewPoints {
            needed: 2,
            got: coords.len(),
        });
    }
    let (bx, by) = match bandwidth {
        Bandwidth::Scott => scott_bandwidth(coords),
        Bandwidth::Fixed(bx, by) => (bx, by),
    };
    if !(bx > 0.0 && by > 0.0 && bx.is_finite() && by.is_finite()) || grid_size == 0 {
        return Err(SpaceError::InvalidBandwidth);
    }
    let g = grid_size;
    let centres = |(lo, hi): (f64, f64)| -> Vec<f64> {
        let step = (hi - lo) / g as f64;
        (0..g).map(|i| lo + (i as f64 + 0.5) * step).collect()
    };
    let xs = centres(bounds.x);
    let ys = centres(bounds.y);

    let partials: Vec<Vec<f64>> = coords
        .par_chunks(POINT_CHUNK)
        .map(|chunk| {
            let mut grid = vec![0.0; g * g];
            for p in chunk {
                let (x0, wx) = kernel_window(&xs, p[0], bx);
                let (y0, wy) = kernel_window(&ys, p[1], by);
                for (dy, ky) in wy.iter().enumerate() {
                    let row = &mut grid[(y0 + dy) * g + x0..(y0 + dy) * g + x0 + wx.len()];
                    for (cell, kx) in row.iter_mut().zip(&wx) {
                        *cell += ky * kx;
                    }
                }
            }
            grid
        })
        .collect();
    let mut grid = vec![0.0; g * g];
    for part in partials {
        for (a, b) in grid.iter_mut().zip(part) {
            *a += b;
        }
    }

    let mut total: f64 = grid.iter().sum();
    if total <= 0.0 {
        // bandwidth far below the cell size: drop each point in its cell
        let cell =
            |v: f64, (lo, hi): (f64, f64)| (((v - lo) / (hi - lo) * g as f64).floor().max(0.0) as usize).min(g - 1);
        for p in coords {
            grid[cell(p[1], bounds.y) * g + cell(p[0], bounds.x)] += 1.0;
        }
        total = coords.len() as f64;
    }
    grid.iter_mut().for_each(|v| *v /= total);
    Ok(DensityMap {
        label: label.to_string(),
        grid_size: g,
        grid,
        bounds,
        bandwidth: (bx, by),
        n_points: coords.len(),
    })
}
