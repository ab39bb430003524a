//! Decision potential surfaces over a 2D input embedding.
//!
//! Per-prompt potentials are placed at normalized 2D coordinates,
//! interpolated onto a regular mesh over `[0,1]^2`, and then summarized by
//! level sets (isohypses), confidence strata and an SVG rendering.

mod contour;
mod embed;
mod interp;
pub mod io;
mod strata;
mod svg;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use contour::{effective_level, extract_isohypses, IsohypseSet, Polyline, ZERO_LEVEL_THRESHOLD};
pub use embed::{normalize_coords, pca_2d};
pub use interp::{interpolate_grid, Method};
pub use strata::{stratify, StrataGrid, Stratum};
pub use svg::{render_svg, SvgStyle};

#[derive(Debug, Error)]
pub enum SurfaceError {
    #[error("not enough points: {0}")]
    NotEnoughPoints(String),
    #[error("input points are collinear; linear interpolation needs a 2D triangulation")]
    CollinearInput,
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid point: {0}")]
    InvalidPoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// A prompt's potential placed at its 2D embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePoint {
    pub prompt_id: String,
    pub coords: (f64, f64),
    pub phi: f64,
}

impl SamplePoint {
    pub fn new(prompt_id: impl Into<String>, u: f64, v: f64, phi: f64) -> Self {
        SamplePoint { prompt_id: prompt_id.into(), coords: (u, v), phi }
    }
}

/// Field values on a regular `nx x ny` mesh spanning `[0,1]^2`. Values are
/// stored row by row: `values[j * nx + i]` is the node at `(u_i, v_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceGrid {
    pub nx: usize,
    pub ny: usize,
    pub u_axis: Vec<f64>,
    pub v_axis: Vec<f64>,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

pub(crate) fn unit_axis(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5];
    }
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

impl SurfaceGrid {
    /// Grid sampled from a closure; all nodes valid.
    pub fn from_fn(nx: usize, ny: usize, f: impl Fn(f64, f64) -> f64) -> Self {
        let u_axis = unit_axis(nx);
        let v_axis = unit_axis(ny);
        let mut values = Vec::with_capacity(nx * ny);
        for &v in &v_axis {
            for &u in &u_axis {
                values.push(f(u, v));
            }
        }
        SurfaceGrid { nx, ny, u_axis, v_axis, values, valid: vec![true; nx * ny] }
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[self.index(i, j)]
    }

    pub fn is_valid(&self, i: usize, j: usize) -> bool {
        self.valid[self.index(i, j)]
    }

    pub fn valid_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().zip(&self.valid).filter(|(_, ok)| **ok).map(|(v, _)| *v)
    }

    /// `(min, max)` over valid nodes.
    pub fn value_range(&self) -> Option<(f64, f64)> {
        self.valid_values().fold(None, |acc, x| match acc {
            None => Some((x, x)),
            Some((lo, hi)) => Some((lo.min(x), hi.max(x))),
        })
    }

    /// Bilinear interpolation inside the cell containing `(u, v)`; `None`
    /// outside the grid or when a cell corner is invalid.
    pub fn bilinear(&self, u: f64, v: f64) -> Option<f64> {
        let locate = |axis: &[f64], x: f64| -> Option<(usize, f64)> {
            let n = axis.len();
            if n < 2 || x < axis[0] || x > axis[n - 1] {
                return None;
            }
            let mut c = axis.partition_point(|&a| a <= x).saturating_sub(1);
            c = c.min(n - 2);
            let t = (x - axis[c]) / (axis[c + 1] - axis[c]);
            Some((c, t))
        };
        let (i, s) = locate(&self.u_axis, u)?;
        let (j, t) = locate(&self.v_axis, v)?;
        if !(self.is_valid(i, j) && self.is_valid(i + 1, j) && self.is_valid(i, j + 1) && self.is_valid(i + 1, j + 1)) {
            return None;
        }
        let f00 = self.value(i, j);
        let f10 = self.value(i + 1, j);
        let f01 = self.value(i, j + 1);
        let f11 = self.value(i + 1, j + 1);
        Some(f00 * (1.0 - s) * (1.0 - t) + f10 * s * (1.0 - t) + f01 * (1.0 - s) * t + f11 * s * t)
    }
}

/// Default contour levels: the zero-level threshold plus the quartiles of
/// the positive potentials.
pub fn default_levels(points: &[SamplePoint]) -> Vec<f64> {
    let mut positive: Vec<f64> = points.iter().map(|p| p.phi).filter(|&x| x > 0.0).collect();
    positive.sort_by(f64::total_cmp);
    let mut levels = vec![ZERO_LEVEL_THRESHOLD];
    if !positive.is_empty() {
        for q in [0.25, 0.5, 0.75] {
            let pos = q * (positive.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let val = positive[lo] + (positive[hi] - positive[lo]) * (pos - lo as f64);
            if levels.last().is_none_or(|&last| val > last) {
                levels.push(val);
            }
        }
    }
    levels
}
