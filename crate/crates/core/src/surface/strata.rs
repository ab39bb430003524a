use serde::{Deserialize, Serialize};

use super::{SurfaceError, SurfaceGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stratum {
    /// Potential above `epsilon + tau`: the top output wins by more than
    /// `sqrt(epsilon)` nats.
    Barrier,
    /// Potential below `epsilon - tau`.
    Well,
    /// Within `tau` of `epsilon`.
    Isohypse,
    Invalid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrataGrid {
    pub epsilon: f64,
    pub band_tol: f64,
    pub nx: usize,
    pub ny: usize,
    pub labels: Vec<Stratum>,
}

impl StrataGrid {
    /// Log-likelihood margin separating barriers from wells, in nats.
    pub fn margin_nats(&self) -> f64 {
        self.epsilon.sqrt()
    }

    pub fn count(&self, s: Stratum) -> usize {
        self.labels.iter().filter(|&&l| l == s).count()
    }
}

pub fn stratify(grid: &SurfaceGrid, epsilon: f64, band_tol: f64) -> Result<StrataGrid, SurfaceError> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(SurfaceError::Domain(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(band_tol >= 0.0 && band_tol.is_finite()) {
        return Err(SurfaceError::Domain(format!("band tolerance must be nonnegative, got {band_tol}")));
    }
    let labels = grid
        .values
        .iter()
        .zip(&grid.valid)
        .map(|(&phi, &ok)| {
            if !ok {
                Stratum::Invalid
            } else if phi > epsilon + band_tol {
                Stratum::Barrier
            } else if phi < epsilon - band_tol {
                Stratum::Well
            } else {
                Stratum::Isohypse
            }
        })
        .collect();
    Ok(StrataGrid { epsilon, band_tol, nx: grid.nx, ny: grid.ny, labels })
}
