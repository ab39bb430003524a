use nalgebra::{DMatrix, SymmetricEigen};

use super::SurfaceError;

/// Per-axis min-max scaling into `[0,1]`. A constant axis maps to 0.5.
pub fn normalize_coords(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let axis = |get: fn(&(f64, f64)) -> f64| {
        let lo = points.iter().map(get).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(get).fold(f64::NEG_INFINITY, f64::max);
        move |x: f64| if hi > lo { (x - lo) / (hi - lo) } else { 0.5 }
    };
    let fu = axis(|p| p.0);
    let fv = axis(|p| p.1);
    points.iter().map(|&(u, v)| (fu(u), fv(v))).collect()
}

/// Projects mean-centered embeddings onto their two leading principal
/// directions. Each direction is signed so that its largest-magnitude
/// loading is positive.
pub fn pca_2d(embeddings: &[Vec<f64>]) -> Result<Vec<(f64, f64)>, SurfaceError> {
    let n = embeddings.len();
    if n < 2 {
        return Err(SurfaceError::Dimension(format!("need at least 2 vectors, got {n}")));
    }
    let d = embeddings[0].len();
    if d < 2 {
        return Err(SurfaceError::Dimension(format!("need at least 2 dimensions, got {d}")));
    }
    if let Some(bad) = embeddings.iter().position(|e| e.len() != d) {
        return Err(SurfaceError::Dimension(format!(
            "vector {bad} has {} dimensions, expected {d}",
            embeddings[bad].len()
        )));
    }
    if embeddings.iter().flatten().any(|x| !x.is_finite()) {
        return Err(SurfaceError::InvalidPoint("embedding contains a non-finite value".into()));
    }

    let x = DMatrix::from_fn(n, d, |r, c| embeddings[r][c]);
    let mean = x.row_mean();
    let centered = DMatrix::from_fn(n, d, |r, c| x[(r, c)] - mean[c]);
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut axes = Vec::with_capacity(2);
    for &k in order.iter().take(2) {
        let mut dir = eig.eigenvectors.column(k).into_owned();
        let mut lead = 0;
        for i in 1..d {
            if dir[i].abs() > dir[lead].abs() + 1e-12 {
                lead = i;
            }
        }
        if dir[lead] < 0.0 {
            dir = -dir;
        }
        axes.push(&centered * dir);
    }
    Ok((0..n).map(|r| (axes[0][r], axes[1][r])).collect())
}
