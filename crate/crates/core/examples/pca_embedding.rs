//! Surface over prompts that live in a higher-dimensional embedding space,
//! projected to 2D with PCA before interpolation.
//!
//! cargo run --example pca_embedding

use kdps::surface::{extract_isohypses, interpolate_grid, normalize_coords, pca_2d, Method, SamplePoint};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    // two latent factors spread over eight noisy dimensions
    let mixing: Vec<[f64; 2]> = (0..8).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
    let mut embeddings = Vec::new();
    let mut phis = Vec::new();
    for _ in 0..300 {
        let (a, b): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        embeddings
            .push(mixing.iter().map(|m| m[0] * a + m[1] * b + rng.random_range(-0.01..0.01)).collect::<Vec<f64>>());
        phis.push((2.0 * (a - b)).powi(2));
    }

    let coords = normalize_coords(&pca_2d(&embeddings)?);
    let points: Vec<SamplePoint> = coords
        .iter()
        .zip(&phis)
        .enumerate()
        .map(|(i, (&(u, v), &phi))| SamplePoint::new(format!("q{i}"), u, v, phi))
        .collect();
    let grid = interpolate_grid(&points, 81, 81, Method::Linear)?;
    let valid = grid.valid.iter().filter(|&&ok| ok).count();
    println!("{valid} of {} grid nodes inside the convex hull", grid.values.len());
    for set in extract_isohypses(&grid, &[0.25, 1.0, 4.0]) {
        println!("level {:>8}: {} polylines, {} vertices", set.level, set.polylines.len(), set.vertex_count());
    }
    Ok(())
}
