//! Potential surface of the two-sequence analytic model: K-sample estimates on
//! a lattice, interpolated, contoured and stratified. Writes `surface.svg`.
//!
//! cargo run --release --example decision_surface [out-dir]

use std::path::PathBuf;

use kdps::dpf::{estimate_with_resample, StreamKey};
use kdps::surface::{
    default_levels, extract_isohypses, interpolate_grid, render_svg, stratify, Method, SamplePoint, Stratum, SvgStyle,
};
use kdps::{Prompt, SamplerConfig, ToyModel};
use rayon::prelude::*;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out: PathBuf = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(std::env::temp_dir);
    let model = ToyModel::analytic2d(4.0)?;
    let cfg = SamplerConfig::exact();
    let n = 21;

    let points = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx % n, idx / n);
            let (u, v) = (i as f64 / (n - 1) as f64, j as f64 / (n - 1) as f64);
            let prompt = Prompt::with_coords(format!("p{i}_{j}"), u, v);
            let key = StreamKey { seed: 1, prompt_index: idx as u64, trial: 0, attempt: 0 };
            let (_, est) = estimate_with_resample(&model, &prompt, 2500, &cfg, key)?;
            Ok(SamplePoint::new(prompt.key, u, v, est.phi_k))
        })
        .collect::<Result<Vec<_>, kdps::PotentialError>>()?;

    let grid = interpolate_grid(&points, 101, 101, Method::Linear)?;
    let sets = extract_isohypses(&grid, &default_levels(&points));
    for set in &sets {
        println!("level {:>10.6}: {} polylines, {} vertices", set.level, set.polylines.len(), set.vertex_count());
    }
    let strata = stratify(&grid, 1.0, 0.0)?;
    println!(
        "barrier {} / well {} / band {} nodes (margin {} nats)",
        strata.count(Stratum::Barrier),
        strata.count(Stratum::Well),
        strata.count(Stratum::Isohypse),
        strata.margin_nats()
    );

    let style = SvgStyle { title: Some("analytic2d, alpha = 4".into()), ..SvgStyle::default() };
    let path = out.join("surface.svg");
    std::fs::write(&path, render_svg(&grid, &sets, &style))?;
    println!("wrote {}", path.display());
    Ok(())
}
