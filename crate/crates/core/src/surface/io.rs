//! Points, grid and isohypse file formats.
//!
//! * points CSV: `prompt_id,u,v` (2D coordinates) or `prompt_id,e1,...,eD`
//!   (embeddings, reduced with PCA). An optional `phi` column carries
//!   precomputed potentials.
//! * grid CSV: `i,j,u,v,phi,valid`
//! * isohypse JSON: an array of `{"level", "polylines", "closed"}` objects.

use std::io::{Read, Write};

use super::{IsohypseSet, SurfaceError, SurfaceGrid};
use crate::output::fmt_sig9;

/// Rows of a points file.
#[derive(Debug, Clone, PartialEq)]
pub struct PointsFile {
    pub prompt_ids: Vec<String>,
    /// Either 2D coordinates or D-dimensional embeddings.
    pub features: Vec<Vec<f64>>,
    pub phi: Option<Vec<f64>>,
}

impl PointsFile {
    pub fn dims(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    /// 2D coordinates, reducing embeddings with PCA when `D > 2`.
    pub fn coords(&self) -> Result<Vec<(f64, f64)>, SurfaceError> {
        match self.dims() {
            2 => Ok(self.features.iter().map(|f| (f[0], f[1])).collect()),
            d if d > 2 => super::pca_2d(&self.features),
            d => Err(SurfaceError::Dimension(format!("points need at least 2 coordinates, got {d}"))),
        }
    }
}

pub fn read_points<R: Read>(input: R) -> Result<PointsFile, SurfaceError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = rdr.headers()?.clone();
    if header.get(0) != Some("prompt_id") {
        return Err(SurfaceError::InvalidPoint("points file must start with a `prompt_id` column".into()));
    }
    let phi_col = header.iter().position(|h| h == "phi");
    let feature_cols: Vec<usize> = (1..header.len()).filter(|&c| Some(c) != phi_col).collect();
    let mut out = PointsFile { prompt_ids: Vec::new(), features: Vec::new(), phi: phi_col.map(|_| Vec::new()) };
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |c: usize| -> Result<f64, SurfaceError> {
            let raw = rec.get(c).unwrap_or("");
            let x: f64 = raw.parse().map_err(|_| {
                SurfaceError::InvalidPoint(format!(
                    "row {}: `{raw}` in column `{}` is not a number",
                    line + 1,
                    &header[c]
                ))
            })?;
            if !x.is_finite() {
                return Err(SurfaceError::InvalidPoint(format!("row {}: non-finite value", line + 1)));
            }
            Ok(x)
        };
        out.prompt_ids.push(rec.get(0).unwrap_or("").to_string());
        out.features.push(feature_cols.iter().map(|&c| num(c)).collect::<Result<_, _>>()?);
        if let (Some(c), Some(phis)) = (phi_col, out.phi.as_mut()) {
            phis.push(num(c)?);
        }
    }
    if out.prompt_ids.is_empty() {
        return Err(SurfaceError::NotEnoughPoints("points file has no rows".into()));
    }
    Ok(out)
}

pub fn write_grid_csv<W: Write>(grid: &SurfaceGrid, out: W) -> Result<(), SurfaceError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["i", "j", "u", "v", "phi", "valid"])?;
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let ok = grid.is_valid(i, j);
            w.write_record([
                i.to_string(),
                j.to_string(),
                fmt_sig9(grid.u_axis[i]),
                fmt_sig9(grid.v_axis[j]),
                if ok { fmt_sig9(grid.value(i, j)) } else { String::new() },
                ok.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn isohypses_json(sets: &[IsohypseSet]) -> serde_json::Value {
    serde_json::Value::Array(sets.iter().map(IsohypseSet::to_json).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_coordinates_and_phi() {
        let text = "prompt_id,u,v,phi\na,0.1,0.2,3\nb,0.5,0.5,0\n";
        let pts = read_points(text.as_bytes()).unwrap();
        assert_eq!(pts.prompt_ids, vec!["a", "b"]);
        assert_eq!(pts.coords().unwrap(), vec![(0.1, 0.2), (0.5, 0.5)]);
        assert_eq!(pts.phi, Some(vec![3.0, 0.0]));
    }

    #[test]
    fn reads_embeddings() {
        let text = "prompt_id,e1,e2,e3\na,0,0,0\nb,1,1,1\nc,2,2,2\n";
        let pts = read_points(text.as_bytes()).unwrap();
        assert_eq!(pts.dims(), 3);
        let c = pts.coords().unwrap();
        assert!((c[2].0 - 3f64.sqrt()).abs() < 1e-9);
        assert!(pts.phi.is_none());
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_points("id,u,v\na,1,2\n".as_bytes()).is_err());
        assert!(read_points("prompt_id,u,v\na,x,2\n".as_bytes()).is_err());
        assert!(read_points("prompt_id,u,v\n".as_bytes()).is_err());
    }

    #[test]
    fn grid_csv_rows() {
        let mut g = SurfaceGrid::from_fn(2, 2, |u, v| u + v);
        g.valid[3] = false;
        let mut buf = Vec::new();
        write_grid_csv(&g, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "i,j,u,v,phi,valid");
        assert_eq!(lines[2], "1,0,1,0,1,true");
        assert_eq!(lines[4], "1,1,1,1,,false");
    }
}
