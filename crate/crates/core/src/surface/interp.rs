use serde::{Deserialize, Serialize};
use spade::handles::FixedVertexHandle;
use spade::{DelaunayTriangulation, HasPosition, Point2, PositionInTriangulation, Triangulation};

use super::{unit_axis, SamplePoint, SurfaceError, SurfaceGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Nearest,
    Linear,
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nearest" => Ok(Method::Nearest),
            "linear" => Ok(Method::Linear),
            other => Err(format!("unknown interpolation method `{other}` (expected nearest or linear)")),
        }
    }
}

struct Site {
    pos: Point2<f64>,
    phi: f64,
}

impl HasPosition for Site {
    type Scalar = f64;

    fn position(&self) -> Point2<f64> {
        self.pos
    }
}

fn check_points(points: &[SamplePoint]) -> Result<(), SurfaceError> {
    for p in points {
        let (u, v) = p.coords;
        if !(u.is_finite() && v.is_finite() && p.phi.is_finite()) {
            return Err(SurfaceError::InvalidPoint(format!("non-finite data for `{}`", p.prompt_id)));
        }
    }
    Ok(())
}

/// Interpolates scattered potentials onto an `nx x ny` mesh over `[0,1]^2`.
///
/// `Nearest` copies the value of the closest sample (lowest index on ties).
/// `Linear` is barycentric interpolation on the Delaunay triangulation of
/// the samples; nodes outside their convex hull are marked invalid.
pub fn interpolate_grid(
    points: &[SamplePoint],
    nx: usize,
    ny: usize,
    method: Method,
) -> Result<SurfaceGrid, SurfaceError> {
    if nx < 2 || ny < 2 {
        return Err(SurfaceError::Domain(format!("grid must be at least 2x2, got {nx}x{ny}")));
    }
    check_points(points)?;
    let u_axis = unit_axis(nx);
    let v_axis = unit_axis(ny);
    let mut values = Vec::with_capacity(nx * ny);
    let mut valid = Vec::with_capacity(nx * ny);
    match method {
        Method::Nearest => {
            if points.is_empty() {
                return Err(SurfaceError::NotEnoughPoints("nearest interpolation needs at least 1 point".into()));
            }
            for &v in &v_axis {
                for &u in &u_axis {
                    values.push(nearest_value(points, u, v));
                    valid.push(true);
                }
            }
        }
        Method::Linear => {
            let tri = triangulate(points)?;
            let mut hint: Option<FixedVertexHandle> = None;
            for &v in &v_axis {
                for &u in &u_axis {
                    match linear_value(&tri, u, v, &mut hint) {
                        Some(x) => {
                            values.push(x);
                            valid.push(true);
                        }
                        None => {
                            values.push(f64::NAN);
                            valid.push(false);
                        }
                    }
                }
            }
        }
    }
    Ok(SurfaceGrid { nx, ny, u_axis, v_axis, values, valid })
}

fn nearest_value(points: &[SamplePoint], u: f64, v: f64) -> f64 {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, p) in points.iter().enumerate() {
        let d = (p.coords.0 - u).powi(2) + (p.coords.1 - v).powi(2);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    points[best].phi
}

fn triangulate(points: &[SamplePoint]) -> Result<DelaunayTriangulation<Site>, SurfaceError> {
    if points.len() < 3 {
        return Err(SurfaceError::NotEnoughPoints(format!(
            "linear interpolation needs at least 3 points, got {}",
            points.len()
        )));
    }
    let mut tri = DelaunayTriangulation::<Site>::new();
    for p in points {
        let pos = Point2::new(p.coords.0, p.coords.1);
        // Duplicate positions keep the first sample.
        if tri.locate_vertex(pos).is_some() {
            continue;
        }
        tri.insert(Site { pos, phi: p.phi })
            .map_err(|e| SurfaceError::InvalidPoint(format!("cannot triangulate `{}`: {e:?}", p.prompt_id)))?;
    }
    if tri.num_inner_faces() == 0 {
        return Err(SurfaceError::CollinearInput);
    }
    Ok(tri)
}

fn linear_value(
    tri: &DelaunayTriangulation<Site>,
    u: f64,
    v: f64,
    hint: &mut Option<FixedVertexHandle>,
) -> Option<f64> {
    let q = Point2::new(u, v);
    let located = match *hint {
        Some(h) => tri.locate_with_hint(q, h),
        None => tri.locate(q),
    };
    match located {
        PositionInTriangulation::OnVertex(h) => {
            *hint = Some(h);
            Some(tri.vertex(h).data().phi)
        }
        PositionInTriangulation::OnEdge(e) => {
            let [a, b] = tri.directed_edge(e).vertices();
            *hint = Some(a.fix());
            let (pa, pb) = (a.position(), b.position());
            let len2 = (pb.x - pa.x).powi(2) + (pb.y - pa.y).powi(2);
            let t = (((q.x - pa.x) * (pb.x - pa.x) + (q.y - pa.y) * (pb.y - pa.y)) / len2).clamp(0.0, 1.0);
            let (fa, fb) = (a.data().phi, b.data().phi);
            Some(clamp_between(fa + t * (fb - fa), &[fa, fb]))
        }
        PositionInTriangulation::OnFace(f) => {
            let [a, b, c] = tri.face(f).vertices();
            *hint = Some(a.fix());
            let (pa, pb, pc) = (a.position(), b.position(), c.position());
            let [wa, wb, wc] = barycentric((pa.x, pa.y), (pb.x, pb.y), (pc.x, pc.y), (q.x, q.y));
            let (fa, fb, fc) = (a.data().phi, b.data().phi, c.data().phi);
            Some(clamp_between(wa * fa + wb * fb + wc * fc, &[fa, fb, fc]))
        }
        PositionInTriangulation::OutsideOfConvexHull(_) | PositionInTriangulation::NoTriangulation => None,
    }
}

/// Barycentric weights of `q` in triangle `(a, b, c)`.
pub(crate) fn barycentric(a: (f64, f64), b: (f64, f64), c: (f64, f64), q: (f64, f64)) -> [f64; 3] {
    let det = (b.1 - c.1) * (a.0 - c.0) + (c.0 - b.0) * (a.1 - c.1);
    let wa = ((b.1 - c.1) * (q.0 - c.0) + (c.0 - b.0) * (q.1 - c.1)) / det;
    let wb = ((c.1 - a.1) * (q.0 - c.0) + (a.0 - c.0) * (q.1 - c.1)) / det;
    [wa, wb, 1.0 - wa - wb]
}

// Rounding in the weights must not push the value outside the vertex range.
fn clamp_between(x: f64, vals: &[f64]) -> f64 {
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    x.clamp(lo, hi)
}
