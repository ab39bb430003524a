//! Marching squares over a [`SurfaceGrid`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::SurfaceGrid;

/// Substitute for level 0 on a nonnegative field. Such a field touches zero
/// without crossing it, so an exact zero level has no well-defined crossings.
pub const ZERO_LEVEL_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    pub points: Vec<[f64; 2]>,
    pub closed: bool,
}

/// All polylines of one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsohypseSet {
    /// Level actually traced (after the zero-level substitution).
    pub level: f64,
    pub requested_level: f64,
    pub polylines: Vec<Polyline>,
}

impl IsohypseSet {
    /// Whether this set traces the decision boundary.
    pub fn is_boundary(&self) -> bool {
        self.requested_level <= 0.0 || self.level <= ZERO_LEVEL_THRESHOLD
    }

    pub fn vertex_count(&self) -> usize {
        self.polylines.iter().map(|p| p.points.len()).sum()
    }

    /// `{"level": ..., "polylines": [[[u, v], ...], ...], "closed": [...]}`
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "level": self.level,
            "polylines": self.polylines.iter().map(|p| &p.points).collect::<Vec<_>>(),
            "closed": self.polylines.iter().map(|p| p.closed).collect::<Vec<_>>(),
        })
    }
}

/// The level traced for `requested` on this grid: on a nonnegative field a
/// level at or below the minimum is raised to [`ZERO_LEVEL_THRESHOLD`].
pub fn effective_level(grid: &SurfaceGrid, requested: f64) -> f64 {
    match grid.value_range() {
        Some((lo, _)) if lo >= 0.0 && requested <= lo => requested.max(ZERO_LEVEL_THRESHOLD),
        _ => requested,
    }
}

/// Grid edge holding a crossing: horizontal edges join `(i,j)`-`(i+1,j)`,
/// vertical edges join `(i,j)`-`(i,j+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EdgeId {
    H(usize, usize),
    V(usize, usize),
}

pub fn extract_isohypses(grid: &SurfaceGrid, levels: &[f64]) -> Vec<IsohypseSet> {
    levels
        .iter()
        .map(|&requested| {
            let level = effective_level(grid, requested);
            IsohypseSet { level, requested_level: requested, polylines: trace_level(grid, level) }
        })
        .collect()
}

fn trace_level(grid: &SurfaceGrid, level: f64) -> Vec<Polyline> {
    if grid.nx < 2 || grid.ny < 2 {
        return Vec::new();
    }
    let above = |i: usize, j: usize| grid.value(i, j) >= level;
    let mut segments: Vec<(EdgeId, EdgeId)> = Vec::new();

    for j in 0..grid.ny - 1 {
        for i in 0..grid.nx - 1 {
            if !(grid.is_valid(i, j)
                && grid.is_valid(i + 1, j)
                && grid.is_valid(i + 1, j + 1)
                && grid.is_valid(i, j + 1))
            {
                continue;
            }
            let c = [above(i, j), above(i + 1, j), above(i + 1, j + 1), above(i, j + 1)];
            let bottom = EdgeId::H(i, j);
            let right = EdgeId::V(i + 1, j);
            let top = EdgeId::H(i, j + 1);
            let left = EdgeId::V(i, j);
            // edge k joins corner k and corner k+1 (counter-clockwise)
            let edges = [bottom, right, top, left];
            let crossing: Vec<EdgeId> = (0..4).filter(|&k| c[k] != c[(k + 1) % 4]).map(|k| edges[k]).collect();
            match crossing.len() {
                0 => {}
                2 => segments.push((crossing[0], crossing[1])),
                4 => {
                    let center = 0.25
                        * (grid.value(i, j) + grid.value(i + 1, j) + grid.value(i + 1, j + 1) + grid.value(i, j + 1));
                    let center_above = center >= level;
                    // Cut off the corners whose class differs from the center.
                    if c[1] != center_above {
                        segments.push((bottom, right));
                        segments.push((top, left));
                    } else {
                        segments.push((left, bottom));
                        segments.push((right, top));
                    }
                }
                _ => unreachable!("a cell has an even number of crossings"),
            }
        }
    }

    let mut adjacency: BTreeMap<EdgeId, Vec<usize>> = BTreeMap::new();
    for (s, &(a, b)) in segments.iter().enumerate() {
        adjacency.entry(a).or_default().push(s);
        adjacency.entry(b).or_default().push(s);
    }

    let mut used = vec![false; segments.len()];
    let mut polylines = Vec::new();
    // Open chains start at degree-1 crossings; the rest are loops.
    let starts: Vec<EdgeId> = adjacency
        .iter()
        .filter(|(_, segs)| segs.len() == 1)
        .map(|(e, _)| *e)
        .chain(adjacency.keys().copied())
        .collect();
    for start in starts {
        let Some(&first) = adjacency[&start].iter().find(|&&s| !used[s]) else {
            continue;
        };
        let mut chain = vec![start];
        let mut current = start;
        let mut seg = first;
        loop {
            used[seg] = true;
            let (a, b) = segments[seg];
            let next = if a == current { b } else { a };
            chain.push(next);
            current = next;
            match adjacency[&current].iter().find(|&&s| !used[s]) {
                Some(&s) => seg = s,
                None => break,
            }
        }
        let closed = chain.len() > 2 && chain.first() == chain.last();
        if closed {
            chain.pop();
        }
        let mut points: Vec<[f64; 2]> = Vec::with_capacity(chain.len());
        for e in chain {
            let p = crossing_point(grid, e, level);
            if points.last() != Some(&p) {
                points.push(p);
            }
        }
        if closed && points.len() > 1 && points.first() == points.last() {
            points.pop();
        }
        polylines.push(Polyline { points, closed });
    }
    polylines
}

fn crossing_point(grid: &SurfaceGrid, edge: EdgeId, level: f64) -> [f64; 2] {
    let ((i0, j0), (i1, j1)) = match edge {
        EdgeId::H(i, j) => ((i, j), (i + 1, j)),
        EdgeId::V(i, j) => ((i, j), (i, j + 1)),
    };
    let (fa, fb) = (grid.value(i0, j0), grid.value(i1, j1));
    let t = ((level - fa) / (fb - fa)).clamp(0.0, 1.0);
    let u = grid.u_axis[i0] + t * (grid.u_axis[i1] - grid.u_axis[i0]);
    let v = grid.v_axis[j0] + t * (grid.v_axis[j1] - grid.v_axis[j0]);
    [u, v]
}
