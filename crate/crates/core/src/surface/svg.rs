use std::fmt::Write;

use super::{IsohypseSet, SurfaceGrid};

#[derive(Debug, Clone, PartialEq)]
pub struct SvgStyle {
    pub width: f64,
    pub height: f64,
    pub margin: f64,
    pub title: Option<String>,
    pub heatmap: bool,
    /// Embedded verbatim (escaped) in a `<metadata>` element.
    pub metadata: Option<String>,
}

impl Default for SvgStyle {
    fn default() -> Self {
        SvgStyle { width: 640.0, height: 640.0, margin: 40.0, title: None, heatmap: true, metadata: None }
    }
}

// viridis, sampled at five stops
const STOPS: [(f64, [u8; 3]); 5] =
    [(0.00, [68, 1, 84]), (0.25, [59, 82, 139]), (0.50, [33, 145, 140]), (0.75, [94, 201, 98]), (1.00, [253, 231, 37])];

fn color(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.5 };
    let k = STOPS.iter().position(|&(s, _)| s >= t).unwrap_or(STOPS.len() - 1).max(1);
    let (s0, c0) = STOPS[k - 1];
    let (s1, c1) = STOPS[k];
    let w = (t - s0) / (s1 - s0);
    let mix = |a: u8, b: u8| (a as f64 + w * (b as f64 - a as f64)).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(c0[0], c1[0]), mix(c0[1], c1[1]), mix(c0[2], c1[2]))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn label(level: f64) -> String {
    crate::output::fmt_sig9(level)
}

/// Renders a heatmap of the valid nodes with contour paths on top. The
/// boundary set (level 0 or its threshold substitute) is drawn in red.
pub fn render_svg(grid: &SurfaceGrid, isohypses: &[IsohypseSet], style: &SvgStyle) -> Vec<u8> {
    let plot_w = style.width - 2.0 * style.margin;
    let plot_h = style.height - 2.0 * style.margin;
    let x = |u: f64| style.margin + u * plot_w;
    let y = |v: f64| style.margin + (1.0 - v) * plot_h;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
        w = style.width,
        h = style.height
    );
    if let Some(meta) = &style.metadata {
        let _ = writeln!(out, "<metadata>{}</metadata>", escape(meta));
    }
    if let Some(title) = &style.title {
        let _ = writeln!(out, "<title>{}</title>", escape(title));
    }
    let _ = writeln!(out, r#"<rect x="0" y="0" width="{}" height="{}" fill="white"/>"#, style.width, style.height);

    if style.heatmap && grid.nx >= 2 && grid.ny >= 2 {
        let (lo, hi) = grid.value_range().unwrap_or((0.0, 1.0));
        let span = hi - lo;
        let cw = plot_w / (grid.nx - 1) as f64;
        let ch = plot_h / (grid.ny - 1) as f64;
        let _ = writeln!(out, r#"<g class="heatmap" shape-rendering="crispEdges">"#);
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                if !grid.is_valid(i, j) {
                    continue;
                }
                let t = if span > 0.0 { (grid.value(i, j) - lo) / span } else { 0.5 };
                let x0 = (x(grid.u_axis[i]) - cw / 2.0).max(style.margin);
                let x1 = (x(grid.u_axis[i]) + cw / 2.0).min(style.margin + plot_w);
                let y0 = (y(grid.v_axis[j]) - ch / 2.0).max(style.margin);
                let y1 = (y(grid.v_axis[j]) + ch / 2.0).min(style.margin + plot_h);
                let _ = writeln!(
                    out,
                    r#"<rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="{}"/>"#,
                    x0,
                    y0,
                    x1 - x0,
                    y1 - y0,
                    color(t)
                );
            }
        }
        let _ = writeln!(out, "</g>");
        let _ = writeln!(
            out,
            r#"<text x="{:.3}" y="{:.3}" font-size="11" font-family="sans-serif">phi in [{}, {}]</text>"#,
            style.margin,
            style.height - style.margin / 3.0,
            label(lo),
            label(hi)
        );
    }

    let _ = writeln!(
        out,
        r#"<rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="none" stroke="black" stroke-width="1"/>"#,
        style.margin, style.margin, plot_w, plot_h
    );

    for set in isohypses {
        let boundary = set.is_boundary();
        let (class, stroke, width, dash) = if boundary {
            ("isohypse decision-boundary", "#d62728", 2.5, r#" stroke-dasharray="6 3""#)
        } else {
            ("isohypse", "white", 1.2, "")
        };
        for line in &set.polylines {
            if line.points.is_empty() {
                continue;
            }
            let mut d = String::new();
            for (k, p) in line.points.iter().enumerate() {
                let _ = write!(d, "{}{:.3} {:.3} ", if k == 0 { "M" } else { "L" }, x(p[0]), y(p[1]));
            }
            if line.closed {
                d.push('Z');
            }
            let _ = writeln!(
                out,
                r#"<path class="{class}" data-level="{lvl}" d="{d}" fill="none" stroke="{stroke}" stroke-width="{width}"{dash}><title>level {lvl}</title></path>"#,
                lvl = label(set.level),
                d = d.trim_end(),
            );
            let first = line.points[0];
            let _ = writeln!(
                out,
                r#"<text class="isohypse-label" x="{:.3}" y="{:.3}" font-size="10" font-family="sans-serif" fill="{stroke}">{}</text>"#,
                x(first[0]) + 3.0,
                y(first[1]) - 3.0,
                label(set.level)
            );
        }
    }
    out.push_str("</svg>\n");
    out.into_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::extract_isohypses;

    #[test]
    fn one_path_per_linear_contour() {
        let g = SurfaceGrid::from_fn(11, 11, |u, v| u + v - 1.0);
        let sets = extract_isohypses(&g, &[0.0]);
        let svg = String::from_utf8(render_svg(&g, &sets, &SvgStyle::default())).unwrap();
        assert_eq!(svg.matches("<path").count(), 1);
        assert!(svg.contains(r#"data-level="0""#));
        assert!(svg.contains("decision-boundary"));
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn heatmap_only() {
        let g = SurfaceGrid::from_fn(4, 4, |u, v| u * v);
        let svg = String::from_utf8(render_svg(&g, &[], &SvgStyle::default())).unwrap();
        assert_eq!(svg.matches("<path").count(), 0);
        assert!(svg.matches("<rect").count() >= 16);
    }

    #[test]
    fn deterministic_and_escaped() {
        let g = SurfaceGrid::from_fn(6, 6, |u, v| u - v);
        let sets = extract_isohypses(&g, &[0.0, 0.3]);
        let style = SvgStyle { metadata: Some(r#"{"a":"<b>"}"#.into()), ..Default::default() };
        let a = render_svg(&g, &sets, &style);
        assert_eq!(a, render_svg(&g, &sets, &style));
        let text = String::from_utf8(a).unwrap();
        assert!(text.contains("&lt;b&gt;"));
    }

    #[test]
    fn colormap_endpoints() {
        assert_eq!(color(0.0), "#440154");
        assert_eq!(color(1.0), "#fde725");
    }
}
