//! Self-contained SVG polyline plots and downsampled CSV extracts.
//!
//! Hand-rolled so the repo carries no plotting dependency; output is plain
//! deterministic text.

use std::fmt::Write as _;

pub struct Series<'a> {
    pub label: &'a str,
    pub color: &'a str,
    pub points: Vec<(f64, f64)>,
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 160.0;
const MARGIN_TOP: f64 = 50.0;
const MARGIN_BOTTOM: f64 = 55.0;

fn data_range(series: &[Series], pick: impl Fn(&(f64, f64)) -> f64) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in series {
        for p in &s.points {
            let v = pick(p);
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        // Flat series still needs a visible band.
        let pad = lo.abs().max(1.0) * 0.1;
        return (lo - pad, hi + pad);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

/// Render series as polylines with axes, tick labels, a title, and a legend.
pub fn polyline_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (x_lo, x_hi) = data_range(series, |p| p.0);
    let (y_lo, y_hi) = data_range(series, |p| p.1);
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let sx = |x: f64| MARGIN_LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let sy = |y: f64| MARGIN_TOP + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="monospace" font-size="13">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="28" text-anchor="middle" font-size="16">{}</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        title
    );

    // Axes.
    let x0 = MARGIN_LEFT;
    let y0 = MARGIN_TOP + plot_h;
    let _ = writeln!(
        svg,
        r#"<line x1="{x0:.1}" y1="{y0:.1}" x2="{:.1}" y2="{y0:.1}" stroke="black"/>"#,
        x0 + plot_w
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{x0:.1}" y1="{y0:.1}" x2="{x0:.1}" y2="{MARGIN_TOP:.1}" stroke="black"/>"#
    );

    // Ticks and grid.
    for i in 0..=5 {
        let f = i as f64 / 5.0;
        let xv = x_lo + f * (x_hi - x_lo);
        let xp = sx(xv);
        let _ = writeln!(
            svg,
            r#"<line x1="{xp:.1}" y1="{y0:.1}" x2="{xp:.1}" y2="{:.1}" stroke="black"/>"#,
            y0 + 5.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{xp:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            y0 + 20.0,
            format_tick(xv)
        );
        let yv = y_lo + f * (y_hi - y_lo);
        let yp = sy(yv);
        let _ = writeln!(
            svg,
            r#"<line x1="{:.1}" y1="{yp:.1}" x2="{x0:.1}" y2="{yp:.1}" stroke="black"/>"#,
            x0 - 5.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            x0 - 9.0,
            yp + 4.0,
            format_tick(yv)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 12.0,
        x_label
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0,
        y_label
    );

    // Polylines and legend.
    for (idx, s) in series.iter().enumerate() {
        if !s.points.is_empty() {
            let mut path = String::new();
            for (x, y) in &s.points {
                let _ = write!(path, "{:.2},{:.2} ", sx(*x), sy(*y));
            }
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
                s.color,
                path.trim_end()
            );
        }
        let ly = MARGIN_TOP + 14.0 + idx as f64 * 18.0;
        let lx = WIDTH - MARGIN_RIGHT + 14.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{}" stroke-width="2"/>"#,
            ly - 4.0,
            lx + 22.0,
            ly - 4.0,
            s.color
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{ly:.1}">{}</text>"#,
            lx + 28.0,
            s.label
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn format_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if a >= 1000.0 {
        format!("{v:.0}")
    } else if a >= 1.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.3}")
    }
}

/// Average consecutive rows down to at most `max_points` buckets. Returns
/// (first iter of bucket, per-column bucket means).
pub fn downsample(rows: &[(usize, Vec<f64>)], max_points: usize) -> Vec<(usize, Vec<f64>)> {
    if rows.is_empty() || max_points == 0 {
        return Vec::new();
    }
    let bucket = rows.len().div_ceil(max_points).max(1);
    rows.chunks(bucket)
        .map(|chunk| {
            let iter = chunk[0].0;
            let cols = chunk[0].1.len();
            let mut means = vec![0.0; cols];
            for (_, values) in chunk {
                for (m, v) in means.iter_mut().zip(values) {
                    *m += v;
                }
            }
            for m in &mut means {
                *m /= chunk.len() as f64;
            }
            (iter, means)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn downsample_2000_rows_to_200_points() {
        let rows: Vec<(usize, Vec<f64>)> =
            (0..2000).map(|i| (i, vec![i as f64, 0.5])).collect();
        let down = downsample(&rows, 200);
        assert_eq!(down.len(), 200);
        assert_eq!(down[0].0, 0);
        // Bucket mean of 0..10 is 4.5.
        assert!((down[0].1[0] - 4.5).abs() < 1e-12);
        assert!(down.iter().all(|(_, v)| v[1] == 0.5));
    }

    #[test]
    fn downsample_short_log_keeps_every_row() {
        let rows: Vec<(usize, Vec<f64>)> = (0..7).map(|i| (i, vec![i as f64])).collect();
        assert_eq!(downsample(&rows, 200).len(), 7);
    }

    #[test]
    fn svg_is_deterministic_and_contains_polyline() {
        let series = [Series {
            label: "lambda",
            color: "#1f77b4",
            points: (0..50).map(|i| (i as f64, 0.5 + (i as f64 * 0.1).sin() * 0.1)).collect(),
        }];
        let a = polyline_svg("ratio trajectory", "iteration", "ratio", &series);
        let b = polyline_svg("ratio trajectory", "iteration", "ratio", &series);
        assert_eq!(a, b);
        assert!(a.contains("<polyline"));
        assert!(a.contains("ratio trajectory"));
        assert!(a.contains("</svg>"));
    }

    #[test]
    fn flat_series_renders_without_degenerate_range() {
        let series = [Series {
            label: "flat",
            color: "#000000",
            points: (0..10).map(|i| (i as f64, 0.5)).collect(),
        }];
        let svg = polyline_svg("flat", "x", "y", &series);
        assert!(svg.contains("<polyline"));
        assert!(!svg.contains("NaN"));
    }
}
