//! Minimal SVG line plots with error bars.

use std::fmt::Write;

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    /// (x, mean, sd) in grid order; sd is drawn as a symmetric bar.
    pub points: Vec<(f64, f64, f64)>,
}

/// Data ranges covered by the axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlotFrame {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub log_x: bool,
}

/// A log x-axis is used when all x are positive and the largest is at least
/// 16 times the smallest (the usual doubling grids).
pub fn plot_frame(series: &[Series]) -> Option<PlotFrame> {
    let pts: Vec<&(f64, f64, f64)> = series.iter().flat_map(|s| &s.points).collect();
    if pts.is_empty() {
        return None;
    }
    let fold = |f: fn(f64, f64) -> f64, init: f64, g: &dyn Fn(&(f64, f64, f64)) -> f64| {
        pts.iter().map(|p| g(p)).fold(init, f)
    };
    let x_min = fold(f64::min, f64::INFINITY, &|p| p.0);
    let x_max = fold(f64::max, f64::NEG_INFINITY, &|p| p.0);
    let mut y_min = fold(f64::min, f64::INFINITY, &|p| p.1 - p.2.abs());
    let mut y_max = fold(f64::max, f64::NEG_INFINITY, &|p| p.1 + p.2.abs());
    if y_max - y_min < 1e-9 {
        y_min -= 0.05;
        y_max += 0.05;
    }
    Some(PlotFrame {
        x_min,
        x_max,
        y_min,
        y_max,
        log_x: x_min > 0.0 && x_max >= 16.0 * x_min,
    })
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, esc(title));

    let Some(f) = plot_frame(series) else {
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">no data</text>"#, W / 2.0, H / 2.0);
        svg.push_str("</svg>\n");
        return svg;
    };
    let tx = |x: f64| if f.log_x { x.log2() } else { x };
    let (x0, x1) = (tx(f.x_min), tx(f.x_max));
    let span_x = if x1 > x0 { x1 - x0 } else { 1.0 };
    let px = |x: f64| LEFT + (tx(x) - x0) / span_x * (W - LEFT - RIGHT);
    let py = |y: f64| H - BOTTOM - (y - f.y_min) / (f.y_max - f.y_min) * (H - TOP - BOTTOM);

    // axes
    let _ = writeln!(
        svg,
        r#"<path d="M{LEFT} {TOP} V{} H{}" fill="none" stroke="black"/>"#,
        H - BOTTOM,
        W - RIGHT
    );
    let mut xs: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    for x in xs {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            px(x),
            H - BOTTOM + 16.0,
            x
        );
    }
    for i in 0..=4 {
        let y = f.y_min + (f.y_max - f.y_min) * i as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{:.3}</text>"#,
            LEFT - 6.0,
            py(y) + 4.0,
            y
        );
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (LEFT + W - RIGHT) / 2.0, H - 12.0, esc(x_label));
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
        (TOP + H - BOTTOM) / 2.0,
        esc(y_label)
    );

    for (i, s) in series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let path: Vec<String> = s
            .points
            .iter()
            .enumerate()
            .map(|(j, p)| format!("{}{:.1} {:.1}", if j == 0 { 'M' } else { 'L' }, px(p.0), py(p.1)))
            .collect();
        let _ = writeln!(svg, r#"<path d="{}" fill="none" stroke="{c}" stroke-width="2"/>"#, path.join(" "));
        for &(x, m, sd) in &s.points {
            if sd > 0.0 {
                let _ = writeln!(
                    svg,
                    r#"<path d="M{0:.1} {1:.1} V{2:.1}" stroke="{c}"/>"#,
                    px(x),
                    py(m - sd),
                    py(m + sd)
                );
            }
            let _ = writeln!(svg, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{c}"/>"#, px(x), py(m));
        }
        let ly = TOP + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<rect x="{}" y="{}" width="12" height="3" fill="{c}"/><text x="{}" y="{}">{}</text>"#,
            W - RIGHT + 12.0,
            ly,
            W - RIGHT + 28.0,
            ly + 5.0,
            esc(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}
