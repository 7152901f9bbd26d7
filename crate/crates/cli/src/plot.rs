//! Self-contained log-log SVG plots. Output depends only on the data.

use crate::report::PlotSpec;
use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 72.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 52.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#7f7f7f"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Decade-aligned `[lo, hi]` in log10 covering the values.
fn log_range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v.log10()), b.max(v.log10())));
    let (mut lo, mut hi) = (lo.floor(), hi.ceil());
    if hi <= lo {
        lo -= 0.5;
        hi += 0.5;
    }
    (lo, hi)
}

fn tick_label(e: f64) -> String {
    format!("1e{}", e as i64)
}

pub fn loglog_svg(spec: &PlotSpec, series: &[(String, Vec<(f64, f64)>)], hash: &str) -> String {
    let pts = || series.iter().flat_map(|(_, p)| p.iter());
    let (x0, x1) = log_range(pts().map(|p| p.0));
    let (y0, y1) = log_range(pts().map(|p| p.1));
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x.log10() - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (y1 - y.log10()) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, "<desc>config_sha256={hash}</desc>");
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="13">{}</text>"#, LEFT + pw / 2.0, escape(&spec.title));

    // decade grid
    let mut e = x0.ceil();
    while e <= x1 + 1e-9 {
        let x = LEFT + (e - x0) / (x1 - x0) * pw;
        let _ = writeln!(s, r##"<line x1="{x:.2}" y1="{TOP:.2}" x2="{x:.2}" y2="{:.2}" stroke="#dddddd"/>"##, TOP + ph);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, TOP + ph + 16.0, tick_label(e));
        e += 1.0;
    }
    let mut e = y0.ceil();
    while e <= y1 + 1e-9 {
        let y = TOP + (y1 - e) / (y1 - y0) * ph;
        let _ = writeln!(s, r##"<line x1="{LEFT:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/>"##, LEFT + pw);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 6.0, y + 4.0, tick_label(e));
        e += 1.0;
    }
    let _ = writeln!(s, r#"<rect x="{LEFT:.2}" y="{TOP:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 12.0,
        escape(&spec.x)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(&spec.y)
    );

    for (i, (label, p)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = p.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        if p.len() > 1 {
            let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
        }
        for &(x, y) in p {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#, sx(x), sy(y));
        }
        let ly = TOP + 12.0 + 16.0 * i as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(s, r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#, lx + 18.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 24.0, ly + 4.0, escape(label));
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> PlotSpec {
        PlotSpec { x: "lambda".into(), y: "norm".into(), series: None, title: "a < b".into() }
    }

    #[test]
    fn same_input_same_bytes() {
        let series = vec![("norm".to_string(), vec![(0.01, 3.0), (0.1, 1.0), (1.0, 0.3)])];
        let a = loglog_svg(&spec(), &series, "abc");
        let b = loglog_svg(&spec(), &series, "abc");
        assert_eq!(a, b);
        assert!(a.contains("a &lt; b") && a.contains("config_sha256=abc"));
        assert_eq!(a.matches("<circle").count(), 3);
    }

    #[test]
    fn single_point_gets_a_range() {
        let series = vec![("y".to_string(), vec![(1.0, 1.0)])];
        let s = loglog_svg(&spec(), &series, "h");
        assert!(!s.contains("NaN") && !s.contains("inf"));
    }
}
