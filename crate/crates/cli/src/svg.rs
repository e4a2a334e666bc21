//! Minimal static SVG line charts.

use std::fmt::Write;

pub struct Series {
    pub label: String,
    pub color: &'static str,
    pub opacity: f64,
    pub lines: Vec<Vec<(f64, f64)>>,
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 48.0;

pub fn line_chart(title: &str, series: &[Series]) -> String {
    let pts = series.iter().flat_map(|s| s.lines.iter().flatten());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts.filter(|(x, y)| x.is_finite() && y.is_finite()) {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);

    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="24" font-size="14" text-anchor="middle">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        out,
        r#"<polyline points="{PAD},{PAD} {PAD},{} {},{}" fill="none" stroke="black"/>"#,
        H - PAD,
        W - PAD,
        H - PAD
    );
    for (v, anchor_y) in [(y0, H - PAD), (y1, PAD)] {
        let _ = writeln!(out, r#"<text x="{}" y="{anchor_y}" font-size="10" text-anchor="end">{v:.3}</text>"#, PAD - 4.0);
    }
    for (v, anchor_x) in [(x0, PAD), (x1, W - PAD)] {
        let _ = writeln!(out, r#"<text x="{anchor_x}" y="{}" font-size="10" text-anchor="middle">{v:.3}</text>"#, H - PAD + 14.0);
    }
    for (k, s) in series.iter().enumerate() {
        for line in &s.lines {
            let points: Vec<String> = line
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            let _ = writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{}" stroke-opacity="{}" stroke-width="1"/>"#,
                points.join(" "),
                s.color,
                s.opacity
            );
        }
        let ly = PAD + 14.0 * k as f64;
        let _ = writeln!(out, r#"<rect x="{}" y="{}" width="10" height="10" fill="{}"/>"#, W - PAD - 110.0, ly - 9.0, s.color);
        let _ = writeln!(out, r#"<text x="{}" y="{ly}" font-size="11">{}</text>"#, W - PAD - 95.0, escape(&s.label));
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
