//! Minimal static SVG output for overlay plots and sweep heatmaps.

use std::fmt::Write;

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 50.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn header(out: &mut String, w: f64, h: f64, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(out, "<title>{}</title>", escape(title));
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
        w / 2.0,
        escape(title)
    );
}

/// Recorded and predicted series over the same samples, one polyline each.
/// `first_sample` is the 1-based index of the first point.
pub fn overlay(truth: &[f64], predicted: &[f64], first_sample: usize, title: &str) -> String {
    let (lo, hi) = truth
        .iter()
        .chain(predicted)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let n = truth.len();
    let x = |i: usize| MARGIN + (WIDTH - 2.0 * MARGIN) * i as f64 / (n.max(2) - 1) as f64;
    let y = |v: f64| HEIGHT - MARGIN - (HEIGHT - 2.0 * MARGIN) * (v - lo) / span;

    let mut out = String::new();
    header(&mut out, WIDTH, HEIGHT, title);
    let _ = writeln!(
        out,
        r##"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="#999"/>"##,
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    );
    for (series, colour, label) in [(truth, "#1f77b4", "recorded"), (predicted, "#d62728", "predicted")] {
        let points: Vec<String> = series
            .iter()
            .enumerate()
            .map(|(i, v)| format!("{:.2},{:.2}", x(i), y(*v)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline class="{label}" fill="none" stroke="{colour}" stroke-width="1" points="{}"/>"#,
            points.join(" ")
        );
    }
    let axis = |out: &mut String, xx: f64, yy: f64, anchor: &str, text: String| {
        let _ = writeln!(
            out,
            r#"<text x="{xx:.2}" y="{yy:.2}" font-family="sans-serif" font-size="11" text-anchor="{anchor}">{text}</text>"#
        );
    };
    axis(&mut out, MARGIN, HEIGHT - MARGIN + 16.0, "start", first_sample.to_string());
    axis(&mut out, WIDTH - MARGIN, HEIGHT - MARGIN + 16.0, "end", (first_sample + n - 1).to_string());
    axis(&mut out, MARGIN - 6.0, MARGIN + 4.0, "end", format!("{hi:.3}"));
    axis(&mut out, MARGIN - 6.0, HEIGHT - MARGIN, "end", format!("{lo:.3}"));
    axis(&mut out, WIDTH - MARGIN, MARGIN - 8.0, "end", "blue: recorded, red: predicted".into());
    out.push_str("</svg>\n");
    out
}

/// Colour ramp from dark blue (low) to yellow (high).
fn ramp(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(40.0, 250.0), lerp(30.0, 230.0), lerp(120.0, 40.0))
}

/// Grid of test correlations, one row per neuron count and one column per delay.
pub fn heatmap(neurons: &[usize], d_max: usize, cells: &[(usize, usize, Option<f64>)], title: &str) -> String {
    let cell_w = 44.0;
    let cell_h = 24.0;
    let left = 70.0;
    let top = 60.0;
    let w = left + cell_w * d_max as f64 + 20.0;
    let h = top + cell_h * neurons.len() as f64 + 40.0;
    let valid: Vec<f64> = cells.iter().filter_map(|c| c.2).collect();
    let lo = valid.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = valid.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };

    let mut out = String::new();
    header(&mut out, w, h, title);
    for (row, n) in neurons.iter().enumerate() {
        let yy = top + row as f64 * cell_h;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">N={n}</text>"#,
            left - 6.0,
            yy + cell_h * 0.65
        );
        for d in 1..=d_max {
            let xx = left + (d - 1) as f64 * cell_w;
            let corr = cells.iter().find(|c| c.0 == *n && c.1 == d).and_then(|c| c.2);
            let (fill, label) = match corr {
                Some(c) => (ramp((c - lo) / span), format!("{c:.2}")),
                None => ("#cccccc".to_string(), "-".to_string()),
            };
            let _ = writeln!(
                out,
                r#"<rect x="{xx:.1}" y="{yy:.1}" width="{cell_w}" height="{cell_h}" fill="{fill}" stroke="white"/>"#
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="10" text-anchor="middle" fill="{}">{label}</text>"#,
                xx + cell_w / 2.0,
                yy + cell_h * 0.65,
                if corr.map(|c| (c - lo) / span > 0.6).unwrap_or(true) { "black" } else { "white" }
            );
        }
    }
    for d in 1..=d_max {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">d={d}</text>"#,
            left + (d as f64 - 0.5) * cell_w,
            top - 6.0
        );
    }
    out.push_str("</svg>\n");
    out
}
