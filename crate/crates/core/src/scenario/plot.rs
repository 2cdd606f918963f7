//! Minimal SVG line, bar and scatter plots of the run metrics.

use std::fmt::Write as _;

use super::metrics::{HistBin, MetricsSeries};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 60.0;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit<'a>(points: impl Iterator<Item = &'a (f64, f64)>) -> Frame {
        let mut f = Frame {
            x0: f64::INFINITY,
            x1: f64::NEG_INFINITY,
            y0: 0.0,
            y1: f64::NEG_INFINITY,
        };
        for &(x, y) in points.filter(|(x, y)| x.is_finite() && y.is_finite()) {
            f.x0 = f.x0.min(x);
            f.x1 = f.x1.max(x);
            f.y0 = f.y0.min(y);
            f.y1 = f.y1.max(y);
        }
        if !(f.x1 > f.x0) {
            f.x0 = if f.x0.is_finite() { f.x0 - 0.5 } else { 0.0 };
            f.x1 = f.x0 + 1.0;
        }
        if !(f.y1 > f.y0) {
            f.y1 = f.y0 + 1.0;
        }
        f
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn open(title: &str, xlabel: &str, ylabel: &str, f: &Frame) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{title}</text>"#, WIDTH / 2.0);
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(s, r#"<path d="M{l},{t} L{l},{b} L{r},{b}" fill="none" stroke="black"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#, WIDTH / 2.0, HEIGHT - 15.0);
    let _ = writeln!(
        s,
        r#"<text x="15" y="{}" text-anchor="middle" transform="rotate(-90 15 {})">{ylabel}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    for k in 0..=4 {
        let fx = f.x0 + (f.x1 - f.x0) * f64::from(k) / 4.0;
        let fy = f.y0 + (f.y1 - f.y0) * f64::from(k) / 4.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, f.px(fx), b + 16.0, tick(fx));
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, l - 4.0, f.py(fy) + 4.0, tick(fy));
    }
    s
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-2..1e4).contains(&a) {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}").trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn polyline(s: &mut String, f: &Frame, points: &[(f64, f64)], color: &str, width: f64) {
    // NaN gaps split the line.
    let mut d = String::new();
    let mut pen_down = false;
    for &(x, y) in points {
        if !(x.is_finite() && y.is_finite()) {
            pen_down = false;
            continue;
        }
        let _ = write!(d, "{}{:.2},{:.2} ", if pen_down { "L" } else { "M" }, f.px(x), f.py(y));
        pen_down = true;
    }
    let _ = writeln!(s, r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="{width}"/>"#);
}

fn dots(s: &mut String, f: &Frame, points: &[(f64, f64)], color: &str) {
    for &(x, y) in points.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="1.5" fill="{color}"/>"#, f.px(x), f.py(y));
    }
}

fn time_series(title: &str, ylabel: &str, raw: &[(f64, f64)], smooth: &[(f64, f64)]) -> String {
    let f = Frame::fit(raw.iter().chain(smooth));
    let mut s = open(title, "time (s)", ylabel, &f);
    dots(&mut s, &f, raw, "steelblue");
    polyline(&mut s, &f, smooth, "crimson", 2.0);
    s.push_str("</svg>\n");
    s
}

fn hist_plot(title: &str, xlabel: &str, bins: &[HistBin]) -> String {
    let pts: Vec<(f64, f64)> = bins.iter().flat_map(|b| [(b.lo, b.density), (b.hi, b.kde)]).collect();
    let f = Frame::fit(pts.iter());
    let mut s = open(title, xlabel, "density", &f);
    for b in bins {
        let (x, y) = (f.px(b.lo), f.py(b.density));
        let _ = writeln!(
            s,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="lightsteelblue" stroke="white"/>"#,
            f.px(b.hi) - x,
            f.py(0.0) - y
        );
    }
    let kde: Vec<(f64, f64)> = bins.iter().map(|b| ((b.lo + b.hi) / 2.0, b.kde)).collect();
    polyline(&mut s, &f, &kde, "crimson", 2.0);
    s.push_str("</svg>\n");
    s
}

/// `(file name, svg)` for every plot.
pub fn render_all(m: &MetricsSeries) -> Vec<(&'static str, String)> {
    let t = |k: usize| m.sample_time_s(k);
    let series = |v: &[f64], scale: f64| -> Vec<(f64, f64)> { v.iter().enumerate().map(|(k, y)| (t(k), y * scale)).collect() };
    let scatter: Vec<(f64, f64)> = m
        .delay_smoothed_s
        .iter()
        .zip(&m.rate_bps)
        .map(|(d, r)| (d * 1e3, r * 1e-6))
        .collect();
    let f = Frame::fit(scatter.iter());
    let mut scatter_svg = open("Rate against delay", "smoothed delay (ms)", "rate (Mb/s)", &f);
    dots(&mut scatter_svg, &f, &scatter, "steelblue");
    scatter_svg.push_str("</svg>\n");
    vec![
        (
            "rate.svg",
            time_series("Goodput", "rate (Mb/s)", &series(&m.rate_bps, 1e-6), &series(&m.rate_smoothed_bps, 1e-6)),
        ),
        (
            "delay.svg",
            time_series("Packet delay", "delay (ms)", &series(&m.delay_s, 1e3), &series(&m.delay_smoothed_s, 1e3)),
        ),
        ("rate_hist.svg", hist_plot("Smoothed goodput", "rate (bit/s)", &m.rate_hist)),
        ("delay_hist.svg", hist_plot("Packet delay", "delay (s)", &m.delay_hist)),
        ("scatter.svg", scatter_svg),
    ]
}
