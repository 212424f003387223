//! Self-contained SVG rendering of accuracy-cost curves.

use std::fmt::Write;

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    /// `(mean_cost, accuracy)` pairs in drawing order.
    pub points: Vec<(f64, f64)>,
}

/// A standalone model drawn as a single marker.
#[derive(Debug, Clone, PartialEq)]
pub struct Marker {
    pub label: String,
    pub cost: f64,
    pub accuracy: f64,
}

/// Horizontal dashed line at a standalone model's accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct Guide {
    pub label: String,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub markers: Vec<Marker>,
    pub guides: Vec<Guide>,
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

pub fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c if (c as u32) < 0x20 && !matches!(c, '\t' | '\n' | '\r') => {}
            c => out.push(c),
        }
    }
    out
}

/// Tick positions at a 1/2/5 step covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let span = hi - lo;
    if !span.is_finite() || span <= 0.0 {
        return vec![lo];
    }
    let raw = span / target as f64;
    let magnitude = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * magnitude)
        .find(|s| span / s <= target as f64)
        .unwrap_or(10.0 * magnitude);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn tick_label(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 {
        "0".into()
    } else if !(1e-2..1e5).contains(&a) {
        let s = format!("{v:.2e}");
        // 1.20e9 -> 1.2e9
        match s.split_once('e') {
            Some((m, e)) => format!("{}e{e}", m.trim_end_matches('0').trim_end_matches('.')),
            None => s,
        }
    } else {
        let s = format!("{v:.2}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn bounds(chart: &Chart) -> ((f64, f64), (f64, f64)) {
    let xs = chart
        .series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .chain(chart.markers.iter().map(|m| m.cost));
    let ys = chart
        .series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.1))
        .chain(chart.markers.iter().map(|m| m.accuracy))
        .chain(chart.guides.iter().map(|g| g.accuracy));
    let range = |it: &mut dyn Iterator<Item = f64>| {
        it.filter(|v| v.is_finite())
            .fold(None, |acc: Option<(f64, f64)>, v| match acc {
                None => Some((v, v)),
                Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
            })
            .unwrap_or((0.0, 1.0))
    };
    let pad = |(lo, hi): (f64, f64), min_pad: f64| {
        let p = ((hi - lo) * 0.05).max(min_pad);
        (lo - p, hi + p)
    };
    let (x_lo, x_hi) = range(&mut xs.into_iter());
    let (y_lo, y_hi) = range(&mut ys.into_iter());
    (
        pad((x_lo, x_hi), x_hi.abs().max(1.0) * 0.01),
        pad((y_lo, y_hi), 0.5),
    )
}

/// Renders the chart as a standalone SVG document.
pub fn render_svg(chart: &Chart) -> String {
    let ((x0, x1), (y0, y1)) = bounds(chart);
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="28" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + pw / 2.0,
        escape(&chart.title)
    );

    s.push_str("<g class=\"axes\" stroke=\"#333\" fill=\"none\">\n");
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}"/>"#
    );
    s.push_str("</g>\n<g class=\"ticks\" fill=\"#333\">\n");
    for t in ticks(x0, x1, 6) {
        let x = sx(t);
        let _ = writeln!(
            s,
            r##"<line x1="{x:.1}" y1="{b:.1}" x2="{x:.1}" y2="{b5:.1}" stroke="#333"/><text x="{x:.1}" y="{ty:.1}" text-anchor="middle">{}</text>"##,
            escape(&tick_label(t)),
            b = TOP + ph,
            b5 = TOP + ph + 5.0,
            ty = TOP + ph + 18.0
        );
    }
    for t in ticks(y0, y1, 6) {
        let y = sy(t);
        let _ = writeln!(
            s,
            r##"<line x1="{l5:.1}" y1="{y:.1}" x2="{LEFT}" y2="{y:.1}" stroke="#333"/><text x="{tx:.1}" y="{ty:.1}" text-anchor="end">{}</text>"##,
            escape(&tick_label(t)),
            l5 = LEFT - 5.0,
            tx = LEFT - 8.0,
            ty = y + 4.0
        );
    }
    s.push_str("</g>\n");
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 15.0,
        escape(&chart.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(20 {:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
        TOP + ph / 2.0,
        escape(&chart.y_label)
    );

    s.push_str("<g class=\"guides\" stroke=\"#888\" stroke-dasharray=\"6 4\">\n");
    for g in &chart.guides {
        let y = sy(g.accuracy);
        let _ = writeln!(
            s,
            r#"<line x1="{LEFT}" y1="{y:.2}" x2="{:.1}" y2="{y:.2}"><title>{}</title></line>"#,
            LEFT + pw,
            escape(&g.label)
        );
    }
    s.push_str("</g>\n");

    for (k, series) in chart.series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = series
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="curve" fill="none" stroke="{color}" stroke-width="2" points="{}"><title>{}</title></polyline>"#,
            pts.join(" "),
            escape(&series.label)
        );
    }

    s.push_str("<g class=\"models\">\n");
    for m in &chart.markers {
        let (x, y) = (sx(m.cost), sy(m.accuracy));
        let _ = writeln!(
            s,
            r##"<circle class="model" cx="{x:.2}" cy="{y:.2}" r="5" fill="#000"><title>{}</title></circle><text x="{:.2}" y="{:.2}">{}</text>"##,
            escape(&m.label),
            x + 7.0,
            y - 7.0,
            escape(&m.label)
        );
    }
    s.push_str("</g>\n<g class=\"legend\">\n");
    let lx = LEFT + pw + 15.0;
    for (k, series) in chart.series.iter().enumerate() {
        let y = TOP + 10.0 + 20.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            lx + 20.0,
            PALETTE[k % PALETTE.len()],
            lx + 26.0,
            y + 4.0,
            escape(&series.label)
        );
    }
    s.push_str("</g>\n</svg>\n");
    s
}
