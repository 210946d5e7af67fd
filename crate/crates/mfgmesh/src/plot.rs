//! Minimal SVG line plots: per series, a mean line and a shaded band of
//! one standard deviation on each side, with a legend. No drawing
//! dependencies; the output is plain hand-assembled XML.

/// One plotted point: position on the x axis, mean, and the half-width
/// of the uncertainty band around it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlotPoint {
    pub x: f64,
    pub mean: f64,
    pub std: f64,
}

/// A labelled line with its band. An empty point list still earns a
/// legend entry, so absent metrics stay visible as absent.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<PlotPoint>,
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 72.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 48.0;
const MARGIN_BOTTOM: f64 = 56.0;
const PALETTE: &[&str] = &["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn escape_xml(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let abs = v.abs();
    if abs >= 1000.0 || abs < 0.001 {
        format!("{v:.2e}")
    } else {
        let s = format!("{v:.3}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        s.to_string()
    }
}

struct Bounds {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

fn data_bounds(series: &[Series]) -> Bounds {
    let mut b = Bounds {
        x_min: f64::INFINITY,
        x_max: f64::NEG_INFINITY,
        y_min: f64::INFINITY,
        y_max: f64::NEG_INFINITY,
    };
    for s in series {
        for p in &s.points {
            b.x_min = b.x_min.min(p.x);
            b.x_max = b.x_max.max(p.x);
            b.y_min = b.y_min.min(p.mean - p.std);
            b.y_max = b.y_max.max(p.mean + p.std);
        }
    }
    if !b.x_min.is_finite() {
        b = Bounds { x_min: 0.0, x_max: 1.0, y_min: 0.0, y_max: 1.0 };
    }
    if b.x_max == b.x_min {
        b.x_min -= 0.5;
        b.x_max += 0.5;
    }
    if b.y_max == b.y_min {
        b.y_min -= 0.5;
        b.y_max += 0.5;
    }
    let pad = (b.y_max - b.y_min) * 0.05;
    b.y_min -= pad;
    b.y_max += pad;
    b
}

/// Renders a complete standalone SVG document.
pub fn render(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let b = data_bounds(series);
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let sx = |x: f64| MARGIN_LEFT + (x - b.x_min) / (b.x_max - b.x_min) * plot_w;
    let sy = |y: f64| MARGIN_TOP + (b.y_max - y) / (b.y_max - b.y_min) * plot_h;

    let mut svg = String::new();
    svg.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str(&format!(
        "  <rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "  <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"16\">{}</text>\n",
        WIDTH / 2.0,
        escape_xml(title)
    ));

    // Axes with ticks and grid lines.
    let ticks = 5usize;
    for t in 0..=ticks {
        let frac = t as f64 / ticks as f64;
        let xv = b.x_min + frac * (b.x_max - b.x_min);
        let yv = b.y_min + frac * (b.y_max - b.y_min);
        let xp = sx(xv);
        let yp = sy(yv);
        svg.push_str(&format!(
            "  <line x1=\"{xp:.2}\" y1=\"{:.2}\" x2=\"{xp:.2}\" y2=\"{:.2}\" \
             stroke=\"#dddddd\" stroke-width=\"1\"/>\n",
            MARGIN_TOP,
            MARGIN_TOP + plot_h
        ));
        svg.push_str(&format!(
            "  <line x1=\"{:.2}\" y1=\"{yp:.2}\" x2=\"{:.2}\" y2=\"{yp:.2}\" \
             stroke=\"#dddddd\" stroke-width=\"1\"/>\n",
            MARGIN_LEFT,
            MARGIN_LEFT + plot_w
        ));
        svg.push_str(&format!(
            "  <text x=\"{xp:.2}\" y=\"{:.2}\" text-anchor=\"middle\" \
             font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            MARGIN_TOP + plot_h + 18.0,
            fmt_num(xv)
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" \
             font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            MARGIN_LEFT - 6.0,
            yp + 4.0,
            fmt_num(yv)
        ));
    }
    svg.push_str(&format!(
        "  <rect x=\"{MARGIN_LEFT}\" y=\"{MARGIN_TOP}\" width=\"{plot_w}\" height=\"{plot_h}\" \
         fill=\"none\" stroke=\"#333333\" stroke-width=\"1\"/>\n"
    ));
    svg.push_str(&format!(
        "  <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"13\">{}</text>\n",
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 14.0,
        escape_xml(x_label)
    ));
    svg.push_str(&format!(
        "  <text x=\"18\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"13\" transform=\"rotate(-90 18 {})\">{}</text>\n",
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0,
        escape_xml(y_label)
    ));

    for (idx, s) in series.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        if !s.points.is_empty() {
            // Band: upper edge forward, lower edge back.
            let mut pts = String::new();
            for p in &s.points {
                pts.push_str(&format!("{:.2},{:.2} ", sx(p.x), sy(p.mean + p.std)));
            }
            for p in s.points.iter().rev() {
                pts.push_str(&format!("{:.2},{:.2} ", sx(p.x), sy(p.mean - p.std)));
            }
            svg.push_str(&format!(
                "  <polygon points=\"{}\" fill=\"{color}\" fill-opacity=\"0.18\" \
                 stroke=\"none\"/>\n",
                pts.trim_end()
            ));
            let line: Vec<String> = s
                .points
                .iter()
                .map(|p| format!("{:.2},{:.2}", sx(p.x), sy(p.mean)))
                .collect();
            svg.push_str(&format!(
                "  <polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" \
                 stroke-width=\"1.5\"/>\n",
                line.join(" ")
            ));
        }
        // Legend entry (present even for empty series).
        let ly = MARGIN_TOP + 14.0 + idx as f64 * 18.0;
        svg.push_str(&format!(
            "  <rect x=\"{:.2}\" y=\"{:.2}\" width=\"14\" height=\"10\" fill=\"{color}\"/>\n",
            MARGIN_LEFT + plot_w - 160.0,
            ly - 9.0
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.2}\" y=\"{ly:.2}\" font-family=\"sans-serif\" \
             font-size=\"12\">{}</text>\n",
            MARGIN_LEFT + plot_w - 142.0,
            escape_xml(&s.label)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}
