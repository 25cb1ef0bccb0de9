//! Minimal static SVG charts for the report figures.

use std::fmt::Write;

const FONT: &str = "font-family=\"sans-serif\" font-size=\"11\"";
const PALETTE: [&str; 9] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn open(width: f64, height: f64, title: &str) -> String {
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    );
    let _ = writeln!(s, "<rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"18\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{}</text>",
        width / 2.0,
        escape(title)
    );
    s
}

/// Diverging blue-white-red colour for a value in [-1, 1].
fn diverging(v: f64) -> String {
    let t = v.clamp(-1.0, 1.0);
    let (r, g, b) = if t >= 0.0 {
        (255.0, 255.0 * (1.0 - t), 255.0 * (1.0 - t))
    } else {
        (255.0 * (1.0 + t), 255.0 * (1.0 + t), 255.0)
    };
    format!("rgb({},{},{})", r.round(), g.round(), b.round())
}

/// Vertical bars on a fixed [-1, 1] axis; absent values are left blank.
pub fn bar_chart(title: &str, bars: &[(String, Option<f64>)]) -> String {
    let (left, top, plot_h, bar_w) = (50.0, 30.0, 240.0, 40.0);
    let width = left + bars.len() as f64 * bar_w + 20.0;
    let height = top + plot_h + 70.0;
    let y = |v: f64| top + (1.0 - v) / 2.0 * plot_h;
    let mut s = open(width.max(200.0), height, title);
    for tick in [-1.0, -0.5, 0.0, 0.5, 1.0] {
        let _ = writeln!(
            s,
            "<line x1=\"{left}\" x2=\"{}\" y1=\"{y}\" y2=\"{y}\" stroke=\"#ccc\"/><text x=\"{}\" y=\"{}\" text-anchor=\"end\" {FONT}>{tick:.1}</text>",
            width - 20.0,
            left - 4.0,
            y(tick) + 4.0,
            y = y(tick)
        );
    }
    for (i, (label, value)) in bars.iter().enumerate() {
        let x = left + i as f64 * bar_w;
        if let Some(v) = value {
            let (y0, y1) = (y(v.max(0.0)), y(v.min(0.0)));
            let _ = writeln!(
                s,
                "<rect x=\"{:.1}\" y=\"{y0:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"{}\"><title>{v:.3}</title></rect>",
                x + 5.0,
                bar_w - 10.0,
                (y1 - y0).max(0.5),
                PALETTE[i % PALETTE.len()]
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" {FONT}>{}</text>",
            x + bar_w / 2.0,
            top + plot_h + 16.0,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Square matrix of correlations; absent cells are grey.
pub fn heatmap(title: &str, names: &[String], cells: &[Vec<Option<f64>>]) -> String {
    let (left, top, cell) = (90.0, 40.0, 36.0);
    let k = names.len() as f64;
    let width = left + k * cell + 20.0;
    let height = top + k * cell + 20.0;
    let mut s = open(width.max(200.0), height, title);
    for (i, name) in names.iter().enumerate() {
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" {FONT}>{}</text>",
            left - 4.0,
            top + (i as f64 + 0.5) * cell + 4.0,
            escape(name)
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" {FONT}>{}</text>",
            left + (i as f64 + 0.5) * cell,
            top - 4.0,
            escape(name)
        );
        for (j, v) in cells[i].iter().enumerate() {
            let (x, y) = (left + j as f64 * cell, top + i as f64 * cell);
            let fill = v.map_or_else(|| "#bbbbbb".to_owned(), diverging);
            let _ = writeln!(
                s,
                "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{cell}\" height=\"{cell}\" fill=\"{fill}\" stroke=\"white\"/>"
            );
            if let Some(v) = v {
                let _ = writeln!(
                    s,
                    "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"9\">{v:.2}</text>",
                    x + cell / 2.0,
                    y + cell / 2.0 + 3.0
                );
            }
        }
    }
    s.push_str("</svg>\n");
    s
}

/// One polyline per series over shared x values; the y axis spans [0, 1].
pub fn line_chart(title: &str, x_label: &str, xs: &[f64], series: &[(String, Vec<f64>)]) -> String {
    let (left, top, plot_w, plot_h) = (50.0, 30.0, 360.0, 220.0);
    let width = left + plot_w + 140.0;
    let height = top + plot_h + 50.0;
    let (lo, hi) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let px = |x: f64| left + (x - lo) / span * plot_w;
    let py = |v: f64| top + (1.0 - v.clamp(0.0, 1.0)) * plot_h;
    let mut s = open(width, height, title);
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let _ = writeln!(
            s,
            "<line x1=\"{left}\" x2=\"{}\" y1=\"{y:.1}\" y2=\"{y:.1}\" stroke=\"#ccc\"/><text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\" {FONT}>{tick:.2}</text>",
            left + plot_w,
            left - 4.0,
            py(tick) + 4.0,
            y = py(tick)
        );
    }
    for &x in xs {
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" {FONT}>{x}</text>",
            px(x),
            top + plot_h + 16.0
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" {FONT}>{}</text>",
        left + plot_w / 2.0,
        top + plot_h + 36.0,
        escape(x_label)
    );
    for (i, (name, ys)) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = xs
            .iter()
            .zip(ys)
            .map(|(&x, &y)| format!("{:.1},{:.1}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            s,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.5\"/>",
            points.join(" ")
        );
        let ly = top + 10.0 + i as f64 * 16.0;
        let _ = writeln!(
            s,
            "<line x1=\"{:.1}\" x2=\"{:.1}\" y1=\"{ly:.1}\" y2=\"{ly:.1}\" stroke=\"{colour}\" stroke-width=\"2\"/><text x=\"{:.1}\" y=\"{:.1}\" {FONT}>{}</text>",
            left + plot_w + 10.0,
            left + plot_w + 30.0,
            left + plot_w + 34.0,
            ly + 4.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}
