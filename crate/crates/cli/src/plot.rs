//! Minimal SVG charts for the figure outputs.

use std::fmt::Write as _;

use predvae::PianoRoll;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

impl Series {
    pub fn new(name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series { name: name.into(), points, dashed: false }
    }

    pub fn dashed(mut self) -> Self {
        self.dashed = true;
        self
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, title: &str) {
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(out, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, WIDTH / 2.0, escape(title)).unwrap();
}

fn legend(out: &mut String, names: &[(&str, bool)]) {
    for (i, (name, dashed)) in names.iter().enumerate() {
        let y = TOP + 14.0 + 20.0 * i as f64;
        let x = WIDTH - RIGHT + 14.0;
        let dash = if *dashed { r#" stroke-dasharray="5,3""# } else { "" };
        let color = COLORS[i % COLORS.len()];
        writeln!(out, r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="2"{dash}/>"#, x + 22.0).unwrap();
        writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, x + 28.0, y + 4.0, escape(name)).unwrap();
    }
}

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| span / s <= 6.0).unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() * step;
    (0..)
        .map(|i| first + i as f64 * step)
        .take_while(|t| *t <= hi + step * 1e-9)
        .collect()
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{:.3}", v);
    s.trim_end_matches('0').trim_end_matches('.').to_owned()
}

fn axes(out: &mut String, x_range: (f64, f64), y_range: (f64, f64), x_label: &str, y_label: &str, x_ticks: bool) {
    let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, HEIGHT - BOTTOM, TOP);
    writeln!(out, r#"<path d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" fill="none" stroke="black"/>"#).unwrap();
    for t in nice_ticks(y_range.0, y_range.1) {
        let y = y0 - (t - y_range.0) / (y_range.1 - y_range.0).max(1e-12) * (y0 - y1);
        writeln!(out, r##"<line x1="{x0}" y1="{y}" x2="{x1}" y2="{y}" stroke="#ddd"/>"##).unwrap();
        writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, x0 - 6.0, y + 4.0, fmt_tick(t)).unwrap();
    }
    if x_ticks {
        for t in nice_ticks(x_range.0, x_range.1) {
            let x = x0 + (t - x_range.0) / (x_range.1 - x_range.0).max(1e-12) * (x1 - x0);
            writeln!(out, r#"<line x1="{x}" y1="{y0}" x2="{x}" y2="{}" stroke="black"/>"#, y0 + 5.0).unwrap();
            writeln!(out, r#"<text x="{x}" y="{}" text-anchor="middle">{}</text>"#, y0 + 18.0, fmt_tick(t)).unwrap();
        }
    }
    writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, HEIGHT - 12.0, escape(x_label)).unwrap();
    writeln!(
        out,
        r#"<text transform="translate(16,{}) rotate(-90)" text-anchor="middle">{}</text>"#,
        (y0 + y1) / 2.0,
        escape(y_label)
    )
    .unwrap();
}

/// Line chart; `y_range` defaults to the data range.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series], y_range: Option<(f64, f64)>) -> String {
    let all = series.iter().flat_map(|s| s.points.iter());
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in all {
        xmin = xmin.min(x);
        xmax = xmax.max(x);
        ymin = ymin.min(y);
        ymax = ymax.max(y);
    }
    if xmin > xmax {
        (xmin, xmax, ymin, ymax) = (0.0, 1.0, 0.0, 1.0);
    }
    if xmin == xmax {
        xmax = xmin + 1.0;
    }
    let (ymin, ymax) = y_range.unwrap_or(if ymin == ymax { (ymin - 0.5, ymax + 0.5) } else { (ymin, ymax) });
    let px = |x: f64| LEFT + (x - xmin) / (xmax - xmin) * (WIDTH - RIGHT - LEFT);
    let py = |y: f64| HEIGHT - BOTTOM - (y - ymin) / (ymax - ymin) * (HEIGHT - BOTTOM - TOP);

    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, (xmin, xmax), (ymin, ymax), x_label, y_label, true);
    for (i, s) in series.iter().enumerate() {
        let d: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let dash = if s.dashed { r#" stroke-dasharray="5,3""# } else { "" };
        writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"{dash}/>"#,
            d.join(" "),
            COLORS[i % COLORS.len()]
        )
        .unwrap();
    }
    let names: Vec<(&str, bool)> = series.iter().map(|s| (s.name.as_str(), s.dashed)).collect();
    legend(&mut out, &names);
    out.push_str("</svg>\n");
    out
}

/// Grouped bars: one group per category, one bar per series.
pub fn bar_chart(title: &str, y_label: &str, categories: &[String], series: &[(String, Vec<f64>)], y_max: f64) -> String {
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, (0.0, 1.0), (0.0, y_max), "", y_label, false);
    let plot_w = WIDTH - RIGHT - LEFT;
    let group_w = plot_w / categories.len().max(1) as f64;
    let bar_w = group_w * 0.8 / series.len().max(1) as f64;
    let py = |y: f64| HEIGHT - BOTTOM - y.clamp(0.0, y_max) / y_max * (HEIGHT - BOTTOM - TOP);
    for (c, name) in categories.iter().enumerate() {
        let gx = LEFT + c as f64 * group_w + group_w * 0.1;
        for (s, (_, values)) in series.iter().enumerate() {
            let v = values.get(c).copied().unwrap_or(0.0);
            let top = py(v);
            writeln!(
                out,
                r#"<rect x="{:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="{}"><title>{}</title></rect>"#,
                gx + s as f64 * bar_w,
                bar_w,
                HEIGHT - BOTTOM - top,
                COLORS[s % COLORS.len()],
                fmt_tick(v)
            )
            .unwrap();
        }
        let cx = gx + group_w * 0.4;
        let cy = HEIGHT - BOTTOM + 14.0;
        let rotate = if categories.len() > 8 { format!(r#" transform="rotate(-35 {cx} {cy})""#) } else { String::new() };
        writeln!(out, r#"<text x="{cx:.2}" y="{cy}" text-anchor="middle" font-size="10"{rotate}>{}</text>"#, escape(name)).unwrap();
    }
    let names: Vec<(&str, bool)> = series.iter().map(|(n, _)| (n.as_str(), false)).collect();
    legend(&mut out, &names);
    out.push_str("</svg>\n");
    out
}

/// Piano-roll image, lowest pitch at the bottom; columns before `seed_cols`
/// are drawn in grey.
pub fn roll_image(roll: &PianoRoll, seed_cols: usize) -> String {
    let cell = (900.0 / roll.n_cols().max(1) as f64).clamp(1.0, 8.0);
    let row_h = (400.0 / roll.n_pitches() as f64).clamp(2.0, 8.0);
    let w = roll.n_cols() as f64 * cell;
    let h = roll.n_pitches() as f64 * row_h;
    let mut out = String::new();
    writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#).unwrap();
    writeln!(out, r##"<rect width="100%" height="100%" fill="#fafafa"/>"##).unwrap();
    for r in 0..roll.n_pitches() {
        let y = h - (r + 1) as f64 * row_h;
        let row = roll.row(r);
        let mut c = 0;
        while c < row.len() {
            if row[c] == 1 {
                let start = c;
                while c < row.len() && row[c] == 1 && (c != seed_cols || c == start) {
                    c += 1;
                }
                let color = if start < seed_cols { "#888" } else { "#1f77b4" };
                writeln!(
                    out,
                    r#"<rect x="{:.2}" y="{y:.2}" width="{:.2}" height="{row_h:.2}" fill="{color}"/>"#,
                    start as f64 * cell,
                    (c - start) as f64 * cell
                )
                .unwrap();
            } else {
                c += 1;
            }
        }
    }
    if seed_cols > 0 && seed_cols < roll.n_cols() {
        let x = seed_cols as f64 * cell;
        writeln!(out, r#"<line x1="{x}" y1="0" x2="{x}" y2="{h}" stroke="black" stroke-dasharray="3,3"/>"#).unwrap();
    }
    out.push_str("</svg>\n");
    out
}
