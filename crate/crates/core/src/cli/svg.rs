//! Minimal line-plot emitter: axes, tick labels and polylines.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// Draw markers instead of a line.
    pub markers: bool,
}

impl Series {
    pub fn line(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self { label: label.into(), points, markers: false }
    }

    pub fn dots(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self { label: label.into(), points, markers: true }
    }
}

pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub series: Vec<Series>,
}

impl Plot {
    pub fn new(title: impl Into<String>, x_label: impl Into<String>, y_label: impl Into<String>) -> Self {
        Self { title: title.into(), x_label: x_label.into(), y_label: y_label.into(), log_x: false, series: Vec::new() }
    }

    pub fn render(&self) -> String {
        let tx = |x: f64| if self.log_x { x.log10() } else { x };
        let pts = self.series.iter().flat_map(|s| s.points.iter()).filter(|p| p.0.is_finite() && p.1.is_finite() && (!self.log_x || p.0 > 0.0));
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in pts {
            x0 = x0.min(tx(x));
            x1 = x1.max(tx(x));
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        y0 = y0.min(0.0);
        if x1 <= x0 {
            x1 = x0 + 1.0;
        }
        if y1 <= y0 {
            y1 = y0 + 1.0;
        }
        let px = |x: f64| MARGIN + (tx(x) - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
        let py = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);

        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#);
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#, W / 2.0, escape(&self.title));
        let (l, r, b, t) = (MARGIN, W - MARGIN, H - MARGIN, MARGIN);
        let _ = writeln!(s, r#"<path d="M{l},{t} L{l},{b} L{r},{b}" stroke="black" fill="none"/>"#);
        for k in 0..=4 {
            let f = k as f64 / 4.0;
            let xv = x0 + f * (x1 - x0);
            let yv = y0 + f * (y1 - y0);
            let x = l + f * (r - l);
            let y = b - f * (b - t);
            let xl = if self.log_x { format!("1e{xv:.1}") } else { format!("{xv:.3}") };
            let _ = writeln!(s, r#"<line x1="{x}" y1="{b}" x2="{x}" y2="{}" stroke="black"/><text x="{x}" y="{}" text-anchor="middle">{xl}</text>"#, b + 4.0, b + 16.0);
            let _ = writeln!(s, r#"<line x1="{}" y1="{y}" x2="{l}" y2="{y}" stroke="black"/><text x="{}" y="{}" text-anchor="end">{yv:.3}</text>"#, l - 4.0, l - 6.0, y + 4.0);
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 14.0, escape(&self.x_label));
        let _ = writeln!(s, r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#, H / 2.0, H / 2.0, escape(&self.y_label));
        for (i, series) in self.series.iter().enumerate() {
            let c = COLORS[i % COLORS.len()];
            let visible: Vec<(f64, f64)> = series
                .points
                .iter()
                .copied()
                .filter(|p| p.0.is_finite() && p.1.is_finite() && (!self.log_x || p.0 > 0.0))
                .map(|(x, y)| (px(x), py(y)))
                .collect();
            if series.markers {
                for (x, y) in &visible {
                    let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="{c}"/>"#);
                }
            } else if !visible.is_empty() {
                let d: Vec<String> = visible.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
                let _ = writeln!(s, r#"<polyline points="{}" stroke="{c}" fill="none" stroke-width="1.5"/>"#, d.join(" "));
            }
            let ly = t + 14.0 * i as f64;
            let _ = writeln!(s, r#"<text x="{}" y="{ly}" fill="{c}" text-anchor="end">{}</text>"#, r, escape(&series.label));
        }
        s.push_str("</svg>\n");
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_series_and_survives_empty_input() {
        let mut p = Plot::new("a < b", "x", "y");
        p.series.push(Series::line("curve", vec![(0.0, 0.0), (1.0, 2.0)]));
        p.series.push(Series::dots("pts", vec![(0.5, 1.0)]));
        let svg = p.render();
        assert!(svg.contains("<polyline") && svg.contains("<circle") && svg.contains("a &lt; b"));
        assert!(Plot::new("", "", "").render().ends_with("</svg>\n"));
    }
}
