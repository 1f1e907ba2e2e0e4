//! Minimal SVG charts: line/marker plots with optional log axes and error
//! bars, a diverging heat map and an arrow map.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 6] = ["#1b6ca8", "#d1495b", "#2e8b57", "#edae49", "#6c4f8c", "#555555"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Style {
    Line,
    Dashed,
    Markers,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub errors: Option<Vec<f64>>,
    pub style: Style,
}

impl Series {
    pub fn new(name: &str, xs: Vec<f64>, ys: Vec<f64>, style: Style) -> Self {
        Self { name: name.to_string(), xs, ys, errors: None, style }
    }

    pub fn with_errors(mut self, e: Vec<f64>) -> Self {
        self.errors = Some(e);
        self
    }
}

#[derive(Debug, Clone, Default)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite() && (!log || *v > 0.0)) {
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 * hi.abs().max(1.0) {
            lo -= 0.5;
            hi += 0.5;
        }
        let pad = 0.05 * (hi - lo);
        Self { lo: lo - pad, hi: hi + pad, log }
    }

    fn map(&self, v: f64, a: f64, b: f64) -> Option<f64> {
        if self.log && v <= 0.0 || !v.is_finite() {
            return None;
        }
        let t = if self.log { v.log10() } else { v };
        Some(a + (t - self.lo) / (self.hi - self.lo) * (b - a))
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            let mut out = Vec::new();
            let mut e = self.lo.ceil() as i32;
            while (e as f64) <= self.hi {
                out.push((10f64.powi(e), format!("1e{e}")));
                e += 1;
            }
            return out;
        }
        let span = self.hi - self.lo;
        let raw = span / 5.0;
        let mag = 10f64.powf(raw.log10().floor());
        let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
        let mut v = (self.lo / step).ceil() * step;
        let mut out = Vec::new();
        while v <= self.hi + 1e-9 * step {
            let label = if step >= 1.0 && v.abs() < 1e6 { format!("{v:.0}") } else { format!("{v:.3e}") };
            out.push((v, label));
            v += step;
        }
        out
    }
}

fn header(s: &mut String, title: &str) {
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn frame(s: &mut String, xa: &Axis, ya: &Axis, x_label: &str, y_label: &str) {
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, H - BOTTOM, TOP);
    let _ = writeln!(s, r#"<rect x="{x0}" y="{y1}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#, x1 - x0, y0 - y1);
    for (v, label) in xa.ticks() {
        if let Some(px) = xa.map(v, x0, x1) {
            let _ = writeln!(s, r#"<line x1="{px:.2}" y1="{y0}" x2="{px:.2}" y2="{:.1}" stroke="black"/><text x="{px:.2}" y="{:.1}" text-anchor="middle">{label}</text>"#, y0 + 5.0, y0 + 18.0);
        }
    }
    for (v, label) in ya.ticks() {
        if let Some(py) = ya.map(v, y0, y1) {
            let _ = writeln!(s, r#"<line x1="{:.1}" y1="{py:.2}" x2="{x0}" y2="{py:.2}" stroke="black"/><text x="{:.1}" y="{:.2}" text-anchor="end">{label}</text>"#, x0 - 5.0, x0 - 8.0, py + 4.0);
        }
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, H - 18.0, escape(x_label));
    let _ = writeln!(s, r#"<text transform="translate(18 {:.1}) rotate(-90)" text-anchor="middle">{}</text>"#, (y0 + y1) / 2.0, escape(y_label));
}

pub fn chart(c: &Chart) -> String {
    let xa = Axis::fit(c.series.iter().flat_map(|s| s.xs.iter().copied()), c.log_x);
    let ya = Axis::fit(
        c.series.iter().flat_map(|s| {
            let e = s.errors.clone().unwrap_or_else(|| vec![0.0; s.ys.len()]);
            s.ys.iter().zip(e).flat_map(|(y, e)| [y - e, *y, y + e]).collect::<Vec<_>>()
        }),
        c.log_y,
    );
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, H - BOTTOM, TOP);
    let mut s = String::new();
    header(&mut s, &c.title);
    frame(&mut s, &xa, &ya, &c.x_label, &c.y_label);
    for (k, series) in c.series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<(f64, f64, usize)> = series
            .xs
            .iter()
            .zip(&series.ys)
            .enumerate()
            .filter_map(|(i, (x, y))| Some((xa.map(*x, x0, x1)?, ya.map(*y, y0, y1)?, i)))
            .collect();
        match series.style {
            Style::Line | Style::Dashed => {
                let d: Vec<String> = pts.iter().map(|(x, y, _)| format!("{x:.2},{y:.2}")).collect();
                let dash = if series.style == Style::Dashed { r#" stroke-dasharray="6 4""# } else { "" };
                let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#, d.join(" "));
            }
            Style::Markers => {
                for (x, y, i) in &pts {
                    if let Some(e) = series.errors.as_ref().map(|e| e[*i]) {
                        let yv = series.ys[*i];
                        if let (Some(a), Some(b)) = (ya.map(yv - e, y0, y1), ya.map(yv + e, y0, y1)) {
                            let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{a:.2}" x2="{x:.2}" y2="{b:.2}" stroke="{color}"/>"#);
                        }
                    }
                    let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{color}"/>"#);
                }
            }
        }
        let ly = TOP + 14.0 + 16.0 * k as f64;
        let _ = writeln!(s, r#"<rect x="{:.1}" y="{:.1}" width="12" height="4" fill="{color}"/><text x="{:.1}" y="{:.1}">{}</text>"#, W - RIGHT + 10.0, ly - 4.0, W - RIGHT + 26.0, ly, escape(&series.name));
    }
    s.push_str("</svg>\n");
    s
}

fn diverging(t: f64) -> String {
    let t = t.clamp(-1.0, 1.0);
    let (r, g, b) = if t < 0.0 {
        let u = -t;
        (255.0 * (1.0 - u) + 27.0 * u, 255.0 * (1.0 - u) + 108.0 * u, 255.0 * (1.0 - u) + 168.0 * u)
    } else {
        (255.0 * (1.0 - t) + 209.0 * t, 255.0 * (1.0 - t) + 73.0 * t, 255.0 * (1.0 - t) + 91.0 * t)
    };
    format!("rgb({},{},{})", r.round() as u8, g.round() as u8, b.round() as u8)
}

/// Cells in row-major order over x (fastest) then z, colored about `white`.
pub fn heatmap(title: &str, extent: [f64; 4], nx: usize, nz: usize, values: &[f64], white: f64, label: &str) -> String {
    let [xlo, xhi, zlo, zhi] = extent;
    let xa = Axis { lo: xlo, hi: xhi, log: false };
    let za = Axis { lo: zlo, hi: zhi, log: false };
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, H - BOTTOM, TOP);
    let span = values.iter().fold(0f64, |m, v| m.max((v - white).abs())).max(f64::MIN_POSITIVE);
    let mut s = String::new();
    header(&mut s, title);
    let cw = (x1 - x0) / nx as f64;
    let ch = (y0 - y1) / nz as f64;
    for iz in 0..nz {
        for ix in 0..nx {
            let v = values[iz * nx + ix];
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                x0 + ix as f64 * cw,
                y0 - (iz + 1) as f64 * ch,
                cw + 0.2,
                ch + 0.2,
                diverging((v - white) / span)
            );
        }
    }
    frame(&mut s, &xa, &za, "x (µm)", "z (µm)");
    for k in 0..=4 {
        let t = -1.0 + 0.5 * k as f64;
        let y = TOP + 20.0 + 40.0 * k as f64;
        let _ = writeln!(s, r#"<rect x="{:.1}" y="{y:.1}" width="16" height="16" fill="{}" stroke="black"/><text x="{:.1}" y="{:.1}">{:.3e}</text>"#, W - RIGHT + 12.0, diverging(-t), W - RIGHT + 32.0, y + 12.0, white - t * span);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, W - RIGHT + 12.0, TOP + 8.0, escape(label));
    s.push_str("</svg>\n");
    s
}

/// Arrows (dx, dz) at (x, z), one color per group.
pub fn arrows(title: &str, groups: &[(String, Vec<[f64; 4]>)], unit: &str) -> String {
    let all: Vec<[f64; 4]> = groups.iter().flat_map(|g| g.1.iter().copied()).collect();
    let xa = Axis::fit(all.iter().map(|a| a[0]), false);
    let za = Axis::fit(all.iter().map(|a| a[1]), false);
    let longest = all.iter().fold(0f64, |m, a| m.max(a[2].hypot(a[3]))).max(f64::MIN_POSITIVE);
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, H - BOTTOM, TOP);
    let scale = 40.0 / longest;
    let mut s = String::new();
    header(&mut s, title);
    frame(&mut s, &xa, &za, "x (µm)", "z (µm)");
    for (k, (name, items)) in groups.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        for a in items {
            let (Some(px), Some(py)) = (xa.map(a[0], x0, x1), za.map(a[1], y0, y1)) else { continue };
            let _ = writeln!(s, r#"<line x1="{px:.2}" y1="{py:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="1.5"/><circle cx="{px:.2}" cy="{py:.2}" r="2" fill="{color}"/>"#, px + a[2] * scale, py - a[3] * scale);
        }
        let ly = TOP + 14.0 + 16.0 * k as f64;
        let _ = writeln!(s, r#"<rect x="{:.1}" y="{:.1}" width="12" height="4" fill="{color}"/><text x="{:.1}" y="{:.1}">{}</text>"#, W - RIGHT + 10.0, ly - 4.0, W - RIGHT + 26.0, ly, escape(name));
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">40 px = {longest:.3e} {}</text>"#, W - RIGHT + 10.0, H - BOTTOM, escape(unit));
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_is_well_formed_and_stable() {
        let c = Chart {
            title: "a < b".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            log_x: true,
            log_y: true,
            series: vec![Series::new("s", vec![1.0, 10.0, 100.0], vec![2.0, 0.0, 5.0], Style::Markers).with_errors(vec![0.5; 3])],
        };
        let a = chart(&c);
        assert_eq!(a, chart(&c));
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
        assert!(a.contains("a &lt; b"));
        assert_eq!(a.matches("<circle").count(), 2);
    }

    #[test]
    fn heatmap_has_every_cell() {
        let s = heatmap("h", [-1.0, 1.0, -1.0, 1.0], 3, 2, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0], 2.5, "u");
        assert_eq!(s.matches("<rect").count(), 1 + 6 + 1 + 5);
    }
}
