//! Static SVG figures. Output depends only on the data: fixed canvas,
//! fixed number formatting, no timestamps.

use std::fmt::Write;

use faer::Mat;

use crate::error::{Error, Result};

const W: f64 = 720.0;
const H: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 30.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;

pub const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Debug, Clone)]
pub struct Line {
    pub label: String,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub color: String,
    pub dashed: bool,
}

#[derive(Debug, Clone)]
pub struct Band {
    pub xs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub color: String,
}

#[derive(Debug, Clone, Default)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub lines: Vec<Line>,
    pub bands: Vec<Band>,
    /// Horizontal reference lines, drawn dashed.
    pub thresholds: Vec<(f64, String)>,
    pub y_range: Option<(f64, f64)>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Pads a degenerate range so the axis maps are well defined.
fn span(lo: f64, hi: f64) -> (f64, f64) {
    if !(hi > lo) {
        let pad = if lo == 0.0 { 1.0 } else { 0.5 * lo.abs() };
        (lo - pad, lo + pad)
    } else {
        (lo, hi)
    }
}

fn finite_range<'a>(values: impl Iterator<Item = &'a f64>) -> Option<(f64, f64)> {
    values.filter(|v| v.is_finite()).fold(None, |acc, &v| match acc {
        None => Some((v, v)),
        Some((a, b)) => Some((a.min(v), b.max(v))),
    })
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
    plot_w: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * self.plot_w
    }
    fn py(&self, y: f64) -> f64 {
        let yc = y.clamp(self.y.0, self.y.1);
        TOP + (self.y.1 - yc) / (self.y.1 - self.y.0) * (H - TOP - BOTTOM)
    }
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        esc(title)
    );
}

fn axes(out: &mut String, f: &Frame, x_label: &str, y_label: &str) {
    let (x0, x1, y0, y1) = (LEFT, LEFT + f.plot_w, TOP, H - BOTTOM);
    let _ = writeln!(
        out,
        r#"<rect x="{x0:.1}" y="{y0:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
        x1 - x0,
        y1 - y0
    );
    for i in 0..=5 {
        let fx = f.x.0 + (f.x.1 - f.x.0) * i as f64 / 5.0;
        let fy = f.y.0 + (f.y.1 - f.y.0) * i as f64 / 5.0;
        let (px, py) = (f.px(fx), f.py(fy));
        let _ = writeln!(
            out,
            r#"<line x1="{px:.1}" y1="{y1:.1}" x2="{px:.1}" y2="{:.1}" stroke="black"/><text x="{px:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            y1 + 5.0,
            y1 + 18.0,
            tick(fx)
        );
        let _ = writeln!(
            out,
            r#"<line x1="{:.1}" y1="{py:.1}" x2="{x0:.1}" y2="{py:.1}" stroke="black"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            x0 - 5.0,
            x0 - 8.0,
            py + 4.0,
            tick(fy)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        H - 15.0,
        esc(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        esc(y_label)
    );
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-2..1e4).contains(&a) {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

/// Breaks a polyline at non-finite values.
fn polyline_segments(f: &Frame, xs: &[f64], ys: &[f64]) -> Vec<String> {
    let mut segs = Vec::new();
    let mut cur = String::new();
    for (x, y) in xs.iter().zip(ys) {
        if x.is_finite() && y.is_finite() {
            let _ = write!(cur, "{:.2},{:.2} ", f.px(*x), f.py(*y));
        } else if !cur.is_empty() {
            segs.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        segs.push(cur);
    }
    segs
}

impl LinePlot {
    pub fn render(&self) -> Result<String> {
        if self.lines.is_empty() || self.lines.iter().any(|l| l.xs.is_empty() || l.xs.len() != l.ys.len()) {
            return Err(Error::config(format!("plot {:?}: empty or ragged series", self.title)));
        }
        let xr = finite_range(self.lines.iter().flat_map(|l| l.xs.iter()))
            .ok_or_else(|| Error::config("plot has no finite x values"))?;
        let yr = match self.y_range {
            Some(r) => r,
            None => finite_range(
                self.lines
                    .iter()
                    .flat_map(|l| l.ys.iter())
                    .chain(self.bands.iter().flat_map(|b| b.lower.iter().chain(&b.upper)))
                    .chain(self.thresholds.iter().map(|t| &t.0)),
            )
            .ok_or_else(|| Error::config("plot has no finite y values"))?,
        };
        let f = Frame {
            x: span(xr.0, xr.1),
            y: span(yr.0, yr.1),
            plot_w: W - LEFT - RIGHT,
        };
        let mut out = String::new();
        header(&mut out, &self.title);
        for b in &self.bands {
            let mut pts = String::new();
            for (x, u) in b.xs.iter().zip(&b.upper) {
                if x.is_finite() && u.is_finite() {
                    let _ = write!(pts, "{:.2},{:.2} ", f.px(*x), f.py(*u));
                }
            }
            for (x, l) in b.xs.iter().zip(&b.lower).rev() {
                if x.is_finite() && l.is_finite() {
                    let _ = write!(pts, "{:.2},{:.2} ", f.px(*x), f.py(*l));
                }
            }
            let _ = writeln!(
                out,
                r#"<polygon points="{}" fill="{}" fill-opacity="0.25" stroke="none"/>"#,
                pts.trim_end(),
                b.color
            );
        }
        for l in &self.lines {
            let dash = if l.dashed { r#" stroke-dasharray="6 4""# } else { "" };
            for seg in polyline_segments(&f, &l.xs, &l.ys) {
                let _ = writeln!(
                    out,
                    r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"{dash}/>"#,
                    seg.trim_end(),
                    l.color
                );
            }
        }
        for (y, label) in &self.thresholds {
            let py = f.py(*y);
            let _ = writeln!(
                out,
                r#"<line x1="{LEFT:.1}" y1="{py:.1}" x2="{:.1}" y2="{py:.1}" stroke="black" stroke-dasharray="4 4"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                LEFT + f.plot_w,
                LEFT + f.plot_w - 4.0,
                py - 4.0,
                esc(label)
            );
        }
        for (i, l) in self.lines.iter().enumerate() {
            let y = TOP + 14.0 + 16.0 * i as f64;
            let x = LEFT + 10.0;
            let _ = writeln!(
                out,
                r#"<line x1="{x:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{}" stroke-width="2"/><text x="{:.1}" y="{y:.1}">{}</text>"#,
                y - 4.0,
                x + 20.0,
                y - 4.0,
                l.color,
                x + 26.0,
                esc(&l.label)
            );
        }
        axes(&mut out, &f, &self.x_label, &self.y_label);
        out.push_str("</svg>\n");
        Ok(out)
    }
}

/// Bars at integer positions, e.g. VPT per initial condition.
pub fn bar_chart(title: &str, x_label: &str, y_label: &str, values: &[f64], threshold: Option<(f64, String)>) -> Result<String> {
    if values.is_empty() {
        return Err(Error::config(format!("plot {title:?}: empty series")));
    }
    let top = finite_range(values.iter().chain(threshold.iter().map(|t| &t.0))).map_or(1.0, |r| r.1.max(0.0));
    let f = Frame {
        x: (-0.5, values.len() as f64 - 0.5),
        y: span(0.0, top),
        plot_w: W - LEFT - RIGHT,
    };
    let mut out = String::new();
    header(&mut out, title);
    let bw = f.plot_w / values.len() as f64 * 0.8;
    for (i, v) in values.iter().enumerate() {
        let v = if v.is_finite() { v.max(0.0) } else { 0.0 };
        let (x, y) = (f.px(i as f64) - bw / 2.0, f.py(v));
        let _ = writeln!(
            out,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{bw:.2}" height="{:.2}" fill="{}"/>"#,
            f.py(0.0) - y,
            PALETTE[0]
        );
    }
    if let Some((y, label)) = threshold {
        let py = f.py(y);
        let _ = writeln!(
            out,
            r#"<line x1="{LEFT:.1}" y1="{py:.1}" x2="{:.1}" y2="{py:.1}" stroke="black" stroke-dasharray="4 4"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            LEFT + f.plot_w,
            LEFT + f.plot_w - 4.0,
            py - 4.0,
            esc(&label)
        );
    }
    axes(&mut out, &f, x_label, y_label);
    out.push_str("</svg>\n");
    Ok(out)
}

/// Pseudocolor image of `values` (rows along y, columns along x) with a linear
/// color scale and a labeled colorbar. Large fields are block-averaged to at
/// most `200 x 200` cells.
pub struct Heatmap<'a> {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub colorbar_label: String,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub values: &'a Mat<f64>,
}

const STOPS: [(f64, [f64; 3]); 5] = [
    (0.0, [68.0, 1.0, 84.0]),
    (0.25, [59.0, 82.0, 139.0]),
    (0.5, [33.0, 145.0, 140.0]),
    (0.75, [94.0, 201.0, 98.0]),
    (1.0, [253.0, 231.0, 37.0]),
];

fn color(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 1.0 };
    let i = STOPS.iter().rposition(|s| s.0 <= t).unwrap_or(0).min(STOPS.len() - 2);
    let (a, b) = (STOPS[i], STOPS[i + 1]);
    let w = (t - a.0) / (b.0 - a.0);
    let c: Vec<u8> = (0..3).map(|k| (a.1[k] + w * (b.1[k] - a.1[k])).round() as u8).collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

impl Heatmap<'_> {
    pub fn render(&self) -> Result<String> {
        let (ny, nx) = (self.values.nrows(), self.values.ncols());
        if ny == 0 || nx == 0 {
            return Err(Error::config(format!("plot {:?}: empty field", self.title)));
        }
        let (cy, cx) = (ny.min(200), nx.min(200));
        let mut cells = Mat::<f64>::zeros(cy, cx);
        for by in 0..cy {
            let (r0, r1) = (by * ny / cy, ((by + 1) * ny / cy).max(by * ny / cy + 1));
            for bx in 0..cx {
                let (c0, c1) = (bx * nx / cx, ((bx + 1) * nx / cx).max(bx * nx / cx + 1));
                let mut s = 0.0;
                for i in r0..r1 {
                    for j in c0..c1 {
                        s += self.values[(i, j)];
                    }
                }
                cells[(by, bx)] = s / ((r1 - r0) * (c1 - c0)) as f64;
            }
        }
        let (lo, hi) = finite_range((0..cy).flat_map(|i| (0..cx).map(move |j| (i, j))).map(|(i, j)| &cells[(i, j)]))
            .map(|(a, b)| span(a, b))
            .ok_or_else(|| Error::config("field has no finite values"))?;
        let f = Frame {
            x: span(self.x_range.0, self.x_range.1),
            y: span(self.y_range.0, self.y_range.1),
            plot_w: W - LEFT - RIGHT - 70.0,
        };
        let mut out = String::new();
        header(&mut out, &self.title);
        let cw = f.plot_w / cx as f64;
        let ch = (H - TOP - BOTTOM) / cy as f64;
        for by in 0..cy {
            // row 0 at the bottom
            let y = H - BOTTOM - (by + 1) as f64 * ch;
            for bx in 0..cx {
                let _ = writeln!(
                    out,
                    r#"<rect x="{:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                    LEFT + bx as f64 * cw,
                    cw + 0.05,
                    ch + 0.05,
                    color((cells[(by, bx)] - lo) / (hi - lo))
                );
            }
        }
        axes(&mut out, &f, &self.x_label, &self.y_label);
        let bx = LEFT + f.plot_w + 20.0;
        let steps = 50;
        let bh = (H - TOP - BOTTOM) / steps as f64;
        for s in 0..steps {
            let t = (s as f64 + 0.5) / steps as f64;
            let _ = writeln!(
                out,
                r#"<rect x="{bx:.1}" y="{:.2}" width="16" height="{:.2}" fill="{}"/>"#,
                H - BOTTOM - (s + 1) as f64 * bh,
                bh + 0.05,
                color(t)
            );
        }
        for i in 0..=4 {
            let v = lo + (hi - lo) * i as f64 / 4.0;
            let y = H - BOTTOM - (H - TOP - BOTTOM) * i as f64 / 4.0;
            let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, bx + 20.0, y + 4.0, tick(v));
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            bx + 8.0,
            TOP - 8.0,
            esc(&self.colorbar_label)
        );
        out.push_str("</svg>\n");
        Ok(out)
    }
}
