//! Self-contained SVG figures.

use std::fmt::Write;

use ndarray::ArrayView2;

use super::Provenance;
use crate::dataset::Montage;

const FONT: &str = "font-family=\"sans-serif\" font-size=\"10\"";
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

// Viridis control points.
const RAMP: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

/// Hex colour for `t` in `[0, 1]` (clamped).
pub fn colormap(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let x = t * (RAMP.len() - 1) as f64;
    let i = (x.floor() as usize).min(RAMP.len() - 2);
    let f = x - i as f64;
    let c: Vec<u8> = (0..3)
        .map(|k| (RAMP[i][k] + f * (RAMP[i + 1][k] - RAMP[i][k])).round() as u8)
        .collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

/// Path data for `values` drawn left to right inside the box `(x, y, w, h)`,
/// with `lo` at the bottom edge and `hi` at the top.
pub fn polyline_path(values: &[f64], x: f64, y: f64, w: f64, h: f64, lo: f64, hi: f64) -> String {
    let span = if hi > lo { hi - lo } else { 1.0 };
    let step = if values.len() > 1 { w / (values.len() - 1) as f64 } else { 0.0 };
    let mut d = String::with_capacity(values.len() * 16);
    for (i, v) in values.iter().enumerate() {
        let px = x + step * i as f64;
        let py = y + h - (v - lo) / span * h;
        let _ = write!(d, "{}{px:.2},{py:.2}", if i == 0 { "M" } else { " L" });
    }
    d
}

fn min_max<'a>(values: impl IntoIterator<Item = &'a f64>) -> (f64, f64) {
    let (lo, hi) = values
        .into_iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    if lo > hi {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Canvas {
    w: f64,
    h: f64,
    body: String,
}

impl Canvas {
    fn new(w: f64, h: f64) -> Self {
        Self { w, h, body: String::new() }
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, s: &str) {
        let _ = writeln!(
            self.body,
            "<text x=\"{x:.1}\" y=\"{y:.1}\" text-anchor=\"{anchor}\" {FONT}>{}</text>",
            escape(s)
        );
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str, extra: &str) {
        let _ = writeln!(
            self.body,
            "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{w:.2}\" height=\"{h:.2}\" fill=\"{fill}\"{extra}/>"
        );
    }

    fn path(&mut self, d: &str, stroke: &str, class: &str) {
        let _ = writeln!(
            self.body,
            "<path class=\"{class}\" d=\"{d}\" fill=\"none\" stroke=\"{stroke}\" stroke-width=\"1\"/>"
        );
    }

    fn colorbar(&mut self, x: f64, y: f64, h: f64, lo: f64, hi: f64, label: &str) {
        let steps = 32;
        for i in 0..steps {
            let t = i as f64 / (steps - 1) as f64;
            let yy = y + h - (i + 1) as f64 * h / steps as f64;
            self.rect(x, yy, 10.0, h / steps as f64 + 0.1, &colormap(t), "");
        }
        self.text(x + 14.0, y + 8.0, "start", &format!("{hi:.3}"));
        self.text(x + 14.0, y + h, "start", &format!("{lo:.3}"));
        self.text(x + 5.0, y - 6.0, "middle", label);
    }

    fn finish(self, title: &str, prov: &Provenance) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "<?xml version=\"1.0\" encoding=\"UTF-8\"?>");
        let _ = writeln!(s, "<!-- {} -->", prov.inline());
        let _ = writeln!(
            s,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0}\" height=\"{:.0}\" viewBox=\"0 0 {:.0} {:.0}\">",
            self.w, self.h, self.w, self.h
        );
        let _ = writeln!(
            s,
            "<metadata>config_hash={} seed={}</metadata>",
            prov.config_hash, prov.seed
        );
        let _ = writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"16\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">{}</text>",
            self.w / 2.0,
            escape(title)
        );
        s.push_str(&self.body);
        s.push_str("</svg>\n");
        s
    }
}

/// Real-versus-generated waveform overlay, one strip per channel. Each strip
/// shares its vertical scale between the two traces.
pub fn overlay_svg(title: &str, channels: &[String], truth: ArrayView2<f64>, pred: ArrayView2<f64>, prov: &Provenance) -> String {
    let (strip, width, left) = (48.0, 720.0, 60.0);
    let mut c = Canvas::new(left + width + 20.0, 40.0 + strip * channels.len() as f64 + 30.0);
    for (i, name) in channels.iter().enumerate() {
        let y = 30.0 + strip * i as f64;
        let t: Vec<f64> = truth.row(i).to_vec();
        let p: Vec<f64> = pred.row(i).to_vec();
        let (lo, hi) = min_max(t.iter().chain(&p));
        c.text(left - 6.0, y + strip / 2.0 + 3.0, "end", name);
        c.rect(left, y + 2.0, width, strip - 4.0, "none", " stroke=\"#dddddd\"");
        c.path(&polyline_path(&t, left, y + 4.0, width, strip - 8.0, lo, hi), PALETTE[0], "truth");
        c.path(&polyline_path(&p, left, y + 4.0, width, strip - 8.0, lo, hi), PALETTE[1], "pred");
    }
    let y = 40.0 + strip * channels.len() as f64;
    c.rect(left, y, 12.0, 3.0, PALETTE[0], "");
    c.text(left + 16.0, y + 4.0, "start", "real");
    c.rect(left + 60.0, y, 12.0, 3.0, PALETTE[1], "");
    c.text(left + 76.0, y + 4.0, "start", "generated");
    c.finish(title, prov)
}

/// Channel x frequency heatmaps sharing one colour scale. Returns the SVG and
/// the `(min, max)` of that scale.
pub fn heatmap_svg(
    title: &str,
    channels: &[String],
    freqs: &[f64],
    panels: &[(String, ArrayView2<f64>)],
    prov: &Provenance,
) -> (String, (f64, f64)) {
    let (lo, hi) = min_max(panels.iter().flat_map(|(_, g)| g.iter()));
    let (cell_w, cell_h, left, gap) = (4.0, 14.0, 50.0, 30.0);
    let cols = freqs.len() as f64;
    let panel_w = cell_w * cols;
    let width = left + (panel_w + gap) * panels.len() as f64 + 60.0;
    let mut c = Canvas::new(width, 60.0 + cell_h * channels.len() as f64 + 30.0);
    for (k, (name, grid)) in panels.iter().enumerate() {
        let x0 = left + (panel_w + gap) * k as f64;
        c.text(x0 + panel_w / 2.0, 40.0, "middle", name);
        for (i, row) in grid.rows().into_iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let fill = colormap((v - lo) / (hi - lo));
                c.rect(
                    x0 + cell_w * j as f64,
                    48.0 + cell_h * i as f64,
                    cell_w + 0.05,
                    cell_h + 0.05,
                    &fill,
                    &format!(" class=\"cell p{k}\""),
                );
            }
        }
        let yb = 48.0 + cell_h * channels.len() as f64 + 12.0;
        if let (Some(f0), Some(f1)) = (freqs.first(), freqs.last()) {
            c.text(x0, yb, "start", &format!("{f0:.1} Hz"));
            c.text(x0 + panel_w, yb, "end", &format!("{f1:.1} Hz"));
        }
    }
    for (i, name) in channels.iter().enumerate() {
        c.text(left - 6.0, 48.0 + cell_h * (i as f64 + 0.7), "end", name);
    }
    c.colorbar(width - 50.0, 48.0, cell_h * channels.len() as f64, lo, hi, "log10 PSD");
    (c.finish(title, prov), (lo, hi))
}

/// Scalp maps over the projected montage: Gaussian radial-basis shading of
/// per-electrode values, one colour scale shared by all panels. Returns the SVG
/// and the `(min, max)` of the scale.
pub fn scalp_svg(title: &str, montage: &Montage, panels: &[(String, Vec<f64>)], prov: &Provenance) -> (String, (f64, f64)) {
    let (lo, hi) = min_max(panels.iter().flat_map(|(_, v)| v.iter()));
    let radius = (0..montage.len())
        .map(|i| {
            let p = montage.plane(i);
            p[0].hypot(p[1])
        })
        .fold(0.0, f64::max)
        * 1.08;
    let (size, grid, gap) = (180.0, 45usize, 20.0);
    let sigma = 0.3 * radius;
    let width = gap + (size + gap) * panels.len() as f64 + 60.0;
    let mut c = Canvas::new(width, size + 80.0);
    let cell = size / grid as f64;
    for (k, (name, values)) in panels.iter().enumerate() {
        let x0 = gap + (size + gap) * k as f64;
        let y0 = 40.0;
        c.text(x0 + size / 2.0, y0 - 6.0, "middle", name);
        for gi in 0..grid {
            for gj in 0..grid {
                let px = (gj as f64 + 0.5) / grid as f64 * 2.0 - 1.0;
                let py = 1.0 - (gi as f64 + 0.5) / grid as f64 * 2.0;
                if px * px + py * py > 1.0 {
                    continue;
                }
                let (mut num, mut den) = (0.0, 0.0);
                for (e, v) in values.iter().enumerate() {
                    let p = montage.plane(e);
                    let d2 = (p[0] - px * radius).powi(2) + (p[1] - py * radius).powi(2);
                    let w = (-d2 / (2.0 * sigma * sigma)).exp();
                    num += w * v;
                    den += w;
                }
                let fill = colormap((num / den - lo) / (hi - lo));
                c.rect(x0 + cell * gj as f64, y0 + cell * gi as f64, cell + 0.05, cell + 0.05, &fill, "");
            }
        }
        let (cx, cy) = (x0 + size / 2.0, y0 + size / 2.0);
        let _ = writeln!(
            c.body,
            "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"{:.2}\" fill=\"none\" stroke=\"black\"/>",
            size / 2.0
        );
        for e in 0..values.len().min(montage.len()) {
            let p = montage.plane(e);
            let ex = cx + p[0] / radius * size / 2.0;
            let ey = cy - p[1] / radius * size / 2.0;
            let _ = writeln!(c.body, "<circle cx=\"{ex:.2}\" cy=\"{ey:.2}\" r=\"2\" fill=\"black\"/>");
            let _ = writeln!(
                c.body,
                "<text x=\"{ex:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"7\">{}</text>",
                ey - 3.0,
                escape(&montage.names()[e])
            );
        }
    }
    c.colorbar(width - 50.0, 40.0, size, lo, hi, "log10 power");
    (c.finish(title, prov), (lo, hi))
}

/// Grouped bar chart: one panel per metric with bars for each method and
/// error whiskers of one standard deviation.
pub fn bar_svg(title: &str, groups: &[(String, Vec<(String, f64, f64)>)], prov: &Provenance) -> String {
    let (pw, ph, gap, top) = (170.0, 160.0, 30.0, 40.0);
    let mut c = Canvas::new(gap + (pw + gap) * groups.len() as f64, top + ph + 60.0);
    for (k, (metric, bars)) in groups.iter().enumerate() {
        let x0 = gap + (pw + gap) * k as f64;
        let hi = bars.iter().map(|(_, m, s)| m + s).fold(0.0, f64::max);
        let lo = bars.iter().map(|(_, m, s)| m - s).fold(0.0, f64::min);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let y_of = |v: f64| top + ph - (v - lo) / span * ph;
        c.text(x0 + pw / 2.0, top - 8.0, "middle", metric);
        c.rect(x0, top, pw, ph, "none", " stroke=\"#cccccc\"");
        let bw = pw / (bars.len() as f64 * 1.5 + 0.5);
        for (i, (method, m, s)) in bars.iter().enumerate() {
            let bx = x0 + bw * (0.5 + 1.5 * i as f64);
            let (y0, ym) = (y_of(0.0), y_of(*m));
            c.rect(bx, y0.min(ym), bw, (y0 - ym).abs(), PALETTE[i % PALETTE.len()], "");
            let _ = writeln!(
                c.body,
                "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\"/>",
                bx + bw / 2.0,
                y_of(m - s),
                bx + bw / 2.0,
                y_of(m + s)
            );
            c.text(bx + bw / 2.0, top + ph + 12.0, "middle", method);
        }
        c.text(x0 - 2.0, top + 8.0, "end", &format!("{hi:.3}"));
        c.text(x0 - 2.0, top + ph, "end", &format!("{lo:.3}"));
    }
    c.finish(title, prov)
}

/// Line plots sharing one x axis, one panel per series.
pub fn line_svg(title: &str, x_label: &str, xs: &[f64], series: &[(String, Vec<f64>)], prov: &Provenance) -> String {
    let (pw, ph, gap, top) = (260.0, 170.0, 50.0, 40.0);
    let mut c = Canvas::new(gap + (pw + gap) * series.len() as f64, top + ph + 50.0);
    let (xlo, xhi) = min_max(xs);
    for (k, (name, ys)) in series.iter().enumerate() {
        let x0 = gap + (pw + gap) * k as f64;
        let (lo, hi) = min_max(ys);
        c.text(x0 + pw / 2.0, top - 8.0, "middle", name);
        c.rect(x0, top, pw, ph, "none", " stroke=\"#cccccc\"");
        let mut d = String::new();
        for (i, (x, y)) in xs.iter().zip(ys).enumerate() {
            let px = x0 + (x - xlo) / (xhi - xlo) * pw;
            let py = top + ph - (y - lo) / (hi - lo) * ph;
            let _ = write!(d, "{}{px:.2},{py:.2}", if i == 0 { "M" } else { " L" });
            let _ = writeln!(c.body, "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"2.5\" fill=\"{}\"/>", PALETTE[k % PALETTE.len()]);
        }
        c.path(&d, PALETTE[k % PALETTE.len()], "series");
        c.text(x0 - 4.0, top + 8.0, "end", &format!("{hi:.4}"));
        c.text(x0 - 4.0, top + ph, "end", &format!("{lo:.4}"));
        c.text(x0, top + ph + 14.0, "start", &format!("{xlo}"));
        c.text(x0 + pw, top + ph + 14.0, "end", &format!("{xhi}"));
        c.text(x0 + pw / 2.0, top + ph + 30.0, "middle", x_label);
    }
    c.finish(title, prov)
}
