//! Gating-mask panels and sweep charts.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, Array3};

use crate::dataset::io::write_rgb_png;
use crate::dataset::signed_to_u8;
use crate::error::{Error, Result};

pub const LANCZOS_ORDER: usize = 4;

fn lanczos_kernel(x: f64, a: f64) -> f64 {
    if x == 0.0 {
        return 1.0;
    }
    if x.abs() >= a {
        return 0.0;
    }
    let px = std::f64::consts::PI * x;
    a * px.sin() * (px / a).sin() / (px * px)
}

/// One separable pass along rows of `src` (`n_in` samples each) to `n_out`.
/// Each output is written relative to its nearest tap, so windows over a
/// constant region reproduce the constant exactly.
fn lanczos_axis(get: impl Fn(usize) -> f64, n_in: usize, n_out: usize) -> Vec<f64> {
    let a = LANCZOS_ORDER as f64;
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|x| {
            let s = (x as f64 + 0.5) * scale - 0.5;
            let base = s.floor() as i64;
            let clamp = |j: i64| j.clamp(0, n_in as i64 - 1) as usize;
            let nearest = get(clamp(s.round() as i64));
            let (mut num, mut den) = (0.0, 0.0);
            for j in base - LANCZOS_ORDER as i64 + 1..=base + LANCZOS_ORDER as i64 {
                let wgt = lanczos_kernel(s - j as f64, a);
                num += wgt * (get(clamp(j)) - nearest);
                den += wgt;
            }
            nearest + num / den
        })
        .collect()
}

/// Separable Lanczos resampling of order 4 with clamped borders.
pub fn lanczos_resize(src: &Array2<f32>, out_h: usize, out_w: usize) -> Array2<f32> {
    let (h, w) = src.dim();
    let mut rows = Array2::<f64>::zeros((h, out_w));
    for v in 0..h {
        let r = lanczos_axis(|u| src[[v, u]] as f64, w, out_w);
        for (u, x) in r.into_iter().enumerate() {
            rows[[v, u]] = x;
        }
    }
    let mut out = Array2::<f32>::zeros((out_h, out_w));
    for u in 0..out_w {
        let c = lanczos_axis(|v| rows[[v, u]], h, out_h);
        for (v, x) in c.into_iter().enumerate() {
            out[[v, u]] = x as f32;
        }
    }
    out
}

/// Jet colormap: 0 → dark blue, 0.5 → green-cyan-yellow middle, 1 → dark red.
pub fn jet(x: f32) -> [u8; 3] {
    let x = x.clamp(0.0, 1.0) as f64;
    let ch = |c: f64| ((1.5 - (4.0 * x - c).abs()).clamp(0.0, 1.0) * 255.0).round() as u8;
    [ch(3.0), ch(2.0), ch(1.0)]
}

/// Gray level for normalized depth on a log scale, near = bright.
pub fn depth_gray(d: f32) -> u8 {
    if d <= 0.0 {
        return 0;
    }
    let z = d as f64 * crate::geometry::MAX_DEPTH_M;
    let t = (1.0 + z).ln() / (1.0 + crate::geometry::MAX_DEPTH_M).ln();
    ((1.0 - t).clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Everything shown in one panel row.
pub struct PanelInputs<'a> {
    /// Input image with dynamic objects, `[-1, 1]`.
    pub input_rgb: &'a Array3<f32>,
    pub input_depth: &'a Array2<f32>,
    pub coarse: &'a Array3<f32>,
    /// Gating mask at reduced resolution, `[0, 1]`.
    pub gate: &'a Array2<f32>,
    pub refined: &'a Array3<f32>,
    pub depth: &'a Array2<f32>,
}

/// Gate upsampled to `h×w` and clamped to `[0, 1]`.
pub fn upsample_gate(gate: &Array2<f32>, h: usize, w: usize) -> Array2<f32> {
    lanczos_resize(gate, h, w).mapv(|g| g.clamp(0.0, 1.0))
}

/// Six tiles side by side: input, input depth, coarse, gate, refined, depth.
pub fn gating_panel(p: &PanelInputs) -> Result<Array3<u8>> {
    let (h, w, _) = p.input_rgb.dim();
    let same = p.input_depth.dim() == (h, w)
        && p.coarse.dim() == (h, w, 3)
        && p.refined.dim() == (h, w, 3)
        && p.depth.dim() == (h, w);
    if !same {
        return Err(Error::Contract("gating_panel: inputs disagree in size".into()));
    }
    let gate = upsample_gate(p.gate, h, w);
    let mut out = Array3::<u8>::zeros((h, 6 * w, 3));
    for v in 0..h {
        for u in 0..w {
            let tiles: [[u8; 3]; 6] = [
                rgb_at(p.input_rgb, v, u),
                [depth_gray(p.input_depth[[v, u]]); 3],
                rgb_at(p.coarse, v, u),
                jet(gate[[v, u]]),
                rgb_at(p.refined, v, u),
                [depth_gray(p.depth[[v, u]]); 3],
            ];
            for (k, px) in tiles.iter().enumerate() {
                for c in 0..3 {
                    out[[v, k * w + u, c]] = px[c];
                }
            }
        }
    }
    Ok(out)
}

fn rgb_at(img: &Array3<f32>, v: usize, u: usize) -> [u8; 3] {
    [
        signed_to_u8(img[[v, u, 0]]),
        signed_to_u8(img[[v, u, 1]]),
        signed_to_u8(img[[v, u, 2]]),
    ]
}

pub fn export_gating_visualization(path: &Path, p: &PanelInputs) -> Result<()> {
    write_rgb_png(path, &gating_panel(p)?)
}

/// One polyline of a line chart.
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Minimal SVG line chart with axes, ticks and a legend. Non-finite points
/// are skipped.
pub fn line_chart_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (width, height) = (480.0, 320.0);
    let (left, right, top, bottom) = (60.0, 130.0, 30.0, 45.0);
    let finite: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    let (mut x0, mut x1, mut y0, mut y1) = (0.0f64, 1.0f64, 0.0f64, 1.0f64);
    if !finite.is_empty() {
        x0 = finite.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        x1 = finite.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        y0 = finite.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        y1 = finite.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        let pad = y0.abs().max(1e-3) * 0.1;
        y0 -= pad;
        y1 += pad;
    }
    let pw = width - left - right;
    let ph = height - top - bottom;
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#, left + pw / 2.0, xml_escape(title));
    let _ = writeln!(
        s,
        r#"<path d="M{left},{top} V{} H{}" stroke="black" fill="none"/>"#,
        top + ph,
        left + pw
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let (xv, yv) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            sx(xv),
            top + ph + 15.0,
            tick(xv)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            left - 5.0,
            sy(yv) + 4.0,
            tick(yv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        height - 8.0,
        xml_escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        xml_escape(y_label)
    );
    for (k, ser) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = ser
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(s, r#"<polyline points="{}" stroke="{color}" fill="none" stroke-width="2"/>"#, pts.join(" "));
        let ly = top + 14.0 * k as f64 + 8.0;
        let lx = left + pw + 10.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 16.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 20.0, ly + 4.0, xml_escape(&ser.label));
    }
    s.push_str("</svg>\n");
    s
}

fn tick(x: f64) -> String {
    if x.abs() >= 100.0 {
        format!("{x:.0}")
    } else if x.abs() >= 1.0 {
        format!("{x:.2}")
    } else {
        format!("{x:.3}")
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jet_endpoints() {
        assert_eq!(jet(0.0), [0, 0, 128]);
        assert_eq!(jet(1.0), [128, 0, 0]);
        assert_eq!(jet(0.5), [128, 255, 128]);
    }

    #[test]
    fn lanczos_identity_at_same_size() {
        let a = Array2::from_shape_fn((5, 7), |(v, u)| (v * 7 + u) as f32 * 0.1);
        let b = lanczos_resize(&a, 5, 7);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn chart_is_svg() {
        let s = line_chart_svg("t", "x", "y", &[Series { label: "a".into(), points: vec![(0.0, 1.0), (1.0, 2.0)] }]);
        assert!(s.starts_with("<svg") && s.contains("polyline"));
    }
}
