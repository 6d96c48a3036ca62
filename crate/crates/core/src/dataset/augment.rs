//! Photometric jitter and horizontal flipping, applied identically to the
//! frames of an aligned dynamic/static pair.

use ndarray::{s, Array3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Frame;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Multiplicative brightness factor range.
    pub brightness_range: [f64; 2],
    /// Blend factor toward the mean gray level.
    pub contrast_range: [f64; 2],
    /// Blend factor toward per-pixel luminance.
    pub saturation_range: [f64; 2],
    /// Hue rotation as a fraction of a full turn.
    pub hue_range: [f64; 2],
    pub flip_probability: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            brightness_range: [0.7, 1.3],
            contrast_range: [0.8, 1.2],
            saturation_range: [0.8, 1.2],
            hue_range: [-0.15, 0.15],
            flip_probability: 0.5,
        }
    }
}

impl AugmentConfig {
    /// No photometric change and no flipping.
    pub fn identity() -> Self {
        Self {
            brightness_range: [1.0, 1.0],
            contrast_range: [1.0, 1.0],
            saturation_range: [1.0, 1.0],
            hue_range: [0.0, 0.0],
            flip_probability: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("brightness", self.brightness_range),
            ("contrast", self.contrast_range),
            ("saturation", self.saturation_range),
        ] {
            if !(r[0] >= 0.0 && r[0] <= r[1] && r[1].is_finite()) {
                return Err(Error::Config(format!("{name} range {r:?} is invalid")));
            }
        }
        let h = self.hue_range;
        if !(h[0] <= h[1] && (h[0] + h[1]).abs() < 1e-12 && h[1] <= 0.5) {
            return Err(Error::Config(format!("hue range {h:?} must be symmetric within ±0.5")));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::Config(format!(
                "flip probability {} outside [0, 1]",
                self.flip_probability
            )));
        }
        Ok(())
    }
}

/// One concrete draw of augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
    pub flip: bool,
}

impl AugmentParams {
    pub fn identity() -> Self {
        Self {
            brightness: 1.0,
            contrast: 1.0,
            saturation: 1.0,
            hue: 0.0,
            flip: false,
        }
    }

    pub fn sample<R: Rng + ?Sized>(cfg: &AugmentConfig, rng: &mut R) -> Self {
        let mut uniform = |r: [f64; 2]| if r[0] < r[1] { rng.gen_range(r[0]..=r[1]) } else { r[0] };
        let brightness = uniform(cfg.brightness_range);
        let contrast = uniform(cfg.contrast_range);
        let saturation = uniform(cfg.saturation_range);
        let hue = uniform(cfg.hue_range);
        let flip = cfg.flip_probability > 0.0 && rng.gen_bool(cfg.flip_probability);
        Self {
            brightness,
            contrast,
            saturation,
            hue,
            flip,
        }
    }

    pub fn is_photometric_identity(&self) -> bool {
        self.brightness == 1.0 && self.contrast == 1.0 && self.saturation == 1.0 && self.hue == 0.0
    }

    /// Applies these parameters to one frame.
    pub fn apply(&self, frame: &Frame) -> Frame {
        let mut out = frame.clone();
        if !self.is_photometric_identity() {
            out.rgb = jitter(&frame.rgb, self);
        }
        if self.flip {
            out.rgb = flip_rgb(&out.rgb);
            out.depth.invert_axis(Axis(1));
            out.semantic.invert_axis(Axis(1));
            out.mask.invert_axis(Axis(1));
            out.depth = out.depth.as_standard_layout().to_owned();
            out.semantic = out.semantic.as_standard_layout().to_owned();
            out.mask = out.mask.as_standard_layout().to_owned();
        }
        out
    }
}

fn flip_rgb(rgb: &Array3<u8>) -> Array3<u8> {
    rgb.slice(s![.., ..;-1, ..]).to_owned()
}

fn luminance(p: [f64; 3]) -> f64 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

fn rgb_to_hsv([r, g, b]: [f64; 3]) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    [h, s, max]
}

fn hsv_to_rgb([h, s, v]: [f64; 3]) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r + m, g + m, b + m]
}

/// Brightness, contrast, saturation, hue, in that order; each step clips to
/// `[0, 1]` and is skipped when its parameter is neutral.
fn jitter(rgb: &Array3<u8>, p: &AugmentParams) -> Array3<u8> {
    let (h, w, _) = rgb.dim();
    let mut px: Vec<[f64; 3]> = rgb
        .as_standard_layout()
        .as_slice()
        .expect("standard layout")
        .chunks_exact(3)
        .map(|c| [c[0] as f64 / 255.0, c[1] as f64 / 255.0, c[2] as f64 / 255.0])
        .collect();
    let clip = |x: f64| x.clamp(0.0, 1.0);
    if p.brightness != 1.0 {
        for q in &mut px {
            *q = q.map(|x| clip(x * p.brightness));
        }
    }
    if p.contrast != 1.0 {
        let mean = px.iter().map(|&q| luminance(q)).sum::<f64>() / px.len().max(1) as f64;
        for q in &mut px {
            *q = q.map(|x| clip(mean + p.contrast * (x - mean)));
        }
    }
    if p.saturation != 1.0 {
        for q in &mut px {
            let g = luminance(*q);
            *q = q.map(|x| clip(g + p.saturation * (x - g)));
        }
    }
    if p.hue != 0.0 {
        for q in &mut px {
            let mut hsv = rgb_to_hsv(*q);
            hsv[0] += p.hue;
            *q = hsv_to_rgb(hsv).map(clip);
        }
    }
    Array3::from_shape_fn((h, w, 3), |(v, u, c)| (px[v * w + u][c] * 255.0).round() as u8)
}

/// Samples one parameter set and applies it to both frames of a pair.
pub fn augment<R: Rng + ?Sized>(
    dynamic: &Frame,
    static_frame: &Frame,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> (Frame, Frame, AugmentParams) {
    let params = AugmentParams::sample(cfg, rng);
    (params.apply(dynamic), params.apply(static_frame), params)
}

/// Applies one parameter set to every frame (e.g. a whole training window).
pub fn augment_frames(frames: &[Frame], params: &AugmentParams) -> Vec<Frame> {
    frames.iter().map(|f| params.apply(f)).collect()
}
