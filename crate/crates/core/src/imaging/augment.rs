use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Image, ImagingError};

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Probabilities and jitter ranges of one view pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPolicy {
    pub flip_prob: f64,
    pub jitter_prob: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
    pub grayscale_prob: f64,
}

impl AugmentationPolicy {
    /// Horizontal flip with p = 0.5, then grayscale with p = 0.2.
    pub const PI1: Self = Self {
        flip_prob: 0.5,
        jitter_prob: 0.0,
        brightness: 0.0,
        contrast: 0.0,
        saturation: 0.0,
        hue: 0.0,
        grayscale_prob: 0.2,
    };

    /// Color jitter (range 0.4 each) with p = 0.8, then grayscale with p = 0.4.
    pub const PI2: Self = Self {
        flip_prob: 0.0,
        jitter_prob: 0.8,
        brightness: 0.4,
        contrast: 0.4,
        saturation: 0.4,
        hue: 0.4,
        grayscale_prob: 0.4,
    };

    pub fn validate(&self) -> Result<(), ImagingError> {
        for (name, value) in [
            ("flip_prob", self.flip_prob),
            ("jitter_prob", self.jitter_prob),
            ("grayscale_prob", self.grayscale_prob),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(ImagingError::Probability { name, value });
            }
        }
        for (name, value) in [
            ("brightness", self.brightness),
            ("contrast", self.contrast),
            ("saturation", self.saturation),
            ("hue", self.hue),
        ] {
            if value.is_nan() || value < 0.0 {
                return Err(ImagingError::JitterRange { name, value });
            }
        }
        Ok(())
    }

    /// Draws the random decisions of one application of this policy.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> AugmentDraw {
        let flip = self.flip_prob > 0.0 && rng.random::<f64>() < self.flip_prob;
        let jitter =
            (self.jitter_prob > 0.0 && rng.random::<f64>() < self.jitter_prob).then(|| {
                let mut factor = |range: f64| {
                    if range > 0.0 {
                        rng.random_range((1.0 - range).max(0.0)..=1.0 + range)
                    } else {
                        1.0
                    }
                };
                let brightness = factor(self.brightness);
                let contrast = factor(self.contrast);
                let saturation = factor(self.saturation);
                let hue = if self.hue > 0.0 {
                    rng.random_range(-self.hue..=self.hue)
                } else {
                    0.0
                };
                Jitter {
                    brightness,
                    contrast,
                    saturation,
                    hue,
                }
            });
        let grayscale = self.grayscale_prob > 0.0 && rng.random::<f64>() < self.grayscale_prob;
        AugmentDraw {
            flip,
            jitter,
            grayscale,
        }
    }
}

/// Multiplicative color factors and an additive hue shift (fraction of the
/// hue circle).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jitter {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

impl Jitter {
    pub const IDENTITY: Self = Self {
        brightness: 1.0,
        contrast: 1.0,
        saturation: 1.0,
        hue: 0.0,
    };
}

/// The outcome of the random choices made by a policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub flip: bool,
    pub jitter: Option<Jitter>,
    pub grayscale: bool,
}

impl AugmentDraw {
    pub const NONE: Self = Self {
        flip: false,
        jitter: None,
        grayscale: false,
    };

    /// Applies flip, then jitter (brightness, contrast, saturation, hue),
    /// then grayscale.
    pub fn apply(&self, img: &Image) -> Image {
        let mut out = img.clone();
        if self.flip {
            hflip(&mut out);
        }
        if let Some(j) = self.jitter {
            if j.brightness != 1.0 {
                out.map_pixels(|_, v| v * j.brightness);
            }
            if j.contrast != 1.0 {
                adjust_contrast(&mut out, j.contrast);
            }
            if j.saturation != 1.0 {
                adjust_saturation(&mut out, j.saturation);
            }
            if j.hue != 0.0 {
                shift_hue(&mut out, j.hue);
            }
        }
        if self.grayscale {
            grayscale(&mut out);
        }
        out
    }
}

pub fn augment<R: Rng + ?Sized>(img: &Image, policy: &AugmentationPolicy, rng: &mut R) -> Image {
    policy.draw(rng).apply(img)
}

pub fn augment_pi1<R: Rng + ?Sized>(img: &Image, rng: &mut R) -> Image {
    augment(img, &AugmentationPolicy::PI1, rng)
}

pub fn augment_pi2<R: Rng + ?Sized>(img: &Image, rng: &mut R) -> Image {
    augment(img, &AugmentationPolicy::PI2, rng)
}

fn hflip(img: &mut Image) {
    let (w, h, ch) = img.dims();
    let px = img.pixels_mut();
    for y in 0..h {
        for x in 0..w / 2 {
            for c in 0..ch {
                px.swap((y * w + x) * ch + c, (y * w + (w - 1 - x)) * ch + c);
            }
        }
    }
}

fn luminance(px: &[f64]) -> f64 {
    LUMA[0] * px[0] + LUMA[1] * px[1] + LUMA[2] * px[2]
}

fn grayscale(img: &mut Image) {
    if img.channels() != 3 {
        return;
    }
    for px in img.pixels_mut().chunks_exact_mut(3) {
        let l = luminance(px).clamp(0.0, 1.0);
        px.fill(l);
    }
}

fn adjust_contrast(img: &mut Image, factor: f64) {
    let mean = if img.channels() == 3 {
        let n = img.width() * img.height();
        img.pixels().chunks_exact(3).map(luminance).sum::<f64>() / n as f64
    } else {
        img.channel_mean(0)
    };
    img.map_pixels(|_, v| mean + factor * (v - mean));
}

fn adjust_saturation(img: &mut Image, factor: f64) {
    if img.channels() != 3 {
        return;
    }
    for px in img.pixels_mut().chunks_exact_mut(3) {
        let l = luminance(px);
        for v in px.iter_mut() {
            *v = (l + factor * (*v - l)).clamp(0.0, 1.0);
        }
    }
}

fn shift_hue(img: &mut Image, shift: f64) {
    if img.channels() != 3 {
        return;
    }
    for px in img.pixels_mut().chunks_exact_mut(3) {
        let (h, s, v) = rgb_to_hsv(px[0], px[1], px[2]);
        let (r, g, b) = hsv_to_rgb((h + shift).rem_euclid(1.0), s, v);
        px[0] = r.clamp(0.0, 1.0);
        px[1] = g.clamp(0.0, 1.0);
        px[2] = b.clamp(0.0, 1.0);
    }
}

/// Hue in `[0, 1)`.
fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    if delta == 0.0 {
        return (0.0, s, v);
    }
    let h = if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    (h / 6.0, s, v)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = h * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match (sector as i64).rem_euclid(6) {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}
