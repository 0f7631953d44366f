use serde::{Deserialize, Serialize};

use super::{Image, ImagingError};
use crate::mobility::Velocity;

/// Camera constants. The blur level in pixels is `(H·s/Q)·v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraParams {
    /// Exposure time `H`, seconds.
    pub exposure_time: f64,
    /// Focal length `s`, meters.
    pub focal_length: f64,
    /// Pixel unit `Q`.
    pub pixel_unit: f64,
}

impl Default for CameraParams {
    fn default() -> Self {
        // H·s/Q = 0.36 px·s/m, so 100 km/h smears about 10 px.
        Self {
            exposure_time: 0.01,
            focal_length: 0.036,
            pixel_unit: 0.001,
        }
    }
}

impl CameraParams {
    pub fn validate(&self) -> Result<(), ImagingError> {
        for (name, value) in [
            ("exposure_time", self.exposure_time),
            ("focal_length", self.focal_length),
            ("pixel_unit", self.pixel_unit),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ImagingError::Camera { name, value });
            }
        }
        Ok(())
    }

    /// `H·s/Q`, pixels per (m/s).
    pub fn constant(&self) -> f64 {
        self.exposure_time * self.focal_length / self.pixel_unit
    }
}

/// Horizontal smear in pixels.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BlurLevel(pub f64);

impl BlurLevel {
    pub fn value(self) -> f64 {
        self.0
    }
}

pub fn blur_level(v: Velocity, cam: &CameraParams) -> Result<BlurLevel, ImagingError> {
    if v.0.is_nan() || v.0 < 0.0 {
        return Err(ImagingError::NegativeVelocity(v.0));
    }
    Ok(BlurLevel(cam.constant() * v.0))
}

/// Box kernel length for a blur level: `max(1, round(L))`.
pub fn kernel_length(level: BlurLevel) -> usize {
    let n = level.0.round();
    if n.is_finite() && n >= 1.0 {
        n as usize
    } else {
        1
    }
}

/// Centered horizontal box filter with clamped borders.
///
/// Even kernel lengths put the extra tap on the right.
pub fn apply_motion_blur(img: &Image, level: BlurLevel) -> Image {
    let n = kernel_length(level);
    if n == 1 {
        return img.clone();
    }
    let (w, h, ch) = img.dims();
    let left = (n as isize - 1) / 2;
    let mut out = img.clone();
    let src = img.pixels();
    let dst = out.pixels_mut();
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for k in 0..n as isize {
                    let xs = (x as isize + k - left).clamp(0, w as isize - 1) as usize;
                    acc += src[(y * w + xs) * ch + c];
                }
                dst[(y * w + x) * ch + c] = (acc / n as f64).clamp(0.0, 1.0);
            }
        }
    }
    out
}
