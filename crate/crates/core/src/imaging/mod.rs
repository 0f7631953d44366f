//! Images, camera-derived blur levels, the horizontal motion-blur kernel, and
//! the two view-generation pipelines.

mod augment;
mod blur;

pub use augment::{augment, augment_pi1, augment_pi2, AugmentDraw, AugmentationPolicy, Jitter};
pub use blur::{apply_motion_blur, blur_level, kernel_length, BlurLevel, CameraParams};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImagingError {
    #[error(
        "image dimensions must be positive with 1 or 3 channels, got {width}x{height}x{channels}"
    )]
    Dimensions {
        width: usize,
        height: usize,
        channels: usize,
    },
    #[error("image needs {expected} values, got {got}")]
    PixelCount { expected: usize, got: usize },
    #[error("pixel {index} = {value} outside [0, 1]")]
    PixelRange { index: usize, value: f64 },
    #[error("velocity must be non-negative, got {0}")]
    NegativeVelocity(f64),
    #[error("camera parameter {name} must be positive, got {value}")]
    Camera { name: &'static str, value: f64 },
    #[error("probability {name} = {value} outside [0, 1]")]
    Probability { name: &'static str, value: f64 },
    #[error("jitter range {name} = {value} must be non-negative")]
    JitterRange { name: &'static str, value: f64 },
}

/// Row-major, channel-interleaved image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        pixels: Vec<f64>,
    ) -> Result<Self, ImagingError> {
        if width == 0 || height == 0 || !(channels == 1 || channels == 3) {
            return Err(ImagingError::Dimensions {
                width,
                height,
                channels,
            });
        }
        let expected = width * height * channels;
        if pixels.len() != expected {
            return Err(ImagingError::PixelCount {
                expected,
                got: pixels.len(),
            });
        }
        if let Some((index, &value)) = pixels
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(ImagingError::PixelRange { index, value });
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn filled(
        width: usize,
        height: usize,
        channels: usize,
        value: f64,
    ) -> Result<Self, ImagingError> {
        Self::new(
            width,
            height,
            channels,
            vec![value; width * height * channels],
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.pixels[self.index(x, y, c)]
    }

    pub fn set(&mut self, x: usize, y: usize, c: usize, value: f64) {
        let i = self.index(x, y, c);
        self.pixels[i] = value.clamp(0.0, 1.0);
    }

    pub fn channel_mean(&self, c: usize) -> f64 {
        let n = self.width * self.height;
        self.pixels
            .iter()
            .skip(c)
            .step_by(self.channels)
            .sum::<f64>()
            / n as f64
    }

    pub(crate) fn map_pixels(&mut self, f: impl Fn(usize, f64) -> f64) {
        for (i, p) in self.pixels.iter_mut().enumerate() {
            *p = f(i, *p).clamp(0.0, 1.0);
        }
    }

    pub(crate) fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }
}
