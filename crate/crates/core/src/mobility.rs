//! Vehicle velocities drawn from a Gaussian truncated to `[v_min, v_max]`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MobilityError {
    #[error("sigma must be positive and finite, got {0}")]
    Sigma(f64),
    #[error("velocity window is empty: v_min {v_min} >= v_max {v_max}")]
    Window { v_min: f64, v_max: f64 },
    #[error("mu must be finite, got {0}")]
    Mu(f64),
}

/// Parameters of the truncated Gaussian velocity model, all in m/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MobilityParams {
    pub mu: f64,
    pub sigma: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl Default for MobilityParams {
    fn default() -> Self {
        Self {
            mu: 29.17,
            sigma: 8.0,
            v_min: 16.67,
            v_max: 41.67,
        }
    }
}

impl MobilityParams {
    pub fn validate(&self) -> Result<(), MobilityError> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(MobilityError::Sigma(self.sigma));
        }
        if !self.mu.is_finite() {
            return Err(MobilityError::Mu(self.mu));
        }
        if !self.v_min.is_finite() || !self.v_max.is_finite() || self.v_min >= self.v_max {
            return Err(MobilityError::Window {
                v_min: self.v_min,
                v_max: self.v_max,
            });
        }
        Ok(())
    }

    /// Probability mass of the untruncated Gaussian inside the window.
    pub fn window_mass(&self) -> f64 {
        let z = |v: f64| (v - self.mu) / (self.sigma * std::f64::consts::SQRT_2);
        0.5 * (erf(z(self.v_max)) - erf(z(self.v_min)))
    }
}

/// A vehicle speed in m/s.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Velocity(pub f64);

impl Velocity {
    pub fn value(self) -> f64 {
        self.0
    }

    pub fn km_per_hour(self) -> f64 {
        self.0 * 3.6
    }
}

/// Gauss error function.
///
/// Backed by the pure-Rust `libm` port of the FreeBSD implementation, so the
/// value does not depend on the platform C library.
pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

/// Density of the truncated Gaussian at `v`; zero outside the window.
pub fn truncated_gaussian_pdf(v: f64, p: &MobilityParams) -> f64 {
    if v < p.v_min || v > p.v_max {
        return 0.0;
    }
    let var = p.sigma * p.sigma;
    let kernel = (-(v - p.mu).powi(2) / (2.0 * var)).exp();
    kernel / ((2.0 * std::f64::consts::PI * var).sqrt() * p.window_mass())
}

/// Draws one velocity by rejection from the untruncated Gaussian.
pub fn sample_velocity<R: Rng + ?Sized>(rng: &mut R, p: &MobilityParams) -> Velocity {
    let normal = Normal::new(p.mu, p.sigma).expect("validated sigma");
    loop {
        let v = normal.sample(rng);
        if v >= p.v_min && v <= p.v_max {
            return Velocity(v);
        }
    }
}
