//! Seeded generators for the four 2D benchmark distributions.
//!
//! Every generator draws per-point values in a fixed order from a single
//! ChaCha stream seeded by `DatasetKind::seed`, so output is a pure function
//! of the kind. Batches are standardized (zero column mean, unit population
//! variance per axis) before being returned; the raw pre-standardization
//! shapes are exposed for geometry tests.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::points::PointBatch;
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFamily {
    SwissRoll,
    ScatteredMoon,
    MoonCircles,
    CentralBanana,
}

impl DatasetFamily {
    pub fn name(&self) -> &'static str {
        match self {
            DatasetFamily::SwissRoll => "swiss_roll",
            DatasetFamily::ScatteredMoon => "scattered_moon",
            DatasetFamily::MoonCircles => "moon_circles",
            DatasetFamily::CentralBanana => "central_banana",
        }
    }
}

impl std::str::FromStr for DatasetFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "swiss_roll" => DatasetFamily::SwissRoll,
            "scattered_moon" => DatasetFamily::ScatteredMoon,
            "moon_circles" => DatasetFamily::MoonCircles,
            "central_banana" => DatasetFamily::CentralBanana,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown dataset {other:?} (expected swiss_roll, scattered_moon, \
                     moon_circles, or central_banana)"
                )))
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetKind {
    #[serde(rename = "dataset")]
    pub family: DatasetFamily,
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    #[serde(default = "default_noise_level")]
    pub noise_level: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_n_samples() -> usize {
    10000
}

fn default_noise_level() -> f64 {
    0.05
}

impl DatasetKind {
    pub fn new(family: DatasetFamily, n_samples: usize, noise_level: f64, seed: u64) -> Self {
        Self {
            family,
            n_samples,
            noise_level,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::InvalidConfig("n_samples must be at least 1".into()));
        }
        if !self.noise_level.is_finite() || self.noise_level < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "noise_level must be finite and >= 0, got {}",
                self.noise_level
            )));
        }
        Ok(())
    }
}

/// Spiral radius grows as RADIAL_RATE * theta over THETA range; one full turn
/// separates arms by 2*pi*RADIAL_RATE = 1, so jitter up to ~0.15 keeps arms
/// distinct.
pub const SWISS_ROLL_RADIAL_RATE: f64 = 1.0 / (2.0 * std::f64::consts::PI);
pub const SWISS_ROLL_THETA_MIN: f64 = 1.5 * std::f64::consts::PI;
pub const SWISS_ROLL_THETA_MAX: f64 = 4.5 * std::f64::consts::PI;

/// Fraction of uniform background scatter in the scattered-moon set.
pub const SCATTER_FRACTION: f64 = 0.08;
/// Scatter box: the unit half-circle's bounding box, padded by 0.3.
pub const SCATTER_BOX_X: (f64, f64) = (-1.3, 1.3);
pub const SCATTER_BOX_Y: (f64, f64) = (-0.3, 1.3);

/// Moon-circles layout: concentric circles at the origin, a half-circle moon
/// displaced to the right so the structures stay disjoint.
pub const CIRCLE_RADII: (f64, f64) = (0.5, 1.0);
pub const MOON_CENTER_X: f64 = 2.2;

/// Banana lobe: (s, CURVATURE * s^2) for s in [-2, 2], with linear density
/// rising from the tail (s = -2) to the head; an isotropic Gaussian mode with
/// MODE_MASS of the points sits beyond the sparse tail.
pub const BANANA_CURVATURE: f64 = 0.5;
pub const BANANA_MODE_MASS: f64 = 0.15;
pub const BANANA_MODE_CENTER: (f64, f64) = (-3.2, 2.8);
pub const BANANA_MODE_STD: f64 = 0.15;

fn jitter(rng: &mut ChaCha8Rng, sigma: f64) -> (f64, f64) {
    let zx: f64 = rng.sample(StandardNormal);
    let zy: f64 = rng.sample(StandardNormal);
    (sigma * zx, sigma * zy)
}

fn raw_swiss_roll(n: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut out = Array2::zeros((n, 2));
    for i in 0..n {
        let theta: f64 = rng.random_range(SWISS_ROLL_THETA_MIN..SWISS_ROLL_THETA_MAX);
        let r = SWISS_ROLL_RADIAL_RATE * theta;
        let (jx, jy) = jitter(rng, sigma);
        out[[i, 0]] = r * theta.cos() + jx;
        out[[i, 1]] = r * theta.sin() + jy;
    }
    out
}

fn raw_scattered_moon(n: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n_scatter = ((n as f64) * SCATTER_FRACTION).round() as usize;
    let n_moon = n - n_scatter;
    let mut out = Array2::zeros((n, 2));
    for i in 0..n_moon {
        let phi: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let (jx, jy) = jitter(rng, sigma);
        out[[i, 0]] = phi.cos() + jx;
        out[[i, 1]] = phi.sin() + jy;
    }
    for i in n_moon..n {
        out[[i, 0]] = rng.random_range(SCATTER_BOX_X.0..SCATTER_BOX_X.1);
        out[[i, 1]] = rng.random_range(SCATTER_BOX_Y.0..SCATTER_BOX_Y.1);
    }
    out
}

fn raw_moon_circles(n: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n_inner = n / 4;
    let n_outer = n / 4;
    let n_moon = n - n_inner - n_outer;
    let mut out = Array2::zeros((n, 2));
    let mut row = 0;
    for _ in 0..n_moon {
        let phi: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let (jx, jy) = jitter(rng, sigma);
        out[[row, 0]] = MOON_CENTER_X + phi.cos() + jx;
        out[[row, 1]] = phi.sin() + jy;
        row += 1;
    }
    for (count, radius) in [(n_inner, CIRCLE_RADII.0), (n_outer, CIRCLE_RADII.1)] {
        for _ in 0..count {
            let psi: f64 = rng.random_range(0.0..2.0 * std::f64::consts::PI);
            let (jx, jy) = jitter(rng, sigma);
            out[[row, 0]] = radius * psi.cos() + jx;
            out[[row, 1]] = radius * psi.sin() + jy;
            row += 1;
        }
    }
    out
}

fn raw_central_banana(n: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n_mode = ((n as f64) * BANANA_MODE_MASS).round() as usize;
    let n_lobe = n - n_mode;
    let mut out = Array2::zeros((n, 2));
    for i in 0..n_lobe {
        // Inverse-CDF draw for density proportional to 0.2 + 1.6u on [0,1]:
        // sparse tail at u=0, dense head at u=1.
        let v: f64 = rng.random_range(0.0..1.0);
        let u = (-0.2 + (0.04 + 3.2 * v).sqrt()) / 1.6;
        let s = 4.0 * u - 2.0;
        let (jx, jy) = jitter(rng, sigma);
        out[[i, 0]] = s + jx;
        out[[i, 1]] = BANANA_CURVATURE * s * s + jy;
    }
    for i in n_lobe..n {
        let (mx, my) = jitter(rng, BANANA_MODE_STD);
        out[[i, 0]] = BANANA_MODE_CENTER.0 + mx;
        out[[i, 1]] = BANANA_MODE_CENTER.1 + my;
    }
    out
}

/// Pre-standardization sample; exposed so geometry tests can check raw
/// structure (spiral residuals, component separation) against the constants
/// above.
pub fn generate_raw(kind: &DatasetKind) -> Result<Array2<f64>> {
    kind.validate()?;
    let mut rng = substream(kind.seed, kind.family.name());
    let sigma = kind.noise_level;
    Ok(match kind.family {
        DatasetFamily::SwissRoll => raw_swiss_roll(kind.n_samples, sigma, &mut rng),
        DatasetFamily::ScatteredMoon => raw_scattered_moon(kind.n_samples, sigma, &mut rng),
        DatasetFamily::MoonCircles => raw_moon_circles(kind.n_samples, sigma, &mut rng),
        DatasetFamily::CentralBanana => raw_central_banana(kind.n_samples, sigma, &mut rng),
    })
}

/// Shifts/scales each column to zero mean and unit population variance.
/// Columns with vanishing spread are left centered but unscaled.
pub fn standardize(mut data: Array2<f64>) -> Array2<f64> {
    let n = data.nrows() as f64;
    for mut col in data.columns_mut() {
        let mean = col.sum() / n;
        col.mapv_inplace(|v| v - mean);
        let var = col.iter().map(|v| v * v).sum::<f64>() / n;
        let std = var.sqrt();
        if std > 1e-300 {
            col.mapv_inplace(|v| v / std);
        }
    }
    data
}

/// Standardized N x 2 batch for `kind`; identical output for identical kind.
pub fn generate(kind: &DatasetKind) -> Result<PointBatch> {
    PointBatch::new(standardize(generate_raw(kind)?))
}
