//! One-dimensional histogram densities and the structure-aware distance
//! between them: an L2 density term plus a weighted gap between scalar
//! structural statistics. Test/analysis utility, not part of training.

use crate::error::{Error, Result};
use crate::regularizer::{RegularizerKind, RegularizerSpec};

const NORMALIZATION_TOL: f64 = 1e-6;

/// A piecewise-constant density on `[lo, hi)` with uniform bins.
/// `values[b]` is the density height on bin b; heights are nonnegative and
/// integrate to 1 within 1e-6.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramDensity {
    lo: f64,
    hi: f64,
    values: Vec<f64>,
}

impl HistogramDensity {
    pub fn new(lo: f64, hi: f64, values: Vec<f64>) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
            return Err(Error::BadHistogram(format!(
                "support [{lo}, {hi}) is not a finite interval"
            )));
        }
        if values.is_empty() {
            return Err(Error::BadHistogram("no bins".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::BadHistogram(format!("bin height {v}")));
        }
        let width = (hi - lo) / values.len() as f64;
        let mass: f64 = values.iter().sum::<f64>() * width;
        if (mass - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::BadHistogram(format!(
                "total mass {mass} is not 1 within {NORMALIZATION_TOL}"
            )));
        }
        Ok(Self { lo, hi, values })
    }

    /// Bins raw samples on [lo, hi) and normalizes; samples outside the
    /// support are clamped into the edge bins.
    pub fn from_samples(samples: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::BadHistogram("no samples".into()));
        }
        if bins == 0 {
            return Err(Error::BadHistogram("no bins".into()));
        }
        if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
            return Err(Error::BadHistogram(format!(
                "support [{lo}, {hi}) is not a finite interval"
            )));
        }
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0usize; bins];
        for &s in samples {
            if !s.is_finite() {
                return Err(Error::BadHistogram(format!("non-finite sample {s}")));
            }
            let idx = (((s - lo) / width).floor() as isize).clamp(0, bins as isize - 1);
            counts[idx as usize] += 1;
        }
        let norm = samples.len() as f64 * width;
        let values = counts.iter().map(|&c| c as f64 / norm).collect();
        Self::new(lo, hi, values)
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }
    pub fn hi(&self) -> f64 {
        self.hi
    }
    pub fn bins(&self) -> usize {
        self.values.len()
    }
    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.values.len() as f64
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn bin_center(&self, b: usize) -> f64 {
        self.lo + (b as f64 + 0.5) * self.bin_width()
    }

    /// Mean and variance of the density, treating each bin's mass as sitting
    /// at its center.
    pub fn moments(&self) -> (f64, f64) {
        let w = self.bin_width();
        let mean: f64 = self
            .values
            .iter()
            .enumerate()
            .map(|(b, &p)| p * w * self.bin_center(b))
            .sum();
        let var: f64 = self
            .values
            .iter()
            .enumerate()
            .map(|(b, &p)| {
                let c = self.bin_center(b) - mean;
                p * w * c * c
            })
            .sum();
        (mean, var)
    }

    fn central_moment(&self, mean: f64, pow: impl Fn(f64) -> f64) -> f64 {
        let w = self.bin_width();
        self.values
            .iter()
            .enumerate()
            .map(|(b, &p)| p * w * pow(self.bin_center(b) - mean))
            .sum()
    }
}

fn check_same_grid(p: &HistogramDensity, q: &HistogramDensity) -> Result<()> {
    if p.lo != q.lo || p.hi != q.hi || p.values.len() != q.values.len() {
        return Err(Error::GridMismatch(format!(
            "[{}, {}) x {} bins vs [{}, {}) x {} bins",
            p.lo,
            p.hi,
            p.values.len(),
            q.lo,
            q.hi,
            q.values.len()
        )));
    }
    Ok(())
}

/// sqrt(sum_b (p_b - q_b)^2 * width): the discrete L2 distance between the
/// density functions. Requires identical supports and bin counts.
pub fn l2_density_distance(p: &HistogramDensity, q: &HistogramDensity) -> Result<f64> {
    check_same_grid(p, q)?;
    let w = p.bin_width();
    let sum: f64 = p
        .values
        .iter()
        .zip(&q.values)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((sum * w).sqrt())
}

/// The one-dimensional scalar statistic matching a regularizer's notion of
/// structure, evaluated exactly on the binned density (bin-center masses).
/// MMD has no closed per-histogram scalar and is rejected.
pub fn scalar_statistic(p: &HistogramDensity, kind: RegularizerKind) -> Result<f64> {
    let (mean, var) = p.moments();
    let need_var = matches!(
        kind,
        RegularizerKind::Skewness | RegularizerKind::Kurtosis | RegularizerKind::IsoLogEig
    );
    if need_var && var <= 1e-300 {
        return Err(Error::BadHistogram(
            "statistic undefined for a zero-variance histogram".into(),
        ));
    }
    Ok(match kind {
        RegularizerKind::None => 0.0,
        RegularizerKind::Mean => mean,
        RegularizerKind::Skewness => p.central_moment(mean, |c| c.abs().powi(3)) / var.powf(1.5),
        RegularizerKind::Kurtosis => p.central_moment(mean, |c| c.powi(4)) / (var * var),
        RegularizerKind::Kl => 0.5 * (var + mean * mean - 1.0 - var.ln()),
        RegularizerKind::IsoTraceMean => var + mean * mean,
        RegularizerKind::IsoFrobenius | RegularizerKind::IsoDiagSplit => {
            (var - 1.0) * (var - 1.0)
        }
        RegularizerKind::IsoLogEig => {
            let l = var.ln();
            l * l
        }
        RegularizerKind::IsoBures => {
            let s = var.sqrt() - 1.0;
            s * s
        }
        RegularizerKind::Mmd => {
            return Err(Error::UnsupportedMeasure {
                measure: kind.name().to_string(),
            })
        }
    })
}

/// |I(p) - I(q)| for the scalar structural statistic of the given kind.
pub fn structural_distance(
    p: &HistogramDensity,
    q: &HistogramDensity,
    kind: RegularizerKind,
) -> Result<f64> {
    check_same_grid(p, q)?;
    Ok((scalar_statistic(p, kind)? - scalar_statistic(q, kind)?).abs())
}

/// The combined distance: L2 density gap plus lambda times the structural
/// gap. With `RegularizerKind::None` this reduces to the pure L2 distance.
pub fn structure_aware_distance(
    p: &HistogramDensity,
    q: &HistogramDensity,
    spec: &RegularizerSpec,
) -> Result<f64> {
    spec.validate()?;
    let l2 = l2_density_distance(p, q)?;
    if spec.kind == RegularizerKind::None {
        return Ok(l2);
    }
    Ok(l2 + spec.lambda * structural_distance(p, q, spec.kind)?)
}
