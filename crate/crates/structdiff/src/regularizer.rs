//! Structural penalties on a batch of predicted noise, with exact gradients.
//!
//! Each penalty is a scalar discrepancy between the batch's empirical
//! statistics and those of a standard isotropic Gaussian, differentiated
//! analytically with respect to every batch entry. Spectral penalties
//! differentiate through the covariance eigendecomposition; the MMD penalty
//! differentiates the kernel estimate while holding the bandwidth and the
//! reference sample fixed (both are constants within one training step).

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::moments::{batch_moments, batch_moments_relaxed, BatchMoments};
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerKind {
    None,
    Mean,
    Skewness,
    Kurtosis,
    Kl,
    Mmd,
    IsoTraceMean,
    IsoFrobenius,
    IsoDiagSplit,
    IsoLogEig,
    IsoBures,
}

impl RegularizerKind {
    pub const ALL: [RegularizerKind; 11] = [
        RegularizerKind::None,
        RegularizerKind::Mean,
        RegularizerKind::Skewness,
        RegularizerKind::Kurtosis,
        RegularizerKind::Kl,
        RegularizerKind::Mmd,
        RegularizerKind::IsoTraceMean,
        RegularizerKind::IsoFrobenius,
        RegularizerKind::IsoDiagSplit,
        RegularizerKind::IsoLogEig,
        RegularizerKind::IsoBures,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            RegularizerKind::None => "none",
            RegularizerKind::Mean => "mean",
            RegularizerKind::Skewness => "skewness",
            RegularizerKind::Kurtosis => "kurtosis",
            RegularizerKind::Kl => "kl",
            RegularizerKind::Mmd => "mmd",
            RegularizerKind::IsoTraceMean => "iso_trace_mean",
            RegularizerKind::IsoFrobenius => "iso_frobenius",
            RegularizerKind::IsoDiagSplit => "iso_diag_split",
            RegularizerKind::IsoLogEig => "iso_log_eig",
            RegularizerKind::IsoBures => "iso_bures",
        }
    }

    /// Kinds whose penalty needs an invertible batch covariance.
    pub fn needs_covariance(&self) -> bool {
        matches!(
            self,
            RegularizerKind::Skewness
                | RegularizerKind::Kurtosis
                | RegularizerKind::Kl
                | RegularizerKind::IsoFrobenius
                | RegularizerKind::IsoDiagSplit
                | RegularizerKind::IsoLogEig
                | RegularizerKind::IsoBures
        )
    }
}

/// RBF kernel bandwidth: the pooled median-distance heuristic, or a fixed
/// positive value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Median,
    Fixed(f64),
}

impl Serialize for Bandwidth {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Bandwidth::Median => s.serialize_str("median"),
            Bandwidth::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Bandwidth {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        match &v {
            serde_json::Value::String(s) if s == "median" => Ok(Bandwidth::Median),
            serde_json::Value::Number(n) => n
                .as_f64()
                .map(Bandwidth::Fixed)
                .ok_or_else(|| D::Error::custom("bandwidth number out of f64 range")),
            other => Err(D::Error::custom(format!(
                "bandwidth must be \"median\" or a number, got {other}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmdSettings {
    #[serde(default = "default_bandwidth")]
    pub bandwidth: Bandwidth,
    #[serde(default = "default_ref_seed")]
    pub ref_seed: u64,
    /// Reference sample size; defaults to the batch size when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_count: Option<usize>,
}

fn default_bandwidth() -> Bandwidth {
    Bandwidth::Median
}

fn default_ref_seed() -> u64 {
    11
}

impl Default for MmdSettings {
    fn default() -> Self {
        Self {
            bandwidth: Bandwidth::Median,
            ref_seed: 11,
            reference_count: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizerSpec {
    #[serde(rename = "regularizer")]
    pub kind: RegularizerKind,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub mmd: MmdSettings,
}

fn default_lambda() -> f64 {
    0.1
}

impl Default for RegularizerSpec {
    fn default() -> Self {
        Self {
            kind: RegularizerKind::None,
            lambda: default_lambda(),
            mmd: MmdSettings::default(),
        }
    }
}

impl RegularizerSpec {
    pub fn new(kind: RegularizerKind, lambda: f64) -> Self {
        Self {
            kind,
            lambda,
            mmd: MmdSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if let Bandwidth::Fixed(s) = self.mmd.bandwidth {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "fixed MMD bandwidth must be positive, got {s}"
                )));
            }
        }
        if self.mmd.reference_count == Some(0) || self.mmd.reference_count == Some(1) {
            return Err(Error::InvalidConfig(
                "MMD reference needs at least 2 points".into(),
            ));
        }
        Ok(())
    }
}

/// Penalty value (weight-free) and the lambda-scaled gradient with respect
/// to every batch entry.
#[derive(Debug, Clone)]
pub struct Penalty {
    pub value: f64,
    pub grad: Array2<f64>,
}

/// Standard-normal reference rows for the MMD penalty.
pub fn draw_mmd_reference(count: usize, dim: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut out = Array2::zeros((count, dim));
    for i in 0..count {
        for j in 0..dim {
            out[[i, j]] = rng.sample(StandardNormal);
        }
    }
    out
}

fn pairwise_sq_dists(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let (n, m) = (a.nrows(), b.nrows());
    let mut out = Array2::zeros((n, m));
    for i in 0..n {
        let ai = a.row(i);
        for j in 0..m {
            let mut s = 0.0;
            for (x, y) in ai.iter().zip(b.row(j).iter()) {
                let diff = x - y;
                s += diff * diff;
            }
            out[[i, j]] = s;
        }
    }
    out
}

/// Median pairwise Euclidean distance over the pooled rows of both sets.
/// Returns 1.0 when every pooled point coincides.
pub fn mmd_median_bandwidth(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let pooled = ndarray::concatenate(Axis(0), &[a.view(), b.view()]).expect("same width");
    let p = pooled.nrows();
    let mut dists = Vec::with_capacity(p * (p - 1) / 2);
    for i in 0..p {
        for j in (i + 1)..p {
            let mut s = 0.0;
            for (x, y) in pooled.row(i).iter().zip(pooled.row(j).iter()) {
                let diff = x - y;
                s += diff * diff;
            }
            dists.push(s.sqrt());
        }
    }
    dists.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let median = if dists.len() % 2 == 1 {
        dists[dists.len() / 2]
    } else {
        0.5 * (dists[dists.len() / 2 - 1] + dists[dists.len() / 2])
    };
    if median > 1e-12 {
        median
    } else {
        1.0
    }
}

/// Gradient of a spectral penalty sum(f(lambda_k)) through the
/// eigendecomposition: V diag(f'(lambda)) V^T. Equal derivative values under
/// ties make this the correct subspace-averaged gradient automatically.
fn spectral_grad(mom: &BatchMoments, fprime: impl Fn(f64) -> f64) -> Array2<f64> {
    let d = mom.cov.nrows();
    let mut g = Array2::zeros((d, d));
    for k in 0..d {
        let fp = fprime(mom.eigenvalues[k]);
        let v = mom.eigenvectors.column(k);
        for i in 0..d {
            for j in 0..d {
                g[[i, j]] += fp * v[i] * v[j];
            }
        }
    }
    g
}

struct MardiaParts {
    statistic: f64,
    d_statistic: Array2<f64>,
}

/// Shared machinery for the Mardia-type statistics T = mean_i g(m_i) with
/// m_i the Mahalanobis square of the centered row. Returns T and dT/d(eps).
fn mardia_statistic(
    eps: &Array2<f64>,
    mom: &BatchMoments,
    g: impl Fn(f64) -> f64,
    gprime: impl Fn(f64) -> f64,
) -> MardiaParts {
    let n = eps.nrows() as f64;
    let centered = eps - &mom.mean;
    let w_inv = mom.cov_inverse();
    let uw = centered.dot(&w_inv); // row i = (S^-1 u_i)^T
    let m: Array1<f64> = centered
        .rows()
        .into_iter()
        .zip(uw.rows())
        .map(|(u, w)| u.dot(&w))
        .collect();
    let statistic = m.iter().map(|&mi| g(mi)).sum::<f64>() / n;

    let gp: Array1<f64> = m.iter().map(|&mi| gprime(mi)).collect();
    // dT/de_k = (2/N) gp_k w_k - (2/N^2) sum_i gp_i w_i
    //           - (2/(N(N-1))) B u_k,  B = sum_i gp_i w_i w_i^T
    let gp_col = gp.view().insert_axis(Axis(1));
    let weighted = &uw * &gp_col; // rows gp_i * w_i
    let col_sum = weighted.sum_axis(Axis(0));
    let b = weighted.t().dot(&uw);
    let mut d_statistic = weighted * (2.0 / n);
    d_statistic -= &(col_sum * (2.0 / (n * n)));
    d_statistic -= &(centered.dot(&b) * (2.0 / (n * (n - 1.0))));
    MardiaParts {
        statistic,
        d_statistic,
    }
}

/// Penalty for `spec` on the batch, with reference drawn from the spec's
/// seeded stream when the MMD kind needs one.
pub fn penalty(spec: &RegularizerSpec, eps: &Array2<f64>) -> Result<Penalty> {
    penalty_with_reference(spec, eps, None)
}

/// As [`penalty`], but MMD uses the supplied reference sample. Training
/// passes a fresh per-step draw; gradient tests pass a frozen one.
pub fn penalty_with_reference(
    spec: &RegularizerSpec,
    eps: &Array2<f64>,
    mmd_reference: Option<&Array2<f64>>,
) -> Result<Penalty> {
    spec.validate()?;
    let (n_rows, d) = eps.dim();
    if n_rows == 0 || d == 0 {
        return Err(Error::ShapeMismatch("empty noise batch".into()));
    }
    if !eps.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("noise batch".into()));
    }
    let n = n_rows as f64;
    let df = d as f64;
    let lambda = spec.lambda;

    let result = match spec.kind {
        RegularizerKind::None => Penalty {
            value: 0.0,
            grad: Array2::zeros((n_rows, d)),
        },
        RegularizerKind::Mean => {
            let mu = eps.mean_axis(Axis(0)).expect("non-empty");
            let value = mu.dot(&mu);
            let row = &mu * (lambda * 2.0 / n);
            let grad = Array2::from_shape_fn((n_rows, d), |(_, j)| row[j]);
            Penalty { value, grad }
        }
        RegularizerKind::IsoTraceMean => {
            let trace_mean = eps.iter().map(|v| v * v).sum::<f64>() / (n * df);
            let value = (trace_mean - 1.0) * (trace_mean - 1.0);
            let grad = eps * (lambda * 4.0 * (trace_mean - 1.0) / (n * df));
            Penalty { value, grad }
        }
        RegularizerKind::Mmd => {
            let owned;
            let reference = match mmd_reference {
                Some(r) => r,
                None => {
                    let count = spec.mmd.reference_count.unwrap_or(n_rows);
                    let mut rng = substream(spec.mmd.ref_seed, "mmd-reference");
                    owned = draw_mmd_reference(count, d, &mut rng);
                    &owned
                }
            };
            return mmd_penalty(spec, eps, reference);
        }
        kind => {
            // Frobenius / diagonal-split compare the covariance itself and
            // stay well-defined when it is singular; the rest invert it or
            // take log/inverse-sqrt spectra and must reject degeneracy.
            let mom = if matches!(
                kind,
                RegularizerKind::IsoFrobenius | RegularizerKind::IsoDiagSplit
            ) {
                batch_moments_relaxed(eps)?
            } else {
                batch_moments(eps)?
            };
            let centered = eps - &mom.mean;
            match kind {
                RegularizerKind::Skewness => {
                    let parts =
                        mardia_statistic(eps, &mom, |m| m.powf(1.5), |m| 1.5 * m.sqrt());
                    let value = parts.statistic * parts.statistic;
                    let grad = parts.d_statistic * (lambda * 2.0 * parts.statistic);
                    Penalty { value, grad }
                }
                RegularizerKind::Kurtosis => {
                    let target = df * (df + 2.0);
                    let parts = mardia_statistic(eps, &mom, |m| m * m, |m| 2.0 * m);
                    let dev = parts.statistic - target;
                    let value = dev * dev;
                    let grad = parts.d_statistic * (lambda * 2.0 * dev);
                    Penalty { value, grad }
                }
                RegularizerKind::Kl => {
                    let trace = (0..d).map(|i| mom.cov[[i, i]]).sum::<f64>();
                    let value =
                        0.5 * (trace + mom.mean.dot(&mom.mean) - df - mom.log_det());
                    let w_inv = mom.cov_inverse();
                    // (u_k - S^-1 u_k)/(N-1) + mu/N per row.
                    let mut grad = (&centered - &centered.dot(&w_inv)) / (n - 1.0);
                    grad += &(&mom.mean / n);
                    grad *= lambda;
                    Penalty { value, grad }
                }
                RegularizerKind::IsoFrobenius => {
                    let mut dev = mom.cov.clone();
                    for i in 0..d {
                        dev[[i, i]] -= 1.0;
                    }
                    let value = dev.iter().map(|v| v * v).sum::<f64>();
                    let grad = centered.dot(&dev) * (lambda * 4.0 / (n - 1.0));
                    Penalty { value, grad }
                }
                RegularizerKind::IsoDiagSplit => {
                    let trace = (0..d).map(|i| mom.cov[[i, i]]).sum::<f64>();
                    let trace_dev = trace / df - 1.0;
                    let mut off_sum = 0.0;
                    let mut g = Array2::zeros((d, d));
                    if d > 1 {
                        let off_scale = 1.0 / (df * (df - 1.0));
                        for i in 0..d {
                            for j in 0..d {
                                if i != j {
                                    off_sum += mom.cov[[i, j]] * mom.cov[[i, j]];
                                    g[[i, j]] = 2.0 * off_scale * mom.cov[[i, j]];
                                }
                            }
                        }
                        off_sum *= off_scale;
                    }
                    for i in 0..d {
                        g[[i, i]] = 2.0 * trace_dev / df;
                    }
                    let value = off_sum + trace_dev * trace_dev;
                    let grad = centered.dot(&g) * (lambda * 2.0 / (n - 1.0));
                    Penalty { value, grad }
                }
                RegularizerKind::IsoLogEig => {
                    let value =
                        mom.eigenvalues.iter().map(|l| l.ln() * l.ln()).sum::<f64>() / df;
                    let g = spectral_grad(&mom, |l| 2.0 * l.ln() / (df * l));
                    let grad = centered.dot(&g) * (lambda * 2.0 / (n - 1.0));
                    Penalty { value, grad }
                }
                RegularizerKind::IsoBures => {
                    let value = mom
                        .eigenvalues
                        .iter()
                        .map(|l| {
                            let dev = l.sqrt() - 1.0;
                            dev * dev
                        })
                        .sum::<f64>()
                        / df;
                    let g = spectral_grad(&mom, |l| (1.0 - 1.0 / l.sqrt()) / df);
                    let grad = centered.dot(&g) * (lambda * 2.0 / (n - 1.0));
                    Penalty { value, grad }
                }
                _ => unreachable!("non-moment kinds handled above"),
            }
        }
    };

    if !result.value.is_finite() || !result.grad.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite(format!("{} penalty", spec.kind.name())));
    }
    Ok(result)
}

/// Unbiased MMD^2 between the batch and the reference under an RBF kernel.
/// The estimator is unbiased, so values can dip slightly below zero when the
/// batch already matches the reference distribution.
fn mmd_penalty(
    spec: &RegularizerSpec,
    eps: &Array2<f64>,
    reference: &Array2<f64>,
) -> Result<Penalty> {
    let (n_rows, d) = eps.dim();
    let m_rows = reference.nrows();
    if reference.ncols() != d {
        return Err(Error::ShapeMismatch(format!(
            "reference dim {} != batch dim {d}",
            reference.ncols()
        )));
    }
    if n_rows < 2 || m_rows < 2 {
        return Err(Error::ShapeMismatch(
            "unbiased MMD needs at least 2 rows on each side".into(),
        ));
    }
    if !reference.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("MMD reference".into()));
    }
    let sigma = match spec.mmd.bandwidth {
        Bandwidth::Fixed(s) => s,
        Bandwidth::Median => mmd_median_bandwidth(eps, reference),
    };
    let n = n_rows as f64;
    let m = m_rows as f64;
    let inv_two_sig_sq = 1.0 / (2.0 * sigma * sigma);

    let mut k_ee = pairwise_sq_dists(eps, eps);
    k_ee.mapv_inplace(|v| (-v * inv_two_sig_sq).exp());
    for i in 0..n_rows {
        k_ee[[i, i]] = 0.0;
    }
    let mut k_rr = pairwise_sq_dists(reference, reference);
    k_rr.mapv_inplace(|v| (-v * inv_two_sig_sq).exp());
    for i in 0..m_rows {
        k_rr[[i, i]] = 0.0;
    }
    let mut k_er = pairwise_sq_dists(eps, reference);
    k_er.mapv_inplace(|v| (-v * inv_two_sig_sq).exp());

    let value = k_ee.sum() / (n * (n - 1.0)) + k_rr.sum() / (m * (m - 1.0))
        - 2.0 * k_er.sum() / (n * m);

    // d/de_k of the kernel terms, with sigma and the reference held fixed.
    let ee_row_sums = k_ee.sum_axis(Axis(1));
    let er_row_sums = k_er.sum_axis(Axis(1));
    let ee_weighted = k_ee.dot(eps);
    let er_weighted = k_er.dot(reference);

    let mut grad = Array2::zeros((n_rows, d));
    let c_ee = -2.0 * inv_two_sig_sq * 2.0 / (n * (n - 1.0));
    let c_er = 2.0 * inv_two_sig_sq * 2.0 / (n * m);
    for i in 0..n_rows {
        for j in 0..d {
            let ee_term = ee_row_sums[i] * eps[[i, j]] - ee_weighted[[i, j]];
            let er_term = er_row_sums[i] * eps[[i, j]] - er_weighted[[i, j]];
            grad[[i, j]] = c_ee * ee_term + c_er * er_term;
        }
    }
    grad *= spec.lambda;

    if !value.is_finite() || !grad.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("mmd penalty".into()));
    }
    Ok(Penalty { value, grad })
}

/// The training objective for one batch: mean per-row squared error plus the
/// weighted penalty, and its gradient with respect to the prediction.
#[derive(Debug, Clone)]
pub struct LossTerms {
    /// Mean over rows of the squared noise-prediction error.
    pub simple: f64,
    /// Weight-free penalty value.
    pub penalty_value: f64,
    /// simple + lambda * penalty_value.
    pub total: f64,
    pub grad: Array2<f64>,
}

pub fn total_loss(
    eps_true: &Array2<f64>,
    eps_pred: &Array2<f64>,
    spec: &RegularizerSpec,
    mmd_reference: Option<&Array2<f64>>,
) -> Result<LossTerms> {
    if eps_true.dim() != eps_pred.dim() {
        return Err(Error::ShapeMismatch(format!(
            "noise {:?} vs prediction {:?}",
            eps_true.dim(),
            eps_pred.dim()
        )));
    }
    let n = eps_true.nrows() as f64;
    let diff = eps_pred - eps_true;
    let simple = diff.iter().map(|v| v * v).sum::<f64>() / n;
    let pen = penalty_with_reference(spec, eps_pred, mmd_reference)?;
    let total = simple + spec.lambda * pen.value;
    if !total.is_finite() {
        return Err(Error::NonFinite("total loss".into()));
    }
    let mut grad = diff * (2.0 / n);
    grad += &pen.grad;
    Ok(LossTerms {
        simple,
        penalty_value: pen.value,
        total,
        grad,
    })
}
