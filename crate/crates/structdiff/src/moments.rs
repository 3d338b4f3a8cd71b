//! Batch mean/covariance and a cyclic-Jacobi symmetric eigendecomposition.

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};

/// First and second moments of a predicted-noise batch, with the covariance
/// spectrum. Eigenvalues are ascending; eigenvector k is column k.
#[derive(Debug, Clone)]
pub struct BatchMoments {
    pub mean: Array1<f64>,
    pub cov: Array2<f64>,
    pub eigenvalues: Array1<f64>,
    pub eigenvectors: Array2<f64>,
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns (ascending eigenvalues, eigenvector columns).
pub fn jacobi_eigh(a: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let d = a.nrows();
    if a.ncols() != d || d == 0 {
        return Err(Error::ShapeMismatch(format!(
            "eigendecomposition needs a square matrix, got {:?}",
            a.dim()
        )));
    }
    let sym_err = a
        .iter()
        .zip(a.t().iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f64, f64::max);
    let scale = a.iter().map(|v| v.abs()).fold(0.0f64, f64::max).max(1e-300);
    if sym_err > 1e-12 * scale.max(1.0) {
        return Err(Error::ShapeMismatch(format!(
            "matrix is not symmetric (max asymmetry {sym_err:.3e})"
        )));
    }

    let mut m = a.clone();
    let mut vecs = Array2::eye(d);
    for _sweep in 0..100 {
        let off: f64 = (0..d)
            .flat_map(|p| ((p + 1)..d).map(move |q| (p, q)))
            .map(|(p, q)| m[[p, q]] * m[[p, q]])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = m[[p, q]];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    -1.0 / (-theta + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let h = t * apq;
                m[[p, p]] -= h;
                m[[q, q]] += h;
                m[[p, q]] = 0.0;
                m[[q, p]] = 0.0;
                for k in 0..d {
                    if k != p && k != q {
                        let akp = m[[k, p]];
                        let akq = m[[k, q]];
                        m[[k, p]] = c * akp - s * akq;
                        m[[k, q]] = s * akp + c * akq;
                        m[[p, k]] = m[[k, p]];
                        m[[q, k]] = m[[k, q]];
                    }
                }
                for k in 0..d {
                    let vkp = vecs[[k, p]];
                    let vkq = vecs[[k, q]];
                    vecs[[k, p]] = c * vkp - s * vkq;
                    vecs[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| m[[i, i]].partial_cmp(&m[[j, j]]).unwrap());
    let eigenvalues = Array1::from_iter(order.iter().map(|&i| m[[i, i]]));
    let mut eigenvectors = Array2::zeros((d, d));
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.column_mut(dst).assign(&vecs.column(src));
    }
    Ok((eigenvalues, eigenvectors))
}

/// Sample mean and unbiased covariance of an N x d batch, with the spectrum.
/// Degenerate batches (covariance eigenvalue below 1e-12) are rejected, for
/// consumers that need a usable inverse or log-spectrum.
pub fn batch_moments(eps: &Array2<f64>) -> Result<BatchMoments> {
    let mom = batch_moments_relaxed(eps)?;
    let min_eig = mom.eigenvalues[0];
    if min_eig < 1e-12 {
        return Err(Error::SingularCovariance(min_eig));
    }
    Ok(mom)
}

/// As [`batch_moments`], but admits singular covariances. For penalties that
/// use the covariance itself rather than its inverse or log-spectrum.
pub fn batch_moments_relaxed(eps: &Array2<f64>) -> Result<BatchMoments> {
    let (n, d) = eps.dim();
    if n < d + 1 {
        return Err(Error::BatchTooSmall { n, d, min: d + 1 });
    }
    let mean = eps.mean_axis(Axis(0)).expect("n >= 1");
    let centered = eps - &mean;
    let mut cov = centered.t().dot(&centered) / (n as f64 - 1.0);
    // Exact symmetry, so Jacobi sees no rounding skew.
    for p in 0..d {
        for q in (p + 1)..d {
            let avg = 0.5 * (cov[[p, q]] + cov[[q, p]]);
            cov[[p, q]] = avg;
            cov[[q, p]] = avg;
        }
    }
    let (eigenvalues, eigenvectors) = jacobi_eigh(&cov)?;
    Ok(BatchMoments {
        mean,
        cov,
        eigenvalues,
        eigenvectors,
    })
}

impl BatchMoments {
    /// Covariance inverse reassembled from the spectrum.
    pub fn cov_inverse(&self) -> Array2<f64> {
        let d = self.cov.nrows();
        let mut out = Array2::zeros((d, d));
        for k in 0..d {
            let v = self.eigenvectors.column(k);
            let scale = 1.0 / self.eigenvalues[k];
            for i in 0..d {
                for j in 0..d {
                    out[[i, j]] += scale * v[i] * v[j];
                }
            }
        }
        out
    }

    /// log(det(cov)) from the spectrum.
    pub fn log_det(&self) -> f64 {
        self.eigenvalues.iter().map(|l| l.ln()).sum()
    }
}
