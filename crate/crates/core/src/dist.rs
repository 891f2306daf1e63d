//! Distances between summary vectors, acceptance thresholds and the
//! Mahalanobis scale-matrix estimator.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::table::SimulatorModel;
use crate::types::SummaryVector;

/// Which metric to use when comparing summary vectors.
#[derive(Clone, Debug)]
pub enum DistanceSpec {
    Euclidean,
    /// Distance sqrt((a-b)' S^-1 (a-b)) with a symmetric positive-definite
    /// scale matrix S.
    Mahalanobis { scale: DMatrix<f64> },
}

impl DistanceSpec {
    /// Validates and wraps a Mahalanobis scale matrix.
    pub fn mahalanobis(scale: DMatrix<f64>) -> Result<Self> {
        validate_spd(&scale)?;
        Ok(DistanceSpec::Mahalanobis { scale })
    }

    /// Distance kernel restricted to a subset of summary indices.
    pub(crate) fn projected(&self, subset: &[usize]) -> Result<DistanceKernel> {
        match self {
            DistanceSpec::Euclidean => Ok(DistanceKernel::Euclidean),
            DistanceSpec::Mahalanobis { scale } => {
                for &s in subset {
                    if s >= scale.nrows() {
                        return Err(Error::invalid(format!(
                            "subset index {s} out of range for {}x{} scale matrix",
                            scale.nrows(),
                            scale.ncols()
                        )));
                    }
                }
                let sub = scale.select_rows(subset.iter()).select_columns(subset.iter());
                let chol = Cholesky::new(sub).ok_or_else(|| {
                    Error::NotPositiveDefinite(
                        "projected Mahalanobis scale matrix failed Cholesky".into(),
                    )
                })?;
                Ok(DistanceKernel::Mahalanobis {
                    chol_lower: chol.unpack(),
                })
            }
        }
    }
}

fn validate_spd(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotPositiveDefinite("scale matrix is not square".into()));
    }
    let scale = m.amax().max(1.0);
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-10 * scale {
                return Err(Error::NotPositiveDefinite("scale matrix is not symmetric".into()));
            }
        }
    }
    if Cholesky::new(m.clone()).is_none() {
        return Err(Error::NotPositiveDefinite(
            "scale matrix has non-positive eigenvalues".into(),
        ));
    }
    Ok(())
}

/// Distance evaluator on (projected) summary coordinates.
pub(crate) enum DistanceKernel {
    Euclidean,
    Mahalanobis { chol_lower: DMatrix<f64> },
}

impl DistanceKernel {
    /// Distance between `diff = a - b` already restricted to the subset.
    pub(crate) fn eval_diff(&self, diff: &mut [f64]) -> f64 {
        match self {
            DistanceKernel::Euclidean => diff.iter().map(|d| d * d).sum::<f64>().sqrt(),
            DistanceKernel::Mahalanobis { chol_lower } => {
                // Forward-substitute L z = diff, then |z|.
                let m = diff.len();
                let mut acc = 0.0;
                for i in 0..m {
                    let mut v = diff[i];
                    for k in 0..i {
                        v -= chol_lower[(i, k)] * diff[k];
                    }
                    let z = v / chol_lower[(i, i)];
                    diff[i] = z;
                    acc += z * z;
                }
                acc.sqrt()
            }
        }
    }
}

/// Distance between two full summary vectors under `spec`.
pub fn distance(a: &SummaryVector, b: &SummaryVector, spec: &DistanceSpec) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if let DistanceSpec::Mahalanobis { scale } = spec {
        if scale.nrows() != a.len() {
            return Err(Error::DimensionMismatch {
                expected: a.len(),
                got: scale.nrows(),
            });
        }
        validate_spd(scale)?;
    }
    let subset: Vec<usize> = (0..a.len()).collect();
    let kernel = spec.projected(&subset)?;
    let mut diff: Vec<f64> = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| x - y)
        .collect();
    Ok(kernel.eval_diff(&mut diff))
}

/// Uniform-kernel bandwidth: the k-th smallest distance with
/// k = ceil(quantile * N), so that accepting d <= h keeps exactly k samples
/// when distances are distinct.
pub fn uniform_kernel_threshold(distances: &[f64], acceptance_quantile: f64) -> Result<f64> {
    if distances.is_empty() {
        return Err(Error::invalid("cannot take a quantile of an empty distance set"));
    }
    if !(acceptance_quantile > 0.0 && acceptance_quantile <= 1.0) {
        return Err(Error::invalid(format!(
            "acceptance quantile must lie in (0, 1], got {acceptance_quantile}"
        )));
    }
    if distances.iter().any(|d| !d.is_finite() || *d < 0.0) {
        return Err(Error::invalid("distances must be finite and nonnegative"));
    }
    let n = distances.len();
    let k = ((acceptance_quantile * n as f64).ceil() as usize).clamp(1, n);
    let mut work = distances.to_vec();
    let (_, kth, _) = work.select_nth_unstable_by(k - 1, |a, b| a.total_cmp(b));
    Ok(*kth)
}

/// Estimates Cov(s | theta0) from `m` simulated summary vectors, adding a
/// ridge when the sample covariance is numerically singular so downstream
/// selections never abort on a degenerate pilot.
pub fn estimate_mahalanobis_scale<M: SimulatorModel + ?Sized>(
    model: &M,
    theta0: &DVector<f64>,
    m: usize,
    rng: SeededRng,
) -> Result<DMatrix<f64>> {
    let q = model.summary_dim();
    if m < q + 1 {
        return Err(Error::invalid(format!(
            "need at least q + 1 = {} pilot simulations, got {m}",
            q + 1
        )));
    }
    let mut draws = DMatrix::zeros(m, q);
    let mut r = rng.rng();
    for i in 0..m {
        let s = model.simulate_summaries(theta0, &mut r)?;
        draws.row_mut(i).copy_from(&s.transpose());
    }
    let mean = draws.row_mean();
    for i in 0..m {
        let mut row = draws.row_mut(i);
        row -= &mean;
    }
    let mut cov = draws.transpose() * &draws / (m as f64 - 1.0);
    // Symmetrize against accumulation error, then ridge until Cholesky holds.
    cov = (&cov + cov.transpose()) * 0.5;
    let mean_diag = cov.diagonal().mean().max(f64::MIN_POSITIVE);
    let mut ridge = 0.0;
    loop {
        let candidate = &cov + DMatrix::from_diagonal_element(q, q, ridge);
        if Cholesky::new(candidate.clone()).is_some() {
            return Ok(candidate);
        }
        ridge = if ridge == 0.0 {
            1e-8 * mean_diag
        } else {
            ridge * 10.0
        };
        if ridge > 1e6 * mean_diag {
            return Err(Error::NotPositiveDefinite(
                "pilot covariance could not be repaired by ridging".into(),
            ));
        }
    }
}
