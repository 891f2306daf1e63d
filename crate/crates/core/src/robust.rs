//! Huber M-estimation for linear regression via iteratively reweighted least
//! squares, with t-statistics from the standard M-estimation variance. Used
//! to build outlier-insensitive summary statistics.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

/// Conventional Huber tuning constant (95% efficiency at the normal).
pub const HUBER_TUNING: f64 = 1.345;

pub const MAX_IRLS_ITERATIONS: usize = 50;

/// Result of a robust (or plain least-squares) linear fit.
#[derive(Clone, Debug)]
pub struct RobustFit {
    pub coefficients: DVector<f64>,
    pub t_statistics: DVector<f64>,
    /// Residual scale estimate (MAD-based for the robust fit).
    pub scale: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn solve_weighted(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    weights: Option<&[f64]>,
) -> Result<(DVector<f64>, Cholesky<f64, nalgebra::Dyn>)> {
    let m = x.ncols();
    let mut xtx = DMatrix::zeros(m, m);
    let mut xty = DVector::zeros(m);
    for i in 0..x.nrows() {
        let w = weights.map_or(1.0, |ws| ws[i]);
        for a in 0..m {
            let xa = x[(i, a)];
            xty[a] += w * xa * y[i];
            for b in a..m {
                xtx[(a, b)] += w * xa * x[(i, b)];
            }
        }
    }
    for a in 0..m {
        for b in 0..a {
            xtx[(a, b)] = xtx[(b, a)];
        }
    }
    let scale = xtx.diagonal().amax();
    let chol = Cholesky::new(xtx).ok_or_else(|| {
        Error::RankDeficient("design matrix has numerically dependent columns".into())
    })?;
    // Cholesky can run to completion on a singular Gram matrix with tiny
    // positive pivots; reject those explicitly.
    let min_pivot = chol.l_dirty().diagonal().min();
    if !(min_pivot * min_pivot > 1e-12 * scale) {
        return Err(Error::RankDeficient(
            "design matrix has numerically dependent columns".into(),
        ));
    }
    let beta = chol.solve(&xty);
    Ok((beta, chol))
}

fn median(values: &mut [f64]) -> f64 {
    let n = values.len();
    let (_, mid, _) = values.select_nth_unstable_by(n / 2, f64::total_cmp);
    let hi = *mid;
    if n % 2 == 1 {
        hi
    } else {
        let (_, lo, _) = values.select_nth_unstable_by(n / 2 - 1, f64::total_cmp);
        0.5 * (*lo + hi)
    }
}

/// Ordinary least squares with classical t-statistics.
pub fn ols_fit(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<RobustFit> {
    let n = x.nrows();
    let m = x.ncols();
    if n <= m {
        return Err(Error::RankDeficient(format!(
            "need more than {m} rows for {m} coefficients, got {n}"
        )));
    }
    let (beta, chol) = solve_weighted(x, y, None)?;
    let resid = y - x * &beta;
    let sigma2 = resid.norm_squared() / (n - m) as f64;
    let xtx_inv = chol.inverse();
    let t = DVector::from_fn(m, |k, _| {
        let se = (sigma2 * xtx_inv[(k, k)]).sqrt();
        if se > 0.0 {
            beta[k] / se
        } else {
            0.0
        }
    });
    Ok(RobustFit {
        coefficients: beta,
        t_statistics: t,
        scale: sigma2.sqrt(),
        iterations: 0,
        converged: true,
    })
}

/// Huber M-estimator fitted by IRLS. The residual scale is re-estimated each
/// iteration from the median absolute residual. t-statistics use the
/// standard correction
/// `kappa = [sum psi(u)^2 / (n - m)] / [mean psi'(u)]^2` applied to the
/// classical (X'X)^-1 covariance, which leaves them invariant to rescaling
/// the response.
pub fn huber_fit(x: &DMatrix<f64>, y: &DVector<f64>, tuning: f64) -> Result<RobustFit> {
    let n = x.nrows();
    let m = x.ncols();
    if n <= m {
        return Err(Error::RankDeficient(format!(
            "need more than {m} rows for {m} coefficients, got {n}"
        )));
    }
    let (mut beta, _) = solve_weighted(x, y, None)?;
    let mut weights = vec![1.0; n];
    let mut converged = false;
    let mut iterations = 0;
    let mut scale = 1.0;

    for iter in 0..MAX_IRLS_ITERATIONS {
        iterations = iter + 1;
        let resid = y - x * &beta;
        let mut abs_resid: Vec<f64> = resid.iter().map(|r| r.abs()).collect();
        scale = median(&mut abs_resid) / 0.6745;
        if scale <= 0.0 {
            // Interpolating fit; residuals are all (near) zero.
            scale = f64::EPSILON * y.amax().max(1.0);
            converged = true;
            break;
        }
        for i in 0..n {
            let u = resid[i] / scale;
            weights[i] = if u.abs() <= tuning { 1.0 } else { tuning / u.abs() };
        }
        let (next, _) = solve_weighted(x, y, Some(&weights))?;
        let delta = (&next - &beta).amax();
        let magnitude = beta.amax().max(1.0);
        beta = next;
        if delta <= 1e-9 * magnitude {
            converged = true;
            break;
        }
    }

    let resid = y - x * &beta;
    let mut sum_psi2 = 0.0;
    let mut sum_dpsi = 0.0;
    for r in resid.iter() {
        let u = r / scale;
        let psi = u.clamp(-tuning, tuning);
        sum_psi2 += psi * psi;
        sum_dpsi += if u.abs() <= tuning { 1.0 } else { 0.0 };
    }
    let mean_dpsi = (sum_dpsi / n as f64).max(1e-12);
    let kappa = (sum_psi2 / (n - m) as f64) / (mean_dpsi * mean_dpsi);
    let (_, chol) = solve_weighted(x, y, None)?;
    let xtx_inv = chol.inverse();
    let t = DVector::from_fn(m, |k, _| {
        let se = (kappa * scale * scale * xtx_inv[(k, k)]).sqrt();
        if se > 0.0 {
            beta[k] / se
        } else {
            0.0
        }
    });

    Ok(RobustFit {
        coefficients: beta,
        t_statistics: t,
        scale,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use approx::assert_abs_diff_eq;
    use rand_distr::{Distribution, StandardNormal};

    fn design(n: usize, covariates: usize, rng: &mut rand_chacha::ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(n, covariates + 1, |_, j| {
            if j == 0 {
                1.0
            } else {
                StandardNormal.sample(rng)
            }
        })
    }

    #[test]
    fn recovers_clean_coefficients() {
        let mut rng = SeededRng::new(1).rng();
        let x = design(200, 2, &mut rng);
        let truth = DVector::from_vec(vec![1.0, 2.5, -1.0]);
        let noise = DVector::from_fn(200, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            0.3 * z
        });
        let y = &x * &truth + noise;
        let fit = huber_fit(&x, &y, HUBER_TUNING).unwrap();
        assert!(fit.converged);
        for k in 0..3 {
            assert!((fit.coefficients[k] - truth[k]).abs() < 0.1);
        }
    }

    #[test]
    fn huber_resists_a_gross_outlier_better_than_ols() {
        let mut rng = SeededRng::new(2).rng();
        let x = design(60, 1, &mut rng);
        let truth = DVector::from_vec(vec![0.0, 2.0]);
        let mut y = &x * &truth
            + DVector::from_fn(60, |_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                0.5 * z
            });
        let clean_h = huber_fit(&x, &y, HUBER_TUNING).unwrap();
        let clean_o = ols_fit(&x, &y).unwrap();
        y[59] += 500.0;
        let dirty_h = huber_fit(&x, &y, HUBER_TUNING).unwrap();
        let dirty_o = ols_fit(&x, &y).unwrap();
        let drift_h = (dirty_h.t_statistics[1] - clean_h.t_statistics[1]).abs()
            / clean_h.t_statistics[1].abs();
        let drift_o = (dirty_o.t_statistics[1] - clean_o.t_statistics[1]).abs()
            / clean_o.t_statistics[1].abs();
        assert!(
            drift_h < 0.3,
            "robust t drifted {drift_h} (clean {}, dirty {})",
            clean_h.t_statistics[1],
            dirty_h.t_statistics[1]
        );
        assert!(drift_o > drift_h * 2.0, "OLS drift {drift_o} vs Huber {drift_h}");
    }

    #[test]
    fn t_statistics_are_scale_free() {
        let mut rng = SeededRng::new(3).rng();
        let x = design(80, 2, &mut rng);
        let y = DVector::from_fn(80, |i, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            x[(i, 1)] * 1.4 + z
        });
        let a = huber_fit(&x, &y, HUBER_TUNING).unwrap();
        let b = huber_fit(&x, &(&y * 37.0), HUBER_TUNING).unwrap();
        for k in 0..3 {
            assert_abs_diff_eq!(a.t_statistics[k], b.t_statistics[k], epsilon = 1e-6);
        }
    }

    #[test]
    fn duplicate_columns_error() {
        let mut rng = SeededRng::new(4).rng();
        let base = design(40, 1, &mut rng);
        let x = DMatrix::from_fn(40, 3, |i, j| match j {
            0 => 1.0,
            1 => base[(i, 1)],
            _ => base[(i, 1)],
        });
        let y = DVector::from_fn(40, |i, _| base[(i, 1)]);
        assert!(huber_fit(&x, &y, HUBER_TUNING).is_err());
    }
}
