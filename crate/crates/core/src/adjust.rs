//! Post-selection corrections: local-linear regression adjustment of the
//! parameter draws toward the observed summaries, and the order-statistic
//! (marginal) adjustment that replaces each column's empirical distribution
//! with a more precisely estimated one while preserving ranks.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::marginal::Marginal;
use crate::types::{SummaryVector, WeightedSampleSet};

/// Weighted least-squares fit of the parameters on centred summaries.
#[derive(Clone, Debug)]
pub struct RegressionFit {
    /// Intercepts, one per parameter column.
    pub intercept: DVector<f64>,
    /// Coefficients as a q x p matrix; rows outside the fitted subset (and
    /// dropped collinear columns) are zero.
    pub coefficients: DMatrix<f64>,
    /// Residuals of the weighted fit, n x p.
    pub residuals: DMatrix<f64>,
    /// Summary indices dropped because they were numerically collinear.
    pub dropped: Vec<usize>,
}

/// Solves min ||sqrt(W)(A x - y)|| by modified Gram-Schmidt with column
/// pivoting; numerically collinear columns get zero coefficients. Returns
/// one coefficient vector per column of `ys` plus the dropped column ids.
fn pivoted_weighted_lsq(
    design: &DMatrix<f64>,
    ys: &DMatrix<f64>,
    weights: &DVector<f64>,
) -> Result<(DMatrix<f64>, Vec<usize>)> {
    let n = design.nrows();
    let m = design.ncols();
    if n < m {
        return Err(Error::RankDeficient(format!(
            "{n} rows cannot identify {m} coefficients"
        )));
    }
    let sw: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    // Scaled copies of the design columns and targets.
    let mut cols: Vec<DVector<f64>> = (0..m)
        .map(|j| DVector::from_fn(n, |i, _| design[(i, j)] * sw[i]))
        .collect();
    let mut targets: Vec<DVector<f64>> = (0..ys.ncols())
        .map(|j| DVector::from_fn(n, |i, _| ys[(i, j)] * sw[i]))
        .collect();

    let initial_max_norm = cols.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let tol = 1e-8 * initial_max_norm;

    let mut pivots: Vec<usize> = Vec::with_capacity(m);
    let mut remaining: Vec<usize> = (0..m).collect();
    // r[k][j] = <q_k, original col j> for the pivoted triangular system.
    let mut r_rows: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut qt_y: Vec<Vec<f64>> = Vec::with_capacity(m);

    while !remaining.is_empty() {
        let mut best = remaining[0];
        let mut norm = cols[best].norm();
        for &j in &remaining[1..] {
            let nrm = cols[j].norm();
            if nrm > norm {
                best = j;
                norm = nrm;
            }
        }
        if norm <= tol {
            break;
        }
        let q = cols[best].clone() / norm;
        pivots.push(best);
        remaining.retain(|&j| j != best);

        let mut row = vec![0.0; m];
        row[best] = norm;
        for &j in &remaining {
            let proj = q.dot(&cols[j]);
            row[j] = proj;
            cols[j] -= &q * proj;
        }
        r_rows.push(row);
        qt_y.push(targets.iter_mut().map(|t| {
            let proj = q.dot(t);
            *t -= &q * proj;
            proj
        }).collect());
    }

    let rank = pivots.len();
    let dropped: Vec<usize> = (0..m).filter(|j| !pivots.contains(j)).collect();

    // Back substitution over the pivoted triangular system.
    let mut coefs = DMatrix::zeros(m, ys.ncols());
    for t in 0..ys.ncols() {
        let mut beta = vec![0.0; m];
        for k in (0..rank).rev() {
            let pk = pivots[k];
            let mut v = qt_y[k][t];
            for l in (k + 1)..rank {
                v -= r_rows[k][pivots[l]] * beta[pivots[l]];
            }
            beta[pk] = v / r_rows[k][pk];
        }
        for j in 0..m {
            coefs[(j, t)] = beta[j];
        }
    }
    Ok((coefs, dropped))
}

/// Linear regression adjustment: fits each parameter column on the centred
/// summaries `s - s_obs` over `subset` by weighted least squares, then moves
/// every draw to its fitted value at `s_obs` plus residual. Summaries and
/// weights pass through unchanged.
pub fn regression_adjust(
    samples: &WeightedSampleSet,
    s_obs: &SummaryVector,
    subset: &[usize],
) -> Result<(WeightedSampleSet, RegressionFit)> {
    let n = samples.len();
    let p = samples.parameter_dim();
    if subset.is_empty() {
        return Err(Error::invalid("regression subset must be nonempty"));
    }
    if s_obs.len() != samples.summary_dim() {
        return Err(Error::DimensionMismatch {
            expected: samples.summary_dim(),
            got: s_obs.len(),
        });
    }
    for &k in subset {
        if k >= samples.summary_dim() {
            return Err(Error::invalid(format!("summary index {k} out of range")));
        }
    }
    let m = subset.len();
    if n <= m + 1 {
        return Err(Error::RankDeficient(format!(
            "need more than {} rows to fit {} coefficients",
            m + 1,
            m
        )));
    }

    // Design: intercept column followed by centred summaries.
    let obs = s_obs.as_slice();
    let design = DMatrix::from_fn(n, m + 1, |i, j| {
        if j == 0 {
            1.0
        } else {
            let k = subset[j - 1];
            samples.summaries()[(i, k)] - obs[k]
        }
    });
    let (coefs, dropped_internal) = pivoted_weighted_lsq(&design, samples.params(), samples.weights())?;

    let mut intercept = DVector::zeros(p);
    let mut coefficients = DMatrix::zeros(samples.summary_dim(), p);
    for t in 0..p {
        intercept[t] = coefs[(0, t)];
        for (j, &k) in subset.iter().enumerate() {
            coefficients[(k, t)] = coefs[(j + 1, t)];
        }
    }
    let dropped: Vec<usize> = dropped_internal
        .into_iter()
        .filter(|&j| j > 0)
        .map(|j| subset[j - 1])
        .collect();

    // theta* = theta - beta' (s - s_obs); equivalently alpha + residual.
    let mut adjusted = samples.params().clone();
    let mut residuals = DMatrix::zeros(n, p);
    for i in 0..n {
        for t in 0..p {
            let mut shift = 0.0;
            for j in 0..subset.len() {
                shift += coefs[(j + 1, t)] * design[(i, j + 1)];
            }
            adjusted[(i, t)] -= shift;
            residuals[(i, t)] = samples.params()[(i, t)] - intercept[t] - shift;
        }
    }

    let fit = RegressionFit {
        intercept,
        coefficients,
        residuals,
        dropped,
    };
    Ok((samples.with_params(adjusted)?, fit))
}

/// Ranks of `values` (1..=n) with ties broken by input order.
pub(crate) fn stable_ranks(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut ranks = vec![0usize; values.len()];
    for (r, &idx) in order.iter().enumerate() {
        ranks[idx] = r + 1;
    }
    ranks
}

/// Replaces each entry of rank r with the marginal quantile at r/(n+1),
/// preserving within-column rank order.
pub fn adjust_column_to_marginal<M: Marginal>(values: &[f64], marginal: &M) -> Vec<f64> {
    let n = values.len() as f64;
    stable_ranks(values)
        .into_iter()
        .map(|r| marginal.quantile(r as f64 / (n + 1.0)))
        .collect()
}

/// Marginal adjustment of a jointly selected, equally weighted sample set:
/// column i's order statistics are replaced by quantiles of `marginals[i]`.
pub fn marginal_adjust<M: Marginal>(
    joint: &WeightedSampleSet,
    marginals: &[M],
) -> Result<WeightedSampleSet> {
    let p = joint.parameter_dim();
    if marginals.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: marginals.len(),
        });
    }
    if !joint.has_uniform_weights(1e-9) {
        return Err(Error::invalid(
            "marginal adjustment requires equally weighted draws; apply it after uniform-kernel selection",
        ));
    }
    let n = joint.len();
    let mut params = joint.params().clone();
    for t in 0..p {
        let col: Vec<f64> = (0..n).map(|i| params[(i, t)]).collect();
        let adjusted = adjust_column_to_marginal(&col, &marginals[t]);
        for i in 0..n {
            params[(i, t)] = adjusted[i];
        }
    }
    joint.with_params(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marginal::MarginalEstimate;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn set(params: &[f64], p: usize, summaries: &[f64], q: usize) -> WeightedSampleSet {
        let n = params.len() / p;
        WeightedSampleSet::new(
            DMatrix::from_row_slice(n, p, params),
            DMatrix::from_row_slice(n, q, summaries),
            vec![1.0; n],
        )
        .unwrap()
    }

    #[test]
    fn hand_example_shrinks_to_two() {
        // theta = (1,2,3) on s = (1,2,3) with s_obs = 2: beta = 1, alpha = 2.
        let samples = set(&[1.0, 2.0, 3.0], 1, &[1.0, 2.0, 3.0], 1);
        let s_obs = SummaryVector::new(vec![2.0]).unwrap();
        let (adj, fit) = regression_adjust(&samples, &s_obs, &[0]).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(adj.params()[(i, 0)], 2.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(fit.intercept[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.coefficients[(0, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_regressor_leaves_params_unchanged() {
        let samples = set(&[1.0, 2.0, 3.0], 1, &[5.0, 5.0, 5.0], 1);
        let s_obs = SummaryVector::new(vec![5.0]).unwrap();
        let (adj, _) = regression_adjust(&samples, &s_obs, &[0]).unwrap();
        assert_eq!(adj.params(), samples.params());
    }

    #[test]
    fn constant_theta_has_zero_slope() {
        let samples = set(&[4.0, 4.0, 4.0, 4.0], 1, &[1.0, 2.0, 3.0, 4.0], 1);
        let s_obs = SummaryVector::new(vec![2.5]).unwrap();
        let (adj, fit) = regression_adjust(&samples, &s_obs, &[0]).unwrap();
        assert_abs_diff_eq!(fit.coefficients[(0, 0)], 0.0, epsilon = 1e-12);
        assert_eq!(adj.params(), samples.params());
    }

    #[test]
    fn collinear_columns_are_dropped_not_fatal() {
        // Second summary duplicates the first.
        let samples = set(
            &[1.0, 2.0, 3.0, 4.0],
            1,
            &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0],
            2,
        );
        let s_obs = SummaryVector::new(vec![2.0, 2.0]).unwrap();
        let (_, fit) = regression_adjust(&samples, &s_obs, &[0, 1]).unwrap();
        assert_eq!(fit.dropped.len(), 1);
    }

    #[test]
    fn too_few_rows_is_an_error() {
        let samples = set(&[1.0, 2.0], 1, &[1.0, 0.0, 0.0, 1.0], 2);
        let s_obs = SummaryVector::new(vec![0.0, 0.0]).unwrap();
        assert!(regression_adjust(&samples, &s_obs, &[0, 1]).is_err());
    }

    #[test]
    fn adjustment_is_idempotent_in_the_noiseless_linear_case() {
        let n = 20;
        let s: Vec<f64> = (0..n).map(|i| i as f64 / 3.0).collect();
        let theta: Vec<f64> = s.iter().map(|v| 2.0 * v - 1.0).collect();
        let samples = set(&theta, 1, &s, 1);
        let s_obs = SummaryVector::new(vec![1.0]).unwrap();
        let (once, _) = regression_adjust(&samples, &s_obs, &[0]).unwrap();
        let (twice, fit2) = regression_adjust(&once, &s_obs, &[0]).unwrap();
        assert_abs_diff_eq!(fit2.coefficients[(0, 0)], 0.0, epsilon = 1e-9);
        for i in 0..n {
            assert_abs_diff_eq!(
                once.params()[(i, 0)],
                twice.params()[(i, 0)],
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn weighted_mean_identity_holds() {
        // weighted mean of theta* = alpha + weighted mean residual.
        let n = 50;
        let svals: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let theta: Vec<f64> = svals
            .iter()
            .enumerate()
            .map(|(i, v)| 3.0 * v + (i as f64 * 0.11).cos())
            .collect();
        let weights: Vec<f64> = (0..n).map(|i| 1.0 + (i % 5) as f64).collect();
        let samples = WeightedSampleSet::new(
            DMatrix::from_row_slice(n, 1, &theta),
            DMatrix::from_row_slice(n, 1, &svals),
            weights,
        )
        .unwrap();
        let s_obs = SummaryVector::new(vec![0.2]).unwrap();
        let (adj, fit) = regression_adjust(&samples, &s_obs, &[0]).unwrap();
        let wmean_adj: f64 = (0..n)
            .map(|i| adj.weights()[i] * adj.params()[(i, 0)])
            .sum();
        let wmean_resid: f64 = (0..n)
            .map(|i| adj.weights()[i] * fit.residuals[(i, 0)])
            .sum();
        assert_abs_diff_eq!(wmean_adj, fit.intercept[0] + wmean_resid, epsilon = 1e-10);
    }

    #[test]
    fn marginal_adjust_hand_example() {
        // joint column (0.3, 0.1, 0.2) against marginal sample (5, 6, 7).
        let joint = set(&[0.3, 0.1, 0.2], 1, &[0.0, 0.0, 0.0], 1);
        let marg = MarginalEstimate::from_sample(&[5.0, 6.0, 7.0]).unwrap();
        let adj = marginal_adjust(&joint, &[marg]).unwrap();
        assert_abs_diff_eq!(adj.params()[(0, 0)], 7.0, epsilon = 1e-12);
        assert_abs_diff_eq!(adj.params()[(1, 0)], 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(adj.params()[(2, 0)], 6.0, epsilon = 1e-12);
    }

    #[test]
    fn self_adjustment_is_near_identity() {
        let values = vec![0.4, -1.2, 3.3, 0.0, 2.2, -0.7, 1.5];
        let joint = set(&values, 1, &vec![0.0; values.len()], 1);
        let marg = MarginalEstimate::from_sample(&values).unwrap();
        let adj = marginal_adjust(&joint, &[marg]).unwrap();
        for i in 0..values.len() {
            assert_abs_diff_eq!(adj.params()[(i, 0)], values[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn ranks_are_preserved() {
        let values = vec![9.0, -3.0, 4.0, 4.5, 0.0, 12.0];
        let joint = set(&values, 1, &vec![0.0; values.len()], 1);
        let marg = MarginalEstimate::from_sample(&[0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        let adj = marginal_adjust(&joint, &[marg]).unwrap();
        let before = stable_ranks(&values);
        let after: Vec<f64> = (0..values.len()).map(|i| adj.params()[(i, 0)]).collect();
        assert_eq!(before, stable_ranks(&after));
    }

    #[test]
    fn nonuniform_weights_are_rejected() {
        let joint = WeightedSampleSet::new(
            DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]),
            DMatrix::from_row_slice(3, 1, &[0.0; 3]),
            vec![1.0, 2.0, 3.0],
        )
        .unwrap();
        let marg = MarginalEstimate::from_sample(&[0.0, 1.0]).unwrap();
        assert!(marginal_adjust(&joint, &[marg]).is_err());
    }
}
