//! Latent-Gaussian copula over binary indicator parameters.
//!
//! Each indicator gamma_i is modelled as I(Z_i > t_i) for a standard
//! Gaussian vector Z ~ N(0, Lambda). Thresholds come from per-indicator ABC
//! frequencies; each latent correlation is the root of an orthant-probability
//! equation matched to the pairwise ABC frequency. Joint model probabilities
//! are rectangle probabilities of Z, evaluated by randomized quasi-Monte
//! Carlo with a reported error.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::copula::{assemble_correlation, CorrelationMatrix};
use crate::dist::DistanceSpec;
use crate::error::{Error, Result};
use crate::norm;
use crate::rng::{labels, SeededRng};
use crate::table::{abc_select, ReferenceTable};
use crate::types::{all_pairs, SummaryMap, SummaryVector};

/// P(Z_i > t_i, Z_j > t_j) for standard bivariate normal with correlation
/// `rho`, by adaptive quadrature of the single-integral (arcsine
/// substitution) form; absolute error well below 1e-7.
pub fn bvn_upper_orthant(t_i: f64, t_j: f64, rho: f64) -> f64 {
    let rho = rho.clamp(-1.0, 1.0);
    let tail_i = norm::sf(t_i);
    let tail_j = norm::sf(t_j);
    if rho == 0.0 {
        return tail_i * tail_j;
    }
    if rho == 1.0 {
        return tail_i.min(tail_j);
    }
    if rho == -1.0 {
        return (tail_i + tail_j - 1.0).max(0.0);
    }
    let integrand = |u: f64| -> f64 {
        let s = u.sin();
        let c2 = (u.cos()) * (u.cos());
        if c2 <= 0.0 {
            return 0.0;
        }
        let num = t_i * t_i + t_j * t_j - 2.0 * t_i * t_j * s;
        (-num / (2.0 * c2)).exp()
    };
    let upper = rho.asin();
    let integral = adaptive_simpson(&integrand, 0.0, upper, 1e-11, 48);
    (tail_i * tail_j + integral / (2.0 * std::f64::consts::PI)).clamp(0.0, 1.0)
}

fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let c = 0.5 * (a + b);
    let fa = f(a);
    let fb = f(b);
    let fc = f(c);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fc + fb);
    simpson_step(f, a, b, fa, fb, fc, whole, tol, depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
    fc: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let c = 0.5 * (a + b);
    let d = 0.5 * (a + c);
    let e = 0.5 * (c + b);
    let fd = f(d);
    let fe = f(e);
    let left = (c - a) / 6.0 * (fa + 4.0 * fd + fc);
    let right = (b - c) / 6.0 * (fc + 4.0 * fe + fb);
    if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
        left + right + (left + right - whole) / 15.0
    } else {
        simpson_step(f, a, c, fa, fc, fd, left, tol / 2.0, depth - 1)
            + simpson_step(f, c, b, fc, fb, fe, right, tol / 2.0, depth - 1)
    }
}

/// Result of inverting the orthant-probability equation.
#[derive(Clone, Copy, Debug)]
pub struct SolvedLambda {
    pub rho: f64,
    /// True when `joint11` fell outside the attainable range and was clamped
    /// to the nearest Frechet bound.
    pub clamped: bool,
}

/// Solves bvn_upper_orthant(Phi^-1(p_i), Phi^-1(p_j), rho) = joint11 for rho
/// by bisection; the orthant probability is nondecreasing in rho, so the
/// root is unique.
pub fn solve_lambda_ij(p_i: f64, p_j: f64, joint11: f64) -> Result<SolvedLambda> {
    if !(p_i > 0.0 && p_i < 1.0 && p_j > 0.0 && p_j < 1.0) {
        return Err(Error::invalid(format!(
            "marginal zero-probabilities must lie strictly inside (0, 1), got ({p_i}, {p_j})"
        )));
    }
    if !(0.0..=1.0).contains(&joint11) {
        return Err(Error::invalid(format!("joint probability {joint11} outside [0, 1]")));
    }
    let t_i = norm::quantile(p_i);
    let t_j = norm::quantile(p_j);
    let lo_bound = bvn_upper_orthant(t_i, t_j, -1.0);
    let hi_bound = bvn_upper_orthant(t_i, t_j, 1.0);
    let mut target = joint11;
    let mut clamped = false;
    let margin = 1e-9;
    if target < lo_bound + margin {
        target = lo_bound + margin;
        clamped = joint11 < lo_bound;
    }
    if target > hi_bound - margin {
        target = hi_bound - margin;
        clamped = clamped || joint11 > hi_bound;
    }

    let mut lo = -1.0 + 1e-9;
    let mut hi = 1.0 - 1e-9;
    let mut mid = 0.0;
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let val = bvn_upper_orthant(t_i, t_j, mid);
        if (val - target).abs() <= 1e-8 || (hi - lo) < 1e-13 {
            return Ok(SolvedLambda { rho: mid, clamped });
        }
        if val < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(SolvedLambda { rho: mid, clamped })
}

/// Per-indicator zero-probabilities plus the latent correlation matrix.
#[derive(Clone, Debug)]
pub struct DiscreteCopulaPosterior {
    probs_zero: Vec<f64>,
    thresholds: Vec<f64>,
    correlation: CorrelationMatrix,
    clamped_pairs: Vec<(usize, usize)>,
}

impl DiscreteCopulaPosterior {
    pub fn new(probs_zero: Vec<f64>, correlation: CorrelationMatrix) -> Result<Self> {
        if probs_zero.len() != correlation.dim() {
            return Err(Error::DimensionMismatch {
                expected: correlation.dim(),
                got: probs_zero.len(),
            });
        }
        if probs_zero.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            return Err(Error::invalid("zero-probabilities must lie strictly inside (0, 1)"));
        }
        let thresholds = probs_zero.iter().map(|&p| norm::quantile(p)).collect();
        Ok(DiscreteCopulaPosterior {
            probs_zero,
            thresholds,
            correlation,
            clamped_pairs: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.probs_zero.len()
    }

    /// Estimated P(gamma_i = 0 | s_(i)).
    pub fn prob_zero(&self, i: usize) -> f64 {
        self.probs_zero[i]
    }

    pub fn threshold(&self, i: usize) -> f64 {
        self.thresholds[i]
    }

    pub fn correlation(&self) -> &CorrelationMatrix {
        &self.correlation
    }

    /// Pairs whose joint frequency violated the Frechet bounds and was
    /// clamped during fitting.
    pub fn clamped_pairs(&self) -> &[(usize, usize)] {
        &self.clamped_pairs
    }

    /// Log joint probability of the indicator vector under the latent
    /// Gaussian, with a Monte Carlo standard error on the log scale.
    /// Deterministic given the seed. An identity correlation matrix takes
    /// the exact independence fast path (zero error).
    pub fn model_log_probability(&self, gamma: &[u8], rng: SeededRng) -> Result<(f64, f64)> {
        let p = self.dim();
        if gamma.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: gamma.len(),
            });
        }
        if gamma.iter().any(|g| *g > 1) {
            return Err(Error::invalid("indicator vector must be binary"));
        }

        let is_identity = (0..p).all(|i| {
            (0..p).all(|j| i == j || self.correlation.entry(i, j) == 0.0)
        });
        if is_identity {
            let logp = gamma
                .iter()
                .enumerate()
                .map(|(i, &g)| {
                    if g == 1 {
                        (1.0 - self.probs_zero[i]).ln()
                    } else {
                        self.probs_zero[i].ln()
                    }
                })
                .sum();
            return Ok((logp, 0.0));
        }

        // Rectangle bounds: gamma_i = 1 means Z_i in (t_i, inf), else
        // (-inf, t_i].
        let lower: Vec<f64> = (0..p)
            .map(|i| if gamma[i] == 1 { self.thresholds[i] } else { f64::NEG_INFINITY })
            .collect();
        let upper: Vec<f64> = (0..p)
            .map(|i| if gamma[i] == 1 { f64::INFINITY } else { self.thresholds[i] })
            .collect();

        let (prob, se) = genz_rectangle(
            self.correlation.cholesky_lower(),
            &lower,
            &upper,
            rng.child(labels::QMC),
        );
        if prob <= 0.0 {
            return Ok((f64::NEG_INFINITY, f64::INFINITY));
        }
        Ok((prob.ln(), se / prob))
    }

    /// Sorts candidate indicator vectors by their model probability,
    /// descending, ties broken lexicographically. Each candidate gets its
    /// own derived seed, so the ranking is deterministic and parallelizable.
    pub fn rank_models(&self, candidates: &[Vec<u8>], rng: SeededRng) -> Result<Vec<RankedModel>> {
        if candidates.is_empty() {
            return Err(Error::invalid("candidate set must be nonempty"));
        }
        let mut scored: Vec<RankedModel> = candidates
            .par_iter()
            .map(|gamma| {
                let mut code: u64 = 0;
                for (i, &g) in gamma.iter().enumerate() {
                    code |= (g as u64) << (i % 63);
                }
                let (log_prob, mc_se) =
                    self.model_log_probability(gamma, rng.child(code.wrapping_add(1)))?;
                Ok(RankedModel {
                    gamma: gamma.clone(),
                    log_prob,
                    mc_se,
                })
            })
            .collect::<Result<_>>()?;
        scored.sort_by(|a, b| {
            b.log_prob
                .total_cmp(&a.log_prob)
                .then_with(|| a.gamma.cmp(&b.gamma))
        });
        Ok(scored)
    }
}

/// One candidate model with its estimated log probability.
#[derive(Clone, Debug)]
pub struct RankedModel {
    pub gamma: Vec<u8>,
    pub log_prob: f64,
    pub mc_se: f64,
}

/// All 2^p indicator vectors (p <= 20).
pub fn exhaustive_indicators(p: usize) -> Result<Vec<Vec<u8>>> {
    if p == 0 || p > 20 {
        return Err(Error::invalid(format!(
            "exhaustive enumeration supports 1..=20 indicators, got {p}"
        )));
    }
    Ok((0u32..(1 << p))
        .map(|code| (0..p).map(|i| ((code >> i) & 1) as u8).collect())
        .collect())
}

const QMC_PRIMES: [f64; 25] = [
    2.0, 3.0, 5.0, 7.0, 11.0, 13.0, 17.0, 19.0, 23.0, 29.0, 31.0, 37.0, 41.0, 43.0, 47.0, 53.0,
    59.0, 61.0, 67.0, 71.0, 73.0, 79.0, 83.0, 89.0, 97.0,
];

/// Genz sequential transform estimate of P(lower < Z <= upper) for
/// Z ~ N(0, L L') using a Richtmyer lattice with random shifts. Returns the
/// estimate and its standard error across shifts.
fn genz_rectangle(
    chol_lower: &DMatrix<f64>,
    lower: &[f64],
    upper: &[f64],
    rng: SeededRng,
) -> (f64, f64) {
    use rand::Rng;
    let p = lower.len();
    debug_assert!(p >= 1 && p - 1 < QMC_PRIMES.len() + 1);
    let generators: Vec<f64> = (0..p.saturating_sub(1))
        .map(|k| QMC_PRIMES[k % QMC_PRIMES.len()].sqrt().fract())
        .collect();
    let shifts = 10usize;
    let mut r = rng.rng();
    let shift_rows: Vec<Vec<f64>> = (0..shifts)
        .map(|_| (0..p.saturating_sub(1)).map(|_| r.random::<f64>()).collect())
        .collect();

    let phi_bound = |v: f64, li: usize, partial: f64| -> f64 {
        if v == f64::NEG_INFINITY {
            0.0
        } else if v == f64::INFINITY {
            1.0
        } else {
            norm::cdf((v - partial) / chol_lower[(li, li)])
        }
    };

    let mut points = 512usize;
    let max_points = 16_384usize;
    loop {
        let mut shift_means = Vec::with_capacity(shifts);
        for shift in &shift_rows {
            let mut acc = 0.0;
            let mut w = vec![0.0; p.saturating_sub(1)];
            let mut y = vec![0.0; p.saturating_sub(1)];
            for k in 0..points {
                for (d, g) in generators.iter().enumerate() {
                    w[d] = ((k + 1) as f64 * g + shift[d]).fract();
                }
                // Sequential conditioning along the Cholesky factor.
                let mut f = 1.0;
                for i in 0..p {
                    let mut partial = 0.0;
                    for t in 0..i {
                        partial += chol_lower[(i, t)] * y[t];
                    }
                    let d_lo = phi_bound(lower[i], i, partial);
                    let d_hi = phi_bound(upper[i], i, partial);
                    let width = d_hi - d_lo;
                    if width <= 0.0 {
                        f = 0.0;
                        break;
                    }
                    f *= width;
                    if i + 1 < p {
                        let u = (d_lo + w[i] * width).clamp(1e-16, 1.0 - 1e-16);
                        y[i] = norm::quantile(u);
                    }
                }
                acc += f;
            }
            shift_means.push(acc / points as f64);
        }
        let mean = shift_means.iter().sum::<f64>() / shifts as f64;
        let var = shift_means
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / (shifts as f64 * (shifts - 1) as f64);
        let se = var.sqrt();
        if points >= max_points || (mean > 0.0 && se <= 0.01 * mean) {
            return (mean, se);
        }
        points *= 2;
    }
}

/// Fits the discrete copula: per-indicator and per-pair nearest-`n_keep`
/// selections (Euclidean distance on the declared subsets), frequency
/// estimates clamped away from 0 and 1 by half a count, and latent
/// correlations from the orthant-probability inversion.
pub fn fit_discrete_copula(
    table: &ReferenceTable,
    s_obs: &SummaryVector,
    smap: &SummaryMap,
    n_keep: usize,
) -> Result<DiscreteCopulaPosterior> {
    let p = table.parameter_dim();
    if smap.parameter_dim() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: smap.parameter_dim(),
        });
    }
    if n_keep < 2 || n_keep > table.len() {
        return Err(Error::invalid(format!(
            "n_keep must lie in [2, {}], got {n_keep}",
            table.len()
        )));
    }
    if table
        .params()
        .iter()
        .any(|v| *v != 0.0 && *v != 1.0)
    {
        return Err(Error::invalid("discrete fitting requires binary parameter columns"));
    }
    let spec = DistanceSpec::Euclidean;
    let quantile = n_keep as f64 / table.len() as f64;
    let clamp_lo = 1.0 / (2.0 * n_keep as f64);

    let probs_zero: Vec<f64> = (0..p)
        .into_par_iter()
        .map(|i| {
            let subset = smap.univariate(i)?.to_vec();
            let kept = abc_select(table, s_obs, &subset, quantile, &spec)?;
            let freq0 = kept
                .params()
                .column(i)
                .iter()
                .filter(|v| **v == 0.0)
                .count() as f64
                / kept.len() as f64;
            Ok(freq0.clamp(clamp_lo, 1.0 - clamp_lo))
        })
        .collect::<Result<_>>()?;

    let pair_list = all_pairs(p);
    let solved: Vec<(usize, usize, SolvedLambda)> = pair_list
        .par_iter()
        .map(|&(i, j)| {
            let subset = smap.pairwise(i, j)?;
            let kept = abc_select(table, s_obs, &subset, quantile, &spec)?;
            let joint11 = (0..kept.len())
                .filter(|&r| kept.params()[(r, i)] == 1.0 && kept.params()[(r, j)] == 1.0)
                .count() as f64
                / kept.len() as f64;
            let s = solve_lambda_ij(probs_zero[i], probs_zero[j], joint11)?;
            Ok((i, j, s))
        })
        .collect::<Result<_>>()?;

    let lambdas: Vec<(usize, usize, f64)> =
        solved.iter().map(|&(i, j, s)| (i, j, s.rho)).collect();
    let clamped_pairs: Vec<(usize, usize)> = solved
        .iter()
        .filter(|(_, _, s)| s.clamped)
        .map(|&(i, j, _)| (i, j))
        .collect();

    let correlation = assemble_correlation(p, &lambdas)?;
    let mut post = DiscreteCopulaPosterior::new(probs_zero, correlation)?;
    post.clamped_pairs = clamped_pairs;
    Ok(post)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use rand::Rng;

    #[test]
    fn orthant_independent_quarter() {
        assert_abs_diff_eq!(bvn_upper_orthant(0.0, 0.0, 0.0), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn orthant_arcsine_identity() {
        // rho = 0.5 at zero thresholds gives exactly 1/3.
        assert_abs_diff_eq!(
            bvn_upper_orthant(0.0, 0.0, 0.5),
            1.0 / 3.0,
            epsilon = 1e-9
        );
        for rho in [-0.9, -0.5, 0.0, 0.5, 0.9] {
            let expected = 0.25 + (rho as f64).asin() / (2.0 * std::f64::consts::PI);
            assert_abs_diff_eq!(bvn_upper_orthant(0.0, 0.0, rho), expected, epsilon = 1e-7);
        }
    }

    #[test]
    fn orthant_comonotone_collapse() {
        for t in [-1.5, 0.0, 0.7] {
            assert_abs_diff_eq!(bvn_upper_orthant(t, t, 1.0), norm::sf(t), epsilon = 1e-12);
        }
        assert_abs_diff_eq!(
            bvn_upper_orthant(-0.3, 0.8, 1.0),
            norm::sf(0.8),
            epsilon = 1e-12
        );
    }

    #[test]
    fn orthant_nondecreasing_in_rho() {
        let (ti, tj) = (0.4, -0.9);
        let mut last = 0.0;
        for k in 0..=40 {
            let rho = -1.0 + 2.0 * k as f64 / 40.0;
            let v = bvn_upper_orthant(ti, tj, rho);
            assert!(v >= last - 1e-9, "decreased at rho={rho}");
            last = v;
        }
    }

    #[test]
    fn orthant_matches_symmetric_argument_swap() {
        for &(a, b, r) in &[(0.3, -1.2, 0.6), (2.0, 0.1, -0.8)] {
            assert_abs_diff_eq!(
                bvn_upper_orthant(a, b, r),
                bvn_upper_orthant(b, a, r),
                epsilon = 1e-10
            );
        }
    }

    #[test]
    fn solve_independence() {
        let s = solve_lambda_ij(0.5, 0.5, 0.25).unwrap();
        assert_abs_diff_eq!(s.rho, 0.0, epsilon = 1e-6);
        assert!(!s.clamped);
    }

    #[test]
    fn solve_arcsine_point() {
        let s = solve_lambda_ij(0.5, 0.5, 1.0 / 3.0).unwrap();
        assert_abs_diff_eq!(s.rho, 0.5, epsilon = 1e-6);
    }

    #[test]
    fn solve_product_rule_gives_zero() {
        for &(pi, pj) in &[(0.3, 0.8), (0.5, 0.5), (0.9, 0.2)] {
            let joint = (1.0 - pi) * (1.0 - pj);
            let s = solve_lambda_ij(pi, pj, joint).unwrap();
            assert_abs_diff_eq!(s.rho, 0.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn solve_round_trips_rho() {
        for rho in [-0.9, -0.5, 0.0, 0.5, 0.9] {
            let (pi, pj) = (0.35, 0.7);
            let joint = bvn_upper_orthant(norm::quantile(pi), norm::quantile(pj), rho);
            let s = solve_lambda_ij(pi, pj, joint).unwrap();
            assert_abs_diff_eq!(s.rho, rho, epsilon = 1e-6);
        }
    }

    #[test]
    fn solve_clamps_unattainable_joint() {
        let s = solve_lambda_ij(0.5, 0.5, 0.9).unwrap();
        assert!(s.clamped);
        assert!(s.rho > 0.999);
        let s = solve_lambda_ij(0.5, 0.5, 0.0).unwrap();
        // 0.0 equals the Frechet lower bound at rho = -1 here.
        assert!(s.rho < -0.999);
    }

    fn make_posterior(p0: Vec<f64>, rho: f64) -> DiscreteCopulaPosterior {
        let p = p0.len();
        let mut m = DMatrix::identity(p, p);
        for i in 0..p {
            for j in 0..p {
                if i != j {
                    m[(i, j)] = rho;
                }
            }
        }
        DiscreteCopulaPosterior::new(
            p0,
            crate::copula::CorrelationMatrix::from_matrix(m).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn identity_fast_path_is_exact() {
        let post = make_posterior(vec![0.3, 0.6, 0.8], 0.0);
        let (logp, se) = post
            .model_log_probability(&[1, 0, 1], SeededRng::new(1))
            .unwrap();
        let expected = (1.0f64 - 0.3).ln() + 0.6f64.ln() + (1.0f64 - 0.8).ln();
        assert_eq!(se, 0.0);
        assert_abs_diff_eq!(logp, expected, epsilon = 1e-14);
    }

    #[test]
    fn two_dim_probabilities_sum_to_one() {
        let post = make_posterior(vec![0.4, 0.65], 0.55);
        let mut total = 0.0;
        let mut se_total = 0.0;
        for gamma in exhaustive_indicators(2).unwrap() {
            let (logp, rel_se) = post
                .model_log_probability(&gamma, SeededRng::new(9))
                .unwrap();
            let p = logp.exp();
            total += p;
            se_total += (rel_se * p).powi(2);
        }
        let se_total = se_total.sqrt();
        assert!(
            (total - 1.0).abs() <= (3.0 * se_total).max(1e-4),
            "sum {total}, se {se_total}"
        );
    }

    #[test]
    fn two_dim_joint_one_one_matches_orthant() {
        let post = make_posterior(vec![0.45, 0.7], 0.4);
        let (logp, _) = post
            .model_log_probability(&[1, 1], SeededRng::new(4))
            .unwrap();
        let expected = bvn_upper_orthant(norm::quantile(0.45), norm::quantile(0.7), 0.4);
        assert_abs_diff_eq!(logp.exp(), expected, epsilon = 3e-4);
    }

    #[test]
    fn ranking_matches_independence_product() {
        let post = make_posterior(vec![0.3, 0.8, 0.55], 0.0);
        let candidates = exhaustive_indicators(3).unwrap();
        let ranked = post.rank_models(&candidates, SeededRng::new(2)).unwrap();
        let brute = |g: &[u8]| -> f64 {
            g.iter()
                .enumerate()
                .map(|(i, &b)| {
                    if b == 1 {
                        1.0 - post.prob_zero(i)
                    } else {
                        post.prob_zero(i)
                    }
                })
                .product::<f64>()
        };
        let mut expected: Vec<(Vec<u8>, f64)> =
            candidates.iter().map(|g| (g.clone(), brute(g))).collect();
        expected.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        for (r, (g, _)) in ranked.iter().zip(&expected) {
            assert_eq!(&r.gamma, g);
        }
    }

    #[test]
    fn ranking_is_deterministic() {
        let post = make_posterior(vec![0.4, 0.6, 0.5, 0.3], 0.25);
        let candidates = exhaustive_indicators(4).unwrap();
        let a = post.rank_models(&candidates, SeededRng::new(7)).unwrap();
        let b = post.rank_models(&candidates, SeededRng::new(7)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.gamma, y.gamma);
            assert_eq!(x.log_prob.to_bits(), y.log_prob.to_bits());
        }
    }

    #[test]
    fn independence_null_fit_gives_small_lambdas() {
        // gamma drawn Bernoulli(0.5) independently of the summaries: fitted
        // latent correlations stay near zero. Each lambda carries roughly
        // 0.14 Monte Carlo sd at n_keep = 500 (frequency noise from both the
        // univariate and pairwise selections), so this is a seeded check.
        let n = 100_000;
        let p = 3;
        let mut rng = SeededRng::new(41).rng();
        let mut params = DMatrix::zeros(n, p);
        let mut sums = DMatrix::zeros(n, p);
        for i in 0..n {
            for j in 0..p {
                params[(i, j)] = if rng.random::<bool>() { 1.0 } else { 0.0 };
                sums[(i, j)] = rng.random::<f64>();
            }
        }
        let table = ReferenceTable::from_parts(params, sums, vec![1.0; n], "null".into()).unwrap();
        let smap = SummaryMap::new(p, vec![vec![0], vec![1], vec![2]]).unwrap();
        let s_obs = SummaryVector::new(vec![0.5, 0.5, 0.5]).unwrap();
        let post = fit_discrete_copula(&table, &s_obs, &smap, 500).unwrap();
        for (i, j) in all_pairs(p) {
            let l = post.correlation().entry(i, j);
            assert!(l.abs() < 0.15, "lambda ({i},{j}) = {l}");
        }
    }

    #[test]
    fn comonotone_pair_hits_upper_bound() {
        let n = 5_000;
        let mut rng = SeededRng::new(3).rng();
        let mut params = DMatrix::zeros(n, 2);
        let mut sums = DMatrix::zeros(n, 2);
        for i in 0..n {
            let g = if rng.random::<bool>() { 1.0 } else { 0.0 };
            params[(i, 0)] = g;
            params[(i, 1)] = g;
            sums[(i, 0)] = rng.random::<f64>();
            sums[(i, 1)] = rng.random::<f64>();
        }
        let table =
            ReferenceTable::from_parts(params, sums, vec![1.0; n], "comonotone".into()).unwrap();
        let smap = SummaryMap::new(2, vec![vec![0], vec![1]]).unwrap();
        let s_obs = SummaryVector::new(vec![0.5, 0.5]).unwrap();
        let post = fit_discrete_copula(&table, &s_obs, &smap, 500).unwrap();
        assert!(
            post.correlation().entry(0, 1) > 0.9,
            "lambda = {}",
            post.correlation().entry(0, 1)
        );
    }

    #[test]
    fn non_binary_parameters_are_rejected() {
        let table = ReferenceTable::from_parts(
            DMatrix::from_row_slice(3, 1, &[0.0, 0.5, 1.0]),
            DMatrix::from_row_slice(3, 1, &[0.1, 0.2, 0.3]),
            vec![1.0; 3],
            "bad".into(),
        )
        .unwrap();
        let smap = SummaryMap::new(1, vec![vec![0]]).unwrap();
        let s_obs = SummaryVector::new(vec![0.0]).unwrap();
        assert!(fit_discrete_copula(&table, &s_obs, &smap, 2).is_err());
    }

    #[test]
    fn exhaustive_indicator_count() {
        assert_eq!(exhaustive_indicators(10).unwrap().len(), 1024);
        assert!(exhaustive_indicators(21).is_err());
    }
}
