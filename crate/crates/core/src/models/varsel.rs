//! Robust Bayesian variable selection. The parameter is a binary inclusion
//! vector gamma over covariates (intercept always included), with a
//! beta-binomial prior on the number of active covariates, Zellner's g-prior
//! on the coefficients and an inverse-gamma prior on the noise variance.
//! The marginal likelihood over gamma is available in closed form, which
//! gives an exact enumeration oracle; the ABC route conditions on robust
//! partial t-statistics instead of the full data, trading a little
//! efficiency for insensitivity to outliers.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::robust::{huber_fit, ols_fit, HUBER_TUNING};
use crate::rng::SeededRng;
use crate::table::SimulatorModel;
use crate::types::{SummaryMap, SummaryVector};

/// Hyperparameters of the variable-selection prior.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VarselHyper {
    /// Beta-binomial shape for inclusion.
    pub a: f64,
    pub b: f64,
    /// Inverse-gamma shape and rate for the noise variance.
    pub a_sigma: f64,
    pub b_sigma: f64,
}

impl Default for VarselHyper {
    fn default() -> Self {
        VarselHyper {
            a: 2.0,
            b: 10.0,
            a_sigma: 5.0,
            b_sigma: 5.0 * 200.0 * 200.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct VarselModel {
    /// n x (covariates + 1); first column ones, covariates standardized.
    design: DMatrix<f64>,
    response: DVector<f64>,
    /// Reduced-model covariate indices (0-based), sorted.
    reduced: Vec<usize>,
    hyper: VarselHyper,
    /// How many robust fits fell back to least squares (IRLS hit its
    /// iteration cap); shared across clones so parallel simulation keeps
    /// one tally.
    irls_fallbacks: Arc<AtomicU64>,
}

fn ln_beta(x: f64, y: f64) -> f64 {
    libm::lgamma(x) + libm::lgamma(y) - libm::lgamma(x + y)
}

/// Standardizes covariate columns to mean zero, sd one.
fn standardize(covariates: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = covariates.nrows();
    let mut out = covariates.clone();
    for j in 0..covariates.ncols() {
        let col = covariates.column(j);
        let mean = col.mean();
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
        if var <= 0.0 {
            return Err(Error::DegenerateSample(format!(
                "covariate {} is constant and cannot be standardized",
                j + 1
            )));
        }
        let sd = var.sqrt();
        for i in 0..n {
            out[(i, j)] = (covariates[(i, j)] - mean) / sd;
        }
    }
    Ok(out)
}

impl VarselModel {
    /// Builds the model from raw covariates (standardized internally) and a
    /// response. `reduced` lists the covariates whose reduced-model
    /// t-statistics join the summary vector.
    pub fn new(
        covariates: &DMatrix<f64>,
        response: DVector<f64>,
        reduced: Vec<usize>,
        hyper: VarselHyper,
    ) -> Result<Self> {
        let n = covariates.nrows();
        let k = covariates.ncols();
        if n <= k + 1 {
            return Err(Error::invalid(format!(
                "need more observations ({n}) than covariates + intercept ({})",
                k + 1
            )));
        }
        if response.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: response.len(),
            });
        }
        let standardized = standardize(covariates)?;
        let mut design = DMatrix::zeros(n, k + 1);
        for i in 0..n {
            design[(i, 0)] = 1.0;
            for j in 0..k {
                design[(i, j + 1)] = standardized[(i, j)];
            }
        }
        Self::from_design(design, response, reduced, hyper)
    }

    /// Builds the model from an already prepared design matrix (first
    /// column ones). No standardization is applied.
    pub fn from_design(
        design: DMatrix<f64>,
        response: DVector<f64>,
        mut reduced: Vec<usize>,
        hyper: VarselHyper,
    ) -> Result<Self> {
        let n = design.nrows();
        let k = design.ncols() - 1;
        if design.column(0).iter().any(|v| *v != 1.0) {
            return Err(Error::invalid("first design column must be all ones"));
        }
        if response.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: response.len(),
            });
        }
        reduced.sort_unstable();
        reduced.dedup();
        if reduced.iter().any(|&g| g >= k) {
            return Err(Error::invalid("reduced-model index out of range"));
        }
        Ok(VarselModel {
            design,
            response,
            reduced,
            hyper,
            irls_fallbacks: Arc::new(AtomicU64::new(0)),
        })
    }

    pub fn observations(&self) -> usize {
        self.design.nrows()
    }

    pub fn covariates(&self) -> usize {
        self.design.ncols() - 1
    }

    pub fn reduced_set(&self) -> &[usize] {
        &self.reduced
    }

    pub fn hyper(&self) -> &VarselHyper {
        &self.hyper
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.response
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    /// Same design, different response (used for outlier variants).
    pub fn with_response(&self, response: DVector<f64>) -> Result<Self> {
        if response.len() != self.observations() {
            return Err(Error::DimensionMismatch {
                expected: self.observations(),
                got: response.len(),
            });
        }
        let mut m = self.clone();
        m.response = response;
        Ok(m)
    }

    /// Replaces the reduced-model set.
    pub fn with_reduced(&self, reduced: Vec<usize>) -> Result<Self> {
        Self::from_design(
            self.design.clone(),
            self.response.clone(),
            reduced,
            self.hyper,
        )
    }

    fn design_for(&self, gamma: &[u8]) -> Result<DMatrix<f64>> {
        let k = self.covariates();
        if gamma.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: gamma.len(),
            });
        }
        if gamma.iter().any(|g| *g > 1) {
            return Err(Error::invalid("indicator vector must be binary"));
        }
        let cols: Vec<usize> = std::iter::once(0)
            .chain(gamma.iter().enumerate().filter_map(|(j, &g)| (g == 1).then_some(j + 1)))
            .collect();
        Ok(self.design.select_columns(cols.iter()))
    }

    /// Robust partial t-statistics: the full-model statistic for every
    /// covariate, then the reduced-model statistic for each covariate in
    /// the reduced set. Falls back to least-squares t-statistics when IRLS
    /// fails to converge (tallied via [`VarselModel::irls_fallback_count`]).
    pub fn robust_summaries(&self, response: &DVector<f64>) -> Result<DVector<f64>> {
        let k = self.covariates();
        let fit_or_fallback = |design: &DMatrix<f64>| -> Result<crate::robust::RobustFit> {
            match huber_fit(design, response, HUBER_TUNING) {
                Ok(fit) if fit.converged => Ok(fit),
                Ok(_) => {
                    self.irls_fallbacks.fetch_add(1, Ordering::Relaxed);
                    ols_fit(design, response)
                }
                Err(e) => Err(e),
            }
        };
        let full = fit_or_fallback(&self.design)?;
        let mut out = DVector::zeros(k + self.reduced.len());
        for j in 0..k {
            out[j] = full.t_statistics[j + 1];
        }
        if !self.reduced.is_empty() {
            let cols: Vec<usize> = std::iter::once(0)
                .chain(self.reduced.iter().map(|&g| g + 1))
                .collect();
            let reduced_design = self.design.select_columns(cols.iter());
            let reduced_fit = fit_or_fallback(&reduced_design)?;
            for (pos, _) in self.reduced.iter().enumerate() {
                out[k + pos] = reduced_fit.t_statistics[pos + 1];
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateSample("non-finite t-statistic".into()));
        }
        Ok(out)
    }

    /// Number of robust fits that hit the IRLS iteration cap and fell back
    /// to least squares.
    pub fn irls_fallback_count(&self) -> u64 {
        self.irls_fallbacks.load(Ordering::Relaxed)
    }

    /// Summary statistics of the observed response.
    pub fn observed_summaries(&self) -> Result<SummaryVector> {
        SummaryVector::from_column(self.robust_summaries(&self.response)?)
    }

    /// Returns a copy of the response with the given row's residual (from
    /// the robust full-model fit) inflated by `factor`.
    pub fn inflate_outlier(&self, row: usize, factor: f64) -> Result<DVector<f64>> {
        if row >= self.observations() {
            return Err(Error::invalid(format!("row {row} out of range")));
        }
        let fit = huber_fit(&self.design, &self.response, HUBER_TUNING)?;
        let fitted: f64 = (0..self.design.ncols())
            .map(|j| self.design[(row, j)] * fit.coefficients[j])
            .sum();
        let mut y = self.response.clone();
        y[row] = fitted + factor * (self.response[row] - fitted);
        Ok(y)
    }

    /// Log beta-binomial prior mass of one configuration.
    pub fn log_prior_mass(&self, gamma: &[u8]) -> Result<f64> {
        let k = self.covariates();
        if gamma.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: gamma.len(),
            });
        }
        let active = gamma.iter().filter(|g| **g == 1).count() as f64;
        Ok(
            ln_beta(self.hyper.a + active, self.hyper.b + k as f64 - active)
                - ln_beta(self.hyper.a, self.hyper.b),
        )
    }

    /// Closed-form log marginal likelihood (up to a gamma-independent
    /// constant):
    /// -q/2 ln(n+1) - (a_sigma + n/2) ln(2 b_sigma + y'y - n/(n+1) y'P y)
    /// with P the projection onto the span of X_gamma and q its column
    /// count. The projection is computed by rank-revealing orthogonalization
    /// so degenerate columns contribute nothing to the fit (while still
    /// counting toward the dimension penalty).
    pub fn exact_log_likelihood(&self, gamma: &[u8]) -> Result<f64> {
        let x = self.design_for(gamma)?;
        let y = &self.response;
        let n = self.observations() as f64;
        let q_gamma = x.ncols() as f64;
        let proj = projection_norm2(&x, y);
        let yty = y.norm_squared();
        let inner = 2.0 * self.hyper.b_sigma + yty - n / (n + 1.0) * proj;
        if !(inner > 0.0) {
            return Err(Error::invalid("marginal-likelihood kernel is not positive"));
        }
        Ok(-0.5 * q_gamma * (n + 1.0).ln() - (self.hyper.a_sigma + 0.5 * n) * inner.ln())
    }

    /// Unnormalized log posterior mass: marginal likelihood plus prior.
    pub fn exact_log_marginal(&self, gamma: &[u8]) -> Result<f64> {
        Ok(self.exact_log_likelihood(gamma)? + self.log_prior_mass(gamma)?)
    }

    /// Scores every configuration, normalizes with log-sum-exp and sorts
    /// descending (ties broken lexicographically).
    pub fn exact_enumerate(&self) -> Result<Vec<ExactModel>> {
        let k = self.covariates();
        if k > 20 {
            return Err(Error::invalid(format!(
                "exhaustive enumeration supports up to 20 covariates, got {k}"
            )));
        }
        let gammas = crate::discrete::exhaustive_indicators(k)?;
        let mut scored: Vec<ExactModel> = gammas
            .into_iter()
            .map(|gamma| {
                let log_posterior = self.exact_log_marginal(&gamma)?;
                Ok(ExactModel {
                    gamma,
                    log_posterior,
                    probability: 0.0,
                })
            })
            .collect::<Result<_>>()?;
        let max = scored
            .iter()
            .map(|m| m.log_posterior)
            .fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = scored.iter().map(|m| (m.log_posterior - max).exp()).sum();
        for m in &mut scored {
            m.probability = (m.log_posterior - max).exp() / total;
        }
        scored.sort_by(|a, b| {
            b.log_posterior
                .total_cmp(&a.log_posterior)
                .then_with(|| a.gamma.cmp(&b.gamma))
        });
        Ok(scored)
    }
}

/// ||Q' y||^2 for an orthonormal basis Q of the columns of `x`
/// (rank-revealing modified Gram-Schmidt).
fn projection_norm2(x: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let mut cols: Vec<DVector<f64>> = (0..x.ncols()).map(|j| x.column(j).into_owned()).collect();
    let max_norm = cols.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let tol = 1e-10 * max_norm;
    let mut total = 0.0;
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for col in cols.iter_mut() {
        for q in &basis {
            let proj = q.dot(col);
            *col -= q * proj;
        }
        // second orthogonalization pass for stability
        for q in &basis {
            let proj = q.dot(col);
            *col -= q * proj;
        }
        let norm = col.norm();
        if norm > tol {
            let q = &*col / norm;
            let c = q.dot(y);
            total += c * c;
            basis.push(q);
        }
    }
    total
}

/// One exactly scored configuration.
#[derive(Clone, Debug)]
pub struct ExactModel {
    pub gamma: Vec<u8>,
    pub log_posterior: f64,
    pub probability: f64,
}

impl SimulatorModel for VarselModel {
    fn parameter_dim(&self) -> usize {
        self.covariates()
    }

    fn summary_dim(&self) -> usize {
        self.covariates() + self.reduced.len()
    }

    fn model_id(&self) -> String {
        format!(
            "varsel(n={},k={},G={:?},a={},b={},a_sigma={},b_sigma={})",
            self.observations(),
            self.covariates(),
            self.reduced,
            self.hyper.a,
            self.hyper.b,
            self.hyper.a_sigma,
            self.hyper.b_sigma
        )
    }

    fn sample_prior(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        use rand::Rng;
        let beta = Beta::new(self.hyper.a, self.hyper.b).expect("valid beta shapes");
        let p_inclusion: f64 = beta.sample(rng);
        DVector::from_fn(self.covariates(), |_, _| {
            if rng.random::<f64>() < p_inclusion {
                1.0
            } else {
                0.0
            }
        })
    }

    fn log_prior_density(&self, theta: &DVector<f64>) -> f64 {
        let gamma: Vec<u8> = theta.iter().map(|v| (*v != 0.0) as u8).collect();
        self.log_prior_mass(&gamma).unwrap_or(f64::NEG_INFINITY)
    }

    fn simulate_summaries(
        &self,
        theta: &DVector<f64>,
        rng: &mut ChaCha8Rng,
    ) -> Result<DVector<f64>> {
        let gamma: Vec<u8> = theta
            .iter()
            .map(|v| {
                if *v == 0.0 {
                    Ok(0)
                } else if *v == 1.0 {
                    Ok(1)
                } else {
                    Err(Error::invalid("indicator parameters must be 0 or 1"))
                }
            })
            .collect::<Result<_>>()?;
        let x = self.design_for(&gamma)?;
        let n = self.observations();
        let q = x.ncols();

        // sigma^2 ~ InverseGamma(a_sigma, b_sigma) via a Gamma reciprocal.
        let gamma_dist = Gamma::new(self.hyper.a_sigma, 1.0 / self.hyper.b_sigma)
            .map_err(|e| Error::invalid(format!("gamma setup failed: {e}")))?;
        let sigma2 = 1.0 / gamma_dist.sample(rng).max(f64::MIN_POSITIVE);

        // beta_gamma ~ N(0, n sigma^2 (X'X)^-1).
        let xtx = x.transpose() * &x;
        let chol = Cholesky::new(xtx).ok_or_else(|| {
            Error::RankDeficient("X_gamma has numerically dependent columns".into())
        })?;
        let eps = DVector::from_fn(q, |_, _| StandardNormal.sample(rng));
        // Solve L' b = eps so that b ~ N(0, (X'X)^-1).
        let mut beta = eps;
        chol.l_dirty().transpose().solve_upper_triangular_mut(&mut beta);
        beta *= (n as f64 * sigma2).sqrt();

        let noise = DVector::from_fn(n, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            sigma2.sqrt() * z
        });
        let y = &x * &beta + noise;
        self.robust_summaries(&y)
    }

    fn summary_map(&self) -> Result<SummaryMap> {
        let k = self.covariates();
        let univariate: Vec<Vec<usize>> = (0..k)
            .map(|i| {
                let mut subset = vec![i];
                if let Ok(pos) = self.reduced.binary_search(&i) {
                    subset.push(k + pos);
                }
                subset
            })
            .collect();
        SummaryMap::new(self.summary_dim(), univariate)
    }
}

/// Synthetic regression dataset: standard-normal covariates (optionally one
/// strongly collinear pair), response from the listed active covariates
/// (coefficients apply to the standardized columns) plus Gaussian noise.
pub fn synthetic_varsel_dataset(
    covariates: usize,
    observations: usize,
    active: &[(usize, f64)],
    collinear: Option<(usize, usize, f64)>,
    noise_sd: f64,
    rng: SeededRng,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if active.iter().any(|&(j, _)| j >= covariates) {
        return Err(Error::invalid("active covariate index out of range"));
    }
    let mut r = rng.rng();
    let mut x = DMatrix::from_fn(observations, covariates, |_, _| StandardNormal.sample(&mut r));
    if let Some((a, b, corr)) = collinear {
        if a >= covariates || b >= covariates || a == b || corr.abs() >= 1.0 {
            return Err(Error::invalid("collinear pair must be two distinct in-range covariates with |corr| < 1"));
        }
        for i in 0..observations {
            x[(i, b)] = corr * x[(i, a)] + (1.0 - corr * corr).sqrt() * x[(i, b)];
        }
    }
    let standardized = standardize(&x)?;
    let y = DVector::from_fn(observations, |i, _| {
        let signal: f64 = active
            .iter()
            .map(|&(j, beta)| beta * standardized[(i, j)])
            .sum();
        let z: f64 = StandardNormal.sample(&mut r);
        signal + noise_sd * z
    });
    Ok((x, y))
}
