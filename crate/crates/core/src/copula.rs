//! Meta-Gaussian (Gaussian-copula) posterior approximation.
//!
//! The joint density combines arbitrary continuous marginals g_i with a
//! correlation matrix on the normal-scores scale:
//!
//! ```text
//! g(theta) = |L|^(-1/2) exp{ 1/2 eta' (I - L^-1) eta } prod_i g_i(theta_i),
//! eta_i = Phi^-1(G_i(theta_i)).
//! ```
//!
//! The correlation matrix is assembled from pairwise normal-scores
//! correlations, each estimated from its own low-dimensional ABC selection,
//! which is what makes the construction insensitive to the full parameter
//! dimension.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::adjust::{adjust_column_to_marginal, regression_adjust, stable_ranks};
use crate::dist::DistanceSpec;
use crate::error::{Error, Result};
use crate::marginal::{Marginal, MarginalEstimate};
use crate::norm;
use crate::optim::nelder_mead;
use crate::rng::{labels, SeededRng};
use crate::table::{abc_select, ReferenceTable};
use crate::types::{all_pairs, ParameterVector, SummaryMap, SummaryVector, WeightedSampleSet};

/// Smallest eigenvalue tolerated in an assembled correlation matrix.
pub const EIGENVALUE_FLOOR: f64 = 1e-6;

/// Normal-scores transform: rank r (ties broken by input order) maps to
/// Phi^-1(r / (n + 1)).
pub fn normal_scores(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    stable_ranks(values)
        .into_iter()
        .map(|r| norm::quantile(r as f64 / (n + 1.0)))
        .collect()
}

/// Pearson correlation of the normal scores of the two columns.
pub fn pairwise_lambda(theta_i: &[f64], theta_j: &[f64]) -> Result<f64> {
    if theta_i.len() != theta_j.len() {
        return Err(Error::DimensionMismatch {
            expected: theta_i.len(),
            got: theta_j.len(),
        });
    }
    if theta_i.len() < 3 {
        return Err(Error::invalid("need at least three rows to estimate a correlation"));
    }
    let a = normal_scores(theta_i);
    let b = normal_scores(theta_j);
    correlation(&a, &b)
}

fn correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    let mut sab = 0.0;
    for (x, y) in a.iter().zip(b) {
        let dx = x - ma;
        let dy = y - mb;
        saa += dx * dx;
        sbb += dy * dy;
        sab += dx * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return Err(Error::DegenerateSample(
            "zero variance after the normal-scores transform".into(),
        ));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// What the positive-definiteness repair did, if anything.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RepairLog {
    pub fired: bool,
    /// Eigenvalue clip level actually used (escalates if one sweep is not
    /// enough after rescaling the diagonal).
    pub eigenvalue_floor: f64,
    /// Largest absolute entry change between input and repaired matrix.
    pub max_entry_change: f64,
    pub sweeps: u32,
}

impl RepairLog {
    fn untouched() -> Self {
        RepairLog {
            fired: false,
            eigenvalue_floor: EIGENVALUE_FLOOR,
            max_entry_change: 0.0,
            sweeps: 0,
        }
    }
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Clips eigenvalues at `floor` and rescales back to unit diagonal,
/// escalating the clip level until the result is comfortably positive
/// definite. Input must be symmetric with unit diagonal.
pub fn nearest_correlation(input: &DMatrix<f64>, floor: f64) -> (DMatrix<f64>, RepairLog) {
    let p = input.nrows();
    let mut current = symmetrize(input);
    let mut log = RepairLog {
        fired: false,
        eigenvalue_floor: floor,
        max_entry_change: 0.0,
        sweeps: 0,
    };
    let mut clip = floor;
    for _ in 0..100 {
        let eig = SymmetricEigen::new(current.clone());
        let min_eig = eig.eigenvalues.min();
        if min_eig >= floor * 0.999 && Cholesky::new(current.clone()).is_some() {
            break;
        }
        log.fired = true;
        log.sweeps += 1;
        log.eigenvalue_floor = clip;
        let clipped = DVector::from_fn(p, |i, _| eig.eigenvalues[i].max(clip));
        let mut rebuilt =
            &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
        let diag = rebuilt.diagonal();
        for i in 0..p {
            for j in 0..p {
                rebuilt[(i, j)] /= (diag[i] * diag[j]).sqrt();
            }
        }
        current = symmetrize(&rebuilt);
        for i in 0..p {
            current[(i, i)] = 1.0;
        }
        clip *= 2.0;
    }
    log.max_entry_change = (&current - input).amax();
    (current, log)
}

/// A validated correlation matrix with cached Cholesky factor, inverse and
/// log determinant.
#[derive(Clone, Debug)]
pub struct CorrelationMatrix {
    matrix: DMatrix<f64>,
    chol_lower: DMatrix<f64>,
    inverse: DMatrix<f64>,
    log_det: f64,
    repair: RepairLog,
}

impl CorrelationMatrix {
    /// Accepts a matrix that is already a valid correlation matrix;
    /// positive-definiteness below the eigenvalue floor is an error.
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        Self::validate_shape(&matrix)?;
        let eig = SymmetricEigen::new(matrix.clone());
        if eig.eigenvalues.min() < EIGENVALUE_FLOOR * 0.999 {
            return Err(Error::NotPositiveDefinite(format!(
                "smallest eigenvalue {} is below the floor {EIGENVALUE_FLOOR}",
                eig.eigenvalues.min()
            )));
        }
        Self::with_repair_log(matrix, RepairLog::untouched())
    }

    /// Repairs the matrix by eigenvalue clipping if needed, recording what
    /// was done.
    pub fn from_matrix_repaired(matrix: DMatrix<f64>) -> Result<Self> {
        Self::validate_shape(&matrix)?;
        let (repaired, log) = nearest_correlation(&matrix, EIGENVALUE_FLOOR);
        Self::with_repair_log(repaired, log)
    }

    fn with_repair_log(matrix: DMatrix<f64>, repair: RepairLog) -> Result<Self> {
        let chol = Cholesky::new(matrix.clone()).ok_or_else(|| {
            Error::NotPositiveDefinite("correlation matrix failed Cholesky".into())
        })?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let inverse = chol.inverse();
        Ok(CorrelationMatrix {
            matrix,
            chol_lower: chol.unpack(),
            inverse,
            log_det,
            repair,
        })
    }

    fn validate_shape(m: &DMatrix<f64>) -> Result<()> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::invalid("correlation matrix must be square and nonempty"));
        }
        for i in 0..m.nrows() {
            if (m[(i, i)] - 1.0).abs() > 1e-8 {
                return Err(Error::invalid(format!(
                    "diagonal entry {i} is {} (must be 1)",
                    m[(i, i)]
                )));
            }
            for j in 0..m.ncols() {
                let v = m[(i, j)];
                if !v.is_finite() || v.abs() > 1.0 + 1e-8 {
                    return Err(Error::invalid(format!(
                        "entry ({i}, {j}) = {v} is outside [-1, 1]"
                    )));
                }
                if (m[(i, j)] - m[(j, i)]).abs() > 1e-8 {
                    return Err(Error::invalid("correlation matrix is not symmetric"));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.matrix[(i, j)]
    }

    pub fn repair_log(&self) -> &RepairLog {
        &self.repair
    }

    pub fn cholesky_lower(&self) -> &DMatrix<f64> {
        &self.chol_lower
    }

    /// Principal submatrix as a correlation matrix (positive definiteness is
    /// inherited by eigenvalue interlacing).
    pub fn submatrix(&self, indices: &[usize]) -> Result<CorrelationMatrix> {
        for &i in indices {
            if i >= self.dim() {
                return Err(Error::invalid(format!("index {i} out of range")));
            }
        }
        let sub = self.matrix.select_rows(indices.iter()).select_columns(indices.iter());
        Self::with_repair_log(sub, self.repair)
    }
}

/// Combines pairwise estimates into a p-dimensional correlation matrix with
/// unit diagonal, repairing indefiniteness by eigenvalue clipping.
pub fn assemble_correlation(dim: usize, pairs: &[(usize, usize, f64)]) -> Result<CorrelationMatrix> {
    if dim == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    let mut seen = vec![false; dim * dim];
    let mut m = DMatrix::identity(dim, dim);
    for &(i, j, lambda) in pairs {
        if i == j || i >= dim || j >= dim {
            return Err(Error::invalid(format!("invalid pair ({i}, {j})")));
        }
        if !lambda.is_finite() || lambda.abs() > 1.0 {
            return Err(Error::invalid(format!(
                "pairwise correlation ({i}, {j}) = {lambda} is outside [-1, 1]"
            )));
        }
        m[(i, j)] = lambda;
        m[(j, i)] = lambda;
        seen[i * dim + j] = true;
        seen[j * dim + i] = true;
    }
    for (i, j) in all_pairs(dim) {
        if !seen[i * dim + j] {
            return Err(Error::MissingPair(i, j));
        }
    }
    CorrelationMatrix::from_matrix_repaired(m)
}

/// A joint distribution with the given marginals and a Gaussian copula.
#[derive(Clone, Debug)]
pub struct MetaGaussian<M: Marginal> {
    marginals: Vec<M>,
    correlation: CorrelationMatrix,
}

/// The fitted posterior approximation: nonparametric marginals plus the
/// assembled normal-scores correlation matrix.
pub type CopulaPosterior = MetaGaussian<MarginalEstimate>;

impl<M: Marginal> MetaGaussian<M> {
    pub fn new(marginals: Vec<M>, correlation: CorrelationMatrix) -> Result<Self> {
        if marginals.len() != correlation.dim() {
            return Err(Error::DimensionMismatch {
                expected: correlation.dim(),
                got: marginals.len(),
            });
        }
        Ok(MetaGaussian {
            marginals,
            correlation,
        })
    }

    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    pub fn marginal(&self, i: usize) -> &M {
        &self.marginals[i]
    }

    pub fn marginals(&self) -> &[M] {
        &self.marginals
    }

    pub fn correlation(&self) -> &CorrelationMatrix {
        &self.correlation
    }

    /// Log joint density. Returns `-inf` exactly when some marginal density
    /// vanishes at its coordinate.
    pub fn log_density(&self, theta: &ParameterVector) -> Result<f64> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: theta.len(),
            });
        }
        let p = self.dim();
        let mut marg_sum = 0.0;
        let mut eta = DVector::zeros(p);
        for (i, x) in theta.as_slice().iter().enumerate() {
            let lp = self.marginals[i].log_pdf(*x);
            if lp == f64::NEG_INFINITY {
                return Ok(f64::NEG_INFINITY);
            }
            marg_sum += lp;
            eta[i] = norm::quantile(self.marginals[i].cdf(*x));
        }
        let quad_identity = eta.dot(&eta);
        let quad_inverse = eta.dot(&(&self.correlation.inverse * &eta));
        Ok(-0.5 * self.correlation.log_det + 0.5 * (quad_identity - quad_inverse) + marg_sum)
    }

    /// Draws `m` equally weighted samples: eta ~ N(0, Lambda) through the
    /// Cholesky factor, then theta_i = Q_i(Phi(eta_i)).
    pub fn sample(&self, m: usize, rng: SeededRng) -> Result<WeightedSampleSet> {
        if m == 0 {
            return Err(Error::invalid("requested an empty sample"));
        }
        let p = self.dim();
        let mut r = rng.child(labels::SAMPLER).rng();
        let mut params = DMatrix::zeros(m, p);
        let l = &self.correlation.chol_lower;
        let mut z = DVector::<f64>::zeros(p);
        for i in 0..m {
            for k in 0..p {
                z[k] = StandardNormal.sample(&mut r);
            }
            for t in 0..p {
                let mut eta = 0.0;
                for k in 0..=t {
                    eta += l[(t, k)] * z[k];
                }
                params[(i, t)] = self.marginals[t].quantile(norm::cdf(eta));
            }
        }
        WeightedSampleSet::new(params, DMatrix::zeros(m, 0), vec![1.0; m])
    }

    /// The meta-Gaussian margin on a subset of coordinates.
    pub fn marginal_subset(&self, indices: &[usize]) -> Result<MetaGaussian<M>>
    where
        M: Clone,
    {
        if indices.is_empty() {
            return Err(Error::invalid("subset must be nonempty"));
        }
        let mut sorted_check = indices.to_vec();
        sorted_check.sort_unstable();
        sorted_check.dedup();
        if sorted_check.len() != indices.len() {
            return Err(Error::invalid("subset indices must be distinct"));
        }
        let marginals: Vec<M> = indices
            .iter()
            .map(|&i| {
                self.marginals
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::invalid(format!("index {i} out of range")))
            })
            .collect::<Result<_>>()?;
        let correlation = self.correlation.submatrix(indices)?;
        MetaGaussian::new(marginals, correlation)
    }

    /// Convenience accessor for a bivariate margin.
    pub fn bivariate(&self, i: usize, j: usize) -> Result<MetaGaussian<M>>
    where
        M: Clone,
    {
        self.marginal_subset(&[i, j])
    }

    /// Maximizes the marginal log density minus the log marginal prior over
    /// the given coordinates with a restarted simplex search; standard
    /// errors come from a finite-difference Hessian of the objective.
    pub fn approx_mle<F>(&self, prior_log_pdf: F, subset: &[usize]) -> Result<MleEstimate>
    where
        F: Fn(&[f64]) -> f64,
        M: Clone,
    {
        let sub = self.marginal_subset(subset)?;
        let dim = sub.dim();
        let objective = |x: &[f64]| -> f64 {
            let theta = match ParameterVector::new(x.to_vec()) {
                Ok(t) => t,
                Err(_) => return f64::INFINITY,
            };
            let ld = sub.log_density(&theta).unwrap_or(f64::NEG_INFINITY);
            if ld == f64::NEG_INFINITY {
                return f64::INFINITY;
            }
            let prior = prior_log_pdf(x);
            if prior == f64::NEG_INFINITY {
                return f64::INFINITY;
            }
            -(ld - prior)
        };

        let quantile_levels = [0.25, 0.5, 0.75];
        let scales: Vec<f64> = sub
            .marginals
            .iter()
            .map(|m| (0.5 * m.iqr()).max(1e-8 * (1.0 + m.mean().abs())))
            .collect();

        let mut pick = SeededRng::with_stream(0x6d6c65, 0).child(labels::OPTIM).rng();
        let mut best: Option<crate::optim::SimplexResult> = None;
        for restart in 0..5 {
            let start: Vec<f64> = (0..dim)
                .map(|k| {
                    let level = if restart == 0 {
                        0.5
                    } else {
                        use rand::Rng;
                        quantile_levels[pick.random_range(0..quantile_levels.len())]
                    };
                    sub.marginals[k].quantile(level)
                })
                .collect();
            let res = nelder_mead(|x| objective(x), &start, &scales, 600, 1e-10, 1e-7);
            best = match best {
                Some(b) if b.value <= res.value => Some(b),
                _ => Some(res),
            };
        }
        let best = best.unwrap();
        if !best.value.is_finite() {
            return Err(Error::NonConvergence(
                "objective was infinite at every simplex restart".into(),
            ));
        }

        // Observed information from central second differences. Steps sit at
        // a tenth of each marginal sd: comfortably above the KDE
        // micro-structure (bandwidths run near 0.2 sd), comfortably below
        // the envelope scale, and exact for quadratic log densities.
        let steps: Vec<f64> = sub
            .marginals
            .iter()
            .map(|m| (0.1 * m.sd()).max(1e-10))
            .collect();
        let x = &best.point;
        let f0 = objective(x);
        let mut hessian = DMatrix::zeros(dim, dim);
        for a in 0..dim {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[a] += steps[a];
            xm[a] -= steps[a];
            hessian[(a, a)] = (objective(&xp) - 2.0 * f0 + objective(&xm)) / (steps[a] * steps[a]);
            for b in (a + 1)..dim {
                let mut xpp = x.clone();
                let mut xpm = x.clone();
                let mut xmp = x.clone();
                let mut xmm = x.clone();
                xpp[a] += steps[a];
                xpp[b] += steps[b];
                xpm[a] += steps[a];
                xpm[b] -= steps[b];
                xmp[a] -= steps[a];
                xmp[b] += steps[b];
                xmm[a] -= steps[a];
                xmm[b] -= steps[b];
                let v = (objective(&xpp) - objective(&xpm) - objective(&xmp) + objective(&xmm))
                    / (4.0 * steps[a] * steps[b]);
                hessian[(a, b)] = v;
                hessian[(b, a)] = v;
            }
        }
        let mut hessian_warning = false;
        let trace = hessian.diagonal().iter().map(|v| v.abs()).sum::<f64>().max(1e-12);
        let mut ridge = 0.0;
        let cov = loop {
            let candidate = &hessian + DMatrix::from_diagonal_element(dim, dim, ridge);
            if let Some(chol) = Cholesky::new(candidate) {
                break chol.inverse();
            }
            hessian_warning = true;
            ridge = if ridge == 0.0 { 1e-10 * trace } else { ridge * 10.0 };
            if ridge > 1e3 * trace {
                return Err(Error::NonConvergence(
                    "finite-difference Hessian could not be stabilized".into(),
                ));
            }
        };
        let std_errors: Vec<f64> = (0..dim).map(|k| cov[(k, k)].max(0.0).sqrt()).collect();

        Ok(MleEstimate {
            point: best.point,
            std_errors,
            converged: best.converged,
            hessian_warning,
        })
    }
}

/// Point estimate with standard errors from the approximate likelihood.
#[derive(Clone, Debug)]
pub struct MleEstimate {
    pub point: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// False when the simplex search hit its iteration budget; the best
    /// point found is still reported.
    pub converged: bool,
    /// True when the Hessian needed ridging before inversion.
    pub hessian_warning: bool,
}

/// Which post-selection adjustments the fitting pipeline applies.
#[derive(Clone, Copy, Debug)]
pub struct AdjustOptions {
    /// Local-linear regression adjustment of every selected sample.
    pub regression: bool,
    /// Marginal (order-statistic) adjustment of pairwise samples toward the
    /// precisely estimated univariate marginals. Ranks are preserved, so the
    /// correlation estimates are identical either way; this only affects the
    /// pairwise samples handed to diagnostics.
    pub marginal: bool,
}

impl Default for AdjustOptions {
    fn default() -> Self {
        AdjustOptions {
            regression: true,
            marginal: true,
        }
    }
}

/// One univariate ABC analysis: select on the parameter's informative
/// summary subset, optionally regression-adjust, and return column `i`.
pub fn marginal_abc_sample(
    table: &ReferenceTable,
    s_obs: &SummaryVector,
    smap: &SummaryMap,
    index: usize,
    quantile: f64,
    spec: &DistanceSpec,
    adjust: AdjustOptions,
) -> Result<Vec<f64>> {
    let subset = smap.univariate(index)?.to_vec();
    let selected = abc_select(table, s_obs, &subset, quantile, spec)?;
    let mut one = selected.select_param_columns(&[index])?;
    if adjust.regression {
        one = regression_adjust(&one, s_obs, &subset)?.0;
    }
    Ok(one.param_column(0))
}

/// One bivariate ABC analysis for the pair (i, j): select on the pair's
/// subset, optionally regression-adjust, then optionally marginally adjust
/// both columns toward the supplied univariate estimates.
pub fn pairwise_abc_sample(
    table: &ReferenceTable,
    s_obs: &SummaryVector,
    smap: &SummaryMap,
    pair: (usize, usize),
    quantile: f64,
    spec: &DistanceSpec,
    adjust: AdjustOptions,
    marginals: Option<(&MarginalEstimate, &MarginalEstimate)>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (i, j) = pair;
    let subset = smap.pairwise(i, j)?;
    let selected = abc_select(table, s_obs, &subset, quantile, spec)?;
    let mut two = selected.select_param_columns(&[i, j])?;
    if adjust.regression {
        two = regression_adjust(&two, s_obs, &subset)?.0;
    }
    let mut a = two.param_column(0);
    let mut b = two.param_column(1);
    if adjust.marginal {
        if let Some((mi, mj)) = marginals {
            a = adjust_column_to_marginal(&a, mi);
            b = adjust_column_to_marginal(&b, mj);
        }
    }
    Ok((a, b))
}

/// Fits the full copula posterior: one univariate analysis per parameter
/// (giving the marginal estimates), one bivariate analysis per pair (giving
/// the normal-scores correlations), then assembly with positive-definiteness
/// repair. Marginal and pairwise fits run in parallel.
///
/// Samples are treated as equally weighted once selected; the built-in
/// models all use prior (or prior-box) importance distributions, for which
/// this holds exactly.
pub fn fit_copula(
    table: &ReferenceTable,
    s_obs: &SummaryVector,
    smap: &SummaryMap,
    quantile: f64,
    spec: &DistanceSpec,
    adjust: AdjustOptions,
) -> Result<CopulaPosterior> {
    let p = table.parameter_dim();
    if smap.parameter_dim() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: smap.parameter_dim(),
        });
    }

    let marginals: Vec<MarginalEstimate> = (0..p)
        .into_par_iter()
        .map(|i| {
            let col = marginal_abc_sample(table, s_obs, smap, i, quantile, spec, adjust)?;
            MarginalEstimate::from_sample(&col)
        })
        .collect::<Result<_>>()?;

    let pairs = all_pairs(p);
    let lambdas: Vec<(usize, usize, f64)> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (a, b) = pairwise_abc_sample(
                table,
                s_obs,
                smap,
                (i, j),
                quantile,
                spec,
                adjust,
                Some((&marginals[i], &marginals[j])),
            )?;
            Ok((i, j, pairwise_lambda(&a, &b)?))
        })
        .collect::<Result<_>>()?;

    let correlation = assemble_correlation(p, &lambdas)?;
    MetaGaussian::new(marginals, correlation)
}

const POSTERIOR_MAGIC: &[u8; 8] = b"ABCCOP01";

impl CopulaPosterior {
    /// Serializes the posterior (marginal samples, bandwidths, correlation
    /// matrix, repair log); doubles round-trip bit exactly.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        w.write_all(POSTERIOR_MAGIC)?;
        w.write_all(&(self.dim() as u64).to_le_bytes())?;
        for m in self.marginals() {
            w.write_all(&(m.len() as u64).to_le_bytes())?;
            w.write_all(&m.bandwidth().to_le_bytes())?;
            for v in m.sorted_sample() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        let lambda = self.correlation().matrix();
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                w.write_all(&lambda[(i, j)].to_le_bytes())?;
            }
        }
        let log = self.correlation().repair_log();
        w.write_all(&[log.fired as u8])?;
        w.write_all(&log.eigenvalue_floor.to_le_bytes())?;
        w.write_all(&log.max_entry_change.to_le_bytes())?;
        w.write_all(&log.sweeps.to_le_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut r = BufReader::new(file);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != POSTERIOR_MAGIC {
            return Err(Error::Format(format!(
                "{} is not a serialized copula posterior",
                path.display()
            )));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let p = u64::from_le_bytes(b8) as usize;
        let mut marginals = Vec::with_capacity(p);
        for _ in 0..p {
            r.read_exact(&mut b8)?;
            let n = u64::from_le_bytes(b8) as usize;
            r.read_exact(&mut b8)?;
            let bandwidth = f64::from_le_bytes(b8);
            let mut sorted = Vec::with_capacity(n);
            for _ in 0..n {
                r.read_exact(&mut b8)?;
                sorted.push(f64::from_le_bytes(b8));
            }
            marginals.push(MarginalEstimate::from_parts(sorted, bandwidth)?);
        }
        let mut lambda = DMatrix::zeros(p, p);
        for i in 0..p {
            for j in 0..p {
                r.read_exact(&mut b8)?;
                lambda[(i, j)] = f64::from_le_bytes(b8);
            }
        }
        let mut b1 = [0u8; 1];
        r.read_exact(&mut b1)?;
        let fired = b1[0] != 0;
        r.read_exact(&mut b8)?;
        let eigenvalue_floor = f64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let max_entry_change = f64::from_le_bytes(b8);
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let sweeps = u32::from_le_bytes(b4);

        let mut correlation = CorrelationMatrix::from_matrix(lambda)?;
        correlation.repair = RepairLog {
            fired,
            eigenvalue_floor,
            max_entry_change,
            sweeps,
        };
        MetaGaussian::new(marginals, correlation)
    }
}
