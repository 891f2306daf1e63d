//! Grid-based density diagnostics: bivariate KDEs, meta-Gaussian margins on
//! grids, Kullback-Leibler divergence between gridded densities, and the
//! replicated toy-model comparison of selection/adjustment strategies.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::adjust::{adjust_column_to_marginal, regression_adjust};
use crate::copula::{fit_copula, marginal_abc_sample, AdjustOptions, MetaGaussian};
use crate::dist::DistanceSpec;
use crate::error::{Error, Result};
use crate::marginal::{Marginal, MarginalEstimate};
use crate::models::toy::TwistedNormalModel;
use crate::norm;
use crate::rng::{labels, SeededRng};
use crate::table::{abc_select, build_reference_table, SimulatorModel};

/// Uniformly spaced grid axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisSpec {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl AxisSpec {
    pub fn new(min: f64, max: f64, count: usize) -> Result<Self> {
        if !(max > min) || count < 2 {
            return Err(Error::invalid(format!(
                "axis must satisfy max > min with at least two points (got [{min}, {max}] x {count})"
            )));
        }
        Ok(AxisSpec { min, max, count })
    }

    pub fn step(&self) -> f64 {
        (self.max - self.min) / (self.count - 1) as f64
    }

    pub fn points(&self) -> Vec<f64> {
        let h = self.step();
        (0..self.count).map(|i| self.min + i as f64 * h).collect()
    }
}

/// A rectangular evaluation grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub x: AxisSpec,
    pub y: AxisSpec,
}

/// A normalized density on a uniform 2-D grid (trapezoidal integral one).
/// The integral of the values as supplied is kept as the normalization
/// record: when the input was already a proper density, that is the mass it
/// placed on the grid window.
#[derive(Clone, Debug)]
pub struct GridDensity2D {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// values[(ix, iy)]
    values: DMatrix<f64>,
    raw_mass: f64,
}

fn trapezoid_weight(i: usize, n: usize) -> f64 {
    if i == 0 || i + 1 == n {
        0.5
    } else {
        1.0
    }
}

impl GridDensity2D {
    /// Normalizes nonnegative values into a density over the grid.
    pub fn from_unnormalized(xs: Vec<f64>, ys: Vec<f64>, mut values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != xs.len() || values.ncols() != ys.len() {
            return Err(Error::DimensionMismatch {
                expected: xs.len() * ys.len(),
                got: values.nrows() * values.ncols(),
            });
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("grid values must be finite and nonnegative"));
        }
        let dx = xs[1] - xs[0];
        let dy = ys[1] - ys[0];
        let mut total = 0.0;
        for i in 0..xs.len() {
            for j in 0..ys.len() {
                total += trapezoid_weight(i, xs.len())
                    * trapezoid_weight(j, ys.len())
                    * values[(i, j)];
            }
        }
        total *= dx * dy;
        if !(total > 0.0) {
            return Err(Error::DegenerateSample("grid density integrates to zero".into()));
        }
        values /= total;
        Ok(GridDensity2D {
            xs,
            ys,
            values,
            raw_mass: total,
        })
    }

    /// Trapezoidal integral of the values before normalization.
    pub fn raw_mass(&self) -> f64 {
        self.raw_mass
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn value(&self, ix: usize, iy: usize) -> f64 {
        self.values[(ix, iy)]
    }

    /// Trapezoidal integral (one after construction, up to rounding).
    pub fn integral(&self) -> f64 {
        let dx = self.xs[1] - self.xs[0];
        let dy = self.ys[1] - self.ys[0];
        let mut total = 0.0;
        for i in 0..self.xs.len() {
            for j in 0..self.ys.len() {
                total += trapezoid_weight(i, self.xs.len())
                    * trapezoid_weight(j, self.ys.len())
                    * self.values[(i, j)];
            }
        }
        total * dx * dy
    }

    pub fn same_grid(&self, other: &GridDensity2D) -> bool {
        self.xs == other.xs && self.ys == other.ys
    }
}

fn weighted_sd(values: &[f64], weights: &[f64]) -> f64 {
    let mean: f64 = values.iter().zip(weights).map(|(v, w)| v * w).sum();
    let var: f64 = values
        .iter()
        .zip(weights)
        .map(|(v, w)| w * (v - mean) * (v - mean))
        .sum();
    var.max(0.0).sqrt()
}

fn weighted_quantile(values: &[f64], weights: &[f64], q: f64) -> f64 {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut acc = 0.0;
    for &i in &order {
        acc += weights[i];
        if acc >= q {
            return values[i];
        }
    }
    values[order[order.len() - 1]]
}

/// Weighted product-Gaussian kernel density estimate on a grid, one
/// Silverman rule-of-thumb bandwidth per axis.
pub fn kde2d(
    x: &[f64],
    y: &[f64],
    weights: &[f64],
    grid: &GridSpec,
) -> Result<GridDensity2D> {
    let n = x.len();
    if n < 10 {
        return Err(Error::invalid("kde2d needs at least ten points"));
    }
    if y.len() != n || weights.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: y.len().min(weights.len()),
        });
    }
    let wsum: f64 = weights.iter().sum();
    if !(wsum > 0.0) {
        return Err(Error::invalid("weights must sum to a positive value"));
    }
    let w: Vec<f64> = weights.iter().map(|v| v / wsum).collect();
    let n_eff = 1.0 / w.iter().map(|v| v * v).sum::<f64>();

    let bandwidth = |vals: &[f64]| -> Result<f64> {
        let sd = weighted_sd(vals, &w);
        let iqr = weighted_quantile(vals, &w, 0.75) - weighted_quantile(vals, &w, 0.25);
        let spread = match (sd > 0.0, iqr > 0.0) {
            (true, true) => sd.min(iqr / 1.34),
            (true, false) => sd,
            (false, true) => iqr / 1.34,
            (false, false) => {
                return Err(Error::DegenerateSample("zero-variance kde column".into()))
            }
        };
        Ok(0.9 * spread * n_eff.powf(-0.2))
    };
    let hx = bandwidth(x)?;
    let hy = bandwidth(y)?;

    let xs = grid.x.points();
    let ys = grid.y.points();
    let dx = grid.x.step();
    let dy = grid.y.step();
    let mut values = DMatrix::zeros(xs.len(), ys.len());

    // Kernels are truncated at eight bandwidths; each sample only touches a
    // local block of cells.
    let reach_x = (8.0 * hx / dx).ceil() as i64;
    let reach_y = (8.0 * hy / dy).ceil() as i64;
    let mut ux: Vec<f64> = Vec::new();
    let mut uy: Vec<f64> = Vec::new();
    for k in 0..n {
        let cx = ((x[k] - grid.x.min) / dx).round() as i64;
        let cy = ((y[k] - grid.y.min) / dy).round() as i64;
        let x_lo = (cx - reach_x).max(0) as usize;
        let x_hi = ((cx + reach_x).min(xs.len() as i64 - 1)).max(-1);
        let y_lo = (cy - reach_y).max(0) as usize;
        let y_hi = ((cy + reach_y).min(ys.len() as i64 - 1)).max(-1);
        if x_hi < x_lo as i64 || y_hi < y_lo as i64 {
            continue;
        }
        let (x_hi, y_hi) = (x_hi as usize, y_hi as usize);
        ux.clear();
        for i in x_lo..=x_hi {
            let z = (xs[i] - x[k]) / hx;
            ux.push((-0.5 * z * z).exp());
        }
        uy.clear();
        for j in y_lo..=y_hi {
            let z = (ys[j] - y[k]) / hy;
            uy.push((-0.5 * z * z).exp());
        }
        for (ii, gx) in ux.iter().enumerate() {
            let base = w[k] * gx;
            for (jj, gy) in uy.iter().enumerate() {
                values[(x_lo + ii, y_lo + jj)] += base * gy;
            }
        }
    }
    let scale = 1.0 / (2.0 * std::f64::consts::PI * hx * hy);
    values *= scale;
    GridDensity2D::from_unnormalized(xs, ys, values)
}

/// Raw (not renormalized) values of the bivariate meta-Gaussian margin on a
/// grid, evaluated with per-axis precomputation of the marginal densities
/// and normal scores.
fn bivariate_raw<M: Marginal + Clone>(
    post: &MetaGaussian<M>,
    pair: (usize, usize),
    grid: &GridSpec,
) -> Result<(Vec<f64>, Vec<f64>, DMatrix<f64>)> {
    let bi = post.bivariate(pair.0, pair.1)?;
    let lambda = bi.correlation().entry(0, 1);
    let xs = grid.x.points();
    let ys = grid.y.points();

    let per_axis = |pts: &[f64], m: &M| -> (Vec<f64>, Vec<f64>) {
        let lp: Vec<f64> = pts.iter().map(|&v| m.log_pdf(v)).collect();
        let eta: Vec<f64> = pts.iter().map(|&v| norm::quantile(m.cdf(v))).collect();
        (lp, eta)
    };
    let (lpx, etax) = per_axis(&xs, bi.marginal(0));
    let (lpy, etay) = per_axis(&ys, bi.marginal(1));

    let one_minus = 1.0 - lambda * lambda;
    let log_det = one_minus.max(f64::MIN_POSITIVE).ln();
    let mut values = DMatrix::zeros(xs.len(), ys.len());
    for i in 0..xs.len() {
        for j in 0..ys.len() {
            if lpx[i] == f64::NEG_INFINITY || lpy[j] == f64::NEG_INFINITY {
                continue;
            }
            let (ex, ey) = (etax[i], etay[j]);
            let quad_identity = ex * ex + ey * ey;
            let quad_inverse = (ex * ex - 2.0 * lambda * ex * ey + ey * ey) / one_minus;
            let ld = -0.5 * log_det + 0.5 * (quad_identity - quad_inverse) + lpx[i] + lpy[j];
            values[(i, j)] = ld.exp();
        }
    }
    Ok((xs, ys, values))
}

/// Evaluates the bivariate meta-Gaussian margin (marginals i and j plus
/// their correlation entry) on a grid and normalizes it.
pub fn copula_bivariate_grid<M: Marginal + Clone>(
    post: &MetaGaussian<M>,
    pair: (usize, usize),
    grid: &GridSpec,
) -> Result<GridDensity2D> {
    let (xs, ys, values) = bivariate_raw(post, pair, grid)?;
    GridDensity2D::from_unnormalized(xs, ys, values)
}

/// Trapezoidal mass of the raw bivariate margin density over the grid. For
/// a well-fitted posterior on a grid covering the bulk of its support, this
/// is close to one; it is the normalization check behind the grid variant.
pub fn copula_bivariate_mass<M: Marginal + Clone>(
    post: &MetaGaussian<M>,
    pair: (usize, usize),
    grid: &GridSpec,
) -> Result<f64> {
    let (xs, ys, values) = bivariate_raw(post, pair, grid)?;
    let dx = grid.x.step();
    let dy = grid.y.step();
    let mut total = 0.0;
    for i in 0..xs.len() {
        for j in 0..ys.len() {
            total +=
                trapezoid_weight(i, xs.len()) * trapezoid_weight(j, ys.len()) * values[(i, j)];
        }
    }
    Ok(total * dx * dy)
}

/// Trapezoidal estimate of the Kullback-Leibler divergence KL(p || q) over a
/// shared grid, with q floored at 1e-300 and the result clipped at zero.
pub fn kl_grid(p: &GridDensity2D, q: &GridDensity2D) -> Result<f64> {
    if !p.same_grid(q) {
        return Err(Error::invalid("KL grids must share axes"));
    }
    const FLOOR: f64 = 1e-300;
    let dx = p.xs[1] - p.xs[0];
    let dy = p.ys[1] - p.ys[0];
    let mut total = 0.0;
    for i in 0..p.xs.len() {
        for j in 0..p.ys.len() {
            let pv = p.values[(i, j)];
            if pv <= 0.0 {
                continue;
            }
            let qv = q.values[(i, j)].max(FLOOR);
            total += trapezoid_weight(i, p.xs.len())
                * trapezoid_weight(j, p.ys.len())
                * pv
                * (pv / qv).ln();
        }
    }
    Ok((total * dx * dy).max(0.0))
}

/// Grid spanning `span_sds` standard deviations around the marginal means
/// of the requested pair.
pub fn marginal_grid<M: Marginal>(
    post: &MetaGaussian<M>,
    pair: (usize, usize),
    count: usize,
    span_sds: f64,
) -> Result<GridSpec> {
    let axis = |m: &M| {
        AxisSpec::new(
            m.mean() - span_sds * m.sd(),
            m.mean() + span_sds * m.sd(),
            count,
        )
    };
    Ok(GridSpec {
        x: axis(post.marginal(pair.0))?,
        y: axis(post.marginal(pair.1))?,
    })
}

/// Posterior-approximation strategies compared on the toy model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AbcMethod {
    Rejection,
    RejectionMarginal,
    Regression,
    RegressionMarginal,
    Copula,
}

impl AbcMethod {
    pub const ALL: [AbcMethod; 5] = [
        AbcMethod::Rejection,
        AbcMethod::RejectionMarginal,
        AbcMethod::Regression,
        AbcMethod::RegressionMarginal,
        AbcMethod::Copula,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AbcMethod::Rejection => "rejection",
            AbcMethod::RejectionMarginal => "rejection_marginal",
            AbcMethod::Regression => "regression",
            AbcMethod::RegressionMarginal => "regression_marginal",
            AbcMethod::Copula => "copula",
        }
    }

    pub fn parse(s: &str) -> Option<AbcMethod> {
        Self::ALL.iter().copied().find(|m| m.name() == s)
    }
}

/// Mean and standard error of replicated KL divergences.
#[derive(Clone, Debug)]
pub struct KlSummary {
    pub method: AbcMethod,
    pub mean: f64,
    pub se: f64,
    pub per_replicate: Vec<f64>,
}

/// Grid estimate of the pair (theta_1, theta_2) posterior margin under one
/// selection/adjustment strategy applied to a prebuilt reference table. The
/// univariate marginal estimates for the adjustment-based methods are fitted
/// with regression adjustment on their own informative subsets.
pub fn toy_method_grid(
    model: &TwistedNormalModel,
    table: &crate::table::ReferenceTable,
    method: AbcMethod,
    quantile: f64,
    grid: &GridSpec,
) -> Result<GridDensity2D> {
    let spec = DistanceSpec::Euclidean;
    let smap = model.summary_map()?;
    let s_obs = model.observed_summaries();
    let adjust = AdjustOptions::default();

    if method == AbcMethod::Copula {
        let post = fit_copula(table, &s_obs, &smap, quantile, &spec, adjust)?;
        return copula_bivariate_grid(&post, (0, 1), grid);
    }

    let marginals = if matches!(
        method,
        AbcMethod::RejectionMarginal | AbcMethod::RegressionMarginal
    ) {
        let m0 = MarginalEstimate::from_sample(&marginal_abc_sample(
            table, &s_obs, &smap, 0, quantile, &spec, adjust,
        )?)?;
        let m1 = MarginalEstimate::from_sample(&marginal_abc_sample(
            table, &s_obs, &smap, 1, quantile, &spec, adjust,
        )?)?;
        Some((m0, m1))
    } else {
        None
    };

    let full_subset: Vec<usize> = (0..model.summary_dim()).collect();
    let selected =
        abc_select(table, &s_obs, &full_subset, quantile, &spec)?.select_param_columns(&[0, 1])?;
    let base = if matches!(method, AbcMethod::Regression | AbcMethod::RegressionMarginal) {
        regression_adjust(&selected, &s_obs, &full_subset)?.0
    } else {
        selected
    };
    let (mut a, mut b) = (base.param_column(0), base.param_column(1));
    if let Some((m0, m1)) = &marginals {
        a = adjust_column_to_marginal(&a, m0);
        b = adjust_column_to_marginal(&b, m1);
    }
    kde2d(&a, &b, base.weights().as_slice(), grid)
}

/// Runs the full pipeline `replicates` times with independent seeds and
/// reports the mean KL divergence (with standard error) between the exactly
/// computed (theta_1, theta_2) posterior margin and each method's estimate.
pub fn replicate_kl_experiment(
    model: &TwistedNormalModel,
    method: AbcMethod,
    n_samples: usize,
    quantile: f64,
    replicates: usize,
    grid_size: usize,
    rng: SeededRng,
) -> Result<KlSummary> {
    let mut all = replicate_kl_methods(
        model,
        &[method],
        n_samples,
        quantile,
        replicates,
        grid_size,
        rng,
    )?;
    Ok(all.remove(0))
}

/// Same as [`replicate_kl_experiment`] for several methods over a shared
/// per-replicate reference table.
///
/// Every method is scored through the same machinery: draws from the
/// approximation, a kernel density estimate of the (theta_1, theta_2)
/// margin on the truth window (for the copula method the draws come from
/// the fitted posterior itself, the same number as a selection keeps), and
/// grid-quadrature KL against the exact margin. The estimate keeps its own
/// density normalization, so probability mass it places outside the window
/// is penalized through the normalization record.
pub fn replicate_kl_methods(
    model: &TwistedNormalModel,
    methods: &[AbcMethod],
    n_samples: usize,
    quantile: f64,
    replicates: usize,
    grid_size: usize,
    rng: SeededRng,
) -> Result<Vec<KlSummary>> {
    if methods.is_empty() || replicates == 0 {
        return Err(Error::invalid("need at least one method and one replicate"));
    }
    let (truth, grid) = toy_truth_grid(model, grid_size)?;
    let rep_space = rng.child(labels::REPLICATE);
    let kept = ((quantile * n_samples as f64).ceil() as usize).clamp(1, n_samples);

    let mut kls: Vec<Vec<f64>> = vec![Vec::with_capacity(replicates); methods.len()];
    for r in 0..replicates {
        let rep_rng = rep_space.stream(r as u64);
        let table = build_reference_table(model, n_samples, rep_rng)?;
        for (mi, method) in methods.iter().enumerate() {
            let estimate = if *method == AbcMethod::Copula {
                let spec = DistanceSpec::Euclidean;
                let smap = model.summary_map()?;
                let s_obs = model.observed_summaries();
                let post = fit_copula(
                    &table,
                    &s_obs,
                    &smap,
                    quantile,
                    &spec,
                    AdjustOptions::default(),
                )?;
                let draws = post.sample(kept, rep_rng.child(labels::SAMPLER))?;
                kde2d(
                    &draws.param_column(0),
                    &draws.param_column(1),
                    &vec![1.0; kept],
                    &grid,
                )?
            } else {
                toy_method_grid(model, &table, *method, quantile, &grid)?
            };
            let escaped = -estimate.raw_mass().ln();
            kls[mi].push((kl_grid(&truth, &estimate)? + escaped).max(0.0));
        }
    }

    Ok(methods
        .iter()
        .zip(kls)
        .map(|(m, per)| {
            let n = per.len() as f64;
            let mean = per.iter().sum::<f64>() / n;
            let var = per.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / (n * (n - 1.0).max(1.0));
            KlSummary {
                method: *m,
                mean,
                se: var.sqrt(),
                per_replicate: per,
            }
        })
        .collect())
}

/// Exact (theta_1, theta_2) posterior margin on its own +/- 6 sd grid,
/// together with the grid spec every method estimate should be evaluated on.
pub fn toy_truth_grid(
    model: &TwistedNormalModel,
    grid_size: usize,
) -> Result<(GridDensity2D, GridSpec)> {
    let spec = model.auto_grid((0, 1), grid_size)?;
    let truth = model.posterior_grid((0, 1), &spec)?;
    Ok((truth, spec))
}

/// Evaluates several independent toy-model replicate experiments in
/// parallel, one entry per requested dimension.
pub fn kl_by_dimension(
    dims: &[usize],
    twist: f64,
    obs_sd: f64,
    methods: &[AbcMethod],
    n_samples: usize,
    quantile: f64,
    replicates: usize,
    grid_size: usize,
    rng: SeededRng,
) -> Result<Vec<(usize, Vec<KlSummary>)>> {
    dims.par_iter()
        .map(|&p| {
            let model = TwistedNormalModel::new(p, twist, obs_sd)?;
            let summaries = replicate_kl_methods(
                &model,
                methods,
                n_samples,
                quantile,
                replicates,
                grid_size,
                rng.child(p as u64),
            )?;
            Ok((p, summaries))
        })
        .collect()
}
