//! The g-and-k quantile distribution and its multivariate extension: q
//! univariate g-and-k margins linked by a Gaussian copula with correlation
//! matrix V. The distribution has no closed-form density; it is defined
//! through its quantile function
//!
//! ```text
//! Q(u) = A + B [1 + c (1 - exp(-g z)) / (1 + exp(-g z))] (1 + z^2)^k z,
//! z = Phi^-1(u),
//! ```
//!
//! with location A, scale B > 0, skewness g, kurtosis k > -1/2 and the
//! conventional asymmetry constant c = 0.8. Summary statistics are the
//! robust octile-based quartet per margin plus normal-scores correlations
//! per margin pair.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::copula::{nearest_correlation, pairwise_lambda};
use crate::error::{Error, Result};
use crate::norm;
use crate::table::SimulatorModel;
use crate::types::{all_pairs, pair_count, pair_index, SummaryMap};

/// Conventional asymmetry constant.
pub const GK_ASYMMETRY: f64 = 0.8;

/// Parameters of one univariate g-and-k margin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GkParams {
    pub a: f64,
    pub b: f64,
    pub g: f64,
    pub k: f64,
    pub c: f64,
}

impl GkParams {
    pub fn new(a: f64, b: f64, g: f64, k: f64) -> Result<Self> {
        if !(b > 0.0) {
            return Err(Error::invalid(format!("scale B must be positive, got {b}")));
        }
        if !(k > -0.5) {
            return Err(Error::invalid(format!("kurtosis k must exceed -1/2, got {k}")));
        }
        if !(a.is_finite() && g.is_finite()) {
            return Err(Error::invalid("g-and-k parameters must be finite"));
        }
        Ok(GkParams {
            a,
            b,
            g,
            k,
            c: GK_ASYMMETRY,
        })
    }
}

/// Quantile value at the standard-normal deviate `z` (the quantile function
/// composed with Phi, which is how simulation uses it).
pub fn gk_from_z(z: f64, params: &GkParams) -> f64 {
    // (1 - exp(-g z)) / (1 + exp(-g z)) = tanh(g z / 2), stable for large |g z|.
    let skew = (0.5 * params.g * z).tanh();
    params.a + params.b * (1.0 + params.c * skew) * (1.0 + z * z).powf(params.k) * z
}

/// The quantile function of the g-and-k distribution.
pub fn gk_quantile(u: f64, params: &GkParams) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::invalid(format!("quantile level must lie in (0, 1), got {u}")));
    }
    Ok(gk_from_z(norm::quantile(u), params))
}

/// k-th order statistic with k = ceil(q n), over an already sorted slice.
fn order_quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let k = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

/// The four robust summary statistics of one data column:
/// S_A = L2, S_B = L3 - L1, S_g = (L3 + L1 - 2 L2)/S_B,
/// S_k = (E7 - E5 + E3 - E1)/S_B, with L the quartiles and E the octiles.
pub fn gk_summaries(column: &[f64]) -> Result<[f64; 4]> {
    if column.len() < 8 {
        return Err(Error::invalid("need at least eight observations for octiles"));
    }
    let mut sorted = column.to_vec();
    sorted.sort_by(f64::total_cmp);
    summaries_of_sorted(&sorted)
}

fn summaries_of_sorted(sorted: &[f64]) -> Result<[f64; 4]> {
    let l1 = order_quantile(sorted, 0.25);
    let l2 = order_quantile(sorted, 0.5);
    let l3 = order_quantile(sorted, 0.75);
    let s_b = l3 - l1;
    if s_b == 0.0 {
        return Err(Error::DegenerateSample("zero interquartile range".into()));
    }
    let e1 = order_quantile(sorted, 1.0 / 8.0);
    let e3 = order_quantile(sorted, 3.0 / 8.0);
    let e5 = order_quantile(sorted, 5.0 / 8.0);
    let e7 = order_quantile(sorted, 7.0 / 8.0);
    Ok([l2, s_b, (l3 + l1 - 2.0 * l2) / s_b, (e7 - e5 + e3 - e1) / s_b])
}

/// Robust normal-scores correlation of two raw data columns.
pub fn normal_scores_correlation(col_a: &[f64], col_b: &[f64]) -> Result<f64> {
    pairwise_lambda(col_a, col_b)
}

/// One draw from the normalized Wishart(I_q, q): W ~ Wishart via the
/// Bartlett factorization, returned as D^-1/2 W D^-1/2 with unit diagonal.
pub fn wishart_correlation_sample(q: usize, rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
    if q < 2 {
        return Err(Error::invalid("need at least two margins for a correlation matrix"));
    }
    let mut bartlett = DMatrix::zeros(q, q);
    for i in 0..q {
        let chi = ChiSquared::new((q - i) as f64)
            .map_err(|e| Error::invalid(format!("chi-squared setup failed: {e}")))?;
        bartlett[(i, i)] = chi.sample(rng).max(f64::MIN_POSITIVE).sqrt();
        for j in 0..i {
            bartlett[(i, j)] = StandardNormal.sample(rng);
        }
    }
    let w = &bartlett * bartlett.transpose();
    let mut corr = DMatrix::identity(q, q);
    for i in 0..q {
        for j in 0..q {
            corr[(i, j)] = w[(i, j)] / (w[(i, i)] * w[(j, j)]).sqrt();
        }
    }
    Ok(corr)
}

/// Uniform importance/prior box for one margin's (A, B, g, k).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarginBox {
    pub a: (f64, f64),
    pub b: (f64, f64),
    pub g: (f64, f64),
    pub k: (f64, f64),
}

impl Default for MarginBox {
    fn default() -> Self {
        MarginBox {
            a: (-0.1, 0.1),
            b: (0.0, 0.05),
            g: (-1.0, 1.0),
            k: (-0.2, 0.5),
        }
    }
}

impl MarginBox {
    pub fn contains(&self, p: &GkParams) -> bool {
        let inside = |(lo, hi): (f64, f64), v: f64| v >= lo && v <= hi;
        inside(self.a, p.a) && inside(self.b, p.b) && inside(self.g, p.g) && inside(self.k, p.k)
    }
}

/// The q-margin g-and-k model: 4q margin parameters plus q(q-1)/2
/// correlation parameters, simulated datasets of a fixed size, and the
/// robust summary map (S_A for A, (S_B, S_k) for B, S_g for g, S_k for k,
/// normal-scores correlation for each latent correlation entry).
#[derive(Clone, Debug)]
pub struct MultiGkModel {
    margins: usize,
    dataset_size: usize,
    margin_box: MarginBox,
    /// Phi^-1(r/(n+1)) for r = 1..n, shared by every scores transform.
    scores: Vec<f64>,
    scores_norm2: f64,
}

impl MultiGkModel {
    pub fn new(margins: usize, dataset_size: usize) -> Result<Self> {
        Self::with_box(margins, dataset_size, MarginBox::default())
    }

    pub fn with_box(margins: usize, dataset_size: usize, margin_box: MarginBox) -> Result<Self> {
        if margins < 2 {
            return Err(Error::invalid("need at least two margins"));
        }
        if dataset_size < 8 {
            return Err(Error::invalid("dataset size must be at least eight"));
        }
        let n = dataset_size as f64;
        let scores: Vec<f64> = (1..=dataset_size)
            .map(|r| norm::quantile(r as f64 / (n + 1.0)))
            .collect();
        let scores_norm2 = scores.iter().map(|s| s * s).sum();
        Ok(MultiGkModel {
            margins,
            dataset_size,
            margin_box,
            scores,
            scores_norm2,
        })
    }

    pub fn margins(&self) -> usize {
        self.margins
    }

    pub fn dataset_size(&self) -> usize {
        self.dataset_size
    }

    pub fn margin_box(&self) -> &MarginBox {
        &self.margin_box
    }

    /// Flat layout: [A_1, B_1, g_1, k_1, ..., A_q, B_q, g_q, k_q,
    /// nu_{12}, nu_{13}, ..., nu_{(q-1)q}].
    pub fn pack_theta(&self, margins: &[GkParams], v: &DMatrix<f64>) -> Result<DVector<f64>> {
        let q = self.margins;
        if margins.len() != q || v.nrows() != q || v.ncols() != q {
            return Err(Error::DimensionMismatch {
                expected: q,
                got: margins.len().min(v.nrows()),
            });
        }
        let mut theta = DVector::zeros(self.parameter_dim());
        for (i, m) in margins.iter().enumerate() {
            theta[4 * i] = m.a;
            theta[4 * i + 1] = m.b;
            theta[4 * i + 2] = m.g;
            theta[4 * i + 3] = m.k;
        }
        for (i, j) in all_pairs(q) {
            theta[4 * q + pair_index(i, j, q)] = v[(i, j)];
        }
        Ok(theta)
    }

    /// Inverse of [`MultiGkModel::pack_theta`]. The correlation block is
    /// repaired to the nearest positive-definite correlation matrix when
    /// needed (plausible when the entries are posterior means rather than a
    /// jointly sampled matrix).
    pub fn unpack_theta(&self, theta: &DVector<f64>) -> Result<(Vec<GkParams>, DMatrix<f64>)> {
        let q = self.margins;
        if theta.len() != self.parameter_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.parameter_dim(),
                got: theta.len(),
            });
        }
        let mut margins = Vec::with_capacity(q);
        for i in 0..q {
            margins.push(GkParams::new(
                theta[4 * i],
                theta[4 * i + 1],
                theta[4 * i + 2],
                theta[4 * i + 3],
            )?);
        }
        let mut v = DMatrix::identity(q, q);
        for (i, j) in all_pairs(q) {
            let nu = theta[4 * q + pair_index(i, j, q)].clamp(-1.0, 1.0);
            v[(i, j)] = nu;
            v[(j, i)] = nu;
        }
        if Cholesky::new(v.clone()).is_none() {
            v = nearest_correlation(&v, 1e-6).0;
        }
        Ok((margins, v))
    }

    /// Simulates one dataset (`dataset_size` rows, one column per margin).
    pub fn simulate_dataset(
        &self,
        margins: &[GkParams],
        v: &DMatrix<f64>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Vec<f64>>> {
        let q = self.margins;
        let chol = Cholesky::new(v.clone()).ok_or_else(|| {
            Error::NotPositiveDefinite("g-and-k correlation matrix failed Cholesky".into())
        })?;
        let l = chol.unpack();
        let mut columns = vec![vec![0.0; self.dataset_size]; q];
        let mut eps = vec![0.0; q];
        for row in 0..self.dataset_size {
            for e in eps.iter_mut() {
                *e = StandardNormal.sample(rng);
            }
            for j in 0..q {
                let mut z = 0.0;
                for t in 0..=j {
                    z += l[(j, t)] * eps[t];
                }
                columns[j][row] = gk_from_z(z, &margins[j]);
            }
        }
        Ok(columns)
    }

    /// Reduces a dataset to the full summary vector.
    pub fn summaries_of(&self, columns: &[Vec<f64>]) -> Result<DVector<f64>> {
        let q = self.margins;
        if columns.len() != q {
            return Err(Error::DimensionMismatch {
                expected: q,
                got: columns.len(),
            });
        }
        let n = self.dataset_size;
        let mut out = DVector::zeros(self.summary_dim());

        // Per-column sorted copies and score vectors (rank-based, tie-free
        // with probability one for continuous data).
        let mut scores = vec![vec![0.0; n]; q];
        for (j, col) in columns.iter().enumerate() {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
            let mut sorted = vec![0.0; n];
            for (rank, &idx) in order.iter().enumerate() {
                scores[j][idx] = self.scores[rank];
                sorted[rank] = col[idx];
            }
            let stats = summaries_of_sorted(&sorted)?;
            out[4 * j] = stats[0];
            out[4 * j + 1] = stats[1];
            out[4 * j + 2] = stats[2];
            out[4 * j + 3] = stats[3];
        }
        for (i, j) in all_pairs(q) {
            let dot: f64 = scores[i]
                .iter()
                .zip(&scores[j])
                .map(|(x, y)| x * y)
                .sum();
            out[4 * q + pair_index(i, j, q)] = dot / self.scores_norm2;
        }
        Ok(out)
    }
}

impl SimulatorModel for MultiGkModel {
    fn parameter_dim(&self) -> usize {
        4 * self.margins + pair_count(self.margins)
    }

    fn summary_dim(&self) -> usize {
        4 * self.margins + pair_count(self.margins)
    }

    fn model_id(&self) -> String {
        let b = &self.margin_box;
        format!(
            "multi-gk(q={},n={},box=[{:?},{:?},{:?},{:?}])",
            self.margins, self.dataset_size, b.a, b.b, b.g, b.k
        )
    }

    fn sample_prior(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        use rand::Rng;
        let q = self.margins;
        let mut theta = DVector::zeros(self.parameter_dim());
        let draw = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| rng.random_range(lo..hi);
        for i in 0..q {
            theta[4 * i] = draw(rng, self.margin_box.a);
            theta[4 * i + 1] = draw(rng, self.margin_box.b).max(1e-12);
            theta[4 * i + 2] = draw(rng, self.margin_box.g);
            theta[4 * i + 3] = draw(rng, self.margin_box.k);
        }
        let v = wishart_correlation_sample(q, rng).expect("margins >= 2 checked at construction");
        for (i, j) in all_pairs(q) {
            theta[4 * q + pair_index(i, j, q)] = v[(i, j)];
        }
        theta
    }

    fn log_prior_density(&self, _theta: &DVector<f64>) -> f64 {
        // Prior and importance distribution coincide (uniform box margins
        // plus normalized Wishart for V), so only the ratio matters and it
        // is identically one.
        0.0
    }

    fn simulate_summaries(
        &self,
        theta: &DVector<f64>,
        rng: &mut ChaCha8Rng,
    ) -> Result<DVector<f64>> {
        let (margins, v) = self.unpack_theta(theta)?;
        let columns = self.simulate_dataset(&margins, &v, rng)?;
        self.summaries_of(&columns)
    }

    fn summary_map(&self) -> Result<SummaryMap> {
        let q = self.margins;
        let mut univariate = Vec::with_capacity(self.parameter_dim());
        for i in 0..q {
            univariate.push(vec![4 * i]); // A_i <- S_A
            univariate.push(vec![4 * i + 1, 4 * i + 3]); // B_i <- (S_B, S_k)
            univariate.push(vec![4 * i + 2]); // g_i <- S_g
            univariate.push(vec![4 * i + 3]); // k_i <- S_k
        }
        for (i, j) in all_pairs(q) {
            univariate.push(vec![4 * q + pair_index(i, j, q)]);
        }
        SummaryMap::new(self.summary_dim(), univariate)
    }
}
