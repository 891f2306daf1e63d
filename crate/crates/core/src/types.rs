//! Shared data types: parameter/summary vectors, weighted sample sets and
//! summary-statistic maps.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("{what} contains non-finite entries")));
    }
    Ok(())
}

/// A point in parameter space.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterVector(DVector<f64>);

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        ensure_finite(&values, "parameter vector")?;
        Ok(ParameterVector(DVector::from_vec(values)))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.len() == 0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn inner(&self) -> &DVector<f64> {
        &self.0
    }
}

impl From<ParameterVector> for DVector<f64> {
    fn from(v: ParameterVector) -> Self {
        v.0
    }
}

/// A vector of summary statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryVector(DVector<f64>);

impl SummaryVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        ensure_finite(&values, "summary vector")?;
        Ok(SummaryVector(DVector::from_vec(values)))
    }

    pub fn from_column(values: DVector<f64>) -> Result<Self> {
        ensure_finite(values.as_slice(), "summary vector")?;
        Ok(SummaryVector(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.len() == 0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn inner(&self) -> &DVector<f64> {
        &self.0
    }
}

/// Parameter draws with paired summary statistics and normalized importance
/// weights; the common currency between the sampling and fitting stages.
#[derive(Clone, Debug)]
pub struct WeightedSampleSet {
    params: DMatrix<f64>,
    summaries: DMatrix<f64>,
    weights: DVector<f64>,
}

impl WeightedSampleSet {
    /// Builds a sample set, normalizing `weights` to sum to one.
    pub fn new(
        params: DMatrix<f64>,
        summaries: DMatrix<f64>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let n = params.nrows();
        if summaries.nrows() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: summaries.nrows(),
            });
        }
        if weights.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: weights.len(),
            });
        }
        if n == 0 {
            return Err(Error::invalid("sample set must contain at least one row"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::invalid("weights must sum to a positive value"));
        }
        let weights = DVector::from_iterator(n, weights.iter().map(|w| w / total));
        Ok(WeightedSampleSet {
            params,
            summaries,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.params.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn parameter_dim(&self) -> usize {
        self.params.ncols()
    }

    pub fn summary_dim(&self) -> usize {
        self.summaries.ncols()
    }

    pub fn params(&self) -> &DMatrix<f64> {
        &self.params
    }

    pub fn summaries(&self) -> &DMatrix<f64> {
        &self.summaries
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn param_column(&self, i: usize) -> Vec<f64> {
        self.params.column(i).iter().copied().collect()
    }

    /// True when every weight equals 1/n up to `tol` (absolute).
    pub fn has_uniform_weights(&self, tol: f64) -> bool {
        let u = 1.0 / self.len() as f64;
        self.weights.iter().all(|w| (w - u).abs() <= tol)
    }

    /// Replaces the parameter matrix, keeping summaries and weights.
    pub fn with_params(&self, params: DMatrix<f64>) -> Result<Self> {
        if params.nrows() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: params.nrows(),
            });
        }
        Ok(WeightedSampleSet {
            params,
            summaries: self.summaries.clone(),
            weights: self.weights.clone(),
        })
    }

    /// Keeps only the given parameter columns (summaries untouched).
    pub fn select_param_columns(&self, cols: &[usize]) -> Result<Self> {
        for &c in cols {
            if c >= self.parameter_dim() {
                return Err(Error::invalid(format!("parameter column {c} out of range")));
            }
        }
        let params = self.params.select_columns(cols.iter());
        Ok(WeightedSampleSet {
            params,
            summaries: self.summaries.clone(),
            weights: self.weights.clone(),
        })
    }
}

/// Index of the unordered pair (i, j), i < j, in row-major upper-triangle
/// order over `p` items.
pub fn pair_index(i: usize, j: usize, p: usize) -> usize {
    debug_assert!(i < j && j < p);
    i * (2 * p - i - 1) / 2 + (j - i - 1)
}

/// Number of unordered pairs over `p` items.
pub fn pair_count(p: usize) -> usize {
    p * p.saturating_sub(1) / 2
}

/// All unordered pairs (i, j) with i < j < p, in `pair_index` order.
pub fn all_pairs(p: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(pair_count(p));
    for i in 0..p {
        for j in (i + 1)..p {
            out.push((i, j));
        }
    }
    out
}

/// Declares which summary-statistic indices are informative for each
/// parameter and parameter pair. Pairs default to the union of the two
/// univariate subsets unless explicitly overridden.
#[derive(Clone, Debug)]
pub struct SummaryMap {
    summary_dim: usize,
    univariate: Vec<Vec<usize>>,
    overrides: BTreeMap<(usize, usize), Vec<usize>>,
}

impl SummaryMap {
    pub fn new(summary_dim: usize, univariate: Vec<Vec<usize>>) -> Result<Self> {
        for (i, subset) in univariate.iter().enumerate() {
            if subset.is_empty() {
                return Err(Error::MissingMapEntry(i));
            }
            for &s in subset {
                if s >= summary_dim {
                    return Err(Error::invalid(format!(
                        "summary index {s} out of range for parameter {i} (q = {summary_dim})"
                    )));
                }
            }
        }
        let univariate = univariate
            .into_iter()
            .map(|mut v| {
                v.sort_unstable();
                v.dedup();
                v
            })
            .collect();
        Ok(SummaryMap {
            summary_dim,
            univariate,
            overrides: BTreeMap::new(),
        })
    }

    pub fn parameter_dim(&self) -> usize {
        self.univariate.len()
    }

    pub fn summary_dim(&self) -> usize {
        self.summary_dim
    }

    pub fn univariate(&self, i: usize) -> Result<&[usize]> {
        self.univariate
            .get(i)
            .map(|v| v.as_slice())
            .ok_or(Error::MissingMapEntry(i))
    }

    /// Overrides the subset for one unordered pair.
    pub fn set_pair(&mut self, i: usize, j: usize, subset: Vec<usize>) -> Result<()> {
        if i == j || i.max(j) >= self.parameter_dim() {
            return Err(Error::invalid(format!("invalid pair ({i}, {j})")));
        }
        if subset.is_empty() {
            return Err(Error::invalid(format!("empty subset for pair ({i}, {j})")));
        }
        for &s in &subset {
            if s >= self.summary_dim {
                return Err(Error::invalid(format!(
                    "summary index {s} out of range for pair ({i}, {j})"
                )));
            }
        }
        let key = (i.min(j), i.max(j));
        let mut subset = subset;
        subset.sort_unstable();
        subset.dedup();
        self.overrides.insert(key, subset);
        Ok(())
    }

    /// Subset informative for the pair (i, j): an explicit override if one
    /// was set, otherwise the union of the two univariate subsets.
    pub fn pairwise(&self, i: usize, j: usize) -> Result<Vec<usize>> {
        let key = (i.min(j), i.max(j));
        if let Some(v) = self.overrides.get(&key) {
            return Ok(v.clone());
        }
        let mut merged: Vec<usize> = self.univariate(key.0)?.to_vec();
        merged.extend_from_slice(self.univariate(key.1)?);
        merged.sort_unstable();
        merged.dedup();
        Ok(merged)
    }
}
