//! Prior-predictive simulation and rejection/importance selection.
//!
//! A [`ReferenceTable`] holds N simulated (parameter, summary) pairs with
//! importance ratios. It is built once and reused for every univariate and
//! pairwise selection, which is the main parallel axis of the whole pipeline.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dist::{uniform_kernel_threshold, DistanceSpec};
use crate::error::{Error, Result};
use crate::rng::{labels, SeededRng};
use crate::types::{SummaryMap, SummaryVector, WeightedSampleSet};

/// Number of times one table row is retried when the simulator fails before
/// the whole build is abandoned.
pub const SIMULATOR_RETRIES: usize = 10;

/// A generative model usable with the sampling engine: a prior (and optional
/// importance distribution) over parameters plus a summary-statistic
/// simulator.
pub trait SimulatorModel: Sync {
    fn parameter_dim(&self) -> usize;

    fn summary_dim(&self) -> usize;

    /// Stable identifier used in cache-file headers.
    fn model_id(&self) -> String;

    fn sample_prior(&self, rng: &mut ChaCha8Rng) -> DVector<f64>;

    /// Log prior density, up to an additive constant.
    fn log_prior_density(&self, theta: &DVector<f64>) -> f64;

    /// Importance distribution; defaults to the prior. Must be positive
    /// wherever the prior is positive.
    fn sample_importance(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        self.sample_prior(rng)
    }

    /// Log importance density, up to the same additive constant convention
    /// as [`SimulatorModel::log_prior_density`].
    fn log_importance_density(&self, theta: &DVector<f64>) -> f64 {
        self.log_prior_density(theta)
    }

    /// Simulates a dataset at `theta` and reduces it to summary statistics.
    fn simulate_summaries(
        &self,
        theta: &DVector<f64>,
        rng: &mut ChaCha8Rng,
    ) -> Result<DVector<f64>>;

    /// Declares which summaries are informative for which parameters.
    fn summary_map(&self) -> Result<SummaryMap>;
}

/// N prior-predictive (theta, s) pairs with importance ratios p/f.
#[derive(Clone, Debug)]
pub struct ReferenceTable {
    params: DMatrix<f64>,
    summaries: DMatrix<f64>,
    ratios: DVector<f64>,
    seed: u64,
    stream: u64,
    model_id: String,
}

impl ReferenceTable {
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

    pub fn ratios(&self) -> &DVector<f64> {
        &self.ratios
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn from_parts(
        params: DMatrix<f64>,
        summaries: DMatrix<f64>,
        ratios: Vec<f64>,
        model_id: String,
    ) -> Result<Self> {
        if params.nrows() == 0 {
            return Err(Error::invalid("reference table must have at least one row"));
        }
        if summaries.nrows() != params.nrows() || ratios.len() != params.nrows() {
            return Err(Error::DimensionMismatch {
                expected: params.nrows(),
                got: summaries.nrows().min(ratios.len()),
            });
        }
        if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::invalid("importance ratios must be finite and nonnegative"));
        }
        Ok(ReferenceTable {
            params,
            summaries,
            ratios: DVector::from_vec(ratios),
            seed: 0,
            stream: 0,
            model_id,
        })
    }
}

/// Simulates `n` rows from the model's importance distribution. Rows are
/// generated on independent streams, so the table is identical no matter how
/// the work is scheduled.
pub fn build_reference_table<M: SimulatorModel + ?Sized>(
    model: &M,
    n: usize,
    rng: SeededRng,
) -> Result<ReferenceTable> {
    if n == 0 {
        return Err(Error::invalid("requested an empty reference table"));
    }
    let p = model.parameter_dim();
    let q = model.summary_dim();
    let row_space = rng.child(labels::TABLE);

    let rows: Result<Vec<(DVector<f64>, DVector<f64>, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut r = row_space.stream(i as u64).rng();
            let mut last_err = None;
            for _ in 0..SIMULATOR_RETRIES {
                let theta = model.sample_importance(&mut r);
                debug_assert_eq!(theta.len(), p);
                match model.simulate_summaries(&theta, &mut r) {
                    Ok(s) if s.len() == q && s.iter().all(|v| v.is_finite()) => {
                        let ratio = (model.log_prior_density(&theta)
                            - model.log_importance_density(&theta))
                        .exp();
                        return Ok((theta, s, ratio));
                    }
                    Ok(_) => {
                        last_err = Some("simulator returned malformed summaries".to_string());
                    }
                    Err(e) => last_err = Some(e.to_string()),
                }
            }
            Err(Error::SimulatorFailure {
                attempts: SIMULATOR_RETRIES,
                reason: last_err.unwrap_or_default(),
            })
        })
        .collect();
    let rows = rows?;

    let mut params = DMatrix::zeros(n, p);
    let mut summaries = DMatrix::zeros(n, q);
    let mut ratios = DVector::zeros(n);
    for (i, (theta, s, ratio)) in rows.into_iter().enumerate() {
        params.row_mut(i).copy_from(&theta.transpose());
        summaries.row_mut(i).copy_from(&s.transpose());
        ratios[i] = ratio;
    }
    Ok(ReferenceTable {
        params,
        summaries,
        ratios,
        seed: rng.seed(),
        stream: rng.stream_id(),
        model_id: model.model_id(),
    })
}

/// Distances from every table row to `s_obs` over the given summary subset.
pub fn subset_distances(
    table: &ReferenceTable,
    s_obs: &SummaryVector,
    subset: &[usize],
    spec: &DistanceSpec,
) -> Result<Vec<f64>> {
    if subset.is_empty() {
        return Err(Error::invalid("summary subset must be nonempty"));
    }
    for &s in subset {
        if s >= table.summary_dim() {
            return Err(Error::invalid(format!("summary index {s} out of range")));
        }
    }
    if s_obs.len() != table.summary_dim() {
        return Err(Error::DimensionMismatch {
            expected: table.summary_dim(),
            got: s_obs.len(),
        });
    }
    let kernel = spec.projected(subset)?;
    let obs: Vec<f64> = subset.iter().map(|&k| s_obs.as_slice()[k]).collect();
    let summaries = table.summaries();
    let n = table.len();
    let mut out = vec![0.0; n];
    out.par_iter_mut().enumerate().for_each(|(i, d)| {
        let mut diff: Vec<f64> = subset
            .iter()
            .zip(&obs)
            .map(|(&k, o)| summaries[(i, k)] - o)
            .collect();
        *d = kernel.eval_diff(&mut diff);
    });
    Ok(out)
}

/// Uniform-kernel ABC selection: keeps the rows whose projected distance to
/// `s_obs` is within the `quantile`-level threshold (ties at the threshold
/// are all accepted), weighting survivors by their importance ratios.
pub fn abc_select(
    table: &ReferenceTable,
    s_obs: &SummaryVector,
    subset: &[usize],
    quantile: f64,
    spec: &DistanceSpec,
) -> Result<WeightedSampleSet> {
    let distances = subset_distances(table, s_obs, subset, spec)?;
    let h = uniform_kernel_threshold(&distances, quantile)?;
    let keep: Vec<usize> = distances
        .iter()
        .enumerate()
        .filter_map(|(i, d)| (*d <= h).then_some(i))
        .collect();
    if keep.is_empty() {
        return Err(Error::invalid("selection kept no rows"));
    }
    let params = table.params().select_rows(keep.iter());
    let summaries = table.summaries().select_rows(keep.iter());
    let weights: Vec<f64> = keep.iter().map(|&i| table.ratios()[i]).collect();
    if weights.iter().sum::<f64>() <= 0.0 {
        return Err(Error::DegenerateSample(
            "all selected rows carry zero importance weight".into(),
        ));
    }
    WeightedSampleSet::new(params, summaries, weights)
}

const CACHE_MAGIC: &[u8; 8] = b"ABCTBL01";

impl ReferenceTable {
    /// Writes the table to a columnar binary cache file. Doubles round-trip
    /// bit exactly.
    pub fn write_cache(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        w.write_all(CACHE_MAGIC)?;
        for v in [
            self.len() as u64,
            self.parameter_dim() as u64,
            self.summary_dim() as u64,
            self.seed,
            self.stream,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        let id = self.model_id.as_bytes();
        w.write_all(&(id.len() as u64).to_le_bytes())?;
        w.write_all(id)?;
        for i in 0..self.len() {
            for j in 0..self.parameter_dim() {
                w.write_all(&self.params[(i, j)].to_le_bytes())?;
            }
            for j in 0..self.summary_dim() {
                w.write_all(&self.summaries[(i, j)].to_le_bytes())?;
            }
            w.write_all(&self.ratios[i].to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_cache(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut r = BufReader::new(file);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(Error::Format(format!(
                "{} is not a reference-table cache",
                path.display()
            )));
        }
        let mut u64buf = [0u8; 8];
        let mut next_u64 = |r: &mut BufReader<std::fs::File>| -> Result<u64> {
            r.read_exact(&mut u64buf)?;
            Ok(u64::from_le_bytes(u64buf))
        };
        let n = next_u64(&mut r)? as usize;
        let p = next_u64(&mut r)? as usize;
        let q = next_u64(&mut r)? as usize;
        let seed = next_u64(&mut r)?;
        let stream = next_u64(&mut r)?;
        let id_len = next_u64(&mut r)? as usize;
        let mut id = vec![0u8; id_len];
        r.read_exact(&mut id)?;
        let model_id = String::from_utf8(id)
            .map_err(|_| Error::Format("model id is not valid UTF-8".into()))?;
        let mut params = DMatrix::zeros(n, p);
        let mut summaries = DMatrix::zeros(n, q);
        let mut ratios = DVector::zeros(n);
        let mut f64buf = [0u8; 8];
        let mut next_f64 = |r: &mut BufReader<std::fs::File>| -> Result<f64> {
            r.read_exact(&mut f64buf)?;
            Ok(f64::from_le_bytes(f64buf))
        };
        for i in 0..n {
            for j in 0..p {
                params[(i, j)] = next_f64(&mut r)?;
            }
            for j in 0..q {
                summaries[(i, j)] = next_f64(&mut r)?;
            }
            ratios[i] = next_f64(&mut r)?;
        }
        Ok(ReferenceTable {
            params,
            summaries,
            ratios,
            seed,
            stream,
            model_id,
        })
    }

    /// CSV export with columns `theta_1..theta_p, s_1..s_q, ratio`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        let mut header = Vec::new();
        for j in 1..=self.parameter_dim() {
            header.push(format!("theta_{j}"));
        }
        for j in 1..=self.summary_dim() {
            header.push(format!("s_{j}"));
        }
        header.push("ratio".into());
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.len() {
            let mut fields = Vec::with_capacity(header.len());
            for j in 0..self.parameter_dim() {
                fields.push(format!("{}", self.params[(i, j)]));
            }
            for j in 0..self.summary_dim() {
                fields.push(format!("{}", self.summaries[(i, j)]));
            }
            fields.push(format!("{}", self.ratios[i]));
            writeln!(w, "{}", fields.join(","))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the CSV schema written by [`ReferenceTable::write_csv`]. The
    /// declared dimensions must match the header.
    pub fn read_csv(path: &Path, p: usize, q: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Format(format!("{}: empty file", path.display())))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        let expected = p + q + 1;
        if cols.len() != expected {
            return Err(Error::Format(format!(
                "{}: expected {expected} columns for p={p}, q={q}, found {}",
                path.display(),
                cols.len()
            )));
        }
        for j in 0..p {
            if cols[j] != format!("theta_{}", j + 1) {
                return Err(Error::Format(format!(
                    "{}: column {} should be theta_{}, found '{}'",
                    path.display(),
                    j + 1,
                    j + 1,
                    cols[j]
                )));
            }
        }
        for j in 0..q {
            if cols[p + j] != format!("s_{}", j + 1) {
                return Err(Error::Format(format!(
                    "{}: column {} should be s_{}, found '{}'",
                    path.display(),
                    p + j + 1,
                    j + 1,
                    cols[p + j]
                )));
            }
        }
        if cols[p + q] != "ratio" {
            return Err(Error::Format(format!(
                "{}: last column should be 'ratio', found '{}'",
                path.display(),
                cols[p + q]
            )));
        }
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (lineno, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut row = Vec::with_capacity(expected);
            for (c, field) in line.split(',').enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::Format(format!(
                        "{}:{}: column {} is not a number: '{}'",
                        path.display(),
                        lineno + 1,
                        c + 1,
                        field
                    ))
                })?;
                row.push(v);
            }
            if row.len() != expected {
                return Err(Error::Format(format!(
                    "{}:{}: expected {expected} fields, found {}",
                    path.display(),
                    lineno + 1,
                    row.len()
                )));
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::Format(format!("{}: no data rows", path.display())));
        }
        let n = rows.len();
        let mut params = DMatrix::zeros(n, p);
        let mut summaries = DMatrix::zeros(n, q);
        let mut ratios = Vec::with_capacity(n);
        for (i, row) in rows.iter().enumerate() {
            for j in 0..p {
                params[(i, j)] = row[j];
            }
            for j in 0..q {
                summaries[(i, j)] = row[p + j];
            }
            ratios.push(row[p + q]);
        }
        ReferenceTable::from_parts(
            params,
            summaries,
            ratios,
            format!("imported:{}", path.display()),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::toy::TwistedNormalModel;

    fn toy(p: usize) -> TwistedNormalModel {
        TwistedNormalModel::new(p, 0.1, 1.0).unwrap()
    }

    #[test]
    fn empty_request_errors() {
        assert!(build_reference_table(&toy(2), 0, SeededRng::new(1)).is_err());
    }

    #[test]
    fn table_build_is_deterministic() {
        let model = toy(2);
        let a = build_reference_table(&model, 1000, SeededRng::new(3)).unwrap();
        let b = build_reference_table(&model, 1000, SeededRng::new(3)).unwrap();
        assert_eq!(a.params(), b.params());
        assert_eq!(a.summaries(), b.summaries());
    }

    #[test]
    fn prior_mean_of_theta1_matches_moment() {
        // E[theta_1] = 0 with sd 10 under the twisted prior.
        let model = toy(2);
        let n = 100_000;
        let table = build_reference_table(&model, n, SeededRng::new(17)).unwrap();
        let mean = table.params().column(0).mean();
        let bound = 3.0 * 10.0 / (n as f64).sqrt();
        assert!(mean.abs() < bound, "mean {mean} exceeds {bound}");
    }

    #[test]
    fn full_quantile_keeps_everything_with_equal_weights() {
        let model = toy(2);
        let table = build_reference_table(&model, 500, SeededRng::new(4)).unwrap();
        let s_obs = SummaryVector::new(vec![10.0, 0.0]).unwrap();
        let sel = abc_select(&table, &s_obs, &[0, 1], 1.0, &DistanceSpec::Euclidean).unwrap();
        assert_eq!(sel.len(), 500);
        assert!(sel.has_uniform_weights(1e-12));
    }

    #[test]
    fn selection_size_matches_quantile() {
        let model = toy(2);
        let table = build_reference_table(&model, 2000, SeededRng::new(5)).unwrap();
        let s_obs = SummaryVector::new(vec![10.0, 0.0]).unwrap();
        let sel = abc_select(&table, &s_obs, &[0], 0.05, &DistanceSpec::Euclidean).unwrap();
        assert_eq!(sel.len(), 100);
    }

    #[test]
    fn nested_thresholds_nest_selections() {
        let model = toy(2);
        let table = build_reference_table(&model, 3000, SeededRng::new(6)).unwrap();
        let s_obs = SummaryVector::new(vec![10.0, 0.0]).unwrap();
        let inner = abc_select(&table, &s_obs, &[0], 0.02, &DistanceSpec::Euclidean).unwrap();
        let outer = abc_select(&table, &s_obs, &[0], 0.10, &DistanceSpec::Euclidean).unwrap();
        // Every inner row appears among the outer rows.
        let outer_rows: Vec<Vec<u64>> = (0..outer.len())
            .map(|i| {
                outer
                    .params()
                    .row(i)
                    .iter()
                    .map(|v| v.to_bits())
                    .collect()
            })
            .collect();
        for i in 0..inner.len() {
            let row: Vec<u64> = inner.params().row(i).iter().map(|v| v.to_bits()).collect();
            assert!(outer_rows.contains(&row));
        }
    }

    #[test]
    fn ties_at_threshold_are_all_accepted() {
        let params = DMatrix::from_fn(6, 1, |i, _| i as f64);
        let summaries =
            DMatrix::from_row_slice(6, 1, &[0.0, 1.0, 1.0, 1.0, 5.0, 9.0]);
        let table = ReferenceTable::from_parts(
            params,
            summaries,
            vec![1.0; 6],
            "tie-test".into(),
        )
        .unwrap();
        let s_obs = SummaryVector::new(vec![0.0]).unwrap();
        // quantile 1/3 of 6 rows -> k = 2, h = 1.0; all three ties at 1.0 kept.
        let sel = abc_select(&table, &s_obs, &[0], 1.0 / 3.0, &DistanceSpec::Euclidean).unwrap();
        assert_eq!(sel.len(), 4);
    }

    #[test]
    fn cache_round_trip_is_bit_exact() {
        let model = toy(3);
        let table = build_reference_table(&model, 200, SeededRng::new(7)).unwrap();
        let dir = std::env::temp_dir().join("copula_abc_test_cache");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("table.bin");
        table.write_cache(&path).unwrap();
        let back = ReferenceTable::read_cache(&path).unwrap();
        assert_eq!(table.params(), back.params());
        assert_eq!(table.summaries(), back.summaries());
        assert_eq!(table.ratios(), back.ratios());
        assert_eq!(table.model_id(), back.model_id());
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn csv_round_trip_preserves_values() {
        let model = toy(2);
        let table = build_reference_table(&model, 50, SeededRng::new(8)).unwrap();
        let dir = std::env::temp_dir().join("copula_abc_test_csv");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("table.csv");
        table.write_csv(&path).unwrap();
        let back = ReferenceTable::read_csv(&path, 2, 2).unwrap();
        assert_eq!(table.params(), back.params());
        assert_eq!(table.summaries(), back.summaries());
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn csv_schema_violations_are_reported() {
        let dir = std::env::temp_dir().join("copula_abc_test_csv_bad");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.csv");
        std::fs::write(&path, "theta_1,s_1,ratio\n1.0,2.0,nope\n").unwrap();
        let err = ReferenceTable::read_csv(&path, 1, 1).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
        std::fs::remove_file(&path).ok();
    }
}
