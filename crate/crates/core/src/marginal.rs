//! Univariate marginal representations: the nonparametric estimate built
//! from an ABC sample (interpolated CDF/quantile plus a Gaussian KDE), and an
//! exact Gaussian marginal used where closed forms are wanted.

use crate::error::{Error, Result};
use crate::norm;

/// Behaviour required of a univariate marginal inside a meta-Gaussian joint.
pub trait Marginal: Send + Sync {
    /// Distribution function, clamped inside (0, 1).
    fn cdf(&self, x: f64) -> f64;

    /// Quantile function (inverse of `cdf` where that is well defined).
    fn quantile(&self, p: f64) -> f64;

    /// Log density; `-inf` where the density vanishes.
    fn log_pdf(&self, x: f64) -> f64;

    fn mean(&self) -> f64;

    fn sd(&self) -> f64;

    fn iqr(&self) -> f64 {
        self.quantile(0.75) - self.quantile(0.25)
    }
}

/// One parameter's marginal estimated from an equally weighted sample:
/// linear-interpolated CDF through the points (x_(r), r/(n+1)) and a Gaussian
/// KDE with Silverman's rule-of-thumb bandwidth.
#[derive(Clone, Debug)]
pub struct MarginalEstimate {
    sorted: Vec<f64>,
    /// Plotting positions paired with `knots`; ties collapse to one knot at
    /// their average position so the CDF stays a function.
    knots: Vec<f64>,
    positions: Vec<f64>,
    bandwidth: f64,
    mean: f64,
    sd: f64,
}

impl MarginalEstimate {
    pub fn from_sample(values: &[f64]) -> Result<Self> {
        let n = values.len();
        if n < 2 {
            return Err(Error::DegenerateSample(
                "marginal estimate needs at least two points".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("marginal sample contains non-finite values"));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);

        let mean = sorted.iter().sum::<f64>() / n as f64;
        let var = sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let sd = var.sqrt();

        let nf = (n + 1) as f64;
        let mut knots: Vec<f64> = Vec::with_capacity(n);
        let mut positions: Vec<f64> = Vec::with_capacity(n);
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && sorted[j + 1] == sorted[i] {
                j += 1;
            }
            // ranks i+1 ..= j+1 share the value; average their positions
            let pos = (i + 1 + j + 1) as f64 / 2.0 / nf;
            knots.push(sorted[i]);
            positions.push(pos);
            i = j + 1;
        }
        if knots.len() < 2 {
            return Err(Error::DegenerateSample(
                "marginal sample is constant".into(),
            ));
        }

        let q25 = interp(&positions, &knots, 0.25);
        let q75 = interp(&positions, &knots, 0.75);
        let iqr = q75 - q25;
        let spread = match (sd > 0.0, iqr > 0.0) {
            (true, true) => sd.min(iqr / 1.34),
            (true, false) => sd,
            (false, true) => iqr / 1.34,
            (false, false) => {
                return Err(Error::DegenerateSample(
                    "sample has zero spread; cannot pick a bandwidth".into(),
                ))
            }
        };
        let bandwidth = 0.9 * spread * (n as f64).powf(-0.2);

        Ok(MarginalEstimate {
            sorted,
            knots,
            positions,
            bandwidth,
            mean,
            sd,
        })
    }

    /// Rebuilds the estimate from its serialized parts. The bandwidth is
    /// taken as stored so round trips are bit exact.
    pub fn from_parts(sorted: Vec<f64>, bandwidth: f64) -> Result<Self> {
        let mut est = MarginalEstimate::from_sample(&sorted)?;
        if !(bandwidth > 0.0) {
            return Err(Error::invalid("bandwidth must be positive"));
        }
        est.bandwidth = bandwidth;
        Ok(est)
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn sorted_sample(&self) -> &[f64] {
        &self.sorted
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn min(&self) -> f64 {
        self.sorted[0]
    }

    pub fn max(&self) -> f64 {
        *self.sorted.last().unwrap()
    }
}

/// Piecewise-linear interpolation of ys over xs (both sorted ascending),
/// clamped at the ends.
fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    debug_assert_eq!(xs.len(), ys.len());
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[xs.len() - 1] {
        return ys[ys.len() - 1];
    }
    let hi = xs.partition_point(|v| *v < x);
    let lo = hi - 1;
    if xs[hi] == xs[lo] {
        return 0.5 * (ys[lo] + ys[hi]);
    }
    let t = (x - xs[lo]) / (xs[hi] - xs[lo]);
    ys[lo] + t * (ys[hi] - ys[lo])
}

impl Marginal for MarginalEstimate {
    fn cdf(&self, x: f64) -> f64 {
        interp(&self.knots, &self.positions, x)
    }

    fn quantile(&self, p: f64) -> f64 {
        interp(&self.positions, &self.knots, p)
    }

    fn log_pdf(&self, x: f64) -> f64 {
        // Gaussian KDE truncated at 8 bandwidths; the discarded tail mass is
        // below 1e-15 of a kernel.
        let h = self.bandwidth;
        let lo = self.sorted.partition_point(|v| *v < x - 8.0 * h);
        let hi = self.sorted.partition_point(|v| *v <= x + 8.0 * h);
        if lo >= hi {
            return f64::NEG_INFINITY;
        }
        let mut acc = 0.0;
        for v in &self.sorted[lo..hi] {
            let z = (x - v) / h;
            acc += (-0.5 * z * z).exp();
        }
        if acc <= 0.0 {
            return f64::NEG_INFINITY;
        }
        acc.ln() - (self.sorted.len() as f64).ln() - h.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }

    fn mean(&self) -> f64 {
        self.mean
    }

    fn sd(&self) -> f64 {
        self.sd
    }
}

/// An exact normal marginal.
#[derive(Clone, Copy, Debug)]
pub struct GaussianMarginal {
    pub mean: f64,
    pub sd: f64,
}

impl GaussianMarginal {
    pub fn new(mean: f64, sd: f64) -> Result<Self> {
        if !(sd > 0.0) || !mean.is_finite() {
            return Err(Error::invalid("Gaussian marginal needs finite mean and sd > 0"));
        }
        Ok(GaussianMarginal { mean, sd })
    }
}

impl Marginal for GaussianMarginal {
    fn cdf(&self, x: f64) -> f64 {
        norm::cdf((x - self.mean) / self.sd)
            .clamp(f64::MIN_POSITIVE, 1.0 - 1e-16)
    }

    fn quantile(&self, p: f64) -> f64 {
        self.mean + self.sd * norm::quantile(p)
    }

    fn log_pdf(&self, x: f64) -> f64 {
        norm::ln_pdf_scaled(x, self.mean, self.sd)
    }

    fn mean(&self) -> f64 {
        self.mean
    }

    fn sd(&self) -> f64 {
        self.sd
    }

    fn iqr(&self) -> f64 {
        2.0 * self.sd * norm::quantile(0.75)
    }
}
