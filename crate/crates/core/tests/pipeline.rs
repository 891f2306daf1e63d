//! Cross-module pipeline checks against independent oracles: grid
//! quadrature for selection, conjugate closed forms for the copula fit, and
//! round trips through sampling.

use copula_abc::copula::{fit_copula, pairwise_abc_sample, pairwise_lambda, AdjustOptions};
use copula_abc::diag::{
    copula_bivariate_grid, copula_bivariate_mass, kde2d, kl_grid, marginal_grid, AxisSpec,
    GridSpec,
};
use copula_abc::dist::DistanceSpec;
use copula_abc::marginal::Marginal;
use copula_abc::models::toy::TwistedNormalModel;
use copula_abc::norm;
use copula_abc::rng::SeededRng;
use copula_abc::table::{abc_select, build_reference_table, SimulatorModel};
use copula_abc::types::{SummaryMap, SummaryVector};
use nalgebra::{Cholesky, DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// theta ~ N(0, I_2), y = theta + noise with correlated Gaussian noise; the
/// posterior is Gaussian with a closed form, giving an exact oracle for the
/// fitted correlation.
struct LinearGaussian {
    noise_chol: DMatrix<f64>,
}

impl LinearGaussian {
    fn new(rho: f64) -> Self {
        let noise = DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]);
        LinearGaussian {
            noise_chol: Cholesky::new(noise).unwrap().unpack(),
        }
    }

    fn noise_cov(&self) -> DMatrix<f64> {
        &self.noise_chol * self.noise_chol.transpose()
    }

    /// Posterior covariance (I + Sigma_n^-1)^-1 and its correlation.
    fn posterior_correlation(&self) -> f64 {
        let sn_inv = self.noise_cov().try_inverse().unwrap();
        let post = (DMatrix::identity(2, 2) + sn_inv).try_inverse().unwrap();
        post[(0, 1)] / (post[(0, 0)] * post[(1, 1)]).sqrt()
    }
}

impl SimulatorModel for LinearGaussian {
    fn parameter_dim(&self) -> usize {
        2
    }
    fn summary_dim(&self) -> usize {
        2
    }
    fn model_id(&self) -> String {
        "linear-gaussian".into()
    }
    fn sample_prior(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        DVector::from_fn(2, |_, _| StandardNormal.sample(rng))
    }
    fn log_prior_density(&self, theta: &DVector<f64>) -> f64 {
        -0.5 * theta.norm_squared()
    }
    fn simulate_summaries(
        &self,
        theta: &DVector<f64>,
        rng: &mut ChaCha8Rng,
    ) -> copula_abc::Result<DVector<f64>> {
        let eps = DVector::from_fn(2, |_, _| StandardNormal.sample(rng));
        Ok(theta + &self.noise_chol * eps)
    }
    fn summary_map(&self) -> copula_abc::Result<SummaryMap> {
        SummaryMap::new(2, vec![vec![0], vec![1]])
    }
}

// Selection on the first coordinate only: the retained theta_1 mean must
// match 1-D grid quadrature of N(y_1; t, 1) x twisted prior margin.
#[test]
fn abc_select_matches_quadrature_posterior_mean() {
    let model = TwistedNormalModel::new(2, 0.1, 1.0).unwrap();
    let n = 1_000_000;
    let table = build_reference_table(&model, n, SeededRng::new(101)).unwrap();
    let s_obs = model.observed_summaries();
    let sel = abc_select(&table, &s_obs, &[0], 0.01, &DistanceSpec::Euclidean).unwrap();
    assert_eq!(sel.len(), 10_000);
    let mean: f64 = sel.param_column(0).iter().sum::<f64>() / sel.len() as f64;

    // Quadrature oracle: posterior for theta_1 given s_1 = 10 only. The
    // likelihood is N(10; t, 1); the prior margin of theta_1 is N(0, 100).
    let lo = -40.0;
    let hi = 40.0;
    let m = 40_001;
    let step = (hi - lo) / (m - 1) as f64;
    let mut mass = 0.0;
    let mut mean_acc = 0.0;
    for k in 0..m {
        let t = lo + k as f64 * step;
        let w = if k == 0 || k == m - 1 { 0.5 } else { 1.0 };
        let val = (norm::ln_pdf_scaled(10.0, t, 1.0) + norm::ln_pdf_scaled(t, 0.0, 10.0)).exp();
        mass += w * val;
        mean_acc += w * val * t;
    }
    let oracle_mean = mean_acc / mass;
    assert!(
        (mean - oracle_mean).abs() < 0.2,
        "selected mean {mean}, oracle {oracle_mean}"
    );
}

#[test]
fn two_parameter_copula_equals_single_pairwise_lambda() {
    let model = TwistedNormalModel::new(2, 0.1, 1.0).unwrap();
    let table = build_reference_table(&model, 50_000, SeededRng::new(7)).unwrap();
    let s_obs = model.observed_summaries();
    let smap = model.summary_map().unwrap();
    let adjust = AdjustOptions::default();
    let post = fit_copula(&table, &s_obs, &smap, 0.02, &DistanceSpec::Euclidean, adjust).unwrap();

    // Rebuild the one pairwise sample by hand and compare the correlation.
    let m0 = post.marginal(0);
    let m1 = post.marginal(1);
    let (a, b) = pairwise_abc_sample(
        &table,
        &s_obs,
        &smap,
        (0, 1),
        0.02,
        &DistanceSpec::Euclidean,
        adjust,
        Some((m0, m1)),
    )
    .unwrap();
    let lambda = pairwise_lambda(&a, &b).unwrap();
    assert_eq!(post.correlation().entry(0, 1), lambda);
}

#[test]
fn fitted_lambda_matches_conjugate_posterior_correlation() {
    let model = LinearGaussian::new(0.6);
    let truth = model.posterior_correlation();
    let table = build_reference_table(&model, 400_000, SeededRng::new(55)).unwrap();
    let mut y_obs_rng = SeededRng::new(56).rng();
    let theta0 = DVector::from_vec(vec![0.5, -0.3]);
    let y_obs = model.simulate_summaries(&theta0, &mut y_obs_rng).unwrap();
    let s_obs = SummaryVector::new(y_obs.iter().copied().collect()).unwrap();
    let smap = model.summary_map().unwrap();
    let post = fit_copula(
        &table,
        &s_obs,
        &smap,
        0.005,
        &DistanceSpec::Euclidean,
        AdjustOptions::default(),
    )
    .unwrap();
    let lambda = post.correlation().entry(0, 1);
    assert!(
        (lambda - truth).abs() < 0.03,
        "lambda {lambda}, conjugate truth {truth}"
    );
}

#[test]
fn toy_copula_margin_tracks_pairwise_kde() {
    let model = TwistedNormalModel::new(5, 0.1, 1.0).unwrap();
    let table = build_reference_table(&model, 200_000, SeededRng::new(2)).unwrap();
    let s_obs = model.observed_summaries();
    let smap = model.summary_map().unwrap();
    let adjust = AdjustOptions::default();
    let post = fit_copula(&table, &s_obs, &smap, 0.01, &DistanceSpec::Euclidean, adjust).unwrap();

    let grid = marginal_grid(&post, (0, 1), 150, 6.0).unwrap();
    let copula_grid = copula_bivariate_grid(&post, (0, 1), &grid).unwrap();
    let (a, b) = pairwise_abc_sample(
        &table,
        &s_obs,
        &smap,
        (0, 1),
        0.01,
        &DistanceSpec::Euclidean,
        adjust,
        Some((post.marginal(0), post.marginal(1))),
    )
    .unwrap();
    let weights = vec![1.0; a.len()];
    let kde = kde2d(&a, &b, &weights, &grid).unwrap();
    let kl = kl_grid(&kde, &copula_grid).unwrap();
    assert!(kl < 0.05, "KL(kde || copula) = {kl}");
}

#[test]
fn fitted_bivariate_margins_have_unit_mass() {
    let model = TwistedNormalModel::new(5, 0.1, 1.0).unwrap();
    let table = build_reference_table(&model, 100_000, SeededRng::new(3)).unwrap();
    let s_obs = model.observed_summaries();
    let smap = model.summary_map().unwrap();
    let post = fit_copula(
        &table,
        &s_obs,
        &smap,
        0.01,
        &DistanceSpec::Euclidean,
        AdjustOptions::default(),
    )
    .unwrap();
    for (i, j) in copula_abc::types::all_pairs(5) {
        let grid = marginal_grid(&post, (i, j), 161, 8.0).unwrap();
        let mass = copula_bivariate_mass(&post, (i, j), &grid).unwrap();
        assert!(
            (mass - 1.0).abs() <= 0.01,
            "pair ({i}, {j}) mass {mass}"
        );
    }
}

/// One-parameter model: y_bar of 5 observations at sd 1, flat-ish prior.
struct MeanModel;

impl SimulatorModel for MeanModel {
    fn parameter_dim(&self) -> usize {
        1
    }
    fn summary_dim(&self) -> usize {
        1
    }
    fn model_id(&self) -> String {
        "mean-model".into()
    }
    fn sample_prior(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let z: f64 = StandardNormal.sample(rng);
        DVector::from_vec(vec![10.0 * z])
    }
    fn log_prior_density(&self, theta: &DVector<f64>) -> f64 {
        -0.5 * (theta[0] / 10.0).powi(2)
    }
    fn simulate_summaries(
        &self,
        theta: &DVector<f64>,
        rng: &mut ChaCha8Rng,
    ) -> copula_abc::Result<DVector<f64>> {
        let mean: f64 = (0..5)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                theta[0] + z
            })
            .sum::<f64>()
            / 5.0;
        Ok(DVector::from_vec(vec![mean]))
    }
    fn summary_map(&self) -> copula_abc::Result<SummaryMap> {
        SummaryMap::new(1, vec![vec![0]])
    }
}

// Single-parameter fit (no pairs at all) plus the approximate MLE against
// the known maximum-likelihood estimate, the sample mean.
#[test]
fn one_parameter_mle_matches_sample_mean() {
    let model = MeanModel;
    let table = build_reference_table(&model, 200_000, SeededRng::new(9)).unwrap();
    let observed_mean = 1.8;
    let s_obs = SummaryVector::new(vec![observed_mean]).unwrap();
    let smap = model.summary_map().unwrap();
    let post = fit_copula(
        &table,
        &s_obs,
        &smap,
        0.01,
        &DistanceSpec::Euclidean,
        AdjustOptions::default(),
    )
    .unwrap();
    let mle = post.approx_mle(|_| 0.0, &[0]).unwrap();
    // The MLE of a N(theta, 1/5) likelihood is the observed mean; the Monte
    // Carlo error of the copula surface at n' = 2000 dominates.
    let mc_se = (1.0f64 / 5.0).sqrt() / (2000f64).sqrt();
    assert!(
        (mle.point[0] - observed_mean).abs() < 2.0 * mc_se + 0.05,
        "mle {} vs observed mean {observed_mean}",
        mle.point[0]
    );
}

#[test]
fn copula_sample_refit_round_trip() {
    let model = TwistedNormalModel::new(3, 0.1, 1.0).unwrap();
    let table = build_reference_table(&model, 100_000, SeededRng::new(4)).unwrap();
    let s_obs = model.observed_summaries();
    let smap = model.summary_map().unwrap();
    let post = fit_copula(
        &table,
        &s_obs,
        &smap,
        0.01,
        &DistanceSpec::Euclidean,
        AdjustOptions::default(),
    )
    .unwrap();
    let m = 50_000;
    let draws = post.sample(m, SeededRng::new(77)).unwrap();
    for (i, j) in copula_abc::types::all_pairs(3) {
        let refit = pairwise_lambda(&draws.param_column(i), &draws.param_column(j)).unwrap();
        let target = post.correlation().entry(i, j);
        let bound = 3.0 / (m as f64).sqrt() + 0.01;
        assert!(
            (refit - target).abs() < bound,
            "pair ({i}, {j}): refit {refit} target {target}"
        );
    }
}

// Euclidean pilot -> theta_0 -> Mahalanobis rerun on the toy model: the
// full two-stage pipeline stays close to the plain Euclidean fit here since
// the toy summaries share a scale.
#[test]
fn mahalanobis_second_stage_runs_end_to_end() {
    let model = TwistedNormalModel::new(3, 0.1, 1.0).unwrap();
    let table = build_reference_table(&model, 50_000, SeededRng::new(6)).unwrap();
    let s_obs = model.observed_summaries();
    let smap = model.summary_map().unwrap();
    let adjust = AdjustOptions::default();
    let pilot = fit_copula(&table, &s_obs, &smap, 0.02, &DistanceSpec::Euclidean, adjust).unwrap();
    let theta0 = DVector::from_fn(3, |i, _| pilot.marginal(i).mean());
    let scale = copula_abc::dist::estimate_mahalanobis_scale(
        &model,
        &theta0,
        2_000,
        SeededRng::new(61),
    )
    .unwrap();
    let spec = DistanceSpec::mahalanobis(scale).unwrap();
    let post = fit_copula(&table, &s_obs, &smap, 0.02, &spec, adjust).unwrap();
    // Pilot and final marginal means should both sit near the observation.
    for i in 0..3 {
        let target = if i == 0 { 10.0 } else { 0.0 };
        assert!(
            (post.marginal(i).mean() - target).abs() < 1.5,
            "marginal {i} mean {}",
            post.marginal(i).mean()
        );
    }
}

#[test]
fn grid_spec_matches_truth_axes() {
    // AxisSpec::points reproduces endpoints exactly.
    let axis = AxisSpec::new(-2.0, 3.0, 11).unwrap();
    let pts = axis.points();
    assert_eq!(pts[0], -2.0);
    assert_eq!(*pts.last().unwrap(), 3.0);
    let spec = GridSpec { x: axis, y: axis };
    assert_eq!(spec.x.step(), 0.5);
}

// Discrete-copula pipeline end to end: for data simulated with a fixed,
// strong indicator configuration, the estimated inclusion probabilities of
// the truly active covariates exceed one half (the exact oracle agrees that
// they belong in the top model).
#[test]
fn discrete_pipeline_recovers_strong_indicators() {
    use copula_abc::discrete::fit_discrete_copula;
    use copula_abc::models::varsel::{synthetic_varsel_dataset, VarselHyper, VarselModel};

    let active = [(1usize, 800.0), (4usize, 800.0)];
    let (x, y) = synthetic_varsel_dataset(6, 50, &active, None, 200.0, SeededRng::new(88)).unwrap();
    let prelim = VarselModel::new(&x, y.clone(), vec![], VarselHyper::default()).unwrap();
    let exact_top = &prelim.exact_enumerate().unwrap()[0].gamma;
    assert_eq!(exact_top[1], 1, "oracle misses covariate 2: {exact_top:?}");
    assert_eq!(exact_top[4], 1, "oracle misses covariate 5: {exact_top:?}");

    let reduced: Vec<usize> = exact_top
        .iter()
        .enumerate()
        .filter_map(|(j, &g)| (g == 1).then_some(j))
        .collect();
    let model = VarselModel::new(&x, y, reduced, VarselHyper::default()).unwrap();
    let table = build_reference_table(&model, 30_000, SeededRng::new(89)).unwrap();
    let post = fit_discrete_copula(
        &table,
        &model.observed_summaries().unwrap(),
        &model.summary_map().unwrap(),
        300,
    )
    .unwrap();
    for &(j, _) in &active {
        let inclusion = 1.0 - post.prob_zero(j);
        assert!(
            inclusion > 0.5,
            "inclusion probability of covariate {} is {inclusion}",
            j + 1
        );
    }
}
