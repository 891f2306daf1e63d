//! Robust Bayesian variable selection: ranks all 2^k covariate subsets by
//! exact enumeration, by standard ABC on the full summary vector, and by the
//! discrete copula approximation, on both the clean dataset and a variant
//! with one gross outlier. Emits the ranked lists and a top-N overlap
//! report.

use std::collections::BTreeMap;
use std::path::Path;

use copula_abc::discrete::{exhaustive_indicators, fit_discrete_copula};
use copula_abc::models::varsel::{synthetic_varsel_dataset, VarselHyper, VarselModel};
use copula_abc::rng::{labels, SeededRng};
use copula_abc::table::{abc_select, ReferenceTable, SimulatorModel};
use copula_abc::types::SummaryVector;
use nalgebra::{DMatrix, DVector};

use crate::config::Effective;
use crate::out::{cached_reference_table, ensure_dir, write_csv};
use crate::{Ctx, RunError};

pub fn run(ctx: &Ctx) -> Result<(), RunError> {
    let cfg = &ctx.config;
    let covariates = cfg.usize("varsel", "covariates")?.unwrap_or(10);
    let observations = cfg.usize("varsel", "observations")?.unwrap_or(50);
    let n_samples = cfg.usize("varsel", "n_samples")?.unwrap_or(100_000);
    let n_keep = cfg.usize("varsel", "n_keep")?.unwrap_or(500);
    let top = cfg.usize("varsel", "top")?.unwrap_or(10);
    let noise_sd = cfg.f64("varsel", "noise_sd")?.unwrap_or(200.0);
    let outlier_factor = cfg.f64("varsel", "outlier_factor")?.unwrap_or(10.0);
    let active_idx = cfg
        .usize_list("varsel", "active")?
        .unwrap_or_else(|| vec![3, 6]);
    let effects = cfg
        .f64_list("varsel", "effects")?
        .unwrap_or_else(|| vec![800.0; active_idx.len()]);
    let collinear = cfg
        .f64_list("varsel", "collinear")?
        .unwrap_or_else(|| vec![8.0, 9.0, 0.95]);
    let reduced_cfg = cfg.usize_list("varsel", "reduced")?;
    let data_file = cfg.string("varsel", "data_file");

    if covariates == 0 || covariates > 20 {
        return Err(cfg
            .fail("varsel", "covariates", "must lie in 1..=20 for exhaustive enumeration")
            .into());
    }
    if effects.len() != active_idx.len() {
        return Err(cfg
            .fail("varsel", "effects", "must list one effect per active covariate")
            .into());
    }
    if n_keep < 2 || n_keep > n_samples {
        return Err(cfg.fail("varsel", "n_keep", "must lie in [2, n_samples]").into());
    }

    let out = ensure_dir(&ctx.out_dir)?;
    let base = SeededRng::new(ctx.seed);

    // Dataset: loaded from CSV or synthesized at the hyperprior's scale.
    let (x, y) = match &data_file {
        Some(path) => load_dataset(Path::new(path), covariates)?,
        None => {
            let active: Vec<(usize, f64)> = active_idx
                .iter()
                .zip(&effects)
                .map(|(&i, &b)| {
                    if i == 0 || i > covariates {
                        Err(cfg.fail("varsel", "active", "indices are 1-based covariate numbers"))
                    } else {
                        Ok((i - 1, b))
                    }
                })
                .collect::<Result<_, _>>()?;
            let col = if collinear.len() == 3 {
                let (a, b) = (collinear[0] as usize, collinear[1] as usize);
                if a == 0 || b == 0 || a > covariates || b > covariates {
                    return Err(cfg
                        .fail("varsel", "collinear", "expected '<i> <j> <corr>' with 1-based indices")
                        .into());
                }
                Some((a - 1, b - 1, collinear[2]))
            } else if collinear.is_empty() {
                None
            } else {
                return Err(cfg
                    .fail("varsel", "collinear", "expected three values '<i> <j> <corr>' or empty")
                    .into());
            };
            synthetic_varsel_dataset(
                covariates,
                observations,
                &active,
                col,
                noise_sd,
                base.child(labels::DATASET),
            )?
        }
    };

    // The reduced set defaults to the support of the exact top model.
    let hyper = VarselHyper::default();
    let prelim = VarselModel::new(&x, y.clone(), vec![], hyper)?;
    let exact_clean = prelim.exact_enumerate()?;
    let reduced: Vec<usize> = match reduced_cfg {
        Some(list) => list
            .iter()
            .map(|&i| {
                if i == 0 || i > covariates {
                    Err(cfg.fail("varsel", "reduced", "indices are 1-based covariate numbers"))
                } else {
                    Ok(i - 1)
                }
            })
            .collect::<Result<_, _>>()?,
        None => exact_clean[0]
            .gamma
            .iter()
            .enumerate()
            .filter_map(|(j, &g)| (g == 1).then_some(j))
            .collect(),
    };
    let model = VarselModel::new(&x, y.clone(), reduced.clone(), hyper)?;

    let mut eff = Effective::default();
    eff.push("experiment", "seed", ctx.seed);
    eff.push("experiment", "out", out.display());
    eff.push("varsel", "covariates", covariates);
    eff.push("varsel", "observations", model.observations());
    eff.push("varsel", "n_samples", n_samples);
    eff.push("varsel", "n_keep", n_keep);
    eff.push("varsel", "top", top);
    eff.push("varsel", "noise_sd", noise_sd);
    eff.push("varsel", "outlier_factor", outlier_factor);
    eff.push(
        "varsel",
        "active",
        active_idx.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" "),
    );
    eff.push(
        "varsel",
        "effects",
        effects.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" "),
    );
    eff.push(
        "varsel",
        "collinear",
        collinear.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" "),
    );
    eff.push(
        "varsel",
        "reduced",
        reduced.iter().map(|v| (v + 1).to_string()).collect::<Vec<_>>().join(" "),
    );
    if let Some(f) = &data_file {
        eff.push("varsel", "data_file", f);
    }
    eff.write(&out).map_err(copula_abc::Error::from)?;
    write_dataset(&out.join("dataset.csv"), &x, &y)?;

    // One reference table serves both response variants: the simulations
    // depend only on the design and priors.
    let table = cached_reference_table(&model, n_samples, base, Some(&out.join("cache")))?;
    let y_outlier = model.inflate_outlier(model.observations() - 1, outlier_factor)?;

    let mut top_sets: BTreeMap<String, Vec<Vec<u8>>> = BTreeMap::new();
    for (tag, response) in [("clean", &y), ("outlier", &y_outlier)] {
        let variant = model.with_response(response.clone())?;
        let s_obs = variant.observed_summaries()?;

        let exact = variant.exact_enumerate()?;
        write_csv(
            &out.join(format!("exact_{tag}.csv")),
            &["gamma", "log_posterior", "probability", "rank"],
            &exact
                .iter()
                .enumerate()
                .map(|(r, m)| {
                    vec![
                        bits(&m.gamma),
                        m.log_posterior.to_string(),
                        m.probability.to_string(),
                        (r + 1).to_string(),
                    ]
                })
                .collect::<Vec<_>>(),
        )
        .map_err(copula_abc::Error::from)?;
        top_sets.insert(
            format!("exact_{tag}"),
            exact.iter().take(top).map(|m| m.gamma.clone()).collect(),
        );

        let abc = standard_abc_ranking(&table, &s_obs, n_keep)?;
        write_csv(
            &out.join(format!("abc_{tag}.csv")),
            &["gamma", "count", "frequency", "rank"],
            &abc.iter()
                .enumerate()
                .map(|(r, (gamma, count))| {
                    vec![
                        bits(gamma),
                        count.to_string(),
                        (*count as f64 / n_keep as f64).to_string(),
                        (r + 1).to_string(),
                    ]
                })
                .collect::<Vec<_>>(),
        )
        .map_err(copula_abc::Error::from)?;
        top_sets.insert(
            format!("abc_{tag}"),
            abc.iter().take(top).map(|(g, _)| g.clone()).collect(),
        );

        let posterior = fit_discrete_copula(&table, &s_obs, &variant.summary_map()?, n_keep)?;
        let ranked = posterior.rank_models(&exhaustive_indicators(covariates)?, base.child(labels::QMC))?;
        write_csv(
            &out.join(format!("copula_{tag}.csv")),
            &["gamma", "log_prob", "mc_se", "rank"],
            &ranked
                .iter()
                .enumerate()
                .map(|(r, m)| {
                    vec![
                        bits(&m.gamma),
                        m.log_prob.to_string(),
                        m.mc_se.to_string(),
                        (r + 1).to_string(),
                    ]
                })
                .collect::<Vec<_>>(),
        )
        .map_err(copula_abc::Error::from)?;
        top_sets.insert(
            format!("copula_{tag}"),
            ranked.iter().take(top).map(|m| m.gamma.clone()).collect(),
        );
    }

    let comparisons = [
        ("copula_clean", "exact_clean"),
        ("abc_clean", "exact_clean"),
        ("copula_outlier", "exact_clean"),
        ("copula_outlier", "copula_clean"),
        ("exact_outlier", "exact_clean"),
        ("abc_outlier", "exact_clean"),
    ];
    let overlap_rows: Vec<Vec<String>> = comparisons
        .iter()
        .map(|(a, b)| {
            let sa = &top_sets[*a];
            let sb = &top_sets[*b];
            let overlap = sa.iter().filter(|g| sb.contains(g)).count();
            vec![
                format!("{a}_vs_{b}"),
                top.to_string(),
                overlap.to_string(),
            ]
        })
        .collect();
    write_csv(&out.join("overlap.csv"), &["comparison", "top", "overlap"], &overlap_rows)
        .map_err(copula_abc::Error::from)?;
    let fallbacks = model.irls_fallback_count();
    if fallbacks > 0 {
        eprintln!("warning: {fallbacks} robust fits hit the IRLS iteration cap and used least-squares t-statistics");
    }
    Ok(())
}

fn bits(gamma: &[u8]) -> String {
    gamma.iter().map(|g| if *g == 1 { '1' } else { '0' }).collect()
}

/// Standard ABC over the full summary vector: keep the nearest `n_keep`
/// rows, rank indicator configurations by frequency (ties lexicographic).
fn standard_abc_ranking(
    table: &ReferenceTable,
    s_obs: &SummaryVector,
    n_keep: usize,
) -> Result<Vec<(Vec<u8>, usize)>, RunError> {
    let full: Vec<usize> = (0..table.summary_dim()).collect();
    let quantile = n_keep as f64 / table.len() as f64;
    let kept = abc_select(
        table,
        s_obs,
        &full,
        quantile,
        &copula_abc::dist::DistanceSpec::Euclidean,
    )?;
    let mut counts: BTreeMap<Vec<u8>, usize> = BTreeMap::new();
    for i in 0..kept.len() {
        let gamma: Vec<u8> = (0..kept.parameter_dim())
            .map(|j| (kept.params()[(i, j)] == 1.0) as u8)
            .collect();
        *counts.entry(gamma).or_insert(0) += 1;
    }
    let mut ranked: Vec<(Vec<u8>, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(ranked)
}

fn write_dataset(path: &Path, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<(), RunError> {
    let mut header = vec!["y".to_string()];
    for j in 1..=x.ncols() {
        header.push(format!("x{j}"));
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = (0..x.nrows())
        .map(|i| {
            let mut row = vec![y[i].to_string()];
            for j in 0..x.ncols() {
                row.push(x[(i, j)].to_string());
            }
            row
        })
        .collect();
    write_csv(path, &header_refs, &rows).map_err(copula_abc::Error::from)?;
    Ok(())
}

/// Loads a dataset CSV with columns y, x1..xk.
fn load_dataset(path: &Path, covariates: usize) -> Result<(DMatrix<f64>, DVector<f64>), RunError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| RunError::Run(copula_abc::Error::from(e)))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| {
        RunError::Run(copula_abc::Error::Format(format!("{}: empty file", path.display())))
    })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() != covariates + 1 || cols[0] != "y" {
        return Err(RunError::Run(copula_abc::Error::Format(format!(
            "{}: expected header y,x1..x{covariates}",
            path.display()
        ))));
    }
    for (j, c) in cols.iter().enumerate().skip(1) {
        if *c != format!("x{j}") {
            return Err(RunError::Run(copula_abc::Error::Format(format!(
                "{}: column {} should be x{j}, found '{c}'",
                path.display(),
                j + 1
            ))));
        }
    }
    let mut ys = Vec::new();
    let mut xs: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != covariates + 1 {
            return Err(RunError::Run(copula_abc::Error::Format(format!(
                "{}:{}: expected {} fields",
                path.display(),
                lineno + 1,
                covariates + 1
            ))));
        }
        let parse = |f: &str, c: usize| -> Result<f64, RunError> {
            f.trim().parse().map_err(|_| {
                RunError::Run(copula_abc::Error::Format(format!(
                    "{}:{}: column {} is not a number: '{}'",
                    path.display(),
                    lineno + 1,
                    c + 1,
                    f
                )))
            })
        };
        ys.push(parse(fields[0], 0)?);
        xs.push(
            fields[1..]
                .iter()
                .enumerate()
                .map(|(c, f)| parse(f, c + 1))
                .collect::<Result<_, _>>()?,
        );
    }
    let n = ys.len();
    let x = DMatrix::from_fn(n, covariates, |i, j| xs[i][j]);
    Ok((x, DVector::from_vec(ys)))
}
