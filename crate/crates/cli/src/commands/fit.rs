//! Fits a copula posterior from an externally generated reference table
//! (CSV schema `theta_1..theta_p, s_1..s_q, ratio`) plus a summary-map file.

use std::path::Path;

use copula_abc::copula::{fit_copula, AdjustOptions};
use copula_abc::dist::DistanceSpec;
use copula_abc::marginal::Marginal;
use copula_abc::table::ReferenceTable;
use copula_abc::types::{all_pairs, SummaryMap, SummaryVector};
use nalgebra::DMatrix;

use crate::config::{Config, Effective};
use crate::out::{ensure_dir, write_csv};
use crate::{Ctx, RunError};

pub fn run(ctx: &Ctx) -> Result<(), RunError> {
    let cfg = &ctx.config;
    let table_path = cfg
        .string("fit", "table")
        .ok_or_else(|| cfg.fail("fit", "table", "path to the reference-table CSV is required"))?;
    let p = cfg
        .usize("fit", "p")?
        .ok_or_else(|| cfg.fail("fit", "p", "declared parameter count is required"))?;
    let q = cfg
        .usize("fit", "q")?
        .ok_or_else(|| cfg.fail("fit", "q", "declared summary count is required"))?;
    let map_path = cfg
        .string("fit", "map")
        .ok_or_else(|| cfg.fail("fit", "map", "path to the summary-map file is required"))?;
    let observed = cfg
        .f64_list("fit", "observed")?
        .ok_or_else(|| cfg.fail("fit", "observed", "the observed summary vector is required"))?;
    let quantile = cfg.f64("fit", "quantile")?.unwrap_or(0.01);
    let regression = cfg.bool("fit", "regression")?.unwrap_or(true);
    let marginal = cfg.bool("fit", "marginal")?.unwrap_or(true);
    let distance = cfg.string("fit", "distance").unwrap_or_else(|| "euclidean".into());
    let scale_file = cfg.string("fit", "scale_file");

    if observed.len() != q {
        return Err(cfg
            .fail("fit", "observed", &format!("expected {q} values, found {}", observed.len()))
            .into());
    }
    if !(quantile > 0.0 && quantile <= 1.0) {
        return Err(cfg.fail("fit", "quantile", "must lie in (0, 1]").into());
    }
    let spec = match distance.as_str() {
        "euclidean" => DistanceSpec::Euclidean,
        "mahalanobis" => {
            let path = scale_file.clone().ok_or_else(|| {
                cfg.fail("fit", "scale_file", "required for the mahalanobis distance")
            })?;
            DistanceSpec::mahalanobis(load_matrix(Path::new(&path), q)?)?
        }
        other => {
            return Err(cfg
                .fail("fit", "distance", &format!("unknown distance '{other}'"))
                .into())
        }
    };

    let table = ReferenceTable::read_csv(Path::new(&table_path), p, q)?;
    let smap = load_summary_map(Path::new(&map_path), p, q)?;
    let s_obs = SummaryVector::new(observed.clone())?;

    let out = ensure_dir(&ctx.out_dir)?;
    let mut eff = Effective::default();
    eff.push("experiment", "seed", ctx.seed);
    eff.push("experiment", "out", out.display());
    eff.push("fit", "table", &table_path);
    eff.push("fit", "p", p);
    eff.push("fit", "q", q);
    eff.push("fit", "map", &map_path);
    eff.push(
        "fit",
        "observed",
        observed.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" "),
    );
    eff.push("fit", "quantile", quantile);
    eff.push("fit", "regression", regression);
    eff.push("fit", "marginal", marginal);
    eff.push("fit", "distance", &distance);
    if let Some(s) = &scale_file {
        eff.push("fit", "scale_file", s);
    }
    eff.write(&out).map_err(copula_abc::Error::from)?;

    let posterior = fit_copula(
        &table,
        &s_obs,
        &smap,
        quantile,
        &spec,
        AdjustOptions {
            regression,
            marginal,
        },
    )?;
    posterior.save(&out.join("posterior.bin"))?;

    let marginal_rows: Vec<Vec<String>> = (0..p)
        .map(|i| {
            let m = posterior.marginal(i);
            vec![
                (i + 1).to_string(),
                m.len().to_string(),
                m.mean().to_string(),
                m.sd().to_string(),
                m.bandwidth().to_string(),
            ]
        })
        .collect();
    write_csv(
        &out.join("marginals.csv"),
        &["parameter", "n", "mean", "sd", "bandwidth"],
        &marginal_rows,
    )
    .map_err(copula_abc::Error::from)?;

    let lambda_rows: Vec<Vec<String>> = all_pairs(p)
        .into_iter()
        .map(|(i, j)| {
            vec![
                (i + 1).to_string(),
                (j + 1).to_string(),
                posterior.correlation().entry(i, j).to_string(),
            ]
        })
        .collect();
    write_csv(&out.join("lambda.csv"), &["i", "j", "lambda"], &lambda_rows)
        .map_err(copula_abc::Error::from)?;

    let log = posterior.correlation().repair_log();
    write_csv(
        &out.join("fit_info.csv"),
        &["key", "value"],
        &[
            vec!["rows".into(), table.len().to_string()],
            vec!["kept".into(), ((quantile * table.len() as f64).ceil() as usize).to_string()],
            vec!["pd_repair_fired".into(), log.fired.to_string()],
            vec!["eigenvalue_floor".into(), log.eigenvalue_floor.to_string()],
            vec!["max_entry_change".into(), log.max_entry_change.to_string()],
        ],
    )
    .map_err(copula_abc::Error::from)?;
    Ok(())
}

/// Summary-map file: `[marginals]` section maps 1-based parameter index to
/// 1-based summary indices; optional `[pairs]` section with keys `i j`
/// overrides specific pairs.
pub fn load_summary_map(path: &Path, p: usize, q: usize) -> Result<SummaryMap, RunError> {
    let map_cfg = Config::load(path)?;
    let mut univariate = Vec::with_capacity(p);
    for i in 1..=p {
        let subset = map_cfg
            .usize_list("marginals", &i.to_string())?
            .ok_or_else(|| {
                map_cfg.fail(
                    "marginals",
                    &i.to_string(),
                    &format!("missing summary subset for parameter {i}"),
                )
            })?;
        univariate.push(to_zero_based(&map_cfg, "marginals", &i.to_string(), &subset, q)?);
    }
    let mut smap = SummaryMap::new(q, univariate)?;
    for i in 1..=p {
        for j in (i + 1)..=p {
            let key = format!("{i} {j}");
            if let Some(subset) = map_cfg.usize_list("pairs", &key)? {
                let subset = to_zero_based(&map_cfg, "pairs", &key, &subset, q)?;
                smap.set_pair(i - 1, j - 1, subset)?;
            }
        }
    }
    map_cfg.ensure_all_consumed()?;
    Ok(smap)
}

fn to_zero_based(
    cfg: &Config,
    section: &str,
    key: &str,
    subset: &[usize],
    q: usize,
) -> Result<Vec<usize>, RunError> {
    subset
        .iter()
        .map(|&s| {
            if s == 0 || s > q {
                Err(cfg
                    .fail(section, key, &format!("summary index {s} outside 1..={q}"))
                    .into())
            } else {
                Ok(s - 1)
            }
        })
        .collect()
}

/// Loads a q x q matrix from CSV (no header, comma-separated rows).
fn load_matrix(path: &Path, q: usize) -> Result<DMatrix<f64>, RunError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| RunError::Run(copula_abc::Error::from(e)))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|f| {
                f.trim().parse().map_err(|_| {
                    RunError::Run(copula_abc::Error::Format(format!(
                        "{}:{}: not a number: '{}'",
                        path.display(),
                        lineno + 1,
                        f
                    )))
                })
            })
            .collect::<Result<_, _>>()?;
        rows.push(row);
    }
    if rows.len() != q || rows.iter().any(|r| r.len() != q) {
        return Err(RunError::Run(copula_abc::Error::Format(format!(
            "{}: expected a {q}x{q} matrix",
            path.display()
        ))));
    }
    Ok(DMatrix::from_fn(q, q, |i, j| rows[i][j]))
}
