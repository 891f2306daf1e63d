//! Replicated KL comparison on the twisted-normal toy model across model
//! dimensions, plus contour grids of every method's first-replicate
//! estimate.

use copula_abc::diag::{kl_by_dimension, toy_method_grid, toy_truth_grid, AbcMethod};
use copula_abc::models::toy::TwistedNormalModel;
use copula_abc::rng::{labels, SeededRng};
use copula_abc::table::build_reference_table;

use crate::config::Effective;
use crate::out::{ensure_dir, write_csv, write_grid_csv};
use crate::{Ctx, RunError};

pub fn run(ctx: &Ctx) -> Result<(), RunError> {
    let cfg = &ctx.config;
    let dims = cfg
        .usize_list("toy", "dims")?
        .unwrap_or_else(|| vec![2, 5, 10, 20, 50]);
    let n_samples = cfg.usize("toy", "n_samples")?.unwrap_or(200_000);
    let replicates = cfg.usize("toy", "replicates")?.unwrap_or(20);
    let quantile = cfg.f64("toy", "quantile")?.unwrap_or(0.01);
    let twist = cfg.f64("toy", "twist")?.unwrap_or(0.1);
    let obs_sd = cfg.f64("toy", "obs_sd")?.unwrap_or(1.0);
    let grid = cfg.usize("toy", "grid")?.unwrap_or(200);
    let contours = cfg.bool("toy", "contours")?.unwrap_or(true);
    let methods: Vec<AbcMethod> = match cfg.string_list("toy", "methods") {
        None => AbcMethod::ALL.to_vec(),
        Some(names) => names
            .iter()
            .map(|n| {
                AbcMethod::parse(n).ok_or_else(|| {
                    cfg.fail(
                        "toy",
                        "methods",
                        &format!(
                            "unknown method '{n}' (expected one of {})",
                            AbcMethod::ALL.map(|m| m.name()).join(", ")
                        ),
                    )
                })
            })
            .collect::<Result<_, _>>()?,
    };

    if !(quantile > 0.0 && quantile <= 1.0) {
        return Err(cfg.fail("toy", "quantile", "must lie in (0, 1]").into());
    }
    if dims.iter().any(|&p| p < 2) {
        return Err(cfg.fail("toy", "dims", "every dimension must be >= 2").into());
    }
    if replicates == 0 {
        return Err(cfg.fail("toy", "replicates", "must be positive").into());
    }

    let out = ensure_dir(&ctx.out_dir)?;
    let mut eff = Effective::default();
    eff.push("experiment", "seed", ctx.seed);
    eff.push("experiment", "out", out.display());
    eff.push("toy", "dims", dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(" "));
    eff.push("toy", "n_samples", n_samples);
    eff.push("toy", "replicates", replicates);
    eff.push("toy", "quantile", quantile);
    eff.push("toy", "twist", twist);
    eff.push("toy", "obs_sd", obs_sd);
    eff.push("toy", "grid", grid);
    eff.push("toy", "contours", contours);
    eff.push(
        "toy",
        "methods",
        methods.iter().map(|m| m.name()).collect::<Vec<_>>().join(" "),
    );
    eff.write(&out).map_err(copula_abc::Error::from)?;

    let rng = SeededRng::new(ctx.seed);
    let results = kl_by_dimension(
        &dims, twist, obs_sd, &methods, n_samples, quantile, replicates, grid, rng,
    )?;

    let mut rows = Vec::new();
    let mut replicate_rows = Vec::new();
    for (p, summaries) in &results {
        for s in summaries {
            rows.push(vec![
                p.to_string(),
                s.method.name().to_string(),
                s.mean.to_string(),
                s.se.to_string(),
                n_samples.to_string(),
                replicates.to_string(),
                ctx.seed.to_string(),
            ]);
            for (r, kl) in s.per_replicate.iter().enumerate() {
                replicate_rows.push(vec![
                    p.to_string(),
                    s.method.name().to_string(),
                    r.to_string(),
                    kl.to_string(),
                ]);
            }
        }
    }
    write_csv(
        &out.join("kl_results.csv"),
        &["p", "method", "mean_kl", "se", "N", "replicates", "seed"],
        &rows,
    )
    .map_err(copula_abc::Error::from)?;
    write_csv(
        &out.join("kl_replicates.csv"),
        &["p", "method", "replicate", "kl"],
        &replicate_rows,
    )
    .map_err(copula_abc::Error::from)?;

    if contours {
        for &p in &dims {
            let model = TwistedNormalModel::new(p, twist, obs_sd)?;
            let (truth, grid_spec) = toy_truth_grid(&model, grid)?;
            write_grid_csv(&out.join(format!("contour_p{p}_truth.csv")), &truth, "truth")
                .map_err(copula_abc::Error::from)?;
            // Same table as the experiment's first replicate.
            let table_rng = rng.child(p as u64).child(labels::REPLICATE).stream(0);
            let table = build_reference_table(&model, n_samples, table_rng)?;
            for method in &methods {
                let estimate = toy_method_grid(&model, &table, *method, quantile, &grid_spec)?;
                write_grid_csv(
                    &out.join(format!("contour_p{p}_{}.csv", method.name())),
                    &estimate,
                    method.name(),
                )
                .map_err(copula_abc::Error::from)?;
            }
        }
    }
    Ok(())
}
