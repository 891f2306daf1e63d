//! Evaluates the log density of a saved copula posterior at supplied points.

use std::path::Path;

use copula_abc::copula::CopulaPosterior;
use copula_abc::types::ParameterVector;

use crate::config::Effective;
use crate::out::{ensure_dir, write_csv};
use crate::{Ctx, RunError};

pub fn run(ctx: &Ctx) -> Result<(), RunError> {
    let cfg = &ctx.config;
    let posterior_path = cfg
        .string("density", "posterior")
        .ok_or_else(|| cfg.fail("density", "posterior", "path to a saved posterior is required"))?;
    let points_path = cfg
        .string("density", "points")
        .ok_or_else(|| cfg.fail("density", "points", "path to a points CSV is required"))?;

    let posterior = CopulaPosterior::load(Path::new(&posterior_path))?;
    let p = posterior.dim();
    let points = load_points(Path::new(&points_path), p)?;

    let out = ensure_dir(&ctx.out_dir)?;
    let mut eff = Effective::default();
    eff.push("experiment", "seed", ctx.seed);
    eff.push("experiment", "out", out.display());
    eff.push("density", "posterior", &posterior_path);
    eff.push("density", "points", &points_path);
    eff.write(&out).map_err(copula_abc::Error::from)?;

    let mut header: Vec<String> = (1..=p).map(|i| format!("theta_{i}")).collect();
    header.push("log_density".into());
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|pt| {
            let theta = ParameterVector::new(pt.clone())?;
            let ld = posterior.log_density(&theta)?;
            let mut row: Vec<String> = pt.iter().map(|v| v.to_string()).collect();
            row.push(ld.to_string());
            Ok(row)
        })
        .collect::<Result<_, copula_abc::Error>>()?;
    write_csv(&out.join("density.csv"), &header_refs, &rows).map_err(copula_abc::Error::from)?;
    Ok(())
}

fn load_points(path: &Path, p: usize) -> Result<Vec<Vec<f64>>, RunError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| RunError::Run(copula_abc::Error::from(e)))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| {
        RunError::Run(copula_abc::Error::Format(format!("{}: empty file", path.display())))
    })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() != p {
        return Err(RunError::Run(copula_abc::Error::Format(format!(
            "{}: expected {p} columns theta_1..theta_{p}, found {}",
            path.display(),
            cols.len()
        ))));
    }
    for (j, c) in cols.iter().enumerate() {
        if *c != format!("theta_{}", j + 1) {
            return Err(RunError::Run(copula_abc::Error::Format(format!(
                "{}: column {} should be theta_{}, found '{c}'",
                path.display(),
                j + 1,
                j + 1
            ))));
        }
    }
    let mut points = Vec::new();
    for (lineno, line) in lines {
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
        if row.len() != p {
            return Err(RunError::Run(copula_abc::Error::Format(format!(
                "{}:{}: expected {p} fields",
                path.display(),
                lineno + 1
            ))));
        }
        points.push(row);
    }
    Ok(points)
}
