//! Draws equally weighted samples from a saved copula posterior.

use std::path::Path;

use copula_abc::copula::CopulaPosterior;
use copula_abc::rng::SeededRng;

use crate::config::Effective;
use crate::out::{ensure_dir, write_csv};
use crate::{Ctx, RunError};

pub fn run(ctx: &Ctx) -> Result<(), RunError> {
    let cfg = &ctx.config;
    let posterior_path = cfg
        .string("sample", "posterior")
        .ok_or_else(|| cfg.fail("sample", "posterior", "path to a saved posterior is required"))?;
    let draws = cfg.usize("sample", "draws")?.unwrap_or(1000);
    if draws == 0 {
        return Err(cfg.fail("sample", "draws", "must be positive").into());
    }

    let posterior = CopulaPosterior::load(Path::new(&posterior_path))?;
    let out = ensure_dir(&ctx.out_dir)?;
    let mut eff = Effective::default();
    eff.push("experiment", "seed", ctx.seed);
    eff.push("experiment", "out", out.display());
    eff.push("sample", "posterior", &posterior_path);
    eff.push("sample", "draws", draws);
    eff.write(&out).map_err(copula_abc::Error::from)?;

    let set = posterior.sample(draws, SeededRng::new(ctx.seed))?;
    let p = posterior.dim();
    let header: Vec<String> = (1..=p).map(|i| format!("theta_{i}")).collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = (0..set.len())
        .map(|i| (0..p).map(|j| set.params()[(i, j)].to_string()).collect())
        .collect();
    write_csv(&out.join("samples.csv"), &header_refs, &rows).map_err(copula_abc::Error::from)?;
    Ok(())
}
