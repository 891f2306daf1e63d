//! Output helpers: CSV writing (UTF-8, header row, `.` decimal via the
//! default float formatting, which round-trips exactly) and the
//! content-hashed reference-table cache.

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use copula_abc::diag::GridDensity2D;
use copula_abc::rng::SeededRng;
use copula_abc::table::{build_reference_table, ReferenceTable, SimulatorModel};

use crate::RunError;

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> std::io::Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()
}

/// Long-format grid export: x, y, density, method.
pub fn write_grid_csv(path: &Path, grid: &GridDensity2D, method: &str) -> std::io::Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "x,y,density,method")?;
    for (i, x) in grid.xs().iter().enumerate() {
        for (j, y) in grid.ys().iter().enumerate() {
            writeln!(w, "{x},{y},{},{method}", grid.value(i, j))?;
        }
    }
    w.flush()
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x1_0000_01b3);
    }
    hash
}

/// Builds (or reloads) a reference table, cached under a content hash of
/// (model id, sample count, seed, stream). A cache hit skips simulation and
/// returns bit-identical rows.
pub fn cached_reference_table<M: SimulatorModel + ?Sized>(
    model: &M,
    n: usize,
    rng: SeededRng,
    cache_dir: Option<&Path>,
) -> Result<ReferenceTable, RunError> {
    let Some(dir) = cache_dir else {
        return Ok(build_reference_table(model, n, rng)?);
    };
    std::fs::create_dir_all(dir).map_err(copula_abc::Error::from)?;
    let key = format!(
        "{}|n={n}|seed={}|stream={}",
        model.model_id(),
        rng.seed(),
        rng.stream_id()
    );
    let path = dir.join(format!("table_{:016x}.bin", fnv1a(key.as_bytes())));
    if path.exists() {
        let table = ReferenceTable::read_cache(&path)?;
        if table.len() == n
            && table.parameter_dim() == model.parameter_dim()
            && table.summary_dim() == model.summary_dim()
            && table.model_id() == model.model_id()
        {
            return Ok(table);
        }
    }
    let table = build_reference_table(model, n, rng)?;
    table.write_cache(&path)?;
    Ok(table)
}

pub fn ensure_dir(path: &Path) -> Result<PathBuf, RunError> {
    std::fs::create_dir_all(path).map_err(copula_abc::Error::from)?;
    Ok(path.to_path_buf())
}
