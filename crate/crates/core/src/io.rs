//! Plain-text persistence: vector lists as CSV (one vector per row) and
//! biorthogonal systems as an `X.csv`/`F.csv` pair with a small header.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::biorth::BiorthSystem;
use crate::error::{Error, Result};
use crate::subspace::ToleranceConfig;

/// Fixed 12-significant-digit scientific formatting used in reports.
pub fn fmt_sig(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.11e}")
    } else if v.is_nan() {
        "nan".to_string()
    } else if v > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

/// Writes the columns of `m` as CSV rows with round-trip precision.
pub fn write_vectors_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut out = String::new();
    for c in m.column_iter() {
        let row: Vec<String> = c.iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads CSV rows as the columns of a matrix.
pub fn read_vectors_csv(path: &Path) -> Result<DMatrix<f64>> {
    parse_vectors_csv(&fs::read_to_string(path)?)
}

pub fn parse_vectors_csv(text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|t| {
                t.trim().parse::<f64>().map_err(|e| Error::Parse {
                    line: i + 1,
                    msg: format!("`{}`: {e}", t.trim()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected {} columns, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    let dim = rows.first().map(|r| r.len()).unwrap_or(0);
    Ok(DMatrix::from_fn(dim, rows.len(), |r, c| rows[c][r]))
}

pub fn write_system(dir: &Path, sys: &BiorthSystem) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_vectors_csv(&dir.join("X.csv"), sys.x_matrix())?;
    write_vectors_csv(&dir.join("F.csv"), sys.f_matrix())?;
    let t = sys.tol();
    let mut header = String::new();
    writeln!(header, "ambient_dim = {}", sys.ambient_dim()).unwrap();
    writeln!(header, "len = {}", sys.len()).unwrap();
    writeln!(header, "rank_tol = {:e}", t.rank_tol).unwrap();
    writeln!(header, "biorth_tol = {:e}", t.biorth_tol).unwrap();
    writeln!(header, "span_tol = {:e}", t.span_tol).unwrap();
    writeln!(header, "net_resolution = {:e}", t.net_resolution).unwrap();
    fs::write(dir.join("system.txt"), header)?;
    Ok(())
}

pub fn read_system(dir: &Path) -> Result<BiorthSystem> {
    let header = fs::read_to_string(dir.join("system.txt"))?;
    let mut tol = ToleranceConfig::default();
    let mut ambient = None;
    for (i, line) in header.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(Error::Parse {
            line: i + 1,
            msg: "expected `key = value`".into(),
        })?;
        let (k, v) = (k.trim(), v.trim());
        let num = || {
            v.parse::<f64>().map_err(|e| Error::Parse {
                line: i + 1,
                msg: format!("{k}: {e}"),
            })
        };
        match k {
            "ambient_dim" => ambient = Some(num()? as usize),
            "len" => {}
            "rank_tol" => tol.rank_tol = num()?,
            "biorth_tol" => tol.biorth_tol = num()?,
            "span_tol" => tol.span_tol = num()?,
            "net_resolution" => tol.net_resolution = num()?,
            other => {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("unknown key `{other}`"),
                })
            }
        }
    }
    let x = read_vectors_csv(&dir.join("X.csv"))?;
    let f = read_vectors_csv(&dir.join("F.csv"))?;
    if let Some(d) = ambient {
        if x.nrows() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: x.nrows(),
            });
        }
    }
    let sys = BiorthSystem::from_matrices(x, f, tol)?;
    sys.require_biorthogonal()?;
    Ok(sys)
}
