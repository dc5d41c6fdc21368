//! Plain-text CSV matrices and dataset export/import.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::DriftDataset;
use crate::plant::ForcedSamples;

/// Parse a comma-separated matrix, one row per line. Blank lines and lines
/// starting with `#` are skipped; empty cells are ignored.
pub fn parse_csv_matrix(text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(str::trim)
            .filter(|c| !c.is_empty())
            .map(|c| {
                c.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: `{c}`: {e}", lineno + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse(format!(
                    "line {}: expected {} columns, found {}",
                    lineno + 1,
                    first.len(),
                    row.len()
                )));
            }
        }
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    Ok(DMatrix::from_row_iterator(
        rows.len(),
        ncols,
        rows.into_iter().flatten(),
    ))
}

/// Shortest round-trip formatting, so parse(format(M)) == M bit for bit.
pub fn format_csv_matrix(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn read_csv_matrix(path: &Path) -> Result<DMatrix<f64>> {
    parse_csv_matrix(&fs::read_to_string(path)?)
}

pub fn write_csv_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    fs::write(path, format_csv_matrix(m))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub n: usize,
    pub m: usize,
    pub t: usize,
    pub t_bar: usize,
    pub seed: Option<u64>,
    pub kernel_id: String,
}

/// Writes `X0.csv`, `X1.csv`, `Xbar0.csv`, `Xbar1.csv`, `U0.csv` and
/// `manifest.json` into `dir`.
pub fn export_datasets(
    dir: &Path,
    drift: &DriftDataset,
    forced: &ForcedSamples,
    seed: Option<u64>,
    kernel_id: &str,
) -> Result<DatasetManifest> {
    fs::create_dir_all(dir)?;
    write_csv_matrix(&dir.join("X0.csv"), &drift.x0)?;
    write_csv_matrix(&dir.join("X1.csv"), &drift.x1)?;
    write_csv_matrix(&dir.join("Xbar0.csv"), &forced.xbar0)?;
    write_csv_matrix(&dir.join("Xbar1.csv"), &forced.xbar1)?;
    write_csv_matrix(&dir.join("U0.csv"), &forced.u0)?;
    let manifest = DatasetManifest {
        n: drift.state_dim(),
        m: forced.u0.nrows(),
        t: drift.len(),
        t_bar: forced.xbar0.ncols(),
        seed,
        kernel_id: kernel_id.to_string(),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn import_datasets(dir: &Path) -> Result<(DatasetManifest, DriftDataset, ForcedSamples)> {
    let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let drift = DriftDataset::new(read_csv_matrix(&dir.join("X0.csv"))?, read_csv_matrix(&dir.join("X1.csv"))?)?;
    let forced = ForcedSamples::new(
        read_csv_matrix(&dir.join("Xbar0.csv"))?,
        read_csv_matrix(&dir.join("Xbar1.csv"))?,
        read_csv_matrix(&dir.join("U0.csv"))?,
    )?;
    if manifest.n != drift.state_dim() || manifest.t != drift.len() || manifest.t_bar != forced.xbar0.ncols() {
        return Err(Error::Parse("manifest dimensions disagree with the CSV files".into()));
    }
    Ok((manifest, drift, forced))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_ragged_separator_and_comments() {
        let m = parse_csv_matrix("# header\n1, 2,,3\n\n4,5,6\n").unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        assert!(parse_csv_matrix("1,2\n3\n").is_err());
        assert!(parse_csv_matrix("1,x\n").is_err());
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_bit_exact(vals in proptest::collection::vec(-1e6f64..1e6, 1..24), cols in 1usize..4) {
            let rows = vals.len() / cols;
            prop_assume!(rows > 0);
            let m = DMatrix::from_row_slice(rows, cols, &vals[..rows * cols]);
            let back = parse_csv_matrix(&format_csv_matrix(&m)).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
