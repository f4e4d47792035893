//! CSV ingestion and emission. The data format is fixed: a header row naming
//! the columns `x1..xQ` then `y1..yD`, comma separated, '.' decimal, UTF-8.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;
use vssgp::Dataset;

fn parse_header(line: &str) -> Result<(usize, usize)> {
    let names: Vec<&str> = line.trim_end_matches(['\r', '\n']).split(',').collect();
    let mut q = 0;
    while q < names.len() && names[q] == format!("x{}", q + 1) {
        q += 1;
    }
    if q == 0 {
        bail!("missing header: first column must be named x1, got {:?}", names.first());
    }
    let mut d = 0;
    while q + d < names.len() && names[q + d] == format!("y{}", d + 1) {
        d += 1;
    }
    if q + d != names.len() {
        bail!(
            "header must name columns x1..x{q} then y1..: unexpected column {:?}",
            names[q + d]
        );
    }
    Ok((q, d))
}

fn parse_rows(text: &str, path: &Path) -> Result<(usize, usize, Vec<Vec<f64>>)> {
    let mut lines = text.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        bail!("{}: missing header", path.display());
    };
    let (q, d) = parse_header(header).with_context(|| format!("{}", path.display()))?;
    let width = q + d;
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1; // 1-based, counting the header as line 1
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != width {
            bail!(
                "{}: line {}: expected {} cells, found {}",
                path.display(),
                lineno,
                width,
                cells.len()
            );
        }
        let mut row = Vec::with_capacity(width);
        for cell in cells {
            let v: f64 = cell.trim().parse().map_err(|_| {
                anyhow::anyhow!(
                    "{}: line {}: could not parse {:?} as a number",
                    path.display(),
                    lineno,
                    cell
                )
            })?;
            if !v.is_finite() {
                bail!("{}: line {}: non-finite value {:?}", path.display(), lineno, cell);
            }
            row.push(v);
        }
        rows.push(row);
    }
    Ok((q, d, rows))
}

/// Load a dataset; at least one `y` column is required.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).with_context(|| format!("{}", path.display()))?;
    let (q, d, rows) = parse_rows(&text, path)?;
    if d == 0 {
        bail!("{}: no output columns (expected y1 after x{q})", path.display());
    }
    if rows.is_empty() {
        bail!("{}: no data rows", path.display());
    }
    let inputs = DMatrix::from_fn(rows.len(), q, |r, c| rows[r][c]);
    let outputs = DMatrix::from_fn(rows.len(), d, |r, c| rows[r][q + c]);
    Ok(Dataset::new(inputs, outputs)?)
}

/// Load prediction inputs; trailing `y` columns are allowed and ignored.
pub fn load_inputs(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("{}", path.display()))?;
    let (q, _d, rows) = parse_rows(&text, path)?;
    if rows.is_empty() {
        bail!("{}: no data rows", path.display());
    }
    Ok(DMatrix::from_fn(rows.len(), q, |r, c| rows[r][c]))
}

/// Write a dataset back out in the fixed format. Numbers use the shortest
/// representation that parses back to the identical value.
pub fn write_csv(path: &Path, data: &Dataset) -> Result<()> {
    let mut out = String::new();
    let q = data.input_dim();
    let d = data.output_dim();
    let mut names = Vec::with_capacity(q + d);
    for i in 0..q {
        names.push(format!("x{}", i + 1));
    }
    for i in 0..d {
        names.push(format!("y{}", i + 1));
    }
    out.push_str(&names.join(","));
    out.push('\n');
    for r in 0..data.num_points() {
        for c in 0..q {
            if c > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", data.inputs()[(r, c)]);
        }
        for c in 0..d {
            out.push(',');
            let _ = write!(out, "{}", data.outputs()[(r, c)]);
        }
        out.push('\n');
    }
    fs::write(path, out).with_context(|| format!("{}", path.display()))
}

/// Write predictions: the inputs, then a mean and a standard deviation
/// column per output.
pub fn write_predictions(
    path: &Path,
    inputs: &DMatrix<f64>,
    means: &DMatrix<f64>,
    stds: &DMatrix<f64>,
) -> Result<()> {
    let q = inputs.ncols();
    let d = means.ncols();
    let mut out = String::new();
    let mut names = Vec::new();
    for i in 0..q {
        names.push(format!("x{}", i + 1));
    }
    for i in 0..d {
        names.push(format!("mean_y{}", i + 1));
    }
    for i in 0..d {
        names.push(format!("std_y{}", i + 1));
    }
    out.push_str(&names.join(","));
    out.push('\n');
    for r in 0..inputs.nrows() {
        let mut cells = Vec::with_capacity(q + 2 * d);
        for c in 0..q {
            cells.push(format!("{}", inputs[(r, c)]));
        }
        for c in 0..d {
            cells.push(format!("{}", means[(r, c)]));
        }
        for c in 0..d {
            cells.push(format!("{}", stds[(r, c)]));
        }
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out).with_context(|| format!("{}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn two_column_file_parses() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("d.csv");
        fs::write(&p, "x1,y1\n0.0,1.0\n0.5,2.0\n1.0,3.0\n").unwrap();
        let d = load_csv(&p).unwrap();
        assert_eq!((d.num_points(), d.input_dim(), d.output_dim()), (3, 1, 1));
        assert_eq!(d.outputs()[(2, 0)], 3.0);
    }

    #[test]
    fn bad_cell_error_names_line() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("d.csv");
        fs::write(&p, "x1,y1\n0.0,1.0\n0.5,abc\n").unwrap();
        let err = load_csv(&p).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        assert!(err.contains("abc"), "{err}");
    }

    #[test]
    fn missing_header_is_rejected() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("d.csv");
        fs::write(&p, "0.0,1.0\n").unwrap();
        let err = format!("{:#}", load_csv(&p).unwrap_err());
        assert!(err.contains("x1"), "{err}");
    }

    #[test]
    fn non_finite_cells_are_rejected() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("d.csv");
        fs::write(&p, "x1,y1\n0.0,inf\n").unwrap();
        assert!(load_csv(&p).is_err());
    }

    #[test]
    fn writer_reader_round_trip_is_exact() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("d.csv");
        let data = vssgp::oracle::random_dataset(3, 25, 2, 2);
        write_csv(&p, &data).unwrap();
        let again = load_csv(&p).unwrap();
        for (a, b) in data.inputs().iter().zip(again.inputs().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in data.outputs().iter().zip(again.outputs().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
