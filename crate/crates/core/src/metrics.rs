//! Deterministic CSV sink for per-epoch training metrics and sweep results.

use crate::Result;
use std::io::Write;
use std::path::Path;

/// Column-ordered CSV writer. Values are formatted with a fixed scientific
/// notation so identical runs produce byte-identical files.
pub struct CsvWriter {
    file: std::io::BufWriter<std::fs::File>,
    columns: usize,
}

impl CsvWriter {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(file, "{}", header.join(","))?;
        Ok(Self { file, columns: header.len() })
    }

    /// Writes one row; NaN renders as an empty cell.
    pub fn row(&mut self, values: &[f64]) -> Result<()> {
        assert_eq!(values.len(), self.columns, "csv row width mismatch");
        let cells: Vec<String> = values.iter().map(|v| format_cell(*v)).collect();
        writeln!(self.file, "{}", cells.join(","))?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.file.flush()?;
        Ok(())
    }
}

pub fn format_cell(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:.9e}")
    }
}

/// Reads a numeric CSV produced by [`CsvWriter`]: header plus rows; empty
/// cells come back as NaN.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<String> = match lines.next() {
        Some(h) => h.split(',').map(|s| s.to_string()).collect(),
        None => return Err(crate::Error::Format("empty csv".into())),
    };
    let mut rows = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|cell| if cell.is_empty() { f64::NAN } else { cell.parse().unwrap_or(f64::NAN) })
            .collect();
        rows.push(row);
    }
    Ok((header, rows))
}

/// Column index by name.
pub fn column_index(header: &[String], name: &str) -> Option<usize> {
    header.iter().position(|h| h == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_nan_cells() {
        let dir = std::env::temp_dir().join("trotter_metrics_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.csv");
        let mut w = CsvWriter::create(&path, &["epoch", "a", "b"]).unwrap();
        w.row(&[1.0, 0.5, f64::NAN]).unwrap();
        w.row(&[2.0, -1.25e-3, 7.0]).unwrap();
        w.flush().unwrap();
        let (header, rows) = read_csv(&path).unwrap();
        assert_eq!(header, vec!["epoch", "a", "b"]);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0][0], 1.0);
        assert!(rows[0][2].is_nan());
        assert!((rows[1][1] + 1.25e-3).abs() < 1e-12);
        assert_eq!(column_index(&header, "b"), Some(2));
    }

    #[test]
    fn identical_rows_format_identically() {
        assert_eq!(format_cell(0.1 + 0.2), format_cell(0.1 + 0.2));
        assert_eq!(format_cell(3.0), "3");
        assert_eq!(format_cell(f64::NAN), "");
    }
}
