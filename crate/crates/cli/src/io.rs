//! File formats: CSV data contracts and JSON artifacts.
//!
//! Every CSV written here starts with a `# deepida <version>` comment line,
//! then a header row. Views are one CSV per view with feature-name headers
//! and samples as rows; labels are a single `label` column of class ids.
//! Floats are written in shortest round-trip form, so identical runs produce
//! byte-identical files. Readers skip `#` comment lines.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Serialize;

use deep_ida::dataset::{ClassLabels, MultiViewDataset};
use deep_ida::error::{DeepIdaError, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

fn io_context(e: std::io::Error, what: &str) -> DeepIdaError {
    DeepIdaError::Io(std::io::Error::new(e.kind(), format!("{what}: {e}")))
}

fn open_reader(path: &Path, what: &str) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path)
        .map_err(|e| io_context(e, &format!("{what} {}", path.display())))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_reader(file))
}

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

/// Read one view CSV: header row of feature names, f64 cells.
pub fn read_view(path: &Path, view_index: usize) -> Result<(Vec<String>, Array2<f64>)> {
    let what = format!("view {} file", view_index + 1);
    let mut rdr = open_reader(path, &what)?;
    let names: Vec<String> = rdr
        .headers()
        .map_err(|e| DeepIdaError::ParseError(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_owned)
        .collect();
    let p = names.len();
    let mut values: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for record in rdr.records() {
        let record =
            record.map_err(|e| DeepIdaError::ParseError(format!("{}: {e}", path.display())))?;
        let line = record_line(&record);
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                DeepIdaError::ParseError(format!(
                    "{} line {line}, column {}: invalid float '{cell}'",
                    path.display(),
                    names.get(j).map_or("?", |s| s.as_str()),
                ))
            })?;
            values.push(v);
        }
        n += 1;
    }
    if n == 0 {
        return Err(DeepIdaError::ParseError(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    let matrix = Array2::from_shape_vec((n, p), values)
        .map_err(|e| DeepIdaError::ParseError(format!("{}: {e}", path.display())))?;
    Ok((names, matrix))
}

/// Read the labels CSV: one header row, one class id per line.
pub fn read_labels(path: &Path) -> Result<Vec<u32>> {
    let mut rdr = open_reader(path, "labels file")?;
    let mut ids = Vec::new();
    for record in rdr.records() {
        let record =
            record.map_err(|e| DeepIdaError::ParseError(format!("{}: {e}", path.display())))?;
        let line = record_line(&record);
        if record.len() != 1 {
            return Err(DeepIdaError::ParseError(format!(
                "{} line {line}: expected a single label column, found {} fields",
                path.display(),
                record.len()
            )));
        }
        let cell = record.get(0).unwrap_or("");
        let id: u32 = cell.trim().parse().map_err(|_| {
            DeepIdaError::ParseError(format!(
                "{} line {line}: invalid class id '{cell}'",
                path.display()
            ))
        })?;
        ids.push(id);
    }
    if ids.is_empty() {
        return Err(DeepIdaError::ParseError(format!(
            "{}: no labels",
            path.display()
        )));
    }
    Ok(ids)
}

/// Load a dataset from one CSV per view plus a labels CSV.
pub fn load_dataset(views: &[PathBuf], labels: &Path) -> Result<MultiViewDataset> {
    if views.is_empty() {
        return Err(DeepIdaError::InvalidInput("no view files given".into()));
    }
    let mut names = Vec::with_capacity(views.len());
    let mut matrices = Vec::with_capacity(views.len());
    for (d, path) in views.iter().enumerate() {
        let (view_names, matrix) = read_view(path, d)?;
        names.push(view_names);
        matrices.push(matrix);
    }
    let ids = read_labels(labels)?;
    MultiViewDataset::with_metadata(matrices, ClassLabels::new(ids)?, names, None)
}

fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    let file = fs::File::create(path)
        .map_err(|e| io_context(e, &format!("writing {}", path.display())))?;
    Ok(std::io::BufWriter::new(file))
}

fn finish(mut w: std::io::BufWriter<fs::File>, path: &Path) -> Result<()> {
    w.flush()
        .map_err(|e| io_context(e, &format!("writing {}", path.display())))
}

/// Write a CSV with the version comment, a header, and formatted rows.
pub fn write_csv<I>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = create(path)?;
    let ctx = |e: std::io::Error| io_context(e, &format!("writing {}", path.display()));
    writeln!(w, "# deepida {VERSION}").map_err(ctx)?;
    writeln!(w, "{}", header.join(",")).map_err(ctx)?;
    for row in rows {
        writeln!(w, "{}", row.join(",")).map_err(ctx)?;
    }
    finish(w, path)
}

pub fn write_view(path: &Path, names: &[String], matrix: &Array2<f64>) -> Result<()> {
    write_csv(
        path,
        names,
        matrix
            .rows()
            .into_iter()
            .map(|row| row.iter().map(|v| format!("{v}")).collect()),
    )
}

pub fn write_labels(path: &Path, ids: &[u32]) -> Result<()> {
    write_csv(
        path,
        &["label".to_string()],
        ids.iter().map(|id| vec![format!("{id}")]),
    )
}

/// Ground-truth mask rows: `view,feature,name,signal` with 1-based indices.
pub fn write_mask(path: &Path, data: &MultiViewDataset) -> Result<()> {
    let header: Vec<String> = ["view", "feature", "name", "signal"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mask = data.signal_mask.as_ref();
    let mut rows = Vec::new();
    for (d, names) in data.feature_names.iter().enumerate() {
        for (j, name) in names.iter().enumerate() {
            let on = mask.map_or(false, |m| m[d][j]);
            rows.push(vec![
                format!("{}", d + 1),
                format!("{}", j + 1),
                name.clone(),
                format!("{}", u8::from(on)),
            ]);
        }
    }
    write_csv(path, &header, rows)
}

/// Write a string artifact that already carries its own header (e.g. the
/// ranking table), prefixed with the version comment.
pub fn write_table(path: &Path, table: &str) -> Result<()> {
    let mut w = create(path)?;
    let ctx = |e: std::io::Error| io_context(e, &format!("writing {}", path.display()));
    writeln!(w, "# deepida {VERSION}").map_err(ctx)?;
    w.write_all(table.as_bytes()).map_err(ctx)?;
    finish(w, path)
}

/// Pretty JSON artifact with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| DeepIdaError::ParseError(format!("serializing {}: {e}", path.display())))?;
    let mut w = create(path)?;
    let ctx = |e: std::io::Error| io_context(e, &format!("writing {}", path.display()));
    w.write_all(text.as_bytes()).map_err(ctx)?;
    writeln!(w).map_err(ctx)?;
    finish(w, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn view_round_trips_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("view.csv");
        let names = vec!["f1".to_string(), "f2".to_string()];
        let m = array![[1.5, -2.25], [0.1, 3e-7], [1.0 / 3.0, f64::MIN_POSITIVE]];
        write_view(&path, &names, &m).unwrap();
        let (got_names, got) = read_view(&path, 0).unwrap();
        assert_eq!(got_names, names);
        assert_eq!(got, m);
    }

    #[test]
    fn labels_round_trip_and_reject_junk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        write_labels(&path, &[1, 2, 2, 3]).unwrap();
        assert_eq!(read_labels(&path).unwrap(), vec![1, 2, 2, 3]);
        fs::write(&path, "label\n1\ntwo\n").unwrap();
        let err = read_labels(&path).unwrap_err();
        assert!(matches!(err, DeepIdaError::ParseError(_)));
        assert!(err.to_string().contains("line 3"));
    }

    #[test]
    fn bad_float_reports_line_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("view.csv");
        fs::write(&path, "# deepida test\na,b\n1.0,2.0\n3.0,oops\n").unwrap();
        let err = read_view(&path, 0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 4"), "{msg}");
        assert!(msg.contains("column b"), "{msg}");
        assert!(msg.contains("oops"), "{msg}");
    }

    #[test]
    fn missing_view_file_names_the_view() {
        let err = read_view(Path::new("/nonexistent/v.csv"), 1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("view 2 file"), "{msg}");
        assert_eq!(err.class(), "IoError");
    }

    #[test]
    fn ragged_rows_are_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("view.csv");
        fs::write(&path, "a,b\n1.0,2.0\n3.0\n").unwrap();
        let err = read_view(&path, 0).unwrap_err();
        assert!(matches!(err, DeepIdaError::ParseError(_)));
    }

    #[test]
    fn written_files_start_with_version_comment() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        write_labels(&path, &[1]).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(&format!("# deepida {VERSION}\n")));
    }
}
