use std::path::Path;

use super::MultiViewDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Reads numeric rows from a CSV file. A first row that does not parse as
/// numbers is taken to be a header and skipped.
fn read_numeric_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let parsed: Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(r) => rows.push(r),
            Err(_) if i == 0 => continue,
            Err(_) => {
                let offset = record.position().map_or(0, |p| p.byte() as usize);
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    offset,
                    detail: format!("non-numeric field on line {}", i + 1),
                });
            }
        }
    }
    Ok(rows)
}

/// Builds a dataset from one CSV per view plus an optional single-column
/// label file. Labels are remapped to `0..K` in ascending order of their
/// original values.
pub fn import_csv(
    name: &str,
    view_paths: &[impl AsRef<Path>],
    labels_path: Option<&Path>,
) -> Result<MultiViewDataset> {
    let mut views = Vec::with_capacity(view_paths.len());
    for path in view_paths {
        let path = path.as_ref();
        let rows = read_numeric_rows(path)?;
        let t = Tensor::from_rows(&rows).map_err(|e| Error::Consistency {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        views.push(t);
    }

    let (labels, k) = match labels_path {
        Some(path) => {
            let rows = read_numeric_rows(path)?;
            let mut raw = Vec::with_capacity(rows.len());
            for (i, r) in rows.iter().enumerate() {
                match r.as_slice() {
                    [x] if x.fract() == 0.0 => raw.push(*x as i64),
                    _ => {
                        return Err(Error::Consistency {
                            path: path.to_path_buf(),
                            detail: format!("label row {i} is not a single integer"),
                        })
                    }
                }
            }
            let mut distinct = raw.clone();
            distinct.sort_unstable();
            distinct.dedup();
            let labels = raw
                .iter()
                .map(|x| distinct.binary_search(x).unwrap())
                .collect();
            (Some(labels), distinct.len())
        }
        None => (None, 0),
    };
    MultiViewDataset::new(name, views, labels, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    #[test]
    fn imports_with_and_without_headers() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        let l = dir.path().join("labels.csv");
        fs::write(&a, "f1,f2\n1,2\n3,4\n5,6\n").unwrap();
        fs::write(&b, "0.5\n1.5\n2.5\n").unwrap();
        fs::write(&l, "label\n7\n3\n7\n").unwrap();
        let ds = import_csv("csv", &[&a, &b], Some(&l)).unwrap();
        assert_eq!(ds.view_dims(), vec![2, 1]);
        assert_eq!(ds.views[0].row(2), &[5.0, 6.0]);
        assert_eq!(ds.labels, Some(vec![1, 0, 1]));
        assert_eq!(ds.n_clusters, 2);
    }

    #[test]
    fn mismatched_rows_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        fs::write(&a, "1,2\n3,4\n").unwrap();
        fs::write(&b, "1\n2\n3\n").unwrap();
        assert!(import_csv("x", &[&a, &b], None).is_err());
        fs::write(&b, "1\nfoo\n").unwrap();
        assert!(matches!(import_csv("x", &[&a, &b], None), Err(Error::Format { .. })));
    }
}
