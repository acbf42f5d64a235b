//! Plain-text dataset and matrix files.
//!
//! A dataset directory holds `manifest.tsv` with tab-separated `id, label, mode, path`
//! rows (mode is `raw` or `basis`, paths relative to the directory) and one
//! comma-separated matrix file per sample.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::manifold::{orthonormality_error, GrassmannPoint, MappingMatrix, Mat, BASIS_TOL};
use crate::pipeline::{build_subspace, LabeledDataset};

pub const MANIFEST: &str = "manifest.tsv";
pub const MANIFEST_HEADER: [&str; 4] = ["id", "label", "mode", "path"];

/// Basis files within this orthonormality error are accepted as written.
pub const BASIS_ACCEPT_TOL: f64 = 1e-6;
/// Basis files beyond this error are rejected; between the two they are re-orthonormalized.
pub const BASIS_REJECT_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    /// `D×m` feature matrix; the subspace is its top-`n` left singular space.
    Raw,
    /// `D×n` orthonormal basis.
    Basis,
}

impl SampleMode {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "raw" => Some(Self::Raw),
            "basis" => Some(Self::Basis),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub label: String,
    pub mode: SampleMode,
    pub path: PathBuf,
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: display(path),
        source,
    }
}

fn parse_err(path: &Path, line: u64, message: impl std::fmt::Display) -> Error {
    Error::Parse {
        path: display(path),
        message: format!("line {line}: {message}"),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: display(path),
            source,
        },
        kind => parse_err(path, line, format!("{kind:?}")),
    }
}

/// Reads a comma-separated matrix. Every row must have the same number of columns.
pub fn read_matrix(path: &Path) -> Result<Mat> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(parse_err(
                    path,
                    line,
                    format!("expected {c} columns, found {}", record.len()),
                ))
            }
            _ => {}
        }
        for field in record.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(path, line, format!("not a number: {field:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(path, line, format!("non-finite value {field:?}")));
            }
            values.push(v);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| parse_err(path, 1, "empty matrix"))?;
    Ok(Mat::from_row_slice(rows, cols, &values))
}

/// Matrix as CSV with 17 significant digits, enough to round-trip every `f64`.
pub fn matrix_to_csv(m: &Mat) -> String {
    let mut s = String::with_capacity(m.nrows() * m.ncols() * 24);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                s.push(',');
            }
            s.push_str(&format!("{:.16e}", m[(i, j)]));
        }
        s.push('\n');
    }
    s
}

pub fn write_matrix(path: &Path, m: &Mat) -> Result<()> {
    write_text(path, &matrix_to_csv(m))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

/// Loads a `D×d` map, checking orthonormality.
pub fn read_mapping(path: &Path) -> Result<MappingMatrix> {
    let w = read_matrix(path)?;
    MappingMatrix::new(w).map_err(|e| Error::Parse {
        path: display(path),
        message: e.to_string(),
    })
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(&path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.iter().eq(MANIFEST_HEADER) {
            continue;
        }
        if record.len() == 1 && record[0].trim().is_empty() {
            continue;
        }
        if record.len() != 4 {
            return Err(parse_err(
                &path,
                line,
                format!("expected 4 tab-separated fields, found {}", record.len()),
            ));
        }
        let mode = SampleMode::parse(&record[2])
            .ok_or_else(|| parse_err(&path, line, format!("unknown mode {:?}", &record[2])))?;
        out.push(ManifestEntry {
            id: record[0].to_string(),
            label: record[1].to_string(),
            mode,
            path: dir.join(&record[3]),
        });
    }
    if out.is_empty() {
        return Err(parse_err(&path, 1, "manifest lists no samples"));
    }
    Ok(out)
}

/// Basis check with the accept / repair / reject ladder.
pub fn basis_from_file(m: Mat, path: &Path) -> Result<GrassmannPoint> {
    let err = orthonormality_error(&m);
    if err <= BASIS_TOL {
        return GrassmannPoint::new(m);
    }
    if err > BASIS_REJECT_TOL {
        return Err(Error::Parse {
            path: display(path),
            message: Error::NotOrthonormal { error: err }.to_string(),
        });
    }
    if err > BASIS_ACCEPT_TOL {
        log::warn!(
            "{}: basis off by {err:.2e}, re-orthonormalized",
            display(path)
        );
    }
    GrassmannPoint::from_span(&m)
}

/// Class names sorted numerically when all labels are integers, lexically otherwise.
fn class_names(labels: &[String]) -> Vec<String> {
    let mut names: Vec<String> = labels.to_vec();
    names.sort();
    names.dedup();
    if names.iter().all(|n| n.parse::<i64>().is_ok()) {
        names.sort_by_key(|n| n.parse::<i64>().unwrap_or(0));
    }
    names
}

/// Loads a dataset directory. Raw samples become order-`order` subspaces; basis samples
/// must already have `order` columns when it is given.
pub fn load_dataset(dir: &Path, order: Option<usize>) -> Result<LabeledDataset> {
    let entries = read_manifest(dir)?;
    if order.is_none() && entries.iter().any(|e| e.mode == SampleMode::Raw) {
        return Err(Error::InvalidOptions(
            "raw samples need a subspace order (--order)".into(),
        ));
    }
    let mut samples = Vec::with_capacity(entries.len());
    for (i, e) in entries.iter().enumerate() {
        let m = read_matrix(&e.path)?;
        let point = match e.mode {
            SampleMode::Raw => {
                let n = order.unwrap_or(0);
                if m.ncols() < n || m.nrows() <= n {
                    return Err(Error::InvalidOptions(format!(
                        "{}: {}x{} features cannot give an order-{n} subspace",
                        display(&e.path),
                        m.nrows(),
                        m.ncols()
                    )));
                }
                build_subspace(&m, n).map_err(|err| err.at_sample(i))?
            }
            SampleMode::Basis => {
                if let Some(n) = order.filter(|&n| n != m.ncols()) {
                    return Err(Error::InvalidOptions(format!(
                        "{}: basis has {} columns but order {n} was requested",
                        display(&e.path),
                        m.ncols()
                    )));
                }
                basis_from_file(m, &e.path)?
            }
        };
        samples.push(point);
    }
    let raw_labels: Vec<String> = entries.iter().map(|e| e.label.clone()).collect();
    let names = class_names(&raw_labels);
    let labels = raw_labels
        .iter()
        .map(|l| names.iter().position(|n| n == l).unwrap_or(0))
        .collect();
    let ids = entries.into_iter().map(|e| e.id).collect();
    LabeledDataset::new(samples, labels, names, ids)
}

/// Writes every sample as a basis file under `samples/` and the manifest alongside.
pub fn write_dataset(dir: &Path, ds: &LabeledDataset) -> Result<()> {
    fs::create_dir_all(dir.join("samples")).map_err(io_err(dir))?;
    let mut manifest = MANIFEST_HEADER.join("\t");
    manifest.push('\n');
    for ((x, &l), id) in ds.samples().iter().zip(ds.labels()).zip(ds.provenance()) {
        let rel = format!("samples/{id}.csv");
        write_matrix(&dir.join(&rel), x.basis())?;
        manifest.push_str(&format!("{id}\t{}\tbasis\t{rel}\n", ds.class_names()[l]));
    }
    write_text(&dir.join(MANIFEST), &manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::random_point;

    #[test]
    fn matrix_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let m = Mat::from_row_slice(2, 3, &[0.1, -1.0 / 3.0, 1e-300, 2.0f64.sqrt(), -0.0, 7e22]);
        let p = dir.path().join("m.csv");
        write_matrix(&p, &m).unwrap();
        assert_eq!(read_matrix(&p).unwrap(), m);
    }

    #[test]
    fn ragged_rows_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        fs::write(&p, "1,2\n3,4\n5\n").unwrap();
        let e = read_matrix(&p).unwrap_err();
        assert!(e.is_io());
        let msg = e.to_string();
        assert!(msg.contains("bad.csv") && msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn bad_number_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        fs::write(&p, "1,2\n3,abc\n").unwrap();
        let msg = read_matrix(&p).unwrap_err().to_string();
        assert!(msg.contains("line 2") && msg.contains("abc"), "{msg}");
    }

    #[test]
    fn basis_ladder() {
        let p = Path::new("b.csv");
        let x = random_point(6, 2, 3).unwrap().into_basis();
        assert_eq!(basis_from_file(x.clone(), p).unwrap().basis(), &x);

        let mut small = x.clone();
        small[(0, 0)] += 1e-7;
        let g = basis_from_file(small, p).unwrap();
        assert!(orthonormality_error(g.basis()) < 1e-12);

        let mut mid = x.clone();
        mid[(0, 0)] += 1e-4;
        assert!(orthonormality_error(basis_from_file(mid, p).unwrap().basis()) < 1e-12);

        let mut far = x;
        far[(0, 0)] += 1e-2;
        assert!(basis_from_file(far, p).is_err());
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pts: Vec<_> = (0..4).map(|s| random_point(5, 2, s).unwrap()).collect();
        let ds = LabeledDataset::new(
            pts,
            vec![0, 0, 1, 1],
            vec!["a".into(), "b".into()],
            (0..4).map(|i| format!("x{i}")).collect(),
        )
        .unwrap();
        write_dataset(dir.path(), &ds).unwrap();
        assert_eq!(load_dataset(dir.path(), None).unwrap(), ds);
        assert_eq!(load_dataset(dir.path(), Some(2)).unwrap(), ds);
        assert!(load_dataset(dir.path(), Some(3)).is_err());
    }

    #[test]
    fn raw_samples_use_top_singular_vectors() {
        let dir = tempfile::tempdir().unwrap();
        let feats = Mat::from_row_slice(3, 2, &[3.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        write_matrix(&dir.path().join("f.csv"), &feats).unwrap();
        fs::write(
            dir.path().join(MANIFEST),
            "id\tlabel\tmode\tpath\na\t1\traw\tf.csv\nb\t1\traw\tf.csv\n",
        )
        .unwrap();
        let ds = load_dataset(dir.path(), Some(1)).unwrap();
        assert!((ds.samples()[0].basis()[(0, 0)].abs() - 1.0).abs() < 1e-12);
        assert!(load_dataset(dir.path(), None).is_err());
    }

    #[test]
    fn numeric_labels_sort_numerically() {
        let names = class_names(&["10".into(), "2".into(), "2".into()]);
        assert_eq!(names, vec!["2", "10"]);
    }

    #[test]
    fn manifest_errors() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(MANIFEST), "a\t1\tfoo\tf.csv\n").unwrap();
        let msg = read_manifest(dir.path()).unwrap_err().to_string();
        assert!(msg.contains("line 1") && msg.contains("foo"), "{msg}");
        assert!(read_manifest(&dir.path().join("missing"))
            .unwrap_err()
            .is_io());
    }
}
