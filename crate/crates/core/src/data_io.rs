//! Dataset ingestion, synthetic generators and result documents.
//!
//! CSV input is comma separated without a header unless asked. Result
//! documents are JSON with the top-level keys `labels`, `alpha`,
//! `objective_trace`, `metrics`, `lambda`, `bandwidth` and `seed`.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::disc_similarity::SimplexWeights;
use crate::error::{CdskError, Result};

const LABEL_INTEGRALITY_TOL: f64 = 1e-9;

/// An `n x d` block of features with optional ground-truth class ids in `1..=c`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    data: DMatrix<f64>,
    labels: Option<Vec<usize>>,
}

impl SampleMatrix {
    pub fn new(data: DMatrix<f64>, labels: Option<Vec<usize>>) -> Result<Self> {
        if data.nrows() < 2 {
            return Err(CdskError::Size(format!(
                "need at least 2 samples, got {}",
                data.nrows()
            )));
        }
        if data.ncols() < 1 {
            return Err(CdskError::Size("need at least 1 feature".into()));
        }
        if let Some((pos, _)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            // column-major storage
            let row = pos % data.nrows();
            return Err(CdskError::Validation(format!(
                "non-finite value in row {}",
                row + 1
            )));
        }
        if let Some(labels) = &labels {
            if labels.len() != data.nrows() {
                return Err(CdskError::Shape(format!(
                    "{} labels for {} samples",
                    labels.len(),
                    data.nrows()
                )));
            }
            if labels.iter().any(|&l| l == 0) {
                return Err(CdskError::Validation("class ids start at 1".into()));
            }
        }
        Ok(Self { data, labels })
    }

    /// Builds a sample matrix from row vectors.
    pub fn from_rows(rows: &[Vec<f64>], labels: Option<Vec<usize>>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(CdskError::Shape("rows have differing lengths".into()));
        }
        let data = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
        Self::new(data, labels)
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn d(&self) -> usize {
        self.data.ncols()
    }

    /// Number of classes implied by the labels (largest class id).
    pub fn n_classes(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().copied().max().unwrap_or(0))
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.data.row(i).iter().copied().collect()
    }

    /// Restricts the matrix to the given row indices (in that order).
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let data = self.data.select_rows(rows.iter());
        let labels = self
            .labels
            .as_ref()
            .map(|l| rows.iter().map(|&i| l[i]).collect());
        Self::new(data, labels)
    }

    pub fn without_labels(&self) -> Self {
        Self {
            data: self.data.clone(),
            labels: None,
        }
    }
}

/// Reads a numeric CSV table. With `label_column` set, that column is removed
/// from the features and its distinct integer values are mapped, in ascending
/// order, onto class ids `1..=c`.
pub fn load_csv(
    path: impl AsRef<Path>,
    label_column: Option<usize>,
    header: bool,
) -> Result<SampleMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(header)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path.as_ref())
        .map_err(csv_error)?;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut raw_labels: Vec<i64> = Vec::new();
    let mut width: Option<usize> = None;

    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(CdskError::Parse {
                    line,
                    message: format!("expected {} fields, found {}", w, record.len()),
                })
            }
            _ => {}
        }
        if let Some(col) = label_column {
            if col >= record.len() {
                return Err(CdskError::Parse {
                    line,
                    message: format!("label column {} out of range", col),
                });
            }
        }
        let mut row = Vec::with_capacity(record.len());
        for (j, cell) in record.iter().enumerate() {
            if cell.is_empty() {
                return Err(CdskError::Parse {
                    line,
                    message: format!("missing value in column {}", j),
                });
            }
            let value: f64 = cell.parse().map_err(|_| CdskError::Parse {
                line,
                message: format!("cannot parse {:?} as a number", cell),
            })?;
            if !value.is_finite() {
                return Err(CdskError::Validation(format!(
                    "non-finite value on line {}",
                    line
                )));
            }
            if Some(j) == label_column {
                let rounded = value.round();
                if (value - rounded).abs() > LABEL_INTEGRALITY_TOL {
                    return Err(CdskError::Parse {
                        line,
                        message: format!("label {} is not an integer", value),
                    });
                }
                raw_labels.push(rounded as i64);
            } else {
                row.push(value);
            }
        }
        rows.push(row);
    }

    if rows.len() < 2 {
        return Err(CdskError::Size(format!(
            "need at least 2 samples, got {}",
            rows.len()
        )));
    }
    let labels = label_column.map(|_| remap_labels(&raw_labels));
    SampleMatrix::from_rows(&rows, labels)
}

fn remap_labels(raw: &[i64]) -> Vec<usize> {
    let distinct: Vec<i64> = raw.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    raw.iter()
        .map(|v| distinct.binary_search(v).expect("value is present") + 1)
        .collect()
}

fn csv_error(err: csv::Error) -> CdskError {
    let line = err.position().map_or(0, |p| p.line());
    match err.into_kind() {
        csv::ErrorKind::Io(e) => CdskError::Io(e),
        other => CdskError::Parse {
            line,
            message: format!("{:?}", other),
        },
    }
}

/// Writes features (and labels as the trailing column, when present) as CSV.
pub fn write_csv(data: &SampleMatrix, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for i in 0..data.n() {
        let mut fields: Vec<String> = data.data.row(i).iter().map(|v| format!("{}", v)).collect();
        if let Some(labels) = data.labels() {
            fields.push(labels[i].to_string());
        }
        writeln!(out, "{}", fields.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Isotropic Gaussian blobs, `n_per_cluster` samples around each center.
pub fn make_blobs(
    n_per_cluster: usize,
    centers: &[Vec<f64>],
    sigma: f64,
    seed: u64,
) -> Result<SampleMatrix> {
    if centers.len() < 2 {
        return Err(CdskError::Config("need at least 2 centers".into()));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(CdskError::Config(format!("sigma must be > 0, got {}", sigma)));
    }
    if n_per_cluster == 0 {
        return Err(CdskError::Config("n_per_cluster must be positive".into()));
    }
    let d = centers[0].len();
    if d == 0 || centers.iter().any(|c| c.len() != d) {
        return Err(CdskError::Shape("centers must share a positive dimension".into()));
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| CdskError::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_per_cluster * centers.len();
    let mut data = DMatrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    for (k, center) in centers.iter().enumerate() {
        for p in 0..n_per_cluster {
            let row = k * n_per_cluster + p;
            for (j, &cj) in center.iter().enumerate() {
                data[(row, j)] = cj + normal.sample(&mut rng);
            }
            labels.push(k + 1);
        }
    }
    SampleMatrix::new(data, Some(labels))
}

/// Two interleaved half circles: the upper one centred at the origin, the
/// lower one centred at `(1, 0.5)`, both of unit radius.
pub fn make_two_moons(n: usize, noise: f64, seed: u64) -> Result<SampleMatrix> {
    if n < 4 || n % 2 != 0 {
        return Err(CdskError::Size(format!(
            "two moons needs an even n >= 4, got {}",
            n
        )));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(CdskError::Config(format!("noise must be >= 0, got {}", noise)));
    }
    let half = n / 2;
    let mut data = DMatrix::zeros(n, 2);
    let mut labels = Vec::with_capacity(n);
    for k in 0..half {
        let t = PI * k as f64 / (half - 1) as f64;
        data[(k, 0)] = t.cos();
        data[(k, 1)] = t.sin();
        data[(half + k, 0)] = 1.0 - t.cos();
        data[(half + k, 1)] = 0.5 - t.sin();
    }
    labels.extend(std::iter::repeat(1).take(half));
    labels.extend(std::iter::repeat(2).take(half));
    if noise > 0.0 {
        let normal = Normal::new(0.0, noise).map_err(|e| CdskError::Config(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..n {
            for j in 0..2 {
                data[(i, j)] += normal.sample(&mut rng);
            }
        }
    }
    SampleMatrix::new(data, Some(labels))
}

/// External-label agreement of a clustering.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nmi: Option<f64>,
}

impl Metrics {
    pub fn is_empty(&self) -> bool {
        self.accuracy.is_none() && self.nmi.is_none()
    }
}

/// Output of a clustering run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringResult {
    pub labels: Vec<usize>,
    pub alpha: SimplexWeights,
    pub objective_trace: Vec<f64>,
    #[serde(default)]
    pub metrics: Metrics,
    #[serde(rename = "lambda")]
    pub lambda_used: f64,
    #[serde(rename = "bandwidth")]
    pub bandwidth_used: f64,
    pub seed: u64,
    /// False when some alpha subproblem stopped on its pass budget.
    #[serde(default = "default_true")]
    pub qp_converged: bool,
}

fn default_true() -> bool {
    true
}

pub fn write_result(result: &ClusteringResult, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, result)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

pub fn read_result(path: impl AsRef<Path>) -> Result<ClusteringResult> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CdskError::Parse {
        line: e.line() as u64,
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_with_label_column() {
        let f = write_tmp("0,0,1\n1,0,1\n5,5,2");
        let s = load_csv(f.path(), Some(2), false).unwrap();
        assert_eq!((s.n(), s.d()), (3, 2));
        assert_eq!(s.labels().unwrap(), &[1, 1, 2]);
        assert_eq!(s.row(2), vec![5.0, 5.0]);
    }

    #[test]
    fn csv_without_label_column() {
        let f = write_tmp("0,0,1\n1,0,1\n5,5,2");
        let s = load_csv(f.path(), None, false).unwrap();
        assert_eq!((s.n(), s.d()), (3, 3));
        assert!(s.labels().is_none());
    }

    #[test]
    fn csv_bad_cell_reports_line() {
        let f = write_tmp("0,abc,1\n");
        match load_csv(f.path(), None, false) {
            Err(CdskError::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {:?}", other),
        }
        let f = write_tmp("1,2\n3,4\n0,abc\n");
        match load_csv(f.path(), None, false) {
            Err(CdskError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {:?}", other),
        }
    }

    #[test]
    fn csv_rejections() {
        let f = write_tmp("1,2\n3\n");
        assert!(matches!(load_csv(f.path(), None, false), Err(CdskError::Parse { .. })));
        let f = write_tmp("1,2\n3,NaN\n");
        assert!(matches!(load_csv(f.path(), None, false), Err(CdskError::Validation(_))));
        let f = write_tmp("1,2\n");
        assert!(matches!(load_csv(f.path(), None, false), Err(CdskError::Size(_))));
        let f = write_tmp("1,2\n3,\n");
        assert!(matches!(load_csv(f.path(), None, false), Err(CdskError::Parse { .. })));
        let f = write_tmp("1,2.5\n3,1\n");
        assert!(matches!(load_csv(f.path(), Some(1), false), Err(CdskError::Parse { .. })));
    }

    #[test]
    fn csv_header_and_label_remap() {
        let f = write_tmp("x,y,class\n0,0,0\n1,1,0\n9,9,3\n");
        let s = load_csv(f.path(), Some(2), true).unwrap();
        assert_eq!(s.labels().unwrap(), &[1, 1, 2]);
    }

    #[test]
    fn blobs_layout_and_determinism() {
        let centers = vec![vec![0.0, 0.0], vec![10.0, 10.0]];
        let a = make_blobs(5, &centers, 0.1, 7).unwrap();
        assert_eq!(a.n(), 10);
        assert_eq!(a.labels().unwrap(), &[1, 1, 1, 1, 1, 2, 2, 2, 2, 2]);
        let b = make_blobs(5, &centers, 0.1, 7).unwrap();
        assert_eq!(a, b);
        assert!(make_blobs(5, &centers, 0.0, 7).is_err());
        assert!(matches!(
            make_blobs(5, &centers[..1], 0.1, 7),
            Err(CdskError::Config(_))
        ));
    }

    #[test]
    fn moons_on_circles_without_noise() {
        let m = make_two_moons(200, 0.0, 0).unwrap();
        for i in 0..200 {
            let (x, y) = (m.data()[(i, 0)], m.data()[(i, 1)]);
            let r = if i < 100 {
                (x * x + y * y).sqrt()
            } else {
                ((x - 1.0).powi(2) + (y - 0.5).powi(2)).sqrt()
            };
            assert!((r - 1.0).abs() < 1e-12);
        }
        assert!(matches!(make_two_moons(3, 0.0, 0), Err(CdskError::Size(_))));
        assert!(matches!(make_two_moons(7, 0.0, 0), Err(CdskError::Size(_))));
    }

    #[test]
    fn moons_deterministic_with_noise() {
        let a = make_two_moons(200, 0.05, 1).unwrap();
        let b = make_two_moons(200, 0.05, 1).unwrap();
        let bits = |m: &SampleMatrix| m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn result_round_trip_and_truncation() {
        let result = ClusteringResult {
            labels: vec![1, 2],
            alpha: SimplexWeights::new(vec![0.3, 0.7]).unwrap(),
            objective_trace: vec![-1.5, -1.75],
            metrics: Metrics::default(),
            lambda_used: 0.1,
            bandwidth_used: 1.25,
            seed: 3,
            qp_converged: true,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        write_result(&result, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        for key in ["labels", "alpha", "objective_trace", "metrics", "lambda", "bandwidth", "seed"] {
            assert!(text.contains(&format!("\"{}\"", key)), "missing {}", key);
        }
        let back = read_result(&path).unwrap();
        assert_eq!(back.labels.len(), 2);
        assert_eq!(back.alpha.len(), 2);
        for (a, b) in back.alpha.iter().zip(result.alpha.iter()) {
            assert!((a - b).abs() <= 1e-12);
        }

        std::fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(read_result(&path), Err(CdskError::Parse { .. })));
    }

    #[test]
    fn unwritable_result_path() {
        let result = ClusteringResult {
            labels: vec![1, 1],
            alpha: SimplexWeights::uniform(2),
            objective_trace: vec![],
            metrics: Metrics::default(),
            lambda_used: 0.1,
            bandwidth_used: 1.0,
            seed: 0,
            qp_converged: true,
        };
        let err = write_result(&result, "/nonexistent-dir/for/sure/r.json").unwrap_err();
        assert!(matches!(err, CdskError::Io(_)));
    }
}
