//! Supervised affinity graph `G = G_w − G_b` built from labels and pairwise
//! dissimilarities on the original manifold.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::manifold::{GrassmannPoint, Mat};
use crate::metrics::{measure_orthonormal, MeasureKind};

/// Symmetric N×N matrix with entries in {−1, 0, +1}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AffinityGraph {
    n: usize,
    g: Vec<i8>,
    kw: usize,
    kb: usize,
}

impl AffinityGraph {
    /// A graph with no edges.
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            g: vec![0; n * n],
            kw: 1,
            kb: 1,
        }
    }

    /// Builds a graph from explicit entries, checking symmetry, the zero diagonal and the value range.
    pub fn from_entries(n: usize, entries: Vec<i8>) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::DimensionMismatch(format!(
                "expected {} entries, got {}",
                n * n,
                entries.len()
            )));
        }
        for i in 0..n {
            if entries[i * n + i] != 0 {
                return Err(Error::InvalidShape("affinity diagonal must be zero".into()));
            }
            for j in 0..n {
                let v = entries[i * n + j];
                if !(-1..=1).contains(&v) || v != entries[j * n + i] {
                    return Err(Error::InvalidShape(
                        "affinity must be symmetric with entries in {-1, 0, 1}".into(),
                    ));
                }
            }
        }
        Ok(Self {
            n,
            g: entries,
            kw: 1,
            kb: 1,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> i8 {
        self.g[i * self.n + j]
    }

    pub fn kw(&self) -> usize {
        self.kw
    }

    pub fn kb(&self) -> usize {
        self.kb
    }

    /// Nonzero entries `(i, j, g(i,j))` with `i < j`, in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize, i8)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in i + 1..self.n {
                let v = self.get(i, j);
                if v != 0 {
                    out.push((i, j, v));
                }
            }
        }
        out
    }

    /// CSV with N rows of N integers.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for i in 0..self.n {
            let row: Vec<String> = (0..self.n).map(|j| self.get(i, j).to_string()).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }
}

fn class_sizes(labels: &[usize]) -> BTreeMap<usize, usize> {
    let mut sizes = BTreeMap::new();
    for &l in labels {
        *sizes.entry(l).or_insert(0) += 1;
    }
    sizes
}

/// Smallest class size minus one (a point is not its own neighbor).
pub fn default_kw(labels: &[usize]) -> Result<usize> {
    let sizes = class_sizes(labels);
    if let Some((&class, _)) = sizes.iter().find(|(_, &s)| s < 2) {
        return Err(Error::DegenerateClass { class });
    }
    sizes
        .values()
        .min()
        .map(|m| m - 1)
        .ok_or(Error::EmptyTrainingSet)
}

/// Indices of the `k` entries of `row` with the smallest value among `candidates`,
/// ties broken by ascending index.
fn nearest(row: &[f64], candidates: impl Iterator<Item = usize>, k: usize) -> Vec<usize> {
    let mut c: Vec<usize> = candidates.collect();
    c.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
    c.truncate(k);
    c
}

/// Builds `G = G_w − G_b`, where `G_w(i,j) = 1` iff either point is among the other's
/// `kw` nearest same-label points, and `G_b` likewise with the `kb` nearest
/// different-label points. `dist` holds dissimilarities (smaller is nearer).
pub fn build_affinity(labels: &[usize], dist: &Mat, kw: usize, kb: usize) -> Result<AffinityGraph> {
    let n = labels.len();
    if dist.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "distance matrix is {}x{}, expected {n}x{n}",
            dist.nrows(),
            dist.ncols()
        )));
    }
    for i in 0..n {
        for j in 0..n {
            let (a, b) = (dist[(i, j)], dist[(j, i)]);
            if !a.is_finite() || a < 0.0 || (a - b).abs() > 1e-9 * a.abs().max(1.0) {
                return Err(Error::InvalidShape(
                    "distance matrix must be finite, nonnegative and symmetric".into(),
                ));
            }
        }
    }
    let sizes = class_sizes(labels);
    if let Some((&class, _)) = sizes.iter().find(|(_, &s)| s < 2) {
        return Err(Error::DegenerateClass { class });
    }
    if kw == 0 || kb == 0 {
        return Err(Error::InvalidK("kw and kb must be at least 1".into()));
    }
    let max_kw = default_kw(labels)?;
    if kw > max_kw {
        return Err(Error::InvalidK(format!(
            "kw = {kw} exceeds the smallest class size minus one ({max_kw})"
        )));
    }
    if kb > kw {
        return Err(Error::InvalidK(format!("kb = {kb} exceeds kw = {kw}")));
    }

    let rows: Vec<(Vec<usize>, Vec<usize>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let row: Vec<f64> = dist.row(i).iter().copied().collect();
            let within = nearest(
                &row,
                (0..n).filter(|&j| j != i && labels[j] == labels[i]),
                kw,
            );
            let between = nearest(&row, (0..n).filter(|&j| labels[j] != labels[i]), kb);
            (within, between)
        })
        .collect();

    let mut g = vec![0i8; n * n];
    for (i, (within, between)) in rows.iter().enumerate() {
        for &j in within {
            g[i * n + j] = 1;
            g[j * n + i] = 1;
        }
        for &j in between {
            g[i * n + j] = -1;
            g[j * n + i] = -1;
        }
    }
    Ok(AffinityGraph { n, g, kw, kb })
}

/// Pairwise dissimilarities under `kind` (kernel values become `1 − k`).
pub fn dissimilarity_matrix(points: &[GrassmannPoint], kind: MeasureKind) -> Result<Mat> {
    let n = points.len();
    if let Some(first) = points.first() {
        for (i, p) in points.iter().enumerate() {
            if p.basis().shape() != first.basis().shape() {
                return Err(Error::DimensionMismatch(format!(
                    "point {i} has a different shape from point 0"
                )));
            }
        }
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        0.0
                    } else {
                        let (a, b) = if i < j { (i, j) } else { (j, i) };
                        kind.as_dissimilarity(measure_orthonormal(
                            kind,
                            points[a].basis(),
                            points[b].basis(),
                        ))
                        .max(0.0)
                    }
                })
                .collect()
        })
        .collect();
    Ok(Mat::from_fn(n, n, |i, j| rows[i][j]))
}
