//! Feature alignment: per-dataset PCA to a shared width, then columns reordered
//! by feature smoothness so the least smooth (most anomaly-relevant) come first.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::numeric::Matrix;

pub const DEFAULT_UNIFIED_DIM: usize = 64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AlignMode {
    /// PCA projection followed by ascending-smoothness column order.
    #[default]
    Smoothness,
    /// Ablation: seeded random orthonormal projection, columns left unsorted.
    RandomProjection { seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionModel {
    /// `source_dim × min(source_dim, unified_dim)`, orthonormal columns.
    pub basis: Matrix,
    pub mean: Vec<f64>,
    pub source_dim: usize,
    pub unified_dim: usize,
    /// Set when the input had zero variance in every direction.
    pub degenerate: bool,
}

impl ProjectionModel {
    /// `(x − mean) · basis`, padded with zero columns up to `unified_dim`.
    pub fn project(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.source_dim {
            return Err(Error::DimensionMismatch {
                op: "project",
                detail: format!("model expects {} columns, got {}", self.source_dim, x.cols()),
            });
        }
        let centered = Matrix::from_fn(x.rows(), x.cols(), |i, j| x.get(i, j) - self.mean[j]);
        let p = centered.matmul(&self.basis)?;
        let k = p.cols();
        Ok(Matrix::from_fn(x.rows(), self.unified_dim, |i, j| {
            if j < k {
                p.get(i, j)
            } else {
                0.0
            }
        }))
    }

    /// Number of real (non-padding) projected columns.
    pub fn component_count(&self) -> usize {
        self.basis.cols()
    }
}

/// Scales every column to `[0, 1]`; constant columns become 0.
pub fn min_max_normalize(x: &Matrix) -> Matrix {
    let (n, d) = x.shape();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for i in 0..n {
        for (j, &v) in x.row(i).iter().enumerate() {
            lo[j] = lo[j].min(v);
            hi[j] = hi[j].max(v);
        }
    }
    Matrix::from_fn(n, d, |i, j| {
        let span = hi[j] - lo[j];
        if span > 0.0 {
            (x.get(i, j) - lo[j]) / span
        } else {
            0.0
        }
    })
}

fn column_means(x: &Matrix) -> Vec<f64> {
    let (n, d) = x.shape();
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    // Second pass removes the rounding error of the first (exact for constant columns).
    let mut fix = vec![0.0; d];
    for i in 0..n {
        for ((f, v), m) in fix.iter_mut().zip(x.row(i)).zip(&mean) {
            *f += v - m;
        }
    }
    mean.iter().zip(&fix).map(|(m, f)| m + f / n as f64).collect()
}

/// Flips each column so its largest-magnitude entry is positive (first index on ties).
fn fix_signs(basis: &mut Matrix) {
    for c in 0..basis.cols() {
        let mut best = 0;
        for r in 0..basis.rows() {
            if basis.get(r, c).abs() > basis.get(best, c).abs() {
                best = r;
            }
        }
        if basis.get(best, c) < 0.0 {
            for r in 0..basis.rows() {
                basis.set(r, c, -basis.get(r, c));
            }
        }
    }
}

/// Mean-centred PCA keeping the top `unified_dim` directions (fewer if `d` is smaller).
pub fn fit_projection(x: &Matrix, unified_dim: usize) -> Result<ProjectionModel> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(Error::DimensionMismatch {
            op: "fit_projection",
            detail: format!("need at least 2 rows, got {n}"),
        });
    }
    let mean = column_means(x);
    let centered = DMatrix::from_fn(n, d, |i, j| x.get(i, j) - mean[j]);
    let cov = (centered.transpose() * &centered) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let k = unified_dim.min(d);
    let mut basis = Matrix::from_fn(d, k, |r, c| eig.eigenvectors[(r, order[c])]);
    fix_signs(&mut basis);
    let degenerate = eig.eigenvalues.iter().all(|&l| l.abs() <= 1e-300) && k > 0;
    Ok(ProjectionModel {
        basis,
        mean,
        source_dim: d,
        unified_dim,
        degenerate,
    })
}

/// Seeded random orthonormal projection (Gaussian matrix, then QR).
pub fn random_projection(x: &Matrix, unified_dim: usize, seed: u64) -> Result<ProjectionModel> {
    let d = x.cols();
    if x.rows() < 2 {
        return Err(Error::DimensionMismatch {
            op: "random_projection",
            detail: format!("need at least 2 rows, got {}", x.rows()),
        });
    }
    let k = unified_dim.min(d);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::from_fn(d, k, |_, _| StandardNormal.sample(&mut rng));
    let q = g.qr().q();
    let mut basis = Matrix::from_fn(d, k, |r, c| q[(r, c)]);
    fix_signs(&mut basis);
    Ok(ProjectionModel {
        basis,
        mean: column_means(x),
        source_dim: d,
        unified_dim,
        degenerate: false,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SmoothnessVector {
    pub values: Vec<f64>,
    /// Column permutation: ascending smoothness, index tie-break.
    pub order: Vec<usize>,
}

/// `s_k = −(1/|E|) Σ_{(i,j)∈E} (x_ik − x_jk)²` over each undirected edge once.
pub fn smoothness(g: &Graph, x: &Matrix) -> Result<SmoothnessVector> {
    smoothness_with_padding(g, x, x.cols())
}

/// Like [`smoothness`], but columns at index `real_cols..` are padding and go last.
pub fn smoothness_with_padding(g: &Graph, x: &Matrix, real_cols: usize) -> Result<SmoothnessVector> {
    if x.rows() != g.node_count() {
        return Err(Error::DimensionMismatch {
            op: "smoothness",
            detail: format!("{} rows for {} nodes", x.rows(), g.node_count()),
        });
    }
    let m = g.edge_count();
    if m == 0 {
        return Err(Error::NoEdges);
    }
    let d = x.cols();
    let mut acc = vec![0.0; d];
    for (i, j) in g.edges() {
        for ((a, &u), &v) in acc.iter_mut().zip(x.row(i)).zip(x.row(j)) {
            let diff = u - v;
            *a += diff * diff;
        }
    }
    let values: Vec<f64> = acc.iter().map(|&s| -s / m as f64).collect();
    let real = real_cols.min(d);
    let mut order: Vec<usize> = (0..real).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    order.extend(real..d);
    Ok(SmoothnessVector { values, order })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignedFeatures {
    /// `n × unified_dim`; column `j` is projected column `smoothness.order[j]`.
    pub matrix: Matrix,
    pub projection: ProjectionModel,
    pub smoothness: SmoothnessVector,
}

/// Column-normalize, project, score smoothness and reorder.
pub fn align(g: &Graph, unified_dim: usize, mode: AlignMode) -> Result<AlignedFeatures> {
    let normalized = min_max_normalize(g.features());
    let projection = match mode {
        AlignMode::Smoothness => fit_projection(&normalized, unified_dim)?,
        AlignMode::RandomProjection { seed } => random_projection(&normalized, unified_dim, seed)?,
    };
    let projected = projection.project(&normalized)?;
    let mut smooth = smoothness_with_padding(g, &projected, projection.component_count())?;
    if let AlignMode::RandomProjection { .. } = mode {
        smooth.order = (0..unified_dim).collect();
    }
    let matrix = projected.select_cols(&smooth.order);
    Ok(AlignedFeatures {
        matrix,
        projection,
        smoothness: smooth,
    })
}
