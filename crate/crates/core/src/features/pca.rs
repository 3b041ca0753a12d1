use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalues below this fraction of the largest count as zero variance.
const RANK_TOLERANCE: f64 = 1e-12;

/// Fitted principal subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    pub mean: DVector<f64>,
    /// `target_dim x input_dim`, one unit component per row, strongest first.
    /// Padded rows are zero.
    pub components: DMatrix<f64>,
    /// Eigenvalues of the centered scatter matrix `X^T X` for the kept rows.
    pub scatter_eigenvalues: Vec<f64>,
    /// Sum of all scatter eigenvalues, i.e. the total squared deviation.
    pub total_scatter: f64,
    /// Fewer than `target_dim` directions carried variance.
    pub rank_deficient: bool,
    pub samples: usize,
}

impl PcaBasis {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn target_dim(&self) -> usize {
        self.components.nrows()
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let centered = DVector::from_iterator(x.len(), x.iter().copied()) - &self.mean;
        (&self.components * centered).iter().copied().collect()
    }

    pub fn reconstruct(&self, y: &[f64]) -> Vec<f64> {
        let y = DVector::from_column_slice(y);
        (self.components.transpose() * y + &self.mean).iter().copied().collect()
    }

    /// Squared deviation the projection throws away on the fitting set.
    pub fn discarded_scatter(&self) -> f64 {
        (self.total_scatter - self.scatter_eigenvalues.iter().sum::<f64>()).max(0.0)
    }
}

/// Project the rows of `samples` (n x d) onto their top `target_dim`
/// principal directions.
///
/// Each component is oriented so its largest-magnitude entry is positive.
/// When the data has fewer than `target_dim` non-degenerate directions the
/// remaining components are zero and `rank_deficient` is set.
pub fn pca_reduce(samples: &DMatrix<f64>, target_dim: usize) -> Result<(DMatrix<f64>, PcaBasis)> {
    let (n, d) = samples.shape();
    if target_dim == 0 || target_dim > d {
        return Err(Error::invalid(format!(
            "target dimension {target_dim} must be in 1..={d}"
        )));
    }
    if n < target_dim {
        return Err(Error::InsufficientData {
            needed: target_dim,
            got: n,
        });
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("samples contain non-finite values"));
    }

    let mean = samples.row_mean().transpose();
    let mut centered = samples.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let total_scatter = centered.iter().map(|v| v * v).sum::<f64>();

    // Eigenvectors of the smaller of X^T X (d x d) and X X^T (n x n).
    let (values, vectors) = if n >= d {
        let scatter = centered.transpose() * &centered;
        let eig = SymmetricEigen::new(scatter);
        let order = descending(&eig.eigenvalues);
        let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vectors: Vec<DVector<f64>> = order
            .iter()
            .map(|&i| eig.eigenvectors.column(i).into_owned())
            .collect();
        (values, vectors)
    } else {
        let gram = &centered * centered.transpose();
        let eig = SymmetricEigen::new(gram);
        let order = descending(&eig.eigenvalues);
        let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vectors: Vec<DVector<f64>> = order
            .iter()
            .map(|&i| {
                let v = centered.transpose() * eig.eigenvectors.column(i);
                let norm = v.norm();
                if norm > 0.0 {
                    v / norm
                } else {
                    v
                }
            })
            .collect();
        (values, vectors)
    };

    let top = values.first().copied().unwrap_or(0.0).max(0.0);
    let mut components = DMatrix::zeros(target_dim, d);
    let mut kept = Vec::with_capacity(target_dim);
    let mut rank_deficient = false;
    for k in 0..target_dim {
        let lambda = values.get(k).copied().unwrap_or(0.0);
        if top == 0.0 || lambda <= top * RANK_TOLERANCE {
            rank_deficient = true;
            kept.push(0.0);
            continue;
        }
        let mut v = vectors[k].clone();
        let lead = v.iter().enumerate().fold(0, |best, (i, x)| {
            if x.abs() > v[best].abs() {
                i
            } else {
                best
            }
        });
        if v[lead] < 0.0 {
            v = -v;
        }
        components.row_mut(k).copy_from(&v.transpose());
        kept.push(lambda);
    }

    let reduced = &centered * components.transpose();
    Ok((
        reduced,
        PcaBasis {
            mean,
            components,
            scatter_eigenvalues: kept,
            total_scatter,
            rank_deficient,
            samples: n,
        },
    ))
}

/// Indices sorting `values` from largest to smallest, ties by index.
fn descending(values: &DVector<f64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}
