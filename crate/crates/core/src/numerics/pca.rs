use nalgebra::{DMatrix, SymmetricEigen};

use super::{Matrix, NumericsError};

/// Result of [`pca_fit_transform`].
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    /// `M×k` coordinates of the centered data.
    pub projection: Matrix,
    /// `k×d`, one unit-length component per row.
    pub components: Matrix,
    /// Variance along each component (covariance eigenvalues), non-increasing.
    pub explained_variance: Vec<f64>,
    pub mean: Vec<f64>,
}

/// Projects the rows of `data` onto their top `k` principal components.
///
/// Components come from the eigendecomposition of the sample covariance and
/// are oriented so that each component's largest-magnitude loading is
/// positive. All-identical rows yield a zero projection.
pub fn pca_fit_transform(data: &Matrix, k: usize) -> Result<Pca, NumericsError> {
    let (m, d) = data.shape();
    if m < 2 || k == 0 || k > m.min(d) {
        return Err(NumericsError::ComponentsOutOfRange { k, rows: m, cols: d });
    }
    if !data.is_finite() {
        return Err(NumericsError::NonFinite("pca input".into()));
    }

    let mut mean = data.column_sums();
    mean.scale(1.0 / m as f64);
    let mut centered = data.clone();
    let neg_mean = mean.map(|v| -v);
    centered.add_row_broadcast(&neg_mean);

    let mut cov = centered.matmul_tn(&centered);
    cov.scale(1.0 / (m - 1) as f64);
    let eigen = SymmetricEigen::new(DMatrix::from_row_slice(d, d, cov.as_slice()));

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eigen.eigenvalues[b]
            .total_cmp(&eigen.eigenvalues[a])
            .then(a.cmp(&b))
    });

    let degenerate = centered.as_slice().iter().all(|&v| v == 0.0);
    if degenerate {
        log::warn!("pca input rows are all identical; projection is zero");
    }

    let mut components = Matrix::zeros(k, d);
    let mut explained_variance = Vec::with_capacity(k);
    for (row, &idx) in order.iter().take(k).enumerate() {
        let column = eigen.eigenvectors.column(idx);
        let pivot = (0..d)
            .max_by(|&a, &b| column[a].abs().total_cmp(&column[b].abs()).then(b.cmp(&a)))
            .expect("d >= 1");
        let sign = if column[pivot] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..d {
            components.set(row, j, sign * column[j]);
        }
        explained_variance.push(if degenerate { 0.0 } else { eigen.eigenvalues[idx].max(0.0) });
    }

    let projection = if degenerate {
        Matrix::zeros(m, k)
    } else {
        centered.matmul_nt(&components)
    };
    Ok(Pca {
        projection,
        components,
        explained_variance,
        mean: mean.into_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_points_follow_difference() {
        let data = Matrix::from_rows(&[[1.0, 2.0, 3.0], [3.0, 1.0, 3.0]]);
        let pca = pca_fit_transform(&data, 1).unwrap();
        let norm = 5f64.sqrt();
        let expected = [2.0 / norm, -1.0 / norm, 0.0];
        for (a, b) in pca.components.row(0).iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((pca.projection.get(0, 0) + pca.projection.get(1, 0)).abs() < 1e-12);
    }

    #[test]
    fn range_and_degenerate() {
        let data = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]]);
        assert!(pca_fit_transform(&data, 3).is_err());
        assert!(pca_fit_transform(&data, 0).is_err());
        assert!(pca_fit_transform(&Matrix::from_rows(&[[1.0, 2.0]]), 1).is_err());
        let pca = pca_fit_transform(&data, 2).unwrap();
        assert!(pca.projection.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(pca.explained_variance, vec![0.0, 0.0]);
    }
}
