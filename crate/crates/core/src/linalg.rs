//! Small dense linear-algebra helpers shared by the embedders and the
//! attribute predictor.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Squared Euclidean distance between row `i` of `a` and row `j` of `b`.
pub fn row_sq_dist(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
    debug_assert_eq!(a.ncols(), b.ncols());
    let mut acc = 0.0;
    for c in 0..a.ncols() {
        let d = a[(i, c)] - b[(j, c)];
        acc += d * d;
    }
    acc
}

/// Squared Euclidean distance between a vector and row `j` of `b`.
pub fn vec_row_sq_dist(x: &[f64], b: &DMatrix<f64>, j: usize) -> f64 {
    debug_assert_eq!(x.len(), b.ncols());
    let mut acc = 0.0;
    for (c, xv) in x.iter().enumerate() {
        let d = xv - b[(j, c)];
        acc += d * d;
    }
    acc
}

pub fn row_vec(m: &DMatrix<f64>, i: usize) -> Vec<f64> {
    (0..m.ncols()).map(|c| m[(i, c)]).collect()
}

/// Symmetric matrix of pairwise Euclidean distances between rows.
pub fn pairwise_distances(points: &DMatrix<f64>) -> DMatrix<f64> {
    let n = points.nrows();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = row_sq_dist(points, i, points, j).sqrt();
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

/// Median of a non-empty slice (mean of the two middle values for even length).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 0 {
        0.5 * (v[mid - 1] + v[mid])
    } else {
        v[mid]
    })
}

/// `H K H` with `H = I - 11ᵀ/n`.
pub fn double_center(k: &DMatrix<f64>) -> DMatrix<f64> {
    let n = k.nrows();
    let nf = n as f64;
    let row_means: Vec<f64> = (0..n).map(|i| k.row(i).sum() / nf).collect();
    let col_means: Vec<f64> = (0..n).map(|j| k.column(j).sum() / nf).collect();
    let grand = row_means.iter().sum::<f64>() / nf;
    DMatrix::from_fn(n, n, |i, j| k[(i, j)] - row_means[i] - col_means[j] + grand)
}

/// Eigen-decomposition of a symmetric matrix with a canonical ordering and
/// sign: eigenvalues ascending or descending as requested (stable on ties),
/// and each eigenvector flipped so its entry of largest magnitude (first one
/// on ties) is positive.
pub fn symmetric_eigen_sorted(m: &DMatrix<f64>, descending: bool) -> (Vec<f64>, DMatrix<f64>) {
    // Exact symmetry keeps the decomposition independent of which triangle
    // the solver happens to read.
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let (va, vb) = (eig.eigenvalues[a], eig.eigenvalues[b]);
        if descending {
            vb.total_cmp(&va)
        } else {
            va.total_cmp(&vb)
        }
    });
    let values: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = DMatrix::zeros(m.nrows(), n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col: DVector<f64> = eig.eigenvectors.column(src).into_owned();
        let mut pivot = 0;
        for r in 1..col.len() {
            if col[r].abs() > col[pivot].abs() {
                pivot = r;
            }
        }
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
        vectors.set_column(dst, &col);
    }
    (values, vectors)
}

/// Solves `A X = B` for symmetric positive-definite `A`.
pub fn spd_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = Cholesky::new(a.clone())
        .ok_or_else(|| Error::numeric("matrix is not positive definite"))?;
    Ok(chol.solve(b))
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}
