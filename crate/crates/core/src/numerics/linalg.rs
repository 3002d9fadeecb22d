//! Small dense solvers backed by `nalgebra`.

use nalgebra::{DMatrix, DVector};

use super::Tensor2;
use crate::error::{Error, Result};

/// Inverse of a symmetric positive-definite matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::NumericalDegeneracy("matrix is not positive definite".into()))
}

/// Least-squares solution of `design · beta ≈ target`, via SVD.
pub fn least_squares(design: &DMatrix<f64>, target: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = design.clone().svd(true, true);
    svd.solve(target, 1e-12)
        .map_err(|e| Error::NumericalDegeneracy(format!("least squares failed: {e}")))
}

/// Numerical rank with relative tolerance `tol` on singular values.
pub fn rank(m: &DMatrix<f64>, tol: f64) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    sv.iter()
        .filter(|&&s| s > tol * max.max(f64::MIN_POSITIVE))
        .count()
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut sv: Vec<f64> = m
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Sample correlation matrix of the columns of `data`.
pub fn correlation_matrix(data: &Tensor2) -> Result<DMatrix<f64>> {
    let (n, p) = data.shape();
    if n < 2 {
        return Err(Error::contract("correlation needs at least two rows"));
    }
    let means = data.column_means();
    let mut cov = DMatrix::<f64>::zeros(p, p);
    for r in 0..n {
        let row = data.row(r);
        for i in 0..p {
            let di = row[i] - means[i];
            for j in i..p {
                cov[(i, j)] += di * (row[j] - means[j]);
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            cov[(i, j)] = cov[(j, i)];
        }
    }
    let sd: Vec<f64> = (0..p).map(|i| cov[(i, i)].sqrt()).collect();
    for (i, s) in sd.iter().enumerate() {
        if !(*s > 0.0) {
            return Err(Error::NumericalDegeneracy(format!(
                "column {i} has zero variance"
            )));
        }
    }
    Ok(DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            1.0
        } else {
            cov[(i, j)] / (sd[i] * sd[j])
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn least_squares_recovers_exact_line() {
        let design = DMatrix::from_row_slice(3, 2, &[0.0, 1.0, 1.0, 1.0, 2.0, 1.0]);
        let y = DVector::from_vec(vec![1.0, 3.0, 5.0]);
        let b = least_squares(&design, &y).unwrap();
        assert!((b[0] - 2.0).abs() < 1e-12 && (b[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rank_of_duplicate_rows() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert_eq!(rank(&m, 1e-10), 1);
    }

    #[test]
    fn constant_column_is_degenerate() {
        let t = Tensor2::from_rows(&[[1.0, 2.0], [1.0, 3.0]]).unwrap();
        assert!(matches!(
            correlation_matrix(&t),
            Err(Error::NumericalDegeneracy(_))
        ));
    }
}
