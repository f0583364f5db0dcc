//! Small dense least-squares helpers.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

/// Minimum-norm least-squares solution via SVD. The flag is set when the
/// matrix is numerically rank deficient.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, bool) {
    if a.ncols() == 0 {
        return (DVector::zeros(0), false);
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * f64::EPSILON * a.nrows().max(a.ncols()) as f64;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let x = if smax > 0.0 {
        svd.solve(b, tol).expect("SVD computed with both factors")
    } else {
        DVector::zeros(a.ncols())
    };
    (x, rank < a.ncols())
}

/// Solve the symmetric positive semi-definite system `g w = b`; falls back to
/// a pseudo-inverse when `g` is singular.
pub fn solve_spd(g: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if g.nrows() == 0 {
        return DVector::zeros(0);
    }
    if let Some(ch) = Cholesky::new(g.clone()) {
        let diag_min = ch.l_dirty().diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        let diag_max = ch.l_dirty().diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if diag_min > 1e-7 * diag_max {
            return ch.solve(b);
        }
    }
    let eig = SymmetricEigen::new(g.clone());
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = lmax * 1e-12;
    let qtb = eig.eigenvectors.transpose() * b;
    let scaled = DVector::from_iterator(
        qtb.len(),
        qtb.iter()
            .zip(eig.eigenvalues.iter())
            .map(|(v, &l)| if l > tol { v / l } else { 0.0 }),
    );
    eig.eigenvectors * scaled
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lstsq_recovers_exact_solution() {
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let b = DVector::from_column_slice(&[1.0, 3.0, 5.0, 7.0]);
        let (x, deficient) = lstsq(&a, &b);
        assert!(!deficient);
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn lstsq_flags_duplicate_columns() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let b = DVector::from_column_slice(&[2.0, 4.0, 6.0]);
        let (x, deficient) = lstsq(&a, &b);
        assert!(deficient);
        // minimum-norm split of the coefficient 2 across both columns
        assert!((x[0] - 1.0).abs() < 1e-10 && (x[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn spd_solve_handles_singular_gram() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_column_slice(&[2.0, 2.0]);
        let w = solve_spd(&g, &b);
        assert!((w[0] - 1.0).abs() < 1e-10 && (w[1] - 1.0).abs() < 1e-10);
    }
}
