//! Test-only reference computations that share no code with the library's
//! solver paths.

use nalgebra::{DMatrix, DVector};

pub struct OracleFit {
    pub coefficients: Vec<f64>,
    pub residuals: Vec<f64>,
    pub sigma2_hat: f64,
}

/// OLS through the normal equations `X'X b = X'y`, assembled by explicit
/// loops and solved with Gaussian elimination.
#[allow(clippy::needless_range_loop)]
pub fn normal_equations_fit(y: &DVector<f64>, x: &DMatrix<f64>, intercept: bool) -> Option<OracleFit> {
    let t = y.len();
    let p = x.ncols() + usize::from(intercept);
    let regressor = |i: usize, j: usize| -> f64 {
        if intercept {
            if j == 0 {
                1.0
            } else {
                x[(i, j - 1)]
            }
        } else {
            x[(i, j)]
        }
    };
    let mut a = vec![vec![0.0; p + 1]; p];
    for r in 0..p {
        for c in 0..p {
            a[r][c] = (0..t).map(|i| regressor(i, r) * regressor(i, c)).sum();
        }
        a[r][p] = (0..t).map(|i| regressor(i, r) * y[i]).sum();
    }
    let coefficients = gauss_solve(a)?;
    let residuals: Vec<f64> = (0..t)
        .map(|i| y[i] - (0..p).map(|j| regressor(i, j) * coefficients[j]).sum::<f64>())
        .collect();
    let sigma2_hat = residuals.iter().map(|r| r * r).sum::<f64>() / t as f64;
    Some(OracleFit {
        coefficients,
        residuals,
        sigma2_hat,
    })
}

/// Solves an augmented system `[A | b]` by elimination with partial pivoting.
#[allow(clippy::needless_range_loop)]
pub fn gauss_solve(mut a: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    let n = a.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            for k in col..=n {
                a[row][k] -= factor * a[col][k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (a[row][n] - tail) / a[row][row];
    }
    Some(x)
}
