//! Small dense symmetric solves. Every matrix here is tiny (covariate
//! dimension or sieve dimension), so plain Cholesky with explicit loops
//! beats pulling in a LAPACK backend.

use ndarray::{Array1, Array2};

/// Lower Cholesky factor of a symmetric positive definite matrix, or `None`
/// if a pivot is not strictly positive.
pub fn cholesky(a: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[(i, j)];
            for k in 0..j {
                sum -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return None;
                }
                l[(i, i)] = sum.sqrt();
            } else {
                l[(i, j)] = sum / l[(j, j)];
            }
        }
    }
    Some(l)
}

/// Solve `A x = b` given the lower Cholesky factor of `A`.
pub fn chol_solve(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut y = b.clone();
    for i in 0..n {
        for k in 0..i {
            let v = y[k];
            y[i] -= l[(i, k)] * v;
        }
        y[i] /= l[(i, i)];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            let v = y[k];
            y[i] -= l[(k, i)] * v;
        }
        y[i] /= l[(i, i)];
    }
    y
}

/// Solve `A X = B` column by column.
pub fn chol_solve_matrix(l: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros(b.dim());
    for (j, col) in b.columns().into_iter().enumerate() {
        let x = chol_solve(l, &col.to_owned());
        out.column_mut(j).assign(&x);
    }
    out
}

/// Reciprocal 1-norm condition number `1 / (||A||_1 ||A^{-1}||_1)`, with the
/// inverse norm computed exactly from Cholesky solves (fine at these sizes).
pub fn reciprocal_condition(a: &Array2<f64>, l: &Array2<f64>) -> f64 {
    let n = a.nrows();
    let norm_a = one_norm(a);
    let mut norm_inv: f64 = 0.0;
    for j in 0..n {
        let mut e = Array1::<f64>::zeros(n);
        e[j] = 1.0;
        let col = chol_solve(l, &e);
        norm_inv = norm_inv.max(col.iter().map(|v| v.abs()).sum());
    }
    if norm_a == 0.0 || norm_inv == 0.0 {
        return 0.0;
    }
    1.0 / (norm_a * norm_inv)
}

fn one_norm(a: &Array2<f64>) -> f64 {
    a.columns()
        .into_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum())
        .fold(0.0f64, f64::max)
}

/// Force exact symmetry by averaging with the transpose.
pub fn symmetrize(a: &mut Array2<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in 0..i {
            let m = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = m;
            a[(j, i)] = m;
        }
    }
}
