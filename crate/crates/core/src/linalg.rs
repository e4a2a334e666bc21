//! Small dense solvers for ridge and least-squares problems.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{shape_err, Result, RsigError};

/// Relative pivot floor below which a Gram matrix is treated as singular.
const PIVOT_TOL: f64 = 1e-12;

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
pub(crate) fn cholesky(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return shape_err(format!("cholesky needs a square matrix, got {:?}", a.dim()));
    }
    let scale = a.diag().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut diag = a[[j, j]];
        for k in 0..j {
            diag -= l[[j, k]] * l[[j, k]];
        }
        if !(diag > PIVOT_TOL * scale) {
            return Err(RsigError::IllConditioned(format!(
                "Gram matrix is numerically singular at pivot {j} (value {diag:e})"
            )));
        }
        let ljj = diag.sqrt();
        l[[j, j]] = ljj;
        for i in (j + 1)..n {
            let mut v = a[[i, j]];
            for k in 0..j {
                v -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = v / ljj;
        }
    }
    Ok(l)
}

/// Solves `L Lᵀ X = B` column by column.
pub(crate) fn cholesky_solve(l: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for mut col in x.axis_iter_mut(Axis(1)) {
        for i in 0..n {
            let mut v = col[i];
            for k in 0..i {
                v -= l[[i, k]] * col[k];
            }
            col[i] = v / l[[i, i]];
        }
        for i in (0..n).rev() {
            let mut v = col[i];
            for k in (i + 1)..n {
                v -= l[[k, i]] * col[k];
            }
            col[i] = v / l[[i, i]];
        }
    }
    x
}

/// Minimiser of `‖X W − Y‖²_F + λ‖W‖²_F` via the normal equations.
pub(crate) fn ridge_solve(x: ArrayView2<f64>, y: ArrayView2<f64>, ridge: f64) -> Result<Array2<f64>> {
    if x.nrows() != y.nrows() {
        return shape_err(format!("{} design rows but {} targets", x.nrows(), y.nrows()));
    }
    let mut gram = x.t().dot(&x);
    for i in 0..gram.nrows() {
        gram[[i, i]] += ridge;
    }
    let rhs = x.t().dot(&y);
    let l = cholesky(&gram)?;
    Ok(cholesky_solve(&l, &rhs))
}

pub(crate) fn column_means(x: ArrayView2<f64>) -> Array1<f64> {
    x.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(x.ncols()))
}
