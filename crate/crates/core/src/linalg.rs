use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

pub(crate) fn cholesky(a: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(a.clone()).ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

pub(crate) fn chol_logdet(c: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

pub(crate) fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Simultaneous diagonalisation of a pencil `(C, B)` with `B` SPD and `C` symmetric.
///
/// Returns `W` and `lambda` with `W^T B W = I` and `W^T C W = diag(lambda)`,
/// together with `log det B`. Then `(B + r C)^{-1} = W diag(1/(1 + r lambda)) W^T`.
pub(crate) struct Pencil {
    pub w: DMatrix<f64>,
    pub lambda: DVector<f64>,
    pub logdet_b: f64,
}

pub(crate) fn pencil(c: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<Pencil> {
    let chol = cholesky(b, what)?;
    let k = chol.l();
    // K^{-1} C K^{-T}
    let mut tmp = k
        .solve_lower_triangular(c)
        .ok_or_else(|| Error::Numerical(format!("{what}: singular factor")))?;
    tmp.transpose_mut();
    let mut s = k
        .solve_lower_triangular(&tmp)
        .ok_or_else(|| Error::Numerical(format!("{what}: singular factor")))?;
    symmetrize(&mut s);
    let eig = SymmetricEigen::new(s);
    let w = k
        .transpose()
        .solve_upper_triangular(&eig.eigenvectors)
        .ok_or_else(|| Error::Numerical(format!("{what}: singular factor")))?;
    // clamp tiny negative eigenvalues from roundoff on a PSD pencil
    let lambda = eig.eigenvalues.map(|v| v.max(0.0));
    Ok(Pencil {
        w,
        lambda,
        logdet_b: chol_logdet(&chol),
    })
}
