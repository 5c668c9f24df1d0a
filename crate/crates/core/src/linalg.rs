//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{domain, Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Arithmetic mean and unbiased (divisor `m - 1`) covariance of the rows.
pub fn sample_mean_cov(rows: &[DVector<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let m = rows.len();
    if m < 2 {
        return Err(domain(format!("need at least 2 samples, got {m}")));
    }
    let d = rows[0].len();
    let mut mean = DVector::zeros(d);
    for r in rows {
        mean += r;
    }
    mean /= m as f64;
    let mut cov = DMatrix::zeros(d, d);
    for r in rows {
        let c = r - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    cov /= (m - 1) as f64;
    Ok((mean, cov))
}

pub fn cholesky(a: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(a.clone())
        .ok_or_else(|| Error::Factorization("matrix is not positive-definite".into()))
}

/// `ln |A|` from a Cholesky factor.
pub fn chol_logdet(ch: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * ch.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Multivariate normal log-density evaluated through a Cholesky factor.
pub fn mvn_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let ch = cholesky(cov)?;
    let diff = x - mean;
    let z = ch
        .l_dirty()
        .solve_lower_triangular(&diff)
        .ok_or_else(|| Error::Factorization("triangular solve failed".into()))?;
    let d = x.len() as f64;
    Ok(-0.5 * d * LN_2PI - 0.5 * chol_logdet(&ch) - 0.5 * z.norm_squared())
}

/// Symmetric PSD square root by eigendecomposition. Eigenvalues in
/// `[-1e-12 * max(1, lambda_max), 0)` are clamped to zero; anything more
/// negative is rejected.
pub fn sym_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    sym_pow(a, 0.5)
}

/// Symmetric inverse square root of a positive-definite matrix.
pub fn sym_inv_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = a.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::Factorization(
            "inverse square root of a matrix that is not positive-definite".into(),
        ));
    }
    let d = eig.eigenvalues.map(|l| l.powf(-0.5));
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose())
}

fn sym_pow(a: &DMatrix<f64>, power: f64) -> Result<DMatrix<f64>> {
    let eig = a.clone().symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(1.0);
    if eig.eigenvalues.iter().any(|&l| l < -1e-12 * scale || l.is_nan()) {
        return Err(Error::Factorization(
            "matrix has a negative eigenvalue beyond tolerance".into(),
        ));
    }
    let d = eig.eigenvalues.map(|l| l.max(0.0).powf(power));
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose())
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    a.clone().symmetric_eigenvalues().min()
}
