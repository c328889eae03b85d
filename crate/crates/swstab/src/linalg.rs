//! Small dense linear-algebra helpers shared across the crate.

use nalgebra::{Complex, ComplexField, DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest eigenvalue modulus of a square real matrix.
pub(crate) fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Operator 2-norm, computed as sqrt(lambda_max(A^T A)).
pub(crate) fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    let ata = a.transpose() * a;
    sym_eigenvalues(&ata)
        .iter()
        .fold(0.0_f64, |m, &l| m.max(l))
        .max(0.0)
        .sqrt()
}

/// Eigenvalues of a (near-)symmetric matrix, symmetrized first.
pub(crate) fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let s = (m + m.transpose()) * 0.5;
    s.symmetric_eigen().eigenvalues.iter().copied().collect()
}

pub(crate) fn sym_eig_range(m: &DMatrix<f64>) -> (f64, f64) {
    let ev = sym_eigenvalues(m);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for l in ev {
        lo = lo.min(l);
        hi = hi.max(l);
    }
    (lo, hi)
}

/// Whether the symmetric part of `m` is PSD up to `tol` (absolute slack on
/// the minimum eigenvalue).
pub(crate) fn is_psd(m: &DMatrix<f64>, tol: f64) -> bool {
    sym_eig_range(m).0 >= -tol
}

/// Inverse square root of a symmetric positive definite matrix.
pub(crate) fn spd_inv_sqrt(p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (p + p.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut diag = DVector::zeros(eig.eigenvalues.len());
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        if l <= 0.0 {
            return Err(Error::NotPositiveDefinite { min_eigenvalue: l });
        }
        diag[i] = 1.0 / l.sqrt();
    }
    let u = &eig.eigenvectors;
    Ok(u * DMatrix::from_diagonal(&diag) * u.transpose())
}

/// Rank-revealing check: sigma_min / sigma_max of `a`.
pub(crate) fn inverse_condition(a: &DMatrix<f64>) -> f64 {
    let svd = a.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smax == 0.0 {
        0.0
    } else {
        smin / smax
    }
}

/// Spectral projector onto the invariant subspace of eigenvalues strictly
/// inside the circle of radius `r`, by trapezoid quadrature of the resolvent
/// on that circle. `r` must separate the spectrum.
pub(crate) fn spectral_projector_inside(a: &DMatrix<f64>, r: f64, nodes: usize) -> Result<DMatrix<f64>> {
    let d = a.nrows();
    let mut acc = DMatrix::<Complex<f64>>::zeros(d, d);
    let ac = a.map(|v| Complex::new(v, 0.0));
    for k in 0..nodes {
        let theta = 2.0 * std::f64::consts::PI * (k as f64) / (nodes as f64);
        let z = Complex::from_polar(r, theta);
        let m = DMatrix::<Complex<f64>>::from_diagonal_element(d, d, z) - &ac;
        let lu = m.lu();
        let inv = lu
            .try_inverse()
            .ok_or_else(|| Error::Numerical("resolvent is singular on the quadrature contour".into()))?;
        acc += inv * z;
    }
    let scale = 1.0 / nodes as f64;
    Ok(acc.map(|v| v.re * scale))
}

/// Orthonormal basis (columns) for the range of `m`, keeping directions with
/// singular value above `tol` times the largest.
pub(crate) fn range_basis(m: &DMatrix<f64>, rank: usize) -> Result<DMatrix<f64>> {
    let svd = m.clone().svd(true, false);
    let u = svd
        .u
        .as_ref()
        .ok_or_else(|| Error::Numerical("SVD did not produce U".into()))?;
    if rank > u.ncols() {
        return Err(Error::Numerical("requested range basis larger than matrix".into()));
    }
    Ok(u.columns(0, rank).into_owned())
}

/// Orthonormal basis for the null space of a complex matrix: right singular
/// vectors whose singular values are at most `tol` times the largest.
pub(crate) fn complex_null_basis(m: &DMatrix<Complex<f64>>, tol: f64) -> Result<DMatrix<Complex<f64>>> {
    let n = m.ncols();
    let svd = m.clone().svd(false, true);
    let vt = svd
        .v_t
        .as_ref()
        .ok_or_else(|| Error::Numerical("SVD did not produce V^T".into()))?;
    let smax = svd.singular_values.max().max(f64::MIN_POSITIVE);
    let mut cols = Vec::new();
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s <= tol * smax {
            cols.push(vt.row(i).map(|v| v.conjugate()).transpose());
        }
    }
    // rows of V^T with tiny singular values span the null space; if the
    // matrix is wide/tall the SVD here is economy-size, so singular vectors
    // beyond the listed singular values do not occur for square inputs.
    let mut basis = DMatrix::<Complex<f64>>::zeros(n, cols.len());
    for (j, c) in cols.iter().enumerate() {
        basis.set_column(j, c);
    }
    Ok(basis)
}
