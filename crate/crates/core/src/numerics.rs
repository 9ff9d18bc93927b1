//! Dense linear-algebra kernels shared by the other modules.
//!
//! Everything here is deterministic: factorizations are computed with
//! nalgebra's unblocked routines and results do not depend on thread count.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default rank cutoff, relative to the largest singular value.
pub const DEFAULT_TOL_RANK: f64 = 1e-10;

const SYMMETRY_TOL: f64 = 1e-12;

/// Lower-triangular `L` with `A = L Lᵀ`.
pub fn cholesky_factor(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(Error::param(format!(
            "cholesky needs a nonempty square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let scale = a.amax().max(f64::MIN_POSITIVE);
    for i in 0..n {
        for j in 0..i {
            if (a[(i, j)] - a[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(Error::param(format!(
                    "matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }

    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        // Pivots below rounding level of the original diagonal are not
        // distinguishable from zero.
        let floor = n as f64 * f64::EPSILON * a[(j, j)].abs();
        if diag <= floor || !diag.is_finite() {
            return Err(Error::Conditioning {
                pivot: j,
                value: diag,
                advice: "increase the ridge term".to_string(),
            });
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Solves `L x = b` for lower-triangular `L`.
pub fn solve_lower(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s -= l[(i, k)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Solves `Lᵀ x = b` for lower-triangular `L`.
pub fn solve_lower_transpose(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralSummary {
    /// Smallest of the `min(rows, cols)` singular values, zeros included.
    pub sigma_min: f64,
    /// Smallest singular value above the rank cutoff, if any.
    pub sigma_min_nonzero: Option<f64>,
    pub sigma_max: f64,
    pub rank: usize,
    pub tol_rank: f64,
    /// Descending.
    pub singular_values: Vec<f64>,
}

/// Singular values of `a`, sorted descending.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = a.clone().singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

pub fn spectral_summary(a: &DMatrix<f64>, tol_rank: f64) -> SpectralSummary {
    let s = singular_values(a);
    let sigma_max = s.first().copied().unwrap_or(0.0);
    let sigma_min = s.last().copied().unwrap_or(0.0);
    let cutoff = tol_rank * sigma_max;
    let rank = s.iter().filter(|&&v| v > cutoff && v > 0.0).count();
    let sigma_min_nonzero = if rank > 0 { Some(s[rank - 1]) } else { None };
    SpectralSummary {
        sigma_min,
        sigma_min_nonzero,
        sigma_max,
        rank,
        tol_rank,
        singular_values: s,
    }
}

/// Full singular spectrum summary at the default rank tolerance.
pub fn min_singular_value(a: &DMatrix<f64>) -> SpectralSummary {
    spectral_summary(a, DEFAULT_TOL_RANK)
}

/// Thin SVD restricted to the numerical range: returns `(U_r, sigma_r, V_r)`
/// with `A ≈ U_r diag(sigma_r) V_rᵀ`, singular values descending.
pub fn truncated_svd(
    a: &DMatrix<f64>,
    tol_rank: f64,
) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return (DMatrix::zeros(m, 0), Vec::new(), DMatrix::zeros(n, 0));
    }
    let svd = SVD::new(a.clone(), true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let smax = order
        .first()
        .map(|&i| svd.singular_values[i])
        .unwrap_or(0.0);
    let keep: Vec<usize> = order
        .into_iter()
        .filter(|&i| {
            let s = svd.singular_values[i];
            s > tol_rank * smax && s > 0.0
        })
        .collect();
    let ur = DMatrix::from_fn(m, keep.len(), |r, c| u[(r, keep[c])]);
    let vr = DMatrix::from_fn(n, keep.len(), |r, c| vt[(keep[c], r)]);
    let sr = keep.iter().map(|&i| svd.singular_values[i]).collect();
    (ur, sr, vr)
}

/// Orthonormal basis (as columns) of `ker A`.
pub fn nullspace_basis(a: &DMatrix<f64>, tol_rank: f64) -> DMatrix<f64> {
    let (m, n) = a.shape();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    // Pad to at least n rows so the SVD yields a full right basis.
    let padded = if m < n {
        let mut p = DMatrix::<f64>::zeros(n, n);
        p.view_mut((0, 0), (m, n)).copy_from(a);
        p
    } else {
        a.clone()
    };
    let svd = SVD::new(padded, false, true);
    let vt = svd.v_t.expect("v_t requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cutoff = tol_rank * smax;
    let null: Vec<usize> = (0..n)
        .filter(|&i| svd.singular_values[i] <= cutoff)
        .collect();
    DMatrix::from_fn(n, null.len(), |r, c| vt[(null[c], r)])
}

/// Orthonormal basis of the column span of `a`.
pub fn orthonormal_columns(a: &DMatrix<f64>, tol_rank: f64) -> DMatrix<f64> {
    truncated_svd(a, tol_rank).0
}

/// Orthogonal projection of `v` onto the span of the orthonormal columns of `basis`.
pub fn project(v: &DVector<f64>, basis: &DMatrix<f64>) -> DVector<f64> {
    if basis.ncols() == 0 {
        return DVector::zeros(v.len());
    }
    basis * (basis.transpose() * v)
}

/// `‖v − Proj_V v‖₂`.
pub fn distance_to_span(v: &DVector<f64>, basis: &DMatrix<f64>) -> f64 {
    (v - project(v, basis)).norm()
}

fn symmetric_power(a: &DMatrix<f64>, power: f64) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(a.clone());
    if let Some(bad) = eig.eigenvalues.iter().position(|&l| l <= 0.0) {
        return Err(Error::Conditioning {
            pivot: bad,
            value: eig.eigenvalues[bad],
            advice: "symmetric root requires a positive-definite matrix".to_string(),
        });
    }
    let q = &eig.eigenvectors;
    let d = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| l.powf(power)),
    );
    let scaled = DMatrix::from_fn(q.nrows(), q.ncols(), |i, j| q[(i, j)] * d[j]);
    let mut out = scaled * q.transpose();
    // Symmetrize away rounding.
    let t = out.transpose();
    out += t;
    out *= 0.5;
    Ok(out)
}

/// Symmetric positive square root `A^{1/2}`.
pub fn symmetric_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    symmetric_power(a, 0.5)
}

/// Symmetric inverse square root `A^{-1/2}`.
pub fn symmetric_inv_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    symmetric_power(a, -0.5)
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = a.clone().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn norm1(v: &DVector<f64>) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

pub fn norm_inf(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}
