//! Mehrotra predictor-corrector interior-point method for standard-form
//! linear programs `min cᵀx s.t. Ax = b, x ≥ 0`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::DEFAULT_TOL_RANK;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IpmOptions {
    /// Relative tolerance on primal/dual residuals and the duality gap.
    pub tol: f64,
    pub max_iter: usize,
    /// Fraction of the distance to the boundary taken per step.
    pub step_fraction: f64,
}

impl Default for IpmOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 200,
            step_fraction: 0.995,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub s: DVector<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    /// `|cᵀx − bᵀy| / (1 + |cᵀx|)`.
    pub relative_gap: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// `max_i x_i s_i`.
    pub complementarity: f64,
    pub iterations: usize,
}

/// Replaces `[A | b]` by an equivalent system with orthonormal rows,
/// dropping linearly dependent rows. Errors when the dropped rows are
/// inconsistent.
pub fn orthonormalize_rows(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if a.nrows() == 0 {
        return Ok((a.clone(), b.clone()));
    }
    let (u, sig, v) = crate::numerics::truncated_svd(a, DEFAULT_TOL_RANK);
    let ub = u.transpose() * b;
    let resid = (b - &u * &ub).norm();
    if resid > 1e-9 * (1.0 + b.norm()) {
        return Err(Error::Infeasible(format!(
            "equality constraints inconsistent (residual {resid:.3e})"
        )));
    }
    let rhs = DVector::from_fn(sig.len(), |i, _| ub[i] / sig[i]);
    Ok((v.transpose(), rhs))
}

fn solve_normal(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = m.clone().cholesky() {
        return Some(ch.solve(rhs));
    }
    let scale = (0..m.nrows()).map(|i| m[(i, i)].abs()).fold(0.0, f64::max).max(1.0);
    let mut reg = m.clone();
    for i in 0..reg.nrows() {
        reg[(i, i)] += 1e-13 * scale;
    }
    if let Some(ch) = reg.clone().cholesky() {
        return Some(ch.solve(rhs));
    }
    reg.lu().solve(rhs)
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, &d)| d < 0.0)
        .map(|(&x, &d)| -x / d)
        .fold(1.0, f64::min)
}

/// Solves `min cᵀx s.t. Ax = b, x ≥ 0`. `A` must have full row rank (see
/// [`orthonormalize_rows`]).
pub fn solve_standard_lp(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    c: &DVector<f64>,
    opts: IpmOptions,
) -> Result<LpSolution> {
    let (m, n) = a.shape();
    if b.len() != m || c.len() != n {
        return Err(Error::param("LP dimensions do not agree"));
    }
    let at = a.transpose();
    let bnorm = b.norm();
    let cnorm = c.norm();

    // Mehrotra starting point.
    let aat = a * &at;
    let (mut x, mut y, mut s) = match (solve_normal(&aat, b), solve_normal(&aat, &(a * c))) {
        (Some(t), Some(yy)) if m > 0 => {
            let xt = &at * t;
            let st = c - &at * &yy;
            (xt, yy, st)
        }
        _ => (DVector::from_element(n, 1.0), DVector::zeros(m), c.clone()),
    };
    let dx = (-1.5 * x.min()).max(0.0);
    let ds = (-1.5 * s.min()).max(0.0);
    x.add_scalar_mut(dx);
    s.add_scalar_mut(ds);
    let xs = x.dot(&s);
    let (sx, ss) = (x.sum(), s.sum());
    if xs > 0.0 && sx > 0.0 && ss > 0.0 {
        x.add_scalar_mut(0.5 * xs / ss);
        s.add_scalar_mut(0.5 * xs / sx);
    }
    let floor = 1e-2 * (1.0 + bnorm.max(cnorm));
    x.iter_mut().for_each(|v| *v = v.max(floor));
    s.iter_mut().for_each(|v| *v = v.max(floor));
    if m == 0 {
        y = DVector::zeros(0);
    }

    let mut iterations = 0;
    let mut status = LpStatus::MaxIterations;
    for it in 0..opts.max_iter {
        iterations = it;
        let rp = b - a * &x;
        let rd = c - &at * &y - &s;
        let pobj = c.dot(&x);
        let dobj = b.dot(&y);
        let mu = x.dot(&s) / n as f64;
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs());
        let pres = rp.norm() / (1.0 + bnorm);
        let dres = rd.norm() / (1.0 + cnorm);
        if pres <= opts.tol && dres <= opts.tol && gap <= opts.tol {
            status = LpStatus::Optimal;
            break;
        }
        let xmax = x.amax();
        let ymax = if m > 0 { y.amax() } else { 0.0 };
        if !xmax.is_finite() || !ymax.is_finite() {
            break;
        }
        if xmax > 1e14 * (1.0 + bnorm) && dres < opts.tol.sqrt() {
            status = LpStatus::Unbounded;
            break;
        }
        if (ymax > 1e14 * (1.0 + cnorm) || s.amax() > 1e14 * (1.0 + cnorm)) && pres < opts.tol.sqrt() {
            status = LpStatus::Infeasible;
            break;
        }

        let d = x.component_div(&s);
        let ad = DMatrix::from_fn(m, n, |i, j| a[(i, j)] * d[j]);
        let normal = &ad * &at;

        // Direction for complementarity target rc = S dx + X ds.
        let direction = |rc: &DVector<f64>| -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
            let sinv_rc = rc.component_div(&s);
            let rhs = &rp - a * &sinv_rc + &ad * &rd;
            let dy = solve_normal(&normal, &rhs)?;
            let ds = &rd - &at * &dy;
            let dx = sinv_rc - d.component_mul(&ds);
            Some((dx, dy, ds))
        };

        let rc_aff = -x.component_mul(&s);
        let Some((dx_a, _, ds_a)) = direction(&rc_aff) else {
            break;
        };
        let ap = max_step(&x, &dx_a);
        let ad_ = max_step(&s, &ds_a);
        let mu_aff = (&x + &dx_a * ap).dot(&(&s + &ds_a * ad_)) / n as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
        let rc = &rc_aff - dx_a.component_mul(&ds_a) + DVector::from_element(n, sigma * mu);
        let Some((dx, dy, ds)) = direction(&rc) else {
            break;
        };
        let ap = (opts.step_fraction * max_step(&x, &dx)).min(1.0);
        let ad_ = (opts.step_fraction * max_step(&s, &ds)).min(1.0);
        x += dx * ap;
        y += dy * ad_;
        s += ds * ad_;
        iterations = it + 1;
    }

    let rp = b - a * &x;
    let rd = c - &at * &y - &s;
    let pobj = c.dot(&x);
    let dobj = b.dot(&y);
    let complementarity = x.iter().zip(s.iter()).map(|(a, b)| (a * b).abs()).fold(0.0, f64::max);
    Ok(LpSolution {
        status,
        primal_objective: pobj,
        dual_objective: dobj,
        relative_gap: (pobj - dobj).abs() / (1.0 + pobj.abs()),
        primal_residual: rp.norm() / (1.0 + bnorm),
        dual_residual: rd.norm() / (1.0 + cnorm),
        complementarity,
        iterations,
        x,
        y,
        s,
    })
}
