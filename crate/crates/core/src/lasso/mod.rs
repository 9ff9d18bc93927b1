//! The S-preconditioned Lasso `min ‖Sᵀw‖₁ s.t. Xw = y`, solved as a linear
//! program, and adjudication of recovery against a reference signal.
//!
//! Since `ker Sᵀ = {0}`, the program is rewritten in `u = Sᵀw`: the
//! constraint `Xw = y` becomes `X(Sᵀ)⁺u = y` together with
//! `u ∈ range(Sᵀ)`. Splitting `u = p − q` with `p, q ≥ 0` gives a
//! standard-form LP with objective `1ᵀ(p + q)`.

pub mod ipm;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{self, norm1, norm_inf, DEFAULT_TOL_RANK};
use ipm::{orthonormalize_rows, solve_standard_lp, IpmOptions, LpStatus};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LassoTolerances {
    /// Relative duality gap for the interior-point solve.
    pub tol_gap: f64,
    /// Improvement margin, relative to `‖Sᵀw*‖₁`.
    pub tol_obj_rel: f64,
    /// Recovery radius, relative to `1 + ‖w*‖₂`.
    pub tol_rec: f64,
    /// Feasibility of an improving direction, relative to `‖X‖_F`.
    pub tol_feas: f64,
}

impl Default for LassoTolerances {
    fn default() -> Self {
        Self {
            tol_gap: 1e-9,
            tol_obj_rel: 1e-6,
            tol_rec: 1e-6,
            tol_feas: 1e-9,
        }
    }
}

/// A preconditioner prepared for repeated solves.
#[derive(Debug, Clone)]
pub struct PreparedPreconditioner {
    /// `Sᵀ` (`s × n`).
    st: DMatrix<f64>,
    /// `(Sᵀ)⁺` (`n × s`).
    pinv: DMatrix<f64>,
    /// Orthonormal basis of `range(Sᵀ)^⊥ = ker S` (`s × (s − n)`).
    perp: DMatrix<f64>,
}

impl PreparedPreconditioner {
    /// `s` is the `n × s` preconditioner matrix.
    pub fn new(s: &DMatrix<f64>) -> Result<Self> {
        let st = s.transpose();
        let sv = numerics::singular_values(&st);
        let smax = sv.first().copied().unwrap_or(0.0);
        let smin = if st.nrows() >= st.ncols() {
            sv.last().copied().unwrap_or(0.0)
        } else {
            0.0
        };
        if !(smax > 0.0 && smin > 1e-8 * smax) {
            return Err(Error::param(format!(
                "preconditioner has nontrivial ker Sᵀ (σ_min = {smin:.3e}, σ_max = {smax:.3e})"
            )));
        }
        let pinv = st
            .clone()
            .pseudo_inverse(DEFAULT_TOL_RANK * smax)
            .map_err(|e| Error::param(e.to_string()))?;
        let perp = if st.nrows() > st.ncols() {
            numerics::nullspace_basis(s, DEFAULT_TOL_RANK)
        } else {
            DMatrix::zeros(st.nrows(), 0)
        };
        Ok(Self { st, pinv, perp })
    }

    pub fn n(&self) -> usize {
        self.st.ncols()
    }

    pub fn s(&self) -> usize {
        self.st.nrows()
    }

    pub fn st(&self) -> &DMatrix<f64> {
        &self.st
    }

    /// `‖Sᵀw‖₁`.
    pub fn objective(&self, w: &DVector<f64>) -> f64 {
        norm1(&(&self.st * w))
    }
}

#[derive(Debug, Clone)]
pub struct LassoProblem {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub s: DMatrix<f64>,
    pub w_star: Option<DVector<f64>>,
}

impl LassoProblem {
    /// Noiseless problem `y = Xw*`.
    pub fn noiseless(x: DMatrix<f64>, s: DMatrix<f64>, w_star: DVector<f64>) -> Self {
        let y = &x * &w_star;
        Self {
            x,
            y,
            s,
            w_star: Some(w_star),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LassoSolution {
    pub w: Vec<f64>,
    pub objective: f64,
    pub status: LpStatus,
    pub iterations: usize,
    pub relative_gap: f64,
    pub complementarity: f64,
    /// Solution snapped to an exact vertex of the active set.
    pub polished: bool,
    /// Feasible set is a single point.
    pub unique_feasible: bool,
}

/// Solves `min ‖Sᵀw‖₁ s.t. Xw = y`.
pub fn solve_preconditioned_lasso(prob: &LassoProblem, tols: LassoTolerances) -> Result<LassoSolution> {
    let pre = PreparedPreconditioner::new(&prob.s)?;
    solve_prepared(&pre, &prob.x, &prob.y, tols)
}

pub fn solve_prepared(
    pre: &PreparedPreconditioner,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    tols: LassoTolerances,
) -> Result<LassoSolution> {
    let n = pre.n();
    let s = pre.s();
    if x.ncols() != n || y.len() != x.nrows() {
        return Err(Error::param("X, y and S dimensions do not agree"));
    }
    // Constraints on u: X(Sᵀ)⁺u = y and (ker S)ᵀu = 0.
    let xs = x * &pre.pinv;
    let k = pre.perp.ncols();
    let mut g0 = DMatrix::zeros(xs.nrows() + k, s);
    g0.view_mut((0, 0), xs.shape()).copy_from(&xs);
    if k > 0 {
        g0.view_mut((xs.nrows(), 0), (k, s)).copy_from(&pre.perp.transpose());
    }
    let mut b0 = DVector::zeros(xs.nrows() + k);
    b0.rows_mut(0, y.len()).copy_from(y);
    let (g, rhs) = orthonormalize_rows(&g0, &b0)?;

    let finish = |u: DVector<f64>, status, iterations, relative_gap, complementarity, polished, unique| {
        let w = &pre.pinv * &u;
        let objective = pre.objective(&w);
        LassoSolution {
            w: w.iter().copied().collect(),
            objective,
            status,
            iterations,
            relative_gap,
            complementarity,
            polished,
            unique_feasible: unique,
        }
    };

    if g.nrows() == s {
        // Square orthonormal system: exactly one feasible point.
        let u = g.transpose() * &rhs;
        return Ok(finish(u, LpStatus::Optimal, 0, 0.0, 0.0, false, true));
    }

    let rows = g.nrows();
    let mut a = DMatrix::zeros(rows, 2 * s);
    a.view_mut((0, 0), (rows, s)).copy_from(&g);
    a.view_mut((0, s), (rows, s)).copy_from(&(-&g));
    let c = DVector::from_element(2 * s, 1.0);
    let opts = IpmOptions {
        tol: tols.tol_gap,
        ..IpmOptions::default()
    };
    let sol = solve_standard_lp(&a, &rhs, &c, opts)?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::NonConvergence(format!(
            "interior point stopped with status {:?} after {} iterations (gap {:.3e})",
            sol.status, sol.iterations, sol.relative_gap
        )));
    }
    let u = sol.x.rows(0, s) - sol.x.rows(s, s);
    let (u, polished) = match polish(&g, &rhs, &u) {
        Some(p) => (p, true),
        None => (u, false),
    };
    Ok(finish(
        u,
        sol.status,
        sol.iterations,
        sol.relative_gap,
        sol.complementarity,
        polished,
        false,
    ))
}

/// Snaps an interior-point solution to the vertex determined by its
/// numerical support when that vertex is feasible, sign-consistent and no
/// worse.
fn polish(g: &DMatrix<f64>, rhs: &DVector<f64>, u: &DVector<f64>) -> Option<DVector<f64>> {
    let umax = norm_inf(u);
    if umax == 0.0 {
        return None;
    }
    let support: Vec<usize> = (0..u.len()).filter(|&i| u[i].abs() > 1e-6 * umax).collect();
    if support.is_empty() || support.len() > g.nrows() {
        return None;
    }
    let gj = g.select_columns(&support);
    let svd = gj.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.min() <= 1e-10 * smax {
        return None;
    }
    let uj = svd.solve(rhs, 0.0).ok()?;
    if (&gj * &uj - rhs).norm() > 1e-10 * (1.0 + rhs.norm()) {
        return None;
    }
    if support.iter().zip(uj.iter()).any(|(&i, &v)| v * u[i] <= 0.0) {
        return None;
    }
    let mut out = DVector::zeros(u.len());
    for (&i, &v) in support.iter().zip(uj.iter()) {
        out[i] = v;
    }
    if norm1(&out) > norm1(u) * (1.0 + 1e-9) {
        return None;
    }
    Some(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DirectionReport {
    /// `d` with `Xd = 0` and `‖Sᵀ(w*+d)‖₁ < ‖Sᵀw*‖₁ − tol_obj`.
    pub direction: Option<Vec<f64>>,
    /// `‖Sᵀw*‖₁ − ‖Sᵀ(w*+d)‖₁` for the re-optimized `d`.
    pub improvement: f64,
    pub tol_obj: f64,
    /// `‖Xd‖_∞` after projection onto `ker X`.
    pub feasibility: f64,
    /// `‖(Sᵀe)_{Uᶜ}‖₁ < ⟨Sᵀe, sign(Sᵀw*)⟩` for `e = −d`, `U = supp(Sᵀw*)`.
    pub subgradient_test: Option<bool>,
}

/// Projection onto `ker X`.
fn kernel_projector(x: &DMatrix<f64>) -> impl Fn(&DVector<f64>) -> DVector<f64> {
    let (_, _, v) = numerics::truncated_svd(x, DEFAULT_TOL_RANK);
    move |d: &DVector<f64>| d - &v * (v.transpose() * d)
}

/// Derives the improving direction from an optimizer `ŵ` of the program
/// with `y = Xw*`.
pub fn direction_from_solution(
    pre: &PreparedPreconditioner,
    x: &DMatrix<f64>,
    w_star: &DVector<f64>,
    w_hat: &DVector<f64>,
    tols: LassoTolerances,
) -> DirectionReport {
    let obj_star = pre.objective(w_star);
    let tol_obj = tols.tol_obj_rel * obj_star;
    let proj = kernel_projector(x);
    let d = proj(&(w_hat - w_star));
    let improvement = obj_star - pre.objective(&(w_star + &d));
    let feasibility = if x.nrows() == 0 { 0.0 } else { norm_inf(&(x * &d)) };
    let xf = x.norm();
    let found = improvement > tol_obj && feasibility <= tols.tol_feas * xf.max(f64::MIN_POSITIVE);
    let subgradient_test = (d.norm() > 0.0).then(|| subgradient_failure(pre, w_star, &(-&d)));
    DirectionReport {
        direction: found.then(|| d.iter().copied().collect()),
        improvement,
        tol_obj,
        feasibility,
        subgradient_test,
    }
}

/// `‖(Sᵀe)_{Uᶜ}‖₁ < ⟨Sᵀe, sign(Sᵀw*)⟩`: moving from `w*` along `−e`
/// decreases the objective to first order.
pub fn subgradient_failure(pre: &PreparedPreconditioner, w_star: &DVector<f64>, e: &DVector<f64>) -> bool {
    let z = pre.st() * w_star;
    let se = pre.st() * e;
    let zmax = norm_inf(&z);
    let mut off = 0.0;
    let mut inner = 0.0;
    for i in 0..z.len() {
        if z[i].abs() > 1e-12 * zmax {
            inner += se[i] * z[i].signum();
        } else {
            off += se[i].abs();
        }
    }
    off < inner
}

/// Solves with `y = Xw*` and reports an improving direction if one exists.
pub fn improving_direction(prob: &LassoProblem, tols: LassoTolerances) -> Result<DirectionReport> {
    let w_star = prob
        .w_star
        .as_ref()
        .ok_or_else(|| Error::param("improving_direction needs w*"))?;
    let pre = PreparedPreconditioner::new(&prob.s)?;
    let y = &prob.x * w_star;
    let sol = solve_prepared(&pre, &prob.x, &y, tols)?;
    let w_hat = DVector::from_vec(sol.w);
    Ok(direction_from_solution(&pre, &prob.x, w_star, &w_hat, tols))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Failure,
    Ambiguous,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LassoVerdict {
    pub outcome: Outcome,
    pub objective_at_wstar: f64,
    pub objective_at_solution: f64,
    pub recovery_error: f64,
    pub improvement: f64,
    pub subgradient_test: Option<bool>,
    pub solution: Vec<f64>,
    pub improving_direction: Option<Vec<f64>>,
    pub tolerances: LassoTolerances,
}

/// Classifies a solve: Failure when an improving direction exists, Success
/// when `ŵ` is within the recovery radius, Ambiguous otherwise.
pub fn adjudicate(
    w_star: &DVector<f64>,
    w_hat: &DVector<f64>,
    objective: f64,
    objective_at_wstar: f64,
    dir: &DirectionReport,
    tols: LassoTolerances,
) -> LassoVerdict {
    let recovery_error = (w_hat - w_star).norm();
    let outcome = if dir.direction.is_some() {
        Outcome::Failure
    } else if recovery_error <= tols.tol_rec * (1.0 + w_star.norm()) {
        Outcome::Success
    } else {
        Outcome::Ambiguous
    };
    if outcome == Outcome::Ambiguous {
        log::debug!(
            "ambiguous verdict: improvement {:.3e} (tol {:.3e}), recovery error {:.3e}",
            dir.improvement,
            dir.tol_obj,
            recovery_error
        );
    }
    LassoVerdict {
        outcome,
        objective_at_wstar,
        objective_at_solution: objective,
        recovery_error,
        improvement: dir.improvement,
        subgradient_test: dir.subgradient_test,
        solution: w_hat.iter().copied().collect(),
        improving_direction: dir.direction.clone(),
        tolerances: tols,
    }
}

/// One noiseless trial: solve with `y = Xw*`, derive the direction and
/// adjudicate.
pub fn run_trial(
    pre: &PreparedPreconditioner,
    x: &DMatrix<f64>,
    w_star: &DVector<f64>,
    tols: LassoTolerances,
) -> Result<LassoVerdict> {
    let y = x * w_star;
    let sol = solve_prepared(pre, x, &y, tols)?;
    let w_hat = DVector::from_vec(sol.w);
    let dir = direction_from_solution(pre, x, w_star, &w_hat, tols);
    Ok(adjudicate(
        w_star,
        &w_hat,
        sol.objective,
        pre.objective(w_star),
        &dir,
        tols,
    ))
}
