//! Hard covariance instances `Σ = (MᵀM + εI)⁻¹`, covariate and signal
//! samplers, preconditioners and compatibility-ratio witnesses.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::design::{gen_bernoulli_design, BinaryDesign};
use crate::error::{Error, Result};
use crate::numerics::{self, norm1, DEFAULT_TOL_RANK};
use crate::seeds;

/// Largest `n` accepted for dense algebra.
pub const DENSE_BUDGET: usize = 2048;

#[derive(Debug, Clone)]
pub struct HardInstance {
    pub design: BinaryDesign,
    pub epsilon: f64,
    /// `Θ̃ = MᵀM + εI`.
    pub theta_tilde: DMatrix<f64>,
    /// Lower Cholesky factor of `Θ̃`.
    pub chol: DMatrix<f64>,
    /// Smallest nonzero eigenvalue of `Θ = MᵀM`; `None` when `Θ = 0`.
    pub lambda: Option<f64>,
    /// `dim ker Θ = n − rank(M)`.
    pub r: usize,
    pub rank: usize,
    pub tol_rank: f64,
}

/// Serializable summary; matrices are rebuilt from `(design, epsilon)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub design: BinaryDesign,
    pub epsilon: f64,
    pub n: usize,
    pub lambda: Option<f64>,
    pub r: usize,
    pub rank: usize,
    pub tol_rank: f64,
    /// `n^{−5/2}`, the reference scale for `λ`.
    pub lambda_reference: f64,
}

impl HardInstance {
    pub fn n(&self) -> usize {
        self.design.n()
    }

    pub fn record(&self) -> InstanceRecord {
        let n = self.n();
        InstanceRecord {
            design: self.design.clone(),
            epsilon: self.epsilon,
            n,
            lambda: self.lambda,
            r: self.r,
            rank: self.rank,
            tol_rank: self.tol_rank,
            lambda_reference: (n as f64).powf(-2.5),
        }
    }

    /// `L⁻¹v`.
    pub fn whiten(&self, v: &DVector<f64>) -> DVector<f64> {
        numerics::solve_lower(&self.chol, v)
    }

    /// `vᵀΘ̃⁻¹v = ‖L⁻¹v‖²`.
    pub fn sigma_quadratic(&self, v: &DVector<f64>) -> f64 {
        self.whiten(v).norm_squared()
    }

    /// `Θ̃⁻¹v` via two triangular solves.
    pub fn sigma_apply(&self, v: &DVector<f64>) -> DVector<f64> {
        numerics::solve_lower_transpose(&self.chol, &self.whiten(v))
    }

    /// Largest eigenvalue of `Θ̃⁻¹` by power iteration on Cholesky solves,
    /// returned as `λ_min(Θ̃)`.
    pub fn min_eigenvalue_via_cholesky(&self, iters: usize, seed: u64) -> f64 {
        let mut rng = seeds::rng(seed);
        let n = self.n();
        let mut v = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        v /= v.norm();
        let mut est = 0.0;
        for _ in 0..iters {
            let w = self.sigma_apply(&v);
            let nw = w.norm();
            let next = v.dot(&w);
            v = w / nw;
            if (next - est).abs() <= 1e-15 * next.abs() {
                est = next;
                break;
            }
            est = next;
        }
        1.0 / est
    }
}

/// Builds `Θ̃ = MᵀM + εI` with its Cholesky factor and spectral data.
pub fn build_instance(design: &BinaryDesign, epsilon: f64) -> Result<HardInstance> {
    if !(epsilon > 0.0) {
        return Err(Error::param("ε must be positive"));
    }
    let n = design.n();
    if n > DENSE_BUDGET {
        return Err(Error::param(format!(
            "n = {n} exceeds the dense-algebra budget {DENSE_BUDGET}"
        )));
    }
    let m = design.to_dense();
    let mut theta_tilde = m.transpose() * &m;
    for i in 0..n {
        theta_tilde[(i, i)] += epsilon;
    }
    let chol = numerics::cholesky_factor(&theta_tilde).map_err(|e| match e {
        Error::Conditioning { pivot, value, .. } => Error::Conditioning {
            pivot,
            value,
            advice: format!("Θ̃ is not numerically positive-definite at ε = {epsilon:e}; increase ε"),
        },
        other => other,
    })?;
    let summary = numerics::spectral_summary(&m, DEFAULT_TOL_RANK);
    let rank = summary.rank;
    Ok(HardInstance {
        design: design.clone(),
        epsilon,
        theta_tilde,
        chol,
        lambda: summary.sigma_min_nonzero.map(|s| s * s),
        r: n - rank,
        rank,
        tol_rank: DEFAULT_TOL_RANK,
    })
}

pub fn instance_from_record(rec: &InstanceRecord) -> Result<HardInstance> {
    build_instance(&rec.design, rec.epsilon)
}

/// `(n/2) × n` Bernoulli design with `d = min(ln² n, n/2)`.
pub fn construction_design(n: usize, seed: u64) -> Result<BinaryDesign> {
    if n < 4 {
        return Err(Error::param("construction needs n ≥ 4"));
    }
    let m = n / 2;
    let d = (n as f64).ln().powi(2).min(m as f64).max(1.0);
    gen_bernoulli_design(m, n, d, seed)
}

/// `Θ̃ = I`: a single all-zero equation with `ε = 1`.
pub fn isotropic_instance(n: usize) -> Result<HardInstance> {
    build_instance(&BinaryDesign::zeros(1, n), 1.0)
}

/// `m × n` matrix with rows i.i.d. `N(0, Θ̃⁻¹)`, `X_i = L⁻ᵀz_i`.
pub fn sample_covariates<R: Rng + ?Sized>(inst: &HardInstance, m: usize, rng: &mut R) -> DMatrix<f64> {
    let n = inst.n();
    let z = DMatrix::from_fn(n, m, |_, _| StandardNormal.sample(&mut *rng));
    let cols = inst
        .chol
        .tr_solve_lower_triangular(&z)
        .expect("Cholesky factor has a positive diagonal");
    cols.transpose()
}

pub fn sample_covariates_seeded(inst: &HardInstance, m: usize, seed: u64) -> DMatrix<f64> {
    sample_covariates(inst, m, &mut seeds::rng(seed))
}

// ---------------------------------------------------------------------------
// Signals

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalDist {
    Invertible,
    Mixture,
    /// Uniform `k`-support with standard normal entries.
    Sparse,
}

impl std::str::FromStr for SignalDist {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "invertible" => Ok(Self::Invertible),
            "mixture" => Ok(Self::Mixture),
            "sparse" => Ok(Self::Sparse),
            other => Err(Error::param(format!("unknown signal distribution {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Invertible,
    MixtureRows,
    MixtureSparse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalDraw {
    pub w_star: Vec<f64>,
    pub branch: Branch,
    /// Row indices `R₁…R_t`.
    pub rows: Vec<usize>,
    /// `Z₀…Z_t` for the invertible branch, `Z₁…Z_t` for mixture rows.
    pub coeffs: Vec<f64>,
    pub perturbation: Option<Vec<f64>>,
    pub k: usize,
    pub t: usize,
    pub sparsity_bound: usize,
    pub resampled_zero_rows: usize,
}

impl SignalDraw {
    pub fn w(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.w_star)
    }

    pub fn support_size(&self) -> usize {
        self.w_star.iter().filter(|v| **v != 0.0).count()
    }
}

/// `M_R / √(M_RᵀΘ̃⁻¹M_R)`.
pub fn normalized_row(inst: &HardInstance, row: usize) -> DVector<f64> {
    let v = inst.design.row_vector(row);
    let q = inst.sigma_quadratic(&v);
    v / q.sqrt()
}

fn draw_rows<R: Rng + ?Sized>(inst: &HardInstance, t: usize, rng: &mut R) -> Result<(Vec<usize>, usize)> {
    let m = inst.design.m();
    if t > 0 && inst.design.nnz() == 0 {
        return Err(Error::param("design has no nonzero rows to draw from"));
    }
    let mut rows = Vec::with_capacity(t);
    let mut resampled = 0;
    while rows.len() < t {
        let r = rng.random_range(0..m);
        if inst.design.row(r).is_empty() {
            resampled += 1;
            log::debug!("resampling zero row {r}");
            continue;
        }
        rows.push(r);
    }
    Ok((rows, resampled))
}

fn uniform_pm1<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random_range(-1.0..=1.0)
}

fn random_support<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Vec<usize> {
    let mut s = index::sample(rng, n, k.min(n)).into_vec();
    s.sort_unstable();
    s
}

/// `w* = Z₀√ε w̃ + Σᵢ Zᵢ M_{Rᵢ}/√(M_{Rᵢ}ᵀΘ̃⁻¹M_{Rᵢ})`.
pub fn sample_signal_invertible<R: Rng + ?Sized>(
    inst: &HardInstance,
    k: usize,
    t: usize,
    rng: &mut R,
) -> Result<SignalDraw> {
    let n = inst.n();
    let support = random_support(n, k, rng);
    let mut w_tilde = DVector::zeros(n);
    for &j in &support {
        w_tilde[j] = uniform_pm1(rng);
    }
    let z0 = uniform_pm1(rng);
    let (rows, resampled) = draw_rows(inst, t, rng)?;
    let mut coeffs = vec![z0];
    let mut w = &w_tilde * (z0 * inst.epsilon.sqrt());
    for &r in &rows {
        let z = uniform_pm1(rng);
        coeffs.push(z);
        w.axpy(z, &normalized_row(inst, r), 1.0);
    }
    Ok(SignalDraw {
        w_star: w.iter().copied().collect(),
        branch: Branch::Invertible,
        rows,
        coeffs,
        perturbation: Some(w_tilde.iter().copied().collect()),
        k,
        t,
        sparsity_bound: k + t * inst.design.max_row_weight(),
        resampled_zero_rows: resampled,
    })
}

fn sparse_draw<R: Rng + ?Sized>(n: usize, k: usize, t: usize, bound: usize, rng: &mut R) -> SignalDraw {
    let support = random_support(n, k, rng);
    let mut w = vec![0.0; n];
    for &j in &support {
        w[j] = StandardNormal.sample(&mut *rng);
    }
    SignalDraw {
        w_star: w,
        branch: Branch::MixtureSparse,
        rows: Vec::new(),
        coeffs: Vec::new(),
        perturbation: None,
        k,
        t,
        sparsity_bound: bound,
        resampled_zero_rows: 0,
    }
}

/// Fair mixture of `D_M` (sum of `t` normalized rows) and `D_k`.
pub fn sample_signal_mixture<R: Rng + ?Sized>(
    inst: &HardInstance,
    k: usize,
    t: usize,
    rng: &mut R,
) -> Result<SignalDraw> {
    let n = inst.n();
    let bound = (t * inst.design.max_row_weight()).max(k);
    if rng.random_bool(0.5) {
        let (rows, resampled) = draw_rows(inst, t, rng)?;
        let mut w = DVector::zeros(n);
        let mut coeffs = Vec::with_capacity(t);
        for &r in &rows {
            let z = uniform_pm1(rng);
            coeffs.push(z);
            w.axpy(z, &normalized_row(inst, r), 1.0);
        }
        Ok(SignalDraw {
            w_star: w.iter().copied().collect(),
            branch: Branch::MixtureRows,
            rows,
            coeffs,
            perturbation: None,
            k,
            t,
            sparsity_bound: bound,
            resampled_zero_rows: resampled,
        })
    } else {
        Ok(sparse_draw(n, k, t, bound, rng))
    }
}

pub fn sample_signal<R: Rng + ?Sized>(
    inst: &HardInstance,
    dist: SignalDist,
    k: usize,
    t: usize,
    rng: &mut R,
) -> Result<SignalDraw> {
    match dist {
        SignalDist::Invertible => sample_signal_invertible(inst, k, t, rng),
        SignalDist::Mixture => sample_signal_mixture(inst, k, t, rng),
        SignalDist::Sparse => Ok(sparse_draw(inst.n(), k, t, k, rng)),
    }
}

// ---------------------------------------------------------------------------
// Preconditioners

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecondKind {
    Identity,
    RandomInvertible,
    /// `Θ̃^{1/2}`.
    Whitening,
    /// `Θ̃^{−1/2}`.
    RidgeRoot,
    CustomFile,
}

#[derive(Debug, Clone)]
pub struct Preconditioner {
    /// `n × s`.
    pub s: DMatrix<f64>,
    pub kind: PrecondKind,
    pub label: String,
}

/// Specification parsed from `identity|randinv|sqrt|invsqrt|file:PATH`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrecondSpec {
    Identity,
    RandomInvertible,
    Sqrt,
    InvSqrt,
    File(String),
}

impl std::str::FromStr for PrecondSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" | "I" => Ok(Self::Identity),
            "randinv" => Ok(Self::RandomInvertible),
            "sqrt" => Ok(Self::Sqrt),
            "invsqrt" => Ok(Self::InvSqrt),
            other => match other.strip_prefix("file:") {
                Some(p) if !p.is_empty() => Ok(Self::File(p.to_string())),
                _ => Err(Error::param(format!("unknown preconditioner {other:?}"))),
            },
        }
    }
}

impl std::fmt::Display for PrecondSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Identity => write!(f, "identity"),
            Self::RandomInvertible => write!(f, "randinv"),
            Self::Sqrt => write!(f, "sqrt"),
            Self::InvSqrt => write!(f, "invsqrt"),
            Self::File(p) => write!(f, "file:{p}"),
        }
    }
}

/// Accepts `S` when `σ_min(Sᵀ) > 10⁻⁸ σ_max(Sᵀ)`.
pub fn check_preconditioner(s: &DMatrix<f64>) -> Result<()> {
    let (n, cols) = s.shape();
    if cols < n {
        return Err(Error::param(format!("S is {n}×{cols}; ker Sᵀ is nontrivial")));
    }
    let sv = numerics::singular_values(s);
    let (smax, smin) = (sv[0], sv[sv.len() - 1]);
    if !(smin > 1e-8 * smax) {
        return Err(Error::param(format!(
            "S is numerically singular (σ_min/σ_max = {:.3e})",
            smin / smax
        )));
    }
    Ok(())
}

pub fn build_preconditioner(inst: &HardInstance, spec: &PrecondSpec, seed: u64) -> Result<Preconditioner> {
    let n = inst.n();
    let (s, kind) = match spec {
        PrecondSpec::Identity => (DMatrix::identity(n, n), PrecondKind::Identity),
        PrecondSpec::RandomInvertible => (random_invertible(n, seed)?, PrecondKind::RandomInvertible),
        PrecondSpec::Sqrt => (numerics::symmetric_sqrt(&inst.theta_tilde)?, PrecondKind::Whitening),
        PrecondSpec::InvSqrt => (numerics::symmetric_inv_sqrt(&inst.theta_tilde)?, PrecondKind::RidgeRoot),
        PrecondSpec::File(p) => {
            let s = load_matrix(Path::new(p))?;
            if s.nrows() != n {
                return Err(Error::param(format!("preconditioner has {} rows, expected {n}", s.nrows())));
            }
            (s, PrecondKind::CustomFile)
        }
    };
    check_preconditioner(&s)?;
    Ok(Preconditioner {
        s,
        kind,
        label: spec.to_string(),
    })
}

/// Gaussian `n × n` matrix, redrawn while its condition number exceeds 10⁶.
pub fn random_invertible(n: usize, seed: u64) -> Result<DMatrix<f64>> {
    for attempt in 0..32u64 {
        let mut rng = seeds::rng(seeds::derive(seed, attempt));
        let s = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng)) / (n as f64).sqrt();
        let sv = numerics::singular_values(&s);
        if sv[sv.len() - 1] > 1e-6 * sv[0] {
            return Ok(s);
        }
    }
    Err(Error::param("could not draw a well-conditioned random preconditioner"))
}

/// Dense matrix file: header `"rows cols"` then row-major values.
pub fn write_matrix(a: &DMatrix<f64>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", a.nrows(), a.ncols());
    for i in 0..a.nrows() {
        let row: Vec<String> = (0..a.ncols()).map(|j| format!("{:e}", a[(i, j)])).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out
}

pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>> {
    let mut tokens = text
        .lines()
        .enumerate()
        .flat_map(|(ln, l)| l.split_whitespace().map(move |t| (ln + 1, t)));
    let mut next_usize = || -> Result<usize> {
        let (ln, t) = tokens.next().ok_or(Error::Parse {
            line: 1,
            msg: "missing header".into(),
        })?;
        t.parse().map_err(|e| Error::Parse {
            line: ln,
            msg: format!("{t:?}: {e}"),
        })
    };
    let rows = next_usize()?;
    let cols = next_usize()?;
    let mut values = Vec::with_capacity(rows * cols);
    for (ln, t) in tokens {
        values.push(t.parse::<f64>().map_err(|e| Error::Parse {
            line: ln,
            msg: format!("{t:?}: {e}"),
        })?);
    }
    if values.len() != rows * cols {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected {} values, found {}", rows * cols, values.len()),
        });
    }
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

pub fn load_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_matrix(&text)
}

// ---------------------------------------------------------------------------
// Compatibility witnesses

/// `wᵀΘ̃⁻¹w / ‖Sᵀw‖₁²`.
pub fn alpha_ratio(inst: &HardInstance, s: &DMatrix<f64>, w: &DVector<f64>) -> Result<f64> {
    let l1 = norm1(&(s.transpose() * w));
    if l1 == 0.0 {
        return Err(Error::param("Sᵀw = 0; ratio undefined"));
    }
    Ok(inst.sigma_quadratic(w) / (l1 * l1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaEstimate {
    /// Minimum ratio found over probed unit vectors of `V`. Not exact.
    pub estimate: f64,
    pub probes: usize,
    pub dim: usize,
    pub witness: Vec<f64>,
}

/// Minimizes `wᵀΘ̃⁻¹w/‖Sᵀw‖₁²` over unit `w ∈ span(V)` by random probes
/// followed by coordinate-descent refinement in the basis of `V`.
pub fn beta_lower_estimate(
    inst: &HardInstance,
    s: &DMatrix<f64>,
    v: &DMatrix<f64>,
    probes: usize,
    seed: u64,
) -> Result<BetaEstimate> {
    let dim = v.ncols();
    if dim == 0 {
        return Err(Error::param("subspace V is empty"));
    }
    let st = s.transpose();
    let ratio = |g: &DVector<f64>| -> f64 {
        let w = v * g;
        let l1 = norm1(&(&st * &w));
        if l1 == 0.0 {
            f64::INFINITY
        } else {
            inst.sigma_quadratic(&w) / (l1 * l1)
        }
    };
    let mut rng = seeds::rng(seed);
    let mut best_g = DVector::zeros(dim);
    best_g[0] = 1.0;
    let mut best = ratio(&best_g);
    for _ in 0..probes.max(1) {
        let mut g = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
        g /= g.norm();
        let r = ratio(&g);
        if r < best {
            best = r;
            best_g = g;
        }
    }
    let mut step = 0.5;
    while step > 1e-12 {
        let mut improved = false;
        for j in 0..dim {
            for sign in [1.0, -1.0] {
                let mut g = best_g.clone();
                g[j] += sign * step;
                let nrm = g.norm();
                if nrm == 0.0 {
                    continue;
                }
                g /= nrm;
                let r = ratio(&g);
                if r < best {
                    best = r;
                    best_g = g;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Ok(BetaEstimate {
        estimate: best,
        probes,
        dim,
        witness: (v * best_g).iter().copied().collect(),
    })
}
