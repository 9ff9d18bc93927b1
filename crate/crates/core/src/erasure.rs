//! Quantitative supports, density amplification and erasure-robustness
//! certificates.
//!
//! A certificate `(B, C, η, τ)` claims that every `x` with `‖x‖₀ < τ`
//! satisfies `‖x_{Cᶜ}‖₂ ≤ η‖M_{Bᶜ}x‖_∞`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::design::{binomial, complement, random_subset, BinaryDesign};
use crate::error::{Error, Result};
use crate::numerics::{self, norm1, norm_inf, DEFAULT_TOL_RANK};
use crate::seeds;

/// Relative slack applied when comparing a computed singular value against
/// a certification threshold.
const CERT_SLACK: f64 = 1e-9;

/// `supp_δ(x) = {i : |x_i| ≥ δ}`.
pub fn supp_delta(x: &DVector<f64>, delta: f64) -> Vec<usize> {
    x.iter()
        .enumerate()
        .filter_map(|(i, v)| (v.abs() >= delta).then_some(i))
        .collect()
}

fn supp_count(x: &DVector<f64>, delta: f64) -> usize {
    x.iter().filter(|v| v.abs() >= delta).count()
}

fn restrict_inf(a: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    if a.nrows() == 0 {
        0.0
    } else {
        norm_inf(&(a * x))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplificationRecord {
    pub residual_inf: f64,
    /// `‖M_{Bᶜ}x‖_∞ ≤ δ`.
    pub hypothesis_holds: bool,
    pub supp_delta: usize,
    pub supp_2d_delta: usize,
    pub supp_f_delta: usize,
    /// `f(n,d) = 2dn²`.
    pub f: f64,
    /// `|supp_δ x| ≥ min(6√d|supp_{2dδ}x| − |B|, k)`.
    pub one_step_holds: bool,
    /// `|supp_{fδ}x| ≥ |B| ⇒ |supp_δ x| ≥ k`.
    pub amplified_holds: bool,
    /// Both bounds hold, or the hypothesis fails.
    pub conclusion_holds: bool,
}

/// Evaluates the one-step and iterated amplification bounds on a single
/// vector.
pub fn evaluate_amplification(
    design: &BinaryDesign,
    erased: &[usize],
    x: &DVector<f64>,
    delta: f64,
    k: usize,
) -> Result<AmplificationRecord> {
    check_erased(design, erased)?;
    if x.len() != design.n() {
        return Err(Error::param("vector length does not match design"));
    }
    let d = design.d;
    let n = design.n() as f64;
    let a = design.surviving_dense(erased);
    let residual_inf = restrict_inf(&a, x);
    let hypothesis_holds = residual_inf <= delta;
    let f = 2.0 * d * n * n;
    let s1 = supp_count(x, delta);
    let s2 = supp_count(x, 2.0 * d * delta);
    let sf = supp_count(x, f * delta);
    let b = erased.len() as f64;
    let one_step_holds = s1 as f64 >= (6.0 * d.sqrt() * s2 as f64 - b).min(k as f64);
    let amplified_holds = sf < erased.len() || s1 >= k;
    Ok(AmplificationRecord {
        residual_inf,
        hypothesis_holds,
        supp_delta: s1,
        supp_2d_delta: s2,
        supp_f_delta: sf,
        f,
        one_step_holds,
        amplified_holds,
        conclusion_holds: !hypothesis_holds || (one_step_holds && amplified_holds),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SumDensityRecord {
    /// Every summand has `‖M_{Bᶜ}x_i‖_∞ ≤ δ/√(2d)` and `|supp_δ x_i| ≤ |B|`.
    pub premise_holds: bool,
    /// Minimal `t` with `r ≤ (√(2d))^t`.
    pub t: u32,
    /// `(2d)^{3t/2}δ`.
    pub threshold: f64,
    pub sum_support: usize,
    /// `|supp_threshold Σx_i| ≤ |B|`.
    pub conclusion_holds: bool,
}

/// Evaluates the sum-density bound on a family of near-kernel vectors.
pub fn evaluate_sum_density(
    design: &BinaryDesign,
    erased: &[usize],
    xs: &[DVector<f64>],
    delta: f64,
) -> Result<SumDensityRecord> {
    check_erased(design, erased)?;
    let d = design.d;
    let a = design.surviving_dense(erased);
    let premise_holds = xs.iter().all(|x| {
        restrict_inf(&a, x) <= delta / (2.0 * d).sqrt() && supp_count(x, delta) <= erased.len()
    });
    let base = (2.0 * d).sqrt();
    let mut t = 0u32;
    while (xs.len() as f64) > base.powi(t as i32) {
        t += 1;
    }
    let threshold = (2.0 * d).powf(1.5 * t as f64) * delta;
    let mut sum = DVector::zeros(design.n());
    for x in xs {
        sum += x;
    }
    let sum_support = supp_count(&sum, threshold);
    Ok(SumDensityRecord {
        premise_holds,
        t,
        threshold,
        sum_support,
        conclusion_holds: sum_support <= erased.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignSearch {
    pub signs: Vec<i8>,
    /// `|supp_δ Σσᵢxᵢ|` for the returned signs.
    pub signed_support: usize,
    /// `|⋃ supp_δ xᵢ|`.
    pub union_support: usize,
    pub exhaustive: bool,
    /// `signed_support ≥ union_support / 2`.
    pub bound_met: bool,
}

/// Searches `σ ∈ {−1,1}^r` maximizing `|supp_δ Σσᵢxᵢ|`: exhaustively for
/// `r ≤ 20`, otherwise by seeded random restarts with single-flip hill
/// climbing.
pub fn sign_search(xs: &[DVector<f64>], delta: f64, seed: u64) -> SignSearch {
    let r = xs.len();
    let n = xs.first().map_or(0, |x| x.len());
    let mut union = vec![false; n];
    for x in xs {
        for i in supp_delta(x, delta) {
            union[i] = true;
        }
    }
    let union_support = union.iter().filter(|&&b| b).count();
    let eval = |signs: &[i8]| {
        let mut s = DVector::zeros(n);
        for (x, &g) in xs.iter().zip(signs) {
            s.axpy(g as f64, x, 1.0);
        }
        supp_count(&s, delta)
    };
    let exhaustive = r <= 20;
    let mut best_signs = vec![1i8; r];
    let mut best = eval(&best_signs);
    if exhaustive {
        for mask in 1u32..(1u32 << r) {
            if best >= union_support {
                break;
            }
            let signs: Vec<i8> = (0..r).map(|i| if mask >> i & 1 == 1 { -1 } else { 1 }).collect();
            let v = eval(&signs);
            if v > best {
                best = v;
                best_signs = signs;
            }
        }
    } else {
        let mut rng = seeds::rng(seed);
        for _ in 0..64 {
            if 2 * best >= union_support {
                break;
            }
            let mut signs: Vec<i8> = (0..r).map(|_| if rng.random_bool(0.5) { 1 } else { -1 }).collect();
            let mut val = eval(&signs);
            let mut improved = true;
            while improved {
                improved = false;
                for i in 0..r {
                    signs[i] = -signs[i];
                    let v = eval(&signs);
                    if v > val {
                        val = v;
                        improved = true;
                    } else {
                        signs[i] = -signs[i];
                    }
                }
            }
            if val > best {
                best = val;
                best_signs = signs;
            }
        }
    }
    SignSearch {
        signs: best_signs,
        signed_support: best,
        union_support,
        exhaustive,
        bound_met: 2 * best >= union_support,
    }
}

// ---------------------------------------------------------------------------
// Certificates

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CertVerdict {
    Unverified,
    Verified,
    Refuted {
        witness: Vec<f64>,
        /// `‖x_{Cᶜ}‖₂ / ‖M_{Bᶜ}x‖_∞`; `None` when the residual vanishes.
        ratio: Option<f64>,
    },
    Statistical {
        samples: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertMethod {
    BruteForce,
    Constructive,
    Heuristic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstructiveTrace {
    /// Number of per-support witnesses admitted into the family.
    pub family_size: usize,
    /// `g(n,d) = (2nd)³`.
    pub g: f64,
    pub signs: Option<SignSearch>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErasureCertificate {
    /// Erased equations.
    pub erased: Vec<usize>,
    /// Unidentifiable coordinates.
    pub unidentifiable: Vec<usize>,
    pub b: usize,
    pub b_prime: usize,
    pub eta: f64,
    pub tau: usize,
    pub delta: f64,
    pub verdict: CertVerdict,
    pub method: CertMethod,
    /// Smallest certified ratio `inf ‖M_{Bᶜ}x‖₂/‖x_{Cᶜ}‖₂` over the checked supports.
    pub min_sigma: Option<f64>,
    pub trace: Option<ConstructiveTrace>,
}

impl ErasureCertificate {
    /// Unverified certificate with an explicit `C`.
    pub fn new(erased: Vec<usize>, unidentifiable: Vec<usize>, eta: f64, tau: usize) -> Self {
        Self {
            b: erased.len(),
            b_prime: unidentifiable.len(),
            erased,
            unidentifiable,
            eta,
            tau,
            delta: 0.0,
            verdict: CertVerdict::Unverified,
            method: CertMethod::Heuristic,
            min_sigma: None,
            trace: None,
        }
    }

    pub fn is_verified(&self) -> bool {
        self.verdict == CertVerdict::Verified
    }

    pub fn is_refuted(&self) -> bool {
        matches!(self.verdict, CertVerdict::Refuted { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstructMethod {
    BruteForce,
    Constructive,
}

#[derive(Debug, Clone, Copy)]
pub struct ConstructParams {
    pub tau: usize,
    pub eta: f64,
    pub delta: f64,
    pub method: ConstructMethod,
    /// Maximum number of supports enumerated.
    pub budget: u128,
    pub seed: u64,
}

impl ConstructParams {
    pub fn new(tau: usize, eta: f64, delta: f64, method: ConstructMethod) -> Self {
        Self {
            tau,
            eta,
            delta,
            method,
            budget: 10_000_000,
            seed: 0,
        }
    }
}

pub(crate) fn check_erased(design: &BinaryDesign, erased: &[usize]) -> Result<()> {
    if erased.iter().any(|&i| i >= design.m()) {
        return Err(Error::param("erased equation index out of range"));
    }
    if erased.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::param("erased set must be sorted and duplicate-free"));
    }
    Ok(())
}

fn support_budget(n: usize, tau: usize, budget: u128) -> Result<u128> {
    let required: u128 = (1..tau).map(|l| binomial(n, l)).sum();
    if required > budget {
        return Err(Error::Budget { required, budget });
    }
    Ok(required)
}

/// Calls `f` on every nonempty support of size `< tau`, lexicographically.
fn for_each_support(n: usize, tau: usize, mut f: impl FnMut(&[usize])) {
    fn rec(n: usize, max: usize, set: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        let start = set.last().map_or(0, |&l| l + 1);
        for j in start..n {
            set.push(j);
            f(set);
            if set.len() < max {
                rec(n, max, set, f);
            }
            set.pop();
        }
    }
    if tau > 1 {
        rec(n, tau - 1, &mut Vec::new(), &mut f);
    }
}

fn columns(a: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    a.select_columns(idx)
}

/// Distance from column `i` of `a` to the span of the columns in `others`.
fn column_distance(a: &DMatrix<f64>, i: usize, others: &[usize]) -> f64 {
    let col = a.column(i).into_owned();
    if others.is_empty() {
        return col.norm();
    }
    let basis = numerics::orthonormal_columns(&columns(a, others), DEFAULT_TOL_RANK);
    numerics::distance_to_span(&col, &basis)
}

/// Builds a certificate for erased set `B`.
pub fn construct_unidentifiable_set(
    design: &BinaryDesign,
    erased: &[usize],
    params: ConstructParams,
) -> Result<ErasureCertificate> {
    check_erased(design, erased)?;
    if params.tau == 0 || !(params.eta > 0.0) {
        return Err(Error::param("need τ ≥ 1 and η > 0"));
    }
    let n = design.n();
    support_budget(n, params.tau, params.budget)?;
    let a = design.surviving_dense(erased);

    let (unidentifiable, method, trace) = if a.nrows() == 0 {
        ((0..n).collect(), CertMethod::BruteForce, None)
    } else {
        match params.method {
            ConstructMethod::BruteForce => {
                if erased.is_empty() {
                    let mut empty = ErasureCertificate::new(Vec::new(), Vec::new(), params.eta, params.tau);
                    empty.delta = params.delta;
                    let checked = verify_erasure_robustness(design, empty, VerifyMode::Exhaustive)?;
                    if checked.is_verified() {
                        let mut c = checked;
                        c.method = CertMethod::BruteForce;
                        return Ok(c);
                    }
                }
                (brute_force_set(design, &a, params.tau, params.eta), CertMethod::BruteForce, None)
            }
            ConstructMethod::Constructive => {
                let (set, trace) = constructive_set(design, &a, erased.len(), params);
                (set, CertMethod::Constructive, Some(trace))
            }
        }
    };
    Ok(ErasureCertificate {
        b: erased.len(),
        b_prime: unidentifiable.len(),
        erased: erased.to_vec(),
        unidentifiable,
        eta: params.eta,
        tau: params.tau,
        delta: params.delta,
        verdict: CertVerdict::Unverified,
        method,
        min_sigma: None,
        trace,
    })
}

/// `i ∈ C` iff some support `T ∋ i` with `|T| < τ` has
/// `dist(a_i, span{a_l : l ∈ T∖i}) < √((τ−1)m)/η`.
fn brute_force_set(design: &BinaryDesign, a: &DMatrix<f64>, tau: usize, eta: f64) -> Vec<usize> {
    let theta = (((tau - 1) * design.m()) as f64).sqrt() / eta;
    let mut mark = vec![false; design.n()];
    for_each_support(design.n(), tau, |t| {
        for (pos, &i) in t.iter().enumerate() {
            if mark[i] {
                continue;
            }
            let others: Vec<usize> = t.iter().enumerate().filter(|&(p, _)| p != pos).map(|(_, &l)| l).collect();
            if column_distance(a, i, &others) < theta {
                mark[i] = true;
            }
        }
    });
    crate::design::indices_of(&mark)
}

fn constructive_set(
    design: &BinaryDesign,
    a: &DMatrix<f64>,
    b: usize,
    params: ConstructParams,
) -> (Vec<usize>, ConstructiveTrace) {
    let n = design.n();
    let d = design.d;
    let g = (2.0 * n as f64 * d).powi(3);
    let scale = (2.0 * d).sqrt();
    let delta = params.delta;
    let mut family = Vec::new();
    let mut mark = vec![false; n];
    for_each_support(n, params.tau, |t| {
        let sub = columns(a, t);
        let svd = sub.svd(false, true);
        let vt = svd.v_t.expect("v_t requested");
        let (imin, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
        let mut x = DVector::zeros(n);
        for (p, &j) in t.iter().enumerate() {
            x[j] = vt[(imin, p)];
        }
        let r = restrict_inf(a, &x);
        // Scale so that ‖M_{Bᶜ}x‖_∞ = δ/√(2d); kernel vectors stay unit.
        if r > 0.0 {
            x *= delta / (scale * r);
        }
        if supp_count(&x, delta) <= b {
            for i in supp_delta(&x, g * delta) {
                mark[i] = true;
            }
            family.push(x);
        }
    });
    let signs = (!family.is_empty()).then(|| sign_search(&family, g * delta, params.seed));
    (
        crate::design::indices_of(&mark),
        ConstructiveTrace {
            family_size: family.len(),
            g,
            signs,
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VerifyMode {
    Exhaustive,
    Sampled { probes: usize, seed: u64 },
}

/// Probes used to settle supports the exhaustive ℓ2 relaxation cannot certify.
const FALLBACK_PROBES: usize = 10_000;

/// Checks a certificate, updating its verdict.
pub fn verify_erasure_robustness(
    design: &BinaryDesign,
    mut cert: ErasureCertificate,
    mode: VerifyMode,
) -> Result<ErasureCertificate> {
    check_erased(design, &cert.erased)?;
    let n = design.n();
    let a = design.surviving_dense(&cert.erased);
    let mut in_c = vec![false; n];
    for &i in &cert.unidentifiable {
        if i >= n {
            return Err(Error::param("unidentifiable index out of range"));
        }
        in_c[i] = true;
    }
    cert.b = cert.erased.len();
    cert.b_prime = cert.unidentifiable.len();
    if cert.unidentifiable.len() == n || cert.tau <= 1 {
        cert.verdict = CertVerdict::Verified;
        return Ok(cert);
    }
    match mode {
        VerifyMode::Exhaustive => {
            support_budget(n, cert.tau, 10_000_000)?;
            let threshold = (a.nrows() as f64).sqrt() / cert.eta;
            let mut min_sigma = f64::INFINITY;
            let mut uncertified = 0usize;
            let mut refutation = None;
            for_each_support(n, cert.tau, |t| {
                if refutation.is_some() {
                    return;
                }
                let (outside, inside): (Vec<usize>, Vec<usize>) = t.iter().partition(|&&i| !in_c[i]);
                if outside.is_empty() {
                    return;
                }
                let (sigma, x) = generalized_min_singular(&a, &outside, &inside, n);
                min_sigma = min_sigma.min(sigma);
                if sigma >= threshold * (1.0 - CERT_SLACK) {
                    return;
                }
                uncertified += 1;
                if let Some(r) = refutes(&a, &in_c, &x, cert.eta) {
                    refutation = Some((x, r));
                }
            });
            cert.min_sigma = min_sigma.is_finite().then_some(min_sigma);
            cert.verdict = if let Some((x, ratio)) = refutation {
                CertVerdict::Refuted {
                    witness: x.iter().copied().collect(),
                    ratio,
                }
            } else if uncertified == 0 {
                CertVerdict::Verified
            } else {
                match probe_refutation(design, &cert, FALLBACK_PROBES, 0) {
                    Some((x, ratio)) => CertVerdict::Refuted { witness: x, ratio },
                    None => CertVerdict::Statistical {
                        samples: FALLBACK_PROBES,
                    },
                }
            };
        }
        VerifyMode::Sampled { probes, seed } => {
            cert.verdict = match probe_refutation(design, &cert, probes, seed) {
                Some((x, ratio)) => CertVerdict::Refuted { witness: x, ratio },
                None => CertVerdict::Statistical { samples: probes },
            };
        }
    }
    Ok(cert)
}

/// `σ_min((I − P_{A_in}) A_out)` and a unit-`x_out` witness attaining it,
/// with `x_in` the least-squares completion.
fn generalized_min_singular(
    a: &DMatrix<f64>,
    outside: &[usize],
    inside: &[usize],
    n: usize,
) -> (f64, DVector<f64>) {
    let a_out = columns(a, outside);
    let (residual, basis) = if inside.is_empty() || a.nrows() == 0 {
        (a_out.clone(), None)
    } else {
        let basis = numerics::orthonormal_columns(&columns(a, inside), DEFAULT_TOL_RANK);
        let proj = &basis * (basis.transpose() * &a_out);
        (&a_out - proj, Some(basis))
    };
    let _ = basis;
    let (sigma, v) = if residual.nrows() == 0 {
        let mut v = DVector::zeros(outside.len());
        v[0] = 1.0;
        (0.0, v)
    } else {
        let padded = if residual.nrows() < residual.ncols() {
            let mut p = DMatrix::zeros(residual.ncols(), residual.ncols());
            p.view_mut((0, 0), residual.shape()).copy_from(&residual);
            p
        } else {
            residual
        };
        let svd = padded.svd(false, true);
        let vt = svd.v_t.expect("v_t requested");
        let (imin, smin) = svd
            .singular_values
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
        (smin, vt.row(imin).transpose())
    };
    let mut x = DVector::zeros(n);
    for (p, &j) in outside.iter().enumerate() {
        x[j] = v[p];
    }
    if !inside.is_empty() && a.nrows() > 0 {
        let a_in = columns(a, inside);
        let rhs = -(&a_out * &v);
        let svd = a_in.svd(true, true);
        if let Ok(sol) = svd.solve(&rhs, DEFAULT_TOL_RANK) {
            for (p, &j) in inside.iter().enumerate() {
                x[j] = sol[p];
            }
        }
    }
    (sigma, x)
}

/// Returns the violation ratio when `x` breaks the certificate inequality.
fn refutes(a: &DMatrix<f64>, in_c: &[bool], x: &DVector<f64>, eta: f64) -> Option<Option<f64>> {
    let outside: f64 = x
        .iter()
        .zip(in_c)
        .filter(|(_, &c)| !c)
        .map(|(v, _)| v * v)
        .sum::<f64>()
        .sqrt();
    let res = restrict_inf(a, x);
    // Ignore violations that are within rounding of the residual.
    let floor = 1e-12 * x.norm();
    if outside > eta * res.max(floor) * (1.0 + CERT_SLACK) && outside > 1e-9 * x.norm() {
        Some((res > 0.0).then(|| outside / res))
    } else {
        None
    }
}

/// Random sparse probes against a certificate: uniform support size in
/// `1..τ`, uniform support, Gaussian entries, half of them pulled toward
/// the kernel of the surviving rows restricted to the support. Returns the
/// first refuting vector.
pub fn probe_refutation(
    design: &BinaryDesign,
    cert: &ErasureCertificate,
    probes: usize,
    seed: u64,
) -> Option<(Vec<f64>, Option<f64>)> {
    if cert.tau <= 1 {
        return None;
    }
    let n = design.n();
    let a = design.surviving_dense(&cert.erased);
    let mut in_c = vec![false; n];
    for &i in &cert.unidentifiable {
        in_c[i] = true;
    }
    let mut rng = seeds::rng(seed);
    for p in 0..probes {
        let size = rng.random_range(1..cert.tau.min(n + 1));
        let t = random_subset(&mut rng, n, size);
        let mut x = DVector::zeros(n);
        if p % 2 == 0 || a.nrows() == 0 {
            for &j in &t {
                x[j] = StandardNormal.sample(&mut rng);
            }
        } else {
            // Smallest right singular direction of the support, jittered.
            let sub = columns(&a, &t);
            let padded = if sub.nrows() < sub.ncols() {
                let mut q = DMatrix::zeros(sub.ncols(), sub.ncols());
                q.view_mut((0, 0), sub.shape()).copy_from(&sub);
                q
            } else {
                sub
            };
            let svd = padded.svd(false, true);
            let vt = svd.v_t.expect("v_t requested");
            let imin = svd
                .singular_values
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc })
                .0;
            for (q, &j) in t.iter().enumerate() {
                let jitter: f64 = StandardNormal.sample(&mut rng);
                x[j] = vt[(imin, q)] + 1e-3 * jitter;
            }
        }
        if let Some(r) = refutes(&a, &in_c, &x, cert.eta) {
            return Some((x.iter().copied().collect(), r));
        }
    }
    None
}

// ---------------------------------------------------------------------------
// Kernel density

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelDensityReport {
    pub kernel_dim: usize,
    /// Kernel is trivial; the density claim holds vacuously.
    pub vacuous: bool,
    pub k: usize,
    pub vectors_checked: usize,
    /// `max_x max_{|S|≤k} ‖x_S‖₁/‖x‖₁` over the sampled kernel vectors.
    pub worst_ratio: f64,
    /// `worst_ratio ≤ 1/3`.
    pub verified: bool,
}

/// Largest `‖x_S‖₁` over `|S| ≤ k`: the sum of the `k` largest magnitudes.
pub fn top_k_mass(x: &DVector<f64>, k: usize) -> f64 {
    let mut mags: Vec<f64> = x.iter().map(|v| v.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    mags.iter().take(k).sum()
}

/// Checks `‖x_S‖₁ ≤ ‖x‖₁/3` for random Gaussian kernel vectors and every
/// `|S| ≤ k` (exact per vector via the top-`k` mass).
pub fn check_kernel_density(
    design: &BinaryDesign,
    k: usize,
    vectors: usize,
    seed: u64,
) -> KernelDensityReport {
    let basis = numerics::nullspace_basis(&design.to_dense(), DEFAULT_TOL_RANK);
    let dim = basis.ncols();
    if dim == 0 {
        return KernelDensityReport {
            kernel_dim: 0,
            vacuous: true,
            k,
            vectors_checked: 0,
            worst_ratio: 0.0,
            verified: true,
        };
    }
    let mut rng = seeds::rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..vectors {
        let g = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
        let x = &basis * g;
        worst = worst.max(top_k_mass(&x, k) / norm1(&x));
    }
    KernelDensityReport {
        kernel_dim: dim,
        vacuous: false,
        k,
        vectors_checked: vectors,
        worst_ratio: worst,
        verified: worst <= 1.0 / 3.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub delta: f64,
    pub tau: usize,
    /// Smallest observed `‖x_{Cᶜ}‖₂/‖x‖₂` over probes with
    /// `dist(x, ker M) ≤ δ‖x‖₂` and worst `|C| ≤ τ`; an upper bound on the
    /// true constant.
    pub eta_estimate: f64,
    pub probes: usize,
    pub vacuous: bool,
}

/// Probes the quantitative density of `ker M` at `(δ, τ)`.
pub fn estimate_quantitative_density(
    design: &BinaryDesign,
    delta: f64,
    tau: usize,
    probes: usize,
    seed: u64,
) -> DensityEstimate {
    let a = design.to_dense();
    let basis = numerics::nullspace_basis(&a, DEFAULT_TOL_RANK);
    let n = design.n();
    if basis.ncols() == 0 {
        return DensityEstimate {
            delta,
            tau,
            eta_estimate: 1.0,
            probes: 0,
            vacuous: true,
        };
    }
    let mut rng = seeds::rng(seed);
    let mut best = f64::INFINITY;
    for _ in 0..probes {
        let g = DVector::from_fn(basis.ncols(), |_, _| StandardNormal.sample(&mut rng));
        let v = &basis * g;
        let u = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let u_perp = &u - numerics::project(&u, &basis);
        let x = if u_perp.norm() > 0.0 {
            &v + u_perp * (rng.random::<f64>() * delta * v.norm() / u.norm().max(1e-300))
        } else {
            v
        };
        let mut sq: Vec<f64> = x.iter().map(|t| t * t).collect();
        sq.sort_by(|a, b| b.total_cmp(a));
        let total: f64 = sq.iter().sum();
        let rest: f64 = sq.iter().skip(tau).sum();
        if total > 0.0 {
            best = best.min((rest / total).sqrt());
        }
    }
    DensityEstimate {
        delta,
        tau,
        eta_estimate: best,
        probes,
        vacuous: false,
    }
}

/// Sorted, deduplicated erased set.
pub fn normalize_set(mut set: Vec<usize>) -> Vec<usize> {
    set.sort_unstable();
    set.dedup();
    set
}

/// `Bᶜ` as a sorted list.
pub fn surviving_rows(design: &BinaryDesign, erased: &[usize]) -> Vec<usize> {
    complement(erased, design.m())
}
