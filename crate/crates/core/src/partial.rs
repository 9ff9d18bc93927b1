//! Erasure adversaries and the exhaustive ℓ0 estimator
//! `x̂ ∈ argmin { ‖x‖₀ : ‖M_{Bᶜ}x − y_{Bᶜ}‖_∞ ≤ δ }`.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{binomial, random_subset, BinaryDesign};
use crate::erasure::ErasureCertificate;
use crate::error::{Error, Result};
use crate::lasso::ipm::{solve_standard_lp, IpmOptions, LpStatus};
use crate::numerics::norm_inf;
use crate::seeds;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    /// Erase `N(j)`.
    TargetCoordinate { j: usize },
    /// Erase the boundary equations of the coordinate ball of the given
    /// radius around `center` (hops through shared equations).
    Ball { center: usize, radius: usize },
    /// Uniform subset of size `b`.
    Random { b: usize },
    Explicit { equations: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErasureAdversary {
    pub strategy: Strategy,
    pub budget: usize,
}

impl ErasureAdversary {
    pub fn new(strategy: Strategy, budget: usize) -> Self {
        Self { strategy, budget }
    }

    /// Parses `target:J`, `ball:C,R`, `random:B`, an explicit list
    /// `list:I,J,...` or `file:PATH` holding such a list. Indices are 1-based.
    pub fn parse(spec: &str, budget: usize) -> Result<Self> {
        let (kind, rest) = spec
            .split_once(':')
            .ok_or_else(|| Error::param(format!("adversary spec {spec:?} lacks ':'")))?;
        let nums = |s: &str| -> Result<Vec<usize>> {
            s.split(',')
                .filter(|t| !t.trim().is_empty())
                .map(|t| {
                    t.trim()
                        .parse::<usize>()
                        .map_err(|e| Error::param(format!("{t:?}: {e}")))
                })
                .collect()
        };
        let one_based = |v: usize| -> Result<usize> {
            v.checked_sub(1)
                .ok_or_else(|| Error::param("indices are 1-based"))
        };
        let strategy = match kind {
            "target" => Strategy::TargetCoordinate {
                j: one_based(*nums(rest)?.first().ok_or_else(|| Error::param("target needs J"))?)?,
            },
            "ball" => match nums(rest)?.as_slice() {
                [c, r] => Strategy::Ball {
                    center: one_based(*c)?,
                    radius: *r,
                },
                _ => return Err(Error::param("ball needs C,R")),
            },
            "random" => match nums(rest)?.as_slice() {
                [b] => Strategy::Random { b: *b },
                _ => return Err(Error::param("random needs B")),
            },
            "list" => Strategy::Explicit {
                equations: nums(rest)?.into_iter().map(one_based).collect::<Result<_>>()?,
            },
            "file" => {
                let text = std::fs::read_to_string(rest).map_err(|e| Error::io(rest, e))?;
                let joined = text.split(|c: char| c.is_whitespace() || c == ',').collect::<Vec<_>>().join(",");
                Strategy::Explicit {
                    equations: nums(&joined)?.into_iter().map(one_based).collect::<Result<_>>()?,
                }
            }
            other => return Err(Error::param(format!("unknown adversary {other:?}"))),
        };
        Ok(Self::new(strategy, budget))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Erasure {
    pub erased: Vec<usize>,
    /// The strategy wanted more equations than the budget allowed.
    pub truncated: bool,
}

pub fn erase(design: &BinaryDesign, adv: &ErasureAdversary, seed: u64) -> Result<Erasure> {
    let m = design.m();
    if adv.budget > m {
        return Err(Error::param(format!("budget {} exceeds m = {m}", adv.budget)));
    }
    let check_coord = |j: usize| {
        if j >= design.n() {
            Err(Error::param(format!("coordinate {j} out of range")))
        } else {
            Ok(())
        }
    };
    let truncate = |mut set: Vec<usize>| {
        let truncated = set.len() > adv.budget;
        set.truncate(adv.budget);
        Erasure { erased: set, truncated }
    };
    Ok(match &adv.strategy {
        Strategy::TargetCoordinate { j } => {
            check_coord(*j)?;
            truncate(design.columns()[*j].clone())
        }
        Strategy::Ball { center, radius } => {
            check_coord(*center)?;
            truncate(ball_boundary(design, *center, *radius))
        }
        Strategy::Random { b } => {
            if *b > m {
                return Err(Error::param("random erasure larger than m"));
            }
            let mut rng = seeds::rng(seed);
            truncate(random_subset(&mut rng, m, *b))
        }
        Strategy::Explicit { equations } => {
            let mut set = equations.clone();
            set.sort_unstable();
            set.dedup();
            if set.iter().any(|&i| i >= m) {
                return Err(Error::param("explicit erasure index out of range"));
            }
            if set.len() > adv.budget {
                return Err(Error::param("explicit erasure exceeds the budget"));
            }
            Erasure {
                erased: set,
                truncated: false,
            }
        }
    })
}

/// Equations touching both the ball and its complement.
fn ball_boundary(design: &BinaryDesign, center: usize, radius: usize) -> Vec<usize> {
    let n = design.n();
    let cols = design.columns();
    let mut dist = vec![usize::MAX; n];
    dist[center] = 0;
    let mut queue = VecDeque::from([center]);
    while let Some(j) = queue.pop_front() {
        if dist[j] == radius {
            continue;
        }
        for &i in &cols[j] {
            for &l in design.row(i) {
                if dist[l] == usize::MAX {
                    dist[l] = dist[j] + 1;
                    queue.push_back(l);
                }
            }
        }
    }
    (0..design.m())
        .filter(|&i| {
            let row = design.row(i);
            row.iter().any(|&l| dist[l] != usize::MAX) && row.iter().any(|&l| dist[l] == usize::MAX)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryStatus {
    Feasible,
    InfeasibleAtBudget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialRecoveryResult {
    pub status: RecoveryStatus,
    pub x_hat: Vec<f64>,
    pub support: Vec<usize>,
    pub support_size: usize,
    pub residual_inf: f64,
    pub delta: f64,
    /// Supports examined per size `0..=support_size` (or `0..=k_max`).
    pub supports_checked: Vec<u128>,
}

/// Least-ℓ∞ fit of `y` on the columns `support` of `a`, when one within `δ`
/// exists.
fn fit_support(a: &DMatrix<f64>, y: &DVector<f64>, support: &[usize], delta: f64) -> Option<DVector<f64>> {
    let p = a.nrows();
    let at = a.select_columns(support);
    let svd = at.clone().svd(true, true);
    let ls = svd.solve(y, 1e-12).ok()?;
    let res = &at * &ls - y;
    if norm_inf(&res) <= delta {
        return Some(ls);
    }
    if res.norm() / (p as f64).sqrt() > delta {
        return None;
    }
    // Chebyshev regression: min t s.t. −t ≤ A_T x − y ≤ t.
    let k = support.len();
    let cols = 2 * k + 1 + 2 * p;
    let mut lp = DMatrix::zeros(2 * p, cols);
    let mut b = DVector::zeros(2 * p);
    for r in 0..p {
        for c in 0..k {
            lp[(r, c)] = at[(r, c)];
            lp[(r, k + c)] = -at[(r, c)];
            lp[(p + r, c)] = -at[(r, c)];
            lp[(p + r, k + c)] = at[(r, c)];
        }
        lp[(r, 2 * k)] = -1.0;
        lp[(p + r, 2 * k)] = -1.0;
        lp[(r, 2 * k + 1 + r)] = 1.0;
        lp[(p + r, 2 * k + 1 + p + r)] = 1.0;
        b[r] = y[r];
        b[p + r] = -y[r];
    }
    let mut c = DVector::zeros(cols);
    c[2 * k] = 1.0;
    let opts = IpmOptions {
        tol: 1e-12,
        ..IpmOptions::default()
    };
    let sol = solve_standard_lp(&lp, &b, &c, opts).ok()?;
    if sol.status != LpStatus::Optimal {
        return None;
    }
    let x = DVector::from_fn(k, |i, _| sol.x[i] - sol.x[k + i]);
    (norm_inf(&(&at * &x - y)) <= delta).then_some(x)
}

fn supports_of_size(n: usize, size: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..size).collect();
    if size > n {
        return out;
    }
    loop {
        out.push(cur.clone());
        let mut i = size;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if cur[i] < n - size + i {
                cur[i] += 1;
                for t in i + 1..size {
                    cur[t] = cur[t - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Enumerates supports by increasing size (lexicographic within a size)
/// and returns the first one admitting an `ℓ∞` fit within `δ`.
pub fn l0_minimize(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    delta: f64,
    k_max: usize,
    budget: u128,
) -> Result<PartialRecoveryResult> {
    let n = a.ncols();
    if y.len() != a.nrows() {
        return Err(Error::param("y length does not match the surviving rows"));
    }
    if !(delta > 0.0) {
        return Err(Error::param("δ must be positive"));
    }
    let k_max = k_max.min(n);
    let required: u128 = (0..=k_max).map(|l| binomial(n, l)).sum();
    if required > budget {
        return Err(Error::Budget { required, budget });
    }
    let mut checked = vec![1u128];
    let y_inf = norm_inf(y);
    if y_inf <= delta {
        return Ok(PartialRecoveryResult {
            status: RecoveryStatus::Feasible,
            x_hat: vec![0.0; n],
            support: Vec::new(),
            support_size: 0,
            residual_inf: y_inf,
            delta,
            supports_checked: checked,
        });
    }
    for size in 1..=k_max {
        let supports = supports_of_size(n, size);
        let hit = supports
            .par_iter()
            .enumerate()
            .find_map_first(|(idx, t)| fit_support(a, y, t, delta).map(|x| (idx, x)));
        match hit {
            Some((idx, xt)) => {
                checked.push(idx as u128 + 1);
                let t = &supports[idx];
                let mut x = DVector::zeros(n);
                for (p, &j) in t.iter().enumerate() {
                    x[j] = xt[p];
                }
                let residual_inf = norm_inf(&(a * &x - y));
                return Ok(PartialRecoveryResult {
                    status: RecoveryStatus::Feasible,
                    x_hat: x.iter().copied().collect(),
                    support: t.clone(),
                    support_size: size,
                    residual_inf,
                    delta,
                    supports_checked: checked,
                });
            }
            None => checked.push(supports.len() as u128),
        }
    }
    Ok(PartialRecoveryResult {
        status: RecoveryStatus::InfeasibleAtBudget,
        x_hat: vec![0.0; n],
        support: Vec::new(),
        support_size: 0,
        residual_inf: y_inf,
        delta,
        supports_checked: checked,
    })
}

/// Runs the estimator on `(M_{Bᶜ}, y_{Bᶜ})` from full measurements `y`.
pub fn recover_after_erasure(
    design: &BinaryDesign,
    erased: &[usize],
    y: &DVector<f64>,
    delta: f64,
    k_max: usize,
) -> Result<PartialRecoveryResult> {
    let keep = crate::design::complement(erased, design.m());
    let a = design.surviving_dense(erased);
    let y_sub = DVector::from_fn(keep.len(), |r, _| y[keep[r]]);
    l0_minimize(&a, &y_sub, delta, k_max, 10_000_000)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialEvaluation {
    /// `‖(x̂ − x*)_{Cᶜ}‖₂`.
    pub err_outside_c: f64,
    /// `‖(x̂ − x*)_C‖₂`.
    pub err_inside_c: f64,
    /// `2δη`.
    pub bound: f64,
    pub bound_holds: bool,
    /// Certificate verified and `‖x̂‖₀ + ‖x*‖₀ < τ`, so the bound is guaranteed.
    pub guaranteed: bool,
}

pub fn evaluate_partial(
    result: &PartialRecoveryResult,
    x_star: &DVector<f64>,
    cert: &ErasureCertificate,
) -> Result<PartialEvaluation> {
    let n = x_star.len();
    if result.x_hat.len() != n {
        return Err(Error::param("x̂ and x* lengths differ"));
    }
    let mut in_c = vec![false; n];
    for &i in &cert.unidentifiable {
        if i >= n {
            return Err(Error::param("certificate index out of range"));
        }
        in_c[i] = true;
    }
    let (mut out2, mut in2) = (0.0, 0.0);
    for i in 0..n {
        let e = result.x_hat[i] - x_star[i];
        if in_c[i] {
            in2 += e * e;
        } else {
            out2 += e * e;
        }
    }
    let err_outside_c: f64 = f64::sqrt(out2);
    let bound = 2.0 * result.delta * cert.eta;
    let star_support = x_star.iter().filter(|v| **v != 0.0).count();
    Ok(PartialEvaluation {
        err_outside_c,
        err_inside_c: in2.sqrt(),
        bound,
        bound_holds: err_outside_c <= bound,
        guaranteed: cert.is_verified() && result.support_size + star_support < cert.tau,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::erasure::{construct_unidentifiable_set, verify_erasure_robustness, ConstructMethod, ConstructParams, VerifyMode};

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn erase_examples() {
        let id = BinaryDesign::identity(4);
        let e = erase(&id, &ErasureAdversary::new(Strategy::TargetCoordinate { j: 1 }, 1), 0).unwrap();
        assert_eq!(e.erased, vec![1]);
        assert!(!e.truncated);
        let e = erase(&id, &ErasureAdversary::new(Strategy::Explicit { equations: vec![2, 0] }, 2), 0).unwrap();
        assert_eq!(e.erased, vec![0, 2]);

        let m = BinaryDesign::identity(8);
        let adv = ErasureAdversary::new(Strategy::Random { b: 2 }, 2);
        let a = erase(&m, &adv, 5).unwrap();
        assert_eq!(a, erase(&m, &adv, 5).unwrap());
        assert_eq!(a.erased.len(), 2);

        let ones = BinaryDesign::all_ones(3, 3);
        let e = erase(&ones, &ErasureAdversary::new(Strategy::TargetCoordinate { j: 0 }, 2), 0).unwrap();
        assert_eq!(e.erased, vec![0, 1]);
        assert!(e.truncated);
    }

    #[test]
    fn ball_boundary_on_a_path() {
        // Path graph: equation i joins coordinates i and i+1.
        let rows = (0..5).map(|i| vec![i, i + 1]).collect();
        let m = BinaryDesign::from_rows(5, 6, rows).unwrap();
        let e = erase(&m, &ErasureAdversary::new(Strategy::Ball { center: 2, radius: 1 }, 5), 0).unwrap();
        // Ball {1,2,3}; boundary equations join 0–1 and 3–4.
        assert_eq!(e.erased, vec![0, 3]);
    }

    #[test]
    fn adversary_parsing() {
        let a = ErasureAdversary::parse("target:2", 3).unwrap();
        assert_eq!(a.strategy, Strategy::TargetCoordinate { j: 1 });
        let a = ErasureAdversary::parse("ball:3,2", 3).unwrap();
        assert_eq!(a.strategy, Strategy::Ball { center: 2, radius: 2 });
        assert!(ErasureAdversary::parse("target:0", 3).is_err());
        assert!(ErasureAdversary::parse("nonsense", 3).is_err());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.txt");
        std::fs::write(&p, "3 1\n2\n").unwrap();
        let a = ErasureAdversary::parse(&format!("file:{}", p.display()), 3).unwrap();
        assert_eq!(a.strategy, Strategy::Explicit { equations: vec![2, 0, 1] });
    }

    #[test]
    fn l0_examples() {
        let id = DMatrix::identity(4, 4);
        let r = l0_minimize(&id, &dv(&[1.0, 0.0, 0.0, 0.0]), 1e-9, 2, 1_000).unwrap();
        assert_eq!(r.support, vec![0]);
        assert_eq!(r.x_hat, vec![1.0, 0.0, 0.0, 0.0]);

        let r = l0_minimize(&id, &DVector::zeros(4), 1e-9, 2, 1_000).unwrap();
        assert_eq!(r.support_size, 0);

        let m = BinaryDesign::from_dense(2, 4, &[1, 0, 0, 0, 0, 1, 1, 0]).unwrap();
        let x_star = dv(&[1.0, 1.0, 0.0, 0.0]);
        let y = m.to_dense() * &x_star;
        let r = recover_after_erasure(&m, &[0], &y, 1e-9, 2).unwrap();
        assert_eq!(r.support, vec![1]);
        assert_close!(r.x_hat[1], 1.0, 1e-12);

        let cert = construct_unidentifiable_set(&m, &[0], ConstructParams::new(2, 2.0, 1e-6, ConstructMethod::BruteForce)).unwrap();
        let cert = verify_erasure_robustness(&m, cert, VerifyMode::Exhaustive).unwrap();
        assert_eq!(cert.unidentifiable, vec![0, 3]);
        assert!(cert.is_verified());
        let ev = evaluate_partial(&r, &x_star, &cert).unwrap();
        assert_close!(ev.err_outside_c, 0.0, 1e-12);
        assert!(ev.bound_holds);
        // ‖x̂‖₀ + ‖x*‖₀ = 3 is not below τ = 2.
        assert!(!ev.guaranteed);
    }

    #[test]
    fn infeasible_at_budget() {
        let id = DMatrix::identity(3, 3);
        let r = l0_minimize(&id, &dv(&[1.0, 1.0, 1.0]), 1e-9, 2, 1_000).unwrap();
        assert_eq!(r.status, RecoveryStatus::InfeasibleAtBudget);
        assert_eq!(r.supports_checked, vec![1, 3, 3]);
        assert!(matches!(l0_minimize(&id, &dv(&[1.0; 3]), 1e-9, 3, 2), Err(Error::Budget { .. })));
    }

    #[test]
    fn chebyshev_fit_handles_noise() {
        // One column, noisy observations: best ℓ∞ fit of (1, 1.2) by x·(1,1) is 1.1 with residual 0.1.
        let a = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        let y = dv(&[1.0, 1.2]);
        assert!(l0_minimize(&a, &y, 0.09, 1, 10).unwrap().status == RecoveryStatus::InfeasibleAtBudget);
        let r = l0_minimize(&a, &y, 0.1 + 1e-9, 1, 10).unwrap();
        assert_eq!(r.status, RecoveryStatus::Feasible);
        assert!(r.residual_inf <= r.delta);
    }

    #[test]
    fn evaluate_examples() {
        let r = PartialRecoveryResult {
            status: RecoveryStatus::Feasible,
            x_hat: vec![0.0; 4],
            support: vec![],
            support_size: 0,
            residual_inf: 0.0,
            delta: 1e-9,
            supports_checked: vec![1],
        };
        let cert = ErasureCertificate::new(vec![1], vec![1], 2.0, 2);
        let ev = evaluate_partial(&r, &dv(&[0.0, 1.0, 0.0, 0.0]), &cert).unwrap();
        assert_eq!(ev.err_outside_c, 0.0);
        assert_eq!(ev.err_inside_c, 1.0);
        let same = evaluate_partial(&r, &DVector::zeros(4), &cert).unwrap();
        assert_eq!((same.err_outside_c, same.err_inside_c), (0.0, 0.0));
    }

    #[test]
    fn supports_enumerate_lexicographically() {
        assert_eq!(supports_of_size(4, 2), vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]);
        assert_eq!(supports_of_size(3, 3), vec![vec![0, 1, 2]]);
        assert!(supports_of_size(2, 3).is_empty());
    }

    proptest::proptest! {
        #[test]
        fn output_is_feasible_and_minimal(seed in 0u64..300) {
            let m = crate::design::gen_bernoulli_design(6, 9, 2.5, seed).unwrap();
            let mut rng = seeds::rng(seed);
            let support = random_subset(&mut rng, 9, 2);
            let mut x = DVector::zeros(9);
            for &j in &support { x[j] = 1.0 + seed as f64 / 100.0; }
            let y = m.to_dense() * &x;
            let r = recover_after_erasure(&m, &[0], &y, 1e-9, 3).unwrap();
            proptest::prop_assert_eq!(r.status, RecoveryStatus::Feasible);
            proptest::prop_assert!(r.residual_inf <= r.delta);
            proptest::prop_assert!(r.support_size <= 2);
            // No smaller support fits: every strictly smaller size was exhausted.
            for size in 0..r.support_size {
                proptest::prop_assert_eq!(r.supports_checked[size], binomial(9, size));
            }
        }
    }
}
