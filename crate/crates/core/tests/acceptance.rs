//! Acceptance criteria. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero if any fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use erasure_lasso::design::{
    check_assumption, gen_bernoulli_design, neighborhoods, random_subset, serialize_design, unique_neighbor_violations,
    BinaryDesign, CheckMode,
};
use erasure_lasso::erasure::{
    construct_unidentifiable_set, probe_refutation, verify_erasure_robustness, ConstructMethod, ConstructParams,
    VerifyMode,
};
use erasure_lasso::harness::{
    covariance_band, gaussian_singular_band, run_failure_experiment, validate_projection_lemmas,
    validate_random_sum_lemma, ExperimentConfig, ProjectionLemmaOptions,
};
use erasure_lasso::instance::{build_instance, construction_design, isotropic_instance};
use erasure_lasso::lasso::ipm::{orthonormalize_rows, solve_standard_lp, IpmOptions, LpStatus};
use erasure_lasso::partial::{erase, evaluate_partial, recover_after_erasure, ErasureAdversary, RecoveryStatus, Strategy};

type Verdict = (bool, String);

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Equations touching `s`, counted straight from the dense matrix.
fn naive_neighbors(dense: &DMatrix<f64>, s: &[usize]) -> (usize, usize) {
    let mut any = 0;
    let mut unique = 0;
    for i in 0..dense.nrows() {
        let hits = s.iter().filter(|&&j| dense[(i, j)] != 0.0).count();
        any += (hits > 0) as usize;
        unique += (hits == 1) as usize;
    }
    (any, unique)
}

fn all_subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut stack = Vec::new();
    fn rec(n: usize, k: usize, stack: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        let start = stack.last().map_or(0, |&l| l + 1);
        for j in start..n {
            stack.push(j);
            out.push(stack.clone());
            if stack.len() < k {
                rec(n, k, stack, out);
            }
            stack.pop();
        }
    }
    rec(n, k, &mut stack, &mut out);
    out
}

fn criterion_1() -> Verdict {
    let design = gen_bernoulli_design(30, 60, 6.0, 1).unwrap();
    let (eps, k) = (1.0 / 3.0, 3);
    let start = Instant::now();
    let report = check_assumption(&design, eps, k, CheckMode::Exhaustive).unwrap();
    let secs = start.elapsed().as_secs_f64();

    let dense = design.to_dense();
    let d = design.d;
    let subsets = all_subsets(60, k);
    let naive_expansion = subsets
        .iter()
        .all(|s| naive_neighbors(&dense, s).0 as f64 >= (1.0 - eps) * d * s.len() as f64);
    let naive_unique = subsets
        .iter()
        .all(|s| naive_neighbors(&dense, s).1 as f64 >= (1.0 - 3.0 * eps) * d * s.len() as f64);

    let mut r = rng(100);
    let mut per_subset_agree = true;
    let mut pair_violation_seen = false;
    for _ in 0..100 {
        let size = r.random_range(1..=k);
        let s = random_subset(&mut r, 60, size);
        let (nb, un) = neighborhoods(&design, &s).unwrap();
        per_subset_agree &= naive_neighbors(&dense, &s) == (nb.len(), un.len());
        let t: Vec<usize> = random_subset(&mut r, 60, size).into_iter().filter(|j| !s.contains(j)).collect();
        if !t.is_empty() {
            let common = (0..30)
                .filter(|&i| s.iter().any(|&j| dense[(i, j)] != 0.0) && t.iter().any(|&j| dense[(i, j)] != 0.0))
                .count();
            pair_violation_seen |= common as f64 > d.sqrt() / 8.0 * s.len().max(t.len()) as f64;
        }
    }
    let witness_ok = report.worst_intersection.as_ref().is_some_and(|w| {
        let common = (0..30)
            .filter(|&i| w.s.iter().any(|&j| dense[(i, j)] != 0.0) && w.t.iter().any(|&j| dense[(i, j)] != 0.0))
            .count();
        common == w.common
    });
    let intersection_agrees = !pair_violation_seen || !report.intersection_ok;
    let pass = secs < 60.0
        && report.expansion_ok == naive_expansion
        && report.unique_neighbor_ok == naive_unique
        && per_subset_agree
        && intersection_agrees
        && witness_ok;
    (
        pass,
        format!(
            "exhaustive check {secs:.2}s; expansion {} (naive {naive_expansion}); unique {} (naive {naive_unique}); 100 subsets agree: {per_subset_agree}",
            report.expansion_ok, report.unique_neighbor_ok
        ),
    )
}

/// Lines of the affine plane over `Z_q` (columns) against its points (rows);
/// two columns share at most one row. Keeps a seeded subset of `n` lines.
fn affine_plane(q: usize, n: usize, seed: u64) -> BinaryDesign {
    let mut lines: Vec<Vec<usize>> = Vec::new();
    for a in 0..q {
        for b in 0..q {
            lines.push((0..q).map(|x| x * q + (a * x + b) % q).collect());
        }
    }
    for c in 0..q {
        lines.push((0..q).map(|y| c * q + y).collect());
    }
    let keep = random_subset(&mut rng(seed), lines.len(), n);
    let mut rows = vec![Vec::new(); q * q];
    for (col, &l) in keep.iter().enumerate() {
        for &pt in &lines[l] {
            rows[pt].push(col);
        }
    }
    BinaryDesign::from_rows(q * q, n, rows).unwrap()
}

fn criterion_2() -> Verdict {
    let mut passing = 0;
    let mut violations = 0;
    let mut checked = 0;
    let mut candidates: Vec<(BinaryDesign, usize, f64)> = vec![
        (affine_plane(7, 56, 1), 2, 1.0 / 12.0),
        (affine_plane(7, 50, 2), 2, 1.0 / 16.0),
        (affine_plane(11, 132, 3), 2, 1.0 / 12.0),
        (affine_plane(11, 125, 4), 3, 1.0 / 12.0),
        (affine_plane(13, 182, 5), 3, 1.0 / 12.0),
        (affine_plane(13, 175, 6), 3, 1.0 / 12.0),
    ];
    for seed in 0..4 {
        candidates.push((gen_bernoulli_design(40, 60, 8.0, 200 + seed).unwrap(), 2, 1.0 / 12.0));
    }
    for (design, k, eps) in &candidates {
        let report = check_assumption(design, *eps, *k, CheckMode::Exhaustive).unwrap();
        checked += 1;
        if report.expansion_ok {
            passing += 1;
            violations += unique_neighbor_violations(design, *eps, *k).len();
        }
    }
    (
        passing > 0 && violations == 0,
        format!("{passing}/{checked} designs pass expansion with ε ≤ 1/12; {violations} unique-neighbor violations"),
    )
}

fn criterion_3() -> Verdict {
    let (tau, eta) = (3, 1e4);
    let mut verified = 0;
    let mut total = 0;
    let mut refutations = 0;
    let mut size_ok = 0;
    let mut targets = 0;
    for inst in 0..20u64 {
        let n = [12, 14, 16][inst as usize % 3];
        let m = 12;
        let design = gen_bernoulli_design(m, n, 0.5 * m as f64, 1000 + inst).unwrap();
        let mut r = rng(inst);
        let j = r.random_range(0..n);
        let center = r.random_range(0..n);
        for strategy in [Strategy::TargetCoordinate { j }, Strategy::Ball { center, radius: 1 }] {
            let target = matches!(strategy, Strategy::TargetCoordinate { .. });
            let erased = erase(&design, &ErasureAdversary::new(strategy, m), inst).unwrap().erased;
            let cert = construct_unidentifiable_set(
                &design,
                &erased,
                ConstructParams::new(tau, eta, 1e-6, ConstructMethod::BruteForce),
            )
            .unwrap();
            let cert = verify_erasure_robustness(&design, cert, VerifyMode::Exhaustive).unwrap();
            total += 1;
            verified += cert.is_verified() as usize;
            refutations += probe_refutation(&design, &cert, 100_000, 7 + inst).is_some() as usize;
            if target {
                targets += 1;
                size_ok += (cert.unidentifiable.len() <= 2 * erased.len()) as usize;
            }
        }
    }
    (
        verified == total && refutations == 0 && size_ok == targets,
        format!("{verified}/{total} verified; {refutations} refutations in 1e5 probes each; |C| ≤ 2|B| on {size_ok}/{targets} target cases"),
    )
}

fn criterion_4() -> Verdict {
    let start = Instant::now();
    let (delta, eta, tau) = (1e-9, 1e6, 4);
    let mut ok = 0;
    let mut runs = 0;
    let mut worst_outside: f64 = 0.0;
    for seed in 0..5u64 {
        let design = gen_bernoulli_design(12, 24, 0.4 * 12.0, 40 + seed).unwrap();
        let cols = design.columns();
        let Some(j) = (0..24).find(|&j| !cols[j].is_empty() && cols[j].len() < 12) else {
            continue;
        };
        let erased = cols[j].clone();
        let surviving = design.surviving_dense(&erased);
        let Some(l) = (0..24).find(|&l| l != j && surviving.column(l).iter().any(|&v| v != 0.0)) else {
            continue;
        };
        let mut x_star = DVector::zeros(24);
        x_star[j] = 1.5;
        x_star[l] = -0.75;
        let y = design.to_dense() * &x_star;
        let result = recover_after_erasure(&design, &erased, &y, delta, 3).unwrap();
        let cert = construct_unidentifiable_set(
            &design,
            &erased,
            ConstructParams::new(tau, eta, delta, ConstructMethod::BruteForce),
        )
        .unwrap();
        let cert = verify_erasure_robustness(&design, cert, VerifyMode::Exhaustive).unwrap();
        let ev = evaluate_partial(&result, &x_star, &cert).unwrap();
        runs += 1;
        worst_outside = worst_outside.max(ev.err_outside_c);
        let pass = result.status == RecoveryStatus::Feasible
            && result.residual_inf <= delta
            && cert.is_verified()
            && ev.guaranteed
            && ev.err_outside_c <= 2.0 * delta * eta
            && ev.err_inside_c >= 0.5 * x_star[j].abs();
        ok += pass as usize;
    }
    let secs = start.elapsed().as_secs_f64();
    (
        runs > 0 && ok == runs && secs < 30.0,
        format!("{ok}/{runs} designs; max err_outside_C {worst_outside:.3e} ≤ 2δη = {:.1e}; {secs:.2}s", 2.0 * delta * eta),
    )
}

fn criterion_5() -> Verdict {
    let start = Instant::now();
    let failing = ExperimentConfig::from_toml(
        r#"
        construction_n = 256
        epsilon = 1e-6
        signal = "invertible"
        k = 3
        t = 8
        preconditioners = ["identity", "randinv", "sqrt", "invsqrt"]
        m_list = [32]
        trials = 50
        seed = 2024
        assertions = ["failure >= 0.8 @ m=32"]
        "#,
    )
    .unwrap();
    let full = ExperimentConfig {
        preconditioners: vec!["identity".into()],
        m_list: vec![256],
        assertions: vec!["failure <= 0 @ m=256 precond=identity".into()],
        ..failing.clone()
    };
    let a = run_failure_experiment(&failing).unwrap();
    let b = run_failure_experiment(&full).unwrap();
    let mut sweep_ok = true;
    let mut sweep = Vec::new();
    for eps in [1e-4, 1e-5, 1e-7, 1e-8] {
        let cfg = ExperimentConfig {
            epsilon: eps,
            preconditioners: vec!["identity".into()],
            trials: 20,
            ..failing.clone()
        };
        let r = run_failure_experiment(&cfg).unwrap();
        sweep_ok &= r.all_passed();
        sweep.push(format!("{eps:e}: {:.2}", r.cells[0].failure_rate));
    }
    let secs = start.elapsed().as_secs_f64();
    let rates: Vec<String> = a
        .cells
        .iter()
        .chain(&b.cells)
        .map(|c| format!("{}@m={}: {:.2}", c.preconditioner, c.m, c.failure_rate))
        .collect();
    (
        a.all_passed() && b.all_passed() && sweep_ok && secs < 600.0,
        format!("failure rates {}; identity@m=32 across ε {}; {secs:.1}s", rates.join(", "), sweep.join(", ")),
    )
}

fn criterion_6() -> Verdict {
    let cfg = ExperimentConfig::from_toml(
        r#"
        isotropic_n = 256
        signal = "sparse"
        k = 3
        preconditioners = ["identity"]
        m_list = [64]
        trials = 50
        seed = 77
        assertions = ["success >= 0.95 @ m=64"]
        "#,
    )
    .unwrap();
    let r = run_failure_experiment(&cfg).unwrap();
    (r.all_passed(), format!("success rate {:.2} over 50 trials", r.cells[0].success_rate))
}

fn criterion_7() -> Verdict {
    let iso = isotropic_instance(256).unwrap();
    let hard = build_instance(&construction_design(256, 5).unwrap(), 1e-6).unwrap();
    let mut lines = Vec::new();
    let mut pass = true;
    for (name, inst, m) in [("isotropic", &iso, 64), ("construction", &hard, hard.r / 4)] {
        let rec = validate_projection_lemmas(inst, m, 1000, 31, &ProjectionLemmaOptions::default()).unwrap();
        let ok = rec.r >= 4 * m && rec.alignment_frequency >= rec.bound - 0.05;
        pass &= ok;
        lines.push(format!(
            "{name}: r={} m={m} freq {:.3} vs {:.3}",
            rec.r,
            rec.alignment_frequency,
            rec.bound - 0.05
        ));
    }
    (pass, lines.join("; "))
}

fn criterion_8() -> Verdict {
    let mut r = rng(8);
    let gaussian: Vec<DVector<f64>> = (0..5)
        .map(|_| DVector::from_fn(20, |_, _| StandardNormal.sample(&mut r)))
        .collect();
    let design = construction_design(64, 3).unwrap();
    let rows: Vec<DVector<f64>> = (0..6).map(|i| design.row_vector(i)).collect();
    let single = vec![DVector::from_column_slice(&[1.0, -3.0, 2.0])];
    let mut pass = true;
    let mut lines = Vec::new();
    for (name, vs) in [("gaussian", &gaussian), ("design rows", &rows), ("single", &single)] {
        for delta in [0.05, 0.1, 0.5] {
            let rec = validate_random_sum_lemma(vs, delta, 10_000, 9).unwrap();
            pass &= rec.passed;
            lines.push(format!("{name} δ={delta}: {:.4} ≤ {:.4}", rec.frequency, rec.bound));
        }
    }
    (pass, lines.join("; "))
}

fn criterion_9() -> Verdict {
    let band = gaussian_singular_band(200, 100, 3.0, 1000, 12);
    let inst = build_instance(&construction_design(64, 4).unwrap(), 1e-6).unwrap();
    let cov = covariance_band(&inst, 100_000, 3.0, 13).unwrap();
    (
        band.frequency >= 0.99 && cov.within,
        format!(
            "σ band hit rate {:.3}; whitened covariance eigenvalues [{:.4}, {:.4}] within 1 ± {:.4}",
            band.frequency, cov.eig_min, cov.eig_max, cov.epsilon
        ),
    )
}

/// Minimum over basic feasible solutions.
fn vertex_minimum(a: &DMatrix<f64>, b: &DVector<f64>, c: &DVector<f64>) -> Option<f64> {
    let (m, n) = a.shape();
    let mut best: Option<f64> = None;
    let mut basis: Vec<usize> = (0..m).collect();
    loop {
        let ab = a.select_columns(&basis);
        let sv = ab.singular_values();
        if sv.min() > 1e-10 * sv.max() {
            if let Some(xb) = ab.lu().solve(b) {
                if xb.iter().all(|&v| v >= -1e-10) {
                    let obj: f64 = basis.iter().zip(xb.iter()).map(|(&j, &v)| c[j] * v).sum();
                    best = Some(best.map_or(obj, |o: f64| o.min(obj)));
                }
            }
        }
        let mut i = m;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if basis[i] < n - m + i {
                basis[i] += 1;
                for t in i + 1..m {
                    basis[t] = basis[t - 1] + 1;
                }
                break;
            }
        }
    }
}

fn criterion_10() -> Verdict {
    let mut r = rng(10);
    let mut worst: f64 = 0.0;
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = r.random_range(2..=10);
        let m = r.random_range(1..=5.min(n - 1));
        let a = DMatrix::from_fn(m, n, |_, _| StandardNormal.sample(&mut r));
        let x0 = DVector::from_fn(n, |_, _| r.random_range(0.0..2.0));
        let y0 = DVector::from_fn(m, |_, _| StandardNormal.sample(&mut r));
        let s0 = DVector::from_fn(n, |_, _| r.random_range(0.1..2.0));
        let b = &a * x0;
        let c = a.transpose() * y0 + s0;
        let (ao, bo) = orthonormalize_rows(&a, &b).unwrap();
        let sol = solve_standard_lp(&ao, &bo, &c, IpmOptions::default()).unwrap();
        let exact = vertex_minimum(&a, &b, &c).expect("feasible bounded LP has a vertex");
        let rel = (sol.primal_objective - exact).abs() / exact.abs().max(1.0);
        worst = worst.max(rel);
        if sol.status != LpStatus::Optimal || rel > 1e-8 {
            mismatches += 1;
        }
    }
    (mismatches == 0, format!("{mismatches}/1000 mismatches; worst relative error {worst:.2e}"))
}

fn run_cli(dir: &Path, args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_erasure-lasso"))
        .args(args)
        .current_dir(dir)
        .status()
        .map(|s| s.success())
        .unwrap_or(false)
}

fn cli_outputs(dir: &Path) -> Option<Vec<(String, Vec<u8>)>> {
    let design = gen_bernoulli_design(10, 20, 3.0, 5).unwrap();
    serialize_design(&design, &dir.join("d0.txt")).unwrap();
    std::fs::write(dir.join("x.txt"), "1 0 0 0 0 0 0 0 0 -2 0 0 0 0 0 0 0 0 0 0\n").unwrap();
    std::fs::write(
        dir.join("cfg.toml"),
        "construction_n = 32\nsignal = \"invertible\"\nk = 2\nt = 4\npreconditioners = [\"identity\", \"randinv\", \"sqrt\"]\nm_list = [4, 8]\ntrials = 4\nseed = 5\noutput_dir = \"exp\"\n",
    )
    .unwrap();
    let commands: [&[&str]; 8] = [
        &["gen-design", "--m", "10", "--n", "20", "--d", "3", "--seed", "9", "--out", "d.txt"],
        &["check-expander", "--in", "d.txt", "--epsilon", "0.3", "--k", "2", "--out", "exp.json"],
        &["check-erasure", "--design", "d.txt", "--B", "target:3", "--tau", "3", "--eta", "1e4", "--mode", "sampled:500", "--out", "cert.json"],
        &["build-instance", "--construction", "32", "--epsilon", "1e-6", "--out", "inst.json"],
        &["sample-signals", "--instance", "inst.json", "--k", "2", "--t", "4", "--count", "3", "--seed", "2", "--out", "sig.jsonl"],
        &["run-lasso", "--instance", "inst.json", "--precond", "randinv", "--m", "8", "--signals", "sig.jsonl", "--trials", "3", "--seed", "4", "--out", "lasso.jsonl"],
        &["partial-recover", "--design", "d0.txt", "--adversary", "target:1", "--k", "2", "--xstar", "x.txt", "--tau", "3", "--out", "partial.json"],
        &["run-experiment", "--config", "cfg.toml"],
    ];
    for c in commands {
        if !run_cli(dir, c) {
            return None;
        }
    }
    let files = [
        "d.txt",
        "exp.json",
        "cert.json",
        "inst.json",
        "sig.jsonl",
        "lasso.jsonl",
        "lasso.csv",
        "partial.json",
        "exp/report.json",
        "exp/summary.csv",
        "exp/plotdata/identity.csv",
        "exp/plotdata/randinv.csv",
        "exp/plotdata/sqrt.csv",
    ];
    files
        .iter()
        .map(|f| std::fs::read(dir.join(f)).ok().map(|b| (f.to_string(), b)))
        .collect()
}

fn criterion_11() -> Verdict {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    match (cli_outputs(a.path()), cli_outputs(b.path())) {
        (Some(x), Some(y)) => {
            let differing: Vec<&str> = x.iter().zip(&y).filter(|(p, q)| p.1 != q.1).map(|(p, _)| p.0.as_str()).collect();
            (
                differing.is_empty(),
                if differing.is_empty() {
                    format!("{} output files byte-identical across reruns", x.len())
                } else {
                    format!("differing outputs: {}", differing.join(", "))
                },
            )
        }
        _ => (false, "a CLI command failed".into()),
    }
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 11] = [
        ("expander certification", criterion_1),
        ("unique-neighbor corollary", criterion_2),
        ("erasure certificate soundness", criterion_3),
        ("partial recovery", criterion_4),
        ("lasso failure", criterion_5),
        ("well-conditioned control", criterion_6),
        ("projection lemma", criterion_7),
        ("random-sum lemma", criterion_8),
        ("random matrix self-tests", criterion_9),
        ("solver correctness", criterion_10),
        ("determinism", criterion_11),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !filter.is_empty() && !filter.iter().any(|x| x == &id.to_string()) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = std::panic::catch_unwind(f).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        });
        failed += (!pass) as usize;
        println!(
            "criterion {id:>2} [{name}]: {} ({detail}) [{:.1}s]",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
