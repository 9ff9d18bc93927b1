use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nalgebra::DVector;
use serde::Serialize;

use erasure_lasso::design::{check_assumption, gen_bernoulli_design, load_design, serialize_design, CheckMode};
use erasure_lasso::erasure::{
    construct_unidentifiable_set, verify_erasure_robustness, ConstructMethod, ConstructParams, VerifyMode,
};
use erasure_lasso::harness::{emit_report, run_failure_experiment, CellSummary, ExperimentConfig, ReportFormat, TrialRecord};
use erasure_lasso::instance::{
    build_instance, build_preconditioner, construction_design, instance_from_record, sample_covariates, sample_signal,
    InstanceRecord, PrecondSpec, SignalDist, SignalDraw,
};
use erasure_lasso::lasso::{run_trial, LassoTolerances, PreparedPreconditioner};
use erasure_lasso::partial::{erase, evaluate_partial, recover_after_erasure, ErasureAdversary};
use erasure_lasso::{seeds, Error, Result};

#[derive(Parser)]
#[command(name = "erasure-lasso", version, about = "Erasure-robust designs and Preconditioned Lasso experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a Bernoulli design (or the (n/2) × n construction design).
    GenDesign {
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        n: usize,
        /// Expected column degree.
        #[arg(long)]
        d: Option<f64>,
        /// Use the construction design for `n` instead of `m` and `d`.
        #[arg(long)]
        construction: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the expansion assumption of a design.
    CheckExpander {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        k: usize,
        /// `exhaustive` or `sampled:N`.
        #[arg(long, default_value = "exhaustive")]
        mode: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Degree threshold `D₀` for the size-regime flag.
        #[arg(long)]
        d0: Option<f64>,
        /// Dimension threshold `n₀` for the size-regime flag.
        #[arg(long)]
        n0: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build and verify an erasure certificate.
    CheckErasure {
        #[arg(long)]
        design: PathBuf,
        /// Adversary spec, a file of indices, or a comma-separated list (1-based).
        #[arg(long = "B")]
        b: String,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        tau: usize,
        #[arg(long)]
        eta: f64,
        /// Defaults to `1e-6·‖M‖_F`.
        #[arg(long)]
        delta: Option<f64>,
        /// `brute` or `constructive`.
        #[arg(long, default_value = "brute")]
        method: String,
        /// `exhaustive` or `sampled:N`.
        #[arg(long, default_value = "exhaustive")]
        mode: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the hard instance for a design and write its record.
    BuildInstance {
        #[arg(long)]
        design: Option<PathBuf>,
        /// Use the construction design of this size.
        #[arg(long)]
        construction: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-6)]
        epsilon: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw signals as JSON lines.
    SampleSignals {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, default_value = "invertible")]
        dist: SignalDist,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        t: Option<usize>,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve noiseless Preconditioned Lasso trials and adjudicate each.
    RunLasso {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, default_value = "identity")]
        precond: PrecondSpec,
        #[arg(long)]
        m: usize,
        /// JSON lines from `sample-signals`; drawn per trial when absent.
        #[arg(long)]
        signals: Option<PathBuf>,
        #[arg(long, default_value = "invertible")]
        dist: SignalDist,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long)]
        t: Option<usize>,
        #[arg(long, default_value_t = 1)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        tol_gap: Option<f64>,
        #[arg(long)]
        tol_obj_rel: Option<f64>,
        #[arg(long)]
        tol_rec: Option<f64>,
        #[arg(long)]
        tol_feas: Option<f64>,
        /// JSON lines, with a CSV summary written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Erase equations and run the ℓ0 estimator on what survives.
    PartialRecover {
        #[arg(long)]
        design: PathBuf,
        #[arg(long)]
        adversary: String,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        k: usize,
        /// Defaults to `1e-9·‖y‖_∞`.
        #[arg(long)]
        delta: Option<f64>,
        /// Whitespace-separated entries of `x*`.
        #[arg(long)]
        xstar: PathBuf,
        /// Certificate parameters for the error split.
        #[arg(long)]
        tau: Option<usize>,
        #[arg(long, default_value_t = 1e6)]
        eta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a configured failure-rate sweep.
    RunExperiment {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn write_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_output(out, &text)
}

fn parse_sampled(mode: &str) -> Result<Option<usize>> {
    match mode {
        "exhaustive" => Ok(None),
        other => other
            .strip_prefix("sampled:")
            .and_then(|n| n.parse().ok())
            .map(Some)
            .ok_or_else(|| Error::param(format!("mode {other:?} is neither exhaustive nor sampled:N"))),
    }
}

fn parse_erasure_spec(spec: &str, budget: usize) -> Result<ErasureAdversary> {
    let known = ["target:", "ball:", "random:", "list:", "file:"];
    if known.iter().any(|k| spec.starts_with(k)) {
        ErasureAdversary::parse(spec, budget)
    } else if Path::new(spec).is_file() {
        ErasureAdversary::parse(&format!("file:{spec}"), budget)
    } else {
        ErasureAdversary::parse(&format!("list:{spec}"), budget)
    }
}

fn load_instance(path: &Path) -> Result<erasure_lasso::instance::HardInstance> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rec: InstanceRecord = serde_json::from_str(&text)?;
    instance_from_record(&rec)
}

fn read_vector(path: &Path) -> Result<DVector<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let vals = text
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|e| Error::param(format!("{}: {t:?}: {e}", path.display()))))
        .collect::<Result<Vec<_>>>()?;
    Ok(DVector::from_vec(vals))
}

#[derive(Serialize)]
struct TrialLine<'a> {
    trial: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    verdict: Option<&'a erasure_lasso::lasso::LassoVerdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct PartialOutput {
    erased: Vec<usize>,
    truncated: bool,
    result: erasure_lasso::partial::PartialRecoveryResult,
    certificate: Option<erasure_lasso::erasure::ErasureCertificate>,
    evaluation: Option<erasure_lasso::partial::PartialEvaluation>,
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenDesign {
            m,
            n,
            d,
            construction,
            seed,
            out,
        } => {
            let design = if construction {
                construction_design(n, seed)?
            } else {
                let (m, d) = m.zip(d).ok_or_else(|| Error::param("--m and --d are required without --construction"))?;
                gen_bernoulli_design(m, n, d, seed)?
            };
            serialize_design(&design, &out)?;
        }
        Command::CheckExpander {
            input,
            epsilon,
            k,
            mode,
            seed,
            d0,
            n0,
            out,
        } => {
            let design = load_design(&input)?;
            let mode = match parse_sampled(&mode)? {
                None => CheckMode::Exhaustive,
                Some(samples) => CheckMode::Sampled { samples, seed },
            };
            let report = check_assumption(&design, epsilon, k, mode)?.with_size_regime(design.n(), d0, n0);
            write_json(out.as_deref(), &report)?;
        }
        Command::CheckErasure {
            design,
            b,
            budget,
            tau,
            eta,
            delta,
            method,
            mode,
            seed,
            out,
        } => {
            let design = load_design(&design)?;
            let adv = parse_erasure_spec(&b, budget.unwrap_or(design.m()))?;
            let erased = erase(&design, &adv, seed)?;
            let method = match method.as_str() {
                "brute" | "brute-force" => ConstructMethod::BruteForce,
                "constructive" => ConstructMethod::Constructive,
                other => return Err(Error::param(format!("unknown method {other:?}"))),
            };
            let delta = delta.unwrap_or(1e-6 * design.frobenius_norm());
            let mut params = ConstructParams::new(tau, eta, delta, method);
            params.seed = seed;
            let cert = construct_unidentifiable_set(&design, &erased.erased, params)?;
            let verify = match parse_sampled(&mode)? {
                None => VerifyMode::Exhaustive,
                Some(probes) => VerifyMode::Sampled { probes, seed },
            };
            write_json(out.as_deref(), &verify_erasure_robustness(&design, cert, verify)?)?;
        }
        Command::BuildInstance {
            design,
            construction,
            seed,
            epsilon,
            out,
        } => {
            let design = match (design, construction) {
                (Some(p), None) => load_design(&p)?,
                (None, Some(n)) => construction_design(n, seed)?,
                _ => return Err(Error::param("give exactly one of --design and --construction")),
            };
            write_json(Some(&out), &build_instance(&design, epsilon)?.record())?;
        }
        Command::SampleSignals {
            instance,
            dist,
            k,
            t,
            count,
            seed,
            out,
        } => {
            let inst = load_instance(&instance)?;
            let mut rng = seeds::rng(seed);
            let mut text = String::new();
            for _ in 0..count {
                text.push_str(&serde_json::to_string(&sample_signal(&inst, dist, k, t.unwrap_or(k), &mut rng)?)?);
                text.push('\n');
            }
            write_output(out.as_deref(), &text)?;
        }
        Command::RunLasso {
            instance,
            precond,
            m,
            signals,
            dist,
            k,
            t,
            trials,
            seed,
            tol_gap,
            tol_obj_rel,
            tol_rec,
            tol_feas,
            out,
        } => {
            let inst = load_instance(&instance)?;
            let d = LassoTolerances::default();
            let tols = LassoTolerances {
                tol_gap: tol_gap.unwrap_or(d.tol_gap),
                tol_obj_rel: tol_obj_rel.unwrap_or(d.tol_obj_rel),
                tol_rec: tol_rec.unwrap_or(d.tol_rec),
                tol_feas: tol_feas.unwrap_or(d.tol_feas),
            };
            let p = build_preconditioner(&inst, &precond, seeds::derive(seed, 1))?;
            let pre = PreparedPreconditioner::new(&p.s)?;
            let given: Option<Vec<SignalDraw>> = match &signals {
                Some(path) => Some(
                    fs::read_to_string(path)
                        .map_err(|e| Error::io(path, e))?
                        .lines()
                        .filter(|l| !l.trim().is_empty())
                        .map(serde_json::from_str)
                        .collect::<std::result::Result<_, _>>()?,
                ),
                None => None,
            };
            let trials = given.as_ref().map_or(trials, |g| g.len().min(trials.max(1)));
            let mut text = String::new();
            let mut records = Vec::with_capacity(trials);
            for trial in 0..trials {
                let mut rng = seeds::trial_rng(seed, 0, trial as u64);
                let result = match &given {
                    Some(g) => Ok(g[trial].clone()),
                    None => sample_signal(&inst, dist, k, t.unwrap_or(k), &mut rng),
                }
                .and_then(|draw| {
                    let x = sample_covariates(&inst, m, &mut rng);
                    run_trial(&pre, &x, &DVector::from_vec(draw.w_star), tols)
                });
                let (verdict, error) = match &result {
                    Ok(v) => (Some(v), None),
                    Err(e) => (None, Some(e.to_string())),
                };
                text.push_str(&serde_json::to_string(&TrialLine {
                    trial,
                    verdict,
                    error: error.clone(),
                })?);
                text.push('\n');
                records.push(TrialRecord {
                    cell: 0,
                    trial,
                    preconditioner: p.label.clone(),
                    m,
                    outcome: verdict.map(|v| v.outcome),
                    error,
                    branch: None,
                    support_size: None,
                    objective_gap: verdict.map(|v| v.objective_at_wstar - v.objective_at_solution),
                    recovery_error: verdict.map(|v| v.recovery_error),
                });
            }
            write_output(Some(&out), &text)?;
            let summary = CellSummary::from_trials(0, &p.label, m, inst.n(), &records);
            erasure_lasso::harness::write_summary_csv(&[summary], &out.with_extension("csv"))?;
        }
        Command::PartialRecover {
            design,
            adversary,
            budget,
            k,
            delta,
            xstar,
            tau,
            eta,
            seed,
            out,
        } => {
            let design = load_design(&design)?;
            let adv = parse_erasure_spec(&adversary, budget.unwrap_or(design.m()))?;
            let erased = erase(&design, &adv, seed)?;
            let x_star = read_vector(&xstar)?;
            if x_star.len() != design.n() {
                return Err(Error::param(format!("x* has {} entries, expected {}", x_star.len(), design.n())));
            }
            let y = design.to_dense() * &x_star;
            let delta = delta.unwrap_or(1e-9 * if y.amax() > 0.0 { y.amax() } else { 1.0 });
            let result = recover_after_erasure(&design, &erased.erased, &y, delta, k)?;
            let (certificate, evaluation) = match tau {
                Some(tau) => {
                    let cert = construct_unidentifiable_set(
                        &design,
                        &erased.erased,
                        ConstructParams::new(tau, eta, delta, ConstructMethod::BruteForce),
                    )?;
                    let cert = verify_erasure_robustness(&design, cert, VerifyMode::Exhaustive)?;
                    let ev = evaluate_partial(&result, &x_star, &cert)?;
                    (Some(cert), Some(ev))
                }
                None => (None, None),
            };
            write_json(
                out.as_deref(),
                &PartialOutput {
                    erased: erased.erased,
                    truncated: erased.truncated,
                    result,
                    certificate,
                    evaluation,
                },
            )?;
        }
        Command::RunExperiment { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dir = out
                .or_else(|| cfg.output_dir.clone().map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("."));
            let report = run_failure_experiment(&cfg)?;
            emit_report(&report, &dir, &ReportFormat::ALL)?;
            for a in &report.assertions {
                eprintln!("{} {}", if a.passed { "PASS" } else { "FAIL" }, a.assertion);
            }
            return Ok(report.all_passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
