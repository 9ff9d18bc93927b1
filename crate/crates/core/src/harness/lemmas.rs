//! Monte Carlo checks of the projection, random-sum and random-matrix bounds.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::random_subset;
use crate::error::{Error, Result};
use crate::instance::{sample_covariates, HardInstance};
use crate::numerics::{self, norm1, orthonormal_columns, DEFAULT_TOL_RANK};
use crate::seeds;

fn gaussian_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(&mut *rng))
}

/// Binomial standard error `√(p(1 − p)/trials)`.
pub fn standard_error(p: f64, trials: usize) -> f64 {
    let p = p.clamp(0.0, 1.0);
    (p * (1.0 - p) / trials as f64).sqrt()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProjectionLemmaOptions {
    /// Fixed direction for the alignment event; a seeded Gaussian when absent.
    pub v: Option<Vec<f64>>,
    /// Fixed vector for the restricted-coordinate event.
    pub u: Option<Vec<f64>>,
    /// Coordinates dropped from `P` (`|P| = n − τ`).
    pub tau: usize,
    /// Density parameter; enables the `η/32` frequency.
    pub eta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionLemmaRecord {
    pub n: usize,
    pub m: usize,
    pub r: usize,
    pub trials: usize,
    /// `r ≤ 2m`: the lemmas say nothing and nothing is asserted.
    pub vacuous: bool,
    /// `1 − 4m/(3r)`.
    pub bound: f64,
    /// Trials with `vᵀ(I − P)v ≥ ‖v‖²/8`.
    pub alignment_hits: usize,
    pub alignment_frequency: f64,
    pub three_sigma: f64,
    pub alignment_ok: Option<bool>,
    /// Largest observed `‖Proj_{span Θ} Xᵀa‖₂ / ‖Xᵀa‖₂`.
    pub near_kernel_ratio_max: f64,
    /// `√(nε/λ)`; absent when `Θ = 0`.
    pub near_kernel_scale: Option<f64>,
    /// `near_kernel_ratio_max / near_kernel_scale`, an empirical constant.
    pub near_kernel_constant: Option<f64>,
    pub tau: usize,
    /// `inf_a ‖u_P − (Xᵀa)_P‖₂ / ‖u_P‖₂` over trials.
    pub restricted_ratio_min: f64,
    pub restricted_ratio_mean: f64,
    /// Trials with ratio `≥ η/32`.
    pub restricted_hits: Option<usize>,
}

struct ProjectionTrial {
    aligned: bool,
    near_kernel: f64,
    restricted: f64,
}

/// Samples `X ~ N(0, Θ̃⁻¹)^m` per trial and measures the three projection events.
pub fn validate_projection_lemmas(
    inst: &HardInstance,
    m: usize,
    trials: usize,
    seed: u64,
    opts: &ProjectionLemmaOptions,
) -> Result<ProjectionLemmaRecord> {
    let n = inst.n();
    if m == 0 || trials == 0 {
        return Err(Error::param("m and trials must be positive"));
    }
    if opts.tau >= n {
        return Err(Error::param("τ must be below n"));
    }
    let fixed = |v: &Option<Vec<f64>>, tag: u64| -> Result<DVector<f64>> {
        match v {
            Some(v) if v.len() == n => Ok(DVector::from_column_slice(v)),
            Some(_) => Err(Error::param("fixed vector has the wrong length")),
            None => Ok(gaussian_vector(n, &mut seeds::rng(seeds::derive(seed, tag)))),
        }
    };
    let v = fixed(&opts.v, 1)?;
    let u = fixed(&opts.u, 2)?;
    let vv = v.norm_squared();
    let range = orthonormal_columns(&inst.design.to_dense().transpose(), DEFAULT_TOL_RANK);

    let results: Vec<ProjectionTrial> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = seeds::trial_rng(seed, 0, t as u64);
            let x = sample_covariates(inst, m, &mut rng);
            let xt = x.transpose();
            let q = orthonormal_columns(&xt, DEFAULT_TOL_RANK);
            let resid = vv - (q.transpose() * &v).norm_squared();
            let near_kernel = if range.ncols() == 0 || q.ncols() == 0 {
                0.0
            } else {
                numerics::singular_values(&(range.transpose() * &q))[0]
            };
            let dropped = random_subset(&mut rng, n, opts.tau);
            let keep = crate::design::complement(&dropped, n);
            let up = DVector::from_fn(keep.len(), |i, _| u[keep[i]]);
            let xp = xt.select_rows(&keep);
            let qp = orthonormal_columns(&xp, DEFAULT_TOL_RANK);
            let restricted = numerics::distance_to_span(&up, &qp) / up.norm();
            ProjectionTrial {
                aligned: resid >= vv / 8.0,
                near_kernel,
                restricted,
            }
        })
        .collect();

    let r = inst.r;
    let vacuous = r <= 2 * m;
    let bound = 1.0 - 4.0 * m as f64 / (3.0 * r as f64);
    let hits = results.iter().filter(|t| t.aligned).count();
    let freq = hits as f64 / trials as f64;
    let three_sigma = 3.0 * standard_error(bound, trials);
    let near_max = results.iter().map(|t| t.near_kernel).fold(0.0, f64::max);
    let scale = inst.lambda.map(|l| (n as f64 * inst.epsilon / l).sqrt());
    let ratios: Vec<f64> = results.iter().map(|t| t.restricted).collect();
    Ok(ProjectionLemmaRecord {
        n,
        m,
        r,
        trials,
        vacuous,
        bound,
        alignment_hits: hits,
        alignment_frequency: freq,
        three_sigma,
        alignment_ok: (!vacuous).then_some(freq >= bound - three_sigma),
        near_kernel_ratio_max: near_max,
        near_kernel_scale: scale,
        near_kernel_constant: scale.map(|s| near_max / s),
        tau: opts.tau,
        restricted_ratio_min: ratios.iter().copied().fold(f64::INFINITY, f64::min),
        restricted_ratio_mean: ratios.iter().sum::<f64>() / trials as f64,
        restricted_hits: opts.eta.map(|eta| ratios.iter().filter(|&&q| q >= eta / 32.0).count()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomSumRecord {
    pub delta: f64,
    pub trials: usize,
    pub max_norm: f64,
    /// Trials with `‖Σ Zᵢvᵢ‖₁ < δ maxᵢ ‖vᵢ‖₁`.
    pub violations: usize,
    pub frequency: f64,
    /// `δ + 3√(δ(1 − δ)/trials)`.
    pub bound: f64,
    /// All vectors vanish, so the event always holds and nothing is asserted.
    pub vacuous: bool,
    pub passed: bool,
}

/// Draws `Zᵢ ~ Unif[−1, 1]` independently per trial.
pub fn validate_random_sum_lemma(vectors: &[DVector<f64>], delta: f64, trials: usize, seed: u64) -> Result<RandomSumRecord> {
    if vectors.is_empty() || trials == 0 {
        return Err(Error::param("need at least one vector and one trial"));
    }
    let n = vectors[0].len();
    if vectors.iter().any(|v| v.len() != n) {
        return Err(Error::param("vectors differ in length"));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::param("δ must lie in (0, 1]"));
    }
    let max_norm = vectors.iter().map(norm1).fold(0.0, f64::max);
    let unif = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
    let violations = (0..trials)
        .into_par_iter()
        .filter(|&t| {
            let mut rng = seeds::trial_rng(seed, 0, t as u64);
            let mut sum = DVector::zeros(n);
            for v in vectors {
                sum.axpy(unif.sample(&mut rng), v, 1.0);
            }
            norm1(&sum) < delta * max_norm
        })
        .count();
    let frequency = violations as f64 / trials as f64;
    let bound = delta + 3.0 * standard_error(delta, trials);
    let vacuous = max_norm == 0.0;
    Ok(RandomSumRecord {
        delta,
        trials,
        max_norm,
        violations,
        frequency,
        bound,
        vacuous,
        passed: vacuous || frequency <= bound,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularBandRecord {
    pub rows: usize,
    pub cols: usize,
    pub t: f64,
    pub draws: usize,
    /// `√N − √n − t`.
    pub lower: f64,
    /// `√N + √n + t`.
    pub upper: f64,
    pub within: usize,
    pub frequency: f64,
    /// `1 − 2exp(−t²/2)`.
    pub guaranteed: f64,
}

/// Fraction of Gaussian `rows × cols` matrices with all singular values in
/// `[√N − √n − t, √N + √n + t]`.
pub fn gaussian_singular_band(rows: usize, cols: usize, t: f64, draws: usize, seed: u64) -> SingularBandRecord {
    let (sn, sc) = ((rows as f64).sqrt(), (cols as f64).sqrt());
    let (lower, upper) = (sn - sc - t, sn + sc + t);
    let within = (0..draws)
        .into_par_iter()
        .filter(|&i| {
            let mut rng = seeds::trial_rng(seed, 0, i as u64);
            let a = DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng));
            let sv = numerics::singular_values(&a);
            sv[sv.len() - 1] >= lower && sv[0] <= upper
        })
        .count();
    SingularBandRecord {
        rows,
        cols,
        t,
        draws,
        lower,
        upper,
        within,
        frequency: within as f64 / draws.max(1) as f64,
        guaranteed: 1.0 - 2.0 * (-t * t / 2.0).exp(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceBandRecord {
    pub n: usize,
    pub samples: usize,
    pub t: f64,
    /// `(1 + √(n/m) + t/√m)² − 1`.
    pub epsilon: f64,
    /// Extreme eigenvalues of `Lᵀ Σ̂ L`, i.e. of `Σ̂` relative to `Σ = Θ̃⁻¹`.
    pub eig_min: f64,
    pub eig_max: f64,
    pub within: bool,
}

/// Draws `samples` covariates and checks `(1 − ε)Σ ⪯ Σ̂ ⪯ (1 + ε)Σ`, with `ε`
/// taken from the Gaussian singular-value band at deviation `t`.
pub fn covariance_band(inst: &HardInstance, samples: usize, t: f64, seed: u64) -> Result<CovarianceBandRecord> {
    if samples == 0 {
        return Err(Error::param("samples must be positive"));
    }
    let n = inst.n();
    const BLOCK: usize = 8192;
    let blocks = samples.div_ceil(BLOCK);
    let grams: Vec<DMatrix<f64>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let rows = BLOCK.min(samples - b * BLOCK);
            let x = sample_covariates(inst, rows, &mut seeds::trial_rng(seed, 0, b as u64));
            x.transpose() * x
        })
        .collect();
    let mut gram = DMatrix::zeros(n, n);
    for g in &grams {
        gram += g;
    }
    let cov = gram / samples as f64;
    let l = &inst.chol;
    let whitened = l.transpose() * cov * l;
    let whitened = (&whitened + whitened.transpose()) * 0.5;
    let eig = numerics::symmetric_eigenvalues(&whitened);
    let a = (n as f64 / samples as f64).sqrt() + t / (samples as f64).sqrt();
    let epsilon = (1.0 + a).powi(2) - 1.0;
    let (eig_min, eig_max) = (eig[0], eig[eig.len() - 1]);
    Ok(CovarianceBandRecord {
        n,
        samples,
        t,
        epsilon,
        eig_min,
        eig_max,
        within: eig_min >= 1.0 - epsilon && eig_max <= 1.0 + epsilon,
    })
}
