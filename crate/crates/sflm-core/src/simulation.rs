//! Synthetic data generation and the Monte Carlo study harness.
//!
//! Predictors are finite cosine expansions with decaying uniform scores,
//! responses come from the reduced form of the spatial model, and the
//! harness repeats generate / decompose / fit over seeded replications to
//! produce bias and mean-squared-error summaries for the spatial and
//! classical fits side by side.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{fit_flm, fit_sflm, SflmFit};
use crate::fpca::{fit_fpca, select_truncation_pve};
use crate::functional_data::{FunctionalDataset, SampleGrid};
use crate::spatial_weights::SpatialWeights;

/// Configuration of one Monte Carlo experiment cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub rows: usize,
    pub cols: usize,
    pub rho_true: f64,
    /// Score-decay exponent of the predictor expansion.
    pub gamma: f64,
    pub reps: usize,
    pub seed: u64,
    /// Variance share used to pick the truncation level.
    pub pve: f64,
    pub noise_scale: f64,
    pub n_terms: usize,
    pub grid_size: usize,
}

impl SimConfig {
    pub fn new(rows: usize, cols: usize, rho_true: f64, gamma: f64, reps: usize, seed: u64) -> Self {
        Self {
            rows,
            cols,
            rho_true,
            gamma,
            reps,
            seed,
            pve: 0.70,
            noise_scale: 0.5,
            n_terms: 50,
            grid_size: 100,
        }
    }

    pub fn n(&self) -> usize {
        self.rows * self.cols
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows * self.cols < 2 {
            return Err(Error::DegenerateGrid {
                rows: self.rows,
                cols: self.cols,
            });
        }
        if !(0.0..1.0).contains(&self.rho_true) {
            return Err(Error::InvalidConfig(format!(
                "rho_true {} outside [0, 1)",
                self.rho_true
            )));
        }
        if self.reps == 0 {
            return Err(Error::InvalidConfig("need at least one replication".into()));
        }
        if !(self.pve > 0.0 && self.pve <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "pve {} outside (0, 1]",
                self.pve
            )));
        }
        if self.n_terms == 0 || self.grid_size < 2 {
            return Err(Error::InvalidConfig(
                "need at least one expansion term and a two-point grid".into(),
            ));
        }
        if !self.noise_scale.is_finite() || self.noise_scale < 0.0 {
            return Err(Error::InvalidConfig("noise scale must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Outcome of a completed replication.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub rho_hat: f64,
    pub mse_sflm: f64,
    pub mse_flm: f64,
    /// Truncation level picked in this replication.
    pub m: usize,
}

/// All per-replication outcomes, failures kept separately.
#[derive(Debug, Clone)]
pub struct McRun {
    pub records: Vec<RepRecord>,
    pub failures: Vec<(usize, String)>,
}

/// Summary in the style of a bias / MSE table row.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct McSummary {
    pub rho_bias_mean: f64,
    pub rho_sd: f64,
    pub mse_sflm_mean: f64,
    pub mse_sflm_sd: f64,
    pub mse_flm_mean: f64,
    pub mse_flm_sd: f64,
    pub reps_completed: usize,
    pub reps_failed: usize,
}

/// Detailed output of a single replication, for data export.
#[derive(Debug, Clone)]
pub struct RepDetail {
    pub record: RepRecord,
    pub predictors: FunctionalDataset,
    pub response: DVector<f64>,
    pub beta_true: Vec<f64>,
    pub sflm: SflmFit,
    pub flm: SflmFit,
}

/// Curves x_i(t) = sum_j a_j Z_ij phi_j(t) with a_j = (-1)^{j+1} j^{-gamma/2},
/// Z_ij uniform on [-sqrt(3), sqrt(3)], and phi_j(t) = sqrt(2) cos(j pi t).
pub fn generate_predictors(
    n: usize,
    gamma: f64,
    n_terms: usize,
    grid: &SampleGrid,
    seed: u64,
) -> FunctionalDataset {
    let p = grid.len();
    let sqrt3 = 3.0_f64.sqrt();
    let mut phi = DMatrix::zeros(n_terms, p);
    for j in 1..=n_terms {
        for (t_idx, &t) in grid.points().iter().enumerate() {
            phi[(j - 1, t_idx)] =
                std::f64::consts::SQRT_2 * (j as f64 * std::f64::consts::PI * t).cos();
        }
    }
    let coeff: Vec<f64> = (1..=n_terms)
        .map(|j| {
            let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
            sign * (j as f64).powf(-gamma / 2.0)
        })
        .collect();

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut values = DMatrix::zeros(n, p);
    for i in 0..n {
        for j in 0..n_terms {
            // Uniform on [-sqrt(3), sqrt(3)] via affine transform of U[0, 1).
            let z = (2.0 * rng.random::<f64>() - 1.0) * sqrt3;
            let scale = coeff[j] * z;
            for t_idx in 0..p {
                values[(i, t_idx)] += scale * phi[(j, t_idx)];
            }
        }
    }
    FunctionalDataset::new(grid.clone(), values).expect("generated curves are finite")
}

/// Slope function beta(t) = sum_j b_j phi_j(t) with b_1 = 0.3 and
/// b_j = 4 (-1)^{j+1} j^{-2} for j >= 2.
pub fn true_beta(grid: &SampleGrid, n_terms: usize) -> Vec<f64> {
    let mut beta = vec![0.0; grid.len()];
    for j in 1..=n_terms {
        let b = beta_coefficient(j);
        for (t_idx, &t) in grid.points().iter().enumerate() {
            beta[t_idx] +=
                b * std::f64::consts::SQRT_2 * (j as f64 * std::f64::consts::PI * t).cos();
        }
    }
    beta
}

/// Expansion coefficient of the true slope function.
pub fn beta_coefficient(j: usize) -> f64 {
    if j == 1 {
        0.3
    } else {
        let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
        4.0 * sign / (j as f64 * j as f64)
    }
}

/// Draws y from the reduced form (I - rho W) y = integral(x beta) + scale * eps.
pub fn generate_response(
    x: &FunctionalDataset,
    beta: &[f64],
    rho: f64,
    w: &SpatialWeights,
    noise_scale: f64,
    seed: u64,
) -> Result<DVector<f64>> {
    let n = x.n_units();
    if beta.len() != x.grid().len() {
        return Err(Error::GridMismatch(
            "slope curve length does not match the predictor grid".into(),
        ));
    }
    if w.n() != n {
        return Err(Error::SizeMismatch(format!(
            "weights have {} units, predictors have {n}",
            w.n()
        )));
    }
    let weights = x.grid().quadrature_weights();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut rhs = DVector::zeros(n);
    for i in 0..n {
        let mut u = 0.0;
        for (t_idx, (&wq, &b)) in weights.iter().zip(beta).enumerate() {
            u += wq * x.values()[(i, t_idx)] * b;
        }
        let eps: f64 = StandardNormal.sample(&mut rng);
        rhs[i] = u + noise_scale * eps;
    }
    if rho == 0.0 {
        return Ok(rhs);
    }
    let a = DMatrix::identity(n, n) - rho * w.matrix();
    a.lu().solve(&rhs).ok_or(Error::SingularSystem)
}

/// Mean squared pointwise difference between two curves on a shared grid.
pub fn mse_beta(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    if estimate.len() != truth.len() || estimate.is_empty() {
        return Err(Error::GridMismatch(format!(
            "curves of length {} and {} cannot be compared",
            estimate.len(),
            truth.len()
        )));
    }
    Ok(estimate
        .iter()
        .zip(truth)
        .map(|(&e, &t)| (e - t) * (e - t))
        .sum::<f64>()
        / estimate.len() as f64)
}

/// Independent per-replication seeds derived from (seed, replication).
fn rep_seeds(seed: u64, rep: usize) -> (u64, u64) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64 + 1);
    (rng.next_u64(), rng.next_u64())
}

fn run_one(
    cfg: &SimConfig,
    grid: &SampleGrid,
    beta: &[f64],
    w: &SpatialWeights,
    rep: usize,
) -> Result<(RepRecord, FunctionalDataset, DVector<f64>, SflmFit, SflmFit)> {
    let (seed_x, seed_y) = rep_seeds(cfg.seed, rep);
    let x = generate_predictors(cfg.n(), cfg.gamma, cfg.n_terms, grid, seed_x);
    let y = generate_response(&x, beta, cfg.rho_true, w, cfg.noise_scale, seed_y)?;
    let basis = fit_fpca(&x)?;
    let m = select_truncation_pve(basis.eigenvalues(), cfg.pve)?;
    let sflm = fit_sflm(&y, &basis, w, m, true)?;
    let flm = fit_flm(&y, &basis, m, true)?;
    let record = RepRecord {
        rep,
        rho_hat: sflm.rho_hat,
        mse_sflm: mse_beta(&sflm.beta_hat, beta)?,
        mse_flm: mse_beta(&flm.beta_hat, beta)?,
        m,
    };
    Ok((record, x, y, sflm, flm))
}

/// Runs every replication, collecting failures instead of aborting.
///
/// Replications use independent seed streams and are aggregated in index
/// order, so the result does not depend on thread count.
pub fn run_replications(cfg: &SimConfig) -> Result<McRun> {
    cfg.validate()?;
    let grid = SampleGrid::uniform(cfg.grid_size)?;
    let beta = true_beta(&grid, cfg.n_terms);
    let w = SpatialWeights::build_rook_grid(cfg.rows, cfg.cols)?.row_normalize();
    w.eigenvalues()?;

    let outcomes: Vec<(usize, Result<RepRecord>)> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| {
            (
                rep,
                run_one(cfg, &grid, &beta, &w, rep).map(|(record, ..)| record),
            )
        })
        .collect();

    let mut records = Vec::with_capacity(cfg.reps);
    let mut failures = Vec::new();
    for (rep, outcome) in outcomes {
        match outcome {
            Ok(record) => records.push(record),
            Err(e) => failures.push((rep, e.to_string())),
        }
    }
    Ok(McRun { records, failures })
}

/// Re-runs one replication and keeps the generated data and both fits.
pub fn replicate_detail(cfg: &SimConfig, rep: usize) -> Result<RepDetail> {
    cfg.validate()?;
    if rep >= cfg.reps {
        return Err(Error::InvalidConfig(format!(
            "replication {rep} outside 0..{}",
            cfg.reps
        )));
    }
    let grid = SampleGrid::uniform(cfg.grid_size)?;
    let beta = true_beta(&grid, cfg.n_terms);
    let w = SpatialWeights::build_rook_grid(cfg.rows, cfg.cols)?.row_normalize();
    let (record, predictors, response, sflm, flm) = run_one(cfg, &grid, &beta, &w, rep)?;
    Ok(RepDetail {
        record,
        predictors,
        response,
        beta_true: beta,
        sflm,
        flm,
    })
}

fn mean_and_sd(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

/// Aggregates replication records into a table-row summary.
pub fn summarize(cfg: &SimConfig, run: &McRun) -> McSummary {
    let (rho_mean, rho_sd) = mean_and_sd(run.records.iter().map(|r| r.rho_hat));
    let (mse1_mean, mse1_sd) = mean_and_sd(run.records.iter().map(|r| r.mse_sflm));
    let (mse2_mean, mse2_sd) = mean_and_sd(run.records.iter().map(|r| r.mse_flm));
    McSummary {
        rho_bias_mean: rho_mean - cfg.rho_true,
        rho_sd,
        mse_sflm_mean: mse1_mean,
        mse_sflm_sd: mse1_sd,
        mse_flm_mean: mse2_mean,
        mse_flm_sd: mse2_sd,
        reps_completed: run.records.len(),
        reps_failed: run.failures.len(),
    }
}

/// Full Monte Carlo cell: replications plus the summary row.
pub fn run_monte_carlo(cfg: &SimConfig) -> Result<McSummary> {
    let run = run_replications(cfg)?;
    Ok(summarize(cfg, &run))
}
