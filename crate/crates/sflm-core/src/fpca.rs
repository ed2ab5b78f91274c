//! Functional principal component analysis.
//!
//! Estimates the empirical covariance surface of a curve sample, solves the
//! quadrature-discretized integral eigenproblem, projects curves onto the
//! estimated eigenfunctions, and selects a truncation level from the
//! cumulative share of variance explained.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::functional_data::{FunctionalDataset, SampleGrid};

/// Relative threshold below which an eigenvalue counts as numerically zero.
const EIGENVALUE_RTOL: f64 = 1e-12;

/// Empirical covariance surface evaluated at all grid-point pairs.
#[derive(Debug, Clone)]
pub struct CovarianceSurface {
    grid: SampleGrid,
    values: DMatrix<f64>,
}

impl CovarianceSurface {
    pub fn new(grid: SampleGrid, values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != grid.len() || values.ncols() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "covariance is {}x{} but the grid has {} points",
                values.nrows(),
                values.ncols(),
                grid.len()
            )));
        }
        let asym = (&values - values.transpose()).abs().max();
        if asym > 1e-10 {
            return Err(Error::InvalidConfig(format!(
                "covariance surface asymmetric by {asym:.3e}"
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &SampleGrid {
        &self.grid
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }
}

/// Estimated eigen-system of the covariance operator plus the mean curve
/// and the per-unit principal component scores.
#[derive(Debug, Clone)]
pub struct FpcaBasis {
    grid: SampleGrid,
    /// All grid-resolution eigenvalues, descending, negatives clamped to zero.
    eigenvalues: Vec<f64>,
    /// Row j holds eigenfunction j evaluated on the grid; only the
    /// numerically positive part of the spectrum is retained.
    eigenfunctions: DMatrix<f64>,
    mean: Vec<f64>,
    /// n x m score matrix; empty until scores are attached.
    scores: DMatrix<f64>,
}

impl FpcaBasis {
    /// Low-level constructor for a basis assembled from known components.
    /// Callers are responsible for quadrature-orthonormal eigenfunctions.
    pub fn from_parts(
        grid: SampleGrid,
        eigenvalues: Vec<f64>,
        eigenfunctions: DMatrix<f64>,
        mean: Vec<f64>,
        scores: DMatrix<f64>,
    ) -> Self {
        Self {
            grid,
            eigenvalues,
            eigenfunctions,
            mean,
            scores,
        }
    }

    pub fn grid(&self) -> &SampleGrid {
        &self.grid
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Number of retained components (positive eigenvalues).
    pub fn n_components(&self) -> usize {
        self.eigenfunctions.nrows()
    }

    pub fn eigenfunctions(&self) -> &DMatrix<f64> {
        &self.eigenfunctions
    }

    pub fn eigenfunction(&self, j: usize) -> Vec<f64> {
        self.eigenfunctions.row(j).iter().copied().collect()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn scores(&self) -> &DMatrix<f64> {
        &self.scores
    }

    /// Replaces the mean curve (used when assembling a basis from a
    /// centered decomposition).
    pub fn with_mean(mut self, mean: Vec<f64>) -> Result<Self> {
        if mean.len() != self.grid.len() {
            return Err(Error::GridMismatch(
                "mean curve length does not match the grid".into(),
            ));
        }
        self.mean = mean;
        Ok(self)
    }

    pub fn with_scores(mut self, scores: DMatrix<f64>) -> Result<Self> {
        if scores.ncols() != self.n_components() {
            return Err(Error::SizeMismatch(format!(
                "score matrix has {} columns, basis has {} components",
                scores.ncols(),
                self.n_components()
            )));
        }
        self.scores = scores;
        Ok(self)
    }
}

/// Empirical covariance of a curve sample.
pub fn empirical_covariance(ds: &FunctionalDataset) -> CovarianceSurface {
    let (centered, _) = ds.center();
    let n = ds.n_units() as f64;
    let x = centered.values();
    let mut cov = x.transpose() * x / n;
    // Symmetrize away the last bits of rounding noise.
    let sym = 0.5 * (&cov + cov.transpose());
    cov = sym;
    CovarianceSurface {
        grid: ds.grid().clone(),
        values: cov,
    }
}

/// Solves the quadrature-discretized eigenproblem of a covariance surface.
///
/// The eigenproblem of K·diag(w) is symmetrized as diag(sqrt w)·K·diag(sqrt w),
/// solved with a symmetric solver, and mapped back so that the eigenfunctions
/// are quadrature-orthonormal. The sign of each eigenfunction is fixed by
/// making its largest-magnitude entry positive. The returned basis has a zero
/// mean curve and no scores attached.
pub fn eigen_decompose(cov: &CovarianceSurface) -> Result<FpcaBasis> {
    let p = cov.grid.len();
    let w = cov.grid.quadrature_weights();
    let sqrt_w: Vec<f64> = w.iter().map(|&wi| wi.sqrt()).collect();

    let mut b = cov.values.clone();
    for i in 0..p {
        for j in 0..p {
            b[(i, j)] *= sqrt_w[i] * sqrt_w[j];
        }
    }
    let b = 0.5 * (&b + b.transpose());

    let eig = SymmetricEigen::try_new(b, f64::EPSILON, 0)
        .ok_or_else(|| Error::EigenFailure("symmetric QL iteration did not converge".into()))?;

    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &c| {
        eig.eigenvalues[c]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let eigenvalues: Vec<f64> = order
        .iter()
        .map(|&k| eig.eigenvalues[k].max(0.0))
        .collect();
    let lambda_max = eigenvalues.first().copied().unwrap_or(0.0);
    let tol = lambda_max * EIGENVALUE_RTOL;
    let m_max = eigenvalues.iter().take_while(|&&v| v > tol).count();

    let mut eigenfunctions = DMatrix::zeros(m_max, p);
    for (row, &k) in order.iter().take(m_max).enumerate() {
        let u = eig.eigenvectors.column(k);
        let mut phi: Vec<f64> = (0..p)
            .map(|i| if sqrt_w[i] > 0.0 { u[i] / sqrt_w[i] } else { 0.0 })
            .collect();
        // Deterministic sign: largest-magnitude entry positive.
        let (imax, _) = phi
            .iter()
            .enumerate()
            .fold((0, 0.0_f64), |(bi, bv), (i, &v)| {
                if v.abs() > bv {
                    (i, v.abs())
                } else {
                    (bi, bv)
                }
            });
        if phi[imax] < 0.0 {
            phi.iter_mut().for_each(|v| *v = -*v);
        }
        for (j, &v) in phi.iter().enumerate() {
            eigenfunctions[(row, j)] = v;
        }
    }

    Ok(FpcaBasis {
        grid: cov.grid.clone(),
        eigenvalues,
        eigenfunctions,
        mean: vec![0.0; p],
        scores: DMatrix::zeros(0, m_max),
    })
}

/// Principal component scores of a dataset on an estimated basis.
///
/// Curves are centered with the basis mean before projection, so the same
/// basis centers training and prediction data identically.
pub fn compute_scores(ds: &FunctionalDataset, basis: &FpcaBasis) -> Result<DMatrix<f64>> {
    if ds.grid() != basis.grid() {
        return Err(Error::GridMismatch(
            "dataset and basis use different grids".into(),
        ));
    }
    let n = ds.n_units();
    let p = ds.grid().len();
    let m = basis.n_components();
    let w = ds.grid().quadrature_weights();

    // scores = (X - mean) * diag(w) * Phi'
    let mut centered_w = ds.values().clone();
    for i in 0..n {
        for j in 0..p {
            centered_w[(i, j)] = (centered_w[(i, j)] - basis.mean[j]) * w[j];
        }
    }
    Ok(centered_w * basis.eigenfunctions.transpose().view((0, 0), (p, m)))
}

/// Smallest truncation level whose cumulative eigenvalue share reaches the
/// threshold.
pub fn select_truncation_pve(eigenvalues: &[f64], threshold: f64) -> Result<usize> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "variance threshold {threshold} outside (0, 1]"
        )));
    }
    let total: f64 = eigenvalues.iter().filter(|&&v| v > 0.0).sum();
    if total <= 0.0 {
        return Err(Error::AllZeroSpectrum);
    }
    let mut cum = 0.0;
    for (j, &v) in eigenvalues.iter().enumerate() {
        cum += v.max(0.0);
        if cum / total >= threshold {
            return Ok(j + 1);
        }
    }
    Ok(eigenvalues.len())
}

/// Full FPCA pipeline: center, covariance, eigen-decomposition, scores.
pub fn fit_fpca(ds: &FunctionalDataset) -> Result<FpcaBasis> {
    let (_, mean) = ds.center();
    let cov = empirical_covariance(ds);
    let basis = eigen_decompose(&cov)?.with_mean(mean)?;
    let scores = compute_scores(ds, &basis)?;
    basis.with_scores(scores)
}
