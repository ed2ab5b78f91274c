//! Bayesian ranking of candidate truncated models.
//!
//! Candidates combine a truncation level with a spatial-weight
//! specification. Coefficients carry a g-prior conditional on the error
//! variance, the variance an inverse-gamma prior, and the spatial parameter
//! a symmetric Beta-type prior. The coefficient/variance integral is closed
//! form; the remaining one-dimensional integral over the spatial parameter
//! is evaluated by Simpson's rule, and candidates are compared through
//! posterior probabilities under equal prior model weights.

use nalgebra::{DMatrix, DVector, SVD};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::estimator::RHO_MAX;
use crate::spatial_weights::{log_det_factor, SpatialWeights};

/// Prior hyperparameters.
///
/// `a`, `b` shape the inverse-gamma prior on the error variance (the 0, 0
/// limit drops to the Jeffreys-type prior), `g` scales the coefficient
/// precision, and `d` indexes the Beta-type prior on the spatial parameter.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Hyperparams {
    pub a: f64,
    pub b: f64,
    pub g: f64,
    pub d: f64,
}

impl Hyperparams {
    /// The reference setting a = 0, b = 0, g = 1/n, d = 1.01.
    pub fn defaults(n: usize) -> Self {
        Self {
            a: 0.0,
            b: 0.0,
            g: 1.0 / n as f64,
            d: 1.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a >= 0.0 && self.b >= 0.0) {
            return Err(Error::InvalidConfig(
                "inverse-gamma hyperparameters must be nonnegative".into(),
            ));
        }
        if !(self.g > 0.0) {
            return Err(Error::InvalidConfig("g must be positive".into()));
        }
        if !(self.d > 1.0) {
            return Err(Error::InvalidConfig("d must exceed 1".into()));
        }
        Ok(())
    }
}

/// One candidate: a truncation level and a weight-matrix identifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateModel {
    pub m: usize,
    pub weights_id: String,
}

/// Ranked candidate with its evidence summaries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateScore {
    pub model: CandidateModel,
    pub log_marginal: f64,
    /// Posterior probability ratio against the reference candidate.
    pub ratio: f64,
    /// Posterior probability under equal prior model weights.
    pub probability: f64,
}

/// Result of direct enumeration over the candidate grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionResult {
    pub candidates: Vec<CandidateScore>,
    /// Index of the highest-evidence candidate.
    pub best: usize,
    /// Index of the reference candidate (ratio exactly 1).
    pub reference: usize,
}

impl SelectionResult {
    pub fn best_model(&self) -> &CandidateModel {
        &self.candidates[self.best].model
    }
}

/// Default number of Simpson nodes for the integral over the spatial
/// parameter.
pub const DEFAULT_RHO_POINTS: usize = 201;

/// Centers each column and scales it to unit sample variance.
fn standardize_columns(x: &mut DMatrix<f64>) -> Result<()> {
    let n = x.nrows();
    for j in 0..x.ncols() {
        let mean = x.column(j).sum() / n as f64;
        let mut ss = 0.0;
        for i in 0..n {
            x[(i, j)] -= mean;
            ss += x[(i, j)] * x[(i, j)];
        }
        let sd = (ss / (n - 1) as f64).sqrt();
        if !(sd > 0.0) {
            return Err(Error::RankDeficientDesign(0.0));
        }
        for i in 0..n {
            x[(i, j)] /= sd;
        }
    }
    Ok(())
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Log density of the Beta-type prior on (-1, 1).
fn ln_rho_prior(rho: f64, d: f64) -> f64 {
    -ln_beta(d, d) + (d - 1.0) * ((1.0 + rho).ln() + (1.0 - rho).ln())
        - (2.0 * d - 1.0) * std::f64::consts::LN_2
}

/// Log marginal likelihood with the default Simpson resolution.
pub fn log_marginal_likelihood(
    y: &DVector<f64>,
    scores: &DMatrix<f64>,
    w: &SpatialWeights,
    m: usize,
    hyper: &Hyperparams,
) -> Result<f64> {
    log_marginal_likelihood_with_points(y, scores, w, m, hyper, DEFAULT_RHO_POINTS)
}

/// Log marginal likelihood with an explicit (odd) number of Simpson nodes.
pub fn log_marginal_likelihood_with_points(
    y: &DVector<f64>,
    scores: &DMatrix<f64>,
    w: &SpatialWeights,
    m: usize,
    hyper: &Hyperparams,
    rho_points: usize,
) -> Result<f64> {
    hyper.validate()?;
    let d = hyper.d;
    log_marginal_with_prior(y, scores, w, m, hyper, rho_points, |rho| {
        ln_rho_prior(rho, d)
    })
}

/// Shared marginal-likelihood core with a pluggable log prior density on
/// the spatial parameter. Used directly by tests that compare priors.
pub(crate) fn log_marginal_with_prior(
    y: &DVector<f64>,
    scores: &DMatrix<f64>,
    w: &SpatialWeights,
    m: usize,
    hyper: &Hyperparams,
    rho_points: usize,
    ln_prior: impl Fn(f64) -> f64,
) -> Result<f64> {
    let n = y.len();
    if m == 0 || m > scores.ncols() {
        return Err(Error::SizeMismatch(format!(
            "truncation level {m} outside the available 1..={} score columns",
            scores.ncols()
        )));
    }
    if scores.nrows() != n || w.n() != n {
        return Err(Error::SizeMismatch(
            "response, scores, and weights disagree on the unit count".into(),
        ));
    }
    if n < m + 2 {
        return Err(Error::InvalidConfig(format!(
            "need more observations ({n}) than coefficients ({m}) plus intercept"
        )));
    }
    if rho_points < 3 || rho_points % 2 == 0 {
        return Err(Error::InvalidConfig(
            "Simpson integration needs an odd number of nodes >= 3".into(),
        ));
    }

    // Scaled design: leading m score columns, centered and standardized.
    let mut x = DMatrix::zeros(n, m);
    for j in 0..m {
        for i in 0..n {
            x[(i, j)] = scores[(i, j)];
        }
    }
    standardize_columns(&mut x)?;
    let svd = SVD::new(x, true, false);
    let s = &svd.singular_values;
    let smax = s.iter().copied().fold(0.0_f64, f64::max);
    let smin = s.iter().copied().fold(f64::INFINITY, f64::min);
    if !(smin > 1e-10 * smax) {
        return Err(Error::RankDeficientDesign(if smax > 0.0 {
            smin / smax
        } else {
            0.0
        }));
    }
    let u = svd.u.expect("u requested");

    // The flat-prior intercept integrates out against centered data, so the
    // quadratic form only involves centered y and centered W y.
    let nf = n as f64;
    let ybar = y.sum() / nf;
    let yc = y.map(|v| v - ybar);
    let wy = w.lag(y);
    let wybar = wy.sum() / nf;
    let wyc = wy.map(|v| v - wybar);

    let a_vec = u.transpose() * &yc;
    let b_vec = u.transpose() * &wyc;
    let yy = yc.dot(&yc);
    let ywy = yc.dot(&wyc);
    let wywy = wyc.dot(&wyc);
    let aa = a_vec.dot(&a_vec);
    let ab = a_vec.dot(&b_vec);
    let bb = b_vec.dot(&b_vec);

    let shrink = 1.0 / (1.0 + hyper.g);
    let residual_form = |rho: f64| -> f64 {
        (yy - 2.0 * rho * ywy + rho * rho * wywy)
            - shrink * (aa - 2.0 * rho * ab + rho * rho * bb)
    };

    let eigs = w.eigenvalues()?;
    let shape = 0.5 * (nf - 1.0) + hyper.a;

    // Model-independent pieces are kept so absolute values are meaningful;
    // the improper a = b = 0 limit drops the inverse-gamma normalizer.
    let mut constant = -0.5 * (nf - 1.0) * (2.0 * std::f64::consts::PI).ln() - 0.5 * nf.ln()
        + 0.5 * m as f64 * (hyper.g.ln() - (1.0 + hyper.g).ln())
        + ln_gamma(shape);
    if hyper.a > 0.0 && hyper.b > 0.0 {
        constant += hyper.a * hyper.b.ln() - ln_gamma(hyper.a);
    }

    let h = RHO_MAX / (rho_points - 1) as f64;
    let mut log_terms = Vec::with_capacity(rho_points);
    for i in 0..rho_points {
        let rho = i as f64 * h;
        let srho = residual_form(rho);
        let logdet = log_det_factor(eigs, rho)?;
        let lp = logdet - shape * (0.5 * srho + hyper.b).ln() + ln_prior(rho);
        if !lp.is_finite() {
            return Err(Error::NonfiniteIntegrand(rho));
        }
        let simpson = if i == 0 || i == rho_points - 1 {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        log_terms.push(lp + (simpson * h / 3.0).ln());
    }
    let max = log_terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = log_terms.iter().map(|&t| (t - max).exp()).sum();
    Ok(constant + max + sum.ln())
}

/// Ranks every (truncation level, weight matrix) pair by its posterior
/// model probability, reporting ratios against a reference candidate.
pub fn enumerate_and_rank(
    y: &DVector<f64>,
    scores: &DMatrix<f64>,
    candidate_ms: &[usize],
    candidate_weights: &[(String, SpatialWeights)],
    hyper: &Hyperparams,
    reference: &CandidateModel,
) -> Result<SelectionResult> {
    if candidate_ms.is_empty() || candidate_weights.is_empty() {
        return Err(Error::InvalidConfig("no candidates to rank".into()));
    }
    let mut models = Vec::new();
    let mut log_marginals = Vec::new();
    for &m in candidate_ms {
        for (id, w) in candidate_weights {
            models.push(CandidateModel {
                m,
                weights_id: id.clone(),
            });
            log_marginals.push(log_marginal_likelihood(y, scores, w, m, hyper)?);
        }
    }
    let reference_idx = models
        .iter()
        .position(|c| c == reference)
        .ok_or_else(|| Error::ReferenceNotFound {
            m: reference.m,
            weights_id: reference.weights_id.clone(),
        })?;

    let probabilities = probabilities_from_log(&log_marginals);
    let ref_lml = log_marginals[reference_idx];
    let best = log_marginals
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
        .map(|(i, _)| i)
        .unwrap_or(0);

    let candidates = models
        .into_iter()
        .zip(log_marginals.iter())
        .zip(probabilities)
        .map(|((model, &lml), probability)| CandidateScore {
            model,
            log_marginal: lml,
            ratio: (lml - ref_lml).exp(),
            probability,
        })
        .collect();

    Ok(SelectionResult {
        candidates,
        best,
        reference: reference_idx,
    })
}

/// Softmax of log marginals: posterior model probabilities under equal
/// prior weights.
fn probabilities_from_log(log_marginals: &[f64]) -> Vec<f64> {
    let max = log_marginals
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let unnorm: Vec<f64> = log_marginals.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = unnorm.iter().sum();
    unnorm.into_iter().map(|v| v / total).collect()
}
