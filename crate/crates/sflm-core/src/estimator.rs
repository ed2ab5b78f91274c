//! Profile maximum likelihood for the truncated spatial functional linear
//! model.
//!
//! With the functional predictor reduced to principal component scores, the
//! model is y = rho W y + Z delta + eps. Given rho, delta and sigma^2 have
//! closed forms, leaving a one-dimensional concentrated log-likelihood in
//! rho that is maximized by a grid scan plus golden-section refinement. The
//! slope function is rebuilt from the fitted score coefficients, and the
//! classical functional linear model is available as the rho = 0 special
//! case.

use nalgebra::{DMatrix, DVector, SVD};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::fpca::{compute_scores, FpcaBasis};
use crate::functional_data::FunctionalDataset;
use crate::spatial_weights::{log_det_factor, SpatialWeights};

/// Upper end of the admissible autoregressive range [0, 1).
pub const RHO_MAX: f64 = 1.0 - 1e-6;

/// Number of coarse scan points used to bracket the profile maximum.
const COARSE_POINTS: usize = 200;

/// Width at which golden-section refinement stops.
const GOLDEN_TOL: f64 = 1e-8;

/// Finite-difference step for the curvature of the profile likelihood.
const HESSIAN_STEP: f64 = 1e-5;

/// Design matrix Z = [intercept | leading score columns] with a cached
/// singular value decomposition for stable least squares.
#[derive(Debug, Clone)]
pub struct TruncatedDesign {
    z: DMatrix<f64>,
    m: usize,
    intercept: bool,
    u: DMatrix<f64>,
    v_t: DMatrix<f64>,
    singular_values: DVector<f64>,
}

impl TruncatedDesign {
    /// Builds the design from the first `m` columns of a score matrix.
    pub fn from_scores(scores: &DMatrix<f64>, m: usize, intercept: bool) -> Result<Self> {
        if m > scores.ncols() {
            return Err(Error::SizeMismatch(format!(
                "truncation level {m} exceeds the {} available score columns",
                scores.ncols()
            )));
        }
        let n = scores.nrows();
        let k = m + usize::from(intercept);
        if k == 0 {
            return Err(Error::InvalidConfig(
                "design needs an intercept or at least one score column".into(),
            ));
        }
        if n <= k {
            return Err(Error::InvalidConfig(format!(
                "need more observations ({n}) than design columns ({k})"
            )));
        }
        let mut z = DMatrix::zeros(n, k);
        let offset = usize::from(intercept);
        if intercept {
            for i in 0..n {
                z[(i, 0)] = 1.0;
            }
        }
        for j in 0..m {
            for i in 0..n {
                z[(i, j + offset)] = scores[(i, j)];
            }
        }
        Self::new(z, m, intercept)
    }

    fn new(z: DMatrix<f64>, m: usize, intercept: bool) -> Result<Self> {
        let svd = SVD::new(z.clone(), true, true);
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
        Ok(Self {
            z,
            m,
            intercept,
            u: svd.u.expect("u requested"),
            v_t: svd.v_t.expect("v_t requested"),
            singular_values: svd.singular_values,
        })
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn has_intercept(&self) -> bool {
        self.intercept
    }

    fn n(&self) -> usize {
        self.z.nrows()
    }

    /// Least squares solution via the cached SVD.
    fn least_squares(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let mut c = self.u.transpose() * rhs;
        for i in 0..c.len() {
            c[i] /= self.singular_values[i];
        }
        self.v_t.transpose() * c
    }
}

/// Maximum-likelihood estimate of the regression coefficients at a given
/// spatial parameter: the least squares fit of (y - rho W y) on Z.
pub fn delta_hat(
    rho: f64,
    design: &TruncatedDesign,
    w: &SpatialWeights,
    y: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_dims(design, Some(w), y)?;
    let ys = y - rho * w.lag(y);
    Ok(design.least_squares(&ys))
}

/// Mean squared residual at the profiled coefficients for a given rho.
pub fn sigma2_hat(
    rho: f64,
    design: &TruncatedDesign,
    w: &SpatialWeights,
    y: &DVector<f64>,
) -> Result<f64> {
    check_dims(design, Some(w), y)?;
    let ys = y - rho * w.lag(y);
    let delta = design.least_squares(&ys);
    let e = &ys - design.z() * delta;
    Ok(e.dot(&e) / design.n() as f64)
}

/// Concentrated log-likelihood -(n/2) ln sigma2(rho) + ln|I - rho W|.
pub fn profile_loglik(
    rho: f64,
    design: &TruncatedDesign,
    w: &SpatialWeights,
    y: &DVector<f64>,
) -> Result<f64> {
    let s2 = sigma2_hat(rho, design, w, y)?;
    if s2 <= 1e-14 {
        return Err(Error::DegenerateVariance(s2));
    }
    let eigs = w.eigenvalues()?;
    Ok(-0.5 * design.n() as f64 * s2.ln() + log_det_factor(eigs, rho)?)
}

fn check_dims(
    design: &TruncatedDesign,
    w: Option<&SpatialWeights>,
    y: &DVector<f64>,
) -> Result<()> {
    if y.len() != design.n() {
        return Err(Error::SizeMismatch(format!(
            "response has {} entries, design has {} rows",
            y.len(),
            design.n()
        )));
    }
    if let Some(w) = w {
        if w.n() != design.n() {
            return Err(Error::SizeMismatch(format!(
                "weights have {} units, design has {} rows",
                w.n(),
                design.n()
            )));
        }
    }
    Ok(())
}

/// Fitted spatial functional linear model.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SflmFit {
    pub rho_hat: f64,
    pub alpha_hat: f64,
    pub b_hat: Vec<f64>,
    pub sigma2_hat: f64,
    /// Concentrated log-likelihood at the optimum.
    pub loglik: f64,
    pub m: usize,
    pub grid: Vec<f64>,
    /// Slope function rebuilt from the fitted score coefficients.
    pub beta_hat: Vec<f64>,
    /// False when the optimizer stopped on the boundary of [0, 1).
    pub converged: bool,
    /// Wald standard error of rho from the profile curvature, when defined.
    #[serde(default)]
    pub rho_se: Option<f64>,
    /// Two-sided Wald p-value for rho = 0, when a standard error exists.
    #[serde(default)]
    pub rho_p_value: Option<f64>,
    #[serde(skip)]
    pub residuals: Vec<f64>,
}

/// Scalar profile of the concentrated likelihood, precomputed so one
/// evaluation costs O(n) regardless of the design width.
struct ProfileCurve<'a> {
    n: f64,
    eigs: &'a [nalgebra::Complex<f64>],
    // sigma2(rho) = c0 - 2 rho c1 + rho^2 c2
    c0: f64,
    c1: f64,
    c2: f64,
}

impl ProfileCurve<'_> {
    fn sigma2(&self, rho: f64) -> f64 {
        self.c0 - 2.0 * rho * self.c1 + rho * rho * self.c2
    }

    fn loglik(&self, rho: f64) -> Result<f64> {
        let s2 = self.sigma2(rho);
        if s2 <= 1e-14 {
            return Err(Error::DegenerateVariance(s2));
        }
        Ok(-0.5 * self.n * s2.ln() + log_det_factor(self.eigs, rho)?)
    }
}

fn golden_section_max(
    f: &impl Fn(f64) -> Result<f64>,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
) -> Result<f64> {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = hi - INV_PHI * (hi - lo);
    let mut d = lo + INV_PHI * (hi - lo);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while hi - lo > tol {
        if fc >= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - INV_PHI * (hi - lo);
            fc = f(c)?;
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + INV_PHI * (hi - lo);
            fd = f(d)?;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Standard normal upper tail via the complementary error function.
fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Fits the truncated model by profile maximum likelihood.
///
/// The spatial parameter is located by a coarse scan over [0, 1) followed
/// by golden-section refinement of the bracketing interval; the remaining
/// parameters come from their closed forms at the optimum. A maximum on
/// the boundary of the range is reported with `converged = false`.
pub fn fit_sflm(
    y: &DVector<f64>,
    basis: &FpcaBasis,
    w: &SpatialWeights,
    m: usize,
    intercept: bool,
) -> Result<SflmFit> {
    let design = TruncatedDesign::from_scores(basis.scores(), m, intercept)?;
    check_dims(&design, Some(w), y)?;
    let eigs = w.eigenvalues()?;
    let n = design.n() as f64;

    let wy = w.lag(y);
    let uty = design.u.transpose() * y;
    let utwy = design.u.transpose() * &wy;
    let curve = ProfileCurve {
        n,
        eigs,
        c0: (y.dot(y) - uty.dot(&uty)) / n,
        c1: (y.dot(&wy) - uty.dot(&utwy)) / n,
        c2: (wy.dot(&wy) - utwy.dot(&utwy)) / n,
    };

    // Coarse scan brackets the maximum; golden section sharpens it.
    let step = RHO_MAX / (COARSE_POINTS - 1) as f64;
    let mut best_idx = 0;
    let mut best_val = f64::NEG_INFINITY;
    for i in 0..COARSE_POINTS {
        let val = curve.loglik(i as f64 * step)?;
        if val > best_val {
            best_val = val;
            best_idx = i;
        }
    }
    let lo = if best_idx == 0 { 0.0 } else { (best_idx - 1) as f64 * step };
    let hi = ((best_idx + 1).min(COARSE_POINTS - 1)) as f64 * step;
    let rho_hat = golden_section_max(&|r| curve.loglik(r), lo, hi, GOLDEN_TOL)?;
    let converged = rho_hat > 1e-6 && rho_hat < RHO_MAX - 1e-6;

    let (rho_se, rho_p_value) = profile_wald(&curve, rho_hat);
    finish_fit(y, basis, &design, Some(w), rho_hat, converged, rho_se, rho_p_value)
}

/// Curvature-based Wald standard error and two-sided p-value for rho.
fn profile_wald(curve: &ProfileCurve<'_>, rho_hat: f64) -> (Option<f64>, Option<f64>) {
    let h = HESSIAN_STEP;
    if rho_hat - h <= 0.0 || rho_hat + h >= RHO_MAX {
        return (None, None);
    }
    let l = |r: f64| curve.loglik(r);
    match (l(rho_hat - h), l(rho_hat), l(rho_hat + h)) {
        (Ok(lm), Ok(l0), Ok(lp)) => {
            let d2 = (lp - 2.0 * l0 + lm) / (h * h);
            if d2 < 0.0 {
                let se = (-1.0 / d2).sqrt();
                let p = 2.0 * normal_sf(rho_hat.abs() / se);
                (Some(se), Some(p))
            } else {
                (None, None)
            }
        }
        _ => (None, None),
    }
}

/// Classical functional linear model: ordinary least squares of y on Z,
/// equal to the spatial fit with rho pinned to zero.
pub fn fit_flm(
    y: &DVector<f64>,
    basis: &FpcaBasis,
    m: usize,
    intercept: bool,
) -> Result<SflmFit> {
    let design = TruncatedDesign::from_scores(basis.scores(), m, intercept)?;
    check_dims(&design, None, y)?;
    finish_fit(y, basis, &design, None, 0.0, true, None, None)
}

#[allow(clippy::too_many_arguments)]
fn finish_fit(
    y: &DVector<f64>,
    basis: &FpcaBasis,
    design: &TruncatedDesign,
    w: Option<&SpatialWeights>,
    rho_hat: f64,
    converged: bool,
    rho_se: Option<f64>,
    rho_p_value: Option<f64>,
) -> Result<SflmFit> {
    let n = design.n() as f64;
    let ys = match w {
        Some(w) if rho_hat != 0.0 => y - rho_hat * w.lag(y),
        _ => y.clone(),
    };
    let delta = design.least_squares(&ys);
    let e = &ys - design.z() * &delta;
    let sigma2 = e.dot(&e) / n;
    if sigma2 <= 1e-14 {
        return Err(Error::DegenerateVariance(sigma2));
    }
    let mut loglik = -0.5 * n * sigma2.ln();
    if let Some(w) = w {
        loglik += log_det_factor(w.eigenvalues()?, rho_hat)?;
    }

    let offset = usize::from(design.has_intercept());
    let alpha_hat = if design.has_intercept() { delta[0] } else { 0.0 };
    let b_hat: Vec<f64> = (0..design.m()).map(|j| delta[j + offset]).collect();

    let p = basis.grid().len();
    let mut beta_hat = vec![0.0; p];
    for (j, &b) in b_hat.iter().enumerate() {
        let phi = basis.eigenfunctions().row(j);
        for t in 0..p {
            beta_hat[t] += b * phi[t];
        }
    }

    Ok(SflmFit {
        rho_hat,
        alpha_hat,
        b_hat,
        sigma2_hat: sigma2,
        loglik,
        m: design.m(),
        grid: basis.grid().points().to_vec(),
        beta_hat,
        converged,
        rho_se,
        rho_p_value,
        residuals: e.iter().copied().collect(),
    })
}

/// Reduced-form prediction (I - rho W)^{-1} (alpha + A_new b) for new curves
/// on the training units, scored against the training basis.
pub fn predict(
    fit: &SflmFit,
    new_data: &FunctionalDataset,
    basis: &FpcaBasis,
    w: &SpatialWeights,
) -> Result<DVector<f64>> {
    if new_data.grid().points() != fit.grid.as_slice() {
        return Err(Error::GridMismatch(
            "prediction data grid differs from the training grid".into(),
        ));
    }
    let n = new_data.n_units();
    if n != w.n() {
        return Err(Error::SizeMismatch(format!(
            "prediction data has {n} units, weights have {}",
            w.n()
        )));
    }
    let scores = compute_scores(new_data, basis)?;
    if fit.m > scores.ncols() {
        return Err(Error::SizeMismatch(format!(
            "fit uses {} components but only {} scores are available",
            fit.m,
            scores.ncols()
        )));
    }
    let mut linpred = DVector::from_element(n, fit.alpha_hat);
    for j in 0..fit.m {
        for i in 0..n {
            linpred[i] += scores[(i, j)] * fit.b_hat[j];
        }
    }
    if fit.rho_hat == 0.0 {
        return Ok(linpred);
    }
    let a = DMatrix::identity(n, n) - fit.rho_hat * w.matrix();
    a.lu().solve(&linpred).ok_or(Error::SingularSystem)
}
