//! Discretely observed curves on a shared grid.
//!
//! Provides the evaluation grid, the curve matrix, Nadaraya-Watson
//! smoothing of irregular observations with the Epanechnikov kernel, and
//! trapezoidal inner products used by every downstream module.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Evaluation points t_1 < t_2 < ... < t_p inside the unit interval.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrid {
    points: Vec<f64>,
}

impl SampleGrid {
    /// Builds a grid from strictly increasing points in [0, 1].
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidConfig("grid needs at least one point".into()));
        }
        for (i, &t) in points.iter().enumerate() {
            if !t.is_finite() || !(0.0..=1.0).contains(&t) {
                return Err(Error::InvalidConfig(format!(
                    "grid point {t} at index {i} outside [0, 1]"
                )));
            }
            if i > 0 && points[i - 1] >= t {
                return Err(Error::InvalidConfig(format!(
                    "grid points must be strictly increasing (index {i})"
                )));
            }
        }
        Ok(Self { points })
    }

    /// `p` equispaced points spanning [0, 1], endpoints included.
    pub fn uniform(p: usize) -> Result<Self> {
        if p < 2 {
            return Err(Error::InvalidConfig(
                "uniform grid needs at least two points".into(),
            ));
        }
        let step = 1.0 / (p - 1) as f64;
        Self::new((0..p).map(|i| i as f64 * step).collect())
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Trapezoidal-rule quadrature weights for this grid.
    ///
    /// A single-point grid carries zero weight (degenerate domain).
    pub fn quadrature_weights(&self) -> Vec<f64> {
        let p = self.points.len();
        if p == 1 {
            return vec![0.0];
        }
        let t = &self.points;
        let mut w = vec![0.0; p];
        w[0] = 0.5 * (t[1] - t[0]);
        w[p - 1] = 0.5 * (t[p - 1] - t[p - 2]);
        for i in 1..p - 1 {
            w[i] = 0.5 * (t[i + 1] - t[i - 1]);
        }
        w
    }
}

/// Trapezoidal approximation of the inner product of two curves sampled
/// on the same grid.
pub fn inner_product(f: &[f64], g: &[f64], grid: &SampleGrid) -> Result<f64> {
    if f.len() != grid.len() || g.len() != grid.len() {
        return Err(Error::GridMismatch(format!(
            "curve lengths {} and {} do not match grid size {}",
            f.len(),
            g.len(),
            grid.len()
        )));
    }
    let w = grid.quadrature_weights();
    Ok(f.iter()
        .zip(g)
        .zip(&w)
        .map(|((&fi, &gi), &wi)| wi * fi * gi)
        .sum())
}

/// `n` curves observed on a common grid; row i is the curve of unit i.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalDataset {
    grid: SampleGrid,
    values: DMatrix<f64>,
}

impl FunctionalDataset {
    pub fn new(grid: SampleGrid, values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 {
            return Err(Error::InvalidConfig("dataset needs at least one curve".into()));
        }
        if values.ncols() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "curves have {} columns but the grid has {} points",
                values.ncols(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("curve values must be finite".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn from_rows(grid: SampleGrid, rows: &[Vec<f64>]) -> Result<Self> {
        let p = grid.len();
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::GridMismatch(
                "all rows must have one value per grid point".into(),
            ));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(grid, DMatrix::from_row_slice(rows.len(), p, &flat))
    }

    pub fn n_units(&self) -> usize {
        self.values.nrows()
    }

    pub fn grid(&self) -> &SampleGrid {
        &self.grid
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn curve(&self, unit: usize) -> Vec<f64> {
        self.values.row(unit).iter().copied().collect()
    }

    /// Subtracts the pointwise mean curve from every row.
    ///
    /// Returns the centered dataset together with the mean curve.
    pub fn center(&self) -> (FunctionalDataset, Vec<f64>) {
        let n = self.n_units();
        let p = self.grid.len();
        let mut mean = vec![0.0; p];
        for j in 0..p {
            mean[j] = self.values.column(j).sum() / n as f64;
        }
        let mut centered = self.values.clone();
        for i in 0..n {
            for j in 0..p {
                centered[(i, j)] -= mean[j];
            }
        }
        (
            FunctionalDataset {
                grid: self.grid.clone(),
                values: centered,
            },
            mean,
        )
    }
}

/// Irregularly observed (time, value) pairs per unit, before smoothing.
#[derive(Debug, Clone)]
pub struct RawObservations {
    units: Vec<Vec<(f64, f64)>>,
}

impl RawObservations {
    pub fn new(units: Vec<Vec<(f64, f64)>>) -> Result<Self> {
        if units.is_empty() {
            return Err(Error::InvalidConfig("need at least one unit".into()));
        }
        for (i, obs) in units.iter().enumerate() {
            if obs.is_empty() {
                return Err(Error::InvalidConfig(format!(
                    "unit {i} has no observations"
                )));
            }
            for &(t, v) in obs {
                if !t.is_finite() || !(0.0..=1.0).contains(&t) {
                    return Err(Error::InvalidConfig(format!(
                        "unit {i}: observation time {t} outside [0, 1]"
                    )));
                }
                if !v.is_finite() {
                    return Err(Error::InvalidConfig(format!(
                        "unit {i}: non-finite observation value"
                    )));
                }
            }
        }
        Ok(Self { units })
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    pub fn unit(&self, i: usize) -> &[(f64, f64)] {
        &self.units[i]
    }
}

/// Epanechnikov kernel K(u) = 0.75 (1 - u^2) on |u| <= 1.
fn epanechnikov(u: f64) -> f64 {
    if u.abs() <= 1.0 {
        0.75 * (1.0 - u * u)
    } else {
        0.0
    }
}

/// Nadaraya-Watson smoothing of raw observations onto a common grid.
///
/// Each grid value is the kernel-weighted average of the unit's
/// observations within one bandwidth of the grid point.
pub fn smooth_curves(
    raw: &RawObservations,
    grid: &SampleGrid,
    bandwidth: f64,
) -> Result<FunctionalDataset> {
    if !(bandwidth > 0.0) {
        return Err(Error::BadBandwidth(bandwidth));
    }
    let n = raw.n_units();
    let p = grid.len();
    let mut values = DMatrix::zeros(n, p);
    for i in 0..n {
        for (j, &t) in grid.points().iter().enumerate() {
            let mut num = 0.0;
            let mut den = 0.0;
            for &(tk, vk) in raw.unit(i) {
                let w = epanechnikov((t - tk) / bandwidth);
                num += w * vk;
                den += w;
            }
            if den <= 0.0 {
                return Err(Error::EmptyWindow { unit: i, t });
            }
            values[(i, j)] = num / den;
        }
    }
    FunctionalDataset::new(grid.clone(), values)
}
