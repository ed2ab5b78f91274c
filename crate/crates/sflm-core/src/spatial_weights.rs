//! Spatial weight matrices.
//!
//! Builds rook-lattice and k-nearest-neighbour inverse-distance weights,
//! row-normalizes them, and caches the complex spectrum of the normalized
//! matrix so log-determinants of (I - rho W) reduce to a sum over
//! eigenvalues.

use nalgebra::{Complex, DMatrix, DVector};
use once_cell::sync::OnceCell;

use crate::error::{Error, Result};

/// Nonnegative zero-diagonal weight matrix over n spatial units.
#[derive(Debug, Clone)]
pub struct SpatialWeights {
    matrix: DMatrix<f64>,
    normalized: bool,
    eigenvalues: OnceCell<Vec<Complex<f64>>>,
}

impl SpatialWeights {
    /// Wraps an explicit weight matrix, validating shape, nonnegativity,
    /// and the zero diagonal.
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
            return Err(Error::SizeMismatch(format!(
                "weight matrix must be square and non-empty, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        for i in 0..matrix.nrows() {
            if matrix[(i, i)] != 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "weight matrix has nonzero diagonal at unit {i}"
                )));
            }
        }
        if matrix.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::InvalidConfig(
                "weights must be finite and nonnegative".into(),
            ));
        }
        Ok(Self {
            matrix,
            normalized: false,
            eigenvalues: OnceCell::new(),
        })
    }

    /// Binary rook-contiguity adjacency on a rows x cols lattice.
    ///
    /// Cells sharing an edge are neighbours: inner cells have four,
    /// border cells three, corner cells two. Not yet normalized.
    pub fn build_rook_grid(rows: usize, cols: usize) -> Result<Self> {
        if rows * cols < 2 {
            return Err(Error::DegenerateGrid { rows, cols });
        }
        let n = rows * cols;
        let mut m = DMatrix::zeros(n, n);
        let idx = |r: usize, c: usize| r * cols + c;
        for r in 0..rows {
            for c in 0..cols {
                if c + 1 < cols {
                    m[(idx(r, c), idx(r, c + 1))] = 1.0;
                    m[(idx(r, c + 1), idx(r, c))] = 1.0;
                }
                if r + 1 < rows {
                    m[(idx(r, c), idx(r + 1, c))] = 1.0;
                    m[(idx(r + 1, c), idx(r, c))] = 1.0;
                }
            }
        }
        Self::from_matrix(m)
    }

    /// Inverse-distance weights over each unit's k nearest neighbours.
    ///
    /// A selected neighbour farther than `cutoff` keeps weight zero, so
    /// remote units may end up with an all-zero row. Distance ties are
    /// broken by the lower unit index. Not yet normalized.
    pub fn build_knn_inverse_distance(
        coords: &[(f64, f64)],
        k: usize,
        cutoff: f64,
    ) -> Result<Self> {
        let n = coords.len();
        if n < 2 || k == 0 || k > n - 1 {
            return Err(Error::BadK {
                k,
                max: n.saturating_sub(1),
            });
        }
        if coords.iter().any(|&(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::InvalidConfig("coordinates must be finite".into()));
        }
        if !(cutoff > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "distance cutoff must be positive, got {cutoff}"
            )));
        }
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            let mut dist: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let dx = coords[i].0 - coords[j].0;
                    let dy = coords[i].1 - coords[j].1;
                    ((dx * dx + dy * dy).sqrt(), j)
                })
                .collect();
            dist.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
            for &(d, j) in dist.iter().take(k) {
                if d == 0.0 {
                    return Err(Error::DuplicateLocation(i.min(j), i.max(j)));
                }
                if d <= cutoff {
                    m[(i, j)] = 1.0 / d;
                }
            }
        }
        Self::from_matrix(m)
    }

    /// Rescales every row with a positive sum to sum to one.
    ///
    /// All-zero rows (isolated units) are preserved. Idempotent.
    pub fn row_normalize(&self) -> SpatialWeights {
        let mut m = self.matrix.clone();
        for i in 0..m.nrows() {
            let s: f64 = m.row(i).sum();
            if s > 0.0 {
                for j in 0..m.ncols() {
                    m[(i, j)] /= s;
                }
            }
        }
        SpatialWeights {
            matrix: m,
            normalized: true,
            eigenvalues: OnceCell::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Indices of units with no neighbours (all-zero rows).
    pub fn zero_weight_rows(&self) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| self.matrix.row(i).sum() == 0.0)
            .collect()
    }

    /// Spatial lag W y.
    pub fn lag(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.matrix * y
    }

    /// Full complex spectrum of the normalized matrix, computed once and
    /// cached on the value.
    pub fn eigenvalues(&self) -> Result<&[Complex<f64>]> {
        if !self.normalized {
            return Err(Error::NotNormalized);
        }
        self.eigenvalues
            .get_or_try_init(|| {
                // Sequential solve: the spectrum must not depend on the
                // caller's thread pool.
                faer::set_global_parallelism(faer::Par::Seq);
                let n = self.n();
                let m = faer::Mat::<f64>::from_fn(n, n, |i, j| self.matrix[(i, j)]);
                let eigs: Vec<faer::c64> = m
                    .eigenvalues()
                    .map_err(|e| Error::EigenFailure(format!("{e:?}")))?;
                let eigs: Vec<Complex<f64>> =
                    eigs.into_iter().map(|e| Complex::new(e.re, e.im)).collect();
                if eigs.iter().any(|e| !e.re.is_finite() || !e.im.is_finite()) {
                    return Err(Error::EigenFailure("non-finite eigenvalue".into()));
                }
                Ok(eigs)
            })
            .map(|v| v.as_slice())
    }
}

/// log |det(I - rho W)| evaluated from the cached spectrum of W as the sum
/// of ln |1 - rho lambda_j| over all eigenvalues.
pub fn log_det_factor(eigenvalues: &[Complex<f64>], rho: f64) -> Result<f64> {
    let mut acc = 0.0;
    for (j, lambda) in eigenvalues.iter().enumerate() {
        let re = 1.0 - rho * lambda.re;
        let im = rho * lambda.im;
        let norm2 = re * re + im * im;
        if norm2.sqrt() <= 1e-14 {
            return Err(Error::SingularFactor(j));
        }
        acc += 0.5 * norm2.ln();
    }
    Ok(acc)
}
