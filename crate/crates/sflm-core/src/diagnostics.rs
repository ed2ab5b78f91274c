//! Moran's I spatial autocorrelation diagnostics.
//!
//! The statistic, a seeded permutation significance test, and the centered
//! value / spatial lag pairs behind a Moran scatterplot.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial_weights::SpatialWeights;

/// Direction of the permutation test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Alternative {
    /// Positive spatial autocorrelation (permuted I at least as large).
    Greater,
    /// Departure from the null expectation -1/(n-1) in either direction.
    TwoSided,
}

/// Moran's I with its permutation-test summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MoranResult {
    #[serde(rename = "I")]
    pub statistic: f64,
    /// Null expectation -1/(n-1).
    pub expected: f64,
    pub p_value: f64,
    pub permutations: usize,
    /// Mean of the permuted statistics.
    pub perm_mean: f64,
    /// Standard deviation of the permuted statistics.
    pub perm_sd: f64,
}

fn centered(y: &[f64]) -> Result<Vec<f64>> {
    if y.len() < 2 {
        return Err(Error::SizeMismatch(
            "Moran's I needs at least two units".into(),
        ));
    }
    let (min, max) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if min == max {
        return Err(Error::ConstantVector);
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    Ok(y.iter().map(|&v| v - mean).collect())
}

fn nonzero_triplets(w: &SpatialWeights) -> Vec<(usize, usize, f64)> {
    let m = w.matrix();
    let mut out = Vec::new();
    for i in 0..w.n() {
        for j in 0..w.n() {
            let v = m[(i, j)];
            if v != 0.0 {
                out.push((i, j, v));
            }
        }
    }
    out
}

/// Moran's I statistic: (n / S0) * (z' W z) / (z' z) with z = y - mean(y).
pub fn morans_i(y: &[f64], w: &SpatialWeights) -> Result<f64> {
    if y.len() != w.n() {
        return Err(Error::SizeMismatch(format!(
            "response has {} entries, weights have {} units",
            y.len(),
            w.n()
        )));
    }
    let z = centered(y)?;
    let s0: f64 = w.matrix().iter().sum();
    if s0 <= 0.0 {
        return Err(Error::EmptyWeights);
    }
    let zz: f64 = z.iter().map(|&v| v * v).sum();
    let cross: f64 = nonzero_triplets(w)
        .iter()
        .map(|&(i, j, v)| v * z[i] * z[j])
        .sum();
    Ok((y.len() as f64 / s0) * cross / zz)
}

/// One-sided or two-sided permutation test for Moran's I.
///
/// The p-value is (1 + #{permuted at least as extreme}) / (1 + permutations);
/// results are deterministic for a given seed.
pub fn morans_i_permutation_test(
    y: &[f64],
    w: &SpatialWeights,
    permutations: usize,
    seed: u64,
    alternative: Alternative,
) -> Result<MoranResult> {
    if permutations < 99 {
        return Err(Error::TooFewPermutations(permutations));
    }
    let observed = morans_i(y, w)?;
    let n = y.len();
    let expected = -1.0 / (n - 1) as f64;

    let z = centered(y)?;
    let zz: f64 = z.iter().map(|&v| v * v).sum();
    let s0: f64 = w.matrix().iter().sum();
    let scale = n as f64 / (s0 * zz);
    let triplets = nonzero_triplets(w);

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut perm = z.clone();
    let mut hits = 0usize;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..permutations {
        perm.shuffle(&mut rng);
        let cross: f64 = triplets.iter().map(|&(i, j, v)| v * perm[i] * perm[j]).sum();
        let stat = scale * cross;
        sum += stat;
        sum_sq += stat * stat;
        let extreme = match alternative {
            Alternative::Greater => stat >= observed,
            Alternative::TwoSided => (stat - expected).abs() >= (observed - expected).abs(),
        };
        if extreme {
            hits += 1;
        }
    }
    let p = permutations as f64;
    let perm_mean = sum / p;
    let perm_var = (sum_sq - p * perm_mean * perm_mean) / (p - 1.0);
    Ok(MoranResult {
        statistic: observed,
        expected,
        p_value: (1 + hits) as f64 / (1.0 + p),
        permutations,
        perm_mean,
        perm_sd: perm_var.max(0.0).sqrt(),
    })
}

/// Centered values paired with their spatial lags, for scatterplotting.
///
/// With a row-normalized W the least-squares slope of lag on value equals
/// Moran's I.
pub fn moran_scatter(y: &[f64], w: &SpatialWeights) -> Result<Vec<(f64, f64)>> {
    if !w.is_normalized() {
        return Err(Error::NotNormalized);
    }
    if y.len() != w.n() {
        return Err(Error::SizeMismatch(format!(
            "response has {} entries, weights have {} units",
            y.len(),
            w.n()
        )));
    }
    let z = centered(y)?;
    let lag = w.lag(&DVector::from_column_slice(&z));
    Ok(z.into_iter().zip(lag.iter().copied()).collect())
}
