//! Scalar-on-function regression with a spatially autoregressive response.
//!
//! The model couples a functional linear regression term with a spatial lag
//! of the response: y = alpha + rho W y + integral x(t) beta(t) dt + eps.
//! Curves are reduced to functional principal component scores, after which
//! estimation is profile maximum likelihood in the single spatial parameter.
//!
//! Modules:
//! - [`functional_data`]: grids, curve matrices, kernel smoothing, quadrature.
//! - [`fpca`]: covariance surface, eigen-system, scores, truncation choice.
//! - [`spatial_weights`]: rook and k-nearest-neighbour weights, normalization,
//!   cached spectra for fast log-determinants.
//! - [`diagnostics`]: Moran's I with a permutation test and scatter data.
//! - [`estimator`]: profile-likelihood fit, the classical fit, prediction.
//! - [`model_selection`]: posterior model probabilities over candidate
//!   truncations and weight matrices.
//! - [`simulation`]: synthetic data generators and the Monte Carlo harness.
//! - [`io`]: CSV and JSON formats shared with the command-line tool.

pub mod diagnostics;
pub mod error;
pub mod estimator;
pub mod fpca;
pub mod functional_data;
pub mod io;
pub mod model_selection;
pub mod simulation;
pub mod spatial_weights;

pub use error::{Error, Result};
