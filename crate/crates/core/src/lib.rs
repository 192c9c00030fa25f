//! Offline–online multiscale solver for parametric elliptic problems
//! `-div(kappa(x; mu) grad u) = f` with affine, high-contrast coefficients
//! `kappa(x; mu) = sum_q Theta_q(mu) kappa_q(x)`.
//!
//! The offline stage builds, per coarse neighborhood, a harmonic-extension
//! snapshot space, solves the local generalized spectral problem for a set of
//! training parameters, compresses the eigenvector clouds with POD, trains
//! parameter-to-eigenvector predictors (Hermite least squares or Gaussian
//! process regression), and precomputes the reduced operators needed online.
//! The online stage evaluates the predictors at a new parameter, assembles the
//! small Theta-weighted coarse system from the cached blocks, and reconstructs
//! a fine-grid field; no spectral problem is solved after the offline stage.
//!
//! Modules follow the pipeline order: [`grid`] and [`coefficient`] describe
//! the discrete problem, [`fem`] assembles and solves the fine-scale
//! reference, [`msbasis`] builds local snapshot/spectral machinery, [`rom`]
//! compresses it, [`predict`] maps parameters to reduced eigenvectors,
//! [`online`] runs the coarse solves, and [`harness`] drives config-based
//! experiments and reporting.

pub mod artifact;
pub mod coefficient;
pub mod config;
pub mod counters;
pub mod fem;
pub mod grid;
pub mod harness;
pub mod msbasis;
pub mod online;
pub mod pencil;
pub mod predict;
pub mod raster;
pub mod rom;
pub mod sparse;

/// Library-wide error type; the CLI maps the variants onto exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Version tag written into artifact headers and run manifests.
pub const FORMAT_VERSION: u32 = 1;
