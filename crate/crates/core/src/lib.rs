//! Adaptive scatterplot smoothing and adaptive functional principal component
//! analysis (AFPCA).
//!
//! The crate is organised bottom-up:
//!
//! - [`basis`]: clamped cubic B-splines, the exact second-derivative penalty
//!   matrix and the eigen-transformed basis `W(t) = S(t) U` under which the
//!   roughness penalty becomes an identity block plus two unpenalized
//!   (intercept and slope) columns.
//! - [`smooth`]: adaptive-ridge scatterplot smoothing with per-coefficient
//!   tuning parameters, plus the single-parameter baseline.
//! - [`fpca`]: likelihood-based FPCA with adaptively penalized mean and
//!   components, BLUP scores, per-iteration orthogonalization and PVE
//!   truncation.
//! - [`simulate`]: the piecewise synthetic generator, ISE/MISE metrics and
//!   the seeded benchmark study.
//! - [`io`]: long-format CSV ingestion and number formatting shared by the
//!   command-line front end.

pub mod basis;
pub mod error;
pub mod fpca;
pub mod io;
pub mod linalg;
pub mod quadrature;
pub mod simulate;
pub mod smooth;

pub use basis::{BasisMatrix, KnotVector, PenaltyMatrix, TransformedBasis};
pub use error::{Error, ErrorCategory, Result};
pub use fpca::{FpcaConfig, FpcaModel, FunctionalDataset, Reconstruction, Subject};
pub use smooth::{SmoothConfig, SmoothFit, TuningMode};

/// Version of this crate.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
