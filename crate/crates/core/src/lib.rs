//! TrasMuon: Newton-Schulz orthogonalized momentum with RMS-calibrated step
//! sizes and a relative-energy, column-wise trust-region clip.
//!
//! The crate also ships the baselines it is compared against (AdamW, Muon,
//! NorMuon) and a deterministic stress harness built on a conditioned matrix
//! quadratic with column-localized burst injection.

pub mod cli;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod optim;
pub mod rng;
pub mod stress;

pub use error::{Error, Result};
pub use linalg::Matrix;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
