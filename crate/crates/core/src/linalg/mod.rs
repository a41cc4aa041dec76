//! Dense small-matrix primitives.

mod matrix;
mod polar;
mod random;
mod stats;

pub use matrix::{column_energies, frobenius_norm, row_mean_squares, Matrix};
pub(crate) use polar::iterate_normalized;
pub use polar::{
    newton_schulz_polar, NsCoefficients, PolarOutput, MINIMAX_SCHEDULE, MUON_QUINTIC, NEWTON_SCHULZ_QUINTIC,
};
pub use random::{
    conditioned_spd, conditioned_spd_with, log_uniform_spectrum, random_orthogonal, random_orthogonal_seeded,
    ConditionedFactorSpec,
};
pub use stats::{median, quantile, quantile_sorted};
