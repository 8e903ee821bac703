//! Deterministic numerical foundation: dense matrices, seeded random
//! streams, log-domain helpers and special functions.

mod matrix;
mod random;
mod scalar;
mod special;

pub use matrix::Matrix;
pub(crate) use matrix::{matmul_into, matmul_nt_into, matmul_tn_into};
pub use random::{draw_normal, RandomStream};
pub use scalar::Real;
pub use special::{
    chi_squared_sf, incomplete_gamma_pair, ln_gamma, log_softmax, logsumexp, reg_lower_incomplete_gamma,
    reg_upper_incomplete_gamma, softmax, standard_normal_cdf,
};
pub(crate) use special::{logsumexp_unchecked, softmax_in_place};
