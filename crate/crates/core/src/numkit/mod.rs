//! Numerical kernel: rank-revealing linear algebra, derivative jets, and
//! error-function jets. Everything downstream builds on these primitives.

pub mod jet;
pub mod linalg;
pub mod special;

pub use jet::{binomial, MatJet, ScalarJet};
pub use linalg::{min_sym_eig, nullspace_basis, pinv, rank_of, DEFAULT_RANK_TOL};
pub use special::{erf, erf_jet, erfc, erfc_jet};
