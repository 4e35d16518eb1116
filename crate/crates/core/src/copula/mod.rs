//! Bivariate copulas used as vine building blocks.

pub mod bandwidth;
pub mod family;
pub mod pair;
pub mod tll;

use serde::{Deserialize, Serialize};

pub use bandwidth::{select_bandwidth, Bandwidth};
pub use family::{param_to_tau, tau_to_param, Family, FamilySpec};
pub use pair::PairCopula;
pub use tll::{fit_copula_density, fit_tll, z_nodes, z_transform, Degree, TllCopula, ZPoints};

/// Which argument of a pair copula is conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// `P(U <= u | V = v)`
    UGivenV,
    /// `P(V <= v | U = u)`
    VGivenU,
}
