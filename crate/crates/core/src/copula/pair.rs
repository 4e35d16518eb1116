//! A pair copula of a vine: either a fitted nonparametric grid or a closed
//! form family.

use std::sync::Arc;

use super::{fit_tll, Direction, FamilySpec, TllCopula};
use crate::error::Result;

#[derive(Debug, Clone)]
pub enum PairCopula {
    Tll(Arc<TllCopula>),
    Param(FamilySpec),
}

impl PairCopula {
    /// Fits the nonparametric estimator to u-scale pairs.
    pub fn fit(u: &[f64], v: &[f64]) -> Result<Self> {
        Ok(PairCopula::Tll(Arc::new(fit_tll(u, v)?)))
    }

    pub fn pdf(&self, u: f64, v: f64) -> f64 {
        match self {
            PairCopula::Tll(c) => c.pdf(u, v),
            PairCopula::Param(c) => c.pdf(u, v),
        }
    }

    pub fn h(&self, u: f64, v: f64, dir: Direction) -> f64 {
        match self {
            PairCopula::Tll(c) => c.h(u, v, dir),
            PairCopula::Param(c) => c.h(u, v, dir),
        }
    }

    pub fn inv_h(&self, w: f64, cond: f64, dir: Direction) -> f64 {
        match self {
            PairCopula::Tll(c) => c.inv_h(w, cond, dir),
            PairCopula::Param(c) => c.inv_h(w, cond, dir),
        }
    }

    pub fn as_tll(&self) -> Option<&TllCopula> {
        match self {
            PairCopula::Tll(c) => Some(c),
            PairCopula::Param(_) => None,
        }
    }
}

impl From<FamilySpec> for PairCopula {
    fn from(spec: FamilySpec) -> Self {
        PairCopula::Param(spec)
    }
}

impl From<TllCopula> for PairCopula {
    fn from(cop: TllCopula) -> Self {
        PairCopula::Tll(Arc::new(cop))
    }
}
