//! End-to-end vine quantile regression: margins, order selection and
//! prediction on the original scale.

use serde::{Deserialize, Serialize};

use crate::error::{Result, VineError};
use crate::marginals::{fit_marginals, pseudo_observations, MarginalModel};
use crate::select::{forward_select, SelectionConfig, SelectionTrace, Strategy};
use crate::vine::{FittedVine, VineKind};

/// How margins are estimated before the copula fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarginSpec {
    /// Kernel density estimates per column.
    #[default]
    Kde,
    /// Data already on the u-scale.
    Uniform,
}

#[derive(Debug, Clone)]
pub struct VineQuantileRegression {
    vine: FittedVine,
    trace: SelectionTrace,
}

impl VineQuantileRegression {
    /// Fits margins to every column, then selects and fits the vine.
    pub fn fit(columns: &[Vec<f64>], response: usize, config: &SelectionConfig, margins: MarginSpec) -> Result<Self> {
        if response >= columns.len() {
            return Err(VineError::Dimension(format!(
                "response {response} not among {} columns",
                columns.len()
            )));
        }
        let models = match margins {
            MarginSpec::Kde => fit_marginals(columns)?,
            MarginSpec::Uniform => vec![MarginalModel::uniform(); columns.len()],
        };
        let u = pseudo_observations(columns, &models)?;
        let (trace, vine) = forward_select(&u, response, config)?;
        Ok(VineQuantileRegression {
            vine: vine.with_marginals(models)?,
            trace,
        })
    }

    pub fn from_parts(vine: FittedVine, trace: SelectionTrace) -> Self {
        VineQuantileRegression { vine, trace }
    }

    pub fn vine(&self) -> &FittedVine {
        &self.vine
    }

    pub fn trace(&self) -> &SelectionTrace {
        &self.trace
    }

    /// `out[a][n]`: quantile level `alphas[a]` for row `n` of `x_cols`
    /// (columns by variable id; the response column may hold anything).
    pub fn predict(&self, alphas: &[f64], x_cols: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.vine.predict_quantiles_x(alphas, x_cols)
    }
}

/// Competitor label used in benchmark reports: `d1`, `d2`, `c1`, `c2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelId {
    pub kind: VineKind,
    pub strategy: Strategy,
}

impl ModelId {
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let kind = match s.chars().next() {
            Some('c') => VineKind::C,
            Some('d') => VineKind::D,
            _ => return Err(VineError::Config(format!("unknown model '{s}'"))),
        };
        let strategy = match &s[1..] {
            "1" => Strategy::OneStep,
            "2" => Strategy::TwoStep,
            _ => return Err(VineError::Config(format!("unknown model '{s}'"))),
        };
        Ok(ModelId { kind, strategy })
    }

    pub fn label(&self) -> String {
        let k = match self.kind {
            VineKind::C => 'c',
            VineKind::D => 'd',
        };
        let s = match self.strategy {
            Strategy::OneStep => '1',
            Strategy::TwoStep => '2',
        };
        format!("{k}{s}")
    }

    /// Long name in the style `D-vine two-step`.
    pub fn describe(&self) -> String {
        let k = match self.kind {
            VineKind::C => "C-vine",
            VineKind::D => "D-vine",
        };
        let s = match self.strategy {
            Strategy::OneStep => "one-step",
            Strategy::TwoStep => "two-step",
        };
        format!("{k} {s}")
    }
}
