//! Self-describing JSON model files. Dense grids are stored as base64 of
//! little-endian `f64` bytes so that a reload reproduces every bit.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::copula::{z_nodes, Bandwidth, Degree, FamilySpec, PairCopula, TllCopula};
use crate::error::{Result, VineError};
use crate::marginals::{MarginalKind, MarginalModel};
use crate::regression::{MarginSpec, VineQuantileRegression};
use crate::select::SelectionConfig;
use crate::vine::{FittedVine, VineKind, VineOrder};

pub const FORMAT_VERSION: u32 = 1;

pub fn encode_f64s(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

pub fn decode_f64s(text: &str) -> Result<Vec<f64>> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| VineError::Format(format!("bad base64 payload: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(VineError::Format("payload length is not a multiple of 8 bytes".into()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalFile {
    pub kind: MarginalKind,
    pub bandwidth: f64,
    pub support: (f64, f64),
    pub grid_x: String,
    pub density: String,
    pub cdf: String,
}

impl MarginalFile {
    fn encode(m: &MarginalModel) -> Self {
        MarginalFile {
            kind: m.kind,
            bandwidth: m.bandwidth,
            support: m.support,
            grid_x: encode_f64s(&m.grid_x),
            density: encode_f64s(&m.density),
            cdf: encode_f64s(&m.cdf),
        }
    }

    fn decode(&self) -> Result<MarginalModel> {
        let m = MarginalModel {
            kind: self.kind,
            grid_x: decode_f64s(&self.grid_x)?,
            density: decode_f64s(&self.density)?,
            cdf: decode_f64s(&self.cdf)?,
            bandwidth: self.bandwidth,
            support: self.support,
        };
        let n = m.grid_x.len();
        if n < 2 || m.density.len() != n || m.cdf.len() != n {
            return Err(VineError::Format("marginal grids differ in length".into()));
        }
        if !(m.support.0.is_finite() && m.support.1.is_finite() && m.support.0 < m.support.1) {
            return Err(VineError::Format("marginal support is not a finite interval".into()));
        }
        if m.cdf.windows(2).any(|w| !(w[1] >= w[0])) {
            return Err(VineError::Format(
                "marginal distribution function is not monotone".into(),
            ));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum PairFile {
    Tll {
        degree: Degree,
        bandwidth: Bandwidth,
        /// Copula density on the `z_nodes` x `z_nodes` grid, row major.
        copula_density: String,
    },
    Parametric {
        spec: FamilySpec,
    },
}

impl PairFile {
    fn encode(c: &PairCopula) -> Self {
        match c {
            PairCopula::Tll(t) => PairFile::Tll {
                degree: t.degree(),
                bandwidth: *t.bandwidth(),
                copula_density: encode_f64s(t.copula_density()),
            },
            PairCopula::Param(spec) => PairFile::Parametric { spec: *spec },
        }
    }

    fn decode(&self) -> Result<PairCopula> {
        match self {
            PairFile::Tll {
                degree,
                bandwidth,
                copula_density,
            } => Ok(TllCopula::from_parts(*degree, *bandwidth, decode_f64s(copula_density)?)?.into()),
            PairFile::Parametric { spec } => Ok(PairCopula::Param(*spec)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub chosen: String,
    pub partner: Option<String>,
    pub cll: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMetadata {
    /// Training sample size.
    pub n: usize,
    pub seed: u64,
    pub config: SelectionConfig,
    pub margins: MarginSpec,
    /// Conditional log-likelihood of the final model on the training data.
    pub cll: f64,
    pub trace: Vec<TraceRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub kind: VineKind,
    pub response: String,
    /// Predictor names in vine order.
    pub order: Vec<String>,
    /// Margins of the response followed by the predictors in order.
    pub marginals: Vec<MarginalFile>,
    pub z_nodes: String,
    /// `copulas[k - 1][t - 1]`: tree-`t` copula added with the `k`-th predictor.
    pub copulas: Vec<Vec<PairFile>>,
    pub metadata: FitMetadata,
}

impl ModelFile {
    /// Captures a fitted model; `names` are the training column names by
    /// variable id.
    pub fn from_model(
        model: &VineQuantileRegression,
        names: &[String],
        n: usize,
        seed: u64,
        margins: MarginSpec,
    ) -> Result<Self> {
        let vine = model.vine();
        let order = vine.order();
        let name = |id: usize| {
            names
                .get(id)
                .cloned()
                .ok_or_else(|| VineError::Dimension(format!("no name for variable {id}")))
        };
        let ids: Vec<usize> = (0..=order.len()).map(|k| order.var(k)).collect();
        let marginals = ids
            .iter()
            .map(|&id| {
                vine.marginals()
                    .get(id)
                    .map(MarginalFile::encode)
                    .ok_or_else(|| VineError::Dimension(format!("no margin for variable {id}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let trace = model
            .trace()
            .steps
            .iter()
            .enumerate()
            .map(|(i, s)| {
                Ok(TraceRow {
                    step: i + 1,
                    chosen: name(s.chosen)?,
                    partner: s.partner.map(name).transpose()?,
                    cll: s.cll,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelFile {
            format_version: FORMAT_VERSION,
            kind: order.kind,
            response: name(order.response)?,
            order: order.predictors.iter().map(|&id| name(id)).collect::<Result<_>>()?,
            marginals,
            z_nodes: encode_f64s(&z_nodes()),
            copulas: vine
                .columns()
                .map(|c| c.iter().map(PairFile::encode).collect())
                .collect(),
            metadata: FitMetadata {
                n,
                seed,
                config: model.trace().config,
                margins,
                cll: model.trace().steps.last().map_or(0.0, |s| s.cll),
                trace,
            },
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| VineError::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Version {
            format_version: u32,
        }
        let v: Version = serde_json::from_str(text).map_err(|e| VineError::Format(e.to_string()))?;
        if v.format_version != FORMAT_VERSION {
            return Err(VineError::Format(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                v.format_version
            )));
        }
        serde_json::from_str(text).map_err(|e| VineError::Format(e.to_string()))
    }

    /// Rebuilds the vine with the response as variable 0 and the `k`-th
    /// predictor as variable `k`.
    pub fn load(&self) -> Result<SavedModel> {
        if decode_f64s(&self.z_nodes)? != z_nodes() {
            return Err(VineError::Format("copula grid nodes differ from this build".into()));
        }
        let r = self.order.len();
        if self.marginals.len() != r + 1 {
            return Err(VineError::Format(format!(
                "{} margins for {} variables",
                self.marginals.len(),
                r + 1
            )));
        }
        let order = VineOrder::new(self.kind, 0, (1..=r).collect())?;
        let columns = self
            .copulas
            .iter()
            .map(|c| c.iter().map(PairFile::decode).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let marginals = self
            .marginals
            .iter()
            .map(MarginalFile::decode)
            .collect::<Result<Vec<_>>>()?;
        let mut variables = vec![self.response.clone()];
        variables.extend(self.order.iter().cloned());
        Ok(SavedModel {
            vine: FittedVine::from_columns(order, columns, marginals)?,
            variables,
        })
    }
}

/// A vine restored from a [`ModelFile`].
#[derive(Debug, Clone)]
pub struct SavedModel {
    pub vine: FittedVine,
    /// Response name followed by the predictor names in order.
    pub variables: Vec<String>,
}

impl SavedModel {
    /// Picks the model's predictors out of named columns. The response
    /// column is optional. Errors name the first missing predictor.
    pub fn select_columns(&self, names: &[String], columns: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let n = columns.first().map_or(0, Vec::len);
        let mut out = vec![Vec::new()];
        for var in &self.variables[1..] {
            let i = names
                .iter()
                .position(|h| h == var)
                .ok_or_else(|| VineError::Dimension(format!("missing predictor column '{var}'")))?;
            out.push(columns[i].clone());
        }
        if self.variables.len() == 1 {
            out[0] = vec![0.0; n];
        }
        Ok(out)
    }

    /// `out[a][n]` for the rows of named columns.
    pub fn predict(&self, alphas: &[f64], names: &[String], columns: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.vine
            .predict_quantiles_x(alphas, &self.select_columns(names, columns)?)
    }
}
