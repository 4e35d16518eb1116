//! C- and D-vine copulas for regression, with the response `V` as the first
//! element of the order `(V, U_1, ..., U_r)`.
//!
//! D-vine: the first tree is the path `V - U_1 - ... - U_r` and tree `t`
//! joins `x_i` and `x_{i+t}` given the variables between them (`x_0 = V`).
//! C-vine: `U_t` is the root of tree `t`; its edges join `U_t` with every
//! later predictor and finally with `V`, all given `U_1, ..., U_{t-1}`.
//!
//! Pair copulas are stored by the predictor whose arrival created them:
//! appending `U_k` adds exactly one edge per tree `1..=k`, the last one being
//! the edge between `V` and `U_k`. Pair copula arguments are
//! `(F(a | S), F(b | S))` for an edge labelled `(a, b; S)`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::copula::{Direction, PairCopula};
use crate::error::{Result, VineError};
use crate::marginals::MarginalModel;
use crate::special::clamp_u;

/// Smallest training sample accepted by the vine fitters.
pub const MIN_VINE_SAMPLE: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VineKind {
    C,
    D,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VineOrder {
    pub kind: VineKind,
    /// Variable id of the response.
    pub response: usize,
    /// Variable ids of the predictors in order.
    pub predictors: Vec<usize>,
}

impl VineOrder {
    pub fn new(kind: VineKind, response: usize, predictors: Vec<usize>) -> Result<Self> {
        let order = VineOrder {
            kind,
            response,
            predictors,
        };
        order.validate()?;
        Ok(order)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        seen.insert(self.response);
        for &p in &self.predictors {
            if !seen.insert(p) {
                return Err(VineError::DuplicateVariable(p));
            }
        }
        Ok(())
    }

    /// Number of predictors.
    pub fn len(&self) -> usize {
        self.predictors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictors.is_empty()
    }

    /// Variable id at order position `k`; position 0 is the response.
    pub fn var(&self, k: usize) -> usize {
        if k == 0 {
            self.response
        } else {
            self.predictors[k - 1]
        }
    }
}

/// Conditioned pair and conditioning set of one vine edge, by variable id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeLabel {
    pub tree: usize,
    pub conditioned: [usize; 2],
    pub conditioning: Vec<usize>,
}

/// Cached conditional distribution values of the training sample.
///
/// D-vine: `cond[i - 1] = F(x_i | x_{i+1}, ..., x_r)`. C-vine:
/// `cond[t - 1] = F(x_t | x_1, ..., x_{t-1})`. In both cases `response`
/// holds `F(V | x_1, ..., x_r)` and `terms[t - 1]` the log-likelihood of the
/// tree-`t` edge containing `V`.
#[derive(Debug, Clone)]
pub struct ConditioningState {
    kind: VineKind,
    n: usize,
    cond: Vec<Arc<Vec<f64>>>,
    response: Arc<Vec<f64>>,
    terms: Vec<f64>,
}

impl ConditioningState {
    /// Conditional log-likelihood of the training sample.
    pub fn cll(&self) -> f64 {
        self.terms.iter().sum()
    }

    /// Contribution of each tree.
    pub fn terms(&self) -> &[f64] {
        &self.terms
    }

    /// Number of trees cached.
    pub fn depth(&self) -> usize {
        self.cond.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// All cached values, for inspection.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.cond
            .iter()
            .flat_map(|c| c.iter().copied())
            .chain(self.response.iter().copied())
    }
}

/// The pair copulas joining one predictor to the first `depth` roots of a
/// C-vine, with the resulting conditional distribution values
/// `F(x | x_1, ..., x_depth)`. They depend only on the prefix of the order,
/// so forward selection can reuse them across candidates.
#[derive(Debug, Clone)]
pub struct PredictorChain {
    var: usize,
    copulas: Vec<PairCopula>,
    value: Arc<Vec<f64>>,
}

impl PredictorChain {
    pub fn var(&self) -> usize {
        self.var
    }

    pub fn depth(&self) -> usize {
        self.copulas.len()
    }
}

#[derive(Debug, Clone)]
pub struct FittedVine {
    order: VineOrder,
    /// `columns[k - 1][t - 1]` is the tree-`t` copula added with predictor `k`.
    columns: Vec<Arc<Vec<PairCopula>>>,
    /// Margins by variable id.
    marginals: Arc<Vec<MarginalModel>>,
}

fn check_columns(u_data: &[Vec<f64>], vars: impl Iterator<Item = usize>) -> Result<usize> {
    let mut n = None;
    for v in vars {
        let col = u_data
            .get(v)
            .ok_or_else(|| VineError::Dimension(format!("variable {v} not among {} columns", u_data.len())))?;
        let expected = *n.get_or_insert(col.len());
        if col.len() != expected {
            return Err(VineError::Dimension(format!(
                "column {v} has {} rows, expected {expected}",
                col.len()
            )));
        }
        if let Some(x) = col.iter().find(|x| !(**x >= 0.0 && **x <= 1.0)) {
            return Err(VineError::Domain(format!("u-scale value {x} in column {v}")));
        }
    }
    Ok(n.unwrap_or(0))
}

fn clamped(col: &[f64]) -> Vec<f64> {
    col.iter().map(|&x| clamp_u(x)).collect()
}

fn h_all(cop: &PairCopula, a: &[f64], b: &[f64], dir: Direction) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| cop.h(x, y, dir)).collect()
}

fn log_lik(cop: &PairCopula, a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| cop.pdf(x, y).ln()).sum()
}

impl FittedVine {
    /// Vine with the response only.
    pub fn empty(kind: VineKind, response: usize, u_data: &[Vec<f64>]) -> Result<(Self, ConditioningState)> {
        let n = check_columns(u_data, std::iter::once(response))?;
        if n < MIN_VINE_SAMPLE {
            return Err(VineError::InsufficientSample {
                needed: MIN_VINE_SAMPLE,
                got: n,
            });
        }
        let vine = FittedVine {
            order: VineOrder::new(kind, response, Vec::new())?,
            columns: Vec::new(),
            marginals: Arc::new(vec![MarginalModel::uniform(); u_data.len()]),
        };
        let state = ConditioningState {
            kind,
            n,
            cond: Vec::new(),
            response: Arc::new(clamped(&u_data[response])),
            terms: Vec::new(),
        };
        Ok((vine, state))
    }

    /// Fits all pair copulas tree by tree for a given order. `u_data[v]` is
    /// the u-scale column of variable `v`.
    pub fn fit_given_order(u_data: &[Vec<f64>], order: &VineOrder) -> Result<(Self, ConditioningState)> {
        order.validate()?;
        let r = order.len();
        let n = check_columns(u_data, (0..=r).map(|k| order.var(k)))?;
        if n < MIN_VINE_SAMPLE {
            return Err(VineError::InsufficientSample {
                needed: MIN_VINE_SAMPLE,
                got: n,
            });
        }
        let x: Vec<Arc<Vec<f64>>> = (0..=r).map(|k| Arc::new(clamped(&u_data[order.var(k)]))).collect();
        let mut columns: Vec<Vec<PairCopula>> = (1..=r).map(Vec::with_capacity).collect();
        let mut terms = vec![0.0; r];
        let state = match order.kind {
            VineKind::D => {
                // a[i] = F(x_i | x_{i+1..i+s}), b[j] = F(x_j | x_{j-s..j-1}) after tree s
                let mut a = x.clone();
                let mut b = x.clone();
                for t in 1..=r {
                    for i in 0..=r - t {
                        let j = i + t;
                        let cop = PairCopula::fit(&a[i], &b[j])?;
                        if i == 0 {
                            terms[t - 1] = log_lik(&cop, &a[0], &b[j]);
                        }
                        let new_a = h_all(&cop, &a[i], &b[j], Direction::UGivenV);
                        let new_b = h_all(&cop, &a[i], &b[j], Direction::VGivenU);
                        a[i] = Arc::new(new_a);
                        b[j] = Arc::new(new_b);
                        columns[j - 1].push(cop);
                    }
                }
                ConditioningState {
                    kind: VineKind::D,
                    n,
                    cond: a[1..].to_vec(),
                    response: a[0].clone(),
                    terms,
                }
            }
            VineKind::C => {
                // g[j] = F(x_j | x_1..x_{t-1}) before tree t
                let mut g = x.clone();
                for t in 1..=r {
                    let root = g[t].clone();
                    for j in (t + 1..=r).chain(std::iter::once(0)) {
                        let cop = PairCopula::fit(&root, &g[j])?;
                        if j == 0 {
                            terms[t - 1] = log_lik(&cop, &root, &g[0]);
                            columns[t - 1].push(cop.clone());
                        } else {
                            columns[j - 1].push(cop.clone());
                        }
                        g[j] = Arc::new(h_all(&cop, &root, &g[j], Direction::VGivenU));
                    }
                }
                ConditioningState {
                    kind: VineKind::C,
                    n,
                    cond: g[1..].to_vec(),
                    response: g[0].clone(),
                    terms,
                }
            }
        };
        let vine = FittedVine {
            order: order.clone(),
            columns: columns.into_iter().map(Arc::new).collect(),
            marginals: Arc::new(vec![MarginalModel::uniform(); u_data.len()]),
        };
        Ok((vine, state))
    }

    /// Appends one predictor, fitting one new pair copula per tree and
    /// reusing the cached conditionals. Existing copulas are shared.
    pub fn extend_one(
        &self,
        state: &ConditioningState,
        new_var: usize,
        u_col: &[f64],
    ) -> Result<(FittedVine, ConditioningState)> {
        self.check_extension(state, new_var, u_col)?;
        match self.order.kind {
            VineKind::D => self.extend_d(state, new_var, u_col),
            VineKind::C => {
                let chain = self.advance_chain(state, new_var, u_col, None)?;
                self.extend_with_chain(state, chain)
            }
        }
    }

    fn check_extension(&self, state: &ConditioningState, new_var: usize, u_col: &[f64]) -> Result<()> {
        if new_var == self.order.response || self.order.predictors.contains(&new_var) {
            return Err(VineError::DuplicateVariable(new_var));
        }
        if state.kind != self.order.kind || state.depth() != self.order.len() {
            return Err(VineError::Structure(
                "conditioning state does not belong to this vine".into(),
            ));
        }
        if u_col.len() != state.n {
            return Err(VineError::Dimension(format!(
                "column has {} rows, expected {}",
                u_col.len(),
                state.n
            )));
        }
        if let Some(x) = u_col.iter().find(|x| !(**x >= 0.0 && **x <= 1.0)) {
            return Err(VineError::Domain(format!("u-scale value {x}")));
        }
        Ok(())
    }

    fn extend_d(
        &self,
        state: &ConditioningState,
        new_var: usize,
        u_col: &[f64],
    ) -> Result<(FittedVine, ConditioningState)> {
        let r = self.order.len();
        let col = Arc::new(clamped(u_col));
        let mut b = col.clone();
        let mut copulas = Vec::with_capacity(r + 1);
        let mut cond = vec![col.clone(); r + 1];
        let mut response = state.response.clone();
        let mut term = 0.0;
        for t in 1..=r + 1 {
            let i = r + 1 - t;
            let a = if i == 0 { &state.response } else { &state.cond[i - 1] };
            let cop = PairCopula::fit(a, &b)?;
            let new_a = Arc::new(h_all(&cop, a, &b, Direction::UGivenV));
            if i == 0 {
                term = log_lik(&cop, a, &b);
                response = new_a;
            } else {
                cond[i - 1] = new_a;
                b = Arc::new(h_all(&cop, a, &b, Direction::VGivenU));
            }
            copulas.push(cop);
        }
        let mut terms = state.terms.clone();
        terms.push(term);
        let next_state = ConditioningState {
            kind: VineKind::D,
            n: state.n,
            cond,
            response,
            terms,
        };
        Ok((self.appended(new_var, copulas), next_state))
    }

    /// C-vine only: fits the edges joining `var` to the roots not yet
    /// covered by `prior`, which must come from the same order prefix.
    pub fn advance_chain(
        &self,
        state: &ConditioningState,
        var: usize,
        u_col: &[f64],
        prior: Option<PredictorChain>,
    ) -> Result<PredictorChain> {
        if self.order.kind != VineKind::C {
            return Err(VineError::Structure("predictor chains exist only for C-vines".into()));
        }
        self.check_extension(state, var, u_col)?;
        let mut chain = match prior {
            Some(c) => {
                if c.var != var || c.depth() > self.order.len() {
                    return Err(VineError::Structure("predictor chain does not match this vine".into()));
                }
                c
            }
            None => PredictorChain {
                var,
                copulas: Vec::with_capacity(self.order.len() + 1),
                value: Arc::new(clamped(u_col)),
            },
        };
        for t in chain.depth() + 1..=self.order.len() {
            let root = &state.cond[t - 1];
            let cop = PairCopula::fit(root, &chain.value)?;
            chain.value = Arc::new(h_all(&cop, root, &chain.value, Direction::VGivenU));
            chain.copulas.push(cop);
        }
        Ok(chain)
    }

    /// C-vine only: appends the chain's predictor, fitting its edge with `V`.
    pub fn extend_with_chain(
        &self,
        state: &ConditioningState,
        chain: PredictorChain,
    ) -> Result<(FittedVine, ConditioningState)> {
        if self.order.kind != VineKind::C || chain.depth() != self.order.len() {
            return Err(VineError::Structure("predictor chain does not match this vine".into()));
        }
        if chain.var == self.order.response || self.order.predictors.contains(&chain.var) {
            return Err(VineError::DuplicateVariable(chain.var));
        }
        let g = chain.value.clone();
        let cop = PairCopula::fit(&g, &state.response)?;
        let term = log_lik(&cop, &g, &state.response);
        let response = Arc::new(h_all(&cop, &g, &state.response, Direction::VGivenU));
        let mut copulas = chain.copulas;
        copulas.push(cop);
        let mut cond = state.cond.clone();
        cond.push(g);
        let mut terms = state.terms.clone();
        terms.push(term);
        let next_state = ConditioningState {
            kind: VineKind::C,
            n: state.n,
            cond,
            response,
            terms,
        };
        Ok((self.appended(chain.var, copulas), next_state))
    }

    fn appended(&self, var: usize, copulas: Vec<PairCopula>) -> FittedVine {
        let mut order = self.order.clone();
        order.predictors.push(var);
        let mut columns = self.columns.clone();
        columns.push(Arc::new(copulas));
        FittedVine {
            order,
            columns,
            marginals: self.marginals.clone(),
        }
    }

    pub fn order(&self) -> &VineOrder {
        &self.order
    }

    pub fn kind(&self) -> VineKind {
        self.order.kind
    }

    pub fn marginals(&self) -> &[MarginalModel] {
        &self.marginals
    }

    /// Replaces the margins, indexed by variable id.
    pub fn with_marginals(mut self, marginals: Vec<MarginalModel>) -> Result<Self> {
        let needed = (0..=self.order.len()).map(|k| self.order.var(k)).max().unwrap_or(0);
        if marginals.len() <= needed {
            return Err(VineError::Dimension(format!(
                "{} marginal models for variable ids up to {needed}",
                marginals.len()
            )));
        }
        self.marginals = Arc::new(marginals);
        Ok(self)
    }

    /// Rebuilds a vine from its order and per-predictor copula columns.
    pub fn from_columns(
        order: VineOrder,
        columns: Vec<Vec<PairCopula>>,
        marginals: Vec<MarginalModel>,
    ) -> Result<Self> {
        order.validate()?;
        if columns.len() != order.len() || columns.iter().enumerate().any(|(k, c)| c.len() != k + 1) {
            return Err(VineError::Structure("copula columns do not match the order".into()));
        }
        FittedVine {
            order,
            columns: columns.into_iter().map(Arc::new).collect(),
            marginals: Arc::new(Vec::new()),
        }
        .with_marginals(marginals)
    }

    /// Copulas grouped by the predictor that introduced them.
    pub fn columns(&self) -> impl Iterator<Item = &[PairCopula]> {
        self.columns.iter().map(|c| c.as_slice())
    }

    pub fn pair_count(&self) -> usize {
        self.columns.iter().map(|c| c.len()).sum()
    }

    /// Number of edges in tree `t`.
    pub fn tree_size(&self, tree: usize) -> usize {
        (self.order.len() + 1).saturating_sub(tree)
    }

    /// Pair copula of edge `edge` in tree `tree` (both counted from 1 and 0
    /// respectively), edges ordered as in [`FittedVine::edge_labels`].
    pub fn pair(&self, tree: usize, edge: usize) -> Option<&PairCopula> {
        let r = self.order.len();
        if tree == 0 || tree > r || edge >= self.tree_size(tree) {
            return None;
        }
        let k = match self.order.kind {
            VineKind::D => edge + tree,
            VineKind::C if edge + 1 < self.tree_size(tree) => tree + 1 + edge,
            VineKind::C => tree,
        };
        self.columns[k - 1].get(tree - 1)
    }

    /// Labels of all edges, tree by tree. D-vine edges run along the path;
    /// C-vine edges list the root's partners in order with `V` last.
    pub fn edge_labels(&self) -> Vec<EdgeLabel> {
        let r = self.order.len();
        let o = &self.order;
        let mut out = Vec::with_capacity(self.pair_count());
        for t in 1..=r {
            match o.kind {
                VineKind::D => {
                    for i in 0..=r - t {
                        out.push(EdgeLabel {
                            tree: t,
                            conditioned: [o.var(i), o.var(i + t)],
                            conditioning: (i + 1..i + t).map(|k| o.var(k)).collect(),
                        });
                    }
                }
                VineKind::C => {
                    for j in (t + 1..=r).chain(std::iter::once(0)) {
                        out.push(EdgeLabel {
                            tree: t,
                            conditioned: [o.var(t), o.var(j)],
                            conditioning: (1..t).map(|k| o.var(k)).collect(),
                        });
                    }
                }
            }
        }
        out
    }

    /// `F(x_t | x_1, ..., x_{t-1})` for every predictor position `t` and
    /// every observation. `pred[k - 1]` holds predictor `k` on the u-scale.
    fn predictor_conditionals(&self, pred: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let r = self.order.len();
        if r == 0 {
            return Vec::new();
        }
        let mut out = Vec::with_capacity(r);
        match self.order.kind {
            VineKind::D => {
                // index k - 1 holds position k
                let mut a: Vec<Vec<f64>> = pred.to_vec();
                let mut b: Vec<Vec<f64>> = pred.to_vec();
                out.push(b[0].clone());
                for s in 1..r {
                    for i in 1..=r - s {
                        let j = i + s;
                        let cop = &self.columns[j - 1][s - 1];
                        let new_a = h_all(cop, &a[i - 1], &b[j - 1], Direction::UGivenV);
                        let new_b = h_all(cop, &a[i - 1], &b[j - 1], Direction::VGivenU);
                        a[i - 1] = new_a;
                        b[j - 1] = new_b;
                    }
                    out.push(b[s].clone());
                }
            }
            VineKind::C => {
                let mut g: Vec<Vec<f64>> = pred.to_vec();
                for t in 1..=r {
                    let root = std::mem::take(&mut g[t - 1]);
                    for j in t + 1..=r {
                        let cop = &self.columns[j - 1][t - 1];
                        g[j - 1] = h_all(cop, &root, &g[j - 1], Direction::VGivenU);
                    }
                    out.push(root);
                }
            }
        }
        out
    }

    fn v_edge(&self, t: usize) -> &PairCopula {
        &self.columns[t - 1][t - 1]
    }

    /// `F(V | ...)` after tree `t` from `w = F(V | ...)` before it and the
    /// predictor conditional `c = F(x_t | x_1..x_{t-1})`.
    #[inline]
    fn v_step(&self, t: usize, w: f64, c: f64) -> f64 {
        match self.order.kind {
            VineKind::D => self.v_edge(t).h(w, c, Direction::UGivenV),
            VineKind::C => self.v_edge(t).h(c, w, Direction::VGivenU),
        }
    }

    #[inline]
    fn v_step_inv(&self, t: usize, w: f64, c: f64) -> f64 {
        match self.order.kind {
            VineKind::D => self.v_edge(t).inv_h(w, c, Direction::UGivenV),
            VineKind::C => self.v_edge(t).inv_h(w, c, Direction::VGivenU),
        }
    }

    #[inline]
    fn v_density(&self, t: usize, w: f64, c: f64) -> f64 {
        match self.order.kind {
            VineKind::D => self.v_edge(t).pdf(w, c),
            VineKind::C => self.v_edge(t).pdf(c, w),
        }
    }

    fn predictor_columns(&self, u_data: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        check_columns(u_data, (1..=self.order.len()).map(|k| self.order.var(k)))?;
        Ok(self.order.predictors.iter().map(|&v| clamped(&u_data[v])).collect())
    }

    /// Per-tree conditional log-likelihood of `u_data` (columns by variable
    /// id), recomputed from scratch.
    pub fn cll_terms(&self, u_data: &[Vec<f64>]) -> Result<Vec<f64>> {
        let n = check_columns(u_data, (0..=self.order.len()).map(|k| self.order.var(k)))?;
        let pred = self.predictor_columns(u_data)?;
        let cond = self.predictor_conditionals(&pred);
        let mut w = clamped(&u_data[self.order.response]);
        let mut terms = Vec::with_capacity(self.order.len());
        for (t, c) in cond.iter().enumerate().map(|(k, c)| (k + 1, c)) {
            let mut term = 0.0;
            for i in 0..n {
                term += self.v_density(t, w[i], c[i]).ln();
                w[i] = self.v_step(t, w[i], c[i]);
            }
            terms.push(term);
        }
        Ok(terms)
    }

    /// Conditional log-likelihood of the response given the predictors.
    pub fn cll(&self, u_data: &[Vec<f64>]) -> Result<f64> {
        Ok(self.cll_terms(u_data)?.iter().sum())
    }

    fn check_point(&self, values: &[f64]) -> Result<()> {
        if values.len() != self.order.len() {
            return Err(VineError::Dimension(format!(
                "{} predictor values for {} predictors",
                values.len(),
                self.order.len()
            )));
        }
        if let Some(x) = values.iter().find(|x| !(**x > 0.0 && **x < 1.0)) {
            return Err(VineError::Domain(format!("u-scale value {x} outside (0, 1)")));
        }
        Ok(())
    }

    fn point_conditionals(&self, u: &[f64]) -> Vec<f64> {
        let pred: Vec<Vec<f64>> = u.iter().map(|&x| vec![clamp_u(x)]).collect();
        self.predictor_conditionals(&pred).into_iter().map(|c| c[0]).collect()
    }

    /// `C(v | u_1, ..., u_r)` with `u` given in order position.
    pub fn conditional_cdf(&self, v: f64, u: &[f64]) -> Result<f64> {
        if !(v > 0.0 && v < 1.0) {
            return Err(VineError::Domain(format!("u-scale value {v} outside (0, 1)")));
        }
        self.check_point(u)?;
        let cond = self.point_conditionals(u);
        let mut w = clamp_u(v);
        for (k, &c) in cond.iter().enumerate() {
            w = self.v_step(k + 1, w, c);
        }
        Ok(w)
    }

    /// Inverse of [`FittedVine::conditional_cdf`] in `v`.
    pub fn conditional_quantile_u(&self, alpha: f64, u: &[f64]) -> Result<f64> {
        check_alpha(alpha)?;
        self.check_point(u)?;
        let cond = self.point_conditionals(u);
        Ok(self.invert_chain(alpha, &cond))
    }

    fn invert_chain(&self, alpha: f64, cond: &[f64]) -> f64 {
        let mut w = clamp_u(alpha);
        for (k, &c) in cond.iter().enumerate().rev() {
            w = self.v_step_inv(k + 1, w, c);
        }
        w
    }

    /// Conditional quantiles on the u-scale for many observations at once:
    /// `out[a][n]` is level `alphas[a]` for row `n` of `u_data` (columns by
    /// variable id).
    pub fn conditional_quantiles_u(&self, alphas: &[f64], u_data: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        for &a in alphas {
            check_alpha(a)?;
        }
        let pred = self.predictor_columns(u_data)?;
        let cond = self.predictor_conditionals(&pred);
        let n = pred.first().map_or(u_data.first().map_or(0, Vec::len), Vec::len);
        let mut out = vec![vec![0.0; n]; alphas.len()];
        let mut point = vec![0.0; self.order.len()];
        for i in 0..n {
            for (p, c) in point.iter_mut().zip(&cond) {
                *p = c[i];
            }
            for (a, &alpha) in alphas.iter().enumerate() {
                out[a][i] = self.invert_chain(alpha, &point);
            }
        }
        Ok(out)
    }

    /// Quantile prediction on the original scale. `x` holds one value per
    /// variable id; the response entry is ignored.
    pub fn predict_quantile_x(&self, alpha: f64, x: &[f64]) -> Result<f64> {
        let u = self.to_u(x)?;
        let q = self.conditional_quantile_u(alpha, &u)?;
        self.marginals[self.order.response].quantile(q)
    }

    /// Quantile predictions for many rows: `x_cols[v][n]` is variable `v` in
    /// row `n`; returns `out[a][n]`.
    pub fn predict_quantiles_x(&self, alphas: &[f64], x_cols: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut u_cols = vec![Vec::new(); x_cols.len()];
        for &v in &self.order.predictors {
            let col = x_cols
                .get(v)
                .ok_or_else(|| VineError::Dimension(format!("variable {v} not among {} columns", x_cols.len())))?;
            let m = self.marginal(v)?;
            u_cols[v] = col.iter().map(|&x| m.cdf(x)).collect();
        }
        let n = x_cols.first().map_or(0, Vec::len);
        let q = if self.order.is_empty() {
            alphas
                .iter()
                .map(|&a| check_alpha(a).map(|_| vec![a; n]))
                .collect::<Result<Vec<_>>>()?
        } else {
            self.conditional_quantiles_u(alphas, &u_cols)?
        };
        let fy = self.marginal(self.order.response)?;
        q.into_iter()
            .map(|row| row.into_iter().map(|p| fy.quantile(p)).collect())
            .collect()
    }

    fn marginal(&self, v: usize) -> Result<&MarginalModel> {
        self.marginals
            .get(v)
            .ok_or_else(|| VineError::Dimension(format!("no marginal model for variable {v}")))
    }

    fn to_u(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.order
            .predictors
            .iter()
            .map(|&v| {
                let xv = *x
                    .get(v)
                    .ok_or_else(|| VineError::Dimension(format!("row has no variable {v}")))?;
                if !xv.is_finite() {
                    return Err(VineError::NonFinite(format!("variable {v}")));
                }
                Ok(self.marginal(v)?.cdf(xv))
            })
            .collect()
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(VineError::Domain(format!("quantile level {alpha} outside (0, 1)")))
    }
}
