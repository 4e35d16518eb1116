//! One-step and two-step ahead forward selection of C- and D-vine orders.
//!
//! Step 1 prescreens predictors by `|tau(V, U_j)|`; later steps rank the
//! remaining predictors by `|rho(Z_V, Z_j; Z_chosen)|` on the normal scale.
//! Each of the `k` candidates is scored by the conditional log-likelihood of
//! the vine extended with it (one-step) or by the best extension with one
//! further predictor (two-step). Ties go to the lower variable index.

use std::collections::HashMap;
use std::sync::Mutex;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VineError};
use crate::par::map_range;
use crate::special::{clamp_u, norm_quantile};
use crate::stats::partial_correlations;
pub use crate::stats::{kendall_tau, partial_correlation};
use crate::vine::{ConditioningState, FittedVine, PredictorChain, VineKind, VineOrder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    OneStep,
    TwoStep,
}

/// Shrinks the set of lookahead partners: the top `pc_fraction` by partial
/// correlation with the response plus `random_fraction` drawn at random.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reduction {
    pub pc_fraction: f64,
    pub random_fraction: f64,
    pub seed: u64,
}

impl Reduction {
    pub fn validate(&self) -> Result<()> {
        let ok = |f: f64| (0.0..=1.0).contains(&f);
        if !ok(self.pc_fraction) || !ok(self.random_fraction) || self.pc_fraction + self.random_fraction > 1.0 + 1e-12 {
            return Err(VineError::Config(format!(
                "reduction fractions ({}, {}) must lie in [0, 1] and sum to at most 1",
                self.pc_fraction, self.random_fraction
            )));
        }
        Ok(())
    }

    /// Number of partners kept out of `available`.
    pub fn kept(&self, available: usize) -> (usize, usize) {
        let size = |f: f64| ((f * available as f64) - 1e-9).ceil().max(0.0) as usize;
        let total = size(self.pc_fraction + self.random_fraction).min(available);
        let top = size(self.pc_fraction).min(total);
        (top, total - top)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub kind: VineKind,
    pub strategy: Strategy,
    /// Number of candidates scored per step.
    pub k: usize,
    /// Stop after this many predictors; all of them by default.
    pub max_predictors: Option<usize>,
    pub reduction: Option<Reduction>,
}

impl SelectionConfig {
    pub fn new(kind: VineKind, strategy: Strategy, k: usize) -> Self {
        SelectionConfig {
            kind,
            strategy,
            k,
            max_predictors: None,
            reduction: None,
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if self.k == 0 || self.k > p {
            return Err(VineError::Config(format!("k = {} must lie in 1..={p}", self.k)));
        }
        if self.max_predictors == Some(0) {
            return Err(VineError::Config("max_predictors must be positive".into()));
        }
        if let Some(r) = &self.reduction {
            r.validate()?;
        }
        Ok(())
    }
}

/// One scored model: the current vine extended by `candidate` and, for the
/// two-step strategy, by `partner`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub candidate: usize,
    pub partner: Option<usize>,
    pub cll: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionStep {
    pub candidate_set: Vec<usize>,
    /// Every model scored at this step.
    pub evaluations: Vec<Evaluation>,
    pub chosen: usize,
    /// Lookahead partner of the winning evaluation.
    pub partner: Option<usize>,
    /// Score of the winning evaluation.
    pub score: f64,
    /// Training cll of the vine after appending `chosen`.
    pub cll: f64,
}

impl SelectionStep {
    /// Number of scored models that include a lookahead predictor.
    pub fn lookahead_fits(&self) -> usize {
        self.evaluations.iter().filter(|e| e.partner.is_some()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub config: SelectionConfig,
    pub steps: Vec<SelectionStep>,
    pub final_order: VineOrder,
}

impl SelectionTrace {
    /// Re-checks every step: the chosen predictor is a candidate, and its
    /// recorded evaluation has the largest score with ties to lower indices.
    pub fn audit(&self) -> std::result::Result<(), String> {
        for (r, step) in self.steps.iter().enumerate() {
            if !step.candidate_set.contains(&step.chosen) {
                return Err(format!("step {}: chosen {} not a candidate", r + 1, step.chosen));
            }
            if step
                .evaluations
                .iter()
                .any(|e| !step.candidate_set.contains(&e.candidate))
            {
                return Err(format!("step {}: evaluation outside the candidate set", r + 1));
            }
            let best = step
                .evaluations
                .iter()
                .copied()
                .reduce(better)
                .ok_or_else(|| format!("step {}: no evaluations", r + 1))?;
            if (best.candidate, best.partner) != (step.chosen, step.partner) || best.cll != step.score {
                return Err(format!(
                    "step {}: recorded ({}, {:?}) but the maximum is ({}, {:?})",
                    r + 1,
                    step.chosen,
                    step.partner,
                    best.candidate,
                    best.partner
                ));
            }
            if self.final_order.predictors.get(r) != Some(&step.chosen) {
                return Err(format!("step {}: order disagrees with the trace", r + 1));
            }
        }
        Ok(())
    }
}

/// Keeps the evaluation with the larger cll; ties go to the lower candidate
/// index, then to the lower partner index (no partner first).
fn better(a: Evaluation, b: Evaluation) -> Evaluation {
    let key = |e: &Evaluation| (e.candidate, e.partner.map_or(0, |j| j + 1));
    let score = |e: &Evaluation| if e.cll.is_nan() { f64::NEG_INFINITY } else { e.cll };
    match score(&a).total_cmp(&score(&b)) {
        std::cmp::Ordering::Greater => a,
        std::cmp::Ordering::Less => b,
        std::cmp::Ordering::Equal => {
            if key(&a) <= key(&b) {
                a
            } else {
                b
            }
        }
    }
}

/// The `k` entries of `ids` with the largest `|score|`, ties to lower ids.
fn top_by_abs(ids: &[usize], scores: &[f64], k: usize) -> Vec<usize> {
    let mut ranked: Vec<(usize, f64)> = ids
        .iter()
        .zip(scores)
        .map(|(&i, &s)| (i, if s.is_nan() { -1.0 } else { s.abs() }))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.into_iter().take(k).map(|(i, _)| i).collect()
}

/// Step-1 candidates: the `k` predictors with the largest `|tau(V, U_j)|`.
pub fn prescreen_step1(u_data: &[Vec<f64>], response: usize, available: &[usize], k: usize) -> Result<Vec<usize>> {
    let v = column(u_data, response)?;
    let taus = available
        .iter()
        .map(|&j| kendall_tau(v, column(u_data, j)?))
        .collect::<Result<Vec<f64>>>()?;
    Ok(top_by_abs(available, &taus, k))
}

fn column(data: &[Vec<f64>], v: usize) -> Result<&[f64]> {
    data.get(v)
        .map(|c| c.as_slice())
        .ok_or_else(|| VineError::Dimension(format!("variable {v} not among {} columns", data.len())))
}

/// `|rho(Z_V, Z_j; Z_given)|` for every `j` in `others`. When the sample is
/// too small or the conditioning set is singular, the oldest conditioning
/// variables are dropped until the estimate exists.
pub fn partial_correlation_scores(
    z_data: &[Vec<f64>],
    response: usize,
    others: &[usize],
    given: &[usize],
) -> Result<Vec<f64>> {
    let target = column(z_data, response)?;
    let cols = others.iter().map(|&j| column(z_data, j)).collect::<Result<Vec<_>>>()?;
    let n = target.len();
    let mut start = given.len().saturating_sub(n.saturating_sub(3));
    loop {
        let g = given[start..]
            .iter()
            .map(|&j| column(z_data, j))
            .collect::<Result<Vec<_>>>()?;
        match partial_correlations(target, &cols, &g) {
            Ok(r) => return Ok(r),
            Err(e) if start == given.len() => return Err(e),
            Err(_) => start += 1,
        }
    }
}

/// Lookahead partners kept for candidate `c`: the top share by
/// `|rho(Z_V, Z_j; Z_chosen, Z_c)|`, then a seeded uniform draw from the rest.
pub fn reduce_future_set(
    available: &[usize],
    z_data: &[Vec<f64>],
    response: usize,
    chosen: &[usize],
    c: usize,
    reduction: &Reduction,
) -> Result<Vec<usize>> {
    let (top, random) = reduction.kept(available.len());
    if top + random == 0 {
        return Ok(Vec::new());
    }
    let mut kept = if top > 0 {
        let mut given = chosen.to_vec();
        given.push(c);
        let rho = partial_correlation_scores(z_data, response, available, &given)?;
        top_by_abs(available, &rho, top)
    } else {
        Vec::new()
    };
    let rest: Vec<usize> = available.iter().copied().filter(|j| !kept.contains(j)).collect();
    if random > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(reduction.seed, chosen.len() as u64, c as u64));
        let mut picks: Vec<usize> = sample(&mut rng, rest.len(), random.min(rest.len()))
            .into_iter()
            .map(|i| rest[i])
            .collect();
        picks.sort_unstable();
        kept.extend(picks);
    }
    Ok(kept)
}

fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut x = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Normal scores `Phi^{-1}(u)` of every column.
pub fn z_scale(u_data: &[Vec<f64>]) -> Vec<Vec<f64>> {
    u_data
        .iter()
        .map(|c| c.iter().map(|&u| norm_quantile(clamp_u(u))).collect())
        .collect()
}

/// Current fit during selection.
struct Fit {
    vine: FittedVine,
    state: ConditioningState,
}

/// C-vine chains per predictor, advanced lazily to the current depth.
struct ChainCache(Mutex<HashMap<usize, PredictorChain>>);

impl ChainCache {
    fn take(&self, var: usize) -> Option<PredictorChain> {
        self.0.lock().expect("chain cache").remove(&var)
    }

    fn get(&self, var: usize) -> Option<PredictorChain> {
        self.0.lock().expect("chain cache").get(&var).cloned()
    }

    fn put(&self, chain: PredictorChain) {
        self.0.lock().expect("chain cache").insert(chain.var(), chain);
    }
}

struct Selector<'a> {
    u: &'a [Vec<f64>],
    z: Vec<Vec<f64>>,
    response: usize,
    config: SelectionConfig,
    chains: ChainCache,
}

impl Selector<'_> {
    /// Chain of `var` at the depth of `fit`, using and refreshing the cache.
    fn chain(&self, fit: &Fit, var: usize) -> Result<PredictorChain> {
        let prior = self.chains.take(var);
        let chain = fit.vine.advance_chain(&fit.state, var, &self.u[var], prior)?;
        self.chains.put(chain.clone());
        Ok(chain)
    }

    fn extend(&self, fit: &Fit, var: usize) -> Result<Fit> {
        let (vine, state) = match self.config.kind {
            VineKind::D => fit.vine.extend_one(&fit.state, var, &self.u[var])?,
            VineKind::C => fit.vine.extend_with_chain(&fit.state, self.chain(fit, var)?)?,
        };
        Ok(Fit { vine, state })
    }

    /// cll of `base` (already containing the candidate) extended by `j`.
    /// C-vine chains through the candidate are not cached since they depend
    /// on it.
    fn lookahead_cll(&self, base: &Fit, outer: &Fit, j: usize) -> Result<f64> {
        let state = match self.config.kind {
            VineKind::D => base.vine.extend_one(&base.state, j, &self.u[j])?.1,
            VineKind::C => {
                let prior = match self.chains.get(j) {
                    Some(c) if c.depth() == outer.vine.order().len() => c,
                    _ => self.chain(outer, j)?,
                };
                let chain = base.vine.advance_chain(&base.state, j, &self.u[j], Some(prior))?;
                base.vine.extend_with_chain(&base.state, chain)?.1
            }
        };
        Ok(state.cll())
    }

    fn candidates(&self, available: &[usize], chosen: &[usize]) -> Result<Vec<usize>> {
        let k = self.config.k.min(available.len());
        if chosen.is_empty() {
            prescreen_step1(self.u, self.response, available, k)
        } else {
            let rho = partial_correlation_scores(&self.z, self.response, available, chosen)?;
            Ok(top_by_abs(available, &rho, k))
        }
    }

    fn partners(&self, available: &[usize], chosen: &[usize], c: usize) -> Result<Vec<usize>> {
        if self.config.strategy == Strategy::OneStep {
            return Ok(Vec::new());
        }
        let rest: Vec<usize> = available.iter().copied().filter(|&j| j != c).collect();
        match &self.config.reduction {
            None => Ok(rest),
            Some(red) => reduce_future_set(&rest, &self.z, self.response, chosen, c, red),
        }
    }

    fn step(&self, fit: &Fit, available: &[usize]) -> Result<(SelectionStep, Fit)> {
        let chosen = &fit.vine.order().predictors;
        let candidate_set = self.candidates(available, chosen)?;
        let partner_sets = candidate_set
            .iter()
            .map(|&c| self.partners(available, chosen, c))
            .collect::<Result<Vec<_>>>()?;
        if self.config.kind == VineKind::C {
            // bring every chain in use to the current depth before the
            // candidate models share them
            let mut vars: Vec<usize> = candidate_set
                .iter()
                .chain(partner_sets.iter().flatten())
                .copied()
                .collect();
            vars.sort_unstable();
            vars.dedup();
            map_range(vars.len(), |i| self.chain(fit, vars[i]).map(|_| ()))
                .into_iter()
                .collect::<Result<()>>()?;
        }
        let extended = map_range(candidate_set.len(), |i| self.extend(fit, candidate_set[i]))
            .into_iter()
            .collect::<Result<Vec<Fit>>>()?;
        let tasks: Vec<(usize, usize)> = partner_sets
            .iter()
            .enumerate()
            .flat_map(|(i, js)| js.iter().map(move |&j| (i, j)))
            .collect();
        let look = map_range(tasks.len(), |t| {
            let (i, j) = tasks[t];
            self.lookahead_cll(&extended[i], fit, j)
        })
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
        let mut evaluations = Vec::with_capacity(tasks.len().max(candidate_set.len()));
        let mut look_iter = tasks.iter().zip(look);
        for (i, &c) in candidate_set.iter().enumerate() {
            if partner_sets[i].is_empty() {
                evaluations.push(Evaluation {
                    candidate: c,
                    partner: None,
                    cll: extended[i].state.cll(),
                });
            } else {
                for _ in 0..partner_sets[i].len() {
                    let (&(_, j), cll) = look_iter.next().expect("one result per task");
                    evaluations.push(Evaluation {
                        candidate: c,
                        partner: Some(j),
                        cll,
                    });
                }
            }
        }
        let best = evaluations
            .iter()
            .copied()
            .reduce(better)
            .expect("nonempty candidate set");
        let idx = candidate_set
            .iter()
            .position(|&c| c == best.candidate)
            .expect("candidate");
        let next = extended.into_iter().nth(idx).expect("extension per candidate");
        let step = SelectionStep {
            candidate_set,
            evaluations,
            chosen: best.candidate,
            partner: best.partner,
            score: best.cll,
            cll: next.state.cll(),
        };
        Ok((step, next))
    }
}

/// Forward selection over all columns other than `response`, with the
/// strategy given in `config`. `u_data[v]` is the u-scale column of `v`.
pub fn forward_select(
    u_data: &[Vec<f64>],
    response: usize,
    config: &SelectionConfig,
) -> Result<(SelectionTrace, FittedVine)> {
    let predictors: Vec<usize> = (0..u_data.len()).filter(|&j| j != response).collect();
    select_from(u_data, response, &predictors, config)
}

/// Forward selection restricted to the listed predictors.
pub fn select_from(
    u_data: &[Vec<f64>],
    response: usize,
    predictors: &[usize],
    config: &SelectionConfig,
) -> Result<(SelectionTrace, FittedVine)> {
    let p = predictors.len();
    config.validate(p)?;
    VineOrder::new(config.kind, response, predictors.to_vec())?;
    let (vine, state) = FittedVine::empty(config.kind, response, u_data)?;
    let sel = Selector {
        u: u_data,
        z: z_scale(u_data),
        response,
        config: *config,
        chains: ChainCache(Mutex::new(HashMap::new())),
    };
    let budget = config.max_predictors.unwrap_or(p).min(p);
    let mut fit = Fit { vine, state };
    let mut available = predictors.to_vec();
    let mut steps = Vec::with_capacity(budget);
    while steps.len() < budget {
        let (step, next) = sel.step(&fit, &available)?;
        available.retain(|&j| j != step.chosen);
        steps.push(step);
        fit = next;
    }
    let trace = SelectionTrace {
        config: *config,
        steps,
        final_order: fit.vine.order().clone(),
    };
    Ok((trace, fit.vine))
}

/// Forward selection scoring each candidate by its own extension.
pub fn one_step_select(
    u_data: &[Vec<f64>],
    response: usize,
    config: &SelectionConfig,
) -> Result<(SelectionTrace, FittedVine)> {
    forward_select(
        u_data,
        response,
        &SelectionConfig {
            strategy: Strategy::OneStep,
            ..*config
        },
    )
}

/// Forward selection scoring each candidate by its best extension with one
/// further predictor.
pub fn two_step_select(
    u_data: &[Vec<f64>],
    response: usize,
    config: &SelectionConfig,
) -> Result<(SelectionTrace, FittedVine)> {
    forward_select(
        u_data,
        response,
        &SelectionConfig {
            strategy: Strategy::TwoStep,
            ..*config
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduction_sizes() {
        let r = Reduction {
            pc_fraction: 0.1,
            random_fraction: 0.1,
            seed: 0,
        };
        assert_eq!(r.kept(105), (11, 10));
        assert_eq!(r.kept(100), (10, 10));
        assert_eq!(r.kept(3), (1, 0));
        assert_eq!(r.kept(0), (0, 0));
        let none = Reduction {
            pc_fraction: 0.0,
            random_fraction: 0.0,
            seed: 0,
        };
        assert_eq!(none.kept(50), (0, 0));
        let bad = Reduction {
            pc_fraction: 0.7,
            random_fraction: 0.5,
            seed: 0,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn tie_break_prefers_lower_index() {
        let a = Evaluation {
            candidate: 3,
            partner: Some(5),
            cll: 1.0,
        };
        let b = Evaluation {
            candidate: 2,
            partner: Some(7),
            cll: 1.0,
        };
        assert_eq!(better(a, b), b);
        assert_eq!(better(b, a), b);
        let c = Evaluation { cll: 1.5, ..a };
        assert_eq!(better(b, c), c);
        assert_eq!(top_by_abs(&[4, 1, 2], &[0.5, -0.5, 0.1], 2), vec![1, 4]);
    }

    #[test]
    fn config_guards() {
        let c = SelectionConfig::new(VineKind::D, Strategy::TwoStep, 0);
        assert!(c.validate(3).is_err());
        let c = SelectionConfig::new(VineKind::D, Strategy::TwoStep, 4);
        assert!(c.validate(3).is_err());
        let c = SelectionConfig {
            max_predictors: Some(0),
            ..SelectionConfig::new(VineKind::D, Strategy::TwoStep, 2)
        };
        assert!(c.validate(3).is_err());
    }
}
