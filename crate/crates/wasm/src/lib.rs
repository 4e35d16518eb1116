//! Browser bindings: draw a simulation setting, fit a vine quantile
//! regression and look at its quantile curves, and view a fitted pair
//! copula density. Every entry point returns a JSON string.

use serde::Serialize;
use vineqr::copula::fit_tll;
use vineqr::marginals::{fit_marginals, pseudo_observations};
use vineqr::metrics::{check_loss, interval_score};
use vineqr::regression::{MarginSpec, ModelId, VineQuantileRegression};
use vineqr::select::SelectionConfig;
use vineqr::simgen::{gen_setting, GeneratedData, SettingId, SettingSpec};
use wasm_bindgen::prelude::*;

/// Levels drawn as quantile curves.
pub const CURVE_ALPHAS: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];
const CURVE_POINTS: usize = 60;
/// Largest sample the page accepts; fits run on the main thread.
pub const MAX_N: usize = 1000;

#[derive(Debug, Serialize)]
pub struct Sample {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize)]
pub struct TraceStep {
    pub step: usize,
    pub chosen: String,
    pub cll: f64,
}

#[derive(Debug, Serialize)]
pub struct FitSummary {
    pub model: String,
    pub order: Vec<String>,
    pub trace: Vec<TraceStep>,
    /// Predictor swept along the curves; the others sit at their medians.
    pub sweep: String,
    pub x: Vec<f64>,
    /// `curves[a][i]`: level `CURVE_ALPHAS[a]` at `x[i]`.
    pub curves: Vec<Vec<f64>>,
    pub alphas: Vec<f64>,
    pub scatter_x: Vec<f64>,
    pub scatter_y: Vec<f64>,
    /// Out-of-sample check loss at 0.05, 0.5, 0.95 and the 95% interval score.
    pub check_loss: Vec<f64>,
    pub interval_score: f64,
}

#[derive(Debug, Serialize)]
pub struct DensityGrid {
    pub u: Vec<f64>,
    /// `density[i][j]` at `(u[i], u[j])`.
    pub density: Vec<Vec<f64>>,
    pub max: f64,
}

fn setting(letter: &str, n: usize) -> Result<SettingId, String> {
    if !(20..=MAX_N).contains(&n) {
        return Err(format!("sample size must lie in 20..={MAX_N}"));
    }
    SettingId::parse(letter).map_err(|e| e.to_string())
}

fn generate(letter: &str, n: usize, seed: u64) -> Result<GeneratedData, String> {
    let id = setting(letter, n)?;
    if id.n_covariates() > 10 {
        return Err("the high-dimensional settings are too slow for the browser".into());
    }
    gen_setting(&SettingSpec::new(id, 0.1, n, seed)).map_err(|e| e.to_string())
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    sorted[((sorted.len() - 1) as f64 * p).round() as usize]
}

pub fn simulate_sample(letter: &str, n: usize, seed: u64) -> Result<Sample, String> {
    let d = generate(letter, n, seed)?;
    Ok(Sample {
        names: d.names,
        columns: d.train,
    })
}

pub fn fit_summary(letter: &str, n: usize, seed: u64, model: &str) -> Result<FitSummary, String> {
    let d = generate(letter, n, seed)?;
    let id = ModelId::parse(model).map_err(|e| e.to_string())?;
    let p = d.train.len() - 1;
    let config = SelectionConfig::new(id.kind, id.strategy, p);
    let margins = match setting(letter, n)? {
        SettingId::E | SettingId::F => MarginSpec::Uniform,
        _ => MarginSpec::Kde,
    };
    let fitted = VineQuantileRegression::fit(&d.train, 0, &config, margins).map_err(|e| e.to_string())?;
    let order = &fitted.vine().order().predictors;
    let sweep = order[0];

    let mut sorted = d.train[sweep].clone();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (quantile(&sorted, 0.02), quantile(&sorted, 0.98));
    let x: Vec<f64> = (0..CURVE_POINTS)
        .map(|i| lo + (hi - lo) * i as f64 / (CURVE_POINTS - 1) as f64)
        .collect();
    let grid: Vec<Vec<f64>> = d
        .train
        .iter()
        .enumerate()
        .map(|(j, c)| {
            if j == sweep {
                x.clone()
            } else {
                vec![median(c); CURVE_POINTS]
            }
        })
        .collect();
    let curves = fitted.predict(&CURVE_ALPHAS, &grid).map_err(|e| e.to_string())?;

    let levels = [0.05, 0.5, 0.95, 0.025, 0.975];
    let q = fitted.predict(&levels, &d.eval).map_err(|e| e.to_string())?;
    let y = &d.eval[0];
    let check_loss = (0..3)
        .map(|i| check_loss(y, &q[i], levels[i]))
        .collect::<vineqr::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    let interval_score = interval_score(y, &q[3], &q[4], 0.05).map_err(|e| e.to_string())?;

    Ok(FitSummary {
        model: id.describe(),
        order: order.iter().map(|&v| d.names[v].clone()).collect(),
        trace: fitted
            .trace()
            .steps
            .iter()
            .enumerate()
            .map(|(i, s)| TraceStep {
                step: i + 1,
                chosen: d.names[s.chosen].clone(),
                cll: s.cll,
            })
            .collect(),
        sweep: d.names[sweep].clone(),
        x,
        curves,
        alphas: CURVE_ALPHAS.to_vec(),
        scatter_x: d.train[sweep].clone(),
        scatter_y: d.train[0].clone(),
        check_loss,
        interval_score,
    })
}

pub fn pair_density(
    letter: &str,
    n: usize,
    seed: u64,
    a: usize,
    b: usize,
    points: usize,
) -> Result<DensityGrid, String> {
    let d = generate(letter, n, seed)?;
    if a >= d.train.len() || b >= d.train.len() || a == b {
        return Err("pick two different columns".into());
    }
    if !(2..=200).contains(&points) {
        return Err("grid size must lie in 2..=200".into());
    }
    let cols = vec![d.train[a].clone(), d.train[b].clone()];
    let u = pseudo_observations(&cols, &fit_marginals(&cols).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let cop = fit_tll(&u[0], &u[1]).map_err(|e| e.to_string())?;
    let nodes: Vec<f64> = (0..points).map(|i| (i as f64 + 0.5) / points as f64).collect();
    let density: Vec<Vec<f64>> = nodes
        .iter()
        .map(|&s| nodes.iter().map(|&t| cop.pdf(s, t)).collect())
        .collect();
    let max = density.iter().flatten().cloned().fold(0.0, f64::max);
    Ok(DensityGrid { u: nodes, density, max })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

/// Training sample of a setting as `{names, columns}`.
#[wasm_bindgen]
pub fn simulate(setting: &str, n: usize, seed: u64) -> Result<String, JsValue> {
    to_js(simulate_sample(setting, n, seed))
}

/// Fits model `d1`, `d2`, `c1` or `c2` and returns its selection trace,
/// quantile curves and out-of-sample scores.
#[wasm_bindgen]
pub fn fit(setting: &str, n: usize, seed: u64, model: &str) -> Result<String, JsValue> {
    to_js(fit_summary(setting, n, seed, model))
}

/// Nonparametric copula density of columns `a` and `b` on a `points`-square grid.
#[wasm_bindgen]
pub fn copula_density(
    setting: &str,
    n: usize,
    seed: u64,
    a: usize,
    b: usize,
    points: usize,
) -> Result<String, JsValue> {
    to_js(pair_density(setting, n, seed, a, b, points))
}
