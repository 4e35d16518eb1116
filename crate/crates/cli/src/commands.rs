use std::fs;
use std::path::Path;

use vineqr::metrics::{
    check_loss, interval_score, replicate_benchmark, QuantileFitter, VineFitter, INTERVAL_ALPHA, REPORT_ALPHAS,
};
use vineqr::persist::ModelFile;
use vineqr::regression::{MarginSpec, VineQuantileRegression};
use vineqr::select::{Reduction, SelectionConfig};
use vineqr::simgen::{gen_setting, SettingId, SettingSpec};

use crate::error::CliError;
use crate::table::{read_table, write_records, write_table, Table};
use crate::{BenchmarkArgs, EvaluateArgs, FitArgs, PredictArgs, ReductionArgs, SimulateArgs};

/// Default number of candidates scored per selection step.
const DEFAULT_K: usize = 5;

pub fn level_name(prefix: &str, alpha: f64) -> String {
    format!("{prefix}_{alpha}")
}

fn reduction(args: &ReductionArgs, seed: u64) -> Option<Reduction> {
    if args.reduce_pc.is_none() && args.reduce_rand.is_none() {
        return None;
    }
    Some(Reduction {
        pc_fraction: args.reduce_pc.unwrap_or(0.0),
        random_fraction: args.reduce_rand.unwrap_or(0.0),
        seed,
    })
}

fn candidates(args: &ReductionArgs, p: usize) -> Result<usize, CliError> {
    let k = args.k.unwrap_or(DEFAULT_K.min(p));
    if k == 0 || k > p {
        return Err(CliError::Usage(format!("--k {k} must lie in 1..={p}")));
    }
    Ok(k)
}

pub fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    if a.n < 2 {
        return Err(CliError::Usage("--n must be at least 2".into()));
    }
    if a.setting.uses_sigma() && !(a.sigma.is_finite() && a.sigma >= 0.0) {
        return Err(CliError::Usage("--sigma must be a finite non-negative number".into()));
    }
    let data = gen_setting(&SettingSpec::new(a.setting, a.sigma, a.n, a.seed))?;
    write_table(a.out.as_deref(), &data.names, &data.train)?;
    if let Some(path) = a.eval_out.as_deref() {
        write_table(Some(path), &data.names, &data.eval)?;
    }
    Ok(())
}

pub fn fit(a: FitArgs) -> Result<(), CliError> {
    let t = read_table(&a.data)?;
    let response = t
        .index_of(&a.response)
        .ok_or_else(|| CliError::Usage(format!("missing response column '{}'", a.response)))?;
    let p = t.names.len() - 1;
    if p == 0 {
        return Err(CliError::Usage("the data has no predictor columns".into()));
    }
    let mut config = SelectionConfig::new(a.vine.into(), a.strategy.into(), candidates(&a.reduction, p)?);
    config.max_predictors = a.max_predictors;
    config.reduction = reduction(&a.reduction, a.seed);
    config.validate(p)?;
    let margins: MarginSpec = a.margins.into();
    let model = VineQuantileRegression::fit(&t.columns, response, &config, margins)?;
    let file = ModelFile::from_model(&model, &t.names, t.rows(), a.seed, margins)?;
    fs::write(&a.out, file.to_json()?)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", a.out.display())))?;

    let mut records = vec![vec!["step".to_string(), "chosen".into(), "cll".into()]];
    records.extend(
        file.metadata
            .trace
            .iter()
            .map(|r| vec![r.step.to_string(), r.chosen.clone(), r.cll.to_string()]),
    );
    let trace = a.trace.unwrap_or_else(|| a.out.with_extension("trace.csv"));
    write_records(Some(&trace), &records)?;
    eprintln!(
        "order: {} | {} | cll {:.4}",
        file.response,
        file.order.join(", "),
        file.metadata.cll
    );
    Ok(())
}

fn load_model(path: &Path) -> Result<ModelFile, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    ModelFile::from_json(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn predict(a: PredictArgs) -> Result<(), CliError> {
    let saved = load_model(&a.model)?
        .load()
        .map_err(|e| CliError::Usage(format!("{}: {e}", a.model.display())))?;
    let t = read_table(&a.data)?;
    if let Some(missing) = saved.variables[1..].iter().find(|v| t.index_of(v).is_none()) {
        return Err(CliError::Usage(format!(
            "{}: missing predictor column '{missing}'",
            a.data.display()
        )));
    }
    let q = saved.predict(&a.alpha, &t.names, &t.columns)?;
    let names: Vec<String> = a.alpha.iter().map(|&x| level_name("q", x)).collect();
    write_table(a.out.as_deref(), &names, &q)
}

fn quantile_column(pred: &Table, alpha: f64) -> Result<&[f64], CliError> {
    pred.names
        .iter()
        .position(|n| {
            n.strip_prefix("q_")
                .and_then(|s| s.parse::<f64>().ok())
                .is_some_and(|a| (a - alpha).abs() < 1e-12)
        })
        .map(|i| pred.columns[i].as_slice())
        .ok_or_else(|| CliError::Usage(format!("missing prediction column '{}'", level_name("q", alpha))))
}

pub fn evaluate(a: EvaluateArgs) -> Result<(), CliError> {
    let pred = read_table(&a.pred)?;
    let truth = read_table(&a.truth)?;
    if pred.rows() != truth.rows() {
        return Err(CliError::Usage(format!(
            "{} has {} rows but {} has {}",
            a.pred.display(),
            pred.rows(),
            a.truth.display(),
            truth.rows()
        )));
    }
    let y = truth.column(&a.response)?;
    let alphas: Vec<f64> = if a.alpha.is_empty() {
        pred.names
            .iter()
            .filter_map(|n| n.strip_prefix("q_").and_then(|s| s.parse().ok()))
            .collect()
    } else {
        a.alpha.clone()
    };
    if alphas.is_empty() && a.interval_alpha.is_none() {
        return Err(CliError::Usage("no q_ columns to score".into()));
    }
    let mut records = vec![vec!["metric".to_string(), "alpha".into(), "value".into()]];
    for &alpha in &alphas {
        let cl = check_loss(y, quantile_column(&pred, alpha)?, alpha)?;
        records.push(vec!["CL".into(), alpha.to_string(), cl.to_string()]);
    }
    if let Some(ia) = a.interval_alpha {
        let lower = quantile_column(&pred, ia / 2.0)?;
        let upper = quantile_column(&pred, 1.0 - ia / 2.0)?;
        let is = interval_score(y, lower, upper, ia)?;
        records.push(vec!["IS".into(), ia.to_string(), is.to_string()]);
    }
    write_records(a.out.as_deref(), &records)
}

pub fn benchmark(a: BenchmarkArgs) -> Result<(), CliError> {
    if a.n_train < 2 {
        return Err(CliError::Usage("--n-train must be at least 2".into()));
    }
    let p = a.setting.n_covariates();
    let k = candidates(&a.reduction, p)?;
    let reduction = reduction(&a.reduction, a.seed);
    if let Some(r) = &reduction {
        r.validate()?;
    }
    // settings e and f are sampled on the copula scale
    let margins = match a.setting {
        SettingId::E | SettingId::F => MarginSpec::Uniform,
        _ => MarginSpec::Kde,
    };
    let fitters: Vec<VineFitter> = a
        .models
        .iter()
        .map(|&model| VineFitter {
            model,
            k: Some(k),
            reduction,
            margins,
        })
        .collect();
    let refs: Vec<&dyn QuantileFitter> = fitters.iter().map(|f| f as &dyn QuantileFitter).collect();
    let (setting, sigma, n) = (a.setting, a.sigma, a.n_train);
    let generate = |seed: u64| {
        let d = gen_setting(&SettingSpec::new(setting, sigma, n, seed))?;
        Ok((d.train, d.eval))
    };
    let reports = replicate_benchmark(generate, &refs, a.replications, a.seed)?;

    let mut header = vec!["model".to_string(), level_name("IS", INTERVAL_ALPHA)];
    header.extend(REPORT_ALPHAS.iter().map(|&x| level_name("CL", x)));
    header.extend(["replications".to_string(), "failures".into()]);
    let mut records = vec![header];
    for r in &reports {
        let mut row = vec![r.model.clone(), r.interval_score.to_string()];
        row.extend(r.check_loss.iter().map(f64::to_string));
        row.extend([r.replications.to_string(), r.failures.to_string()]);
        records.push(row);
    }
    write_records(a.out.as_deref(), &records)
}
