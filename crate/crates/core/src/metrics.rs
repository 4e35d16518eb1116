//! Out-of-sample scores for quantile predictions and a replication harness.

use serde::{Deserialize, Serialize};

use crate::error::{Result, VineError};
use crate::par::map_range;
use crate::regression::{MarginSpec, ModelId, VineQuantileRegression};
use crate::select::{Reduction, SelectionConfig};

/// Check-loss levels reported by [`replicate_benchmark`].
pub const REPORT_ALPHAS: [f64; 3] = [0.05, 0.5, 0.95];
/// Miscoverage level of the reported prediction interval.
pub const INTERVAL_ALPHA: f64 = 0.05;

/// Pinball loss `z (alpha - 1{z < 0})`.
pub fn pinball(z: f64, alpha: f64) -> f64 {
    if z < 0.0 {
        z * (alpha - 1.0)
    } else {
        z * alpha
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(VineError::Domain(format!("level {alpha} outside (0, 1)")))
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(VineError::Dimension(format!("{a} observations and {b} predictions")));
    }
    if a == 0 {
        return Err(VineError::InsufficientSample { needed: 1, got: 0 });
    }
    Ok(())
}

/// Mean pinball loss of `y_pred` as level-`alpha` quantiles of `y_true`.
pub fn check_loss(y_true: &[f64], y_pred: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    check_lengths(y_true.len(), y_pred.len())?;
    let total: f64 = y_true.iter().zip(y_pred).map(|(y, q)| pinball(y - q, alpha)).sum();
    Ok(total / y_true.len() as f64)
}

/// Mean interval score of the central `(1 - alpha)` intervals
/// `[lower, upper]`: width plus `2 / alpha` times the distance to the
/// interval for observations outside it.
pub fn interval_score(y_true: &[f64], lower: &[f64], upper: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    check_lengths(y_true.len(), lower.len())?;
    check_lengths(y_true.len(), upper.len())?;
    let k = 2.0 / alpha;
    let total: f64 = y_true
        .iter()
        .zip(lower.iter().zip(upper))
        .map(|(&y, (&l, &u))| (u - l) + k * (l - y).max(0.0) + k * (y - u).max(0.0))
        .sum();
    Ok(total / y_true.len() as f64)
}

/// Something that learns from training columns (response in column 0) and
/// predicts conditional quantiles for evaluation rows.
pub trait QuantileFitter: Sync {
    fn name(&self) -> String;

    /// Returns `out[a][n]` for level `alphas[a]` and evaluation row `n`.
    /// `eval[0]` holds the response and must not be used.
    fn fit_predict(&self, train: &[Vec<f64>], eval: &[Vec<f64>], alphas: &[f64]) -> Result<Vec<Vec<f64>>>;
}

/// One of the four vine competitors.
#[derive(Debug, Clone, Copy)]
pub struct VineFitter {
    pub model: ModelId,
    /// Candidates per step; all remaining predictors when `None`.
    pub k: Option<usize>,
    pub reduction: Option<Reduction>,
    pub margins: MarginSpec,
}

impl VineFitter {
    pub fn new(model: ModelId) -> Self {
        VineFitter {
            model,
            k: None,
            reduction: None,
            margins: MarginSpec::Kde,
        }
    }
}

impl QuantileFitter for VineFitter {
    fn name(&self) -> String {
        self.model.label()
    }

    fn fit_predict(&self, train: &[Vec<f64>], eval: &[Vec<f64>], alphas: &[f64]) -> Result<Vec<Vec<f64>>> {
        let p = train.len().saturating_sub(1);
        let mut config = SelectionConfig::new(self.model.kind, self.model.strategy, self.k.unwrap_or(p).min(p));
        config.reduction = self.reduction;
        let model = VineQuantileRegression::fit(train, 0, &config, self.margins)?;
        model.predict(alphas, eval)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationScores {
    pub replication: usize,
    /// Check loss per level of [`MetricsReport::alphas`].
    pub check_loss: Vec<f64>,
    pub interval_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub alphas: Vec<f64>,
    pub interval_alpha: f64,
    /// Mean check loss per level over successful replications.
    pub check_loss: Vec<f64>,
    pub interval_score: f64,
    /// Successful replications.
    pub replications: usize,
    pub failures: usize,
    pub n_eval: usize,
    pub raw: Vec<ReplicationScores>,
}

impl MetricsReport {
    pub fn check_loss_at(&self, alpha: f64) -> Option<f64> {
        self.alphas
            .iter()
            .position(|&a| (a - alpha).abs() < 1e-12)
            .map(|i| self.check_loss[i])
    }
}

fn score_replication(preds: &[Vec<f64>], y: &[f64], replication: usize) -> Result<ReplicationScores> {
    // prediction rows: the report levels, then the interval bounds
    let check_loss = REPORT_ALPHAS
        .iter()
        .zip(preds)
        .map(|(&a, q)| check_loss(y, q, a))
        .collect::<Result<Vec<f64>>>()?;
    let (lower, upper) = (&preds[REPORT_ALPHAS.len()], &preds[REPORT_ALPHAS.len() + 1]);
    let interval_score = interval_score(y, lower, upper, INTERVAL_ALPHA)?;
    if check_loss.iter().chain([&interval_score]).any(|v| !v.is_finite()) {
        return Err(VineError::NonFinite("score".into()));
    }
    Ok(ReplicationScores {
        replication,
        check_loss,
        interval_score,
    })
}

/// Child seed of replication `r`.
pub fn replication_seed(seed: u64, r: usize) -> u64 {
    let mut x = seed.wrapping_add((r as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Runs `replications` rounds of: draw train/eval data from `generate`
/// (given the round's seed), fit every competitor, and score its
/// predictions at [`REPORT_ALPHAS`] and the `1 - INTERVAL_ALPHA` interval.
/// Failed fits are counted and excluded.
pub fn replicate_benchmark<G>(
    generate: G,
    fitters: &[&dyn QuantileFitter],
    replications: usize,
    seed: u64,
) -> Result<Vec<MetricsReport>>
where
    G: Fn(u64) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> + Sync,
{
    if replications == 0 {
        return Err(VineError::Config("at least one replication is required".into()));
    }
    let mut levels = REPORT_ALPHAS.to_vec();
    levels.extend([INTERVAL_ALPHA / 2.0, 1.0 - INTERVAL_ALPHA / 2.0]);
    let rounds = map_range(replications, |r| -> Result<(usize, Vec<Option<ReplicationScores>>)> {
        let (train, eval) = generate(replication_seed(seed, r))?;
        let y = eval
            .first()
            .ok_or_else(|| VineError::Dimension("evaluation data has no columns".into()))?;
        let scores = fitters
            .iter()
            .map(|f| {
                f.fit_predict(&train, &eval, &levels)
                    .and_then(|p| score_replication(&p, y, r))
                    .ok()
            })
            .collect();
        Ok((y.len(), scores))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let n_eval = rounds.first().map_or(0, |r| r.0);
    Ok(fitters
        .iter()
        .enumerate()
        .map(|(m, f)| {
            let raw: Vec<ReplicationScores> = rounds.iter().filter_map(|r| r.1[m].clone()).collect();
            let count = raw.len();
            let mean = |g: &dyn Fn(&ReplicationScores) -> f64| {
                if count == 0 {
                    f64::NAN
                } else {
                    raw.iter().map(g).sum::<f64>() / count as f64
                }
            };
            MetricsReport {
                model: f.name(),
                alphas: REPORT_ALPHAS.to_vec(),
                interval_alpha: INTERVAL_ALPHA,
                check_loss: (0..REPORT_ALPHAS.len()).map(|i| mean(&|s| s.check_loss[i])).collect(),
                interval_score: mean(&|s| s.interval_score),
                replications: count,
                failures: replications - count,
                n_eval,
                raw,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn check_loss_hand_cases() {
        assert_eq!(check_loss(&[1.0, 2.0], &[1.0, 2.0], 0.3).unwrap(), 0.0);
        let y = [1.0, -1.0];
        let q = [0.0, 0.0];
        assert!((check_loss(&y, &q, 0.5).unwrap() - 0.5).abs() < 1e-12);
        assert!((check_loss(&y, &q, 0.95).unwrap() - 0.5).abs() < 1e-12);
        assert!(check_loss(&y, &q[..1], 0.5).is_err());
        assert!(check_loss(&y, &q, 1.0).is_err());
    }

    #[test]
    fn interval_score_hand_cases() {
        assert!((interval_score(&[0.0], &[1.0], &[2.0], 0.05).unwrap() - 41.0).abs() < 1e-12);
        assert!((interval_score(&[3.0], &[1.0], &[2.0], 0.05).unwrap() - 41.0).abs() < 1e-12);
        let width = interval_score(&[1.5, 1.2], &[1.0, 0.0], &[2.0, 2.0], 0.1).unwrap();
        assert!((width - 1.5).abs() < 1e-12);
        assert!(interval_score(&[1.0], &[0.0, 1.0], &[2.0], 0.1).is_err());
    }

    #[test]
    fn replication_seeds_differ() {
        let s: Vec<u64> = (0..100).map(|r| replication_seed(7, r)).collect();
        let mut d = s.clone();
        d.sort_unstable();
        d.dedup();
        assert_eq!(d.len(), 100);
        assert_eq!(replication_seed(7, 3), s[3]);
    }

    proptest! {
        #[test]
        fn pinball_nonnegative(z in -100.0f64..100.0, alpha in 0.001f64..0.999) {
            let g = pinball(z, alpha);
            prop_assert!(g >= 0.0);
            prop_assert_eq!(g == 0.0, z == 0.0);
        }

        #[test]
        fn interval_score_at_least_width(
            rows in prop::collection::vec((-10.0f64..10.0, -5.0f64..5.0, 0.0f64..5.0), 1..30),
            alpha in 0.01f64..0.5,
        ) {
            let y: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let lo: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let hi: Vec<f64> = rows.iter().map(|r| r.1 + r.2).collect();
            let width = rows.iter().map(|r| r.2).sum::<f64>() / rows.len() as f64;
            let is = interval_score(&y, &lo, &hi, alpha).unwrap();
            let covered = rows.iter().all(|r| r.0 >= r.1 && r.0 <= r.1 + r.2);
            prop_assert!(is >= width - 1e-12);
            prop_assert_eq!((is - width).abs() <= 1e-12, covered);
        }
    }
}
