//! Univariate margins: Gaussian-kernel density estimates tabulated on a grid,
//! with the probability-integral transform and its inverse.

use serde::{Deserialize, Serialize};

use crate::error::{Result, VineError};
use crate::special::{clamp_u, gaussian_ramp, INV_SQRT_2PI};

/// Number of abscissae in a fitted marginal grid.
pub const MARGINAL_GRID: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarginalKind {
    /// Kernel density estimate on the original scale.
    Kde,
    /// Identity transform for data already on the copula scale.
    Uniform,
}

/// Density and distribution function tabulated on an equispaced grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalModel {
    pub kind: MarginalKind,
    pub grid_x: Vec<f64>,
    pub density: Vec<f64>,
    pub cdf: Vec<f64>,
    pub bandwidth: f64,
    pub support: (f64, f64),
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Normal-reference bandwidth `1.06 sd N^(-1/5)`.
pub fn normal_reference_bandwidth(sd: f64, n: usize) -> f64 {
    1.06 * sd * (n as f64).powf(-0.2)
}

pub fn fit_marginal(samples: &[f64], bandwidth: Option<f64>) -> Result<MarginalModel> {
    if samples.len() < 2 {
        return Err(VineError::InsufficientSample {
            needed: 2,
            got: samples.len(),
        });
    }
    if let Some(bad) = samples.iter().find(|v| !v.is_finite()) {
        return Err(VineError::NonFinite(format!("sample value {bad}")));
    }
    let (_, sd) = mean_sd(samples);
    if !(sd > 0.0) {
        return Err(VineError::DegenerateSample("sample has zero variance".into()));
    }
    let h = match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => return Err(VineError::Parameter(format!("bandwidth {h} must be positive"))),
        None => normal_reference_bandwidth(sd, samples.len()),
    };
    let (min, max) = samples.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let lo = min - 3.0 * h;
    let hi = max + 3.0 * h;
    let step = (hi - lo) / (MARGINAL_GRID - 1) as f64;
    let grid_x: Vec<f64> = (0..MARGINAL_GRID).map(|i| lo + i as f64 * step).collect();

    let mut density = vec![0.0; MARGINAL_GRID];
    let mut ramp = vec![0.0; MARGINAL_GRID];
    for &x in samples {
        gaussian_ramp(lo, step, x, h, &mut ramp);
        for (d, r) in density.iter_mut().zip(&ramp) {
            *d += r;
        }
    }
    let norm = INV_SQRT_2PI / (h * samples.len() as f64);
    density.iter_mut().for_each(|d| *d *= norm);

    let mut cdf = vec![0.0; MARGINAL_GRID];
    for i in 1..MARGINAL_GRID {
        cdf[i] = cdf[i - 1] + 0.5 * step * (density[i - 1] + density[i]);
    }
    let total = cdf[MARGINAL_GRID - 1];
    cdf.iter_mut().for_each(|c| *c /= total);
    cdf[MARGINAL_GRID - 1] = 1.0;

    Ok(MarginalModel {
        kind: MarginalKind::Kde,
        grid_x,
        density,
        cdf,
        bandwidth: h,
        support: (lo, hi),
    })
}

impl MarginalModel {
    /// Identity margin on `[0, 1]`, used when the data is already on the u-scale.
    pub fn uniform() -> Self {
        MarginalModel {
            kind: MarginalKind::Uniform,
            grid_x: vec![0.0, 1.0],
            density: vec![1.0, 1.0],
            cdf: vec![0.0, 1.0],
            bandwidth: 1.0,
            support: (0.0, 1.0),
        }
    }

    fn step(&self) -> f64 {
        (self.support.1 - self.support.0) / (self.grid_x.len() - 1) as f64
    }

    /// Interpolated distribution function, clamped to `[δ, 1−δ]`.
    pub fn cdf(&self, x: f64) -> f64 {
        let (lo, hi) = self.support;
        if x.is_nan() {
            return f64::NAN;
        }
        if x <= lo {
            return clamp_u(0.0);
        }
        if x >= hi {
            return clamp_u(1.0);
        }
        let pos = (x - lo) / self.step();
        let i = (pos.floor() as usize).min(self.grid_x.len() - 2);
        let t = pos - i as f64;
        clamp_u(self.cdf[i] + t * (self.cdf[i + 1] - self.cdf[i]))
    }

    /// Interpolated density (zero outside the support).
    pub fn pdf(&self, x: f64) -> f64 {
        let (lo, hi) = self.support;
        if !(x >= lo && x <= hi) {
            return 0.0;
        }
        let pos = (x - lo) / self.step();
        let i = (pos.floor() as usize).min(self.grid_x.len() - 2);
        let t = pos - i as f64;
        self.density[i] + t * (self.density[i + 1] - self.density[i])
    }

    /// Inverse of the interpolated distribution function.
    pub fn quantile(&self, alpha: f64) -> Result<f64> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(VineError::Domain(format!("quantile level {alpha} outside (0, 1)")));
        }
        let i = self.cdf.partition_point(|&c| c < alpha).max(1);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let (x0, x1) = (self.grid_x[i - 1], self.grid_x[i]);
        let t = if c1 > c0 { (alpha - c0) / (c1 - c0) } else { 0.0 };
        Ok(x0 + t * (x1 - x0))
    }

    pub fn grid_step(&self) -> f64 {
        self.step()
    }
}

/// Applies each column's fitted margin. `columns[j][n]` is observation `n`
/// of variable `j`.
pub fn pseudo_observations(columns: &[Vec<f64>], models: &[MarginalModel]) -> Result<Vec<Vec<f64>>> {
    if columns.len() != models.len() {
        return Err(VineError::Dimension(format!(
            "{} columns but {} marginal models",
            columns.len(),
            models.len()
        )));
    }
    Ok(columns
        .iter()
        .zip(models)
        .map(|(col, m)| col.iter().map(|&x| m.cdf(x)).collect())
        .collect())
}

/// Fits one margin per column.
pub fn fit_marginals(columns: &[Vec<f64>]) -> Result<Vec<MarginalModel>> {
    columns.iter().map(|c| fit_marginal(c, None)).collect()
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn model(seed: u64) -> MarginalModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<f64> = (0..300)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z.exp()
            })
            .collect();
        fit_marginal(&xs, None).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn cdf_is_monotone(seed in 0u64..8, a in -2.0f64..30.0, b in -2.0f64..30.0) {
            let m = model(seed);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(m.cdf(lo) <= m.cdf(hi));
        }

        #[test]
        fn quantile_is_monotone_and_inverts(seed in 0u64..8) {
            let m = model(seed);
            let mut prev = f64::NEG_INFINITY;
            for i in 1..100 {
                let a = i as f64 / 100.0;
                let q = m.quantile(a).unwrap();
                prop_assert!(q >= prev);
                prev = q;
                prop_assert!((m.cdf(q) - a).abs() <= 1e-6);
            }
        }
    }
}
