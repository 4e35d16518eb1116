//! Bandwidth selection for the transformation estimator: principal axes of
//! the z-scale sample, then least-squares cross-validation per axis using a
//! local log-quadratic univariate density estimate.

use serde::{Deserialize, Serialize};

use crate::error::{Result, VineError};
use crate::numeric::golden_section_min;
use crate::special::{fast_exp_neg, INV_SQRT_2PI};

use super::tll::{Degree, ZPoints};

/// Smallest sample accepted by [`select_bandwidth`].
pub const MIN_BANDWIDTH_SAMPLE: usize = 20;

/// Kernel weights below `exp(-CUTOFF^2 / 2)` are dropped in the CV sums.
const CUTOFF: f64 = 6.0;
const SCAN_POINTS: usize = 12;
const GOLDEN_ITERS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bandwidth {
    /// Symmetric positive definite 2x2 matrix acting on the z-scale.
    pub matrix: [[f64; 2]; 2],
    /// Rows are the principal directions.
    pub rotation: [[f64; 2]; 2],
    /// Cross-validated bandwidths along the principal directions.
    pub h: [f64; 2],
    /// Set when cross-validation was degenerate and the normal reference
    /// rule was used for at least one axis.
    pub fallback: bool,
}

impl Bandwidth {
    pub fn from_matrix(matrix: [[f64; 2]; 2]) -> Result<Self> {
        let (vals, rotation) = sym_eigen(matrix);
        if !(vals[0] > 0.0 && vals[1] > 0.0) || (matrix[0][1] - matrix[1][0]).abs() > 1e-12 {
            return Err(VineError::Parameter(
                "bandwidth matrix must be symmetric positive definite".into(),
            ));
        }
        Ok(Bandwidth {
            matrix,
            rotation,
            h: [vals[0].sqrt(), vals[1].sqrt()],
            fallback: false,
        })
    }

    pub fn isotropic(h: f64) -> Self {
        Bandwidth {
            matrix: [[h * h, 0.0], [0.0, h * h]],
            rotation: [[1.0, 0.0], [0.0, 1.0]],
            h: [h, h],
            fallback: false,
        }
    }

    pub fn det(&self) -> f64 {
        self.matrix[0][0] * self.matrix[1][1] - self.matrix[0][1] * self.matrix[1][0]
    }

    pub fn inverse(&self) -> [[f64; 2]; 2] {
        let d = self.det();
        [
            [self.matrix[1][1] / d, -self.matrix[0][1] / d],
            [-self.matrix[1][0] / d, self.matrix[0][0] / d],
        ]
    }
}

/// Eigen decomposition of a symmetric 2x2 matrix. Returns eigenvalues in
/// decreasing order and the matching unit eigenvectors as rows.
pub fn sym_eigen(m: [[f64; 2]; 2]) -> ([f64; 2], [[f64; 2]; 2]) {
    let (a, b, d) = (m[0][0], 0.5 * (m[0][1] + m[1][0]), m[1][1]);
    let mean = 0.5 * (a + d);
    let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    let (l1, l2) = (mean + rad, mean - rad);
    let theta = 0.5 * (2.0 * b).atan2(a - d);
    let (c, s) = (theta.cos(), theta.sin());
    ([l1, l2], [[c, s], [-s, c]])
}

/// Multiplier applied to the squared bandwidths for the given local degree.
pub fn order_multiplier(n: usize, degree: Degree) -> f64 {
    match degree {
        Degree::Quadratic => (n as f64).powf(1.0 / 45.0),
        Degree::Linear => 1.0,
    }
}

pub fn select_bandwidth(z: &ZPoints, degree: Degree) -> Result<Bandwidth> {
    let n = z.len();
    if n < MIN_BANDWIDTH_SAMPLE {
        return Err(VineError::InsufficientSample {
            needed: MIN_BANDWIDTH_SAMPLE,
            got: n,
        });
    }
    let (mut sss, mut sst, mut stt) = (0.0, 0.0, 0.0);
    for (s, t) in z.s.iter().zip(&z.t) {
        sss += s * s;
        sst += s * t;
        stt += t * t;
    }
    let (_, w) = sym_eigen([[sss, sst], [sst, stt]]);
    let mut h = [0.0; 2];
    let mut fallback = false;
    for (axis, row) in w.iter().enumerate() {
        let mut q: Vec<f64> = z.s.iter().zip(&z.t).map(|(s, t)| row[0] * s + row[1] * t).collect();
        q.sort_by(f64::total_cmp);
        match cv_bandwidth(&q) {
            Some(v) => h[axis] = v,
            None => {
                h[axis] = reference_bandwidth(&q);
                fallback = true;
            }
        }
        if !(h[axis] > 0.0 && h[axis].is_finite()) {
            return Err(VineError::DegenerateSample("zero spread along a principal axis".into()));
        }
    }
    let k = order_multiplier(n, degree);
    let (l1, l2) = (k * h[0] * h[0], k * h[1] * h[1]);
    // W^T diag(l) W
    let mut matrix = [[0.0; 2]; 2];
    for (r, row) in matrix.iter_mut().enumerate() {
        for (c, cell) in row.iter_mut().enumerate() {
            *cell = w[0][r] * l1 * w[0][c] + w[1][r] * l2 * w[1][c];
        }
    }
    let sym = 0.5 * (matrix[0][1] + matrix[1][0]);
    matrix[0][1] = sym;
    matrix[1][0] = sym;
    Ok(Bandwidth {
        matrix,
        rotation: w,
        h,
        fallback,
    })
}

fn std_dev(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn reference_bandwidth(sorted: &[f64]) -> f64 {
    1.06 * std_dev(sorted) * (sorted.len() as f64).powf(-0.2)
}

/// Minimises the least-squares cross-validation criterion over
/// `h in [0.01 sd, 3 sd]`, searching on the log scale. Returns `None` when
/// the criterion is not usable.
fn cv_bandwidth(sorted: &[f64]) -> Option<f64> {
    let sd = std_dev(sorted);
    if !(sd > 0.0) {
        return None;
    }
    let (lo, hi) = ((0.01 * sd).ln(), (3.0 * sd).ln());
    let objective = |lh: f64| lscv(sorted, lh.exp());
    // coarse scan to bracket the global minimum, then golden-section refinement
    let step = (hi - lo) / (SCAN_POINTS - 1) as f64;
    let values: Vec<f64> = (0..SCAN_POINTS).map(|i| objective(lo + i as f64 * step)).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let (best, _) = values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
    let spread =
        values.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - values.iter().cloned().fold(f64::INFINITY, f64::min);
    if spread <= 1e-12 * values[best].abs().max(1e-300) {
        return None;
    }
    let a = lo + best.saturating_sub(1) as f64 * step;
    let b = lo + (best + 1).min(SCAN_POINTS - 1) as f64 * step;
    let (lh, val) = golden_section_min(objective, a, b, GOLDEN_ITERS);
    if !val.is_finite() {
        return None;
    }
    Some(lh.exp())
}

/// Kernel moments about a point: mass, first and second moment of the
/// offsets, and the sum of squared weights.
#[derive(Default, Clone, Copy)]
struct Moments {
    s0: f64,
    s1: f64,
    s2: f64,
    s00: f64,
}

impl Moments {
    #[cfg(test)]
    fn add(&mut self, d: f64, inv2h2: f64) {
        let w = (-d * d * inv2h2).exp();
        self.s0 += w;
        self.s1 += w * d;
        self.s2 += w * d * d;
        self.s00 += w * w;
    }

    /// Local log-quadratic estimate with `n_total` observations and
    /// bandwidth `h`; degrades to local log-linear when the local variance
    /// is not identifiable.
    fn estimate(&self, n_total: f64, h: f64) -> f64 {
        if self.s0 <= 0.0 {
            return 0.0;
        }
        let mu = self.s1 / self.s0;
        let var = self.s2 / self.s0 - mu * mu;
        let ess = self.s0 * self.s0 / self.s00;
        if ess >= 3.0 && var > 1e-4 * h * h {
            let sd = var.sqrt();
            self.s0 * INV_SQRT_2PI / (n_total * sd) * (-0.5 * mu * mu / var).exp()
        } else {
            self.s0 * INV_SQRT_2PI / (n_total * h) * (-0.5 * mu * mu / (h * h)).exp()
        }
    }
}

/// `int f^2 - 2/N sum f_{-n}(q_n)` for the local log-quadratic estimator,
/// with `sorted` in increasing order.
fn lscv(sorted: &[f64], h: f64) -> f64 {
    let n = sorted.len();
    let nf = n as f64;
    let inv2h2 = 1.0 / (2.0 * h * h);
    let reach = CUTOFF * h;

    // leave-one-out moments, each pair visited once
    let mut mom = vec![Moments::default(); n];
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        let q = sorted[i];
        let tail = &sorted[i + 1..];
        let len = tail.partition_point(|&x| x <= q + reach);
        weights.clear();
        weights.extend(tail[..len].iter().map(|&x| fast_exp_neg(-(x - q) * (x - q) * inv2h2)));
        let mut own = mom[i];
        for (k, (&x, &w)) in tail[..len].iter().zip(&weights).enumerate() {
            let d = x - q;
            let (wd, wdd, ww) = (w * d, w * d * d, w * w);
            own.s0 += w;
            own.s1 += wd;
            own.s2 += wdd;
            own.s00 += ww;
            let other = &mut mom[i + 1 + k];
            other.s0 += w;
            other.s1 -= wd;
            other.s2 += wdd;
            other.s00 += ww;
        }
        mom[i] = own;
    }
    let loo: f64 = mom.iter().map(|m| m.estimate(nf - 1.0, h)).sum();

    // trapezoid on an equispaced grid covering the data plus the kernel
    // reach; kernel weights along the grid follow a multiplicative recurrence
    let (a, b) = (sorted[0] - reach, sorted[n - 1] + reach);
    let nodes = ((b - a) / (h / 3.0)).ceil() as usize + 1;
    let step = (b - a) / (nodes - 1) as f64;
    let mut raw = vec![[0.0f64; 4]; nodes];
    let decay = fast_exp_neg(-2.0 * step * step * inv2h2);
    for &x in sorted {
        let first = (((x - reach - a) / step).ceil().max(0.0)) as usize;
        let last = (((x + reach - a) / step).floor() as usize).min(nodes - 1);
        if first > last {
            continue;
        }
        let d0 = x - (a + first as f64 * step);
        let mut w = fast_exp_neg(-d0 * d0 * inv2h2);
        // ratio of consecutive weights as the node moves one step right
        let mut ratio = ((2.0 * d0 * step - step * step) * inv2h2).exp();
        for acc in &mut raw[first..=last] {
            acc[0] += w;
            acc[1] += w * x;
            acc[2] += w * x * x;
            acc[3] += w * w;
            w *= ratio;
            ratio *= decay;
        }
    }
    let mut sq = 0.0;
    for (k, acc) in raw.iter().enumerate() {
        let q = a + k as f64 * step;
        let m = Moments {
            s0: acc[0],
            s1: acc[1] - q * acc[0],
            s2: acc[2] - 2.0 * q * acc[1] + q * q * acc[0],
            s00: acc[3],
        };
        let f = m.estimate(nf, h);
        let wt = if k == 0 || k == nodes - 1 { 0.5 } else { 1.0 };
        sq += wt * f * f;
    }
    sq * step - 2.0 * loo / nf
}
