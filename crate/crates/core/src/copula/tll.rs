//! Transformation local likelihood estimator of a bivariate copula density.
//!
//! Data are mapped to the z-scale with the standard normal quantile, the
//! density of the transformed pair is estimated by local log-polynomial
//! likelihood on a `GRID_SIZE x GRID_SIZE` tensor grid, and the copula
//! density follows by dividing out the normal margins. The grid is then
//! rescaled to have uniform margins.
//!
//! Between grid nodes the copula density is linear in each z coordinate and
//! outside the outermost nodes it is held constant. Conditional distribution
//! functions integrate that interpolant exactly over the grid range
//! `|z| <= Z_LIMIT` and are normalised by the integral over that range.

use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::bandwidth::{select_bandwidth, Bandwidth};
use super::Direction;
use crate::error::{Result, VineError};
use crate::special::{clamp_u, norm_cdf, norm_pdf, norm_quantile};

pub const GRID_SIZE: usize = 64;
pub const Z_LIMIT: f64 = 3.5;
const SINKHORN_SWEEPS: usize = 10;
const MAX_SINKHORN_SWEEPS: usize = 500;
const MARGIN_TOL: f64 = 1e-7;
const DENSITY_FLOOR: f64 = 1e-12;
/// Kernel terms with Mahalanobis distance above this are skipped.
const Q_WINDOW: f64 = 60.0;
/// A node whose nearest point is this far away is refitted without the
/// window so that truncated terms cannot matter.
const Q_EXACT: f64 = 24.0;
/// Minimum kernel effective sample size for the quadratic fit.
const MIN_ESS: f64 = 4.0;
const NEWTON_MAX_ITERS: usize = 50;
const NEWTON_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Degree {
    Linear,
    Quadratic,
}

impl Degree {
    pub fn order(self) -> u8 {
        match self {
            Degree::Linear => 1,
            Degree::Quadratic => 2,
        }
    }

    pub fn from_order(m: u8) -> Result<Self> {
        match m {
            1 => Ok(Degree::Linear),
            2 => Ok(Degree::Quadratic),
            _ => Err(VineError::Parameter(format!("polynomial degree {m} not in {{1, 2}}"))),
        }
    }
}

/// How the local likelihood is maximised at each node.
///
/// With a Gaussian kernel the maximiser matches kernel-weighted moments up to
/// the polynomial order, which `Moments` evaluates directly. `Newton` runs
/// the damped Newton iteration on the likelihood itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalSolver {
    Moments,
    Newton,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZPoints {
    pub s: Vec<f64>,
    pub t: Vec<f64>,
}

impl ZPoints {
    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }
}

pub fn z_transform(u: &[f64], v: &[f64]) -> Result<ZPoints> {
    if u.len() != v.len() {
        return Err(VineError::Dimension(format!(
            "{} and {} observations",
            u.len(),
            v.len()
        )));
    }
    let conv = |x: &[f64]| -> Result<Vec<f64>> {
        x.iter()
            .map(|&p| {
                if p > 0.0 && p < 1.0 {
                    Ok(norm_quantile(p))
                } else {
                    Err(VineError::Domain(format!("u-scale value {p} outside (0, 1)")))
                }
            })
            .collect()
    };
    Ok(ZPoints {
        s: conv(u)?,
        t: conv(v)?,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Nodes where the quadratic fit was not identifiable and the log-linear
    /// fit was used.
    pub linear_fallbacks: usize,
    /// Nodes where no polynomial fit succeeded and the plain kernel ratio was
    /// used.
    pub kernel_fallbacks: usize,
    pub newton_iterations: usize,
}

/// Fixed z-scale grid shared by all fits.
struct Grid {
    z: [f64; GRID_SIZE],
    cdf: [f64; GRID_SIZE],
    pdf: [f64; GRID_SIZE],
    step: f64,
    /// Weights of the left and right node in each cell's exact integral.
    cell_a: [f64; GRID_SIZE],
    cell_b: [f64; GRID_SIZE],
    /// Integral weights of each node over the grid range.
    omega: [f64; GRID_SIZE],
}

fn grid() -> &'static Grid {
    static GRID: OnceLock<Grid> = OnceLock::new();
    GRID.get_or_init(|| {
        let step = 2.0 * Z_LIMIT / (GRID_SIZE - 1) as f64;
        let mut g = Grid {
            z: [0.0; GRID_SIZE],
            cdf: [0.0; GRID_SIZE],
            pdf: [0.0; GRID_SIZE],
            step,
            cell_a: [0.0; GRID_SIZE],
            cell_b: [0.0; GRID_SIZE],
            omega: [0.0; GRID_SIZE],
        };
        for k in 0..GRID_SIZE {
            let z = -Z_LIMIT + k as f64 * step;
            g.z[k] = z;
            g.cdf[k] = norm_cdf(z);
            g.pdf[k] = norm_pdf(z);
        }
        for k in 0..GRID_SIZE - 1 {
            let dcdf = g.cdf[k + 1] - g.cdf[k];
            let dpdf = g.pdf[k + 1] - g.pdf[k];
            g.cell_a[k] = (g.z[k + 1] * dcdf + dpdf) / step;
            g.cell_b[k] = (-dpdf - g.z[k] * dcdf) / step;
        }
        for k in 0..GRID_SIZE - 1 {
            g.omega[k] += g.cell_a[k];
            g.omega[k + 1] += g.cell_b[k];
        }
        g
    })
}

/// z-scale grid nodes.
pub fn z_nodes() -> Vec<f64> {
    grid().z.to_vec()
}

/// Integral weights of the grid nodes: for a density that is linear in z
/// between nodes, `sum_k omega_k c_k` is its exact integral over
/// `[Φ(-Z_LIMIT), Φ(Z_LIMIT)]`.
pub fn node_weights() -> Vec<f64> {
    grid().omega.to_vec()
}

/// Locates `z` on the grid: cell index and fractional position, with
/// constant extrapolation outside.
#[inline]
fn locate(z: f64) -> (usize, f64) {
    let g = grid();
    let x = (z - g.z[0]) / g.step;
    if x.is_nan() || x <= 0.0 {
        (0, 0.0)
    } else if x >= (GRID_SIZE - 1) as f64 {
        (GRID_SIZE - 2, 1.0)
    } else {
        let r = x.round();
        // snap to nodes so that queries at a node are exact
        let x = if (x - r).abs() < 1e-9 { r } else { x };
        let k = (x as usize).min(GRID_SIZE - 2);
        (k, x - k as f64)
    }
}

#[derive(Debug, Clone)]
pub struct TllCopula {
    degree: Degree,
    bandwidth: Bandwidth,
    diagnostics: FitDiagnostics,
    /// Normalised copula density at the grid nodes, `[i * G + j]` with `i`
    /// along u.
    density: Vec<f64>,
}

/// Selects the bandwidth and fits the quadratic estimator to u-scale pairs.
pub fn fit_tll(u: &[f64], v: &[f64]) -> Result<TllCopula> {
    let z = z_transform(u, v)?;
    let bw = select_bandwidth(&z, Degree::Quadratic)?;
    fit_copula_density(&z, &bw, Degree::Quadratic)
}

pub fn fit_copula_density(z: &ZPoints, bandwidth: &Bandwidth, degree: Degree) -> Result<TllCopula> {
    fit_copula_density_with(z, bandwidth, degree, LocalSolver::Moments)
}

pub fn fit_copula_density_with(
    z: &ZPoints,
    bandwidth: &Bandwidth,
    degree: Degree,
    solver: LocalSolver,
) -> Result<TllCopula> {
    if z.is_empty() {
        return Err(VineError::InsufficientSample { needed: 1, got: 0 });
    }
    if z.s.len() != z.t.len() {
        return Err(VineError::Dimension("unequal z columns".into()));
    }
    if z.s.iter().chain(&z.t).any(|v| !v.is_finite()) {
        return Err(VineError::NonFinite("z-scale sample".into()));
    }
    let det = bandwidth.det();
    if !(det > 0.0 && bandwidth.matrix[0][0] > 0.0) {
        return Err(VineError::Parameter("bandwidth matrix not positive definite".into()));
    }
    let (log_density, diagnostics) = fit_log_density(z, bandwidth, degree, solver);
    let g = grid();
    let mut density = vec![0.0; GRID_SIZE * GRID_SIZE];
    for i in 0..GRID_SIZE {
        for j in 0..GRID_SIZE {
            let c = (log_density[i * GRID_SIZE + j]).exp() / (g.pdf[i] * g.pdf[j]);
            density[i * GRID_SIZE + j] = if c.is_finite() {
                c.max(DENSITY_FLOOR)
            } else {
                DENSITY_FLOOR
            };
        }
    }
    normalize_margins(&mut density);
    Ok(TllCopula {
        degree,
        bandwidth: *bandwidth,
        diagnostics,
        density,
    })
}

/// Local likelihood fit of the z-scale log density at every grid node.
fn fit_log_density(
    z: &ZPoints,
    bandwidth: &Bandwidth,
    degree: Degree,
    solver: LocalSolver,
) -> (Vec<f64>, FitDiagnostics) {
    let fitter = NodeFitter::new(z, bandwidth, degree, solver);
    let rows: Vec<(Vec<f64>, FitDiagnostics)> = crate::par::map_range(GRID_SIZE, |i| fitter.fit_row(i));
    let mut log_density = Vec::with_capacity(GRID_SIZE * GRID_SIZE);
    let mut diagnostics = FitDiagnostics::default();
    for (row, d) in rows {
        log_density.extend(row);
        diagnostics.linear_fallbacks += d.linear_fallbacks;
        diagnostics.kernel_fallbacks += d.kernel_fallbacks;
        diagnostics.newton_iterations += d.newton_iterations;
    }
    (log_density, diagnostics)
}

/// Alternately rescales columns and rows so both margins integrate to one.
/// Runs at least `SINKHORN_SWEEPS` sweeps, then continues until the row
/// margins left by the last column pass are within `MARGIN_TOL`.
fn normalize_margins(density: &mut [f64]) {
    let w = &grid().omega;
    for sweep in 0..MAX_SINKHORN_SWEEPS {
        let mut worst = 0.0f64;
        for j in 0..GRID_SIZE {
            let m: f64 = (0..GRID_SIZE).map(|i| w[i] * density[i * GRID_SIZE + j]).sum();
            for i in 0..GRID_SIZE {
                density[i * GRID_SIZE + j] /= m;
            }
        }
        for i in 0..GRID_SIZE {
            let row = &mut density[i * GRID_SIZE..(i + 1) * GRID_SIZE];
            let m: f64 = row.iter().zip(w).map(|(c, w)| c * w).sum();
            worst = worst.max((m - 1.0).abs());
            row.iter_mut().for_each(|c| *c /= m);
        }
        if sweep + 1 >= SINKHORN_SWEEPS && worst <= MARGIN_TOL {
            break;
        }
    }
}

struct NodeFitter<'a> {
    z: &'a ZPoints,
    degree: Degree,
    solver: LocalSolver,
    /// Inverse bandwidth matrix entries.
    p11: f64,
    p12: f64,
    p22: f64,
    log_norm_b: f64,
    n: f64,
}

/// Kernel-weighted sums at one node, with `ds = S - s` and raw `T`.
#[derive(Clone, Copy, Default)]
struct NodeSums {
    w: f64,
    w_ds: f64,
    w_t: f64,
    w_ds2: f64,
    w_t2: f64,
    w_ds_t: f64,
    w_sq: f64,
    w_max: f64,
}

impl<'a> NodeFitter<'a> {
    fn new(z: &'a ZPoints, bandwidth: &Bandwidth, degree: Degree, solver: LocalSolver) -> Self {
        let p = bandwidth.inverse();
        NodeFitter {
            z,
            degree,
            solver,
            p11: p[0][0],
            p12: 0.5 * (p[0][1] + p[1][0]),
            p22: p[1][1],
            log_norm_b: (2.0 * PI).ln() + 0.5 * bandwidth.det().ln(),
            n: z.len() as f64,
        }
    }

    fn fit_row(&self, i: usize) -> (Vec<f64>, FitDiagnostics) {
        let g = grid();
        let s_i = g.z[i];
        let mut diag = FitDiagnostics::default();
        let mut out = vec![0.0; GRID_SIZE];
        if self.solver == LocalSolver::Newton {
            for (j, slot) in out.iter_mut().enumerate() {
                *slot = self.fit_node_exact(s_i, g.z[j], &mut diag);
            }
            return (out, diag);
        }
        let sums = self.windowed_row_sums(s_i);
        for j in 0..GRID_SIZE {
            let sm = &sums[j];
            out[j] = if sm.w_max < (-0.5 * Q_EXACT).exp() {
                self.fit_node_exact(s_i, g.z[j], &mut diag)
            } else {
                let t_j = g.z[j];
                let mom = Moments {
                    s0: sm.w,
                    mu: [sm.w_ds / sm.w, sm.w_t / sm.w - t_j],
                    ess: sm.w * sm.w / sm.w_sq,
                    second: [
                        sm.w_ds2 / sm.w,
                        (sm.w_ds_t - t_j * sm.w_ds) / sm.w,
                        (sm.w_t2 - 2.0 * t_j * sm.w_t + t_j * t_j * sm.w) / sm.w,
                    ],
                };
                self.closed_form(&mom, 0.0, &mut diag)
            };
        }
        (out, diag)
    }

    /// Kernel sums for all nodes of row `s_i`, visiting each point only over
    /// the nodes inside its kernel window and stepping the Gaussian weight
    /// multiplicatively along the row.
    fn windowed_row_sums(&self, s_i: f64) -> Vec<NodeSums> {
        let g = grid();
        let (p11, p12, p22) = (self.p11, self.p12, self.p22);
        let step = g.step;
        let schur = p11 * p22 - p12 * p12;
        let decay = (-p22 * step * step).exp();
        let mut sums = vec![NodeSums::default(); GRID_SIZE];
        for (&s, &t) in self.z.s.iter().zip(&self.z.t) {
            let ds = s - s_i;
            let disc = p22 * Q_WINDOW - ds * ds * schur;
            if disc <= 0.0 {
                continue;
            }
            let root = disc.sqrt();
            // dt = t - t_j must lie in [dt_lo, dt_hi]
            let dt_lo = (-p12 * ds - root) / p22;
            let dt_hi = (-p12 * ds + root) / p22;
            let j_lo = ((t - dt_hi - g.z[0]) / step).ceil().max(0.0);
            let j_hi = ((t - dt_lo - g.z[0]) / step).floor().min((GRID_SIZE - 1) as f64);
            if j_lo > j_hi {
                continue;
            }
            let (j_lo, j_hi) = (j_lo as usize, j_hi as usize);
            let dt0 = t - g.z[j_lo];
            let q0 = p11 * ds * ds + 2.0 * p12 * ds * dt0 + p22 * dt0 * dt0;
            let mut w = (-0.5 * q0).exp();
            let mut ratio = ((p12 * ds + p22 * dt0) * step - 0.5 * p22 * step * step).exp();
            let (ds2, t2, ds_t) = (ds * ds, t * t, ds * t);
            for sm in &mut sums[j_lo..=j_hi] {
                sm.w += w;
                sm.w_ds += w * ds;
                sm.w_t += w * t;
                sm.w_ds2 += w * ds2;
                sm.w_t2 += w * t2;
                sm.w_ds_t += w * ds_t;
                sm.w_sq += w * w;
                sm.w_max = sm.w_max.max(w);
                w *= ratio;
                ratio *= decay;
            }
        }
        sums
    }

    /// Fit at one node using every point, with weights scaled by the largest
    /// one. Returns the log density.
    fn fit_node_exact(&self, s: f64, t: f64, diag: &mut FitDiagnostics) -> f64 {
        let n = self.z.len();
        let mut q = Vec::with_capacity(n);
        let mut q_min = f64::INFINITY;
        for (&a, &b) in self.z.s.iter().zip(&self.z.t) {
            let (d1, d2) = (a - s, b - t);
            let v = self.p11 * d1 * d1 + 2.0 * self.p12 * d1 * d2 + self.p22 * d2 * d2;
            q_min = q_min.min(v);
            q.push(v);
        }
        let w: Vec<f64> = q.iter().map(|v| (-0.5 * (v - q_min)).exp()).collect();
        let log_scale = -0.5 * q_min;
        let s0: f64 = w.iter().sum();
        let mut first = [0.0; 2];
        let mut raw2 = [0.0; 3];
        let mut w_sq = 0.0;
        for ((&a, &b), &wk) in self.z.s.iter().zip(&self.z.t).zip(&w) {
            let (d1, d2) = (a - s, b - t);
            first[0] += wk * d1;
            first[1] += wk * d2;
            raw2[0] += wk * d1 * d1;
            raw2[1] += wk * d1 * d2;
            raw2[2] += wk * d2 * d2;
            w_sq += wk * wk;
        }
        let mom = Moments {
            s0,
            mu: [first[0] / s0, first[1] / s0],
            ess: s0 * s0 / w_sq,
            second: [raw2[0] / s0, raw2[1] / s0, raw2[2] / s0],
        };
        if self.solver == LocalSolver::Newton {
            let d1: Vec<f64> = self.z.s.iter().map(|a| a - s).collect();
            let d2: Vec<f64> = self.z.t.iter().map(|b| b - t).collect();
            let p: Vec<f64> = w.iter().map(|wk| wk / s0).collect();
            let base = s0.ln() + log_scale - self.n.ln();
            if self.degree == Degree::Quadratic && self.quadratic_identifiable(&mom) {
                if let Some((a0, it)) = newton_local_fit(&d1, &d2, &p, self.precision(), Degree::Quadratic) {
                    diag.newton_iterations += it;
                    return a0 + base;
                }
            }
            if self.degree == Degree::Quadratic {
                diag.linear_fallbacks += 1;
            }
            if let Some((a0, it)) = newton_local_fit(&d1, &d2, &p, self.precision(), Degree::Linear) {
                diag.newton_iterations += it;
                return a0 + base;
            }
            diag.kernel_fallbacks += 1;
            return base - self.log_norm_b;
        }
        self.closed_form(&mom, log_scale, diag)
    }

    /// The quadratic fit needs enough effective points and a kernel-weighted
    /// covariance that is not degenerate relative to the bandwidth.
    fn quadratic_identifiable(&self, m: &Moments) -> bool {
        let [c11, c12, c22] = m.covariance();
        let det = c11 * c22 - c12 * c12;
        let det_b = (self.p11 * self.p22 - self.p12 * self.p12).recip();
        m.ess >= MIN_ESS && c11 > 0.0 && det > 1e-6 * det_b
    }

    fn precision(&self) -> [[f64; 2]; 2] {
        [[self.p11, self.p12], [self.p12, self.p22]]
    }

    /// Local likelihood maximum in closed form. `second` holds raw second
    /// moments of the offsets (about the node).
    fn closed_form(&self, m: &Moments, log_scale: f64, diag: &mut FitDiagnostics) -> f64 {
        if !(m.s0 > 0.0) {
            diag.kernel_fallbacks += 1;
            return f64::NEG_INFINITY;
        }
        let base = m.s0.ln() + log_scale - self.n.ln();
        let [mu1, mu2] = m.mu;
        if self.degree == Degree::Quadratic {
            let [c11, c12, c22] = m.covariance();
            let det = c11 * c22 - c12 * c12;
            if self.quadratic_identifiable(m) {
                let quad = (c22 * mu1 * mu1 - 2.0 * c12 * mu1 * mu2 + c11 * mu2 * mu2) / det;
                let val = base - (2.0 * PI).ln() - 0.5 * det.ln() - 0.5 * quad;
                if val.is_finite() {
                    return val;
                }
            }
            diag.linear_fallbacks += 1;
        }
        let quad = self.p11 * mu1 * mu1 + 2.0 * self.p12 * mu1 * mu2 + self.p22 * mu2 * mu2;
        let val = base - self.log_norm_b - 0.5 * quad;
        if val.is_finite() {
            val
        } else {
            diag.kernel_fallbacks += 1;
            base - self.log_norm_b
        }
    }
}

struct Moments {
    s0: f64,
    mu: [f64; 2],
    ess: f64,
    /// Raw second moments `E d1^2, E d1 d2, E d2^2` under the kernel weights.
    second: [f64; 3],
}

impl Moments {
    fn covariance(&self) -> [f64; 3] {
        let [mu1, mu2] = self.mu;
        [
            self.second[0] - mu1 * mu1,
            self.second[1] - mu1 * mu2,
            self.second[2] - mu2 * mu2,
        ]
    }
}

/// Three-point Gauss-Hermite rule for the standard normal; exact for
/// polynomials of degree five.
const GH_NODES: [f64; 3] = [-1.732_050_807_568_877_2, 0.0, 1.732_050_807_568_877_2];
const GH_WEIGHTS: [f64; 3] = [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0];

fn monomials(d1: f64, d2: f64, out: &mut [f64]) {
    out[0] = 1.0;
    out[1] = d1;
    out[2] = d2;
    if out.len() > 3 {
        out[3] = d1 * d1;
        out[4] = d2 * d2;
        out[5] = d1 * d2;
    }
}

/// Gaussian form of `exp(P_a(d)) K(d)`: returns `(log I, mean, covariance)`
/// where `I` is its integral, or `None` when it is not integrable.
fn gaussian_form(a: &[f64], prec: [[f64; 2]; 2]) -> Option<(f64, [f64; 2], [[f64; 2]; 2])> {
    let (a3, a4, a5) = if a.len() > 3 {
        (a[3], a[4], a[5])
    } else {
        (0.0, 0.0, 0.0)
    };
    let m11 = prec[0][0] - 2.0 * a3;
    let m22 = prec[1][1] - 2.0 * a4;
    let m12 = prec[0][1] - a5;
    let det = m11 * m22 - m12 * m12;
    if !(m11 > 0.0 && det > 0.0) {
        return None;
    }
    let cov = [[m22 / det, -m12 / det], [-m12 / det, m11 / det]];
    let mean = [cov[0][0] * a[1] + cov[0][1] * a[2], cov[1][0] * a[1] + cov[1][1] * a[2]];
    let log_i = a[0] + 0.5 * (a[1] * mean[0] + a[2] * mean[1]) + (2.0 * PI).ln() - 0.5 * det.ln();
    Some((log_i, mean, cov))
}

/// Maximises `sum_n p_n P_a(d_n) - int K(d) exp(P_a(d)) dd` over the
/// polynomial coefficients by damped Newton iteration, where `K` is the
/// unnormalised Gaussian kernel with precision `prec` and `p` sums to one.
/// Returns the constant coefficient and the iteration count.
pub(crate) fn newton_local_fit(
    d1: &[f64],
    d2: &[f64],
    p: &[f64],
    prec: [[f64; 2]; 2],
    degree: Degree,
) -> Option<(f64, usize)> {
    let k = if degree == Degree::Quadratic { 6 } else { 3 };
    let mut target = vec![0.0; k];
    let mut mono = vec![0.0; k];
    for ((&x, &y), &w) in d1.iter().zip(d2).zip(p) {
        monomials(x, y, &mut mono);
        for (t, m) in target.iter_mut().zip(&mono) {
            *t += w * m;
        }
    }
    let det_p = prec[0][0] * prec[1][1] - prec[0][1] * prec[1][0];
    let mut a = vec![0.0; k];
    a[0] = 0.5 * det_p.ln() - (2.0 * PI).ln();

    let objective = |a: &[f64]| -> Option<f64> {
        let (log_i, _, _) = gaussian_form(a, prec)?;
        let lin: f64 = a.iter().zip(&target).map(|(x, y)| x * y).sum();
        Some(lin - log_i.exp())
    };
    let mut value = objective(&a)?;
    for iter in 0..NEWTON_MAX_ITERS {
        let (log_i, mean, cov) = gaussian_form(&a, prec)?;
        let scale = log_i.exp();
        // Cholesky factor of the covariance for the quadrature nodes
        let l11 = cov[0][0].sqrt();
        let l21 = cov[1][0] / l11;
        let l22 = (cov[1][1] - l21 * l21).max(0.0).sqrt();
        let mut e_m = vec![0.0; k];
        let mut e_mm = vec![0.0; k * k];
        for (x1, w1) in GH_NODES.iter().zip(GH_WEIGHTS) {
            for (x2, w2) in GH_NODES.iter().zip(GH_WEIGHTS) {
                let y1 = mean[0] + l11 * x1;
                let y2 = mean[1] + l21 * x1 + l22 * x2;
                monomials(y1, y2, &mut mono);
                let w = w1 * w2;
                for r in 0..k {
                    e_m[r] += w * mono[r];
                    for c in 0..k {
                        e_mm[r * k + c] += w * mono[r] * mono[c];
                    }
                }
            }
        }
        let grad: Vec<f64> = (0..k).map(|r| target[r] - scale * e_m[r]).collect();
        // tolerance relative to the size of each target moment
        if grad
            .iter()
            .zip(&target)
            .all(|(g, m)| g.abs() < NEWTON_TOL * (1.0 + m.abs()))
        {
            return Some((a[0], iter));
        }
        let info = nalgebra::DMatrix::from_fn(k, k, |r, c| scale * e_mm[r * k + c]);
        let step = info.cholesky()?.solve(&nalgebra::DVector::from_vec(grad));
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = a.iter().zip(step.iter()).map(|(x, d)| x + t * d).collect();
            if let Some(v) = objective(&trial) {
                if v >= value {
                    // no representable gain: converged to working precision
                    if v - value <= 4.0 * f64::EPSILON * value.abs() {
                        return Some((trial[0], iter + 1));
                    }
                    a = trial;
                    value = v;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            return None;
        }
    }
    None
}

impl TllCopula {
    /// Rebuilds a fitted copula from a stored density grid.
    pub fn from_parts(degree: Degree, bandwidth: Bandwidth, density: Vec<f64>) -> Result<Self> {
        let cells = GRID_SIZE * GRID_SIZE;
        if density.len() != cells {
            return Err(VineError::Format(format!("copula grid must have {cells} entries")));
        }
        if density.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(VineError::Format("copula grid must be positive and finite".into()));
        }
        Ok(TllCopula {
            degree,
            bandwidth,
            diagnostics: FitDiagnostics::default(),
            density,
        })
    }

    pub fn degree(&self) -> Degree {
        self.degree
    }

    pub fn bandwidth(&self) -> &Bandwidth {
        &self.bandwidth
    }

    pub fn diagnostics(&self) -> FitDiagnostics {
        self.diagnostics
    }

    /// Normalised copula density at the grid nodes, `[i * G + j]`.
    pub fn copula_density(&self) -> &[f64] {
        &self.density
    }

    /// Density on the z-scale grid coordinates.
    #[inline]
    pub fn pdf_z(&self, zu: f64, zv: f64) -> f64 {
        let (i, a) = locate(zu);
        let (j, b) = locate(zv);
        let r0 = &self.density[i * GRID_SIZE + j..];
        let r1 = &self.density[(i + 1) * GRID_SIZE + j..];
        (1.0 - a) * ((1.0 - b) * r0[0] + b * r0[1]) + a * ((1.0 - b) * r1[0] + b * r1[1])
    }

    /// Copula density; arguments are clamped to `[U_EPS, 1 - U_EPS]`.
    pub fn pdf(&self, u: f64, v: f64) -> f64 {
        self.pdf_z(norm_quantile(clamp_u(u)), norm_quantile(clamp_u(v)))
    }

    pub fn density(&self, u: f64, v: f64) -> Result<f64> {
        for x in [u, v] {
            if !(x > 0.0 && x < 1.0) {
                return Err(VineError::Domain(format!("copula argument {x} outside (0, 1)")));
            }
        }
        Ok(self.pdf(u, v))
    }

    /// Conditional distribution function, same convention as
    /// [`super::FamilySpec::h`].
    pub fn h(&self, u: f64, v: f64, dir: Direction) -> f64 {
        let (x, c) = match dir {
            Direction::UGivenV => (u, v),
            Direction::VGivenU => (v, u),
        };
        let x = clamp_u(x);
        let c = clamp_u(c);
        self.h_z(x, norm_quantile(x), norm_quantile(c), dir)
    }

    /// Grid line through conditioning node `node`: start offset and stride
    /// of the conditioned coordinate.
    #[inline]
    fn line(&self, node: usize, dir: Direction) -> Line<'_> {
        match dir {
            Direction::UGivenV => Line {
                data: &self.density[node..],
                stride: GRID_SIZE,
            },
            Direction::VGivenU => Line {
                data: &self.density[node * GRID_SIZE..],
                stride: 1,
            },
        }
    }

    /// `h` with the conditioned value given on both scales and the
    /// conditioning value on the z-scale.
    #[inline]
    pub fn h_z(&self, x: f64, zx: f64, zc: f64, dir: Direction) -> f64 {
        let (j, lam) = locate(zc);
        let (l0, l1) = (self.line(j, dir), self.line(j + 1, dir));
        let phi = norm_pdf(zx);
        let (h0, t0) = l0.partial(x, zx, phi);
        let (h1, t1) = l1.partial(x, zx, phi);
        clamp_u(((1.0 - lam) * h0 + lam * h1) / ((1.0 - lam) * t0 + lam * t1))
    }

    /// Inverse of `h` in the conditioned argument.
    pub fn inv_h(&self, w: f64, cond: f64, dir: Direction) -> f64 {
        self.inv_h_z(w, norm_quantile(clamp_u(cond)), dir)
    }

    pub fn inv_h_z(&self, w: f64, zc: f64, dir: Direction) -> f64 {
        let g = grid();
        let (j, lam) = locate(zc);
        let (l0, l1) = (self.line(j, dir), self.line(j + 1, dir));
        let mut line = [0.0; GRID_SIZE];
        for (k, c) in line.iter_mut().enumerate() {
            *c = (1.0 - lam) * l0.at(k) + lam * l1.at(k);
        }
        let mut cum = [0.0; GRID_SIZE];
        for k in 0..GRID_SIZE - 1 {
            cum[k + 1] = cum[k] + g.cell_a[k] * line[k] + g.cell_b[k] * line[k + 1];
        }
        let last = GRID_SIZE - 1;
        let target = clamp_u(w) * cum[last];
        if target >= cum[last] {
            return clamp_u(g.cdf[last]);
        }
        // largest k with cum[k] <= target
        let k = cum.partition_point(|&c| c <= target).clamp(1, last) - 1;
        let (ca, cb) = (line[k], line[k + 1]);
        let base = cum[k];
        let (za, zb) = (g.z[k], g.z[k + 1]);
        let value = |z: f64| {
            let d_cdf = norm_cdf(z) - g.cdf[k];
            let d_pdf = norm_pdf(z) - g.pdf[k];
            base + (ca * (zb * d_cdf + d_pdf) + cb * (-d_pdf - za * d_cdf)) / g.step
        };
        // safeguarded Newton on z within the cell
        let (mut lo_z, mut hi_z) = (za, zb);
        let mut z = za + (zb - za) * ((target - base) / (cum[k + 1] - base)).clamp(0.0, 1.0);
        for _ in 0..60 {
            let f = value(z) - target;
            if f == 0.0 {
                break;
            }
            if f < 0.0 {
                lo_z = z;
            } else {
                hi_z = z;
            }
            let slope = ((ca * (zb - z) + cb * (z - za)) / g.step) * norm_pdf(z);
            let mut next = z - f / slope;
            if !(next > lo_z && next < hi_z) {
                next = 0.5 * (lo_z + hi_z);
            }
            if (next - z).abs() <= 1e-15 * (1.0 + z.abs()) || hi_z - lo_z <= 1e-15 {
                z = next;
                break;
            }
            z = next;
        }
        clamp_u(norm_cdf(z))
    }
}

/// One grid line of the density along the conditioned coordinate.
struct Line<'a> {
    data: &'a [f64],
    stride: usize,
}

impl Line<'_> {
    #[inline]
    fn at(&self, k: usize) -> f64 {
        self.data[k * self.stride]
    }

    /// Integral of the interpolated density from the first node to `x`,
    /// where `zx = Φ⁻¹(x)` and `phi = φ(zx)`, together with the integral
    /// over the whole grid range.
    #[inline]
    fn partial(&self, x: f64, zx: f64, phi: f64) -> (f64, f64) {
        let g = grid();
        let last = GRID_SIZE - 1;
        let k = if zx <= g.z[0] {
            None
        } else if zx >= g.z[last] {
            Some(last)
        } else {
            Some((((zx - g.z[0]) / g.step) as usize).min(last - 1))
        };
        let mut cum = 0.0;
        let mut below = 0.0;
        let mut prev = self.at(0);
        for c in 0..last {
            let next = self.at(c + 1);
            if Some(c) == k {
                let d_cdf = x - g.cdf[c];
                let d_pdf = phi - g.pdf[c];
                below = cum + (prev * (g.z[c + 1] * d_cdf + d_pdf) + next * (-d_pdf - g.z[c] * d_cdf)) / g.step;
            }
            cum += g.cell_a[c] * prev + g.cell_b[c] * next;
            prev = next;
        }
        if k == Some(last) {
            below = cum;
        }
        (below, cum)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::copula::{Family, FamilySpec};
    use crate::special::U_EPS;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gauss_sample(n: usize, rho: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
        if rho == 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            return (0..n)
                .map(|_| (rng.random::<f64>().max(1e-12), rng.random::<f64>().max(1e-12)))
                .unzip();
        }
        FamilySpec::new(Family::Gauss, rho)
            .unwrap()
            .sample_pair(n, seed)
            .into_iter()
            .unzip()
    }

    /// Margins and total mass over the grid range by adaptive quadrature of
    /// the interpolated density, independent of the node weights.
    fn grid_masses(cop: &TllCopula) -> (f64, Vec<f64>, Vec<f64>) {
        use crate::numeric::adaptive_simpson;
        let g = grid();
        let line = |fixed: f64, along_u: bool| {
            let f = |z: f64| {
                let c = if along_u {
                    cop.pdf_z(z, fixed)
                } else {
                    cop.pdf_z(fixed, z)
                };
                c * norm_pdf(z)
            };
            adaptive_simpson(&f, -Z_LIMIT, Z_LIMIT, 1e-10)
        };
        let rows: Vec<f64> = g.z.iter().map(|&z| line(z, false)).collect();
        let cols: Vec<f64> = g.z.iter().map(|&z| line(z, true)).collect();
        let total = adaptive_simpson(&|z: f64| line(z, false) * norm_pdf(z), -Z_LIMIT, Z_LIMIT, 1e-8);
        (total, rows, cols)
    }

    #[test]
    fn z_transform_values() {
        let z = z_transform(&[0.5, 0.975], &[0.5, 0.5]).unwrap();
        assert_eq!(z.s[0], 0.0);
        assert_eq!(z.t[0], 0.0);
        assert!((z.s[1] - 1.959_963_984_540_054).abs() < 1e-9);
        assert!(z_transform(&[1.0], &[0.5]).is_err());
        assert!(z_transform(&[0.5], &[0.0]).is_err());
    }

    #[test]
    fn node_weights_integrate_linear_interpolant() {
        let w = node_weights();
        let g = grid();
        let range = g.cdf[GRID_SIZE - 1] - g.cdf[0];
        assert!((w.iter().sum::<f64>() - range).abs() < 1e-14);
        // a density linear in z between nodes: c(z) = 1 + 0.1 z
        let c: Vec<f64> = g.z.iter().map(|z| 1.0 + 0.1 * z).collect();
        let mass: f64 = w.iter().zip(&c).map(|(a, b)| a * b).sum();
        let exact = range + 0.1 * (g.pdf[0] - g.pdf[GRID_SIZE - 1]);
        assert!((mass - exact).abs() < 1e-14);
    }

    #[test]
    fn independence_fit() {
        let (u, v) = gauss_sample(5000, 0.0, 1);
        let cop = fit_tll(&u, &v).unwrap();
        for a in 1..=9 {
            for b in 1..=9 {
                let (x, y) = (a as f64 / 10.0, b as f64 / 10.0);
                let c = cop.density(x, y).unwrap();
                assert!((c - 1.0).abs() <= 0.15, "c({x},{y}) = {c}");
                assert!((cop.h(x, y, Direction::UGivenV) - x).abs() <= 0.02);
                assert!((cop.inv_h(x, y, Direction::UGivenV) - x).abs() <= 0.02);
            }
        }
    }

    #[test]
    fn gaussian_fit_matches_analytic() {
        let (u, v) = gauss_sample(5000, 0.8, 2);
        let cop = fit_tll(&u, &v).unwrap();
        let c = cop.density(0.5, 0.5).unwrap();
        assert!((c - 1.0 / 0.36f64.sqrt()).abs() <= 0.2 * 1.6667, "{c}");
        let exact = norm_cdf(-0.8 * norm_quantile(0.9) / 0.6);
        assert!((exact - 0.0437).abs() < 1e-3);
        let got = cop.h(0.5, 0.9, Direction::UGivenV);
        assert!((got - exact).abs() <= 0.05, "{got} vs {exact}");
        let (total, rows, cols) = grid_masses(&cop);
        assert!((0.99..=1.01).contains(&total), "{total}");
        for m in rows.iter().chain(&cols) {
            assert!((0.98..=1.02).contains(m), "{m}");
        }
        assert!((cop.inv_h(0.5, 0.5, Direction::UGivenV) - 0.5).abs() <= 0.02);
    }

    #[test]
    fn grid_node_and_midpoint_queries() {
        let (u, v) = gauss_sample(500, 0.5, 3);
        let cop = fit_tll(&u, &v).unwrap();
        let g = grid();
        let d = cop.copula_density();
        assert_eq!(cop.pdf_z(g.z[10], g.z[20]), d[10 * GRID_SIZE + 20]);
        let mid = cop.pdf_z(0.5 * (g.z[10] + g.z[11]), 0.5 * (g.z[20] + g.z[21]));
        let avg =
            0.25 * (d[10 * GRID_SIZE + 20] + d[10 * GRID_SIZE + 21] + d[11 * GRID_SIZE + 20] + d[11 * GRID_SIZE + 21]);
        assert!((mid - avg).abs() < 1e-12 * avg);
        assert!(cop.density(0.0, 0.5).is_err());
        assert!(cop.density(0.5, 1.2).is_err());
    }

    #[test]
    fn h_function_hygiene() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (k, rho) in [0.0, 0.3, -0.7, 0.9].into_iter().enumerate() {
            let (u, v) = gauss_sample(400, rho, 10 + k as u64);
            let cop = fit_tll(&u, &v).unwrap();
            for dir in [Direction::UGivenV, Direction::VGivenU] {
                for b in 1..=19 {
                    let c = b as f64 / 20.0;
                    let mut prev = 0.0;
                    for a in 1..=99 {
                        let x = a as f64 / 100.0;
                        let h = match dir {
                            Direction::UGivenV => cop.h(x, c, dir),
                            Direction::VGivenU => cop.h(c, x, dir),
                        };
                        assert!(h >= prev, "not monotone at {x} | {c}");
                        prev = h;
                    }
                    let (lo, hi) = match dir {
                        Direction::UGivenV => (cop.h(U_EPS, c, dir), cop.h(1.0 - U_EPS, c, dir)),
                        Direction::VGivenU => (cop.h(c, U_EPS, dir), cop.h(c, 1.0 - U_EPS, dir)),
                    };
                    assert!(lo <= 2.0 * U_EPS && hi >= 1.0 - 2.0 * U_EPS, "{lo} {hi}");
                }
                // h is flat outside the grid range, so draw inside it
                let g = grid();
                for _ in 0..100 {
                    let x: f64 = rng.random_range(g.cdf[0]..g.cdf[GRID_SIZE - 1]);
                    let c: f64 = rng.random();
                    let w = match dir {
                        Direction::UGivenV => cop.h(x, c, dir),
                        Direction::VGivenU => cop.h(c, x, dir),
                    };
                    let back = cop.inv_h(w, c, dir);
                    let again = match dir {
                        Direction::UGivenV => cop.h(back, c, dir),
                        Direction::VGivenU => cop.h(c, back, dir),
                    };
                    assert!((again - w).abs() <= 1e-9, "{w} -> {back} -> {again}");
                    // where h is flat to double precision the inverse is not unique
                    if w > 1e-6 && w < 1.0 - 1e-6 {
                        assert!((back - x).abs() <= 1e-6, "{x} -> {w} -> {back}");
                    }
                }
            }
        }
    }

    #[test]
    fn h_matches_numeric_integral() {
        let (u, v) = gauss_sample(300, 0.6, 4);
        let cop = fit_tll(&u, &v).unwrap();
        for &(x, c) in &[(0.3, 0.6), (0.8, 0.1), (0.05, 0.5), (0.999, 0.999)] {
            // integrate the bilinear density on the z-scale
            let zc = norm_quantile(c);
            let f = |z: f64| cop.pdf_z(z, zc) * norm_pdf(z);
            let upper = norm_quantile(x);
            let num = crate::numeric::adaptive_simpson(&f, -Z_LIMIT, upper.min(Z_LIMIT), 1e-12);
            let tot = crate::numeric::adaptive_simpson(&f, -Z_LIMIT, Z_LIMIT, 1e-12);
            let got = cop.h(x, c, Direction::UGivenV);
            assert!((got - num / tot).abs() < 1e-7, "{got} vs {}", num / tot);
        }
    }

    #[test]
    fn newton_agrees_with_moment_solution() {
        let (u, v) = gauss_sample(300, 0.5, 5);
        let z = z_transform(&u, &v).unwrap();
        let bw = select_bandwidth(&z, Degree::Quadratic).unwrap();
        for degree in [Degree::Quadratic, Degree::Linear] {
            let fast = NodeFitter::new(&z, &bw, degree, LocalSolver::Moments);
            let slow = NodeFitter::new(&z, &bw, degree, LocalSolver::Newton);
            let g = grid();
            for &(i, j) in &[(31, 31), (20, 40), (5, 60), (45, 50), (63, 0)] {
                let mut d = FitDiagnostics::default();
                let a = fast.fit_node_exact(g.z[i], g.z[j], &mut d);
                let b = slow.fit_node_exact(g.z[i], g.z[j], &mut d);
                assert!((a - b).abs() < 1e-6, "{degree:?} node ({i},{j}): {a} vs {b}");
            }
        }
    }

    #[test]
    fn windowed_sums_match_exact_fit() {
        let (u, v) = gauss_sample(400, -0.4, 6);
        let z = z_transform(&u, &v).unwrap();
        let bw = select_bandwidth(&z, Degree::Quadratic).unwrap();
        let fitter = NodeFitter::new(&z, &bw, Degree::Quadratic, LocalSolver::Moments);
        let g = grid();
        for i in [0, 17, 32, 50, 63] {
            let (row, _) = fitter.fit_row(i);
            for j in 0..GRID_SIZE {
                let mut d = FitDiagnostics::default();
                let exact = fitter.fit_node_exact(g.z[i], g.z[j], &mut d);
                assert!((row[j] - exact).abs() < 1e-8, "({i},{j}) {} vs {exact}", row[j]);
            }
        }
    }

    #[test]
    fn newton_solver_fits_whole_grid() {
        let (u, v) = gauss_sample(60, 0.3, 7);
        let z = z_transform(&u, &v).unwrap();
        let bw = select_bandwidth(&z, Degree::Quadratic).unwrap();
        let (la, _) = fit_log_density(&z, &bw, Degree::Quadratic, LocalSolver::Moments);
        let (lb, db) = fit_log_density(&z, &bw, Degree::Quadratic, LocalSolver::Newton);
        assert!(db.newton_iterations > 0);
        for (k, (x, y)) in la.iter().zip(&lb).enumerate() {
            assert!((x - y).abs() <= 1e-5, "node {k}: {x} vs {y}");
        }
        let a = fit_copula_density_with(&z, &bw, Degree::Quadratic, LocalSolver::Moments).unwrap();
        let b = fit_copula_density_with(&z, &bw, Degree::Quadratic, LocalSolver::Newton).unwrap();
        for (x, y) in a.copula_density().iter().zip(b.copula_density()) {
            assert!((x - y).abs() <= 1e-5 * x.max(1.0), "{x} vs {y}");
        }
    }

    #[test]
    fn rebuild_from_parts_is_identical() {
        let (u, v) = gauss_sample(200, 0.7, 8);
        let cop = fit_tll(&u, &v).unwrap();
        let back = TllCopula::from_parts(cop.degree(), *cop.bandwidth(), cop.copula_density().to_vec()).unwrap();
        for &(x, y) in &[(0.1, 0.2), (0.5, 0.9), (0.77, 0.33)] {
            assert_eq!(cop.pdf(x, y), back.pdf(x, y));
            assert_eq!(cop.h(x, y, Direction::VGivenU), back.h(x, y, Direction::VGivenU));
        }
    }

    #[test]
    fn consistency_improves_with_sample_size() {
        let gauss = FamilySpec::new(Family::Gauss, 0.6).unwrap();
        let error = |n: usize, seed: u64| {
            let (u, v) = gauss_sample(n, 0.6, seed);
            let cop = fit_tll(&u, &v).unwrap();
            let mut e = 0.0;
            for a in 1..20 {
                for b in 1..20 {
                    let (x, y) = (a as f64 / 20.0, b as f64 / 20.0);
                    e += (cop.pdf(x, y) - gauss.pdf(x, y)).abs() / 361.0;
                }
            }
            e
        };
        let mut small: Vec<f64> = (0..5).map(|s| error(500, 100 + s)).collect();
        let mut large: Vec<f64> = (0..5).map(|s| error(4000, 200 + s)).collect();
        small.sort_by(f64::total_cmp);
        large.sort_by(f64::total_cmp);
        assert!(large[2] < small[2], "{} vs {}", large[2], small[2]);
    }
}
