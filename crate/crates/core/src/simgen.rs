//! Data generators for the simulation settings (a)–(h).
//!
//! All matrices are stored column-major: `columns[j][n]` is observation `n`
//! of variable `j`. Generated settings put the response in column 0.

use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::copula::{Direction, Family, FamilySpec};
use crate::error::{Result, VineError};
use crate::special::{clamp_u, norm_cdf};

/// Noise standard deviation used by settings (c) and (d).
pub const HETERO_NOISE_SD: f64 = 0.5;
/// Number of covariates in settings (g) and (h).
pub const HIGH_DIM_P: usize = 110;
/// Training sample size of settings (g) and (h).
pub const HIGH_DIM_N_TRAIN: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SettingId {
    A,
    B,
    C,
    D,
    E,
    F,
    G,
    H,
}

impl SettingId {
    pub const ALL: [SettingId; 8] = [
        SettingId::A,
        SettingId::B,
        SettingId::C,
        SettingId::D,
        SettingId::E,
        SettingId::F,
        SettingId::G,
        SettingId::H,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "a" => Ok(SettingId::A),
            "b" => Ok(SettingId::B),
            "c" => Ok(SettingId::C),
            "d" => Ok(SettingId::D),
            "e" => Ok(SettingId::E),
            "f" => Ok(SettingId::F),
            "g" => Ok(SettingId::G),
            "h" => Ok(SettingId::H),
            other => Err(VineError::Config(format!("unknown setting '{other}'"))),
        }
    }

    pub fn letter(self) -> char {
        match self {
            SettingId::A => 'a',
            SettingId::B => 'b',
            SettingId::C => 'c',
            SettingId::D => 'd',
            SettingId::E => 'e',
            SettingId::F => 'f',
            SettingId::G => 'g',
            SettingId::H => 'h',
        }
    }

    /// Whether the noise level `sigma` enters the generator.
    pub fn uses_sigma(self) -> bool {
        matches!(self, SettingId::A | SettingId::G | SettingId::H)
    }

    /// Number of covariates.
    pub fn n_covariates(self) -> usize {
        match self {
            SettingId::A | SettingId::C | SettingId::D | SettingId::E => 4,
            SettingId::B | SettingId::F => 5,
            SettingId::G | SettingId::H => HIGH_DIM_P,
        }
    }

    /// Evaluation sample size for a given training size.
    pub fn n_eval(self, n_train: usize) -> usize {
        match self {
            SettingId::G | SettingId::H => n_train,
            _ => n_train / 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SettingSpec {
    pub setting: SettingId,
    pub sigma: f64,
    /// Training sample size.
    pub n: usize,
    pub seed: u64,
}

impl SettingSpec {
    pub fn new(setting: SettingId, sigma: f64, n: usize, seed: u64) -> Self {
        SettingSpec {
            setting,
            sigma,
            n,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedData {
    pub train: Vec<Vec<f64>>,
    pub eval: Vec<Vec<f64>>,
    /// Column names: `y, x1, ..., xp`.
    pub names: Vec<String>,
    pub metadata: BTreeMap<String, String>,
}

/// Column names `y, x1, ..., xp`.
pub fn column_names(p: usize) -> Vec<String> {
    std::iter::once("y".to_string())
        .chain((1..=p).map(|j| format!("x{j}")))
        .collect()
}

/// `cov[i][j] = rho^|i-j|`.
pub fn ar1_cov(m: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(m, m, |i, j| rho.powi(i.abs_diff(j) as i32))
}

/// Unit diagonal with constant off-diagonal `rho`.
pub fn equicorrelation(m: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(m, m, |i, j| if i == j { 1.0 } else { rho })
}

fn cholesky(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !cov.is_square() {
        return Err(VineError::Dimension(format!(
            "covariance is {}x{}",
            cov.nrows(),
            cov.ncols()
        )));
    }
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(VineError::NonFinite("covariance matrix".into()));
    }
    let sym = cov.relative_eq(&cov.transpose(), 1e-12, 1e-12);
    match (sym, cov.clone().cholesky()) {
        (true, Some(c)) => Ok(c.l()),
        _ => Err(VineError::Parameter(
            "covariance matrix is not symmetric positive definite".into(),
        )),
    }
}

fn draw_mvn(l: &DMatrix<f64>, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let m = l.nrows();
    let mut cols = vec![vec![0.0; n]; m];
    let mut z = vec![0.0; m];
    for i in 0..n {
        for zj in z.iter_mut() {
            *zj = rng.sample(StandardNormal);
        }
        for (r, col) in cols.iter_mut().enumerate() {
            col[i] = (0..=r).map(|c| l[(r, c)] * z[c]).sum();
        }
    }
    cols
}

/// `n` draws from `N(0, cov)`, returned as `m` columns.
pub fn mvn_sample(cov: &DMatrix<f64>, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let l = cholesky(cov)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(draw_mvn(&l, n, &mut rng))
}

/// Correlation matrices of the two t-copula mixture components of setting (b).
pub fn setting_b_correlations() -> (DMatrix<f64>, DMatrix<f64>) {
    let r1 = [
        [1.0, 0.6, 0.5, 0.6, 0.7, 0.1],
        [0.6, 1.0, 0.5, 0.5, 0.5, 0.5],
        [0.5, 0.5, 1.0, 0.5, 0.5, 0.5],
        [0.6, 0.5, 0.5, 1.0, 0.5, 0.5],
        [0.7, 0.5, 0.5, 0.5, 1.0, 0.5],
        [0.1, 0.5, 0.5, 0.5, 0.5, 1.0],
    ];
    let r2 = [
        [1.0, -0.3, -0.5, -0.4, -0.5, -0.1],
        [-0.3, 1.0, 0.5, 0.5, 0.5, 0.5],
        [-0.5, 0.5, 1.0, 0.5, 0.5, 0.5],
        [-0.4, 0.5, 0.5, 1.0, 0.5, 0.5],
        [-0.5, 0.5, 0.5, 0.5, 1.0, 0.5],
        [-0.1, 0.5, 0.5, 0.5, 0.5, 1.0],
    ];
    (
        DMatrix::from_fn(6, 6, |i, j| r1[i][j]),
        DMatrix::from_fn(6, 6, |i, j| r2[i][j]),
    )
}

/// One edge of a vine: the copula of `(conditioned[0], conditioned[1])`
/// given `conditioning`. `conditioned[0]` plays the role of `u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenEdge {
    pub conditioned: [usize; 2],
    pub conditioning: Vec<usize>,
    pub copula: FamilySpec,
}

impl GenEdge {
    pub fn new(a: usize, b: usize, conditioning: &[usize], copula: FamilySpec) -> Self {
        GenEdge {
            conditioned: [a, b],
            conditioning: conditioning.to_vec(),
            copula,
        }
    }

    pub fn tree(&self) -> usize {
        self.conditioning.len() + 1
    }
}

/// Parametric regular vine given as an edge list over variables `0..dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VineGeneratorSpec {
    pub dim: usize,
    pub edges: Vec<GenEdge>,
}

fn mask_of(vars: &[usize]) -> u64 {
    vars.iter().fold(0, |m, &v| m | (1u64 << v))
}

struct Step {
    edge: usize,
    partner: usize,
    given: u64,
}

struct Plan {
    order: Vec<usize>,
    steps: Vec<Vec<Step>>,
    lookup: HashMap<(usize, usize, u64), usize>,
}

impl VineGeneratorSpec {
    /// Checks the edge counts per tree and finds a sampling order.
    fn plan(&self) -> Result<Plan> {
        let m = self.dim;
        if m == 0 || m > 64 {
            return Err(VineError::Structure(format!("dimension {m} not in 1..=64")));
        }
        let mut lookup = HashMap::new();
        for (idx, e) in self.edges.iter().enumerate() {
            e.copula.validate()?;
            let [a, b] = e.conditioned;
            let cond = mask_of(&e.conditioning);
            let all = e.conditioning.iter().chain(&e.conditioned);
            if a == b || all.clone().any(|&v| v >= m) || cond.count_ones() as usize != e.conditioning.len() {
                return Err(VineError::Structure(format!("edge {idx} has invalid variables")));
            }
            if cond & mask_of(&[a, b]) != 0 {
                return Err(VineError::Structure(format!(
                    "edge {idx} conditions on its own variable"
                )));
            }
            if lookup.insert((a.min(b), a.max(b), cond), idx).is_some() {
                return Err(VineError::Structure(format!("edge {idx} duplicated")));
            }
        }
        for t in 1..m {
            let count = self.edges.iter().filter(|e| e.tree() == t).count();
            if count != m - t {
                return Err(VineError::Structure(format!(
                    "tree {t} has {count} edges, expected {}",
                    m - t
                )));
            }
        }
        if self.edges.iter().any(|e| e.tree() >= m) {
            return Err(VineError::Structure("edge beyond the last tree".into()));
        }
        let mut order = Vec::with_capacity(m);
        let mut steps = Vec::with_capacity(m);
        if !self.search(&mut order, &mut steps) {
            return Err(VineError::Structure(
                "edges do not admit a sequential sampling order".into(),
            ));
        }
        Ok(Plan { order, steps, lookup })
    }

    fn search(&self, order: &mut Vec<usize>, steps: &mut Vec<Vec<Step>>) -> bool {
        if order.len() == self.dim {
            return true;
        }
        let placed = mask_of(order);
        for x in 0..self.dim {
            if placed & (1 << x) != 0 {
                continue;
            }
            if let Some(s) = self.chain_for(x, placed, order.len()) {
                order.push(x);
                steps.push(s);
                if self.search(order, steps) {
                    return true;
                }
                order.pop();
                steps.pop();
            }
        }
        false
    }

    /// Edges linking `x` to the placed set, ordered so that each one's
    /// conditioning set is the previous one's conditioning plus partner.
    fn chain_for(&self, x: usize, placed: u64, count: usize) -> Option<Vec<Step>> {
        let mut s: Vec<Step> = self
            .edges
            .iter()
            .enumerate()
            .filter_map(|(idx, e)| {
                let partner = match e.conditioned {
                    [a, b] if a == x => b,
                    [a, b] if b == x => a,
                    _ => return None,
                };
                let given = mask_of(&e.conditioning);
                let inside = (placed >> partner) & 1 == 1 && given & !placed == 0;
                inside.then_some(Step {
                    edge: idx,
                    partner,
                    given,
                })
            })
            .collect();
        if s.len() != count {
            return None;
        }
        s.sort_by_key(|st| st.given.count_ones());
        let mut acc = 0u64;
        for st in &s {
            if st.given != acc {
                return None;
            }
            acc |= 1 << st.partner;
        }
        (acc == placed).then_some(s)
    }

    /// Checks that the edges form a sampleable vine.
    pub fn validate(&self) -> Result<()> {
        self.plan().map(|_| ())
    }

    /// Inverse Rosenblatt sampling: `n` draws returned as `dim` u-scale columns.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(n, &mut rng)
    }

    fn sample_with(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
        let plan = self.plan()?;
        let mut cols = vec![vec![0.0; n]; self.dim];
        let mut memo: HashMap<(usize, u64), f64> = HashMap::new();
        let mut w = vec![0.0; self.dim];
        for i in 0..n {
            memo.clear();
            for wj in w.iter_mut() {
                *wj = clamp_u(rng.random::<f64>());
            }
            let mut placed = 0u64;
            for (&x, steps) in plan.order.iter().zip(&plan.steps) {
                let mut val = w[x];
                memo.insert((x, placed), val);
                for st in steps.iter().rev() {
                    let cond = self.conditional(&plan, st.partner, st.given, &mut memo)?;
                    let e = &self.edges[st.edge];
                    let dir = if e.conditioned[0] == x {
                        Direction::UGivenV
                    } else {
                        Direction::VGivenU
                    };
                    val = e.copula.inv_h(val, cond, dir);
                    memo.insert((x, st.given), val);
                }
                cols[x][i] = val;
                placed |= 1 << x;
            }
        }
        Ok(cols)
    }

    /// `F(a | given)` for the current observation, built recursively from
    /// h-functions and cached in `memo`.
    fn conditional(&self, plan: &Plan, a: usize, given: u64, memo: &mut HashMap<(usize, u64), f64>) -> Result<f64> {
        if let Some(&v) = memo.get(&(a, given)) {
            return Ok(v);
        }
        let mut bits = given;
        while bits != 0 {
            let b = bits.trailing_zeros() as usize;
            bits &= bits - 1;
            let rest = given & !(1 << b);
            if let Some(&idx) = plan.lookup.get(&(a.min(b), a.max(b), rest)) {
                let fa = self.conditional(plan, a, rest, memo)?;
                let fb = self.conditional(plan, b, rest, memo)?;
                let e = &self.edges[idx];
                let v = if e.conditioned[0] == a {
                    e.copula.h(fa, fb, Direction::UGivenV)
                } else {
                    e.copula.h(fb, fa, Direction::VGivenU)
                };
                memo.insert((a, given), v);
                return Ok(v);
            }
        }
        Err(VineError::Structure(format!(
            "no edge yields the conditional of variable {a} given {given:#b}"
        )))
    }
}

fn spec(family: Family, rotation: u16, theta: f64) -> FamilySpec {
    FamilySpec::rotated(family, rotation, theta).expect("fixed admissible parameters")
}

/// R-vine of setting (e) on `(V, U1, ..., U4)` = variables `0..5`.
pub fn setting_e_vine() -> VineGeneratorSpec {
    use Family::*;
    let e = GenEdge::new;
    VineGeneratorSpec {
        dim: 5,
        edges: vec![
            e(1, 3, &[], spec(Gumbel, 0, 3.9)),
            e(2, 3, &[], spec(Gauss, 0, 0.9)),
            e(0, 3, &[], spec(Gauss, 0, 0.5)),
            e(0, 4, &[], spec(Clayton, 0, 4.8)),
            e(0, 1, &[3], spec(Gumbel, 90, 6.5)),
            e(0, 2, &[3], spec(Gumbel, 90, 2.6)),
            e(3, 4, &[0], spec(Gumbel, 0, 1.9)),
            e(1, 2, &[0, 3], spec(Clayton, 0, 0.9)),
            e(2, 4, &[0, 3], spec(Clayton, 90, 5.1)),
            e(1, 4, &[0, 2, 3], spec(Gauss, 0, 0.2)),
        ],
    }
}

/// D-vine of setting (f) on the path `V, U1, ..., U5` = variables `0..6`.
pub fn setting_f_vine() -> VineGeneratorSpec {
    use Family::*;
    let e = GenEdge::new;
    let ind = FamilySpec::independence();
    VineGeneratorSpec {
        dim: 6,
        edges: vec![
            e(0, 1, &[], spec(Clayton, 0, 3.00)),
            e(1, 2, &[], spec(Joe, 0, 8.77)),
            e(2, 3, &[], spec(Gumbel, 0, 2.00)),
            e(3, 4, &[], spec(Gauss, 0, 0.20)),
            e(4, 5, &[], ind),
            e(0, 2, &[1], spec(Gumbel, 0, 5.00)),
            e(1, 3, &[2], spec(Frank, 0, 9.44)),
            e(2, 4, &[3], spec(Joe, 0, 2.78)),
            e(3, 5, &[4], spec(Gauss, 0, 0.20)),
            e(0, 3, &[1, 2], spec(Joe, 0, 3.83)),
            e(1, 4, &[2, 3], spec(Frank, 0, 6.73)),
            e(2, 5, &[3, 4], spec(Gauss, 0, 0.29)),
            e(0, 4, &[1, 2, 3], spec(Clayton, 0, 2.00)),
            e(1, 5, &[2, 3, 4], spec(Gauss, 0, 0.09)),
            e(0, 5, &[1, 2, 3, 4], ind),
        ],
    }
}

/// Response of setting (a) without noise.
pub fn setting_a_mean(x1: f64, x2: f64, x3: f64, x4: f64) -> f64 {
    (2.0 * x1 - x2 + 0.5).abs().sqrt() + (-0.5 * x3 + 1.0) * (0.1 * x4.powi(3))
}

/// Coefficients of setting (h): `2.0, 1.9, ..., 1.1` then zeros.
pub fn setting_h_beta() -> Vec<f64> {
    (0..HIGH_DIM_P)
        .map(|j| if j < 10 { 2.0 - 0.1 * j as f64 } else { 0.0 })
        .collect()
}

/// Response of setting (h) without noise.
pub fn setting_h_mean(x: &[f64]) -> f64 {
    setting_h_beta().iter().zip(x).map(|(b, v)| b * v.powi(3)).sum()
}

fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (na, nb) = (a.nrows(), b.nrows());
    let mut m = DMatrix::zeros(na + nb, na + nb);
    m.view_mut((0, 0), (na, na)).copy_from(a);
    m.view_mut((na, na), (nb, nb)).copy_from(b);
    m
}

fn normals(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn with_response(y: Vec<f64>, xs: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    std::iter::once(y).chain(xs).collect()
}

fn draw_setting(spec: &SettingSpec, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    let sigma = spec.sigma;
    match spec.setting {
        SettingId::A | SettingId::G => {
            let p = spec.setting.n_covariates();
            let xs = draw_mvn(&cholesky(&ar1_cov(p, 0.5))?, n, rng);
            let eps = normals(n, rng);
            let y = (0..n)
                .map(|i| setting_a_mean(xs[0][i], xs[1][i], xs[2][i], xs[3][i]) + sigma * eps[i])
                .collect();
            Ok(with_response(y, xs))
        }
        SettingId::H => {
            let cov = block_diag(&ar1_cov(10, 0.8), &ar1_cov(HIGH_DIM_P - 10, 0.4));
            let xs = draw_mvn(&cholesky(&cov)?, n, rng);
            let eps = normals(n, rng);
            let beta = setting_h_beta();
            let y = (0..n)
                .map(|i| {
                    let mean: f64 = beta.iter().zip(&xs).take(10).map(|(b, col)| b * col[i].powi(3)).sum();
                    mean + sigma * eps[i]
                })
                .collect();
            Ok(with_response(y, xs))
        }
        SettingId::C | SettingId::D => {
            let xs = draw_mvn(&cholesky(&equicorrelation(4, 0.5))?, n, rng);
            let eps = normals(n, rng);
            let us: Vec<Vec<f64>> = xs.iter().map(|c| c.iter().map(|&v| norm_cdf(v)).collect()).collect();
            let y = (0..n)
                .map(|i| {
                    let su: f64 = us.iter().map(|c| c[i]).sum();
                    let e = HETERO_NOISE_SD * eps[i];
                    if spec.setting == SettingId::C {
                        let sx: f64 = xs.iter().map(|c| c[i]).sum();
                        5.0 * sx + 10.0 * su * e
                    } else {
                        us[0][i] * us[1][i] * (1.8 * us[2][i] * us[3][i]).exp() + 0.5 * su * e
                    }
                })
                .collect();
            Ok(with_response(y, xs))
        }
        SettingId::B => draw_t_mixture(n, rng),
        SettingId::E => setting_e_vine().sample_with(n, rng),
        SettingId::F => setting_f_vine().sample_with(n, rng),
    }
}

fn draw_t_mixture(n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    const NU: f64 = 3.0;
    let (r1, r2) = setting_b_correlations();
    let (l1, l2) = (cholesky(&r1)?, cholesky(&r2)?);
    let chi = ChiSquared::new(NU).expect("positive degrees of freedom");
    let t_nu = StudentsT::new(0.0, 1.0, NU).expect("valid t");
    let t4 = StudentsT::new(0.0, 1.0, 4.0).expect("valid t");
    let mut cols = vec![vec![0.0; n]; 6];
    let mut z = [0.0; 6];
    for i in 0..n {
        let l = if rng.random::<f64>() < 0.3 { &l1 } else { &l2 };
        for zj in z.iter_mut() {
            *zj = rng.sample(StandardNormal);
        }
        let scale = (chi.sample(rng) / NU).sqrt();
        for (r, col) in cols.iter_mut().enumerate() {
            let x: f64 = (0..=r).map(|c| l[(r, c)] * z[c]).sum::<f64>() / scale;
            let u = clamp_u(t_nu.cdf(x));
            col[i] = match r {
                0 => crate::special::norm_quantile(u),
                1 | 3 | 5 => t4.inverse_cdf(u),
                _ => 1.0 + 2.0 * crate::special::norm_quantile(u),
            };
        }
    }
    Ok(cols)
}

/// Draws training and evaluation samples of a setting. Both come from the
/// same seeded stream, training rows first.
pub fn gen_setting(spec: &SettingSpec) -> Result<GeneratedData> {
    if spec.setting.uses_sigma() && !(spec.sigma.is_finite() && spec.sigma >= 0.0) {
        return Err(VineError::Config(format!(
            "sigma {} must be finite and nonnegative",
            spec.sigma
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let train = draw_setting(spec, spec.n, &mut rng)?;
    let eval = draw_setting(spec, spec.setting.n_eval(spec.n), &mut rng)?;
    let mut metadata = BTreeMap::new();
    metadata.insert("setting".into(), spec.setting.letter().to_string());
    metadata.insert("seed".into(), spec.seed.to_string());
    metadata.insert("n_train".into(), spec.n.to_string());
    if spec.setting.uses_sigma() {
        metadata.insert("sigma".into(), spec.sigma.to_string());
    }
    match spec.setting {
        SettingId::C | SettingId::D => {
            metadata.insert("noise_sd".into(), HETERO_NOISE_SD.to_string());
        }
        SettingId::B => {
            metadata.insert("normal_margins".into(), "N(1, 4) read as mean 1, variance 4".into());
        }
        SettingId::E | SettingId::F => {
            metadata.insert("scale".into(), "uniform margins".into());
        }
        _ => {}
    }
    Ok(GeneratedData {
        train,
        eval,
        names: column_names(spec.setting.n_covariates()),
        metadata,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{kendall_tau, pearson};

    fn ks_uniform(x: &[f64]) -> f64 {
        let mut s = x.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len() as f64;
        s.iter()
            .enumerate()
            .map(|(i, &v)| (v - i as f64 / n).abs().max(((i + 1) as f64 / n - v).abs()))
            .fold(0.0, f64::max)
    }

    #[test]
    fn mvn_identity_uncorrelated() {
        let cols = mvn_sample(&DMatrix::identity(3, 3), 10_000, 1).unwrap();
        for i in 0..3 {
            for j in i + 1..3 {
                assert!(pearson(&cols[i], &cols[j]).abs() < 0.03);
            }
        }
    }

    #[test]
    fn mvn_ar1_correlation() {
        let cols = mvn_sample(&ar1_cov(4, 0.5), 10_000, 2).unwrap();
        assert!((pearson(&cols[0], &cols[1]) - 0.5).abs() < 0.03);
        assert!((pearson(&cols[0], &cols[2]) - 0.25).abs() < 0.03);
    }

    #[test]
    fn mvn_rejects_non_spd() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(mvn_sample(&bad, 10, 0).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.2, 1.0]);
        assert!(mvn_sample(&asym, 10, 0).is_err());
    }

    #[test]
    fn setting_a_at_origin() {
        assert!((setting_a_mean(0.0, 0.0, 0.0, 0.0) - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn setting_a_noise_free_matches_formula() {
        let d = gen_setting(&SettingSpec::new(SettingId::A, 0.0, 200, 3)).unwrap();
        for i in 0..200 {
            let x: Vec<f64> = (1..5).map(|j| d.train[j][i]).collect();
            let hand = (2.0 * x[0] - x[1] + 0.5).abs().sqrt() + (1.0 - 0.5 * x[2]) * 0.1 * x[3] * x[3] * x[3];
            assert!((d.train[0][i] - hand).abs() < 1e-12);
        }
    }

    #[test]
    fn setting_h_zero_point() {
        assert_eq!(setting_h_mean(&vec![0.0; HIGH_DIM_P]), 0.0);
        let beta = setting_h_beta();
        assert!((beta[0] - 2.0).abs() < 1e-15 && (beta[9] - 1.1).abs() < 1e-12);
        assert!(beta[10..].iter().all(|&b| b == 0.0));
        let mut x = vec![0.0; HIGH_DIM_P];
        x[1] = 2.0;
        x[50] = 3.0;
        assert!((setting_h_mean(&x) - 1.9 * 8.0).abs() < 1e-12);
    }

    #[test]
    fn shapes_per_setting() {
        for id in SettingId::ALL {
            let d = gen_setting(&SettingSpec::new(id, 0.1, 100, 4)).unwrap();
            let p = id.n_covariates();
            assert_eq!(d.train.len(), p + 1);
            assert_eq!(d.names.len(), p + 1);
            assert_eq!(d.train[0].len(), 100);
            assert_eq!(d.eval[0].len(), id.n_eval(100));
            assert!(d.train.iter().flatten().all(|v| v.is_finite()));
        }
        assert_eq!(SettingId::G.n_eval(HIGH_DIM_N_TRAIN), HIGH_DIM_N_TRAIN);
        assert_eq!(SettingId::F.n_eval(100), 50);
    }

    #[test]
    fn unknown_setting_rejected() {
        assert!(SettingId::parse("z").is_err());
        assert_eq!(SettingId::parse("F").unwrap(), SettingId::F);
    }

    #[test]
    fn seeded_determinism() {
        for id in [SettingId::B, SettingId::E, SettingId::H] {
            let s = SettingSpec::new(id, 1.0, 50, 11);
            let a = gen_setting(&s).unwrap();
            let b = gen_setting(&s).unwrap();
            assert_eq!(a.train, b.train);
            assert_eq!(a.eval, b.eval);
            let c = gen_setting(&SettingSpec { seed: 12, ..s }).unwrap();
            assert_ne!(a.train, c.train);
        }
    }

    #[test]
    fn hetero_noise_recorded() {
        let d = gen_setting(&SettingSpec::new(SettingId::C, 0.0, 10, 0)).unwrap();
        assert_eq!(d.metadata["noise_sd"], "0.5");
    }

    #[test]
    fn setting_c_conditional_spread() {
        // Var(Y | X) = 100 (sum U)^2 * 0.25.
        let d = gen_setting(&SettingSpec::new(SettingId::C, 0.0, 20_000, 5)).unwrap();
        let n = d.train[0].len();
        let resid: Vec<f64> = (0..n)
            .map(|i| {
                let sx: f64 = (1..5).map(|j| d.train[j][i]).sum();
                let su: f64 = (1..5).map(|j| norm_cdf(d.train[j][i])).sum();
                (d.train[0][i] - 5.0 * sx) / (10.0 * su)
            })
            .collect();
        let var = resid.iter().map(|r| r * r).sum::<f64>() / n as f64;
        assert!((var.sqrt() - 0.5).abs() < 0.01);
    }

    #[test]
    fn setting_b_margins() {
        let d = gen_setting(&SettingSpec::new(SettingId::B, 0.0, 20_000, 6)).unwrap();
        let t4 = StudentsT::new(0.0, 1.0, 4.0).unwrap();
        let n = |x: f64| norm_cdf(x);
        let pit = |j: usize| -> Vec<f64> {
            d.train[j]
                .iter()
                .map(|&v| match j {
                    0 => n(v),
                    1 | 3 | 5 => t4.cdf(v),
                    _ => n((v - 1.0) / 2.0),
                })
                .collect()
        };
        for j in 0..6 {
            assert!(ks_uniform(&pit(j)) < 0.02, "margin {j}");
        }
        // Mixture tau of (Y, X4): 0.3 * 2/pi asin(0.7) + 0.7 * 2/pi asin(-0.5).
        let mix = |r: f64| 2.0 / std::f64::consts::PI * r.asin();
        let want = 0.3 * mix(0.7) + 0.7 * mix(-0.5);
        let tau = kendall_tau(&d.train[0], &d.train[4]).unwrap();
        assert!((tau - want).abs() < 0.03, "{tau} vs {want}");
    }

    #[test]
    fn generator_structures_validate() {
        setting_e_vine().validate().unwrap();
        setting_f_vine().validate().unwrap();
        let mut broken = setting_f_vine();
        broken.edges[5].conditioning = vec![4];
        assert!(broken.validate().is_err());
        let mut short = setting_e_vine();
        short.edges.pop();
        assert!(short.validate().is_err());
    }

    #[test]
    fn independence_vine_is_uniform_and_independent() {
        let ind = FamilySpec::independence();
        let g = VineGeneratorSpec {
            dim: 3,
            edges: vec![
                GenEdge::new(0, 1, &[], ind),
                GenEdge::new(1, 2, &[], ind),
                GenEdge::new(0, 2, &[1], ind),
            ],
        };
        let cols = g.sample(50_000, 7).unwrap();
        for j in 0..3 {
            assert!(ks_uniform(&cols[j]) < 0.02);
            for k in j + 1..3 {
                assert!(kendall_tau(&cols[j], &cols[k]).unwrap().abs() <= 0.02);
            }
        }
    }

    fn check_tree1(g: &VineGeneratorSpec, seed: u64) {
        let cols = g.sample(50_000, seed).unwrap();
        for c in &cols {
            assert!(ks_uniform(c) < 0.02);
        }
        for e in g.edges.iter().filter(|e| e.tree() == 1) {
            let [a, b] = e.conditioned;
            let tau = kendall_tau(&cols[a], &cols[b]).unwrap();
            assert!(
                (tau - e.copula.tau()).abs() < 0.03,
                "({a},{b}) {tau} vs {}",
                e.copula.tau()
            );
        }
    }

    #[test]
    fn setting_e_tree1_taus() {
        let cols = setting_e_vine().sample(50_000, 8).unwrap();
        let tau = kendall_tau(&cols[0], &cols[4]).unwrap();
        assert!((tau - 0.71).abs() < 0.03);
        check_tree1(&setting_e_vine(), 8);
    }

    #[test]
    fn setting_f_tree1_taus() {
        let cols = setting_f_vine().sample(50_000, 9).unwrap();
        let tau = kendall_tau(&cols[3], &cols[4]).unwrap();
        assert!((tau - 0.13).abs() < 0.03);
        check_tree1(&setting_f_vine(), 9);
    }

    #[test]
    fn setting_e_and_f_tau() {
        let e = gen_setting(&SettingSpec::new(SettingId::E, 0.0, 20_000, 10)).unwrap();
        let tau = kendall_tau(&e.train[1], &e.train[3]).unwrap();
        assert!((tau - 0.74).abs() < 0.03);
        let f = gen_setting(&SettingSpec::new(SettingId::F, 0.0, 20_000, 10)).unwrap();
        let tau = kendall_tau(&f.train[0], &f.train[1]).unwrap();
        assert!((tau - 0.60).abs() < 0.03);
    }

    #[test]
    fn two_dim_vine_matches_pair_sampler() {
        // Conditional inversion of a single Clayton edge: the conditional
        // CDF of the second variable is uniform.
        let c = FamilySpec::new(Family::Clayton, 2.0).unwrap();
        let g = VineGeneratorSpec {
            dim: 2,
            edges: vec![GenEdge::new(0, 1, &[], c)],
        };
        let cols = g.sample(20_000, 3).unwrap();
        let pit: Vec<f64> = cols[0]
            .iter()
            .zip(&cols[1])
            .map(|(&u, &v)| c.h(u, v, Direction::VGivenU))
            .collect();
        assert!(ks_uniform(&pit) < 0.02);
    }
}
