//! Closed-form one-parameter bivariate copula families with rotations.
//!
//! Rotation convention (applied to the base density `c0`):
//! 90° is `c0(1-u, v)`, 180° is `c0(1-u, 1-v)` and 270° is `c0(u, 1-v)`.
//! The 90° and 270° rotations flip the sign of Kendall's tau.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::gamma::ln_gamma;

use super::Direction;
use crate::error::{Result, VineError};
use crate::numeric::{adaptive_simpson, bisect_increasing};
use crate::special::{clamp_u, norm_cdf, norm_quantile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    Independence,
    Gauss,
    StudentT,
    Clayton,
    Gumbel,
    Frank,
    Joe,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub family: Family,
    pub rotation: u16,
    pub theta: f64,
    /// Degrees of freedom; only read for [`Family::StudentT`].
    pub nu: f64,
}

impl FamilySpec {
    pub fn new(family: Family, theta: f64) -> Result<Self> {
        Self::rotated(family, 0, theta)
    }

    pub fn rotated(family: Family, rotation: u16, theta: f64) -> Result<Self> {
        let spec = FamilySpec {
            family,
            rotation,
            theta,
            nu: 0.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn student_t(rho: f64, nu: f64) -> Result<Self> {
        let spec = FamilySpec {
            family: Family::StudentT,
            rotation: 0,
            theta: rho,
            nu,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn independence() -> Self {
        FamilySpec {
            family: Family::Independence,
            rotation: 0,
            theta: 0.0,
            nu: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.rotation, 0 | 90 | 180 | 270) {
            return Err(VineError::Parameter(format!(
                "rotation {} not in {{0, 90, 180, 270}}",
                self.rotation
            )));
        }
        let t = self.theta;
        let ok = match self.family {
            Family::Independence => true,
            Family::Gauss => t > -1.0 && t < 1.0,
            Family::StudentT => t > -1.0 && t < 1.0 && self.nu > 2.0,
            Family::Clayton => t > 0.0 && t.is_finite(),
            Family::Gumbel => (1.0..f64::INFINITY).contains(&t),
            Family::Frank => t != 0.0 && t.is_finite(),
            Family::Joe => t > 1.0 && t.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(VineError::Parameter(format!(
                "parameter {t} (nu {}) not admissible for {:?}",
                self.nu, self.family
            )))
        }
    }

    pub fn pdf(&self, u: f64, v: f64) -> f64 {
        let (u, v) = (clamp_u(u), clamp_u(v));
        let (a, b) = match self.rotation {
            90 => (1.0 - u, v),
            180 => (1.0 - u, 1.0 - v),
            270 => (u, 1.0 - v),
            _ => (u, v),
        };
        self.base_pdf(a, b)
    }

    /// Conditional distribution function. With [`Direction::UGivenV`] this is
    /// `P(U <= u | V = v)`; with [`Direction::VGivenU`] it is `P(V <= v | U = u)`.
    pub fn h(&self, u: f64, v: f64, dir: Direction) -> f64 {
        let (u, v) = (clamp_u(u), clamp_u(v));
        let val = match (dir, self.rotation) {
            (Direction::UGivenV, 90) => 1.0 - self.base_h(1.0 - u, v),
            (Direction::UGivenV, 180) => 1.0 - self.base_h(1.0 - u, 1.0 - v),
            (Direction::UGivenV, 270) => self.base_h(u, 1.0 - v),
            (Direction::UGivenV, _) => self.base_h(u, v),
            (Direction::VGivenU, 90) => self.base_h(v, 1.0 - u),
            (Direction::VGivenU, 180) => 1.0 - self.base_h(1.0 - v, 1.0 - u),
            (Direction::VGivenU, 270) => 1.0 - self.base_h(1.0 - v, u),
            (Direction::VGivenU, _) => self.base_h(v, u),
        };
        clamp_u(val)
    }

    /// Inverse of [`FamilySpec::h`] in its first (conditioned) argument:
    /// returns `x` with `h(x | cond) = w`.
    pub fn inv_h(&self, w: f64, cond: f64, dir: Direction) -> f64 {
        let (w, c) = (clamp_u(w), clamp_u(cond));
        let val = match (dir, self.rotation) {
            (Direction::UGivenV, 90) => 1.0 - self.base_hinv(1.0 - w, c),
            (Direction::UGivenV, 180) => 1.0 - self.base_hinv(1.0 - w, 1.0 - c),
            (Direction::UGivenV, 270) => self.base_hinv(w, 1.0 - c),
            (Direction::UGivenV, _) => self.base_hinv(w, c),
            (Direction::VGivenU, 90) => self.base_hinv(w, 1.0 - c),
            (Direction::VGivenU, 180) => 1.0 - self.base_hinv(1.0 - w, 1.0 - c),
            (Direction::VGivenU, 270) => 1.0 - self.base_hinv(1.0 - w, c),
            (Direction::VGivenU, _) => self.base_hinv(w, c),
        };
        clamp_u(val)
    }

    pub fn tau(&self) -> f64 {
        let base = base_tau(self.family, self.theta);
        match self.rotation {
            90 | 270 => -base,
            _ => base,
        }
    }

    /// Draws `n` pairs by conditional inversion: `u = w1`, `v = h^{-1}(w2 | u)`.
    pub fn sample_pair(&self, n: usize, seed: u64) -> Vec<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let w1: f64 = rng.random();
                let w2: f64 = rng.random();
                let u = clamp_u(w1);
                (u, self.inv_h(w2, u, Direction::VGivenU))
            })
            .collect()
    }

    fn t_dist(&self, df: f64) -> StudentsT {
        StudentsT::new(0.0, 1.0, df).expect("validated degrees of freedom")
    }

    fn base_pdf(&self, a: f64, b: f64) -> f64 {
        let t = self.theta;
        match self.family {
            Family::Independence => 1.0,
            Family::Gauss => {
                let (x, y) = (norm_quantile(a), norm_quantile(b));
                let s = 1.0 - t * t;
                (-(t * t * (x * x + y * y) - 2.0 * t * x * y) / (2.0 * s)).exp() / s.sqrt()
            }
            Family::StudentT => {
                let nu = self.nu;
                let td = self.t_dist(nu);
                let (x, y) = (td.inverse_cdf(a), td.inverse_cdf(b));
                let s = 1.0 - t * t;
                let log_c = ln_gamma((nu + 2.0) / 2.0) + ln_gamma(nu / 2.0)
                    - 2.0 * ln_gamma((nu + 1.0) / 2.0)
                    - 0.5 * s.ln()
                    - (nu + 2.0) / 2.0 * (1.0 + (x * x - 2.0 * t * x * y + y * y) / (nu * s)).ln()
                    + (nu + 1.0) / 2.0 * ((1.0 + x * x / nu).ln() + (1.0 + y * y / nu).ln());
                log_c.exp()
            }
            Family::Clayton => {
                let l = clayton_log_sum(a, b, t);
                ((1.0 + t).ln() - (1.0 + t) * (a.ln() + b.ln()) - (2.0 + 1.0 / t) * l).exp()
            }
            Family::Gumbel => {
                let (x, y) = (-a.ln(), -b.ln());
                let big_a = (x.powf(t) + y.powf(t)).powf(1.0 / t);
                let log_c = -big_a - a.ln() - b.ln()
                    + (t - 1.0) * (x * y).ln()
                    + (1.0 - 2.0 * t) * big_a.ln()
                    + (big_a + t - 1.0).ln();
                log_c.exp()
            }
            Family::Frank => {
                let e1 = -(-t).exp_m1();
                let ea = -(-t * a).exp_m1();
                let eb = -(-t * b).exp_m1();
                let den = e1 - ea * eb;
                t * e1 * (-t * (a + b)).exp() / (den * den)
            }
            Family::Joe => {
                let (p, q) = ((1.0 - a).powf(t), (1.0 - b).powf(t));
                let s = p + q - p * q;
                s.powf(1.0 / t - 2.0) * (1.0 - a).powf(t - 1.0) * (1.0 - b).powf(t - 1.0) * (t - 1.0 + s)
            }
        }
    }

    /// `P(A <= a | B = b)` for the unrotated family.
    fn base_h(&self, a: f64, b: f64) -> f64 {
        let t = self.theta;
        match self.family {
            Family::Independence => a,
            Family::Gauss => {
                let (x, y) = (norm_quantile(a), norm_quantile(b));
                norm_cdf((x - t * y) / (1.0 - t * t).sqrt())
            }
            Family::StudentT => {
                let nu = self.nu;
                let td = self.t_dist(nu);
                let (x, y) = (td.inverse_cdf(a), td.inverse_cdf(b));
                let scale = ((nu + y * y) * (1.0 - t * t) / (nu + 1.0)).sqrt();
                self.t_dist(nu + 1.0).cdf((x - t * y) / scale)
            }
            Family::Clayton => {
                let l = clayton_log_sum(a, b, t);
                (-(t + 1.0) * b.ln() - (1.0 + 1.0 / t) * l).exp()
            }
            Family::Gumbel => {
                let (x, y) = (-a.ln(), -b.ln());
                let big_a = (x.powf(t) + y.powf(t)).powf(1.0 / t);
                (-big_a + (1.0 - t) * big_a.ln() + (t - 1.0) * y.ln() - b.ln()).exp()
            }
            Family::Frank => {
                let ea = (-t * a).exp_m1();
                let eb = (-t * b).exp_m1();
                let e1 = (-t).exp_m1();
                (eb + 1.0) * ea / (e1 + ea * eb)
            }
            Family::Joe => {
                let (p, q) = ((1.0 - a).powf(t), (1.0 - b).powf(t));
                let s = p + q - p * q;
                s.powf(1.0 / t - 1.0) * (1.0 - b).powf(t - 1.0) * (1.0 - p)
            }
        }
    }

    fn base_hinv(&self, w: f64, b: f64) -> f64 {
        let t = self.theta;
        match self.family {
            Family::Independence => w,
            Family::Gauss => norm_cdf(norm_quantile(w) * (1.0 - t * t).sqrt() + t * norm_quantile(b)),
            Family::StudentT => {
                let nu = self.nu;
                let td = self.t_dist(nu);
                let y = td.inverse_cdf(b);
                let scale = ((nu + y * y) * (1.0 - t * t) / (nu + 1.0)).sqrt();
                let x = self.t_dist(nu + 1.0).inverse_cdf(w) * scale + t * y;
                td.cdf(x)
            }
            Family::Clayton => {
                // a = (1 + b^{-t} (w^{-t/(t+1)} - 1))^{-1/t}, evaluated in logs
                let lt = -t * b.ln() + (-(t / (t + 1.0)) * w.ln()).exp_m1().ln();
                let softplus = if lt > 30.0 {
                    lt + (-lt).exp().ln_1p()
                } else {
                    lt.exp().ln_1p()
                };
                (-softplus / t).exp()
            }
            Family::Frank => {
                let eb = (-t * b).exp_m1();
                let e1 = (-t).exp_m1();
                let big_a = w * e1 / (1.0 + eb * (1.0 - w));
                -big_a.ln_1p() / t
            }
            Family::Gumbel | Family::Joe => bisect_increasing(|a| self.base_h(a, b), w, 0.0, 1.0, 80),
        }
    }
}

/// `ln(a^{-t} + b^{-t} - 1)` without overflow.
fn clayton_log_sum(a: f64, b: f64, t: f64) -> f64 {
    let la = -t * a.ln();
    let lb = -t * b.ln();
    let m = la.max(lb);
    m + ((la - m).exp() + (lb - m).exp() - (-m).exp()).ln()
}

fn debye1(x: f64) -> f64 {
    let f = |t: f64| if t == 0.0 { 1.0 } else { t / t.exp_m1() };
    adaptive_simpson(&f, 0.0, x, 1e-11) / x
}

fn base_tau(family: Family, t: f64) -> f64 {
    match family {
        Family::Independence => 0.0,
        Family::Gauss | Family::StudentT => 2.0 / PI * t.asin(),
        Family::Clayton => t / (t + 2.0),
        Family::Gumbel => 1.0 - 1.0 / t,
        Family::Frank => {
            let a = t.abs();
            let tau = 1.0 - 4.0 / a * (1.0 - debye1(a));
            tau.copysign(t)
        }
        Family::Joe => {
            // tau = 1 + 4 ∫ φ(t)/φ'(t) dt with generator φ(t) = -ln(1 - (1-t)^θ)
            let f = |s: f64| {
                if s <= 0.0 || s >= 1.0 {
                    return 0.0;
                }
                let st = s.powf(t);
                if st < 1e-300 {
                    return -s / t;
                }
                (-st).ln_1p() * (1.0 - st) * s / (t * st)
            };
            1.0 + 4.0 * adaptive_simpson(&f, 0.0, 1.0, 1e-10)
        }
    }
}

/// Kendall's tau implied by a family parameter (rotation aware).
pub fn param_to_tau(spec: &FamilySpec) -> Result<f64> {
    spec.validate()?;
    Ok(spec.tau())
}

/// Family parameter attaining Kendall's tau `tau` under the given rotation.
pub fn tau_to_param(family: Family, rotation: u16, tau: f64) -> Result<f64> {
    let base = match rotation {
        90 | 270 => -tau,
        0 | 180 => tau,
        r => return Err(VineError::Parameter(format!("rotation {r}"))),
    };
    let out_of_range =
        || VineError::Parameter(format!("tau {tau} not attainable for {family:?} (rotation {rotation})"));
    if !(base > -1.0 && base < 1.0) {
        return Err(out_of_range());
    }
    let theta = match family {
        Family::Independence => {
            if base != 0.0 {
                return Err(out_of_range());
            }
            0.0
        }
        Family::Gauss | Family::StudentT => (PI * base / 2.0).sin(),
        Family::Clayton => {
            if base <= 0.0 {
                return Err(out_of_range());
            }
            2.0 * base / (1.0 - base)
        }
        Family::Gumbel => {
            if base < 0.0 {
                return Err(out_of_range());
            }
            1.0 / (1.0 - base)
        }
        Family::Frank => {
            if base == 0.0 {
                return Err(out_of_range());
            }
            let a = base.abs();
            if a > base_tau(Family::Frank, 400.0) {
                return Err(out_of_range());
            }
            let th = bisect_increasing(|x| base_tau(Family::Frank, x), a, 1e-6, 400.0, 100);
            th.copysign(base)
        }
        Family::Joe => {
            if base <= 0.0 {
                return Err(out_of_range());
            }
            if base > base_tau(Family::Joe, 400.0) {
                return Err(out_of_range());
            }
            bisect_increasing(|x| base_tau(Family::Joe, x), base, 1.0 + 1e-9, 400.0, 100)
        }
    };
    Ok(theta)
}
