//! Bivariate copulas: normal, Student-t, Clayton, rotated Gumbel and the
//! symmetrized Joe-Clayton, plus the independence copula as a null model.
//!
//! Pointwise quantities (log density, distribution function, conditional
//! distribution `∂C/∂u`, score, tail dependence) are generic over [`Scalar`].
//! Sampling, Fisher information and the score-driven filter work in `f64`.
//!
//! One-parameter families and the correlation of the elliptical families can
//! move through time. Their natural parameter maps to an unbounded `kappa`
//! through [`CopulaParams::link`]:
//!
//! * normal, Student-t: `rho = tanh(kappa / 2)`
//! * Clayton: `theta = exp(kappa)`
//! * rotated Gumbel: `delta = 1 + exp(kappa)`

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::OnceLock;

use chrono::NaiveDate;
use rand::distributions::Open01;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Exp1, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{integrate_adaptive, GaussLegendre};
use crate::scalar::{lit, Scalar};
use crate::special::{ln_gamma, norm_cdf, norm_pdf, norm_ppf, t_cdf, t_ppf, TCache};

/// Pseudo-observations are clipped into `[U_CLIP, 1 - U_CLIP]`.
pub const U_CLIP: f64 = 1e-10;

/// Bound on the filtered `kappa`; the filter clamps and flags beyond it.
pub const KAPPA_BOUND: f64 = 50.0;

/// Floor applied to the Fisher information before taking `I^{-1/2}`.
pub const FISHER_FLOOR: f64 = 1e-8;

/// Copula family tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Independence,
    Normal,
    StudentT,
    Clayton,
    RotatedGumbel,
    Sjc,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Normal,
        Family::StudentT,
        Family::Clayton,
        Family::RotatedGumbel,
        Family::Sjc,
    ];

    /// Families whose parameter may follow score-driven dynamics.
    pub fn supports_gas(self) -> bool {
        matches!(
            self,
            Family::Normal | Family::StudentT | Family::RotatedGumbel
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Independence => "independence",
            Family::Normal => "normal",
            Family::StudentT => "student-t",
            Family::Clayton => "clayton",
            Family::RotatedGumbel => "rotated-gumbel",
            Family::Sjc => "sjc",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "independence" | "indep" => Ok(Family::Independence),
            "normal" | "gaussian" => Ok(Family::Normal),
            "student-t" | "t" | "student" => Ok(Family::StudentT),
            "clayton" => Ok(Family::Clayton),
            "rotated-gumbel" | "rgumbel" | "gumbel" => Ok(Family::RotatedGumbel),
            "sjc" | "symmetrized-joe-clayton" => Ok(Family::Sjc),
            other => Err(Error::Format(format!("unknown copula family `{other}`"))),
        }
    }
}

/// A copula family together with its parameter values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum CopulaParams<T> {
    Independence,
    Normal { rho: T },
    StudentT { rho: T, eta: T },
    Clayton { theta: T },
    RotatedGumbel { delta: T },
    Sjc { tau_u: T, tau_l: T },
}

impl<T: Scalar> CopulaParams<T> {
    pub fn normal(rho: T) -> Result<Self> {
        Self::Normal { rho }.validated()
    }

    pub fn student_t(rho: T, eta: T) -> Result<Self> {
        Self::StudentT { rho, eta }.validated()
    }

    pub fn clayton(theta: T) -> Result<Self> {
        Self::Clayton { theta }.validated()
    }

    pub fn rotated_gumbel(delta: T) -> Result<Self> {
        Self::RotatedGumbel { delta }.validated()
    }

    pub fn sjc(tau_u: T, tau_l: T) -> Result<Self> {
        Self::Sjc { tau_u, tau_l }.validated()
    }

    fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    pub fn family(&self) -> Family {
        match self {
            Self::Independence => Family::Independence,
            Self::Normal { .. } => Family::Normal,
            Self::StudentT { .. } => Family::StudentT,
            Self::Clayton { .. } => Family::Clayton,
            Self::RotatedGumbel { .. } => Family::RotatedGumbel,
            Self::Sjc { .. } => Family::Sjc,
        }
    }

    /// Check the parameter ranges of the family.
    pub fn validate(&self) -> Result<()> {
        let one = T::one();
        let ok = match *self {
            Self::Independence => true,
            Self::Normal { rho } => rho > -one && rho < one,
            Self::StudentT { rho, eta } => {
                rho > -one && rho < one && eta > T::zero() && eta.is_finite()
            }
            Self::Clayton { theta } => theta > T::zero() && theta.is_finite(),
            Self::RotatedGumbel { delta } => delta >= one && delta.is_finite(),
            Self::Sjc { tau_u, tau_l } => {
                tau_u > T::zero() && tau_u < one && tau_l > T::zero() && tau_l < one
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::domain(format!(
                "copula parameters out of range: {self:?}"
            )))
        }
    }

    /// Parameter names and values in a fixed order.
    pub fn named(&self) -> Vec<(&'static str, T)> {
        match *self {
            Self::Independence => vec![],
            Self::Normal { rho } => vec![("rho", rho)],
            Self::StudentT { rho, eta } => vec![("rho", rho), ("eta_inv", eta.recip())],
            Self::Clayton { theta } => vec![("theta", theta)],
            Self::RotatedGumbel { delta } => vec![("delta", delta)],
            Self::Sjc { tau_u, tau_l } => vec![("tau_u", tau_u), ("tau_l", tau_l)],
        }
    }

    /// The parameter that may vary through time, if the family has one.
    pub fn dynamic(&self) -> Option<T> {
        match *self {
            Self::Normal { rho } | Self::StudentT { rho, .. } => Some(rho),
            Self::Clayton { theta } => Some(theta),
            Self::RotatedGumbel { delta } => Some(delta),
            Self::Independence | Self::Sjc { .. } => None,
        }
    }

    /// Copy with the dynamic parameter replaced.
    pub fn with_dynamic(&self, d: T) -> Self {
        match *self {
            Self::Normal { .. } => Self::Normal { rho: d },
            Self::StudentT { eta, .. } => Self::StudentT { rho: d, eta },
            Self::Clayton { .. } => Self::Clayton { theta: d },
            Self::RotatedGumbel { .. } => Self::RotatedGumbel { delta: d },
            other => other,
        }
    }

    /// Map the dynamic parameter to the real line.
    pub fn link(&self, d: T) -> Result<T> {
        let one = T::one();
        match self.family() {
            Family::Normal | Family::StudentT if d > -one && d < one => {
                Ok(((one + d) / (one - d)).ln())
            }
            Family::Clayton if d > T::zero() => Ok(d.ln()),
            Family::RotatedGumbel if d > one => Ok((d - one).ln()),
            Family::Independence | Family::Sjc => Err(Error::domain(format!(
                "{} copula has no time-varying parameter",
                self.family()
            ))),
            f => Err(Error::domain(format!(
                "{d} outside the range of the {f} parameter"
            ))),
        }
    }

    /// Inverse of [`CopulaParams::link`].
    pub fn link_inv(&self, kappa: T) -> T {
        let half = lit::<T>(0.5);
        match self.family() {
            Family::Normal | Family::StudentT => (half * kappa).tanh(),
            Family::Clayton => kappa.exp(),
            Family::RotatedGumbel => T::one() + kappa.exp(),
            Family::Independence | Family::Sjc => T::nan(),
        }
    }

    /// Log density at `(u, v)`, which must be strictly inside the unit square.
    pub fn ln_pdf(&self, u: T, v: T) -> T {
        match *self {
            Self::Independence => T::zero(),
            Self::Normal { rho } => normal_ln_pdf(norm_ppf(u), norm_ppf(v), rho),
            Self::StudentT { rho, eta } => t_ln_pdf(t_ppf(u, eta), t_ppf(v, eta), rho, eta),
            Self::Clayton { theta } => clayton_ln_pdf(u.ln(), v.ln(), theta),
            Self::RotatedGumbel { delta } => gumbel_ln_pdf(T::one() - u, T::one() - v, delta),
            Self::Sjc { tau_u, tau_l } => sjc_parts(u, v, tau_u, tau_l).0,
        }
    }

    /// Log density with a check that the point is interior.
    pub fn try_ln_pdf(&self, u: T, v: T) -> Result<T> {
        check_interior(u, v)?;
        Ok(self.ln_pdf(u, v))
    }

    pub fn pdf(&self, u: T, v: T) -> T {
        self.ln_pdf(u, v).exp()
    }

    /// Copula distribution function `C(u, v)` on the closed unit square.
    pub fn cdf(&self, u: T, v: T) -> T {
        let (zero, one) = (T::zero(), T::one());
        if u <= zero || v <= zero {
            return zero;
        }
        if u >= one {
            return v.min(one);
        }
        if v >= one {
            return u;
        }
        match *self {
            Self::Independence => u * v,
            Self::Normal { rho } => normal_cdf(u, v, rho),
            Self::StudentT { rho, eta } => {
                let y = t_ppf(v, eta);
                let f = |s: T| t_h(t_ppf(s, eta), y, rho, eta);
                integrate_adaptive(f, zero, u, lit(1e-12))
                    .max(zero)
                    .min(u.min(v))
            }
            Self::Clayton { theta } => {
                let ls = clayton_ln_s(-theta * u.ln(), -theta * v.ln());
                (-ls / theta).exp()
            }
            Self::RotatedGumbel { delta } => u + v - one + gumbel_cdf(one - u, one - v, delta),
            Self::Sjc { tau_u, tau_l } => {
                let (k1, g1, k2, g2) = sjc_shapes(tau_u, tau_l);
                let half = lit::<T>(0.5);
                half * (jc_cdf(u, v, k1, g1) + jc_cdf(one - u, one - v, k2, g2) + u + v - one)
            }
        }
    }

    /// Conditional distribution `P(V ≤ v | U = u) = ∂C(u, v)/∂u`.
    pub fn h(&self, u: T, v: T) -> T {
        let one = T::one();
        match *self {
            Self::Independence => v,
            Self::Normal { rho } => {
                let (x, y) = (norm_ppf(u), norm_ppf(v));
                norm_cdf((y - rho * x) / (one - rho * rho).sqrt())
            }
            Self::StudentT { rho, eta } => t_h(t_ppf(u, eta), t_ppf(v, eta), rho, eta),
            Self::Clayton { theta } => {
                let (lu, lv) = (u.ln(), v.ln());
                let ls = clayton_ln_s(-theta * lu, -theta * lv);
                ((-theta - one) * lu - (theta.recip() + one) * ls).exp()
            }
            Self::RotatedGumbel { delta } => one - gumbel_h(one - u, one - v, delta),
            Self::Sjc { tau_u, tau_l } => {
                let (k1, g1, k2, g2) = sjc_shapes(tau_u, tau_l);
                let half = lit::<T>(0.5);
                half * (jc_h(u, v, k1, g1) - jc_h(one - u, one - v, k2, g2) + one)
            }
        }
        .max(T::zero())
        .min(one)
    }

    /// Derivative of the log density with respect to the dynamic parameter.
    ///
    /// The SJC copula has two parameters; see [`CopulaParams::sjc_gradient`].
    pub fn score(&self, u: T, v: T) -> Result<T> {
        Ok(match *self {
            Self::Normal { rho } => normal_score(norm_ppf(u), norm_ppf(v), rho),
            Self::StudentT { rho, eta } => t_score(t_ppf(u, eta), t_ppf(v, eta), rho, eta),
            Self::Clayton { theta } => clayton_score(u.ln(), v.ln(), theta),
            Self::RotatedGumbel { delta } => gumbel_score(T::one() - u, T::one() - v, delta),
            Self::Independence | Self::Sjc { .. } => {
                return Err(Error::domain(format!(
                    "{} copula has no scalar score",
                    self.family()
                )))
            }
        })
    }

    /// Gradient of the SJC log density with respect to `(tau_u, tau_l)`.
    pub fn sjc_gradient(&self, u: T, v: T) -> Result<(T, T)> {
        match *self {
            Self::Sjc { tau_u, tau_l } => {
                let (_, du, dl) = sjc_parts(u, v, tau_u, tau_l);
                Ok((du, dl))
            }
            _ => Err(Error::domain(
                "gradient in (tau_u, tau_l) needs an SJC copula",
            )),
        }
    }

    /// Lower and upper tail dependence coefficients.
    pub fn tail_dependence(&self) -> (T, T) {
        let (zero, one, two) = (T::zero(), T::one(), lit::<T>(2.0));
        match *self {
            Self::Independence | Self::Normal { .. } => (zero, zero),
            Self::StudentT { rho, eta } => {
                let arg = -((eta + one) * (one - rho) / (one + rho)).sqrt();
                let l = two * t_cdf(arg, eta + one);
                (l, l)
            }
            Self::Clayton { theta } => (two.powf(-theta.recip()), zero),
            Self::RotatedGumbel { delta } => (two - two.powf(delta.recip()), zero),
            Self::Sjc { tau_u, tau_l } => (tau_l, tau_u),
        }
    }
}

impl CopulaParams<f64> {
    /// One draw from the copula.
    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        match *self {
            Self::Independence => (rng.sample(Open01), rng.sample(Open01)),
            Self::Normal { rho } => {
                let z1: f64 = rng.sample(StandardNormal);
                let z2: f64 = rng.sample(StandardNormal);
                let y = rho * z1 + (1.0 - rho * rho).sqrt() * z2;
                (clip(norm_cdf(z1)), clip(norm_cdf(y)))
            }
            Self::StudentT { rho, eta } => {
                let z1: f64 = rng.sample(StandardNormal);
                let z2: f64 = rng.sample(StandardNormal);
                let w = ChiSquared::new(eta).expect("positive dof").sample(rng) / eta;
                let s = w.sqrt();
                let x = z1 / s;
                let y = (rho * z1 + (1.0 - rho * rho).sqrt() * z2) / s;
                (clip(t_cdf(x, eta)), clip(t_cdf(y, eta)))
            }
            Self::Clayton { theta } => {
                let g = Gamma::new(1.0 / theta, 1.0)
                    .expect("positive shape")
                    .sample(rng);
                let e1: f64 = rng.sample(Exp1);
                let e2: f64 = rng.sample(Exp1);
                let f = |e: f64| (-(e / g).ln_1p() / theta).exp();
                (clip(f(e1)), clip(f(e2)))
            }
            Self::RotatedGumbel { delta } => {
                let s = positive_stable(delta.recip(), rng);
                let e1: f64 = rng.sample(Exp1);
                let e2: f64 = rng.sample(Exp1);
                // 1 - exp(-t) computed without cancellation
                let f = |e: f64| -(-(e / s).powf(delta.recip())).exp_m1();
                (clip(f(e1)), clip(f(e2)))
            }
            Self::Sjc { .. } => {
                let u: f64 = rng.sample(Open01);
                let w: f64 = rng.sample(Open01);
                (u, self.h_inverse(u, w))
            }
        }
    }

    /// `n` draws from the copula.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<(f64, f64)> {
        (0..n).map(|_| self.sample_one(rng)).collect()
    }

    /// Solve `h(u, v) = w` for `v` by bisection.
    pub fn h_inverse(&self, u: f64, w: f64) -> f64 {
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.h(u, mid) < w {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        clip(0.5 * (lo + hi))
    }

    /// Rosenblatt transform with constant parameters.
    pub fn rosenblatt(&self, u: &[(f64, f64)]) -> Vec<(f64, f64)> {
        u.iter().map(|&(a, b)| (a, self.h(a, b))).collect()
    }

    /// Fisher information of the dynamic parameter.
    ///
    /// Closed form for the elliptical families; interpolated from a cached
    /// quadrature grid in `kappa` for Clayton and rotated Gumbel.
    pub fn fisher_info(&self) -> Result<f64> {
        match *self {
            Self::Normal { rho } => Ok(elliptical_info(rho, 1.0)),
            Self::StudentT { rho, eta } => Ok(elliptical_info(rho, (eta + 2.0) / (eta + 4.0))),
            Self::Clayton { theta } => Ok(FisherGrid::clayton().at(theta.ln())),
            Self::RotatedGumbel { delta } => Ok(FisherGrid::gumbel().at((delta - 1.0).ln())),
            _ => Err(Error::domain(format!(
                "{} copula has no scalar score",
                self.family()
            ))),
        }
    }
}

/// Clip a pseudo-observation into the open unit interval.
#[inline]
pub fn clip(u: f64) -> f64 {
    u.clamp(U_CLIP, 1.0 - U_CLIP)
}

/// Clip a series of pairs, returning the number of coordinates changed.
pub fn clip_pairs(u: &[(f64, f64)]) -> (Vec<(f64, f64)>, usize) {
    let mut n = 0;
    let out = u
        .iter()
        .map(|&(a, b)| {
            let (ca, cb) = (clip(a), clip(b));
            n += usize::from(ca != a) + usize::from(cb != b);
            (ca, cb)
        })
        .collect();
    (out, n)
}

fn check_interior<T: Scalar>(u: T, v: T) -> Result<()> {
    let inside = |x: T| x > T::zero() && x < T::one();
    if inside(u) && inside(v) {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "copula point ({u}, {v}) not inside the unit square"
        )))
    }
}

// ---- normal ----

fn normal_ln_pdf<T: Scalar>(x: T, y: T, rho: T) -> T {
    let one = T::one();
    let half = lit::<T>(0.5);
    let r2 = one - rho * rho;
    -half * r2.ln()
        - (rho * rho * (x * x + y * y) - lit::<T>(2.0) * rho * x * y) / (lit::<T>(2.0) * r2)
}

fn normal_score<T: Scalar>(x: T, y: T, rho: T) -> T {
    let one = T::one();
    let r2 = one - rho * rho;
    rho / r2 + (x * y * (one + rho * rho) - rho * (x * x + y * y)) / (r2 * r2)
}

fn normal_cdf<T: Scalar>(u: T, v: T, rho: T) -> T {
    let (xu, y) = (norm_ppf(u), norm_ppf(v));
    let sd = (T::one() - rho * rho).sqrt();
    let lower = xu.min(lit(-10.0))
        - if xu < lit(-10.0) {
            lit(10.0)
        } else {
            T::zero()
        };
    let f = |s: T| norm_pdf(s) * norm_cdf((y - rho * s) / sd);
    integrate_adaptive(f, lower, xu, lit(1e-14))
        .max(T::zero())
        .min(u.min(v))
}

fn elliptical_info(rho: f64, a: f64) -> f64 {
    let r2 = 1.0 - rho * rho;
    (a * (1.0 + rho * rho) + (a - 1.0) * rho * rho) / (r2 * r2)
}

// ---- Student-t ----

pub(crate) fn t_const<T: Scalar>(eta: T) -> T {
    let (one, two, half) = (T::one(), lit::<T>(2.0), lit::<T>(0.5));
    ln_gamma(half * (eta + two)) + ln_gamma(half * eta) - two * ln_gamma(half * (eta + one))
}

fn t_ln_pdf<T: Scalar>(x: T, y: T, rho: T, eta: T) -> T {
    t_ln_pdf_c(x, y, rho, eta, t_const(eta))
}

/// t copula log density at t scores with `c = t_const(eta)` supplied.
pub(crate) fn t_ln_pdf_c<T: Scalar>(x: T, y: T, rho: T, eta: T, c: T) -> T {
    let (one, two, half) = (T::one(), lit::<T>(2.0), lit::<T>(0.5));
    let r2 = one - rho * rho;
    let q = x * x - two * rho * x * y + y * y;
    c - half * r2.ln() - half * (eta + two) * (q / (eta * r2)).ln_1p()
        + half * (eta + one) * ((x * x / eta).ln_1p() + (y * y / eta).ln_1p())
}

fn t_score<T: Scalar>(x: T, y: T, rho: T, eta: T) -> T {
    let (one, two) = (T::one(), lit::<T>(2.0));
    let r2 = one - rho * rho;
    let d = eta * r2 + x * x - two * rho * x * y + y * y;
    (eta + two) * (eta * rho + x * y) / d - (eta + one) * rho / r2
}

fn t_h<T: Scalar>(x: T, y: T, rho: T, eta: T) -> T {
    let one = T::one();
    let scale = ((eta + x * x) * (one - rho * rho) / (eta + one)).sqrt();
    t_cdf((y - rho * x) / scale, eta + one)
}

// ---- Clayton ----

/// `ln(e^a + e^b - 1)` for `a, b ≥ 0`.
fn clayton_ln_s<T: Scalar>(a: T, b: T) -> T {
    let m = a.max(b);
    if m < lit(0.5) {
        (a.exp_m1() + b.exp_m1()).ln_1p()
    } else {
        m + ((a - m).exp() + (b - m).exp() - (-m).exp()).ln()
    }
}

fn clayton_ln_pdf<T: Scalar>(lu: T, lv: T, theta: T) -> T {
    let one = T::one();
    let ls = clayton_ln_s(-theta * lu, -theta * lv);
    theta.ln_1p() - (theta + one) * (lu + lv) - (lit::<T>(2.0) + theta.recip()) * ls
}

fn clayton_score<T: Scalar>(lu: T, lv: T, theta: T) -> T {
    let one = T::one();
    let (a, b) = (-theta * lu, -theta * lv);
    let ls = clayton_ln_s(a, b);
    let s_theta = -lu * (a - ls).exp() - lv * (b - ls).exp();
    (one + theta).recip() - (lu + lv) + ls / (theta * theta)
        - (lit::<T>(2.0) + theta.recip()) * s_theta
}

// ---- Gumbel (evaluated at the reflected point for the rotated copula) ----

struct GumbelTerms<T> {
    x: T,
    lx: T,
    ly: T,
    ln_w: T,
    a: T,
    /// `W_δ / W`
    w_ratio: T,
}

fn gumbel_terms<T: Scalar>(u: T, v: T, delta: T) -> GumbelTerms<T> {
    let (x, y) = (-u.ln(), -v.ln());
    let (lx, ly) = (x.ln(), y.ln());
    let (p, q) = (delta * lx, delta * ly);
    let m = p.max(q);
    let ln_w = m + ((p - m).exp() + (q - m).exp()).ln();
    let a = (ln_w / delta).exp();
    let w_ratio = lx * (p - ln_w).exp() + ly * (q - ln_w).exp();
    GumbelTerms {
        x,
        lx,
        ly,
        ln_w,
        a,
        w_ratio,
    }
}

fn gumbel_ln_pdf<T: Scalar>(u: T, v: T, delta: T) -> T {
    let one = T::one();
    let g = gumbel_terms(u, v, delta);
    let y = -v.ln();
    -g.a + g.x
        + y
        + (delta - one) * (g.lx + g.ly)
        + (delta.recip() - lit(2.0)) * g.ln_w
        + (g.a + delta - one).ln()
}

fn gumbel_score<T: Scalar>(u: T, v: T, delta: T) -> T {
    let one = T::one();
    let g = gumbel_terms(u, v, delta);
    let d2 = delta * delta;
    let a_delta = g.a * (-g.ln_w / d2 + g.w_ratio / delta);
    -a_delta + g.lx + g.ly - g.ln_w / d2
        + (delta.recip() - lit(2.0)) * g.w_ratio
        + (a_delta + one) / (g.a + delta - one)
}

fn gumbel_cdf<T: Scalar>(u: T, v: T, delta: T) -> T {
    (-gumbel_terms(u, v, delta).a).exp()
}

fn gumbel_h<T: Scalar>(u: T, v: T, delta: T) -> T {
    let one = T::one();
    let g = gumbel_terms(u, v, delta);
    (-g.a + (delta.recip() - one) * g.ln_w + (delta - one) * g.lx + g.x).exp()
}

/// Positive stable variable with Laplace transform `exp(-t^alpha)`.
fn positive_stable<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    if alpha >= 1.0 {
        return 1.0;
    }
    let theta = std::f64::consts::PI * rng.sample::<f64, _>(Open01);
    let w: f64 = rng.sample(Exp1);
    let a = (alpha * theta).sin() / theta.sin().powf(1.0 / alpha);
    let b = (((1.0 - alpha) * theta).sin() / w).powf((1.0 - alpha) / alpha);
    a * b
}

// ---- Joe-Clayton and its symmetrization ----

fn k_of<T: Scalar>(tau_u: T) -> T {
    T::LN_2() / (lit::<T>(2.0) - tau_u).ln()
}

fn g_of<T: Scalar>(tau_l: T) -> T {
    -T::LN_2() / tau_l.ln()
}

fn sjc_shapes<T: Scalar>(tau_u: T, tau_l: T) -> (T, T, T, T) {
    (k_of(tau_u), g_of(tau_l), k_of(tau_l), g_of(tau_u))
}

struct JcTerms<T> {
    l1u: T,
    l1v: T,
    ln_a: T,
    ln_b: T,
    ln_s: T,
    /// `a^{-γ} / S`, `b^{-γ} / S`
    pa: T,
    pb: T,
    big_l: T,
    ln_1ml: T,
}

fn jc_terms<T: Scalar>(u: T, v: T, k: T, g: T) -> JcTerms<T> {
    let (l1u, l1v) = ((-u).ln_1p(), (-v).ln_1p());
    let ln_a = (-(k * l1u).exp_m1()).ln();
    let ln_b = (-(k * l1v).exp_m1()).ln();
    let (p, q) = (-g * ln_a, -g * ln_b);
    let ln_s = clayton_ln_s(p, q);
    let e = -ln_s / g;
    JcTerms {
        l1u,
        l1v,
        ln_a,
        ln_b,
        ln_s,
        pa: (p - ln_s).exp(),
        pb: (q - ln_s).exp(),
        big_l: e.exp(),
        ln_1ml: (-e.exp_m1()).ln(),
    }
}

/// Log density of the Joe-Clayton copula and its derivatives in `(k, γ)`.
fn jc_density<T: Scalar>(u: T, v: T, k: T, g: T) -> (T, T, T) {
    let one = T::one();
    let two = lit::<T>(2.0);
    let j = jc_terms(u, v, k, g);
    let l = j.big_l;
    let oml = one - l;
    let big_b = (one + g) * oml + (one - k.recip()) * l;
    let ln_c = k.ln() + (k - one) * (j.l1u + j.l1v)
        - (g + one) * (j.ln_a + j.ln_b)
        - (g.recip() + two) * j.ln_s
        + (k.recip() - two) * j.ln_1ml
        + big_b.ln();

    // derivatives with respect to k
    let ak_a = -(k * j.l1u - j.ln_a).exp() * j.l1u;
    let bk_b = -(k * j.l1v - j.ln_b).exp() * j.l1v;
    let sk_s = -g * (j.pa * ak_a + j.pb * bk_b);
    let lk = -l * sk_s / g;
    let bk = -(one + g) * lk + l / (k * k) + (one - k.recip()) * lk;
    let d_k = k.recip() + j.l1u + j.l1v
        - (g + one) * (ak_a + bk_b)
        - (g.recip() + two) * sk_s
        - j.ln_1ml / (k * k)
        - (k.recip() - two) * lk / oml
        + bk / big_b;

    // derivatives with respect to γ
    let sg_s = -j.pa * j.ln_a - j.pb * j.ln_b;
    let lg = l * (j.ln_s / (g * g) - sg_s / g);
    let bg = oml - (one + g) * lg + (one - k.recip()) * lg;
    let d_g = -(j.ln_a + j.ln_b) + j.ln_s / (g * g)
        - (g.recip() + two) * sg_s
        - (k.recip() - two) * lg / oml
        + bg / big_b;
    (ln_c, d_k, d_g)
}

fn jc_cdf<T: Scalar>(u: T, v: T, k: T, g: T) -> T {
    let j = jc_terms(u, v, k, g);
    -(j.ln_1ml / k).exp_m1()
}

fn jc_h<T: Scalar>(u: T, v: T, k: T, g: T) -> T {
    let one = T::one();
    let j = jc_terms(u, v, k, g);
    ((k.recip() - one) * j.ln_1ml - (g.recip() + one) * j.ln_s - (g + one) * j.ln_a
        + (k - one) * j.l1u)
        .exp()
}

/// SJC log density and its gradient in `(tau_u, tau_l)`.
fn sjc_parts<T: Scalar>(u: T, v: T, tau_u: T, tau_l: T) -> (T, T, T) {
    let one = T::one();
    let (k1, g1, k2, g2) = sjc_shapes(tau_u, tau_l);
    let (c1, dk1, dg1) = jc_density(u, v, k1, g1);
    let (c2, dk2, dg2) = jc_density(one - u, one - v, k2, g2);
    let m = c1.max(c2);
    let ln_c = lit::<T>(0.5).ln() + m + ((c1 - m).exp() + (c2 - m).exp()).ln();
    let w1 = one / (one + (c2 - c1).exp());
    let w2 = one - w1;
    let dk = |k: T, tau: T| k * k / ((lit::<T>(2.0) - tau) * T::LN_2());
    let dg = |g: T, tau: T| g * g / (tau * T::LN_2());
    let d_u = w1 * dk1 * dk(k1, tau_u) + w2 * dg2 * dg(g2, tau_u);
    let d_l = w1 * dg1 * dg(g1, tau_l) + w2 * dk2 * dk(k2, tau_l);
    (ln_c, d_u, d_l)
}

// ---- Fisher information grid ----

/// Fisher information tabulated on an equally spaced `kappa` grid.
struct FisherGrid {
    k0: f64,
    step: f64,
    ln_info: Vec<f64>,
}

impl FisherGrid {
    fn build(family: Family, k0: f64, k1: f64, step: f64) -> Self {
        let n = ((k1 - k0) / step).round() as usize + 1;
        let rule = GaussLegendre::<f64>::new(24);
        let nodes = rule.mapped(-7.0, 7.0, 10);
        let pts: Vec<(f64, f64)> = nodes
            .iter()
            .map(|&(x, w)| (norm_cdf(x), w * norm_pdf(x)))
            .collect();
        let ln_info = (0..n)
            .into_par_iter()
            .map(|i| {
                let kappa = k0 + step * i as f64;
                let mut acc = 0.0;
                for &(u, wu) in &pts {
                    for &(v, wv) in &pts {
                        let (lc, s) = match family {
                            Family::Clayton => {
                                let th = kappa.exp();
                                let (lu, lv) = (u.ln(), v.ln());
                                (clayton_ln_pdf(lu, lv, th), clayton_score(lu, lv, th))
                            }
                            _ => {
                                let d = 1.0 + kappa.exp();
                                (gumbel_ln_pdf(u, v, d), gumbel_score(u, v, d))
                            }
                        };
                        let term = wu * wv * lc.exp() * s * s;
                        if term.is_finite() {
                            acc += term;
                        }
                    }
                }
                acc.max(FISHER_FLOOR).ln()
            })
            .collect();
        Self { k0, step, ln_info }
    }

    fn clayton() -> &'static Self {
        static GRID: OnceLock<FisherGrid> = OnceLock::new();
        GRID.get_or_init(|| Self::build(Family::Clayton, -7.0, 3.0, 0.05))
    }

    fn gumbel() -> &'static Self {
        static GRID: OnceLock<FisherGrid> = OnceLock::new();
        GRID.get_or_init(|| Self::build(Family::RotatedGumbel, -7.0, 2.5, 0.05))
    }

    fn at(&self, kappa: f64) -> f64 {
        let n = self.ln_info.len();
        let pos = ((kappa - self.k0) / self.step).clamp(0.0, (n - 1) as f64);
        let i = (pos.floor() as usize).min(n - 2);
        let f = pos - i as f64;
        ((1.0 - f) * self.ln_info[i] + f * self.ln_info[i + 1]).exp()
    }
}

// ---- score-driven dynamics ----

/// Coefficients of the GAS(1,1) recursion
/// `kappa[t+1] = w + beta * kappa[t] + alpha * I[t]^{-1/2} * s[t]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GasParams {
    pub w: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl GasParams {
    /// Stationary mean of `kappa`, or `None` when `|beta| ≥ 1`.
    pub fn unconditional_kappa(&self) -> Option<f64> {
        (self.beta.abs() < 1.0).then(|| self.w / (1.0 - self.beta))
    }
}

/// Filtered path of the time-varying copula parameter.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DependencePath {
    pub kappa: Vec<f64>,
    pub delta: Vec<f64>,
    pub score: Vec<f64>,
    pub lambda_l: Vec<f64>,
    pub lambda_u: Vec<f64>,
}

impl DependencePath {
    pub fn len(&self) -> usize {
        self.kappa.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kappa.is_empty()
    }

    /// Write `date,kappa,delta,score,lambdaL,lambdaU` rows.
    pub fn write_csv<W: Write>(&self, dates: &[NaiveDate], out: W) -> Result<()> {
        if dates.len() != self.len() {
            return Err(Error::domain(format!(
                "{} dates for a path of length {}",
                dates.len(),
                self.len()
            )));
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["date", "kappa", "delta", "score", "lambdaL", "lambdaU"])?;
        for (i, d) in dates.iter().enumerate() {
            w.write_record([
                d.to_string(),
                self.kappa[i].to_string(),
                self.delta[i].to_string(),
                self.score[i].to_string(),
                self.lambda_l[i].to_string(),
                self.lambda_u[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Output of [`gas_filter`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GasFilterOutput {
    pub path: DependencePath,
    pub loglik: f64,
    pub per_obs: Vec<f64>,
    /// `kappa` for the day after the sample.
    pub next_kappa: f64,
    /// True when `kappa` hit [`KAPPA_BOUND`] and was clamped.
    pub diverged: bool,
}

/// Run the score-driven recursion over a series of pseudo-observations.
///
/// `base` fixes the family and any static shape parameter. The recursion
/// starts at the stationary mean `w / (1 - beta)`, or at `kappa0` when
/// `|beta| ≥ 1`.
pub fn gas_filter(
    base: &CopulaParams<f64>,
    gas: &GasParams,
    u: &[(f64, f64)],
    kappa0: f64,
) -> Result<GasFilterOutput> {
    if !base.family().supports_gas() {
        return Err(Error::domain(format!(
            "{} copula does not support score-driven dynamics",
            base.family()
        )));
    }
    gas_filter_coords(base, gas, &filter_coords(base, u), kappa0)
}

/// Transforms of the pseudo-observations that the filter works on: normal or
/// t scores for the elliptical families, survival pairs for the rotated Gumbel.
pub(crate) fn filter_coords(base: &CopulaParams<f64>, u: &[(f64, f64)]) -> Vec<(f64, f64)> {
    match *base {
        CopulaParams::Normal { .. } => u.iter().map(|&(a, b)| (norm_ppf(a), norm_ppf(b))).collect(),
        CopulaParams::StudentT { eta, .. } => {
            let q = TCache::new(eta);
            u.iter().map(|&(a, b)| (q.ppf(a), q.ppf(b))).collect()
        }
        _ => u.iter().map(|&(a, b)| (1.0 - a, 1.0 - b)).collect(),
    }
}

/// [`gas_filter`] on precomputed [`filter_coords`].
pub(crate) fn gas_filter_coords(
    base: &CopulaParams<f64>,
    gas: &GasParams,
    coords: &[(f64, f64)],
    kappa0: f64,
) -> Result<GasFilterOutput> {
    if !base.family().supports_gas() {
        return Err(Error::domain(format!(
            "{} copula does not support score-driven dynamics",
            base.family()
        )));
    }
    let n = coords.len();
    let mut path = DependencePath {
        kappa: Vec::with_capacity(n),
        delta: Vec::with_capacity(n),
        score: Vec::with_capacity(n),
        lambda_l: Vec::with_capacity(n),
        lambda_u: Vec::with_capacity(n),
    };
    let mut per_obs = Vec::with_capacity(n);
    let mut kappa = gas.unconditional_kappa().unwrap_or(kappa0);
    if !kappa.is_finite() {
        return Err(Error::domain("initial kappa is not finite"));
    }
    let mut diverged = false;
    // shape constants of the t copula stay fixed along the path
    let (t_c, t_tail) = match *base {
        CopulaParams::StudentT { eta, .. } => (t_const(eta), Some(TCache::new(eta + 1.0))),
        _ => (0.0, None),
    };
    for &(x, y) in coords {
        if kappa.abs() > KAPPA_BOUND {
            kappa = kappa.clamp(-KAPPA_BOUND, KAPPA_BOUND);
            diverged = true;
        }
        let delta = base.link_inv(kappa);
        let params = base.with_dynamic(delta);
        let (ll, s) = match params {
            CopulaParams::Normal { rho } => (normal_ln_pdf(x, y, rho), normal_score(x, y, rho)),
            CopulaParams::StudentT { rho, eta } => {
                (t_ln_pdf_c(x, y, rho, eta, t_c), t_score(x, y, rho, eta))
            }
            CopulaParams::RotatedGumbel { delta } => {
                (gumbel_ln_pdf(x, y, delta), gumbel_score(x, y, delta))
            }
            _ => unreachable!("family checked above"),
        };
        let info = params.fisher_info()?.max(FISHER_FLOOR);
        let (ll_lo, ll_hi) = match (params, &t_tail) {
            (CopulaParams::StudentT { rho, eta }, Some(tc)) => {
                let l = 2.0 * tc.cdf(-((eta + 1.0) * (1.0 - rho) / (1.0 + rho)).sqrt());
                (l, l)
            }
            _ => params.tail_dependence(),
        };
        path.kappa.push(kappa);
        path.delta.push(delta);
        path.score.push(s);
        path.lambda_l.push(ll_lo);
        path.lambda_u.push(ll_hi);
        per_obs.push(ll);
        let forcing = if s.is_finite() { s / info.sqrt() } else { 0.0 };
        kappa = gas.w + gas.beta * kappa + gas.alpha * forcing;
    }
    if kappa.abs() > KAPPA_BOUND || !kappa.is_finite() {
        kappa = if kappa.is_finite() {
            kappa.clamp(-KAPPA_BOUND, KAPPA_BOUND)
        } else {
            0.0
        };
        diverged = true;
    }
    let loglik = per_obs.iter().sum();
    Ok(GasFilterOutput {
        path,
        loglik,
        per_obs,
        next_kappa: kappa,
        diverged,
    })
}

/// Simulate pairs from a score-driven copula.
///
/// Returns the recorded pairs and the natural parameter of each day after
/// discarding `burn` days.
pub fn simulate_gas<R: Rng + ?Sized>(
    base: &CopulaParams<f64>,
    gas: &GasParams,
    n: usize,
    burn: usize,
    rng: &mut R,
) -> Result<(Vec<(f64, f64)>, Vec<f64>)> {
    if !base.family().supports_gas() {
        return Err(Error::domain(format!(
            "{} copula does not support score-driven dynamics",
            base.family()
        )));
    }
    let mut kappa = gas
        .unconditional_kappa()
        .ok_or_else(|| Error::domain("GAS recursion is not stationary"))?;
    let mut pairs = Vec::with_capacity(n);
    let mut path = Vec::with_capacity(n);
    for t in 0..n + burn {
        kappa = kappa.clamp(-KAPPA_BOUND, KAPPA_BOUND);
        let delta = base.link_inv(kappa);
        let params = base.with_dynamic(delta);
        let (a, b) = params.sample_one(rng);
        let (a, b) = (clip(a), clip(b));
        let s = params.score(a, b)?;
        let info = params.fisher_info()?.max(FISHER_FLOOR);
        if t >= burn {
            pairs.push((a, b));
            path.push(delta);
        }
        let forcing = if s.is_finite() { s / info.sqrt() } else { 0.0 };
        kappa = gas.w + gas.beta * kappa + gas.alpha * forcing;
    }
    Ok((pairs, path))
}

/// Rosenblatt transform along a path of dynamic parameters.
pub fn rosenblatt_path(
    base: &CopulaParams<f64>,
    delta: &[f64],
    u: &[(f64, f64)],
) -> Result<Vec<(f64, f64)>> {
    if delta.len() != u.len() {
        return Err(Error::domain("parameter path and data differ in length"));
    }
    Ok(u.iter()
        .zip(delta)
        .map(|(&(a, b), &d)| (a, base.with_dynamic(d).h(a, b)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid5() -> Vec<(f64, f64)> {
        let g = [0.07, 0.3, 0.5, 0.72, 0.93];
        g.iter()
            .flat_map(|&a| g.iter().map(move |&b| (a, b)))
            .collect()
    }

    fn fd_dynamic(c: &CopulaParams<f64>, u: f64, v: f64) -> f64 {
        let d = c.dynamic().unwrap();
        let h = 1e-6 * d.abs().max(1.0);
        (c.with_dynamic(d + h).ln_pdf(u, v) - c.with_dynamic(d - h).ln_pdf(u, v)) / (2.0 * h)
    }

    #[test]
    fn independence_cases() {
        let n = CopulaParams::normal(0.0).unwrap();
        assert_relative_eq!(n.ln_pdf(0.3, 0.7), 0.0, epsilon = 1e-14);
        let g = CopulaParams::rotated_gumbel(1.0).unwrap();
        for (u, v) in grid5() {
            assert!(g.ln_pdf(u, v).abs() < 1e-12);
            assert_relative_eq!(g.cdf(u, v), u * v, epsilon = 1e-12);
        }
    }

    #[test]
    fn clayton_cdf_at_median() {
        let c = CopulaParams::clayton(1.0).unwrap();
        assert_relative_eq!(c.cdf(0.5, 0.5), 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn normal_cdf_at_median_matches_arcsine_formula() {
        let c = CopulaParams::normal(0.5).unwrap();
        let expect = 0.25 + 0.5f64.asin() / (2.0 * std::f64::consts::PI);
        assert_relative_eq!(c.cdf(0.5, 0.5), expect, epsilon = 1e-10);
    }

    #[test]
    fn density_matches_mixed_partial_of_cdf() {
        let cs = [
            CopulaParams::normal(0.4).unwrap(),
            CopulaParams::student_t(-0.3, 5.0).unwrap(),
            CopulaParams::clayton(1.0).unwrap(),
            CopulaParams::rotated_gumbel(1.7).unwrap(),
            CopulaParams::sjc(0.3, 0.5).unwrap(),
        ];
        let h = 1e-4;
        for c in &cs {
            for &(u, v) in &[(0.5, 0.5), (0.2, 0.7), (0.85, 0.9)] {
                let mixed = (c.cdf(u + h, v + h) - c.cdf(u + h, v - h) - c.cdf(u - h, v + h)
                    + c.cdf(u - h, v - h))
                    / (4.0 * h * h);
                assert_relative_eq!(c.pdf(u, v), mixed, max_relative = 1e-4);
            }
        }
    }

    #[test]
    fn h_is_derivative_of_cdf() {
        let cs = [
            CopulaParams::normal(0.6).unwrap(),
            CopulaParams::student_t(0.3, 4.0).unwrap(),
            CopulaParams::clayton(2.5).unwrap(),
            CopulaParams::rotated_gumbel(2.2).unwrap(),
            CopulaParams::sjc(0.2, 0.6).unwrap(),
        ];
        let e = 1e-6;
        for c in &cs {
            for (u, v) in grid5() {
                let fd = (c.cdf(u + e, v) - c.cdf(u - e, v)) / (2.0 * e);
                assert_relative_eq!(c.h(u, v), fd, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn scores_match_finite_differences() {
        let cs = [
            CopulaParams::normal(0.35).unwrap(),
            CopulaParams::student_t(0.2, 1.0 / 0.14).unwrap(),
            CopulaParams::clayton(0.7).unwrap(),
            CopulaParams::rotated_gumbel(1.1403).unwrap(),
        ];
        for c in &cs {
            for (u, v) in grid5() {
                let s = c.score(u, v).unwrap();
                assert_relative_eq!(s, fd_dynamic(c, u, v), max_relative = 1e-4, epsilon = 1e-7);
            }
        }
        let normal0 = CopulaParams::normal(0.0_f64).unwrap();
        assert!(normal0.score(0.5, 0.5).unwrap().abs() < 1e-14);
    }

    #[test]
    fn sjc_gradient_matches_finite_differences() {
        let (tu, tl) = (0.0208, 0.0941);
        let h = 1e-7;
        for (u, v) in grid5() {
            let c = CopulaParams::sjc(tu, tl).unwrap();
            let (du, dl) = c.sjc_gradient(u, v).unwrap();
            let fu = (CopulaParams::Sjc {
                tau_u: tu + h,
                tau_l: tl,
            }
            .ln_pdf(u, v)
                - CopulaParams::Sjc {
                    tau_u: tu - h,
                    tau_l: tl,
                }
                .ln_pdf(u, v))
                / (2.0 * h);
            let fl = (CopulaParams::Sjc {
                tau_u: tu,
                tau_l: tl + h,
            }
            .ln_pdf(u, v)
                - CopulaParams::Sjc {
                    tau_u: tu,
                    tau_l: tl - h,
                }
                .ln_pdf(u, v))
                / (2.0 * h);
            assert_relative_eq!(du, fu, max_relative = 1e-4, epsilon = 1e-6);
            assert_relative_eq!(dl, fl, max_relative = 1e-4, epsilon = 1e-6);
        }
    }

    #[test]
    fn links_round_trip() {
        let n = CopulaParams::normal(0.2060).unwrap();
        let k = n.link(0.2060).unwrap();
        assert_relative_eq!(n.link_inv(k), 0.2060, epsilon = 1e-12);
        assert_eq!(n.link_inv(0.0), 0.0);
        let g = CopulaParams::rotated_gumbel(2.0).unwrap();
        assert_eq!(g.link_inv(0.0), 2.0);
        let c = CopulaParams::clayton(0.2392).unwrap();
        assert_relative_eq!(c.link_inv(c.link(0.2392).unwrap()), 0.2392, epsilon = 1e-12);
        assert!(n.link(1.5).is_err());
        assert!(CopulaParams::<f64>::Sjc {
            tau_u: 0.1,
            tau_l: 0.1
        }
        .link(0.1)
        .is_err());
    }

    #[test]
    fn rotated_gumbel_reflects_gumbel() {
        let d = 1.8;
        let c = CopulaParams::rotated_gumbel(d).unwrap();
        for (u, v) in grid5() {
            assert_relative_eq!(
                c.ln_pdf(u, v),
                gumbel_ln_pdf(1.0 - u, 1.0 - v, d),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn tail_dependence_values() {
        let n = CopulaParams::normal(0.5).unwrap();
        assert_eq!(n.tail_dependence(), (0.0, 0.0));
        let t = CopulaParams::student_t(0.0, 3.0).unwrap();
        // t4 cdf at -2: 1/2 - 2/sqrt(8)*(1 - ...) closed form for 4 dof
        let x: f64 = -2.0;
        let t4 = 0.5 + x * (x * x + 6.0) / (2.0 * (x * x + 4.0).powf(1.5));
        assert_relative_eq!(t.tail_dependence().0, 2.0 * t4, epsilon = 1e-12);
        let s = CopulaParams::sjc(0.0208, 0.0941).unwrap();
        assert_eq!(s.tail_dependence(), (0.0941, 0.0208));
    }

    #[test]
    fn boundary_points_are_rejected() {
        let c = CopulaParams::normal(0.3).unwrap();
        assert!(c.try_ln_pdf(0.0, 0.5).is_err());
        assert!(c.try_ln_pdf(0.5, 1.0).is_err());
        assert!(CopulaParams::normal(1.0).is_err());
        assert!(CopulaParams::rotated_gumbel(0.9).is_err());
    }

    #[test]
    fn frechet_bounds_hold() {
        let cs = [
            CopulaParams::normal(-0.7).unwrap(),
            CopulaParams::student_t(0.8, 3.0).unwrap(),
            CopulaParams::clayton(4.0).unwrap(),
            CopulaParams::rotated_gumbel(3.0).unwrap(),
            CopulaParams::sjc(0.7, 0.4).unwrap(),
        ];
        for c in &cs {
            for (u, v) in grid5() {
                let x = c.cdf(u, v);
                assert!(
                    x >= (u + v - 1.0).max(0.0) - 1e-10 && x <= u.min(v) + 1e-10,
                    "{c:?} {u} {v} {x}"
                );
            }
            assert_relative_eq!(c.cdf(0.3, 1.0), 0.3);
            assert_eq!(c.cdf(0.0, 0.4), 0.0);
        }
    }

    #[test]
    fn elliptical_fisher_info_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for c in [
            CopulaParams::normal(0.4).unwrap(),
            CopulaParams::student_t(0.4, 6.0).unwrap(),
        ] {
            let n = 200_000;
            let m: f64 = c
                .sample(n, &mut rng)
                .iter()
                .map(|&(u, v)| c.score(u, v).unwrap().powi(2))
                .sum::<f64>()
                / n as f64;
            assert_relative_eq!(c.fisher_info().unwrap(), m, max_relative = 0.02);
        }
    }

    #[test]
    fn grid_fisher_info_is_positive_and_smooth() {
        for c in [
            CopulaParams::clayton(1.0).unwrap(),
            CopulaParams::rotated_gumbel(1.5).unwrap(),
        ] {
            let d0 = c.dynamic().unwrap();
            let mut prev = c.fisher_info().unwrap();
            for i in 1..40 {
                let cur = c.with_dynamic(d0 + 0.01 * i as f64).fisher_info().unwrap();
                assert!(cur > 0.0);
                assert!((cur / prev - 1.0).abs() < 0.1);
                prev = cur;
            }
        }
    }

    #[test]
    fn gas_recursion_collapses_without_score() {
        let base = CopulaParams::normal(0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = base.sample(50, &mut rng);
        let out = gas_filter(
            &base,
            &GasParams {
                w: 0.3,
                alpha: 0.0,
                beta: 0.0,
            },
            &u,
            0.0,
        )
        .unwrap();
        assert!(out.path.kappa.iter().all(|&k| k == 0.3));
        let g = GasParams {
            w: 0.1,
            alpha: 0.0,
            beta: 0.9,
        };
        let out = gas_filter(&base, &g, &base.sample(1000, &mut rng), 0.0).unwrap();
        assert!(out.path.kappa.iter().all(|&k| (k - 1.0).abs() < 1e-12));
        let again = gas_filter(&base, &g, &u, 0.0).unwrap();
        let twice = gas_filter(&base, &g, &u, 0.0).unwrap();
        assert_eq!(again.path, twice.path);
    }

    #[test]
    fn gas_loglik_equals_pointwise_sum() {
        let base = CopulaParams::student_t(0.2, 8.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = base.sample(300, &mut rng);
        let g = GasParams {
            w: 0.02,
            alpha: 0.08,
            beta: 0.95,
        };
        let out = gas_filter(&base, &g, &u, 0.0).unwrap();
        let direct: f64 = u
            .iter()
            .zip(&out.path.delta)
            .map(|(&(a, b), &d)| base.with_dynamic(d).ln_pdf(a, b))
            .sum();
        assert_relative_eq!(out.loglik, direct, max_relative = 1e-10);
    }

    #[test]
    fn samplers_are_deterministic() {
        for c in [
            CopulaParams::student_t(0.3, 4.0).unwrap(),
            CopulaParams::clayton(2.0).unwrap(),
            CopulaParams::rotated_gumbel(1.5).unwrap(),
            CopulaParams::sjc(0.3, 0.2).unwrap(),
        ] {
            let a = c.sample(100, &mut ChaCha8Rng::seed_from_u64(9));
            let b = c.sample(100, &mut ChaCha8Rng::seed_from_u64(9));
            assert_eq!(a, b);
        }
    }

    #[test]
    fn clayton_sampler_matches_cdf_at_median() {
        let c = CopulaParams::clayton(2.0).unwrap();
        let n = 100_000;
        let s = c.sample(n, &mut ChaCha8Rng::seed_from_u64(21));
        let p = s.iter().filter(|&&(u, v)| u <= 0.5 && v <= 0.5).count() as f64 / n as f64;
        let target = c.cdf(0.5, 0.5);
        let se = (target * (1.0 - target) / n as f64).sqrt();
        assert!((p - target).abs() < 3.0 * se, "{p} vs {target}");
    }

    #[test]
    fn gumbel_and_sjc_samplers_match_cdf() {
        let n = 60_000;
        for c in [
            CopulaParams::rotated_gumbel(1.6).unwrap(),
            CopulaParams::sjc(0.25, 0.45).unwrap(),
        ] {
            let s = c.sample(n, &mut ChaCha8Rng::seed_from_u64(4));
            for &(a, b) in &[(0.2, 0.3), (0.5, 0.5), (0.8, 0.6)] {
                let p = s.iter().filter(|&&(u, v)| u <= a && v <= b).count() as f64 / n as f64;
                let target = c.cdf(a, b);
                let se = (target * (1.0 - target) / n as f64).sqrt();
                assert!(
                    (p - target).abs() < 4.0 * se,
                    "{c:?} ({a},{b}) {p} vs {target}"
                );
            }
        }
    }

    #[test]
    fn f32_kernels_agree_with_f64() {
        let c64 = CopulaParams::student_t(0.3_f64, 5.0).unwrap();
        let c32 = CopulaParams::student_t(0.3_f32, 5.0).unwrap();
        assert!((c32.ln_pdf(0.2, 0.6) as f64 - c64.ln_pdf(0.2, 0.6)).abs() < 1e-4);
        let g32 = CopulaParams::Clayton { theta: 1.5_f32 };
        assert!(
            (g32.cdf(0.4, 0.3) as f64 - CopulaParams::Clayton { theta: 1.5 }.cdf(0.4, 0.3)).abs()
                < 1e-5
        );
    }
}
