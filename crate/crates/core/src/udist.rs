//! Univariate innovation distributions: Hansen's skewed-t, Student-t in its
//! standard and unit-variance forms, and the standard normal.
//!
//! All four share the [`Univariate`] contract: log density, distribution
//! function, quantile and inverse-transform sampling. The skewed-t is
//! standardized (zero mean, unit variance); with `lambda = 0` it coincides
//! with [`StdStudentT`], and as `nu` grows it approaches the normal. Above
//! [`SKEWT_NORMAL_DOF`] the skewed-t switches to its normal-kernel branch.

use rand::distributions::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};
use crate::special::{
    ln_gamma_half_ratio, norm_cdf, norm_ln_pdf, norm_ppf, t_cdf, t_ln_pdf, t_ppf, TCache,
};

/// Degrees of freedom above which the skewed-t uses the normal kernel.
pub const SKEWT_NORMAL_DOF: f64 = 1.0e6;

/// Common interface of the univariate distributions.
pub trait Univariate<T: Scalar> {
    fn ln_pdf(&self, x: T) -> T;

    fn pdf(&self, x: T) -> T {
        self.ln_pdf(x).exp()
    }

    fn cdf(&self, x: T) -> T;

    /// Quantile function on the open unit interval.
    fn quantile(&self, u: T) -> Result<T>;

    /// `n` draws by inverse-transform sampling.
    fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<T> {
        (0..n)
            .map(|_| {
                let u: f64 = rng.sample(Open01);
                self.quantile(T::lit(u)).expect("open-interval uniform")
            })
            .collect()
    }
}

fn check_unit<T: Scalar>(u: T) -> Result<()> {
    if u > T::zero() && u < T::one() {
        Ok(())
    } else {
        Err(Error::domain(format!("probability {u} outside (0, 1)")))
    }
}

/// Standard normal distribution.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StdNormal;

impl<T: Scalar> Univariate<T> for StdNormal {
    fn ln_pdf(&self, x: T) -> T {
        norm_ln_pdf(x)
    }

    fn cdf(&self, x: T) -> T {
        norm_cdf(x)
    }

    fn quantile(&self, u: T) -> Result<T> {
        check_unit(u)?;
        Ok(norm_ppf(u))
    }
}

/// Student-t with unit scale (variance `nu / (nu - 2)`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudentT<T> {
    nu: T,
}

impl<T: Scalar> StudentT<T> {
    pub fn new(nu: T) -> Result<Self> {
        if !(nu > T::zero()) {
            return Err(Error::domain(format!(
                "Student-t requires nu > 0, got {nu}"
            )));
        }
        Ok(Self { nu })
    }

    pub fn nu(&self) -> T {
        self.nu
    }
}

impl<T: Scalar> Univariate<T> for StudentT<T> {
    fn ln_pdf(&self, x: T) -> T {
        t_ln_pdf(x, self.nu)
    }

    fn cdf(&self, x: T) -> T {
        t_cdf(x, self.nu)
    }

    fn quantile(&self, u: T) -> Result<T> {
        check_unit(u)?;
        Ok(t_ppf(u, self.nu))
    }
}

/// Student-t rescaled to unit variance (`nu > 2`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StdStudentT<T> {
    nu: T,
    scale: T,
}

impl<T: Scalar> StdStudentT<T> {
    pub fn new(nu: T) -> Result<Self> {
        if !(nu > lit(2.0)) {
            return Err(Error::domain(format!(
                "unit-variance Student-t requires nu > 2, got {nu}"
            )));
        }
        let scale = (nu / (nu - lit(2.0))).sqrt();
        Ok(Self { nu, scale })
    }

    pub fn nu(&self) -> T {
        self.nu
    }
}

impl<T: Scalar> Univariate<T> for StdStudentT<T> {
    fn ln_pdf(&self, x: T) -> T {
        t_ln_pdf(x * self.scale, self.nu) + self.scale.ln()
    }

    fn cdf(&self, x: T) -> T {
        t_cdf(x * self.scale, self.nu)
    }

    fn quantile(&self, u: T) -> Result<T> {
        check_unit(u)?;
        Ok(t_ppf(u, self.nu) / self.scale)
    }
}

/// Parameters of the standardized skewed-t.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkewTParams<T> {
    pub nu: T,
    pub lambda: T,
}

/// Hansen's standardized skewed-t distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkewT<T> {
    nu: T,
    lambda: T,
    a: T,
    b: T,
    ln_bc: T,
    // sqrt(nu / (nu - 2)), equal to one on the normal branch
    t_scale: T,
    tc: TCache<T>,
    normal: bool,
}

impl<T: Scalar> SkewT<T> {
    pub fn new(nu: T, lambda: T) -> Result<Self> {
        if !(nu > lit(2.0)) {
            return Err(Error::domain(format!("skewed-t requires nu > 2, got {nu}")));
        }
        if !(lambda.abs() < T::one()) {
            return Err(Error::domain(format!(
                "skewed-t requires |lambda| < 1, got {lambda}"
            )));
        }
        let two = lit::<T>(2.0);
        let normal = nu > lit(SKEWT_NORMAL_DOF);
        let ln_c = if normal {
            -lit::<T>(0.5) * T::TAU().ln()
        } else {
            ln_gamma_half_ratio(nu / two) - lit::<T>(0.5) * (T::PI() * (nu - two)).ln()
        };
        let c = ln_c.exp();
        let a = if normal {
            lit::<T>(4.0) * lambda * c
        } else {
            lit::<T>(4.0) * lambda * c * (nu - two) / (nu - T::one())
        };
        let b = (T::one() + lit::<T>(3.0) * lambda * lambda - a * a).sqrt();
        let t_scale = if normal {
            T::one()
        } else {
            (nu / (nu - two)).sqrt()
        };
        Ok(Self {
            nu,
            lambda,
            a,
            b,
            ln_bc: b.ln() + ln_c,
            t_scale,
            tc: TCache::new(nu),
            normal,
        })
    }

    pub fn from_params(p: SkewTParams<T>) -> Result<Self> {
        Self::new(p.nu, p.lambda)
    }

    pub fn params(&self) -> SkewTParams<T> {
        SkewTParams {
            nu: self.nu,
            lambda: self.lambda,
        }
    }

    /// Point where the two halves of the density meet, `-a / b`.
    pub fn mode_split(&self) -> T {
        -self.a / self.b
    }

    fn side_scale(&self, z: T) -> T {
        if z < self.mode_split() {
            T::one() - self.lambda
        } else {
            T::one() + self.lambda
        }
    }
}

impl<T: Scalar> Univariate<T> for SkewT<T> {
    fn ln_pdf(&self, z: T) -> T {
        let w = (self.b * z + self.a) / self.side_scale(z);
        if self.normal {
            self.ln_bc - lit::<T>(0.5) * w * w
        } else {
            let two = lit::<T>(2.0);
            self.ln_bc - (self.nu + T::one()) / two * (w * w / (self.nu - two)).ln_1p()
        }
    }

    fn cdf(&self, z: T) -> T {
        let half = lit::<T>(0.5);
        let lam = self.lambda;
        let std_cdf = |w: T| {
            if self.normal {
                norm_cdf(w)
            } else {
                self.tc.cdf(w * self.t_scale)
            }
        };
        let bz_a = self.b * z + self.a;
        if z < self.mode_split() {
            (T::one() - lam) * std_cdf(bz_a / (T::one() - lam))
        } else {
            let v = (T::one() - lam) * half
                + (T::one() + lam) * (std_cdf(bz_a / (T::one() + lam)) - half);
            v.min(T::one())
        }
    }

    fn quantile(&self, u: T) -> Result<T> {
        check_unit(u)?;
        let half = lit::<T>(0.5);
        let lam = self.lambda;
        let std_ppf = |p: T| {
            if self.normal {
                norm_ppf(p)
            } else {
                self.tc.ppf(p) / self.t_scale
            }
        };
        let split = (T::one() - lam) * half;
        let w = if u < split {
            (T::one() - lam) * std_ppf(u / (T::one() - lam))
        } else {
            let p = (half + (u - split) / (T::one() + lam)).min(T::one() - T::epsilon());
            (T::one() + lam) * std_ppf(p)
        };
        Ok((w - self.a) / self.b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::integrate_adaptive;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn oil() -> SkewT<f64> {
        SkewT::<f64>::new(13.4633, -0.0885).unwrap()
    }

    fn integrate_density(d: &impl Univariate<f64>, lo: f64, hi: f64) -> f64 {
        integrate_adaptive(|x| d.pdf(x), lo, hi, 1e-12)
    }

    #[test]
    fn normal_limit_density_at_zero() {
        let d = SkewT::<f64>::new(1e8, 0.0).unwrap();
        assert!((d.pdf(0.0) - 0.398_942).abs() < 1e-4);
        // just below the switch the t branch agrees
        let d = SkewT::<f64>::new(9.0e5, 0.0).unwrap();
        assert!((d.pdf(0.0) - 0.398_942_280_4).abs() < 1e-6);
    }

    #[test]
    fn symmetric_when_lambda_zero() {
        for &nu in &[2.5, 5.0, 40.0] {
            let d = SkewT::<f64>::new(nu, 0.0).unwrap();
            for &z in &[0.1, 0.9, 2.7, 11.0] {
                assert_relative_eq!(d.ln_pdf(z), d.ln_pdf(-z), epsilon = 1e-14);
            }
            assert_relative_eq!(d.cdf(0.0), 0.5, epsilon = 1e-15);
            assert!(d.quantile(0.5).unwrap().abs() < 1e-8);
        }
    }

    #[test]
    fn reduces_to_unit_variance_t() {
        for &nu in &[2.2, 4.0, 13.4633, 300.0] {
            let skew = SkewT::<f64>::new(nu, 0.0).unwrap();
            let t = StdStudentT::<f64>::new(nu).unwrap();
            for k in -40..=40 {
                let z = k as f64 * 0.2;
                assert!((skew.pdf(z) - t.pdf(z)).abs() < 1e-10);
                assert!((skew.cdf(z) - t.cdf(z)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn oil_margin_density_integrates_to_one() {
        let d = oil();
        let split = d.mode_split();
        let total = integrate_density(&d, -400.0, split) + integrate_density(&d, split, 400.0);
        assert!((total - 1.0).abs() < 1e-6, "mass {total}");
    }

    #[test]
    fn oil_margin_cdf_matches_quadrature() {
        let d = oil();
        let split = d.mode_split();
        let mass = integrate_density(&d, -400.0, split) + integrate_density(&d, split, 1.0);
        assert!((d.cdf(1.0) - mass).abs() < 1e-6);
    }

    #[test]
    fn standardized_moments_by_quadrature() {
        let d = SkewT::<f64>::new(9.0, 0.3).unwrap();
        let s = d.mode_split();
        let m1 = integrate_adaptive(|x| x * d.pdf(x), -2000.0, s, 1e-12)
            + integrate_adaptive(|x| x * d.pdf(x), s, 2000.0, 1e-12);
        let m2 = integrate_adaptive(|x| x * x * d.pdf(x), -2000.0, s, 1e-12)
            + integrate_adaptive(|x| x * x * d.pdf(x), s, 2000.0, 1e-12);
        assert!(m1.abs() < 1e-7);
        assert!((m2 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn cdf_limits() {
        let d = oil();
        assert!(d.cdf(-1e6) < 1e-30);
        assert!((d.cdf(1e6) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn quantile_inverts_cdf_on_grid() {
        for d in [
            oil(),
            SkewT::<f64>::new(2.3, 0.9).unwrap(),
            SkewT::<f64>::new(5e6, -0.4).unwrap(),
        ] {
            let mut prev = f64::NEG_INFINITY;
            for k in 1..100 {
                let u = k as f64 / 100.0;
                let z = d.quantile(u).unwrap();
                assert!(z > prev);
                prev = z;
                assert!((d.cdf(z) - u).abs() < 1e-8, "u={u}");
            }
        }
        let z = oil().quantile(0.05).unwrap();
        assert!((oil().cdf(z) - 0.05).abs() < 1e-8);
    }

    #[test]
    fn quantile_agrees_with_bracketed_root() {
        // independent route: bisection on the distribution function
        let d = SkewT::<f64>::new(6.0, -0.35).unwrap();
        for &u in &[0.003, 0.2, 0.61, 0.97] {
            let (mut lo, mut hi) = (-60.0, 60.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if d.cdf(mid) < u {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            assert!((d.quantile(u).unwrap() - 0.5 * (lo + hi)).abs() < 1e-9);
        }
    }

    #[test]
    fn symmetric_quantile_matches_student_oracle() {
        use statrs::distribution::{ContinuousCDF, StudentsT};
        let d = SkewT::<f64>::new(5.0, 0.0).unwrap();
        let oracle =
            StudentsT::new(0.0, 1.0, 5.0).unwrap().inverse_cdf(0.975) * (3.0_f64 / 5.0).sqrt();
        assert!((d.quantile(0.975).unwrap() - oracle).abs() < 1e-9);
    }

    #[test]
    fn quantile_rejects_boundaries() {
        assert!(oil().quantile(0.0).is_err());
        assert!(oil().quantile(1.0).is_err());
        assert!(SkewT::<f64>::new(2.0, 0.0).is_err());
        assert!(SkewT::<f64>::new(5.0, 1.0).is_err());
    }

    #[test]
    fn sampling_is_seeded() {
        let d = oil();
        let a = d.sample(50, &mut ChaCha8Rng::seed_from_u64(7));
        let b = d.sample(50, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(a, b);
    }

    #[test]
    fn sample_moments_unit_variance() {
        let d = SkewT::<f64>::new(8.0, 0.0).unwrap();
        let xs = d.sample(1_000_000, &mut ChaCha8Rng::seed_from_u64(11));
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn sample_ks_distance_below_critical() {
        let d = oil();
        let mut xs = d.sample(100_000, &mut ChaCha8Rng::seed_from_u64(3));
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = xs.len() as f64;
        let ks = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = d.cdf(x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 1.36 / n.sqrt(), "ks {ks}");
    }

    #[test]
    fn works_in_f32() {
        let d = SkewT::<f32>::new(13.4633, -0.0885).unwrap();
        let z = d.quantile(0.3).unwrap();
        assert!((d.cdf(z) - 0.3).abs() < 1e-5);
    }
}
