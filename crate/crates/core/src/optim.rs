//! Quasi-Newton minimization with finite-difference derivatives.
//!
//! Objectives are negative log-likelihoods over an unconstrained parameter
//! vector. Non-finite objective values are treated as "outside the domain" and
//! handled by step shrinking.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Optimizer settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimConfig {
    pub max_iter: usize,
    /// Convergence threshold on the scaled gradient (max component).
    pub grad_tol: f64,
    /// Scaled gradient above which a fit is reported as failed.
    pub fail_grad: f64,
    /// Number of starting points, including the supplied ones.
    pub n_starts: usize,
    /// Standard deviation of the random perturbation for extra starts.
    pub start_spread: f64,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            max_iter: 400,
            grad_tol: 1e-6,
            fail_grad: 1e-2,
            n_starts: 5,
            start_spread: 0.3,
            seed: 0x5eed_0001,
        }
    }
}

impl OptimConfig {
    /// Cheaper settings used inside bootstrap and simulation loops.
    pub fn reduced(&self) -> Self {
        Self {
            n_starts: 2,
            ..self.clone()
        }
    }
}

/// Result of a minimization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Optimum {
    pub x: Vec<f64>,
    pub value: f64,
    /// Objective at the first supplied start.
    pub start_value: f64,
    /// Max component of the gradient scaled by `max(|x|, 1) / max(|f|, 1)`.
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Central finite-difference gradient.
pub fn gradient<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64]) -> Vec<f64> {
    let f0 = f(x);
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = 1e-5 * x[i].abs().max(1.0);
            xp[i] = x[i] + h;
            let fp = f(&xp);
            xp[i] = x[i] - h;
            let fm = f(&xp);
            xp[i] = x[i];
            match (fp.is_finite(), fm.is_finite()) {
                (true, true) => (fp - fm) / (2.0 * h),
                (true, false) => (fp - f0) / h,
                (false, true) => (f0 - fm) / h,
                (false, false) => f64::NAN,
            }
        })
        .collect()
}

/// Central finite-difference Hessian.
pub fn hessian<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64]) -> DMatrix<f64> {
    let k = x.len();
    let h: Vec<f64> = x.iter().map(|v| 1e-4 * v.abs().max(1.0)).collect();
    let mut out = DMatrix::zeros(k, k);
    let f0 = f(x);
    let mut xp = x.to_vec();
    for i in 0..k {
        xp[i] = x[i] + h[i];
        let fp = f(&xp);
        xp[i] = x[i] - h[i];
        let fm = f(&xp);
        xp[i] = x[i];
        out[(i, i)] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for j in 0..i {
            let mut eval = |si: f64, sj: f64| {
                xp[i] = x[i] + si * h[i];
                xp[j] = x[j] + sj * h[j];
                let v = f(&xp);
                xp[i] = x[i];
                xp[j] = x[j];
                v
            };
            let v = (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0))
                / (4.0 * h[i] * h[j]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

fn scaled_norm(g: &[f64], x: &[f64], f: f64) -> f64 {
    let fs = f.abs().max(1.0);
    g.iter()
        .zip(x)
        .map(|(gi, xi)| (gi * xi.abs().max(1.0) / fs).abs())
        .fold(
            0.0,
            |a: f64, b| if b.is_nan() { f64::INFINITY } else { a.max(b) },
        )
}

/// BFGS from a single start.
pub fn bfgs<F: Fn(&[f64]) -> f64>(f: &F, x0: &[f64], cfg: &OptimConfig) -> Optimum {
    let k = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let mut fx = f(x.as_slice());
    let start_value = fx;
    if !fx.is_finite() || k == 0 {
        return Optimum {
            x: x0.to_vec(),
            value: fx,
            start_value,
            grad_norm: if k == 0 { 0.0 } else { f64::INFINITY },
            iterations: 0,
            converged: k == 0 && fx.is_finite(),
        };
    }
    let mut g = DVector::from_vec(gradient(f, x.as_slice()));
    let mut hinv = DMatrix::<f64>::identity(k, k);
    let mut fresh = true;
    let mut stall = 0;
    let mut iterations = 0;
    let max_step = 2.0;
    while iterations < cfg.max_iter {
        iterations += 1;
        if g.iter().any(|v| !v.is_finite()) {
            break;
        }
        if scaled_norm(g.as_slice(), x.as_slice(), fx) < cfg.grad_tol {
            break;
        }
        let mut d = -(&hinv * &g);
        if g.dot(&d) >= 0.0 {
            hinv = DMatrix::identity(k, k);
            fresh = true;
            d = -g.clone();
        }
        let dmax = d.amax();
        if dmax > max_step {
            d *= max_step / dmax;
        }
        let slope = g.dot(&d);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let xn = &x + &d * t;
            let fnew = f(xn.as_slice());
            if fnew.is_finite() && fnew <= fx + 1e-4 * t * slope {
                accepted = Some((xn, fnew));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            if fresh {
                break;
            }
            hinv = DMatrix::identity(k, k);
            fresh = true;
            continue;
        };
        let gn = DVector::from_vec(gradient(f, xn.as_slice()));
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if fresh {
                let scale = sy / y.dot(&y);
                hinv = DMatrix::identity(k, k) * scale;
            }
            let rho = 1.0 / sy;
            let hy = &hinv * &y;
            let yhy = y.dot(&hy);
            hinv += (&s * s.transpose()) * (rho * rho * yhy + rho)
                - (&hy * s.transpose() + &s * hy.transpose()) * rho;
            fresh = false;
        }
        let improvement = fx - fnew;
        x = xn;
        g = gn;
        fx = fnew;
        if improvement <= 1e-13 * (1.0 + fx.abs()) {
            stall += 1;
            if stall >= 3 {
                break;
            }
        } else {
            stall = 0;
        }
    }
    let grad_norm = scaled_norm(g.as_slice(), x.as_slice(), fx);
    Optimum {
        x: x.as_slice().to_vec(),
        value: fx,
        start_value,
        grad_norm,
        iterations,
        converged: grad_norm < cfg.fail_grad,
    }
}

/// BFGS from every supplied start plus random perturbations of the first,
/// up to `cfg.n_starts` runs in total; the best optimum wins.
pub fn minimize<F: Fn(&[f64]) -> f64>(
    f: &F,
    starts: &[Vec<f64>],
    cfg: &OptimConfig,
) -> Result<Optimum> {
    assert!(!starts.is_empty(), "at least one start");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut all: Vec<Vec<f64>> = starts.to_vec();
    while all.len() < cfg.n_starts.max(starts.len()) {
        let base = &starts[0];
        all.push(
            base.iter()
                .map(|v| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    v + cfg.start_spread * z
                })
                .collect(),
        );
    }
    let first_value = f(&starts[0]);
    let mut best: Option<Optimum> = None;
    for s in &all {
        let mut o = bfgs(f, s, cfg);
        if !o.value.is_finite() {
            continue;
        }
        o.start_value = first_value;
        let better = match &best {
            None => true,
            Some(b) => o.value < b.value,
        };
        if better {
            best = Some(o);
        }
    }
    match best {
        Some(b) if b.converged => Ok(b),
        Some(b) => Err(Error::Estimation {
            message: "no start reached a stationary point".into(),
            best_point: b.x,
            best_value: b.value,
            grad_norm: b.grad_norm,
        }),
        None => Err(Error::Estimation {
            message: "objective not finite at any start".into(),
            best_point: starts[0].clone(),
            best_value: first_value,
            grad_norm: f64::INFINITY,
        }),
    }
}

/// Robust (sandwich) covariance of an M-estimator.
///
/// `per_obs` returns the per-observation log-likelihood contributions at a
/// parameter vector; the estimate is `H⁻¹ J H⁻¹` with `H` the Hessian of the
/// total and `J` the outer product of per-observation scores.
pub fn sandwich<F: Fn(&[f64]) -> Vec<f64>>(per_obs: &F, theta: &[f64]) -> Option<DMatrix<f64>> {
    let k = theta.len();
    let total = |p: &[f64]| per_obs(p).iter().sum::<f64>();
    let h = hessian(&total, theta);
    let mut tp = theta.to_vec();
    let base = per_obs(theta);
    let n = base.len();
    let mut scores = DMatrix::<f64>::zeros(n, k);
    for i in 0..k {
        let step = 1e-5 * theta[i].abs().max(1.0);
        tp[i] = theta[i] + step;
        let up = per_obs(&tp);
        tp[i] = theta[i] - step;
        let dn = per_obs(&tp);
        tp[i] = theta[i];
        for t in 0..n {
            scores[(t, i)] = (up[t] - dn[t]) / (2.0 * step);
        }
    }
    let j = scores.transpose() * &scores;
    let hinv = (-h).try_inverse()?;
    let v = &hinv * j * &hinv;
    if v.iter().all(|x| x.is_finite()) && (0..k).all(|i| v[(i, i)] >= 0.0) {
        Some(v)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    #[test]
    fn bfgs_finds_rosenbrock_minimum() {
        let cfg = OptimConfig::default();
        let o = bfgs(&rosenbrock, &[-1.2, 1.0], &cfg);
        assert!((o.x[0] - 1.0).abs() < 1e-4, "{:?}", o);
        assert!((o.x[1] - 1.0).abs() < 1e-4);
        assert!(o.value <= o.start_value);
    }

    #[test]
    fn infinite_region_is_avoided() {
        // log barrier: minimum at x = 1
        let f = |x: &[f64]| {
            if x[0] <= 0.0 {
                f64::INFINITY
            } else {
                x[0] - x[0].ln()
            }
        };
        let o = minimize(&f, &[vec![5.0]], &OptimConfig::default()).unwrap();
        assert!((o.x[0] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn hessian_of_quadratic() {
        let f = |x: &[f64]| 3.0 * x[0] * x[0] + 2.0 * x[0] * x[1] + x[1] * x[1];
        let h = hessian(&f, &[0.3, -0.2]);
        assert!((h[(0, 0)] - 6.0).abs() < 1e-5);
        assert!((h[(0, 1)] - 2.0).abs() < 1e-5);
        assert!((h[(1, 1)] - 2.0).abs() < 1e-5);
    }

    #[test]
    fn sandwich_matches_mean_variance_for_gaussian() {
        // per-observation Gaussian log-likelihood in the mean, unit variance:
        // sandwich variance of the mean is sum (x - m)^2 / n^2
        let data: Vec<f64> = (0..200).map(|i| ((i * 37 % 101) as f64) / 50.0).collect();
        let n = data.len() as f64;
        let m = data.iter().sum::<f64>() / n;
        let per_obs = |p: &[f64]| {
            data.iter()
                .map(|x| -0.5 * (x - p[0]).powi(2))
                .collect::<Vec<_>>()
        };
        let v = sandwich(&per_obs, &[m]).unwrap();
        let expect = data.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n * n);
        assert!((v[(0, 0)] - expect).abs() < 1e-6 * expect.max(1.0));
    }

    #[test]
    fn failure_carries_best_point() {
        let f = |_: &[f64]| f64::NAN;
        match minimize(&f, &[vec![0.0]], &OptimConfig::default()) {
            Err(Error::Estimation { best_point, .. }) => assert_eq!(best_point, vec![0.0]),
            other => panic!("unexpected {other:?}"),
        }
    }
}
