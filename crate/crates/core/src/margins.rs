//! Marginal models for daily returns.
//!
//! The conditional mean is an AR(p) with intercept. The conditional variance
//! is either the log-linear realized GARCH(1,1),
//!
//! ```text
//! log h[t+1]  = omega + beta * log h[t] + gamma * log RV[t]
//! log RV[t]   = xi + phi * log h[t] + tau1 * z[t] + tau2 * (z[t]^2 - 1) + u[t]
//! ```
//!
//! with Gaussian measurement noise `u[t] ~ N(0, sigma2_u)`, or the GJR-GARCH(1,1)
//! `h[t+1] = kappa + (phi + iota * 1{e[t] < 0}) * e[t]^2 + psi * h[t]`.
//! Innovations are Hansen skewed-t or unit-variance Student-t.
//!
//! Fits maximize the joint likelihood of returns and realized variances by
//! quasi-Newton search over an unconstrained reparameterization; the
//! returns-only ("partial") log-likelihood is reported alongside.

use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{self, OptimConfig};
use crate::udist::{SkewT, Univariate};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const NU_MIN: f64 = 2.01;
const NU_MAX: f64 = 500.0;
const LAMBDA_MAX: f64 = 0.995;
/// Search bound for automatic AR order selection.
pub const MAX_MEAN_LAGS: usize = 5;

/// Conditional variance equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceModel {
    RealizedGarch,
    GjrGarch,
}

/// Innovation distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Innovation {
    SkewT,
    StudentT,
}

/// AR order of the conditional mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeanLags {
    Fixed(usize),
    /// Chosen by BIC over `0..=MAX_MEAN_LAGS`.
    Auto,
}

impl FromStr for MeanLags {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim().eq_ignore_ascii_case("auto") {
            return Ok(MeanLags::Auto);
        }
        let p: usize = s.trim().parse().map_err(|_| {
            Error::Format(format!("mean lags must be `auto` or an integer, got `{s}`"))
        })?;
        if p > MAX_MEAN_LAGS {
            return Err(Error::domain(format!(
                "mean lags {p} above {MAX_MEAN_LAGS}"
            )));
        }
        Ok(MeanLags::Fixed(p))
    }
}

impl FromStr for VarianceModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "realized-garch" | "rgarch" => Ok(VarianceModel::RealizedGarch),
            "gjr-garch" | "gjr" => Ok(VarianceModel::GjrGarch),
            other => Err(Error::Format(format!("unknown variance model `{other}`"))),
        }
    }
}

impl FromStr for Innovation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "skew-t" | "skewt" => Ok(Innovation::SkewT),
            "student-t" | "t" => Ok(Innovation::StudentT),
            other => Err(Error::Format(format!("unknown innovation `{other}`"))),
        }
    }
}

/// Specification of a marginal model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarginSpec {
    pub mean_lags: MeanLags,
    pub variance_model: VarianceModel,
    pub innovation: Innovation,
}

impl MarginSpec {
    pub fn realized_garch(lags: usize) -> Self {
        Self {
            mean_lags: MeanLags::Fixed(lags),
            variance_model: VarianceModel::RealizedGarch,
            innovation: Innovation::SkewT,
        }
    }

    pub fn gjr_garch(lags: usize) -> Self {
        Self {
            mean_lags: MeanLags::Fixed(lags),
            variance_model: VarianceModel::GjrGarch,
            innovation: Innovation::StudentT,
        }
    }

    fn lags(&self) -> usize {
        match self.mean_lags {
            MeanLags::Fixed(p) => p,
            MeanLags::Auto => 0,
        }
    }

    /// Parameter names in storage order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec!["mu".to_string()];
        names.extend((1..=self.lags()).map(|i| format!("ar{i}")));
        let var: &[&str] = match self.variance_model {
            VarianceModel::RealizedGarch => &[
                "omega", "beta", "gamma", "xi", "phi", "tau1", "tau2", "sigma2_u",
            ],
            VarianceModel::GjrGarch => &["kappa", "phi", "iota", "psi"],
        };
        names.extend(var.iter().map(|s| s.to_string()));
        names.push("nu".into());
        if self.innovation == Innovation::SkewT {
            names.push("lambda".into());
        }
        names
    }
}

#[derive(Debug, Clone, Copy)]
enum Transform {
    Free,
    Positive,
    Unit,
    Dof,
    Skew,
}

impl Transform {
    fn to_natural(self, x: f64) -> f64 {
        match self {
            Transform::Free => x,
            Transform::Positive => x.exp(),
            Transform::Unit => logistic(x),
            Transform::Dof => NU_MIN + (NU_MAX - NU_MIN) * logistic(x),
            Transform::Skew => LAMBDA_MAX * x.tanh(),
        }
    }

    fn to_free(self, p: f64) -> f64 {
        match self {
            Transform::Free => p,
            Transform::Positive => p.max(1e-12).ln(),
            Transform::Unit => logit(p.clamp(1e-9, 1.0 - 1e-9)),
            Transform::Dof => logit(((p - NU_MIN) / (NU_MAX - NU_MIN)).clamp(1e-9, 1.0 - 1e-9)),
            Transform::Skew => (p / LAMBDA_MAX).clamp(-0.999_999, 0.999_999).atanh(),
        }
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn transforms(spec: &MarginSpec) -> Vec<Transform> {
    let mut t = vec![Transform::Free; 1 + spec.lags()];
    match spec.variance_model {
        VarianceModel::RealizedGarch => t.extend([
            Transform::Free,
            Transform::Unit,
            Transform::Free,
            Transform::Free,
            Transform::Free,
            Transform::Free,
            Transform::Free,
            Transform::Positive,
        ]),
        VarianceModel::GjrGarch => t.extend([
            Transform::Positive,
            Transform::Positive,
            Transform::Free,
            Transform::Unit,
        ]),
    }
    t.push(Transform::Dof);
    if spec.innovation == Innovation::SkewT {
        t.push(Transform::Skew);
    }
    t
}

/// Typed view of a natural parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginParams {
    pub mu: f64,
    pub ar: Vec<f64>,
    pub variance: VarianceParams,
    pub nu: f64,
    pub lambda: f64,
}

/// Variance-equation coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum VarianceParams {
    RealizedGarch {
        omega: f64,
        beta: f64,
        gamma: f64,
        xi: f64,
        phi: f64,
        tau1: f64,
        tau2: f64,
        sigma2_u: f64,
    },
    GjrGarch {
        kappa: f64,
        phi: f64,
        iota: f64,
        psi: f64,
    },
}

impl MarginParams {
    pub fn from_vec(spec: &MarginSpec, p: &[f64]) -> Self {
        let lags = spec.lags();
        let v = &p[1 + lags..];
        let (variance, rest) = match spec.variance_model {
            VarianceModel::RealizedGarch => (
                VarianceParams::RealizedGarch {
                    omega: v[0],
                    beta: v[1],
                    gamma: v[2],
                    xi: v[3],
                    phi: v[4],
                    tau1: v[5],
                    tau2: v[6],
                    sigma2_u: v[7],
                },
                &v[8..],
            ),
            VarianceModel::GjrGarch => (
                VarianceParams::GjrGarch {
                    kappa: v[0],
                    phi: v[1],
                    iota: v[2],
                    psi: v[3],
                },
                &v[4..],
            ),
        };
        Self {
            mu: p[0],
            ar: p[1..1 + lags].to_vec(),
            variance,
            nu: rest[0],
            lambda: if spec.innovation == Innovation::SkewT {
                rest[1]
            } else {
                0.0
            },
        }
    }

    pub fn to_vec(&self, spec: &MarginSpec) -> Vec<f64> {
        let mut out = vec![self.mu];
        out.extend(&self.ar);
        match self.variance {
            VarianceParams::RealizedGarch {
                omega,
                beta,
                gamma,
                xi,
                phi,
                tau1,
                tau2,
                sigma2_u,
            } => out.extend([omega, beta, gamma, xi, phi, tau1, tau2, sigma2_u]),
            VarianceParams::GjrGarch {
                kappa,
                phi,
                iota,
                psi,
            } => out.extend([kappa, phi, iota, psi]),
        }
        out.push(self.nu);
        if spec.innovation == Innovation::SkewT {
            out.push(self.lambda);
        }
        out
    }

    /// Innovation distribution implied by `nu` and `lambda`.
    pub fn innovation(&self) -> Result<SkewT<f64>> {
        SkewT::new(self.nu, self.lambda)
    }

    /// Persistence of the variance recursion (`beta + gamma * phi` or
    /// `phi + iota / 2 + psi`).
    pub fn persistence(&self) -> f64 {
        match self.variance {
            VarianceParams::RealizedGarch {
                beta, gamma, phi, ..
            } => beta + gamma * phi,
            VarianceParams::GjrGarch { phi, iota, psi, .. } => phi + 0.5 * iota + psi,
        }
    }
}

/// Output of the variance filter over a sample.
#[derive(Debug, Clone, Default)]
pub struct Filtered {
    /// Conditional mean per retained day.
    pub mean: Vec<f64>,
    pub h: Vec<f64>,
    pub z: Vec<f64>,
    /// Return log-density per day.
    pub ll_r: Vec<f64>,
    /// Log-density of `log RV` given the return (zero for GJR).
    pub ll_rv: Vec<f64>,
    /// Variance forecast for the day after the sample.
    pub h_next: f64,
}

impl Filtered {
    pub fn loglik_partial(&self) -> f64 {
        self.ll_r.iter().sum()
    }

    pub fn loglik_joint(&self) -> f64 {
        self.ll_r.iter().sum::<f64>() + self.ll_rv.iter().sum::<f64>()
    }
}

/// Run the mean and variance recursions with fixed parameters.
///
/// The first `p` observations seed the AR mean and are dropped. `h1` is the
/// variance of the first retained day. Returns `None` when the parameters
/// produce non-finite values.
pub fn filter(params: &MarginParams, y: &[f64], rv: Option<&[f64]>, h1: f64) -> Option<Filtered> {
    let p = params.ar.len();
    if y.len() <= p {
        return None;
    }
    let n = y.len() - p;
    let dist = params.innovation().ok()?;
    let mut out = Filtered {
        mean: Vec::with_capacity(n),
        h: Vec::with_capacity(n),
        z: Vec::with_capacity(n),
        ll_r: Vec::with_capacity(n),
        ll_rv: Vec::with_capacity(n),
        h_next: f64::NAN,
    };
    let mut h = h1;
    for t in p..y.len() {
        let m = params.mu + (0..p).map(|i| params.ar[i] * y[t - 1 - i]).sum::<f64>();
        let e = y[t] - m;
        let z = e / h.sqrt();
        let lr = dist.ln_pdf(z) - 0.5 * h.ln();
        out.mean.push(m);
        out.h.push(h);
        out.z.push(z);
        out.ll_r.push(lr);
        h = match params.variance {
            VarianceParams::RealizedGarch {
                omega,
                beta,
                gamma,
                xi,
                phi,
                tau1,
                tau2,
                sigma2_u,
            } => {
                let lrv = rv?[t].ln();
                let lh = h.ln();
                let resid = lrv - xi - phi * lh - tau1 * z - tau2 * (z * z - 1.0);
                out.ll_rv
                    .push(-0.5 * (LN_2PI + sigma2_u.ln() + resid * resid / sigma2_u));
                (omega + beta * lh + gamma * lrv).exp()
            }
            VarianceParams::GjrGarch {
                kappa,
                phi,
                iota,
                psi,
            } => {
                out.ll_rv.push(0.0);
                let lev = if e < 0.0 { iota } else { 0.0 };
                kappa + (phi + lev) * e * e + psi * h
            }
        };
        if !(h.is_finite() && h > 0.0 && lr.is_finite()) {
            return None;
        }
    }
    out.h_next = h;
    Some(out)
}

/// Next-day variance of the log-linear realized GARCH.
pub fn forecast_variance(params: &MarginParams, h_last: f64, rv_last: f64) -> Result<f64> {
    match params.variance {
        VarianceParams::RealizedGarch {
            omega, beta, gamma, ..
        } => {
            if !(h_last > 0.0 && rv_last > 0.0) {
                return Err(Error::domain(
                    "variance and realized variance must be positive",
                ));
            }
            Ok((omega + beta * h_last.ln() + gamma * rv_last.ln()).exp())
        }
        VarianceParams::GjrGarch { .. } => Err(Error::domain(
            "GJR forecasts need the last residual; use `filter`",
        )),
    }
}

/// A fitted marginal model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarginFit {
    /// Specification with the AR order resolved.
    pub spec: MarginSpec,
    pub names: Vec<String>,
    pub params: Vec<f64>,
    /// Robust standard errors (NaN when the sandwich is not available).
    pub se: Vec<f64>,
    pub vcov: Option<Vec<Vec<f64>>>,
    /// Variance used for the first retained day.
    pub h1: f64,
    pub h_path: Vec<f64>,
    pub z: Vec<f64>,
    pub u: Vec<f64>,
    pub loglik_joint: f64,
    pub loglik_partial: f64,
    pub n_obs: usize,
    /// Leading observations consumed by the AR mean.
    pub offset: usize,
    pub h_next: f64,
    pub converged: bool,
    pub grad_norm: f64,
    pub stationarity_violated: bool,
    pub bic: f64,
}

impl MarginFit {
    pub fn typed(&self) -> MarginParams {
        MarginParams::from_vec(&self.spec, &self.params)
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.params[i])
    }

    pub fn std_err(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.se[i])
    }

    /// Re-run the filter on (possibly extended) data with the stored parameters.
    pub fn refilter(&self, y: &[f64], rv: Option<&[f64]>) -> Result<Filtered> {
        filter(&self.typed(), y, rv, self.h1)
            .ok_or_else(|| Error::domain("filter produced non-finite values"))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Standardized residuals of a fitted model on the given data.
pub fn filter_residuals(fit: &MarginFit, y: &[f64], rv: Option<&[f64]>) -> Result<Vec<f64>> {
    Ok(fit.refilter(y, rv)?.z)
}

/// Probability integral transform through a parametric innovation law.
pub fn pit_parametric<D: Univariate<f64>>(z: &[f64], dist: &D) -> Vec<f64> {
    z.iter().map(|&x| dist.cdf(x)).collect()
}

/// Rescaled empirical distribution `(1/(T+1)) Σ 1{z_s ≤ z_t}`.
pub fn pit_empirical(z: &[f64]) -> Vec<f64> {
    let mut sorted = z.to_vec();
    sorted.sort_by(f64::total_cmp);
    let denom = (z.len() + 1) as f64;
    z.iter()
        .map(|x| sorted.partition_point(|s| s <= x) as f64 / denom)
        .collect()
}

fn sample_variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n
}

fn check_inputs(spec: &MarginSpec, y: &[f64], rv: Option<&[f64]>) -> Result<()> {
    let min_len = 20 + MAX_MEAN_LAGS;
    if y.len() < min_len {
        return Err(Error::InsufficientData(format!(
            "{} returns; margin fits need at least {min_len}",
            y.len()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("returns contain non-finite values"));
    }
    if spec.variance_model == VarianceModel::RealizedGarch {
        let rv = rv.ok_or_else(|| Error::domain("realized GARCH needs realized variances"))?;
        if rv.len() != y.len() {
            return Err(Error::domain(
                "returns and realized variances differ in length",
            ));
        }
        if rv.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::domain(
                "realized variances must be positive (log undefined)",
            ));
        }
    }
    if sample_variance(y) <= 0.0 {
        return Err(Error::Estimation {
            message: "returns are constant; likelihood is degenerate".into(),
            best_point: vec![],
            best_value: f64::NAN,
            grad_norm: f64::NAN,
        });
    }
    Ok(())
}

fn start_values(spec: &MarginSpec, y: &[f64], rv: Option<&[f64]>) -> Vec<f64> {
    let var = sample_variance(y);
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let mut out = vec![mean];
    out.extend(std::iter::repeat(0.0).take(spec.lags()));
    match spec.variance_model {
        VarianceModel::RealizedGarch => {
            let lrv: Vec<f64> = rv.expect("checked").iter().map(|v| v.ln()).collect();
            let mean_lrv = lrv.iter().sum::<f64>() / lrv.len() as f64;
            let level = var.ln() - 0.1;
            let (beta, gamma, phi) = (0.6, 0.35, 1.0);
            let xi = mean_lrv - phi * level;
            let omega = level * (1.0 - beta - gamma * phi) - gamma * xi;
            let resid_var = sample_variance(&lrv).max(1e-4) * 0.5;
            out.extend([omega, beta, gamma, xi, phi, 0.0, 0.05, resid_var]);
        }
        VarianceModel::GjrGarch => {
            let (phi, iota, psi) = (0.04, 0.06, 0.88);
            out.extend([var * (1.0 - phi - 0.5 * iota - psi), phi, iota, psi]);
        }
    }
    out.push(8.0);
    if spec.innovation == Innovation::SkewT {
        out.push(0.0);
    }
    out
}

/// Objective for the optimizer: negative joint log-likelihood plus the
/// stationarity penalty.
fn objective(
    spec: &MarginSpec,
    tr: &[Transform],
    x: &[f64],
    y: &[f64],
    rv: Option<&[f64]>,
    h1: f64,
) -> f64 {
    let nat: Vec<f64> = tr.iter().zip(x).map(|(t, v)| t.to_natural(*v)).collect();
    let params = MarginParams::from_vec(spec, &nat);
    if let VarianceParams::GjrGarch { phi, iota, .. } = params.variance {
        if phi + iota < 0.0 {
            return f64::INFINITY;
        }
    }
    let Some(f) = filter(&params, y, rv, h1) else {
        return f64::INFINITY;
    };
    let excess = (params.persistence() - (1.0 - 1e-4)).max(0.0);
    -f.loglik_joint() + 1e6 * excess * excess
}

fn fit_fixed(
    spec: &MarginSpec,
    y: &[f64],
    rv: Option<&[f64]>,
    cfg: &OptimConfig,
) -> Result<MarginFit> {
    let p = spec.lags();
    let tr = transforms(spec);
    let names = spec.param_names();
    let resid_var = sample_variance(&y[p..]);
    let h1 = resid_var;
    let start_nat = start_values(spec, y, rv);
    let start: Vec<f64> = tr
        .iter()
        .zip(&start_nat)
        .map(|(t, v)| t.to_free(*v))
        .collect();
    let obj = |x: &[f64]| objective(spec, &tr, x, y, rv, h1);
    let opt = optim::minimize(&obj, &[start], cfg)?;
    let nat: Vec<f64> = tr
        .iter()
        .zip(&opt.x)
        .map(|(t, v)| t.to_natural(*v))
        .collect();
    let params = MarginParams::from_vec(spec, &nat);
    let f = filter(&params, y, rv, h1).ok_or_else(|| Error::Estimation {
        message: "filter failed at the optimum".into(),
        best_point: nat.clone(),
        best_value: opt.value,
        grad_norm: opt.grad_norm,
    })?;

    let per_obs = |q: &[f64]| -> Vec<f64> {
        let pr = MarginParams::from_vec(spec, q);
        match filter(&pr, y, rv, h1) {
            Some(ff) => ff.ll_r.iter().zip(&ff.ll_rv).map(|(a, b)| a + b).collect(),
            None => vec![f64::NAN; y.len() - p],
        }
    };
    let vcov = optim::sandwich(&per_obs, &nat);
    let se = match &vcov {
        Some(v) => (0..nat.len()).map(|i| v[(i, i)].sqrt()).collect(),
        None => vec![f64::NAN; nat.len()],
    };
    let dist = params.innovation()?;
    let u = pit_parametric(&f.z, &dist)
        .into_iter()
        .map(crate::copula::clip)
        .collect();
    let n_obs = f.z.len();
    let ll_joint = f.loglik_joint();
    let bic = -2.0 * ll_joint + nat.len() as f64 * (n_obs as f64).ln();
    Ok(MarginFit {
        spec: *spec,
        names,
        se,
        vcov: vcov.map(|v| {
            (0..v.nrows())
                .map(|i| v.row(i).iter().copied().collect())
                .collect()
        }),
        h1,
        h_path: f.h.clone(),
        z: f.z.clone(),
        u,
        loglik_joint: ll_joint,
        loglik_partial: f.loglik_partial(),
        n_obs,
        offset: p,
        h_next: f.h_next,
        converged: opt.converged,
        grad_norm: opt.grad_norm,
        stationarity_violated: params.persistence() >= 1.0,
        bic,
        params: nat,
    })
}

fn fit_any(
    spec: &MarginSpec,
    y: &[f64],
    rv: Option<&[f64]>,
    cfg: &OptimConfig,
) -> Result<MarginFit> {
    check_inputs(spec, y, rv)?;
    match spec.mean_lags {
        MeanLags::Fixed(p) if p > MAX_MEAN_LAGS => Err(Error::domain(format!(
            "mean lags {p} above {MAX_MEAN_LAGS}"
        ))),
        MeanLags::Fixed(_) => fit_fixed(spec, y, rv, cfg),
        MeanLags::Auto => {
            let mut best: Option<MarginFit> = None;
            let mut last_err = None;
            for p in 0..=MAX_MEAN_LAGS {
                let s = MarginSpec {
                    mean_lags: MeanLags::Fixed(p),
                    ..*spec
                };
                match fit_fixed(&s, y, rv, cfg) {
                    Ok(f) => {
                        if best.as_ref().map_or(true, |b| f.bic < b.bic) {
                            best = Some(f);
                        }
                    }
                    Err(e) => last_err = Some(e),
                }
            }
            best.ok_or_else(|| last_err.expect("at least one order attempted"))
        }
    }
}

/// Fit the AR(p) log-linear realized GARCH(1,1).
pub fn fit_realized_garch(
    y: &[f64],
    rv: &[f64],
    spec: &MarginSpec,
    cfg: &OptimConfig,
) -> Result<MarginFit> {
    if spec.variance_model != VarianceModel::RealizedGarch {
        return Err(Error::domain("spec does not describe a realized GARCH"));
    }
    fit_any(spec, y, Some(rv), cfg)
}

/// Fit the AR(p) GJR-GARCH(1,1).
pub fn fit_gjr_garch(y: &[f64], spec: &MarginSpec, cfg: &OptimConfig) -> Result<MarginFit> {
    if spec.variance_model != VarianceModel::GjrGarch {
        return Err(Error::domain("spec does not describe a GJR-GARCH"));
    }
    fit_any(spec, y, None, cfg)
}

/// Fit whichever model the spec names.
pub fn fit_margin(
    y: &[f64],
    rv: Option<&[f64]>,
    spec: &MarginSpec,
    cfg: &OptimConfig,
) -> Result<MarginFit> {
    fit_any(spec, y, rv, cfg)
}

/// Simulate returns (and realized variances for the realized GARCH).
///
/// The variance recursion starts from its stationary level and runs `burn`
/// days before recording.
pub fn simulate<R: Rng + ?Sized>(
    params: &MarginParams,
    n: usize,
    burn: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let z = params.innovation()?.sample(n + burn, rng);
    simulate_from_innovations(params, &z, burn, rng)
}

/// Simulate with a given standardized innovation sequence (burn-in included).
///
/// `rng` only drives the realized-variance measurement noise.
pub fn simulate_from_innovations<R: Rng + ?Sized>(
    params: &MarginParams,
    z: &[f64],
    burn: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if burn > z.len() {
        return Err(Error::domain("burn-in longer than the innovation sequence"));
    }
    let p = params.ar.len();
    let mut y = vec![params.mu; p];
    let mut rv = vec![f64::NAN; p];
    let mut h = match params.variance {
        VarianceParams::RealizedGarch {
            omega,
            beta,
            gamma,
            xi,
            phi,
            ..
        } => ((omega + gamma * xi) / (1.0 - beta - gamma * phi)).exp(),
        VarianceParams::GjrGarch {
            kappa,
            phi,
            iota,
            psi,
        } => kappa / (1.0 - phi - 0.5 * iota - psi),
    };
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::domain("variance recursion has no stationary level"));
    }
    let normals = rand_distr::StandardNormal;
    for &z in z {
        let t = y.len();
        let m = params.mu + (0..p).map(|i| params.ar[i] * y[t - 1 - i]).sum::<f64>();
        let e = h.sqrt() * z;
        y.push(m + e);
        h = match params.variance {
            VarianceParams::RealizedGarch {
                omega,
                beta,
                gamma,
                xi,
                phi,
                tau1,
                tau2,
                sigma2_u,
            } => {
                let noise: f64 = rng.sample(normals);
                let lrv =
                    xi + phi * h.ln() + tau1 * z + tau2 * (z * z - 1.0) + sigma2_u.sqrt() * noise;
                rv.push(lrv.exp());
                (omega + beta * h.ln() + gamma * lrv).exp()
            }
            VarianceParams::GjrGarch {
                kappa,
                phi,
                iota,
                psi,
            } => {
                rv.push(e * e);
                let lev = if e < 0.0 { iota } else { 0.0 };
                kappa + (phi + lev) * e * e + psi * h
            }
        };
    }
    let skip = p + burn;
    Ok((y[skip..].to_vec(), rv[skip..].to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rg_params() -> MarginParams {
        MarginParams {
            mu: 0.0001,
            ar: vec![],
            variance: VarianceParams::RealizedGarch {
                omega: 0.0626,
                beta: 0.7622,
                gamma: 0.2081,
                xi: -0.3173,
                phi: 1.0758,
                tau1: -0.0627,
                tau2: 0.1053,
                sigma2_u: 0.16,
            },
            nu: 13.4633,
            lambda: -0.0885,
        }
    }

    #[test]
    fn empirical_pit_uses_rescaled_ranks() {
        assert_eq!(pit_empirical(&[1.0, 2.0, 3.0]), vec![0.25, 0.5, 0.75]);
        let u = pit_empirical(&[3.0, -1.0, 2.0, 2.0]);
        assert_eq!(u, vec![0.8, 0.2, 0.6, 0.6]);
        assert!(u.iter().all(|&x| x > 0.0 && x < 1.0));
    }

    #[test]
    fn forecast_variance_cases() {
        let mk = |omega, beta, gamma| MarginParams {
            variance: VarianceParams::RealizedGarch {
                omega,
                beta,
                gamma,
                xi: 0.0,
                phi: 1.0,
                tau1: 0.0,
                tau2: 0.0,
                sigma2_u: 0.1,
            },
            ..rg_params()
        };
        assert_relative_eq!(
            forecast_variance(&mk(0.0, 1.0, 0.0), 2.5, 7.0).unwrap(),
            2.5,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            forecast_variance(&mk(0.0, 0.0, 1.0), 2.5, 7.0).unwrap(),
            7.0,
            max_relative = 1e-14
        );
        let v = forecast_variance(&rg_params(), 1e-4, 1e-4).unwrap();
        // e^0.0626 * (1e-4)^0.9703
        let expect = 0.0626f64.exp() * 10f64.powf(-4.0 * 0.9703);
        assert_relative_eq!(v, expect, max_relative = 1e-12);
    }

    #[test]
    fn filter_identity_case() {
        let params = MarginParams {
            mu: 0.0,
            ar: vec![],
            variance: VarianceParams::GjrGarch {
                kappa: 1.0,
                phi: 0.0,
                iota: 0.0,
                psi: 0.0,
            },
            nu: 1e8,
            lambda: 0.0,
        };
        let y = [0.3, -1.2, 0.7, 2.0];
        let f = filter(&params, &y, None, 1.0).unwrap();
        assert_eq!(f.z, y.to_vec());
    }

    #[test]
    fn large_dof_likelihood_is_gaussian() {
        let mut params = rg_params();
        params.nu = 1e8;
        params.lambda = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (y, rv) = simulate(&rg_params(), 200, 100, &mut rng).unwrap();
        let f = filter(&params, &y, Some(&rv), 1.0).unwrap();
        for (i, &z) in f.z.iter().enumerate() {
            let gauss = -0.5 * (LN_2PI + z * z) - 0.5 * f.h[i].ln();
            assert!((f.ll_r[i] - gauss).abs() < 1e-6);
        }
    }

    #[test]
    fn degenerate_and_short_inputs_fail() {
        let spec = MarginSpec::realized_garch(0);
        let cfg = OptimConfig::default();
        let y = vec![0.01; 300];
        let rv = vec![1e-4; 300];
        assert!(fit_realized_garch(&y, &rv, &spec, &cfg).is_err());
        let mut rv0 = rv.clone();
        rv0[5] = 0.0;
        let y2: Vec<f64> = (0..300).map(|i| (i as f64).sin()).collect();
        assert!(matches!(
            fit_realized_garch(&y2, &rv0, &spec, &cfg),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            fit_gjr_garch(&[0.1, -0.2, 0.3], &MarginSpec::gjr_garch(0), &cfg),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn realized_garch_fit_recovers_and_refilters() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (y, rv) = simulate(&rg_params(), 2000, 500, &mut rng).unwrap();
        let spec = MarginSpec::realized_garch(0);
        let fit = fit_realized_garch(&y, &rv, &spec, &OptimConfig::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.grad_norm < 1e-3);
        let truth = rg_params().to_vec(&spec);
        for (i, name) in fit.names.iter().enumerate() {
            let dev = (fit.params[i] - truth[i]).abs() / fit.se[i];
            assert!(
                dev < 4.0,
                "{name}: {} vs {} (se {})",
                fit.params[i],
                truth[i],
                fit.se[i]
            );
        }
        let z = filter_residuals(&fit, &y, Some(&rv)).unwrap();
        assert_eq!(z, fit.z);
        let m = z.iter().sum::<f64>() / z.len() as f64;
        let v = z.iter().map(|x| (x - m).powi(2)).sum::<f64>() / z.len() as f64;
        assert!(m.abs() < 0.07 && (v - 1.0).abs() < 0.07);
        let json = fit.to_json().unwrap();
        let back = MarginFit::from_json(&json).unwrap();
        assert_eq!(back.params, fit.params);
    }

    #[test]
    fn gjr_fit_recovers_generator() {
        let spec = MarginSpec::gjr_garch(0);
        let truth = MarginParams {
            mu: 0.0,
            ar: vec![],
            variance: VarianceParams::GjrGarch {
                kappa: 0.0028,
                phi: 0.0187,
                iota: 0.0883,
                psi: 0.9321,
            },
            nu: 7.9716,
            lambda: 0.0,
        };
        let (y, _) = simulate(&truth, 3000, 500, &mut ChaCha8Rng::seed_from_u64(19)).unwrap();
        let fit = fit_gjr_garch(&y, &spec, &OptimConfig::default()).unwrap();
        let tv = truth.to_vec(&spec);
        for (i, name) in fit.names.iter().enumerate() {
            let dev = (fit.params[i] - tv[i]).abs() / fit.se[i];
            assert!(
                dev < 4.0,
                "{name}: {} vs {} (se {})",
                fit.params[i],
                tv[i],
                fit.se[i]
            );
        }
    }
}
