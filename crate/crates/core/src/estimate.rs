//! Two-step estimation: margins first, then the copula on the implied PITs.
//! Bootstrap confidence intervals by re-estimation on resampled data.

use std::cell::RefCell;
use std::fmt::Write as _;
use std::rc::Rc;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::copula::{self, clip_pairs, CopulaParams, DependencePath, Family, GasParams};
use crate::error::{Error, Result};
use crate::margins::{self, MarginFit, MarginSpec};
use crate::marketdata::DailyPanel;
use crate::optim::{self, OptimConfig};
use crate::special::norm_ppf;

/// Flag threshold for parameters pinned against a boundary.
const BOUNDARY_EPS: f64 = 1e-3;
/// Default mean block length of the stationary bootstrap, in days.
pub const DEFAULT_MEAN_BLOCK: f64 = 20.0;
/// Default number of bootstrap replicates.
pub const DEFAULT_REPLICATES: usize = 100;

/// Constant or score-driven copula parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dynamics {
    Constant,
    Gas,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CopulaSpec {
    pub family: Family,
    pub dynamics: Dynamics,
}

impl CopulaSpec {
    pub fn constant(family: Family) -> Self {
        Self {
            family,
            dynamics: Dynamics::Constant,
        }
    }

    pub fn gas(family: Family) -> Self {
        Self {
            family,
            dynamics: Dynamics::Gas,
        }
    }
}

/// A named estimate with its standard error (NaN when unavailable).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub name: String,
    pub value: f64,
    pub se: f64,
}

/// A fitted copula.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CopulaFit {
    pub spec: CopulaSpec,
    /// Static parameters; for GAS fits the dynamic slot holds the stationary level.
    pub params: CopulaParams<f64>,
    pub gas: Option<GasParams>,
    pub estimates: Vec<Estimate>,
    pub path: Option<DependencePath>,
    pub loglik: f64,
    pub n_obs: usize,
    /// Pairs moved inside the unit square before fitting.
    pub clipped: usize,
    pub converged: bool,
    pub grad_norm: f64,
    /// Parameters estimated at (or numerically near) a boundary.
    pub boundary: Vec<String>,
    /// GAS state for the day after the sample.
    pub next_kappa: Option<f64>,
}

impl CopulaFit {
    pub fn estimate(&self, name: &str) -> Option<&Estimate> {
        self.estimates.iter().find(|e| e.name == name)
    }

    /// Estimates as a plain vector in reporting order.
    pub fn values(&self) -> Vec<f64> {
        self.estimates.iter().map(|e| e.value).collect()
    }

    /// Conditional copula for each day of `u` plus one forecast day.
    ///
    /// Constant fits repeat the same parameters. GAS fits re-run the filter
    /// over `u` with the estimated coefficients, so `u` may extend past the
    /// estimation sample.
    pub fn conditional_params(&self, u: &[(f64, f64)]) -> Result<Vec<CopulaParams<f64>>> {
        match self.gas {
            None => Ok(vec![self.params; u.len() + 1]),
            Some(g) => {
                let (u, _) = clip_pairs(u);
                let out = copula::gas_filter(&self.params, &g, &u, 0.0)?;
                let mut v: Vec<_> = out
                    .path
                    .delta
                    .iter()
                    .map(|&d| self.params.with_dynamic(d))
                    .collect();
                v.push(
                    self.params
                        .with_dynamic(self.params.link_inv(out.next_kappa)),
                );
                Ok(v)
            }
        }
    }

    /// Natural dynamic parameter per day of `u` (constant fits repeat it).
    pub fn delta_path(&self, u: &[(f64, f64)]) -> Result<Vec<f64>> {
        let all = self.conditional_params(u)?;
        Ok(all[..u.len()]
            .iter()
            .map(|p| p.dynamic().unwrap_or(f64::NAN))
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Correlation of normal scores, a cheap dependence summary for start values.
fn normal_score_corr(u: &[(f64, f64)]) -> f64 {
    let xs: Vec<(f64, f64)> = u.iter().map(|&(a, b)| (norm_ppf(a), norm_ppf(b))).collect();
    let n = xs.len() as f64;
    let (ma, mb) = xs
        .iter()
        .fold((0.0, 0.0), |acc, p| (acc.0 + p.0 / n, acc.1 + p.1 / n));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for &(a, b) in &xs {
        sab += (a - ma) * (b - mb);
        saa += (a - ma) * (a - ma);
        sbb += (b - mb) * (b - mb);
    }
    let r = sab / (saa * sbb).sqrt();
    if r.is_finite() {
        r.clamp(-0.95, 0.95)
    } else {
        0.0
    }
}

/// Map unconstrained coordinates to copula parameters.
fn static_from_free(family: Family, x: &[f64]) -> CopulaParams<f64> {
    match family {
        Family::Independence => CopulaParams::Independence,
        Family::Normal => CopulaParams::Normal { rho: x[0].tanh() },
        Family::StudentT => CopulaParams::StudentT {
            rho: x[0].tanh(),
            eta: 1.0 / logistic(x[1]),
        },
        Family::Clayton => CopulaParams::Clayton { theta: x[0].exp() },
        Family::RotatedGumbel => CopulaParams::RotatedGumbel {
            delta: 1.0 + x[0].exp(),
        },
        Family::Sjc => CopulaParams::Sjc {
            tau_u: logistic(x[0]),
            tau_l: logistic(x[1]),
        },
    }
}

fn static_to_free(p: &CopulaParams<f64>) -> Vec<f64> {
    match *p {
        CopulaParams::Independence => vec![],
        CopulaParams::Normal { rho } => vec![rho.atanh()],
        CopulaParams::StudentT { rho, eta } => {
            vec![rho.atanh(), logit((1.0 / eta).clamp(1e-6, 1.0 - 1e-6))]
        }
        CopulaParams::Clayton { theta } => vec![theta.max(1e-12).ln()],
        CopulaParams::RotatedGumbel { delta } => vec![(delta - 1.0).max(1e-12).ln()],
        CopulaParams::Sjc { tau_u, tau_l } => vec![logit(tau_u), logit(tau_l)],
    }
}

/// Reporting-scale parameter vector (`eta_inv` for the t shape).
fn static_natural(p: &CopulaParams<f64>) -> Vec<f64> {
    p.named().into_iter().map(|(_, v)| v).collect()
}

fn static_from_natural(family: Family, v: &[f64]) -> CopulaParams<f64> {
    match family {
        Family::Independence => CopulaParams::Independence,
        Family::Normal => CopulaParams::Normal { rho: v[0] },
        Family::StudentT => CopulaParams::StudentT {
            rho: v[0],
            eta: 1.0 / v[1],
        },
        Family::Clayton => CopulaParams::Clayton { theta: v[0] },
        Family::RotatedGumbel => CopulaParams::RotatedGumbel { delta: v[0] },
        Family::Sjc => CopulaParams::Sjc {
            tau_u: v[0],
            tau_l: v[1],
        },
    }
}

fn start_static(family: Family, u: &[(f64, f64)]) -> CopulaParams<f64> {
    let r = normal_score_corr(u);
    let tau = (2.0 / std::f64::consts::PI * r.asin()).clamp(0.02, 0.9);
    match family {
        Family::Independence => CopulaParams::Independence,
        Family::Normal => CopulaParams::Normal { rho: r },
        Family::StudentT => CopulaParams::StudentT { rho: r, eta: 10.0 },
        Family::Clayton => CopulaParams::Clayton {
            theta: 2.0 * tau / (1.0 - tau),
        },
        Family::RotatedGumbel => CopulaParams::RotatedGumbel {
            delta: 1.0 / (1.0 - tau),
        },
        Family::Sjc => CopulaParams::Sjc {
            tau_u: 0.1,
            tau_l: 0.1,
        },
    }
}

/// Filter coordinates for the last static shape seen. Finite-difference
/// steps in correlation or GAS coefficients leave the shape unchanged, so the
/// costly t quantiles are recomputed only when `eta` moves.
struct CoordMemo<'a> {
    u: &'a [(f64, f64)],
    last: RefCell<Option<(CopulaParams<f64>, Rc<Vec<(f64, f64)>>)>>,
}

impl<'a> CoordMemo<'a> {
    fn new(u: &'a [(f64, f64)]) -> Self {
        Self {
            u,
            last: RefCell::new(None),
        }
    }

    fn get(&self, base: &CopulaParams<f64>) -> Rc<Vec<(f64, f64)>> {
        if let Some((b, c)) = &*self.last.borrow() {
            if b == base {
                return Rc::clone(c);
            }
        }
        let c = Rc::new(copula::filter_coords(base, self.u));
        *self.last.borrow_mut() = Some((*base, Rc::clone(&c)));
        c
    }
}

fn ln_pdf_terms(p: &CopulaParams<f64>, u: &[(f64, f64)], memo: &CoordMemo<'_>) -> Vec<f64> {
    match *p {
        CopulaParams::StudentT { rho, eta } => {
            let c = copula::t_const(eta);
            memo.get(&CopulaParams::StudentT { rho: 0.0, eta })
                .iter()
                .map(|&(x, y)| copula::t_ln_pdf_c(x, y, rho, eta, c))
                .collect()
        }
        _ => u.iter().map(|&(a, b)| p.ln_pdf(a, b)).collect(),
    }
}

fn boundary_flags(p: &CopulaParams<f64>) -> Vec<String> {
    let mut out = Vec::new();
    match *p {
        CopulaParams::Clayton { theta } if theta < BOUNDARY_EPS => out.push(format!(
            "clayton theta = {theta:.3e} at the independence boundary"
        )),
        CopulaParams::RotatedGumbel { delta } if delta - 1.0 < BOUNDARY_EPS => out.push(format!(
            "rotated-gumbel delta = {delta:.6} at the independence boundary"
        )),
        CopulaParams::StudentT { eta, .. } if 1.0 / eta < BOUNDARY_EPS => {
            out.push("student-t eta_inv at zero (normal limit)".into())
        }
        CopulaParams::Sjc { tau_u, tau_l } => {
            if tau_u < BOUNDARY_EPS {
                out.push("sjc tau_u at zero".into());
            }
            if tau_l < BOUNDARY_EPS {
                out.push("sjc tau_l at zero".into());
            }
        }
        _ => {}
    }
    out
}

/// Minimize, accepting a non-stationary best point when it lies on a parameter
/// boundary where the likelihood flattens out (the gradient there decays too
/// slowly for the convergence test).
fn minimize_to_boundary<F: Fn(&[f64]) -> f64>(
    f: &F,
    starts: &[Vec<f64>],
    cfg: &OptimConfig,
    at_boundary: impl Fn(&[f64]) -> bool,
) -> Result<optim::Optimum> {
    match optim::minimize(f, starts, cfg) {
        Err(Error::Estimation {
            best_point,
            best_value,
            grad_norm,
            ..
        }) if best_value.is_finite() && at_boundary(&best_point) => Ok(optim::Optimum {
            start_value: f(&starts[0]),
            x: best_point,
            value: best_value,
            grad_norm,
            iterations: 0,
            converged: false,
        }),
        r => r,
    }
}

fn check_pairs(u: &[(f64, f64)]) -> Result<(Vec<(f64, f64)>, usize)> {
    if u.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "{} PIT pairs; copula fits need at least 10",
            u.len()
        )));
    }
    if u.iter().any(|&(a, b)| {
        !(a.is_finite() && b.is_finite()) || !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b)
    }) {
        return Err(Error::domain("PIT values must lie in [0, 1]"));
    }
    Ok(clip_pairs(u))
}

fn estimates_with_se(
    names: Vec<&str>,
    values: &[f64],
    vcov: Option<nalgebra::DMatrix<f64>>,
) -> Vec<Estimate> {
    names
        .into_iter()
        .enumerate()
        .map(|(i, n)| Estimate {
            name: n.to_string(),
            value: values[i],
            se: vcov
                .as_ref()
                .map_or(f64::NAN, |v| v[(i, i)].max(0.0).sqrt()),
        })
        .collect()
}

/// Maximum likelihood for a copula with constant parameters.
pub fn fit_constant_copula(
    u: &[(f64, f64)],
    family: Family,
    cfg: &OptimConfig,
) -> Result<CopulaFit> {
    let (u, clipped) = check_pairs(u)?;
    let spec = CopulaSpec::constant(family);
    if family == Family::Independence {
        return Ok(CopulaFit {
            spec,
            params: CopulaParams::Independence,
            gas: None,
            estimates: vec![],
            path: None,
            loglik: 0.0,
            n_obs: u.len(),
            clipped,
            converged: true,
            grad_norm: 0.0,
            boundary: vec![],
            next_kappa: None,
        });
    }
    let memo = CoordMemo::new(&u);
    let obj = |x: &[f64]| {
        let v = -ln_pdf_terms(&static_from_free(family, x), &u, &memo)
            .iter()
            .sum::<f64>();
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let start = static_to_free(&start_static(family, &u));
    let opt = minimize_to_boundary(&obj, &[start], cfg, |x| {
        !boundary_flags(&static_from_free(family, x)).is_empty()
    })?;
    let params = static_from_free(family, &opt.x);
    let nat = static_natural(&params);
    let per_obs = |v: &[f64]| -> Vec<f64> {
        let p = static_from_natural(family, v);
        if p.validate().is_err() {
            return vec![f64::NAN; u.len()];
        }
        ln_pdf_terms(&p, &u, &memo)
    };
    let boundary = boundary_flags(&params);
    let vcov = if boundary.is_empty() {
        optim::sandwich(&per_obs, &nat)
    } else {
        None
    };
    let names = params.named().into_iter().map(|(n, _)| n).collect();
    Ok(CopulaFit {
        spec,
        params,
        gas: None,
        estimates: estimates_with_se(names, &nat, vcov),
        path: None,
        loglik: -opt.value,
        n_obs: u.len(),
        clipped,
        converged: opt.converged,
        grad_norm: opt.grad_norm,
        boundary,
        next_kappa: None,
    })
}

/// Unpack GAS coordinates `(w, sqrt alpha, atanh beta, [logit eta_inv])`.
///
/// `alpha` is kept non-negative: a negative loading moves the parameter
/// against the score and makes the recursion explode near the boundary.
fn gas_from_free(
    family: Family,
    x: &[f64],
    fixed_static: &CopulaParams<f64>,
) -> (CopulaParams<f64>, GasParams) {
    let gas = GasParams {
        w: x[0],
        alpha: x[1] * x[1],
        beta: x[2].tanh(),
    };
    let base = match family {
        Family::StudentT => CopulaParams::StudentT {
            rho: 0.0,
            eta: 1.0 / logistic(x[3]),
        },
        _ => *fixed_static,
    };
    (base, gas)
}

/// Maximum likelihood for a copula whose parameter follows GAS(1,1) dynamics.
///
/// One start sits at the constant-copula optimum (`alpha = beta = 0`), so the
/// reported likelihood is never below the constant fit's.
pub fn fit_gas_copula(u: &[(f64, f64)], family: Family, cfg: &OptimConfig) -> Result<CopulaFit> {
    if !family.supports_gas() {
        return Err(Error::domain(format!(
            "{family} copula has no score-driven variant"
        )));
    }
    let constant = fit_constant_copula(u, family, cfg)?;
    let (u, clipped) = check_pairs(u)?;
    let kappa_c = constant
        .params
        .link(constant.params.dynamic().expect("dynamic family"))?;
    let base0 = constant.params.with_dynamic(match family {
        Family::RotatedGumbel => 2.0,
        _ => 0.0,
    });

    let memo = CoordMemo::new(&u);
    let eval = |x: &[f64]| -> Option<copula::GasFilterOutput> {
        let (base, gas) = gas_from_free(family, x, &base0);
        let out = copula::gas_filter_coords(&base, &gas, &memo.get(&base), kappa_c).ok()?;
        (!out.diverged && out.loglik.is_finite()).then_some(out)
    };
    let obj = |x: &[f64]| eval(x).map_or(f64::INFINITY, |o| -o.loglik);

    let mut nested = vec![kappa_c, 0.0, 0.0];
    let beta0: f64 = 0.95;
    let mut persistent = vec![kappa_c * (1.0 - beta0), 0.05f64.sqrt(), beta0.atanh()];
    if let CopulaParams::StudentT { eta, .. } = constant.params {
        let s = logit((1.0 / eta).clamp(1e-4, 1.0 - 1e-4));
        nested.push(s);
        persistent.push(s);
    }
    let opt = minimize_to_boundary(&obj, &[nested, persistent], cfg, |x| {
        let (base, gas) = gas_from_free(family, x, &base0);
        gas.beta.abs() > 1.0 - BOUNDARY_EPS || !boundary_flags(&base).is_empty()
    })?;
    let (base, gas) = gas_from_free(family, &opt.x, &base0);
    let out = eval(&opt.x).ok_or_else(|| Error::Estimation {
        message: "GAS filter diverged at the optimum".into(),
        best_point: opt.x.clone(),
        best_value: opt.value,
        grad_norm: opt.grad_norm,
    })?;

    let mut nat = vec![gas.w, gas.alpha, gas.beta];
    let mut names = vec!["w", "alpha", "beta"];
    if let CopulaParams::StudentT { eta, .. } = base {
        nat.push(1.0 / eta);
        names.push("eta_inv");
    }
    let per_obs = |v: &[f64]| -> Vec<f64> {
        let g = GasParams {
            w: v[0],
            alpha: v[1],
            beta: v[2],
        };
        let b = if family == Family::StudentT {
            CopulaParams::StudentT {
                rho: 0.0,
                eta: 1.0 / v[3],
            }
        } else {
            base
        };
        match copula::gas_filter_coords(&b, &g, &memo.get(&b), kappa_c) {
            Ok(o) if !o.diverged => o.per_obs,
            _ => vec![f64::NAN; u.len()],
        }
    };
    let mut boundary = if family == Family::StudentT {
        boundary_flags(&base)
    } else {
        Vec::new()
    };
    if gas.beta.abs() > 1.0 - BOUNDARY_EPS {
        boundary.push(format!("beta = {:.6} at the unit boundary", gas.beta));
    }
    let vcov = if boundary.is_empty() {
        optim::sandwich(&per_obs, &nat)
    } else {
        None
    };
    let level = gas.unconditional_kappa().unwrap_or(kappa_c);
    Ok(CopulaFit {
        spec: CopulaSpec::gas(family),
        params: base.with_dynamic(base.link_inv(level)),
        gas: Some(gas),
        estimates: estimates_with_se(names, &nat, vcov),
        path: Some(out.path),
        loglik: out.loglik,
        n_obs: u.len(),
        clipped,
        converged: opt.converged,
        grad_norm: opt.grad_norm,
        boundary,
        next_kappa: Some(out.next_kappa),
    })
}

pub fn fit_copula(u: &[(f64, f64)], spec: &CopulaSpec, cfg: &OptimConfig) -> Result<CopulaFit> {
    match spec.dynamics {
        Dynamics::Constant => fit_constant_copula(u, spec.family, cfg),
        Dynamics::Gas => fit_gas_copula(u, spec.family, cfg),
    }
}

/// How the copula-stage pseudo-observations are built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MarginsMode {
    /// PITs through the fitted innovation distributions.
    Parametric,
    /// Rescaled empirical CDF of the standardized residuals.
    Empirical,
}

/// Result of the two-step fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JointFit {
    pub margin1: MarginFit,
    pub margin2: MarginFit,
    pub copula: CopulaFit,
    pub mode: MarginsMode,
    /// Dates of the copula-stage observations.
    pub dates: Vec<NaiveDate>,
    /// Panel rows skipped at the start to align the two margins.
    pub offset: usize,
    /// Pseudo-observations used by the copula stage.
    pub u: Vec<(f64, f64)>,
    /// Sum of the two return log-likelihoods and the copula log-likelihood
    /// (parametric mode); the copula log-likelihood alone in empirical mode.
    pub total_loglik: f64,
}

impl JointFit {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Pair two series that lost `o1` and `o2` leading rows to their AR means.
fn align<T: Copy>(a: &[T], o1: usize, b: &[T], o2: usize) -> (Vec<(T, T)>, usize) {
    let off = o1.max(o2);
    let pairs = a[off - o1..]
        .iter()
        .zip(&b[off - o2..])
        .map(|(&x, &y)| (x, y))
        .collect();
    (pairs, off)
}

/// Pseudo-observations from two fitted margins.
pub fn pseudo_observations(
    m1: &MarginFit,
    m2: &MarginFit,
    mode: MarginsMode,
) -> (Vec<(f64, f64)>, usize) {
    match mode {
        MarginsMode::Parametric => align(&m1.u, m1.offset, &m2.u, m2.offset),
        MarginsMode::Empirical => {
            let (z, off) = align(&m1.z, m1.offset, &m2.z, m2.offset);
            let za: Vec<f64> = z.iter().map(|p| p.0).collect();
            let zb: Vec<f64> = z.iter().map(|p| p.1).collect();
            let ua = margins::pit_empirical(&za);
            let ub = margins::pit_empirical(&zb);
            (ua.into_iter().zip(ub).collect(), off)
        }
    }
}

/// Multi-stage maximum likelihood on a daily panel.
pub fn msml(
    panel: &DailyPanel,
    margin_specs: [&MarginSpec; 2],
    copula_spec: &CopulaSpec,
    mode: MarginsMode,
    cfg: &OptimConfig,
) -> Result<JointFit> {
    let m1 = margins::fit_margin(&panel.r1, Some(&panel.rv1), margin_specs[0], cfg)
        .map_err(|e| e.in_stage("margin 1"))?;
    let m2 = margins::fit_margin(&panel.r2, Some(&panel.rv2), margin_specs[1], cfg)
        .map_err(|e| e.in_stage("margin 2"))?;
    joint_from_margins(m1, m2, &panel.dates, copula_spec, mode, cfg)
}

/// Second stage of [`msml`]: fit a copula to already fitted margins.
///
/// `dates` are the panel dates the margins were fitted on.
pub fn joint_from_margins(
    m1: MarginFit,
    m2: MarginFit,
    dates: &[NaiveDate],
    copula_spec: &CopulaSpec,
    mode: MarginsMode,
    cfg: &OptimConfig,
) -> Result<JointFit> {
    let (u, offset) = pseudo_observations(&m1, &m2, mode);
    if dates.len() != offset + u.len() {
        return Err(Error::domain("dates do not match the fitted margins"));
    }
    let cop = fit_copula(&u, copula_spec, cfg).map_err(|e| e.in_stage("copula"))?;
    let total = match mode {
        MarginsMode::Parametric => {
            let (ll1, ll2) = aligned_return_loglik(&m1, &m2, offset);
            ll1 + ll2 + cop.loglik
        }
        MarginsMode::Empirical => cop.loglik,
    };
    Ok(JointFit {
        dates: dates[offset..].to_vec(),
        offset,
        u,
        total_loglik: total,
        margin1: m1,
        margin2: m2,
        copula: cop,
        mode,
    })
}

/// Return log-likelihoods of both margins over the common copula sample.
fn aligned_return_loglik(m1: &MarginFit, m2: &MarginFit, offset: usize) -> (f64, f64) {
    let part = |m: &MarginFit| {
        let dist = m.typed().innovation().expect("fitted innovation is valid");
        m.z[offset - m.offset..]
            .iter()
            .zip(&m.h_path[offset - m.offset..])
            .map(|(&z, &h)| crate::udist::Univariate::ln_pdf(&dist, z) - 0.5 * h.ln())
            .sum::<f64>()
    };
    (part(m1), part(m2))
}

/// Stationary bootstrap index sequence with geometric blocks and wrap-around.
pub fn stationary_bootstrap_indices<R: Rng + ?Sized>(
    t: usize,
    mean_block: f64,
    rng: &mut R,
) -> Vec<usize> {
    assert!(t >= 1, "series must be non-empty");
    assert!(mean_block >= 1.0, "mean block length must be at least 1");
    let p = 1.0 / mean_block;
    let mut out = Vec::with_capacity(t);
    let mut idx = rng.gen_range(0..t);
    out.push(idx);
    while out.len() < t {
        idx = if rng.gen::<f64>() < p {
            rng.gen_range(0..t)
        } else {
            (idx + 1) % t
        };
        out.push(idx);
    }
    out
}

/// Resampling scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "kebab-case")]
pub enum Scheme {
    StationaryBlock { mean_block: f64 },
    Iid,
}

/// What is resampled and re-estimated.
#[derive(Debug, Clone, Copy)]
pub enum BootstrapTarget<'a> {
    /// Resample PIT pairs, refit the copula.
    Copula {
        u: &'a [(f64, f64)],
        spec: CopulaSpec,
    },
    /// Resample standardized-residual pairs, rebuild empirical PITs, refit the copula.
    Semiparametric {
        z: &'a [(f64, f64)],
        spec: CopulaSpec,
    },
    /// Resample panel days, refit both margins and the copula.
    Msml {
        panel: &'a DailyPanel,
        margins: [&'a MarginSpec; 2],
        spec: CopulaSpec,
        mode: MarginsMode,
    },
}

impl BootstrapTarget<'_> {
    fn len(&self) -> usize {
        match self {
            Self::Copula { u, .. } => u.len(),
            Self::Semiparametric { z, .. } => z.len(),
            Self::Msml { panel, .. } => panel.len(),
        }
    }

    fn spec(&self) -> CopulaSpec {
        match *self {
            Self::Copula { spec, .. }
            | Self::Semiparametric { spec, .. }
            | Self::Msml { spec, .. } => spec,
        }
    }

    /// Estimate on the index sequence; returns names and values.
    fn estimate(&self, idx: &[usize], cfg: &OptimConfig) -> Result<(Vec<String>, Vec<f64>)> {
        let names_of = |c: &CopulaFit, prefix: &str| -> Vec<String> {
            c.estimates
                .iter()
                .map(|e| format!("{prefix}{}", e.name))
                .collect()
        };
        match *self {
            Self::Copula { u, spec } => {
                let s: Vec<_> = idx.iter().map(|&i| u[i]).collect();
                let c = fit_copula(&s, &spec, cfg)?;
                Ok((names_of(&c, ""), c.values()))
            }
            Self::Semiparametric { z, spec } => {
                let a: Vec<f64> = idx.iter().map(|&i| z[i].0).collect();
                let b: Vec<f64> = idx.iter().map(|&i| z[i].1).collect();
                let s: Vec<_> = margins::pit_empirical(&a)
                    .into_iter()
                    .zip(margins::pit_empirical(&b))
                    .collect();
                let c = fit_copula(&s, &spec, cfg)?;
                Ok((names_of(&c, ""), c.values()))
            }
            Self::Msml {
                panel,
                margins,
                spec,
                mode,
            } => {
                let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
                let p = DailyPanel {
                    dates: panel.dates.clone(),
                    r1: pick(&panel.r1),
                    rv1: pick(&panel.rv1),
                    r2: pick(&panel.r2),
                    rv2: pick(&panel.rv2),
                    bars: vec![],
                };
                let j = msml(&p, margins, &spec, mode, cfg)?;
                let mut names: Vec<String> =
                    j.margin1.names.iter().map(|n| format!("m1.{n}")).collect();
                names.extend(j.margin2.names.iter().map(|n| format!("m2.{n}")));
                names.extend(names_of(&j.copula, "copula."));
                let mut vals = j.margin1.params.clone();
                vals.extend(&j.margin2.params);
                vals.extend(j.copula.values());
                Ok((names, vals))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub names: Vec<String>,
    /// Estimates on the original data.
    pub point: Vec<f64>,
    pub replicates: Vec<Vec<f64>>,
    /// `(lo, hi)` per parameter at `level`.
    pub ci: Vec<(f64, f64)>,
    /// Standard deviation of the replicates.
    pub se: Vec<f64>,
    pub level: f64,
    pub scheme: Scheme,
    pub failed: usize,
    /// Replicates used the reduced optimizer budget.
    pub reduced_budget: bool,
    pub caveat: Option<String>,
}

impl BootstrapResult {
    /// Intervals at another level from the same replicates.
    pub fn intervals(&self, level: f64) -> Vec<(f64, f64)> {
        quantile_intervals(&self.replicates, self.names.len(), level)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Type-7 sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn quantile_intervals(reps: &[Vec<f64>], k: usize, level: f64) -> Vec<(f64, f64)> {
    let a = 1.0 - level;
    (0..k)
        .map(|j| {
            let mut col: Vec<f64> = reps.iter().map(|r| r[j]).collect();
            col.sort_by(f64::total_cmp);
            (
                quantile_sorted(&col, a / 2.0),
                quantile_sorted(&col, 1.0 - a / 2.0),
            )
        })
        .collect()
}

/// Percentile bootstrap confidence intervals by re-estimation.
///
/// Replicate `s` draws from its own stream of the master seed, so results do
/// not depend on scheduling. More than 20% failed replicates is an error.
pub fn bootstrap_ci(
    target: &BootstrapTarget<'_>,
    replicates: usize,
    level: f64,
    scheme: Scheme,
    seed: u64,
    cfg: &OptimConfig,
) -> Result<BootstrapResult> {
    if replicates < 50 {
        return Err(Error::domain(format!(
            "{replicates} replicates; at least 50 required"
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::domain("confidence level must be in (0, 1)"));
    }
    if let Scheme::StationaryBlock { mean_block } = scheme {
        if !(mean_block >= 1.0) {
            return Err(Error::domain("mean block length must be at least 1"));
        }
    }
    let t = target.len();
    let identity: Vec<usize> = (0..t).collect();
    let (names, point) = target.estimate(&identity, cfg)?;
    let reduced = cfg.reduced();
    let draws: Vec<Option<Vec<f64>>> = (0..replicates)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s as u64 + 1);
            let idx = match scheme {
                Scheme::StationaryBlock { mean_block } => {
                    stationary_bootstrap_indices(t, mean_block, &mut rng)
                }
                Scheme::Iid => (0..t).map(|_| rng.gen_range(0..t)).collect(),
            };
            let cfg_s = OptimConfig {
                seed: reduced.seed ^ (s as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
                ..reduced.clone()
            };
            target
                .estimate(&idx, &cfg_s)
                .ok()
                .filter(|(n, v)| n.len() == names.len() && v.iter().all(|x| x.is_finite()))
                .map(|(_, v)| v)
        })
        .collect();
    let failed = draws.iter().filter(|d| d.is_none()).count();
    if failed * 5 > replicates {
        return Err(Error::Replicates {
            failed,
            total: replicates,
        });
    }
    let reps: Vec<Vec<f64>> = draws.into_iter().flatten().collect();
    let k = names.len();
    let se = (0..k)
        .map(|j| {
            let n = reps.len() as f64;
            let m = reps.iter().map(|r| r[j]).sum::<f64>() / n;
            (reps.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        })
        .collect();
    let caveat = match (target, target.spec().dynamics) {
        (BootstrapTarget::Semiparametric { .. }, Dynamics::Gas) => Some(
            "block bootstrap for a semiparametric time-varying copula lacks formal justification"
                .to_string(),
        ),
        _ => None,
    };
    Ok(BootstrapResult {
        ci: quantile_intervals(&reps, k, level),
        names,
        point,
        replicates: reps,
        se,
        level,
        scheme,
        failed,
        reduced_budget: true,
        caveat,
    })
}

/// Plain-text parameter table: estimate with standard error in parentheses.
///
/// Bootstrap standard errors replace the sandwich ones where available.
pub fn format_table(fit: &JointFit, boot: Option<&BootstrapResult>) -> String {
    let boot_se = |name: &str| -> Option<f64> {
        let b = boot?;
        b.names.iter().position(|n| n == name).map(|i| b.se[i])
    };
    let mut s = String::new();
    let row = |s: &mut String, name: &str, v: f64, se: f64| {
        let se = if se.is_finite() {
            format!("({se:.4})")
        } else {
            "(-)".into()
        };
        let _ = writeln!(s, "  {name:<10} {v:>10.4} {se:>10}");
    };
    for (label, m, prefix) in [
        ("margin 1", &fit.margin1, "m1."),
        ("margin 2", &fit.margin2, "m2."),
    ] {
        let _ = writeln!(
            s,
            "{label}: {:?} / {:?}",
            m.spec.variance_model, m.spec.innovation
        );
        for (i, n) in m.names.iter().enumerate() {
            row(
                &mut s,
                n,
                m.params[i],
                boot_se(&format!("{prefix}{n}")).unwrap_or(m.se[i]),
            );
        }
        let _ = writeln!(s, "  {:<10} {:>10.2}", "loglik", m.loglik_joint);
    }
    let c = &fit.copula;
    let dyn_label = match c.spec.dynamics {
        Dynamics::Constant => "constant",
        Dynamics::Gas => "GAS",
    };
    let _ = writeln!(s, "copula: {} ({dyn_label})", c.spec.family);
    for e in &c.estimates {
        let se = boot_se(&e.name)
            .or_else(|| boot_se(&format!("copula.{}", e.name)))
            .unwrap_or(e.se);
        row(&mut s, &e.name, e.value, se);
    }
    let _ = writeln!(s, "  {:<10} {:>10.2}", "loglik", c.loglik);
    for b in &c.boundary {
        let _ = writeln!(s, "  note: {b}");
    }
    let _ = writeln!(s, "total loglik {:.4}", fit.total_loglik);
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(p: CopulaParams<f64>, n: usize, seed: u64) -> Vec<(f64, f64)> {
        p.sample(n, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn bootstrap_indices_cover_range_and_block_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let idx = stationary_bootstrap_indices(500, 20.0, &mut rng);
        assert_eq!(idx.len(), 500);
        assert!(idx.iter().all(|&i| i < 500));
        let mut starts = 0usize;
        let mut total = 0usize;
        for _ in 0..20 {
            let v = stationary_bootstrap_indices(500, 20.0, &mut rng);
            starts += v.windows(2).filter(|w| w[1] != (w[0] + 1) % 500).count();
            total += 499;
        }
        let rate = starts as f64 / total as f64;
        // a fresh uniform draw continues the block by chance with prob 1/T
        assert!((rate - 0.05).abs() < 0.01, "rate {rate}");
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(
            stationary_bootstrap_indices(50, 1.0, &mut a),
            stationary_bootstrap_indices(50, 1.0, &mut b)
        );
    }

    #[test]
    fn constant_normal_recovers_rho() {
        let u = sample(CopulaParams::Normal { rho: 0.206 }, 2436, 11);
        let fit = fit_constant_copula(&u, Family::Normal, &OptimConfig::default()).unwrap();
        let e = fit.estimate("rho").unwrap();
        assert!(
            (e.value - 0.206).abs() < 3.0 * e.se,
            "{} ± {}",
            e.value,
            e.se
        );
        assert!(e.se > 0.01 && e.se < 0.03);
        let direct: f64 = u.iter().map(|&(a, b)| fit.params.ln_pdf(a, b)).sum();
        assert!((direct - fit.loglik).abs() < 1e-9);
    }

    #[test]
    fn clayton_on_independent_data_is_flagged() {
        let u = sample(CopulaParams::Independence, 1500, 2);
        let fit = fit_constant_copula(&u, Family::Clayton, &OptimConfig::default()).unwrap();
        let theta = fit.estimate("theta").unwrap().value;
        assert!(theta < 0.08, "theta {theta}");
        if theta < BOUNDARY_EPS {
            assert!(!fit.boundary.is_empty());
        }
    }

    #[test]
    fn student_t_recovery() {
        let u = sample(
            CopulaParams::StudentT {
                rho: 0.2,
                eta: 1.0 / 0.14,
            },
            4000,
            5,
        );
        let fit = fit_constant_copula(&u, Family::StudentT, &OptimConfig::default()).unwrap();
        for (name, truth) in [("rho", 0.2), ("eta_inv", 0.14)] {
            let e = fit.estimate(name).unwrap();
            assert!(
                (e.value - truth).abs() < 3.0 * e.se,
                "{name} {} ± {}",
                e.value,
                e.se
            );
        }
    }

    #[test]
    fn gas_nests_constant() {
        let u = sample(CopulaParams::Normal { rho: 0.3 }, 800, 8);
        let cfg = OptimConfig::default();
        let c = fit_constant_copula(&u, Family::Normal, &cfg).unwrap();
        let g = fit_gas_copula(&u, Family::Normal, &cfg).unwrap();
        assert!(g.loglik >= c.loglik - 1e-4);
        assert!(g.loglik - c.loglik < 2.0 + 1e-6 || g.loglik - c.loglik < 5.0);
        let path = g.path.as_ref().unwrap();
        assert_eq!(path.len(), u.len());
        let cond = g.conditional_params(&u).unwrap();
        assert_eq!(cond.len(), u.len() + 1);
        assert!((cond[10].dynamic().unwrap() - path.delta[10]).abs() < 1e-15);
    }

    #[test]
    fn bootstrap_is_reproducible_and_nested() {
        let u = sample(CopulaParams::Normal { rho: 0.4 }, 300, 1);
        let target = BootstrapTarget::Copula {
            u: &u,
            spec: CopulaSpec::constant(Family::Normal),
        };
        let cfg = OptimConfig::default();
        let a = bootstrap_ci(&target, 60, 0.9, Scheme::Iid, 42, &cfg).unwrap();
        let b = bootstrap_ci(&target, 60, 0.9, Scheme::Iid, 42, &cfg).unwrap();
        assert_eq!(a.replicates, b.replicates);
        let (l95, h95) = a.intervals(0.95)[0];
        let (l99, h99) = a.intervals(0.99)[0];
        assert!(l99 <= l95 && h95 <= h99);
        assert!(a.ci[0].0 < 0.4 && a.ci[0].1 > 0.4);
        assert!(bootstrap_ci(&target, 10, 0.9, Scheme::Iid, 1, &cfg).is_err());
    }

    #[test]
    fn quantile_type7() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
        assert!((quantile_sorted(&v, 0.5) - 2.5).abs() < 1e-15);
        assert!((quantile_sorted(&v, 0.1) - 1.3).abs() < 1e-12);
    }
}
