//! One-day-ahead portfolio risk from a fitted joint model: simulated VaR,
//! expected shortfall and conditional diversification benefits (CDB).
//!
//! Returns are on the return scale (losses negative). ES is the mean of the
//! `ceil(alpha * n)` smallest draws, which keeps the empirical measure
//! subadditive on a shared draw set. CDB is computed on the loss scale, so it
//! rises with diversification.

use std::io::Write;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::copula::{clip, CopulaParams};
use crate::error::{Error, Result};
use crate::estimate::{quantile_sorted, JointFit, MarginsMode};
use crate::margins::MarginFit;
use crate::marketdata::DailyPanel;
use crate::udist::{SkewT, Univariate};

/// Default number of simulated paths per forecast.
pub const DEFAULT_PATHS: usize = 10_000;
/// Default number of simulations for the constant-correlation band.
pub const DEFAULT_BAND_SIMS: usize = 10_000;
/// Default probability levels for VaR series.
pub const DEFAULT_ALPHAS: [f64; 6] = [0.01, 0.05, 0.1, 0.9, 0.95, 0.99];
/// Tail draws required for an ES estimate.
pub const MIN_TAIL_DRAWS: usize = 20;

/// Conditional state for one forecast day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastState {
    /// Target day; `None` for the day after the sample.
    pub date: Option<NaiveDate>,
    pub mean: [f64; 2],
    pub h: [f64; 2],
    pub copula: CopulaParams<f64>,
}

/// Inverse CDF of a margin's standardized innovation.
#[derive(Debug, Clone)]
pub enum MarginLaw {
    Parametric(SkewT<f64>),
    /// Interpolated order statistics of in-sample residuals, with the
    /// parametric law beyond the extreme ranks.
    Empirical {
        sorted: Vec<f64>,
        guard: SkewT<f64>,
    },
}

impl MarginLaw {
    pub fn from_fit(m: &MarginFit, mode: MarginsMode) -> Result<Self> {
        let guard = m.typed().innovation()?;
        Ok(match mode {
            MarginsMode::Parametric => MarginLaw::Parametric(guard),
            MarginsMode::Empirical => {
                let mut sorted = m.z.clone();
                sorted.sort_by(f64::total_cmp);
                MarginLaw::Empirical { sorted, guard }
            }
        })
    }

    pub fn cdf(&self, z: f64) -> f64 {
        match self {
            MarginLaw::Parametric(d) => clip(d.cdf(z)),
            MarginLaw::Empirical { sorted, .. } => {
                let n = sorted.len();
                let k = sorted.partition_point(|s| *s <= z).clamp(1, n);
                k as f64 / (n + 1) as f64
            }
        }
    }

    pub fn quantile(&self, u: f64) -> Result<f64> {
        match self {
            MarginLaw::Parametric(d) => d.quantile(u),
            MarginLaw::Empirical { sorted, guard } => {
                let n = sorted.len();
                let pos = u * (n + 1) as f64;
                if pos < 1.0 || pos > n as f64 {
                    return guard.quantile(u);
                }
                let lo = (pos.floor() as usize).min(n);
                let frac = pos - lo as f64;
                if lo == n {
                    return Ok(sorted[n - 1]);
                }
                Ok(sorted[lo - 1] + frac * (sorted[lo] - sorted[lo - 1]))
            }
        }
    }
}

/// Forecast states for every day from the copula sample start to the day
/// after the panel, re-filtering both margins and the copula with the fitted
/// parameters. Element `i` targets panel row `fit.offset + i`.
pub fn forecast_states(fit: &JointFit, panel: &DailyPanel) -> Result<Vec<ForecastState>> {
    let laws = [
        MarginLaw::from_fit(&fit.margin1, fit.mode)?,
        MarginLaw::from_fit(&fit.margin2, fit.mode)?,
    ];
    let margins = [&fit.margin1, &fit.margin2];
    let t_len = panel.len();
    let mut means = Vec::with_capacity(2);
    let mut hs = Vec::with_capacity(2);
    let mut us = Vec::with_capacity(2);
    for (k, m) in margins.iter().enumerate() {
        let y = panel.returns(k);
        let f = m.refilter(y, Some(panel.rv(k)))?;
        let p = m.typed();
        let next_mean = p.mu
            + p.ar
                .iter()
                .enumerate()
                .map(|(i, a)| a * y[t_len - 1 - i])
                .sum::<f64>();
        let mut mean = f.mean.clone();
        mean.push(next_mean);
        let mut h = f.h.clone();
        h.push(f.h_next);
        us.push(f.z.iter().map(|&z| laws[k].cdf(z)).collect::<Vec<f64>>());
        means.push(mean);
        hs.push(h);
    }
    let off = fit.offset;
    let pick = |k: usize, v: &[f64], t: usize| v[t - margins[k].offset];
    let u: Vec<(f64, f64)> = (off..t_len)
        .map(|t| (pick(0, &us[0], t), pick(1, &us[1], t)))
        .collect();
    let cop = fit.copula.conditional_params(&u)?;
    Ok((off..=t_len)
        .map(|t| ForecastState {
            date: panel.dates.get(t).copied(),
            mean: [pick(0, &means[0], t), pick(1, &means[1], t)],
            h: [pick(0, &hs[0], t), pick(1, &hs[1], t)],
            copula: cop[t - off],
        })
        .collect())
}

/// Simulated next-day returns of both assets and the portfolio.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForecastDraws {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub y: Vec<f64>,
    pub weights: [f64; 2],
    pub date: Option<NaiveDate>,
    pub seed: u64,
}

fn check_weights(w: [f64; 2]) -> Result<()> {
    if w.iter().any(|v| !(*v >= 0.0)) || ((w[0] + w[1]) - 1.0).abs() > 1e-9 {
        return Err(Error::domain("weights must be non-negative and sum to one"));
    }
    Ok(())
}

/// Draw the joint one-day-ahead distribution for a state.
pub fn simulate_state<R: Rng + ?Sized>(
    state: &ForecastState,
    laws: &[MarginLaw; 2],
    weights: [f64; 2],
    n_paths: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    check_weights(weights)?;
    let pairs = state.copula.sample(n_paths, rng);
    let mut x1 = Vec::with_capacity(n_paths);
    let mut x2 = Vec::with_capacity(n_paths);
    let (s1, s2) = (state.h[0].sqrt(), state.h[1].sqrt());
    for (a, b) in pairs {
        x1.push(state.mean[0] + s1 * laws[0].quantile(clip(a))?);
        x2.push(state.mean[1] + s2 * laws[1].quantile(clip(b))?);
    }
    let y = x1
        .iter()
        .zip(&x2)
        .map(|(a, b)| weights[0] * a + weights[1] * b)
        .collect();
    Ok((x1, x2, y))
}

fn refuse_unconverged(fit: &JointFit) -> Result<()> {
    if !(fit.margin1.converged && fit.margin2.converged && fit.copula.converged) {
        return Err(Error::Refused(
            "joint fit did not converge; forecasts withheld".into(),
        ));
    }
    Ok(())
}

/// Simulate the joint next-day distribution from a fit at a given state.
pub fn simulate_joint(
    fit: &JointFit,
    state: &ForecastState,
    weights: [f64; 2],
    n_paths: usize,
    seed: u64,
) -> Result<ForecastDraws> {
    refuse_unconverged(fit)?;
    let laws = [
        MarginLaw::from_fit(&fit.margin1, fit.mode)?,
        MarginLaw::from_fit(&fit.margin2, fit.mode)?,
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x1, x2, y) = simulate_state(state, &laws, weights, n_paths, &mut rng)?;
    Ok(ForecastDraws {
        x1,
        x2,
        y,
        weights,
        date: state.date,
        seed,
    })
}

fn sorted(x: &[f64]) -> Vec<f64> {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Interpolated `alpha` quantile of a sample.
pub fn value_at_risk(x: &[f64], alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain("alpha must lie in (0, 1)"));
    }
    if x.is_empty() {
        return Err(Error::InsufficientData("no draws".into()));
    }
    Ok(quantile_sorted(&sorted(x), alpha))
}

/// Mean of the `ceil(alpha * n)` smallest values.
pub fn expected_shortfall_of(x: &[f64], alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain("alpha must lie in (0, 1)"));
    }
    let k = (alpha * x.len() as f64).ceil() as usize;
    if k < MIN_TAIL_DRAWS {
        return Err(Error::InsufficientData(format!(
            "{k} tail draws at alpha = {alpha}; increase the number of paths to at least {}",
            (MIN_TAIL_DRAWS as f64 / alpha).ceil()
        )));
    }
    let s = sorted(x);
    Ok(s[..k].iter().sum::<f64>() / k as f64)
}

/// Portfolio VaR from a draw set.
pub fn var_forecast(draws: &ForecastDraws, alpha: f64) -> Result<f64> {
    value_at_risk(&draws.y, alpha)
}

/// Portfolio expected shortfall from a draw set.
pub fn expected_shortfall(draws: &ForecastDraws, alpha: f64) -> Result<f64> {
    expected_shortfall_of(&draws.y, alpha)
}

/// Diversification benefit with its bounds, all on the loss scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdbPoint {
    pub cdb: f64,
    /// Portfolio ES as a loss.
    pub es: f64,
    /// Weighted sum of the individual ES (no diversification).
    pub es_upper: f64,
    /// Portfolio VaR as a loss.
    pub es_lower: f64,
    pub alpha: f64,
}

/// CDB from asset and portfolio draws sharing the same paths.
pub fn cdb_from_draws(x1: &[f64], x2: &[f64], weights: [f64; 2], alpha: f64) -> Result<CdbPoint> {
    check_weights(weights)?;
    let y: Vec<f64> = x1
        .iter()
        .zip(x2)
        .map(|(a, b)| weights[0] * a + weights[1] * b)
        .collect();
    let es = -expected_shortfall_of(&y, alpha)?;
    let es_upper = -(weights[0] * expected_shortfall_of(x1, alpha)?
        + weights[1] * expected_shortfall_of(x2, alpha)?);
    let es_lower = -value_at_risk(&y, alpha)?;
    let span = es_upper - es_lower;
    if !(span.abs() > 0.0) {
        return Err(Error::Degenerate(
            "ES bounds coincide; CDB undefined".into(),
        ));
    }
    Ok(CdbPoint {
        cdb: (es_upper - es) / span,
        es,
        es_upper,
        es_lower,
        alpha,
    })
}

/// Simulate at a state and compute the CDB.
pub fn cdb(
    fit: &JointFit,
    state: &ForecastState,
    weights: [f64; 2],
    alpha: f64,
    n_paths: usize,
    seed: u64,
) -> Result<CdbPoint> {
    let d = simulate_joint(fit, state, weights, n_paths, seed)?;
    cdb_from_draws(&d.x1, &d.x2, weights, alpha)
}

/// Distribution of the CDB for iid Gaussian returns with constant correlation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdbBand {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
}

/// CDB of `t`-day iid bivariate normal samples with correlation `rho`,
/// repeated `n_sim` times; equal weights.
pub fn cdb_constant_band(
    rho: f64,
    t: usize,
    n_sim: usize,
    alpha: f64,
    level: f64,
    seed: u64,
) -> Result<CdbBand> {
    if !(-1.0..=1.0).contains(&rho) {
        return Err(Error::domain("correlation outside [-1, 1]"));
    }
    if n_sim < 2 || !(level > 0.0 && level < 1.0) {
        return Err(Error::domain(
            "need at least two simulations and a level in (0, 1)",
        ));
    }
    let c = (1.0 - rho * rho).sqrt();
    let vals: Vec<Result<f64>> = (0..n_sim)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s as u64 + 1);
            let mut x1 = Vec::with_capacity(t);
            let mut x2 = Vec::with_capacity(t);
            for _ in 0..t {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                x1.push(a);
                x2.push(rho * a + c * b);
            }
            Ok(cdb_from_draws(&x1, &x2, [0.5, 0.5], alpha)?.cdb)
        })
        .collect();
    let mut v = vals.into_iter().collect::<Result<Vec<f64>>>()?;
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.sort_by(f64::total_cmp);
    let a = 1.0 - level;
    Ok(CdbBand {
        mean,
        lo: quantile_sorted(&v, a / 2.0),
        hi: quantile_sorted(&v, 1.0 - a / 2.0),
        level,
    })
}

/// Out-of-sample risk forecasts for a fixed-parameter model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RiskSeries {
    pub dates: Vec<NaiveDate>,
    pub alphas: Vec<f64>,
    /// `var[d][a]`: VaR for day `d` at `alphas[a]`.
    pub var: Vec<Vec<f64>>,
    /// Lower-tail ES (NaN for `alpha >= 0.5`).
    pub es: Vec<Vec<f64>>,
    /// CDB (NaN for `alpha >= 0.5`).
    pub cdb: Vec<Vec<f64>>,
    /// Realized portfolio return per day.
    pub realized: Vec<f64>,
    pub weights: [f64; 2],
    pub n_paths: usize,
    pub seed: u64,
}

impl RiskSeries {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// VaR column for one probability level.
    pub fn var_at(&self, alpha: f64) -> Option<Vec<f64>> {
        let j = self.alphas.iter().position(|a| (a - alpha).abs() < 1e-12)?;
        Some(self.var.iter().map(|row| row[j]).collect())
    }

    /// Rows `date,alpha,var,es,cdb`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["date", "alpha", "var", "es", "cdb"])?;
        for d in 0..self.len() {
            for (j, a) in self.alphas.iter().enumerate() {
                w.write_record([
                    self.dates[d].to_string(),
                    a.to_string(),
                    self.var[d][j].to_string(),
                    self.es[d][j].to_string(),
                    self.cdb[d][j].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Static-scheme forecasts for panel rows `oos_start..`.
///
/// Parameters stay at their in-sample values; conditional states are
/// updated with realized data. Each day draws from its own stream of `seed`.
pub fn var_backtest_series(
    fit: &JointFit,
    panel: &DailyPanel,
    oos_start: usize,
    alphas: &[f64],
    weights: [f64; 2],
    n_paths: usize,
    seed: u64,
) -> Result<RiskSeries> {
    refuse_unconverged(fit)?;
    check_weights(weights)?;
    if oos_start <= fit.offset || oos_start >= panel.len() {
        return Err(Error::domain(
            "out-of-sample start must fall inside the panel",
        ));
    }
    if alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
        return Err(Error::domain("alphas must lie in (0, 1)"));
    }
    let states = forecast_states(fit, panel)?;
    let laws = [
        MarginLaw::from_fit(&fit.margin1, fit.mode)?,
        MarginLaw::from_fit(&fit.margin2, fit.mode)?,
    ];
    let rows: Vec<Result<(Vec<f64>, Vec<f64>, Vec<f64>)>> = (oos_start..panel.len())
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let (x1, x2, y) =
                simulate_state(&states[t - fit.offset], &laws, weights, n_paths, &mut rng)?;
            let ys = sorted(&y);
            let mut var = Vec::with_capacity(alphas.len());
            let mut es = Vec::with_capacity(alphas.len());
            let mut cd = Vec::with_capacity(alphas.len());
            for &a in alphas {
                var.push(quantile_sorted(&ys, a));
                if a < 0.5 {
                    let p = cdb_from_draws(&x1, &x2, weights, a)?;
                    es.push(-p.es);
                    cd.push(p.cdb);
                } else {
                    es.push(f64::NAN);
                    cd.push(f64::NAN);
                }
            }
            Ok((var, es, cd))
        })
        .collect();
    let mut out = RiskSeries {
        dates: panel.dates[oos_start..].to_vec(),
        alphas: alphas.to_vec(),
        var: Vec::new(),
        es: Vec::new(),
        cdb: Vec::new(),
        realized: (oos_start..panel.len())
            .map(|t| weights[0] * panel.r1[t] + weights[1] * panel.r2[t])
            .collect(),
        weights,
        n_paths,
        seed,
    };
    for r in rows {
        let (v, e, c) = r?;
        out.var.push(v);
        out.es.push(e);
        out.cdb.push(c);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn normal_law() -> MarginLaw {
        MarginLaw::Parametric(SkewT::new(1e9, 0.0).unwrap())
    }

    fn state(rho: f64) -> ForecastState {
        ForecastState {
            date: None,
            mean: [0.0, 0.0],
            h: [1.0, 1.0],
            copula: if rho == 0.0 {
                CopulaParams::Independence
            } else {
                CopulaParams::Normal { rho }
            },
        }
    }

    fn draws(rho: f64, n: usize, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let laws = [normal_law(), normal_law()];
        simulate_state(
            &state(rho),
            &laws,
            [0.5, 0.5],
            n,
            &mut ChaCha8Rng::seed_from_u64(seed),
        )
        .unwrap()
    }

    #[test]
    fn normal_var_and_es() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..1_000_000).map(|_| rng.sample(StandardNormal)).collect();
        let es = expected_shortfall_of(&x, 0.05).unwrap();
        assert!((es + 2.063).abs() < 0.01, "es {es}");
        let v = value_at_risk(&x[..100_000], 0.05).unwrap();
        assert!((v + 1.645).abs() < 0.02);
        assert!(value_at_risk(&x, 0.01).unwrap() <= value_at_risk(&x, 0.05).unwrap());
        assert!(es <= value_at_risk(&x, 0.05).unwrap());
        assert_eq!(expected_shortfall_of(&[3.5; 500], 0.05).unwrap(), 3.5);
        assert!(expected_shortfall_of(&x[..100], 0.05).is_err());
    }

    #[test]
    fn portfolio_variance_under_normal_copula() {
        let (x1, x2, y) = draws(0.5, 200_000, 3);
        let var = y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64;
        assert!((var - 0.75).abs() < 0.01, "var {var}");
        let (a, b, _) = draws(0.0, 20_000, 4);
        let corr = a.iter().zip(&b).map(|(p, q)| p * q).sum::<f64>() / 20_000.0;
        assert!(corr.abs() < 3.0 / 20_000f64.sqrt());
        let p = cdb_from_draws(&x1, &x2, [1.0, 0.0], 0.05).unwrap();
        assert_eq!(p.cdb, 0.0);
    }

    #[test]
    fn cdb_decreases_with_correlation() {
        let mut prev = f64::INFINITY;
        for rho in [0.0, 0.3, 0.6, 0.9] {
            let (x1, x2, _) = draws(rho, 100_000, 7);
            let c = cdb_from_draws(&x1, &x2, [0.5, 0.5], 0.05).unwrap().cdb;
            assert!((0.0..=1.0).contains(&c));
            assert!(c < prev, "rho {rho}: {c} !< {prev}");
            prev = c;
        }
    }

    #[test]
    fn constant_band_brackets_mean() {
        let b = cdb_constant_band(0.3, 1000, 1000, 0.05, 0.9, 5).unwrap();
        assert!(b.lo <= b.mean && b.mean <= b.hi);
        let one = cdb_constant_band(1.0, 1000, 1000, 0.05, 0.9, 5).unwrap();
        assert!(one.hi.abs() < 1e-9);
    }

    #[test]
    fn empirical_law_inverts_ranks() {
        let sorted: Vec<f64> = (1..=99).map(|i| i as f64).collect();
        let law = MarginLaw::Empirical {
            sorted,
            guard: SkewT::new(8.0, 0.0).unwrap(),
        };
        assert!((law.quantile(0.25).unwrap() - 25.0).abs() < 1e-9);
        assert!((law.quantile(0.255).unwrap() - 25.5).abs() < 1e-9);
        assert!((law.cdf(25.0) - 0.25).abs() < 1e-12);
        assert!(law.quantile(0.001).unwrap() < 0.0);
    }
}
