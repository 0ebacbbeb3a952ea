//! VaR forecast evaluation: coverage, the dynamic quantile (DQ) logit test,
//! tick loss and Diebold-Mariano comparisons.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{hac_variance, newey_west_lag};
use crate::error::{Error, Result};
use crate::special::norm_cdf;

/// Default lag order of the DQ regression.
pub const DEFAULT_DQ_LAGS: usize = 4;
/// Default number of simulated null hit series.
pub const DEFAULT_DQ_SIMS: usize = 1000;
/// Ridge weight on DQ slope coefficients; keeps estimates finite under
/// quasi-separation. Applied identically to observed and simulated series.
const DQ_RIDGE: f64 = 0.1;

/// Violations of a quantile forecast series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitSeries {
    pub hits: Vec<u8>,
    pub quantiles: Vec<f64>,
    pub alpha: f64,
}

impl HitSeries {
    /// `hit[t] = 1{y[t] < q[t]}`.
    pub fn new(realized: &[f64], quantiles: &[f64], alpha: f64) -> Result<Self> {
        if realized.len() != quantiles.len() {
            return Err(Error::domain(
                "realized and forecast series differ in length",
            ));
        }
        Ok(Self {
            hits: realized
                .iter()
                .zip(quantiles)
                .map(|(y, q)| u8::from(y < q))
                .collect(),
            quantiles: quantiles.to_vec(),
            alpha,
        })
    }

    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }
}

/// Share of days with a violation.
pub fn coverage(h: &HitSeries) -> Result<f64> {
    if h.is_empty() {
        return Err(Error::InsufficientData("empty hit series".into()));
    }
    Ok(h.hits.iter().map(|&b| f64::from(b)).sum::<f64>() / h.len() as f64)
}

/// `(alpha - 1{y < q}) (y - q)` per day.
pub fn tick_loss(y: &[f64], q: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if y.len() != q.len() {
        return Err(Error::domain(
            "realized and forecast series differ in length",
        ));
    }
    Ok(y.iter()
        .zip(q)
        .map(|(&y, &q)| (alpha - if y < q { 1.0 } else { 0.0 }) * (y - q))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DqStatus {
    Ok,
    /// No hits, or hits every day: the logit likelihood has no maximum.
    Untestable,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DqReport {
    pub stat: f64,
    pub p_value: f64,
    pub status: DqStatus,
    pub n_lags: usize,
    pub n_sim: usize,
    pub diagnostic: Option<String>,
}

/// Design matrix: constant, `n` lagged hits and the `n` most recent quantile
/// forecasts (standardized), for days `n..T`.
fn dq_design(quantiles: &[f64], n: usize) -> DMatrix<f64> {
    let t = quantiles.len();
    let mean = quantiles.iter().sum::<f64>() / t as f64;
    let sd = (quantiles.iter().map(|q| (q - mean).powi(2)).sum::<f64>() / t as f64).sqrt();
    let scale = if sd > 0.0 { sd } else { 1.0 };
    let rows = t - n;
    // hit columns are filled per series in `dq_wald`
    DMatrix::from_fn(rows, 1 + 2 * n, |r, c| {
        let d = r + n;
        if c == 0 {
            1.0
        } else if c <= n {
            0.0
        } else {
            (quantiles[d - (c - n - 1)] - mean) / scale
        }
    })
}

/// Penalized logit fit and Wald statistic for `intercept = logit(alpha)`,
/// slopes zero.
fn dq_wald(hits: &[u8], base: &DMatrix<f64>, n: usize, alpha: f64) -> f64 {
    let mut x = base.clone();
    let rows = x.nrows();
    for r in 0..rows {
        let d = r + n;
        for k in 1..=n {
            x[(r, k)] = f64::from(hits[d - k]);
        }
    }
    let y = DVector::from_iterator(rows, hits[n..].iter().map(|&b| f64::from(b)));
    let k = x.ncols();
    let mut pen = DMatrix::<f64>::identity(k, k) * DQ_RIDGE;
    pen[(0, 0)] = 0.0;
    let b0 = (alpha / (1.0 - alpha)).ln();
    let mut beta = DVector::<f64>::zeros(k);
    beta[0] = b0;
    let mut info = DMatrix::<f64>::identity(k, k);
    for _ in 0..50 {
        let eta = &x * &beta;
        let p = eta.map(|e| 1.0 / (1.0 + (-e).exp()));
        let w = p.map(|v| (v * (1.0 - v)).max(1e-12));
        let grad = x.transpose() * (&y - &p) - &pen * &beta;
        let mut xw = x.clone();
        for (r, wr) in w.iter().enumerate() {
            xw.row_mut(r).scale_mut(*wr);
        }
        info = x.transpose() * xw + &pen;
        let Some(step) = info.clone().lu().solve(&grad) else {
            return f64::NAN;
        };
        beta += &step;
        if step.amax() < 1e-10 {
            break;
        }
    }
    let mut d = beta.clone();
    d[0] -= b0;
    match info.clone().lu().solve(&d) {
        // Var(beta) = info^-1, so the Wald form is d' info d
        Some(_) => d.dot(&(&info * &d)),
        None => f64::NAN,
    }
}

/// Dynamic quantile test with a logit link and simulated p-values.
///
/// The null distribution comes from iid Bernoulli(alpha) hit series of the
/// same length, holding the quantile regressors fixed.
pub fn dq_test(h: &HitSeries, n_lags: usize, n_sim: usize, seed: u64) -> Result<DqReport> {
    let t = h.len();
    if n_lags == 0 || t <= n_lags + 10 {
        return Err(Error::InsufficientData(format!(
            "{t} days for {n_lags} lags"
        )));
    }
    let hits_in_sample: usize = h.hits[n_lags..].iter().map(|&b| usize::from(b)).sum();
    if hits_in_sample == 0 || hits_in_sample == t - n_lags {
        return Ok(DqReport {
            stat: f64::NAN,
            p_value: f64::NAN,
            status: DqStatus::Untestable,
            n_lags,
            n_sim,
            diagnostic: Some(format!(
                "{hits_in_sample} hits in {} days: logit model separated",
                t - n_lags
            )),
        });
    }
    let x = dq_design(&h.quantiles, n_lags);
    let stat = dq_wald(&h.hits, &x, n_lags, h.alpha);
    let sims: Vec<f64> = (0..n_sim)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s as u64 + 1);
            let sim: Vec<u8> = (0..t)
                .map(|_| u8::from(rng.gen::<f64>() < h.alpha))
                .collect();
            dq_wald(&sim, &x, n_lags, h.alpha)
        })
        .collect();
    let valid: Vec<f64> = sims.into_iter().filter(|v| v.is_finite()).collect();
    let p = (1 + valid.iter().filter(|&&v| v >= stat).count()) as f64 / (1 + valid.len()) as f64;
    Ok(DqReport {
        stat,
        p_value: p,
        status: DqStatus::Ok,
        n_lags,
        n_sim,
        diagnostic: None,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DmReport {
    pub stat: f64,
    pub p_value: f64,
    pub mean_diff: f64,
    pub lag: usize,
    /// The long-run variance was zero and was floored.
    pub variance_floored: bool,
}

/// Diebold-Mariano test on `loss_a - loss_b` with the automatic Bartlett lag.
pub fn dm_test(loss_a: &[f64], loss_b: &[f64]) -> Result<DmReport> {
    dm_test_with_lag(loss_a, loss_b, newey_west_lag(loss_a.len()))
}

/// Diebold-Mariano test with an explicit Bartlett truncation lag.
///
/// Identical series give a zero statistic. A constant non-zero differential
/// has no variance; the variance is floored at `(1e-6 mean)^2` so the
/// statistic is large and the report is flagged.
pub fn dm_test_with_lag(loss_a: &[f64], loss_b: &[f64], lag: usize) -> Result<DmReport> {
    if loss_a.len() != loss_b.len() {
        return Err(Error::domain("loss series differ in length"));
    }
    let n = loss_a.len();
    if n < 30 {
        return Err(Error::InsufficientData(format!(
            "{n} observations; need 30"
        )));
    }
    let d: Vec<f64> = loss_a.iter().zip(loss_b).map(|(a, b)| a - b).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("non-finite loss differential"));
    }
    if d.iter().all(|&v| v == 0.0) {
        return Ok(DmReport {
            stat: 0.0,
            p_value: 1.0,
            mean_diff: 0.0,
            lag,
            variance_floored: false,
        });
    }
    let mean = d.iter().sum::<f64>() / n as f64;
    let lrv = if lag == newey_west_lag(n) {
        hac_variance(&d)
    } else {
        bartlett(&d, lag)
    };
    let floor = (1e-6 * mean).powi(2);
    let floored = !(lrv > floor);
    let v = if floored { floor } else { lrv };
    if !(v > 0.0) {
        return Err(Error::Degenerate(
            "loss differential has zero variance".into(),
        ));
    }
    let stat = mean / (v / n as f64).sqrt();
    Ok(DmReport {
        stat,
        p_value: 2.0 * norm_cdf(-stat.abs()),
        mean_diff: mean,
        lag,
        variance_floored: floored,
    })
}

fn bartlett(x: &[f64], lag: usize) -> f64 {
    let n = x.len();
    let m = x.iter().sum::<f64>() / n as f64;
    let d: Vec<f64> = x.iter().map(|v| v - m).collect();
    let gamma = |l: usize| {
        d[l..]
            .iter()
            .zip(&d[..n - l])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64
    };
    let lag = lag.min(n - 1);
    (1..=lag).fold(gamma(0), |v, l| {
        v + 2.0 * (1.0 - l as f64 / (lag + 1) as f64) * gamma(l)
    })
}

/// Evaluation of one model at one probability level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalCell {
    pub coverage: f64,
    pub mean_tick_loss: f64,
    pub dq_stat: f64,
    pub dq_p: f64,
    /// DM statistic for benchmark loss minus this model's loss, and the reverse orientation.
    pub dm_vs_benchmark: Option<(f64, f64)>,
    pub dm_p: Option<f64>,
}

/// Models by probability levels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalGrid {
    pub models: Vec<String>,
    pub alphas: Vec<f64>,
    pub benchmark: Option<usize>,
    /// `cells[model][alpha]`.
    pub cells: Vec<Vec<EvalCell>>,
}

/// Evaluate quantile forecasts `forecasts[model][alpha][day]` against realized returns.
pub fn evaluate(
    models: &[String],
    forecasts: &[Vec<Vec<f64>>],
    realized: &[f64],
    alphas: &[f64],
    benchmark: Option<usize>,
    n_lags: usize,
    n_sim: usize,
    seed: u64,
) -> Result<EvalGrid> {
    if forecasts.len() != models.len() {
        return Err(Error::domain("one forecast set per model required"));
    }
    let losses: Vec<Vec<Vec<f64>>> = forecasts
        .iter()
        .map(|per_alpha| {
            per_alpha
                .iter()
                .zip(alphas)
                .map(|(q, &a)| tick_loss(realized, q, a))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut cells = Vec::with_capacity(models.len());
    for (m, per_alpha) in forecasts.iter().enumerate() {
        let mut row = Vec::with_capacity(alphas.len());
        for (j, &a) in alphas.iter().enumerate() {
            let h = HitSeries::new(realized, &per_alpha[j], a)?;
            let dq = dq_test(&h, n_lags, n_sim, seed ^ ((m as u64) << 16 | j as u64))?;
            let l = &losses[m][j];
            let (dm, dm_p) = match benchmark {
                Some(b) if b != m => {
                    let r = dm_test(&losses[b][j], l)?;
                    let s = dm_test(l, &losses[b][j])?;
                    (Some((r.stat, s.stat)), Some(r.p_value))
                }
                _ => (None, None),
            };
            row.push(EvalCell {
                coverage: coverage(&h)?,
                mean_tick_loss: l.iter().sum::<f64>() / l.len() as f64,
                dq_stat: dq.stat,
                dq_p: dq.p_value,
                dm_vs_benchmark: dm,
                dm_p,
            });
        }
        cells.push(row);
    }
    Ok(EvalGrid {
        models: models.to_vec(),
        alphas: alphas.to_vec(),
        benchmark,
        cells,
    })
}

impl EvalGrid {
    /// Wide table: one row per model, one `coverage / loss / DQ p` cell per alpha.
    pub fn write_table<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["model".to_string()];
        header.extend(self.alphas.iter().map(|a| format!("alpha={a}")));
        w.write_record(&header)?;
        for (m, name) in self.models.iter().enumerate() {
            let mut rec = vec![name.clone()];
            for c in &self.cells[m] {
                rec.push(format!(
                    "{:.3} / {:.5} / {:.3}",
                    c.coverage, c.mean_tick_loss, c.dq_p
                ));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Long format with every statistic at full precision.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "model",
            "alpha",
            "coverage",
            "tick_loss",
            "dq_stat",
            "dq_p",
            "dm_bench_minus_model",
            "dm_model_minus_bench",
            "dm_p",
        ])?;
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        for (m, name) in self.models.iter().enumerate() {
            for (j, a) in self.alphas.iter().enumerate() {
                let c = &self.cells[m][j];
                w.write_record([
                    name.clone(),
                    a.to_string(),
                    c.coverage.to_string(),
                    c.mean_tick_loss.to_string(),
                    c.dq_stat.to_string(),
                    c.dq_p.to_string(),
                    opt(c.dm_vs_benchmark.map(|d| d.0)),
                    opt(c.dm_vs_benchmark.map(|d| d.1)),
                    opt(c.dm_p),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
