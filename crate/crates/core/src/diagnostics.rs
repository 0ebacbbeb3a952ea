//! Specification tests: Rosenblatt goodness of fit, a pretest for
//! time-varying dependence, mean-shift break detection and conditional
//! predictive ability.

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::copula::{self, clip_pairs};
use crate::error::{Error, Result};
use crate::estimate::{self, CopulaFit, Dynamics, JointFit};
use crate::margins;
use crate::marketdata::DailyPanel;
use crate::optim::OptimConfig;
use crate::special::norm_cdf;
use crate::udist::Univariate;

/// Default number of GoF re-simulations.
pub const DEFAULT_GOF_SIMS: usize = 1000;
/// Default lag count of the dependence pretest.
pub const DEFAULT_TV_LAGS: usize = 10;
/// Default trimming fraction of the break test.
pub const DEFAULT_TRIM: f64 = 0.15;

/// Bartlett-kernel truncation lag `floor(4 (T/100)^(2/9))`.
pub fn newey_west_lag(t: usize) -> usize {
    (4.0 * (t as f64 / 100.0).powf(2.0 / 9.0)).floor() as usize
}

/// Long-run variance of a series with Bartlett weights.
pub fn hac_variance(x: &[f64]) -> f64 {
    let n = x.len();
    let m = x.iter().sum::<f64>() / n as f64;
    let d: Vec<f64> = x.iter().map(|v| v - m).collect();
    let lag = newey_west_lag(n).min(n.saturating_sub(1));
    let gamma = |l: usize| {
        d[l..]
            .iter()
            .zip(&d[..n - l])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64
    };
    let mut v = gamma(0);
    for l in 1..=lag {
        v += 2.0 * (1.0 - l as f64 / (lag + 1) as f64) * gamma(l);
    }
    v
}

/// Fenwick tree over ranks for counting dominated points.
struct Fenwick(Vec<u32>);

impl Fenwick {
    fn new(n: usize) -> Self {
        Self(vec![0; n + 1])
    }

    fn add(&mut self, i: usize) {
        let mut i = i + 1;
        while i < self.0.len() {
            self.0[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Count of inserted ranks `<= i`.
    fn prefix(&self, i: usize) -> u32 {
        let mut i = i + 1;
        let mut s = 0;
        while i > 0 {
            s += self.0[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Empirical copula of the sample evaluated at its own points,
/// `(1/T) #{s : v1_s <= v1_t, v2_s <= v2_t}`, in input order.
pub fn empirical_copula_at_points(v: &[(f64, f64)]) -> Vec<f64> {
    let n = v.len();
    // rank of second coordinate, ties sharing the highest rank
    let mut by2: Vec<usize> = (0..n).collect();
    by2.sort_by(|&a, &b| v[a].1.total_cmp(&v[b].1));
    let mut rank2 = vec![0usize; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && v[by2[j + 1]].1 == v[by2[i]].1 {
            j += 1;
        }
        for k in i..=j {
            rank2[by2[k]] = j;
        }
        i = j + 1;
    }
    let mut by1: Vec<usize> = (0..n).collect();
    by1.sort_by(|&a, &b| v[a].0.total_cmp(&v[b].0));
    let mut tree = Fenwick::new(n);
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && v[by1[j + 1]].0 == v[by1[i]].0 {
            j += 1;
        }
        for k in i..=j {
            tree.add(rank2[by1[k]]);
        }
        for k in i..=j {
            out[by1[k]] = tree.prefix(rank2[by1[k]]) as f64 / n as f64;
        }
        i = j + 1;
    }
    out
}

/// Distance of the Rosenblatt-transformed sample from independence:
/// `(max |Ĉ - C⊥|, Σ (Ĉ - C⊥)²)`.
pub fn gof_statistics(v: &[(f64, f64)]) -> (f64, f64) {
    let c = empirical_copula_at_points(v);
    let mut sq: Vec<f64> = v
        .iter()
        .zip(c)
        .map(|(&(a, b), ch)| (ch - a * b).powi(2))
        .collect();
    // summed in sorted order so relabeling days cannot change the result
    sq.sort_by(f64::total_cmp);
    let ks = sq.last().map_or(0.0, |m| m.sqrt());
    (ks, sq.iter().sum())
}

/// Rosenblatt transform of `u` under a fitted copula (and its GAS path).
pub fn rosenblatt_fit(fit: &CopulaFit, u: &[(f64, f64)]) -> Result<Vec<(f64, f64)>> {
    let (u, _) = clip_pairs(u);
    match fit.spec.dynamics {
        Dynamics::Constant => Ok(fit.params.rosenblatt(&u)),
        Dynamics::Gas => {
            let delta = fit.delta_path(&u)?;
            copula::rosenblatt_path(&fit.params, &delta, &u)
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GofReport {
    pub ks_stat: f64,
    pub cvm_stat: f64,
    pub ks_p: f64,
    pub cvm_p: f64,
    /// Replicates requested.
    pub n_sim: usize,
    /// Replicates whose re-estimation failed (excluded from the p-values).
    pub failed: usize,
    /// Set when failures exceed 20% of the budget.
    pub partial: bool,
    /// `copula-only` or `full-model`.
    pub scheme: String,
}

/// What is re-simulated and re-estimated under the null.
#[derive(Debug, Clone, Copy)]
pub enum GofTarget<'a> {
    /// Simulate pseudo-observations from the fitted copula and refit it.
    Copula {
        fit: &'a CopulaFit,
        u: &'a [(f64, f64)],
    },
    /// Simulate returns from both margins and the copula and rerun the two-step fit.
    Joint { fit: &'a JointFit },
}

fn simulate_copula<R: Rng + ?Sized>(
    fit: &CopulaFit,
    n: usize,
    burn: usize,
    rng: &mut R,
) -> Result<Vec<(f64, f64)>> {
    match fit.gas {
        None => {
            let s = fit.params.sample(n + burn, rng);
            Ok(clip_pairs(&s[burn..]).0)
        }
        Some(g) => Ok(copula::simulate_gas(&fit.params, &g, n, burn, rng)?.0),
    }
}

fn gof_replicate(
    target: &GofTarget<'_>,
    rng: &mut ChaCha8Rng,
    cfg: &OptimConfig,
) -> Result<(f64, f64)> {
    match *target {
        GofTarget::Copula { fit, u } => {
            let sim = simulate_copula(fit, u.len(), 0, rng)?;
            let refit = estimate::fit_copula(&sim, &fit.spec, cfg)?;
            Ok(gof_statistics(&rosenblatt_fit(&refit, &sim)?))
        }
        GofTarget::Joint { fit } => {
            let burn = 250;
            let t = fit.margin1.n_obs + fit.margin1.offset;
            let pairs = simulate_copula(&fit.copula, t, burn, rng)?;
            let mut panel = DailyPanel::default();
            let start = NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date");
            panel.dates = (0..t)
                .map(|i| start + chrono::Duration::days(i as i64))
                .collect();
            for (k, m) in [&fit.margin1, &fit.margin2].into_iter().enumerate() {
                let params = m.typed();
                let dist = params.innovation()?;
                let mut z = Vec::with_capacity(t + burn);
                // the copula draws cover the recorded days; the burn-in uses fresh innovations
                z.extend(dist.sample(burn, rng));
                for p in &pairs {
                    z.push(dist.quantile(if k == 0 { p.0 } else { p.1 })?);
                }
                let (y, rv) = margins::simulate_from_innovations(&params, &z, burn, rng)?;
                if k == 0 {
                    panel.r1 = y;
                    panel.rv1 = rv;
                } else {
                    panel.r2 = y;
                    panel.rv2 = rv;
                }
            }
            let specs = [&fit.margin1.spec, &fit.margin2.spec];
            let refit = estimate::msml(&panel, specs, &fit.copula.spec, fit.mode, cfg)?;
            Ok(gof_statistics(&rosenblatt_fit(&refit.copula, &refit.u)?))
        }
    }
}

/// Rosenblatt KS and CvM tests with p-values from parametric re-simulation.
///
/// Each replicate draws from its own stream of `seed`; p-values are
/// `(1 + #{sim >= obs}) / (1 + n_ok)`.
pub fn gof_test(
    target: &GofTarget<'_>,
    n_sim: usize,
    seed: u64,
    cfg: &OptimConfig,
) -> Result<GofReport> {
    if n_sim == 0 {
        return Err(Error::domain("GoF needs at least one simulation"));
    }
    let (fit, u) = match *target {
        GofTarget::Copula { fit, u } => (fit, u.to_vec()),
        GofTarget::Joint { fit } => (&fit.copula, fit.u.clone()),
    };
    let (ks, cvm) = gof_statistics(&rosenblatt_fit(fit, &u)?);
    let reduced = cfg.reduced();
    let sims: Vec<Option<(f64, f64)>> = (0..n_sim)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s as u64 + 1);
            gof_replicate(target, &mut rng, &reduced).ok()
        })
        .collect();
    let ok: Vec<(f64, f64)> = sims.iter().flatten().copied().collect();
    let failed = n_sim - ok.len();
    let p = |obs: f64, pick: fn(&(f64, f64)) -> f64| {
        (1 + ok.iter().filter(|s| pick(s) >= obs).count()) as f64 / (1 + ok.len()) as f64
    };
    Ok(GofReport {
        ks_stat: ks,
        cvm_stat: cvm,
        ks_p: p(ks, |s| s.0),
        cvm_p: p(cvm, |s| s.1),
        n_sim,
        failed,
        partial: failed * 5 > n_sim,
        scheme: match target {
            GofTarget::Copula { .. } => "copula-only".into(),
            GofTarget::Joint { .. } => "full-model".into(),
        },
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TvReport {
    /// Wald statistic for the lag coefficients.
    pub stat: f64,
    pub p_value: f64,
    pub lags: usize,
    pub n_boot: usize,
}

/// Wald statistic of the lag block in an AR(p) regression of `x` with intercept.
fn ar_wald(x: &[f64], p: usize) -> f64 {
    let n = x.len() - p;
    let xm = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { x[p + i - j] });
    let y = DVector::from_iterator(n, x[p..].iter().copied());
    let xtx = xm.transpose() * &xm;
    let Some(inv) = xtx.clone().try_inverse() else {
        return 0.0;
    };
    let b = &inv * xm.transpose() * &y;
    let e = &y - &xm * &b;
    let s2 = e.dot(&e) / (n - p - 1) as f64;
    if !(s2 > 0.0) {
        return 0.0;
    }
    let cov = inv.view((1, 1), (p, p)).into_owned() * s2;
    let bl = b.rows(1, p).into_owned();
    match cov.try_inverse() {
        Some(ci) => bl.dot(&(ci * &bl)),
        None => 0.0,
    }
}

/// Pretest for time variation in dependence.
///
/// The proxy `(u1 - mean u1)(u2 - mean u2)` is regressed on its own `lags`
/// lags; the joint significance of the lags is judged against an iid
/// bootstrap of the proxy.
pub fn tv_dependence_test(
    u: &[(f64, f64)],
    lags: usize,
    n_boot: usize,
    seed: u64,
) -> Result<TvReport> {
    if lags == 0 {
        return Err(Error::domain("at least one lag required"));
    }
    if u.len() <= lags + 10 {
        return Err(Error::InsufficientData(format!(
            "{} observations for {lags} lags",
            u.len()
        )));
    }
    let n = u.len() as f64;
    let m1 = u.iter().map(|p| p.0).sum::<f64>() / n;
    let m2 = u.iter().map(|p| p.1).sum::<f64>() / n;
    let proxy: Vec<f64> = u.iter().map(|&(a, b)| (a - m1) * (b - m2)).collect();
    let stat = ar_wald(&proxy, lags);
    let boot: Vec<f64> = (0..n_boot)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s as u64 + 1);
            let x: Vec<f64> = (0..proxy.len())
                .map(|_| proxy[rng.gen_range(0..proxy.len())])
                .collect();
            ar_wald(&x, lags)
        })
        .collect();
    let exceed = boot.iter().filter(|&&b| b >= stat).count();
    Ok(TvReport {
        stat,
        p_value: (1 + exceed) as f64 / (1 + n_boot) as f64,
        lags,
        n_boot,
    })
}

/// A detected mean shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Break {
    /// Index of the first observation of the new regime.
    pub index: usize,
    pub stat: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BreakReport {
    /// Breaks in chronological order.
    pub breaks: Vec<Break>,
    pub trim: f64,
    pub n_sim: usize,
    pub level: f64,
    /// How null critical values were obtained.
    pub null_method: String,
}

impl BreakReport {
    pub fn break_dates(&self, dates: &[NaiveDate]) -> Vec<NaiveDate> {
        self.breaks
            .iter()
            .filter_map(|b| dates.get(b.index).copied())
            .collect()
    }
}

/// `(supF, k)` where `k` is the size of the first regime at the supremum.
fn sup_f(x: &[f64], trim: f64) -> (f64, usize) {
    let n = x.len();
    let m = ((trim * n as f64).ceil() as usize).max(1);
    let total: f64 = x.iter().sum();
    let mean = total / n as f64;
    let ssr0: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
    let mut best = (f64::NEG_INFINITY, m);
    let mut left = 0.0;
    let mut prefix = vec![0.0; n + 1];
    for (i, v) in x.iter().enumerate() {
        left += v;
        prefix[i + 1] = left;
    }
    for k in m..=n - m {
        let sl = prefix[k];
        let sr = total - sl;
        // SSR reduction from splitting the mean at k
        let gain = sl * sl / k as f64 + sr * sr / (n - k) as f64 - total * total / n as f64;
        let ssr1 = (ssr0 - gain).max(0.0);
        let f = if ssr0 <= 0.0 {
            0.0
        } else if ssr1 <= ssr0 * 1e-14 {
            f64::INFINITY
        } else {
            (ssr0 - ssr1) / (ssr1 / (n - 2) as f64)
        };
        if f > best.0 {
            best = (f, k);
        }
    }
    best
}

/// Sequential supF tests for shifts in mean.
///
/// Null critical values come from simulated iid Gaussian series of the same
/// length (the statistic is invariant to location and scale). Significant
/// breaks split the sample and both parts are retested.
pub fn supf_break_test(
    series: &[f64],
    trim: f64,
    n_sim: usize,
    level: f64,
    seed: u64,
) -> Result<BreakReport> {
    if !(trim > 0.0 && trim < 0.5) {
        return Err(Error::domain("trim must lie in (0, 0.5)"));
    }
    let min_len = (2.0 / trim).ceil() as usize;
    if series.len() < min_len {
        return Err(Error::InsufficientData(format!(
            "{} observations; need at least {min_len}",
            series.len()
        )));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("series contains non-finite values"));
    }
    let mut breaks = Vec::new();
    let mut stack = vec![(0usize, series.len())];
    while let Some((a, b)) = stack.pop() {
        let seg = &series[a..b];
        if seg.len() < min_len {
            continue;
        }
        let (stat, k) = sup_f(seg, trim);
        if !(stat > 0.0) {
            continue;
        }
        let null: Vec<f64> = (0..n_sim)
            .into_par_iter()
            .map(|s| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((a as u64) << 32 | b as u64));
                rng.set_stream(s as u64 + 1);
                let x: Vec<f64> = (0..seg.len()).map(|_| rng.sample(StandardNormal)).collect();
                sup_f(&x, trim).0
            })
            .collect();
        let p = (1 + null.iter().filter(|&&v| v >= stat).count()) as f64 / (1 + n_sim) as f64;
        if p < level {
            breaks.push(Break {
                index: a + k,
                stat,
                p_value: p,
            });
            stack.push((a, a + k));
            stack.push((a + k, b));
        }
    }
    breaks.sort_by_key(|b| b.index);
    Ok(BreakReport {
        breaks,
        trim,
        n_sim,
        level,
        null_method: "simulated iid Gaussian null".into(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CpaReport {
    pub stat: f64,
    pub mean_diff: f64,
    pub hac_se: f64,
    pub p_two_sided: f64,
    /// `P(Z >= stat)`: small when `loss1` is systematically larger.
    pub p_greater: f64,
    pub n: usize,
}

/// Test of equal average performance of two forecast series.
///
/// The statistic is the mean of `loss1 - loss2` over its HAC standard error.
/// Identical inputs give a zero statistic; a constant non-zero difference is
/// a degenerate test.
pub fn cpa_test(loss1: &[f64], loss2: &[f64]) -> Result<CpaReport> {
    if loss1.len() != loss2.len() {
        return Err(Error::domain("loss series differ in length"));
    }
    if loss1.len() < 30 {
        return Err(Error::InsufficientData(format!(
            "{} observations; need 30",
            loss1.len()
        )));
    }
    let d: Vec<f64> = loss1.iter().zip(loss2).map(|(a, b)| a - b).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("non-finite loss differential"));
    }
    let n = d.len();
    if d.iter().all(|&v| v == 0.0) {
        return Ok(CpaReport {
            stat: 0.0,
            mean_diff: 0.0,
            hac_se: 0.0,
            p_two_sided: 1.0,
            p_greater: 0.5,
            n,
        });
    }
    let mean = d.iter().sum::<f64>() / n as f64;
    let lrv = hac_variance(&d);
    // rounding noise around a constant differential does not count as variation
    if !(lrv.sqrt() > 1e-10 * mean.abs()) || !(lrv > 0.0) {
        return Err(Error::Degenerate(
            "loss differential has zero long-run variance".into(),
        ));
    }
    let se = (lrv / n as f64).sqrt();
    let stat = mean / se;
    Ok(CpaReport {
        stat,
        mean_diff: mean,
        hac_se: se,
        p_two_sided: 2.0 * norm_cdf(-stat.abs()),
        p_greater: norm_cdf(-stat),
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::copula::{CopulaParams, Family};

    #[test]
    fn empirical_copula_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut v: Vec<(f64, f64)> = (0..300).map(|_| (rng.gen(), rng.gen())).collect();
        v[5] = v[9];
        v[7].0 = v[8].0;
        let fast = empirical_copula_at_points(&v);
        for (t, &(a, b)) in v.iter().enumerate() {
            let brute =
                v.iter().filter(|&&(x, y)| x <= a && y <= b).count() as f64 / v.len() as f64;
            assert_eq!(fast[t], brute);
            assert!((0.0..=1.0).contains(&fast[t]));
        }
        let (ks, _) = gof_statistics(&v);
        assert!(ks <= 1.0);
        let mut shuffled = v.clone();
        shuffled.reverse();
        assert_eq!(gof_statistics(&v), gof_statistics(&shuffled));
    }

    #[test]
    fn independence_fit_on_dependent_data_rejects() {
        let u = CopulaParams::Normal { rho: 0.8 }.sample(600, &mut ChaCha8Rng::seed_from_u64(1));
        let fit = estimate::fit_constant_copula(&u, Family::Independence, &OptimConfig::default())
            .unwrap();
        let r = gof_test(
            &GofTarget::Copula { fit: &fit, u: &u },
            100,
            3,
            &OptimConfig::default(),
        )
        .unwrap();
        assert!(r.ks_p < 0.02 && r.cvm_p < 0.02);
    }

    #[test]
    fn hac_lag_rule() {
        assert_eq!(newey_west_lag(100), 4);
        assert_eq!(newey_west_lag(609), 5);
        let x = [1.0, -1.0, 1.0, -1.0];
        assert!(hac_variance(&x) >= 0.0);
    }

    #[test]
    fn cpa_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a: Vec<f64> = (0..609).map(|_| rng.sample(StandardNormal)).collect();
        let b: Vec<f64> = a
            .iter()
            .map(|x: &f64| x + 0.5 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        assert_eq!(cpa_test(&a, &a).unwrap().stat, 0.0);
        let r1 = cpa_test(&a, &b).unwrap();
        let r2 = cpa_test(&b, &a).unwrap();
        assert_eq!(r1.stat, -r2.stat);
        let c: Vec<f64> = a.iter().map(|x| x + 1.0).collect();
        assert!(matches!(cpa_test(&c, &a), Err(Error::Degenerate(_))));
        let noise: Vec<f64> = (0..609)
            .map(|_| 0.1 + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let zero = vec![0.0; 609];
        let r = cpa_test(&noise, &zero).unwrap();
        assert!(
            (r.stat - 0.1 * 609f64.sqrt()).abs() < 1.5,
            "stat {}",
            r.stat
        );
    }

    #[test]
    fn supf_step_and_invariance() {
        let x: Vec<f64> = (0..1000).map(|t| if t < 500 { 0.0 } else { 1.0 }).collect();
        let r = supf_break_test(&x, 0.15, 200, 0.05, 1).unwrap();
        assert_eq!(r.breaks.len(), 1);
        assert_eq!(r.breaks[0].index + 1, 501);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noise: Vec<f64> = (0..400).map(|_| rng.sample(StandardNormal)).collect();
        let (s1, k1) = sup_f(&noise, 0.15);
        let affine: Vec<f64> = noise.iter().map(|v| 3.0 * v - 7.0).collect();
        let (s2, k2) = sup_f(&affine, 0.15);
        assert_eq!(k1, k2);
        assert!((s1 - s2).abs() < 1e-8 * s1.max(1.0));

        let two: Vec<f64> = (0..900)
            .map(|t| {
                let level = if t < 300 {
                    0.0
                } else if t < 600 {
                    2.0
                } else {
                    -1.0
                };
                level + 0.3 * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        let r2 = supf_break_test(&two, 0.15, 200, 0.01, 2).unwrap();
        let idx: Vec<usize> = r2.breaks.iter().map(|b| b.index).collect();
        assert_eq!(idx.len(), 2, "{idx:?}");
        assert!((idx[0] as i64 - 300).abs() <= 3 && (idx[1] as i64 - 600).abs() <= 3);
        assert!(supf_break_test(&x[..10], 0.15, 10, 0.05, 1).is_err());
    }

    #[test]
    fn tv_test_detects_persistent_dependence() {
        let base = CopulaParams::Normal { rho: 0.0 };
        let gas = copula::GasParams {
            w: 0.0,
            alpha: 0.15,
            beta: 0.99,
        };
        let (u, _) =
            copula::simulate_gas(&base, &gas, 2000, 200, &mut ChaCha8Rng::seed_from_u64(5))
                .unwrap();
        let r = tv_dependence_test(&u, 10, 199, 1).unwrap();
        assert!(r.p_value < 0.05, "p {}", r.p_value);
        assert!(tv_dependence_test(&u[..15], 10, 10, 1).is_err());
    }
}
