//! Staged estimation, testing and forecasting run driven by a [`Resolved`] config.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, ensure, Context, Result};
use chrono::NaiveDate;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use dyncop::backtest;
use dyncop::diagnostics::{self, GofTarget};
use dyncop::estimate::{self, BootstrapTarget, JointFit, Scheme};
use dyncop::margins::{self, MarginFit};
use dyncop::marketdata::{
    self, DailyPanel, DropReason, ExclusionCalendar, SessionWindow, TickFormat,
};
use dyncop::riskcast::{self, RiskSeries};
use dyncop::special::norm_ppf;

use crate::config::{ModelId, Resolved};
use crate::provenance::{stage_seed, OutDir};

/// Raised for configuration or input problems detected before any output is written.
#[derive(Debug)]
pub struct ValidationError(pub String);

impl std::fmt::Display for ValidationError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid run: {}", self.0)
    }
}

impl std::error::Error for ValidationError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Ingest,
    Margins,
    Copula,
    Tests,
    Bootstrap,
    Gof,
    Forecast,
    Backtest,
    Cdb,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Ingest,
        Stage::Margins,
        Stage::Copula,
        Stage::Tests,
        Stage::Bootstrap,
        Stage::Gof,
        Stage::Forecast,
        Stage::Backtest,
        Stage::Cdb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Margins => "margins",
            Stage::Copula => "copula",
            Stage::Tests => "tests",
            Stage::Bootstrap => "bootstrap",
            Stage::Gof => "gof",
            Stage::Forecast => "forecast",
            Stage::Backtest => "backtest",
            Stage::Cdb => "cdb",
        }
    }

    fn deps(self) -> &'static [Stage] {
        match self {
            Stage::Ingest => &[],
            Stage::Margins => &[Stage::Ingest],
            Stage::Copula => &[Stage::Margins],
            Stage::Tests | Stage::Bootstrap | Stage::Gof | Stage::Forecast => &[Stage::Copula],
            Stage::Backtest | Stage::Cdb => &[Stage::Forecast],
        }
    }

    /// Requested stages plus their prerequisites, in execution order.
    pub fn closure(requested: &[Stage]) -> Vec<Stage> {
        let mut on = [false; 9];
        let mut todo = requested.to_vec();
        while let Some(s) = todo.pop() {
            if !on[s as usize] {
                on[s as usize] = true;
                todo.extend_from_slice(s.deps());
            }
        }
        Stage::ALL.into_iter().filter(|s| on[*s as usize]).collect()
    }
}

impl FromStr for Stage {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .with_context(|| format!("unknown stage `{s}`"))
    }
}

/// Daily panel with what ingestion learned along the way.
#[derive(Debug, Clone, Default)]
pub struct Ingested {
    pub panel: DailyPanel,
    /// Realized correlation per panel day, when built from ticks.
    pub realized_corr: Option<Vec<Option<f64>>>,
    /// Closing log price per panel day, when built from ticks.
    pub close: Option<[Vec<f64>; 2]>,
    pub report: Option<Value>,
    pub warning: Option<String>,
}

/// Build a panel from two tick files.
pub fn ingest_ticks(
    paths: [&Path; 2],
    format: &TickFormat,
    session: &SessionWindow,
    calendar: &ExclusionCalendar,
) -> Result<Ingested> {
    let mut series = Vec::with_capacity(2);
    for p in paths {
        if !p.exists() {
            return Err(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("input file not found: {}", p.display()),
            )
            .into());
        }
        series.push(
            marketdata::read_ticks(p, format)
                .with_context(|| format!("cannot read ticks from {}", p.display()))?,
        );
    }
    let build = marketdata::build_grid(&series[0], &series[1], session, calendar)?;
    let panel = if build.grids.is_empty() {
        DailyPanel::default()
    } else {
        marketdata::daily_panel(&build.grids)?
    };
    let rejects: Vec<Value> = series
        .iter()
        .zip(paths)
        .map(|(s, p)| {
            json!({
                "file": p.display().to_string(),
                "ticks": s.len(),
                "rejected": s.reject_count(),
                "first_rejects": s.rejected.iter().take(20).map(|r| json!({"line": r.line, "reason": r.reason})).collect::<Vec<_>>(),
            })
        })
        .collect();
    let dropped: Vec<Value> = build
        .dropped
        .iter()
        .map(|(d, r)| {
            let reason = match r {
                DropReason::EmptyBar { asset } => format!("asset {} has an empty bar", asset + 1),
                DropReason::Unpaired => "only one asset traded".to_string(),
            };
            json!({"date": d.to_string(), "reason": reason})
        })
        .collect();
    let report = json!({
        "days": panel.len(),
        "excluded_days": build.excluded_days,
        "dropped_days": dropped,
        "files": rejects,
        "warning": build.warning,
    });
    Ok(Ingested {
        realized_corr: Some(marketdata::daily_realized_correlation(&build.grids)),
        close: Some([
            build
                .grids
                .iter()
                .map(|g| *g.log_prices[0].last().expect("non-empty grid"))
                .collect(),
            build
                .grids
                .iter()
                .map(|g| *g.log_prices[1].last().expect("non-empty grid"))
                .collect(),
        ]),
        panel,
        report: Some(report),
        warning: build.warning,
    })
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> dyncop::Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// One fitted copula model.
#[derive(Debug, Clone, Serialize)]
pub struct ModelFit {
    pub model: String,
    pub fit: Option<JointFit>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
struct StageRecord {
    stage: Stage,
    seed: Option<u64>,
    status: String,
}

/// State carried between stages.
pub struct Pipeline<'a> {
    cfg: &'a Resolved,
    seed: Option<u64>,
    out_dir: PathBuf,
    out: Option<OutDir>,
    data: Option<Ingested>,
    /// First out-of-sample panel row.
    split: usize,
    margins: Option<[MarginFit; 2]>,
    fits: Vec<(ModelId, ModelFit)>,
    risk: Vec<(ModelId, RiskSeries)>,
    records: Vec<StageRecord>,
    summary: serde_json::Map<String, Value>,
}

impl<'a> Pipeline<'a> {
    pub fn new(cfg: &'a Resolved, seed: Option<u64>, out_dir: PathBuf) -> Self {
        Self {
            cfg,
            seed,
            out_dir,
            out: None,
            data: None,
            split: 0,
            margins: None,
            fits: Vec::new(),
            risk: Vec::new(),
            records: Vec::new(),
            summary: serde_json::Map::new(),
        }
    }

    fn seed_for(&self, name: &str) -> u64 {
        stage_seed(self.seed.expect("seed checked during validation"), name)
    }

    fn out(&mut self) -> &mut OutDir {
        self.out
            .as_mut()
            .expect("output directory opened after validation")
    }

    /// Load data and check everything that can be checked before writing.
    fn validate(&mut self, stages: &[Stage]) -> Result<()> {
        let beyond_ingest = stages.iter().any(|s| *s != Stage::Ingest);
        if beyond_ingest && self.seed.is_none() {
            return Err(
                ValidationError("a seed is required (config `seed` or --seed)".into()).into(),
            );
        }
        let d = &self.cfg.raw.data;
        let data = match (&d.panel, &d.ticks) {
            (Some(p), _) => {
                if !p.exists() {
                    return Err(std::io::Error::new(
                        std::io::ErrorKind::NotFound,
                        format!("input file not found: {}", p.display()),
                    )
                    .into());
                }
                Ingested {
                    panel: DailyPanel::load(p)
                        .with_context(|| format!("cannot read panel {}", p.display()))?,
                    ..Ingested::default()
                }
            }
            (None, Some([a, b])) => ingest_ticks(
                [a.as_path(), b.as_path()],
                &d.tick_format.to_format(),
                &d.session.to_window()?,
                &self.cfg.calendar,
            )?,
            (None, None) => unreachable!("checked when resolving the config"),
        };
        if beyond_ingest {
            let dates = &data.panel.dates;
            let end = d.in_sample_end;
            let (Some(first), Some(last)) = (dates.first(), dates.last()) else {
                return Err(ValidationError("the panel is empty".into()).into());
            };
            if end < *first || end >= *last {
                return Err(ValidationError(format!(
                    "in_sample_end {end} outside the panel range {first} to {last}"
                ))
                .into());
            }
            self.split = dates.partition_point(|x| *x <= end);
            if self.split < 100 {
                return Err(ValidationError(format!(
                    "only {} in-sample days; need 100",
                    self.split
                ))
                .into());
            }
            let forecasting = stages.iter().any(|s| *s >= Stage::Forecast);
            if forecasting && data.panel.len() - self.split < 30 {
                return Err(ValidationError("fewer than 30 out-of-sample days".into()).into());
            }
            let r = &self.cfg.raw.risk;
            if stages.contains(&Stage::Cdb)
                && !r.alphas.iter().any(|a| (a - r.cdb_alpha).abs() < 1e-12)
            {
                return Err(
                    ValidationError("cdb_alpha must be one of the forecast alphas".into()).into(),
                );
            }
        }
        self.data = Some(data);
        Ok(())
    }

    /// Run the requested stages and their prerequisites.
    ///
    /// Validation happens first and writes nothing. Afterwards each stage
    /// writes its artifacts as it completes; `report.json` lists them even
    /// when a later stage fails.
    pub fn run(&mut self, requested: &[Stage]) -> Result<()> {
        let stages = Stage::closure(requested);
        self.validate(&stages)?;
        self.out = Some(OutDir::create(
            &self.out_dir,
            self.cfg.hash.clone(),
            self.seed,
        )?);
        let mut result = Ok(());
        for s in &stages {
            let r = match s {
                Stage::Ingest => self.stage_ingest(),
                Stage::Margins => self.stage_margins(),
                Stage::Copula => self.stage_copula(),
                Stage::Tests => self.stage_tests(),
                Stage::Bootstrap => self.stage_bootstrap(),
                Stage::Gof => self.stage_gof(),
                Stage::Forecast => self.stage_forecast(),
                Stage::Backtest => self.stage_backtest(),
                Stage::Cdb => self.stage_cdb(),
            };
            let seed = (*s != Stage::Ingest).then(|| self.seed).flatten();
            match r {
                Ok(()) => self.records.push(StageRecord {
                    stage: *s,
                    seed,
                    status: "ok".into(),
                }),
                Err(e) => {
                    self.records.push(StageRecord {
                        stage: *s,
                        seed,
                        status: format!("failed: {e:#}"),
                    });
                    result = Err(e.context(format!("stage `{}` failed", s.name())));
                    break;
                }
            }
        }
        self.write_report()?;
        result
    }

    fn write_report(&mut self) -> Result<()> {
        let out = self.out.as_ref().expect("opened");
        let report = json!({
            "stages": self.records,
            "files": out.written,
            "summary": self.summary,
        });
        self.out().json("report.json", None, &report)?;
        Ok(())
    }

    pub fn written(&self) -> Vec<String> {
        self.out
            .as_ref()
            .map(|o| o.written.keys().cloned().collect())
            .unwrap_or_default()
    }

    pub fn warning(&self) -> Option<&str> {
        self.data.as_ref().and_then(|d| d.warning.as_deref())
    }

    fn stage_ingest(&mut self) -> Result<()> {
        let data = self.data.take().expect("validated");
        let panel_csv = csv_bytes(|b| data.panel.write_csv(b))?;
        self.out().csv("panel.csv", None, &panel_csv)?;
        if let Some(rep) = &data.report {
            self.out().json("ingest_report.json", None, rep)?;
        }
        // price and volatility series for plotting
        let p = &data.panel;
        let mut body = String::from("date,log_price1,log_price2,vol1,vol2,realized_corr\n");
        let (mut c1, mut c2) = (0.0, 0.0);
        for i in 0..p.len() {
            let (l1, l2) = match &data.close {
                Some(c) => (c[0][i], c[1][i]),
                None => {
                    c1 += p.r1[i];
                    c2 += p.r2[i];
                    (c1, c2)
                }
            };
            let rc = data.realized_corr.as_ref().and_then(|v| v[i]);
            let _ = writeln!(
                body,
                "{},{l1},{l2},{},{},{}",
                p.dates[i],
                marketdata::annualize_vol(p.rv1[i])?,
                marketdata::annualize_vol(p.rv2[i])?,
                fmt_opt(rc)
            );
        }
        self.out()
            .csv("plot_prices_vol.csv", None, body.as_bytes())?;
        self.summary.insert("days".into(), json!(p.len()));
        self.summary
            .insert("in_sample_days".into(), json!(self.split));
        self.data = Some(data);
        Ok(())
    }

    fn optim(&self, stage: &str) -> dyncop::optim::OptimConfig {
        dyncop::optim::OptimConfig {
            seed: self.seed_for(stage),
            ..self.cfg.optim.clone()
        }
    }

    fn in_sample(&self) -> DailyPanel {
        self.data
            .as_ref()
            .expect("loaded")
            .panel
            .slice(0..self.split)
    }

    fn stage_margins(&mut self) -> Result<()> {
        let panel = self.in_sample();
        let cfg = self.optim("margins");
        let specs = &self.cfg.margin_specs;
        let fits: Vec<Result<MarginFit>> = [0, 1]
            .into_par_iter()
            .map(|k| {
                margins::fit_margin(panel.returns(k), Some(panel.rv(k)), &specs[k], &cfg)
                    .with_context(|| format!("margin {}", k + 1))
            })
            .collect();
        let mut it = fits.into_iter();
        let m1 = it.next().expect("two fits")?;
        let m2 = it.next().expect("two fits")?;
        let mut table = String::from("asset,param,value,se\n");
        for (k, m) in [&m1, &m2].into_iter().enumerate() {
            for (i, n) in m.names.iter().enumerate() {
                let _ = writeln!(table, "{},{n},{},{}", k + 1, m.params[i], m.se[i]);
            }
            let _ = writeln!(table, "{},loglik_joint,{},", k + 1, m.loglik_joint);
            let _ = writeln!(table, "{},loglik_partial,{},", k + 1, m.loglik_partial);
            let _ = writeln!(table, "{},bic,{},", k + 1, m.bic);
        }
        let seed = Some(cfg.seed);
        self.out().csv("margins.csv", seed, table.as_bytes())?;
        self.out().json("margins.json", seed, &[&m1, &m2])?;
        for (k, m) in [&m1, &m2].into_iter().enumerate() {
            if !m.converged {
                self.summary.insert(
                    format!("margin{}_warning", k + 1),
                    json!("optimizer did not converge"),
                );
            }
        }
        self.margins = Some([m1, m2]);
        Ok(())
    }

    fn stage_copula(&mut self) -> Result<()> {
        let [m1, m2] = self.margins.clone().expect("margins fitted");
        let dates = self.in_sample().dates;
        let cfg = self.optim("copula");
        let mode = self.cfg.mode;
        let fits: Vec<(ModelId, ModelFit)> = self
            .cfg
            .models
            .par_iter()
            .map(|m| {
                let r =
                    estimate::joint_from_margins(m1.clone(), m2.clone(), &dates, &m.0, mode, &cfg);
                let (fit, error) = match r {
                    Ok(f) => (Some(f), None),
                    Err(e) => (None, Some(e.to_string())),
                };
                (
                    *m,
                    ModelFit {
                        model: m.name(),
                        fit,
                        error,
                    },
                )
            })
            .collect();
        let mut summary =
            String::from("model,loglik,total_loglik,n_params,aic,bic,converged,boundary\n");
        let mut params = String::from("model,param,value,se\n");
        for (_, f) in &fits {
            match &f.fit {
                Some(j) => {
                    let c = &j.copula;
                    let k = c.estimates.len() as f64;
                    let n = c.n_obs as f64;
                    let _ = writeln!(
                        summary,
                        "{},{},{},{},{},{},{},{}",
                        f.model,
                        c.loglik,
                        j.total_loglik,
                        c.estimates.len(),
                        2.0 * k - 2.0 * c.loglik,
                        k * n.ln() - 2.0 * c.loglik,
                        c.converged,
                        c.boundary.join(";")
                    );
                    for e in &c.estimates {
                        let _ = writeln!(params, "{},{},{},{}", f.model, e.name, e.value, e.se);
                    }
                }
                None => {
                    let _ = writeln!(summary, "{},,,,,,false,", f.model);
                }
            }
        }
        let seed = Some(cfg.seed);
        self.out()
            .csv("copula_summary.csv", seed, summary.as_bytes())?;
        self.out()
            .csv("copula_params.csv", seed, params.as_bytes())?;
        let records: Vec<&ModelFit> = fits.iter().map(|f| &f.1).collect();
        self.out().json("copulas.json", seed, &records)?;
        let sel = self.cfg.selected;
        let selected = fits
            .iter()
            .find(|f| f.0 == sel)
            .expect("selected model is configured");
        if let Some(e) = &selected.1.error {
            bail!("selected model {} failed: {e}", sel.name());
        }
        self.summary
            .insert("selected_model".into(), json!(sel.name()));
        self.fits = fits;
        Ok(())
    }

    fn selected_fit(&self) -> &JointFit {
        let sel = self.cfg.selected;
        self.fits
            .iter()
            .find(|f| f.0 == sel)
            .and_then(|f| f.1.fit.as_ref())
            .expect("selected fit checked in the copula stage")
    }

    fn stage_tests(&mut self) -> Result<()> {
        let t = self.cfg.raw.tests.clone();
        let seed = self.seed_for("tests");
        let fit = self.selected_fit();
        let u = fit.u.clone();
        let tv = diagnostics::tv_dependence_test(&u, t.tv_lags, t.tv_boot, seed)?;
        // breaks in realized correlation when ticks were ingested, else in the PIT product proxy
        let data = self.data.as_ref().expect("loaded");
        let (series, dates, source): (Vec<f64>, Vec<NaiveDate>, &str) = match &data.realized_corr {
            Some(rc) if rc[..self.split].iter().all(Option::is_some) => (
                rc[..self.split]
                    .iter()
                    .map(|v| v.expect("checked"))
                    .collect(),
                data.panel.dates[..self.split].to_vec(),
                "realized-correlation",
            ),
            _ => (
                u.iter().map(|(a, b)| norm_ppf(*a) * norm_ppf(*b)).collect(),
                fit.dates.clone(),
                "normal-score-product",
            ),
        };
        let breaks = diagnostics::supf_break_test(
            &series,
            t.break_trim,
            t.break_sims,
            t.break_level,
            seed ^ 1,
        )?;
        let dates_out: Vec<String> = breaks
            .break_dates(&dates)
            .iter()
            .map(ToString::to_string)
            .collect();
        let rep = json!({
            "time_varying_dependence": tv,
            "breaks": breaks,
            "break_series": source,
            "break_dates": dates_out,
        });
        self.out().json("dependence_tests.json", Some(seed), &rep)?;
        self.summary.insert("tv_p_value".into(), json!(tv.p_value));
        Ok(())
    }

    fn stage_bootstrap(&mut self) -> Result<()> {
        let b = self.cfg.raw.bootstrap.clone();
        let seed = self.seed_for("bootstrap");
        let cfg = self.optim("bootstrap");
        let fit = self.selected_fit().clone();
        let target = BootstrapTarget::Copula {
            u: &fit.u,
            spec: fit.copula.spec,
        };
        let scheme = Scheme::StationaryBlock {
            mean_block: b.mean_block,
        };
        let res = estimate::bootstrap_ci(&target, b.replicates, b.level, scheme, seed, &cfg)?;
        let mut body = String::from("param,point,se,lo,hi\n");
        for (i, n) in res.names.iter().enumerate() {
            let _ = writeln!(
                body,
                "{n},{},{},{},{}",
                res.point[i], res.se[i], res.ci[i].0, res.ci[i].1
            );
        }
        self.out()
            .csv("bootstrap.csv", Some(seed), body.as_bytes())?;
        self.out().text(
            "estimates.txt",
            Some(seed),
            &estimate::format_table(&fit, Some(&res)),
        )?;
        self.out().json("bootstrap.json", Some(seed), &res)?;
        Ok(())
    }

    fn stage_gof(&mut self) -> Result<()> {
        let g = self.cfg.raw.gof.clone();
        let seed = self.seed_for("gof");
        let cfg = self.optim("gof");
        let joint = g.scheme == "joint";
        let rows: Vec<(String, Result<diagnostics::GofReport>)> = self
            .fits
            .iter()
            .filter_map(|(_, f)| f.fit.as_ref().map(|j| (f.model.clone(), j)))
            .map(|(name, j)| {
                let target = if joint {
                    GofTarget::Joint { fit: j }
                } else {
                    GofTarget::Copula {
                        fit: &j.copula,
                        u: &j.u,
                    }
                };
                let s = stage_seed(seed, &name);
                (
                    name,
                    diagnostics::gof_test(&target, g.n_sim, s, &cfg).map_err(Into::into),
                )
            })
            .collect();
        let mut body = String::from("model,ks,ks_p,cvm,cvm_p,n_sim,failed,partial,scheme\n");
        for (name, r) in &rows {
            match r {
                Ok(r) => {
                    let _ = writeln!(
                        body,
                        "{name},{},{},{},{},{},{},{},{}",
                        r.ks_stat,
                        r.ks_p,
                        r.cvm_stat,
                        r.cvm_p,
                        r.n_sim,
                        r.failed,
                        r.partial,
                        r.scheme
                    );
                }
                Err(e) => {
                    let _ = writeln!(
                        body,
                        "{name},,,,,{},,,error: {}",
                        g.n_sim,
                        e.to_string().replace(',', ";")
                    );
                }
            }
        }
        self.out().csv("gof.csv", Some(seed), body.as_bytes())?;
        Ok(())
    }

    fn stage_forecast(&mut self) -> Result<()> {
        let r = self.cfg.raw.risk.clone();
        let seed = self.seed_for("forecast");
        let panel = self.data.as_ref().expect("loaded").panel.clone();
        let split = self.split;
        let usable: Vec<(ModelId, &JointFit)> = self
            .fits
            .iter()
            .filter_map(|(m, f)| f.fit.as_ref().map(|j| (*m, j)))
            .collect();
        let series: Vec<(ModelId, dyncop::Result<RiskSeries>)> = usable
            .iter()
            .map(|(m, j)| {
                let s = stage_seed(seed, &m.name());
                (
                    *m,
                    riskcast::var_backtest_series(
                        j, &panel, split, &r.alphas, r.weights, r.n_paths, s,
                    ),
                )
            })
            .collect();
        let sel = self.cfg.selected;
        let mut skipped = Vec::new();
        for (m, s) in series {
            match s {
                Ok(s) => {
                    let body = csv_bytes(|b| s.write_csv(b))?;
                    let s_seed = Some(s.seed);
                    self.out()
                        .csv(&format!("risk_{}.csv", m.name()), s_seed, &body)?;
                    self.risk.push((m, s));
                }
                Err(e) if m != sel => {
                    skipped.push(json!({"model": m.name(), "reason": e.to_string()}))
                }
                Err(e) => {
                    return Err(
                        anyhow::Error::from(e).context(format!("forecasting with {}", m.name()))
                    )
                }
            }
        }
        self.summary
            .insert("forecast_skipped".into(), json!(skipped));
        self.write_dependence_plot(&panel)?;
        Ok(())
    }

    /// Conditional dependence of the selected model with realized correlation.
    fn write_dependence_plot(&mut self, panel: &DailyPanel) -> Result<()> {
        let fit = self.selected_fit().clone();
        let states = riskcast::forecast_states(&fit, panel)?;
        let rc = self.data.as_ref().and_then(|d| d.realized_corr.clone());
        let mut body = String::from("date,sample,param,lambda_l,lambda_u,realized_corr\n");
        for (i, st) in states.iter().enumerate() {
            let Some(date) = st.date else { continue };
            let row = fit.offset + i;
            let (ll, lu) = st.copula.tail_dependence();
            let sample = if row < self.split { "in" } else { "out" };
            let _ = writeln!(
                body,
                "{date},{sample},{},{ll},{lu},{}",
                fmt_opt(st.copula.dynamic()),
                fmt_opt(rc.as_ref().and_then(|v| v[row]))
            );
        }
        self.out()
            .csv("plot_dependence.csv", None, body.as_bytes())?;
        Ok(())
    }

    fn stage_backtest(&mut self) -> Result<()> {
        let b = self.cfg.raw.backtest.clone();
        let seed = self.seed_for("backtest");
        let alphas = self.cfg.raw.risk.alphas.clone();
        let names: Vec<String> = self.risk.iter().map(|(m, _)| m.name()).collect();
        let forecasts: Vec<Vec<Vec<f64>>> = self
            .risk
            .iter()
            .map(|(_, s)| {
                (0..alphas.len())
                    .map(|j| s.var.iter().map(|row| row[j]).collect())
                    .collect()
            })
            .collect();
        let realized = self
            .risk
            .first()
            .map(|(_, s)| s.realized.clone())
            .context("no forecasts")?;
        let bench = self.risk.iter().position(|(m, _)| *m == self.cfg.selected);
        let grid = backtest::evaluate(
            &names, &forecasts, &realized, &alphas, bench, b.dq_lags, b.dq_sims, seed,
        )?;
        let long = csv_bytes(|w| grid.write_csv(w))?;
        let wide = csv_bytes(|w| grid.write_table(w))?;
        self.out().csv("backtest.csv", Some(seed), &long)?;
        self.out().csv("backtest_table.csv", Some(seed), &wide)?;
        Ok(())
    }

    fn stage_cdb(&mut self) -> Result<()> {
        let r = self.cfg.raw.risk.clone();
        let seed = self.seed_for("cdb");
        let sel = self.cfg.selected;
        let series = &self
            .risk
            .iter()
            .find(|(m, _)| *m == sel)
            .context("selected model has no forecasts")?
            .1;
        let j = series
            .alphas
            .iter()
            .position(|a| (a - r.cdb_alpha).abs() < 1e-12)
            .expect("validated");
        // band for a constant Gaussian dependence at the in-sample normal-score correlation
        let u = &self.selected_fit().u;
        let (a, b): (Vec<f64>, Vec<f64>) =
            u.iter().map(|(x, y)| (norm_ppf(*x), norm_ppf(*y))).unzip();
        let rho = pearson(&a, &b);
        let band = riskcast::cdb_constant_band(
            rho,
            r.n_paths,
            r.band_sims,
            r.cdb_alpha,
            r.band_level,
            seed,
        )?;
        let mut body = String::from("date,cdb,es,band_lo,band_mean,band_hi\n");
        for d in 0..series.len() {
            let _ = writeln!(
                body,
                "{},{},{},{},{},{}",
                series.dates[d], series.cdb[d][j], series.es[d][j], band.lo, band.mean, band.hi
            );
        }
        let mean = series.cdb.iter().map(|row| row[j]).sum::<f64>() / series.len() as f64;
        self.out().csv("cdb.csv", Some(seed), body.as_bytes())?;
        self.summary.insert("cdb_mean".into(), json!(mean));
        self.summary.insert("cdb_band".into(), json!(band));
        self.summary.insert("cdb_band_rho".into(), json!(rho));
        Ok(())
    }
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

/// Requested stages for `pipeline`: the config's list, or every stage.
pub fn configured_stages(cfg: &Resolved) -> Result<Vec<Stage>> {
    match &cfg.raw.stages {
        Some(list) => {
            ensure!(!list.is_empty(), "`stages` is empty");
            list.iter().map(|s| s.parse()).collect()
        }
        None => Ok(Stage::ALL.to_vec()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closure_adds_prerequisites_in_order() {
        assert_eq!(
            Stage::closure(&[Stage::Cdb]),
            vec![
                Stage::Ingest,
                Stage::Margins,
                Stage::Copula,
                Stage::Forecast,
                Stage::Cdb
            ]
        );
        assert_eq!(Stage::closure(&[Stage::Ingest]), vec![Stage::Ingest]);
        assert_eq!(Stage::closure(&Stage::ALL), Stage::ALL.to_vec());
    }

    #[test]
    fn pearson_of_identical_series_is_one() {
        let a = [1.0, 2.0, 4.0, 3.0];
        assert!((pearson(&a, &a) - 1.0).abs() < 1e-12);
    }
}
