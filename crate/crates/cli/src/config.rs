//! Run configuration read from a TOML file.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use chrono::{NaiveDate, NaiveTime};
use serde::{Deserialize, Serialize};

use dyncop::copula::Family;
use dyncop::estimate::{CopulaSpec, Dynamics, MarginsMode};
use dyncop::margins::{Innovation, MarginSpec, MeanLags, VarianceModel};
use dyncop::marketdata::{ExclusionCalendar, SessionWindow, TickFormat};
use dyncop::optim::OptimConfig;

use crate::pipeline::ValidationError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every stochastic stage derives its own seed from it.
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub data: DataConfig,
    #[serde(default)]
    pub margins: MarginsConfig,
    #[serde(default)]
    pub copula: CopulaConfig,
    #[serde(default)]
    pub bootstrap: BootstrapConfig,
    #[serde(default)]
    pub gof: GofConfig,
    #[serde(default)]
    pub tests: TestsConfig,
    #[serde(default)]
    pub risk: RiskConfig,
    #[serde(default)]
    pub backtest: BacktestConfig,
    #[serde(default)]
    pub optim: OptimSection,
    /// Stages run by `pipeline`; all when absent.
    pub stages: Option<Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Daily panel (`date,r1,rv1,r2,rv2`); alternative to `ticks`.
    pub panel: Option<PathBuf>,
    /// Tick files of the two assets.
    pub ticks: Option<[PathBuf; 2]>,
    /// Exclusion calendar file; the built-in US calendar when absent.
    pub calendar: Option<PathBuf>,
    #[serde(default)]
    pub tick_format: TickFormatConfig,
    #[serde(default)]
    pub session: SessionConfig,
    /// Last in-sample day.
    pub in_sample_end: NaiveDate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TickFormatConfig {
    pub delimiter: char,
    pub has_header: bool,
    pub timestamp_column: String,
    pub price_column: String,
    /// `unix`, `rfc3339` or a chrono pattern.
    pub timestamp: String,
}

impl Default for TickFormatConfig {
    fn default() -> Self {
        let d = TickFormat::default();
        Self {
            delimiter: d.delimiter,
            has_header: d.has_header,
            timestamp_column: d.timestamp_column,
            price_column: d.price_column,
            timestamp: "%Y-%m-%d %H:%M:%S".into(),
        }
    }
}

impl TickFormatConfig {
    pub fn to_format(&self) -> TickFormat {
        use dyncop::marketdata::TimestampFormat;
        TickFormat {
            delimiter: self.delimiter,
            has_header: self.has_header,
            timestamp_column: self.timestamp_column.clone(),
            price_column: self.price_column.clone(),
            timestamp: match self.timestamp.as_str() {
                "unix" => TimestampFormat::Unix,
                "rfc3339" => TimestampFormat::Rfc3339,
                p => TimestampFormat::Pattern(p.to_string()),
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SessionConfig {
    pub open: String,
    pub close: String,
    pub bar_minutes: u32,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            open: "14:30".into(),
            close: "21:00".into(),
            bar_minutes: 5,
        }
    }
}

impl SessionConfig {
    pub fn to_window(&self) -> Result<SessionWindow> {
        let t = |s: &str| {
            NaiveTime::parse_from_str(s, "%H:%M").with_context(|| format!("session time `{s}`"))
        };
        Ok(SessionWindow {
            open: t(&self.open)?,
            close: t(&self.close)?,
            bar_minutes: self.bar_minutes,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarginsConfig {
    /// `realized-garch` or `gjr-garch` per asset.
    pub models: [String; 2],
    /// AR order per asset, or `auto`.
    pub lags: [String; 2],
    /// Innovation law per asset; the model's default when empty.
    pub innovations: Option<[String; 2]>,
}

impl Default for MarginsConfig {
    fn default() -> Self {
        Self {
            models: ["realized-garch".into(), "realized-garch".into()],
            lags: ["1".into(), "1".into()],
            innovations: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CopulaConfig {
    pub families: Vec<String>,
    /// `constant` and/or `gas`.
    pub dynamics: Vec<String>,
    /// `parametric` or `empirical`.
    pub mode: String,
    /// Model used for bootstrap, CDB and as the backtest benchmark.
    pub select: String,
}

impl Default for CopulaConfig {
    fn default() -> Self {
        Self {
            families: Family::ALL.iter().map(|f| f.name().to_string()).collect(),
            dynamics: vec!["constant".into(), "gas".into()],
            mode: "parametric".into(),
            select: "student-t-gas".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub mean_block: f64,
    pub level: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            replicates: dyncop::estimate::DEFAULT_REPLICATES,
            mean_block: dyncop::estimate::DEFAULT_MEAN_BLOCK,
            level: 0.95,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GofConfig {
    pub n_sim: usize,
    /// `copula` re-simulates pseudo-observations only; `joint` the full model.
    pub scheme: String,
}

impl Default for GofConfig {
    fn default() -> Self {
        Self {
            n_sim: dyncop::diagnostics::DEFAULT_GOF_SIMS,
            scheme: "copula".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TestsConfig {
    pub tv_lags: usize,
    pub tv_boot: usize,
    pub break_trim: f64,
    pub break_sims: usize,
    pub break_level: f64,
}

impl Default for TestsConfig {
    fn default() -> Self {
        Self {
            tv_lags: dyncop::diagnostics::DEFAULT_TV_LAGS,
            tv_boot: 1000,
            break_trim: dyncop::diagnostics::DEFAULT_TRIM,
            break_sims: 1000,
            break_level: 0.05,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiskConfig {
    pub alphas: Vec<f64>,
    pub weights: [f64; 2],
    pub n_paths: usize,
    pub band_sims: usize,
    pub band_level: f64,
    pub cdb_alpha: f64,
}

impl Default for RiskConfig {
    fn default() -> Self {
        Self {
            alphas: dyncop::riskcast::DEFAULT_ALPHAS.to_vec(),
            weights: [0.5, 0.5],
            n_paths: dyncop::riskcast::DEFAULT_PATHS,
            band_sims: dyncop::riskcast::DEFAULT_BAND_SIMS,
            band_level: 0.9,
            cdb_alpha: 0.05,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BacktestConfig {
    pub dq_lags: usize,
    pub dq_sims: usize,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            dq_lags: dyncop::backtest::DEFAULT_DQ_LAGS,
            dq_sims: dyncop::backtest::DEFAULT_DQ_SIMS,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimSection {
    pub n_starts: usize,
    pub max_iter: usize,
}

impl Default for OptimSection {
    fn default() -> Self {
        let d = OptimConfig::default();
        Self {
            n_starts: d.n_starts,
            max_iter: d.max_iter,
        }
    }
}

/// A copula model named `<family>-<dynamics>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelId(pub CopulaSpec);

impl ModelId {
    pub fn name(&self) -> String {
        let d = match self.0.dynamics {
            Dynamics::Constant => "constant",
            Dynamics::Gas => "gas",
        };
        format!("{}-{d}", self.0.family)
    }
}

/// A configuration whose relative paths were resolved and whose strings were parsed.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub raw: RunConfig,
    /// SHA-256 of the configuration file bytes.
    pub hash: String,
    pub margin_specs: [MarginSpec; 2],
    pub models: Vec<ModelId>,
    pub selected: ModelId,
    pub mode: MarginsMode,
    pub calendar: ExclusionCalendar,
    pub optim: OptimConfig,
}

fn margin_spec(model: &str, lags: &str, innovation: Option<&str>) -> Result<MarginSpec> {
    let variance_model: VarianceModel = model.parse()?;
    let innovation = match innovation {
        Some(s) => s.parse()?,
        None => match variance_model {
            VarianceModel::RealizedGarch => Innovation::SkewT,
            VarianceModel::GjrGarch => Innovation::StudentT,
        },
    };
    Ok(MarginSpec {
        mean_lags: lags.parse::<MeanLags>()?,
        variance_model,
        innovation,
    })
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Read, resolve paths against the file's directory and validate.
    pub fn load(path: &Path) -> Result<Resolved> {
        let bytes = std::fs::read(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let text = String::from_utf8(bytes.clone()).context("config is not UTF-8")?;
        let invalid =
            |e: anyhow::Error| ValidationError(format!("invalid config {}: {e:#}", path.display()));
        let mut raw = Self::parse(&text).map_err(invalid)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = raw.data.panel.as_mut() {
            fix(p);
        }
        if let Some(t) = raw.data.ticks.as_mut() {
            t.iter_mut().for_each(fix);
        }
        if let Some(p) = raw.data.calendar.as_mut() {
            fix(p);
        }
        if let Some(p) = raw.out_dir.as_mut() {
            fix(p);
        }
        Ok(raw
            .resolve(crate::provenance::sha256_hex(&bytes))
            .map_err(invalid)?)
    }

    pub fn resolve(self, hash: String) -> Result<Resolved> {
        ensure!(
            self.data.panel.is_some() != self.data.ticks.is_some(),
            "[data] needs exactly one of `panel` or `ticks`"
        );
        let inn = self.margins.innovations.as_ref();
        let margin_specs = [
            margin_spec(
                &self.margins.models[0],
                &self.margins.lags[0],
                inn.map(|i| i[0].as_str()),
            )?,
            margin_spec(
                &self.margins.models[1],
                &self.margins.lags[1],
                inn.map(|i| i[1].as_str()),
            )?,
        ];
        let mut models = Vec::new();
        for f in &self.copula.families {
            let family: Family = f.parse()?;
            for d in &self.copula.dynamics {
                let spec = match d.as_str() {
                    "constant" => CopulaSpec::constant(family),
                    "gas" if family.supports_gas() => CopulaSpec::gas(family),
                    "gas" => continue,
                    other => bail!("unknown copula dynamics `{other}`"),
                };
                models.push(ModelId(spec));
            }
        }
        ensure!(!models.is_empty(), "no copula model configured");
        let selected = *models
            .iter()
            .find(|m| m.name() == self.copula.select)
            .with_context(|| {
                format!(
                    "selected model `{}` is not among the configured models",
                    self.copula.select
                )
            })?;
        let mode = match self.copula.mode.as_str() {
            "parametric" => MarginsMode::Parametric,
            "empirical" => MarginsMode::Empirical,
            other => bail!("unknown margins mode `{other}`"),
        };
        ensure!(
            matches!(self.gof.scheme.as_str(), "copula" | "joint"),
            "gof scheme must be `copula` or `joint`"
        );
        let r = &self.risk;
        ensure!(!r.alphas.is_empty(), "at least one alpha required");
        ensure!(
            r.alphas.iter().all(|a| *a > 0.0 && *a < 1.0),
            "alphas must lie in (0, 1)"
        );
        ensure!(
            r.cdb_alpha > 0.0 && r.cdb_alpha < 0.5,
            "cdb_alpha must lie in (0, 0.5)"
        );
        ensure!(
            r.weights.iter().all(|w| *w >= 0.0) && (r.weights[0] + r.weights[1] - 1.0).abs() < 1e-9,
            "weights must be non-negative and sum to one"
        );
        ensure!(r.n_paths >= 1000, "n_paths must be at least 1000");
        for a in r.alphas.iter().chain([&r.cdb_alpha]) {
            let tail = a.min(1.0 - a) * r.n_paths as f64;
            ensure!(
                tail.ceil() as usize >= dyncop::riskcast::MIN_TAIL_DRAWS,
                "n_paths = {} leaves too few tail draws at alpha = {a}",
                r.n_paths
            );
        }
        ensure!(
            self.bootstrap.replicates >= 100,
            "bootstrap needs at least 100 replicates"
        );
        if let Some(stages) = &self.stages {
            for s in stages {
                s.parse::<crate::pipeline::Stage>()?;
            }
        }
        let calendar = match &self.data.calendar {
            Some(p) => ExclusionCalendar::load(p)
                .with_context(|| format!("cannot load calendar {}", p.display()))?,
            None => ExclusionCalendar::us_default(),
        };
        let optim = OptimConfig {
            n_starts: self.optim.n_starts,
            max_iter: self.optim.max_iter,
            ..OptimConfig::default()
        };
        Ok(Resolved {
            raw: self,
            hash,
            margin_specs,
            models,
            selected,
            mode,
            calendar,
            optim,
        })
    }
}
