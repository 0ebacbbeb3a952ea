//! Tick ingestion, intraday grids and daily realized measures.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use chrono::{
    DateTime, Datelike, Duration, NaiveDate, NaiveDateTime, NaiveTime, TimeZone, Utc, Weekday,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub timestamp: DateTime<Utc>,
    pub price: f64,
}

/// Ticks sorted by timestamp, with the rows that failed to parse.
#[derive(Debug, Clone, Default)]
pub struct TickSeries {
    pub ticks: Vec<TickRecord>,
    pub rejected: Vec<RejectedRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectedRow {
    /// One-based line number in the source.
    pub line: u64,
    pub reason: String,
}

impl TickSeries {
    pub fn len(&self) -> usize {
        self.ticks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ticks.is_empty()
    }

    pub fn reject_count(&self) -> usize {
        self.rejected.len()
    }
}

/// How timestamps are written in the source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimestampFormat {
    /// Seconds since the epoch, fractional part allowed.
    Unix,
    /// RFC 3339 with offset.
    Rfc3339,
    /// A chrono format string interpreted in UTC.
    Pattern(String),
}

/// Layout of a delimited tick file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TickFormat {
    pub delimiter: char,
    pub has_header: bool,
    pub timestamp_column: String,
    pub price_column: String,
    pub timestamp: TimestampFormat,
}

impl Default for TickFormat {
    fn default() -> Self {
        Self {
            delimiter: ',',
            has_header: true,
            timestamp_column: "timestamp".into(),
            price_column: "price".into(),
            timestamp: TimestampFormat::Pattern("%Y-%m-%d %H:%M:%S".into()),
        }
    }
}

impl TickFormat {
    fn parse_time(&self, s: &str) -> std::result::Result<DateTime<Utc>, String> {
        let s = s.trim();
        match &self.timestamp {
            TimestampFormat::Unix => {
                let secs: f64 = s.parse().map_err(|_| format!("bad epoch seconds `{s}`"))?;
                let whole = secs.floor();
                let nanos = ((secs - whole) * 1e9).round() as u32;
                Utc.timestamp_opt(whole as i64, nanos.min(999_999_999))
                    .single()
                    .ok_or_else(|| format!("epoch seconds out of range `{s}`"))
            }
            TimestampFormat::Rfc3339 => DateTime::parse_from_rfc3339(s)
                .map(|d| d.with_timezone(&Utc))
                .map_err(|e| format!("bad timestamp `{s}`: {e}")),
            TimestampFormat::Pattern(p) => NaiveDateTime::parse_from_str(s, p)
                .map(|d| d.and_utc())
                .map_err(|e| format!("bad timestamp `{s}`: {e}")),
        }
    }
}

/// Parse delimited tick rows. Bad rows are skipped and recorded.
pub fn parse_ticks<R: Read>(source: R, format: &TickFormat) -> Result<TickSeries> {
    if !format.delimiter.is_ascii() {
        return Err(Error::Format(
            "delimiter must be a single ASCII character".into(),
        ));
    }
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(format.delimiter as u8)
        .has_headers(format.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let (ti, pi) = if format.has_header {
        let headers = reader
            .headers()
            .map_err(|e| Error::Format(format!("unreadable header: {e}")))?
            .clone();
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h.eq_ignore_ascii_case(name))
                .ok_or_else(|| Error::Format(format!("header lacks column `{name}`")))
        };
        (find(&format.timestamp_column)?, find(&format.price_column)?)
    } else {
        let idx = |name: &str| {
            name.parse::<usize>().map_err(|_| {
                Error::Format(format!(
                    "headerless format needs numeric column index, got `{name}`"
                ))
            })
        };
        (idx(&format.timestamp_column)?, idx(&format.price_column)?)
    };

    let mut out = TickSeries::default();
    for (i, row) in reader.records().enumerate() {
        let line = i as u64 + 1 + u64::from(format.has_header);
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                out.rejected.push(RejectedRow {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let (Some(ts), Some(px)) = (row.get(ti), row.get(pi)) else {
            out.rejected.push(RejectedRow {
                line,
                reason: "missing field".into(),
            });
            continue;
        };
        let timestamp = match format.parse_time(ts) {
            Ok(t) => t,
            Err(reason) => {
                out.rejected.push(RejectedRow { line, reason });
                continue;
            }
        };
        match px.parse::<f64>() {
            Ok(price) if price > 0.0 && price.is_finite() => {
                out.ticks.push(TickRecord { timestamp, price })
            }
            Ok(price) => out.rejected.push(RejectedRow {
                line,
                reason: format!("non-positive price {price}"),
            }),
            Err(_) => out.rejected.push(RejectedRow {
                line,
                reason: format!("bad price `{px}`"),
            }),
        }
    }
    // Stable, so equal timestamps keep file order.
    out.ticks.sort_by_key(|t| t.timestamp);
    Ok(out)
}

pub fn read_ticks(path: &Path, format: &TickFormat) -> Result<TickSeries> {
    parse_ticks(std::fs::File::open(path)?, format)
}

/// Daily trading window in UTC, sampled every `bar_minutes`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionWindow {
    pub open: NaiveTime,
    pub close: NaiveTime,
    pub bar_minutes: u32,
}

impl Default for SessionWindow {
    /// NYSE floor hours expressed in GMT (14:30 to 21:00), five-minute bars.
    fn default() -> Self {
        Self {
            open: NaiveTime::from_hms_opt(14, 30, 0).expect("valid"),
            close: NaiveTime::from_hms_opt(21, 0, 0).expect("valid"),
            bar_minutes: 5,
        }
    }
}

impl SessionWindow {
    /// Bar timestamps for a day, both session ends included.
    pub fn bars(&self, day: NaiveDate) -> Result<Vec<DateTime<Utc>>> {
        if self.bar_minutes == 0 || self.close <= self.open {
            return Err(Error::domain(
                "session must close after it opens with positive bar length",
            ));
        }
        let step = Duration::minutes(i64::from(self.bar_minutes));
        let end = day.and_time(self.close).and_utc();
        let mut t = day.and_time(self.open).and_utc();
        let mut out = Vec::new();
        while t <= end {
            out.push(t);
            t += step;
        }
        Ok(out)
    }
}

/// Days on which no grid is built.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionCalendar {
    pub weekends: bool,
    /// Dates excluded in every year, as (month, day).
    pub recurring: BTreeSet<(u32, u32)>,
    pub dates: BTreeSet<NaiveDate>,
    /// Add NYSE full-day holidays for any year queried.
    pub us_holidays: bool,
}

impl ExclusionCalendar {
    /// Weekends, US exchange holidays, Dec 24 to 26 and Dec 31 to Jan 2.
    pub fn us_default() -> Self {
        Self {
            weekends: true,
            recurring: [(12, 24), (12, 25), (12, 26), (12, 31), (1, 1), (1, 2)]
                .into_iter()
                .collect(),
            dates: BTreeSet::new(),
            us_holidays: true,
        }
    }

    /// Parse a calendar file.
    ///
    /// One entry per line: `YYYY-MM-DD`, recurring `MM-DD`, or the keywords
    /// `weekends` and `us-holidays`. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cal = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = || Error::Format(format!("calendar line {}: cannot read `{line}`", i + 1));
            match line.to_ascii_lowercase().as_str() {
                "weekends" => cal.weekends = true,
                "us-holidays" => cal.us_holidays = true,
                _ => {
                    if let Ok(d) = NaiveDate::parse_from_str(line, "%Y-%m-%d") {
                        cal.dates.insert(d);
                    } else {
                        let (m, d) = line.split_once('-').ok_or_else(bad)?;
                        let m: u32 = m.parse().map_err(|_| bad())?;
                        let d: u32 = d.parse().map_err(|_| bad())?;
                        NaiveDate::from_ymd_opt(2000, m, d).ok_or_else(bad)?;
                        cal.recurring.insert((m, d));
                    }
                }
            }
        }
        Ok(cal)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn is_excluded(&self, day: NaiveDate) -> bool {
        if self.weekends && matches!(day.weekday(), Weekday::Sat | Weekday::Sun) {
            return true;
        }
        self.recurring.contains(&(day.month(), day.day()))
            || self.dates.contains(&day)
            || (self.us_holidays && us_holidays(day.year()).contains(&day))
    }
}

fn nth_weekday(year: i32, month: u32, wd: Weekday, n: u8) -> NaiveDate {
    NaiveDate::from_weekday_of_month_opt(year, month, wd, n).expect("valid nth weekday")
}

fn last_weekday(year: i32, month: u32, wd: Weekday) -> NaiveDate {
    NaiveDate::from_weekday_of_month_opt(year, month, wd, 5)
        .unwrap_or_else(|| nth_weekday(year, month, wd, 4))
}

/// Gregorian Easter Sunday (anonymous algorithm).
fn easter(year: i32) -> NaiveDate {
    let a = year % 19;
    let b = year / 100;
    let c = year % 100;
    let d = b / 4;
    let e = b % 4;
    let f = (b + 8) / 25;
    let g = (b - f + 1) / 3;
    let h = (19 * a + b - d - g + 15) % 30;
    let i = c / 4;
    let k = c % 4;
    let l = (32 + 2 * e + 2 * i - h - k) % 7;
    let m = (a + 11 * h + 22 * l) / 451;
    let month = (h + l - 7 * m + 114) / 31;
    let day = (h + l - 7 * m + 114) % 31 + 1;
    NaiveDate::from_ymd_opt(year, month as u32, day as u32).expect("valid easter")
}

fn observed(d: NaiveDate) -> NaiveDate {
    match d.weekday() {
        Weekday::Sat => d - Duration::days(1),
        Weekday::Sun => d + Duration::days(1),
        _ => d,
    }
}

/// NYSE full-day closures for a year (standard rules, no ad hoc closures).
pub fn us_holidays(year: i32) -> Vec<NaiveDate> {
    let ymd = |m, d| NaiveDate::from_ymd_opt(year, m, d).expect("valid date");
    vec![
        observed(ymd(1, 1)),
        nth_weekday(year, 1, Weekday::Mon, 3),
        nth_weekday(year, 2, Weekday::Mon, 3),
        easter(year) - Duration::days(2),
        last_weekday(year, 5, Weekday::Mon),
        observed(ymd(7, 4)),
        nth_weekday(year, 9, Weekday::Mon, 1),
        nth_weekday(year, 11, Weekday::Thu, 4),
        observed(ymd(12, 25)),
    ]
}

/// Log prices of both assets on a shared bar grid for one day.
#[derive(Debug, Clone, PartialEq)]
pub struct IntradayGrid {
    pub trading_day: NaiveDate,
    pub bar_times: Vec<DateTime<Utc>>,
    pub log_prices: [Vec<f64>; 2],
}

impl IntradayGrid {
    /// Bar-to-bar log returns of one asset.
    pub fn returns(&self, asset: usize) -> Vec<f64> {
        self.log_prices[asset]
            .windows(2)
            .map(|w| w[1] - w[0])
            .collect()
    }
}

/// Why a day produced no grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DropReason {
    /// Some bar had no earlier tick that day for the given asset.
    EmptyBar { asset: usize },
    /// Only one asset traded that day.
    Unpaired,
}

#[derive(Debug, Clone, Default)]
pub struct GridBuild {
    pub grids: Vec<IntradayGrid>,
    pub dropped: Vec<(NaiveDate, DropReason)>,
    pub excluded_days: usize,
    /// Set when no trading day survives.
    pub warning: Option<String>,
}

fn by_day(ticks: &[TickRecord]) -> BTreeMap<NaiveDate, &[TickRecord]> {
    let mut out = BTreeMap::new();
    let mut start = 0;
    while start < ticks.len() {
        let day = ticks[start].timestamp.date_naive();
        let len = ticks[start..].partition_point(|t| t.timestamp.date_naive() == day);
        out.insert(day, &ticks[start..start + len]);
        start += len;
    }
    out
}

/// Previous-tick sample at each bar, `None` if a bar precedes the day's first tick.
fn sample(ticks: &[TickRecord], bars: &[DateTime<Utc>]) -> Option<Vec<f64>> {
    bars.iter()
        .map(|b| {
            let k = ticks.partition_point(|t| t.timestamp <= *b);
            (k > 0).then(|| ticks[k - 1].price.ln())
        })
        .collect()
}

/// Synchronize two assets on a common grid of previous-tick prices.
pub fn build_grid(
    a: &TickSeries,
    b: &TickSeries,
    session: &SessionWindow,
    calendar: &ExclusionCalendar,
) -> Result<GridBuild> {
    let da = by_day(&a.ticks);
    let db = by_day(&b.ticks);
    let mut out = GridBuild::default();
    let days: BTreeSet<NaiveDate> = da.keys().chain(db.keys()).copied().collect();
    for day in days {
        if calendar.is_excluded(day) {
            out.excluded_days += 1;
            continue;
        }
        let (Some(ta), Some(tb)) = (da.get(&day), db.get(&day)) else {
            out.dropped.push((day, DropReason::Unpaired));
            continue;
        };
        let bars = session.bars(day)?;
        let Some(pa) = sample(ta, &bars) else {
            out.dropped.push((day, DropReason::EmptyBar { asset: 0 }));
            continue;
        };
        let Some(pb) = sample(tb, &bars) else {
            out.dropped.push((day, DropReason::EmptyBar { asset: 1 }));
            continue;
        };
        out.grids.push(IntradayGrid {
            trading_day: day,
            bar_times: bars,
            log_prices: [pa, pb],
        });
    }
    if out.grids.is_empty() {
        out.warning = Some("no trading day common to both assets survived filtering".into());
    }
    Ok(out)
}

/// Sum of squared returns, accumulated left to right.
pub fn realized_variance(returns: &[f64]) -> Result<f64> {
    if returns.is_empty() {
        return Err(Error::domain("realized variance of an empty day"));
    }
    if returns.iter().any(|r| !r.is_finite()) {
        return Err(Error::domain("non-finite intraday return"));
    }
    Ok(returns.iter().fold(0.0, |acc, r| acc + r * r))
}

/// Uncentered correlation of paired intraday returns.
pub fn realized_correlation(r1: &[f64], r2: &[f64]) -> Result<f64> {
    if r1.len() != r2.len() || r1.len() < 2 {
        return Err(Error::domain(
            "realized correlation needs two equal series of length >= 2",
        ));
    }
    let s12: f64 = r1.iter().zip(r2).map(|(a, b)| a * b).sum();
    let s11: f64 = r1.iter().map(|a| a * a).sum();
    let s22: f64 = r2.iter().map(|b| b * b).sum();
    let denom = s11.sqrt() * s22.sqrt();
    if !(denom > 0.0) {
        return Err(Error::UndefinedCorrelation(
            "zero realized variance in one asset".into(),
        ));
    }
    Ok((s12 / denom).clamp(-1.0, 1.0))
}

/// Annualized volatility in percent, `100 * sqrt(250 * rv)`.
pub fn annualize_vol(rv: f64) -> Result<f64> {
    if !(rv >= 0.0) {
        return Err(Error::domain(format!("negative realized variance {rv}")));
    }
    Ok(100.0 * (250.0 * rv).sqrt())
}

/// Daily open-to-close returns and realized variances of both assets.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DailyPanel {
    pub dates: Vec<NaiveDate>,
    pub r1: Vec<f64>,
    pub rv1: Vec<f64>,
    pub r2: Vec<f64>,
    pub rv2: Vec<f64>,
    /// Bars per day (empty when read from a panel file).
    pub bars: Vec<usize>,
}

impl DailyPanel {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Rows `range` as a new panel.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            dates: self.dates[range.clone()].to_vec(),
            r1: self.r1[range.clone()].to_vec(),
            rv1: self.rv1[range.clone()].to_vec(),
            r2: self.r2[range.clone()].to_vec(),
            rv2: self.rv2[range.clone()].to_vec(),
            bars: self
                .bars
                .get(range)
                .map(<[usize]>::to_vec)
                .unwrap_or_default(),
        }
    }

    pub fn returns(&self, asset: usize) -> &[f64] {
        if asset == 0 {
            &self.r1
        } else {
            &self.r2
        }
    }

    pub fn rv(&self, asset: usize) -> &[f64] {
        if asset == 0 {
            &self.rv1
        } else {
            &self.rv2
        }
    }

    /// Write `date,r1,rv1,r2,rv2` with shortest round-trip decimals.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["date", "r1", "rv1", "r2", "rv2"])?;
        for i in 0..self.len() {
            w.write_record([
                self.dates[i].format("%Y-%m-%d").to_string(),
                self.r1[i].to_string(),
                self.rv1[i].to_string(),
                self.r2[i].to_string(),
                self.rv2[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(source: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(source);
        let headers = r.headers()?.clone();
        let want = ["date", "r1", "rv1", "r2", "rv2"];
        if headers.len() < 5
            || headers
                .iter()
                .zip(want)
                .any(|(h, w)| !h.eq_ignore_ascii_case(w))
        {
            return Err(Error::Format(format!(
                "panel header must be `{}`",
                want.join(",")
            )));
        }
        let mut p = Self::default();
        for (i, row) in r.records().enumerate() {
            let row = row?;
            let bad = |what: &str| Error::Format(format!("panel row {}: bad {what}", i + 2));
            p.dates
                .push(NaiveDate::parse_from_str(&row[0], "%Y-%m-%d").map_err(|_| bad("date"))?);
            let num = |k: usize| row[k].parse::<f64>().map_err(|_| bad(want[k]));
            p.r1.push(num(1)?);
            p.rv1.push(num(2)?);
            p.r2.push(num(3)?);
            p.rv2.push(num(4)?);
        }
        if p.dates.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Format(
                "panel dates must be strictly increasing".into(),
            ));
        }
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Aggregate grids into the daily panel.
pub fn daily_panel(grids: &[IntradayGrid]) -> Result<DailyPanel> {
    if grids.is_empty() {
        return Err(Error::InsufficientData("no intraday grids".into()));
    }
    if grids
        .windows(2)
        .any(|w| w[1].trading_day <= w[0].trading_day)
    {
        return Err(Error::domain("grids must be in chronological order"));
    }
    let mut p = DailyPanel::default();
    for g in grids {
        let ra = g.returns(0);
        let rb = g.returns(1);
        p.dates.push(g.trading_day);
        p.r1.push(ra.iter().sum());
        p.rv1.push(realized_variance(&ra)?);
        p.r2.push(rb.iter().sum());
        p.rv2.push(realized_variance(&rb)?);
        p.bars.push(g.bar_times.len());
    }
    Ok(p)
}

/// Realized correlation per grid day; `None` where undefined.
pub fn daily_realized_correlation(grids: &[IntradayGrid]) -> Vec<Option<f64>> {
    grids
        .iter()
        .map(|g| realized_correlation(&g.returns(0), &g.returns(1)).ok())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ts(s: &str) -> DateTime<Utc> {
        NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S")
            .unwrap()
            .and_utc()
    }

    #[test]
    fn parses_sorts_and_rejects() {
        let src = "timestamp,price\n2008-01-03 15:00:00,10.5\n2008-01-03 14:00:00,10\n2008-01-03 16:00:00,0\nnot a time,3\n";
        let s = parse_ticks(src.as_bytes(), &TickFormat::default()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.ticks[0].price, 10.0);
        assert_eq!(s.reject_count(), 2);
        assert_eq!(s.rejected[0].line, 4);
        let err = parse_ticks("when,px\n1,2\n".as_bytes(), &TickFormat::default());
        assert!(matches!(err, Err(Error::Format(_))));
    }

    #[test]
    fn unix_and_headerless_formats() {
        let f = TickFormat {
            delimiter: ';',
            has_header: false,
            timestamp_column: "0".into(),
            price_column: "1".into(),
            timestamp: TimestampFormat::Unix,
        };
        let s = parse_ticks("1199372400.5;20\n".as_bytes(), &f).unwrap();
        assert_eq!(s.ticks[0].timestamp.timestamp_subsec_millis(), 500);
    }

    #[test]
    fn calendar_rules() {
        let cal = ExclusionCalendar::us_default();
        let d = |y, m, dd| NaiveDate::from_ymd_opt(y, m, dd).unwrap();
        assert!(cal.is_excluded(d(2008, 1, 5))); // Saturday
        assert!(cal.is_excluded(d(2008, 12, 24)));
        assert!(cal.is_excluded(d(2010, 1, 2)));
        assert!(cal.is_excluded(d(2008, 3, 21))); // Good Friday
        assert!(cal.is_excluded(d(2008, 11, 27))); // Thanksgiving
        assert!(cal.is_excluded(d(2009, 7, 3))); // July 4 observed
        assert!(!cal.is_excluded(d(2008, 1, 3)));
        let parsed = ExclusionCalendar::parse("weekends # comment\n12-24\n2009-06-01\n").unwrap();
        assert!(parsed.is_excluded(d(2009, 6, 1)));
        assert!(parsed.is_excluded(d(2011, 12, 24)));
        assert!(!parsed.is_excluded(d(2008, 3, 21)));
        assert!(ExclusionCalendar::parse("13-40").is_err());
    }

    fn full_day(day: &str, drift: f64) -> TickSeries {
        let s = SessionWindow::default();
        let d = NaiveDate::parse_from_str(day, "%Y-%m-%d").unwrap();
        let ticks = s
            .bars(d)
            .unwrap()
            .into_iter()
            .enumerate()
            .map(|(i, t)| TickRecord {
                timestamp: t - Duration::seconds(7),
                price: 100.0 * (drift * i as f64).exp(),
            })
            .collect();
        TickSeries {
            ticks,
            rejected: vec![],
        }
    }

    #[test]
    fn grid_cases() {
        let s = SessionWindow::default();
        let cal = ExclusionCalendar::us_default();
        let a = full_day("2008-01-03", 0.001);
        let b = full_day("2008-01-03", -0.0005);
        let g = build_grid(&a, &b, &s, &cal).unwrap();
        assert_eq!(g.grids.len(), 1);
        assert_eq!(g.grids[0].bar_times.len(), 79);

        let sat = build_grid(
            &full_day("2008-01-05", 0.0),
            &full_day("2008-01-05", 0.0),
            &s,
            &cal,
        )
        .unwrap();
        assert!(sat.grids.is_empty());
        assert!(sat.warning.is_some());

        let mut late = b.clone();
        late.ticks.remove(0);
        let g2 = build_grid(&a, &late, &s, &cal).unwrap();
        assert_eq!(
            g2.dropped,
            vec![(g.grids[0].trading_day, DropReason::EmptyBar { asset: 1 })]
        );

        let p = daily_panel(&g.grids).unwrap();
        let lp = &g.grids[0].log_prices[0];
        assert_relative_eq!(p.r1[0], lp[lp.len() - 1] - lp[0], epsilon = 1e-14);
        assert_relative_eq!(p.r1[0], 0.078, epsilon = 1e-12);
        assert_relative_eq!(p.rv2[0], 78.0 * 0.0005f64.powi(2), max_relative = 1e-9);
    }

    #[test]
    fn previous_tick_sampling() {
        let ticks = vec![
            TickRecord {
                timestamp: ts("2008-01-03 14:00:00"),
                price: 1.0,
            },
            TickRecord {
                timestamp: ts("2008-01-03 14:32:00"),
                price: 2.0,
            },
        ];
        let bars = vec![ts("2008-01-03 14:30:00"), ts("2008-01-03 14:35:00")];
        assert_eq!(sample(&ticks, &bars).unwrap(), vec![0.0, 2f64.ln()]);
        assert!(sample(&ticks[1..], &bars).is_none());
    }

    #[test]
    fn realized_measure_examples() {
        assert_relative_eq!(
            realized_variance(&[0.01, -0.02, 0.005]).unwrap(),
            0.000525,
            epsilon = 1e-18
        );
        assert_eq!(realized_variance(&[0.0, 0.0]).unwrap(), 0.0);
        assert!(realized_variance(&[]).is_err());
        assert_relative_eq!(
            realized_correlation(&[0.01, -0.01], &[0.01, -0.01]).unwrap(),
            1.0
        );
        assert_relative_eq!(
            realized_correlation(&[1.0, -1.0], &[1.0, 1.0]).unwrap(),
            0.0
        );
        assert_relative_eq!(
            realized_correlation(&[0.3, -0.1], &[-0.3, 0.1]).unwrap(),
            -1.0
        );
        assert!(matches!(
            realized_correlation(&[0.0, 0.0], &[1.0, 2.0]),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert_relative_eq!(
            annualize_vol(0.0004).unwrap(),
            31.622_776_601_683_8,
            epsilon = 1e-10
        );
        assert_eq!(annualize_vol(0.0).unwrap(), 0.0);
        assert_relative_eq!(annualize_vol(1.0 / 250.0).unwrap(), 100.0, epsilon = 1e-12);
        assert!(annualize_vol(-1e-9).is_err());
    }

    #[test]
    fn panel_csv_round_trip() {
        let d = NaiveDate::from_ymd_opt(2008, 1, 3).unwrap();
        let p = DailyPanel {
            dates: vec![d, d + Duration::days(1)],
            r1: vec![0.1 + 0.2, -1e-17],
            rv1: vec![1.0 / 3.0, 0.0],
            r2: vec![-0.0123456789012345, 5.0],
            rv2: vec![2e-5, 7e-300],
            bars: vec![],
        };
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let back = DailyPanel::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, p);
        assert!(DailyPanel::read_csv("a,b\n".as_bytes()).is_err());
    }
}
