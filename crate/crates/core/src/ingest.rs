//! Daily precipitation/claims parsing, weekly aggregation and lagged
//! feature construction.
//!
//! Weeks are fixed 7-day blocks anchored at an origin date. A week is
//! emitted only when all seven of its days are present; a gap inside the
//! covered range is an error rather than something to impute.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_param, Error, Result};

/// Largest lag accepted in a feature column.
pub const MAX_LAG: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DailyRecord {
    pub date: NaiveDate,
    pub precip_mm: f64,
    /// Claim count, or claims per insured home when `insured` is present.
    pub claims: f64,
    pub insured: Option<u64>,
}

/// How daily claims are combined into the weekly `n`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClaimAggregation {
    #[default]
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Week {
    pub week_start: NaiveDate,
    /// Total precipitation over the week.
    pub x: f64,
    /// Largest single-day precipitation in the week.
    pub d: f64,
    /// Weekly claim level.
    pub n: f64,
}

/// Contiguous weekly observations with `d <= x` in every week.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeeklySeries {
    weeks: Vec<Week>,
}

impl WeeklySeries {
    pub fn new(weeks: Vec<Week>) -> Result<Self> {
        for (i, w) in weeks.iter().enumerate() {
            if !(w.x >= 0.0 && w.d >= 0.0 && w.n >= 0.0) {
                return Err(Error::Data(format!(
                    "week {} ({}) has a negative or non-finite value",
                    i, w.week_start
                )));
            }
            if w.d > w.x {
                return Err(Error::Data(format!(
                    "week {} ({}): max daily precipitation {} exceeds weekly total {}",
                    i, w.week_start, w.d, w.x
                )));
            }
            if i > 0 && (w.week_start - weeks[i - 1].week_start).num_days() != 7 {
                return Err(Error::Data(format!(
                    "weeks not contiguous between {} and {}",
                    weeks[i - 1].week_start, w.week_start
                )));
            }
        }
        Ok(WeeklySeries { weeks })
    }

    pub fn weeks(&self) -> &[Week] {
        &self.weeks
    }

    pub fn len(&self) -> usize {
        self.weeks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weeks.is_empty()
    }

    pub fn into_weeks(self) -> Vec<Week> {
        self.weeks
    }
}

fn parse_field<T: FromStr>(raw: &str, what: &str, source_name: &str, line: u64) -> Result<T> {
    raw.trim().parse::<T>().map_err(|_| Error::DataAt {
        source_name: source_name.to_string(),
        line,
        msg: format!("cannot parse {what} from '{raw}'"),
    })
}

/// Reads a daily CSV (`date,precip_mm,claims[,insured]`) from any reader.
pub fn parse_daily_reader<R: Read>(reader: R, source_name: &str) -> Result<Vec<DailyRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    let has_insured = match names.as_slice() {
        ["date", "precip_mm", "claims"] => false,
        ["date", "precip_mm", "claims", "insured"] => true,
        _ => {
            return Err(Error::DataAt {
                source_name: source_name.to_string(),
                line: 1,
                msg: format!(
                    "header must be 'date,precip_mm,claims[,insured]', found '{}'",
                    names.join(",")
                ),
            })
        }
    };

    let mut out: Vec<DailyRecord> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::DataAt {
                source_name: source_name.to_string(),
                line,
                msg: format!("malformed row: {e}"),
            }
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let bad = |msg: String| Error::DataAt {
            source_name: source_name.to_string(),
            line,
            msg,
        };
        let date: NaiveDate = parse_field(&rec[0], "date", source_name, line)?;
        let precip_mm: f64 = parse_field(&rec[1], "precip_mm", source_name, line)?;
        let mut claims: f64 = parse_field(&rec[2], "claims", source_name, line)?;
        if !precip_mm.is_finite() || precip_mm < 0.0 {
            return Err(bad(format!("precip_mm must be non-negative, got {precip_mm}")));
        }
        if !claims.is_finite() || claims < 0.0 {
            return Err(bad(format!("claims must be non-negative, got {claims}")));
        }
        let insured = if has_insured {
            let v: u64 = parse_field(&rec[3], "insured", source_name, line)?;
            if v == 0 {
                return Err(bad("insured must be positive".to_string()));
            }
            claims /= v as f64;
            Some(v)
        } else {
            None
        };
        if let Some(prev) = out.last() {
            if date <= prev.date {
                return Err(bad(format!(
                    "dates must be strictly increasing: {} follows {}",
                    date, prev.date
                )));
            }
        }
        out.push(DailyRecord {
            date,
            precip_mm,
            claims,
            insured,
        });
    }
    Ok(out)
}

pub fn parse_daily_csv(path: impl AsRef<Path>) -> Result<Vec<DailyRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_daily_reader(file, &path.display().to_string())
}

pub fn write_daily_csv<W: Write>(writer: W, days: &[DailyRecord]) -> Result<()> {
    let with_insured = days.iter().any(|d| d.insured.is_some());
    let mut w = csv::Writer::from_writer(writer);
    if with_insured {
        w.write_record(["date", "precip_mm", "claims", "insured"])?;
    } else {
        w.write_record(["date", "precip_mm", "claims"])?;
    }
    for d in days {
        let date = d.date.to_string();
        let precip = d.precip_mm.to_string();
        match d.insured {
            // stored claims are normalized; write back the raw count
            Some(ins) => w.write_record([
                date,
                precip,
                (d.claims * ins as f64).to_string(),
                ins.to_string(),
            ])?,
            None => w.write_record([date, precip, d.claims.to_string()])?,
        }
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Aggregates consecutive daily records into 7-day weeks starting at
/// `week_origin` (the first date when `None`). Weeks not fully covered by
/// the records are dropped.
pub fn aggregate_weekly(
    days: &[DailyRecord],
    week_origin: Option<NaiveDate>,
    mode: ClaimAggregation,
) -> Result<WeeklySeries> {
    if days.len() < 7 {
        return Err(Error::Data(format!(
            "need at least 7 daily records to form a week, got {}",
            days.len()
        )));
    }
    let first = days[0].date;
    let origin = week_origin.unwrap_or(first);
    ensure_param!(
        origin <= first,
        "week origin {origin} is after the first record {first}"
    );
    for pair in days.windows(2) {
        if (pair[1].date - pair[0].date).num_days() != 1 {
            return Err(Error::Data(format!(
                "missing daily records between {} and {}",
                pair[0].date, pair[1].date
            )));
        }
    }

    // index of the first day of the first fully covered week
    let offset = (first - origin).num_days().rem_euclid(7) as usize;
    let skip = if offset == 0 { 0 } else { 7 - offset };
    let mut weeks = Vec::new();
    for block in days[skip.min(days.len())..].chunks_exact(7) {
        let x: f64 = block.iter().map(|r| r.precip_mm).sum();
        let d = block.iter().map(|r| r.precip_mm).fold(0.0, f64::max);
        let total: f64 = block.iter().map(|r| r.claims).sum();
        let n = match mode {
            ClaimAggregation::Mean => total / 7.0,
            ClaimAggregation::Sum => total,
        };
        weeks.push(Week {
            week_start: block[0].date,
            x,
            d,
            n,
        });
    }
    if weeks.is_empty() {
        return Err(Error::Data("no complete week in daily records".to_string()));
    }
    WeeklySeries::new(weeks)
}

pub fn write_weekly_csv<W: Write>(writer: W, series: &WeeklySeries) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["week_start", "x", "d", "n"])?;
    for wk in series.weeks() {
        w.write_record([
            wk.week_start.to_string(),
            wk.x.to_string(),
            wk.d.to_string(),
            wk.n.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn read_weekly_csv<R: Read>(reader: R) -> Result<WeeklySeries> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut weeks = Vec::new();
    for rec in rdr.deserialize() {
        weeks.push(rec?);
    }
    WeeklySeries::new(weeks)
}

/// One projected week of precipitation under a named climate scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioWeek {
    pub week_start: NaiveDate,
    pub scenario_id: String,
    pub x: f64,
    pub d: f64,
}

/// Names of the six downscaled climate model runs used for projections.
pub const DEFAULT_SCENARIOS: [&str; 6] = [
    "CanESM2-CanRCM4-RCP4.5",
    "CanESM2-CanRCM4-RCP8.5",
    "GFDL-ESM2M-RegCM4-RCP8.5",
    "GFDL-ESM2M-WRF-RCP8.5",
    "MPI-ESM-LR-RegCM4-RCP8.5",
    "HadGEM2-ES-RegCM4-RCP8.5",
];

/// Scenario weeks grouped by scenario, in order of first appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    pub scenarios: Vec<(String, Vec<ScenarioWeek>)>,
}

impl ScenarioSet {
    pub fn ids(&self) -> Vec<&str> {
        self.scenarios.iter().map(|(id, _)| id.as_str()).collect()
    }
}

/// Reads `week_start,scenario_id,x,d`; every scenario id must be in `allowed`.
pub fn read_scenario_csv<R: Read>(reader: R, allowed: &[String]) -> Result<ScenarioSet> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if headers != ["week_start", "scenario_id", "x", "d"] {
        return Err(Error::Data(format!(
            "scenario header must be 'week_start,scenario_id,x,d', found '{}'",
            headers.join(",")
        )));
    }
    let mut scenarios: Vec<(String, Vec<ScenarioWeek>)> = Vec::new();
    for rec in rdr.deserialize::<ScenarioWeek>() {
        let row = rec?;
        if !allowed.iter().any(|a| a == &row.scenario_id) {
            return Err(Error::Data(format!("unknown scenario id '{}'", row.scenario_id)));
        }
        if !(row.x >= 0.0 && row.d >= 0.0 && row.d <= row.x) {
            return Err(Error::Data(format!(
                "scenario {} week {}: need 0 <= d <= x, got x={} d={}",
                row.scenario_id, row.week_start, row.x, row.d
            )));
        }
        match scenarios.iter_mut().find(|(id, _)| id == &row.scenario_id) {
            Some((_, weeks)) => {
                let prev = weeks.last().expect("non-empty group").week_start;
                if (row.week_start - prev).num_days() != 7 {
                    return Err(Error::Data(format!(
                        "scenario {} weeks not contiguous at {}",
                        row.scenario_id, row.week_start
                    )));
                }
                weeks.push(row);
            }
            None => scenarios.push((row.scenario_id.clone(), vec![row])),
        }
    }
    Ok(ScenarioSet { scenarios })
}

pub fn write_scenario_csv<W: Write>(writer: W, set: &ScenarioSet) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["week_start", "scenario_id", "x", "d"])?;
    for (_, weeks) in &set.scenarios {
        for wk in weeks {
            w.write_record([
                wk.week_start.to_string(),
                wk.scenario_id.clone(),
                wk.x.to_string(),
                wk.d.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// A lagged covariate: weekly total (`X_t-k`) or weekly daily maximum (`D_t-k`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureColumn {
    Precip { lag: usize },
    MaxDaily { lag: usize },
}

impl FeatureColumn {
    pub fn lag(&self) -> usize {
        match *self {
            FeatureColumn::Precip { lag } | FeatureColumn::MaxDaily { lag } => lag,
        }
    }
}

impl fmt::Display for FeatureColumn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (sym, lag) = match *self {
            FeatureColumn::Precip { lag } => ('X', lag),
            FeatureColumn::MaxDaily { lag } => ('D', lag),
        };
        if lag == 0 {
            write!(f, "{sym}_t")
        } else {
            write!(f, "{sym}_t-{lag}")
        }
    }
}

impl FromStr for FeatureColumn {
    type Err = Error;

    /// Accepts `X_t`, `X_t-2`, `X_{t-2}` and the same for `D`.
    fn from_str(s: &str) -> Result<Self> {
        let unknown = || Error::InvalidParameter(format!("unknown feature column '{s}'"));
        let s_norm: String = s
            .trim()
            .chars()
            .filter(|c| !matches!(c, '{' | '}' | ' '))
            .map(|c| if c == '−' { '-' } else { c })
            .collect();
        let (sym, rest) = s_norm.split_at_checked(1).ok_or_else(unknown)?;
        let rest = rest.strip_prefix("_t").ok_or_else(unknown)?;
        let lag = if rest.is_empty() {
            0
        } else {
            rest.strip_prefix('-')
                .and_then(|k| k.parse::<usize>().ok())
                .ok_or_else(unknown)?
        };
        if lag > MAX_LAG {
            return Err(Error::InvalidParameter(format!(
                "lag {lag} in '{s}' exceeds the maximum lag {MAX_LAG}"
            )));
        }
        match sym {
            "X" | "x" => Ok(FeatureColumn::Precip { lag }),
            "D" | "d" => Ok(FeatureColumn::MaxDaily { lag }),
            _ => Err(unknown()),
        }
    }
}

impl Serialize for FeatureColumn {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FeatureColumn {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub fn parse_columns<S: AsRef<str>>(names: &[S]) -> Result<Vec<FeatureColumn>> {
    names.iter().map(|n| n.as_ref().parse()).collect()
}

/// Per-column standardization parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Scaler {
    /// Column means and sample standard deviations (n-1 denominator) of
    /// `rows`. Zero-variance columns get sd 1 so they map to 0.
    pub fn fit(rows: &[Vec<f64>], width: usize) -> Self {
        let n = rows.len() as f64;
        let mut mean = vec![0.0; width];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; width];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let denom = (n - 1.0).max(1.0);
        let sd = var
            .into_iter()
            .map(|s| {
                let sd = (s / denom).sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Scaler { mean, sd }
    }

    pub fn apply(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.sd) {
            *v = (*v - m) / s;
        }
    }
}

/// Lagged design matrix and target for one candidate model.
///
/// `scaler` is `None` while rows hold raw millimetre values; once set, rows
/// are standardized with it. `target` is empty for unlabeled (scenario)
/// frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureFrame {
    pub columns: Vec<FeatureColumn>,
    pub week_start: Vec<NaiveDate>,
    pub rows: Vec<Vec<f64>>,
    pub target: Vec<f64>,
    pub scaler: Option<Scaler>,
}

impl FeatureFrame {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    /// Standardizes raw rows with an existing scaler (e.g. one fitted on
    /// the control-period training split).
    pub fn standardize_with(mut self, scaler: &Scaler) -> Result<Self> {
        ensure_param!(self.scaler.is_none(), "frame is already standardized");
        ensure_param!(
            scaler.mean.len() == self.width(),
            "scaler has {} columns, frame has {}",
            scaler.mean.len(),
            self.width()
        );
        for r in &mut self.rows {
            scaler.apply(r);
        }
        self.scaler = Some(scaler.clone());
        Ok(self)
    }

    fn slice(&self, range: std::ops::Range<usize>) -> FeatureFrame {
        FeatureFrame {
            columns: self.columns.clone(),
            week_start: self.week_start[range.clone()].to_vec(),
            rows: self.rows[range.clone()].to_vec(),
            target: if self.target.is_empty() {
                Vec::new()
            } else {
                self.target[range].to_vec()
            },
            scaler: self.scaler.clone(),
        }
    }
}

fn check_columns(columns: &[FeatureColumn]) -> Result<usize> {
    ensure_param!(!columns.is_empty(), "feature column list is empty");
    let max_lag = columns.iter().map(FeatureColumn::lag).max().unwrap_or(0);
    ensure_param!(max_lag <= MAX_LAG, "lag {max_lag} exceeds maximum {MAX_LAG}");
    Ok(max_lag)
}

fn lagged_rows(x: &[f64], d: &[f64], columns: &[FeatureColumn], max_lag: usize) -> Vec<Vec<f64>> {
    (max_lag..x.len())
        .map(|t| {
            columns
                .iter()
                .map(|c| match *c {
                    FeatureColumn::Precip { lag } => x[t - lag],
                    FeatureColumn::MaxDaily { lag } => d[t - lag],
                })
                .collect()
        })
        .collect()
}

/// Builds the raw (unstandardized) lagged frame; the first `max lag` weeks
/// are dropped. Standardization happens in [`split_train_test`].
pub fn build_features(series: &WeeklySeries, columns: &[FeatureColumn]) -> Result<FeatureFrame> {
    let max_lag = check_columns(columns)?;
    let weeks = series.weeks();
    let x: Vec<f64> = weeks.iter().map(|w| w.x).collect();
    let d: Vec<f64> = weeks.iter().map(|w| w.d).collect();
    let start = max_lag.min(weeks.len());
    Ok(FeatureFrame {
        columns: columns.to_vec(),
        week_start: weeks[start..].iter().map(|w| w.week_start).collect(),
        rows: lagged_rows(&x, &d, columns, max_lag),
        target: weeks[start..].iter().map(|w| w.n).collect(),
        scaler: None,
    })
}

/// Unlabeled lagged frame over one scenario's projected weeks.
pub fn build_scenario_features(weeks: &[ScenarioWeek], columns: &[FeatureColumn]) -> Result<FeatureFrame> {
    let max_lag = check_columns(columns)?;
    let x: Vec<f64> = weeks.iter().map(|w| w.x).collect();
    let d: Vec<f64> = weeks.iter().map(|w| w.d).collect();
    let start = max_lag.min(weeks.len());
    Ok(FeatureFrame {
        columns: columns.to_vec(),
        week_start: weeks[start..].iter().map(|w| w.week_start).collect(),
        rows: lagged_rows(&x, &d, columns, max_lag),
        target: Vec::new(),
        scaler: None,
    })
}

/// Number of training rows for a chronological split: `ceil(fraction * rows)`,
/// with products that are integral up to rounding noise taken as exact.
pub fn train_rows(rows: usize, fraction: f64) -> usize {
    let prod = fraction * rows as f64;
    let nearest = prod.round();
    if (prod - nearest).abs() < 1e-9 {
        nearest as usize
    } else {
        prod.ceil() as usize
    }
}

/// Chronological split. When the frame is still raw, the scaler is fitted
/// on the training part and applied to both parts.
pub fn split_train_test(frame: &FeatureFrame, fraction: f64) -> Result<(FeatureFrame, FeatureFrame)> {
    ensure_param!(
        fraction > 0.0 && fraction < 1.0,
        "split fraction must lie in (0,1), got {fraction}"
    );
    ensure_param!(!frame.is_empty(), "cannot split an empty frame");
    let cut = train_rows(frame.len(), fraction);
    ensure_param!(
        cut < frame.len(),
        "split fraction {fraction} leaves no test rows out of {}",
        frame.len()
    );
    let mut train = frame.slice(0..cut);
    let mut test = frame.slice(cut..frame.len());
    if frame.scaler.is_none() {
        let scaler = Scaler::fit(&train.rows, frame.width());
        train = train.standardize_with(&scaler)?;
        test = test.standardize_with(&scaler)?;
    }
    Ok((train, test))
}
