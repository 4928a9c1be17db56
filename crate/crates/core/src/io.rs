//! CSV ingestion and emission, and the TOML run configuration.

use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backtest::StrategyConfig;
use crate::garch::GarchParams;
use crate::series::{log_returns, PricePath, ReturnSeries, SeriesError};
use crate::trainer::TrainConfig;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}: header must be `date,close` or `date,return`")]
    Header(String),
    #[error("{path}: malformed row on line {line}: {reason}")]
    MalformedRow {
        path: String,
        line: u64,
        reason: String,
    },
    #[error("{path}: duplicate date {date} on lines {first} and {second}")]
    DuplicateDate {
        path: String,
        date: String,
        first: u64,
        second: u64,
    },
    #[error("{path}: non-positive close on line {line}")]
    NonPositiveClose { path: String, line: u64 },
    #[error("{path}: no data rows")]
    Empty { path: String },
    #[error("{path}: {source}")]
    Series { path: String, source: SeriesError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Close,
    Return,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Ingested {
    Prices(PricePath),
    Returns(ReturnSeries),
}

impl Ingested {
    pub fn kind(&self) -> ColumnKind {
        match self {
            Ingested::Prices(_) => ColumnKind::Close,
            Ingested::Returns(_) => ColumnKind::Return,
        }
    }

    /// Log returns of a price file, or the return file as read.
    pub fn returns(&self) -> ReturnSeries {
        match self {
            Ingested::Prices(p) => log_returns(p),
            Ingested::Returns(r) => r.clone(),
        }
    }
}

/// Either an ISO calendar date or a plain integer day index. A file may not mix them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum DateKey {
    Day(NaiveDate),
    Index(i64),
}

fn parse_date(s: &str) -> Option<DateKey> {
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Some(DateKey::Day(d));
    }
    s.parse::<i64>().ok().map(DateKey::Index)
}

struct Row {
    line: u64,
    key: DateKey,
    date: String,
    value: f64,
}

/// Reads a `date,close` or `date,return` file. Rows are sorted by date before
/// returns are formed; duplicate dates are rejected.
pub fn ingest_csv(path: &Path) -> Result<Ingested, IngestError> {
    let name = path.display().to_string();
    let bytes = fs::read(path).map_err(|source| IngestError::Io {
        path: name.clone(),
        source,
    })?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(bytes.as_slice());
    let header = rdr
        .headers()
        .map_err(|_| IngestError::Header(name.clone()))?
        .iter()
        .map(str::to_ascii_lowercase)
        .collect::<Vec<_>>();
    let kind = match header.iter().map(String::as_str).collect::<Vec<_>>()[..] {
        ["date", "close"] => ColumnKind::Close,
        ["date", "return"] => ColumnKind::Return,
        [] | [""] => return Err(IngestError::Empty { path: name }),
        _ => return Err(IngestError::Header(name)),
    };

    let mut rows = Vec::new();
    for rec in rdr.records() {
        let malformed = |line: u64, reason: String| IngestError::MalformedRow {
            path: name.clone(),
            line,
            reason,
        };
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            malformed(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 2 {
            return Err(malformed(line, format!("expected 2 fields, found {}", rec.len())));
        }
        let key = parse_date(&rec[0])
            .ok_or_else(|| malformed(line, format!("unparseable date {:?}", &rec[0])))?;
        let value: f64 = rec[1]
            .parse()
            .map_err(|_| malformed(line, format!("unparseable number {:?}", &rec[1])))?;
        if !value.is_finite() {
            return Err(malformed(line, "non-finite value".into()));
        }
        if kind == ColumnKind::Close && value <= 0.0 {
            return Err(IngestError::NonPositiveClose { path: name, line });
        }
        if let Some(first) = rows.first() {
            let first: &Row = first;
            if std::mem::discriminant(&first.key) != std::mem::discriminant(&key) {
                return Err(malformed(line, "mixes calendar dates and integer indices".into()));
            }
        }
        rows.push(Row {
            line,
            key,
            date: rec[0].to_string(),
            value,
        });
    }
    if rows.is_empty() {
        return Err(IngestError::Empty { path: name });
    }
    rows.sort_by_key(|r| r.key);
    for w in rows.windows(2) {
        if w[0].key == w[1].key {
            return Err(IngestError::DuplicateDate {
                path: name,
                date: w[1].date.clone(),
                first: w[0].line.min(w[1].line),
                second: w[0].line.max(w[1].line),
            });
        }
    }
    let dates: Vec<String> = rows.iter().map(|r| r.date.clone()).collect();
    let values: Vec<f64> = rows.iter().map(|r| r.value).collect();
    let series_err = |source| IngestError::Series {
        path: path.display().to_string(),
        source,
    };
    match kind {
        ColumnKind::Close => PricePath::new(values, Some(dates))
            .map(Ingested::Prices)
            .map_err(series_err),
        ColumnKind::Return => ReturnSeries::real(values)
            .map(Ingested::Returns)
            .map_err(series_err),
    }
}

/// Writes `date,return` with integer day indices. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_returns_csv(path: &Path, r: &[f64]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["date", "return"])?;
    for (i, v) in r.iter().enumerate() {
        w.write_record([i.to_string(), v.to_string()])?;
    }
    w.flush()
}

/// Writes a plain CSV table.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()
}

// ---------------------------------------------------------------------------
// configuration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub n: usize,
    pub garch: GarchParams,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            n: 5000,
            garch: GarchParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateConfig {
    pub n_paths: usize,
    /// Generated sequences laid end to end per path.
    pub windows: usize,
    /// Expected checkpoint sequence length, checked when set.
    pub seq_len: Option<usize>,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            n_paths: 10,
            windows: 8,
            seq_len: None,
        }
    }
}

/// One TOML file with a section per subcommand. A top-level `seed` applies
/// to every stage unless the command line overrides it.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub simulate: SimulateConfig,
    pub train: TrainConfig,
    pub generate: GenerateConfig,
    pub strategy: StrategyConfig,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config {path}: {source}")]
    Parse {
        path: String,
        source: Box<toml::de::Error>,
    },
}

impl RunConfig {
    pub fn from_toml_str(s: &str, path: &str) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig = toml::from_str(s).map_err(|e| ConfigError::Parse {
            path: path.to_string(),
            source: Box::new(e),
        })?;
        if let Some(seed) = cfg.seed {
            cfg.train.seed = seed;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let s = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&s, &path.display().to_string())
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self, ConfigError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.train.seed = seed;
    }

    /// Seed shared by simulate and generate when none is configured.
    pub fn seed_or_default(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}
