//! Price paths, log-return series and windowed statistics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SeriesError {
    #[error("non-positive price at index {0}")]
    NonPositivePrice(usize),
    #[error("price path needs at least 2 values, got {0}")]
    PathTooShort(usize),
    #[error("dates must be strictly increasing (violated at index {0})")]
    UnsortedDates(usize),
    #[error("dates length {dates} does not match values length {values}")]
    DateLengthMismatch { dates: usize, values: usize },
    #[error("non-finite return at index {0}")]
    NonFiniteReturn(usize),
    #[error("return series is empty")]
    EmptySeries,
    #[error("window {window} exceeds series length {len}")]
    WindowTooLong { window: usize, len: usize },
    #[error("window must be at least 2, got {0}")]
    WindowTooShort(usize),
    #[error("index {t} is smaller than lookback {lookback}")]
    LookbackOutOfRange { t: usize, lookback: usize },
}

/// Where a return series came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Real,
    Synthetic,
}

/// Strictly positive prices with optional date labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePath {
    values: Vec<f64>,
    dates: Option<Vec<String>>,
}

impl PricePath {
    /// Validates positivity and length. Dates are compared as given, so callers
    /// must pass labels whose ordering matches calendar ordering.
    pub fn new(values: Vec<f64>, dates: Option<Vec<String>>) -> Result<Self, SeriesError> {
        if values.len() < 2 {
            return Err(SeriesError::PathTooShort(values.len()));
        }
        if let Some(i) = values.iter().position(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(SeriesError::NonPositivePrice(i));
        }
        if let Some(d) = &dates {
            if d.len() != values.len() {
                return Err(SeriesError::DateLengthMismatch {
                    dates: d.len(),
                    values: values.len(),
                });
            }
        }
        Ok(Self { values, dates })
    }

    /// Rebuilds prices from a start level and log returns (cumulative exp).
    pub fn from_returns(start: f64, returns: &ReturnSeries) -> Result<Self, SeriesError> {
        let mut values = Vec::with_capacity(returns.len() + 1);
        let mut level = start.ln();
        values.push(start);
        for r in returns.values() {
            level += r;
            values.push(level.exp());
        }
        Self::new(values, None)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dates(&self) -> Option<&[String]> {
        self.dates.as_deref()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A finite sequence of per-day log returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSeries {
    values: Vec<f64>,
    origin: Origin,
    seed: Option<u64>,
}

impl ReturnSeries {
    pub fn new(values: Vec<f64>, origin: Origin, seed: Option<u64>) -> Result<Self, SeriesError> {
        if values.is_empty() {
            return Err(SeriesError::EmptySeries);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(SeriesError::NonFiniteReturn(i));
        }
        Ok(Self {
            values,
            origin,
            seed,
        })
    }

    pub fn real(values: Vec<f64>) -> Result<Self, SeriesError> {
        Self::new(values, Origin::Real, None)
    }

    pub fn synthetic(values: Vec<f64>, seed: Option<u64>) -> Result<Self, SeriesError> {
        Self::new(values, Origin::Synthetic, seed)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn origin(&self) -> Origin {
        self.origin
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Element-wise transform keeping provenance, e.g. `|r|` or `r²`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self, SeriesError> {
        Self::new(
            self.values.iter().map(|&v| f(v)).collect(),
            self.origin,
            self.seed,
        )
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Rolling sample standard deviations; `values[t]` covers `[t, t + window - 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RollingVolSeries {
    pub window: usize,
    pub values: Vec<f64>,
}

pub fn log_returns(path: &PricePath) -> ReturnSeries {
    let values = path
        .values
        .windows(2)
        .map(|w| (w[1] / w[0]).ln())
        .collect();
    // positive finite prices always give finite returns
    ReturnSeries {
        values,
        origin: Origin::Real,
        seed: None,
    }
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation with the n-1 divisor. Two-pass.
pub fn sample_std(x: &[f64]) -> f64 {
    let m = mean(x);
    let ss: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (x.len() as f64 - 1.0)).sqrt()
}

pub fn rolling_vol(r: &ReturnSeries, window: usize) -> Result<RollingVolSeries, SeriesError> {
    rolling_vol_slice(r.values(), window)
}

pub(crate) fn rolling_vol_slice(x: &[f64], window: usize) -> Result<RollingVolSeries, SeriesError> {
    if window < 2 {
        return Err(SeriesError::WindowTooShort(window));
    }
    if window > x.len() {
        return Err(SeriesError::WindowTooLong {
            window,
            len: x.len(),
        });
    }
    let values = x.windows(window).map(sample_std).collect();
    Ok(RollingVolSeries { window, values })
}

/// Sum of the `lookback` log returns strictly before index `t`.
pub fn trailing_cum_return(r: &ReturnSeries, lookback: usize, t: usize) -> Result<f64, SeriesError> {
    trailing_sum(r.values(), lookback, t)
}

pub(crate) fn trailing_sum(x: &[f64], lookback: usize, t: usize) -> Result<f64, SeriesError> {
    if lookback == 0 || t < lookback || t > x.len() {
        return Err(SeriesError::LookbackOutOfRange { t, lookback });
    }
    Ok(x[t - lookback..t].iter().sum())
}
