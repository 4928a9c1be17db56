//! Trailing-return momentum strategy and its risk/performance metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::series::{mean, sample_std, trailing_sum, ReturnSeries};
use crate::stats::{quantile_lower, sorted};

pub const TRADING_DAYS: f64 = 252.0;
/// Fewest daily returns for which a 95% empirical quantile is reported.
pub const MIN_VAR_DAYS: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BacktestError {
    #[error("series of {len} returns is too short, need at least {required}")]
    TooShort { len: usize, required: usize },
    #[error("no daily returns")]
    Empty,
    #[error("volatility needs at least 2 daily returns, got {0}")]
    TooFewForVol(usize),
    #[error("undefined Sharpe: zero volatility")]
    UndefinedSharpe,
    #[error("VaR needs at least {MIN_VAR_DAYS} daily returns, got {0}")]
    TooFewForVar(usize),
    #[error("invalid strategy config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rebalance {
    #[default]
    Daily,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrategyConfig {
    pub lookback: usize,
    /// Cost per unit of position change, in basis points.
    pub cost_bps: f64,
    pub rebalance: Rebalance,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            lookback: 60,
            cost_bps: 5.0,
            rebalance: Rebalance::Daily,
        }
    }
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<(), BacktestError> {
        if self.lookback == 0 {
            return Err(BacktestError::Config("lookback must be >= 1".into()));
        }
        if !(self.cost_bps >= 0.0 && self.cost_bps.is_finite()) {
            return Err(BacktestError::Config("cost_bps must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BacktestResult {
    pub ann_return: f64,
    pub ann_vol: f64,
    /// `None` when volatility is zero.
    pub sharpe: Option<f64>,
    pub max_drawdown: f64,
    /// Signed (losses negative). `None` below [`MIN_VAR_DAYS`] days.
    pub var95: Option<f64>,
    pub cvar95: Option<f64>,
    pub n_days: usize,
    pub n_trades: usize,
}

/// Daily positions in `{-1, +1}` for `t = lookback..n`; a zero trailing sum is long.
pub fn positions(r: &[f64], lookback: usize) -> Result<Vec<f64>, BacktestError> {
    if r.len() < lookback + 2 {
        return Err(BacktestError::TooShort {
            len: r.len(),
            required: lookback + 2,
        });
    }
    (lookback..r.len())
        .map(|t| {
            let s = trailing_sum(r, lookback, t).expect("t >= lookback");
            Ok(if s >= 0.0 { 1.0 } else { -1.0 })
        })
        .collect()
}

/// Strategy daily returns `s_t r_t − c |s_t − s_{t−1}|` (entry from flat is
/// charged) and the summary metrics.
pub fn run_momentum(r: &ReturnSeries, cfg: &StrategyConfig) -> Result<(Vec<f64>, BacktestResult), BacktestError> {
    cfg.validate()?;
    let x = r.values();
    let pos = positions(x, cfg.lookback)?;
    let cost = cfg.cost_bps / 10_000.0;
    let mut prev = 0.0;
    let mut n_trades = 0;
    let daily: Vec<f64> = pos
        .iter()
        .zip(&x[cfg.lookback..])
        .map(|(&s, &rt)| {
            let turnover = (s - prev).abs();
            if turnover > 0.0 {
                n_trades += 1;
            }
            prev = s;
            s * rt - cost * turnover
        })
        .collect();
    let result = summarize(&daily, n_trades)?;
    Ok((daily, result))
}

pub fn summarize(daily: &[f64], n_trades: usize) -> Result<BacktestResult, BacktestError> {
    let ann_return = annualized_return(daily)?;
    let ann_vol = annualized_vol(daily)?;
    let (var95, cvar95) = match var_cvar(daily, 0.95) {
        Ok((v, c)) => (Some(v), Some(c)),
        Err(BacktestError::TooFewForVar(_)) => (None, None),
        Err(e) => return Err(e),
    };
    Ok(BacktestResult {
        ann_return,
        ann_vol,
        sharpe: (ann_vol > 0.0).then(|| ann_return / ann_vol),
        max_drawdown: max_drawdown(daily)?,
        var95,
        cvar95,
        n_days: daily.len(),
        n_trades,
    })
}

pub fn annualized_return(daily: &[f64]) -> Result<f64, BacktestError> {
    if daily.is_empty() {
        return Err(BacktestError::Empty);
    }
    Ok(mean(daily) * TRADING_DAYS)
}

pub fn annualized_vol(daily: &[f64]) -> Result<f64, BacktestError> {
    if daily.len() < 2 {
        return Err(BacktestError::TooFewForVol(daily.len()));
    }
    Ok(sample_std(daily) * TRADING_DAYS.sqrt())
}

pub fn sharpe(daily: &[f64]) -> Result<f64, BacktestError> {
    let vol = annualized_vol(daily)?;
    if vol == 0.0 {
        return Err(BacktestError::UndefinedSharpe);
    }
    Ok(annualized_return(daily)? / vol)
}

/// Largest peak-to-trough fall of `E_t = Π(1 + d_i)`, `E_0 = 1`. Equity is
/// floored at zero, so the result lies in `[0, 1]`.
pub fn max_drawdown(daily: &[f64]) -> Result<f64, BacktestError> {
    if daily.is_empty() {
        return Err(BacktestError::Empty);
    }
    let mut equity = 1.0f64;
    let mut peak = 1.0f64;
    let mut worst = 0.0f64;
    for &d in daily {
        equity = (equity * (1.0 + d)).max(0.0);
        peak = peak.max(equity);
        worst = worst.max((peak - equity) / peak);
    }
    Ok(worst)
}

/// Lower-interpolated `(1 − level)` quantile and the mean of returns at or below it.
pub fn var_cvar(daily: &[f64], level: f64) -> Result<(f64, f64), BacktestError> {
    if daily.len() < MIN_VAR_DAYS {
        return Err(BacktestError::TooFewForVar(daily.len()));
    }
    let s = sorted(daily);
    let var = quantile_lower(&s, 1.0 - level);
    let tail: Vec<f64> = s.iter().copied().take_while(|&v| v <= var).collect();
    Ok((var, mean(&tail)))
}
