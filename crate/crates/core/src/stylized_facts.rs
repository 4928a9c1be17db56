//! Estimation-grade stylized-fact statistics and real/synthetic gap reports.
//!
//! These are the evaluation-side measurements: a peaks-over-threshold GPD
//! fit for the loss tail, the ACF of absolute returns, the return/future
//! volatility (leverage) correlation, and the cross-scale realized volatility
//! correlation matrix. None of them are differentiable; see
//! [`crate::diff_losses`] for the training-side surrogates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::series::{rolling_vol_slice, ReturnSeries};
use crate::stats::{lower_index, pearson, sorted};

pub const DEFAULT_TAIL_QUANTILE: f64 = 0.95;
pub const DEFAULT_ACF_LAGS: usize = 20;
pub const DEFAULT_LEVERAGE_HORIZON: usize = 20;
pub const CFVC_WINDOWS: [usize; 4] = [5, 20, 60, 120];
pub const MIN_EXCEEDANCES: usize = 30;

/// Tail index search interval for the profile likelihood.
const XI_BOUNDS: (f64, f64) = (-0.5, 1.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FactError {
    #[error("only {found} exceedances above the threshold, need at least {required}")]
    TooFewExceedances { found: usize, required: usize },
    #[error("degenerate tail: all exceedances identical")]
    DegenerateTail,
    #[error("zero variance")]
    ZeroVariance,
    #[error("degenerate variance")]
    DegenerateVariance,
    #[error("series of length {len} too short, need at least {required}")]
    TooShort { len: usize, required: usize },
    #[error("no synthetic runs supplied")]
    NoRuns,
    #[error("{estimator} on {side} series: {source}")]
    Estimator {
        estimator: &'static str,
        side: &'static str,
        #[source]
        source: Box<FactError>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tail {
    Upper,
    Lower,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpdFit {
    pub threshold: f64,
    pub xi: f64,
    pub beta: f64,
    pub n_exceed: usize,
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcfVector {
    /// `values[k - 1]` is the lag-`k` autocorrelation.
    pub values: Vec<f64>,
}

impl AcfVector {
    pub fn max_lag(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfvcMatrix {
    pub windows: Vec<usize>,
    pub corr: Vec<Vec<f64>>,
}

impl CfvcMatrix {
    pub fn frobenius_distance(&self, other: &CfvcMatrix) -> f64 {
        self.corr
            .iter()
            .flatten()
            .zip(other.corr.iter().flatten())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Gap statistics between one real and one synthetic series.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StylizedFactReport {
    pub gpd_gap: f64,
    pub acf_gap: f64,
    pub leverage_gap: f64,
    pub cfvc_gap: f64,
}

/// The four measured facts of a single series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StylizedFacts {
    pub gpd_lower: GpdFit,
    pub acf_abs: AcfVector,
    pub leverage: f64,
    pub cfvc: CfvcMatrix,
}

// ---------------------------------------------------------------------------
// GPD peaks over threshold

/// GPD log-likelihood of exceedances `y > 0`; `-inf` outside the support.
pub fn gpd_log_likelihood(y: &[f64], xi: f64, beta: f64) -> f64 {
    if !(beta > 0.0) {
        return f64::NEG_INFINITY;
    }
    let n = y.len() as f64;
    if xi.abs() < 1e-12 {
        return -n * beta.ln() - y.iter().sum::<f64>() / beta;
    }
    let mut acc = 0.0;
    for &v in y {
        let t = 1.0 + xi * v / beta;
        if t <= 0.0 {
            return f64::NEG_INFINITY;
        }
        acc += t.ln();
    }
    -n * beta.ln() - (1.0 + 1.0 / xi) * acc
}

/// Scale maximizing the likelihood for a fixed `xi`: the root in `beta` of
/// `(1 + xi) Σ y/(beta + xi y) = n`, which is monotone on the support.
fn profile_beta(y: &[f64], xi: f64, y_mean: f64, y_max: f64) -> f64 {
    if xi.abs() < 1e-12 {
        return y_mean;
    }
    let n = y.len() as f64;
    let excess = |beta: f64| (1.0 + xi) * y.iter().map(|v| v / (beta + xi * v)).sum::<f64>() - n;
    let mut lo = if xi < 0.0 { -xi * y_max } else { 0.0 };
    let mut hi = y_mean.max(f64::MIN_POSITIVE) * (1.0 + xi.abs()) * 2.0 + lo;
    while excess(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if excess(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Brent's method for a minimum of `f` on `[a, b]`.
fn brent_minimize(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> (f64, f64) {
    const GOLDEN: f64 = 0.381_966_011_250_105_1;
    let (mut a, mut b) = (a, b);
    let mut x = a + GOLDEN * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = f(x);
    let (mut fw, mut fv) = (fx, fx);
    let (mut d, mut e) = (0.0f64, 0.0f64);
    for _ in 0..500 {
        let m = 0.5 * (a + b);
        let tol1 = tol * x.abs() + 1e-12;
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            if p.abs() < (0.5 * q * e).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if x < m { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x < m { b - x } else { a - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else {
            x + tol1.copysign(d)
        };
        let fu = f(u);
        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            (v, fv) = (w, fw);
            (w, fw) = (x, fx);
            (x, fx) = (u, fu);
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                (v, fv) = (w, fw);
                (w, fw) = (u, fu);
            } else if fu <= fv || v == x || v == w {
                (v, fv) = (u, fu);
            }
        }
    }
    (x, fx)
}

/// Maximum-likelihood GPD fit to exceedances (all `> 0`) by profiling the
/// likelihood over the tail index.
pub fn fit_gpd(exceedances: &[f64]) -> Result<(f64, f64, f64), FactError> {
    if exceedances.len() < MIN_EXCEEDANCES {
        return Err(FactError::TooFewExceedances {
            found: exceedances.len(),
            required: MIN_EXCEEDANCES,
        });
    }
    let first = exceedances[0];
    if exceedances.iter().all(|&v| v == first) {
        return Err(FactError::DegenerateTail);
    }
    let y_mean = exceedances.iter().sum::<f64>() / exceedances.len() as f64;
    let y_max = exceedances.iter().copied().fold(f64::MIN, f64::max);
    let neg_profile = |xi: f64| {
        let beta = profile_beta(exceedances, xi, y_mean, y_max);
        let ll = gpd_log_likelihood(exceedances, xi, beta);
        if ll.is_finite() {
            -ll
        } else {
            f64::INFINITY
        }
    };
    let (lo, hi) = XI_BOUNDS;
    let mut best = brent_minimize(neg_profile, lo, hi, 1e-10);
    for edge in [lo, hi] {
        let f = neg_profile(edge);
        if f < best.1 {
            best = (edge, f);
        }
    }
    let xi = best.0;
    let beta = profile_beta(exceedances, xi, y_mean, y_max);
    Ok((xi, beta, -best.1))
}

/// Peaks-over-threshold fit. The threshold is the lower-interpolated
/// `quantile` of `r` (of `-r` for the lower tail); exceedances are the
/// strictly larger values minus the threshold.
pub fn fit_gpd_pot(r: &ReturnSeries, quantile: f64, tail: Tail) -> Result<GpdFit, FactError> {
    let x: Vec<f64> = match tail {
        Tail::Upper => r.values().to_vec(),
        Tail::Lower => r.values().iter().map(|v| -v).collect(),
    };
    let s = sorted(&x);
    let threshold = s[lower_index(s.len(), quantile)];
    let y: Vec<f64> = s.iter().filter(|&&v| v > threshold).map(|v| v - threshold).collect();
    let (xi, beta, log_likelihood) = fit_gpd(&y)?;
    Ok(GpdFit {
        threshold,
        xi,
        beta,
        n_exceed: y.len(),
        log_likelihood,
    })
}

// ---------------------------------------------------------------------------
// ACF, leverage, CFVC

/// Biased sample ACF for lags `1..=max_lag` with the full-sample mean.
pub fn acf(x: &[f64], max_lag: usize) -> Result<AcfVector, FactError> {
    if x.len() <= max_lag + 1 {
        return Err(FactError::TooShort {
            len: x.len(),
            required: max_lag + 2,
        });
    }
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let d: Vec<f64> = x.iter().map(|v| v - m).collect();
    let denom: f64 = d.iter().map(|v| v * v).sum();
    if !(denom > 0.0) {
        return Err(FactError::ZeroVariance);
    }
    let values = (1..=max_lag)
        .map(|k| {
            let num: f64 = d[..d.len() - k].iter().zip(&d[k..]).map(|(a, b)| a * b).sum();
            (num / denom).clamp(-1.0, 1.0)
        })
        .collect();
    Ok(AcfVector { values })
}

/// Correlation between `r[t]` and the realized volatility of `r[t+1..=t+horizon]`.
pub fn leverage_corr(r: &ReturnSeries, horizon: usize) -> Result<f64, FactError> {
    let x = r.values();
    if horizon < 2 || x.len() < horizon + 2 {
        return Err(FactError::TooShort {
            len: x.len(),
            required: horizon.max(2) + 2,
        });
    }
    let vol = rolling_vol_slice(x, horizon).expect("length checked").values;
    let m = x.len() - horizon;
    pearson(&x[..m], &vol[1..=m]).ok_or(FactError::DegenerateVariance)
}

pub fn cfvc_matrix(r: &ReturnSeries) -> Result<CfvcMatrix, FactError> {
    let x = r.values();
    let wmax = *CFVC_WINDOWS.iter().max().expect("non-empty");
    if x.len() < wmax + 2 {
        return Err(FactError::TooShort {
            len: x.len(),
            required: wmax + 2,
        });
    }
    let common = x.len() - wmax + 1;
    // end-aligned: entry j of every series is a window ending at the same day
    let vols: Vec<Vec<f64>> = CFVC_WINDOWS
        .iter()
        .map(|&w| {
            let v = rolling_vol_slice(x, w).expect("length checked").values;
            v[v.len() - common..].to_vec()
        })
        .collect();
    let k = vols.len();
    let mut corr = vec![vec![1.0; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let c = pearson(&vols[i], &vols[j]).ok_or(FactError::DegenerateVariance)?;
            corr[i][j] = c;
            corr[j][i] = c;
        }
    }
    Ok(CfvcMatrix {
        windows: CFVC_WINDOWS.to_vec(),
        corr,
    })
}

// ---------------------------------------------------------------------------
// Reports

fn tag<T>(res: Result<T, FactError>, estimator: &'static str, side: &'static str) -> Result<T, FactError> {
    res.map_err(|e| FactError::Estimator {
        estimator,
        side,
        source: Box::new(e),
    })
}

impl StylizedFacts {
    pub fn measure(r: &ReturnSeries, side: &'static str) -> Result<Self, FactError> {
        let abs: Vec<f64> = r.values().iter().map(|v| v.abs()).collect();
        Ok(Self {
            gpd_lower: tag(fit_gpd_pot(r, DEFAULT_TAIL_QUANTILE, Tail::Lower), "fit_gpd_pot", side)?,
            acf_abs: tag(acf(&abs, DEFAULT_ACF_LAGS), "acf", side)?,
            leverage: tag(leverage_corr(r, DEFAULT_LEVERAGE_HORIZON), "leverage_corr", side)?,
            cfvc: tag(cfvc_matrix(r), "cfvc_matrix", side)?,
        })
    }

    pub fn gap(&self, other: &StylizedFacts) -> StylizedFactReport {
        let k = self.acf_abs.values.len() as f64;
        let acf_gap = self
            .acf_abs
            .values
            .iter()
            .zip(&other.acf_abs.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / k;
        StylizedFactReport {
            gpd_gap: (self.gpd_lower.xi - other.gpd_lower.xi).abs(),
            acf_gap,
            leverage_gap: (self.leverage - other.leverage).abs(),
            cfvc_gap: self.cfvc.frobenius_distance(&other.cfvc),
        }
    }
}

pub fn gap_report(real: &ReturnSeries, synth: &ReturnSeries) -> Result<StylizedFactReport, FactError> {
    let a = StylizedFacts::measure(real, "real")?;
    let b = StylizedFacts::measure(synth, "synthetic")?;
    Ok(a.gap(&b))
}

/// Element-wise mean over a list of reports.
pub fn mean_report(reports: &[StylizedFactReport]) -> Result<StylizedFactReport, FactError> {
    if reports.is_empty() {
        return Err(FactError::NoRuns);
    }
    let n = reports.len() as f64;
    let mut m = StylizedFactReport::default();
    for r in reports {
        m.gpd_gap += r.gpd_gap;
        m.acf_gap += r.acf_gap;
        m.leverage_gap += r.leverage_gap;
        m.cfvc_gap += r.cfvc_gap;
    }
    m.gpd_gap /= n;
    m.acf_gap /= n;
    m.leverage_gap /= n;
    m.cfvc_gap /= n;
    Ok(m)
}

/// Average gap of several synthetic runs against one real series.
pub fn multi_seed_gap(real: &ReturnSeries, runs: &[ReturnSeries]) -> Result<StylizedFactReport, FactError> {
    if runs.is_empty() {
        return Err(FactError::NoRuns);
    }
    let real_facts = StylizedFacts::measure(real, "real")?;
    let reports = runs
        .iter()
        .map(|s| StylizedFacts::measure(s, "synthetic").map(|f| real_facts.gap(&f)))
        .collect::<Result<Vec<_>, _>>()?;
    mean_report(&reports)
}
