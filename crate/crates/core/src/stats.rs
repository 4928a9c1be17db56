//! Small descriptive-statistics helpers shared by the estimators and the backtest.

/// Empirical quantile with the lower-interpolation convention: the element of
/// the ascending `sorted` slice at position `floor(q * (n - 1))`.
pub fn quantile_lower(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    sorted[lower_index(sorted.len(), q)]
}

pub fn lower_index(n: usize, q: f64) -> usize {
    let pos = (q * (n as f64 - 1.0)).floor();
    (pos.max(0.0) as usize).min(n - 1)
}

pub fn sorted(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    debug_assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if degenerate(x, sxx) || degenerate(y, syy) {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Spread indistinguishable from rounding noise relative to the data scale.
fn degenerate(x: &[f64], ss: f64) -> bool {
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    ss.sqrt() <= 1e-12 * scale * (x.len() as f64).sqrt()
}
