#![allow(dead_code)]

use sfag_core::autodiff::{Tape, Tensor, Var};
use sfag_core::backtest::BacktestResult;

/// Day-by-day momentum backtest written without any of the engine's helpers.
/// Returns `None` wherever the engine would reject the input.
pub fn oracle_momentum(r: &[f64], lookback: usize, cost_bps: f64) -> Option<(Vec<f64>, BacktestResult)> {
    if lookback == 0 || r.len() < lookback + 2 {
        return None;
    }
    let mut daily = Vec::new();
    let mut held = 0.0;
    let mut trades = 0;
    let mut t = lookback;
    while t < r.len() {
        let mut window = 0.0;
        let mut i = t - lookback;
        while i < t {
            window += r[i];
            i += 1;
        }
        let pos = if window < 0.0 { -1.0 } else { 1.0 };
        let traded = if pos > held { pos - held } else { held - pos };
        if traded != 0.0 {
            trades += 1;
        }
        daily.push(pos * r[t] - cost_bps / 10_000.0 * traded);
        held = pos;
        t += 1;
    }

    let n = daily.len() as f64;
    let mut total = 0.0;
    for d in &daily {
        total += d;
    }
    let avg = total / n;
    let mut sq = 0.0;
    for d in &daily {
        sq += (d - avg) * (d - avg);
    }
    let ann_return = avg * 252.0;
    let ann_vol = (sq / (n - 1.0)).sqrt() * 252f64.sqrt();

    let mut equity = 1.0;
    let mut peak = 1.0;
    let mut max_dd = 0.0;
    for d in &daily {
        equity *= 1.0 + d;
        if equity < 0.0 {
            equity = 0.0;
        }
        if equity > peak {
            peak = equity;
        }
        let dd = (peak - equity) / peak;
        if dd > max_dd {
            max_dd = dd;
        }
    }

    let (var95, cvar95) = if daily.len() >= 20 {
        let mut s = daily.clone();
        // insertion sort keeps this independent of the engine's sort
        for i in 1..s.len() {
            let mut j = i;
            while j > 0 && s[j - 1] > s[j] {
                s.swap(j - 1, j);
                j -= 1;
            }
        }
        let k = (0.05 * (s.len() as f64 - 1.0)).floor() as usize;
        let var = s[k];
        let mut tail = 0.0;
        let mut cnt = 0.0;
        for v in &s {
            if *v <= var {
                tail += v;
                cnt += 1.0;
            }
        }
        (Some(var), Some(tail / cnt))
    } else {
        (None, None)
    };

    let result = BacktestResult {
        ann_return,
        ann_vol,
        sharpe: if ann_vol > 0.0 { Some(ann_return / ann_vol) } else { None },
        max_drawdown: max_dd,
        var95,
        cvar95,
        n_days: daily.len(),
        n_trades: trades,
    };
    Some((daily, result))
}

/// Central differences of a scalar function of one tensor.
pub fn central_diff(f: &dyn Fn(&Tensor) -> f64, x: &Tensor, h: f64) -> Vec<f64> {
    (0..x.numel())
        .map(|i| {
            let mut up = x.clone();
            up.data_mut()[i] += h;
            let mut dn = x.clone();
            dn.data_mut()[i] -= h;
            (f(&up) - f(&dn)) / (2.0 * h)
        })
        .collect()
}

/// Reverse-mode gradient of `f` at `x`, plus the value.
pub fn tape_grad(f: &dyn Fn(&mut Tape, Var) -> Var, x: &Tensor) -> (f64, Vec<f64>) {
    let mut tape = Tape::new();
    let v = tape.param(x.clone());
    let out = f(&mut tape, v);
    let g = tape.grad(out, &[v]).expect("differentiable")[0];
    (tape.value(out).item(), tape.value(g).data().to_vec())
}

pub fn tape_value(f: &dyn Fn(&mut Tape, Var) -> Var, x: &Tensor) -> f64 {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let out = f(&mut tape, v);
    tape.value(out).item()
}

/// Largest componentwise error, relative to the gradient's largest entry
/// (entries much smaller than that are compared on the same absolute scale).
pub fn relative_error(fd: &[f64], an: &[f64]) -> f64 {
    let scale = fd.iter().chain(an).fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    fd.iter()
        .zip(an)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-3 * scale))
        .fold(0.0, f64::max)
}
