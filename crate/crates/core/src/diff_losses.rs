//! Tape-recorded stylized-fact losses and the WGAN-GP objective.
//!
//! Every statistic is computed per sequence (row of a `[B, L]` batch) and then
//! averaged over the batch. Real-side quantities are frozen in [`RealTargets`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{grad_norm_penalty, AutodiffError, Tape, Tensor, Var, SMOOTH_EPS};
use crate::models::{ModelError, ModelParams};
use crate::series::ReturnSeries;
use crate::stats::lower_index;
use crate::stylized_facts::{
    AcfVector, CfvcMatrix, CFVC_WINDOWS, DEFAULT_ACF_LAGS, DEFAULT_LEVERAGE_HORIZON,
    DEFAULT_TAIL_QUANTILE, MIN_EXCEEDANCES,
};

#[derive(Debug, Error)]
pub enum LossError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{stat} needs sequences of length >= {required}, got {len}")]
    TooShort {
        stat: &'static str,
        len: usize,
        required: usize,
    },
    #[error("expected a [batch, seq_len] tensor, got shape {0:?}")]
    NotABatch(Vec<usize>),
    #[error("real {real:?} and generated {fake:?} batches differ in shape")]
    BatchMismatch { real: Vec<usize>, fake: Vec<usize> },
    #[error("{0} interpolation weights for a batch of {1}")]
    WeightCount(usize, usize),
    #[error("real targets: {0}")]
    Targets(String),
    #[error("anneal coefficient {0} outside [0, 1]")]
    Anneal(f64),
    #[error("loss weight {name} = {value} must be finite and >= 0")]
    Weight { name: &'static str, value: f64 },
}

type Result<T> = std::result::Result<T, LossError>;

/// Alignment weights `λ₁..λ₄` (tail, ACF, leverage, CFVC) and the gradient penalty weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub lambda_gp: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
            lambda4: 1.0,
            lambda_gp: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda4", self.lambda4),
            ("lambda_gp", self.lambda_gp),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(LossError::Weight { name, value });
            }
        }
        Ok(())
    }

    pub fn stylized(&self) -> [f64; 4] {
        [self.lambda1, self.lambda2, self.lambda3, self.lambda4]
    }
}

/// Real-data sides of the four alignment losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealTargets {
    pub xi_real: f64,
    /// ACF of squared returns, lags `1..=K`.
    pub acf_real: AcfVector,
    pub lev_real: f64,
    pub cfvc_real: CfvcMatrix,
}

impl RealTargets {
    /// ACF, leverage and CFVC targets are batch means over overlapping
    /// windows of `seq_len` (stride `seq_len / 4`), so they are measured at
    /// the same length as generated sequences. The tail target uses the
    /// whole series.
    pub fn from_series(r: &ReturnSeries, seq_len: usize) -> Result<Self> {
        let x = r.values();
        if x.len() < seq_len {
            return Err(LossError::TooShort {
                stat: "real targets",
                len: x.len(),
                required: seq_len,
            });
        }
        let stride = (seq_len / 4).max(1);
        let mut data = Vec::new();
        let mut start = 0;
        while start + seq_len <= x.len() {
            data.extend_from_slice(&x[start..start + seq_len]);
            start += stride;
        }
        let batch = Tensor::matrix(data.len() / seq_len, seq_len, data)?;
        let xi = hill_tail_index(x).ok_or_else(|| {
            LossError::Targets(format!(
                "fewer than {MIN_EXCEEDANCES} positive lower-tail exceedances in the real series"
            ))
        })?;
        Self::from_batch_with_xi(&batch, xi)
    }

    /// Targets from an explicit batch of real windows; the tail target pools the batch.
    pub fn from_batch(batch: &Tensor) -> Result<Self> {
        let xi = hill_tail_index(batch.data())
            .ok_or_else(|| LossError::Targets("too few lower-tail exceedances".into()))?;
        Self::from_batch_with_xi(batch, xi)
    }

    fn from_batch_with_xi(batch: &Tensor, xi_real: f64) -> Result<Self> {
        let mut tape = Tape::new();
        let x = tape.constant(batch.clone());
        let acf = acf_sq_rows(&mut tape, x, DEFAULT_ACF_LAGS)?;
        let acf = tape.mean_rows(acf)?;
        let lev = leverage_rows(&mut tape, x, DEFAULT_LEVERAGE_HORIZON)?;
        let lev = tape.mean(lev);
        let cf = cfvc_rows(&mut tape, x)?;
        let cf = tape.mean_rows(cf)?;

        let k = CFVC_WINDOWS.len();
        let mut corr = vec![vec![1.0; k]; k];
        let mut it = tape.value(cf).data().iter();
        for i in 0..k {
            for j in i + 1..k {
                let c = *it.next().expect("one entry per pair");
                corr[i][j] = c;
                corr[j][i] = c;
            }
        }
        let targets = Self {
            xi_real,
            acf_real: AcfVector {
                values: tape.value(acf).data().to_vec(),
            },
            lev_real: tape.value(lev).item(),
            cfvc_real: CfvcMatrix {
                windows: CFVC_WINDOWS.to_vec(),
                corr,
            },
        };
        if !targets.is_finite() {
            return Err(LossError::Targets("non-finite statistic".into()));
        }
        Ok(targets)
    }

    pub fn is_finite(&self) -> bool {
        self.xi_real.is_finite()
            && self.lev_real.is_finite()
            && self.acf_real.values.iter().all(|v| v.is_finite())
            && self.cfvc_real.corr.iter().flatten().all(|v| v.is_finite())
    }

    fn cfvc_upper(&self) -> Vec<f64> {
        let c = &self.cfvc_real.corr;
        let mut out = Vec::new();
        for i in 0..c.len() {
            for j in i + 1..c.len() {
                out.push(c[i][j]);
            }
        }
        out
    }
}

fn batch_dims(tape: &Tape, x: Var) -> Result<(usize, usize)> {
    match *tape.shape(x) {
        [b, l] => Ok((b, l)),
        ref s => Err(LossError::NotABatch(s.to_vec())),
    }
}

fn require_len(stat: &'static str, len: usize, required: usize) -> Result<()> {
    if len < required {
        return Err(LossError::TooShort { stat, len, required });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// tail

/// Threshold and exceedance positions of the lower tail of `x`, as indices into `x`.
struct TailSelection {
    threshold: usize,
    exceed: Vec<usize>,
}

fn select_lower_tail(x: &[f64], offset: usize) -> Option<TailSelection> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| (-x[a]).total_cmp(&-x[b]));
    let u_pos = order[lower_index(x.len(), DEFAULT_TAIL_QUANTILE)];
    let u = -x[u_pos];
    if !(u > 0.0) {
        return None;
    }
    let exceed: Vec<usize> = (0..x.len()).filter(|&i| -x[i] > u).map(|i| i + offset).collect();
    (exceed.len() >= MIN_EXCEEDANCES).then_some(TailSelection {
        threshold: u_pos + offset,
        exceed,
    })
}

/// Hill-type index `mean(log y) − log u` of the lower tail of `x`.
pub fn hill_tail_index(x: &[f64]) -> Option<f64> {
    let sel = select_lower_tail(x, 0)?;
    let u = -x[sel.threshold];
    let m = sel.exceed.iter().map(|&i| (-x[i]).ln()).sum::<f64>() / sel.exceed.len() as f64;
    Some(m - u.ln())
}

fn hill_node(tape: &mut Tape, neg: Var, sel: &TailSelection) -> Result<Var> {
    let y = tape.gather(neg, &sel.exceed)?;
    let ly = tape.log(y);
    let m = tape.mean(ly);
    let u = tape.gather(neg, &[sel.threshold])?;
    let lu = tape.log(u);
    let lu = tape.sum(lu);
    Ok(tape.sub(m, lu)?)
}

/// Differentiable lower-tail index of a batch, or `None` when no usable tail exists.
///
/// Each sequence with at least 30 exceedances above its own 95% quantile
/// contributes its Hill estimate. When no sequence qualifies (short
/// sequences), the batch is pooled instead: the tail index is a property of
/// the marginal law, so pooling adds no cross-path dependence.
pub fn tail_index_surrogate(tape: &mut Tape, r_hat: Var) -> Result<Option<Var>> {
    let (b, l) = batch_dims(tape, r_hat)?;
    let values = tape.value(r_hat).data().to_vec();
    let per_row: Vec<TailSelection> = (0..b)
        .filter_map(|i| select_lower_tail(&values[i * l..(i + 1) * l], i * l))
        .collect();
    let neg = tape.neg(r_hat);
    if !per_row.is_empty() {
        if per_row.len() < b {
            log::warn!(
                "tail loss: {} of {b} sequences have too few exceedances and are skipped",
                b - per_row.len()
            );
        }
        let mut acc: Option<Var> = None;
        for sel in &per_row {
            let h = hill_node(tape, neg, sel)?;
            acc = Some(match acc {
                Some(a) => tape.add(a, h)?,
                None => h,
            });
        }
        let total = acc.expect("non-empty");
        return Ok(Some(tape.scale(total, 1.0 / per_row.len() as f64)));
    }
    match select_lower_tail(&values, 0) {
        Some(sel) => Ok(Some(hill_node(tape, neg, &sel)?)),
        None => {
            log::warn!("tail loss skipped: fewer than {MIN_EXCEEDANCES} usable exceedances in the batch");
            Ok(None)
        }
    }
}

/// `|ξ_real − ξ̃(r̂)|` (smoothed), or `None` when the tail is unusable.
pub fn loss_gpd(tape: &mut Tape, r_hat: Var, targets: &RealTargets) -> Result<Option<Var>> {
    let Some(xi) = tail_index_surrogate(tape, r_hat)? else {
        return Ok(None);
    };
    let d = tape.add_scalar(xi, -targets.xi_real);
    Ok(Some(tape.abs_smooth(d)))
}

// ---------------------------------------------------------------------------
// ACF, leverage, CFVC

/// Per-row ACF of `x²` at lags `1..=k`, shape `[B, k]`.
pub fn acf_sq_rows(tape: &mut Tape, x: Var, k: usize) -> Result<Var> {
    let (_, l) = batch_dims(tape, x)?;
    require_len("acf", l, k + 2)?;
    let sq = tape.square(x);
    let mu = tape.mean_last(sq);
    let d = tape.sub(sq, mu)?;
    let d2 = tape.square(d);
    let den = tape.sum_last(d2);
    let den = tape.add_scalar(den, SMOOTH_EPS);
    let mut nums = Vec::with_capacity(k);
    for lag in 1..=k {
        let a = tape.slice(d, 0, l - lag)?;
        let b = tape.slice(d, lag, l - lag)?;
        let p = tape.mul(a, b)?;
        nums.push(tape.sum_last(p));
    }
    let nums = tape.concat(&nums)?;
    Ok(tape.div(nums, den)?)
}

/// Rolling sample std (n − 1) over width `w` along the last axis, ε-smoothed.
pub fn rolling_std_rows(tape: &mut Tape, x: Var, w: usize) -> Result<Var> {
    let s1 = tape.window_sum(x, w)?;
    let sq = tape.square(x);
    let s2 = tape.window_sum(sq, w)?;
    let s1sq = tape.square(s1);
    let s1sq = tape.scale(s1sq, 1.0 / w as f64);
    let ss = tape.sub(s2, s1sq)?;
    let var = tape.scale(ss, 1.0 / (w as f64 - 1.0));
    Ok(tape.sqrt(var))
}

/// Row-wise Pearson correlation with ε-smoothed norms, shape `[B, 1]`.
pub fn pearson_rows(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let ma = tape.mean_last(a);
    let da = tape.sub(a, ma)?;
    let mb = tape.mean_last(b);
    let db = tape.sub(b, mb)?;
    let p = tape.mul(da, db)?;
    let num = tape.sum_last(p);
    let a2 = tape.square(da);
    let a2 = tape.sum_last(a2);
    let na = tape.sqrt(a2);
    let b2 = tape.square(db);
    let b2 = tape.sum_last(b2);
    let nb = tape.sqrt(b2);
    let den = tape.mul(na, nb)?;
    Ok(tape.div(num, den)?)
}

/// Per-row correlation of `r_t` with the rolling std of `r_{t+1..=t+h}`, shape `[B, 1]`.
pub fn leverage_rows(tape: &mut Tape, x: Var, horizon: usize) -> Result<Var> {
    let (_, l) = batch_dims(tape, x)?;
    require_len("leverage", l, horizon + 2)?;
    let vol = rolling_std_rows(tape, x, horizon)?;
    let m = l - horizon;
    let a = tape.slice(x, 0, m)?;
    let v = tape.slice(vol, 1, m)?;
    pearson_rows(tape, a, v)
}

/// Per-row upper-triangle entries of the rolling-vol correlation matrix,
/// pairs `(i, j)`, `i < j`, in row-major order. Shape `[B, 6]`.
pub fn cfvc_rows(tape: &mut Tape, x: Var) -> Result<Var> {
    let (_, l) = batch_dims(tape, x)?;
    let wmax = *CFVC_WINDOWS.iter().max().expect("non-empty");
    require_len("cfvc", l, wmax + 2)?;
    let common = l - wmax + 1;
    let mut vols = Vec::with_capacity(CFVC_WINDOWS.len());
    for &w in &CFVC_WINDOWS {
        let v = rolling_std_rows(tape, x, w)?;
        let n = l - w + 1;
        vols.push(tape.slice(v, n - common, common)?);
    }
    let mut pairs = Vec::new();
    for i in 0..vols.len() {
        for j in i + 1..vols.len() {
            pairs.push(pearson_rows(tape, vols[i], vols[j])?);
        }
    }
    Ok(tape.concat(&pairs)?)
}

/// Mean squared difference between batch-mean ACF of `r̂²` and the target.
pub fn loss_acf(tape: &mut Tape, r_hat: Var, targets: &RealTargets) -> Result<Var> {
    let k = targets.acf_real.values.len();
    let rows = acf_sq_rows(tape, r_hat, k)?;
    let m = tape.mean_rows(rows)?;
    let t = tape.constant(Tensor::matrix(1, k, targets.acf_real.values.clone())?);
    let d = tape.sub(m, t)?;
    let d2 = tape.square(d);
    Ok(tape.mean(d2))
}

pub fn loss_leverage(tape: &mut Tape, r_hat: Var, targets: &RealTargets) -> Result<Var> {
    let rows = leverage_rows(tape, r_hat, DEFAULT_LEVERAGE_HORIZON)?;
    let m = tape.mean(rows);
    let d = tape.add_scalar(m, -targets.lev_real);
    Ok(tape.abs_smooth(d))
}

/// Frobenius distance between batch-mean and target rolling-vol correlation
/// matrices. Diagonals are both 1, so only the mirrored off-diagonal pairs count.
pub fn loss_cfvc(tape: &mut Tape, r_hat: Var, targets: &RealTargets) -> Result<Var> {
    let rows = cfvc_rows(tape, r_hat)?;
    let m = tape.mean_rows(rows)?;
    let upper = targets.cfvc_upper();
    let t = tape.constant(Tensor::matrix(1, upper.len(), upper)?);
    let d = tape.sub(m, t)?;
    let d2 = tape.square(d);
    let s = tape.sum(d2);
    let s = tape.scale(s, 2.0);
    Ok(tape.sqrt(s))
}

// ---------------------------------------------------------------------------
// adversarial

#[derive(Debug, Clone, Copy)]
pub struct CriticLoss {
    pub total: Var,
    pub wasserstein: Var,
    /// `None` when `λ_gp = 0`; the penalty graph is then not built.
    pub penalty: Option<Var>,
}

/// `mean D(r̂) − mean D(r) + λ_gp · GP` with `x̂ = u·r + (1−u)·r̂` per row.
pub fn critic_loss(
    tape: &mut Tape,
    critic: &ModelParams,
    critic_vars: &[Var],
    real: &Tensor,
    fake: &Tensor,
    u: &[f64],
    lambda_gp: f64,
) -> Result<CriticLoss> {
    if real.shape() != fake.shape() {
        return Err(LossError::BatchMismatch {
            real: real.shape().to_vec(),
            fake: fake.shape().to_vec(),
        });
    }
    let (b, l) = match *real.shape() {
        [b, l] => (b, l),
        ref s => return Err(LossError::NotABatch(s.to_vec())),
    };
    if u.len() != b {
        return Err(LossError::WeightCount(u.len(), b));
    }
    let rv = tape.constant(real.clone());
    let fv = tape.constant(fake.clone());
    let d_real = critic.forward(tape, critic_vars, rv)?;
    let d_fake = critic.forward(tape, critic_vars, fv)?;
    let mr = tape.mean(d_real);
    let mf = tape.mean(d_fake);
    let wasserstein = tape.sub(mf, mr)?;
    if lambda_gp == 0.0 {
        return Ok(CriticLoss {
            total: wasserstein,
            wasserstein,
            penalty: None,
        });
    }
    let mut mixed = Vec::with_capacity(b * l);
    for (i, &ui) in u.iter().enumerate() {
        let rr = real.row(i);
        let fr = fake.row(i);
        mixed.extend(rr.iter().zip(fr).map(|(r, f)| ui * r + (1.0 - ui) * f));
    }
    let x_hat = tape.param(Tensor::matrix(b, l, mixed)?);
    let penalty = grad_norm_penalty(tape, x_hat, |t, x| critic.forward(t, critic_vars, x))?;
    let weighted = tape.scale(penalty, lambda_gp);
    let total = tape.add(wasserstein, weighted)?;
    Ok(CriticLoss {
        total,
        wasserstein,
        penalty: Some(penalty),
    })
}

/// `−mean D(r̂)`.
pub fn generator_adv_loss(tape: &mut Tape, critic: &ModelParams, critic_vars: &[Var], r_hat: Var) -> Result<Var> {
    let d = critic.forward(tape, critic_vars, r_hat)?;
    let m = tape.mean(d);
    Ok(tape.neg(m))
}

/// Critic and generator adversarial losses on one pair of batches.
pub fn loss_adversarial(
    tape: &mut Tape,
    critic: &ModelParams,
    critic_vars: &[Var],
    real: &Tensor,
    fake: &Tensor,
    u: &[f64],
    lambda_gp: f64,
) -> Result<(CriticLoss, Var)> {
    let c = critic_loss(tape, critic, critic_vars, real, fake, u, lambda_gp)?;
    let fv = tape.constant(fake.clone());
    let g = generator_adv_loss(tape, critic, critic_vars, fv)?;
    Ok((c, g))
}

// ---------------------------------------------------------------------------
// combined objective

#[derive(Debug, Clone, Copy)]
pub struct StylizedTerms {
    pub gpd: Option<Var>,
    pub acf: Var,
    pub leverage: Var,
    pub cfvc: Var,
}

impl StylizedTerms {
    fn as_array(&self) -> [Option<Var>; 4] {
        [self.gpd, Some(self.acf), Some(self.leverage), Some(self.cfvc)]
    }
}

pub fn stylized_terms(tape: &mut Tape, r_hat: Var, targets: &RealTargets) -> Result<StylizedTerms> {
    Ok(StylizedTerms {
        gpd: loss_gpd(tape, r_hat, targets)?,
        acf: loss_acf(tape, r_hat, targets)?,
        leverage: loss_leverage(tape, r_hat, targets)?,
        cfvc: loss_cfvc(tape, r_hat, targets)?,
    })
}

/// Values of the generator objective's parts. `total` is exactly
/// `gen_adv + Σ anneal·λᵢ·Lᵢ`, summed in that order over the terms with a
/// non-zero coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents {
    pub gen_adv: f64,
    pub gpd: Option<f64>,
    pub acf: Option<f64>,
    pub leverage: Option<f64>,
    pub cfvc: Option<f64>,
    pub anneal: f64,
    pub total: f64,
}

impl LossComponents {
    pub fn stylized(&self) -> [Option<f64>; 4] {
        [self.gpd, self.acf, self.leverage, self.cfvc]
    }

    /// Re-adds the logged parts in the same order the objective was built.
    pub fn recombine(&self, weights: &LossWeights) -> f64 {
        let mut t = self.gen_adv;
        for (l, lam) in self.stylized().into_iter().zip(weights.stylized()) {
            let c = self.anneal * lam;
            if let (Some(v), true) = (l, c != 0.0) {
                t += c * v;
            }
        }
        t
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SfagLoss {
    pub total: Var,
    pub components: LossComponents,
}

/// `gen_adv + anneal · Σ λᵢ Lᵢ`. Terms whose coefficient is zero (or that were
/// skipped) are left out of the graph entirely.
pub fn loss_sfag(
    tape: &mut Tape,
    gen_adv: Var,
    terms: Option<&StylizedTerms>,
    weights: &LossWeights,
    anneal: f64,
) -> Result<SfagLoss> {
    if !(0.0..=1.0).contains(&anneal) {
        return Err(LossError::Anneal(anneal));
    }
    weights.validate()?;
    let value = |tape: &Tape, v: Option<Var>| v.map(|v| tape.value(v).item());
    let mut components = LossComponents {
        gen_adv: tape.value(gen_adv).item(),
        anneal,
        ..Default::default()
    };
    let mut total = gen_adv;
    if let Some(terms) = terms {
        let parts = terms.as_array();
        components.gpd = value(tape, parts[0]);
        components.acf = value(tape, parts[1]);
        components.leverage = value(tape, parts[2]);
        components.cfvc = value(tape, parts[3]);
        for (part, lam) in parts.into_iter().zip(weights.stylized()) {
            let c = anneal * lam;
            if let (Some(p), true) = (part, c != 0.0) {
                let w = tape.scale(p, c);
                total = tape.add(total, w)?;
            }
        }
    }
    components.total = tape.value(total).item();
    Ok(SfagLoss { total, components })
}
