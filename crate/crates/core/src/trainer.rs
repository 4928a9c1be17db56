//! WGAN-GP training with the annealed stylized-fact objective.
//!
//! One ChaCha8 stream drives everything. Draw order: generator init, critic
//! init, then per generator iteration `n_critic` times (window starts, z, u)
//! followed by the generator's z.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Tape, Tensor, Var};
use crate::diff_losses::{
    critic_loss, generator_adv_loss, loss_sfag, stylized_terms, LossError, LossWeights, RealTargets,
};
use crate::models::{generate, sample_latent, ArchSpec, ModelError, ModelParams};
use crate::series::{sample_std, ReturnSeries};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training series has {len} returns, need at least {required}")]
    DatasetTooShort { len: usize, required: usize },
    #[error("non-finite {phase} gradient at iteration {iteration}, produced by {component}")]
    NonFinite {
        iteration: usize,
        phase: &'static str,
        component: String,
    },
    #[error("adam: parameter {index} has shape {param:?} but gradient {grad:?}")]
    AdamShape {
        index: usize,
        param: Vec<usize>,
        grad: Vec<usize>,
    },
    #[error("adam: non-finite gradient in parameter {0}")]
    AdamNonFinite(usize),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] crate::autodiff::AutodiffError),
    #[error("{0}")]
    Observer(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// Adversarial loss plus the annealed stylized-fact terms.
    Sfag,
    /// Plain WGAN-GP; the stylized-fact terms are never built.
    WganGp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub objective: Objective,
    pub iterations: usize,
    pub n_critic: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch: usize,
    pub anneal_frac: f64,
    pub weights: LossWeights,
    pub seed: u64,
    pub latent_dim: usize,
    pub seq_len: usize,
    pub gen_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    /// Checkpoint period in generator iterations; 0 disables.
    pub checkpoint_every: usize,
    /// Adds elapsed milliseconds to each log record. Off by default so logs
    /// from identical configs compare byte for byte.
    pub log_wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Sfag,
            iterations: 2000,
            n_critic: 5,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.9,
            adam_eps: 1e-8,
            batch: 24,
            anneal_frac: 0.2,
            weights: LossWeights::default(),
            seed: 0,
            latent_dim: 100,
            seq_len: 256,
            gen_hidden: vec![256, 512],
            critic_hidden: vec![512, 256],
            checkpoint_every: 500,
            log_wall_clock: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.n_critic == 0 || self.batch == 0 {
            return bad("n_critic and batch must be positive");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        if !(0.0..=1.0).contains(&self.anneal_frac) {
            return bad("anneal_frac must lie in [0, 1]");
        }
        self.weights.validate()?;
        self.generator_arch().validate()?;
        self.critic_arch().validate()?;
        Ok(())
    }

    pub fn generator_arch(&self) -> ArchSpec {
        ArchSpec::generator(self.latent_dim, self.seq_len).with_hidden(self.gen_hidden.clone())
    }

    pub fn critic_arch(&self) -> ArchSpec {
        ArchSpec::critic(self.latent_dim, self.seq_len).with_hidden(self.critic_hidden.clone())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }
}

// ---------------------------------------------------------------------------
// Adam

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), TrainError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TrainError::Config(format!(
            "adam: {} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (index, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || state.m[index].shape() != p.shape() {
            return Err(TrainError::AdamShape {
                index,
                param: p.shape().to_vec(),
                grad: g.shape().to_vec(),
            });
        }
        if !g.is_finite() {
            return Err(TrainError::AdamNonFinite(index));
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - cfg.beta1.powf(t);
    let bc2 = 1.0 - cfg.beta2.powf(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let pd = p.data_mut();
        let (md, vd) = (m.data_mut(), v.data_mut());
        for (i, &gi) in g.data().iter().enumerate() {
            md[i] = cfg.beta1 * md[i] + (1.0 - cfg.beta1) * gi;
            vd[i] = cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * gi * gi;
            let mhat = md[i] / bc1;
            let vhat = vd[i] / bc2;
            pd[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Linear ramp `min(1, iter / (frac · total))`; constant 1 when the ramp is empty.
pub fn anneal_coeff(iter: usize, total: usize, frac: f64) -> f64 {
    let ramp = frac * total as f64;
    if ramp <= 0.0 {
        return 1.0;
    }
    (iter as f64 / ramp).min(1.0)
}

// ---------------------------------------------------------------------------
// data

#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    pub data: Tensor,
    pub starts: Vec<usize>,
}

/// `batch` uniformly random contiguous windows (with replacement).
pub fn sample_training_windows<R: Rng>(
    r: &ReturnSeries,
    seq_len: usize,
    batch: usize,
    rng: &mut R,
) -> Result<WindowBatch, TrainError> {
    let x = r.values();
    if seq_len == 0 || x.len() < seq_len {
        return Err(TrainError::DatasetTooShort {
            len: x.len(),
            required: seq_len.max(1),
        });
    }
    let max_start = x.len() - seq_len;
    let starts: Vec<usize> = (0..batch).map(|_| rng.random_range(0..=max_start)).collect();
    let mut data = Vec::with_capacity(batch * seq_len);
    for &s in &starts {
        data.extend_from_slice(&x[s..s + seq_len]);
    }
    Ok(WindowBatch {
        data: Tensor::matrix(batch, seq_len, data)?,
        starts,
    })
}

// ---------------------------------------------------------------------------
// loop

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub iteration: usize,
    /// Last critic step of the iteration: `wasserstein + λ_gp · gradient_penalty`.
    pub critic_loss: f64,
    pub wasserstein: f64,
    pub gradient_penalty: Option<f64>,
    pub gen_adv_loss: f64,
    pub gpd_loss: Option<f64>,
    pub acf_loss: Option<f64>,
    pub lev_loss: Option<f64>,
    pub cfvc_loss: Option<f64>,
    pub anneal: f64,
    pub gen_total: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_clock_ms: Option<f64>,
}

pub trait TrainObserver {
    fn on_record(&mut self, _record: &TrainLogRecord) -> Result<(), TrainError> {
        Ok(())
    }

    fn on_checkpoint(
        &mut self,
        _iteration: usize,
        _generator: &ModelParams,
        _critic: &ModelParams,
    ) -> Result<(), TrainError> {
        Ok(())
    }
}

pub struct NoopObserver;

impl TrainObserver for NoopObserver {}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub generator: ModelParams,
    pub critic: ModelParams,
    pub log: Vec<TrainLogRecord>,
    /// `None` for the plain WGAN-GP objective, which never uses them.
    pub targets: Option<RealTargets>,
}

fn tensors(tape: &Tape, vars: &[Var]) -> Vec<Tensor> {
    vars.iter().map(|&v| tape.value(v).clone()).collect()
}

/// First component whose own gradient (or value) is non-finite.
fn attribute(tape: &mut Tape, parts: &[(&str, Var)], wrt: &[Var]) -> String {
    for &(name, v) in parts {
        if !tape.value(v).is_finite() {
            return format!("{name} (non-finite value)");
        }
        match tape.grad(v, wrt) {
            Ok(gs) if gs.iter().all(|&g| tape.value(g).is_finite()) => {}
            _ => return name.to_string(),
        }
    }
    "an unattributed combination of components".to_string()
}

pub fn train(
    real: &ReturnSeries,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let required = cfg.seq_len + cfg.batch - 1;
    if real.len() < required {
        return Err(TrainError::DatasetTooShort {
            len: real.len(),
            required,
        });
    }
    let targets = match cfg.objective {
        Objective::Sfag => Some(RealTargets::from_series(real, cfg.seq_len)?),
        Objective::WganGp => None,
    };
    let adam = cfg.adam();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut generator = ModelParams::init(cfg.generator_arch(), sample_std(real.values()), &mut rng)?;
    let mut critic = ModelParams::init(cfg.critic_arch(), 1.0, &mut rng)?;
    let mut gen_state = AdamState::new(&generator.tensors);
    let mut critic_state = AdamState::new(&critic.tensors);
    let started = Instant::now();
    let mut log = Vec::with_capacity(cfg.iterations);

    for iteration in 0..cfg.iterations {
        let mut last_critic = (0.0, 0.0, None);
        for _ in 0..cfg.n_critic {
            let windows = sample_training_windows(real, cfg.seq_len, cfg.batch, &mut rng)?;
            let z = sample_latent(&mut rng, cfg.batch, cfg.latent_dim);
            let u: Vec<f64> = (0..cfg.batch).map(|_| rng.random::<f64>()).collect();
            let fake = generate(&generator, &z)?;

            let mut tape = Tape::new();
            let vars = critic.bind(&mut tape, true);
            let loss = critic_loss(
                &mut tape,
                &critic,
                &vars,
                &windows.data,
                &fake,
                &u,
                cfg.weights.lambda_gp,
            )?;
            let gvars = tape.grad(loss.total, &vars)?;
            let grads = tensors(&tape, &gvars);
            if !grads.iter().all(Tensor::is_finite) {
                let mut parts = vec![("wasserstein term", loss.wasserstein)];
                if let Some(p) = loss.penalty {
                    parts.push(("gradient penalty", p));
                }
                return Err(TrainError::NonFinite {
                    iteration,
                    phase: "critic",
                    component: attribute(&mut tape, &parts, &vars),
                });
            }
            adam_step(&mut critic.tensors, &grads, &mut critic_state, &adam)?;
            last_critic = (
                tape.value(loss.total).item(),
                tape.value(loss.wasserstein).item(),
                loss.penalty.map(|p| tape.value(p).item()),
            );
        }

        let z = sample_latent(&mut rng, cfg.batch, cfg.latent_dim);
        let mut tape = Tape::new();
        let gvars = generator.bind(&mut tape, true);
        let cvars = critic.bind(&mut tape, false);
        let zv = tape.constant(z);
        let fake = generator.forward(&mut tape, &gvars, zv)?;
        let adv = generator_adv_loss(&mut tape, &critic, &cvars, fake)?;
        let terms = match (&targets, cfg.objective) {
            (Some(t), Objective::Sfag) => Some(stylized_terms(&mut tape, fake, t)?),
            _ => None,
        };
        let anneal = anneal_coeff(iteration, cfg.iterations, cfg.anneal_frac);
        let sfag = loss_sfag(&mut tape, adv, terms.as_ref(), &cfg.weights, anneal)?;
        let grad_vars = tape.grad(sfag.total, &gvars)?;
        let grads = tensors(&tape, &grad_vars);
        if !grads.iter().all(Tensor::is_finite) {
            let mut parts = vec![("adversarial loss", adv)];
            if let Some(t) = &terms {
                let named = [
                    ("tail (GPD) loss", t.gpd),
                    ("ACF loss", Some(t.acf)),
                    ("leverage loss", Some(t.leverage)),
                    ("CFVC loss", Some(t.cfvc)),
                ];
                for ((name, v), lam) in named.into_iter().zip(cfg.weights.stylized()) {
                    if let (Some(v), true) = (v, anneal * lam != 0.0) {
                        parts.push((name, v));
                    }
                }
            }
            return Err(TrainError::NonFinite {
                iteration,
                phase: "generator",
                component: attribute(&mut tape, &parts, &gvars),
            });
        }
        adam_step(&mut generator.tensors, &grads, &mut gen_state, &adam)?;

        let c = sfag.components;
        let record = TrainLogRecord {
            iteration,
            critic_loss: last_critic.0,
            wasserstein: last_critic.1,
            gradient_penalty: last_critic.2,
            gen_adv_loss: c.gen_adv,
            gpd_loss: c.gpd,
            acf_loss: c.acf,
            lev_loss: c.leverage,
            cfvc_loss: c.cfvc,
            anneal,
            gen_total: c.total,
            wall_clock_ms: cfg
                .log_wall_clock
                .then(|| started.elapsed().as_secs_f64() * 1e3),
        };
        observer.on_record(&record)?;
        log.push(record);
        if cfg.checkpoint_every > 0 && (iteration + 1) % cfg.checkpoint_every == 0 {
            observer.on_checkpoint(iteration + 1, &generator, &critic)?;
        }
    }

    Ok(TrainOutcome {
        generator,
        critic,
        log,
        targets,
    })
}
