//! MLP generator and critic, initialization, and the `.sfag` checkpoint format.
//!
//! Checkpoint layout (all integers and floats little-endian):
//!
//! ```text
//! magic      8 bytes  "SFAGCKPT"
//! version    u32      CHECKPOINT_VERSION
//! kind       u8       0 = generator, 1 = critic
//! latent_dim u64
//! seq_len    u64
//! n_hidden   u64, then n_hidden × u64 widths
//! activation u8 (0 = tanh, 1 = leaky relu) followed by f64 slope
//! n_tensors  u64, then per tensor: rows u64, cols u64, rows*cols × f64
//! ```
//!
//! The file must end exactly after the last tensor.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::series::ReturnSeries;

pub const CHECKPOINT_VERSION: u32 = 1;
pub const CHECKPOINT_EXTENSION: &str = "sfag";
const MAGIC: &[u8; 8] = b"SFAGCKPT";

/// Shortest sequence that still covers the 120-day volatility window.
pub const MIN_SEQ_LEN: usize = 122;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("unsupported version {0} (expected {CHECKPOINT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("size mismatch: tensor {index} has {found} values, architecture needs {expected}")]
    SizeMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error(transparent)]
    Shape(#[from] AutodiffError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    LeakyRelu { slope: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetKind {
    Generator,
    Critic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub kind: NetKind,
    pub latent_dim: usize,
    pub seq_len: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl ArchSpec {
    /// `latent_dim → 256 → 512 → seq_len`, tanh hidden units, gained linear output.
    pub fn generator(latent_dim: usize, seq_len: usize) -> Self {
        Self {
            kind: NetKind::Generator,
            latent_dim,
            seq_len,
            hidden: vec![256, 512],
            activation: Activation::Tanh,
        }
    }

    /// `seq_len → 512 → 256 → 1` with leaky ReLU(0.2).
    pub fn critic(latent_dim: usize, seq_len: usize) -> Self {
        Self {
            kind: NetKind::Critic,
            latent_dim,
            seq_len,
            hidden: vec![512, 256],
            activation: Activation::LeakyRelu { slope: 0.2 },
        }
    }

    pub fn with_hidden(mut self, hidden: Vec<usize>) -> Self {
        self.hidden = hidden;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.latent_dim == 0 {
            return Err(ModelError::InvalidArch("latent_dim must be >= 1".into()));
        }
        if self.seq_len < MIN_SEQ_LEN {
            return Err(ModelError::InvalidArch(format!(
                "seq_len {} below minimum {MIN_SEQ_LEN}",
                self.seq_len
            )));
        }
        if self.hidden.contains(&0) {
            return Err(ModelError::InvalidArch("zero-width hidden layer".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        match self.kind {
            NetKind::Generator => self.latent_dim,
            NetKind::Critic => self.seq_len,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self.kind {
            NetKind::Generator => self.seq_len,
            NetKind::Critic => 1,
        }
    }

    /// `(fan_in, fan_out)` of every dense layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim();
        for &h in &self.hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output_dim()));
        dims
    }

    /// Shapes of the flat parameter list: `[W0, b0, W1, b1, ..., (gain)]`.
    pub fn tensor_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        for (i, o) in self.layer_dims() {
            shapes.push(vec![i, o]);
            shapes.push(vec![1, o]);
        }
        if self.kind == NetKind::Generator {
            shapes.push(vec![1, self.seq_len]);
        }
        shapes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: ArchSpec,
    pub tensors: Vec<Tensor>,
    pub version: u32,
}

impl ModelParams {
    /// Xavier-uniform weights, zero biases, and (generator only) an output
    /// gain of `output_scale` on every position.
    pub fn init<R: Rng>(arch: ArchSpec, output_scale: f64, rng: &mut R) -> Result<Self, ModelError> {
        arch.validate()?;
        let mut tensors = Vec::new();
        for (fan_in, fan_out) in arch.layer_dims() {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-limit..limit))
                .collect();
            tensors.push(Tensor::matrix(fan_in, fan_out, w)?);
            tensors.push(Tensor::zeros(&[1, fan_out]));
        }
        if arch.kind == NetKind::Generator {
            tensors.push(Tensor::filled(&[1, arch.seq_len], output_scale));
        }
        Ok(Self {
            arch,
            tensors,
            version: CHECKPOINT_VERSION,
        })
    }

    /// All-zero parameters (gain included).
    pub fn zeros(arch: ArchSpec) -> Result<Self, ModelError> {
        arch.validate()?;
        let tensors = arch.tensor_shapes().iter().map(|s| Tensor::zeros(s)).collect();
        Ok(Self {
            arch,
            tensors,
            version: CHECKPOINT_VERSION,
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    fn check_sizes(&self) -> Result<(), ModelError> {
        let shapes = self.arch.tensor_shapes();
        if shapes.len() != self.tensors.len() {
            return Err(ModelError::Corrupt(format!(
                "expected {} tensors, found {}",
                shapes.len(),
                self.tensors.len()
            )));
        }
        for (index, (s, t)) in shapes.iter().zip(&self.tensors).enumerate() {
            if s.as_slice() != t.shape() {
                return Err(ModelError::SizeMismatch {
                    index,
                    expected: s.iter().product(),
                    found: t.numel(),
                });
            }
        }
        Ok(())
    }

    /// Puts every tensor on the tape, trainable or constant.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect()
    }

    /// Forward pass of a batch `[B, input_dim]` recorded on `tape` using the
    /// bound parameter handles from [`ModelParams::bind`].
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var, ModelError> {
        let shape = tape.shape(x);
        if shape.len() != 2 || shape[1] != self.arch.input_dim() {
            return Err(AutodiffError::ShapeMismatch {
                op: "model input",
                left: shape.to_vec(),
                right: vec![0, self.arch.input_dim()],
            }
            .into());
        }
        let n_layers = self.arch.layer_dims().len();
        let mut h = x;
        for l in 0..n_layers {
            let z = tape.matmul(h, vars[2 * l])?;
            h = tape.add(z, vars[2 * l + 1])?;
            if l + 1 < n_layers {
                h = match self.arch.activation {
                    Activation::Tanh => tape.tanh(h),
                    Activation::LeakyRelu { slope } => tape.leaky_relu(h, slope),
                };
            }
        }
        if self.arch.kind == NetKind::Generator {
            h = tape.mul(h, vars[2 * n_layers])?;
        }
        Ok(h)
    }

    fn eval(&self, input: &Tensor) -> Result<Tensor, ModelError> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let x = tape.constant(input.clone());
        let y = self.forward(&mut tape, &vars, x)?;
        Ok(tape.value(y).clone())
    }
}

/// Maps latent noise `[B, latent_dim]` to return sequences `[B, seq_len]`.
pub fn generate(generator: &ModelParams, z: &Tensor) -> Result<Tensor, ModelError> {
    if generator.arch.kind != NetKind::Generator {
        return Err(ModelError::InvalidArch("generate needs a generator".into()));
    }
    generator.eval(z)
}

/// Critic scores `[B]` for sequences `[B, seq_len]`.
pub fn criticize(critic: &ModelParams, r: &Tensor) -> Result<Tensor, ModelError> {
    if critic.arch.kind != NetKind::Critic {
        return Err(ModelError::InvalidArch("criticize needs a critic".into()));
    }
    let out = critic.eval(r)?;
    Ok(Tensor::vector(out.into_data()))
}

pub fn sample_latent<R: Rng>(rng: &mut R, batch: usize, latent_dim: usize) -> Tensor {
    let data = (0..batch * latent_dim)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    Tensor::matrix(batch, latent_dim, data).expect("positive dimensions")
}

/// One long synthetic series made of `n_windows` generated sequences laid end to end.
pub fn generate_path<R: Rng>(
    generator: &ModelParams,
    n_windows: usize,
    seed: u64,
    rng: &mut R,
) -> Result<ReturnSeries, ModelError> {
    let z = sample_latent(rng, n_windows, generator.arch.latent_dim);
    let out = generate(generator, &z)?;
    ReturnSeries::synthetic(out.into_data(), Some(seed))
        .map_err(|e| ModelError::Corrupt(format!("generator produced invalid returns: {e}")))
}

// ---------------------------------------------------------------------------
// checkpoints

pub fn checkpoint_bytes(params: &ModelParams) -> Vec<u8> {
    let a = &params.arch;
    let mut out = Vec::with_capacity(64 + 8 * params.num_parameters());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&params.version.to_le_bytes());
    out.push(match a.kind {
        NetKind::Generator => 0,
        NetKind::Critic => 1,
    });
    for v in [a.latent_dim, a.seq_len, a.hidden.len()] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for &h in &a.hidden {
        out.extend_from_slice(&(h as u64).to_le_bytes());
    }
    let (tag, slope) = match a.activation {
        Activation::Tanh => (0u8, 0.0),
        Activation::LeakyRelu { slope } => (1u8, slope),
    };
    out.push(tag);
    out.extend_from_slice(&slope.to_le_bytes());
    out.extend_from_slice(&(params.tensors.len() as u64).to_le_bytes());
    for t in &params.tensors {
        let (r, c) = t.rows_cols();
        out.extend_from_slice(&(r as u64).to_le_bytes());
        out.extend_from_slice(&(c as u64).to_le_bytes());
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| ModelError::Corrupt(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<usize, ModelError> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| ModelError::Corrupt("integer overflow".into()))
    }

    fn f64(&mut self) -> Result<f64, ModelError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn params_from_bytes(buf: &[u8]) -> Result<ModelParams, ModelError> {
    let mut rd = Reader { buf, pos: 0 };
    if rd.take(MAGIC.len())? != MAGIC {
        return Err(ModelError::Corrupt("bad magic bytes".into()));
    }
    let version = rd.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::UnsupportedVersion(version));
    }
    let kind = match rd.u8()? {
        0 => NetKind::Generator,
        1 => NetKind::Critic,
        k => return Err(ModelError::Corrupt(format!("unknown network kind {k}"))),
    };
    let latent_dim = rd.u64()?;
    let seq_len = rd.u64()?;
    let n_hidden = rd.u64()?;
    if n_hidden > 64 {
        return Err(ModelError::Corrupt(format!("implausible layer count {n_hidden}")));
    }
    let hidden = (0..n_hidden).map(|_| rd.u64()).collect::<Result<Vec<_>, _>>()?;
    let tag = rd.u8()?;
    let slope = rd.f64()?;
    let activation = match tag {
        0 => Activation::Tanh,
        1 => Activation::LeakyRelu { slope },
        t => return Err(ModelError::Corrupt(format!("unknown activation {t}"))),
    };
    let arch = ArchSpec {
        kind,
        latent_dim,
        seq_len,
        hidden,
        activation,
    };
    let n_tensors = rd.u64()?;
    let mut tensors = Vec::with_capacity(n_tensors.min(256));
    for _ in 0..n_tensors {
        let r = rd.u64()?;
        let c = rd.u64()?;
        let n = r
            .checked_mul(c)
            .filter(|&n| n > 0 && n <= (buf.len() - rd.pos) / 8)
            .ok_or_else(|| ModelError::Corrupt(format!("tensor of {r}x{c} does not fit the file")))?;
        let data = (0..n).map(|_| rd.f64()).collect::<Result<Vec<_>, _>>()?;
        tensors.push(Tensor::matrix(r, c, data)?);
    }
    if rd.pos != buf.len() {
        return Err(ModelError::Corrupt(format!(
            "{} trailing bytes",
            buf.len() - rd.pos
        )));
    }
    let params = ModelParams {
        arch,
        tensors,
        version,
    };
    params.arch.validate()?;
    params.check_sizes()?;
    Ok(params)
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<(), ModelError> {
    fs::write(path, checkpoint_bytes(params))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams, ModelError> {
    params_from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::testing::{analytic_grad, finite_diff, max_rel_err};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_gen() -> ArchSpec {
        ArchSpec::generator(8, 130).with_hidden(vec![16])
    }

    fn small_critic() -> ArchSpec {
        ArchSpec::critic(8, 130).with_hidden(vec![12, 6])
    }

    #[test]
    fn zero_generator_outputs_zero() {
        let g = ModelParams::zeros(small_gen()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let z = sample_latent(&mut rng, 3, 8);
        let out = generate(&g, &z).unwrap();
        assert_eq!(out.shape(), &[3, 130]);
        assert!(out.data().iter().all(|&v| v == 0.0));
        let c = ModelParams::zeros(small_critic()).unwrap();
        let s = criticize(&c, &out).unwrap();
        assert_eq!(s.shape(), &[3]);
        assert!(s.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = ModelParams::init(ArchSpec::generator(100, 256), 0.01, &mut rng).unwrap();
        let z = sample_latent(&mut rng, 4, 100);
        let a = generate(&g, &z).unwrap();
        let b = generate(&g, &z).unwrap();
        assert_eq!(a, b);
        let c = ModelParams::init(ArchSpec::critic(100, 256), 1.0, &mut rng).unwrap();
        assert_eq!(criticize(&c, &a).unwrap(), criticize(&c, &a).unwrap());
    }

    #[test]
    fn initial_output_scale_tracks_target() {
        let target = 0.01;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = ModelParams::init(ArchSpec::generator(100, 256), target, &mut rng).unwrap();
        let z = sample_latent(&mut rng, 24, 100);
        let out = generate(&g, &z).unwrap();
        let sd = crate::series::sample_std(out.data());
        let ratio = sd / target;
        assert!((0.1..=10.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn linear_critic_is_affine() {
        let arch = ArchSpec::critic(8, 130).with_hidden(vec![]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut c = ModelParams::init(arch, 1.0, &mut rng).unwrap();
        c.tensors[1] = Tensor::filled(&[1, 1], 0.25);
        let r = sample_latent(&mut rng, 2, 130);
        let s = criticize(&c, &r).unwrap();
        for b in 0..2 {
            let by_hand: f64 = r.row(b).iter().zip(c.tensors[0].data()).map(|(x, w)| x * w).sum::<f64>() + 0.25;
            assert!((s.data()[b] - by_hand).abs() < 1e-12);
        }
    }

    #[test]
    fn critic_input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = ModelParams::init(small_critic(), 1.0, &mut rng).unwrap();
        let x = sample_latent(&mut rng, 2, 130);
        let f = |t: &mut Tape, xv: Var| {
            let vars = c.bind(t, false);
            let out = c.forward(t, &vars, xv).unwrap();
            t.sum(out)
        };
        let err = max_rel_err(&finite_diff(f, &x, 1e-5), &analytic_grad(f, &x), 1e-6);
        assert!(err < 1e-4, "rel err {err}");
    }

    #[test]
    fn wrong_input_shape_rejected() {
        let g = ModelParams::zeros(small_gen()).unwrap();
        assert!(matches!(
            generate(&g, &Tensor::zeros(&[2, 9])),
            Err(ModelError::Shape(_))
        ));
        assert!(matches!(
            ModelParams::zeros(ArchSpec::generator(8, 100)),
            Err(ModelError::InvalidArch(_))
        ));
    }

    #[test]
    fn checkpoint_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.sfag");
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = ModelParams::init(small_gen(), 0.02, &mut rng).unwrap();
        save_checkpoint(&g, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, g);
        for (a, b) in back.tensors.iter().zip(&g.tensors) {
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }

        let bytes = checkpoint_bytes(&g);
        assert!(matches!(
            params_from_bytes(&bytes[..bytes.len() - 3]),
            Err(ModelError::Corrupt(_))
        ));
        let mut v99 = bytes.clone();
        v99[8..12].copy_from_slice(&99u32.to_le_bytes());
        assert!(matches!(params_from_bytes(&v99), Err(ModelError::UnsupportedVersion(99))));
        assert_eq!(
            params_from_bytes(&v99).unwrap_err().to_string(),
            "unsupported version 99 (expected 1)"
        );

        // a well-formed file whose tensors disagree with its architecture
        let mut wrong = g.clone();
        wrong.tensors[0] = Tensor::zeros(&[8, 17]);
        assert!(matches!(
            params_from_bytes(&checkpoint_bytes(&wrong)),
            Err(ModelError::SizeMismatch { index: 0, .. })
        ));
        assert!(matches!(
            load_checkpoint(&dir.path().join("missing.sfag")),
            Err(ModelError::Io(_))
        ));
    }

    #[test]
    fn generate_path_concatenates_windows() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = ModelParams::init(small_gen(), 0.01, &mut rng).unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        let p = generate_path(&g, 5, 9, &mut a).unwrap();
        assert_eq!(p.len(), 5 * 130);
        assert_eq!(p, generate_path(&g, 5, 9, &mut b).unwrap());
        assert_eq!(p.seed(), Some(9));
    }
}
