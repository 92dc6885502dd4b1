//! Feed-forward networks with ReLU hidden layers and a linear output layer,
//! backpropagation, and momentum SGD.

use std::io::{Read, Write};

use ndarray::{Array1, ArrayView2, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::linalg::{ensure_finite, Matrix};

/// Leading bytes of a parameter snapshot.
pub const SNAPSHOT_MAGIC: &[u8; 4] = b"NOI1";

/// Hyperparameters shared by the stochastic optimizers.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimConfig {
    /// Learning rate.
    pub eta: f64,
    /// Momentum coefficient in `[0, 1)`.
    pub mu: f64,
    /// L2 penalty on weights (biases are exempt).
    pub weight_decay: f64,
    pub minibatch_size: usize,
    pub epochs: usize,
    /// Time constant of the running covariance estimates, in `[0, 1]`.
    pub rho: f64,
    /// Relative ridge added to covariance estimates.
    pub eps: f64,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            eta: 0.01,
            mu: 0.9,
            weight_decay: 1e-4,
            minibatch_size: 100,
            epochs: 50,
            rho: 0.99,
            eps: 1e-6,
            seed: 0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("eta must be positive");
        }
        if !(0.0..1.0).contains(&self.mu) {
            return bad("mu must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be >= 0");
        }
        if self.minibatch_size == 0 {
            return bad("minibatch_size must be positive");
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return bad("rho must lie in [0, 1]");
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return bad("eps must be positive");
        }
        Ok(())
    }
}

/// Weights and biases of an MLP. Layer `k` maps `layer_sizes[k]` inputs to
/// `layer_sizes[k + 1]` outputs; every layer but the last applies ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layer_sizes: Vec<usize>,
    pub weights: Vec<Matrix>,
    pub biases: Vec<Array1<f64>>,
}

/// Gradients (or momentum buffers) shaped like an [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(p: &MlpParams) -> Self {
        Gradients {
            weights: p.weights.iter().map(|w| Matrix::zeros(w.dim())).collect(),
            biases: p.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
        }
    }

    fn matches(&self, p: &MlpParams) -> bool {
        self.weights.len() == p.weights.len()
            && self.weights.iter().zip(&p.weights).all(|(a, b)| a.dim() == b.dim())
            && self.biases.iter().zip(&p.biases).all(|(a, b)| a.len() == b.len())
    }
}

/// Layer inputs recorded by [`MlpParams::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    layer_sizes: Vec<usize>,
    /// `inputs[k]` is the input to layer `k` (post-ReLU for `k > 0`).
    inputs: Vec<Matrix>,
}

impl ForwardCache {
    pub fn batch_len(&self) -> usize {
        self.inputs[0].ncols()
    }
}

fn check_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::Config(format!(
            "an architecture needs at least input and output sizes, got {layer_sizes:?}"
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::Config(format!("layer sizes must be positive, got {layer_sizes:?}")));
    }
    Ok(())
}

impl MlpParams {
    /// Seeded Glorot-uniform weights, zero biases.
    pub fn init(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        check_sizes(layer_sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
            weights.push(Matrix::from_shape_simple_fn((fan_out, fan_in), || dist.sample(&mut rng)));
        }
        let biases = layer_sizes[1..].iter().map(|&n| Array1::zeros(n)).collect();
        Ok(MlpParams {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
        })
    }

    /// Builds parameters from explicit weights (`out x in`) and biases.
    pub fn from_parts(weights: Vec<Matrix>, biases: Vec<Array1<f64>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::Config(format!(
                "{} weight matrices with {} bias vectors",
                weights.len(),
                biases.len()
            )));
        }
        let mut layer_sizes = vec![weights[0].ncols()];
        for (k, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.ncols() != *layer_sizes.last().expect("non-empty") || b.len() != w.nrows() {
                return Err(Error::Dimension(format!(
                    "layer {k}: weight {:?} and bias {} do not chain",
                    w.dim(),
                    b.len()
                )));
            }
            ensure_finite(w.view(), "weights")?;
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric((b.len(), 1), "bias contains non-finite entries"));
            }
            layer_sizes.push(w.nrows());
        }
        check_sizes(&layer_sizes)?;
        Ok(MlpParams {
            layer_sizes,
            weights,
            biases,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated")
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    fn check_input(&self, x: ArrayView2<f64>) -> Result<()> {
        if x.nrows() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "network expects {} input rows, got {}",
                self.input_dim(),
                x.nrows()
            )));
        }
        Ok(())
    }

    fn layer(&self, k: usize, input: ArrayView2<f64>) -> Matrix {
        let mut out = self.weights[k].dot(&input);
        out += &self.biases[k].view().insert_axis(Axis(1));
        if k + 1 < self.n_layers() {
            out.mapv_inplace(|v| v.max(0.0));
        }
        out
    }

    /// Network output for a batch of column samples, without a cache.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Matrix> {
        self.check_input(x)?;
        let mut h = self.layer(0, x);
        for k in 1..self.n_layers() {
            h = self.layer(k, h.view());
        }
        Ok(h)
    }

    /// Network output plus the activations needed by [`MlpParams::backward`].
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Matrix, ForwardCache)> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.n_layers());
        inputs.push(x.to_owned());
        for k in 0..self.n_layers() - 1 {
            let next = self.layer(k, inputs[k].view());
            inputs.push(next);
        }
        let out = self.layer(self.n_layers() - 1, inputs[self.n_layers() - 1].view());
        Ok((
            out,
            ForwardCache {
                layer_sizes: self.layer_sizes.clone(),
                inputs,
            },
        ))
    }

    /// Gradient of `(1/m) sum_i loss_i` where column `i` of `grad_output` is
    /// the derivative of `loss_i` with respect to output column `i`.
    pub fn backward(&self, cache: &ForwardCache, grad_output: ArrayView2<f64>) -> Result<Gradients> {
        if cache.layer_sizes != self.layer_sizes {
            return Err(Error::Usage("forward cache belongs to a different architecture".into()));
        }
        let m = cache.batch_len();
        if grad_output.dim() != (self.output_dim(), m) {
            return Err(Error::Usage(format!(
                "output gradient {:?} does not match the cached batch ({}, {m})",
                grad_output.dim(),
                self.output_dim()
            )));
        }
        let n = self.n_layers();
        let mut weights = vec![Matrix::zeros((0, 0)); n];
        let mut biases = vec![Array1::zeros(0); n];
        let mut delta = grad_output.to_owned() / m as f64;
        for k in (0..n).rev() {
            let input = &cache.inputs[k];
            weights[k] = delta.dot(&input.t());
            biases[k] = delta.sum_axis(Axis(1));
            if k > 0 {
                let mut back = self.weights[k].t().dot(&delta);
                // ReLU derivative, taken as 0 at the kink
                Zip::from(&mut back).and(input).for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = back;
            }
        }
        Ok(Gradients { weights, biases })
    }

    /// Momentum step: `v <- mu v - eta (g + wd W)`, `W <- W + v`. Biases get
    /// no weight decay.
    pub fn sgd_step(&mut self, grads: &Gradients, velocity: &mut Gradients, cfg: &OptimConfig) -> Result<()> {
        if !grads.matches(self) || !velocity.matches(self) {
            return Err(Error::Dimension("gradient shapes do not match the network".into()));
        }
        let (eta, mu, wd) = (cfg.eta, cfg.mu, cfg.weight_decay);
        for k in 0..self.n_layers() {
            Zip::from(&mut velocity.weights[k])
                .and(&mut self.weights[k])
                .and(&grads.weights[k])
                .for_each(|v, w, &g| {
                    *v = mu * *v - eta * (g + wd * *w);
                    *w += *v;
                });
            Zip::from(&mut velocity.biases[k])
                .and(&mut self.biases[k])
                .and(&grads.biases[k])
                .for_each(|v, b, &g| {
                    *v = mu * *v - eta * g;
                    *b += *v;
                });
        }
        Ok(())
    }

    /// Serializes as `NOI1`, the layer-size count and sizes (u32 LE), then
    /// each layer's row-major weights and biases (f64 LE).
    pub fn write_snapshot(&self, out: &mut impl Write) -> std::io::Result<()> {
        out.write_all(SNAPSHOT_MAGIC)?;
        out.write_all(&(self.layer_sizes.len() as u32).to_le_bytes())?;
        for &s in &self.layer_sizes {
            out.write_all(&(s as u32).to_le_bytes())?;
        }
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for v in w.iter().chain(b.iter()) {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_snapshot_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_snapshot(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    /// Reads one snapshot written by [`MlpParams::write_snapshot`].
    pub fn read_snapshot(input: &mut impl Read) -> Result<Self> {
        let mut reader = SnapshotReader { input, offset: 0 };
        let magic = reader.bytes::<4>()?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(Error::Format {
                offset: 0,
                msg: format!("bad snapshot magic {magic:?}"),
            });
        }
        let count_at = reader.offset;
        let count = u32::from_le_bytes(reader.bytes::<4>()?) as usize;
        if !(2..=1024).contains(&count) {
            return Err(Error::Format {
                offset: count_at,
                msg: format!("implausible layer count {count}"),
            });
        }
        let mut sizes = Vec::with_capacity(count);
        for _ in 0..count {
            sizes.push(u32::from_le_bytes(reader.bytes::<4>()?) as usize);
        }
        check_sizes(&sizes).map_err(|e| Error::Format {
            offset: count_at,
            msg: e.to_string(),
        })?;
        let mut weights = Vec::with_capacity(count - 1);
        let mut biases = Vec::with_capacity(count - 1);
        for pair in sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let mut w = Matrix::zeros((fan_out, fan_in));
            for v in w.iter_mut() {
                *v = reader.f64()?;
            }
            let mut b = Array1::zeros(fan_out);
            for v in b.iter_mut() {
                *v = reader.f64()?;
            }
            weights.push(w);
            biases.push(b);
        }
        MlpParams::from_parts(weights, biases)
    }
}

struct SnapshotReader<'a, R> {
    input: &'a mut R,
    offset: usize,
}

impl<R: Read> SnapshotReader<'_, R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.input.read_exact(&mut buf).map_err(|e| Error::Format {
            offset: self.offset,
            msg: format!("snapshot truncated: {e}"),
        })?;
        self.offset += N;
        Ok(buf)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes::<8>()?))
    }
}
