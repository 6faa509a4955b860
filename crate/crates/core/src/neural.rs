//! ReLU multilayer perceptron surrogate with Sobolev (value + input-gradient)
//! training.
//!
//! Hidden layers apply ReLU; the output layer is affine so the network can
//! produce negative controls. Parameters live in one flat vector, layer by
//! layer: `W_l` row-major (`out × in`) followed by `b_l`.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, DatasetKind, SampleTriplet};
use crate::error::{Error, Result};
use crate::mpc::Policy;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub output_dim: usize,
}

impl MlpArchitecture {
    pub fn new(input_dim: usize, hidden_widths: Vec<usize>, output_dim: usize) -> Result<Self> {
        let arch = MlpArchitecture {
            input_dim,
            hidden_widths,
            output_dim,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// Two hidden layers of 16 units.
    pub fn default_for(input_dim: usize, output_dim: usize) -> Self {
        MlpArchitecture {
            input_dim,
            hidden_widths: vec![16, 16],
            output_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_widths.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one hidden layer".into()));
        }
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_widths.contains(&0) {
            return Err(Error::InvalidArgument("all layer widths must be at least 1".into()));
        }
        Ok(())
    }

    /// `[input, hidden…, output]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim];
        d.extend(&self.hidden_widths);
        d.push(self.output_dim);
        d
    }

    pub fn n_params(&self) -> usize {
        self.dims().windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    arch: MlpArchitecture,
    dims: Vec<usize>,
    /// Offset of `W_l` in `theta`; `b_l` follows it.
    offsets: Vec<usize>,
    theta: Vec<f64>,
}

impl MlpParams {
    pub fn zeros(arch: &MlpArchitecture) -> Result<Self> {
        arch.validate()?;
        let dims = arch.dims();
        let mut offsets = Vec::with_capacity(dims.len() - 1);
        let mut off = 0;
        for w in dims.windows(2) {
            offsets.push(off);
            off += w[1] * w[0] + w[1];
        }
        Ok(MlpParams {
            arch: arch.clone(),
            dims,
            offsets,
            theta: vec![0.0; off],
        })
    }

    pub fn architecture(&self) -> &MlpArchitecture {
        &self.arch
    }

    pub fn n_layers(&self) -> usize {
        self.offsets.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.theta
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    /// `W_l` as an `out × in` matrix.
    pub fn weight(&self, l: usize) -> DMatrix<f64> {
        let (o, i) = (self.dims[l + 1], self.dims[l]);
        DMatrix::from_row_slice(o, i, &self.theta[self.offsets[l]..self.offsets[l] + o * i])
    }

    pub fn bias(&self, l: usize) -> DVector<f64> {
        let (o, i) = (self.dims[l + 1], self.dims[l]);
        let s = self.offsets[l] + o * i;
        DVector::from_column_slice(&self.theta[s..s + o])
    }

    pub fn set_weight(&mut self, l: usize, w: &DMatrix<f64>) -> Result<()> {
        let (o, i) = (self.dims[l + 1], self.dims[l]);
        if w.shape() != (o, i) {
            return Err(Error::dim(format!("weight {l}"), o * i, w.len()));
        }
        for r in 0..o {
            for c in 0..i {
                self.theta[self.offsets[l] + r * i + c] = w[(r, c)];
            }
        }
        Ok(())
    }

    pub fn set_bias(&mut self, l: usize, b: &DVector<f64>) -> Result<()> {
        let (o, i) = (self.dims[l + 1], self.dims[l]);
        if b.len() != o {
            return Err(Error::dim(format!("bias {l}"), o, b.len()));
        }
        let s = self.offsets[l] + o * i;
        self.theta[s..s + o].copy_from_slice(b.as_slice());
        Ok(())
    }

    fn w(&self, l: usize) -> &[f64] {
        let (o, i) = (self.dims[l + 1], self.dims[l]);
        &self.theta[self.offsets[l]..self.offsets[l] + o * i]
    }

    fn b(&self, l: usize) -> &[f64] {
        let (o, i) = (self.dims[l + 1], self.dims[l]);
        let s = self.offsets[l] + o * i;
        &self.theta[s..s + o]
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(arch: &MlpArchitecture, seed: u64) -> Result<MlpParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_with_rng(arch, &mut rng)
}

fn init_with_rng(arch: &MlpArchitecture, rng: &mut ChaCha8Rng) -> Result<MlpParams> {
    let mut p = MlpParams::zeros(arch)?;
    for l in 0..p.n_layers() {
        let (o, i) = (p.dims[l + 1], p.dims[l]);
        let limit = (6.0 / (i + o) as f64).sqrt();
        let off = p.offsets[l];
        for v in &mut p.theta[off..off + o * i] {
            *v = rng.gen_range(-limit..limit);
        }
    }
    Ok(p)
}

/// Per-sample buffers for the forward pass, the input Jacobian and
/// double backpropagation.
///
/// Jacobians are stored as `n` tangent vectors, one per input coordinate:
/// entry `(k, c)` of a `d × n` block sits at `c·d + k`.
struct Workspace {
    dims: Vec<usize>,
    /// Layer inputs: `act[0] = x`, `act[l]` = output of hidden layer `l`.
    act: Vec<Vec<f64>>,
    /// ReLU masks of hidden layers (index `l` is the mask of `act[l + 1]`).
    mask: Vec<Vec<f64>>,
    out: Vec<f64>,
    /// `tan[l] = ∂act[l]/∂x`; `tan[0]` is the identity and never read.
    tan: Vec<Vec<f64>>,
    out_tan: Vec<f64>,
    delta: Vec<Vec<f64>>,
    /// Adjoint of the tangents during double backprop.
    adj: Vec<f64>,
    adj_next: Vec<f64>,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

impl Workspace {
    fn new(dims: &[usize]) -> Self {
        let n = dims[0];
        let layers = dims.len() - 1;
        let widest = dims.iter().max().copied().unwrap_or(1) * n;
        Workspace {
            dims: dims.to_vec(),
            act: dims[..layers].iter().map(|&d| vec![0.0; d]).collect(),
            mask: dims[1..layers].iter().map(|&d| vec![0.0; d]).collect(),
            out: vec![0.0; dims[layers]],
            tan: dims[..layers].iter().map(|&d| vec![0.0; d * n]).collect(),
            out_tan: vec![0.0; dims[layers] * n],
            delta: dims[1..].iter().map(|&d| vec![0.0; d]).collect(),
            adj: vec![0.0; widest],
            adj_next: vec![0.0; widest],
        }
    }

    fn forward(&mut self, p: &MlpParams, x: &[f64], with_jacobian: bool) {
        let layers = self.dims.len() - 1;
        let n = self.dims[0];
        self.act[0].copy_from_slice(x);
        for l in 0..layers {
            let (o, i) = (self.dims[l + 1], self.dims[l]);
            let (w, b) = (p.w(l), p.b(l));
            let last = l + 1 == layers;
            for r in 0..o {
                let z = b[r] + dot(&w[r * i..(r + 1) * i], &self.act[l]);
                if last {
                    self.out[r] = z;
                } else {
                    // Exactly-zero pre-activations take the zero branch.
                    let on = z > 0.0;
                    self.mask[l][r] = if on { 1.0 } else { 0.0 };
                    self.act[l + 1][r] = if on { z } else { 0.0 };
                }
            }
            if !with_jacobian {
                continue;
            }
            let (lo, hi) = self.tan.split_at_mut(l + 1);
            let dst: &mut [f64] = if last { &mut self.out_tan } else { &mut hi[0] };
            let mask = if last { None } else { Some(&self.mask[l]) };
            for c in 0..n {
                for r in 0..o {
                    let v = if l == 0 {
                        w[r * i + c]
                    } else {
                        dot(&w[r * i..(r + 1) * i], &lo[l][c * i..(c + 1) * i])
                    };
                    dst[c * o + r] = match mask {
                        Some(mk) => mk[r] * v,
                        None => v,
                    };
                }
            }
        }
    }

    /// Loss of one sample; accumulates its parameter gradient into `grad` when given.
    fn sample_loss(
        &mut self,
        p: &MlpParams,
        s: &SampleTriplet,
        gamma: f64,
        grad: Option<&mut [f64]>,
    ) -> f64 {
        let layers = self.dims.len() - 1;
        let n = self.dims[0];
        let m = self.dims[layers];
        let use_jac = gamma != 0.0;
        self.forward(p, s.x.as_slice(), use_jac);

        let mut loss = 0.0;
        let top = layers - 1;
        for r in 0..m {
            let e = self.out[r] - s.u[r];
            loss += e * e;
            self.delta[top][r] = 2.0 * e;
        }
        if use_jac {
            let mut jl = 0.0;
            for c in 0..n {
                for r in 0..m {
                    let e = self.out_tan[c * m + r] - s.u_grad[(r, c)];
                    jl += e * e;
                    self.adj[c * m + r] = 2.0 * gamma * e;
                }
            }
            loss += gamma * jl;
        }
        let Some(grad) = grad else {
            return loss;
        };

        // Value term: standard backprop of δ through the layers.
        for l in (0..layers).rev() {
            let (o, i) = (self.dims[l + 1], self.dims[l]);
            let off = p.offsets[l];
            let (gw, rest) = grad[off..].split_at_mut(o * i);
            let gb = &mut rest[..o];
            let delta = &self.delta[l];
            for r in 0..o {
                let d = delta[r];
                if d != 0.0 {
                    gb[r] += d;
                    axpy(d, &self.act[l], &mut gw[r * i..(r + 1) * i]);
                }
            }
            if l > 0 {
                let w = p.w(l);
                let (lo, hi) = self.delta.split_at_mut(l);
                let prev = &mut lo[l - 1];
                prev.fill(0.0);
                for r in 0..o {
                    let d = hi[0][r];
                    if d != 0.0 {
                        axpy(d, &w[r * i..(r + 1) * i], prev);
                    }
                }
                for (pv, mv) in prev.iter_mut().zip(&self.mask[l - 1]) {
                    *pv *= mv;
                }
            }
        }

        if use_jac {
            // Gradient term with masks held fixed: out_tan = W_top · tan[top],
            // tan[l+1] = D_l W_l tan[l]. `adj` holds dL/d(out_tan) on entry.
            for l in (0..layers).rev() {
                let (o, i) = (self.dims[l + 1], self.dims[l]);
                let off = p.offsets[l];
                let w = p.w(l);
                let cur = &mut self.adj[..o * n];
                if l + 1 < layers {
                    let mask = &self.mask[l];
                    for blk in cur.chunks_exact_mut(o) {
                        for (a, mv) in blk.iter_mut().zip(mask) {
                            *a *= mv;
                        }
                    }
                }
                let gw = &mut grad[off..off + o * i];
                if l == 0 {
                    for c in 0..n {
                        for r in 0..o {
                            gw[r * i + c] += cur[c * o + r];
                        }
                    }
                    break;
                }
                let src = &self.tan[l];
                let next = &mut self.adj_next[..i * n];
                next.fill(0.0);
                for c in 0..n {
                    let t = &src[c * i..(c + 1) * i];
                    let nx = &mut next[c * i..(c + 1) * i];
                    for r in 0..o {
                        let a = cur[c * o + r];
                        if a != 0.0 {
                            axpy(a, t, &mut gw[r * i..(r + 1) * i]);
                            axpy(a, &w[r * i..(r + 1) * i], nx);
                        }
                    }
                }
                std::mem::swap(&mut self.adj, &mut self.adj_next);
            }
        }
        loss
    }
}

pub fn forward(params: &MlpParams, x: &DVector<f64>) -> DVector<f64> {
    let mut ws = Workspace::new(&params.dims);
    ws.forward(params, x.as_slice(), false);
    DVector::from_vec(ws.out)
}

/// `∂μ/∂x` at `x` (`m × n`): the weight product with ReLU masks applied.
pub fn input_jacobian(params: &MlpParams, x: &DVector<f64>) -> DMatrix<f64> {
    let mut ws = Workspace::new(&params.dims);
    ws.forward(params, x.as_slice(), true);
    let n = params.dims[0];
    let m = *params.dims.last().unwrap();
    DMatrix::from_column_slice(m, n, &ws.out_tan)
}

/// `Σ ‖u_i − μ(x_i)‖² + γ ‖u'_i − ∂μ/∂x(x_i)‖²_F`.
pub fn sobolev_loss(params: &MlpParams, batch: &[SampleTriplet], gamma: f64) -> f64 {
    let mut ws = Workspace::new(&params.dims);
    batch.iter().map(|s| ws.sample_loss(params, s, gamma, None)).sum()
}

/// Exact gradient of [`sobolev_loss`] with respect to all weights and biases.
pub fn loss_gradient(params: &MlpParams, batch: &[SampleTriplet], gamma: f64) -> MlpParams {
    let mut ws = Workspace::new(&params.dims);
    let mut grad = MlpParams {
        theta: vec![0.0; params.theta.len()],
        ..params.clone()
    };
    for s in batch {
        ws.sample_loss(params, s, gamma, Some(&mut grad.theta));
    }
    grad
}

impl Policy for MlpParams {
    fn act(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.arch.input_dim {
            return Err(Error::dim("network input", self.arch.input_dim, x.len()));
        }
        Ok(forward(self, x))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    /// Total loss over the training set at which training stops.
    pub loss_target: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.0,
            batch_size: 5,
            learning_rate: 1e-3,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            loss_target: 0.01,
            max_epochs: 50_000,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if !(self.loss_target > 0.0) {
            return Err(Error::InvalidArgument("loss_target must be positive".into()));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::InvalidArgument("gamma must be non-negative".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    TargetReached,
    EpochCap,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub final_params: MlpParams,
    pub epochs_run: usize,
    /// Full training-set loss after each epoch.
    pub loss_history: Vec<f64>,
    pub stop_reason: StopReason,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        *self.loss_history.last().expect("at least one epoch")
    }

    /// CSV with header `epoch,loss`.
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("epoch,loss\n");
        for (e, l) in self.loss_history.iter().enumerate() {
            s.push_str(&format!("{},{}\n", e + 1, l));
        }
        s
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
}

impl Adam {
    fn new(n: usize, cfg: &TrainConfig) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr: cfg.learning_rate,
            b1: cfg.adam_betas.0,
            b2: cfg.adam_betas.1,
            eps: cfg.adam_eps,
        }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.b1.powi(self.t);
        let c2 = 1.0 - self.b2.powi(self.t);
        for k in 0..theta.len() {
            let g = grad[k];
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g;
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g;
            let mh = self.m[k] / c1;
            let vh = self.v[k] / c2;
            theta[k] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Mini-batch Adam on the Sobolev loss until the total training loss reaches
/// `loss_target` or `max_epochs` have run.
pub fn train(ds: &Dataset, arch: &MlpArchitecture, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    arch.validate()?;
    if ds.kind != DatasetKind::Train {
        return Err(Error::InvalidArgument("training requires a train dataset".into()));
    }
    if ds.is_empty() {
        return Err(Error::InvalidArgument("training dataset is empty".into()));
    }
    if ds.state_dim != arch.input_dim {
        return Err(Error::dim("network input", arch.input_dim, ds.state_dim));
    }
    if ds.input_dim != arch.output_dim {
        return Err(Error::dim("network output", arch.output_dim, ds.input_dim));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = init_with_rng(arch, &mut rng)?;
    let mut ws = Workspace::new(&params.dims);
    let mut adam = Adam::new(params.theta.len(), cfg);
    let mut grad = vec![0.0; params.theta.len()];
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut loss_history = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        for batch in order.chunks(cfg.batch_size) {
            grad.fill(0.0);
            for &i in batch {
                ws.sample_loss(&params, &ds.samples[i], cfg.gamma, Some(&mut grad));
            }
            adam.step(&mut params.theta, &grad);
        }
        let loss: f64 = ds
            .samples
            .iter()
            .map(|s| ws.sample_loss(&params, s, cfg.gamma, None))
            .sum();
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                detail: format!(
                    "learning rate {}, last finite loss {:?}",
                    cfg.learning_rate,
                    loss_history.last()
                ),
            });
        }
        loss_history.push(loss);
        if loss <= cfg.loss_target {
            return Ok(TrainReport {
                final_params: params,
                epochs_run: epoch,
                loss_history,
                stop_reason: StopReason::TargetReached,
            });
        }
    }
    if loss_history.is_empty() {
        return Err(Error::InvalidArgument("max_epochs must be at least 1".into()));
    }
    Ok(TrainReport {
        final_params: params,
        epochs_run: cfg.max_epochs,
        loss_history,
        stop_reason: StopReason::EpochCap,
    })
}

#[derive(Serialize, Deserialize)]
struct LayerJson {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ParamsJson {
    architecture: MlpArchitecture,
    layers: Vec<LayerJson>,
}

impl Serialize for MlpParams {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ParamsJson {
            architecture: self.arch.clone(),
            layers: (0..self.n_layers())
                .map(|l| LayerJson {
                    weights: crate::matrix_json::to_rows(&self.weight(l)),
                    bias: self.b(l).to_vec(),
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for MlpParams {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = ParamsJson::deserialize(de)?;
        let mut p = MlpParams::zeros(&raw.architecture).map_err(D::Error::custom)?;
        if raw.layers.len() != p.n_layers() {
            return Err(D::Error::custom(format!(
                "expected {} layers, found {}",
                p.n_layers(),
                raw.layers.len()
            )));
        }
        for (l, layer) in raw.layers.iter().enumerate() {
            let w = crate::matrix_json::from_rows(&layer.weights).map_err(D::Error::custom)?;
            p.set_weight(l, &w).map_err(D::Error::custom)?;
            p.set_bias(l, &DVector::from_column_slice(&layer.bias))
                .map_err(D::Error::custom)?;
        }
        Ok(p)
    }
}
