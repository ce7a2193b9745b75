//! Parameterised building blocks recorded onto a [`Graph`].

use rand::Rng;

use super::graph::{BatchStats, Graph, Var};
use super::kernels::ConvSpec;
use super::{BufferId, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

pub const BN_MOMENTUM: f64 = 0.1;

/// One forward pass: the graph being recorded plus the state the blocks
/// read from (parameters, mode, dropout RNG) and the batch-norm statistics
/// they produce. Running statistics are applied afterwards with
/// [`Forward::commit_stats`], so the store stays borrowed immutably.
pub struct Forward<'a> {
    pub graph: Graph,
    pub store: &'a ParamStore,
    pub train: bool,
    pub dropout_rng: Option<&'a mut dyn rand::RngCore>,
    pending: Vec<(BufferId, BufferId, BatchStats)>,
}

impl<'a> Forward<'a> {
    pub fn new(store: &'a ParamStore, train: bool) -> Self {
        Self {
            graph: Graph::new(),
            store,
            train,
            dropout_rng: None,
            pending: Vec::new(),
        }
    }

    pub fn with_dropout_rng(mut self, rng: &'a mut dyn rand::RngCore) -> Self {
        self.dropout_rng = Some(rng);
        self
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.graph.param(self.store, id)
    }

    /// Inverted dropout in training mode when an RNG is attached; identity otherwise.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        if !self.train || p == 0.0 {
            return Ok(x);
        }
        let Some(rng) = self.dropout_rng.as_mut() else {
            return Ok(x);
        };
        let n = self.graph.value(x).len();
        let keep: Vec<bool> = (0..n).map(|_| rng.gen::<f64>() >= p).collect();
        self.graph.dropout(x, p, Some(&keep))
    }

    /// Running-stat updates gathered during the pass, in recording order.
    pub fn take_stats(&mut self) -> Vec<(BufferId, BufferId, BatchStats)> {
        std::mem::take(&mut self.pending)
    }

    /// Folds gathered batch statistics into the running buffers:
    /// `running = (1 - momentum) running + momentum batch`, with the
    /// unbiased batch variance.
    pub fn commit_stats(stats: Vec<(BufferId, BufferId, BatchStats)>, store: &mut ParamStore) {
        for (mean_id, var_id, s) in stats {
            let unbias = if s.count > 1 {
                s.count as f64 / (s.count - 1) as f64
            } else {
                1.0
            };
            for (r, m) in store.buffer_mut(mean_id).tensor.data_mut().iter_mut().zip(&s.mean) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
            }
            for (r, v) in store.buffer_mut(var_id).tensor.data_mut().iter_mut().zip(&s.var) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * unbias;
            }
        }
    }
}

/// 2D or 3D convolution with optional bias.
#[derive(Debug, Clone)]
pub struct Conv {
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Conv {
    /// A convolution over `[N, C, H, W]` when `spec.kernel[0] == 1` and
    /// `three_d` is false, else over `[N, C, D, H, W]`.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        spec: ConvSpec,
        three_d: bool,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let shape = if three_d {
            spec.weight_shape_3d()
        } else {
            if spec.kernel[0] != 1 {
                return Err(Error::Shape(format!("{name}: 2D conv with depth kernel {}", spec.kernel[0])));
            }
            spec.weight_shape_2d()
        };
        let taps: usize = spec.kernel.iter().product();
        let weight = store.add_glorot(
            format!("{name}.weight"),
            &shape,
            spec.in_channels * taps,
            spec.out_channels * taps,
            rng,
        )?;
        let bias = if bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros(&[spec.out_channels]))?)
        } else {
            None
        };
        Ok(Self { spec, weight, bias })
    }

    pub fn forward(&self, f: &mut Forward, x: Var) -> Result<Var> {
        let w = f.param(self.weight);
        let b = self.bias.map(|b| f.param(b));
        f.graph.conv(x, w, b, self.spec)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[channels], 1.0))?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels]))?,
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[channels]))?,
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor::full(&[channels], 1.0))?,
        })
    }

    pub fn forward(&self, f: &mut Forward, x: Var) -> Result<Var> {
        let gamma = f.param(self.gamma);
        let beta = f.param(self.beta);
        if f.train {
            let (y, stats) = f.graph.batch_norm_train(x, gamma, beta)?;
            f.pending.push((self.running_mean, self.running_var, stats));
            Ok(y)
        } else {
            let store = f.store;
            f.graph.batch_norm_eval(
                x,
                gamma,
                beta,
                store.buffer(self.running_mean).tensor.data(),
                store.buffer(self.running_var).tensor.data(),
            )
        }
    }
}

/// Convolution, batch norm, ReLU.
#[derive(Debug, Clone)]
pub struct ConvBnRelu {
    pub conv: Conv,
    pub bn: BatchNorm,
}

impl ConvBnRelu {
    pub fn new(store: &mut ParamStore, name: &str, spec: ConvSpec, three_d: bool, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            conv: Conv::new(store, &format!("{name}.conv"), spec, three_d, false, rng)?,
            bn: BatchNorm::new(store, &format!("{name}.bn"), spec.out_channels)?,
        })
    }

    pub fn forward(&self, f: &mut Forward, x: Var) -> Result<Var> {
        let y = self.conv.forward(f, x)?;
        let y = self.bn.forward(f, y)?;
        Ok(f.graph.relu(y))
    }
}

/// `y = x W^T + b`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Dense {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let weight = store.add_glorot(format!("{name}.weight"), &[outputs, inputs], inputs, outputs, rng)?;
        let bias = if bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros(&[outputs]))?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, f: &mut Forward, x: Var) -> Result<Var> {
        let w = f.param(self.weight);
        let b = self.bias.map(|b| f.param(b));
        f.graph.linear(x, w, b)
    }
}

/// Non-local attention with a residual connection.
///
/// With `theta = phi(x)`, `psi(x)`, `g(x)` the three 1x1 projections to
/// `E/2` channels, pixel `i` receives `sum_j softmax_j(theta_i . psi_j) g_j`,
/// which a final 1x1 convolution maps back to `E` channels before it is
/// added to `x`.
#[derive(Debug, Clone)]
pub struct AttentionBlock {
    pub channels: usize,
    pub phi: Conv,
    pub psi: Conv,
    pub g: Conv,
    pub out: Conv,
}

impl AttentionBlock {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, rng: &mut impl Rng) -> Result<Self> {
        if !channels.is_multiple_of(2) || channels == 0 {
            return Err(Error::Shape(format!("{name}: attention needs an even channel count, got {channels}")));
        }
        let half = channels / 2;
        let down = ConvSpec::conv2d(channels, half, 1, 1, 0);
        Ok(Self {
            channels,
            phi: Conv::new(store, &format!("{name}.phi"), down, false, true, rng)?,
            psi: Conv::new(store, &format!("{name}.psi"), down, false, true, rng)?,
            g: Conv::new(store, &format!("{name}.g"), down, false, true, rng)?,
            out: Conv::new(store, &format!("{name}.out"), ConvSpec::conv2d(half, channels, 1, 1, 0), false, true, rng)?,
        })
    }

    /// Returns the block output and the `[N, P, P]` attention matrix.
    pub fn forward(&self, f: &mut Forward, x: Var) -> Result<(Var, Var)> {
        let shape = f.graph.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != self.channels {
            return Err(Error::Shape(format!(
                "attention over {} channels got input {shape:?}",
                self.channels
            )));
        }
        let (n, h, w) = (shape[0], shape[2], shape[3]);
        let half = self.channels / 2;
        let p = h * w;
        let flat = |f: &mut Forward, v: Var| f.graph.reshape(v, &[n, half, p]);
        let theta = self.phi.forward(f, x)?;
        let theta = flat(f, theta)?;
        let psi = self.psi.forward(f, x)?;
        let psi = flat(f, psi)?;
        let g = self.g.forward(f, x)?;
        let g = flat(f, g)?;
        // [N, P, P]: row i holds theta_i . psi_j
        let sim = f.graph.bmm(theta, psi, true, false)?;
        let attn = f.graph.softmax(sim)?;
        // y[c, i] = sum_j g[c, j] attn[i, j]
        let y = f.graph.bmm(g, attn, false, true)?;
        let y = f.graph.reshape(y, &[n, half, h, w])?;
        let y = self.out.forward(f, y)?;
        Ok((f.graph.add(x, y)?, attn))
    }
}

/// SE reduction ratio for a channel count: 16, or 4 below 16 channels,
/// lowered further until it divides the channel count.
pub fn default_se_ratio(channels: usize) -> usize {
    let mut r = if channels >= 16 { 16 } else { 4 };
    while r > 1 && (!channels.is_multiple_of(r) || channels / r == 0) {
        r /= 2;
    }
    r.max(1)
}

/// Squeeze-and-excitation gate: `out_c = s_c u_c` with
/// `s = sigmoid(W2 relu(W1 z))` and `z` the channel means of `u`.
#[derive(Debug, Clone)]
pub struct SeGate {
    pub channels: usize,
    pub ratio: usize,
    pub w1: ParamId,
    pub w2: ParamId,
}

impl SeGate {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, ratio: usize, rng: &mut impl Rng) -> Result<Self> {
        if ratio == 0 || !channels.is_multiple_of(ratio) {
            return Err(Error::Shape(format!(
                "{name}: {channels} channels not divisible by reduction ratio {ratio}"
            )));
        }
        let hidden = channels / ratio;
        Ok(Self {
            channels,
            ratio,
            w1: store.add_glorot(format!("{name}.w1"), &[hidden, channels], channels, hidden, rng)?,
            w2: store.add_glorot(format!("{name}.w2"), &[channels, hidden], hidden, channels, rng)?,
        })
    }

    /// Returns the gated output and the `[N, C]` gate values `s`.
    pub fn forward(&self, f: &mut Forward, u: Var) -> Result<(Var, Var)> {
        let z = f.graph.global_avg_pool(u)?;
        let w1 = f.param(self.w1);
        let w2 = f.param(self.w2);
        let h = f.graph.linear(z, w1, None)?;
        let h = f.graph.relu(h);
        let s = f.graph.linear(h, w2, None)?;
        let s = f.graph.sigmoid(s);
        Ok((f.graph.scale_channels(u, s)?, s))
    }
}

/// Residual block whose transformed branch is SE-recalibrated before the
/// skip addition: conv-BN-ReLU-conv-BN-SE, add input, ReLU.
#[derive(Debug, Clone)]
pub struct SeResUnit {
    pub conv1: ConvBnRelu,
    pub conv2: Conv,
    pub bn2: BatchNorm,
    pub se: SeGate,
}

impl SeResUnit {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, rng: &mut impl Rng) -> Result<Self> {
        let spec = ConvSpec::conv2d(channels, channels, 3, 1, 1);
        Ok(Self {
            conv1: ConvBnRelu::new(store, &format!("{name}.block1"), spec, false, rng)?,
            conv2: Conv::new(store, &format!("{name}.block2.conv"), spec, false, false, rng)?,
            bn2: BatchNorm::new(store, &format!("{name}.block2.bn"), channels)?,
            se: SeGate::new(store, &format!("{name}.se"), channels, default_se_ratio(channels), rng)?,
        })
    }

    pub fn forward(&self, f: &mut Forward, x: Var) -> Result<Var> {
        let y = self.conv1.forward(f, x)?;
        let y = self.conv2.forward(f, y)?;
        let y = self.bn2.forward(f, y)?;
        let (y, _) = self.se.forward(f, y)?;
        let y = f.graph.add(x, y)?;
        Ok(f.graph.relu(y))
    }
}
