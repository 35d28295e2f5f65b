//! Dense-network substrate: layers, activations, manual backprop, Adam.
//!
//! Everything is plain `Vec<f32>` with row-major `(out_dim, in_dim)` weights.
//! Parameters and activations are f32; reductions (dot products, loss sums)
//! accumulate in f64. There is no autograd graph: `forward` returns a cache
//! of pre- and post-activations and `backward` walks it with the chain rule.
//!
//! Canonical parameter order, used by gradients, Adam moments, checkpoints
//! and the finite-difference oracle alike: for each layer in order, the
//! weight matrix row-major, then the bias vector.

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Per-layer activation function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    /// Tanh approximation: `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
    Gelu,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply(self, z: f32) -> f32 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Gelu => {
                let c = (2.0 / std::f32::consts::PI).sqrt();
                0.5 * z * (1.0 + (c * (z + 0.044715 * z * z * z)).tanh())
            }
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Identity => z,
        }
    }

    /// Derivative at pre-activation `z` with post-activation `a = apply(z)`.
    fn derivative(self, z: f32, a: f32) -> f32 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Gelu => {
                let c = (2.0 / std::f32::consts::PI).sqrt();
                let u = c * (z + 0.044715 * z * z * z);
                let t = u.tanh();
                0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * z * z)
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }

    fn apply_f64(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Gelu => {
                let c = (2.0 / std::f64::consts::PI).sqrt();
                0.5 * z * (1.0 + (c * (z + 0.044715 * z * z * z)).tanh())
            }
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Identity => z,
        }
    }
}

/// Dense affine layer: `z = W x + b`, weights row-major `(out_dim, in_dim)`.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    in_dim: usize,
    out_dim: usize,
    weight: Vec<f32>,
    bias: Vec<f32>,
}

impl DenseLayer {
    /// Initializes weights for the given activation: Kaiming-uniform
    /// (fan-in) for relu/gelu, Glorot-uniform otherwise. Biases start at 0.
    pub fn init(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut Rng) -> Self {
        let limit = match activation {
            Activation::Relu | Activation::Gelu => (6.0 / in_dim as f64).sqrt(),
            Activation::Sigmoid | Activation::Identity => {
                (6.0 / (in_dim + out_dim) as f64).sqrt()
            }
        };
        let weight = (0..in_dim * out_dim)
            .map(|_| (rng.uniform_symmetric() * limit) as f32)
            .collect();
        Self { in_dim, out_dim, weight, bias: vec![0.0; out_dim] }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weight(&self) -> &[f32] {
        &self.weight
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    pub fn weight_mut(&mut self) -> &mut [f32] {
        &mut self.weight
    }

    pub fn bias_mut(&mut self) -> &mut [f32] {
        &mut self.bias
    }

    /// Affine transform into `out`; dot products accumulate in f64.
    fn affine(&self, input: &[f32], out: &mut [f32]) {
        debug_assert_eq!(input.len(), self.in_dim);
        debug_assert_eq!(out.len(), self.out_dim);
        for (o, slot) in out.iter_mut().enumerate() {
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.bias[o] as f64;
            for (w, x) in row.iter().zip(input) {
                acc += *w as f64 * *x as f64;
            }
            *slot = acc as f32;
        }
    }
}

/// Feedforward network: a stack of dense layers with per-layer activations.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
    activations: Vec<Activation>,
}

/// Pre- and post-activations retained by [`Mlp::forward`] for backprop.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Dimension chain of the network that produced this cache.
    dims: Vec<usize>,
    /// Pre-activations, one vector per layer.
    pre: Vec<Vec<f32>>,
    /// `acts[0]` is the input; `acts[k+1]` is layer k's post-activation.
    acts: Vec<Vec<f32>>,
}

impl ForwardCache {
    /// The network output this cache was built from.
    pub fn output(&self) -> &[f32] {
        self.acts.last().expect("cache has at least the input")
    }
}

/// Per-parameter gradients, aligned with a network's layer structure.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    weights: Vec<Vec<f32>>,
    biases: Vec<Vec<f32>>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net.layers.iter().map(|l| vec![0.0; l.weight.len()]).collect(),
            biases: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, s: f32) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            for x in v.iter_mut() {
                *x *= s;
            }
        }
    }

    /// Gradients flattened in canonical parameter order.
    pub fn flat(&self) -> Vec<f32> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn max_abs(&self) -> f32 {
        self.flat().iter().fold(0.0f32, |m, &g| m.max(g.abs()))
    }
}

impl Mlp {
    /// Builds a network from a dimension chain and one activation per layer.
    /// `dims` has length `layers + 1`.
    pub fn new(dims: &[usize], activations: &[Activation], rng: &mut Rng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config("an Mlp needs at least one layer".into()));
        }
        if activations.len() != dims.len() - 1 {
            return Err(Error::Config(format!(
                "{} activations for {} layers",
                activations.len(),
                dims.len() - 1
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("layer dimensions must be positive".into()));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &act)| DenseLayer::init(w[0], w[1], act, rng))
            .collect();
        Ok(Self { layers, activations: activations.to_vec() })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("nonempty").out_dim
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, i: usize) -> &DenseLayer {
        &self.layers[i]
    }

    pub fn layer_mut(&mut self, i: usize) -> &mut DenseLayer {
        &mut self.layers[i]
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    /// `[in_dim, hidden..., out_dim]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.in_dim()];
        dims.extend(self.layers.iter().map(|l| l.out_dim));
        dims
    }

    /// Zeroes the final layer so the network outputs 0 for every input.
    pub fn zero_output_layer(&mut self) {
        let last = self.layers.last_mut().expect("nonempty");
        last.weight.fill(0.0);
        last.bias.fill(0.0);
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Human-readable name of the parameter at a canonical-order index.
    pub fn param_name(&self, mut idx: usize) -> String {
        for (k, layer) in self.layers.iter().enumerate() {
            if idx < layer.weight.len() {
                return format!("layer{}.weight[{},{}]", k, idx / layer.in_dim, idx % layer.in_dim);
            }
            idx -= layer.weight.len();
            if idx < layer.bias.len() {
                return format!("layer{}.bias[{}]", k, idx);
            }
            idx -= layer.bias.len();
        }
        format!("param[out-of-range+{idx}]")
    }

    pub fn param(&self, mut idx: usize) -> f32 {
        for layer in &self.layers {
            if idx < layer.weight.len() {
                return layer.weight[idx];
            }
            idx -= layer.weight.len();
            if idx < layer.bias.len() {
                return layer.bias[idx];
            }
            idx -= layer.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param(&mut self, mut idx: usize, value: f32) {
        for layer in &mut self.layers {
            if idx < layer.weight.len() {
                layer.weight[idx] = value;
                return;
            }
            idx -= layer.weight.len();
            if idx < layer.bias.len() {
                layer.bias[idx] = value;
                return;
            }
            idx -= layer.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// FNV-1a over the parameter bits in canonical order. Used for
    /// freeze checks: any single-bit parameter change alters the hash.
    pub fn params_hash(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |v: f32| {
            for b in v.to_bits().to_le_bytes() {
                hash ^= b as u64;
                hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
            }
        };
        for layer in &self.layers {
            layer.weight.iter().for_each(|&w| eat(w));
            layer.bias.iter().for_each(|&b| eat(b));
        }
        hash
    }

    pub fn all_params_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    /// Forward pass retaining the cache needed by [`Mlp::backward`].
    pub fn forward(&self, input: &[f32]) -> Result<ForwardCache> {
        if input.len() != self.in_dim() {
            return Err(Error::ShapeMismatch {
                context: "mlp forward input",
                expected: self.in_dim(),
                actual: input.len(),
            });
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.to_vec());
        for (layer, &act) in self.layers.iter().zip(&self.activations) {
            let mut z = vec![0.0f32; layer.out_dim];
            layer.affine(acts.last().expect("nonempty"), &mut z);
            let a = z.iter().map(|&v| act.apply(v)).collect();
            pre.push(z);
            acts.push(a);
        }
        Ok(ForwardCache { dims: self.dims(), pre, acts })
    }

    /// Forward pass without a cache; same arithmetic as [`Mlp::forward`].
    pub fn infer(&self, input: &[f32]) -> Result<Vec<f32>> {
        if input.len() != self.in_dim() {
            return Err(Error::ShapeMismatch {
                context: "mlp forward input",
                expected: self.in_dim(),
                actual: input.len(),
            });
        }
        let mut cur = input.to_vec();
        for (layer, &act) in self.layers.iter().zip(&self.activations) {
            let mut z = vec![0.0f32; layer.out_dim];
            layer.affine(&cur, &mut z);
            for v in z.iter_mut() {
                *v = act.apply(*v);
            }
            cur = z;
        }
        Ok(cur)
    }

    /// Backward pass: gradients of a scalar loss whose gradient w.r.t. the
    /// network output is `grad_output`. Returns parameter gradients and the
    /// gradient w.r.t. the input.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &[f32]) -> Result<(MlpGrads, Vec<f32>)> {
        if cache.dims != self.dims() {
            return Err(Error::StaleCache);
        }
        if grad_output.len() != self.out_dim() {
            return Err(Error::ShapeMismatch {
                context: "mlp backward grad_output",
                expected: self.out_dim(),
                actual: grad_output.len(),
            });
        }
        let mut grads = MlpGrads::zeros_like(self);
        let mut upstream = grad_output.to_vec();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let act = self.activations[k];
            let z = &cache.pre[k];
            let a = &cache.acts[k + 1];
            let input = &cache.acts[k];

            // dL/dz through the activation.
            let dz: Vec<f32> = upstream
                .iter()
                .zip(z.iter().zip(a))
                .map(|(&g, (&zv, &av))| g * act.derivative(zv, av))
                .collect();

            let dw = &mut grads.weights[k];
            for (o, &d) in dz.iter().enumerate() {
                let row = &mut dw[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (slot, &x) in row.iter_mut().zip(input) {
                    *slot = d * x;
                }
            }
            grads.biases[k].copy_from_slice(&dz);

            // dL/dinput, accumulated in f64 over the output dimension.
            let mut dinput = vec![0.0f32; layer.in_dim];
            for (i, slot) in dinput.iter_mut().enumerate() {
                let mut acc = 0.0f64;
                for (o, &d) in dz.iter().enumerate() {
                    acc += layer.weight[o * layer.in_dim + i] as f64 * d as f64;
                }
                *slot = acc as f32;
            }
            upstream = dinput;
        }
        Ok((grads, upstream))
    }
}

/// Adam optimizer state for one network, moments in canonical order.
#[derive(Debug, Clone)]
pub struct AdamState {
    first_moment: Vec<f32>,
    second_moment: Vec<f32>,
    step_count: u64,
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl AdamState {
    /// Defaults beta1=0.9, beta2=0.999, epsilon=1e-8.
    pub fn new(net: &Mlp, learning_rate: f32) -> Self {
        let n = net.param_count();
        Self {
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }
}

/// One bias-corrected Adam update. Rejects the whole step (parameters and
/// state untouched) if any gradient is non-finite, naming the parameter.
pub fn adam_step(net: &mut Mlp, grads: &MlpGrads, state: &mut AdamState) -> Result<()> {
    let flat = grads.flat();
    if flat.len() != state.first_moment.len() {
        return Err(Error::ShapeMismatch {
            context: "adam_step gradient count",
            expected: state.first_moment.len(),
            actual: flat.len(),
        });
    }
    if let Some(bad) = flat.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite { what: format!("gradient for {}", net.param_name(bad)) });
    }
    state.step_count += 1;
    let t = state.step_count as f64;
    let bc1 = 1.0 - (state.beta1 as f64).powf(t);
    let bc2 = 1.0 - (state.beta2 as f64).powf(t);
    for (idx, &g) in flat.iter().enumerate() {
        let m = &mut state.first_moment[idx];
        *m = state.beta1 * *m + (1.0 - state.beta1) * g;
        let v = &mut state.second_moment[idx];
        *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
        let m_hat = *m as f64 / bc1;
        let v_hat = *v as f64 / bc2;
        let update = state.learning_rate as f64 * m_hat / (v_hat.sqrt() + state.epsilon as f64);
        let old = net.param(idx);
        net.set_param(idx, old - update as f32);
    }
    Ok(())
}

/// Central-difference gradient estimate `(L(p+h) - L(p-h)) / 2h` for every
/// parameter, in canonical order. `loss` maps the network output to a scalar.
///
/// Perturbed evaluations run in shadow f64 arithmetic: at h=1e-4 the loss
/// difference is ~2e-4 * grad, which f32 forward noise (~1e-7 relative)
/// would swamp. The f64 path is an independent straight-line re-evaluation,
/// not a call into [`Mlp::forward`].
pub fn finite_diff_grad(
    net: &Mlp,
    input: &[f32],
    loss: impl Fn(&[f64]) -> f64,
    step: f64,
) -> Result<Vec<f64>> {
    if step <= 0.0 {
        return Err(Error::Config(format!("finite difference step must be > 0, got {step}")));
    }
    if input.len() != net.in_dim() {
        return Err(Error::ShapeMismatch {
            context: "finite_diff_grad input",
            expected: net.in_dim(),
            actual: input.len(),
        });
    }
    let mut weights: Vec<Vec<f64>> = net
        .layers
        .iter()
        .map(|l| l.weight.iter().map(|&w| w as f64).collect())
        .collect();
    let mut biases: Vec<Vec<f64>> = net
        .layers
        .iter()
        .map(|l| l.bias.iter().map(|&b| b as f64).collect())
        .collect();
    let input64: Vec<f64> = input.iter().map(|&x| x as f64).collect();

    let eval = |weights: &[Vec<f64>], biases: &[Vec<f64>]| -> f64 {
        let mut cur = input64.clone();
        for (k, layer) in net.layers.iter().enumerate() {
            let mut next = vec![0.0f64; layer.out_dim];
            for (o, slot) in next.iter_mut().enumerate() {
                let mut acc = biases[k][o];
                let row = &weights[k][o * layer.in_dim..(o + 1) * layer.in_dim];
                for (w, x) in row.iter().zip(&cur) {
                    acc += w * x;
                }
                *slot = net.activations[k].apply_f64(acc);
            }
            cur = next;
        }
        loss(&cur)
    };

    let mut estimates = Vec::with_capacity(net.param_count());
    let mut flat_idx = 0usize;
    for k in 0..net.layers.len() {
        let wlen = weights[k].len();
        for i in 0..wlen + biases[k].len() {
            let slot = |weights: &mut [Vec<f64>], biases: &mut [Vec<f64>], v: f64| {
                if i < wlen {
                    weights[k][i] = v;
                } else {
                    biases[k][i - wlen] = v;
                }
            };
            let orig = if i < wlen { weights[k][i] } else { biases[k][i - wlen] };
            slot(&mut weights, &mut biases, orig + step);
            let plus = eval(&weights, &biases);
            slot(&mut weights, &mut biases, orig - step);
            let minus = eval(&weights, &biases);
            slot(&mut weights, &mut biases, orig);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("perturbed loss at {}", net.param_name(flat_idx)),
                });
            }
            estimates.push((plus - minus) / (2.0 * step));
            flat_idx += 1;
        }
    }
    Ok(estimates)
}

/// `dim` i.i.d. samples from N(0, sigma^2). `sigma = 0` returns zeros
/// without consuming any draws.
pub fn gaussian_noise(dim: usize, sigma: f64, rng: &mut Rng) -> Vec<f32> {
    assert!(sigma >= 0.0, "noise sigma must be nonnegative");
    if sigma == 0.0 {
        return vec![0.0; dim];
    }
    (0..dim).map(|_| (sigma * rng.standard_normal()) as f32).collect()
}

/// Sum of squared differences, accumulated in f64.
pub fn squared_error_sum(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// Squared L2 norm, accumulated in f64.
pub fn l2_norm_sq(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64 * x as f64).sum()
}

/// Max relative error between analytic and finite-difference gradients.
/// The denominator has a floor of 3e-3 times the largest gradient
/// magnitude: f32 backward noise is absolute at roughly 1e-7 of the
/// gradient scale, so coordinates far below that scale must be compared
/// against the scale, not against themselves.
pub fn max_rel_error(analytic: &[f32], numeric: &[f64]) -> f64 {
    let gmax = analytic
        .iter()
        .map(|&a| (a as f64).abs())
        .chain(numeric.iter().map(|&n| n.abs()))
        .fold(0.0, f64::max);
    let floor = (3e-3 * gmax).max(1e-6);
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| {
            let a = a as f64;
            let denom = a.abs().max(n.abs()).max(floor);
            (a - n).abs() / denom
        })
        .fold(0.0, f64::max)
}
