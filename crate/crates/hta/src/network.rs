//! Fully connected networks with analytic backpropagation.
//!
//! A network is a chain of dense layers `a_l = act_l(W_l a_{l-1} + b_l)`
//! with weights stored row-major as `(out_dim, in_dim)`. The last layer is
//! always `Identity`: losses own any output nonlinearity (softmax lives
//! inside the cross-entropy), so the network emits raw outputs/logits.
//!
//! Shape mismatches are programmer error and panic via `assert!`.

use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::linalg::{matvec, Matrix, Rng, Vector};
use crate::{HtaError, Result};

/// Element-wise activation function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    ReLU,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::ReLU => x.max(0.0),
            Activation::Sigmoid => {
                // Branch keeps exp() off huge arguments in both tails.
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
            Activation::Identity => x,
        }
    }

    /// Derivative given the pre-activation `z` and the cached value
    /// `act(z)`. The ReLU subgradient at exactly 0 is 0.
    #[inline]
    pub fn derivative(self, z: f64, activated: f64) -> f64 {
        match self {
            Activation::ReLU => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => activated * (1.0 - activated),
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::ReLU => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "relu" => Some(Activation::ReLU),
            "sigmoid" => Some(Activation::Sigmoid),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One dense layer: weights `(out_dim, in_dim)`, bias `out_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vector,
    pub activation: Activation,
}

impl Layer {
    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }
}

/// A feed-forward network. The dimension chain is validated at
/// construction: layer `l`'s input dim equals layer `l-1`'s output dim,
/// and the final activation is `Identity`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    input_dim: usize,
    layers: Vec<Layer>,
}

impl Mlp {
    pub fn new(input_dim: usize, layers: Vec<Layer>) -> Self {
        assert!(input_dim > 0, "input dim must be positive");
        assert!(!layers.is_empty(), "network needs at least one layer");
        let mut prev = input_dim;
        for (l, layer) in layers.iter().enumerate() {
            assert_eq!(
                layer.in_dim(),
                prev,
                "layer {l} expects input dim {}, previous layer produces {prev}",
                layer.in_dim()
            );
            prev = layer.out_dim();
        }
        assert_eq!(
            layers.last().unwrap().activation,
            Activation::Identity,
            "last layer must be Identity; losses own the output nonlinearity"
        );
        Mlp { input_dim, layers }
    }

    /// Random network with hidden activation `act` on every hidden layer
    /// and `Identity` on the output. `dims` is
    /// `[input, hidden..., output]`. Weights and biases are uniform
    /// `+-1/sqrt(fan_in)`.
    pub fn random(dims: &[usize], act: Activation, rng: &mut Rng) -> Self {
        assert!(dims.len() >= 2, "need input and output dims");
        let n_layers = dims.len() - 1;
        let layers = (0..n_layers)
            .map(|l| {
                let (fan_in, fan_out) = (dims[l], dims[l + 1]);
                let a = if l + 1 == n_layers { Activation::Identity } else { act };
                random_layer(fan_out, fan_in, a, rng)
            })
            .collect();
        Mlp::new(dims[0], layers)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// `[input, hidden..., output]` dimension chain.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim];
        d.extend(self.layers.iter().map(|l| l.out_dim()));
        d
    }

    /// Hidden-layer widths (dims without input and output).
    pub fn hidden_widths(&self) -> Vec<usize> {
        let d = self.dims();
        d[1..d.len() - 1].to_vec()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.out_dim() * l.in_dim() + l.out_dim())
            .sum()
    }

    /// Flat offset layout of the parameter vector; see [`ParamLayout`].
    pub fn layout(&self) -> ParamLayout {
        ParamLayout::of(self)
    }

    /// Flatten all weights and biases into one vector, layer by layer,
    /// weights (row-major) before bias.
    pub fn pack(&self) -> Vector {
        let mut theta = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            theta.extend_from_slice(layer.weights.values());
            theta.extend_from_slice(&layer.bias);
        }
        theta
    }

    /// Inverse of [`Mlp::pack`]. Panics if `theta` has the wrong length.
    pub fn unpack(&mut self, theta: &[f64]) {
        assert_eq!(theta.len(), self.param_count(), "parameter vector length mismatch");
        let mut off = 0;
        for layer in &mut self.layers {
            let w = layer.weights.values_mut();
            w.copy_from_slice(&theta[off..off + w.len()]);
            off += w.len();
            let b = layer.bias.len();
            layer.bias.copy_from_slice(&theta[off..off + b]);
            off += b;
        }
    }

    /// Forward pass returning only the output.
    pub fn forward(&self, x: &[f64]) -> Vector {
        assert_eq!(x.len(), self.input_dim, "input dim mismatch");
        let mut a = x.to_vec();
        for layer in &self.layers {
            let mut z = matvec(&layer.weights, &a);
            for (zi, bi) in z.iter_mut().zip(&layer.bias) {
                *zi = layer.activation.apply(*zi + bi);
            }
            a = z;
        }
        a
    }

    /// Forward pass that keeps per-layer pre/post activations for
    /// [`Mlp::backward`].
    pub fn forward_cached(&self, x: &[f64]) -> (Vector, ForwardCache) {
        assert_eq!(x.len(), self.input_dim, "input dim mismatch");
        let mut cache = ForwardCache {
            input: x.to_vec(),
            pre: Vec::with_capacity(self.layers.len()),
            post: Vec::with_capacity(self.layers.len()),
        };
        let mut a = x.to_vec();
        for layer in &self.layers {
            let mut z = matvec(&layer.weights, &a);
            for (zi, bi) in z.iter_mut().zip(&layer.bias) {
                *zi += bi;
            }
            let post: Vector = z.iter().map(|&v| layer.activation.apply(v)).collect();
            cache.pre.push(z);
            cache.post.push(post.clone());
            a = post;
        }
        (a, cache)
    }

    /// Reverse-mode gradients of a scalar loss whose output-gradient is
    /// `d_output`. Accumulates `scale * dLoss/dtheta` into `grad` (laid
    /// out per [`Mlp::pack`]) and returns `scale * dLoss/dinput`.
    ///
    /// Panics if the cache does not match this network's shape.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        d_output: &[f64],
        scale: f64,
        grad: &mut [f64],
    ) -> Vector {
        assert_eq!(cache.pre.len(), self.layers.len(), "cache does not match network depth");
        assert_eq!(cache.input.len(), self.input_dim, "cache does not match input dim");
        assert_eq!(d_output.len(), self.output_dim(), "output gradient dim mismatch");
        assert_eq!(grad.len(), self.param_count(), "gradient buffer length mismatch");

        let layout = self.layout();
        let mut delta = d_output.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            assert_eq!(cache.pre[l].len(), layer.out_dim(), "cache layer {l} dim mismatch");
            // delta currently holds dLoss/da_l; fold in the activation.
            for i in 0..delta.len() {
                delta[i] *= layer.activation.derivative(cache.pre[l][i], cache.post[l][i]);
            }
            let below: &[f64] = if l == 0 { &cache.input } else { &cache.post[l - 1] };
            let w_off = layout.weight_offset(l, 0, 0);
            let b_off = layout.bias_offset(l, 0);
            for i in 0..layer.out_dim() {
                let di = scale * delta[i];
                let row = &mut grad[w_off + i * layer.in_dim()..w_off + (i + 1) * layer.in_dim()];
                for (g, a) in row.iter_mut().zip(below) {
                    *g += di * a;
                }
                grad[b_off + i] += di;
            }
            // dLoss/da_{l-1}
            let mut next = vec![0.0; layer.in_dim()];
            for i in 0..layer.out_dim() {
                let di = delta[i];
                let row = layer.weights.row(i);
                for (n, w) in next.iter_mut().zip(row) {
                    *n += di * w;
                }
            }
            delta = next;
        }
        for d in delta.iter_mut() {
            *d *= scale;
        }
        delta
    }

    /// Convenience wrapper: fresh gradient buffer, scale 1.
    pub fn backward(&self, cache: &ForwardCache, d_output: &[f64]) -> (Vector, Vector) {
        let mut grad = vec![0.0; self.param_count()];
        let d_input = self.backward_into(cache, d_output, 1.0, &mut grad);
        (grad, d_input)
    }

    /// Loss and parameter gradient for one sample, accumulated into
    /// `grad` with weight `scale`. Returns the (unscaled) sample loss.
    pub fn loss_grad_sample(
        &self,
        x: &[f64],
        kind: LossKind,
        target: TargetRef<'_>,
        scale: f64,
        grad: &mut [f64],
    ) -> f64 {
        let (out, cache) = self.forward_cached(x);
        let (loss, d_out) = loss_and_grad(kind, &out, target);
        self.backward_into(&cache, &d_out, scale, grad);
        loss
    }
}

fn random_layer(out_dim: usize, in_dim: usize, act: Activation, rng: &mut Rng) -> Layer {
    let bound = 1.0 / (in_dim as f64).sqrt();
    let weights = crate::linalg::uniform_init(rng, out_dim, in_dim, -bound, bound);
    let bias = (0..out_dim).map(|_| rng.uniform(-bound, bound)).collect();
    Layer { weights, bias, activation: act }
}

/// Per-layer intermediates from a forward pass: the input, and each
/// layer's pre-activation `z_l` and post-activation `a_l`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub input: Vector,
    pub pre: Vec<Vector>,
    pub post: Vec<Vector>,
}

/// Maps (layer, weight/bias, position) to offsets in the packed
/// parameter vector, and back.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    /// (weight_offset, bias_offset, out_dim, in_dim) per layer.
    layers: Vec<(usize, usize, usize, usize)>,
    total: usize,
}

/// A parameter's place in the network, for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRef {
    Weight { layer: usize, row: usize, col: usize },
    Bias { layer: usize, row: usize },
}

impl ParamLayout {
    fn of(net: &Mlp) -> Self {
        let mut layers = Vec::with_capacity(net.layers.len());
        let mut off = 0;
        for layer in &net.layers {
            let (o, i) = (layer.out_dim(), layer.in_dim());
            layers.push((off, off + o * i, o, i));
            off += o * i + o;
        }
        ParamLayout { layers, total: off }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    #[inline]
    pub fn weight_offset(&self, layer: usize, row: usize, col: usize) -> usize {
        let (w, _, o, i) = self.layers[layer];
        debug_assert!(row < o && col < i);
        w + row * i + col
    }

    #[inline]
    pub fn bias_offset(&self, layer: usize, row: usize) -> usize {
        let (_, b, o, _) = self.layers[layer];
        debug_assert!(row < o);
        b + row
    }

    /// Reverse lookup for a flat offset.
    pub fn describe(&self, offset: usize) -> ParamRef {
        assert!(offset < self.total, "offset out of range");
        for (l, &(w, b, o, i)) in self.layers.iter().enumerate() {
            if offset < b {
                let rel = offset - w;
                return ParamRef::Weight { layer: l, row: rel / i, col: rel % i };
            }
            if offset < b + o {
                return ParamRef::Bias { layer: l, row: offset - b };
            }
        }
        unreachable!()
    }
}

/// Loss functions available to training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    /// `||out - target||^2`, gradient `2 (out - target)`.
    SquaredError,
    /// `-logit[y] + log sum_j exp(logit[j])` via a max-shifted
    /// log-sum-exp; gradient `softmax - onehot(y)`.
    CategoricalCrossEntropy,
}

/// Target of one sample: a value vector for squared error, a class label
/// for cross-entropy.
#[derive(Debug, Clone, Copy)]
pub enum TargetRef<'a> {
    Values(&'a [f64]),
    Label(usize),
}

/// Loss value and its gradient w.r.t. the network output.
pub fn loss_and_grad(kind: LossKind, output: &[f64], target: TargetRef<'_>) -> (f64, Vector) {
    match (kind, target) {
        (LossKind::SquaredError, TargetRef::Values(t)) => {
            assert_eq!(t.len(), output.len(), "target dim mismatch");
            let mut grad = vec![0.0; output.len()];
            let mut loss = 0.0;
            for i in 0..output.len() {
                let d = output[i] - t[i];
                loss += d * d;
                grad[i] = 2.0 * d;
            }
            (loss, grad)
        }
        (LossKind::CategoricalCrossEntropy, TargetRef::Label(y)) => {
            assert!(y < output.len(), "label {y} out of range for {} logits", output.len());
            let max = output.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = output.iter().map(|&v| (v - max).exp()).sum();
            let loss = -(output[y] - max) + sum.ln();
            let mut grad: Vector = output.iter().map(|&v| (v - max).exp() / sum).collect();
            grad[y] -= 1.0;
            (loss, grad)
        }
        (LossKind::SquaredError, TargetRef::Label(_)) => {
            panic!("squared error expects a value target, got a label")
        }
        (LossKind::CategoricalCrossEntropy, TargetRef::Values(_)) => {
            panic!("cross-entropy expects a class label, got a value vector")
        }
    }
}

/// Compares analytic gradients against central finite differences over
/// every parameter and returns the worst relative error
/// (`|a - n| / max(1, |a| + |n|)`).
pub fn grad_check(net: &Mlp, kind: LossKind, x: &[f64], target: TargetRef<'_>, eps: f64) -> f64 {
    assert!(eps > 0.0, "eps must be positive");
    let mut grad = vec![0.0; net.param_count()];
    net.loss_grad_sample(x, kind, target, 1.0, &mut grad);

    let mut probe = net.clone();
    let mut theta = net.pack();
    let mut worst = 0.0_f64;
    for i in 0..theta.len() {
        let saved = theta[i];
        theta[i] = saved + eps;
        probe.unpack(&theta);
        let (out_p, _) = probe.forward_cached(x);
        let (lp, _) = loss_and_grad(kind, &out_p, target);
        theta[i] = saved - eps;
        probe.unpack(&theta);
        let (out_m, _) = probe.forward_cached(x);
        let (lm, _) = loss_and_grad(kind, &out_m, target);
        theta[i] = saved;
        let numeric = (lp - lm) / (2.0 * eps);
        let err = (grad[i] - numeric).abs() / (grad[i].abs() + numeric.abs()).max(1.0);
        worst = worst.max(err);
    }
    worst
}

// --- plain-text serialization -------------------------------------------
//
// Checkpoint format (one item per line):
//   mlp v1
//   input_dim <n>
//   layer <out_dim> <activation>        (repeated, in order)
//   weights <layer>                     then out_dim rows of in_dim floats
//   bias <layer>                        then one row of out_dim floats
// Floats use Rust's shortest round-trip formatting, so save/load is
// bit-exact.

pub fn write_mlp<W: Write>(net: &Mlp, w: &mut W) -> Result<()> {
    writeln!(w, "mlp v1")?;
    writeln!(w, "input_dim {}", net.input_dim())?;
    for layer in net.layers() {
        writeln!(w, "layer {} {}", layer.out_dim(), layer.activation)?;
    }
    for (l, layer) in net.layers().iter().enumerate() {
        writeln!(w, "weights {l}")?;
        for i in 0..layer.out_dim() {
            writeln!(w, "{}", join_floats(layer.weights.row(i)))?;
        }
        writeln!(w, "bias {l}")?;
        writeln!(w, "{}", join_floats(&layer.bias))?;
    }
    Ok(())
}

pub fn read_mlp<R: Read>(r: R) -> Result<Mlp> {
    let mut lines = BufReader::new(r).lines().enumerate();
    let mut next = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((i, Ok(line))) => Ok((i + 1, line)),
            Some((i, Err(e))) => Err(HtaError::Parse { line: i + 1, msg: e.to_string() }),
            None => Err(HtaError::Parse { line: 0, msg: format!("unexpected end of file, expected {what}") }),
        }
    };

    let (ln, header) = next("header")?;
    if header.trim() != "mlp v1" {
        return Err(HtaError::Parse { line: ln, msg: format!("bad header {header:?}") });
    }
    let (ln, dim_line) = next("input_dim")?;
    let input_dim: usize = dim_line
        .strip_prefix("input_dim ")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| HtaError::Parse { line: ln, msg: "expected `input_dim <n>`".into() })?;

    // Layer headers, then the first `weights` line.
    let mut specs: Vec<(usize, Activation)> = Vec::new();
    let first_weights = loop {
        let (ln, line) = next("layer or weights")?;
        if line.starts_with("weights ") {
            break (ln, line);
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let spec = match parts.as_slice() {
            ["layer", d, a] => d.parse::<usize>().ok().zip(Activation::from_name(a)),
            _ => None,
        };
        match spec {
            Some(s) => specs.push(s),
            None => return Err(HtaError::Parse { line: ln, msg: format!("expected `layer <dim> <act>`, got {line:?}") }),
        }
    };
    if specs.is_empty() {
        return Err(HtaError::Parse { line: first_weights.0, msg: "no layers declared".into() });
    }

    let mut layers = Vec::with_capacity(specs.len());
    let mut in_dim = input_dim;
    let mut pending = Some(first_weights);
    for (l, &(out_dim, act)) in specs.iter().enumerate() {
        let (ln, line) = match pending.take() {
            Some(p) => p,
            None => next("weights")?,
        };
        if line.trim() != format!("weights {l}") {
            return Err(HtaError::Parse { line: ln, msg: format!("expected `weights {l}`, got {line:?}") });
        }
        let mut weights = Matrix::zeros(out_dim, in_dim);
        for i in 0..out_dim {
            let (ln, row) = next("weight row")?;
            let vals = parse_floats(&row, ln)?;
            if vals.len() != in_dim {
                return Err(HtaError::Parse { line: ln, msg: format!("expected {in_dim} values, got {}", vals.len()) });
            }
            weights.row_mut(i).copy_from_slice(&vals);
        }
        let (ln, line) = next("bias")?;
        if line.trim() != format!("bias {l}") {
            return Err(HtaError::Parse { line: ln, msg: format!("expected `bias {l}`, got {line:?}") });
        }
        let (ln, row) = next("bias row")?;
        let bias = parse_floats(&row, ln)?;
        if bias.len() != out_dim {
            return Err(HtaError::Parse { line: ln, msg: format!("expected {out_dim} values, got {}", bias.len()) });
        }
        layers.push(Layer { weights, bias, activation: act });
        in_dim = out_dim;
    }
    Ok(Mlp::new(input_dim, layers))
}

pub fn save_mlp(net: &Mlp, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_mlp(net, &mut f)
}

pub fn load_mlp(path: &Path) -> Result<Mlp> {
    read_mlp(std::fs::File::open(path)?)
}

pub(crate) fn join_floats(xs: &[f64]) -> String {
    let mut s = String::new();
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        s.push_str(&format!("{x}"));
    }
    s
}

pub(crate) fn parse_floats(line: &str, ln: usize) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|e| HtaError::Parse { line: ln, msg: format!("bad float {tok:?}: {e}") })
        })
        .collect()
}
