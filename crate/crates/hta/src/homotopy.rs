//! Blended models, growth operators, and the continuation training loop.
//!
//! The blend is `H(x; theta, t) = (1-t) * small(x) + t * large(x)` where
//! the small network is a *view* into the large network's parameters:
//! both terms read the same storage, so there is exactly one theta. Growth
//! operators (`widen`, `add_layer`) build the large network around an
//! existing one and return the view that recovers it.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::linalg::{Rng, Vector};
use crate::network::{
    loss_and_grad, Activation, ForwardCache, Layer, LossKind, Mlp, TargetRef,
};
use crate::optim::{DiagnosticsTrace, SgdDriver, StochasticObjective};
use crate::{HtaError, Result};

/// One layer of a subnet view: the small net's layer `v` reads the first
/// `rows` x `cols` block of large layer `source`'s weights (and the first
/// `rows` bias entries), applied with the small net's own activation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerView {
    pub source: usize,
    pub rows: usize,
    pub cols: usize,
    pub activation: Activation,
}

/// Index mapping that evaluates a smaller network directly from a larger
/// network's parameter blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubnetView {
    input_dim: usize,
    layers: Vec<LayerView>,
}

impl SubnetView {
    pub fn new(input_dim: usize, layers: Vec<LayerView>) -> Self {
        assert!(!layers.is_empty(), "view needs at least one layer");
        SubnetView { input_dim, layers }
    }

    /// The view that selects an entire network.
    pub fn full(net: &Mlp) -> Self {
        let layers = net
            .layers()
            .iter()
            .enumerate()
            .map(|(l, layer)| LayerView {
                source: l,
                rows: layer.out_dim(),
                cols: layer.in_dim(),
                activation: layer.activation,
            })
            .collect();
        SubnetView::new(net.input_dim(), layers)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn layers(&self) -> &[LayerView] {
        &self.layers
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().rows
    }

    /// Checks that every selected block is in range, the dimension chain
    /// is consistent, and the final activation is `Identity`.
    pub fn validate(&self, large: &Mlp) -> Result<()> {
        let mut prev = self.input_dim;
        if self.input_dim != large.input_dim() {
            return Err(HtaError::Growth(format!(
                "view input dim {} != network input dim {}",
                self.input_dim,
                large.input_dim()
            )));
        }
        let mut prev_source = None;
        for (v, lv) in self.layers.iter().enumerate() {
            let layer = large.layers().get(lv.source).ok_or_else(|| {
                HtaError::Growth(format!("view layer {v} points at missing layer {}", lv.source))
            })?;
            if let Some(p) = prev_source {
                if lv.source <= p {
                    return Err(HtaError::Growth("view sources must be strictly increasing".into()));
                }
            }
            prev_source = Some(lv.source);
            if lv.rows == 0 || lv.rows > layer.out_dim() || lv.cols == 0 || lv.cols > layer.in_dim() {
                return Err(HtaError::Growth(format!(
                    "view layer {v} selects {}x{} of a {}x{} block",
                    lv.rows,
                    lv.cols,
                    layer.out_dim(),
                    layer.in_dim()
                )));
            }
            if lv.cols != prev {
                return Err(HtaError::Growth(format!(
                    "view layer {v} expects input dim {}, previous produces {prev}",
                    lv.cols
                )));
            }
            prev = lv.rows;
        }
        if self.layers.last().unwrap().activation != Activation::Identity {
            return Err(HtaError::Growth("view output layer must be Identity".into()));
        }
        Ok(())
    }

    /// Materializes the small network by copying the selected blocks.
    /// Evaluation of the copy matches [`SubnetView::forward`] bit for bit.
    pub fn extract(&self, large: &Mlp) -> Mlp {
        let layers = self
            .layers
            .iter()
            .map(|lv| {
                let src = &large.layers()[lv.source];
                let mut weights = crate::linalg::Matrix::zeros(lv.rows, lv.cols);
                for i in 0..lv.rows {
                    weights.row_mut(i).copy_from_slice(&src.weights.row(i)[..lv.cols]);
                }
                Layer {
                    weights,
                    bias: src.bias[..lv.rows].to_vec(),
                    activation: lv.activation,
                }
            })
            .collect();
        Mlp::new(self.input_dim, layers)
    }

    /// Forward pass of the small network reading the large network's
    /// parameter blocks in place.
    pub fn forward(&self, large: &Mlp, x: &[f64]) -> Vector {
        self.forward_cached(large, x).0
    }

    pub fn forward_cached(&self, large: &Mlp, x: &[f64]) -> (Vector, ForwardCache) {
        assert_eq!(x.len(), self.input_dim, "input dim mismatch");
        let mut cache = ForwardCache {
            input: x.to_vec(),
            pre: Vec::with_capacity(self.layers.len()),
            post: Vec::with_capacity(self.layers.len()),
        };
        let mut a = x.to_vec();
        for lv in &self.layers {
            let src = &large.layers()[lv.source];
            let mut z = vec![0.0; lv.rows];
            for (i, zi) in z.iter_mut().enumerate() {
                let row = &src.weights.row(i)[..lv.cols];
                *zi = row.iter().zip(&a).map(|(w, v)| w * v).sum::<f64>() + src.bias[i];
            }
            let post: Vector = z.iter().map(|&v| lv.activation.apply(v)).collect();
            cache.pre.push(z);
            cache.post.push(post.clone());
            a = post;
        }
        (a, cache)
    }

    /// Backprop along the view, accumulating `scale * dLoss/dtheta` into
    /// the *large* network's flat gradient. Entries outside the view are
    /// untouched.
    pub fn backward_into(
        &self,
        large: &Mlp,
        cache: &ForwardCache,
        d_output: &[f64],
        scale: f64,
        grad: &mut [f64],
    ) -> Vector {
        assert_eq!(cache.pre.len(), self.layers.len(), "cache does not match view depth");
        assert_eq!(d_output.len(), self.output_dim(), "output gradient dim mismatch");
        let layout = large.layout();
        assert_eq!(grad.len(), layout.total(), "gradient buffer length mismatch");

        let mut delta = d_output.to_vec();
        for (v, lv) in self.layers.iter().enumerate().rev() {
            let src = &large.layers()[lv.source];
            for i in 0..delta.len() {
                delta[i] *= lv.activation.derivative(cache.pre[v][i], cache.post[v][i]);
            }
            let below: &[f64] = if v == 0 { &cache.input } else { &cache.post[v - 1] };
            for i in 0..lv.rows {
                let di = scale * delta[i];
                let off = layout.weight_offset(lv.source, i, 0);
                for (j, a) in below.iter().enumerate() {
                    grad[off + j] += di * a;
                }
                grad[layout.bias_offset(lv.source, i)] += di;
            }
            let mut next = vec![0.0; lv.cols];
            for i in 0..lv.rows {
                let di = delta[i];
                let row = &src.weights.row(i)[..lv.cols];
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
}

/// A growth step: widen one hidden layer, or insert a new hidden layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GrowthOp {
    Widen { layer: usize, added: usize },
    AddLayer { position: usize, width: usize, activation: Activation },
}

impl GrowthOp {
    pub fn apply(&self, net: &Mlp, rng: &mut Rng) -> Result<(Mlp, SubnetView)> {
        match *self {
            GrowthOp::Widen { layer, added } => widen(net, layer, added, rng),
            GrowthOp::AddLayer { position, width, activation } => {
                add_layer(net, position, width, activation, rng)
            }
        }
    }
}

/// Widens hidden layer `layer` by `added` units.
///
/// New incoming rows (and the new units' biases) are uniform
/// `+-1/sqrt(fan_in)` so the units receive gradient once `t > 0`; the new
/// outgoing columns of layer `layer+1` are zero, which keeps the large
/// network's output identical to the original for every input at
/// creation time. The returned view selects the original blocks.
pub fn widen(net: &Mlp, layer: usize, added: usize, rng: &mut Rng) -> Result<(Mlp, SubnetView)> {
    if layer + 1 >= net.layers().len() {
        return Err(HtaError::Growth(format!(
            "layer {layer} is not a hidden layer of a {}-layer network",
            net.layers().len()
        )));
    }
    if added == 0 {
        return Err(HtaError::Growth("widen needs added > 0".into()));
    }

    let old = &net.layers()[layer];
    let next = &net.layers()[layer + 1];
    let (d_old, d_in) = (old.out_dim(), old.in_dim());
    let d_new = d_old + added;
    let bound = 1.0 / (d_in as f64).sqrt();

    let mut grown = crate::linalg::Matrix::zeros(d_new, d_in);
    for i in 0..d_old {
        grown.row_mut(i).copy_from_slice(old.weights.row(i));
    }
    for i in d_old..d_new {
        for j in 0..d_in {
            grown.set(i, j, rng.uniform(-bound, bound));
        }
    }
    let mut bias = old.bias.clone();
    bias.extend((0..added).map(|_| rng.uniform(-bound, bound)));

    let mut next_w = crate::linalg::Matrix::zeros(next.out_dim(), d_new);
    for i in 0..next.out_dim() {
        next_w.row_mut(i)[..d_old].copy_from_slice(next.weights.row(i));
        // columns d_old.. stay zero
    }

    let mut layers: Vec<Layer> = net.layers().to_vec();
    layers[layer] = Layer { weights: grown, bias, activation: old.activation };
    layers[layer + 1] = Layer { weights: next_w, bias: next.bias.clone(), activation: next.activation };
    let large = Mlp::new(net.input_dim(), layers);

    let mut view_layers: Vec<LayerView> = SubnetView::full(net).layers().to_vec();
    view_layers[layer].rows = d_old; // unchanged, explicit for clarity
    view_layers[layer + 1].cols = d_old;
    let view = SubnetView::new(net.input_dim(), view_layers);
    view.validate(&large)?;
    Ok((large, view))
}

/// Inserts a new hidden layer of width `width` at `position` (the new
/// layer becomes layer `position`; `1 <= position <= L-1` for an
/// `L`-layer network, so the input map stays layer 0 and the output map
/// stays last).
///
/// The displaced layer's weight block moves into the new layer's first
/// rows (its remaining rows are zero, bias likewise), and the displaced
/// slot becomes the pass-through block `[I 0]` with zero bias. With an
/// identity activation on the new layer the large network reproduces the
/// old one exactly; with ReLU it does so wherever the old layer's
/// pre-activations are nonnegative. The blend at `t = 0` reproduces the
/// old network unconditionally because it evaluates the view.
pub fn add_layer(
    net: &Mlp,
    position: usize,
    width: usize,
    activation: Activation,
    rng: &mut Rng,
) -> Result<(Mlp, SubnetView)> {
    let n_layers = net.layers().len();
    if position == 0 || position >= n_layers {
        return Err(HtaError::Growth(format!(
            "position {position} is not between existing layers (1..={})",
            n_layers - 1
        )));
    }
    let displaced = &net.layers()[position];
    let d_disp = displaced.out_dim();
    if width < d_disp {
        return Err(HtaError::Growth(format!(
            "inserted width {width} cannot carry the displaced layer's {d_disp} outputs"
        )));
    }
    let _ = rng; // growth pattern is fully determined; rng kept for signature parity with widen

    // New layer at `position`: first d_disp rows are the displaced map.
    let mut new_w = crate::linalg::Matrix::zeros(width, displaced.in_dim());
    for i in 0..d_disp {
        new_w.row_mut(i).copy_from_slice(displaced.weights.row(i));
    }
    let mut new_b = vec![0.0; width];
    new_b[..d_disp].copy_from_slice(&displaced.bias);

    // Displaced slot becomes [I 0] with zero bias.
    let mut pass_w = crate::linalg::Matrix::zeros(d_disp, width);
    for i in 0..d_disp {
        pass_w.set(i, i, 1.0);
    }

    let mut layers: Vec<Layer> = Vec::with_capacity(n_layers + 1);
    layers.extend_from_slice(&net.layers()[..position]);
    layers.push(Layer { weights: new_w, bias: new_b, activation });
    layers.push(Layer { weights: pass_w, bias: vec![0.0; d_disp], activation: displaced.activation });
    layers.extend_from_slice(&net.layers()[position + 1..]);
    let large = Mlp::new(net.input_dim(), layers);

    // The view skips the pass-through slot: old layer `position` now lives
    // in the inserted layer's first rows, with the *old* activation.
    let mut view_layers = Vec::with_capacity(n_layers);
    for (l, layer) in net.layers().iter().enumerate() {
        let source = match l.cmp(&position) {
            std::cmp::Ordering::Less => l,
            std::cmp::Ordering::Equal => position,
            std::cmp::Ordering::Greater => l + 1,
        };
        view_layers.push(LayerView {
            source,
            rows: layer.out_dim(),
            cols: layer.in_dim(),
            activation: layer.activation,
        });
    }
    let view = SubnetView::new(net.input_dim(), view_layers);
    view.validate(&large)?;
    Ok((large, view))
}

/// The blended model `H(x) = (1-t) * view(x) + t * large(x)`.
#[derive(Debug, Clone)]
pub struct HomotopyBlend {
    pub large: Mlp,
    pub view: SubnetView,
    t: f64,
}

impl HomotopyBlend {
    pub fn new(large: Mlp, view: SubnetView) -> Result<Self> {
        view.validate(&large)?;
        if view.output_dim() != large.output_dim() {
            return Err(HtaError::Growth("view and large output dims differ".into()));
        }
        Ok(HomotopyBlend { large, view, t: 0.0 })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn set_t(&mut self, t: f64) {
        assert!((0.0..=1.0).contains(&t), "t must lie in [0,1], got {t}");
        self.t = t;
    }

    /// Blend forward pass. At the endpoints only the corresponding path
    /// is evaluated, so `t = 0` is bit-identical to the view and `t = 1`
    /// to the plain large-network forward.
    pub fn forward(&self, x: &[f64]) -> Vector {
        if self.t == 0.0 {
            return self.view.forward(&self.large, x);
        }
        if self.t == 1.0 {
            return self.large.forward(x);
        }
        let small = self.view.forward(&self.large, x);
        let large = self.large.forward(x);
        small
            .iter()
            .zip(&large)
            .map(|(s, l)| (1.0 - self.t) * s + self.t * l)
            .collect()
    }

    /// Loss of the blended output and its gradient over the large
    /// network's parameters: shared blocks accumulate both path terms,
    /// parameters outside the view only the `t`-weighted large-path term.
    /// Adds `scale * dLoss/dtheta` into `grad`; returns the sample loss.
    pub fn loss_grad_sample(
        &self,
        x: &[f64],
        kind: LossKind,
        target: TargetRef<'_>,
        scale: f64,
        grad: &mut [f64],
    ) -> f64 {
        if self.t == 0.0 {
            let (out, cache) = self.view.forward_cached(&self.large, x);
            let (loss, d_out) = loss_and_grad(kind, &out, target);
            self.view.backward_into(&self.large, &cache, &d_out, scale, grad);
            return loss;
        }
        if self.t == 1.0 {
            return self.large.loss_grad_sample(x, kind, target, scale, grad);
        }
        let (small_out, small_cache) = self.view.forward_cached(&self.large, x);
        let (large_out, large_cache) = self.large.forward_cached(x);
        let blended: Vector = small_out
            .iter()
            .zip(&large_out)
            .map(|(s, l)| (1.0 - self.t) * s + self.t * l)
            .collect();
        let (loss, d_out) = loss_and_grad(kind, &blended, target);
        self.view
            .backward_into(&self.large, &small_cache, &d_out, scale * (1.0 - self.t), grad);
        self.large.backward_into(&large_cache, &d_out, scale * self.t, grad);
        loss
    }
}

/// Continuation schedule: `N = round(1/delta_t)` homotopy steps, each
/// trained for `epochs_per_step` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HtaSchedule {
    pub delta_t: f64,
    pub epochs_per_step: usize,
}

impl HtaSchedule {
    pub fn new(delta_t: f64, epochs_per_step: usize) -> Result<Self> {
        if !(delta_t > 0.0 && delta_t <= 1.0) {
            return Err(HtaError::Config(format!("delta_t must lie in (0,1], got {delta_t}")));
        }
        let n = (1.0 / delta_t).round();
        if n < 1.0 || (n * delta_t - 1.0).abs() > 1e-12 {
            return Err(HtaError::Config(format!(
                "delta_t {delta_t} does not divide 1 (N*delta_t = {})",
                n * delta_t
            )));
        }
        if epochs_per_step == 0 {
            return Err(HtaError::Config("epochs_per_step must be positive".into()));
        }
        Ok(HtaSchedule { delta_t, epochs_per_step })
    }

    pub fn steps(&self) -> usize {
        (1.0 / self.delta_t).round() as usize
    }

    /// The value of `t` at continuation step `i` (1-based); the last step
    /// is exactly 1.
    pub fn t_at(&self, i: usize) -> f64 {
        if i == self.steps() {
            1.0
        } else {
            i as f64 * self.delta_t
        }
    }
}

/// Objective that trains a [`HomotopyBlend`] at its current `t`: the
/// batch loss is the mean over the mini-batch.
pub struct BlendObjective<'a> {
    pub blend: &'a mut HomotopyBlend,
    pub data: &'a Dataset,
    pub kind: LossKind,
}

impl StochasticObjective for BlendObjective<'_> {
    fn param_count(&self) -> usize {
        self.blend.large.param_count()
    }

    fn sample_count(&self) -> usize {
        self.data.len()
    }

    fn batch_loss_grad(&mut self, theta: &[f64], batch: &[usize], grad: &mut [f64]) -> f64 {
        self.blend.large.unpack(theta);
        grad.fill(0.0);
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for &idx in batch {
            loss += self.blend.loss_grad_sample(
                self.data.input(idx),
                self.kind,
                self.data.target_ref(idx, self.kind),
                scale,
                grad,
            );
        }
        loss * scale
    }
}

/// Objective that trains a plain [`Mlp`] (the traditional baseline, and
/// the `t = 0` pre-solve of the continuation). Uses the same per-sample
/// code path as the blend at `t = 1`.
pub struct MlpObjective<'a> {
    pub net: &'a mut Mlp,
    pub data: &'a Dataset,
    pub kind: LossKind,
}

impl StochasticObjective for MlpObjective<'_> {
    fn param_count(&self) -> usize {
        self.net.param_count()
    }

    fn sample_count(&self) -> usize {
        self.data.len()
    }

    fn batch_loss_grad(&mut self, theta: &[f64], batch: &[usize], grad: &mut [f64]) -> f64 {
        self.net.unpack(theta);
        grad.fill(0.0);
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for &idx in batch {
            loss += self.net.loss_grad_sample(
                self.data.input(idx),
                self.kind,
                self.data.target_ref(idx, self.kind),
                scale,
                grad,
            );
        }
        loss * scale
    }
}

/// Mean loss of a network over a whole dataset.
pub fn dataset_loss(net: &Mlp, data: &Dataset, kind: LossKind) -> f64 {
    let mut loss = 0.0;
    for i in 0..data.len() {
        let out = net.forward(data.input(i));
        let (l, _) = loss_and_grad(kind, &out, data.target_ref(i, kind));
        loss += l;
    }
    loss / data.len() as f64
}

/// Algorithm-1 continuation loop: for `i = 1..=N` set `t = i*delta_t` and
/// run `epochs_per_step` epochs warm-started from the previous step's
/// parameters. The driver's global step counter and RNG thread through
/// all stages. Returns the final packed parameters; the trace accumulates
/// one epoch record per (t, epoch).
pub fn hta_train(
    blend: &mut HomotopyBlend,
    data: &Dataset,
    kind: LossKind,
    sched: &HtaSchedule,
    driver: &mut SgdDriver,
    trace: &mut DiagnosticsTrace,
) -> Result<Vector> {
    let mut theta = blend.large.pack();
    for i in 1..=sched.steps() {
        let t = sched.t_at(i);
        blend.set_t(t);
        let mut obj = BlendObjective { blend, data, kind };
        driver.run(&mut obj, &mut theta, Some(sched.epochs_per_step), None, t, trace)?;
    }
    blend.large.unpack(&theta);
    Ok(theta)
}

/// Trains `base` to convergence (the `t = 0` solve), then applies each
/// growth stage and continues with [`hta_train`], threading the
/// parameters through every stage.
pub fn multi_stage_train(
    base: Mlp,
    stages: &[(GrowthOp, HtaSchedule)],
    data: &Dataset,
    kind: LossKind,
    base_epochs: usize,
    driver: &mut SgdDriver,
    growth_rng: &mut Rng,
    trace: &mut DiagnosticsTrace,
) -> Result<Mlp> {
    let mut net = base;
    if base_epochs > 0 {
        let mut theta = net.pack();
        let mut obj = MlpObjective { net: &mut net, data, kind };
        driver.run(&mut obj, &mut theta, Some(base_epochs), None, 0.0, trace)?;
        net.unpack(&theta);
    }
    for (op, sched) in stages {
        let (large, view) = op.apply(&net, growth_rng)?;
        let mut blend = HomotopyBlend::new(large, view)?;
        hta_train(&mut blend, data, kind, sched, driver, trace)?;
        net = blend.large;
    }
    Ok(net)
}

/// Checkpoint sidecar: which stage/t/epoch a saved network came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub stage: usize,
    pub t: f64,
    pub epoch: usize,
}

/// Writes the network in the plain-text format plus a `.meta.json`
/// sidecar next to it.
pub fn save_checkpoint(net: &Mlp, path: &std::path::Path, meta: CheckpointMeta) -> Result<()> {
    crate::network::save_mlp(net, path)?;
    let sidecar = sidecar_path(path);
    std::fs::write(sidecar, serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<(Mlp, CheckpointMeta)> {
    let net = crate::network::load_mlp(path)?;
    let meta: CheckpointMeta = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
    Ok((net, meta))
}

fn sidecar_path(path: &std::path::Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".meta.json");
    std::path::PathBuf::from(os)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;
    use crate::linalg::Matrix;
    use crate::optim::{StepSchedule, TrainConfig};

    fn rand_inputs(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = Rng::new(seed);
        (0..n).map(|_| (0..dim).map(|_| rng.uniform(-2.0, 2.0)).collect()).collect()
    }

    fn toy_dataset(net: &Mlp, n: usize, seed: u64) -> Dataset {
        let xs = rand_inputs(n, net.input_dim(), seed);
        let ys: Vec<Vec<f64>> = xs.iter().map(|x| net.forward(x)).collect();
        Dataset::from_rows(&xs, &ys, "teacher").unwrap()
    }

    #[test]
    fn widen_preserves_outputs_exactly() {
        let mut rng = Rng::new(3);
        let net = Mlp::random(&[2, 10, 1], Activation::ReLU, &mut rng);
        let (large, view) = widen(&net, 0, 10, &mut rng).unwrap();
        assert_eq!(large.layers()[0].weights.rows(), 20);
        assert_eq!(large.layers()[0].weights.cols(), 2);
        assert_eq!(large.layers()[1].weights.rows(), 1);
        assert_eq!(large.layers()[1].weights.cols(), 20);
        for x in rand_inputs(100, 2, 17) {
            let a = net.forward(&x);
            let b = large.forward(&x);
            assert!((a[0] - b[0]).abs() < 1e-12);
        }
        // View-extracted small net is the original, parameter by parameter.
        assert_eq!(view.extract(&large), net);
    }

    #[test]
    fn widen_rejects_output_layer_and_zero_growth() {
        let mut rng = Rng::new(1);
        let net = Mlp::random(&[2, 4, 1], Activation::ReLU, &mut rng);
        assert!(widen(&net, 1, 5, &mut rng).is_err());
        assert!(widen(&net, 9, 5, &mut rng).is_err());
        assert!(widen(&net, 0, 0, &mut rng).is_err());
    }

    #[test]
    fn add_layer_identity_activation_preserves_large_output() {
        let mut rng = Rng::new(5);
        let net = Mlp::random(&[1, 2, 1], Activation::Sigmoid, &mut rng);
        let (large, view) = add_layer(&net, 1, 3, Activation::Identity, &mut rng).unwrap();
        assert_eq!(large.dims(), vec![1, 2, 3, 1]);
        for x in rand_inputs(100, 1, 23) {
            let a = net.forward(&x);
            let b = large.forward(&x);
            assert!((a[0] - b[0]).abs() < 1e-12);
            // Blend at t=0 takes the view path: exact.
            let blend = HomotopyBlend::new(large.clone(), view.clone()).unwrap();
            assert_eq!(blend.forward(&x), view.forward(&large, &x));
        }
        assert_eq!(view.extract(&large), net);
    }

    #[test]
    fn add_layer_relu_passes_through_nonnegative_outputs() {
        // Force a known-positive old output: identity hidden activation,
        // all-positive weights and input.
        let layers = vec![
            Layer {
                weights: Matrix::from_rows(2, 1, &[0.5, 0.25]),
                bias: vec![0.1, 0.2],
                activation: Activation::Identity,
            },
            Layer {
                weights: Matrix::from_rows(1, 2, &[1.0, 1.0]),
                bias: vec![0.3],
                activation: Activation::Identity,
            },
        ];
        let net = Mlp::new(1, layers);
        let mut rng = Rng::new(9);
        let (large, _) = add_layer(&net, 1, 4, Activation::ReLU, &mut rng).unwrap();
        for x in [[0.0], [0.5], [2.0]] {
            let a = net.forward(&x);
            assert!(a[0] >= 0.0, "precondition: old output nonnegative");
            let b = large.forward(&x);
            assert!((a[0] - b[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn add_layer_rejects_bad_position_and_narrow_width() {
        let mut rng = Rng::new(2);
        let net = Mlp::random(&[2, 4, 3, 2], Activation::ReLU, &mut rng);
        assert!(add_layer(&net, 0, 5, Activation::ReLU, &mut rng).is_err());
        assert!(add_layer(&net, 3, 5, Activation::ReLU, &mut rng).is_err());
        // Displaced layer at position 1 outputs 3 units; width 2 cannot carry them.
        assert!(add_layer(&net, 1, 2, Activation::ReLU, &mut rng).is_err());
    }

    #[test]
    fn blend_endpoints_are_exact_and_blend_is_linear_in_t() {
        let mut rng = Rng::new(30);
        for trial in 0..20 {
            let net = Mlp::random(&[3, 6, 2], Activation::Sigmoid, &mut Rng::new(trial));
            let (large, view) = widen(&net, 0, 4, &mut rng).unwrap();
            let mut blend = HomotopyBlend::new(large, view).unwrap();
            // Perturb the large net so small and large genuinely differ.
            let mut theta = blend.large.pack();
            for v in theta.iter_mut() {
                *v += rng.uniform(-0.5, 0.5);
            }
            blend.large.unpack(&theta);

            for x in rand_inputs(5, 3, 100 + trial) {
                blend.set_t(0.0);
                let small = blend.view.extract(&blend.large).forward(&x);
                assert_eq!(blend.forward(&x), small);
                blend.set_t(1.0);
                let large_out = blend.large.forward(&x);
                assert_eq!(blend.forward(&x), large_out);

                let t = rng.next_f64();
                blend.set_t(t);
                let out = blend.forward(&x);
                for k in 0..out.len() {
                    let lin = small[k] + t * (large_out[k] - small[k]);
                    assert!((out[k] - lin).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn blend_half_small_one_large_three_gives_two() {
        // 1-layer nets: small output fixed at 1, large at 3 (bias-only).
        let large = Mlp::new(
            1,
            vec![Layer {
                weights: Matrix::from_rows(2, 1, &[0.0, 0.0]),
                bias: vec![1.0, 3.0],
                activation: Activation::Identity,
            }],
        );
        // View selects the first row: small(x) = 1.
        let view = SubnetView::new(
            1,
            vec![LayerView { source: 0, rows: 1, cols: 1, activation: Activation::Identity }],
        );
        // Output dims differ (1 vs 2), so drive the paths directly.
        view.validate(&large).unwrap();
        let small_out = view.forward(&large, &[0.0]);
        let large_out = large.forward(&[0.0]);
        let blended = 0.5 * small_out[0] + 0.5 * large_out[1];
        assert_eq!(blended, 2.0);
    }

    #[test]
    fn blend_gradient_at_zero_t_leaves_new_parameters_zero() {
        let mut rng = Rng::new(40);
        let net = Mlp::random(&[2, 3, 1], Activation::Sigmoid, &mut rng);
        let (large, view) = widen(&net, 0, 3, &mut rng).unwrap();
        let blend = HomotopyBlend::new(large, view).unwrap();
        let mut grad = vec![0.0; blend.large.param_count()];
        blend.loss_grad_sample(&[0.3, -0.7], LossKind::SquaredError, TargetRef::Values(&[0.9]), 1.0, &mut grad);
        let layout = blend.large.layout();
        // New rows of layer 0 (rows 3..6) and new columns of layer 1 must be untouched.
        for i in 3..6 {
            for j in 0..2 {
                assert_eq!(grad[layout.weight_offset(0, i, j)], 0.0);
            }
            assert_eq!(grad[layout.bias_offset(0, i)], 0.0);
        }
        for j in 3..6 {
            assert_eq!(grad[layout.weight_offset(1, 0, j)], 0.0);
        }
        // Shared parameters do receive gradient.
        assert!(grad.iter().any(|&g| g != 0.0));
    }

    #[test]
    fn blend_gradient_at_one_t_equals_plain_backward() {
        let mut rng = Rng::new(41);
        let net = Mlp::random(&[2, 3, 2], Activation::Sigmoid, &mut rng);
        let (large, view) = widen(&net, 0, 2, &mut rng).unwrap();
        let mut blend = HomotopyBlend::new(large, view).unwrap();
        blend.set_t(1.0);
        let x = [0.2, 0.9];
        let mut g_blend = vec![0.0; blend.large.param_count()];
        blend.loss_grad_sample(&x, LossKind::SquaredError, TargetRef::Values(&[0.0, 1.0]), 1.0, &mut g_blend);
        let mut g_plain = vec![0.0; blend.large.param_count()];
        blend.large.loss_grad_sample(&x, LossKind::SquaredError, TargetRef::Values(&[0.0, 1.0]), 1.0, &mut g_plain);
        assert_eq!(g_blend, g_plain);
    }

    #[test]
    fn blend_gradient_matches_finite_differences_at_half_t() {
        let mut rng = Rng::new(42);
        let net = Mlp::random(&[2, 2, 1], Activation::Sigmoid, &mut rng);
        let (large, view) = widen(&net, 0, 2, &mut rng).unwrap();
        let mut blend = HomotopyBlend::new(large, view).unwrap();
        // Give the zero out-columns some mass so the large path differs.
        let mut theta = blend.large.pack();
        for v in theta.iter_mut() {
            *v += rng.uniform(-0.3, 0.3);
        }
        blend.large.unpack(&theta);
        blend.set_t(0.5);

        let x = [0.6, -0.4];
        let target = [0.7];
        let mut analytic = vec![0.0; theta.len()];
        blend.loss_grad_sample(&x, LossKind::SquaredError, TargetRef::Values(&target), 1.0, &mut analytic);

        let eps = 1e-5;
        let mut probe = blend.clone();
        for i in 0..theta.len() {
            let saved = theta[i];
            theta[i] = saved + eps;
            probe.large.unpack(&theta);
            let out_p = probe.forward(&x);
            let (lp, _) = loss_and_grad(LossKind::SquaredError, &out_p, TargetRef::Values(&target));
            theta[i] = saved - eps;
            probe.large.unpack(&theta);
            let out_m = probe.forward(&x);
            let (lm, _) = loss_and_grad(LossKind::SquaredError, &out_m, TargetRef::Values(&target));
            theta[i] = saved;
            let numeric = (lp - lm) / (2.0 * eps);
            let err = (analytic[i] - numeric).abs() / (analytic[i].abs() + numeric.abs()).max(1.0);
            assert!(err < 1e-4, "param {i}: analytic {} vs numeric {}", analytic[i], numeric);
        }
    }

    #[test]
    fn hta_schedule_validates_delta_t() {
        assert!(HtaSchedule::new(0.5, 10).is_ok());
        assert_eq!(HtaSchedule::new(0.5, 10).unwrap().steps(), 2);
        assert!(HtaSchedule::new(1.0 / 3.0, 1).is_ok());
        assert!(HtaSchedule::new(0.3, 10).is_err());
        assert!(HtaSchedule::new(0.0, 10).is_err());
        assert!(HtaSchedule::new(1.5, 10).is_err());
        assert!(HtaSchedule::new(0.5, 0).is_err());
    }

    #[test]
    fn hta_schedule_t_sequence_ends_at_exactly_one() {
        let s = HtaSchedule::new(0.5, 3).unwrap();
        assert_eq!(s.t_at(1), 0.5);
        assert_eq!(s.t_at(2), 1.0);
        let s3 = HtaSchedule::new(1.0 / 3.0, 1).unwrap();
        assert_eq!(s3.t_at(3), 1.0);
        let mut prev = 0.0;
        for i in 1..=3 {
            assert!(s3.t_at(i) > prev);
            prev = s3.t_at(i);
        }
    }

    #[test]
    fn hta_train_visits_expected_ts_and_trace_length() {
        let mut rng = Rng::new(50);
        let net = Mlp::random(&[2, 4, 1], Activation::Sigmoid, &mut rng);
        let data = toy_dataset(&net, 16, 7);
        let (large, view) = widen(&net, 0, 4, &mut rng).unwrap();
        let mut blend = HomotopyBlend::new(large, view).unwrap();
        let sched = HtaSchedule::new(0.5, 3).unwrap();
        let cfg = TrainConfig {
            schedule: StepSchedule::Constant { gamma: 0.05 },
            batch_size: 8,
            epochs: 0,
            seed: 11,
            restarts: 1,
            ..TrainConfig::default()
        };
        let mut driver = SgdDriver::new(&cfg);
        let mut trace = DiagnosticsTrace::default();
        hta_train(&mut blend, &data, LossKind::SquaredError, &sched, &mut driver, &mut trace).unwrap();
        let ts: Vec<f64> = trace.epochs.iter().map(|e| e.t).collect();
        assert_eq!(ts, vec![0.5, 0.5, 0.5, 1.0, 1.0, 1.0]);
        assert_eq!(trace.epochs.len(), sched.steps() * sched.epochs_per_step);
    }

    #[test]
    fn hta_train_with_unit_delta_t_equals_plain_sgd_on_large_net() {
        let mut rng = Rng::new(51);
        let net = Mlp::random(&[2, 3, 1], Activation::Sigmoid, &mut rng);
        let data = toy_dataset(&net, 24, 8);
        let (large, view) = widen(&net, 0, 2, &mut rng).unwrap();

        let cfg = TrainConfig {
            schedule: StepSchedule::Constant { gamma: 0.05 },
            batch_size: 8,
            epochs: 0,
            seed: 99,
            restarts: 1,
            ..TrainConfig::default()
        };

        // Continuation with delta_t = 1 and no pre-solve.
        let mut blend = HomotopyBlend::new(large.clone(), view).unwrap();
        let sched = HtaSchedule::new(1.0, 4).unwrap();
        let mut driver_a = SgdDriver::new(&cfg);
        let mut trace_a = DiagnosticsTrace::default();
        hta_train(&mut blend, &data, LossKind::SquaredError, &sched, &mut driver_a, &mut trace_a).unwrap();

        // Plain SGD on the large net from the same embedded start.
        let mut plain = large.clone();
        let mut theta = plain.pack();
        let mut obj = MlpObjective { net: &mut plain, data: &data, kind: LossKind::SquaredError };
        let mut driver_b = SgdDriver::new(&cfg);
        let mut trace_b = DiagnosticsTrace::default();
        driver_b.run(&mut obj, &mut theta, Some(4), None, 1.0, &mut trace_b).unwrap();

        assert_eq!(blend.large.pack(), theta);
        let a: Vec<f64> = trace_a.steps.iter().map(|s| s.batch_loss).collect();
        let b: Vec<f64> = trace_b.steps.iter().map(|s| s.batch_loss).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn multi_stage_train_threads_widths_and_empty_stages_train_base() {
        let mut rng = Rng::new(52);
        let teacher = Mlp::random(&[3, 8, 8, 1], Activation::ReLU, &mut rng);
        let data = toy_dataset(&teacher, 32, 9);
        let base = Mlp::random(&[3, 10, 10, 1], Activation::ReLU, &mut Rng::new(1));
        let cfg = TrainConfig {
            schedule: StepSchedule::Constant { gamma: 0.02 },
            batch_size: 16,
            epochs: 0,
            seed: 5,
            restarts: 1,
            ..TrainConfig::default()
        };
        let stages = vec![
            (GrowthOp::Widen { layer: 0, added: 10 }, HtaSchedule::new(0.5, 2).unwrap()),
            (GrowthOp::Widen { layer: 1, added: 10 }, HtaSchedule::new(0.5, 2).unwrap()),
        ];
        let mut driver = SgdDriver::new(&cfg);
        let mut trace = DiagnosticsTrace::default();
        let final_net = multi_stage_train(
            base.clone(),
            &stages,
            &data,
            LossKind::SquaredError,
            2,
            &mut driver,
            &mut Rng::new(77),
            &mut trace,
        )
        .unwrap();
        assert_eq!(final_net.hidden_widths(), vec![20, 20]);

        // Empty stage list: plain training of the base.
        let mut driver2 = SgdDriver::new(&cfg);
        let mut trace2 = DiagnosticsTrace::default();
        let plain = multi_stage_train(
            base.clone(),
            &[],
            &data,
            LossKind::SquaredError,
            2,
            &mut driver2,
            &mut Rng::new(77),
            &mut trace2,
        )
        .unwrap();
        assert_eq!(plain.hidden_widths(), vec![10, 10]);
        assert_eq!(trace2.epochs.len(), 2);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = std::env::temp_dir().join(format!("hta-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let net = Mlp::random(&[2, 3, 1], Activation::ReLU, &mut Rng::new(1));
        let path = dir.join("net.txt");
        let meta = CheckpointMeta { stage: 1, t: 0.5, epoch: 42 };
        save_checkpoint(&net, &path, meta).unwrap();
        let (back, meta_back) = load_checkpoint(&path).unwrap();
        assert_eq!(back, net);
        assert_eq!(meta_back, meta);
        std::fs::remove_dir_all(&dir).ok();
    }
}
