//! Minimal deterministic MLP engine.
//!
//! The model is a stack of dense layers over `f64`, trained with softmax
//! cross-entropy on soft targets and per-sample weights. Two properties drive
//! the design:
//!
//! - every computation is a pure, sequential function of its inputs, so
//!   repeated calls are bitwise identical;
//! - a forward pass can be *entered at any layer* (`forward_from`), which is
//!   what representation-level interpolation needs, and gradients can be
//!   pushed back down through a stored trace so that mixed representations
//!   still train the layers below the mixing point.

use std::io::{Read as _, Write as _};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Activation applied after a dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Identity => x,
        }
    }

    /// Derivative expressed in terms of the post-activation value.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Identity => 1,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Shape and activation of one dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
        }
    }
}

/// Dense feed-forward network. Weights are row-major `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<LayerSpec>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

/// Per-layer activations of one forward pass, including the entry point as
/// index 0 and the logits as the last entry. `start_layer` records where the
/// pass entered, so a trace from `forward_from(h, k)` covers only the suffix.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub start_layer: usize,
    pub activations: Vec<Vec<Vec<f64>>>,
}

impl ForwardTrace {
    /// Activation rows at absolute layer index `layer` (0 = input).
    pub fn at(&self, layer: usize) -> &[Vec<f64>] {
        &self.activations[layer - self.start_layer]
    }

    pub fn logits(&self) -> &[Vec<f64>] {
        self.activations.last().expect("trace is never empty")
    }
}

/// Parameter gradients, mirroring the shapes of an [`Mlp`]. Layers below the
/// entry point of the pass that produced them hold zeros.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub d_weights: Vec<Vec<f64>>,
    pub d_biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            d_weights: mlp.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            d_biases: mlp.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.d_weights
            .iter()
            .chain(self.d_biases.iter())
            .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

fn validate_specs(layers: &[LayerSpec]) -> Result<()> {
    if layers.is_empty() {
        return Err(Error::Config("model must have at least one layer".into()));
    }
    for (k, spec) in layers.iter().enumerate() {
        if spec.in_dim == 0 || spec.out_dim == 0 {
            return Err(Error::Config(format!(
                "layer {k} has zero dimension ({}x{})",
                spec.out_dim, spec.in_dim
            )));
        }
        if k > 0 && layers[k - 1].out_dim != spec.in_dim {
            return Err(Error::Config(format!(
                "layer {} out_dim {} does not chain into layer {k} in_dim {}",
                k - 1,
                layers[k - 1].out_dim,
                spec.in_dim
            )));
        }
    }
    Ok(())
}

impl Mlp {
    /// Model with all weights and biases zero.
    pub fn zeros(layers: Vec<LayerSpec>) -> Result<Self> {
        validate_specs(&layers)?;
        let weights = layers
            .iter()
            .map(|l| vec![0.0; l.out_dim * l.in_dim])
            .collect();
        let biases = layers.iter().map(|l| vec![0.0; l.out_dim]).collect();
        Ok(Self {
            layers,
            weights,
            biases,
        })
    }

    /// Fan-based uniform init: weights in `[-s, s]` with
    /// `s = sqrt(6 / (in_dim + out_dim))`, biases zero.
    pub fn init(layers: Vec<LayerSpec>, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut mlp = Self::zeros(layers)?;
        for (k, spec) in mlp.layers.iter().enumerate() {
            let s = (6.0 / (spec.in_dim + spec.out_dim) as f64).sqrt();
            for w in mlp.weights[k].iter_mut() {
                *w = rng.random_range(-s..=s);
            }
        }
        Ok(mlp)
    }

    /// Build from explicit parameters (mainly for tests and checkpoints).
    pub fn from_parts(
        layers: Vec<LayerSpec>,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self> {
        validate_specs(&layers)?;
        if weights.len() != layers.len() || biases.len() != layers.len() {
            return Err(Error::Config(format!(
                "expected {} weight/bias arrays, got {}/{}",
                layers.len(),
                weights.len(),
                biases.len()
            )));
        }
        for (k, spec) in layers.iter().enumerate() {
            if weights[k].len() != spec.out_dim * spec.in_dim {
                return Err(Error::Config(format!(
                    "layer {k} weight array has {} entries, expected {}",
                    weights[k].len(),
                    spec.out_dim * spec.in_dim
                )));
            }
            if biases[k].len() != spec.out_dim {
                return Err(Error::Config(format!(
                    "layer {k} bias array has {} entries, expected {}",
                    biases[k].len(),
                    spec.out_dim
                )));
            }
        }
        Ok(Self {
            layers,
            weights,
            biases,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn weight(&self, layer: usize, row: usize, col: usize) -> f64 {
        self.weights[layer][row * self.layers[layer].in_dim + col]
    }

    pub fn set_weight(&mut self, layer: usize, row: usize, col: usize, value: f64) {
        self.weights[layer][row * self.layers[layer].in_dim + col] = value;
    }

    pub fn bias(&self, layer: usize, row: usize) -> f64 {
        self.biases[layer][row]
    }

    pub fn set_bias(&mut self, layer: usize, row: usize, value: f64) {
        self.biases[layer][row] = value;
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    fn check_entry(&self, h: &[Vec<f64>], layer_k: usize) -> Result<()> {
        if layer_k >= self.layers.len() {
            return Err(Error::LayerIndex {
                index: layer_k,
                layers: self.layers.len(),
            });
        }
        let expected = self.layers[layer_k].in_dim;
        for row in h {
            if row.len() != expected {
                return Err(Error::Shape {
                    layer: layer_k,
                    expected,
                    got: row.len(),
                });
            }
        }
        Ok(())
    }

    /// Run layers `layer_k..end` on a batch entering at activation index
    /// `layer_k` (0 = raw input). Returns the logits and the trace of every
    /// computed activation, with the entry batch stored as the first entry.
    pub fn forward_from(&self, h: &[Vec<f64>], layer_k: usize) -> Result<(Vec<Vec<f64>>, ForwardTrace)> {
        self.check_entry(h, layer_k)?;
        let mut activations = Vec::with_capacity(self.layers.len() - layer_k + 1);
        activations.push(h.to_vec());
        for (k, spec) in self.layers.iter().enumerate().skip(layer_k) {
            let prev = activations.last().expect("non-empty");
            let mut next = Vec::with_capacity(prev.len());
            for row in prev {
                let mut out = vec![0.0; spec.out_dim];
                for (r, out_v) in out.iter_mut().enumerate() {
                    let w = &self.weights[k][r * spec.in_dim..(r + 1) * spec.in_dim];
                    let mut acc = self.biases[k][r];
                    for (wv, xv) in w.iter().zip(row.iter()) {
                        acc += wv * xv;
                    }
                    *out_v = spec.activation.apply(acc);
                }
                next.push(out);
            }
            activations.push(next);
        }
        let logits = activations.last().expect("non-empty").clone();
        Ok((
            logits,
            ForwardTrace {
                start_layer: layer_k,
                activations,
            },
        ))
    }

    /// Pre-activation values (affine outputs before the nonlinearity), one
    /// matrix per layer. Finite-difference sweeps use this to reject draws
    /// whose ReLU inputs sit close to the kink, where central differences
    /// are not a valid derivative oracle.
    pub fn pre_activations(&self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<Vec<f64>>>> {
        self.check_entry(inputs, 0)?;
        let mut out = Vec::with_capacity(self.layers.len());
        let mut current = inputs.to_vec();
        for (k, spec) in self.layers.iter().enumerate() {
            let mut pre_layer = Vec::with_capacity(current.len());
            let mut post_layer = Vec::with_capacity(current.len());
            for row in &current {
                let mut pre = vec![0.0; spec.out_dim];
                for (r, pre_v) in pre.iter_mut().enumerate() {
                    let w = &self.weights[k][r * spec.in_dim..(r + 1) * spec.in_dim];
                    let mut acc = self.biases[k][r];
                    for (wv, xv) in w.iter().zip(row.iter()) {
                        acc += wv * xv;
                    }
                    *pre_v = acc;
                }
                post_layer.push(pre.iter().map(|&v| spec.activation.apply(v)).collect());
                pre_layer.push(pre);
            }
            out.push(pre_layer);
            current = post_layer;
        }
        Ok(out)
    }

    /// Run only layers `0..to_layer`, returning a trace of activations
    /// `0..=to_layer`. This is the cheap way to obtain representations at a
    /// mixing point without computing the logits.
    pub fn forward_prefix(&self, inputs: &[Vec<f64>], to_layer: usize) -> Result<ForwardTrace> {
        if to_layer > self.layers.len() {
            return Err(Error::LayerIndex {
                index: to_layer,
                layers: self.layers.len(),
            });
        }
        self.check_entry(inputs, 0)?;
        let mut activations = Vec::with_capacity(to_layer + 1);
        activations.push(inputs.to_vec());
        for (k, spec) in self.layers.iter().enumerate().take(to_layer) {
            let prev = activations.last().expect("non-empty");
            let mut next = Vec::with_capacity(prev.len());
            for row in prev {
                let mut out = vec![0.0; spec.out_dim];
                for (r, out_v) in out.iter_mut().enumerate() {
                    let w = &self.weights[k][r * spec.in_dim..(r + 1) * spec.in_dim];
                    let mut acc = self.biases[k][r];
                    for (wv, xv) in w.iter().zip(row.iter()) {
                        acc += wv * xv;
                    }
                    *out_v = spec.activation.apply(acc);
                }
                next.push(out);
            }
            activations.push(next);
        }
        Ok(ForwardTrace {
            start_layer: 0,
            activations,
        })
    }

    /// Predicted class per row: argmax of the logits, ties to the lowest index.
    pub fn predict_classes(&self, inputs: &[Vec<f64>]) -> Result<Vec<usize>> {
        let (logits, _) = self.forward_from(inputs, 0)?;
        Ok(logits.iter().map(|row| argmax(row)).collect())
    }

    /// Weighted-mean softmax cross-entropy and its exact gradients for layers
    /// `layer_k..end`:
    ///
    /// `loss = sum_i w_i * CE(softmax(logits_i), t_i) / sum_i w_i`.
    pub fn loss_and_grads(
        &self,
        inputs: &[Vec<f64>],
        targets: &[Vec<f64>],
        weights: &[f64],
        layer_k: usize,
    ) -> Result<(f64, Gradients)> {
        let (loss, grads, _) = self.loss_grads_input_grads(inputs, targets, weights, layer_k)?;
        Ok((loss, grads))
    }

    /// Like [`Mlp::loss_and_grads`] but also returns `dloss/dinputs`, the
    /// gradient with respect to the injected representation. That is what a
    /// trainer needs to keep propagating through the layers *below* a mixing
    /// point (split across the two interpolation endpoints).
    pub fn loss_grads_input_grads(
        &self,
        inputs: &[Vec<f64>],
        targets: &[Vec<f64>],
        weights: &[f64],
        layer_k: usize,
    ) -> Result<(f64, Gradients, Vec<Vec<f64>>)> {
        if inputs.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if targets.len() != inputs.len() || weights.len() != inputs.len() {
            return Err(Error::Numeric(format!(
                "batch size mismatch: {} inputs, {} targets, {} weights",
                inputs.len(),
                targets.len(),
                weights.len()
            )));
        }
        let k_classes = self.output_dim();
        for (i, t) in targets.iter().enumerate() {
            if t.len() != k_classes {
                return Err(Error::Numeric(format!(
                    "target row {i} has {} entries, expected {k_classes}",
                    t.len()
                )));
            }
            let mut sum = 0.0;
            for &v in t {
                if !(v >= 0.0) {
                    return Err(Error::Numeric(format!(
                        "target row {i} has negative entry {v}"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Numeric(format!(
                    "target row {i} sums to {sum}, expected 1"
                )));
            }
        }
        let mut weight_sum = 0.0;
        for (i, &w) in weights.iter().enumerate() {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::DegenerateWeights(format!(
                    "weight {i} is {w}; weights must be finite and nonnegative"
                )));
            }
            weight_sum += w;
        }
        if weight_sum <= 0.0 {
            return Err(Error::DegenerateWeights("all weights are zero".into()));
        }

        let (logits, trace) = self.forward_from(inputs, layer_k)?;

        let mut loss = 0.0;
        let mut d_top: Vec<Vec<f64>> = Vec::with_capacity(logits.len());
        for ((row, target), &w) in logits.iter().zip(targets).zip(weights) {
            let (ce, probs) = cross_entropy_row(row, target);
            loss += w * ce;
            let mut d = vec![0.0; row.len()];
            for ((dv, p), t) in d.iter_mut().zip(&probs).zip(target) {
                *dv = w * (p - t) / weight_sum;
            }
            d_top.push(d);
        }
        loss /= weight_sum;

        let mut grads = Gradients::zeros_like(self);
        let d_inputs = self.backprop(&trace, self.layers.len(), d_top, &mut grads);
        Ok((loss, grads, d_inputs))
    }

    /// Push an upstream gradient at activation index `at_layer` down through
    /// a stored trace, accumulating parameter gradients for the covered
    /// layers. Returns `dloss/d activations[start_layer]`.
    pub fn backprop_representation(
        &self,
        trace: &ForwardTrace,
        at_layer: usize,
        upstream: &[Vec<f64>],
        grads: &mut Gradients,
    ) -> Vec<Vec<f64>> {
        self.backprop(trace, at_layer, upstream.to_vec(), grads)
    }

    /// Shared backward pass: `d_act` is dloss/d activations[at_layer]; walks
    /// layers `at_layer-1 .. trace.start_layer` accumulating into `grads`.
    fn backprop(
        &self,
        trace: &ForwardTrace,
        at_layer: usize,
        mut d_act: Vec<Vec<f64>>,
        grads: &mut Gradients,
    ) -> Vec<Vec<f64>> {
        for layer in (trace.start_layer..at_layer).rev() {
            let spec = self.layers[layer];
            let act_in = trace.at(layer);
            let act_out = trace.at(layer + 1);
            let mut d_prev = vec![vec![0.0; spec.in_dim]; d_act.len()];
            for (i, d_row) in d_act.iter().enumerate() {
                for r in 0..spec.out_dim {
                    let d_pre = d_row[r] * spec.activation.derivative_from_output(act_out[i][r]);
                    if d_pre == 0.0 {
                        continue;
                    }
                    grads.d_biases[layer][r] += d_pre;
                    let w_row = &self.weights[layer][r * spec.in_dim..(r + 1) * spec.in_dim];
                    let g_row = &mut grads.d_weights[layer][r * spec.in_dim..(r + 1) * spec.in_dim];
                    for c in 0..spec.in_dim {
                        g_row[c] += d_pre * act_in[i][c];
                        d_prev[i][c] += d_pre * w_row[c];
                    }
                }
            }
            d_act = d_prev;
        }
        d_act
    }

    /// One SGD step with decoupled-from-bias weight decay:
    /// `W <- W - lr * (dW + wd * W)`, `b <- b - lr * db`.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64, weight_decay: f64) -> Result<()> {
        for (layer, (gw, gb)) in grads.d_weights.iter().zip(&grads.d_biases).enumerate() {
            if gw.iter().chain(gb.iter()).any(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient at layer {layer}"
                )));
            }
            let w = &mut self.weights[layer];
            for (wv, gv) in w.iter_mut().zip(gw) {
                *wv -= lr * (gv + weight_decay * *wv);
            }
            let b = &mut self.biases[layer];
            for (bv, gv) in b.iter_mut().zip(gb) {
                *bv -= lr * gv;
            }
            if self.weights[layer]
                .iter()
                .chain(self.biases[layer].iter())
                .any(|x| !x.is_finite())
            {
                return Err(Error::Numeric(format!(
                    "non-finite parameter at layer {layer} after update"
                )));
            }
        }
        Ok(())
    }

    /// Maximum relative disagreement between analytic gradients and central
    /// finite differences over every parameter:
    /// `|analytic - difference| / max(|analytic|, |difference|, 1e-12)`.
    pub fn gradient_check(
        &self,
        inputs: &[Vec<f64>],
        targets: &[Vec<f64>],
        weights: &[f64],
        eps: f64,
    ) -> Result<f64> {
        if eps <= 0.0 {
            return Err(Error::Config(format!("eps must be positive, got {eps}")));
        }
        let (_, grads) = self.loss_and_grads(inputs, targets, weights, 0)?;
        let mut worst: f64 = 0.0;
        let mut probe = self.clone();
        let mut check = |probe: &mut Mlp, layer: usize, idx: usize, is_bias: bool, analytic: f64| -> Result<()> {
            let read = |m: &Mlp| {
                if is_bias {
                    m.biases[layer][idx]
                } else {
                    m.weights[layer][idx]
                }
            };
            let write = |m: &mut Mlp, v: f64| {
                if is_bias {
                    m.biases[layer][idx] = v;
                } else {
                    m.weights[layer][idx] = v;
                }
            };
            let orig = read(probe);
            write(probe, orig + eps);
            let (plus, _) = probe.loss_and_grads(inputs, targets, weights, 0)?;
            write(probe, orig - eps);
            let (minus, _) = probe.loss_and_grads(inputs, targets, weights, 0)?;
            write(probe, orig);
            let diff = (plus - minus) / (2.0 * eps);
            let rel = (analytic - diff).abs() / analytic.abs().max(diff.abs()).max(1e-12);
            worst = worst.max(rel);
            Ok(())
        };
        for layer in 0..self.layers.len() {
            for idx in 0..self.weights[layer].len() {
                check(&mut probe, layer, idx, false, grads.d_weights[layer][idx])?;
            }
            for idx in 0..self.biases[layer].len() {
                check(&mut probe, layer, idx, true, grads.d_biases[layer][idx])?;
            }
        }
        Ok(worst)
    }

    /// Write the model as a binary checkpoint; loading is bit-exact.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for spec in &self.layers {
            buf.extend_from_slice(&(spec.in_dim as u32).to_le_bytes());
            buf.extend_from_slice(&(spec.out_dim as u32).to_le_bytes());
            buf.push(spec.activation.tag());
        }
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for v in w.iter().chain(b.iter()) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&buf).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let mut cursor = 0usize;
        let take = |cursor: &mut usize, n: usize| -> Result<&[u8]> {
            if *cursor + n > bytes.len() {
                return Err(Error::format(path, "truncated checkpoint"));
            }
            let slice = &bytes[*cursor..*cursor + n];
            *cursor += n;
            Ok(slice)
        };
        if take(&mut cursor, MAGIC.len())? != MAGIC {
            return Err(Error::format(path, "not a model checkpoint (bad magic)"));
        }
        let n_layers = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()) as usize;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let in_dim = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()) as usize;
            let out_dim = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()) as usize;
            let tag = take(&mut cursor, 1)?[0];
            let activation = Activation::from_tag(tag)
                .ok_or_else(|| Error::format(path, format!("unknown activation tag {tag}")))?;
            layers.push(LayerSpec::new(in_dim, out_dim, activation));
        }
        let mut weights = Vec::with_capacity(n_layers);
        let mut biases = Vec::with_capacity(n_layers);
        for spec in &layers {
            let mut w = vec![0.0; spec.out_dim * spec.in_dim];
            for v in w.iter_mut() {
                *v = f64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap());
            }
            let mut b = vec![0.0; spec.out_dim];
            for v in b.iter_mut() {
                *v = f64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap());
            }
            weights.push(w);
            biases.push(b);
        }
        if cursor != bytes.len() {
            return Err(Error::format(path, "trailing bytes after checkpoint"));
        }
        Self::from_parts(layers, weights, biases)
    }
}

const MAGIC: &[u8; 8] = b"GMIXMLP1";

/// Index of the largest entry, ties to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Softmax cross-entropy of one row against a probability target, returning
/// the loss and the softmax probabilities. Uses the max-subtraction form.
fn cross_entropy_row(logits: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut exp_sum = 0.0;
    let mut probs = vec![0.0; logits.len()];
    for (p, &l) in probs.iter_mut().zip(logits) {
        *p = (l - m).exp();
        exp_sum += *p;
    }
    for p in probs.iter_mut() {
        *p /= exp_sum;
    }
    let lse = m + exp_sum.ln();
    let mut dot = 0.0;
    for (&t, &l) in target.iter().zip(logits) {
        dot += t * l;
    }
    (lse - dot, probs)
}

/// Per-sample softmax cross-entropy losses for a batch of logits.
pub fn cross_entropy_rows(logits: &[Vec<f64>], targets: &[Vec<f64>]) -> Vec<f64> {
    logits
        .iter()
        .zip(targets)
        .map(|(l, t)| cross_entropy_row(l, t).0)
        .collect()
}

/// One-hot probability row.
pub fn one_hot(class: usize, n_classes: usize) -> Vec<f64> {
    let mut row = vec![0.0; n_classes];
    row[class] = 1.0;
    row
}
