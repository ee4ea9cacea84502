//! Softmax classifier heads (multinomial logistic regression and rectifier
//! MLPs) trained with plain mini-batch gradient descent.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledEmbeddings;
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

/// Default hidden widths of the desk-scale MLP head.
pub const DEFAULT_MLP_HIDDEN: [usize; 2] = [64, 32];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearLayer {
    /// `out × in`
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl LinearLayer {
    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weight
            .row_iter()
            .zip(&self.bias)
            .map(|(w, b)| dot(w, x) + b)
            .collect()
    }

    fn forward_batch(&self, x: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(x.rows(), self.output_dim());
        for (i, row) in x.row_iter().enumerate() {
            let o = out.row_mut(i);
            for (k, (w, b)) in self.weight.row_iter().zip(&self.bias).enumerate() {
                o[k] = dot(w, row) + b;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    None,
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    layers: Vec<LinearLayer>,
    activation: Activation,
    class_count: usize,
}

impl ClassifierHead {
    pub fn new(layers: Vec<LinearLayer>, class_count: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Dimension("a head needs at least one layer".into()));
        }
        for (k, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.output_dim() {
                return Err(Error::Dimension(format!(
                    "layer {k}: bias of length {} for {} outputs",
                    layer.bias.len(),
                    layer.output_dim()
                )));
            }
            if layer.bias.iter().chain(layer.weight.data()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("layer parameters"));
            }
            if k > 0 && layers[k - 1].output_dim() != layer.input_dim() {
                return Err(Error::Dimension(format!(
                    "layer {k} expects {} inputs, previous layer emits {}",
                    layer.input_dim(),
                    layers[k - 1].output_dim()
                )));
            }
        }
        if layers.last().map(LinearLayer::output_dim) != Some(class_count) {
            return Err(Error::Dimension("final layer width must equal class count".into()));
        }
        let activation = if layers.len() == 1 {
            Activation::None
        } else {
            Activation::Relu
        };
        Ok(Self {
            layers,
            activation,
            class_count,
        })
    }

    /// Seeded initialisation, weights and biases uniform in ±1/√fan_in.
    /// `arch` lists layer widths from input to output, e.g. `[10, 2]`.
    pub fn init(arch: &[usize], seed: u64) -> Result<Self> {
        if arch.len() < 2 || arch.contains(&0) {
            return Err(Error::Dimension(format!("invalid architecture {arch:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = arch
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let weight =
                    Matrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-bound..bound));
                let bias = (0..fan_out).map(|_| rng.random_range(-bound..bound)).collect();
                LinearLayer { weight, bias }
            })
            .collect();
        Self::new(layers, arch[arch.len() - 1])
    }

    pub fn layers(&self) -> &[LinearLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LinearLayer] {
        &mut self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn is_mlp(&self) -> bool {
        self.layers.len() > 1
    }

    /// Widths from input to output.
    pub fn arch(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(LinearLayer::output_dim))
            .collect()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "input of length {} for a head expecting {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn activate(&self, z: &mut [f64]) {
        if self.activation == Activation::Relu {
            z.iter_mut().for_each(|v| *v = v.max(0.0));
        }
    }

    /// Output of layer `k` given its input, including the rectifier for
    /// every layer except the last.
    pub fn layer_output(&self, k: usize, input: &[f64]) -> Vec<f64> {
        let mut z = self.layers[k].forward(input);
        if k + 1 < self.layers.len() {
            self.activate(&mut z);
        }
        z
    }

    /// Inputs to every linear layer; entry 0 is `x` itself.
    pub fn layer_inputs(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_input(x)?;
        let mut out = Vec::with_capacity(self.layers.len());
        out.push(x.to_vec());
        for k in 0..self.layers.len() - 1 {
            let next = self.layer_output(k, &out[k]);
            out.push(next);
        }
        Ok(out)
    }

    /// Like [`Self::layer_inputs`] but only defined for MLP heads.
    pub fn hidden_activations(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        if !self.is_mlp() {
            return Err(Error::Unsupported(
                "hidden activations of a single-layer head".into(),
            ));
        }
        self.layer_inputs(x)
    }

    /// Runs layers `start..` on `input` (the input to layer `start`).
    pub fn forward_from(&self, start: usize, input: &[f64]) -> Vec<f64> {
        let mut a = input.to_vec();
        for k in start..self.layers.len() {
            a = self.layer_output(k, &a);
        }
        a
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.forward_from(0, x))
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(x)?))
    }

    /// Layer inputs for every row, one matrix per layer.
    pub fn layer_inputs_batch(&self, x: &Matrix) -> Result<Vec<Matrix>> {
        if x.cols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "{} feature columns for a head expecting {}",
                x.cols(),
                self.input_dim()
            )));
        }
        let mut out = vec![x.clone()];
        for k in 0..self.layers.len() - 1 {
            let mut z = self.layers[k].forward_batch(&out[k]);
            if self.activation == Activation::Relu {
                for r in 0..z.rows() {
                    z.row_mut(r).iter_mut().for_each(|v| *v = v.max(0.0));
                }
            }
            out.push(z);
        }
        Ok(out)
    }

    /// Probabilities for every row of `x`.
    pub fn predict_proba_batch(&self, x: &Matrix) -> Result<Vec<Vec<f64>>> {
        let inputs = self.layer_inputs_batch(x)?;
        let last = self.layers.last().expect("non-empty");
        Ok(inputs
            .last()
            .expect("non-empty")
            .row_iter()
            .map(|r| softmax(&last.forward(r)))
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: ClassifierHead =
            serde_json::from_str(text).map_err(|e| Error::Serde(e.to_string()))?;
        Self::new(raw.layers, raw.class_count)
    }
}

/// Numerically stable softmax (max-logit subtraction).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest probability, lowest index on ties.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 100,
            batch_size: 64,
            l2: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::Config("l2 must be non-negative".into()));
        }
        Ok(())
    }
}

/// Per-layer parameter gradients, same shapes as the head.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

/// Mean cross-entropy over the rows plus `l2 / 2 · Σ‖W‖²` (weights only).
pub fn loss(head: &ClassifierHead, x: &Matrix, y: &[usize], l2: f64) -> Result<f64> {
    let probs = head.predict_proba_batch(x)?;
    let ce: f64 = probs
        .iter()
        .zip(y)
        .map(|(p, &c)| neg_log(p[c]))
        .sum::<f64>()
        / y.len().max(1) as f64;
    Ok(ce + l2_penalty(head, l2))
}

// NaN must survive so that divergence is detected.
fn neg_log(p: f64) -> f64 {
    if p.is_nan() {
        p
    } else {
        -p.max(f64::MIN_POSITIVE).ln()
    }
}

fn l2_penalty(head: &ClassifierHead, l2: f64) -> f64 {
    if l2 == 0.0 {
        return 0.0;
    }
    let sq: f64 = head
        .layers
        .iter()
        .map(|l| l.weight.data().iter().map(|w| w * w).sum::<f64>())
        .sum();
    0.5 * l2 * sq
}

/// Backpropagated gradient of [`loss`] with respect to every parameter.
pub fn loss_gradient(
    head: &ClassifierHead,
    x: &Matrix,
    y: &[usize],
    l2: f64,
) -> Result<(f64, Gradients)> {
    if x.rows() != y.len() {
        return Err(Error::Dimension(format!(
            "{} rows vs {} labels",
            x.rows(),
            y.len()
        )));
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= head.class_count) {
        return Err(Error::Dimension(format!("label {bad} out of range")));
    }
    let n = y.len().max(1) as f64;
    let inputs = head.layer_inputs_batch(x)?;
    let depth = head.layers.len();
    let mut weights: Vec<Matrix> = head
        .layers
        .iter()
        .map(|l| Matrix::zeros(l.output_dim(), l.input_dim()))
        .collect();
    let mut biases: Vec<Vec<f64>> = head.layers.iter().map(|l| vec![0.0; l.output_dim()]).collect();
    let mut total = 0.0;

    for (r, &label) in y.iter().enumerate() {
        let last_in = inputs[depth - 1].row(r);
        let p = softmax(&head.layers[depth - 1].forward(last_in));
        total += neg_log(p[label]);
        // dL/dz at the output layer.
        let mut delta: Vec<f64> = p;
        delta[label] -= 1.0;
        for k in (0..depth).rev() {
            let a = inputs[k].row(r);
            let gw = &mut weights[k];
            for (o, d) in delta.iter().enumerate() {
                biases[k][o] += d;
                if *d == 0.0 {
                    continue;
                }
                for (g, av) in gw.row_mut(o).iter_mut().zip(a) {
                    *g += d * av;
                }
            }
            if k == 0 {
                break;
            }
            // Back through W_k and the rectifier of layer k-1's output.
            let w = &head.layers[k].weight;
            let mut prev = vec![0.0; w.cols()];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                for (pv, wv) in prev.iter_mut().zip(w.row(o)) {
                    *pv += d * wv;
                }
            }
            for (pv, av) in prev.iter_mut().zip(a) {
                if *av <= 0.0 {
                    *pv = 0.0;
                }
            }
            delta = prev;
        }
    }

    for (k, layer) in head.layers.iter().enumerate() {
        let gw = &mut weights[k];
        for i in 0..gw.rows() {
            for j in 0..gw.cols() {
                let v = gw.get(i, j) / n + l2 * layer.weight.get(i, j);
                gw.set(i, j, v);
            }
        }
        biases[k].iter_mut().for_each(|b| *b /= n);
    }
    Ok((total / n + l2_penalty(head, l2), Gradients { weights, biases }))
}

/// Result of training: the head plus the full-data objective after each epoch.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub head: ClassifierHead,
    pub epoch_losses: Vec<f64>,
}

pub fn train_head(
    data: &LabeledEmbeddings,
    arch: &[usize],
    cfg: &TrainConfig,
) -> Result<ClassifierHead> {
    train_head_with_history(data, arch, cfg).map(|o| o.head)
}

pub fn train_head_with_history(
    data: &LabeledEmbeddings,
    arch: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if arch.first() != Some(&data.dim()) {
        return Err(Error::Dimension(format!(
            "architecture {arch:?} does not start with feature dim {}",
            data.dim()
        )));
    }
    if arch.last() != Some(&data.class_count()) {
        return Err(Error::Dimension(format!(
            "architecture {arch:?} does not end with class count {}",
            data.class_count()
        )));
    }
    let mut head = ClassifierHead::init(arch, cfg.seed)?;
    fit(&mut head, data.features(), data.labels(), cfg)
        .map(|epoch_losses| TrainOutcome { head, epoch_losses })
}

/// Gradient descent on an existing head. Returns per-epoch full-data losses.
pub fn fit(head: &mut ClassifierHead, x: &Matrix, y: &[usize], cfg: &TrainConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    // Shuffling draws from a stream distinct from the initialiser's.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let n = y.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        if cfg.batch_size < n {
            order.shuffle(&mut rng);
        }
        for batch in order.chunks(cfg.batch_size) {
            let bx = x.select_rows(batch);
            let by: Vec<usize> = batch.iter().map(|&i| y[i]).collect();
            let (_, grad) = loss_gradient(head, &bx, &by, cfg.l2)?;
            apply_step(head, &grad, cfg.learning_rate);
        }
        let l = loss_unchecked(head, x, y, cfg.l2);
        if !l.is_finite() {
            return Err(Error::Divergence { epoch, loss: l });
        }
        losses.push(l);
    }
    Ok(losses)
}

// Parameters may have gone non-finite mid-training; this path must not reject
// them before the divergence check sees the loss.
fn loss_unchecked(head: &ClassifierHead, x: &Matrix, y: &[usize], l2: f64) -> f64 {
    loss(head, x, y, l2).unwrap_or(f64::NAN)
}

fn apply_step(head: &mut ClassifierHead, grad: &Gradients, lr: f64) {
    for (k, layer) in head.layers.iter_mut().enumerate() {
        let gw = &grad.weights[k];
        for i in 0..gw.rows() {
            for j in 0..gw.cols() {
                let v = layer.weight.get(i, j) - lr * gw.get(i, j);
                layer.weight.set(i, j, v);
            }
        }
        for (b, g) in layer.bias.iter_mut().zip(&grad.biases[k]) {
            *b -= lr * g;
        }
    }
}

/// Largest relative discrepancy between the analytic gradient and central
/// finite differences (step `1e-5`), over every parameter.
pub fn gradient_check(head: &ClassifierHead, x: &Matrix, y: &[usize], l2: f64) -> Result<f64> {
    const STEP: f64 = 1e-5;
    // Floor keeps near-zero gradients from being judged on rounding noise.
    const FLOOR: f64 = 1e-4;
    let (_, grad) = loss_gradient(head, x, y, l2)?;
    let mut probe = head.clone();
    let mut worst = 0.0_f64;
    let mut compare = |analytic: f64, numeric: f64| {
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR);
        worst = worst.max(rel);
    };
    for k in 0..head.layers.len() {
        let (rows, cols) = (head.layers[k].weight.rows(), head.layers[k].weight.cols());
        for i in 0..rows {
            for j in 0..cols {
                let orig = head.layers[k].weight.get(i, j);
                probe.layers[k].weight.set(i, j, orig + STEP);
                let plus = loss(&probe, x, y, l2)?;
                probe.layers[k].weight.set(i, j, orig - STEP);
                let minus = loss(&probe, x, y, l2)?;
                probe.layers[k].weight.set(i, j, orig);
                compare(grad.weights[k].get(i, j), (plus - minus) / (2.0 * STEP));
            }
        }
        for i in 0..rows {
            let orig = head.layers[k].bias[i];
            probe.layers[k].bias[i] = orig + STEP;
            let plus = loss(&probe, x, y, l2)?;
            probe.layers[k].bias[i] = orig - STEP;
            let minus = loss(&probe, x, y, l2)?;
            probe.layers[k].bias[i] = orig;
            compare(grad.biases[k][i], (plus - minus) / (2.0 * STEP));
        }
    }
    Ok(worst)
}

/// Fraction of rows whose argmax prediction equals the label.
pub fn accuracy(head: &ClassifierHead, x: &Matrix, y: &[usize]) -> Result<f64> {
    let probs = head.predict_proba_batch(x)?;
    let hits = probs.iter().zip(y).filter(|(p, &c)| argmax(p) == c).count();
    Ok(hits as f64 / y.len().max(1) as f64)
}
