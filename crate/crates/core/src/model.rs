//! Multi-label classifier head over per-layer encoder embeddings.
//!
//! A [`LayerStack`] holds one time-pooled embedding per encoder layer. The
//! head mixes layers with softmax weights, then applies
//! `W2 · relu(W1 · x + b1) + b2` to produce one logit per instrument class.
//! Training minimizes sigmoid binary cross-entropy averaged over classes and
//! samples, with AdamW.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::synth::seeded_rng;

const LSTK_MAGIC: &[u8; 4] = b"LSTK";
const CKPT_MAGIC: &[u8; 4] = b"HDCK";
const FORMAT_VERSION: u32 = 1;

/// `[L x D]` matrix of per-layer embeddings for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    pub layers: Array2<f64>,
}

impl LayerStack {
    pub fn new(layers: Array2<f64>) -> Result<Self> {
        if layers.nrows() == 0 || layers.ncols() == 0 {
            return Err(Error::ShapeMismatch("layer stack needs L >= 1 and D >= 1".into()));
        }
        if layers.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("layer stack"));
        }
        Ok(Self { layers })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.nrows()
    }

    pub fn dim(&self) -> usize {
        self.layers.ncols()
    }
}

/// Head parameters. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadModel {
    pub layer_logits: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl HeadModel {
    pub fn zeros(layers: usize, dim: usize, hidden: usize, classes: usize) -> Self {
        Self {
            layer_logits: Array1::zeros(layers),
            w1: Array2::zeros((hidden, dim)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((classes, hidden)),
            b2: Array1::zeros(classes),
        }
    }

    /// Zero layer logits; weights and biases uniform in `±1/sqrt(fan_in)`.
    pub fn init(layers: usize, dim: usize, hidden: usize, classes: usize, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let mut m = Self::zeros(layers, dim, hidden, classes);
        let b1 = 1.0 / (dim as f64).sqrt();
        let b2 = 1.0 / (hidden as f64).sqrt();
        m.w1.mapv_inplace(|_| rng.gen_range(-b1..b1));
        m.b1.mapv_inplace(|_| rng.gen_range(-b1..b1));
        m.w2.mapv_inplace(|_| rng.gen_range(-b2..b2));
        m.b2.mapv_inplace(|_| rng.gen_range(-b2..b2));
        m
    }

    pub fn num_layers(&self) -> usize {
        self.layer_logits.len()
    }

    pub fn dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.w1.nrows()
    }

    pub fn classes(&self) -> usize {
        self.b2.len()
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.num_layers(), self.dim(), self.hidden(), self.classes())
    }

    /// Parameter blocks in declared order: layer logits, W1, b1, W2, b2.
    pub fn blocks(&self) -> [&[f64]; 5] {
        [
            self.layer_logits.as_slice().expect("contiguous"),
            self.w1.as_slice().expect("contiguous"),
            self.b1.as_slice().expect("contiguous"),
            self.w2.as_slice().expect("contiguous"),
            self.b2.as_slice().expect("contiguous"),
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 5] {
        [
            self.layer_logits.as_slice_mut().expect("contiguous"),
            self.w1.as_slice_mut().expect("contiguous"),
            self.b1.as_slice_mut().expect("contiguous"),
            self.w2.as_slice_mut().expect("contiguous"),
            self.b2.as_slice_mut().expect("contiguous"),
        ]
    }

    fn check_shapes(&self) -> Result<()> {
        let (h, d) = self.w1.dim();
        let (c, h2) = self.w2.dim();
        if self.layer_logits.is_empty() || self.b1.len() != h || h2 != h || self.b2.len() != c {
            return Err(Error::ShapeMismatch("inconsistent head parameter shapes".into()));
        }
        if d == 0 || h == 0 || c == 0 {
            return Err(Error::ShapeMismatch("zero-sized head".into()));
        }
        Ok(())
    }

    fn check_input(&self, stack: &LayerStack) -> Result<()> {
        self.check_shapes()?;
        if stack.num_layers() != self.num_layers() || stack.dim() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "stack is {}x{}, head expects {}x{}",
                stack.num_layers(),
                stack.dim(),
                self.num_layers(),
                self.dim()
            )));
        }
        Ok(())
    }
}

pub fn softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exp = logits.mapv(|v| (v - max).exp());
    let total = exp.sum();
    exp / total
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax-weighted sum of the layers.
pub fn aggregate_layers(stack: &LayerStack, model: &HeadModel) -> Result<Array1<f64>> {
    model.check_input(stack)?;
    let weights = softmax(model.layer_logits.view());
    Ok(weights.dot(&stack.layers))
}

struct Activations {
    weights: Array1<f64>,
    aggregate: Array1<f64>,
    pre_hidden: Array1<f64>,
    hidden: Array1<f64>,
    logits: Array1<f64>,
}

fn forward_full(model: &HeadModel, stack: &LayerStack) -> Result<Activations> {
    model.check_input(stack)?;
    let weights = softmax(model.layer_logits.view());
    let aggregate = weights.dot(&stack.layers);
    let pre_hidden = model.w1.dot(&aggregate) + &model.b1;
    let hidden = pre_hidden.mapv(|v| v.max(0.0));
    let logits = model.w2.dot(&hidden) + &model.b2;
    if logits.iter().any(|v| !v.is_finite()) || hidden.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("forward pass"));
    }
    Ok(Activations {
        weights,
        aggregate,
        pre_hidden,
        hidden,
        logits,
    })
}

/// Class logits for one stack.
pub fn forward(model: &HeadModel, stack: &LayerStack) -> Result<Array1<f64>> {
    Ok(forward_full(model, stack)?.logits)
}

/// Elementwise sigmoid of [`forward`].
pub fn predict_proba(model: &HeadModel, stack: &LayerStack) -> Result<Array1<f64>> {
    Ok(forward(model, stack)?.mapv(sigmoid))
}

/// Mean over classes of `max(z, 0) - z·y + ln(1 + exp(-|z|))`, the
/// overflow-free form of sigmoid binary cross-entropy. Targets may be soft
/// (in `[0, 1]`).
pub fn bce_loss(logits: &[f64], labels: &[f64]) -> f64 {
    assert_eq!(logits.len(), labels.len(), "logits/labels length mismatch");
    assert!(!logits.is_empty(), "empty logits");
    let total: f64 = logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
        .sum();
    total / logits.len() as f64
}

fn check_labels(labels: &[f64], classes: usize) -> Result<()> {
    if labels.len() != classes {
        return Err(Error::ShapeMismatch(format!("{} labels for {classes} classes", labels.len())));
    }
    if labels.iter().any(|y| !(0.0..=1.0).contains(y)) {
        return Err(Error::invalid("labels must lie in [0, 1]"));
    }
    Ok(())
}

/// Loss and its gradient with respect to every head parameter.
pub fn loss_and_gradients(model: &HeadModel, stack: &LayerStack, labels: &[f64]) -> Result<(f64, HeadModel)> {
    check_labels(labels, model.classes())?;
    let act = forward_full(model, stack)?;
    let c = model.classes() as f64;
    let loss = bce_loss(act.logits.as_slice().expect("contiguous"), labels);

    let mut grad = model.zeros_like();
    let d_logits = Array1::from_iter(act.logits.iter().zip(labels).map(|(&z, &y)| (sigmoid(z) - y) / c));
    grad.b2.assign(&d_logits);
    grad.w2 = outer(&d_logits, &act.hidden);
    let d_hidden = model.w2.t().dot(&d_logits);
    let d_pre = Array1::from_iter(
        d_hidden
            .iter()
            .zip(&act.pre_hidden)
            .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 }),
    );
    grad.b1.assign(&d_pre);
    grad.w1 = outer(&d_pre, &act.aggregate);
    let d_agg = model.w1.t().dot(&d_pre);
    let d_weights = stack.layers.dot(&d_agg);
    let mean = act.weights.dot(&d_weights);
    grad.layer_logits = &act.weights * &(d_weights - mean);
    Ok((loss, grad))
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            epochs: 10,
            learning_rate: 1e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            hidden: 256,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.hidden == 0 {
            return Err(Error::invalid("batch_size, epochs and hidden must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.weight_decay >= 0.0 && self.eps > 0.0) {
            return Err(Error::invalid("learning_rate, weight_decay must be >= 0 and eps > 0"));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::invalid("betas must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// AdamW with decoupled weight decay, applied to every parameter block.
#[derive(Debug, Clone)]
pub struct AdamW {
    first: HeadModel,
    second: HeadModel,
    step: i32,
}

impl AdamW {
    pub fn new(model: &HeadModel) -> Self {
        Self {
            first: model.zeros_like(),
            second: model.zeros_like(),
            step: 0,
        }
    }

    pub fn update(&mut self, model: &mut HeadModel, grad: &HeadModel, cfg: &TrainConfig) {
        self.step += 1;
        let bias1 = 1.0 - cfg.beta1.powi(self.step);
        let bias2 = 1.0 - cfg.beta2.powi(self.step);
        let lr = cfg.learning_rate;
        let params = model.blocks_mut();
        let grads = grad.blocks();
        let firsts = self.first.blocks_mut();
        let seconds = self.second.blocks_mut();
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(firsts).zip(seconds) {
            for i in 0..p.len() {
                p[i] -= lr * cfg.weight_decay * p[i];
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: HeadModel,
    /// Sample-weighted mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// One labeled training example.
pub type Example = (LayerStack, Vec<f64>);

/// Shuffled minibatch AdamW training. Batch gradients are sample means;
/// the order of batches depends only on `cfg.seed`.
pub fn train(model: &HeadModel, dataset: &[Example], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let mut model = model.clone();
    let mut opt = AdamW::new(&model);
    let mut rng = seeded_rng(cfg.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_total = 0.0;
        for (batch_no, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grad = model.zeros_like();
            let mut batch_total = 0.0;
            for &i in batch {
                let (stack, labels) = &dataset[i];
                let (loss, g) = loss_and_gradients(&model, stack, labels)?;
                batch_total += loss;
                for (acc, gb) in grad.blocks_mut().into_iter().zip(g.blocks()) {
                    acc.iter_mut().zip(gb).for_each(|(a, b)| *a += b);
                }
            }
            if !batch_total.is_finite() {
                return Err(Error::NanLoss { epoch, batch: batch_no });
            }
            let scale = 1.0 / batch.len() as f64;
            for block in grad.blocks_mut() {
                block.iter_mut().for_each(|v| *v *= scale);
            }
            opt.update(&mut model, &grad, cfg);
            epoch_total += batch_total;
        }
        let mean = epoch_total / dataset.len() as f64;
        log::debug!("epoch {epoch}: mean loss {mean:.6}");
        epoch_losses.push(mean);
    }
    Ok(TrainOutcome { model, epoch_losses })
}

/// Largest relative discrepancy between analytic gradients and central
/// finite differences over every parameter. Relative error is
/// `|a - n| / max(|a| + |n|, 1e-6)`; the floor keeps parameters with
/// vanishing gradients from reporting rounding noise as error.
pub fn grad_check(model: &HeadModel, stack: &LayerStack, labels: &[f64], epsilon: f64) -> Result<f64> {
    if !(1e-6..=1e-3).contains(&epsilon) {
        return Err(Error::invalid("epsilon must lie in [1e-6, 1e-3]"));
    }
    let (_, analytic) = loss_and_gradients(model, stack, labels)?;
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for block in 0..5 {
        let n = probe.blocks()[block].len();
        for i in 0..n {
            let original = probe.blocks()[block][i];
            probe.blocks_mut()[block][i] = original + epsilon;
            let plus = loss_of(&probe, stack, labels)?;
            probe.blocks_mut()[block][i] = original - epsilon;
            let minus = loss_of(&probe, stack, labels)?;
            probe.blocks_mut()[block][i] = original;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic.blocks()[block][i];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

fn loss_of(model: &HeadModel, stack: &LayerStack, labels: &[f64]) -> Result<f64> {
    Ok(bce_loss(forward(model, stack)?.as_slice().expect("contiguous"), labels))
}

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format(self.path, "truncated file"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(Error::format(self.path, "bad magic"));
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::format(self.path, format!("unsupported version {version}")));
        }
        Ok(())
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::format(self.path, "size overflow"))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::format(self.path, "size overflow"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

/// `"LSTK"`, u32 version, u32 L, u32 D, then `L*D` little-endian f32
/// values, row-major.
pub fn encode_lstk(stack: &LayerStack) -> Vec<u8> {
    let (l, d) = stack.layers.dim();
    let mut buf = Vec::with_capacity(16 + 4 * l * d);
    buf.extend_from_slice(LSTK_MAGIC);
    push_u32(&mut buf, FORMAT_VERSION);
    push_u32(&mut buf, l as u32);
    push_u32(&mut buf, d as u32);
    for &v in stack.layers.iter() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    buf
}

pub fn decode_lstk(bytes: &[u8], path: &Path) -> Result<LayerStack> {
    let mut cur = Cursor { bytes, pos: 0, path };
    cur.header(LSTK_MAGIC)?;
    let l = cur.u32()? as usize;
    let d = cur.u32()? as usize;
    if l == 0 || d == 0 {
        return Err(Error::format(path, "L and D must be positive"));
    }
    let values = cur.f32s(l * d)?;
    if cur.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after layer data"));
    }
    let layers = Array2::from_shape_vec((l, d), values.into_iter().map(f64::from).collect())
        .map_err(|e| Error::format(path, e.to_string()))?;
    LayerStack::new(layers)
}

pub fn write_lstk(path: &Path, stack: &LayerStack) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, encode_lstk(stack)).map_err(|e| Error::io(path, e))
}

pub fn read_lstk(path: &Path) -> Result<LayerStack> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_lstk(&bytes, path)
}

/// `"HDCK"`, u32 version, u32 L, D, H, C, the parameter blocks as
/// little-endian f64 in declared order (layer logits, W1, b1, W2, b2), then
/// the training config as UTF-8 JSON to end of file.
pub fn encode_checkpoint(model: &HeadModel, cfg: &TrainConfig) -> Result<Vec<u8>> {
    model.check_shapes()?;
    let mut buf = Vec::new();
    buf.extend_from_slice(CKPT_MAGIC);
    push_u32(&mut buf, FORMAT_VERSION);
    for n in [model.num_layers(), model.dim(), model.hidden(), model.classes()] {
        push_u32(&mut buf, n as u32);
    }
    for block in model.blocks() {
        for v in block {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf.extend_from_slice(serde_json::to_string(cfg)?.as_bytes());
    Ok(buf)
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<(HeadModel, TrainConfig)> {
    let mut cur = Cursor { bytes, pos: 0, path };
    cur.header(CKPT_MAGIC)?;
    let (l, d, h, c) = (cur.u32()? as usize, cur.u32()? as usize, cur.u32()? as usize, cur.u32()? as usize);
    if l == 0 || d == 0 || h == 0 || c == 0 {
        return Err(Error::format(path, "zero dimension in checkpoint"));
    }
    let mut model = HeadModel::zeros(l, d, h, c);
    for block in model.blocks_mut() {
        let values = cur.f64s(block.len())?;
        block.copy_from_slice(&values);
    }
    let trailer = std::str::from_utf8(&bytes[cur.pos..]).map_err(|e| Error::format(path, e.to_string()))?;
    let cfg: TrainConfig = serde_json::from_str(trailer)?;
    Ok((model, cfg))
}

pub fn save_checkpoint(path: &Path, model: &HeadModel, cfg: &TrainConfig) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, encode_checkpoint(model, cfg)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(HeadModel, TrainConfig)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

/// Default class count of the head.
pub const CLASSES: usize = NUM_CLASSES;

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn random_stack(l: usize, d: usize, seed: u64) -> LayerStack {
        let mut rng = seeded_rng(seed);
        LayerStack::new(Array2::from_shape_fn((l, d), |_| rng.gen_range(-1.0..1.0))).unwrap()
    }

    #[test]
    fn aggregation_cases() {
        let single = LayerStack::new(array![[1.0, -2.0, 3.0]]).unwrap();
        let mut m = HeadModel::zeros(1, 3, 2, 10);
        m.layer_logits[0] = 7.5;
        assert_eq!(aggregate_layers(&single, &m).unwrap(), array![1.0, -2.0, 3.0]);

        let stack = LayerStack::new(array![[1.0, 2.0], [3.0, 4.0], [5.0, 9.0]]).unwrap();
        let uniform = HeadModel::zeros(3, 2, 2, 10);
        let mean = aggregate_layers(&stack, &uniform).unwrap();
        assert!((mean[0] - 3.0).abs() < 1e-12 && (mean[1] - 5.0).abs() < 1e-12);

        let mut peaked = uniform.clone();
        peaked.layer_logits = array![10.0, 0.0, 0.0];
        let out = aggregate_layers(&stack, &peaked).unwrap();
        for (o, e) in out.iter().zip([1.0, 2.0]) {
            assert!(((o - e) / e).abs() < 1e-3);
        }

        let wrong = HeadModel::zeros(2, 2, 2, 10);
        assert!(matches!(aggregate_layers(&stack, &wrong), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn zero_model_outputs_half() {
        let m = HeadModel::zeros(3, 4, 5, 10);
        let p = predict_proba(&m, &random_stack(3, 4, 1)).unwrap();
        assert!(p.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn identity_hidden_layer_exposes_relu() {
        let d = 4;
        let mut m = HeadModel::zeros(1, d, d, 10);
        m.w1 = Array2::eye(d);
        m.w2[[3, 2]] = 1.0;
        for x in [-1.5, 0.0, 2.25] {
            let stack = LayerStack::new(array![[0.3, -0.7, x, 1.0]]).unwrap();
            let logits = forward(&m, &stack).unwrap();
            assert_eq!(logits[3], x.max(0.0));
        }
    }

    #[test]
    fn bce_known_values() {
        assert!((bce_loss(&[0.0], &[1.0]) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((bce_loss(&[2.0, -2.0], &[1.0, 0.0]) - 0.126_928_011_042_973).abs() < 1e-9);
        let mut prev = f64::INFINITY;
        for z in [0.0, 1.0, 5.0, 20.0, 100.0, 800.0] {
            let l = bce_loss(&[z], &[1.0]);
            assert!(l < prev && l >= 0.0);
            prev = l;
        }
        assert!(bce_loss(&[800.0], &[1.0]) < 1e-300);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let m = HeadModel::init(3, 8, 4, 10, 11);
        let stack = random_stack(3, 8, 12);
        let labels: Vec<f64> = (0..10).map(|i| (i % 3 == 0) as u8 as f64).collect();
        let err = grad_check(&m, &stack, &labels, 1e-5).unwrap();
        assert!(err < 1e-4, "{err}");
        assert!(grad_check(&m, &stack, &labels, 1e-2).is_err());
    }

    #[test]
    fn output_bias_gradient_vanishes_at_soft_targets() {
        let m = HeadModel::init(2, 5, 3, 10, 4);
        let stack = random_stack(2, 5, 9);
        let logits = forward(&m, &stack).unwrap();
        let targets: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
        let (_, g) = loss_and_gradients(&m, &stack, &targets).unwrap();
        assert!(g.b2.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let m = HeadModel::init(2, 4, 6, 10, 1);
        let data: Vec<Example> = (0..7)
            .map(|i| (random_stack(2, 4, i), (0..10).map(|c| ((c + i as usize) % 2) as f64).collect()))
            .collect();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            batch_size: 3,
            epochs: 4,
            ..Default::default()
        };
        let out = train(&m, &data, &cfg).unwrap();
        assert_eq!(out.model, m);
        for l in &out.epoch_losses {
            assert!((l - out.epoch_losses[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn lstk_round_trip_and_errors() {
        let stack = LayerStack::new(array![[1.0, 0.5], [-0.25, 2.0], [0.0, 3.5]]).unwrap();
        let bytes = encode_lstk(&stack);
        assert_eq!(&bytes[..4], b"LSTK");
        assert_eq!(bytes.len(), 16 + 6 * 4);
        let p = Path::new("x.lstk");
        assert_eq!(decode_lstk(&bytes, p).unwrap(), stack);
        assert!(decode_lstk(&bytes[..bytes.len() - 1], p).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_lstk(&bad, p).is_err());
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(decode_lstk(&v2, p).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = HeadModel::init(4, 6, 5, 10, 3);
        let cfg = TrainConfig {
            seed: 42,
            ..Default::default()
        };
        let bytes = encode_checkpoint(&m, &cfg).unwrap();
        let (m2, cfg2) = decode_checkpoint(&bytes, Path::new("m.ckpt")).unwrap();
        assert_eq!(m, m2);
        assert_eq!(cfg, cfg2);
    }
}
