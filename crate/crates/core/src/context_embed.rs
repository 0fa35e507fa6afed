//! Contextual word vectors from a small bidirectional LSTM language model,
//! combined across layers by a learned softmax mixer.
//!
//! The language model has two layers: the token embedding layer and one
//! bidirectional LSTM layer. Per position it produces
//!
//! ```text
//! layer 0: [e_t, e_t]           (embedding duplicated when D = H, zero-padded when D < H·2)
//! layer 1: [→h_t, ←h_t]         (forward and backward hidden states)
//! ```
//!
//! and is trained by the sum of forward next-token and backward
//! previous-token cross-entropy with a projection shared by both directions.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::corpus::{Document, Vocabulary, PAD};
use crate::error::{Error, Result};
use crate::math::{self, matvec_acc, matvec_t_acc, outer_acc, sigmoid, EmbeddedSequence, Mat};
use crate::optim::{Optimizer, OptimizerState};
use crate::params::{join, Gradients, ParamGroups};
use crate::rng;

const LSTM_GATES: [&str; 4] = ["i", "f", "o", "g"];
const GATE_I: usize = 0;
const GATE_F: usize = 1;
const GATE_O: usize = 2;
const GATE_G: usize = 3;

/// Input, forget and output gates plus the candidate update `g`, each with an
/// input matrix `W` (H×D_in), a recurrent matrix `U` (H×H) and a bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCellParams {
    pub input_dim: usize,
    pub hidden: usize,
    pub w: [Vec<f64>; 4],
    pub u: [Vec<f64>; 4],
    pub b: [Vec<f64>; 4],
}

impl LstmCellParams {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        let w = || vec![0.0; hidden * input_dim];
        let u = || vec![0.0; hidden * hidden];
        let b = || vec![0.0; hidden];
        LstmCellParams {
            input_dim,
            hidden,
            w: [w(), w(), w(), w()],
            u: [u(), u(), u(), u()],
            b: [b(), b(), b(), b()],
        }
    }

    /// Weights uniform in `±1/√H`, biases zero.
    pub fn init(input_dim: usize, hidden: usize, rng: &mut rng::ChaCha8Rng) -> Self {
        let mut cell = Self::zeros(input_dim, hidden);
        let scale = 1.0 / math::sqrt(hidden as f64);
        for k in 0..4 {
            cell.w[k] = rng::uniform_vec(rng, hidden * input_dim, scale);
            cell.u[k] = rng::uniform_vec(rng, hidden * hidden, scale);
        }
        cell
    }
}

impl ParamGroups for LstmCellParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (k, gate) in LSTM_GATES.iter().enumerate() {
            f(&join(prefix, &alloc::format!("w_{gate}")), &[self.hidden, self.input_dim], &self.w[k]);
            f(&join(prefix, &alloc::format!("u_{gate}")), &[self.hidden, self.hidden], &self.u[k]);
            f(&join(prefix, &alloc::format!("b_{gate}")), &[self.hidden], &self.b[k]);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        let (h, d) = (self.hidden, self.input_dim);
        for (k, gate) in LSTM_GATES.iter().enumerate() {
            f(&join(prefix, &alloc::format!("w_{gate}")), &[h, d], &mut self.w[k]);
            f(&join(prefix, &alloc::format!("u_{gate}")), &[h, h], &mut self.u[k]);
            f(&join(prefix, &alloc::format!("b_{gate}")), &[h], &mut self.b[k]);
        }
    }
}

/// Everything one LSTM step needs for its backward pass.
#[derive(Debug, Clone)]
pub struct LstmStep {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Activated gate values i, f, o, g.
    gates: [Vec<f64>; 4],
    tanh_c: Vec<f64>,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
}

fn lstm_forward(cell: &LstmCellParams, x: &[f64], h: &[f64], c: &[f64]) -> LstmStep {
    let hd = cell.hidden;
    let gates: [Vec<f64>; 4] = core::array::from_fn(|k| {
        let mut a = cell.b[k].clone();
        matvec_acc(&cell.w[k], x, &mut a);
        matvec_acc(&cell.u[k], h, &mut a);
        if k == GATE_G {
            a.iter_mut().for_each(|v| *v = math::tanh(*v));
        } else {
            a.iter_mut().for_each(|v| *v = sigmoid(*v));
        }
        a
    });
    let mut c_new = vec![0.0; hd];
    for j in 0..hd {
        c_new[j] = gates[GATE_F][j] * c[j] + gates[GATE_I][j] * gates[GATE_G][j];
    }
    let tanh_c: Vec<f64> = c_new.iter().map(|&v| math::tanh(v)).collect();
    let h_new = tanh_c.iter().zip(&gates[GATE_O]).map(|(t, o)| o * t).collect();
    LstmStep {
        x: x.to_vec(),
        h_prev: h.to_vec(),
        c_prev: c.to_vec(),
        gates,
        tanh_c,
        c: c_new,
        h: h_new,
    }
}

/// One LSTM step; returns `(h', c')`.
pub fn lstm_step(cell: &LstmCellParams, x: &[f64], h: &[f64], c: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.len() != cell.input_dim {
        return Err(Error::shape("lstm input", cell.input_dim, x.len()));
    }
    if h.len() != cell.hidden || c.len() != cell.hidden {
        return Err(Error::shape("lstm state", cell.hidden, h.len().max(c.len())));
    }
    let step = lstm_forward(cell, x, h, c);
    Ok((step.h, step.c))
}

/// Backpropagates `dh`/`dc` (gradients on `h'`/`c'`) through one step,
/// accumulating parameter gradients into `grad` and input gradients into `dx`.
/// Returns gradients on the previous `(h, c)`.
pub fn lstm_step_backward(
    cell: &LstmCellParams,
    step: &LstmStep,
    dh: &[f64],
    dc_next: &[f64],
    grad: &mut LstmCellParams,
    dx: &mut [f64],
) -> (Vec<f64>, Vec<f64>) {
    let hd = cell.hidden;
    let [i, f, o, g] = &step.gates;
    let mut da: [Vec<f64>; 4] = core::array::from_fn(|_| vec![0.0; hd]);
    let mut dc_prev = vec![0.0; hd];
    for j in 0..hd {
        let dc = dc_next[j] + dh[j] * o[j] * (1.0 - step.tanh_c[j] * step.tanh_c[j]);
        da[GATE_O][j] = dh[j] * step.tanh_c[j] * o[j] * (1.0 - o[j]);
        da[GATE_I][j] = dc * g[j] * i[j] * (1.0 - i[j]);
        da[GATE_F][j] = dc * step.c_prev[j] * f[j] * (1.0 - f[j]);
        da[GATE_G][j] = dc * i[j] * (1.0 - g[j] * g[j]);
        dc_prev[j] = dc * f[j];
    }
    let mut dh_prev = vec![0.0; hd];
    for k in 0..4 {
        outer_acc(&mut grad.w[k], &da[k], &step.x);
        outer_acc(&mut grad.u[k], &da[k], &step.h_prev);
        math::add_acc(&mut grad.b[k], &da[k]);
        matvec_t_acc(&cell.w[k], &da[k], dx);
        matvec_t_acc(&cell.u[k], &da[k], &mut dh_prev);
    }
    (dh_prev, dc_prev)
}

/// `L × T × D_ctx` per-layer token vectors. Rows at or beyond
/// `valid_length` are zero in every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextualLayers {
    layers: Vec<Mat>,
    valid_length: usize,
}

impl ContextualLayers {
    pub fn new(layers: Vec<Mat>, valid_length: usize) -> Result<Self> {
        let first = layers.first().ok_or(Error::Empty("contextual layers"))?;
        let (t, d) = (first.rows(), first.cols());
        for l in &layers {
            if l.rows() != t {
                return Err(Error::shape("contextual layer length", t, l.rows()));
            }
            if l.cols() != d {
                return Err(Error::shape("contextual layer width", d, l.cols()));
            }
        }
        if valid_length > t {
            return Err(Error::shape("contextual valid length", t, valid_length));
        }
        let mut out = ContextualLayers { layers, valid_length };
        out.zero_padding();
        Ok(out)
    }

    pub fn zeros(num_layers: usize, len: usize, dim: usize) -> Self {
        ContextualLayers {
            layers: (0..num_layers).map(|_| Mat::zeros(len, dim)).collect(),
            valid_length: 0,
        }
    }

    fn zero_padding(&mut self) {
        for l in &mut self.layers {
            for t in self.valid_length..l.rows() {
                l.row_mut(t).fill(0.0);
            }
        }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn len(&self) -> usize {
        self.layers[0].rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.layers[0].cols()
    }

    pub fn valid_length(&self) -> usize {
        self.valid_length
    }

    pub fn layer(&self, l: usize) -> &Mat {
        &self.layers[l]
    }

    pub fn layers(&self) -> &[Mat] {
        &self.layers
    }

    /// Truncates or zero-pads every layer to `len` positions.
    pub fn fit_to(&self, len: usize) -> Self {
        ContextualLayers {
            layers: self.layers.iter().map(|l| l.resized_rows(len)).collect(),
            valid_length: self.valid_length.min(len),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiLmParams {
    pub embedding: Mat,
    pub forward: LstmCellParams,
    pub backward: LstmCellParams,
    /// Output projection `V × H`, shared by both directions.
    pub projection: Mat,
    pub projection_bias: Vec<f64>,
}

impl BiLmParams {
    pub fn zeros(vocab_size: usize, dim: usize, hidden: usize) -> Self {
        BiLmParams {
            embedding: Mat::zeros(vocab_size, dim),
            forward: LstmCellParams::zeros(dim, hidden),
            backward: LstmCellParams::zeros(dim, hidden),
            projection: Mat::zeros(vocab_size, hidden),
            projection_bias: vec![0.0; vocab_size],
        }
    }

    pub fn init(vocab_size: usize, dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        if dim == 0 || hidden == 0 || vocab_size < 2 {
            return Err(Error::InvalidConfig("bi-LM needs dim, hidden ≥ 1 and a vocabulary".to_string()));
        }
        if dim > 2 * hidden {
            return Err(Error::InvalidConfig(alloc::format!(
                "bi-LM embedding dim {dim} exceeds the contextual width 2·{hidden}"
            )));
        }
        let mut r = rng::seeded(seed);
        let mut embedding = Mat::from_vec(vocab_size, dim, rng::uniform_vec(&mut r, vocab_size * dim, 0.5)).unwrap();
        embedding.row_mut(PAD).fill(0.0);
        let forward = LstmCellParams::init(dim, hidden, &mut r);
        let backward = LstmCellParams::init(dim, hidden, &mut r);
        let scale = 1.0 / math::sqrt(hidden as f64);
        let projection = Mat::from_vec(vocab_size, hidden, rng::uniform_vec(&mut r, vocab_size * hidden, scale)).unwrap();
        Ok(BiLmParams {
            embedding,
            forward,
            backward,
            projection,
            projection_bias: vec![0.0; vocab_size],
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.rows()
    }

    pub fn dim(&self) -> usize {
        self.embedding.cols()
    }

    pub fn hidden(&self) -> usize {
        self.forward.hidden
    }

    /// Width of every contextual layer (`2H`).
    pub fn context_dim(&self) -> usize {
        2 * self.hidden()
    }

    pub fn num_layers(&self) -> usize {
        2
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.vocab_size(), self.dim(), self.hidden())
    }
}

impl ParamGroups for BiLmParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f(&join(prefix, "embedding"), &[self.vocab_size(), self.dim()], self.embedding.as_slice());
        self.forward.visit(&join(prefix, "fwd"), f);
        self.backward.visit(&join(prefix, "bwd"), f);
        f(&join(prefix, "projection"), &[self.vocab_size(), self.hidden()], self.projection.as_slice());
        f(&join(prefix, "projection_bias"), &[self.vocab_size()], &self.projection_bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        let (v, d, h) = (self.vocab_size(), self.dim(), self.hidden());
        f(&join(prefix, "embedding"), &[v, d], self.embedding.as_mut_slice());
        self.forward.visit_mut(&join(prefix, "fwd"), f);
        self.backward.visit_mut(&join(prefix, "bwd"), f);
        f(&join(prefix, "projection"), &[v, h], self.projection.as_mut_slice());
        f(&join(prefix, "projection_bias"), &[v], &mut self.projection_bias);
    }
}

/// Forward pass record for [`bilm_backward`].
#[derive(Debug, Clone)]
pub struct BiLmCache {
    ids: Vec<usize>,
    len: usize,
    forward: Vec<LstmStep>,
    /// Indexed by position, not by processing order.
    backward: Vec<LstmStep>,
}

impl BiLmCache {
    pub fn forward_hidden(&self, t: usize) -> &[f64] {
        &self.forward[t].h
    }

    pub fn backward_hidden(&self, t: usize) -> &[f64] {
        &self.backward[t].h
    }
}

pub fn run_bilm_cached(params: &BiLmParams, ids: &[usize], valid_length: usize) -> Result<(ContextualLayers, BiLmCache)> {
    let v = params.vocab_size();
    if let Some(&id) = ids.iter().find(|&&id| id >= v) {
        return Err(Error::IdOutOfRange { id, vocab_size: v });
    }
    if valid_length > ids.len() {
        return Err(Error::shape("bi-LM valid length", ids.len(), valid_length));
    }
    let (d, h) = (params.dim(), params.hidden());
    let t_len = ids.len();
    let valid = &ids[..valid_length];

    let mut forward = Vec::with_capacity(valid_length);
    let (mut hs, mut cs) = (vec![0.0; h], vec![0.0; h]);
    for &id in valid {
        let step = lstm_forward(&params.forward, params.embedding.row(id), &hs, &cs);
        hs.clone_from(&step.h);
        cs.clone_from(&step.c);
        forward.push(step);
    }
    let mut backward = Vec::with_capacity(valid_length);
    let (mut hs, mut cs) = (vec![0.0; h], vec![0.0; h]);
    for &id in valid.iter().rev() {
        let step = lstm_forward(&params.backward, params.embedding.row(id), &hs, &cs);
        hs.clone_from(&step.h);
        cs.clone_from(&step.c);
        backward.push(step);
    }
    backward.reverse();

    let mut layer0 = Mat::zeros(t_len, 2 * h);
    let mut layer1 = Mat::zeros(t_len, 2 * h);
    for (t, &id) in valid.iter().enumerate() {
        let e = params.embedding.row(id);
        let row0 = layer0.row_mut(t);
        row0[..d].copy_from_slice(e);
        if d == h {
            row0[h..].copy_from_slice(e);
        }
        let row1 = layer1.row_mut(t);
        row1[..h].copy_from_slice(&forward[t].h);
        row1[h..].copy_from_slice(&backward[t].h);
    }
    let layers = ContextualLayers {
        layers: vec![layer0, layer1],
        valid_length,
    };
    let cache = BiLmCache {
        ids: valid.to_vec(),
        len: t_len,
        forward,
        backward,
    };
    Ok((layers, cache))
}

/// Per-layer, per-token vectors of a sequence (see the module docs).
pub fn run_bilm(params: &BiLmParams, ids: &[usize], valid_length: usize) -> Result<ContextualLayers> {
    run_bilm_cached(params, ids, valid_length).map(|(l, _)| l)
}

/// Backpropagates gradients on both output layers (`d_layers[l]` is `T × 2H`)
/// into `grad`.
pub fn bilm_backward(params: &BiLmParams, cache: &BiLmCache, d_layers: &[Mat], grad: &mut BiLmParams) {
    let (d, h) = (params.dim(), params.hidden());
    let v = cache.ids.len();
    debug_assert_eq!(d_layers.len(), 2);
    debug_assert_eq!(d_layers[0].rows(), cache.len);

    for (t, &id) in cache.ids.iter().enumerate() {
        let g0 = d_layers[0].row(t);
        let de = grad.embedding.row_mut(id);
        math::add_acc(de, &g0[..d]);
        if d == h {
            math::add_acc(de, &g0[h..]);
        }
    }

    let mut dx = vec![0.0; d];
    let (mut dh_next, mut dc_next) = (vec![0.0; h], vec![0.0; h]);
    for t in (0..v).rev() {
        let mut dh = d_layers[1].row(t)[..h].to_vec();
        math::add_acc(&mut dh, &dh_next);
        dx.fill(0.0);
        let (dh_prev, dc_prev) = lstm_step_backward(&params.forward, &cache.forward[t], &dh, &dc_next, &mut grad.forward, &mut dx);
        math::add_acc(grad.embedding.row_mut(cache.ids[t]), &dx);
        dh_next = dh_prev;
        dc_next = dc_prev;
    }

    let (mut dh_next, mut dc_next) = (vec![0.0; h], vec![0.0; h]);
    for t in 0..v {
        let mut dh = d_layers[1].row(t)[h..].to_vec();
        math::add_acc(&mut dh, &dh_next);
        dx.fill(0.0);
        let (dh_prev, dc_prev) = lstm_step_backward(&params.backward, &cache.backward[t], &dh, &dc_next, &mut grad.backward, &mut dx);
        math::add_acc(grad.embedding.row_mut(cache.ids[t]), &dx);
        dh_next = dh_prev;
        dc_next = dc_prev;
    }
}

fn lm_predictions(doc: &[usize]) -> usize {
    2 * doc.len().saturating_sub(1)
}

fn cross_entropy_step(params: &BiLmParams, hidden: &[f64], target: usize, scale: f64, grad: Option<(&mut BiLmParams, &mut [f64])>) -> f64 {
    let mut logits = params.projection_bias.clone();
    matvec_acc(params.projection.as_slice(), hidden, &mut logits);
    let p = math::softmax(&logits);
    let loss = -math::ln(p[target]);
    if let Some((grad, dh)) = grad {
        let mut dlogits = p;
        dlogits[target] -= 1.0;
        dlogits.iter_mut().for_each(|g| *g *= scale);
        outer_acc(grad.projection.as_mut_slice(), &dlogits, hidden);
        math::add_acc(&mut grad.projection_bias, &dlogits);
        matvec_t_acc(params.projection.as_slice(), &dlogits, dh);
    }
    loss
}

/// Summed forward + backward cross-entropy (nats) and the number of predictions.
pub fn lm_loss(params: &BiLmParams, docs: &[Vec<usize>]) -> Result<(f64, usize)> {
    let mut total = 0.0;
    let mut count = 0;
    for doc in docs {
        let (_, cache) = run_bilm_cached(params, doc, doc.len())?;
        for t in 0..doc.len().saturating_sub(1) {
            total += cross_entropy_step(params, cache.forward_hidden(t), doc[t + 1], 1.0, None);
            total += cross_entropy_step(params, cache.backward_hidden(t + 1), doc[t], 1.0, None);
        }
        count += lm_predictions(doc);
    }
    Ok((total, count))
}

/// Mean cross-entropy over all predictions in `batch` and its gradient.
pub fn lm_loss_and_grad(params: &BiLmParams, batch: &[Vec<usize>]) -> Result<(f64, BiLmParams)> {
    let count: usize = batch.iter().map(|d| lm_predictions(d)).sum();
    if count == 0 {
        return Err(Error::Empty("language-model predictions (documents need ≥ 2 tokens)"));
    }
    let scale = 1.0 / count as f64;
    let h = params.hidden();
    let mut grad = params.zeros_like();
    let mut total = 0.0;
    for doc in batch {
        let (_, cache) = run_bilm_cached(params, doc, doc.len())?;
        let mut d1 = Mat::zeros(doc.len(), 2 * h);
        for t in 0..doc.len().saturating_sub(1) {
            let (fwd, _) = d1.row_mut(t).split_at_mut(h);
            total += cross_entropy_step(params, cache.forward_hidden(t), doc[t + 1], scale, Some((&mut grad, fwd)));
            let (_, bwd) = d1.row_mut(t + 1).split_at_mut(h);
            total += cross_entropy_step(params, cache.backward_hidden(t + 1), doc[t], scale, Some((&mut grad, bwd)));
        }
        let d0 = Mat::zeros(doc.len(), 2 * h);
        bilm_backward(params, &cache, &[d0, d1], &mut grad);
    }
    Ok((total * scale, grad))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BiLmConfig {
    pub dim: usize,
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for BiLmConfig {
    fn default() -> Self {
        BiLmConfig {
            dim: 16,
            hidden: 16,
            learning_rate: 0.01,
            epochs: 20,
            batch_size: 16,
            optimizer: Optimizer::adam(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiLmReport {
    /// Mean per-prediction cross-entropy before training and after each epoch.
    pub losses: Vec<f64>,
}

impl BiLmReport {
    pub fn initial_perplexity(&self) -> f64 {
        math::exp(self.losses[0])
    }

    pub fn final_perplexity(&self) -> f64 {
        math::exp(*self.losses.last().unwrap())
    }
}

/// Trains on id sequences by seeded mini-batch descent on the coupled
/// forward/backward language-model loss.
pub fn train_bilm_ids(docs: &[Vec<usize>], vocab_size: usize, config: &BiLmConfig) -> Result<(BiLmParams, BiLmReport)> {
    if docs.is_empty() {
        return Err(Error::Empty("bi-LM corpus"));
    }
    if config.batch_size == 0 || !(config.learning_rate > 0.0) {
        return Err(Error::InvalidConfig("bi-LM batch_size and learning_rate must be positive".to_string()));
    }
    let usable: Vec<Vec<usize>> = docs.iter().filter(|d| d.len() >= 2).cloned().collect();
    if usable.is_empty() {
        return Err(Error::Empty("language-model predictions (documents need ≥ 2 tokens)"));
    }
    let mut params = BiLmParams::init(vocab_size, config.dim, config.hidden, config.seed)?;
    let mean_loss = |p: &BiLmParams| -> Result<f64> {
        let (total, n) = lm_loss(p, &usable)?;
        Ok(total / n as f64)
    };
    let mut losses = vec![mean_loss(&params)?];
    let mut state = OptimizerState::new(config.optimizer);
    let mut order: Vec<usize> = (0..usable.len()).collect();
    let mut shuffle_rng = rng::seeded(rng::derive_seed(config.seed, b"bilm-shuffle"));
    for epoch in 0..config.epochs {
        rng::shuffle(&mut shuffle_rng, &mut order);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Vec<usize>> = chunk.iter().map(|&i| usable[i].clone()).collect();
            let (loss, grad) = lm_loss_and_grad(&params, &batch)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            let grads = Gradients::collect(&grad, "", &|_| true);
            state.step(&mut params, &grads, config.learning_rate);
        }
        let loss = mean_loss(&params)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        losses.push(loss);
    }
    Ok((params, BiLmReport { losses }))
}

pub fn train_bilm(docs: &[Document], vocab: &Vocabulary, config: &BiLmConfig) -> Result<(BiLmParams, BiLmReport)> {
    let ids: Vec<Vec<usize>> = docs
        .iter()
        .map(|d| d.tokens.iter().map(|t| vocab.id(t)).collect())
        .collect();
    train_bilm_ids(&ids, vocab.len(), config)
}

/// Raw per-layer scalars (softmax-normalized when mixing) and a global scale.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerMixWeights {
    pub s_raw: Vec<f64>,
    pub gamma: f64,
}

impl LayerMixWeights {
    /// Equal weights, unit scale.
    pub fn uniform(num_layers: usize) -> Self {
        LayerMixWeights {
            s_raw: vec![0.0; num_layers],
            gamma: 1.0,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.s_raw.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        math::softmax(&self.s_raw)
    }
}

impl ParamGroups for LayerMixWeights {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f(&join(prefix, "s_raw"), &[self.s_raw.len()], &self.s_raw);
        f(&join(prefix, "gamma"), &[1], core::slice::from_ref(&self.gamma));
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        let n = [self.s_raw.len()];
        f(&join(prefix, "s_raw"), &n, &mut self.s_raw);
        f(&join(prefix, "gamma"), &[1], core::slice::from_mut(&mut self.gamma));
    }
}

/// `out_t = γ · Σ_l softmax(s)_l · layers[l][t]`
pub fn mix_layers(layers: &ContextualLayers, weights: &LayerMixWeights) -> Result<EmbeddedSequence> {
    if weights.num_layers() != layers.num_layers() {
        return Err(Error::shape("layer mix weights", layers.num_layers(), weights.num_layers()));
    }
    let w = weights.weights();
    let mut out = Mat::zeros(layers.len(), layers.dim());
    for t in 0..layers.valid_length() {
        let row = out.row_mut(t);
        for (l, &wl) in w.iter().enumerate() {
            for (o, &x) in row.iter_mut().zip(layers.layer(l).row(t)) {
                *o += wl * x;
            }
        }
        row.iter_mut().for_each(|o| *o *= weights.gamma);
    }
    EmbeddedSequence::new(out, layers.valid_length())
}

/// Gradients of [`mix_layers`]: accumulates into `grad` and returns the
/// gradient on each input layer.
pub fn mix_layers_backward(layers: &ContextualLayers, weights: &LayerMixWeights, d_out: &Mat, grad: &mut LayerMixWeights) -> Vec<Mat> {
    let w = weights.weights();
    let mut dw = vec![0.0; w.len()];
    let mut d_layers: Vec<Mat> = (0..layers.num_layers()).map(|_| Mat::zeros(layers.len(), layers.dim())).collect();
    for t in 0..layers.valid_length() {
        let g = d_out.row(t);
        for (l, &wl) in w.iter().enumerate() {
            let x = layers.layer(l).row(t);
            let gx = math::dot(g, x);
            dw[l] += weights.gamma * gx;
            grad.gamma += wl * gx;
            for (dl, &gv) in d_layers[l].row_mut(t).iter_mut().zip(g) {
                *dl += weights.gamma * wl * gv;
            }
        }
    }
    math::add_acc(&mut grad.s_raw, &math::softmax_backward(&w, &dw));
    d_layers
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;
    use proptest::prelude::*;

    fn const_cell(d: usize, h: usize, biases: [f64; 4]) -> LstmCellParams {
        let mut c = LstmCellParams::zeros(d, h);
        for k in 0..4 {
            c.b[k] = vec![biases[k]; h];
        }
        c
    }

    #[test]
    fn lstm_zero_weights() {
        let cell = LstmCellParams::zeros(3, 2);
        let (h, c) = lstm_step(&cell, &[1.0, -2.0, 0.5], &[0.0; 2], &[0.0; 2]).unwrap();
        assert_eq!(h, vec![0.0; 2]);
        assert_eq!(c, vec![0.0; 2]);
        assert!(lstm_step(&cell, &[1.0], &[0.0; 2], &[0.0; 2]).is_err());
    }

    #[test]
    fn lstm_saturated_gates() {
        // gates open, candidate 0, c = 1 → c' ≈ 1, h' ≈ tanh(1)
        let cell = const_cell(1, 1, [40.0, 40.0, 40.0, 0.0]);
        let (h, c) = lstm_step(&cell, &[0.3], &[0.0], &[1.0]).unwrap();
        assert!((c[0] - 1.0).abs() < 1e-12);
        assert!((h[0] - 0.761_594_155_955_764_9).abs() < 1e-12);

        // forget and input closed → c' ≈ 0
        let cell = const_cell(1, 1, [-40.0, -40.0, 0.0, 0.0]);
        let (_, c) = lstm_step(&cell, &[0.3], &[0.0], &[5.0]).unwrap();
        assert!(c[0].abs() < 1e-12);
    }

    fn random_bilm(v: usize, d: usize, h: usize, seed: u64) -> BiLmParams {
        let mut p = BiLmParams::init(v, d, h, seed).unwrap();
        // non-zero biases so the check exercises every term
        let mut r = rng::seeded(seed + 1);
        p.visit_mut("", &mut |n, _, x| {
            if n.contains(".b_") || n.contains("bias") {
                x.copy_from_slice(&rng::uniform_vec(&mut r, x.len(), 0.5));
            }
        });
        p
    }

    #[test]
    fn run_bilm_degenerate_cases() {
        let p = random_bilm(5, 2, 2, 3);
        let layers = run_bilm(&p, &[2, 3, 0], 0).unwrap();
        assert!(layers.layers().iter().all(|l| l.as_slice().iter().all(|&v| v == 0.0)));

        let mut z = BiLmParams::zeros(5, 2, 2);
        z.embedding.row_mut(3).copy_from_slice(&[0.5, -1.0]);
        let layers = run_bilm(&z, &[3], 1).unwrap();
        assert_eq!(layers.layer(0).row(0), &[0.5, -1.0, 0.5, -1.0]);
        assert_eq!(layers.layer(1).row(0), &[0.0; 4]);

        assert!(run_bilm(&p, &[7], 1).is_err());
    }

    #[test]
    fn run_bilm_matches_hand_trace() {
        // H = D = 1; forward and backward cells hand-set differently.
        let mut p = BiLmParams::zeros(5, 1, 1);
        for (id, e) in [(2, 0.5), (3, -1.0), (4, 2.0)] {
            p.embedding.set(id, 0, e);
        }
        p.forward.w = [vec![1.0], vec![0.5], vec![-1.0], vec![2.0]];
        p.forward.u = [vec![0.3], vec![-0.2], vec![0.1], vec![0.7]];
        p.forward.b = [vec![0.1], vec![0.2], vec![0.0], vec![-0.1]];
        p.backward.w = [vec![-0.5], vec![1.0], vec![0.5], vec![1.5]];
        p.backward.u = [vec![0.2], vec![0.4], vec![-0.3], vec![-0.6]];
        p.backward.b = [vec![0.0], vec![-0.1], vec![0.3], vec![0.2]];

        let ids = [2, 3, 4];
        // independent scalar trace of the LSTM equations
        let trace = |w: [f64; 4], u: [f64; 4], b: [f64; 4], xs: &[f64]| {
            let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
            let (mut h, mut c) = (0.0f64, 0.0f64);
            let mut out = Vec::new();
            for &x in xs {
                let i = sig(w[0] * x + u[0] * h + b[0]);
                let f = sig(w[1] * x + u[1] * h + b[1]);
                let o = sig(w[2] * x + u[2] * h + b[2]);
                let g = (w[3] * x + u[3] * h + b[3]).tanh();
                c = f * c + i * g;
                h = o * c.tanh();
                out.push(h);
            }
            out
        };
        let xs = [0.5, -1.0, 2.0];
        let fwd = trace([1.0, 0.5, -1.0, 2.0], [0.3, -0.2, 0.1, 0.7], [0.1, 0.2, 0.0, -0.1], &xs);
        let rev: Vec<f64> = xs.iter().rev().copied().collect();
        let mut bwd = trace([-0.5, 1.0, 0.5, 1.5], [0.2, 0.4, -0.3, -0.6], [0.0, -0.1, 0.3, 0.2], &rev);
        bwd.reverse();

        let layers = run_bilm(&p, &ids, 3).unwrap();
        for t in 0..3 {
            assert!((layers.layer(1).get(t, 0) - fwd[t]).abs() < 1e-14);
            assert!((layers.layer(1).get(t, 1) - bwd[t]).abs() < 1e-14);
            assert_eq!(layers.layer(0).row(t), &[xs[t], xs[t]]);
        }
    }

    #[test]
    fn appended_padding_leaves_valid_positions_unchanged() {
        let p = random_bilm(6, 3, 3, 9);
        let a = run_bilm(&p, &[2, 5, 4], 3).unwrap();
        let b = run_bilm(&p, &[2, 5, 4, 0, 0], 3).unwrap();
        for l in 0..2 {
            assert_eq!(a.layer(l).as_slice(), &b.layer(l).as_slice()[..18]);
            assert!(b.layer(l).as_slice()[18..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn reversal_swaps_directions_when_cells_match() {
        let mut p = random_bilm(7, 2, 3, 4);
        p.backward = p.forward.clone();
        let ids = [2, 6, 3, 5];
        let rev = [5, 3, 6, 2];
        let a = run_bilm(&p, &ids, 4).unwrap();
        let b = run_bilm(&p, &rev, 4).unwrap();
        for t in 0..4 {
            let m = 3 - t;
            assert_eq!(&a.layer(1).row(t)[..3], &b.layer(1).row(m)[3..]);
            assert_eq!(&a.layer(1).row(t)[3..], &b.layer(1).row(m)[..3]);
        }
    }

    #[test]
    fn lstm_step_gradients() {
        let mut r = rng::seeded(5);
        let cell = LstmCellParams {
            b: core::array::from_fn(|_| rng::uniform_vec(&mut r, 3, 0.5)),
            ..LstmCellParams::init(2, 3, &mut r)
        };
        let x = [0.4, -0.7];
        let h0 = [0.1, -0.2, 0.3];
        let c0 = [0.5, 0.0, -0.4];
        // scalar objective: weighted sum of h' and c'
        let (wh, wc) = ([0.3, -1.0, 0.7], [0.5, 0.2, -0.6]);
        let objective = |cell: &LstmCellParams| {
            let (h, c) = lstm_step(cell, &x, &h0, &c0).unwrap();
            math::dot(&h, &wh) + math::dot(&c, &wc)
        };
        let step = lstm_forward(&cell, &x, &h0, &c0);
        let mut grad = crate::params::zeros_like(&cell);
        let mut dx = vec![0.0; 2];
        lstm_step_backward(&cell, &step, &wh, &wc, &mut grad, &mut dx);
        let grads = Gradients::collect(&grad, "", &|_| true);
        let report = gradcheck::check(&cell, &grads, 1e-5, objective);
        assert!(report.passes(1e-4), "{report:?}");
    }

    #[test]
    fn lm_gradients_match_finite_differences() {
        let p = random_bilm(6, 3, 3, 21);
        let batch = vec![vec![2, 3, 4, 5], vec![5, 1, 2], vec![3, 3]];
        let (_, grad) = lm_loss_and_grad(&p, &batch).unwrap();
        let grads = Gradients::collect(&grad, "", &|_| true);
        let report = gradcheck::check(&p, &grads, 1e-5, |q| {
            let (total, n) = lm_loss(q, &batch).unwrap();
            total / n as f64
        });
        assert!(report.passes(1e-4), "{report:?}");
        // D < H exercises the zero-padded layer 0
        let p = random_bilm(5, 2, 4, 22);
        let batch = vec![vec![2, 3, 4]];
        let (_, grad) = lm_loss_and_grad(&p, &batch).unwrap();
        let grads = Gradients::collect(&grad, "", &|_| true);
        let report = gradcheck::check(&p, &grads, 1e-5, |q| {
            let (total, n) = lm_loss(q, &batch).unwrap();
            total / n as f64
        });
        assert!(report.passes(1e-4), "{report:?}");
    }

    #[test]
    fn layer_backward_matches_finite_differences() {
        // scalar objective over both layers exercises the layer-0 path too
        let p = random_bilm(6, 2, 2, 8);
        let ids = [2, 4, 5, 0];
        let mut r = rng::seeded(77);
        let probe: Vec<Mat> = (0..2)
            .map(|_| Mat::from_vec(4, 4, rng::uniform_vec(&mut r, 16, 1.0)).unwrap())
            .collect();
        let objective = |q: &BiLmParams| {
            let layers = run_bilm(q, &ids, 3).unwrap();
            (0..2).map(|l| math::dot(layers.layer(l).as_slice(), probe[l].as_slice())).sum::<f64>()
        };
        let (_, cache) = run_bilm_cached(&p, &ids, 3).unwrap();
        let mut grad = p.zeros_like();
        bilm_backward(&p, &cache, &probe, &mut grad);
        let grads = Gradients::collect(&grad, "", &|_| true);
        let report = gradcheck::check(&p, &grads, 1e-5, objective);
        assert!(report.passes(1e-4), "{report:?}");
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let config = BiLmConfig { dim: 4, hidden: 4, epochs: 0, seed: 3, ..Default::default() };
        let (p, report) = train_bilm_ids(&[vec![2, 3, 2, 3]], 4, &config).unwrap();
        assert_eq!(p, BiLmParams::init(4, 4, 4, 3).unwrap());
        assert_eq!(report.losses.len(), 1);
    }

    #[test]
    fn learns_deterministic_alternation() {
        let doc: Vec<usize> = (0..40).map(|i| 2 + i % 2).collect();
        let docs = vec![doc; 4];
        let config = BiLmConfig {
            dim: 8,
            hidden: 8,
            learning_rate: 0.05,
            epochs: 60,
            batch_size: 2,
            seed: 1,
            ..Default::default()
        };
        let (p, report) = train_bilm_ids(&docs, 4, &config).unwrap();
        assert!(report.final_perplexity() < report.initial_perplexity());
        // forward cross-entropy of "b" right after "a"
        let (_, cache) = run_bilm_cached(&p, &docs[0], 40).unwrap();
        let mut worst: f64 = 0.0;
        for t in (0..39).filter(|t| docs[0][*t] == 2) {
            let ce = cross_entropy_step(&p, cache.forward_hidden(t), 3, 1.0, None);
            worst = worst.max(ce);
        }
        assert!(worst < 0.1, "cross-entropy {worst}");
    }

    #[test]
    fn perplexity_drops_on_small_corpus() {
        use rand::Rng;
        let mut r = rng::seeded(12);
        // 25 documents of 20 tokens from a bigram-ish source: 500 tokens
        let docs: Vec<Vec<usize>> = (0..25)
            .map(|_| {
                let mut id = r.gen_range(2..8);
                (0..20)
                    .map(|_| {
                        id = if r.gen_bool(0.8) { 2 + (id - 2 + 1) % 6 } else { r.gen_range(2..8) };
                        id
                    })
                    .collect()
            })
            .collect();
        let config = BiLmConfig { dim: 8, hidden: 8, epochs: 5, seed: 2, ..Default::default() };
        let (_, report) = train_bilm_ids(&docs, 8, &config).unwrap();
        assert!(report.final_perplexity() < report.initial_perplexity(), "{report:?}");
    }

    #[test]
    fn mixer_examples() {
        let l0 = Mat::from_rows(&[[1.0, 2.0], [0.0, 0.0]]).unwrap();
        let l1 = Mat::from_rows(&[[3.0, -1.0], [0.0, 0.0]]).unwrap();
        let single = ContextualLayers::new(vec![l0.clone()], 1).unwrap();
        let out = mix_layers(&single, &LayerMixWeights::uniform(1)).unwrap();
        assert_eq!(out.values, l0);

        let both = ContextualLayers::new(vec![l0.clone(), l1.clone()], 1).unwrap();
        let w = LayerMixWeights { s_raw: vec![0.3, 0.3], gamma: 2.0 };
        let out = mix_layers(&both, &w).unwrap();
        assert_eq!(out.values.row(0), &[4.0, 1.0]);
        assert_eq!(out.values.row(1), &[0.0, 0.0]);

        let layers = ContextualLayers::new(
            vec![Mat::from_rows(&[[4.0]]).unwrap(), Mat::from_rows(&[[0.0]]).unwrap()],
            1,
        )
        .unwrap();
        let w = LayerMixWeights { s_raw: vec![math::ln(3.0), 0.0], gamma: 1.0 };
        let out = mix_layers(&layers, &w).unwrap();
        assert!((out.values.get(0, 0) - 3.0).abs() < 1e-12);

        assert!(mix_layers(&both, &LayerMixWeights::uniform(3)).is_err());
    }

    #[test]
    fn mixer_gradients() {
        let mut r = rng::seeded(2);
        let layers = ContextualLayers::new(
            (0..3).map(|_| Mat::from_vec(4, 2, rng::uniform_vec(&mut r, 8, 1.0)).unwrap()).collect(),
            3,
        )
        .unwrap();
        let w = LayerMixWeights { s_raw: vec![0.2, -0.5, 0.9], gamma: 1.3 };
        let probe = Mat::from_vec(4, 2, rng::uniform_vec(&mut r, 8, 1.0)).unwrap();
        let mut grad = LayerMixWeights { s_raw: vec![0.0; 3], gamma: 0.0 };
        mix_layers_backward(&layers, &w, &probe, &mut grad);
        let grads = Gradients::collect(&grad, "", &|_| true);
        let report = gradcheck::check(&w, &grads, 1e-5, |q| {
            math::dot(mix_layers(&layers, q).unwrap().values.as_slice(), probe.as_slice())
        });
        assert!(report.passes(1e-4), "{report:?}");
    }

    proptest! {
        #[test]
        fn mixer_shift_invariance(
            s in proptest::collection::vec(-3.0f64..3.0, 3),
            shift in -50.0f64..50.0,
            vals in proptest::collection::vec(-2.0f64..2.0, 12),
        ) {
            let layers = ContextualLayers::new(
                vals.chunks(4).map(|c| Mat::from_vec(2, 2, c.to_vec()).unwrap()).collect(),
                2,
            ).unwrap();
            let w = LayerMixWeights { s_raw: s.clone(), gamma: 1.0 };
            prop_assert!((w.weights().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let shifted = LayerMixWeights { s_raw: s.iter().map(|x| x + shift).collect(), gamma: 1.0 };
            let a = mix_layers(&layers, &w).unwrap();
            let b = mix_layers(&layers, &shifted).unwrap();
            for (x, y) in a.values.as_slice().iter().zip(b.values.as_slice()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
