//! Static word vectors: lookup tables, distance-weighted co-occurrence
//! counting, and a small GloVe-style factorizer.
//!
//! The factorizer minimizes
//!
//! ```text
//! J = Σ_{(w,c)} f(N(w,c)) · (u_w·v_c + b_w + b̃_c − ln N(w,c))²
//! f(x) = min(1, (x / x_max)^alpha)
//! ```
//!
//! with full-batch gradient descent, and publishes `u + v` as the vector for
//! each word.

use alloc::collections::BTreeMap;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::corpus::{Document, Vocabulary, PAD, UNK};
use crate::error::{Error, Result};
use crate::math::{self, EmbeddedSequence, Mat};
use crate::params::{join, ParamGroups};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Provenance {
    Loaded,
    Trained,
}

/// `V × D` vectors aligned to a vocabulary. Row 0 (`<pad>`) is always zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    matrix: Mat,
    pub provenance: Provenance,
}

impl EmbeddingTable {
    pub fn zeros(vocab_size: usize, dim: usize, provenance: Provenance) -> Self {
        EmbeddingTable {
            matrix: Mat::zeros(vocab_size, dim),
            provenance,
        }
    }

    pub fn from_matrix(mut matrix: Mat, provenance: Provenance) -> Result<Self> {
        if !matrix.is_finite() {
            return Err(Error::NonFinite("embedding table".to_string()));
        }
        if matrix.rows() > PAD {
            matrix.row_mut(PAD).fill(0.0);
        }
        Ok(EmbeddingTable { matrix, provenance })
    }

    pub fn vocab_size(&self) -> usize {
        self.matrix.rows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn matrix(&self) -> &Mat {
        &self.matrix
    }

    pub fn row(&self, id: usize) -> Result<&[f64]> {
        if id >= self.vocab_size() {
            return Err(Error::IdOutOfRange {
                id,
                vocab_size: self.vocab_size(),
            });
        }
        Ok(self.matrix.row(id))
    }

    /// Overwrites one row; writes to the `<pad>` row are ignored.
    pub fn set_row(&mut self, id: usize, values: &[f64]) -> Result<()> {
        if id >= self.vocab_size() {
            return Err(Error::IdOutOfRange {
                id,
                vocab_size: self.vocab_size(),
            });
        }
        if values.len() != self.dim() {
            return Err(Error::shape("embedding row", self.dim(), values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding row".to_string()));
        }
        if id != PAD {
            self.matrix.row_mut(id).copy_from_slice(values);
        }
        Ok(())
    }

    pub(crate) fn matrix_mut(&mut self) -> &mut Mat {
        &mut self.matrix
    }
}

impl ParamGroups for EmbeddingTable {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f(&join(prefix, "table"), &[self.vocab_size(), self.dim()], self.matrix.as_slice());
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        let shape = [self.vocab_size(), self.dim()];
        f(&join(prefix, "table"), &shape, self.matrix.as_mut_slice());
    }
}

/// Looks up one row per id. Positions at or beyond `valid_length` are zero.
pub fn embed_sequence(table: &EmbeddingTable, ids: &[usize], valid_length: usize) -> Result<EmbeddedSequence> {
    let mut values = Mat::zeros(ids.len(), table.dim());
    for (t, &id) in ids.iter().enumerate() {
        let row = table.row(id)?;
        if t < valid_length {
            values.row_mut(t).copy_from_slice(row);
        }
    }
    EmbeddedSequence::new(values, valid_length)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Weighting {
    /// A context at distance `d` contributes `1/d`.
    InverseDistance,
    Uniform,
}

/// Sparse weighted co-occurrence counts `N(w, c) > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct CooccurrenceMatrix {
    counts: BTreeMap<(usize, usize), f64>,
    pub window: usize,
    pub weighting: Weighting,
    pub vocab_size: usize,
}

impl CooccurrenceMatrix {
    pub fn get(&self, word: usize, context: usize) -> f64 {
        self.counts.get(&(word, context)).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        self.counts.iter().map(|(&k, &v)| (k, v))
    }
}

/// Counts co-occurrences over id sequences. `<pad>` and `<unk>` positions are
/// skipped both as centers and as contexts.
pub fn build_cooccurrence_ids(
    docs: &[Vec<usize>],
    vocab_size: usize,
    window: usize,
    weighting: Weighting,
) -> Result<CooccurrenceMatrix> {
    if window == 0 {
        return Err(Error::InvalidConfig("co-occurrence window must be at least 1".to_string()));
    }
    let mut counts = BTreeMap::new();
    let skip = |id: usize| id == PAD || id == UNK;
    for doc in docs {
        for (i, &center) in doc.iter().enumerate() {
            if skip(center) {
                continue;
            }
            if center >= vocab_size {
                return Err(Error::IdOutOfRange { id: center, vocab_size });
            }
            let lo = i.saturating_sub(window);
            let hi = (i + window).min(doc.len() - 1);
            for (j, &context) in doc.iter().enumerate().take(hi + 1).skip(lo) {
                if j == i || skip(context) {
                    continue;
                }
                let d = i.abs_diff(j);
                let w = match weighting {
                    Weighting::InverseDistance => 1.0 / d as f64,
                    Weighting::Uniform => 1.0,
                };
                *counts.entry((center, context)).or_insert(0.0) += w;
            }
        }
    }
    Ok(CooccurrenceMatrix {
        counts,
        window,
        weighting,
        vocab_size,
    })
}

pub fn build_cooccurrence(
    docs: &[Document],
    vocab: &Vocabulary,
    window: usize,
    weighting: Weighting,
) -> Result<CooccurrenceMatrix> {
    let ids: Vec<Vec<usize>> = docs
        .iter()
        .map(|d| d.tokens.iter().map(|t| vocab.id(t)).collect())
        .collect();
    build_cooccurrence_ids(&ids, vocab.len(), window, weighting)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GloveTrainConfig {
    pub dim: usize,
    pub window: usize,
    pub x_max: f64,
    pub alpha: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for GloveTrainConfig {
    fn default() -> Self {
        GloveTrainConfig {
            dim: 16,
            window: 5,
            x_max: 100.0,
            alpha: 0.75,
            learning_rate: 0.05,
            epochs: 200,
            seed: 0,
        }
    }
}

impl GloveTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.dim == 0 || self.window == 0 || self.epochs == 0 {
            return bad("glove dim, window and epochs must be at least 1");
        }
        if !(self.x_max > 0.0) || !(self.learning_rate > 0.0) {
            return bad("glove x_max and learning_rate must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("glove alpha must lie in (0, 1]");
        }
        Ok(())
    }
}

/// The co-occurrence weighting `f(x) = min(1, (x/x_max)^alpha)`.
pub fn glove_weight(x: f64, x_max: f64, alpha: f64) -> f64 {
    if x >= x_max {
        1.0
    } else {
        math::powf(x / x_max, alpha)
    }
}

/// Word vectors, context vectors and both bias vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct GloveParams {
    pub word: Mat,
    pub context: Mat,
    pub word_bias: Vec<f64>,
    pub context_bias: Vec<f64>,
}

impl GloveParams {
    /// Vectors uniform in `[-0.5/D, 0.5/D]`, biases zero.
    pub fn init(vocab_size: usize, dim: usize, seed: u64) -> Self {
        let mut rng = rng::seeded(seed);
        let scale = 0.5 / dim as f64;
        GloveParams {
            word: Mat::from_vec(vocab_size, dim, rng::uniform_vec(&mut rng, vocab_size * dim, scale)).unwrap(),
            context: Mat::from_vec(vocab_size, dim, rng::uniform_vec(&mut rng, vocab_size * dim, scale)).unwrap(),
            word_bias: vec![0.0; vocab_size],
            context_bias: vec![0.0; vocab_size],
        }
    }

    fn zeros_like(&self) -> Self {
        GloveParams {
            word: Mat::zeros(self.word.rows(), self.word.cols()),
            context: Mat::zeros(self.context.rows(), self.context.cols()),
            word_bias: vec![0.0; self.word_bias.len()],
            context_bias: vec![0.0; self.context_bias.len()],
        }
    }

    fn residual(&self, w: usize, c: usize, count: f64) -> f64 {
        math::dot(self.word.row(w), self.context.row(c)) + self.word_bias[w] + self.context_bias[c] - math::ln(count)
    }

    /// `(1/|X|) Σ f(X_ij) (w_i·c_j + b_i + b̃_j − ln X_ij)²` over the non-zero entries.
    pub fn loss(&self, cooc: &CooccurrenceMatrix, config: &GloveTrainConfig) -> f64 {
        let sum: f64 = cooc
            .iter()
            .map(|((w, c), n)| {
                let r = self.residual(w, c, n);
                glove_weight(n, config.x_max, config.alpha) * r * r
            })
            .sum();
        sum / cooc.len().max(1) as f64
    }

    /// Loss and its exact gradient with respect to every parameter.
    pub fn loss_and_grad(&self, cooc: &CooccurrenceMatrix, config: &GloveTrainConfig) -> (f64, GloveParams) {
        let mut grad = self.zeros_like();
        let mut loss = 0.0;
        let scale = 1.0 / cooc.len().max(1) as f64;
        for ((w, c), n) in cooc.iter() {
            let weight = glove_weight(n, config.x_max, config.alpha) * scale;
            let r = self.residual(w, c, n);
            loss += weight * r * r;
            let g = 2.0 * weight * r;
            for (dw, &cv) in grad.word.row_mut(w).iter_mut().zip(self.context.row(c)) {
                *dw += g * cv;
            }
            for (dc, &wv) in grad.context.row_mut(c).iter_mut().zip(self.word.row(w)) {
                *dc += g * wv;
            }
            grad.word_bias[w] += g;
            grad.context_bias[c] += g;
        }
        (loss, grad)
    }

    /// `u + v` per word, with the `<pad>` row zeroed.
    pub fn to_table(&self) -> Result<EmbeddingTable> {
        let mut m = self.word.clone();
        m.add_assign(&self.context);
        EmbeddingTable::from_matrix(m, Provenance::Trained)
    }
}

impl ParamGroups for GloveParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        let shape = [self.word.rows(), self.word.cols()];
        f(&join(prefix, "word"), &shape, self.word.as_slice());
        f(&join(prefix, "context"), &shape, self.context.as_slice());
        f(&join(prefix, "word_bias"), &[self.word_bias.len()], &self.word_bias);
        f(&join(prefix, "context_bias"), &[self.context_bias.len()], &self.context_bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        let shape = [self.word.rows(), self.word.cols()];
        f(&join(prefix, "word"), &shape, self.word.as_mut_slice());
        f(&join(prefix, "context"), &shape, self.context.as_mut_slice());
        let n = [self.word_bias.len()];
        f(&join(prefix, "word_bias"), &n, &mut self.word_bias);
        f(&join(prefix, "context_bias"), &n, &mut self.context_bias);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GloveReport {
    /// Loss before the first update and after each epoch (`epochs + 1` entries).
    pub losses: Vec<f64>,
}

impl GloveReport {
    pub fn initial_loss(&self) -> f64 {
        self.losses[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.losses.last().unwrap()
    }
}

/// Full-batch gradient descent on the weighted least-squares objective.
pub fn train_glove_params(cooc: &CooccurrenceMatrix, config: &GloveTrainConfig) -> Result<(GloveParams, GloveReport)> {
    config.validate()?;
    if cooc.is_empty() {
        return Err(Error::Empty("co-occurrence matrix"));
    }
    let mut params = GloveParams::init(cooc.vocab_size, config.dim, config.seed);
    let mut losses = Vec::with_capacity(config.epochs + 1);
    for _ in 0..config.epochs {
        let (loss, grad) = params.loss_and_grad(cooc, config);
        if !loss.is_finite() {
            return Err(Error::NonFinite("glove loss".to_string()));
        }
        losses.push(loss);
        let mut updates = Vec::new();
        grad.visit("", &mut |_, _, g| updates.push(g.to_vec()));
        let mut k = 0;
        params.visit_mut("", &mut |_, _, p| {
            for (x, g) in p.iter_mut().zip(&updates[k]) {
                *x -= config.learning_rate * g;
            }
            k += 1;
        });
    }
    let final_loss = params.loss(cooc, config);
    if !final_loss.is_finite() {
        return Err(Error::NonFinite("glove loss".to_string()));
    }
    losses.push(final_loss);
    Ok((params, GloveReport { losses }))
}

pub fn train_glove(cooc: &CooccurrenceMatrix, config: &GloveTrainConfig) -> Result<(EmbeddingTable, GloveReport)> {
    let (params, report) = train_glove_params(cooc, config)?;
    Ok((params.to_table()?, report))
}
