//! Embedding pathway + encoder + logistic head, with exact gradients of the
//! mean binary cross-entropy.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::context_embed::{self, BiLmCache, BiLmParams, ContextualLayers, LayerMixWeights};
use crate::corpus::PAD;
use crate::encoders::{EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::math::{self, EmbeddedSequence, Mat};
use crate::params::{join, zeros_like, Gradients, ParamGroups};
use crate::rng;
use crate::static_embed::{embed_sequence, EmbeddingTable, Provenance};

/// Probability clamp for the loss.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum PathwayKind {
    GloveStatic,
    BilmContextual,
    PrecomputedContextual,
}

impl PathwayKind {
    pub const ALL: [PathwayKind; 3] = [
        PathwayKind::GloveStatic,
        PathwayKind::BilmContextual,
        PathwayKind::PrecomputedContextual,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PathwayKind::GloveStatic => "glove-static",
            PathwayKind::BilmContextual => "bilm-contextual",
            PathwayKind::PrecomputedContextual => "precomputed-contextual",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Pathway {
    Static(EmbeddingTable),
    BiLm { bilm: BiLmParams, mixer: LayerMixWeights },
    /// Per-token layers come with each input; only the mixer is learned.
    Precomputed { mixer: LayerMixWeights, dim: usize },
}

impl Pathway {
    pub fn kind(&self) -> PathwayKind {
        match self {
            Pathway::Static(_) => PathwayKind::GloveStatic,
            Pathway::BiLm { .. } => PathwayKind::BilmContextual,
            Pathway::Precomputed { .. } => PathwayKind::PrecomputedContextual,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Pathway::Static(t) => t.dim(),
            Pathway::BiLm { bilm, .. } => bilm.context_dim(),
            Pathway::Precomputed { dim, .. } => *dim,
        }
    }

    pub fn bilm(bilm: BiLmParams) -> Self {
        let mixer = LayerMixWeights::uniform(bilm.num_layers());
        Pathway::BiLm { bilm, mixer }
    }

    pub fn precomputed(num_layers: usize, dim: usize) -> Self {
        Pathway::Precomputed {
            mixer: LayerMixWeights::uniform(num_layers),
            dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl ClassifierHead {
    pub fn zeros(dim: usize) -> Self {
        ClassifierHead {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }
}

/// Shapes needed to rebuild an assembly before loading its parameters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Architecture {
    pub pathway: PathwayShape,
    pub encoder: EncoderConfig,
    pub fine_tune_embeddings: bool,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "kebab-case"))]
pub enum PathwayShape {
    GloveStatic { vocab_size: usize, dim: usize },
    BilmContextual { vocab_size: usize, dim: usize, hidden: usize },
    PrecomputedContextual { num_layers: usize, dim: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub ids: Vec<usize>,
    pub valid_length: usize,
    /// Required by the precomputed pathway, ignored by the others.
    pub context: Option<ContextualLayers>,
}

impl ModelInput {
    pub fn from_ids(ids: Vec<usize>, valid_length: usize) -> Self {
        ModelInput {
            ids,
            valid_length,
            context: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: ModelInput,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelAssembly {
    pub pathway: Pathway,
    pub encoder: EncoderParams,
    pub head: ClassifierHead,
    /// Makes the static table or the bi-LM trainable. Mixer, encoder and head
    /// are always trainable.
    pub fine_tune_embeddings: bool,
}

enum PathwayCache {
    Static,
    BiLm { layers: ContextualLayers, cache: BiLmCache },
    Precomputed { layers: ContextualLayers },
}

pub fn bce_loss(p: f64, y: u8) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if y == 1 {
        -math::ln(p)
    } else {
        -math::ln(1.0 - p)
    }
}

/// Gradient of [`bce_loss`] with respect to the logit; zero where the clamp is active.
fn bce_logit_grad(p: f64, y: u8) -> f64 {
    if p < PROB_CLAMP || p > 1.0 - PROB_CLAMP {
        0.0
    } else {
        p - y as f64
    }
}

impl ModelAssembly {
    /// Encoder built from `encoder` for the pathway's output dim; head
    /// initialized uniformly in `±1/√dim`.
    pub fn new(pathway: Pathway, encoder: &EncoderConfig, fine_tune_embeddings: bool, seed: u64) -> Result<Self> {
        let encoder = encoder.build(pathway.output_dim(), rng::derive_seed(seed, b"encoder"))?;
        let dim = encoder.output_dim();
        let mut r = rng::seeded(rng::derive_seed(seed, b"head"));
        let head = ClassifierHead {
            weights: rng::uniform_vec(&mut r, dim, 1.0 / math::sqrt(dim as f64)),
            bias: 0.0,
        };
        Self::from_parts(pathway, encoder, head, fine_tune_embeddings)
    }

    pub fn from_parts(pathway: Pathway, encoder: EncoderParams, head: ClassifierHead, fine_tune_embeddings: bool) -> Result<Self> {
        if pathway.output_dim() != encoder.input_dim() {
            return Err(Error::shape("encoder input dim", pathway.output_dim(), encoder.input_dim()));
        }
        if encoder.output_dim() != head.weights.len() {
            return Err(Error::shape("head input dim", encoder.output_dim(), head.weights.len()));
        }
        Ok(ModelAssembly {
            pathway,
            encoder,
            head,
            fine_tune_embeddings,
        })
    }

    pub fn architecture(&self) -> Architecture {
        let pathway = match &self.pathway {
            Pathway::Static(t) => PathwayShape::GloveStatic {
                vocab_size: t.vocab_size(),
                dim: t.dim(),
            },
            Pathway::BiLm { bilm, .. } => PathwayShape::BilmContextual {
                vocab_size: bilm.vocab_size(),
                dim: bilm.dim(),
                hidden: bilm.hidden(),
            },
            Pathway::Precomputed { mixer, dim } => PathwayShape::PrecomputedContextual {
                num_layers: mixer.num_layers(),
                dim: *dim,
            },
        };
        Architecture {
            pathway,
            encoder: self.encoder.config(),
            fine_tune_embeddings: self.fine_tune_embeddings,
        }
    }

    /// An assembly with the shapes of `arch`; values are placeholders meant
    /// to be overwritten.
    pub fn from_architecture(arch: &Architecture) -> Result<Self> {
        let pathway = match arch.pathway {
            PathwayShape::GloveStatic { vocab_size, dim } => Pathway::Static(EmbeddingTable::zeros(vocab_size, dim, Provenance::Loaded)),
            PathwayShape::BilmContextual { vocab_size, dim, hidden } => Pathway::bilm(BiLmParams::zeros(vocab_size, dim, hidden)),
            PathwayShape::PrecomputedContextual { num_layers, dim } => Pathway::precomputed(num_layers, dim),
        };
        let encoder = arch.encoder.build(pathway.output_dim(), 0)?;
        let head = ClassifierHead::zeros(encoder.output_dim());
        Self::from_parts(pathway, encoder, head, arch.fine_tune_embeddings)
    }

    /// Whether a parameter group (full dotted name) receives gradients.
    pub fn is_trainable(&self, name: &str) -> bool {
        self.fine_tune_embeddings || !(name.starts_with("embedding.") || name.starts_with("bilm."))
    }

    fn embed(&self, input: &ModelInput) -> Result<(EmbeddedSequence, PathwayCache)> {
        match &self.pathway {
            Pathway::Static(table) => Ok((embed_sequence(table, &input.ids, input.valid_length)?, PathwayCache::Static)),
            Pathway::BiLm { bilm, mixer } => {
                let (layers, cache) = context_embed::run_bilm_cached(bilm, &input.ids, input.valid_length)?;
                let seq = context_embed::mix_layers(&layers, mixer)?;
                Ok((seq, PathwayCache::BiLm { layers, cache }))
            }
            Pathway::Precomputed { mixer, dim } => {
                let layers = input
                    .context
                    .as_ref()
                    .ok_or_else(|| Error::InvalidConfig("precomputed pathway needs contextual layers for every input".to_string()))?;
                if layers.dim() != *dim {
                    return Err(Error::shape("precomputed layer width", *dim, layers.dim()));
                }
                let seq = context_embed::mix_layers(layers, mixer)?;
                Ok((seq, PathwayCache::Precomputed { layers: layers.clone() }))
            }
        }
    }

    fn logit(&self, encoded: &[f64]) -> f64 {
        math::dot(&self.head.weights, encoded) + self.head.bias
    }

    /// `σ(w · encoder(pathway(input)) + b)`
    pub fn forward(&self, input: &ModelInput) -> Result<f64> {
        let (seq, _) = self.embed(input)?;
        let encoded = self.encoder.encode(&seq)?;
        Ok(math::sigmoid(self.logit(&encoded)))
    }

    pub fn batch_loss(&self, batch: &[Example]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let mut total = 0.0;
        for ex in batch {
            total += bce_loss(self.forward(&ex.input)?, ex.label);
        }
        Ok(total / batch.len() as f64)
    }

    /// Mean batch loss and its gradient for every trainable group.
    pub fn loss_and_gradients(&self, batch: &[Example]) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let scale = 1.0 / batch.len() as f64;
        let mut grad = zeros_like(self);
        let mut total = 0.0;
        for ex in batch {
            let (seq, cache) = self.embed(&ex.input)?;
            let encoded = self.encoder.encode(&seq)?;
            let p = math::sigmoid(self.logit(&encoded));
            total += bce_loss(p, ex.label);
            let dlogit = bce_logit_grad(p, ex.label) * scale;
            if dlogit == 0.0 {
                continue;
            }
            for (g, e) in grad.head.weights.iter_mut().zip(&encoded) {
                *g += dlogit * e;
            }
            grad.head.bias += dlogit;
            let d_enc: Vec<f64> = self.head.weights.iter().map(|w| dlogit * w).collect();
            let d_seq = self.encoder.backward(&seq, &d_enc, &mut grad.encoder)?;
            self.pathway_backward(&ex.input, cache, &d_seq, &mut grad.pathway);
        }
        let grads = Gradients::collect(&grad, "", &|name| self.is_trainable(name));
        if let Some(name) = grads.first_non_finite() {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
        Ok((total * scale, grads))
    }

    fn pathway_backward(&self, input: &ModelInput, cache: PathwayCache, d_seq: &Mat, grad: &mut Pathway) {
        match (&self.pathway, cache, grad) {
            (Pathway::Static(_), PathwayCache::Static, Pathway::Static(g)) => {
                if self.fine_tune_embeddings {
                    let table = g.matrix_mut();
                    for (t, &id) in input.ids[..input.valid_length].iter().enumerate() {
                        if id != PAD {
                            math::add_acc(table.row_mut(id), d_seq.row(t));
                        }
                    }
                }
            }
            (Pathway::BiLm { bilm, mixer }, PathwayCache::BiLm { layers, cache }, Pathway::BiLm { bilm: gb, mixer: gm }) => {
                let d_layers = context_embed::mix_layers_backward(&layers, mixer, d_seq, gm);
                if self.fine_tune_embeddings {
                    context_embed::bilm_backward(bilm, &cache, &d_layers, gb);
                    gb.embedding.row_mut(PAD).fill(0.0);
                }
            }
            (Pathway::Precomputed { mixer, .. }, PathwayCache::Precomputed { layers }, Pathway::Precomputed { mixer: gm, .. }) => {
                context_embed::mix_layers_backward(&layers, mixer, d_seq, gm);
            }
            _ => unreachable!("gradient buffer mirrors the assembly"),
        }
    }
}

impl ParamGroups for ModelAssembly {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        match &self.pathway {
            Pathway::Static(t) => t.visit(&join(prefix, "embedding"), f),
            Pathway::BiLm { bilm, mixer } => {
                bilm.visit(&join(prefix, "bilm"), f);
                mixer.visit(&join(prefix, "mixer"), f);
            }
            Pathway::Precomputed { mixer, .. } => mixer.visit(&join(prefix, "mixer"), f),
        }
        self.encoder.visit(&join(prefix, "encoder"), f);
        f(&join(prefix, "head.w"), &[self.head.weights.len()], &self.head.weights);
        f(&join(prefix, "head.b"), &[1], core::slice::from_ref(&self.head.bias));
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        match &mut self.pathway {
            Pathway::Static(t) => t.visit_mut(&join(prefix, "embedding"), f),
            Pathway::BiLm { bilm, mixer } => {
                bilm.visit_mut(&join(prefix, "bilm"), f);
                mixer.visit_mut(&join(prefix, "mixer"), f);
            }
            Pathway::Precomputed { mixer, .. } => mixer.visit_mut(&join(prefix, "mixer"), f),
        }
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        let n = [self.head.weights.len()];
        f(&join(prefix, "head.w"), &n, &mut self.head.weights);
        f(&join(prefix, "head.b"), &[1], core::slice::from_mut(&mut self.head.bias));
    }
}

/// Names of all parameter groups, in visiting order.
pub fn group_names<P: ParamGroups + ?Sized>(params: &P) -> Vec<String> {
    let mut names = Vec::new();
    params.visit("", &mut |n, _, _| names.push(String::from(n)));
    names
}
