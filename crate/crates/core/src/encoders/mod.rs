//! Sequence encoders mapping an [`EmbeddedSequence`] to a fixed-size vector.

pub mod cnn;
pub mod gru;
pub mod transformer;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

pub use cnn::{cnn_backward, cnn_encode, CnnActivation, CnnEncoderParams, FilterBank, Pooling};
pub use gru::{gru_backward, gru_encode, gru_step, GruCellParams};
pub use transformer::{
    attention, attention_weights, layer_norm, transformer_backward, transformer_encode, TransformerEncoderParams,
    LAYER_NORM_EPS,
};

use crate::error::{Error, Result};
use crate::math::{EmbeddedSequence, Mat};
use crate::params::{join, zeros_like, ParamGroups};
use crate::rng;

/// The pooled output of an encoder; its length depends only on the encoder
/// configuration.
pub type EncodedVector = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum EncoderKind {
    Cnn,
    Gru,
    Transformer,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 3] = [EncoderKind::Cnn, EncoderKind::Gru, EncoderKind::Transformer];

    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::Cnn => "cnn",
            EncoderKind::Gru => "gru",
            EncoderKind::Transformer => "transformer",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

/// Hyperparameters for all three encoders; only the fields of `kind` are used.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub cnn_windows: Vec<usize>,
    pub cnn_channels: usize,
    pub cnn_pooling: Pooling,
    pub cnn_activation: CnnActivation,
    pub gru_hidden: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_len: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            kind: EncoderKind::Cnn,
            cnn_windows: vec![1, 2, 3],
            cnn_channels: 8,
            cnn_pooling: Pooling::GlobalMax,
            cnn_activation: CnnActivation::Relu,
            gru_hidden: 16,
            d_model: 16,
            n_heads: 2,
            n_layers: 1,
            d_ff: 32,
            max_len: 64,
        }
    }
}

impl EncoderConfig {
    pub fn with_kind(kind: EncoderKind) -> Self {
        EncoderConfig {
            kind,
            ..Default::default()
        }
    }

    pub fn build(&self, input_dim: usize, seed: u64) -> Result<EncoderParams> {
        let mut r = rng::seeded(seed);
        Ok(match self.kind {
            EncoderKind::Cnn => {
                if self.cnn_windows.contains(&0) || self.cnn_channels == 0 {
                    return Err(Error::InvalidConfig("CNN windows and channels must be ≥ 1".into()));
                }
                EncoderParams::Cnn(CnnEncoderParams::init(
                    input_dim,
                    &self.cnn_windows,
                    self.cnn_channels,
                    self.cnn_pooling,
                    self.cnn_activation,
                    &mut r,
                )?)
            }
            EncoderKind::Gru => EncoderParams::Gru(GruCellParams::init(input_dim, self.gru_hidden, &mut r)?),
            EncoderKind::Transformer => EncoderParams::Transformer(TransformerEncoderParams::init(
                input_dim,
                self.d_model,
                self.n_heads,
                self.n_layers,
                self.d_ff,
                self.max_len,
                &mut r,
            )?),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EncoderParams {
    Cnn(CnnEncoderParams),
    Gru(GruCellParams),
    Transformer(TransformerEncoderParams),
}

impl EncoderParams {
    pub fn kind(&self) -> EncoderKind {
        match self {
            EncoderParams::Cnn(_) => EncoderKind::Cnn,
            EncoderParams::Gru(_) => EncoderKind::Gru,
            EncoderParams::Transformer(_) => EncoderKind::Transformer,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            EncoderParams::Cnn(p) => p.input_dim(),
            EncoderParams::Gru(p) => p.input_dim,
            EncoderParams::Transformer(p) => p.input_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            EncoderParams::Cnn(p) => p.output_dim(),
            EncoderParams::Gru(p) => p.output_dim(),
            EncoderParams::Transformer(p) => p.output_dim(),
        }
    }

    /// Longest sequence the encoder accepts, if bounded.
    pub fn max_len(&self) -> Option<usize> {
        match self {
            EncoderParams::Transformer(p) => Some(p.max_len()),
            _ => None,
        }
    }

    pub fn encode(&self, seq: &EmbeddedSequence) -> Result<EncodedVector> {
        match self {
            EncoderParams::Cnn(p) => cnn_encode(p, seq),
            EncoderParams::Gru(p) => gru_encode(p, seq),
            EncoderParams::Transformer(p) => transformer_encode(p, seq),
        }
    }

    /// Accumulates into `grad` (which must have the same variant) and returns
    /// the gradient on the input sequence.
    pub fn backward(&self, seq: &EmbeddedSequence, d_out: &[f64], grad: &mut EncoderParams) -> Result<Mat> {
        match (self, grad) {
            (EncoderParams::Cnn(p), EncoderParams::Cnn(g)) => cnn_backward(p, seq, d_out, g),
            (EncoderParams::Gru(p), EncoderParams::Gru(g)) => gru_backward(p, seq, d_out, g),
            (EncoderParams::Transformer(p), EncoderParams::Transformer(g)) => transformer_backward(p, seq, d_out, g),
            (p, g) => Err(Error::InvalidConfig(format!(
                "gradient buffer is {:?}, encoder is {:?}",
                g.kind(),
                p.kind()
            ))),
        }
    }

    /// The configuration that rebuilds these shapes. CNN banks are assumed to
    /// share one channel count.
    pub fn config(&self) -> EncoderConfig {
        let base = EncoderConfig::with_kind(self.kind());
        match self {
            EncoderParams::Cnn(p) => EncoderConfig {
                cnn_windows: p.banks.iter().map(|b| b.window).collect(),
                cnn_channels: p.banks[0].channels,
                cnn_pooling: p.pooling,
                cnn_activation: p.activation,
                ..base
            },
            EncoderParams::Gru(p) => EncoderConfig {
                gru_hidden: p.hidden,
                ..base
            },
            EncoderParams::Transformer(p) => EncoderConfig {
                d_model: p.d_model,
                n_heads: p.n_heads,
                n_layers: p.layers.len(),
                d_ff: p.d_ff,
                max_len: p.max_len(),
                ..base
            },
        }
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            EncoderParams::Cnn(p) => EncoderParams::Cnn(zeros_like(p)),
            EncoderParams::Gru(p) => EncoderParams::Gru(zeros_like(p)),
            EncoderParams::Transformer(p) => EncoderParams::Transformer(zeros_like(p)),
        }
    }
}

impl ParamGroups for EncoderParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        let prefix = join(prefix, self.kind().name());
        match self {
            EncoderParams::Cnn(p) => p.visit(&prefix, f),
            EncoderParams::Gru(p) => p.visit(&prefix, f),
            EncoderParams::Transformer(p) => p.visit(&prefix, f),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        let prefix = join(prefix, self.kind().name());
        match self {
            EncoderParams::Cnn(p) => p.visit_mut(&prefix, f),
            EncoderParams::Gru(p) => p.visit_mut(&prefix, f),
            EncoderParams::Transformer(p) => p.visit_mut(&prefix, f),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_dim_ignores_sequence_length() {
        for kind in EncoderKind::ALL {
            let enc = EncoderConfig::with_kind(kind).build(5, 1).unwrap();
            for len in [1, 3, 9] {
                let seq = EmbeddedSequence::new(Mat::from_vec(len, 5, vec![0.25; len * 5]).unwrap(), len).unwrap();
                assert_eq!(enc.encode(&seq).unwrap().len(), enc.output_dim());
            }
        }
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in EncoderKind::ALL {
            assert_eq!(EncoderKind::parse(kind.name()), Some(kind));
        }
        assert_eq!(EncoderKind::parse("lstm"), None);
    }

    #[test]
    fn group_names_are_prefixed() {
        let enc = EncoderConfig::with_kind(EncoderKind::Gru).build(2, 0).unwrap();
        let mut names = Vec::new();
        enc.visit("encoder", &mut |n, _, _| names.push(alloc::string::String::from(n)));
        assert!(names.iter().all(|n| n.starts_with("encoder.gru.")));
        assert_eq!(names.len(), 9);
    }
}
