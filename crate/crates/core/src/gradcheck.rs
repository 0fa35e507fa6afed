//! Central finite-difference checks of analytic gradients.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::RngCore;

use crate::context_embed::{BiLmParams, ContextualLayers};
use crate::encoders::{EncoderConfig, EncoderKind};
use crate::error::Result;
use crate::math::Mat;
use crate::model::{Example, ModelAssembly, ModelInput, Pathway, PathwayKind};
use crate::params::{Gradients, ParamGroups};
use crate::rng;
use crate::static_embed::{EmbeddingTable, Provenance};

/// Denominator floor for [`relative_error`]. Below it the comparison is
/// effectively absolute, so entries that are zero on both sides are not
/// judged on round-off noise.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, floor)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Group and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub entries_checked: usize,
    /// Group names that were checked.
    pub groups: Vec<String>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance
    }
}

/// Compares every entry of `analytic` against `(L(θ+ε) − L(θ−ε)) / 2ε`.
///
/// Only groups present in `analytic` are perturbed, so frozen groups are
/// skipped. `loss` must be a pure function of the parameters.
pub fn check<P, F>(params: &P, analytic: &Gradients, eps: f64, loss: F) -> GradCheckReport
where
    P: ParamGroups + Clone,
    F: Fn(&P) -> f64,
{
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        entries_checked: 0,
        groups: analytic.names().map(String::from).collect(),
    };
    for (name, grad) in analytic.iter() {
        for (idx, &a) in grad.iter().enumerate() {
            let original = read(&work, name, idx);
            write(&mut work, name, idx, original + eps);
            let plus = loss(&work);
            write(&mut work, name, idx, original - eps);
            let minus = loss(&work);
            write(&mut work, name, idx, original);
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(a, numeric);
            report.entries_checked += 1;
            if err > report.max_relative_error || !err.is_finite() {
                report.max_relative_error = if err.is_finite() { err } else { f64::INFINITY };
                report.worst = Some((String::from(name), idx));
            }
        }
    }
    report
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteEntry {
    pub pathway: PathwayKind,
    pub encoder: EncoderKind,
    pub report: GradCheckReport,
}

/// Checks the batch-loss gradient of every pathway × encoder assembly at toy
/// sizes (widths ≤ 8, sequences of 5). Embeddings are fine-tuned so that no
/// group is frozen.
pub fn assembly_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    let encoder_config = |kind| EncoderConfig {
        cnn_windows: vec![1, 2],
        cnn_channels: 3,
        gru_hidden: 4,
        d_model: 4,
        n_heads: 2,
        n_layers: 1,
        d_ff: 6,
        max_len: 5,
        ..EncoderConfig::with_kind(kind)
    };
    let mut r = rng::seeded(seed);
    let vocab = 7;
    let ids = [vec![2, 3, 4, 5, 6], vec![6, 2, 2, 0, 0]];
    let valid = [5, 3];
    let mut batch = Vec::new();
    for (i, (ids, &valid)) in ids.iter().zip(&valid).enumerate() {
        let mut layers = Vec::new();
        for _ in 0..2 {
            layers.push(Mat::from_vec(5, 4, rng::uniform_vec(&mut r, 20, 1.0))?);
        }
        batch.push(Example {
            input: ModelInput {
                ids: ids.clone(),
                valid_length: valid,
                context: Some(ContextualLayers::new(layers, valid)?),
            },
            label: (i % 2 == 0) as u8,
        });
    }
    let mut out = Vec::new();
    for pathway_kind in PathwayKind::ALL {
        for encoder in EncoderKind::ALL {
            let pathway = match pathway_kind {
                PathwayKind::GloveStatic => {
                    let m = Mat::from_vec(vocab, 4, rng::uniform_vec(&mut r, vocab * 4, 1.0))?;
                    Pathway::Static(EmbeddingTable::from_matrix(m, Provenance::Trained)?)
                }
                PathwayKind::BilmContextual => Pathway::bilm(BiLmParams::init(vocab, 3, 3, r.next_u64())?),
                PathwayKind::PrecomputedContextual => {
                    let mut p = Pathway::precomputed(2, 4);
                    if let Pathway::Precomputed { mixer, .. } = &mut p {
                        mixer.s_raw = vec![0.3, -0.2];
                        mixer.gamma = 1.3;
                    }
                    p
                }
            };
            let m = ModelAssembly::new(pathway, &encoder_config(encoder), true, r.next_u64())?;
            let (_, grads) = m.loss_and_gradients(&batch)?;
            let report = check(&m, &grads, 1e-5, |q| q.batch_loss(&batch).unwrap_or(f64::NAN));
            out.push(SuiteEntry {
                pathway: pathway_kind,
                encoder,
                report,
            });
        }
    }
    Ok(out)
}

fn read<P: ParamGroups>(p: &P, name: &str, idx: usize) -> f64 {
    let mut out = f64::NAN;
    p.visit("", &mut |n, _, v| {
        if n == name {
            out = v[idx];
        }
    });
    out
}

fn write<P: ParamGroups>(p: &mut P, name: &str, idx: usize, value: f64) {
    p.visit_mut("", &mut |n, _, v| {
        if n == name {
            v[idx] = value;
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Clone)]
    struct Quad(Vec<f64>);

    impl ParamGroups for Quad {
        fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
            f(&crate::params::join(prefix, "x"), &[self.0.len()], &self.0);
        }
        fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
            let n = [self.0.len()];
            f(&crate::params::join(prefix, "x"), &n, &mut self.0);
        }
    }

    #[test]
    fn detects_correct_and_wrong_gradients() {
        let p = Quad(vec![1.0, -2.0, 0.5]);
        let loss = |q: &Quad| q.0.iter().map(|x| x * x * x).sum::<f64>();
        let mut good = Gradients::new();
        good.insert("x".into(), p.0.iter().map(|x| 3.0 * x * x).collect());
        assert!(check(&p, &good, 1e-5, loss).passes(1e-6));

        let mut bad = Gradients::new();
        bad.insert("x".into(), p.0.iter().map(|x| 2.0 * x).collect());
        let r = check(&p, &bad, 1e-5, loss);
        assert!(!r.passes(1e-4));
        assert_eq!(r.entries_checked, 3);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!(relative_error(1e-12, -1e-12) < 1e-5);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
    }
}
