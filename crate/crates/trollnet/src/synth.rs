//! Generated datasets with known structure.

use rand::seq::SliceRandom;
use rand::Rng;
use trollnet_core::context_embed::ContextualLayers;
use trollnet_core::corpus::{tokenize, RawRecord};
use trollnet_core::{rng, Mat};

use crate::ctx::CtxFile;
use crate::error::Result;

pub const MARKER_TOKEN: &str = "trollmark";

const FILLERS: [&str; 24] = [
    "the", "news", "today", "people", "said", "vote", "city", "game", "time", "good", "week", "new", "read",
    "story", "world", "big", "report", "live", "team", "watch", "day", "great", "show", "more",
];

/// Label 1 iff the text contains [`MARKER_TOKEN`]. Texts hold 4 to 10 tokens
/// and labels alternate, so the classes are balanced.
pub fn marker_dataset(n: usize, seed: u64) -> Vec<RawRecord> {
    let mut r = rng::seeded(seed);
    (0..n)
        .map(|i| {
            let label = (i % 2) as u8;
            let len = r.gen_range(4..=10);
            let mut tokens: Vec<&str> = (0..len).map(|_| *FILLERS.choose(&mut r).unwrap()).collect();
            if label == 1 {
                let at = r.gen_range(0..len);
                tokens[at] = MARKER_TOKEN;
            }
            RawRecord::new(tokens.join(" "), label).expect("non-empty text")
        })
        .collect()
}

pub const HOMOGRAPH: &str = "bank";

/// Every text is a permutation of the same ten tokens. Label 1 texts contain
/// the phrase `river bank water`, label 0 texts `money bank cash`; the other
/// cue and follower are scattered among fillers. Bags of words are identical
/// across classes, so only word order carries the label.
pub fn polysemy_dataset(n: usize, seed: u64) -> Vec<RawRecord> {
    let mut r = rng::seeded(seed);
    let fillers = ["the", "a", "of", "to", "and"];
    (0..n)
        .map(|i| {
            let label = (i % 2) as u8;
            let (phrase, rest) = if label == 1 {
                (["river", HOMOGRAPH, "water"], ["money", "cash"])
            } else {
                (["money", HOMOGRAPH, "cash"], ["river", "water"])
            };
            let mut others: Vec<&str> = fillers.iter().copied().chain(rest).collect();
            others.shuffle(&mut r);
            let at = r.gen_range(0..=others.len());
            let tokens: Vec<&str> = others[..at].iter().copied().chain(phrase).chain(others[at..].iter().copied()).collect();
            RawRecord::new(tokens.join(" "), label).expect("non-empty text")
        })
        .collect()
}

/// Stand-in contextual layers for `records`: layer 0 is a fixed random
/// vector per token type, layer 1 the mean of each token's vector with its
/// immediate neighbours. Token count follows [`tokenize`].
pub fn synthetic_context(records: &[RawRecord], dim: usize, seed: u64) -> Result<CtxFile> {
    let vector = |token: &str| {
        let mut r = rng::seeded(rng::derive_seed(seed, token.as_bytes()));
        rng::uniform_vec(&mut r, dim, 1.0)
    };
    let mut docs = Vec::with_capacity(records.len());
    for rec in records {
        let tokens = tokenize(&rec.text);
        let t = tokens.len();
        let rows: Vec<Vec<f64>> = tokens.iter().map(|tok| vector(tok)).collect();
        let mut base = Mat::zeros(t, dim);
        let mut mixed = Mat::zeros(t, dim);
        for i in 0..t {
            base.row_mut(i).copy_from_slice(&rows[i]);
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(t - 1);
            let n = (hi - lo + 1) as f64;
            for row in &rows[lo..=hi] {
                for (m, v) in mixed.row_mut(i).iter_mut().zip(row) {
                    *m += v / n;
                }
            }
        }
        let round = |m: Mat| {
            let (rows, cols) = (m.rows(), m.cols());
            Mat::from_vec(rows, cols, m.into_vec().into_iter().map(|x| x as f32 as f64).collect())
        };
        docs.push(ContextualLayers::new(vec![round(base)?, round(mixed)?], t)?);
    }
    CtxFile::new(2, dim, docs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn marker_labels_follow_marker() {
        let data = marker_dataset(200, 3);
        for rec in &data {
            assert_eq!(rec.text.split(' ').any(|t| t == MARKER_TOKEN), rec.label == 1);
        }
        assert_eq!(data.iter().filter(|r| r.label == 1).count(), 100);
        assert_eq!(marker_dataset(200, 3), data);
    }

    #[test]
    fn polysemy_bags_are_identical() {
        let data = polysemy_dataset(100, 1);
        let bag = |s: &str| {
            let mut m = BTreeMap::new();
            for t in s.split(' ') {
                *m.entry(t.to_string()).or_insert(0) += 1;
            }
            m
        };
        let first = bag(&data[0].text);
        for rec in &data {
            assert_eq!(bag(&rec.text), first);
            let toks: Vec<&str> = rec.text.split(' ').collect();
            let at = toks.iter().position(|&t| t == HOMOGRAPH).unwrap();
            let cue = if rec.label == 1 { "river" } else { "money" };
            assert_eq!(toks[at - 1], cue);
        }
    }

    #[test]
    fn context_shapes_follow_tokens() {
        let data = marker_dataset(10, 2);
        let ctx = synthetic_context(&data, 4, 0).unwrap();
        for (rec, doc) in data.iter().zip(&ctx.docs) {
            assert_eq!(doc.len(), tokenize(&rec.text).len());
            assert_eq!(doc.num_layers(), 2);
        }
    }
}
