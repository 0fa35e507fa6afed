//! Whitespace-separated word-vector text files: `token v1 v2 … vD` per line.

use std::fmt::Write as _;
use std::path::Path;

use trollnet_core::corpus::{Vocabulary, PAD};
use trollnet_core::static_embed::{EmbeddingTable, Provenance};
use trollnet_core::Mat;

use crate::error::{read_file, write_file, Error, Result};

/// How many vocabulary tokens (excluding `<pad>`) were found in the file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadReport {
    pub hits: usize,
    pub misses: usize,
    pub lines: usize,
}

/// Fills a table for `vocab` from vector text. Tokens missing from the text
/// keep the zero vector; the first line for a token wins.
pub fn parse_embedding_text(
    text: &str,
    path: &Path,
    expected_dim: usize,
    vocab: &Vocabulary,
) -> Result<(EmbeddingTable, LoadReport)> {
    let mut matrix = Mat::zeros(vocab.len(), expected_dim);
    let mut seen = vec![false; vocab.len()];
    let mut lines = 0;
    for (i, line) in text.lines().enumerate() {
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        lines += 1;
        let values: Vec<&str> = fields.collect();
        if values.len() != expected_dim {
            return Err(Error::format(
                path,
                format!("line {}: expected {expected_dim} values, found {}", i + 1, values.len()),
            ));
        }
        let Some(id) = vocab.get(token) else { continue };
        if seen[id] || id == PAD {
            continue;
        }
        for (j, v) in values.iter().enumerate() {
            let x: f64 = v
                .parse()
                .map_err(|_| Error::format(path, format!("line {}: cannot parse {v:?} as a number", i + 1)))?;
            if !x.is_finite() {
                return Err(Error::format(path, format!("line {}: non-finite value {v:?}", i + 1)));
            }
            matrix.set(id, j, x);
        }
        seen[id] = true;
    }
    let hits = seen.iter().filter(|&&s| s).count();
    let table = EmbeddingTable::from_matrix(matrix, Provenance::Loaded)?;
    Ok((
        table,
        LoadReport {
            hits,
            misses: vocab.len() - 1 - hits,
            lines,
        },
    ))
}

pub fn load_embedding_text(path: &Path, expected_dim: usize, vocab: &Vocabulary) -> Result<(EmbeddingTable, LoadReport)> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::format(path, "not valid UTF-8"))?;
    parse_embedding_text(&text, path, expected_dim, vocab)
}

/// One line per vocabulary token except `<pad>`, values in shortest
/// round-trip form.
pub fn format_embedding_text(table: &EmbeddingTable, vocab: &Vocabulary) -> String {
    let mut out = String::new();
    for (id, token) in vocab.tokens().iter().enumerate().skip(PAD + 1) {
        out.push_str(token);
        for v in table.matrix().row(id) {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
    }
    out
}

pub fn write_embedding_text(path: &Path, table: &EmbeddingTable, vocab: &Vocabulary) -> Result<()> {
    if table.vocab_size() != vocab.len() {
        return Err(trollnet_core::Error::Shape {
            what: "embedding rows vs vocabulary".into(),
            expected: vocab.len(),
            actual: table.vocab_size(),
        }
        .into());
    }
    write_file(path, format_embedding_text(table, vocab).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab(tokens: &[&str]) -> Vocabulary {
        let mut all = vec!["<pad>".to_string(), "<unk>".to_string()];
        all.extend(tokens.iter().map(|t| t.to_string()));
        Vocabulary::from_tokens(all, 1).unwrap()
    }

    fn parse(text: &str, dim: usize, v: &Vocabulary) -> Result<(EmbeddingTable, LoadReport)> {
        parse_embedding_text(text, Path::new("vec.txt"), dim, v)
    }

    #[test]
    fn hit_miss_and_values() {
        let v = vocab(&["hello", "zzz"]);
        let (t, report) = parse("hello 0.1 -0.2 0.3\nother 1 2 3\n", 3, &v).unwrap();
        assert_eq!(t.row(v.id("hello")).unwrap(), &[0.1, -0.2, 0.3]);
        assert_eq!(t.row(v.id("zzz")).unwrap(), &[0.0, 0.0, 0.0]);
        assert_eq!(t.row(PAD).unwrap(), &[0.0, 0.0, 0.0]);
        assert_eq!(t.provenance, Provenance::Loaded);
        assert_eq!(report, LoadReport { hits: 1, misses: 2, lines: 2 });
    }

    #[test]
    fn wrong_field_count_names_line() {
        let v = vocab(&["hello"]);
        let err = parse("a 1 2 3\nhello 0.1 0.2\n", 3, &v).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn bad_number_names_line() {
        let v = vocab(&["hello"]);
        let err = parse("hello 0.1 x 0.3\n", 3, &v).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn pad_line_is_ignored() {
        let v = vocab(&[]);
        let (t, _) = parse("<pad> 5 5\n<unk> 1 2\n", 2, &v).unwrap();
        assert_eq!(t.row(PAD).unwrap(), &[0.0, 0.0]);
        assert_eq!(t.row(1).unwrap(), &[1.0, 2.0]);
    }

    proptest! {
        #[test]
        fn write_then_load_is_identity(values in proptest::collection::vec(-1e3f64..1e3, 12)) {
            let v = vocab(&["a", "b"]);
            let mut m = Mat::from_vec(4, 3, values).unwrap();
            m.row_mut(PAD).fill(0.0);
            let table = EmbeddingTable::from_matrix(m, Provenance::Loaded).unwrap();
            let text = format_embedding_text(&table, &v);
            let (back, report) = parse(&text, 3, &v).unwrap();
            prop_assert_eq!(back, table);
            prop_assert_eq!(report.misses, 0);
        }
    }
}
