//! Labeled text files (TSV or CSV).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use trollnet_core::corpus::RawRecord;

use crate::error::{read_file, write_file, Error, Result};

/// A column addressed by 0-based index or, when the file has a header, by name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Column {
    Index(usize),
    Name(String),
}

impl FromStr for Column {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.parse() {
            Ok(i) => Column::Index(i),
            Err(_) => Column::Name(s.to_string()),
        })
    }
}

impl fmt::Display for Column {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Column::Index(i) => write!(f, "{i}"),
            Column::Name(n) => f.write_str(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetOptions {
    pub delimiter: u8,
    pub has_header: bool,
    pub text_col: Column,
    pub label_col: Column,
    pub pos_label: String,
    pub neg_label: String,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions {
            delimiter: b'\t',
            has_header: false,
            text_col: Column::Index(0),
            label_col: Column::Index(1),
            pos_label: "1".to_string(),
            neg_label: "0".to_string(),
        }
    }
}

impl DatasetOptions {
    /// Defaults with the delimiter picked from the extension (`.csv` → comma,
    /// anything else → tab).
    pub fn for_path(path: &Path) -> Self {
        let csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
        DatasetOptions {
            delimiter: if csv { b',' } else { b'\t' },
            ..Default::default()
        }
    }

    fn reader_builder(&self) -> csv::ReaderBuilder {
        let mut b = csv::ReaderBuilder::new();
        b.delimiter(self.delimiter)
            .has_headers(self.has_header)
            .flexible(true)
            .quoting(self.delimiter != b'\t');
        b
    }
}

fn resolve(col: &Column, headers: Option<&csv::StringRecord>, path: &Path) -> Result<usize> {
    match col {
        Column::Index(i) => Ok(*i),
        Column::Name(name) => headers
            .and_then(|h| h.iter().position(|c| c == name))
            .ok_or_else(|| Error::format(path, format!("no column named {name:?} in the header"))),
    }
}

/// Parses records from `bytes`; `path` is only used in messages. Rows are
/// numbered by file line, starting at 1.
pub fn parse_dataset(bytes: &[u8], path: &Path, opts: &DatasetOptions) -> Result<Vec<RawRecord>> {
    let mut reader = opts.reader_builder().from_reader(bytes);
    let headers = if opts.has_header {
        Some(reader.headers().map_err(|e| Error::format(path, e.to_string()))?.clone())
    } else {
        None
    };
    let text_col = resolve(&opts.text_col, headers.as_ref(), path)?;
    let label_col = resolve(&opts.label_col, headers.as_ref(), path)?;
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::format(path, e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |i: usize| {
            row.get(i).ok_or_else(|| {
                Error::format(path, format!("row {line}: expected at least {} columns, found {}", i + 1, row.len()))
            })
        };
        let (text, label) = (field(text_col)?, field(label_col)?.trim());
        let label = if label == opts.pos_label {
            1
        } else if label == opts.neg_label {
            0
        } else {
            return Err(Error::format(
                path,
                format!("row {line}: unknown label {label:?} (expected {:?} or {:?})", opts.pos_label, opts.neg_label),
            ));
        };
        let record = RawRecord::new(text, label).map_err(|e| Error::format(path, format!("row {line}: {e}")))?;
        out.push(record);
    }
    Ok(out)
}

pub fn load_dataset(path: &Path, opts: &DatasetOptions) -> Result<Vec<RawRecord>> {
    parse_dataset(&read_file(path)?, path, opts)
}

/// Writes `text<delim>label` rows with the configured label tokens and no header.
pub fn write_dataset(path: &Path, records: &[RawRecord], opts: &DatasetOptions) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(opts.delimiter)
        .quote_style(if opts.delimiter == b'\t' {
            csv::QuoteStyle::Never
        } else {
            csv::QuoteStyle::Necessary
        })
        .from_writer(Vec::new());
    for r in records {
        if opts.delimiter == b'\t' && (r.text.contains('\t') || r.text.contains('\n')) {
            return Err(Error::format(path, "text contains a tab or newline and cannot be written as TSV"));
        }
        let label = if r.label == 1 { &opts.pos_label } else { &opts.neg_label };
        w.write_record([r.text.as_str(), label.as_str()])
            .map_err(|e| Error::format(path, e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format(path, e.to_string()))?;
    write_file(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str, opts: &DatasetOptions) -> Result<Vec<RawRecord>> {
        parse_dataset(s.as_bytes(), Path::new("mem.tsv"), opts)
    }

    #[test]
    fn two_row_tsv() {
        let recs = parse("hi\t1\nyo\t0\n", &DatasetOptions::default()).unwrap();
        assert_eq!(recs, vec![RawRecord::new("hi", 1).unwrap(), RawRecord::new("yo", 0).unwrap()]);
    }

    #[test]
    fn unknown_label_names_the_row() {
        let err = parse("a\t1\nb\t0\nc\t1\nd\t0\ne\t2\n", &DatasetOptions::default()).unwrap_err();
        assert!(err.to_string().contains("row 5"), "{err}");
        assert!(err.is_validation());
    }

    #[test]
    fn short_row_is_malformed() {
        let err = parse("a\t1\nb\n", &DatasetOptions::default()).unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
    }

    #[test]
    fn csv_with_header_and_named_columns() {
        let opts = DatasetOptions {
            delimiter: b',',
            has_header: true,
            text_col: "tweet".parse().unwrap(),
            label_col: "class".parse().unwrap(),
            pos_label: "troll".into(),
            neg_label: "ok".into(),
        };
        let recs = parse("class,tweet\ntroll,\"hello, world\"\nok,bye\n", &opts).unwrap();
        assert_eq!(recs[0].text, "hello, world");
        assert_eq!(recs[0].label, 1);
        assert_eq!(recs[1].label, 0);
    }

    #[test]
    fn quotes_are_literal_in_tsv() {
        let recs = parse("say \"hi\"\t1\n", &DatasetOptions::default()).unwrap();
        assert_eq!(recs[0].text, "say \"hi\"");
    }

    #[test]
    fn missing_file_is_validation_error() {
        let err = load_dataset(Path::new("/nonexistent/x.tsv"), &DatasetOptions::default()).unwrap_err();
        assert!(err.is_validation());
    }

    #[test]
    fn write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["d.tsv", "d.csv"] {
            let path = dir.path().join(name);
            let opts = DatasetOptions::for_path(&path);
            let recs = vec![RawRecord::new("a, \"b\"", 1).unwrap(), RawRecord::new("c", 0).unwrap()];
            write_dataset(&path, &recs, &opts).unwrap();
            assert_eq!(load_dataset(&path, &opts).unwrap(), recs);
        }
    }
}
