//! Embedding × encoder result tables in markdown and CSV.

use std::fmt::Write as _;

use trollnet_core::metrics::MetricsReport;

#[derive(Debug, Clone, PartialEq)]
pub struct TableCell {
    pub embedding: String,
    pub encoder: String,
    /// Test metrics, or the reason the cell failed.
    pub outcome: Result<MetricsReport, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Marker {
    None,
    Best,
    Worst,
    /// A table with a single successful cell.
    BestAndWorst,
}

impl Marker {
    pub fn label(self) -> &'static str {
        match self {
            Marker::None => "",
            Marker::Best => "best",
            Marker::Worst => "worst",
            Marker::BestAndWorst => "best+worst",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Markdown,
    Csv,
}

/// Cells in row-major order: grouped by embedding, then encoder.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultsTable {
    pub cells: Vec<TableCell>,
}

impl ResultsTable {
    pub fn new(cells: Vec<TableCell>) -> Self {
        ResultsTable { cells }
    }

    fn auc_extreme(&self, better: impl Fn(f64, f64) -> bool) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, c) in self.cells.iter().enumerate() {
            if let Ok(m) = &c.outcome {
                if best.is_none_or(|(_, b)| better(m.auc, b)) {
                    best = Some((i, m.auc));
                }
            }
        }
        best.map(|(i, _)| i)
    }

    /// Index of the highest AUC among successful cells; the first wins ties.
    pub fn best(&self) -> Option<usize> {
        self.auc_extreme(|a, b| a > b)
    }

    pub fn worst(&self) -> Option<usize> {
        self.auc_extreme(|a, b| a < b)
    }

    pub fn markers(&self) -> Vec<Marker> {
        let (best, worst) = (self.best(), self.worst());
        (0..self.cells.len())
            .map(|i| match (best == Some(i), worst == Some(i)) {
                (true, true) => Marker::BestAndWorst,
                (true, false) => Marker::Best,
                (false, true) => Marker::Worst,
                _ => Marker::None,
            })
            .collect()
    }

    pub fn emit(&self, format: TableFormat) -> String {
        match format {
            TableFormat::Markdown => self.markdown(),
            TableFormat::Csv => self.csv(),
        }
    }

    fn markdown(&self) -> String {
        let mut out = String::from(
            "| Embedding | Encoder | Accuracy | Precision | Recall | F1 | AUC | Marker |\n\
             |---|---|---:|---:|---:|---:|---:|---|\n",
        );
        let esc = |s: &str| s.replace('|', "\\|").replace('\n', " ");
        for (cell, marker) in self.cells.iter().zip(self.markers()) {
            let (emb, enc) = (esc(&cell.embedding), esc(&cell.encoder));
            match &cell.outcome {
                Ok(m) => {
                    let auc = match marker {
                        Marker::Best => format!("**{:.3}**", m.auc),
                        Marker::Worst => format!("*{:.3}*", m.auc),
                        Marker::BestAndWorst => format!("***{:.3}***", m.auc),
                        Marker::None => format!("{:.3}", m.auc),
                    };
                    let _ = writeln!(
                        out,
                        "| {emb} | {enc} | {:.3} | {:.3} | {:.3} | {:.3} | {auc} | {} |",
                        m.accuracy,
                        m.precision,
                        m.recall,
                        m.f1,
                        marker.label()
                    );
                }
                Err(msg) => {
                    let _ = writeln!(out, "| {emb} | {enc} | - | - | - | - | - | failed: {} |", esc(msg));
                }
            }
        }
        out
    }

    fn csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header = ["embedding", "encoder", "accuracy", "precision", "recall", "f1", "auc", "marker", "status"];
        w.write_record(header).expect("in-memory write");
        for (cell, marker) in self.cells.iter().zip(self.markers()) {
            let row: Vec<String> = match &cell.outcome {
                Ok(m) => [m.accuracy, m.precision, m.recall, m.f1, m.auc]
                    .iter()
                    .map(|v| format!("{v:.3}"))
                    .chain([marker.label().to_string(), "ok".to_string()])
                    .collect(),
                Err(msg) => vec![String::new(); 6].into_iter().chain([format!("failed: {msg}")]).collect(),
            };
            let mut record = vec![cell.embedding.clone(), cell.encoder.clone()];
            record.extend(row);
            w.write_record(&record).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is UTF-8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn report(auc: f64) -> MetricsReport {
        MetricsReport {
            accuracy: 0.5,
            precision: 0.25,
            recall: 1.0,
            f1: 0.4,
            auc,
            degenerate: false,
        }
    }

    fn cell(emb: &str, enc: &str, outcome: Result<MetricsReport, String>) -> TableCell {
        TableCell {
            embedding: emb.into(),
            encoder: enc.into(),
            outcome,
        }
    }

    #[test]
    fn single_cell_is_best_and_worst() {
        let t = ResultsTable::new(vec![cell("e", "c", Ok(report(0.7)))]);
        assert_eq!(t.markers(), vec![Marker::BestAndWorst]);
        assert!(t.emit(TableFormat::Markdown).contains("***0.700***"));
    }

    #[test]
    fn failed_cells_are_skipped_by_markers() {
        let t = ResultsTable::new(vec![
            cell("e", "a", Err("training diverged | at epoch 0".into())),
            cell("e", "b", Ok(report(0.9))),
            cell("e", "c", Ok(report(0.6))),
        ]);
        assert_eq!(t.markers(), vec![Marker::None, Marker::Best, Marker::Worst]);
        let md = t.emit(TableFormat::Markdown);
        assert!(md.contains("failed: training diverged \\| at epoch 0"));
        let csv = t.emit(TableFormat::Csv);
        assert_eq!(csv.lines().nth(1).unwrap(), "e,a,,,,,,,failed: training diverged | at epoch 0");
        assert_eq!(csv.lines().nth(2).unwrap(), "e,b,0.500,0.250,1.000,0.400,0.900,best,ok");
    }

    #[test]
    fn ties_go_to_first_cell() {
        let t = ResultsTable::new(vec![
            cell("x", "a", Ok(report(0.8))),
            cell("x", "b", Ok(report(0.8))),
            cell("y", "a", Ok(report(0.8))),
        ]);
        assert_eq!(t.markers(), vec![Marker::BestAndWorst, Marker::None, Marker::None]);
    }

    proptest! {
        #[test]
        fn markers_track_argmax_and_argmin(aucs in proptest::collection::vec(0u8..6, 1..10)) {
            let aucs: Vec<f64> = aucs.iter().map(|&a| a as f64 / 5.0).collect();
            let t = ResultsTable::new(aucs.iter().map(|&a| cell("e", "c", Ok(report(a)))).collect());
            let max = aucs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let min = aucs.iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assert_eq!(t.best(), aucs.iter().position(|&a| a == max));
            prop_assert_eq!(t.worst(), aucs.iter().position(|&a| a == min));
            prop_assert_eq!(t.emit(TableFormat::Csv), t.clone().emit(TableFormat::Csv));
            prop_assert_eq!(t.emit(TableFormat::Markdown).lines().count(), aucs.len() + 2);
        }
    }
}
