//! Threshold metrics, ROC curves and AUC.

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Threshold used for accuracy, precision, recall and F1.
pub const DECISION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredExample {
    pub score: f64,
    pub label: u8,
}

impl ScoredExample {
    pub fn new(score: f64, label: u8) -> Self {
        ScoredExample { score, label }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when precision, recall or F1 had a zero denominator and was
    /// reported as 0.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: f64,
    pub degenerate: bool,
}

/// `(false-positive rate, true-positive rate)` points from `(0,0)` to `(1,1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<(f64, f64)>,
}

impl RocCurve {
    pub fn trapezoid_area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
            .sum()
    }
}

fn check_scores(scored: &[ScoredExample]) -> Result<()> {
    if scored.is_empty() {
        return Err(Error::Empty("scored examples"));
    }
    if let Some(s) = scored.iter().find(|s| !s.score.is_finite()) {
        return Err(Error::NonFinite(alloc::format!("score {}", s.score)));
    }
    Ok(())
}

/// Predicts positive iff `score ≥ threshold`.
pub fn confusion(scored: &[ScoredExample], threshold: f64) -> Result<ConfusionMatrix> {
    check_scores(scored)?;
    let mut cm = ConfusionMatrix::default();
    for s in scored {
        match (s.score >= threshold, s.label == 1) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, false) => cm.tn += 1,
            (false, true) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

pub fn classification_metrics(cm: &ConfusionMatrix) -> ClassificationMetrics {
    let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
    let accuracy = ratio(cm.tp + cm.tn, cm.total());
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let recall = ratio(cm.tp, cm.tp + cm.fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    ClassificationMetrics {
        accuracy: accuracy.unwrap_or(0.0),
        precision: precision.unwrap_or(0.0),
        recall: recall.unwrap_or(0.0),
        f1: f1.unwrap_or(0.0),
        degenerate: accuracy.is_none() || precision.is_none() || recall.is_none() || f1.is_none(),
    }
}

fn class_counts(scored: &[ScoredExample]) -> Result<(usize, usize)> {
    check_scores(scored)?;
    let pos = scored.iter().filter(|s| s.label == 1).count();
    let neg = scored.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    Ok((pos, neg))
}

/// One point per distinct score, swept from high to low, after the `(0,0)`
/// point of an infinite threshold.
pub fn roc_curve(scored: &[ScoredExample]) -> Result<RocCurve> {
    let (pos, neg) = class_counts(scored)?;
    let mut sorted: Vec<ScoredExample> = scored.to_vec();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut points = Vec::with_capacity(sorted.len() + 1);
    points.push((0.0, 0.0));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let s = sorted[i].score;
        while i < sorted.len() && sorted[i].score == s {
            if sorted[i].label == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(RocCurve { points })
}

/// Fraction of (positive, negative) pairs ranked correctly, ties counting
/// one half.
pub fn pairwise_auc(scored: &[ScoredExample]) -> Result<f64> {
    let (pos, neg) = class_counts(scored)?;
    let mut negatives: Vec<f64> = scored.iter().filter(|s| s.label != 1).map(|s| s.score).collect();
    negatives.sort_by(f64::total_cmp);
    let mut twice_wins: u64 = 0;
    for p in scored.iter().filter(|s| s.label == 1) {
        let below = negatives.partition_point(|&n| n < p.score);
        let tied = negatives.partition_point(|&n| n <= p.score) - below;
        twice_wins += 2 * below as u64 + tied as u64;
    }
    Ok(twice_wins as f64 / (2.0 * pos as f64 * neg as f64))
}

/// Pairwise AUC, cross-checked against the trapezoidal area under the ROC curve.
pub fn auc(scored: &[ScoredExample]) -> Result<f64> {
    let pairwise = pairwise_auc(scored)?;
    debug_assert!(
        (pairwise - roc_curve(scored)?.trapezoid_area()).abs() < 1e-9,
        "pairwise and trapezoidal AUC disagree"
    );
    Ok(pairwise)
}

/// Threshold metrics at [`DECISION_THRESHOLD`] plus AUC.
pub fn evaluate(scored: &[ScoredExample]) -> Result<MetricsReport> {
    let m = classification_metrics(&confusion(scored, DECISION_THRESHOLD)?);
    Ok(MetricsReport {
        accuracy: m.accuracy,
        precision: m.precision,
        recall: m.recall,
        f1: m.f1,
        auc: auc(scored)?,
        degenerate: m.degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use num_rational::Ratio;
    use proptest::prelude::*;

    fn scored(pos: &[f64], neg: &[f64]) -> Vec<ScoredExample> {
        pos.iter()
            .map(|&s| ScoredExample::new(s, 1))
            .chain(neg.iter().map(|&s| ScoredExample::new(s, 0)))
            .collect()
    }

    #[test]
    fn confusion_examples() {
        let s = scored(&[0.9], &[0.2]);
        assert_eq!(confusion(&s, 0.5).unwrap(), ConfusionMatrix { tp: 1, fp: 0, tn: 1, fn_: 0 });
        let s = scored(&[0.9, 0.1], &[0.2, 0.0, 0.7]);
        let all_pos = confusion(&s, 0.0).unwrap();
        assert_eq!((all_pos.fp, all_pos.fn_), (3, 0));
        let all_neg = confusion(&s, 1.5).unwrap();
        assert_eq!((all_neg.tp, all_neg.fp), (0, 0));
        assert_eq!(confusion(&[], 0.5), Err(Error::Empty("scored examples")));
    }

    #[test]
    fn metric_examples() {
        let m = classification_metrics(&ConfusionMatrix { tp: 3, tn: 2, fp: 1, fn_: 2 });
        assert_eq!(m.accuracy, 0.625);
        assert_eq!(m.precision, 0.75);
        assert!((m.recall - 0.6).abs() < 1e-15);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!(!m.degenerate);

        let m = classification_metrics(&ConfusionMatrix { tp: 0, tn: 5, fp: 0, fn_: 0 });
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 0.0, 0.0, 0.0));
        assert!(m.degenerate);

        let m = classification_metrics(&ConfusionMatrix { tp: 4, tn: 7, fp: 0, fn_: 0 });
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn roc_examples() {
        let r = roc_curve(&scored(&[0.9], &[0.1])).unwrap();
        assert_eq!(r.points, vec![(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]);
        let r = roc_curve(&scored(&[0.4, 0.4], &[0.4])).unwrap();
        assert_eq!(r.points, vec![(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(roc_curve(&scored(&[0.4], &[])), Err(Error::SingleClass));
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&scored(&[0.9, 0.8], &[0.7, 0.1])).unwrap(), 1.0);
        assert_eq!(auc(&scored(&[0.6], &[0.6])).unwrap(), 0.5);
        assert_eq!(auc(&scored(&[0.8, 0.4], &[0.6, 0.2])).unwrap(), 0.75);
        assert_eq!(auc(&scored(&[], &[0.6])), Err(Error::SingleClass));
    }

    fn rational_oracle(cm: &ConfusionMatrix) -> [Option<Ratio<u64>>; 4] {
        let r = |n: u64, d: u64| (d > 0).then(|| Ratio::new(n, d));
        let p = r(cm.tp, cm.tp + cm.fp);
        let rec = r(cm.tp, cm.tp + cm.fn_);
        let f1 = match (p, rec) {
            (Some(p), Some(q)) if p + q > Ratio::from_integer(0) => Some(Ratio::from_integer(2) * p * q / (p + q)),
            _ => None,
        };
        [r(cm.tp + cm.tn, cm.total()), p, rec, f1]
    }

    fn round12(x: f64) -> f64 {
        (x * 1e12).round() / 1e12
    }

    fn labelled(data: &[(u8, u8)]) -> Vec<ScoredExample> {
        data.iter().map(|&(s, l)| ScoredExample::new(s as f64 / 10.0, l)).collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn metrics_match_rational_oracle(tp in 0u64..500, fp in 0u64..500, tn in 0u64..500, fn_ in 0u64..500) {
            prop_assume!(tp + fp + tn + fn_ > 0);
            let cm = ConfusionMatrix { tp, fp, tn, fn_ };
            let m = classification_metrics(&cm);
            let oracle = rational_oracle(&cm);
            let got = [m.accuracy, m.precision, m.recall, m.f1];
            for (g, o) in got.iter().zip(oracle) {
                let want = o.map_or(0.0, |r| *r.numer() as f64 / *r.denom() as f64);
                prop_assert_eq!(round12(*g), round12(want));
            }
            prop_assert_eq!(m.degenerate, oracle.iter().any(Option::is_none));
            if m.precision > 0.0 && m.recall > 0.0 {
                prop_assert!(m.f1 >= m.precision.min(m.recall) - 1e-15);
                prop_assert!(m.f1 <= m.precision.max(m.recall) + 1e-15);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]

        #[test]
        fn pairwise_matches_trapezoid_and_brute_force(data in proptest::collection::vec((0u8..=10, 0u8..=1), 2..=50)) {
            let s = labelled(&data);
            prop_assume!(s.iter().any(|e| e.label == 1) && s.iter().any(|e| e.label == 0));
            let pairwise = pairwise_auc(&s).unwrap();
            prop_assert!((pairwise - roc_curve(&s).unwrap().trapezoid_area()).abs() < 1e-9);
            let mut wins = 0.0;
            let mut pairs = 0.0;
            for p in s.iter().filter(|e| e.label == 1) {
                for n in s.iter().filter(|e| e.label == 0) {
                    pairs += 1.0;
                    wins += if p.score > n.score { 1.0 } else if p.score == n.score { 0.5 } else { 0.0 };
                }
            }
            prop_assert!((pairwise - wins / pairs).abs() < 1e-12);
        }

        #[test]
        fn auc_is_a_rank_statistic(data in proptest::collection::vec((0u8..=10, 0u8..=1), 2..=50)) {
            let s = labelled(&data);
            prop_assume!(s.iter().any(|e| e.label == 1) && s.iter().any(|e| e.label == 0));
            let a = auc(&s).unwrap();
            let transformed: Vec<ScoredExample> = s.iter().map(|e| ScoredExample::new(e.score.powi(3) * 7.0 - 2.0, e.label)).collect();
            prop_assert_eq!(a, auc(&transformed).unwrap());
            let flipped: Vec<ScoredExample> = s.iter().map(|e| ScoredExample::new(e.score, 1 - e.label)).collect();
            prop_assert!((a + auc(&flipped).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn roc_is_monotone(data in proptest::collection::vec((0u8..=10, 0u8..=1), 2..=50)) {
            let s = labelled(&data);
            prop_assume!(s.iter().any(|e| e.label == 1) && s.iter().any(|e| e.label == 0));
            let r = roc_curve(&s).unwrap();
            prop_assert_eq!(r.points[0], (0.0, 0.0));
            prop_assert_eq!(*r.points.last().unwrap(), (1.0, 1.0));
            for w in r.points.windows(2) {
                prop_assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
            }
        }

        #[test]
        fn balanced_accuracy_identity(scores in proptest::collection::vec(0.0f64..1.0, 2..=60)) {
            let n = scores.len() / 2;
            prop_assume!(n > 0);
            let s: Vec<ScoredExample> = scores[..2 * n]
                .iter()
                .enumerate()
                .map(|(i, &v)| ScoredExample::new(v, (i < n) as u8))
                .collect();
            let cm = confusion(&s, DECISION_THRESHOLD).unwrap();
            let tpr = cm.tp as f64 / n as f64;
            let tnr = cm.tn as f64 / n as f64;
            prop_assert!((classification_metrics(&cm).accuracy - (tpr + tnr) / 2.0).abs() < 1e-12);
        }
    }
}
