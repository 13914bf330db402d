//! Confusion matrix and derived classification metrics.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("{preds} predictions for {labels} labels")]
    LengthMismatch { preds: usize, labels: usize },
    #[error("class {0} is outside the class range")]
    ClassOutOfRange(usize),
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("{names} class names for {classes} classes")]
    NameCountMismatch { names: usize, classes: usize },
}

/// `cells[actual][predicted]` counts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub cells: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(classes: usize) -> Self {
        ConfusionMatrix { cells: vec![vec![0; classes]; classes] }
    }

    pub fn num_classes(&self) -> usize {
        self.cells.len()
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|c| self.cells[c][c]).sum()
    }

    pub fn row_sum(&self, actual: usize) -> u64 {
        self.cells[actual].iter().sum()
    }

    pub fn col_sum(&self, predicted: usize) -> u64 {
        self.cells.iter().map(|r| r[predicted]).sum()
    }
}

pub fn confusion(preds: &[usize], labels: &[usize], classes: usize) -> Result<ConfusionMatrix, MetricsError> {
    if preds.len() != labels.len() || preds.is_empty() {
        return Err(MetricsError::LengthMismatch { preds: preds.len(), labels: labels.len() });
    }
    let mut cm = ConfusionMatrix::zeros(classes);
    for (&p, &a) in preds.iter().zip(labels) {
        if p >= classes {
            return Err(MetricsError::ClassOutOfRange(p));
        }
        if a >= classes {
            return Err(MetricsError::ClassOutOfRange(a));
        }
        cm.cells[a][p] += 1;
    }
    Ok(cm)
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    Ok(cm.trace() as f64 / total as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Class never predicted: precision has a zero denominator.
    pub precision_degenerate: bool,
    /// Class never present: recall has a zero denominator.
    pub recall_degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub per_class: Vec<ClassScores>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

/// Per-class precision, recall and F1 plus their unweighted means.
/// A zero denominator scores 0 and sets the matching degenerate flag.
pub fn precision_recall_f1(cm: &ConfusionMatrix) -> Result<Scores, MetricsError> {
    if cm.total() == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let per_class: Vec<ClassScores> = (0..cm.num_classes())
        .map(|c| {
            let tp = cm.cells[c][c] as f64;
            let (col, row) = (cm.col_sum(c), cm.row_sum(c));
            let precision = if col == 0 { 0.0 } else { tp / col as f64 };
            let recall = if row == 0 { 0.0 } else { tp / row as f64 };
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassScores { precision, recall, f1, precision_degenerate: col == 0, recall_degenerate: row == 0 }
        })
        .collect();
    let n = per_class.len() as f64;
    let mean = |f: fn(&ClassScores) -> f64| per_class.iter().map(f).sum::<f64>() / n;
    Ok(Scores {
        macro_precision: mean(|s| s.precision),
        macro_recall: mean(|s| s.recall),
        macro_f1: mean(|s| s.f1),
        per_class,
    })
}

/// Everything the evaluation commands print, serializable as one document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub class_names: Vec<String>,
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub scores: Scores,
}

impl MetricReport {
    pub fn new(cm: ConfusionMatrix, names: &[String]) -> Result<Self, MetricsError> {
        if names.len() != cm.num_classes() {
            return Err(MetricsError::NameCountMismatch { names: names.len(), classes: cm.num_classes() });
        }
        Ok(MetricReport {
            class_names: names.to_vec(),
            accuracy: accuracy(&cm)?,
            scores: precision_recall_f1(&cm)?,
            confusion: cm,
        })
    }

    /// Fixed-width text table: the confusion matrix followed by per-class
    /// and macro scores.
    pub fn render_text(&self) -> String {
        let width = self.class_names.iter().map(String::len).max().unwrap_or(0).max(9);
        let mut out = String::new();
        let _ = write!(out, "{:>width$}", "actual\\pred");
        for n in &self.class_names {
            let _ = write!(out, " {n:>width$}");
        }
        out.push('\n');
        for (name, row) in self.class_names.iter().zip(&self.confusion.cells) {
            let _ = write!(out, "{name:>width$}");
            for v in row {
                let _ = write!(out, " {v:>width$}");
            }
            out.push('\n');
        }
        out.push('\n');
        let _ = writeln!(out, "{:>width$} {:>9} {:>9} {:>9}", "class", "precision", "recall", "f1");
        for (name, s) in self.class_names.iter().zip(&self.scores.per_class) {
            let flag = if s.precision_degenerate || s.recall_degenerate { " *" } else { "" };
            let _ = writeln!(
                out,
                "{name:>width$} {:>9.4} {:>9.4} {:>9.4}{flag}",
                s.precision, s.recall, s.f1
            );
        }
        let _ = writeln!(
            out,
            "{:>width$} {:>9.4} {:>9.4} {:>9.4}",
            "macro", self.scores.macro_precision, self.scores.macro_recall, self.scores.macro_f1
        );
        let _ = writeln!(out, "{:>width$} {:>9.4}", "accuracy", self.accuracy);
        if self.scores.per_class.iter().any(|s| s.precision_degenerate || s.recall_degenerate) {
            out.push_str(&format!("{:>width$}\n", "* zero denominator scored as 0"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cm(cells: &[&[u64]]) -> ConfusionMatrix {
        ConfusionMatrix { cells: cells.iter().map(|r| r.to_vec()).collect() }
    }

    #[test]
    fn confusion_basic() {
        let m = confusion(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
        assert_eq!(m, cm(&[&[1, 0, 0], &[0, 1, 0], &[0, 0, 1]]));
        let m = confusion(&[1, 1], &[0, 1], 2).unwrap();
        assert_eq!(m.cells[0][1], 1);
        assert_eq!(m.cells[1][1], 1);
        assert_eq!(m.total(), 2);
        assert!(matches!(confusion(&[0], &[0, 1], 2), Err(MetricsError::LengthMismatch { .. })));
        assert!(matches!(confusion(&[], &[], 2), Err(MetricsError::LengthMismatch { .. })));
        assert_eq!(confusion(&[3], &[0], 2), Err(MetricsError::ClassOutOfRange(3)));
    }

    #[test]
    fn confusion_matches_tally() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let preds: Vec<usize> = (0..1000).map(|_| rng.gen_range(0..4)).collect();
        let labels: Vec<usize> = (0..1000).map(|_| rng.gen_range(0..4)).collect();
        let m = confusion(&preds, &labels, 4).unwrap();
        for a in 0..4 {
            for p in 0..4 {
                let tally = preds.iter().zip(&labels).filter(|&(&pp, &aa)| pp == p && aa == a).count();
                assert_eq!(m.cells[a][p], tally as u64);
            }
        }
    }

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy(&cm(&[&[5, 0], &[0, 5]])).unwrap(), 1.0);
        assert_eq!(accuracy(&cm(&[&[8, 2], &[1, 9]])).unwrap(), 0.85);
        assert_eq!(accuracy(&cm(&[&[0, 3], &[4, 0]])).unwrap(), 0.0);
        assert_eq!(accuracy(&ConfusionMatrix::zeros(2)), Err(MetricsError::EmptyMatrix));
    }

    #[test]
    fn score_cases() {
        let s = precision_recall_f1(&cm(&[&[3, 0], &[0, 4]])).unwrap();
        assert!(s.per_class.iter().all(|c| c.precision == 1.0 && c.recall == 1.0 && c.f1 == 1.0));
        // precision 1.0, recall 0.9 on class 0
        let s = precision_recall_f1(&cm(&[&[9, 1], &[0, 10]])).unwrap();
        let c0 = &s.per_class[0];
        assert_eq!((c0.precision, c0.recall), (1.0, 0.9));
        assert!((c0.f1 - 1.8 / 1.9).abs() < 1e-15);
        assert!((c0.f1 - 0.9474).abs() < 1e-4);
        // class 1 never predicted
        let s = precision_recall_f1(&cm(&[&[4, 0], &[2, 0]])).unwrap();
        assert_eq!(s.per_class[1].precision, 0.0);
        assert!(s.per_class[1].precision_degenerate);
        assert_eq!(s.per_class[1].f1, 0.0);
    }

    #[test]
    fn report_rendering() {
        let names: Vec<String> = vec!["free_flow".into(), "congested".into()];
        let r = MetricReport::new(cm(&[&[8, 2], &[1, 9]]), &names).unwrap();
        assert_eq!(r.render_text(), r.clone().render_text());
        assert!(r.render_text().contains("accuracy"));
        let mp = (r.scores.per_class[0].precision + r.scores.per_class[1].precision) / 2.0;
        assert!((r.scores.macro_precision - mp).abs() < 1e-15);
        assert!(matches!(
            MetricReport::new(cm(&[&[1]]), &names),
            Err(MetricsError::NameCountMismatch { .. })
        ));
    }

    proptest! {
        #[test]
        fn identities(pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..200)) {
            let (preds, labels): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let m = confusion(&preds, &labels, 4).unwrap();
            let acc = accuracy(&m).unwrap();
            prop_assert!((0.0..=1.0).contains(&acc));
            let offdiag: u64 = m.total() - m.trace();
            prop_assert_eq!(acc == 1.0, offdiag == 0);
            // micro-averaged recall equals accuracy
            let tp: u64 = (0..4).map(|c| m.cells[c][c]).sum();
            let support: u64 = (0..4).map(|c| m.row_sum(c)).sum();
            prop_assert_eq!(tp as f64 / support as f64, acc);
            let s = precision_recall_f1(&m).unwrap();
            for (c, cs) in s.per_class.iter().enumerate() {
                prop_assert!(cs.f1 >= 0.0);
                prop_assert!(cs.f1 <= cs.precision.max(cs.recall) + 1e-15);
                prop_assert_eq!(cs.f1 == 0.0, cs.precision + cs.recall == 0.0 || m.cells[c][c] == 0);
            }
        }
    }
}
