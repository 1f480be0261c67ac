use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row = true class, column = predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub counts: Vec<Vec<usize>>,
}

impl Confusion {
    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn support(&self, class: usize) -> usize {
        self.counts[class].iter().sum()
    }

    pub fn predicted(&self, class: usize) -> usize {
        self.counts.iter().map(|r| r[class]).sum()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.n_classes()).map(|c| self.counts[c][c]).sum()
    }

    pub fn to_csv(&self) -> String {
        let n = self.n_classes();
        let mut s = String::from("truth");
        for c in 0..n {
            s.push_str(&format!(",pred{c}"));
        }
        s.push('\n');
        for (i, row) in self.counts.iter().enumerate() {
            s.push_str(&i.to_string());
            for v in row {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }
}

fn check(pred: &[usize], truth: &[usize], n_classes: usize) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::invalid("no predictions to score"));
    }
    if pred.len() != truth.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if let Some(c) = pred.iter().chain(truth).find(|&&c| c >= n_classes) {
        return Err(Error::invalid(format!("class {c} outside 0..{n_classes}")));
    }
    Ok(())
}

pub fn confusion(pred: &[usize], truth: &[usize], n_classes: usize) -> Result<Confusion> {
    check(pred, truth, n_classes)?;
    let mut counts = vec![vec![0; n_classes]; n_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        counts[t][p] += 1;
    }
    Ok(Confusion { counts })
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(Error::invalid("accuracy needs equal, non-empty inputs"));
    }
    Ok(pred.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / pred.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class: usize,
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Scores for every class with non-zero support.
pub fn per_class_f1(cm: &Confusion) -> Vec<ClassScore> {
    (0..cm.n_classes())
        .filter(|&c| cm.support(c) > 0)
        .map(|c| {
            let tp = cm.counts[c][c] as f64;
            let support = cm.support(c);
            let predicted = cm.predicted(c);
            let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
            let recall = tp / support as f64;
            let f1 = if tp == 0.0 { 0.0 } else { 2.0 * tp / (support + predicted) as f64 };
            ClassScore { class: c, support, precision, recall, f1 }
        })
        .collect()
}

/// Unweighted mean F1 over classes present in `truth`.
pub fn macro_f1(pred: &[usize], truth: &[usize], n_classes: usize) -> Result<f64> {
    let scores = per_class_f1(&confusion(pred, truth, n_classes)?);
    Ok(scores.iter().map(|s| s.f1).sum::<f64>() / scores.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_computed_cases() {
        assert_eq!(macro_f1(&[0, 1, 2], &[0, 1, 2], 3).unwrap(), 1.0);
        assert!((macro_f1(&[0, 0, 1, 1], &[0, 1, 0, 1], 2).unwrap() - 0.5).abs() < 1e-15);
        assert!((macro_f1(&[0, 0, 0, 0], &[0, 0, 1, 1], 2).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(macro_f1(&[], &[], 2).is_err());
        assert!(macro_f1(&[0], &[0, 1], 2).is_err());
        assert!(macro_f1(&[3], &[0], 2).is_err());
    }

    #[test]
    fn zero_support_classes_are_skipped() {
        // class 2 never occurs in truth; a stray prediction still costs class 0 precision
        let f = macro_f1(&[0, 2, 1], &[0, 0, 1], 3).unwrap();
        assert!((f - (2.0 / 3.0 + 1.0) / 2.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn confusion_invariants(pairs in prop::collection::vec((0usize..5, 0usize..5), 1..200)) {
            let (pred, truth): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let cm = confusion(&pred, &truth, 5).unwrap();
            for c in 0..5 {
                prop_assert_eq!(cm.support(c), truth.iter().filter(|&&t| t == c).count());
            }
            prop_assert_eq!(cm.trace() as f64 / cm.total() as f64, accuracy(&pred, &truth).unwrap());
            let f = macro_f1(&pred, &truth, 5).unwrap();
            prop_assert!((0.0..=1.0).contains(&f));
        }

        #[test]
        fn binary_symmetric_equals_accuracy(n in 1usize..50, wrong in 0usize..50) {
            // each class has n items and the same number of errors
            let w = wrong.min(n);
            let truth: Vec<usize> = (0..2 * n).map(|i| i / n).collect();
            let pred: Vec<usize> = truth.iter().enumerate().map(|(i, &t)| if i % n < w { 1 - t } else { t }).collect();
            let f = macro_f1(&pred, &truth, 2).unwrap();
            prop_assert!((f - accuracy(&pred, &truth).unwrap()).abs() < 1e-12);
        }
    }
}
