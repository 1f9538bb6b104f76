use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::gcn::{GcnModel, GraphSample};

/// Macro-averaged accuracy and the classes left out of the average.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub per_class: Vec<Option<f64>>,
    /// Classes with no sample; excluded from the average.
    pub excluded: Vec<usize>,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

const EVAL_BATCH: usize = 64;

/// Macro accuracy of `model` over `samples`.
pub fn evaluate(model: &GcnModel, samples: &[GraphSample]) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::Contract("evaluation on no samples".into()));
    }
    let classes = model.config.classes;
    let mut predictions = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let refs: Vec<&GraphSample> = chunk.iter().collect();
        let logits = model.forward_batch(&refs)?;
        for row in logits.data().chunks(classes) {
            predictions.push(argmax(row));
        }
    }
    macro_accuracy(&predictions, &samples.iter().map(|s| s.label).collect::<Vec<_>>(), classes)
}

/// Per-class accuracy averaged over the classes present in `labels`.
pub fn macro_accuracy(predictions: &[usize], labels: &[usize], classes: usize) -> Result<Evaluation> {
    if predictions.len() != labels.len() || labels.is_empty() {
        return Err(Error::Contract(format!("{} predictions for {} labels", predictions.len(), labels.len())));
    }
    let mut hits = vec![0usize; classes];
    let mut totals = vec![0usize; classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if l >= classes {
            return Err(Error::Contract(format!("label {l} out of range for {classes} classes")));
        }
        totals[l] += 1;
        if p == l {
            hits[l] += 1;
        }
    }
    let per_class: Vec<Option<f64>> =
        hits.iter().zip(&totals).map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64)).collect();
    let excluded = per_class.iter().enumerate().filter(|(_, a)| a.is_none()).map(|(c, _)| c).collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let accuracy = present.iter().sum::<f64>() / present.len() as f64;
    Ok(Evaluation { accuracy, per_class, excluded })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let labels = [0, 1, 2, 1];
        assert_eq!(macro_accuracy(&labels, &labels, 3).unwrap().accuracy, 1.0);
    }

    #[test]
    fn tie_break_on_uniform_logits() {
        assert_eq!(argmax(&[0.3, 0.3, 0.3]), 0);
        let labels = [0, 0, 1, 1, 2, 2];
        let preds = [argmax(&[1.0; 3]); 6];
        let e = macro_accuracy(&preds, &labels, 3).unwrap();
        assert!((e.accuracy - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn macro_equals_micro_when_balanced() {
        let labels = [0, 0, 1, 1, 2, 2];
        let preds = [0, 1, 1, 1, 0, 2];
        let e = macro_accuracy(&preds, &labels, 3).unwrap();
        let micro = preds.iter().zip(&labels).filter(|(p, l)| p == l).count() as f64 / 6.0;
        assert!((e.accuracy - micro).abs() < 1e-15);
    }

    #[test]
    fn absent_class_is_excluded() {
        let e = macro_accuracy(&[0, 1], &[0, 0], 3).unwrap();
        assert_eq!(e.excluded, vec![1, 2]);
        assert_eq!(e.accuracy, 0.5);
    }
}
