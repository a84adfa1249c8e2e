use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::IGNORE_LABEL;

/// Rows are ground truth, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub num_classes: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    /// Adds `(label, prediction)` pairs; ignore labels are skipped.
    pub fn add(&mut self, labels: &[i32], preds: &[usize]) -> Result<()> {
        if labels.len() != preds.len() {
            return Err(Error::dim(format!("{} labels vs {} predictions", labels.len(), preds.len())));
        }
        let c = self.num_classes;
        for (&l, &p) in labels.iter().zip(preds) {
            if l == IGNORE_LABEL {
                continue;
            }
            if l < 0 || l as usize >= c || p >= c {
                return Err(Error::Domain(format!("class pair ({l}, {p}) outside 0..{c}")));
            }
            self.counts[l as usize * c + p] += 1;
        }
        Ok(())
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.num_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `TP / (TP + FP + FN)` per class; `None` when the class appears in
    /// neither ground truth nor predictions.
    pub fn iou(&self) -> Vec<Option<f64>> {
        let c = self.num_classes;
        (0..c)
            .map(|k| {
                let tp = self.get(k, k);
                let fn_: u64 = (0..c).filter(|&j| j != k).map(|j| self.get(k, j)).sum();
                let fp: u64 = (0..c).filter(|&j| j != k).map(|j| self.get(j, k)).sum();
                let denom = tp + fp + fn_;
                (denom > 0).then(|| tp as f64 / denom as f64)
            })
            .collect()
    }

    /// Mean IoU over classes present in the ground truth.
    pub fn miou(&self) -> Option<f64> {
        let c = self.num_classes;
        let iou = self.iou();
        let present: Vec<f64> = (0..c)
            .filter(|&k| (0..c).any(|j| self.get(k, j) > 0))
            .map(|k| iou[k].unwrap_or(0.0))
            .collect();
        (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
    }
}

pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let mut m = ConfusionMatrix::new(3);
        m.add(&[0, 1, 2, 2, -1], &[0, 1, 2, 2, 0]).unwrap();
        assert_eq!(m.iou(), vec![Some(1.0); 3]);
        assert_eq!(m.miou(), Some(1.0));
        assert_eq!(m.total(), 4);
    }

    #[test]
    fn binary_always_zero() {
        let mut m = ConfusionMatrix::new(2);
        m.add(&[0, 0, 1, 1], &[0, 0, 0, 0]).unwrap();
        // class 0: TP 2, FP 2 → 0.5; class 1: TP 0, FN 2 → 0
        assert_eq!(m.iou(), vec![Some(0.5), Some(0.0)]);
        assert_eq!(m.miou(), Some(0.25));
    }

    #[test]
    fn absent_class_excluded() {
        let mut m = ConfusionMatrix::new(4);
        m.add(&[0, 1], &[0, 1]).unwrap();
        assert_eq!(m.iou()[3], None);
        assert_eq!(m.miou(), Some(1.0));
        // predicted but absent from ground truth: IoU 0, excluded from the mean
        m.add(&[0], &[2]).unwrap();
        assert_eq!(m.iou()[2], Some(0.0));
        assert_eq!(m.miou(), Some((0.5 + 1.0) / 2.0));
    }

    #[test]
    fn argmax_prefers_first_maximum() {
        assert_eq!(argmax(&[0.1, 0.5, 0.5]), 1);
    }
}
