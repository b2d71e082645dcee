//! Confusion counting and the segmentation metrics derived from it.

use crate::error::{Error, Result};

/// Ground-truth-by-prediction pixel counts over `k` classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionAccumulator {
    k: usize,
    counts: Vec<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub miou: f64,
    pub mfdr: f64,
    pub mfnr: f64,
}

impl ConfusionAccumulator {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    /// Count of pixels with ground truth `gt` predicted as `pred`.
    pub fn count(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one image; pixels whose ground truth is `None` are skipped.
    pub fn add(&mut self, gt: &[Option<usize>], pred: &[usize]) -> Result<()> {
        if gt.len() != pred.len() {
            return Err(Error::dim(
                "confusion",
                format!("{} ground-truth pixels vs {} predictions", gt.len(), pred.len()),
            ));
        }
        for (g, &p) in gt.iter().zip(pred) {
            let Some(g) = *g else { continue };
            if g >= self.k || p >= self.k {
                return Err(Error::dim(
                    "confusion",
                    format!("label pair ({g}, {p}) outside {} classes", self.k),
                ));
            }
            self.counts[g * self.k + p] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.k != self.k {
            return Err(Error::Contract(format!(
                "cannot merge {} classes into {}",
                other.k, self.k
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// `(tp, fp, fn)` of class `c`.
    pub fn class_counts(&self, c: usize) -> (u64, u64, u64) {
        let tp = self.count(c, c);
        let col: u64 = (0..self.k).map(|g| self.count(g, c)).sum();
        let row: u64 = (0..self.k).map(|p| self.count(c, p)).sum();
        (tp, col - tp, row - tp)
    }

    /// Per-class IoU; `None` where the class never occurs in either map.
    pub fn class_iou(&self) -> Vec<Option<f64>> {
        (0..self.k)
            .map(|c| {
                let (tp, fp, fnn) = self.class_counts(c);
                ratio(tp, tp + fp + fnn)
            })
            .collect()
    }

    /// Mean IoU, false discovery rate and false negative rate. Each mean
    /// skips classes whose denominator is zero.
    pub fn metrics(&self) -> Result<Metrics> {
        if self.total() == 0 {
            return Err(Error::Contract("metrics of an empty confusion matrix".into()));
        }
        let mut iou = Vec::new();
        let mut fdr = Vec::new();
        let mut fnr = Vec::new();
        for c in 0..self.k {
            let (tp, fp, fnn) = self.class_counts(c);
            iou.extend(ratio(tp, tp + fp + fnn));
            fdr.extend(ratio(fp, tp + fp));
            fnr.extend(ratio(fnn, tp + fnn));
        }
        Ok(Metrics {
            miou: mean(&iou),
            mfdr: mean(&fdr),
            mfnr: mean(&fnr),
        })
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}
