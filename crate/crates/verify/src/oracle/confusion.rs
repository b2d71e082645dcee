//! Segmentation metrics by direct per-class pixel counting.

/// `(miou, mfdr, mfnr)`; classes with a zero denominator are left out of
/// the corresponding mean. `None` ground truth pixels are skipped.
pub fn metrics(gt: &[Option<usize>], pred: &[usize], k: usize) -> (f64, f64, f64) {
    let mut iou = Vec::new();
    let mut fdr = Vec::new();
    let mut fnr = Vec::new();
    for c in 0..k {
        let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
        for (g, &p) in gt.iter().zip(pred) {
            let Some(g) = *g else { continue };
            match (g == c, p == c) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                (false, false) => {}
            }
        }
        if tp + fp + fn_ > 0 {
            iou.push(tp as f64 / (tp + fp + fn_) as f64);
        }
        if tp + fp > 0 {
            fdr.push(fp as f64 / (tp + fp) as f64);
        }
        if tp + fn_ > 0 {
            fnr.push(fn_ as f64 / (tp + fn_) as f64);
        }
    }
    let mean = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    (mean(&iou), mean(&fdr), mean(&fnr))
}
