//! Training objectives.
//!
//! Every per-view map is channel-last (`h x w x k`). Distances between views
//! are L1: summed over the selected channels, averaged over pixels, then
//! averaged over view pairs.

use crate::error::{Error, Result};
use crate::label::LabelMap;
use crate::tensor::Var;
use crate::transforms::GeomTransform;

/// Denominator offset in normalized global weighted pooling.
pub const NGWP_EPS: f64 = 1e-4;
/// Exponent of the focal mask penalty.
pub const FOCAL_POWER: i32 = 3;
/// Offset inside the focal penalty's logarithm.
pub const FOCAL_OFFSET: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub seg: f64,
    pub cls: f64,
    pub reg: f64,
    /// Epochs at the start of training during which `seg` is forced to 0.
    pub warmup_epochs: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            seg: 1.0,
            cls: 1.0,
            reg: 4.0,
            warmup_epochs: 5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("seg", self.seg), ("cls", self.cls), ("reg", self.reg)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Parameter(format!(
                    "loss weight {name} must be nonnegative and finite, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// The weights in force during `epoch` (0-based).
    pub fn at_epoch(&self, epoch: usize) -> Self {
        let mut w = *self;
        if epoch < self.warmup_epochs {
            w.seg = 0.0;
        }
        w
    }
}

/// Unweighted loss terms of one sample.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms<'t> {
    pub seg: Var<'t>,
    pub cls: Var<'t>,
    pub reg_mask: Var<'t>,
    pub reg_fact: Var<'t>,
}

impl<'t> LossTerms<'t> {
    /// `seg*w.seg + cls*w.cls + (reg_mask + reg_fact)*w.reg`.
    pub fn total(&self, w: &LossWeights) -> Result<Var<'t>> {
        let seg = self.seg.mul_scalar(w.seg)?;
        let cls = self.cls.mul_scalar(w.cls)?;
        let reg = self.reg_mask.add(self.reg_fact)?.mul_scalar(w.reg)?;
        seg.add(cls)?.add(reg)
    }
}

fn pixels_by_classes(op: &'static str, x: Var<'_>) -> Result<[usize; 2]> {
    match x.shape()[..] {
        [h, w, k] => Ok([h * w, k]),
        ref s => Err(Error::dim(op, format!("expected h x w x k, got {s:?}"))),
    }
}

/// Cross entropy averaged over the non-ignored pixels of each view and
/// summed over views.
pub fn seg_loss<'t>(logits: &[Var<'t>], targets: &[LabelMap]) -> Result<Var<'t>> {
    if logits.is_empty() || logits.len() != targets.len() {
        return Err(Error::Contract(format!(
            "{} prediction maps for {} targets",
            logits.len(),
            targets.len()
        )));
    }
    let mut total: Option<Var<'t>> = None;
    for (&l, t) in logits.iter().zip(targets) {
        let [n, k] = pixels_by_classes("seg_loss", l)?;
        if [t.height(), t.width()] != l.shape()[..2] {
            return Err(Error::dim(
                "seg_loss",
                format!("target {}x{} for logits {:?}", t.height(), t.width(), l.shape()),
            ));
        }
        let ce = l.reshape(&[n, k])?.cross_entropy(t.labels())?;
        total = Some(match total {
            None => ce,
            Some(acc) => acc.add(ce)?,
        });
    }
    Ok(total.unwrap())
}

/// Image-level scores for the foreground classes `1..k`: normalized global
/// weighted pooling of the logits under their own softmax mask, plus the
/// focal mask penalty.
pub fn class_scores<'t>(logits: Var<'t>) -> Result<Var<'t>> {
    let [n, k] = pixels_by_classes("class_scores", logits)?;
    if k < 2 {
        return Err(Error::dim("class_scores", "need a background and at least one class"));
    }
    let foreground: Vec<usize> = (1..k).collect();
    let flat = logits.reshape(&[n, k])?;
    let mask = flat.softmax(1, 1.0)?.select_last(&foreground)?;
    let scores = flat.select_last(&foreground)?;
    let pooled = mask
        .mul(scores)?
        .sum_axis(0)?
        .div(mask.sum_axis(0)?.add_scalar(NGWP_EPS)?)?;
    let mean = mask.mean_axis(0)?;
    let focal = mean
        .neg()?
        .add_scalar(1.0)?
        .powi(FOCAL_POWER)?
        .mul(mean.add_scalar(FOCAL_OFFSET)?.ln()?)?;
    pooled.add(focal)
}

/// Binary cross entropy of [`class_scores`] against the multi-hot
/// foreground labels `y`, summed over classes and views.
pub fn cls_loss<'t>(logits: &[Var<'t>], y: &[f64]) -> Result<Var<'t>> {
    if logits.is_empty() {
        return Err(Error::Contract("no prediction maps".into()));
    }
    let mut total: Option<Var<'t>> = None;
    for &l in logits {
        let bce = class_scores(l)?.bce_with_logits(y)?;
        total = Some(match total {
            None => bce,
            Some(acc) => acc.add(bce)?,
        });
    }
    Ok(total.unwrap())
}

/// Mean L1 distance over all ordered pairs of equally shaped maps. Zero
/// for fewer than two maps.
pub fn pairwise_l1<'t>(maps: &[Var<'t>]) -> Result<Var<'t>> {
    let first = maps
        .first()
        .ok_or_else(|| Error::Contract("pairwise distance of an empty map list".into()))?;
    let shape = first.shape();
    let pixels = match shape[..] {
        [h, w, _] => h * w,
        _ => return Err(Error::dim("pairwise_l1", format!("expected h x w x c, got {shape:?}"))),
    };
    if maps.len() < 2 {
        return Ok(first.tape().constant(crate::Tensor::scalar(0.0)));
    }
    // |a - b| is symmetric, so each unordered pair stands for two ordered ones.
    let mut total: Option<Var<'t>> = None;
    let mut pairs = 0usize;
    for (i, &a) in maps.iter().enumerate() {
        for &b in &maps[i + 1..] {
            let d = a.sub(b)?.abs()?.sum()?;
            total = Some(match total {
                None => d,
                Some(acc) => acc.add(d)?,
            });
            pairs += 1;
        }
    }
    total.unwrap().mul_scalar(1.0 / (pairs * pixels) as f64)
}

/// Cross-view consistency of mask predictions: every map is brought back to
/// the source frame of size `target`, restricted to `classes`, and compared
/// pairwise with [`pairwise_l1`]. Zero when `classes` is empty or there is
/// a single view.
pub fn mask_consistency_loss<'t>(
    masks: &[Var<'t>],
    geoms: &[GeomTransform],
    target: [usize; 2],
    classes: &[usize],
) -> Result<Var<'t>> {
    if masks.is_empty() || masks.len() != geoms.len() {
        return Err(Error::Contract(format!(
            "{} mask maps but {} transforms",
            masks.len(),
            geoms.len()
        )));
    }
    if classes.is_empty() || masks.len() < 2 {
        return Ok(masks[0].tape().constant(crate::Tensor::scalar(0.0)));
    }
    let aligned = masks
        .iter()
        .zip(geoms)
        .map(|(&m, g)| g.invert(m, target)?.select_last(classes))
        .collect::<Result<Vec<_>>>()?;
    pairwise_l1(&aligned)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Tape, Tensor};

    #[test]
    fn warmup_zeroes_seg_only() {
        let w = LossWeights::default();
        assert_eq!(w.at_epoch(0).seg, 0.0);
        assert_eq!(w.at_epoch(4).seg, 0.0);
        assert_eq!(w.at_epoch(5), w);
        assert_eq!(w.at_epoch(0).reg, 4.0);
    }

    #[test]
    fn seg_loss_uniform_and_saturated() {
        let tape = Tape::new();
        let k = 4;
        let uniform = tape.constant(Tensor::zeros(&[2, 3, k]));
        let t = LabelMap::filled(2, 3, Some(2));
        let l = seg_loss(&[uniform], std::slice::from_ref(&t)).unwrap().item();
        assert!((l - (k as f64).ln()).abs() < 1e-12);

        let sharp = tape.constant(Tensor::from_fn(&[2, 3, k], |i| if i % k == 2 { 20.0 } else { 0.0 }));
        assert!(seg_loss(&[sharp], &[t]).unwrap().item() < 1e-6);

        let ignored = LabelMap::filled(2, 3, None);
        assert_eq!(seg_loss(&[uniform], &[ignored]).unwrap().item(), 0.0);
    }

    #[test]
    fn absent_class_sits_at_focal_floor() {
        let tape = Tape::new();
        // Background dominates so the class-1 mask is numerically zero.
        let logits = tape.constant(Tensor::from_fn(&[3, 3, 2], |i| if i % 2 == 0 { 800.0 } else { 0.0 }));
        let s = class_scores(logits).unwrap().item();
        assert!((s - FOCAL_OFFSET.ln()).abs() < 1e-12);
        let present = cls_loss(&[logits], &[1.0]).unwrap().item();
        let absent = cls_loss(&[logits], &[0.0]).unwrap().item();
        assert!(present > 4.0 && absent < 0.011);
    }

    #[test]
    fn full_mask_with_large_logits_scores_high() {
        let tape = Tape::new();
        let logits = tape.constant(Tensor::from_fn(&[3, 3, 2], |i| if i % 2 == 1 { 30.0 } else { 0.0 }));
        assert!(class_scores(logits).unwrap().item() > 29.0);
        assert!(cls_loss(&[logits], &[1.0]).unwrap().item() < 1e-12);
    }

    #[test]
    fn total_is_the_weighted_sum() {
        let tape = Tape::new();
        let terms = LossTerms {
            seg: tape.constant(Tensor::scalar(0.3)),
            cls: tape.constant(Tensor::scalar(1.7)),
            reg_mask: tape.constant(Tensor::scalar(0.11)),
            reg_fact: tape.constant(Tensor::scalar(0.05)),
        };
        let w = LossWeights::default();
        let expect = 0.3 * w.seg + 1.7 * w.cls + (0.11 + 0.05) * w.reg;
        assert_eq!(terms.total(&w).unwrap().item(), expect);
    }

    #[test]
    fn mask_consistency_cases() {
        let tape = Tape::new();
        let id = GeomTransform::IDENTITY;
        let a = Tensor::from_fn(&[4, 4, 3], |i| (i as f64 * 0.37).sin());
        let va = tape.constant(a.clone());
        assert_eq!(
            mask_consistency_loss(&[va, va], &[id, id], [4, 4], &[1, 2])
                .unwrap()
                .item(),
            0.0
        );
        assert_eq!(mask_consistency_loss(&[va], &[id], [4, 4], &[1]).unwrap().item(), 0.0);

        let mut b = a.clone();
        for (i, v) in b.data_mut().iter_mut().enumerate() {
            if i % 3 == 1 {
                *v += 1.0;
            }
        }
        let vb = tape.constant(b);
        assert_eq!(
            mask_consistency_loss(&[va, vb], &[id, id], [4, 4], &[]).unwrap().item(),
            0.0
        );
        let l = mask_consistency_loss(&[va, vb], &[id, id], [4, 4], &[1, 2])
            .unwrap()
            .item();
        assert!((l - 1.0).abs() < 1e-12);
    }
}
