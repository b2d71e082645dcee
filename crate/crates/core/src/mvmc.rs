//! Multi-view mask calibration.
//!
//! Per-view logits are mapped back to the source frame, averaged, turned
//! into probabilities, smoothed along appearance edges and thresholded into
//! a hard pseudo-mask. Everything here works on plain tensors, so the
//! result never carries gradient.

use crate::error::{Error, Result};
use crate::label::LabelMap;
use crate::tensor::{hwc_dims, softmax_tensor, Tensor};
use crate::transforms::GeomTransform;

/// Appearance-aware smoothing of class probabilities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefineConfig {
    pub iterations: usize,
    /// Odd side length of the square window.
    pub kernel_size: usize,
    /// Color bandwidth for images in `[0, 1]`.
    pub sigma_color: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            iterations: 3,
            kernel_size: 5,
            sigma_color: 0.1,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::Parameter(format!(
                "refinement kernel size must be odd, got {}",
                self.kernel_size
            )));
        }
        if !(self.sigma_color > 0.0) || !self.sigma_color.is_finite() {
            return Err(Error::Parameter(format!(
                "sigma_color must be positive, got {}",
                self.sigma_color
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CalibrationConfig {
    /// Pixels whose top probability is below this are ignored.
    pub gamma: f64,
    /// A pixel is ambiguous, and ignored, when another class comes within
    /// this distance of the top probability. Zero disables the check.
    pub tie_band: f64,
    pub refine: Option<RefineConfig>,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            tie_band: 0.05,
            refine: Some(RefineConfig::default()),
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Parameter(format!(
                "gamma must lie in [0, 1], got {}",
                self.gamma
            )));
        }
        if !(0.0..=1.0).contains(&self.tie_band) {
            return Err(Error::Parameter(format!(
                "tie band must lie in [0, 1], got {}",
                self.tie_band
            )));
        }
        if let Some(r) = &self.refine {
            r.validate()?;
        }
        Ok(())
    }
}

/// Hard pseudo-labels with an ignore flag and the top probability per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoMask {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<usize>,
    pub ignore: Vec<bool>,
    pub confidence: Vec<f64>,
}

impl PseudoMask {
    /// Labels with ignored pixels set to `None`.
    pub fn to_label_map(&self) -> LabelMap {
        let labels = self
            .labels
            .iter()
            .zip(&self.ignore)
            .map(|(&l, &ig)| (!ig).then_some(l))
            .collect();
        LabelMap::new(self.height, self.width, labels).expect("consistent pseudo-mask size")
    }

    pub fn ignored_fraction(&self) -> f64 {
        self.ignore.iter().filter(|&&i| i).count() as f64 / self.ignore.len().max(1) as f64
    }
}

/// Mean of the per-view logits after inverting each view's geometry.
pub fn fuse(logits: &[Tensor], geoms: &[GeomTransform], target: [usize; 2]) -> Result<Tensor> {
    if logits.is_empty() || logits.len() != geoms.len() {
        return Err(Error::Contract(format!(
            "{} logit maps but {} transforms",
            logits.len(),
            geoms.len()
        )));
    }
    let mut acc: Option<Tensor> = None;
    for (l, g) in logits.iter().zip(geoms) {
        let back = g.invert_tensor(l, target)?;
        acc = Some(match acc {
            None => back,
            Some(mut a) => {
                if a.shape() != back.shape() {
                    return Err(Error::dim(
                        "mvmc_fuse",
                        format!("views disagree: {:?} vs {:?}", a.shape(), back.shape()),
                    ));
                }
                for (x, y) in a.data_mut().iter_mut().zip(back.data()) {
                    *x += y;
                }
                a
            }
        });
    }
    let mut acc = acc.unwrap();
    let inv = 1.0 / logits.len() as f64;
    for x in acc.data_mut() {
        *x *= inv;
    }
    Ok(acc)
}

/// Replaces every pixel's distribution by the color-affinity weighted
/// average over its window, `iterations` times. Windows are clipped at the
/// border.
pub fn refine(probs: &Tensor, image: &Tensor, cfg: &RefineConfig) -> Result<Tensor> {
    cfg.validate()?;
    let [h, w, k] = hwc_dims("mvmc_refine", probs)?;
    let [ih, iw, ic] = hwc_dims("mvmc_refine", image)?;
    if [ih, iw] != [h, w] {
        return Err(Error::dim(
            "mvmc_refine",
            format!("image {ih}x{iw} for probabilities {h}x{w}"),
        ));
    }
    if cfg.iterations == 0 {
        return Ok(probs.clone());
    }
    let r = (cfg.kernel_size / 2) as isize;
    let denom = 2.0 * cfg.sigma_color * cfg.sigma_color;
    let img = image.data();
    // Neighbor lists with normalized weights, shared by all iterations.
    let mut neighbors: Vec<Vec<(usize, f64)>> = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let mut list = Vec::with_capacity(cfg.kernel_size * cfg.kernel_size);
            let mut z = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let (ny, nx) = (y as isize + dy, x as isize + dx);
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    let dist: f64 = (0..ic)
                        .map(|c| {
                            let d = img[i * ic + c] - img[j * ic + c];
                            d * d
                        })
                        .sum();
                    let a = (-dist / denom).exp();
                    z += a;
                    list.push((j, a));
                }
            }
            for e in &mut list {
                e.1 /= z;
            }
            neighbors.push(list);
        }
    }
    let mut cur = probs.data().to_vec();
    let mut next = vec![0.0; cur.len()];
    for _ in 0..cfg.iterations {
        for (i, list) in neighbors.iter().enumerate() {
            let out = &mut next[i * k..(i + 1) * k];
            out.fill(0.0);
            for &(j, a) in list {
                for (o, p) in out.iter_mut().zip(&cur[j * k..(j + 1) * k]) {
                    *o += a * p;
                }
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    Tensor::new(&[h, w, k], cur)
}

/// Thresholds per-pixel distributions into a pseudo-mask.
pub fn threshold(probs: &Tensor, cfg: &CalibrationConfig) -> Result<PseudoMask> {
    cfg.validate()?;
    let [h, w, k] = hwc_dims("mvmc_threshold", probs)?;
    let mut labels = Vec::with_capacity(h * w);
    let mut ignore = Vec::with_capacity(h * w);
    let mut confidence = Vec::with_capacity(h * w);
    for p in probs.data().chunks_exact(k) {
        let mut best = 0;
        for (c, &v) in p.iter().enumerate() {
            if v > p[best] {
                best = c;
            }
        }
        let top = p[best];
        let tied = p.iter().enumerate().any(|(c, &v)| c != best && top - v < cfg.tie_band);
        labels.push(best);
        confidence.push(top);
        ignore.push(top < cfg.gamma || tied);
    }
    Ok(PseudoMask {
        height: h,
        width: w,
        labels,
        ignore,
        confidence,
    })
}

/// Fuses the views, applies softmax and optional refinement, and
/// thresholds the result.
pub fn calibrate(
    logits: &[Tensor],
    geoms: &[GeomTransform],
    image: &Tensor,
    cfg: &CalibrationConfig,
) -> Result<PseudoMask> {
    calibrate_restricted(logits, geoms, image, cfg, None)
}

/// [`calibrate`] with the probability of every class outside `allowed`
/// zeroed and the rest renormalized before refinement.
pub fn calibrate_restricted(
    logits: &[Tensor],
    geoms: &[GeomTransform],
    image: &Tensor,
    cfg: &CalibrationConfig,
    allowed: Option<&[usize]>,
) -> Result<PseudoMask> {
    cfg.validate()?;
    let [h, w, _] = hwc_dims("mvmc_calibrate", image)?;
    let fused = fuse(logits, geoms, [h, w])?;
    let mut probs = softmax_tensor(&fused, 2)?;
    if let Some(allowed) = allowed {
        let k = fused.shape()[2];
        let mut keep = vec![false; k];
        for &c in allowed {
            if c >= k {
                return Err(Error::Parameter(format!("allowed class {c} >= {k}")));
            }
            keep[c] = true;
        }
        if !keep.iter().any(|&b| b) {
            return Err(Error::Parameter("no class allowed".into()));
        }
        for p in probs.data_mut().chunks_exact_mut(k) {
            for (v, &ok) in p.iter_mut().zip(&keep) {
                if !ok {
                    *v = 0.0;
                }
            }
            let z: f64 = p.iter().sum();
            if z > 0.0 {
                p.iter_mut().for_each(|v| *v /= z);
            } else {
                let n = keep.iter().filter(|&&b| b).count() as f64;
                for (v, &ok) in p.iter_mut().zip(&keep) {
                    *v = if ok { 1.0 / n } else { 0.0 };
                }
            }
        }
    }
    if let Some(r) = &cfg.refine {
        probs = refine(&probs, image, r)?;
    }
    threshold(&probs, cfg)
}

/// Carries the pseudo-mask into every view's frame (nearest neighbor, ignore
/// flags included).
pub fn build_seg_targets(pseudo: &PseudoMask, geoms: &[GeomTransform]) -> Vec<LabelMap> {
    let base = pseudo.to_label_map();
    geoms.iter().map(|g| g.forward_labels(&base)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_refine(gamma: f64) -> CalibrationConfig {
        CalibrationConfig {
            gamma,
            tie_band: 0.0,
            refine: None,
        }
    }

    #[test]
    fn gamma_out_of_range() {
        let img = Tensor::zeros(&[2, 2, 3]);
        let l = Tensor::zeros(&[2, 2, 2]);
        let id = [GeomTransform::IDENTITY];
        for g in [-0.1, 1.5] {
            let r = calibrate(std::slice::from_ref(&l), &id, &img, &no_refine(g));
            assert!(matches!(r, Err(Error::Parameter(_))));
        }
    }

    #[test]
    fn even_kernel_rejected() {
        let cfg = RefineConfig {
            kernel_size: 4,
            ..RefineConfig::default()
        };
        let p = Tensor::full(&[2, 2, 2], 0.5);
        assert!(matches!(
            refine(&p, &Tensor::zeros(&[2, 2, 3]), &cfg),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn opposing_one_hot_views_are_ignored() {
        let k = 2;
        let one_hot = |c: usize| Tensor::from_fn(&[3, 3, k], |i| if i % k == c { 1.0 } else { 0.0 });
        let id = GeomTransform::IDENTITY;
        let mask = calibrate(
            &[one_hot(0), one_hot(1)],
            &[id, id],
            &Tensor::zeros(&[3, 3, 3]),
            &no_refine(0.9),
        )
        .unwrap();
        assert!(mask.ignore.iter().all(|&i| i));
        assert!(mask.confidence.iter().all(|&c| (c - 0.5).abs() < 1e-15));
    }

    #[test]
    fn tie_band_flags_near_ties() {
        let p = Tensor::new(&[1, 2, 2], vec![0.52, 0.48, 0.8, 0.2]).unwrap();
        let cfg = CalibrationConfig {
            gamma: 0.0,
            tie_band: 0.05,
            refine: None,
        };
        let m = threshold(&p, &cfg).unwrap();
        assert_eq!(m.ignore, vec![true, false]);
    }

    #[test]
    fn restricted_classes_never_win() {
        let l = Tensor::from_fn(&[2, 2, 3], |i| if i % 3 == 2 { 5.0 } else { 0.0 });
        let m = calibrate_restricted(
            &[l],
            &[GeomTransform::IDENTITY],
            &Tensor::zeros(&[2, 2, 3]),
            &no_refine(0.0),
            Some(&[0, 1]),
        )
        .unwrap();
        assert!(m.labels.iter().all(|&c| c < 2));
    }

    #[test]
    fn zero_iterations_and_constant_color() {
        let p = Tensor::from_fn(&[4, 4, 2], |i| {
            if (i / 2) % 3 == 0 {
                0.9 - 0.8 * (i % 2) as f64
            } else {
                0.3 + 0.4 * (i % 2) as f64
            }
        });
        let img = Tensor::full(&[4, 4, 3], 0.4);
        let zero = RefineConfig {
            iterations: 0,
            ..RefineConfig::default()
        };
        assert_eq!(refine(&p, &img, &zero).unwrap(), p);

        let box3 = RefineConfig {
            iterations: 1,
            kernel_size: 3,
            sigma_color: 0.1,
        };
        let out = refine(&p, &img, &box3).unwrap();
        let (y, x) = (1usize, 2usize);
        let mut expect = 0.0;
        for ny in 0..3 {
            for nx in 1..4 {
                expect += p.data()[(ny * 4 + nx) * 2] / 9.0;
            }
        }
        assert!((out.data()[(y * 4 + x) * 2] - expect).abs() < 1e-12);
    }

    #[test]
    fn flip_targets_mirror() {
        let pseudo = PseudoMask {
            height: 1,
            width: 3,
            labels: vec![0, 1, 2],
            ignore: vec![false, true, false],
            confidence: vec![1.0; 3],
        };
        let t = build_seg_targets(
            &pseudo,
            &[GeomTransform::IDENTITY, GeomTransform::new(1.0, true).unwrap()],
        );
        assert_eq!(t[0].labels(), &[Some(0), None, Some(2)]);
        assert_eq!(t[1].labels(), &[Some(2), None, Some(0)]);
    }
}
