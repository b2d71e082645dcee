//! Augmented views: invertible geometric transforms and photometric jitter.
//!
//! Geometry is a rescale followed by an optional horizontal flip. Its
//! inverse undoes the flip exactly and the rescale with a differentiable
//! bilinear resize, so predictions made in any view can be brought back to
//! the source frame with gradients intact. Color jitter is applied to images
//! only and is never inverted.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::label::LabelMap;
use crate::tensor::{flip_horizontal, hwc_dims, resize_bilinear, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeomTransform {
    pub scale: f64,
    pub hflip: bool,
}

impl Default for GeomTransform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl GeomTransform {
    pub const IDENTITY: GeomTransform = GeomTransform {
        scale: 1.0,
        hflip: false,
    };

    pub fn new(scale: f64, hflip: bool) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::Parameter(format!("scale must be positive, got {scale}")));
        }
        Ok(Self { scale, hflip })
    }

    pub fn is_identity(&self) -> bool {
        self.scale == 1.0 && !self.hflip
    }

    /// Size of one axis after rescaling.
    pub fn scaled_len(&self, len: usize) -> usize {
        ((len as f64 * self.scale).round() as usize).max(1)
    }

    /// Rescale then flip an `h x w x c` tensor.
    pub fn apply_tensor(&self, x: &Tensor) -> Result<Tensor> {
        let [h, w, _] = hwc_dims("geom_apply", x)?;
        let resized = resize_bilinear(x, self.scaled_len(h), self.scaled_len(w))?;
        if self.hflip {
            flip_horizontal(&resized)
        } else {
            Ok(resized)
        }
    }

    /// Differentiable forward transform.
    pub fn apply<'t>(&self, x: Var<'t>) -> Result<Var<'t>> {
        let shape = x.shape();
        let [h, w] = match shape[..] {
            [h, w, _] => [h, w],
            _ => return Err(Error::dim("geom_apply", format!("expected h x w x c, got {shape:?}"))),
        };
        let resized = x.bilinear_resize(self.scaled_len(h), self.scaled_len(w))?;
        if self.hflip {
            resized.flip_w()
        } else {
            Ok(resized)
        }
    }

    fn check_target(&self, got: [usize; 2], target: [usize; 2]) -> Result<()> {
        let expect = [self.scaled_len(target[0]), self.scaled_len(target[1])];
        if got != expect {
            return Err(Error::Contract(format!(
                "map of size {got:?} cannot come from {target:?} under scale {}, expected {expect:?}",
                self.scale
            )));
        }
        Ok(())
    }

    /// Brings a map produced in this view back to the source frame of size
    /// `target`: unflip, then bilinear resize. Differentiable.
    pub fn invert<'t>(&self, x: Var<'t>, target: [usize; 2]) -> Result<Var<'t>> {
        let shape = x.shape();
        let [h, w] = match shape[..] {
            [h, w, _] => [h, w],
            _ => return Err(Error::dim("geom_invert", format!("expected h x w x c, got {shape:?}"))),
        };
        self.check_target([h, w], target)?;
        let unflipped = if self.hflip { x.flip_w()? } else { x };
        unflipped.bilinear_resize(target[0], target[1])
    }

    /// Tape-free [`GeomTransform::invert`].
    pub fn invert_tensor(&self, x: &Tensor, target: [usize; 2]) -> Result<Tensor> {
        let [h, w, _] = hwc_dims("geom_invert", x)?;
        self.check_target([h, w], target)?;
        let unflipped = if self.hflip { flip_horizontal(x)? } else { x.clone() };
        resize_bilinear(&unflipped, target[0], target[1])
    }

    /// Carries a source-frame label map into this view with nearest-neighbor
    /// sampling; ignore marks travel with their pixels.
    pub fn forward_labels(&self, labels: &LabelMap) -> LabelMap {
        let (h, w) = (labels.height(), labels.width());
        let (oh, ow) = (self.scaled_len(h), self.scaled_len(w));
        let nearest = |d: usize, input: usize, output: usize| {
            (((d as f64 + 0.5) * input as f64 / output as f64).floor() as usize).min(input - 1)
        };
        LabelMap::from_fn(oh, ow, |y, x| {
            let x = if self.hflip { ow - 1 - x } else { x };
            labels.get(nearest(y, h, oh), nearest(x, w, ow))
        })
    }
}

/// Maximum strengths of the photometric jitter components.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColorDistortion {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

impl Default for ColorDistortion {
    fn default() -> Self {
        Self {
            brightness: 0.3,
            contrast: 0.3,
            saturation: 0.3,
            hue: 0.1,
        }
    }
}

/// One concrete draw of [`ColorDistortion`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColorJitter {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// Hue rotation as a fraction of the full circle.
    pub hue_shift: f64,
}

impl ColorJitter {
    pub const IDENTITY: ColorJitter = ColorJitter {
        brightness: 1.0,
        contrast: 1.0,
        saturation: 1.0,
        hue_shift: 0.0,
    };
}

impl ColorDistortion {
    pub const NONE: ColorDistortion = ColorDistortion {
        brightness: 0.0,
        contrast: 0.0,
        saturation: 0.0,
        hue: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64, max: f64| (0.0..=max).contains(&v);
        if !ok(self.brightness, 0.3) || !ok(self.contrast, 0.3) || !ok(self.saturation, 0.3) {
            return Err(Error::Parameter(
                "brightness, contrast and saturation strengths must lie in [0, 0.3]".into(),
            ));
        }
        if !ok(self.hue, 0.1) {
            return Err(Error::Parameter("hue strength must lie in [0, 0.1]".into()));
        }
        Ok(())
    }

    /// Draws jitter factors deterministically from `seed`.
    pub fn sample(&self, seed: u64) -> ColorJitter {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut factor = |s: f64| {
            if s == 0.0 {
                1.0
            } else {
                rng.random_range(1.0 - s..=1.0 + s)
            }
        };
        let brightness = factor(self.brightness);
        let contrast = factor(self.contrast);
        let saturation = factor(self.saturation);
        let hue_shift = if self.hue == 0.0 {
            0.0
        } else {
            rng.random_range(-self.hue..=self.hue)
        };
        ColorJitter {
            brightness,
            contrast,
            saturation,
            hue_shift,
        }
    }
}

fn luma(p: &[f64]) -> f64 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

fn rgb_to_hsv(p: &[f64]) -> [f64; 3] {
    let (r, g, b) = (p[0], p[1], p[2]);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    [h, s, max]
}

fn hsv_to_rgb([h, s, v]: [f64; 3]) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = (h6.floor() as usize).min(5);
    let f = h6 - sector as f64;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

impl ColorJitter {
    /// Brightness, contrast, saturation, then hue, clamping to `[0, 1]`
    /// after each step. Identity components are skipped so a zero-strength
    /// draw leaves the image bit-identical.
    pub fn apply(&self, image: &Tensor) -> Result<Tensor> {
        let [_, _, c] = hwc_dims("color_jitter", image)?;
        if c != 3 {
            return Err(Error::dim("color_jitter", format!("expected 3 channels, got {c}")));
        }
        let mut out = image.clone();
        let px = out.data_mut();
        let clamp = |v: f64| v.clamp(0.0, 1.0);
        if self.brightness != 1.0 {
            px.iter_mut().for_each(|v| *v = clamp(*v * self.brightness));
        }
        if self.contrast != 1.0 {
            let n = (px.len() / 3).max(1) as f64;
            let mean = px.chunks(3).map(luma).sum::<f64>() / n;
            px.iter_mut()
                .for_each(|v| *v = clamp((*v - mean) * self.contrast + mean));
        }
        if self.saturation != 1.0 {
            for p in px.chunks_mut(3) {
                let l = luma(p);
                p.iter_mut().for_each(|v| *v = clamp((*v - l) * self.saturation + l));
            }
        }
        if self.hue_shift != 0.0 {
            for p in px.chunks_mut(3) {
                let [h, s, v] = rgb_to_hsv(p);
                let rgb = hsv_to_rgb([h + self.hue_shift, s, v]);
                p.iter_mut().zip(rgb).for_each(|(d, s)| *d = clamp(s));
            }
        }
        Ok(out)
    }
}

/// Everything needed to produce, and later invert, one view.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViewSpec {
    pub geom: GeomTransform,
    pub color: ColorDistortion,
    pub color_seed: u64,
}

/// Geometric then photometric transform of a channel-last RGB image in
/// `[0, 1]`; the result is clamped to `[0, 1]`.
pub fn apply(spec: &ViewSpec, image: &Tensor) -> Result<Tensor> {
    let geo = spec.geom.apply_tensor(image)?;
    let mut out = spec.color.sample(spec.color_seed).apply(&geo)?;
    out.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(out)
}

/// Declared view set: one entry per branch.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentSpec {
    pub scales: Vec<f64>,
    /// Independent random horizontal flip per view.
    pub flip: bool,
    /// Independent random color jitter per view.
    pub color: bool,
    pub color_strength: ColorDistortion,
    /// Square random crop applied to the source before any view transform.
    pub crop: usize,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            scales: vec![0.5, 1.0],
            flip: true,
            color: true,
            color_strength: ColorDistortion::default(),
            crop: 96,
        }
    }
}

impl AugmentSpec {
    pub fn num_views(&self) -> usize {
        self.scales.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() {
            return Err(Error::Parameter("at least one view scale is required".into()));
        }
        for &s in &self.scales {
            GeomTransform::new(s, false)?;
        }
        self.color_strength.validate()?;
        if self.crop == 0 {
            return Err(Error::Parameter("crop size must be positive".into()));
        }
        Ok(())
    }

    /// Draws the per-view transforms for one sample.
    pub fn draw_views(&self, rng: &mut impl Rng) -> Vec<ViewSpec> {
        self.scales
            .iter()
            .map(|&scale| ViewSpec {
                geom: GeomTransform {
                    scale,
                    hflip: self.flip && rng.random_bool(0.5),
                },
                color: if self.color {
                    self.color_strength
                } else {
                    ColorDistortion::NONE
                },
                color_seed: rng.random(),
            })
            .collect()
    }
}

/// Square crop at a random offset from an image and its optional mask.
pub fn random_crop(
    image: &Tensor,
    mask: Option<&LabelMap>,
    size: usize,
    rng: &mut impl Rng,
) -> Result<(Tensor, Option<LabelMap>)> {
    let [h, w, c] = hwc_dims("random_crop", image)?;
    if size > h || size > w {
        return Err(Error::Parameter(format!("crop {size} larger than image {h}x{w}")));
    }
    let top = rng.random_range(0..=h - size);
    let left = rng.random_range(0..=w - size);
    let mut data = Vec::with_capacity(size * size * c);
    for y in top..top + size {
        let start = (y * w + left) * c;
        data.extend_from_slice(&image.data()[start..start + size * c]);
    }
    let crop = Tensor::new(&[size, size, c], data)?;
    let mask = mask.map(|m| m.crop(top, left, size, size)).transpose()?;
    Ok((crop, mask))
}

/// A sample expanded into its augmented views.
#[derive(Clone, Debug)]
pub struct ViewBatch {
    pub source: Tensor,
    pub views: Vec<(Tensor, ViewSpec)>,
    /// Foreground classes present, when image-level labels are visible.
    pub labels: Option<Vec<usize>>,
    /// Pixel mask in the source frame, when visible.
    pub mask: Option<LabelMap>,
}

impl ViewBatch {
    pub fn new(source: Tensor, specs: &[ViewSpec], labels: Option<Vec<usize>>, mask: Option<LabelMap>) -> Result<Self> {
        let views = specs
            .iter()
            .map(|spec| Ok((apply(spec, &source)?, *spec)))
            .collect::<Result<_>>()?;
        Ok(Self {
            source,
            views,
            labels,
            mask,
        })
    }

    pub fn geoms(&self) -> Vec<GeomTransform> {
        self.views.iter().map(|(_, s)| s.geom).collect()
    }

    pub fn source_size(&self) -> [usize; 2] {
        [self.source.shape()[0], self.source.shape()[1]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    fn image(h: usize, w: usize) -> Tensor {
        Tensor::from_fn(&[h, w, 3], |i| ((i * 37) % 101) as f64 / 100.0)
    }

    #[test]
    fn identity_view_is_bitwise_identity() {
        let img = image(8, 6);
        let spec = ViewSpec {
            geom: GeomTransform::IDENTITY,
            color: ColorDistortion::NONE,
            color_seed: 99,
        };
        assert_eq!(apply(&spec, &img).unwrap(), img);
    }

    #[test]
    fn double_flip_is_identity() {
        let img = image(5, 7);
        let g = GeomTransform::new(1.0, true).unwrap();
        let once = g.apply_tensor(&img).unwrap();
        assert_ne!(once, img);
        assert_eq!(g.apply_tensor(&once).unwrap(), img);
    }

    #[test]
    fn invert_scale_one_is_exact() {
        let tape = Tape::new();
        let x = Tensor::from_fn(&[4, 6, 3], |i| i as f64 - 20.0);
        for flip in [false, true] {
            let g = GeomTransform::new(1.0, flip).unwrap();
            let fwd = g.apply(tape.constant(x.clone())).unwrap();
            let back = g.invert(fwd, [4, 6]).unwrap();
            assert_eq!(*back.value(), x);
        }
    }

    #[test]
    fn invert_rejects_inconsistent_target() {
        let tape = Tape::new();
        let g = GeomTransform::new(0.5, false).unwrap();
        let x = tape.constant(Tensor::zeros(&[8, 8, 2]));
        assert!(matches!(g.invert(x, [8, 8]), Err(Error::Contract(_))));
        assert!(g.invert(x, [16, 16]).is_ok());
    }

    #[test]
    fn half_scale_halves_the_size() {
        let img = image(64, 64);
        let g = GeomTransform::new(0.5, false).unwrap();
        assert_eq!(g.apply_tensor(&img).unwrap().shape(), &[32, 32, 3]);
    }

    #[test]
    fn forward_labels_flip_mirrors() {
        let m = LabelMap::from_fn(2, 3, |y, x| Some(y * 3 + x));
        let g = GeomTransform::new(1.0, true).unwrap();
        let f = g.forward_labels(&m);
        assert_eq!(f.get(0, 0), Some(2));
        assert_eq!(f.get(1, 2), Some(3));
        assert_eq!(GeomTransform::IDENTITY.forward_labels(&m), m);
    }

    #[test]
    fn jitter_is_deterministic_per_seed() {
        let c = ColorDistortion::default();
        assert_eq!(c.sample(5), c.sample(5));
        assert_ne!(c.sample(5), c.sample(6));
        let j = c.sample(3);
        assert!((0.7..=1.3).contains(&j.brightness));
        assert!((-0.1..=0.1).contains(&j.hue_shift));
    }

    #[test]
    fn zero_strength_samples_identity() {
        assert_eq!(ColorDistortion::NONE.sample(17), ColorJitter::IDENTITY);
    }

    #[test]
    fn hsv_round_trip() {
        for p in [[0.2, 0.5, 0.9], [1.0, 0.0, 0.0], [0.3, 0.3, 0.3], [0.9, 0.8, 0.1]] {
            let back = hsv_to_rgb(rgb_to_hsv(&p));
            for (a, b) in p.iter().zip(back) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn strength_limits_are_enforced() {
        let mut c = ColorDistortion::default();
        assert!(c.validate().is_ok());
        c.hue = 0.2;
        assert!(c.validate().is_err());
    }
}
