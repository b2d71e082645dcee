//! Synthetic shapes dataset.
//!
//! Each image shows up to a few filled shapes on a smooth textured
//! background. Class 0 is background; circles, squares and triangles are
//! classes 1, 2 and 3. Shapes are drawn in order, so later shapes occlude
//! earlier ones, and the image-level labels are read off the final mask.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::label::LabelMap;
use crate::tensor::Tensor;

pub const NUM_CLASSES: usize = 4;
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["background", "circle", "square", "triangle"];

/// Which labels the training split exposes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    /// Image-level labels only.
    Wsss,
    /// A pixel-labeled subset plus image-level labels for the rest.
    SemiPixelImage,
    /// A pixel-labeled subset plus unlabeled images.
    SemiPixelUnlabeled,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Wsss => "wsss",
            Regime::SemiPixelImage => "semi_pixel_image",
            Regime::SemiPixelUnlabeled => "semi_pixel_unlabeled",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Regime::Wsss, Regime::SemiPixelImage, Regime::SemiPixelUnlabeled]
            .into_iter()
            .find(|r| r.name() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetSpec {
    pub regime: Regime,
    pub train: usize,
    pub val: usize,
    pub size: usize,
    pub min_shapes: usize,
    pub max_shapes: usize,
    /// Standard deviation of per-pixel Gaussian noise.
    pub noise: f64,
    /// Fraction of training images with visible pixel masks in the
    /// semi-supervised regimes.
    pub pixel_fraction: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            regime: Regime::Wsss,
            train: 96,
            val: 32,
            size: 48,
            min_shapes: 1,
            max_shapes: 2,
            noise: 0.03,
            pixel_fraction: 0.25,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size < 8 {
            return Err(Error::Parameter(format!("image size {} below 8", self.size)));
        }
        if self.min_shapes > self.max_shapes {
            return Err(Error::Parameter(format!(
                "min_shapes {} exceeds max_shapes {}",
                self.min_shapes, self.max_shapes
            )));
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return Err(Error::Parameter(format!(
                "noise must be nonnegative, got {}",
                self.noise
            )));
        }
        if !(0.0..=1.0).contains(&self.pixel_fraction) {
            return Err(Error::Parameter(format!(
                "pixel_fraction must lie in [0, 1], got {}",
                self.pixel_fraction
            )));
        }
        Ok(())
    }
}

/// Labels a training sample exposes to the learner.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Visibility {
    pub pixel: bool,
    pub image: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor,
    pub mask: LabelMap,
    /// Sorted foreground classes present in `mask`.
    pub labels: Vec<usize>,
    pub visible: Visibility,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
}

const PALETTE: [[f64; 3]; NUM_CLASSES] = [[0.0, 0.0, 0.0], [0.85, 0.25, 0.2], [0.25, 0.75, 0.3], [0.3, 0.35, 0.85]];

fn sample_rng(seed: u64, split: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(split * (1 << 32) + index as u64);
    rng
}

fn inside(class: usize, cy: f64, cx: f64, r: f64, angle: f64, y: f64, x: f64) -> bool {
    let (dy, dx) = (y - cy, x - cx);
    match class {
        1 => dy * dy + dx * dx <= r * r,
        2 => dy.abs() <= r * 0.85 && dx.abs() <= r * 0.85,
        _ => {
            // Equilateral triangle with circumradius r, rotated by `angle`.
            let verts: Vec<(f64, f64)> = (0..3)
                .map(|i| {
                    let a = angle + i as f64 * 2.0 * PI / 3.0;
                    (cy + r * a.sin(), cx + r * a.cos())
                })
                .collect();
            let sign = |(ay, ax): (f64, f64), (by, bx): (f64, f64)| (bx - ax) * (y - ay) - (by - ay) * (x - ax);
            let s0 = sign(verts[0], verts[1]);
            let s1 = sign(verts[1], verts[2]);
            let s2 = sign(verts[2], verts[0]);
            (s0 >= 0.0 && s1 >= 0.0 && s2 >= 0.0) || (s0 <= 0.0 && s1 <= 0.0 && s2 <= 0.0)
        }
    }
}

/// Draws one image and its mask.
pub fn generate_sample(spec: &DatasetSpec, rng: &mut impl Rng) -> (Tensor, LabelMap) {
    let s = spec.size;
    let sf = s as f64;
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.3..0.6));
    let waves: Vec<[f64; 4]> = (0..3)
        .map(|_| {
            [
                rng.random_range(0.5..3.0) * 2.0 * PI / sf,
                rng.random_range(0.5..3.0) * 2.0 * PI / sf,
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.04..0.1),
            ]
        })
        .collect();
    let mut image = vec![0.0; s * s * 3];
    for y in 0..s {
        for x in 0..s {
            for c in 0..3 {
                let [fy, fx, ph, amp] = waves[c];
                image[(y * s + x) * 3 + c] = base[c] + amp * (fy * y as f64 + fx * x as f64 + ph).sin();
            }
        }
    }
    let mut mask = vec![0usize; s * s];
    let count = rng.random_range(spec.min_shapes..=spec.max_shapes);
    for _ in 0..count {
        let class = rng.random_range(1..NUM_CLASSES);
        let r = rng.random_range(0.14..0.26) * sf;
        let cy = rng.random_range(r * 0.6..sf - r * 0.6);
        let cx = rng.random_range(r * 0.6..sf - r * 0.6);
        let angle = rng.random_range(0.0..2.0 * PI);
        let color: [f64; 3] =
            std::array::from_fn(|c| (PALETTE[class][c] + rng.random_range(-0.12..0.12)).clamp(0.0, 1.0));
        for y in 0..s {
            for x in 0..s {
                if inside(class, cy, cx, r, angle, y as f64 + 0.5, x as f64 + 0.5) {
                    mask[y * s + x] = class;
                    image[(y * s + x) * 3..(y * s + x) * 3 + 3].copy_from_slice(&color);
                }
            }
        }
    }
    if spec.noise > 0.0 {
        let normal = Normal::new(0.0, spec.noise).expect("valid noise level");
        for v in &mut image {
            *v += normal.sample(rng);
        }
    }
    for v in &mut image {
        *v = v.clamp(0.0, 1.0);
    }
    let image = Tensor::new(&[s, s, 3], image).expect("consistent image size");
    let mask = LabelMap::new(s, s, mask.into_iter().map(Some).collect()).expect("consistent mask size");
    (image, mask)
}

/// Builds both splits. Identical specs give identical datasets.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let make = |split: u64, index: usize| {
        let mut rng = sample_rng(spec.seed, split, index);
        let (image, mask) = generate_sample(spec, &mut rng);
        let labels = mask.present_foreground(NUM_CLASSES);
        Sample {
            image,
            mask,
            labels,
            visible: Visibility {
                pixel: false,
                image: true,
            },
        }
    };
    let mut train: Vec<Sample> = (0..spec.train).map(|i| make(0, i)).collect();
    if spec.regime != Regime::Wsss {
        let pixel = ((spec.train as f64) * spec.pixel_fraction).round() as usize;
        let mut order: Vec<usize> = (0..spec.train).collect();
        order.shuffle(&mut sample_rng(spec.seed, 2, 0));
        for (rank, &i) in order.iter().enumerate() {
            train[i].visible = Visibility {
                pixel: rank < pixel,
                image: rank < pixel || spec.regime == Regime::SemiPixelImage,
            };
        }
    }
    let val = (0..spec.val).map(|i| make(1, i)).collect();
    Ok(Dataset {
        spec: *spec,
        train,
        val,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_scenes_are_background() {
        let spec = DatasetSpec {
            min_shapes: 0,
            max_shapes: 0,
            train: 3,
            val: 1,
            ..DatasetSpec::default()
        };
        let ds = generate_dataset(&spec).unwrap();
        for s in ds.train.iter().chain(&ds.val) {
            assert!(s.labels.is_empty());
            assert!(s.mask.labels().iter().all(|&l| l == Some(0)));
        }
    }

    #[test]
    fn labels_match_mask_and_images_in_range() {
        let ds = generate_dataset(&DatasetSpec {
            train: 20,
            val: 5,
            ..DatasetSpec::default()
        })
        .unwrap();
        for s in ds.train.iter().chain(&ds.val) {
            assert_eq!(s.labels, s.mask.present_foreground(NUM_CLASSES));
            assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn regimes_set_visibility() {
        let spec = DatasetSpec {
            regime: Regime::SemiPixelUnlabeled,
            train: 8,
            val: 1,
            pixel_fraction: 0.25,
            ..DatasetSpec::default()
        };
        let ds = generate_dataset(&spec).unwrap();
        let pixel = ds.train.iter().filter(|s| s.visible.pixel).count();
        let image_only = ds.train.iter().filter(|s| s.visible.image && !s.visible.pixel).count();
        assert_eq!((pixel, image_only), (2, 0));
        assert_eq!(Regime::parse("semi_pixel_image"), Some(Regime::SemiPixelImage));
    }
}
