//! Multi-view mask calibration: degenerate cases, symmetries, the
//! stop-gradient boundary and refinement.

use rand::Rng;
use slrnet::label::LabelMap;
use slrnet::losses::seg_loss;
use slrnet::mvmc::{self, CalibrationConfig, RefineConfig};
use slrnet::transforms::GeomTransform;
use slrnet::{Result, Tape, Tensor};

use super::{rng, Check};
use crate::oracle::smoothing;

fn random_map(h: usize, w: usize, k: usize, r: &mut impl Rng) -> Tensor {
    Tensor::from_fn(&[h, w, k], |_| r.random_range(-3.0..3.0))
}

fn image(h: usize, w: usize, r: &mut impl Rng) -> Tensor {
    Tensor::from_fn(&[h, w, 3], |_| r.random_range(0.0..1.0))
}

fn plain(gamma: f64) -> CalibrationConfig {
    CalibrationConfig {
        gamma,
        tie_band: 0.0,
        refine: None,
    }
}

/// Per-pixel softmax argmax and top probability, computed directly.
fn brute_softmax_top(logits: &Tensor) -> Vec<(usize, f64)> {
    let k = *logits.shape().last().unwrap();
    logits
        .data()
        .chunks(k)
        .map(|row| {
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            let mut best = 0;
            for c in 1..k {
                if row[c] > row[best] {
                    best = c;
                }
            }
            (best, row[best].exp() / z)
        })
        .collect()
}

pub fn collapse() -> Check {
    let run = || -> Result<(bool, String)> {
        let mut r = rng(401);
        for _ in 0..20 {
            let logits = random_map(7, 9, 4, &mut r);
            let img = image(7, 9, &mut r);
            let single = mvmc::calibrate(
                std::slice::from_ref(&logits),
                &[GeomTransform::IDENTITY],
                &img,
                &plain(0.0),
            )?;
            let expect = brute_softmax_top(&logits);
            for (i, (label, top)) in expect.iter().enumerate() {
                if single.labels[i] != *label || single.ignore[i] || (single.confidence[i] - top).abs() > 1e-12 {
                    return Ok((false, format!("pixel {i} differs from argmax of softmax")));
                }
            }
            let doubled = mvmc::calibrate(
                &[logits.clone(), logits.clone()],
                &[GeomTransform::IDENTITY; 2],
                &img,
                &CalibrationConfig::default(),
            )?;
            let once = mvmc::calibrate(
                std::slice::from_ref(&logits),
                &[GeomTransform::IDENTITY],
                &img,
                &CalibrationConfig::default(),
            )?;
            if doubled != once {
                return Ok((false, "two identical views differ from one".into()));
            }
        }
        // One-hot class 0 in one view and class 1 in the other.
        let k = 3;
        let a = Tensor::from_fn(&[5, 5, k], |i| if i % k == 0 { 30.0 } else { 0.0 });
        let b = Tensor::from_fn(&[5, 5, k], |i| if i % k == 1 { 30.0 } else { 0.0 });
        let img = Tensor::full(&[5, 5, 3], 0.5);
        let opposed = mvmc::calibrate(&[a, b], &[GeomTransform::IDENTITY; 2], &img, &plain(0.9))?;
        // Mean logits (15, 15, 0): the two top classes share e^15.
        let z = 2.0 * 15f64.exp() + 1.0;
        let expect_top = 15f64.exp() / z;
        if !opposed.ignore.iter().all(|&i| i) {
            return Ok((false, "opposed one-hot views left pixels unignored".into()));
        }
        if opposed.confidence.iter().any(|c| (c - expect_top).abs() > 1e-12) {
            return Ok((false, format!("opposed confidence differs from {expect_top}")));
        }
        Ok((true, "single view, duplicated views and opposed one-hot views".into()))
    };
    Check::from_result("calibration collapse", run())
}

pub fn permutation_invariance() -> Check {
    let run = || -> Result<(bool, String)> {
        let mut r = rng(402);
        let (h, w, k) = (12, 12, 4);
        let geoms = [
            GeomTransform::IDENTITY,
            GeomTransform {
                scale: 0.5,
                hflip: false,
            },
            GeomTransform {
                scale: 1.0,
                hflip: true,
            },
            GeomTransform {
                scale: 0.75,
                hflip: true,
            },
        ];
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let logits: Vec<Tensor> = geoms
                .iter()
                .map(|g| random_map(g.scaled_len(h), g.scaled_len(w), k, &mut r))
                .collect();
            let img = image(h, w, &mut r);
            let base = mvmc::fuse(&logits, &geoms, [h, w])?;
            let reference = mvmc::calibrate(&logits, &geoms, &img, &CalibrationConfig::default())?;
            for perm in [[3, 1, 0, 2], [1, 0, 3, 2], [2, 3, 1, 0]] {
                let l: Vec<Tensor> = perm.iter().map(|&i| logits[i].clone()).collect();
                let g: Vec<GeomTransform> = perm.iter().map(|&i| geoms[i]).collect();
                worst = worst.max(mvmc::fuse(&l, &g, [h, w])?.max_abs_diff(&base));
                let m = mvmc::calibrate(&l, &g, &img, &CalibrationConfig::default())?;
                let conf_gap = m
                    .confidence
                    .iter()
                    .zip(&reference.confidence)
                    .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
                worst = worst.max(conf_gap);
                if m.labels != reference.labels || m.ignore != reference.ignore {
                    return Ok((false, "a permuted view list changed the pseudo-mask".into()));
                }
            }
        }
        Ok((worst < 1e-12, format!("largest deviation {worst:.1e}")))
    };
    Check::from_result("calibration view permutation", run())
}

pub fn stop_gradient() -> Check {
    let run = || -> Result<(bool, String)> {
        let mut r = rng(403);
        let (h, w, k) = (6, 6, 3);
        let tape = Tape::new();
        let logits = tape.param(random_map(h, w, k, &mut r));
        let img = image(h, w, &mut r);
        let recorded = tape.len();
        let pseudo = mvmc::calibrate(
            &[(*logits.value()).clone()],
            &[GeomTransform::IDENTITY],
            &img,
            &CalibrationConfig {
                gamma: 0.4,
                ..CalibrationConfig::default()
            },
        )?;
        if tape.len() != recorded {
            return Ok((false, "calibration recorded tape nodes".into()));
        }
        let targets = mvmc::build_seg_targets(&pseudo, &[GeomTransform::IDENTITY]);
        let loss = seg_loss(&[logits], &targets)?;
        let grad = tape.backward(loss)?.wrt(logits);
        // Cross entropy with the targets held fixed: (softmax - onehot) / N.
        let kept = pseudo.ignore.iter().filter(|&&i| !i).count();
        let mut worst = 0.0f64;
        let value = logits.value();
        for (i, row) in value.data().chunks(k).enumerate() {
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            for (c, v) in row.iter().enumerate() {
                let expect = if pseudo.ignore[i] || kept == 0 {
                    0.0
                } else {
                    (v.exp() / z - (pseudo.labels[i] == c) as u8 as f64) / kept as f64
                };
                worst = worst.max((grad.data()[i * k + c] - expect).abs());
            }
        }
        Ok((
            worst < 1e-12,
            format!("tape unchanged; gradient matches fixed-target cross entropy to {worst:.1e}"),
        ))
    };
    Check::from_result("calibration stop-gradient", run())
}

fn distribution_error(t: &Tensor) -> f64 {
    let k = *t.shape().last().unwrap();
    t.data()
        .chunks(k)
        .map(|p| {
            let neg = p.iter().fold(0.0f64, |a, &v| a.max(-v));
            neg.max((p.iter().sum::<f64>() - 1.0).abs())
        })
        .fold(0.0, f64::max)
}

pub fn refine_validity() -> Check {
    let run = || -> Result<(bool, String)> {
        let mut r = rng(404);
        let mut worst = 0.0f64;
        for iterations in 0..8 {
            for kernel_size in [1, 3, 5, 7] {
                let logits = random_map(9, 11, 4, &mut r);
                let probs = slrnet::tensor::softmax_tensor(&logits, 2)?;
                let img = image(9, 11, &mut r);
                let cfg = RefineConfig {
                    iterations,
                    kernel_size,
                    sigma_color: r.random_range(0.02..0.5),
                };
                let out = mvmc::refine(&probs, &img, &cfg)?;
                worst = worst.max(distribution_error(&out));
                if iterations == 0 && out != probs {
                    return Ok((false, "zero iterations changed the input".into()));
                }
            }
        }
        let bad = RefineConfig {
            kernel_size: 4,
            ..RefineConfig::default()
        };
        let probs = Tensor::full(&[3, 3, 2], 0.5);
        if mvmc::refine(&probs, &Tensor::full(&[3, 3, 3], 0.5), &bad).is_ok() {
            return Ok((false, "even kernel accepted".into()));
        }
        Ok((
            worst < 1e-9,
            format!("largest deviation from a distribution {worst:.1e}"),
        ))
    };
    Check::from_result("refine validity", run())
}

pub fn refine_edges() -> Check {
    let run = || -> Result<(bool, String)> {
        let (size, k) = (32, 2);
        let mut r = rng(405);
        let img = Tensor::from_fn(&[size, size, 3], |i| {
            if smoothing::right_half(size, i / 3) {
                0.8
            } else {
                0.2
            }
        });
        let mut probs = Tensor::zeros(&[size, size, k]);
        for (p, row) in probs.data_mut().chunks_mut(k).enumerate() {
            let own = r.random_range(0.55..0.95);
            let (a, b) = if smoothing::right_half(size, p) {
                (1.0 - own, own)
            } else {
                (own, 1.0 - own)
            };
            row[0] = a;
            row[1] = b;
        }
        let out = mvmc::refine(&probs, &img, &RefineConfig::default())?;
        let (var_before, var_after) = (
            smoothing::within_region_variance(probs.data(), size, k),
            smoothing::within_region_variance(out.data(), size, k),
        );
        let (mix_before, mix_after) = (
            smoothing::cross_edge_mixing(probs.data(), size, k),
            smoothing::cross_edge_mixing(out.data(), size, k),
        );
        let ok = var_after < var_before && mix_after < mix_before;
        // Constant color makes every window a plain average.
        let flat = Tensor::full(&[size, size, 3], 0.4);
        let one = RefineConfig {
            iterations: 1,
            ..RefineConfig::default()
        };
        let boxed = mvmc::refine(&probs, &flat, &one)?;
        let mut box_gap = 0.0f64;
        for y in 0..size {
            for x in 0..size {
                for c in 0..k {
                    let (mut s, mut n) = (0.0, 0.0);
                    for ny in y.saturating_sub(2)..(y + 3).min(size) {
                        for nx in x.saturating_sub(2)..(x + 3).min(size) {
                            s += probs.data()[(ny * size + nx) * k + c];
                            n += 1.0;
                        }
                    }
                    box_gap = box_gap.max((boxed.data()[(y * size + x) * k + c] - s / n).abs());
                }
            }
        }
        Ok((
            ok && box_gap < 1e-12,
            format!(
                "variance {var_before:.4} -> {var_after:.4}, mixing {mix_before:.4} -> {mix_after:.4}, box filter gap {box_gap:.1e}"
            ),
        ))
    };
    Check::from_result("refine along edges", run())
}

pub fn seg_targets() -> Check {
    let run = || -> Result<(bool, String)> {
        let (h, w) = (8, 8);
        let quadrant = |y: usize, x: usize, hh: usize, ww: usize| (2 * y / hh) * 2 + 2 * x / ww;
        let labels: Vec<usize> = (0..h * w).map(|i| quadrant(i / w, i % w, h, w)).collect();
        let mut ignore = vec![false; h * w];
        ignore[3] = true;
        let pseudo = mvmc::PseudoMask {
            height: h,
            width: w,
            labels: labels.clone(),
            ignore: ignore.clone(),
            confidence: vec![1.0; h * w],
        };
        let geoms = [
            GeomTransform::IDENTITY,
            GeomTransform {
                scale: 1.0,
                hflip: true,
            },
            GeomTransform {
                scale: 0.5,
                hflip: false,
            },
        ];
        let t = mvmc::build_seg_targets(&pseudo, &geoms);
        let identity = LabelMap::from_fn(h, w, |y, x| (!ignore[y * w + x]).then_some(labels[y * w + x]));
        let mirrored = LabelMap::from_fn(h, w, |y, x| identity.get(y, w - 1 - x));
        let halved = LabelMap::from_fn(4, 4, |y, x| Some(quadrant(y, x, 4, 4)));
        let ok = t[0] == identity && t[1] == mirrored && t[2] == halved;
        Ok((ok, "identity, flip and half-scale quadrants".into()))
    };
    Check::from_result("seg targets per view", run())
}

pub fn more_identical_views() -> Check {
    let run = || -> Result<(bool, String)> {
        let mut r = rng(406);
        let (h, w, k) = (10, 10, 4);
        let base = random_map(h, w, k, &mut r);
        let img = image(h, w, &mut r);
        let flip = GeomTransform {
            scale: 1.0,
            hflip: true,
        };
        let flipped = flip.apply_tensor(&base)?;
        let one = mvmc::calibrate(
            std::slice::from_ref(&base),
            &[GeomTransform::IDENTITY],
            &img,
            &CalibrationConfig::default(),
        )?;
        for n in 2..5 {
            let mut logits = vec![base.clone()];
            let mut geoms = vec![GeomTransform::IDENTITY];
            for i in 1..n {
                if i % 2 == 1 {
                    logits.push(flipped.clone());
                    geoms.push(flip);
                } else {
                    logits.push(base.clone());
                    geoms.push(GeomTransform::IDENTITY);
                }
            }
            let m = mvmc::calibrate(&logits, &geoms, &img, &CalibrationConfig::default())?;
            let gap = m
                .confidence
                .iter()
                .zip(&one.confidence)
                .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
            if m.labels != one.labels || m.ignore != one.ignore || gap > 1e-12 {
                return Ok((false, format!("{n} agreeing views changed the mask")));
            }
        }
        Ok((true, "up to 4 agreeing views".into()))
    };
    Check::from_result("calibration view count", run())
}

pub fn all() -> Vec<Check> {
    vec![
        collapse(),
        permutation_invariance(),
        stop_gradient(),
        refine_validity(),
        refine_edges(),
        seg_targets(),
        more_identical_views(),
    ]
}
