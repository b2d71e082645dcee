//! Small brute-force checks of individual operations.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::Rng;
use slrnet::cvlr::{self, CvlrConfig, CvlrParams};
use slrnet::data::{generate_dataset, DatasetSpec};
use slrnet::label::LabelMap;
use slrnet::losses;
use slrnet::mf;
use slrnet::nn::ParamStore;
use slrnet::transforms::GeomTransform;
use slrnet::{Result, Tape, Tensor};

use super::{probe, rng, Check};
use crate::fd::{self, random_input};
use crate::oracle::kmeans;

fn matmul_gradient() -> Check {
    let f = probe(|_, x| x[0].matmul(x[1])?.sum());
    let inputs = [random_input(&[5, 4], 701, 0.0), random_input(&[4, 6], 702, 0.0)];
    let r = fd::analytic(&f, &inputs).and_then(|a| Ok((a, fd::numeric(&f, &inputs, fd::STEP)?)));
    Check::from_result(
        "matmul gradient",
        r.map(|(a, n)| {
            let err = fd::relative_error(&a, &n);
            (err < 1e-6, format!("relative error {err:.1e}"))
        }),
    )
}

fn softmax_limit() -> Check {
    let r = (|| -> Result<(bool, String)> {
        let tape = Tape::new();
        let x = tape.constant(Tensor::new(&[1, 3], vec![1.0, 2.0, 1.5])?);
        let p = x.softmax(1, 1e-4)?.value();
        let dev = p
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - (i == 1) as u8 as f64).abs())
            .fold(0.0, f64::max);
        Ok((dev < 1e-3, format!("deviation from one-hot {dev:.1e}")))
    })();
    Check::from_result("softmax low temperature", r)
}

fn downscale_bounds() -> Check {
    let r = (|| -> Result<(bool, String)> {
        let mut g = rng(703);
        let img = Tensor::from_fn(&[64, 64, 3], |_| g.random_range(0.0..1.0));
        let half = GeomTransform {
            scale: 0.5,
            hflip: false,
        }
        .apply_tensor(&img)?;
        if half.shape() != [32, 32, 3] {
            return Ok((false, format!("shape {:?}", half.shape())));
        }
        for y in 0..32 {
            for x in 0..32 {
                for c in 0..3 {
                    let src: Vec<f64> = [(0, 0), (0, 1), (1, 0), (1, 1)]
                        .iter()
                        .map(|(dy, dx)| img.at(&[2 * y + dy, 2 * x + dx, c]))
                        .collect();
                    let lo = src.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let v = half.at(&[y, x, c]);
                    if v < lo - 1e-12 || v > hi + 1e-12 {
                        return Ok((false, format!("pixel ({y}, {x}) {v} outside [{lo}, {hi}]")));
                    }
                }
            }
        }
        Ok((true, "64x64 to 32x32 within source 2x2 bounds".into()))
    })();
    Check::from_result("downscale bounds", r)
}

fn scale_round_trip() -> Check {
    let r = (|| -> Result<(bool, String)> {
        let mut g = rng(704);
        let (mut agree, mut total) = (0usize, 0usize);
        let geom = GeomTransform {
            scale: 0.5,
            hflip: false,
        };
        for _ in 0..20 {
            // 8x8 blocks of random class on a 64x64 grid.
            let blocks: Vec<usize> = (0..64).map(|_| g.random_range(0..2)).collect();
            let mask = LabelMap::from_fn(64, 64, |y, x| Some(blocks[(y / 8) * 8 + x / 8]));
            let logits = Tensor::from_fn(&[64, 64, 2], |i| {
                let p = i / 2;
                if mask.labels()[p] == Some(i % 2) {
                    1.0
                } else {
                    0.0
                }
            });
            let tape = Tape::new();
            let down = tape.constant(geom.apply_tensor(&logits)?);
            let back = geom.invert(down, [64, 64])?.value();
            for (p, pred) in back.argmax_last().iter().enumerate() {
                total += 1;
                agree += (mask.labels()[p] == Some(*pred)) as usize;
            }
        }
        let frac = agree as f64 / total as f64;
        Ok((frac >= 0.99, format!("argmax agreement {frac:.4}")))
    })();
    Check::from_result("scale round trip", r)
}

fn centroid_step() -> Check {
    let r = (|| -> Result<(bool, String)> {
        let mut g = rng(705);
        let (d, n, k) = (4, 12, 3);
        let points: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| g.random_range(-1.0..1.0)).collect())
            .collect();
        let assign: Vec<usize> = (0..n).map(|i| i % k).collect();
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(&[d, n], |i| points[i % n][i / n]));
        let c = tape.constant(Tensor::from_fn(&[k, n], |i| (assign[i % n] == i / n) as u8 as f64));
        let dict = mf::update_dictionary(&[x], &[c], None)?.value();
        let expect = kmeans::centroids(&points, &assign, k);
        let gap = (0..d * k)
            .map(|i| (dict.data()[i] - expect[i % k][i / k]).abs())
            .fold(0.0, f64::max);
        Ok((gap == 0.0, format!("largest gap {gap:.1e}")))
    })();
    Check::from_result("dictionary centroid step", r)
}

fn one_hot_codes() -> Check {
    let r = (|| -> Result<(bool, String)> {
        let mut g = rng(706);
        let (d, k) = (6, 4);
        let dict = Tensor::from_fn(&[d, k], |_| g.random_range(-1.0..1.0));
        let n = k;
        let x = Tensor::from_fn(&[d, n], |i| dict.data()[i]);
        let tape = Tape::new();
        let codes = mf::update_codes(&[tape.constant(x)], tape.constant(dict.clone()), 1e-4)?[0].value();
        // Oracle: argmax of cosine similarity.
        let mut worst = 0.0f64;
        for col in 0..n {
            let norm = |j: usize| (0..d).map(|r| dict.data()[r * k + j].powi(2)).sum::<f64>().sqrt();
            let best = (0..k)
                .max_by(|&a, &b| {
                    let dot = |j: usize| {
                        (0..d)
                            .map(|r| dict.data()[r * k + j] * dict.data()[r * k + col])
                            .sum::<f64>()
                            / norm(j)
                    };
                    dot(a).total_cmp(&dot(b))
                })
                .unwrap();
            if best != col {
                return Ok((false, format!("column {col} is closest to atom {best}")));
            }
            for a in 0..k {
                let expect = (a == col) as u8 as f64;
                worst = worst.max((codes.data()[a * n + col] - expect).abs());
            }
        }
        Ok((worst < 1e-3, format!("deviation from one-hot {worst:.1e}")))
    })();
    Check::from_result("codes at low temperature", r)
}

fn cross_view_coupling() -> Check {
    let r = (|| -> Result<(bool, String)> {
        let (d_model, d, k) = (6, 5, 3);
        let mut store = ParamStore::new();
        let params = CvlrParams::init(&mut store, d_model, d, k, 4, &mut rng(707));
        let a = random_input(&[4, 4, d_model], 708, 0.0);
        let b = random_input(&[4, 4, d_model], 709, 0.0);
        let mut b2 = b.clone();
        b2.data_mut().iter_mut().for_each(|v| *v += 0.3);
        let view0 = |other: &Tensor, dictionary| -> Result<Tensor> {
            let tape = Tape::new();
            let bound = store.bind(&tape);
            let cfg = CvlrConfig {
                k,
                d,
                dictionary,
                ..CvlrConfig::default()
            };
            let out = cvlr::forward(
                &[tape.constant(a.clone()), tape.constant(other.clone())],
                &params,
                &bound,
                &cfg,
            )?;
            Ok((*out.refined[0].value()).clone())
        };
        let shared = view0(&b, cvlr::DictionaryMode::Shared)?.max_abs_diff(&view0(&b2, cvlr::DictionaryMode::Shared)?);
        let separate =
            view0(&b, cvlr::DictionaryMode::Separate)?.max_abs_diff(&view0(&b2, cvlr::DictionaryMode::Separate)?);
        Ok((
            shared > 0.0 && separate == 0.0,
            format!("change in view 0: shared {shared:.2e}, separate {separate:.1e}"),
        ))
    })();
    Check::from_result("cross-view coupling", r)
}

fn loss_examples() -> Check {
    let r = (|| -> Result<(bool, String)> {
        let tape = Tape::new();
        let mut g = rng(710);
        // Code consistency with all-atom-0 against all-atom-1 codes.
        let a = tape.constant(Tensor::from_fn(&[3, 3, 2], |i| (i % 2 == 0) as u8 as f64));
        let b = tape.constant(Tensor::from_fn(&[3, 3, 2], |i| (i % 2 == 1) as u8 as f64));
        let code = cvlr::code_consistency_loss(&[a, b], &[GeomTransform::IDENTITY; 2], [3, 3])?.item();
        // Mask consistency with one channel offset by 1.
        let m = Tensor::from_fn(&[4, 4, 3], |_| g.random_range(0.0..1.0));
        let shifted = Tensor::from_fn(&[4, 4, 3], |i| m.data()[i] + if i % 3 == 2 { 1.0 } else { 0.0 });
        let mask = losses::mask_consistency_loss(
            &[tape.constant(m), tape.constant(shifted)],
            &[GeomTransform::IDENTITY; 2],
            [4, 4],
            &[2],
        )?
        .item();
        // Cross entropy on a 2x2 map against hand-summed -log p.
        let logits = Tensor::from_fn(&[2, 2, 3], |_| g.random_range(-2.0..2.0));
        let target = LabelMap::from_fn(2, 2, |y, x| Some((y + 2 * x) % 3));
        let ce = losses::seg_loss(&[tape.constant(logits.clone())], std::slice::from_ref(&target))?.item();
        let brute_ce = logits
            .data()
            .chunks(3)
            .zip(target.labels())
            .map(|(row, t)| {
                let z: f64 = row.iter().map(|v| v.exp()).sum();
                -(row[t.unwrap()].exp() / z).ln()
            })
            .sum::<f64>()
            / 4.0;
        // Binary cross entropy on class scores against the scalar formula.
        let y = [1.0, 0.0, 1.0];
        let l = tape.constant(Tensor::from_fn(&[3, 3, 4], |_| g.random_range(-2.0..2.0)));
        let scores = losses::class_scores(l)?.value();
        let bce = losses::cls_loss(&[l], &y)?.item();
        let brute_bce: f64 = scores
            .data()
            .iter()
            .zip(y)
            .map(|(&s, y)| {
                let p = 1.0 / (1.0 + (-s).exp());
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum();
        let ok = (code - 2.0).abs() < 1e-12
            && (mask - 1.0).abs() < 1e-12
            && (ce - brute_ce).abs() < 1e-12
            && (bce - brute_bce).abs() < 1e-10;
        Ok((
            ok,
            format!(
                "code L1 {code}, mask L1 {mask}, CE gap {:.1e}, BCE gap {:.1e}",
                (ce - brute_ce).abs(),
                (bce - brute_bce).abs()
            ),
        ))
    })();
    Check::from_result("loss examples", r)
}

fn dataset_determinism() -> Check {
    let r = (|| -> Result<(bool, String)> {
        let spec = DatasetSpec {
            train: 12,
            val: 4,
            size: 24,
            ..DatasetSpec::default()
        };
        let fingerprint = |s: &DatasetSpec| -> Result<u64> {
            let data = generate_dataset(s)?;
            let mut h = DefaultHasher::new();
            for sample in data.train.iter().chain(&data.val) {
                sample.image.data().iter().for_each(|v| v.to_bits().hash(&mut h));
                sample.mask.labels().hash(&mut h);
                sample.labels.hash(&mut h);
            }
            Ok(h.finish())
        };
        let (a, b) = (fingerprint(&spec)?, fingerprint(&spec)?);
        let other = fingerprint(&DatasetSpec {
            seed: spec.seed + 1,
            ..spec
        })?;
        Ok((a == b && a != other, format!("hash {a:016x}")))
    })();
    Check::from_result("dataset determinism", r)
}

pub fn all() -> Vec<Check> {
    vec![
        matmul_gradient(),
        softmax_limit(),
        downscale_bounds(),
        scale_round_trip(),
        centroid_step(),
        one_hot_codes(),
        cross_view_coupling(),
        loss_examples(),
        dataset_determinism(),
    ]
}
