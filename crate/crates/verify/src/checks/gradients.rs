//! Tape gradients against central differences.

use rand::Rng;
use slrnet::cvlr::{self, CvlrConfig, CvlrParams, DictionaryMode};
use slrnet::label::LabelMap;
use slrnet::losses;
use slrnet::mf::{self, CodeUpdate, MfConfig};
use slrnet::net::{ToyNet, ToyNetConfig};
use slrnet::nn::{Bound, ParamStore};
use slrnet::transforms::GeomTransform;
use slrnet::{Result, Tensor};

use super::{probe, rng, Check};
use crate::fd::{self, random_input, TOLERANCE};

fn run(name: &str, f: &dyn fd::Probe, inputs: &[Tensor]) -> Check {
    match fd::check(f, inputs) {
        Ok(err) => Check::new(
            format!("grad {name}"),
            err < TOLERANCE,
            format!("relative error {err:.2e}"),
        ),
        Err(e) => Check::error(format!("grad {name}"), &e),
    }
}

fn positive(shape: &[usize], seed: u64) -> Tensor {
    let mut t = random_input(shape, seed, 0.2);
    t.data_mut().iter_mut().for_each(|v| *v = v.abs());
    t
}

fn ops() -> Vec<Check> {
    let a = random_input(&[3, 4], 1, 0.05);
    let b = random_input(&[3, 4], 2, 0.05);
    let away = random_input(&[3, 4], 3, 0.2);
    let pos = positive(&[3, 4], 4);
    let v = random_input(&[4], 5, 0.3);
    let cube = random_input(&[2, 3, 4], 6, 0.05);
    let mut out = vec![
        run("neg", &probe(|_, x| x[0].neg()), std::slice::from_ref(&a)),
        run("exp", &probe(|_, x| x[0].exp()), std::slice::from_ref(&a)),
        run("ln", &probe(|_, x| x[0].ln()), std::slice::from_ref(&pos)),
        run("sqrt", &probe(|_, x| x[0].sqrt()), std::slice::from_ref(&pos)),
        run("abs", &probe(|_, x| x[0].abs()), std::slice::from_ref(&away)),
        run("relu", &probe(|_, x| x[0].relu()), std::slice::from_ref(&away)),
        run("recip", &probe(|_, x| x[0].recip()), std::slice::from_ref(&away)),
        run("square", &probe(|_, x| x[0].square()), std::slice::from_ref(&a)),
        run("powi", &probe(|_, x| x[0].powi(3)), std::slice::from_ref(&a)),
        run("sigmoid", &probe(|_, x| x[0].sigmoid()), std::slice::from_ref(&a)),
        run(
            "add_scalar",
            &probe(|_, x| x[0].add_scalar(0.7)),
            std::slice::from_ref(&a),
        ),
        run(
            "mul_scalar",
            &probe(|_, x| x[0].mul_scalar(-1.3)),
            std::slice::from_ref(&a),
        ),
        run(
            "clamp_min",
            &probe(|_, x| x[0].clamp_min(0.0)),
            std::slice::from_ref(&away),
        ),
        run("add", &probe(|_, x| x[0].add(x[1])), &[a.clone(), b.clone()]),
        run("sub", &probe(|_, x| x[0].sub(x[1])), &[a.clone(), b.clone()]),
        run("mul", &probe(|_, x| x[0].mul(x[1])), &[a.clone(), b.clone()]),
        run("div", &probe(|_, x| x[0].div(x[1])), &[a.clone(), away.clone()]),
        run("mul_last", &probe(|_, x| x[0].mul_last(x[1])), &[a.clone(), v.clone()]),
        run("div_last", &probe(|_, x| x[0].div_last(x[1])), &[a.clone(), v.clone()]),
        run("add_last", &probe(|_, x| x[0].add_last(x[1])), &[a.clone(), v.clone()]),
        run(
            "matmul",
            &probe(|_, x| x[0].matmul(x[1])),
            &[a.clone(), random_input(&[4, 2], 7, 0.0)],
        ),
        run("transpose", &probe(|_, x| x[0].transpose()), std::slice::from_ref(&a)),
        run(
            "reshape",
            &probe(|_, x| x[0].reshape(&[2, 6])),
            std::slice::from_ref(&a),
        ),
        run("sum", &probe(|_, x| x[0].sum()), std::slice::from_ref(&a)),
        run("mean", &probe(|_, x| x[0].mean()), std::slice::from_ref(&a)),
    ];
    for axis in 0..3 {
        out.push(run(
            &format!("sum_axis {axis}"),
            &probe(move |_, x| x[0].sum_axis(axis)),
            std::slice::from_ref(&cube),
        ));
        out.push(run(
            &format!("mean_axis {axis}"),
            &probe(move |_, x| x[0].mean_axis(axis)),
            std::slice::from_ref(&cube),
        ));
        out.push(run(
            &format!("max_axis {axis}"),
            &probe(move |_, x| x[0].max_axis(axis)),
            std::slice::from_ref(&cube),
        ));
        out.push(run(
            &format!("softmax axis {axis}"),
            &probe(move |_, x| x[0].softmax(axis, 0.7)),
            std::slice::from_ref(&cube),
        ));
    }
    out.extend([
        run(
            "select_last",
            &probe(|_, x| x[0].select_last(&[3, 1, 1])),
            std::slice::from_ref(&cube),
        ),
        run(
            "concat_last",
            &probe(|_, x| x[0].concat_last(x[1])),
            &[cube.clone(), random_input(&[2, 3, 2], 8, 0.0)],
        ),
        run(
            "cross_entropy",
            &probe(|_, x| x[0].cross_entropy(&[Some(1), None, Some(3)])),
            std::slice::from_ref(&a),
        ),
        run(
            "bce_with_logits",
            &probe(|_, x| x[0].bce_with_logits(&[1.0, 0.0, 1.0, 0.0])),
            std::slice::from_ref(&v),
        ),
    ]);
    for stride in [1, 2] {
        out.push(run(
            &format!("conv2d stride {stride}"),
            &probe(move |_, x| x[0].conv2d(x[1], x[2], stride, 1)),
            &[
                random_input(&[5, 6, 2], 9, 0.0),
                random_input(&[3, 3, 2, 3], 10, 0.0),
                random_input(&[3], 11, 0.0),
            ],
        ));
    }
    out.extend([
        run(
            "bilinear_resize up",
            &probe(|_, x| x[0].bilinear_resize(5, 7)),
            &[random_input(&[3, 4, 2], 12, 0.0)],
        ),
        run(
            "bilinear_resize down",
            &probe(|_, x| x[0].bilinear_resize(3, 4)),
            &[random_input(&[6, 6, 2], 13, 0.0)],
        ),
        run(
            "flip_w",
            &probe(|_, x| x[0].flip_w()),
            &[random_input(&[3, 4, 2], 14, 0.0)],
        ),
    ]);
    out
}

/// Column-stochastic `k x n` codes from random logits.
fn random_codes(k: usize, n: usize, seed: u64) -> Tensor {
    let mut r = rng(seed);
    let mut t = Tensor::from_fn(&[k, n], |_| r.random_range(-1.0..1.0f64).exp());
    let data = t.data_mut();
    for col in 0..n {
        let z: f64 = (0..k).map(|a| data[a * n + col]).sum();
        (0..k).for_each(|a| data[a * n + col] /= z);
    }
    t
}

fn factorization() -> Vec<Check> {
    let (d, k, n) = (5, 3, 6);
    let inputs = vec![
        random_input(&[d, n], 20, 0.0),
        random_input(&[d, n], 21, 0.0),
        random_codes(k, n, 22),
        random_codes(k, n, 23),
    ];
    let mut out = Vec::new();
    for (update, label) in [(CodeUpdate::Cosine, "cosine"), (CodeUpdate::Euclidean, "euclidean")] {
        for iterations in [1, 3] {
            let cfg = MfConfig {
                iterations,
                temperature: 0.8,
                update,
                ..MfConfig::default()
            };
            let f = probe(move |_, x| {
                let fac = mf::factorize(&x[..2], &x[2..], &cfg)?;
                let codes = fac.state.codes[0].add(fac.state.codes[1])?;
                fac.reconstructions[0]
                    .add(fac.reconstructions[1])?
                    .sum_axis(0)?
                    .add(codes.sum_axis(0)?)
            });
            out.push(run(&format!("factorize {label} T={iterations}"), &f, &inputs));
        }
    }
    out
}

fn cvlr_module() -> Vec<Check> {
    let (d_model, d, k, aux) = (4, 5, 3, 3);
    let mut store = ParamStore::new();
    let params = CvlrParams::init(&mut store, d_model, d, k, aux, &mut rng(30));
    let mut inputs = vec![
        random_input(&[3, 3, d_model], 31, 0.0),
        random_input(&[3, 3, d_model], 32, 0.0),
    ];
    inputs.extend(store.iter().map(|(_, t)| t.clone()));
    let mut out = Vec::new();
    for (iterations, dictionary) in [
        (1, DictionaryMode::Shared),
        (3, DictionaryMode::Shared),
        (3, DictionaryMode::Separate),
    ] {
        let cfg = CvlrConfig {
            k,
            d,
            temperature: 1.0,
            iterations,
            dictionary,
        };
        let f = probe(move |_, x| {
            let bound = Bound::from_vars(x[2..].to_vec());
            let o = cvlr::forward(&x[..2], &params, &bound, &cfg)?;
            let mut total = o.refined[0].sum_axis(2)?.add(o.refined[1].sum_axis(2)?)?;
            for m in o.code_maps.iter().chain(&o.aux_logits) {
                total = total.add(m.sum_axis(2)?)?;
            }
            Ok(total)
        });
        let mode = match dictionary {
            DictionaryMode::Shared => "shared",
            DictionaryMode::Separate => "separate",
        };
        out.push(run(&format!("cvlr {mode} T={iterations}"), &f, &inputs));
    }
    out
}

fn loss_functions() -> Vec<Check> {
    let k = 4;
    let big = random_input(&[6, 6, k], 40, 0.0);
    let small = random_input(&[3, 3, k], 41, 0.0);
    let geoms = [
        GeomTransform::IDENTITY,
        GeomTransform {
            scale: 0.5,
            hflip: true,
        },
    ];
    let targets = [
        LabelMap::from_fn(6, 6, |y, x| if (x + y) % 5 == 0 { None } else { Some((x / 2 + y) % k) }),
        LabelMap::from_fn(3, 3, |y, x| Some((x * y) % k)),
    ];
    let pair = [big.clone(), small.clone()];
    vec![
        run("seg loss", &probe(move |_, x| losses::seg_loss(x, &targets)), &pair),
        run("cls loss", &probe(|_, x| losses::cls_loss(x, &[1.0, 0.0, 1.0])), &pair),
        run(
            "mask consistency loss",
            &probe(move |_, x| {
                let masks = x.iter().map(|l| l.softmax(2, 1.0)).collect::<Result<Vec<_>>>()?;
                losses::mask_consistency_loss(&masks, &geoms, [6, 6], &[0, 2, 3])
            }),
            &pair,
        ),
        run(
            "code consistency loss",
            &probe(move |_, x| {
                let maps = x.iter().map(|l| l.softmax(2, 1.0)).collect::<Result<Vec<_>>>()?;
                cvlr::code_consistency_loss(&maps, &geoms, [6, 6])
            }),
            &pair,
        ),
    ]
}

fn whole_network() -> Vec<Check> {
    let config = ToyNetConfig {
        channels: [2, 3, 3],
        d_model: 4,
        decoder_channels: 3,
        aux_channels: 2,
        cvlr: CvlrConfig {
            k: 4,
            d: 5,
            ..CvlrConfig::default()
        },
        ..ToyNetConfig::default()
    };
    let mut store = ParamStore::new();
    let net = match ToyNet::init(&mut store, config, &mut rng(50)) {
        Ok(n) => n,
        Err(e) => return vec![Check::error("grad toy network", &e)],
    };
    let views = vec![positive(&[8, 8, 3], 51), positive(&[4, 4, 3], 52)];
    let nviews = views.len();
    let mut inputs = views;
    // Zero biases put some pre-activations exactly on the ReLU kink.
    inputs.extend(store.iter().enumerate().map(|(i, (_, t))| {
        let jitter = random_input(t.shape(), 60 + i as u64, 0.0);
        Tensor::from_fn(t.shape(), |j| t.data()[j] + 0.05 * jitter.data()[j])
    }));
    let f = probe(move |_, x| {
        let bound = Bound::from_vars(x[nviews..].to_vec());
        let o = net.forward(&x[..nviews], &bound)?;
        let mut total = losses::cls_loss(&o.logits, &[1.0, 0.0, 1.0])?;
        for m in o.logits.iter().chain(&o.aux_logits).chain(&o.code_maps) {
            total = total.add(m.mean()?)?;
        }
        Ok(total)
    });
    vec![run("toy network", &f, &inputs)]
}

pub fn all() -> Vec<Check> {
    let mut out = ops();
    out.extend(factorization());
    out.extend(cvlr_module());
    out.extend(loss_functions());
    out.extend(whole_network());
    out
}
