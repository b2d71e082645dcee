//! Training and evaluation of the toy segmenter.
//!
//! Each sample is cropped, expanded into its views, run through the shared
//! network, and supervised by ground truth (pixel-labeled samples) or by a
//! pseudo-mask calibrated from the network's own detached predictions.
//! Gradients are averaged over a batch before each optimizer step.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::cvlr::code_consistency_loss;
use crate::data::{generate_dataset, Dataset, Sample, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::label::{multi_hot, LabelMap};
use crate::losses::{cls_loss, mask_consistency_loss, seg_loss, LossTerms, LossWeights};
use crate::metrics::{ConfusionAccumulator, Metrics};
use crate::mvmc::{build_seg_targets, calibrate_restricted, PseudoMask};
use crate::net::{feature_size, ToyNet};
use crate::nn::{ParamStore, Sgd};
use crate::tensor::{Tape, Tensor, Var};
use crate::transforms::{self, random_crop, GeomTransform};

const STREAM_INIT: u64 = 3;
const STREAM_TRAIN: u64 = 4;

/// Mean per-sample loss values over one epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossSummary {
    pub total: f64,
    pub seg: f64,
    pub cls: f64,
    pub reg_mask: f64,
    pub reg_fact: f64,
    pub aux: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub split: &'static str,
    pub metrics: Metrics,
    pub losses: LossSummary,
    /// Mean fraction of pseudo-labeled pixels marked ignore.
    pub ignored: f64,
}

/// Callbacks for progress reporting and artifact writing.
pub trait TrainObserver {
    fn on_epoch(&mut self, _record: &EpochRecord, _store: &ParamStore) -> Result<()> {
        Ok(())
    }

    /// Called with the parameters as they were before the failing step.
    fn on_divergence(&mut self, _error: &Error, _store: &ParamStore) {}
}

impl TrainObserver for () {}

pub struct Trained {
    pub net: ToyNet,
    pub store: ParamStore,
    pub history: Vec<EpochRecord>,
    pub dataset: Dataset,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Freshly initialized network and parameters for `cfg`.
pub fn build_model(cfg: &ExperimentConfig) -> Result<(ToyNet, ParamStore)> {
    let mut store = ParamStore::new();
    let net = ToyNet::init(&mut store, cfg.model, &mut rng_for(cfg.seed, STREAM_INIT))?;
    Ok((net, store))
}

/// Unweighted loss values of one sample plus the total that is
/// differentiated.
struct SampleLoss<'t> {
    total: Var<'t>,
    summary: LossSummary,
    ignored: Option<f64>,
}

fn zero(tape: &Tape) -> Var<'_> {
    tape.constant(Tensor::scalar(0.0))
}

/// Pseudo-mask for one sample from detached per-view logits.
pub fn pseudo_mask(
    cfg: &ExperimentConfig,
    logits: &[Tensor],
    geoms: &[GeomTransform],
    source: &Tensor,
    labels: Option<&[usize]>,
) -> Result<PseudoMask> {
    let allowed: Option<Vec<usize>> = match labels {
        Some(l) if cfg.mvmc.label_filter => Some(std::iter::once(0).chain(l.iter().copied()).collect()),
        _ => None,
    };
    calibrate_restricted(logits, geoms, source, &cfg.mvmc.calibration(), allowed.as_deref())
}

#[allow(clippy::too_many_arguments)]
fn sample_loss<'t>(
    tape: &'t Tape,
    net: &ToyNet,
    bound: &crate::nn::Bound<'t>,
    cfg: &ExperimentConfig,
    weights: &LossWeights,
    sample: &Sample,
    rng: &mut impl Rng,
) -> Result<SampleLoss<'t>> {
    let (source, gt) = random_crop(&sample.image, Some(&sample.mask), cfg.aug.crop, rng)?;
    let gt = gt.expect("mask cropped with image");
    let specs = cfg.aug.draw_views(rng);
    let geoms: Vec<GeomTransform> = specs.iter().map(|s| s.geom).collect();
    let inputs = specs
        .iter()
        .map(|s| Ok(tape.constant(transforms::apply(s, &source)?)))
        .collect::<Result<Vec<_>>>()?;
    let out = net.forward(&inputs, bound)?;
    let size = [cfg.aug.crop, cfg.aug.crop];
    let labels = sample.visible.image.then_some(sample.labels.as_slice());
    let latent = net.config.use_cvlr && cfg.latent_reg;

    // Ground truth is reliable from the start; pseudo-masks wait for warmup.
    let seg_weight = if sample.visible.pixel {
        cfg.loss.seg
    } else {
        weights.seg
    };
    let mut ignored = None;
    let targets: Option<Vec<LabelMap>> = if sample.visible.pixel {
        Some(geoms.iter().map(|g| g.forward_labels(&gt)).collect())
    } else if seg_weight > 0.0 {
        let detached: Vec<Tensor> = out.logits.iter().map(|l| (*l.value()).clone()).collect();
        let pseudo = pseudo_mask(cfg, &detached, &geoms, &source, labels)?;
        ignored = Some(pseudo.ignored_fraction());
        Some(build_seg_targets(&pseudo, &geoms))
    } else {
        None
    };

    let seg = match &targets {
        Some(t) => seg_loss(&out.logits, t)?,
        None => zero(tape),
    };
    let y = labels.map(|l| multi_hot(l, NUM_CLASSES));
    let cls = match &y {
        Some(y) => cls_loss(&out.logits, y)?,
        None => zero(tape),
    };
    let classes: Vec<usize> = match labels {
        Some(l) => l.to_vec(),
        None => (0..NUM_CLASSES).collect(),
    };
    let masks = out
        .logits
        .iter()
        .map(|l| l.softmax(2, 1.0))
        .collect::<Result<Vec<_>>>()?;
    let reg_mask = mask_consistency_loss(&masks, &geoms, size, &classes)?;
    let reg_fact = if latent {
        let fs = feature_size(cfg.aug.crop);
        code_consistency_loss(&out.code_maps, &geoms, [fs, fs])?
    } else {
        zero(tape)
    };

    let mut aux = zero(tape);
    if latent {
        if let Some(t) = &targets {
            let up = out
                .aux_logits
                .iter()
                .zip(&inputs)
                .map(|(a, v)| {
                    let s = v.shape();
                    a.bilinear_resize(s[0], s[1])
                })
                .collect::<Result<Vec<_>>>()?;
            aux = aux.add(seg_loss(&up, t)?.mul_scalar(seg_weight)?)?;
        }
        if let Some(y) = &y {
            aux = aux.add(cls_loss(&out.aux_logits, y)?.mul_scalar(weights.cls)?)?;
        }
    }

    let w = LossWeights {
        seg: seg_weight,
        ..*weights
    };
    let terms = LossTerms {
        seg,
        cls,
        reg_mask,
        reg_fact,
    };
    let mut total = terms.total(&w)?.add(aux)?;
    if sample.visible.pixel {
        total = total.mul_scalar(cfg.pixel_loss_scale)?;
    }
    Ok(SampleLoss {
        total,
        summary: LossSummary {
            total: total.item(),
            seg: seg.item(),
            cls: cls.item(),
            reg_mask: reg_mask.item(),
            reg_fact: reg_fact.item(),
            aux: aux.item(),
        },
        ignored,
    })
}

fn diverged(epoch: usize, step: usize, e: Error) -> Error {
    match e {
        Error::NonFinite { op } => Error::Divergence {
            epoch,
            step,
            detail: format!("non-finite value in {op}"),
        },
        other => other,
    }
}

/// Trains from scratch and evaluates on the validation split after every
/// epoch. Runs are deterministic in the config.
pub fn train(cfg: &ExperimentConfig, observer: &mut dyn TrainObserver) -> Result<Trained> {
    cfg.validate()?;
    let dataset = generate_dataset(&cfg.dataset_spec())?;
    let (net, mut store) = build_model(cfg)?;
    let mut opt = Sgd::new(cfg.train.lr, cfg.train.momentum, cfg.train.weight_decay);
    let mut rng = rng_for(cfg.seed, STREAM_TRAIN);

    let mut order: Vec<usize> = Vec::new();
    for (i, s) in dataset.train.iter().enumerate() {
        let reps = if s.visible.pixel { cfg.pixel_oversample } else { 1 };
        order.extend(std::iter::repeat_n(i, reps));
    }

    let mut history = Vec::with_capacity(cfg.train.epochs);
    let mut step = 0;
    for epoch in 0..cfg.train.epochs {
        let weights = cfg.loss.at_epoch(epoch);
        order.shuffle(&mut rng);
        let mut sum = LossSummary::default();
        let (mut ignored_sum, mut ignored_n) = (0.0, 0usize);
        for batch in order.chunks(cfg.train.batch) {
            let mut grads: Option<Vec<Tensor>> = None;
            for &i in batch {
                let tape = Tape::new();
                let bound = store.bind(&tape);
                let loss = sample_loss(&tape, &net, &bound, cfg, &weights, &dataset.train[i], &mut rng)
                    .map_err(|e| diverged(epoch + 1, step, e));
                let loss = match loss {
                    Ok(l) => l,
                    Err(e) => {
                        observer.on_divergence(&e, &store);
                        return Err(e);
                    }
                };
                let g = match tape.backward(loss.total) {
                    Ok(g) => bound.gradients(&g),
                    Err(e) => {
                        let e = diverged(epoch + 1, step, e);
                        observer.on_divergence(&e, &store);
                        return Err(e);
                    }
                };
                if let Some(bad) = g.iter().position(|t| !t.is_finite()) {
                    let e = Error::Divergence {
                        epoch: epoch + 1,
                        step,
                        detail: format!("non-finite gradient for `{}`", store.iter().nth(bad).unwrap().0),
                    };
                    observer.on_divergence(&e, &store);
                    return Err(e);
                }
                grads = Some(match grads {
                    None => g,
                    Some(mut acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            a.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x += y);
                        }
                        acc
                    }
                });
                let s = loss.summary;
                sum.total += s.total;
                sum.seg += s.seg;
                sum.cls += s.cls;
                sum.reg_mask += s.reg_mask;
                sum.reg_fact += s.reg_fact;
                sum.aux += s.aux;
                if let Some(f) = loss.ignored {
                    ignored_sum += f;
                    ignored_n += 1;
                }
            }
            let mut grads = grads.expect("non-empty batch");
            let inv = 1.0 / batch.len() as f64;
            let norm = grads
                .iter()
                .flat_map(|t| t.data())
                .map(|v| v * v * inv * inv)
                .sum::<f64>()
                .sqrt();
            let clip = cfg.train.grad_clip;
            let scale = if clip > 0.0 && norm > clip {
                inv * clip / norm
            } else {
                inv
            };
            for t in &mut grads {
                t.data_mut().iter_mut().for_each(|v| *v *= scale);
            }
            opt.step(&mut store, &grads);
            step += 1;
        }
        let n = order.len().max(1) as f64;
        let losses = LossSummary {
            total: sum.total / n,
            seg: sum.seg / n,
            cls: sum.cls / n,
            reg_mask: sum.reg_mask / n,
            reg_fact: sum.reg_fact / n,
            aux: sum.aux / n,
        };
        let metrics = match evaluate(&net, &store, &dataset.val) {
            Ok(m) => m,
            Err(e) => {
                let e = diverged(epoch + 1, step, e);
                observer.on_divergence(&e, &store);
                return Err(e);
            }
        };
        let record = EpochRecord {
            epoch: epoch + 1,
            split: "val",
            metrics,
            losses,
            ignored: if ignored_n == 0 {
                0.0
            } else {
                ignored_sum / ignored_n as f64
            },
        };
        observer.on_epoch(&record, &store)?;
        history.push(record);
    }
    Ok(Trained {
        net,
        store,
        history,
        dataset,
    })
}

/// Per-pixel class prediction from a single unaugmented view.
pub fn predict(net: &ToyNet, store: &ParamStore, image: &Tensor) -> Result<Vec<usize>> {
    let tape = Tape::new();
    let bound = store.bind(&tape);
    let out = net.forward(&[tape.constant(image.clone())], &bound)?;
    Ok(out.logits[0].value().argmax_last())
}

pub fn evaluate(net: &ToyNet, store: &ParamStore, samples: &[Sample]) -> Result<Metrics> {
    let mut acc = ConfusionAccumulator::new(NUM_CLASSES);
    for s in samples {
        acc.add(s.mask.labels(), &predict(net, store, &s.image)?)?;
    }
    acc.metrics()
}

/// Pseudo-mask for a full training image under the configured view set,
/// with views drawn from `rng`.
pub fn sample_pseudo_mask(
    net: &ToyNet,
    store: &ParamStore,
    cfg: &ExperimentConfig,
    sample: &Sample,
    rng: &mut impl Rng,
) -> Result<PseudoMask> {
    let specs = cfg.aug.draw_views(rng);
    let geoms: Vec<GeomTransform> = specs.iter().map(|s| s.geom).collect();
    let tape = Tape::new();
    let bound = store.bind(&tape);
    let inputs = specs
        .iter()
        .map(|s| Ok(tape.constant(transforms::apply(s, &sample.image)?)))
        .collect::<Result<Vec<_>>>()?;
    let out = net.forward(&inputs, &bound)?;
    let logits: Vec<Tensor> = out.logits.iter().map(|l| (*l.value()).clone()).collect();
    let labels = sample.visible.image.then_some(sample.labels.as_slice());
    pseudo_mask(cfg, &logits, &geoms, &sample.image, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;

    fn tiny() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.data.train = 4;
        cfg.data.val = 2;
        cfg.data.size = 16;
        cfg.aug.crop = 16;
        cfg.model.channels = [4, 6, 8];
        cfg.model.d_model = 8;
        cfg.model.decoder_channels = 6;
        cfg.model.aux_channels = 6;
        cfg.model.cvlr.d = 8;
        cfg.train.epochs = 2;
        cfg.train.batch = 2;
        cfg.loss.warmup_epochs = 1;
        cfg
    }

    #[test]
    fn runs_are_deterministic() {
        let cfg = tiny();
        let a = train(&cfg, &mut ()).unwrap();
        let b = train(&cfg, &mut ()).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.store, b.store);
        assert_eq!(a.history.len(), 2);
    }

    #[test]
    fn unlabeled_samples_have_no_cls_term() {
        let mut cfg = tiny();
        cfg.data.regime = crate::data::Regime::SemiPixelUnlabeled;
        cfg.data.pixel_fraction = 0.0;
        cfg.train.epochs = 1;
        let t = train(&cfg, &mut ()).unwrap();
        assert_eq!(t.history[0].losses.cls, 0.0);
    }

    #[test]
    fn single_view_has_no_cross_view_terms() {
        let mut cfg = tiny();
        cfg.aug.scales = vec![1.0];
        let t = train(&cfg, &mut ()).unwrap();
        for r in &t.history {
            assert_eq!(r.losses.reg_mask, 0.0);
            assert_eq!(r.losses.reg_fact, 0.0);
        }
    }
}
