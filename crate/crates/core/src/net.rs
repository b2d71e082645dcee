//! Small Siamese encoder-decoder with the cross-view low-rank module
//! between encoder and decoder.
//!
//! ```text
//! image -> conv s1 -> conv s2 -> conv s2 -> conv s1 -> [cvlr] -> conv
//!                        |                                       | x2
//!                        +------------- concat -------------> conv -> 1x1 -> resize
//! ```
//!
//! All views go through the same parameters; the output stride of the
//! encoder is 4.

use rand::Rng;

use crate::cvlr::{self, CvlrConfig, CvlrParams};
use crate::error::{Error, Result};
use crate::nn::{Bound, Conv2d, ParamStore};
use crate::tensor::Var;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToyNetConfig {
    pub num_classes: usize,
    /// Channels of the first three encoder blocks.
    pub channels: [usize; 3],
    /// Channels of the last encoder block and of the CVLR input.
    pub d_model: usize,
    pub decoder_channels: usize,
    pub aux_channels: usize,
    /// Without CVLR the encoder output goes straight to the decoder.
    pub use_cvlr: bool,
    pub cvlr: CvlrConfig,
}

impl Default for ToyNetConfig {
    fn default() -> Self {
        Self {
            num_classes: 4,
            channels: [16, 32, 64],
            d_model: 64,
            decoder_channels: 32,
            aux_channels: 32,
            use_cvlr: true,
            cvlr: CvlrConfig {
                k: 4,
                d: 32,
                ..CvlrConfig::default()
            },
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ToyNet {
    pub config: ToyNetConfig,
    encoder: [Conv2d; 4],
    cvlr: Option<CvlrParams>,
    decoder_deep: Conv2d,
    decoder_fused: Conv2d,
    head: Conv2d,
}

/// Per-view outputs of one forward pass.
pub struct NetOutput<'t> {
    /// `h x w x k` logits at each view's input resolution.
    pub logits: Vec<Var<'t>>,
    /// Auxiliary code-initializer logits at feature resolution (empty
    /// without CVLR).
    pub aux_logits: Vec<Var<'t>>,
    /// Final codes as `h x w x k` maps at feature resolution (empty without
    /// CVLR).
    pub code_maps: Vec<Var<'t>>,
}

/// Spatial size after the two stride-2 encoder blocks.
pub fn feature_size(len: usize) -> usize {
    len.div_ceil(2).div_ceil(2)
}

impl ToyNet {
    pub fn init(store: &mut ParamStore, config: ToyNetConfig, rng: &mut impl Rng) -> Result<Self> {
        let [c1, c2, c3] = config.channels;
        if config.use_cvlr && config.cvlr.k != config.num_classes {
            return Err(Error::Parameter(format!(
                "latent dimension k={} must equal the class count {}",
                config.cvlr.k, config.num_classes
            )));
        }
        let encoder = [
            Conv2d::init(store, "enc.0", 3, 3, c1, 1, rng),
            Conv2d::init(store, "enc.1", 3, c1, c2, 2, rng),
            Conv2d::init(store, "enc.2", 3, c2, c3, 2, rng),
            Conv2d::init(store, "enc.3", 3, c3, config.d_model, 1, rng),
        ];
        let cvlr = config.use_cvlr.then(|| {
            CvlrParams::init(
                store,
                config.d_model,
                config.cvlr.d,
                config.cvlr.k,
                config.aux_channels,
                rng,
            )
        });
        let dc = config.decoder_channels;
        Ok(Self {
            config,
            encoder,
            cvlr,
            decoder_deep: Conv2d::init(store, "dec.0", 3, config.d_model, dc, 1, rng),
            decoder_fused: Conv2d::init(store, "dec.1", 3, dc + c2, dc, 1, rng),
            head: Conv2d::init(store, "dec.head", 1, dc, config.num_classes, 1, rng),
        })
    }

    /// Runs every view through the shared weights. Views are coupled only
    /// inside CVLR.
    pub fn forward<'t>(&self, views: &[Var<'t>], p: &Bound<'t>) -> Result<NetOutput<'t>> {
        if views.is_empty() {
            return Err(Error::Contract("forward needs at least one view".into()));
        }
        let mut sizes = Vec::with_capacity(views.len());
        let mut skips = Vec::with_capacity(views.len());
        let mut deep = Vec::with_capacity(views.len());
        for &v in views {
            let shape = v.shape();
            if shape.len() != 3 || shape[2] != 3 {
                return Err(Error::dim(
                    "toy_net",
                    format!("expected h x w x 3 image, got {shape:?}"),
                ));
            }
            sizes.push([shape[0], shape[1]]);
            let e1 = self.encoder[0].forward(v, p)?.relu()?;
            let e2 = self.encoder[1].forward(e1, p)?.relu()?;
            let e3 = self.encoder[2].forward(e2, p)?.relu()?;
            deep.push(self.encoder[3].forward(e3, p)?.relu()?);
            skips.push(e2);
        }

        let (deep, aux_logits, code_maps) = match &self.cvlr {
            Some(params) => {
                let out = cvlr::forward(&deep, params, p, &self.config.cvlr)?;
                (out.refined, out.aux_logits, out.code_maps)
            }
            None => (deep, Vec::new(), Vec::new()),
        };

        let mut logits = Vec::with_capacity(views.len());
        for ((f, skip), [h, w]) in deep.into_iter().zip(skips).zip(sizes) {
            let d1 = self.decoder_deep.forward(f, p)?.relu()?;
            let s = skip.shape();
            let up = d1.bilinear_resize(s[0], s[1])?;
            let fused = self.decoder_fused.forward(up.concat_last(skip)?, p)?.relu()?;
            let out = self.head.forward(fused, p)?;
            logits.push(out.bilinear_resize(h, w)?);
        }
        Ok(NetOutput {
            logits,
            aux_logits,
            code_maps,
        })
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::{Tape, Tensor};

    fn small() -> ToyNetConfig {
        ToyNetConfig {
            channels: [4, 6, 8],
            d_model: 8,
            decoder_channels: 6,
            aux_channels: 6,
            cvlr: CvlrConfig {
                k: 4,
                d: 6,
                ..CvlrConfig::default()
            },
            ..ToyNetConfig::default()
        }
    }

    #[test]
    fn output_sizes() {
        let mut store = ParamStore::new();
        let net = ToyNet::init(&mut store, small(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let tape = Tape::new();
        let p = store.bind(&tape);
        let a = tape.constant(Tensor::full(&[16, 16, 3], 0.5));
        let b = tape.constant(Tensor::full(&[8, 8, 3], 0.2));
        let out = net.forward(&[a, b], &p).unwrap();
        assert_eq!(out.logits[0].shape(), vec![16, 16, 4]);
        assert_eq!(out.logits[1].shape(), vec![8, 8, 4]);
        assert_eq!(out.code_maps[0].shape(), vec![4, 4, 4]);
        assert_eq!(out.aux_logits[1].shape(), vec![2, 2, 4]);
        assert_eq!(feature_size(15), 4);
    }

    #[test]
    fn k_must_match_classes() {
        let mut cfg = small();
        cfg.cvlr.k = 3;
        let mut store = ParamStore::new();
        assert!(ToyNet::init(&mut store, cfg, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn views_share_one_parameter_set() {
        let cfg = ToyNetConfig {
            use_cvlr: false,
            ..small()
        };
        let mut store = ParamStore::new();
        let net = ToyNet::init(&mut store, cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let image = Tensor::from_fn(&[16, 16, 3], |i| (i as f64 * 0.37).sin());
        let grads = |views: usize| {
            let tape = Tape::new();
            let p = store.bind(&tape);
            let inputs = vec![tape.constant(image.clone()); views];
            let out = net.forward(&inputs, &p).unwrap();
            let mut loss = out.logits[0].sum().unwrap();
            for l in &out.logits[1..] {
                loss = loss.add(l.sum().unwrap()).unwrap();
            }
            p.gradients(&tape.backward(loss).unwrap())
        };
        let (one, two) = (grads(1), grads(2));
        for (a, b) in one.iter().zip(&two) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(2.0 * x, *y);
            }
        }
    }

    #[test]
    fn identical_views_give_identical_outputs_through_cvlr() {
        let mut store = ParamStore::new();
        let net = ToyNet::init(&mut store, small(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let tape = Tape::new();
        let p = store.bind(&tape);
        let x = tape.constant(Tensor::from_fn(&[16, 16, 3], |i| (i as f64 * 0.11).cos()));
        let out = net.forward(&[x, x], &p).unwrap();
        assert_eq!(out.logits[0].value(), out.logits[1].value());
        assert_eq!(out.code_maps[0].value(), out.code_maps[1].value());
    }
}
