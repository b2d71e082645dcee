//! Cross-view low-rank module.
//!
//! Features of every view are projected to a `d`-dimensional space,
//! factorized jointly with [`crate::mf`] using a shared dictionary, rebuilt
//! from the low-rank reconstruction, projected back and added to the input.
//! An auxiliary head predicts `k`-channel logits whose softmax initializes
//! the codes, so each atom is tied to one class.

use rand::Rng;

use crate::error::{Error, Result};
use crate::losses::pairwise_l1;
use crate::mf::{factorize, factorize_separate, CodeUpdate, Factorization, MfConfig, ATOM_EPS};
use crate::nn::{Bound, Conv2d, Linear, ParamStore};
use crate::tensor::Var;
use crate::transforms::GeomTransform;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DictionaryMode {
    Shared,
    /// One dictionary per view; views do not interact.
    Separate,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CvlrConfig {
    pub k: usize,
    pub d: usize,
    pub temperature: f64,
    pub iterations: usize,
    pub dictionary: DictionaryMode,
}

impl Default for CvlrConfig {
    fn default() -> Self {
        Self {
            k: 4,
            d: 256,
            temperature: 1.0,
            iterations: 1,
            dictionary: DictionaryMode::Shared,
        }
    }
}

impl CvlrConfig {
    fn mf(&self) -> MfConfig {
        MfConfig {
            temperature: self.temperature,
            iterations: self.iterations,
            update: CodeUpdate::Cosine,
            atom_guard: Some(ATOM_EPS),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CvlrParams {
    pub in_projector: Linear,
    pub out_projector: Linear,
    pub aux_hidden: Conv2d,
    pub aux_out: Conv2d,
    pub d_model: usize,
    pub d: usize,
    pub k: usize,
}

impl CvlrParams {
    pub fn init(
        store: &mut ParamStore,
        d_model: usize,
        d: usize,
        k: usize,
        aux_channels: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            in_projector: Linear::init(store, "cvlr.in_proj", d_model, d, rng),
            out_projector: Linear::init(store, "cvlr.out_proj", d, d_model, rng),
            aux_hidden: Conv2d::init(store, "cvlr.aux.0", 3, d_model, aux_channels, 1, rng),
            aux_out: Conv2d::init(store, "cvlr.aux.1", 1, aux_channels, k, 1, rng),
            d_model,
            d,
            k,
        }
    }
}

pub struct CvlrOutput<'t> {
    /// Input plus projected reconstruction, same shape as the input.
    pub refined: Vec<Var<'t>>,
    /// Auxiliary `h x w x k` logits that seeded the codes.
    pub aux_logits: Vec<Var<'t>>,
    /// Final `k x n` code matrices.
    pub codes: Vec<Var<'t>>,
    /// The codes laid out as `h x w x k` maps.
    pub code_maps: Vec<Var<'t>>,
}

/// Runs the module over all views of one sample.
pub fn forward<'t>(
    features: &[Var<'t>],
    params: &CvlrParams,
    bound: &Bound<'t>,
    cfg: &CvlrConfig,
) -> Result<CvlrOutput<'t>> {
    if features.is_empty() {
        return Err(Error::Contract("CVLR needs at least one view".into()));
    }
    if cfg.k != params.k || cfg.d != params.d {
        return Err(Error::Parameter(format!(
            "config k={}, d={} but parameters built for k={}, d={}",
            cfg.k, cfg.d, params.k, params.d
        )));
    }
    let mut dims = Vec::with_capacity(features.len());
    let mut xs = Vec::with_capacity(features.len());
    let mut inits = Vec::with_capacity(features.len());
    let mut aux_logits = Vec::with_capacity(features.len());
    for &f in features {
        let shape = f.shape();
        let [h, w] = match shape[..] {
            [h, w, c] if c == params.d_model => [h, w],
            _ => {
                return Err(Error::dim(
                    "cvlr",
                    format!("features {shape:?} do not end in d_model={}", params.d_model),
                ))
            }
        };
        let aux = params
            .aux_out
            .forward(params.aux_hidden.forward(f, bound)?.relu()?, bound)?;
        let n = h * w;
        inits.push(aux.reshape(&[n, params.k])?.softmax(1, 1.0)?.transpose()?);
        aux_logits.push(aux);
        let projected = params.in_projector.forward(f.reshape(&[n, params.d_model])?, bound)?;
        xs.push(projected.transpose()?);
        dims.push([h, w]);
    }

    let mf_cfg = cfg.mf();
    let results: Vec<(Var<'t>, Var<'t>)> = match cfg.dictionary {
        DictionaryMode::Shared => {
            let Factorization {
                state, reconstructions, ..
            } = factorize(&xs, &inits, &mf_cfg)?;
            reconstructions.into_iter().zip(state.codes).collect()
        }
        DictionaryMode::Separate => factorize_separate(&xs, &inits, &mf_cfg)?
            .into_iter()
            .map(|f| (f.reconstructions[0], f.state.codes[0]))
            .collect(),
    };

    let mut refined = Vec::with_capacity(features.len());
    let mut codes = Vec::with_capacity(features.len());
    let mut code_maps = Vec::with_capacity(features.len());
    for ((&f, [h, w]), (recon, code)) in features.iter().zip(dims).zip(results) {
        let back = params.out_projector.forward(recon.transpose()?, bound)?;
        refined.push(f.add(back.reshape(&[h, w, params.d_model])?)?);
        code_maps.push(code.transpose()?.reshape(&[h, w, params.k])?);
        codes.push(code);
    }
    Ok(CvlrOutput {
        refined,
        aux_logits,
        codes,
        code_maps,
    })
}

/// Mean L1 distance between every ordered pair of code maps after mapping
/// each back to the source frame of size `target`. Zero for a single view.
pub fn code_consistency_loss<'t>(
    code_maps: &[Var<'t>],
    geoms: &[GeomTransform],
    target: [usize; 2],
) -> Result<Var<'t>> {
    if code_maps.len() != geoms.len() {
        return Err(Error::Contract(format!(
            "{} code maps but {} transforms",
            code_maps.len(),
            geoms.len()
        )));
    }
    let aligned = code_maps
        .iter()
        .zip(geoms)
        .map(|(&c, g)| g.invert(c, target))
        .collect::<Result<Vec<_>>>()?;
    pairwise_l1(&aligned)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::{Tape, Tensor};

    fn setup(k: usize, d: usize) -> (ParamStore, CvlrParams, CvlrConfig) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = CvlrParams::init(&mut store, 6, d, k, 5, &mut rng);
        let cfg = CvlrConfig {
            k,
            d,
            ..CvlrConfig::default()
        };
        (store, params, cfg)
    }

    fn features(seed: u64, shape: &[usize]) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_out_projector_is_pure_skip() {
        let (mut store, params, cfg) = setup(3, 8);
        *store.get_mut(params.out_projector.weight) = Tensor::zeros(&[8, 6]);
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let x = features(1, &[4, 5, 6]);
        let out = forward(&[tape.constant(x.clone())], &params, &bound, &cfg).unwrap();
        assert_eq!(*out.refined[0].value(), x);
    }

    #[test]
    fn single_atom_codes_are_all_ones() {
        let (store, params, cfg) = setup(1, 8);
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let x = tape.constant(features(2, &[3, 3, 6]));
        let out = forward(&[x], &params, &bound, &cfg).unwrap();
        assert!(out.codes[0].value().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn output_shapes_follow_inputs() {
        let (store, params, cfg) = setup(3, 8);
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let a = tape.constant(features(3, &[4, 4, 6]));
        let b = tape.constant(features(4, &[2, 2, 6]));
        let out = forward(&[a, b], &params, &bound, &cfg).unwrap();
        assert_eq!(out.refined[0].shape(), vec![4, 4, 6]);
        assert_eq!(out.refined[1].shape(), vec![2, 2, 6]);
        assert_eq!(out.code_maps[1].shape(), vec![2, 2, 3]);
        assert_eq!(out.codes[0].shape(), vec![3, 16]);
    }

    #[test]
    fn code_consistency_degenerate_cases() {
        let tape = Tape::new();
        let c = tape.constant(features(5, &[4, 4, 2]));
        let id = GeomTransform::IDENTITY;
        assert_eq!(code_consistency_loss(&[c, c], &[id, id], [4, 4]).unwrap().item(), 0.0);
        assert_eq!(code_consistency_loss(&[c], &[id], [4, 4]).unwrap().item(), 0.0);

        let atom = |a: usize| tape.constant(Tensor::from_fn(&[4, 4, 2], |i| if i % 2 == a { 1.0 } else { 0.0 }));
        let loss = code_consistency_loss(&[atom(0), atom(1)], &[id, id], [4, 4]).unwrap();
        assert!((loss.item() - 2.0).abs() < 1e-15);
    }
}
