//! Collective matrix factorization over multiple views.
//!
//! Every view contributes a feature matrix `X_v` (`d x n_v`, one column per
//! pixel). All views share one dictionary `D` (`d x k`) and each keeps its
//! own code matrix `C_v` (`k x n_v`) whose columns are distributions over
//! the `k` atoms. One iteration is
//!
//! ```text
//! D   <- (sum_v X_v C_v^T) S^-1,   S = diag(sum_v C_v 1)
//! C_v <- softmax_atoms(D_norm^T X_v / temperature)
//! ```
//!
//! after which every view is reconstructed as `D C_v`, a matrix of rank at
//! most `k`. The update is built from tape ops so gradients flow through all
//! iterations.
//!
//! A hard mode replaces the code update with nearest-atom one-hot
//! assignment, which turns the iteration into Lloyd's K-means on the pooled
//! columns.

use crate::error::{Error, Result};
use crate::tensor::{matrix_dims, Tensor, Var};

/// Floor on the code mass of an atom and offset on atom norms.
pub const ATOM_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CodeUpdate {
    /// Softmax attention over unit-normalized atoms (the default).
    Cosine,
    /// Softmax over negative half squared distances to the raw atoms.
    Euclidean,
    /// One-hot nearest-atom assignment; not differentiable.
    Hard,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MfConfig {
    pub temperature: f64,
    pub iterations: usize,
    pub update: CodeUpdate,
    /// `Some(eps)` floors every atom's code mass at `eps`; `None` reports
    /// atoms with zero mass as [`Error::DegenerateAtom`].
    pub atom_guard: Option<f64>,
}

impl Default for MfConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            iterations: 1,
            update: CodeUpdate::Cosine,
            atom_guard: Some(ATOM_EPS),
        }
    }
}

/// Dictionary and codes after the alternating updates.
#[derive(Clone, Debug)]
pub struct FactorState<'t> {
    pub dictionary: Var<'t>,
    pub codes: Vec<Var<'t>>,
    pub temperature: f64,
    pub iterations: usize,
}

/// Snapshot after one full iteration: the dictionary it computed and the
/// codes assigned from that dictionary.
#[derive(Clone, Debug)]
pub struct IterationRecord<'t> {
    pub dictionary: Var<'t>,
    pub codes: Vec<Var<'t>>,
}

#[derive(Clone, Debug)]
pub struct Factorization<'t> {
    pub state: FactorState<'t>,
    pub reconstructions: Vec<Var<'t>>,
    pub trace: Vec<IterationRecord<'t>>,
}

fn check_views(xs: &[Var<'_>], cs: &[Var<'_>]) -> Result<(usize, usize)> {
    if xs.is_empty() {
        return Err(Error::Contract("at least one view is required".into()));
    }
    if xs.len() != cs.len() {
        return Err(Error::Contract(format!(
            "{} feature matrices but {} code matrices",
            xs.len(),
            cs.len()
        )));
    }
    let [d, _] = matrix_dims("mf_features", &xs[0].value())?;
    let [k, _] = matrix_dims("mf_codes", &cs[0].value())?;
    for (x, c) in xs.iter().zip(cs) {
        let [dx, nx] = matrix_dims("mf_features", &x.value())?;
        let [kc, nc] = matrix_dims("mf_codes", &c.value())?;
        if dx != d || kc != k || nx != nc {
            return Err(Error::dim(
                "collective_mf",
                format!("view features {dx}x{nx} vs codes {kc}x{nc}; expected d={d}, k={k}"),
            ));
        }
    }
    Ok((d, k))
}

/// Code-weighted mean of the features pooled over every view.
pub fn update_dictionary<'t>(xs: &[Var<'t>], cs: &[Var<'t>], atom_guard: Option<f64>) -> Result<Var<'t>> {
    check_views(xs, cs)?;
    let mut weighted = None;
    let mut mass = None;
    for (&x, &c) in xs.iter().zip(cs) {
        let xc = x.matmul(c.transpose()?)?;
        let m = c.sum_axis(1)?;
        weighted = Some(match weighted {
            None => xc,
            Some(acc) => Var::add(acc, xc)?,
        });
        mass = Some(match mass {
            None => m,
            Some(acc) => Var::add(acc, m)?,
        });
    }
    let (weighted, mass) = (weighted.unwrap(), mass.unwrap());
    let mass = match atom_guard {
        Some(eps) => mass.clamp_min(eps)?,
        None => {
            if let Some(atom) = mass.value().data().iter().position(|&m| m <= 0.0) {
                return Err(Error::DegenerateAtom { atom });
            }
            mass
        }
    };
    weighted.div_last(mass)
}

fn check_temperature(temperature: f64) -> Result<()> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::Parameter(format!(
            "temperature must be positive and finite, got {temperature}"
        )));
    }
    Ok(())
}

/// Softmax attention of every column over the unit-normalized atoms.
pub fn update_codes<'t>(xs: &[Var<'t>], dictionary: Var<'t>, temperature: f64) -> Result<Vec<Var<'t>>> {
    check_temperature(temperature)?;
    // The floor keeps the derivative of the norm finite at an all-zero atom.
    let norms = dictionary
        .square()?
        .sum_axis(0)?
        .clamp_min(ATOM_EPS * ATOM_EPS)?
        .sqrt()?
        .add_scalar(ATOM_EPS)?;
    let unit = dictionary.div_last(norms)?;
    let unit_t = unit.transpose()?;
    xs.iter().map(|&x| unit_t.matmul(x)?.softmax(0, temperature)).collect()
}

/// Softmax over `-||x - d_j||^2 / 2` (up to a per-column constant).
pub fn update_codes_euclidean<'t>(xs: &[Var<'t>], dictionary: Var<'t>, temperature: f64) -> Result<Vec<Var<'t>>> {
    check_temperature(temperature)?;
    let half_norms = dictionary.square()?.sum_axis(0)?.mul_scalar(-0.5)?;
    xs.iter()
        .map(|&x| {
            x.transpose()?
                .matmul(dictionary)?
                .add_last(half_norms)?
                .softmax(1, temperature)?
                .transpose()
        })
        .collect()
}

/// Nearest-atom one-hot codes (lowest index wins ties). Recorded as
/// constants.
pub fn hard_codes<'t>(xs: &[Var<'t>], dictionary: Var<'t>) -> Result<Vec<Var<'t>>> {
    let dict = dictionary.value();
    let [d, k] = matrix_dims("hard_codes", &dict)?;
    xs.iter()
        .map(|&x| {
            let xv = x.value();
            let [dx, n] = matrix_dims("hard_codes", &xv)?;
            if dx != d {
                return Err(Error::dim("hard_codes", format!("features d={dx}, dictionary d={d}")));
            }
            let mut codes = vec![0.0; k * n];
            for col in 0..n {
                let mut best = (0, f64::INFINITY);
                for atom in 0..k {
                    let dist: f64 = (0..d)
                        .map(|r| {
                            let diff = xv.data()[r * n + col] - dict.data()[r * k + atom];
                            diff * diff
                        })
                        .sum();
                    if dist < best.1 {
                        best = (atom, dist);
                    }
                }
                codes[best.0 * n + col] = 1.0;
            }
            Ok(x.tape().constant(Tensor::new(&[k, n], codes)?))
        })
        .collect()
}

fn code_step<'t>(xs: &[Var<'t>], dictionary: Var<'t>, cfg: &MfConfig) -> Result<Vec<Var<'t>>> {
    match cfg.update {
        CodeUpdate::Cosine => update_codes(xs, dictionary, cfg.temperature),
        CodeUpdate::Euclidean => update_codes_euclidean(xs, dictionary, cfg.temperature),
        CodeUpdate::Hard => hard_codes(xs, dictionary),
    }
}

/// Runs `cfg.iterations` alternating updates from `init_codes` and
/// reconstructs every view as `D C_v`. With zero iterations the dictionary
/// is computed once from the initial codes.
pub fn factorize<'t>(xs: &[Var<'t>], init_codes: &[Var<'t>], cfg: &MfConfig) -> Result<Factorization<'t>> {
    let (d, k) = check_views(xs, init_codes)?;
    let total: usize = xs.iter().map(|x| x.shape()[1]).sum();
    if k >= d || k >= total {
        return Err(Error::Parameter(format!(
            "latent dimension k={k} must be below d={d} and the column count {total}"
        )));
    }
    check_temperature(cfg.temperature)?;

    let mut codes = init_codes.to_vec();
    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut dictionary = update_dictionary(xs, &codes, cfg.atom_guard)?;
    for t in 0..cfg.iterations {
        if t > 0 {
            dictionary = update_dictionary(xs, &codes, cfg.atom_guard)?;
        }
        codes = code_step(xs, dictionary, cfg)?;
        trace.push(IterationRecord {
            dictionary,
            codes: codes.clone(),
        });
    }
    let reconstructions = codes.iter().map(|&c| dictionary.matmul(c)).collect::<Result<_>>()?;
    Ok(Factorization {
        state: FactorState {
            dictionary,
            codes,
            temperature: cfg.temperature,
            iterations: cfg.iterations,
        },
        reconstructions,
        trace,
    })
}

/// Factorizes every view on its own, with no dictionary sharing.
pub fn factorize_separate<'t>(
    xs: &[Var<'t>],
    init_codes: &[Var<'t>],
    cfg: &MfConfig,
) -> Result<Vec<Factorization<'t>>> {
    check_views(xs, init_codes)?;
    xs.iter()
        .zip(init_codes)
        .map(|(x, c)| factorize(std::slice::from_ref(x), std::slice::from_ref(c), cfg))
        .collect()
}

/// Sum over views of the Frobenius reconstruction error `||X_v - D C_v||`.
pub fn vq_objective(xs: &[Tensor], dictionary: &Tensor, codes: &[Tensor]) -> Result<f64> {
    if xs.len() != codes.len() {
        return Err(Error::Contract("feature and code lists differ in length".into()));
    }
    let mut total = 0.0;
    for (x, c) in xs.iter().zip(codes) {
        let recon = dictionary.matmul(c)?;
        if recon.shape() != x.shape() {
            return Err(Error::dim(
                "vq_objective",
                format!("features {:?} vs reconstruction {:?}", x.shape(), recon.shape()),
            ));
        }
        let sq: f64 = x.data().iter().zip(recon.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        total += sq.sqrt();
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::Tape;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        Tensor::from_fn(shape, |_| rng.random_range(-2.0..2.0))
    }

    fn one_hot(assign: &[usize], k: usize) -> Tensor {
        let n = assign.len();
        Tensor::from_fn(&[k, n], |i| if assign[i % n] == i / n { 1.0 } else { 0.0 })
    }

    #[test]
    fn hard_codes_give_cluster_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&mut rng, &[4, 12]);
        let assign: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let tape = Tape::new();
        let d = update_dictionary(
            &[tape.constant(x.clone())],
            &[tape.constant(one_hot(&assign, 3))],
            Some(ATOM_EPS),
        )
        .unwrap()
        .value();
        for atom in 0..3 {
            for r in 0..4 {
                let members: Vec<f64> = (0..12).filter(|&j| assign[j] == atom).map(|j| x.at(&[r, j])).collect();
                let mean = members.iter().sum::<f64>() / members.len() as f64;
                assert_eq!(d.at(&[r, atom]), mean);
            }
        }
    }

    #[test]
    fn duplicated_view_leaves_dictionary_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tape = Tape::new();
        let x = tape.constant(random(&mut rng, &[5, 9]));
        let c = tape.constant(random(&mut rng, &[3, 9])).softmax(0, 1.0).unwrap();
        let one = update_dictionary(&[x], &[c], Some(ATOM_EPS)).unwrap().value();
        let two = update_dictionary(&[x, x], &[c, c], Some(ATOM_EPS)).unwrap().value();
        assert!(one.max_abs_diff(&two) < 1e-14);
    }

    #[test]
    fn uniform_codes_give_global_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tape = Tape::new();
        let xa = random(&mut rng, &[4, 7]);
        let xb = random(&mut rng, &[4, 5]);
        let ca = tape.constant(Tensor::full(&[3, 7], 1.0 / 3.0));
        let cb = tape.constant(Tensor::full(&[3, 5], 1.0 / 3.0));
        let d = update_dictionary(
            &[tape.constant(xa.clone()), tape.constant(xb.clone())],
            &[ca, cb],
            Some(ATOM_EPS),
        )
        .unwrap()
        .value();
        for r in 0..4 {
            let mean = (xa.data()[r * 7..(r + 1) * 7].iter().sum::<f64>()
                + xb.data()[r * 5..(r + 1) * 5].iter().sum::<f64>())
                / 12.0;
            for atom in 0..3 {
                assert!((d.at(&[r, atom]) - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_mass_without_guard_is_degenerate() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(&[2, 3], |i| i as f64));
        let c = tape.constant(one_hot(&[0, 0, 1], 3));
        assert!(matches!(
            update_dictionary(&[x], &[c], None),
            Err(Error::DegenerateAtom { atom: 2 })
        ));
        let guarded = update_dictionary(&[x], &[c], Some(ATOM_EPS)).unwrap().value();
        assert_eq!(guarded.at(&[0, 2]), 0.0);
    }

    #[test]
    fn atom_column_gives_near_one_hot_code() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let tape = Tape::new();
        let dict = random(&mut rng, &[6, 3]);
        // feature columns copied from atoms 2, 0, 1
        let x = Tensor::from_fn(&[6, 3], |i| {
            let (r, c) = (i / 3, i % 3);
            dict.at(&[r, [2, 0, 1][c]])
        });
        let codes = update_codes(&[tape.constant(x)], tape.constant(dict), 1e-4).unwrap()[0].value();
        for (col, atom) in [2, 0, 1].into_iter().enumerate() {
            assert!((codes.at(&[atom, col]) - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn huge_temperature_flattens_codes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tape = Tape::new();
        let x = tape.constant(random(&mut rng, &[6, 10]));
        let d = tape.constant(random(&mut rng, &[6, 4]));
        let codes = update_codes(&[x], d, 1e6).unwrap()[0].value();
        for &v in codes.data() {
            assert!((v - 0.25).abs() < 1e-4);
        }
    }

    #[test]
    fn code_columns_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let tape = Tape::new();
        let xs: Vec<_> = [8, 11]
            .iter()
            .map(|&n| tape.constant(random(&mut rng, &[6, n])))
            .collect();
        let cs: Vec<_> = [8, 11]
            .iter()
            .map(|&n| tape.constant(random(&mut rng, &[3, n])).softmax(0, 1.0).unwrap())
            .collect();
        let cfg = MfConfig {
            iterations: 3,
            ..MfConfig::default()
        };
        let f = factorize(&xs, &cs, &cfg).unwrap();
        for rec in &f.trace {
            for c in &rec.codes {
                let c = c.value();
                let n = c.shape()[1];
                for j in 0..n {
                    let s: f64 = (0..3).map(|a| c.at(&[a, j])).sum();
                    assert!((s - 1.0).abs() < 1e-9);
                    assert!((0..3).all(|a| c.at(&[a, j]) >= 0.0));
                }
            }
        }
    }

    #[test]
    fn zero_iterations_reconstruct_from_initial_codes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let tape = Tape::new();
        let x = tape.constant(random(&mut rng, &[5, 8]));
        let c = tape.constant(random(&mut rng, &[2, 8])).softmax(0, 1.0).unwrap();
        let cfg = MfConfig {
            iterations: 0,
            ..MfConfig::default()
        };
        let f = factorize(&[x], &[c], &cfg).unwrap();
        let d0 = update_dictionary(&[x], &[c], Some(ATOM_EPS)).unwrap();
        let expect = d0.value().matmul(&c.value()).unwrap();
        assert_eq!(*f.reconstructions[0].value(), expect);
        assert!(f.trace.is_empty());
    }

    #[test]
    fn oversized_k_is_rejected() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[3, 10]));
        let c = tape.constant(Tensor::full(&[3, 10], 1.0 / 3.0));
        assert!(matches!(
            factorize(&[x], &[c], &MfConfig::default()),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn vq_objective_degenerate_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d = random(&mut rng, &[4, 2]);
        let c = one_hot(&[0, 1, 1, 0, 1], 2);
        let x = d.matmul(&c).unwrap();
        assert_eq!(
            vq_objective(std::slice::from_ref(&x), &d, std::slice::from_ref(&c)).unwrap(),
            0.0
        );
        let norm = x.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        let zero = Tensor::zeros(&[4, 2]);
        let got = vq_objective(&[x.clone(), x], &zero, &[c.clone(), c]).unwrap();
        assert!((got - 2.0 * norm).abs() < 1e-12);
    }

    #[test]
    fn euclidean_argmax_matches_hard_assignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let tape = Tape::new();
        let x = tape.constant(random(&mut rng, &[5, 20]));
        let d = tape.constant(random(&mut rng, &[5, 4]));
        let soft = update_codes_euclidean(&[x], d, 1e-4).unwrap()[0].value();
        let hard = hard_codes(&[x], d).unwrap()[0].value();
        let soft_t = soft.transpose().unwrap();
        let hard_t = hard.transpose().unwrap();
        assert_eq!(soft_t.argmax_last(), hard_t.argmax_last());
        assert!(soft.max_abs_diff(&hard) < 1e-3);
    }
}
