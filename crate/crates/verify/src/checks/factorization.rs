//! Collective factorization against K-means and linear algebra oracles.

use rand::Rng;
use slrnet::mf::{self, CodeUpdate, MfConfig};
use slrnet::{Result, Tape, Tensor};

use super::{rng, Check};
use crate::oracle::{kmeans, rank};

fn gaussian_matrix(rows: usize, cols: usize, r: &mut impl Rng) -> Tensor {
    Tensor::from_fn(&[rows, cols], |_| r.random_range(-1.0..1.0))
}

fn columns(x: &Tensor) -> Vec<Vec<f64>> {
    let [d, n] = [x.shape()[0], x.shape()[1]];
    (0..n).map(|c| (0..d).map(|r| x.data()[r * n + c]).collect()).collect()
}

fn one_hot(assignment: &[usize], k: usize) -> Tensor {
    let n = assignment.len();
    Tensor::from_fn(&[k, n], |i| (assignment[i % n] == i / n) as u8 as f64)
}

/// Nearest-atom assignment read back from one-hot codes.
fn assignment_of(codes: &Tensor) -> Vec<usize> {
    let [k, n] = [codes.shape()[0], codes.shape()[1]];
    (0..n)
        .map(|c| (0..k).find(|&a| codes.data()[a * n + c] == 1.0).unwrap_or(usize::MAX))
        .collect()
}

fn hard(iterations: usize) -> MfConfig {
    MfConfig {
        iterations,
        update: CodeUpdate::Hard,
        ..MfConfig::default()
    }
}

/// Dictionary columns and assignment after one iteration.
type Step = (Vec<Vec<f64>>, Vec<usize>);

/// Hard-mode factorization of one view, traced per iteration.
fn hard_trace(x: &Tensor, init: &[usize], k: usize, iterations: usize) -> Result<Vec<Step>> {
    let tape = Tape::new();
    let xs = [tape.constant(x.clone())];
    let cs = [tape.constant(one_hot(init, k))];
    let fac = mf::factorize(&xs, &cs, &hard(iterations))?;
    Ok(fac
        .trace
        .iter()
        .map(|r| (columns(&r.dictionary.value()), assignment_of(&r.codes[0].value())))
        .collect())
}

pub fn kmeans_equivalence(instances: usize) -> Check {
    let (d, n, k, iterations) = (8, 30, 3, 5);
    let mut r = rng(101);
    let mut worst_centroid = 0.0f64;
    for inst in 0..instances {
        let x = gaussian_matrix(d, n, &mut r);
        let init: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let ours = match hard_trace(&x, &init, k, iterations) {
            Ok(t) => t,
            Err(e) => return Check::error("kmeans equivalence", &e),
        };
        let reference = kmeans::lloyd(&columns(&x), &init, k, iterations);
        for (t, ((dict, assign), step)) in ours.iter().zip(&reference).enumerate() {
            if *assign != step.assignment {
                return Check::new(
                    "kmeans equivalence",
                    false,
                    format!("instance {inst}, iteration {t}: assignments differ"),
                );
            }
            for (a, b) in dict.iter().zip(&step.centroids) {
                for (p, q) in a.iter().zip(b) {
                    worst_centroid = worst_centroid.max((p - q).abs());
                }
            }
        }
        if ours.len() != reference.len() {
            return Check::new(
                "kmeans equivalence",
                false,
                format!("instance {inst}: trace length differs"),
            );
        }
    }
    Check::new(
        "kmeans equivalence",
        worst_centroid < 1e-12,
        format!(
            "{instances} instances x {iterations} iterations, identical assignments, centroid gap {worst_centroid:.1e}"
        ),
    )
}

pub fn low_rank(instances: usize) -> Check {
    let (d, k, n) = (16, 4, 50);
    let mut r = rng(202);
    let mut worst = 0;
    for inst in 0..instances {
        let tape = Tape::new();
        let xs: Vec<_> = (0..2).map(|_| tape.constant(gaussian_matrix(d, n, &mut r))).collect();
        let cs: Vec<_> = (0..2)
            .map(|_| {
                let logits = gaussian_matrix(n, k, &mut r);
                tape.constant(logits).softmax(1, 1.0)?.transpose()
            })
            .collect::<Result<_>>()
            .expect("softmax of finite logits");
        let fac = match mf::factorize(&xs, &cs, &MfConfig::default()) {
            Ok(f) => f,
            Err(e) => return Check::error("low rank", &e),
        };
        for rec in &fac.reconstructions {
            let v = rec.value();
            let rk = rank::numeric_rank(d, n, v.data(), 1e-6);
            worst = worst.max(rk);
            if rk > k {
                return Check::new("low rank", false, format!("instance {inst}: rank {rk} > {k}"));
            }
        }
    }
    Check::new(
        "low rank",
        true,
        format!("{instances} instances, max numeric rank {worst} <= {k}"),
    )
}

pub fn monotonicity(instances: usize) -> Check {
    let (d, n, k, iterations) = (6, 40, 4, 10);
    let mut r = rng(303);
    let mut steps = 0;
    for inst in 0..instances {
        let x = gaussian_matrix(d, n, &mut r);
        let init: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let trace = match hard_trace(&x, &init, k, iterations) {
            Ok(t) => t,
            Err(e) => return Check::error("hard-mode monotonicity", &e),
        };
        // Objective after each half step: dictionary for the old codes, then
        // codes for the new dictionary.
        let mut values = Vec::new();
        let mut codes = one_hot(&init, k);
        for (dict, assign) in &trace {
            let dt = Tensor::from_fn(&[d, k], |i| dict[i % k][i / k]);
            let objective = |c: &Tensor| mf::vq_objective(std::slice::from_ref(&x), &dt, std::slice::from_ref(c));
            match (objective(&codes), objective(&one_hot(assign, k))) {
                (Ok(a), Ok(b)) => values.extend([a, b]),
                (Err(e), _) | (_, Err(e)) => return Check::error("hard-mode monotonicity", &e),
            }
            codes = one_hot(assign, k);
        }
        for (t, w) in values.windows(2).enumerate() {
            steps += 1;
            if w[1] > w[0] + 1e-9 {
                return Check::new(
                    "hard-mode monotonicity",
                    false,
                    format!("instance {inst}, half step {t}: {} -> {}", w[0], w[1]),
                );
            }
        }
    }
    Check::new(
        "hard-mode monotonicity",
        true,
        format!("{instances} instances, {steps} half steps non-increasing"),
    )
}

pub fn all() -> Vec<Check> {
    vec![kmeans_equivalence(100), low_rank(100), monotonicity(50)]
}
