//! Central finite-difference gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slrnet::{Result, Tape, Tensor, Var};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

/// A differentiable function of several tensors. Non-scalar outputs are
/// reduced against a fixed random weighting so every output entry matters.
pub trait Probe {
    fn eval<'t>(&self, tape: &'t Tape, inputs: &[Var<'t>]) -> Result<Var<'t>>;
}

impl<F> Probe for F
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    fn eval<'t>(&self, tape: &'t Tape, inputs: &[Var<'t>]) -> Result<Var<'t>> {
        self(tape, inputs)
    }
}

fn scalarize<'t>(tape: &'t Tape, out: Var<'t>) -> Result<Var<'t>> {
    let shape = out.shape();
    if shape.is_empty() {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let w = Tensor::from_fn(&shape, |_| rng.random_range(0.5..1.5));
    out.mul(tape.constant(w))?.sum()
}

fn value(f: &dyn Probe, inputs: &[Tensor]) -> Result<f64> {
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    Ok(scalarize(&tape, f.eval(&tape, &vars)?)?.item())
}

/// Gradients from the tape.
pub fn analytic(f: &dyn Probe, inputs: &[Tensor]) -> Result<Vec<Tensor>> {
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = scalarize(&tape, f.eval(&tape, &vars)?)?;
    let grads = tape.backward(out)?;
    Ok(vars.iter().map(|&v| grads.wrt(v)).collect())
}

/// Gradients by central differences with step `h`.
pub fn numeric(f: &dyn Probe, inputs: &[Tensor], h: f64) -> Result<Vec<Tensor>> {
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = vec![0.0; inputs[i].len()];
        for (j, gj) in g.iter_mut().enumerate() {
            let x = inputs[i].data()[j];
            work[i].data_mut()[j] = x + h;
            let plus = value(f, &work)?;
            work[i].data_mut()[j] = x - h;
            let minus = value(f, &work)?;
            work[i].data_mut()[j] = x;
            *gj = (plus - minus) / (2.0 * h);
        }
        out.push(Tensor::new(inputs[i].shape(), g)?);
    }
    Ok(out)
}

fn norm(xs: impl Iterator<Item = f64>) -> f64 {
    xs.map(|v| v * v).sum::<f64>().sqrt()
}

/// `||a - n|| / max(||a||, ||n||)` over all inputs jointly; zero when both
/// gradients vanish.
pub fn relative_error(a: &[Tensor], n: &[Tensor]) -> f64 {
    let diff = norm(
        a.iter()
            .zip(n)
            .flat_map(|(x, y)| x.data().iter().zip(y.data()).map(|(p, q)| p - q)),
    );
    let scale = norm(a.iter().flat_map(|t| t.data().iter().copied()))
        .max(norm(n.iter().flat_map(|t| t.data().iter().copied())));
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Relative error between tape and finite-difference gradients.
pub fn check(f: &dyn Probe, inputs: &[Tensor]) -> Result<f64> {
    let a = analytic(f, inputs)?;
    let n = numeric(f, inputs, STEP)?;
    Ok(relative_error(&a, &n))
}

/// Uniform values in `[-2, 2]` kept at least `margin` away from zero, so
/// kinks at the origin stay outside the difference stencil.
pub fn random_input(shape: &[usize], seed: u64, margin: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| {
        let v: f64 = rng.random_range(-2.0..2.0);
        if v.abs() < margin {
            v.signum() * margin + v
        } else {
            v
        }
    })
}
