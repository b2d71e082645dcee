//! Parameter storage and the few layers the toy network needs.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Gradients, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Named parameter tensors in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.values.iter_mut()
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Records every parameter as a gradient-receiving leaf on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        Bound {
            vars: self.values.iter().map(|v| tape.param(v.clone())).collect(),
        }
    }

    /// Replaces all values, checking names and shapes against the store.
    pub fn load(&mut self, entries: Vec<(String, Tensor)>) -> Result<()> {
        if entries.len() != self.values.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.values.len(),
                entries.len()
            )));
        }
        for ((name, value), (own_name, own)) in entries.iter().zip(self.iter()) {
            if name != own_name || value.shape() != own.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` {:?} does not match `{own_name}` {:?}",
                    value.shape(),
                    own.shape()
                )));
            }
        }
        self.values = entries.into_iter().map(|(_, v)| v).collect();
        Ok(())
    }
}

/// The parameters of one store as leaves on one tape.
pub struct Bound<'t> {
    vars: Vec<Var<'t>>,
}

impl<'t> Bound<'t> {
    /// Uses `vars`, in store order, as the parameters.
    pub fn from_vars(vars: Vec<Var<'t>>) -> Self {
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> Var<'t> {
        self.vars[id.0]
    }

    /// Gradients for every parameter in store order.
    pub fn gradients(&self, grads: &Gradients) -> Vec<Tensor> {
        self.vars.iter().map(|&v| grads.wrt(v)).collect()
    }
}

/// He-normal initialized convolution with bias.
#[derive(Clone, Copy, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        kernel: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = (kernel * kernel * cin) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("valid std");
        let weight = Tensor::from_fn(&[kernel, kernel, cin, cout], |_| normal.sample(rng));
        Self {
            weight: store.add(format!("{name}.weight"), weight),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[cout])),
            stride,
            pad: kernel / 2,
        }
    }

    pub fn forward<'t>(&self, x: Var<'t>, p: &Bound<'t>) -> Result<Var<'t>> {
        x.conv2d(p.var(self.weight), p.var(self.bias), self.stride, self.pad)
    }
}

/// Bias-free linear map applied to the last axis of an `h x w x c` map.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
}

impl Linear {
    pub fn init(store: &mut ParamStore, name: &str, cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, (1.0 / cin as f64).sqrt()).expect("valid std");
        let weight = Tensor::from_fn(&[cin, cout], |_| normal.sample(rng));
        Self {
            weight: store.add(format!("{name}.weight"), weight),
        }
    }

    /// Maps `[n, cin]` rows to `[n, cout]`.
    pub fn forward<'t>(&self, x: Var<'t>, p: &Bound<'t>) -> Result<Var<'t>> {
        x.matmul(p.var(self.weight))
    }
}

/// SGD with momentum; weight decay is added to the gradient.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) {
        if self.velocity.is_empty() {
            self.velocity = store.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        }
        for ((param, grad), vel) in store.values_mut().zip(grads).zip(&mut self.velocity) {
            for ((w, g), v) in param.data_mut().iter_mut().zip(grad.data()).zip(vel.iter_mut()) {
                let g = g + self.weight_decay * *w;
                *v = self.momentum * *v + g;
                *w -= self.lr * *v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn bound_params_share_one_leaf() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let conv = Conv2d::init(&mut store, "c", 3, 2, 4, 1, &mut rng);
        let tape = Tape::new();
        let p = store.bind(&tape);
        assert_eq!(p.var(conv.weight), p.var(conv.weight));
        assert_eq!(tape.len(), 2);
    }

    #[test]
    fn sgd_plain_step() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::new(&[2], vec![1.0, -1.0]).unwrap());
        let mut opt = Sgd::new(0.1, 0.0, 0.0);
        opt.step(&mut store, &[Tensor::new(&[2], vec![2.0, 0.5]).unwrap()]);
        let w = store.get(store.id_of("w").unwrap()).data().to_vec();
        assert!((w[0] - 0.8).abs() < 1e-15 && (w[1] + 1.05).abs() < 1e-15);
    }

    #[test]
    fn load_checks_names_and_shapes() {
        let mut store = ParamStore::new();
        store.add("a", Tensor::zeros(&[2]));
        assert!(store.load(vec![("b".into(), Tensor::zeros(&[2]))]).is_err());
        assert!(store.load(vec![("a".into(), Tensor::zeros(&[3]))]).is_err());
        assert!(store.load(vec![("a".into(), Tensor::full(&[2], 1.0))]).is_ok());
    }
}
