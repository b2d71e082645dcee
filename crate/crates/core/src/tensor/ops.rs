use std::rc::Rc;

use super::{matrix_dims, Tensor, Var};
use crate::error::{Error, Result};

/// `c = op(a) * op(b) + beta * c` for row-major operands, where `op` is an
/// optional transpose. `a` is `m x k` after `op`, `b` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if a_trans { (1, m) } else { (k, 1) };
    let (rsb, csb) = if b_trans { (1, k) } else { (n, 1) };
    // SAFETY: slice lengths are checked above and the strides describe
    // exactly those row-major buffers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Outer, axis and inner extents for a reduction over `axis`.
fn split_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::dim(op, format!("axis {axis} out of range for {shape:?}")));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn last_dim(op: &'static str, x: &Tensor, v: &Tensor) -> Result<usize> {
    let c = *x.shape().last().ok_or_else(|| Error::dim(op, "scalar input"))?;
    if v.shape() != [c] {
        return Err(Error::dim(
            op,
            format!("vector {:?} does not match last axis of {:?}", v.shape(), x.shape()),
        ));
    }
    Ok(c)
}

impl<'t> Var<'t> {
    fn unary(
        self,
        op: &'static str,
        f: impl Fn(f64) -> f64,
        // derivative given (input, output)
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Result<Var<'t>> {
        let x = self.value();
        let y = Tensor::new(x.shape(), x.data().iter().map(|&v| f(v)).collect())?;
        let yv = Rc::new(y.clone());
        self.tape.record(
            op,
            y,
            &[self],
            Box::new(move |g, _| {
                let gx = g
                    .iter()
                    .zip(x.data())
                    .zip(yv.data())
                    .map(|((g, &xi), &yi)| g * df(xi, yi))
                    .collect();
                vec![Some(gx)]
            }),
        )
    }

    pub fn neg(self) -> Result<Var<'t>> {
        self.unary("neg", |v| -v, |_, _| -1.0)
    }

    pub fn exp(self) -> Result<Var<'t>> {
        self.unary("exp", f64::exp, |_, y| y)
    }

    pub fn ln(self) -> Result<Var<'t>> {
        self.unary("ln", f64::ln, |x, _| 1.0 / x)
    }

    pub fn sqrt(self) -> Result<Var<'t>> {
        self.unary("sqrt", f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn abs(self) -> Result<Var<'t>> {
        self.unary("abs", f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn relu(self) -> Result<Var<'t>> {
        self.unary("relu", |v| v.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn recip(self) -> Result<Var<'t>> {
        self.unary("recip", |v| 1.0 / v, |_, y| -y * y)
    }

    pub fn square(self) -> Result<Var<'t>> {
        self.unary("square", |v| v * v, |x, _| 2.0 * x)
    }

    pub fn powi(self, p: i32) -> Result<Var<'t>> {
        self.unary("powi", move |v| v.powi(p), move |x, _| f64::from(p) * x.powi(p - 1))
    }

    pub fn sigmoid(self) -> Result<Var<'t>> {
        self.unary("sigmoid", sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn add_scalar(self, s: f64) -> Result<Var<'t>> {
        self.unary("add_scalar", move |v| v + s, |_, _| 1.0)
    }

    pub fn mul_scalar(self, s: f64) -> Result<Var<'t>> {
        self.unary("mul_scalar", move |v| v * s, move |_, _| s)
    }

    /// `max(x, lo)`; no gradient where clamped.
    pub fn clamp_min(self, lo: f64) -> Result<Var<'t>> {
        self.unary(
            "clamp_min",
            move |v| v.max(lo),
            move |x, _| {
                if x > lo {
                    1.0
                } else {
                    0.0
                }
            },
        )
    }

    fn binary(
        self,
        other: Var<'t>,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
        // partials given (a, b)
        da: impl Fn(f64, f64) -> f64 + 'static,
        db: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Result<Var<'t>> {
        let a = self.value();
        let b = other.value();
        same_shape(op, &a, &b)?;
        let y = Tensor::new(
            a.shape(),
            a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
        )?;
        self.tape.record(
            op,
            y,
            &[self, other],
            Box::new(move |g, needs| {
                let pairs = || g.iter().zip(a.data().iter().zip(b.data()));
                vec![
                    needs[0].then(|| pairs().map(|(g, (&x, &y))| g * da(x, y)).collect()),
                    needs[1].then(|| pairs().map(|(g, (&x, &y))| g * db(x, y)).collect()),
                ]
            }),
        )
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", |a, b| a + b, |_, _| 1.0, |_, _| 1.0)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", |a, b| a - b, |_, _| 1.0, |_, _| -1.0)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", |a, b| a * b, |_, b| b, |a, _| a)
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "div", |a, b| a / b, |_, b| 1.0 / b, |a, b| -a / (b * b))
    }

    /// Multiplies every slice along the last axis elementwise by `v`.
    pub fn mul_last(self, v: Var<'t>) -> Result<Var<'t>> {
        let x = self.value();
        let s = v.value();
        let c = last_dim("mul_last", &x, &s)?;
        let data = x
            .data()
            .chunks(c)
            .flat_map(|row| row.iter().zip(s.data()).map(|(a, b)| a * b))
            .collect();
        let y = Tensor::new(x.shape(), data)?;
        self.tape.record(
            "mul_last",
            y,
            &[self, v],
            Box::new(move |g, needs| {
                let gx = needs[0].then(|| {
                    g.chunks(c)
                        .flat_map(|row| row.iter().zip(s.data()).map(|(a, b)| a * b))
                        .collect()
                });
                let gv = needs[1].then(|| {
                    let mut acc = vec![0.0; c];
                    for (grow, xrow) in g.chunks(c).zip(x.data().chunks(c)) {
                        for j in 0..c {
                            acc[j] += grow[j] * xrow[j];
                        }
                    }
                    acc
                });
                vec![gx, gv]
            }),
        )
    }

    /// Divides every slice along the last axis elementwise by `v`.
    pub fn div_last(self, v: Var<'t>) -> Result<Var<'t>> {
        let x = self.value();
        let s = v.value();
        let c = last_dim("div_last", &x, &s)?;
        let data = x
            .data()
            .chunks(c)
            .flat_map(|row| row.iter().zip(s.data()).map(|(a, b)| a / b))
            .collect();
        let y = Tensor::new(x.shape(), data)?;
        self.tape.record(
            "div_last",
            y,
            &[self, v],
            Box::new(move |g, needs| {
                let gx = needs[0].then(|| {
                    g.chunks(c)
                        .flat_map(|row| row.iter().zip(s.data()).map(|(a, b)| a / b))
                        .collect()
                });
                let gv = needs[1].then(|| {
                    let mut acc = vec![0.0; c];
                    for (grow, xrow) in g.chunks(c).zip(x.data().chunks(c)) {
                        for j in 0..c {
                            acc[j] -= grow[j] * xrow[j] / (s.data()[j] * s.data()[j]);
                        }
                    }
                    acc
                });
                vec![gx, gv]
            }),
        )
    }

    /// Adds `b` to every slice along the last axis (bias add).
    pub fn add_last(self, b: Var<'t>) -> Result<Var<'t>> {
        let x = self.value();
        let bias = b.value();
        let c = last_dim("add_last", &x, &bias)?;
        let data = x
            .data()
            .chunks(c)
            .flat_map(|row| row.iter().zip(bias.data()).map(|(a, b)| a + b))
            .collect();
        let y = Tensor::new(x.shape(), data)?;
        self.tape.record(
            "add_last",
            y,
            &[self, b],
            Box::new(move |g, needs| {
                let gb = needs[1].then(|| {
                    let mut acc = vec![0.0; c];
                    for row in g.chunks(c) {
                        acc.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                    }
                    acc
                });
                vec![needs[0].then(|| g.to_vec()), gb]
            }),
        )
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let a = self.value();
        let b = other.value();
        let [m, k] = matrix_dims("matmul", &a)?;
        let [k2, n] = matrix_dims("matmul", &b)?;
        if k != k2 {
            return Err(Error::dim(
                "matmul",
                format!("inner dimensions differ: {:?} x {:?}", a.shape(), b.shape()),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, a.data(), false, b.data(), false, &mut out, 0.0);
        let y = Tensor::new(&[m, n], out)?;
        self.tape.record(
            "matmul",
            y,
            &[self, other],
            Box::new(move |g, needs| {
                let ga = needs[0].then(|| {
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g, false, b.data(), true, &mut ga, 0.0);
                    ga
                });
                let gb = needs[1].then(|| {
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, a.data(), true, g, false, &mut gb, 0.0);
                    gb
                });
                vec![ga, gb]
            }),
        )
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        let x = self.value();
        let [r, c] = matrix_dims("transpose", &x)?;
        let y = x.transpose()?;
        self.tape.record(
            "transpose",
            y,
            &[self],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; r * c];
                for i in 0..c {
                    for j in 0..r {
                        gx[j * c + i] = g[i * r + j];
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let y = (*self.value()).clone().reshape(shape)?;
        self.tape
            .record("reshape", y, &[self], Box::new(|g, _| vec![Some(g.to_vec())]))
    }

    pub fn sum(self) -> Result<Var<'t>> {
        let x = self.value();
        let n = x.len();
        let y = Tensor::scalar(x.data().iter().sum());
        self.tape
            .record("sum", y, &[self], Box::new(move |g, _| vec![Some(vec![g[0]; n])]))
    }

    pub fn mean(self) -> Result<Var<'t>> {
        let n = self.value().len();
        if n == 0 {
            return Err(Error::dim("mean", "empty tensor"));
        }
        self.sum()?.mul_scalar(1.0 / n as f64)
    }

    /// Sum over `axis`, removing it from the shape.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t>> {
        let x = self.value();
        let (outer, n, inner) = split_axis("sum_axis", x.shape(), axis)?;
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..n {
                let base = (o * n + a) * inner;
                for i in 0..inner {
                    out[o * inner + i] += x.data()[base + i];
                }
            }
        }
        let mut shape = x.shape().to_vec();
        shape.remove(axis);
        let y = Tensor::new(&shape, out)?;
        self.tape.record(
            "sum_axis",
            y,
            &[self],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    for a in 0..n {
                        let base = (o * n + a) * inner;
                        gx[base..base + inner].copy_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    pub fn mean_axis(self, axis: usize) -> Result<Var<'t>> {
        let n = *self
            .shape()
            .get(axis)
            .ok_or_else(|| Error::dim("mean_axis", format!("axis {axis} out of range")))?;
        if n == 0 {
            return Err(Error::dim("mean_axis", "empty axis"));
        }
        self.sum_axis(axis)?.mul_scalar(1.0 / n as f64)
    }

    /// Max over `axis`; the gradient goes to the first maximal entry.
    pub fn max_axis(self, axis: usize) -> Result<Var<'t>> {
        let x = self.value();
        let (outer, n, inner) = split_axis("max_axis", x.shape(), axis)?;
        if n == 0 {
            return Err(Error::dim("max_axis", "empty axis"));
        }
        let mut out = vec![f64::NEG_INFINITY; outer * inner];
        let mut arg = vec![0usize; outer * inner];
        for o in 0..outer {
            for a in 0..n {
                for i in 0..inner {
                    let v = x.data()[(o * n + a) * inner + i];
                    let slot = o * inner + i;
                    if v > out[slot] {
                        out[slot] = v;
                        arg[slot] = a;
                    }
                }
            }
        }
        let mut shape = x.shape().to_vec();
        shape.remove(axis);
        let y = Tensor::new(&shape, out)?;
        self.tape.record(
            "max_axis",
            y,
            &[self],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        let slot = o * inner + i;
                        gx[(o * n + arg[slot]) * inner + i] = g[slot];
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// `exp(x / temperature)` normalized along `axis`.
    pub fn softmax(self, axis: usize, temperature: f64) -> Result<Var<'t>> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::Parameter(format!(
                "softmax temperature must be positive and finite, got {temperature}"
            )));
        }
        let x = self.value();
        let (outer, n, inner) = split_axis("softmax", x.shape(), axis)?;
        let y = Tensor::new(x.shape(), softmax_along(x.data(), outer, n, inner, temperature))?;
        let yv = Rc::new(y.clone());
        self.tape.record(
            "softmax",
            y,
            &[self],
            Box::new(move |g, _| {
                let y = yv.data();
                let mut gx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |a: usize| (o * n + a) * inner + i;
                        let dot: f64 = (0..n).map(|a| g[idx(a)] * y[idx(a)]).sum();
                        for a in 0..n {
                            gx[idx(a)] = y[idx(a)] * (g[idx(a)] - dot) / temperature;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Keeps the listed indices of the last axis, in order.
    pub fn select_last(self, indices: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        let c = *x
            .shape()
            .last()
            .ok_or_else(|| Error::dim("select_last", "scalar input"))?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= c) {
            return Err(Error::dim(
                "select_last",
                format!("index {bad} out of range for last axis {c}"),
            ));
        }
        let idx = indices.to_vec();
        let data = x.data().chunks(c).flat_map(|row| idx.iter().map(|&i| row[i])).collect();
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = idx.len();
        let y = Tensor::new(&shape, data)?;
        let total = x.len();
        self.tape.record(
            "select_last",
            y,
            &[self],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; total];
                let rows = total.checked_div(c).unwrap_or(0);
                for r in 0..rows {
                    for (j, &i) in idx.iter().enumerate() {
                        gx[r * c + i] += g[r * idx.len() + j];
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Concatenates along the last axis; leading dims must agree.
    pub fn concat_last(self, other: Var<'t>) -> Result<Var<'t>> {
        let a = self.value();
        let b = other.value();
        let (sa, sb) = (a.shape(), b.shape());
        if sa.is_empty() || sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(Error::dim("concat_last", format!("{sa:?} with {sb:?}")));
        }
        let ca = *sa.last().unwrap();
        let cb = *sb.last().unwrap();
        let rows = a.len().checked_div(ca).unwrap_or(b.len().checked_div(cb).unwrap_or(0));
        let mut data = Vec::with_capacity(a.len() + b.len());
        for r in 0..rows {
            data.extend_from_slice(&a.data()[r * ca..(r + 1) * ca]);
            data.extend_from_slice(&b.data()[r * cb..(r + 1) * cb]);
        }
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = ca + cb;
        let y = Tensor::new(&shape, data)?;
        self.tape.record(
            "concat_last",
            y,
            &[self, other],
            Box::new(move |g, needs| {
                let c = ca + cb;
                let ga = needs[0].then(|| (0..rows).flat_map(|r| g[r * c..r * c + ca].iter().copied()).collect());
                let gb = needs[1].then(|| {
                    (0..rows)
                        .flat_map(|r| g[r * c + ca..(r + 1) * c].iter().copied())
                        .collect()
                });
                vec![ga, gb]
            }),
        )
    }

    /// Mean cross entropy of `[n, k]` logits against class targets; `None`
    /// targets are ignored. Zero when every target is ignored.
    pub fn cross_entropy(self, targets: &[Option<usize>]) -> Result<Var<'t>> {
        let x = self.value();
        let [n, k] = matrix_dims("cross_entropy", &x)?;
        if targets.len() != n {
            return Err(Error::dim(
                "cross_entropy",
                format!("{} targets for {n} rows", targets.len()),
            ));
        }
        if let Some(bad) = targets.iter().flatten().find(|&&t| t >= k) {
            return Err(Error::dim("cross_entropy", format!("target {bad} >= {k} classes")));
        }
        let count = targets.iter().flatten().count();
        let probs = softmax_along(x.data(), n, k, 1, 1.0);
        let mut total = 0.0;
        for (r, t) in targets.iter().enumerate() {
            if let Some(t) = *t {
                let row = &x.data()[r * k..(r + 1) * k];
                total += log_sum_exp(row) - row[t];
            }
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        let targets = targets.to_vec();
        self.tape.record(
            "cross_entropy",
            Tensor::scalar(loss),
            &[self],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; n * k];
                if count > 0 {
                    let scale = g[0] / count as f64;
                    for (r, t) in targets.iter().enumerate() {
                        if let Some(t) = *t {
                            for c in 0..k {
                                let onehot = if c == t { 1.0 } else { 0.0 };
                                gx[r * k + c] = scale * (probs[r * k + c] - onehot);
                            }
                        }
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Summed binary cross entropy of raw scores against `{0, 1}` targets,
    /// through a stable log-sigmoid.
    pub fn bce_with_logits(self, targets: &[f64]) -> Result<Var<'t>> {
        let x = self.value();
        if x.len() != targets.len() {
            return Err(Error::dim(
                "bce_with_logits",
                format!("{} scores for {} targets", x.len(), targets.len()),
            ));
        }
        let loss: f64 = x
            .data()
            .iter()
            .zip(targets)
            .map(|(&s, &y)| s.max(0.0) - s * y + (-s.abs()).exp().ln_1p())
            .sum();
        let targets = targets.to_vec();
        self.tape.record(
            "bce_with_logits",
            Tensor::scalar(loss),
            &[self],
            Box::new(move |g, _| {
                let gx = x
                    .data()
                    .iter()
                    .zip(&targets)
                    .map(|(&s, &y)| g[0] * (sigmoid(s) - y))
                    .collect();
                vec![Some(gx)]
            }),
        )
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Max-stabilized softmax of `x / temperature` along the middle extent.
pub(crate) fn softmax_along(x: &[f64], outer: usize, n: usize, inner: usize, temperature: f64) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |a: usize| (o * n + a) * inner + i;
            let m = (0..n).map(|a| x[idx(a)]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for a in 0..n {
                let e = ((x[idx(a)] - m) / temperature).exp();
                y[idx(a)] = e;
                z += e;
            }
            for a in 0..n {
                y[idx(a)] /= z;
            }
        }
    }
    y
}

/// Tape-free softmax along `axis` with temperature 1.
pub fn softmax_tensor(x: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, n, inner) = split_axis("softmax", x.shape(), axis)?;
    Tensor::new(x.shape(), softmax_along(x.data(), outer, n, inner, 1.0))
}

#[cfg(test)]
mod tests {
    use super::super::Tape;
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let tape = Tape::new();
        let b = t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let i3 = tape.constant(Tensor::eye(3));
        let out = i3.matmul(tape.constant(b.clone())).unwrap();
        assert_eq!(*out.value(), b);

        let a = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let ones = tape.constant(t(&[2, 1], &[1.0, 1.0]));
        assert_eq!(a.matmul(ones).unwrap().value().data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let msg = a.matmul(b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3] x [2, 3]"), "{msg}");
    }

    #[test]
    fn softmax_analytic_cases() {
        let tape = Tape::new();
        let x = tape.constant(t(&[2], &[0.0, 3f64.ln()]));
        let y = x.softmax(0, 1.0).unwrap().value();
        assert!((y.data()[0] - 0.25).abs() < 1e-15);
        assert!((y.data()[1] - 0.75).abs() < 1e-15);

        let flat = tape.constant(Tensor::full(&[5], 1.7));
        for &p in flat.softmax(0, 0.3).unwrap().value().data() {
            assert!((p - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_rejects_bad_temperature() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[3]));
        assert!(matches!(x.softmax(0, 0.0), Err(Error::Parameter(_))));
        assert!(matches!(x.softmax(0, -1.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn softmax_axis_zero_on_matrix() {
        let tape = Tape::new();
        let x = tape.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 1.0, 0.0, 3.0]));
        let y = x.softmax(0, 1.0).unwrap().value();
        for j in 0..3 {
            let s = y.at(&[0, j]) + y.at(&[1, j]);
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!((y.at(&[0, 2]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn uniform_logits_cross_entropy_is_ln_k() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[6, 4]));
        let targets: Vec<_> = (0..6).map(|i| Some(i % 4)).collect();
        let l = x.cross_entropy(&targets).unwrap().item();
        assert!((l - 4f64.ln()).abs() < 1e-14);
        let all_ignored = x.cross_entropy(&[None; 6]).unwrap().item();
        assert_eq!(all_ignored, 0.0);
    }

    #[test]
    fn reductions() {
        let tape = Tape::new();
        let x = tape.constant(t(&[2, 3], &[1.0, 5.0, 3.0, 4.0, 2.0, 6.0]));
        assert_eq!(x.sum_axis(0).unwrap().value().data(), &[5.0, 7.0, 9.0]);
        assert_eq!(x.sum_axis(1).unwrap().value().data(), &[9.0, 12.0]);
        assert_eq!(x.max_axis(1).unwrap().value().data(), &[5.0, 6.0]);
        assert_eq!(x.mean_axis(0).unwrap().value().data(), &[2.5, 3.5, 4.5]);
        assert_eq!(x.sum().unwrap().item(), 21.0);
    }

    #[test]
    fn select_and_concat() {
        let tape = Tape::new();
        let x = tape.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let s = x.select_last(&[2, 0]).unwrap();
        assert_eq!(s.value().data(), &[3.0, 1.0, 6.0, 4.0]);
        let c = s.concat_last(x).unwrap();
        assert_eq!(c.shape(), vec![2, 5]);
        assert_eq!(c.value().data()[..5], [3.0, 1.0, 1.0, 2.0, 3.0]);
    }
}
