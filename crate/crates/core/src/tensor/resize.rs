use super::{hwc_dims, Tensor, Var};
use crate::error::{Error, Result};

/// Two-tap linear interpolation weights for one output coordinate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Taps {
    pub lo: usize,
    pub hi: usize,
    pub w_lo: f64,
    pub w_hi: f64,
}

/// Sampling taps for resizing an axis of length `input` to `output`, with
/// half-pixel centers (align corners off) and clamping at the edges.
pub fn bilinear_taps(input: usize, output: usize) -> Vec<Taps> {
    let ratio = input as f64 / output as f64;
    (0..output)
        .map(|d| {
            let src = ((d as f64 + 0.5) * ratio - 0.5).clamp(0.0, (input - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(input - 1);
            let w_hi = src - lo as f64;
            Taps {
                lo,
                hi,
                w_lo: 1.0 - w_hi,
                w_hi,
            }
        })
        .collect()
}

fn resize_kernel(x: &[f64], h: usize, w: usize, c: usize, ys: &[Taps], xs: &[Taps]) -> Vec<f64> {
    let mut out = vec![0.0; ys.len() * xs.len() * c];
    for (oy, ty) in ys.iter().enumerate() {
        for (ox, tx) in xs.iter().enumerate() {
            let dst = (oy * xs.len() + ox) * c;
            let corners = [
                (ty.lo, tx.lo, ty.w_lo * tx.w_lo),
                (ty.lo, tx.hi, ty.w_lo * tx.w_hi),
                (ty.hi, tx.lo, ty.w_hi * tx.w_lo),
                (ty.hi, tx.hi, ty.w_hi * tx.w_hi),
            ];
            for (iy, ix, wgt) in corners {
                let src = (iy * w + ix) * c;
                for ch in 0..c {
                    out[dst + ch] += wgt * x[src + ch];
                }
            }
        }
    }
    debug_assert_eq!(x.len(), h * w * c);
    out
}

fn resize_adjoint(g: &[f64], h: usize, w: usize, c: usize, ys: &[Taps], xs: &[Taps]) -> Vec<f64> {
    let mut gx = vec![0.0; h * w * c];
    for (oy, ty) in ys.iter().enumerate() {
        for (ox, tx) in xs.iter().enumerate() {
            let dst = (oy * xs.len() + ox) * c;
            let corners = [
                (ty.lo, tx.lo, ty.w_lo * tx.w_lo),
                (ty.lo, tx.hi, ty.w_lo * tx.w_hi),
                (ty.hi, tx.lo, ty.w_hi * tx.w_lo),
                (ty.hi, tx.hi, ty.w_hi * tx.w_hi),
            ];
            for (iy, ix, wgt) in corners {
                let src = (iy * w + ix) * c;
                for ch in 0..c {
                    gx[src + ch] += wgt * g[dst + ch];
                }
            }
        }
    }
    gx
}

fn check_size(out_h: usize, out_w: usize, h: usize, w: usize) -> Result<()> {
    if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
        return Err(Error::dim(
            "bilinear_resize",
            format!("cannot resize {h}x{w} to {out_h}x{out_w}"),
        ));
    }
    Ok(())
}

fn flip_kernel(x: &[f64], h: usize, w: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for y in 0..h {
        for xx in 0..w {
            let src = (y * w + xx) * c;
            let dst = (y * w + (w - 1 - xx)) * c;
            out[dst..dst + c].copy_from_slice(&x[src..src + c]);
        }
    }
    out
}

/// Tape-free bilinear resize of an `h x w x c` tensor.
pub fn resize_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let [h, w, c] = hwc_dims("bilinear_resize", x)?;
    check_size(out_h, out_w, h, w)?;
    if (out_h, out_w) == (h, w) {
        return Ok(x.clone());
    }
    let out = resize_kernel(x.data(), h, w, c, &bilinear_taps(h, out_h), &bilinear_taps(w, out_w));
    Tensor::new(&[out_h, out_w, c], out)
}

/// Tape-free horizontal mirror of an `h x w x c` tensor.
pub fn flip_horizontal(x: &Tensor) -> Result<Tensor> {
    let [h, w, c] = hwc_dims("flip_w", x)?;
    Tensor::new(x.shape(), flip_kernel(x.data(), h, w, c))
}

impl<'t> Var<'t> {
    /// Differentiable bilinear resize; the pullback scatters gradients with
    /// the interpolation weights.
    pub fn bilinear_resize(self, out_h: usize, out_w: usize) -> Result<Var<'t>> {
        let x = self.value();
        let [h, w, c] = hwc_dims("bilinear_resize", &x)?;
        check_size(out_h, out_w, h, w)?;
        if (out_h, out_w) == (h, w) {
            return Ok(self);
        }
        let ys = bilinear_taps(h, out_h);
        let xs = bilinear_taps(w, out_w);
        let y = Tensor::new(&[out_h, out_w, c], resize_kernel(x.data(), h, w, c, &ys, &xs))?;
        self.tape.record(
            "bilinear_resize",
            y,
            &[self],
            Box::new(move |g, _| vec![Some(resize_adjoint(g, h, w, c, &ys, &xs))]),
        )
    }

    /// Mirrors the width axis of an `h x w x c` map.
    pub fn flip_w(self) -> Result<Var<'t>> {
        let x = self.value();
        let [h, w, c] = hwc_dims("flip_w", &x)?;
        let y = Tensor::new(x.shape(), flip_kernel(x.data(), h, w, c))?;
        self.tape.record(
            "flip_w",
            y,
            &[self],
            Box::new(move |g, _| vec![Some(flip_kernel(g, h, w, c))]),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::super::Tape;
    use super::*;

    #[test]
    fn same_size_is_identity() {
        let x = Tensor::from_fn(&[4, 5, 2], |i| (i as f64).sin());
        assert_eq!(resize_bilinear(&x, 4, 5).unwrap(), x);
        let tape = Tape::new();
        let v = tape.param(x.clone());
        assert_eq!(*v.bilinear_resize(4, 5).unwrap().value(), x);
    }

    #[test]
    fn halving_averages_two_by_two_blocks() {
        let x = Tensor::from_fn(&[4, 4, 1], |i| i as f64);
        let y = resize_bilinear(&x, 2, 2).unwrap();
        // block (0,0) holds 0,1,4,5
        assert!((y.data()[0] - 2.5).abs() < 1e-12);
        assert!((y.data()[3] - 12.5).abs() < 1e-12);
    }

    #[test]
    fn taps_clamp_at_edges() {
        let taps = bilinear_taps(2, 4);
        assert_eq!(taps[0].lo, 0);
        assert_eq!(taps[0].w_lo, 1.0);
        assert_eq!(taps[3].hi, 1);
        assert_eq!(taps[3].lo, 1);
    }

    #[test]
    fn flip_is_an_involution() {
        let x = Tensor::from_fn(&[3, 5, 2], |i| i as f64 * 0.5);
        let once = flip_horizontal(&x).unwrap();
        assert_ne!(once, x);
        assert_eq!(flip_horizontal(&once).unwrap(), x);
        assert_eq!(once.at(&[1, 0, 1]), x.at(&[1, 4, 1]));
    }
}
