use super::ops::gemm;
use super::{hwc_dims, Tensor, Var};
use crate::error::{Error, Result};

struct Geometry {
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn patch(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    /// Visits every (output pixel, patch column, input offset) triple that
    /// lands inside the unpadded input.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let patch = self.patch();
        for oy in 0..self.ho {
            for ox in 0..self.wo {
                let row = oy * self.wo + ox;
                for ky in 0..self.kh {
                    let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                    if iy < 0 || iy >= self.h as isize {
                        continue;
                    }
                    for kx in 0..self.kw {
                        let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                        if ix < 0 || ix >= self.w as isize {
                            continue;
                        }
                        let src = (iy as usize * self.w + ix as usize) * self.cin;
                        let col = row * patch + (ky * self.kw + kx) * self.cin;
                        f(col, src, self.cin);
                    }
                }
            }
        }
    }
}

impl<'t> Var<'t> {
    /// 2-D convolution over an `h x w x cin` map with a
    /// `kh x kw x cin x cout` kernel and per-channel bias. Zero padding.
    pub fn conv2d(self, weight: Var<'t>, bias: Var<'t>, stride: usize, pad: usize) -> Result<Var<'t>> {
        let x = self.value();
        let wt = weight.value();
        let b = bias.value();
        let [h, w, cin] = hwc_dims("conv2d", &x)?;
        let (kh, kw, cout) = match wt.shape() {
            [kh, kw, c, cout] if *c == cin => (*kh, *kw, *cout),
            s => {
                return Err(Error::dim(
                    "conv2d",
                    format!("kernel {s:?} incompatible with input {:?}", x.shape()),
                ))
            }
        };
        if b.shape() != [cout] {
            return Err(Error::dim(
                "conv2d",
                format!("bias {:?} for {cout} output channels", b.shape()),
            ));
        }
        if stride == 0 || h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::dim(
                "conv2d",
                format!("kernel {kh}x{kw} stride {stride} does not fit {h}x{w} with pad {pad}"),
            ));
        }
        let geo = Geometry {
            h,
            w,
            cin,
            kh,
            kw,
            stride,
            pad,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (w + 2 * pad - kw) / stride + 1,
        };
        let rows = geo.ho * geo.wo;
        let patch = geo.patch();

        let mut cols = vec![0.0; rows * patch];
        geo.for_each_tap(|col, src, n| {
            cols[col..col + n].copy_from_slice(&x.data()[src..src + n]);
        });
        let mut out = vec![0.0; rows * cout];
        for row in out.chunks_mut(cout) {
            row.copy_from_slice(b.data());
        }
        gemm(rows, patch, cout, &cols, false, wt.data(), false, &mut out, 1.0);
        let y = Tensor::new(&[geo.ho, geo.wo, cout], out)?;

        let input_len = x.len();
        self.tape.record(
            "conv2d",
            y,
            &[self, weight, bias],
            Box::new(move |g, needs| {
                let gx = needs[0].then(|| {
                    let mut gcols = vec![0.0; rows * patch];
                    gemm(rows, cout, patch, g, false, wt.data(), true, &mut gcols, 0.0);
                    let mut gx = vec![0.0; input_len];
                    geo.for_each_tap(|col, src, n| {
                        for (d, s) in gx[src..src + n].iter_mut().zip(&gcols[col..col + n]) {
                            *d += s;
                        }
                    });
                    gx
                });
                let gw = needs[1].then(|| {
                    let mut gw = vec![0.0; patch * cout];
                    gemm(patch, rows, cout, &cols, true, g, false, &mut gw, 0.0);
                    gw
                });
                let gb = needs[2].then(|| {
                    let mut gb = vec![0.0; cout];
                    for row in g.chunks(cout) {
                        gb.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                    }
                    gb
                });
                vec![gx, gw, gb]
            }),
        )
    }
}
