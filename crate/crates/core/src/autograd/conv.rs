use super::kernels::{axpy, dot};
use super::{BackwardFn, Var};
use crate::error::{Error, Result};
use crate::tensor::Element;

#[derive(Clone, Copy, Debug)]
struct Geometry {
    h: usize,
    w: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    /// Output columns `ox` whose input column `ox*stride + kx - pad` lies
    /// inside the image, as a half-open range.
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kx).div_ceil(self.stride);
        let hi_excl = (self.w + self.pad).saturating_sub(kx); // ix < w  <=>  ox*stride < w + pad - kx
        let hi = hi_excl.div_ceil(self.stride).min(self.wo);
        (lo.min(hi), hi)
    }

    fn input_row(&self, oy: usize, ky: usize) -> Option<usize> {
        (oy * self.stride + ky).checked_sub(self.pad).filter(|&iy| iy < self.h)
    }

    /// Visits every (out-row, in-row, col range) triple for kernel tap
    /// `(ky, kx)`; `f` gets the output row offset, input row offset and the
    /// number of valid output columns starting at `ox_lo`.
    fn for_each_tap(&self, ky: usize, kx: usize, mut f: impl FnMut(usize, usize, usize, usize)) {
        let (lo, hi) = self.valid_cols(kx);
        if lo >= hi {
            return;
        }
        for oy in 0..self.ho {
            if let Some(iy) = self.input_row(oy, ky) {
                let ix0 = lo * self.stride + kx - self.pad;
                f(oy * self.wo + lo, iy * self.w + ix0, hi - lo, self.stride);
            }
        }
    }
}

fn strided_axpy<T: Element>(alpha: T, x: &[T], stride: usize, y: &mut [T]) {
    if stride == 1 {
        axpy(alpha, &x[..y.len()], y);
    } else {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi += alpha * x[i * stride];
        }
    }
}

impl<'t, T: Element> Var<'t, T> {
    /// 2-D cross-correlation of `[C_in, H, W]` with `[C_out, C_in, kh, kw]`,
    /// with zero padding `padding` on every side and an optional per-channel
    /// bias.
    pub fn conv2d(
        self,
        weight: Var<'t, T>,
        bias: Option<Var<'t, T>>,
        stride: usize,
        padding: usize,
    ) -> Result<Var<'t, T>> {
        let (xs, ws) = (self.shape(), weight.shape());
        if xs.len() != 3 || ws.len() != 4 || xs[0] != ws[1] || stride == 0 {
            return Err(Error::shape("conv2d", &xs, &ws));
        }
        let (c_in, h, w) = (xs[0], xs[1], xs[2]);
        let (c_out, kh, kw) = (ws[0], ws[2], ws[3]);
        if kh > h + 2 * padding || kw > w + 2 * padding {
            return Err(Error::shape("conv2d", &xs, &ws));
        }
        if let Some(b) = bias {
            if b.shape() != [c_out] {
                return Err(Error::shape("conv2d bias", &ws, &b.shape()));
            }
        }
        let geo = Geometry {
            h,
            w,
            stride,
            pad: padding,
            ho: (h + 2 * padding - kh) / stride + 1,
            wo: (w + 2 * padding - kw) / stride + 1,
        };
        let (x, wt) = (self.value(), weight.value());
        let plane = geo.ho * geo.wo;
        let mut out = vec![T::zero(); c_out * plane];
        if let Some(b) = bias {
            let bv = b.value();
            for co in 0..c_out {
                out[co * plane..(co + 1) * plane].fill(bv[co]);
            }
        }
        for co in 0..c_out {
            let dst = &mut out[co * plane..(co + 1) * plane];
            for ci in 0..c_in {
                let src = &x[ci * h * w..(ci + 1) * h * w];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = wt[((co * c_in + ci) * kh + ky) * kw + kx];
                        geo.for_each_tap(ky, kx, |o, i, len, s| {
                            strided_axpy(wv, &src[i..], s, &mut dst[o..o + len]);
                        });
                    }
                }
            }
        }
        let mut inputs = vec![self, weight];
        inputs.extend(bias);
        let has_bias = bias.is_some();
        Ok(self.tape.push(
            "conv2d",
            vec![c_out, geo.ho, geo.wo],
            out,
            &inputs,
            move || -> BackwardFn<T> {
                Box::new(move |g, needs| {
                    let dx = needs[0].then(|| {
                        let mut dx = vec![T::zero(); c_in * h * w];
                        for co in 0..c_out {
                            let gp = &g[co * plane..(co + 1) * plane];
                            for ci in 0..c_in {
                                let dst = &mut dx[ci * h * w..(ci + 1) * h * w];
                                for ky in 0..kh {
                                    for kx in 0..kw {
                                        let wv = wt[((co * c_in + ci) * kh + ky) * kw + kx];
                                        geo.for_each_tap(ky, kx, |o, i, len, s| {
                                            if s == 1 {
                                                axpy(wv, &gp[o..o + len], &mut dst[i..i + len]);
                                            } else {
                                                for j in 0..len {
                                                    dst[i + j * s] += wv * gp[o + j];
                                                }
                                            }
                                        });
                                    }
                                }
                            }
                        }
                        dx
                    });
                    let dw = needs[1].then(|| {
                        let mut dw = vec![T::zero(); c_out * c_in * kh * kw];
                        for co in 0..c_out {
                            let gp = &g[co * plane..(co + 1) * plane];
                            for ci in 0..c_in {
                                let src = &x[ci * h * w..(ci + 1) * h * w];
                                for ky in 0..kh {
                                    for kx in 0..kw {
                                        let mut acc = T::zero();
                                        geo.for_each_tap(ky, kx, |o, i, len, s| {
                                            if s == 1 {
                                                acc += dot(&gp[o..o + len], &src[i..i + len]);
                                            } else {
                                                for j in 0..len {
                                                    acc += gp[o + j] * src[i + j * s];
                                                }
                                            }
                                        });
                                        dw[((co * c_in + ci) * kh + ky) * kw + kx] = acc;
                                    }
                                }
                            }
                        }
                        dw
                    });
                    let mut grads = vec![dx, dw];
                    if has_bias {
                        grads.push(needs[2].then(|| {
                            (0..c_out)
                                .map(|co| g[co * plane..(co + 1) * plane].iter().copied().sum())
                                .collect()
                        }));
                    }
                    grads
                })
            },
        ))
    }

    /// Non-overlapping mean pooling over the last two dims (`..., F, T`).
    pub fn avg_pool2d(self, ratio_f: usize, ratio_t: usize) -> Result<Var<'t, T>> {
        let shape = self.shape();
        if shape.len() < 2 || ratio_f == 0 || ratio_t == 0 {
            return Err(Error::config(format!(
                "avg_pool2d needs rank >= 2 and positive ratios, got {shape:?} with ({ratio_f}, {ratio_t})"
            )));
        }
        let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        if h % ratio_f != 0 || w % ratio_t != 0 {
            return Err(Error::config(format!(
                "pooling ratios ({ratio_f}, {ratio_t}) do not divide spatial dims ({h}, {w})"
            )));
        }
        if ratio_f == 1 && ratio_t == 1 {
            return Ok(self);
        }
        let lead: usize = shape[..shape.len() - 2].iter().product();
        let (ho, wo) = (h / ratio_f, w / ratio_t);
        let inv = T::from_f64(1.0 / (ratio_f * ratio_t) as f64);
        let x = self.value();
        let mut out = vec![T::zero(); lead * ho * wo];
        for l in 0..lead {
            for y in 0..h {
                let row = &x[(l * h + y) * w..(l * h + y + 1) * w];
                let dst = &mut out[(l * ho + y / ratio_f) * wo..(l * ho + y / ratio_f + 1) * wo];
                for (xi, &v) in row.iter().enumerate() {
                    dst[xi / ratio_t] += v * inv;
                }
            }
        }
        let mut out_shape = shape.clone();
        let r = out_shape.len();
        out_shape[r - 2] = ho;
        out_shape[r - 1] = wo;
        Ok(self.tape.push("avg_pool2d", out_shape, out, &[self], move || -> BackwardFn<T> {
            Box::new(move |g, _| {
                let mut dx = vec![T::zero(); lead * h * w];
                for l in 0..lead {
                    for y in 0..h {
                        let src = &g[(l * ho + y / ratio_f) * wo..(l * ho + y / ratio_f + 1) * wo];
                        let row = &mut dx[(l * h + y) * w..(l * h + y + 1) * w];
                        for (xi, d) in row.iter_mut().enumerate() {
                            *d = src[xi / ratio_t] * inv;
                        }
                    }
                }
                vec![Some(dx)]
            })
        }))
    }
}
