use super::kernels::softmax_row;
use super::{BackwardFn, Var};
use crate::error::{Error, Result};
use crate::tensor::Element;

impl<'t, T: Element> Var<'t, T> {
    /// Softmax along `axis`, stabilised by max-subtraction.
    pub fn softmax(self, axis: usize) -> Result<Var<'t, T>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::contract(format!(
                "softmax axis {axis} out of range for {shape:?}"
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let x = self.value();
        let mut out = x.to_vec();
        let mut line = vec![T::zero(); len];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                for a in 0..len {
                    line[a] = out[base + a * inner];
                }
                softmax_row(&mut line);
                for a in 0..len {
                    out[base + a * inner] = line[a];
                }
            }
        }
        let y = std::rc::Rc::new(out);
        let saved = std::rc::Rc::clone(&y);
        Ok(self.tape.push_rc("softmax", shape, y, &[self], move || -> BackwardFn<T> {
            Box::new(move |g, _| {
                let mut dx = vec![T::zero(); saved.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let mut s = T::zero();
                        for a in 0..len {
                            let k = base + a * inner;
                            s += g[k] * saved[k];
                        }
                        for a in 0..len {
                            let k = base + a * inner;
                            dx[k] = saved[k] * (g[k] - s);
                        }
                    }
                }
                vec![Some(dx)]
            })
        }))
    }

    /// Layer normalisation over the last axis with population variance,
    /// followed by `gain ⊙ x̂ + offset`.
    pub fn layer_norm(self, gain: Var<'t, T>, offset: Var<'t, T>, eps: T) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let dim = *shape.last().ok_or_else(|| Error::contract("layer_norm on a scalar"))?;
        if gain.shape() != [dim] || offset.shape() != [dim] {
            return Err(Error::shape("layer_norm", &shape, &gain.shape()));
        }
        let x = self.value();
        let (gv, bv) = (gain.value(), offset.value());
        let rows = x.len() / dim;
        let inv_n = T::from_f64(1.0 / dim as f64);
        let mut xhat = vec![T::zero(); x.len()];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); x.len()];
        for r in 0..rows {
            let row = &x[r * dim..(r + 1) * dim];
            let mean = row.iter().copied().sum::<T>() * inv_n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
            let is = (var + eps).sqrt().recip();
            inv_std[r] = is;
            for j in 0..dim {
                let h = (row[j] - mean) * is;
                xhat[r * dim + j] = h;
                out[r * dim + j] = gv[j] * h + bv[j];
            }
        }
        Ok(self.tape.push(
            "layer_norm",
            shape,
            out,
            &[self, gain, offset],
            move || -> BackwardFn<T> {
                Box::new(move |g, needs| {
                    let dx = needs[0].then(|| {
                        let mut dx = vec![T::zero(); xhat.len()];
                        let mut dh = vec![T::zero(); dim];
                        for r in 0..rows {
                            let gr = &g[r * dim..(r + 1) * dim];
                            let hr = &xhat[r * dim..(r + 1) * dim];
                            let mut s1 = T::zero();
                            let mut s2 = T::zero();
                            for j in 0..dim {
                                dh[j] = gr[j] * gv[j];
                                s1 += dh[j];
                                s2 += dh[j] * hr[j];
                            }
                            for j in 0..dim {
                                dx[r * dim + j] =
                                    inv_std[r] * (dh[j] - inv_n * s1 - hr[j] * inv_n * s2);
                            }
                        }
                        dx
                    });
                    let dgain = needs[1].then(|| {
                        let mut d = vec![T::zero(); dim];
                        for (gr, hr) in g.chunks_exact(dim).zip(xhat.chunks_exact(dim)) {
                            for j in 0..dim {
                                d[j] += gr[j] * hr[j];
                            }
                        }
                        d
                    });
                    let doffset = needs[2].then(|| {
                        let mut d = vec![T::zero(); dim];
                        for gr in g.chunks_exact(dim) {
                            d.iter_mut().zip(gr).for_each(|(a, &b)| *a += b);
                        }
                        d
                    });
                    vec![dx, dgain, doffset]
                })
            },
        ))
    }

    /// Normalises a `[C, ...]` feature map over all of its elements (one
    /// group), then applies a per-channel affine transform.
    pub fn group_norm(self, gain: Var<'t, T>, offset: Var<'t, T>, eps: T) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let channels = *shape.first().ok_or_else(|| Error::contract("group_norm on a scalar"))?;
        if gain.shape() != [channels] || offset.shape() != [channels] {
            return Err(Error::shape("group_norm", &shape, &gain.shape()));
        }
        let x = self.value();
        let (gv, bv) = (gain.value(), offset.value());
        let n = x.len();
        let per = n / channels;
        let inv_n = T::from_f64(1.0 / n as f64);
        let mean = x.iter().copied().sum::<T>() * inv_n;
        let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
        let inv_std = (var + eps).sqrt().recip();
        let xhat: Vec<T> = x.iter().map(|&v| (v - mean) * inv_std).collect();
        let mut out = vec![T::zero(); n];
        for c in 0..channels {
            for i in c * per..(c + 1) * per {
                out[i] = gv[c] * xhat[i] + bv[c];
            }
        }
        Ok(self.tape.push(
            "group_norm",
            shape,
            out,
            &[self, gain, offset],
            move || -> BackwardFn<T> {
                Box::new(move |g, needs| {
                    let dx = needs[0].then(|| {
                        let dh: Vec<T> = (0..n).map(|i| g[i] * gv[i / per]).collect();
                        let s1: T = dh.iter().copied().sum();
                        let s2: T = dh.iter().zip(&xhat).map(|(&a, &b)| a * b).sum();
                        (0..n)
                            .map(|i| inv_std * (dh[i] - inv_n * s1 - xhat[i] * inv_n * s2))
                            .collect()
                    });
                    let dgain = needs[1].then(|| {
                        (0..channels)
                            .map(|c| (c * per..(c + 1) * per).map(|i| g[i] * xhat[i]).sum())
                            .collect()
                    });
                    let doffset = needs[2].then(|| {
                        (0..channels)
                            .map(|c| g[c * per..(c + 1) * per].iter().copied().sum())
                            .collect()
                    });
                    vec![dx, dgain, doffset]
                })
            },
        ))
    }
}
