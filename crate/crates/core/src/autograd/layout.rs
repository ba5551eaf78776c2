use std::rc::Rc;

use super::{BackwardFn, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{strides, Element};

/// `(outer, inner)` element counts around `axis`.
fn around(shape: &[usize], axis: usize) -> (usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis + 1..].iter().product(),
    )
}

impl<T: Element> Tape<T> {
    /// Concatenates along `axis`. All other dims must agree.
    pub fn concat<'t>(&'t self, parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat of zero tensors"))?
            .shape();
        if axis >= first.len() {
            return Err(Error::contract(format!(
                "concat axis {axis} out of range for {first:?}"
            )));
        }
        let mut lens = Vec::with_capacity(parts.len());
        for p in parts {
            let s = p.shape();
            let same_rank = s.len() == first.len();
            if !same_rank
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(d, (a, b))| d != axis && a != b)
            {
                return Err(Error::shape("concat", &first, &s));
            }
            lens.push(s[axis]);
        }
        let (outer, inner) = around(&first, axis);
        let total: usize = lens.iter().sum();
        let values: Vec<Rc<Vec<T>>> = parts.iter().map(|p| p.value()).collect();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &len) in values.iter().zip(&lens) {
                out.extend_from_slice(&v[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = first.clone();
        shape[axis] = total;
        Ok(self.push("concat", shape, out, parts, move || -> BackwardFn<T> {
            Box::new(move |g, needs| {
                let mut grads: Vec<Option<Vec<T>>> = needs
                    .iter()
                    .zip(&lens)
                    .map(|(&n, &len)| n.then(|| Vec::with_capacity(outer * len * inner)))
                    .collect();
                let mut pos = 0;
                for _ in 0..outer {
                    for (gr, &len) in grads.iter_mut().zip(&lens) {
                        let block = len * inner;
                        if let Some(gr) = gr {
                            gr.extend_from_slice(&g[pos..pos + block]);
                        }
                        pos += block;
                    }
                }
                grads
            })
        }))
    }
}

impl<'t, T: Element> Var<'t, T> {
    /// Sub-range `start..end` along `axis`.
    pub fn slice(self, axis: usize, start: usize, end: usize) -> Result<Var<'t, T>> {
        let shape = self.shape();
        if axis >= shape.len() || start >= end || end > shape[axis] {
            return Err(Error::contract(format!(
                "slice {start}..{end} on axis {axis} invalid for {shape:?}"
            )));
        }
        let (outer, inner) = around(&shape, axis);
        let full = shape[axis];
        let len = end - start;
        let x = self.value();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&x[base..base + len * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        Ok(self.tape.push("slice", out_shape, out, &[self], move || -> BackwardFn<T> {
            Box::new(move |g, _| {
                let mut dx = vec![T::zero(); outer * full * inner];
                for o in 0..outer {
                    let base = (o * full + start) * inner;
                    dx[base..base + len * inner]
                        .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(dx)]
            })
        }))
    }

    /// Same data, new shape. Shares the underlying buffer.
    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let old = self.shape();
        if shape.iter().product::<usize>() != old.iter().product::<usize>() || shape.contains(&0)
        {
            return Err(Error::shape("reshape", &old, shape));
        }
        Ok(self
            .tape
            .push_rc("reshape", shape.to_vec(), self.value(), &[self], || -> BackwardFn<T> {
                Box::new(|g, _| vec![Some(g.to_vec())])
            }))
    }

    /// Reorders dims: output dim `i` is input dim `axes[i]`.
    pub fn permute(self, axes: &[usize]) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len()) {
            return Err(Error::contract(format!("bad permutation {axes:?} for {shape:?}")));
        }
        for &a in axes {
            if std::mem::replace(&mut seen[a], true) {
                return Err(Error::contract(format!("bad permutation {axes:?}")));
            }
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let in_strides = strides(&shape);
        // stride in the input for each output dim
        let gather: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let index = Rc::new(permuted_index(&out_shape, &gather));
        let x = self.value();
        let out: Vec<T> = index.iter().map(|&i| x[i]).collect();
        let numel = x.len();
        Ok(self.tape.push("permute", out_shape, out, &[self], move || -> BackwardFn<T> {
            Box::new(move |g, _| {
                let mut dx = vec![T::zero(); numel];
                for (&i, &gv) in index.iter().zip(g) {
                    dx[i] = gv;
                }
                vec![Some(dx)]
            })
        }))
    }

    /// Swaps the last two dims.
    pub fn transpose(self) -> Result<Var<'t, T>> {
        let r = self.shape().len();
        if r < 2 {
            return Err(Error::contract("transpose needs rank >= 2"));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(&axes)
    }
}

/// Input offset of every output element, in output order.
fn permuted_index(out_shape: &[usize], gather: &[usize]) -> Vec<usize> {
    let numel: usize = out_shape.iter().product();
    let mut idx = Vec::with_capacity(numel);
    let mut counter = vec![0usize; out_shape.len()];
    let mut off = 0usize;
    for _ in 0..numel {
        idx.push(off);
        for d in (0..out_shape.len()).rev() {
            counter[d] += 1;
            off += gather[d];
            if counter[d] < out_shape[d] {
                break;
            }
            off -= gather[d] * out_shape[d];
            counter[d] = 0;
        }
    }
    idx
}

#[cfg(test)]
mod tests {
    use crate::autograd::Tape;

    #[test]
    fn concat_then_slice_recovers_parts() {
        let tape = Tape::<f32>::new();
        let c = tape.constant(&[1, 3], vec![0.1, 0.2, 0.3]);
        let s = tape.constant(&[4, 3], (0..12).map(|i| i as f32 * 1.7).collect());
        let joined = tape.concat(&[c, s], 0).unwrap();
        assert_eq!(joined.shape(), vec![5, 3]);
        let back = joined.slice(0, 1, 5).unwrap();
        assert_eq!(back.value().as_slice(), s.value().as_slice());
        let head = joined.slice(0, 0, 1).unwrap();
        assert_eq!(head.value().as_slice(), c.value().as_slice());
    }

    #[test]
    fn concat_routes_gradients_disjointly() {
        let tape = Tape::<f64>::new();
        let a = tape.input(&[2, 1], vec![1.0, 2.0], true);
        let b = tape.input(&[2, 2], vec![3.0, 4.0, 5.0, 6.0], true);
        let j = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(j.value().as_slice(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let loss = j.slice(1, 0, 1).unwrap().sum();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(a).unwrap(), &[1.0, 1.0]);
        assert!(g.get(b).map_or(true, |gb| gb.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn transpose_twice_is_identity() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(&[2, 3, 4], (0..24).map(f64::from).collect());
        let y = x.transpose().unwrap();
        assert_eq!(y.shape(), vec![2, 4, 3]);
        assert_eq!(y.value()[1], 4.0);
        let z = y.transpose().unwrap();
        assert_eq!(z.value().as_slice(), x.value().as_slice());
    }

    #[test]
    fn permute_moves_axes() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(&[2, 3, 4], (0..24).map(f64::from).collect());
        let y = x.permute(&[2, 0, 1]).unwrap();
        assert_eq!(y.shape(), vec![4, 2, 3]);
        // y[k, i, j] == x[i, j, k]
        assert_eq!(y.to_tensor().at(&[3, 1, 2]), x.to_tensor().at(&[1, 2, 3]));
        assert!(x.permute(&[0, 0, 1]).is_err());
    }
}
