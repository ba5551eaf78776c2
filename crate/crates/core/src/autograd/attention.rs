//! Fused multi-head scaled dot-product attention.
//!
//! Inputs are `[..., N, h·d]` with the heads laid out as contiguous
//! `d`-wide column blocks. For each leading index and head the op computes
//! `softmax(Q·Kᵀ/√d) · V`; the per-head outputs land in the same column
//! blocks of the result, which is the concatenation of heads. Nothing is
//! permuted in memory.

use std::rc::Rc;

use super::kernels::{axpy, dot, softmax_row};
use super::{BackwardFn, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Element;

#[derive(Clone, Copy)]
struct Layout {
    batch: usize,
    seq: usize,
    heads: usize,
    head_dim: usize,
}

impl Layout {
    fn width(&self) -> usize {
        self.heads * self.head_dim
    }

    /// Row `i` of head `hd` within batch element `b`.
    #[inline]
    fn row<'a, T>(&self, x: &'a [T], b: usize, hd: usize, i: usize) -> &'a [T] {
        let start = (b * self.seq + i) * self.width() + hd * self.head_dim;
        &x[start..start + self.head_dim]
    }

    #[inline]
    fn row_mut<'a, T>(&self, x: &'a mut [T], b: usize, hd: usize, i: usize) -> &'a mut [T] {
        let start = (b * self.seq + i) * self.width() + hd * self.head_dim;
        &mut x[start..start + self.head_dim]
    }

    fn probs_len(&self) -> usize {
        self.batch * self.heads * self.seq * self.seq
    }
}

fn layout_of(q: &[usize], k: &[usize], v: &[usize], heads: usize) -> Result<Layout> {
    if q != k || q != v {
        return Err(Error::shape("attention", q, if q != k { k } else { v }));
    }
    if q.len() < 2 {
        return Err(Error::contract(format!("attention input rank < 2: {q:?}")));
    }
    let width = q[q.len() - 1];
    if heads == 0 || width % heads != 0 {
        return Err(Error::config(format!(
            "model dim {width} is not divisible by {heads} heads"
        )));
    }
    Ok(Layout {
        batch: q[..q.len() - 2].iter().product(),
        seq: q[q.len() - 2],
        heads,
        head_dim: width / heads,
    })
}

/// Attention weights, `[batch, heads, N, N]` flattened. Every row sums to 1.
fn compute_probs<T: Element>(lay: Layout, q: &[T], k: &[T]) -> Vec<T> {
    let n = lay.seq;
    let scale = T::from_f64(1.0 / (lay.head_dim as f64).sqrt());
    let mut probs = vec![T::zero(); lay.probs_len()];
    for b in 0..lay.batch {
        for hd in 0..lay.heads {
            let block = &mut probs[(b * lay.heads + hd) * n * n..(b * lay.heads + hd + 1) * n * n];
            for i in 0..n {
                let qi = lay.row(q, b, hd, i);
                let row = &mut block[i * n..(i + 1) * n];
                for (j, s) in row.iter_mut().enumerate() {
                    *s = scale * dot(qi, lay.row(k, b, hd, j));
                }
                softmax_row(row);
            }
        }
    }
    probs
}

/// Attention weight matrices for inspection: returns `[..., heads, N, N]`.
pub fn attention_probs<T: Element>(
    q: &crate::Tensor<T>,
    k: &crate::Tensor<T>,
    heads: usize,
) -> Result<crate::Tensor<T>> {
    let lay = layout_of(q.shape(), k.shape(), q.shape(), heads)?;
    let probs = compute_probs(lay, q.data(), k.data());
    let mut shape = q.shape()[..q.ndim() - 2].to_vec();
    shape.extend([heads, lay.seq, lay.seq]);
    crate::Tensor::new(&shape, probs)
}

impl<T: Element> Tape<T> {
    /// Multi-head attention over `[..., N, h·d]` inputs.
    ///
    /// `dropout_mask`, when given, multiplies the attention weights
    /// elementwise (already scaled for inverted dropout); it must have
    /// `batch·h·N·N` entries.
    pub fn attention<'t>(
        &'t self,
        q: Var<'t, T>,
        k: Var<'t, T>,
        v: Var<'t, T>,
        heads: usize,
        dropout_mask: Option<Vec<T>>,
    ) -> Result<Var<'t, T>> {
        let shape = q.shape();
        let lay = layout_of(&shape, &k.shape(), &v.shape(), heads)?;
        if let Some(m) = &dropout_mask {
            if m.len() != lay.probs_len() {
                return Err(Error::contract(format!(
                    "attention dropout mask has {} entries, expected {}",
                    m.len(),
                    lay.probs_len()
                )));
            }
        }
        let (qv, kv, vv) = (q.value(), k.value(), v.value());
        let probs = compute_probs(lay, &qv, &kv);
        let n = lay.seq;
        let mut out = vec![T::zero(); qv.len()];
        for b in 0..lay.batch {
            for hd in 0..lay.heads {
                let base = (b * lay.heads + hd) * n * n;
                for i in 0..n {
                    for j in 0..n {
                        let mut p = probs[base + i * n + j];
                        if let Some(m) = &dropout_mask {
                            p *= m[base + i * n + j];
                        }
                        let vj = lay.row(&vv, b, hd, j);
                        axpy(p, vj, lay.row_mut(&mut out, b, hd, i));
                    }
                }
            }
        }
        let mask = dropout_mask.map(Rc::new);
        Ok(self.push("attention", shape, out, &[q, k, v], move || -> BackwardFn<T> {
            Box::new(move |g, needs| {
                let scale = T::from_f64(1.0 / (lay.head_dim as f64).sqrt());
                let mut dq = vec![T::zero(); qv.len()];
                let mut dk = vec![T::zero(); kv.len()];
                let mut dv = vec![T::zero(); vv.len()];
                let mut dp = vec![T::zero(); n];
                for b in 0..lay.batch {
                    for hd in 0..lay.heads {
                        let base = (b * lay.heads + hd) * n * n;
                        for i in 0..n {
                            let gi = lay.row(g, b, hd, i);
                            let p = &probs[base + i * n..base + (i + 1) * n];
                            let m = mask.as_ref().map(|m| &m[base + i * n..base + (i + 1) * n]);
                            // dP' and dV
                            for j in 0..n {
                                let mj = m.map_or(T::one(), |m| m[j]);
                                dp[j] = dot(gi, lay.row(&vv, b, hd, j)) * mj;
                                if needs[2] {
                                    axpy(p[j] * mj, gi, lay.row_mut(&mut dv, b, hd, j));
                                }
                            }
                            // softmax backward, then scores backward
                            let s: T = dp.iter().zip(p).map(|(&a, &b)| a * b).sum();
                            for j in 0..n {
                                let ds = p[j] * (dp[j] - s) * scale;
                                if ds == T::zero() {
                                    continue;
                                }
                                if needs[0] {
                                    let kj = lay.row(&kv, b, hd, j);
                                    axpy(ds, kj, lay.row_mut(&mut dq, b, hd, i));
                                }
                                if needs[1] {
                                    let qi = lay.row(&qv, b, hd, i);
                                    axpy(ds, qi, lay.row_mut(&mut dk, b, hd, j));
                                }
                            }
                        }
                    }
                }
                vec![
                    needs[0].then_some(dq),
                    needs[1].then_some(dk),
                    needs[2].then_some(dv),
                ]
            })
        }))
    }
}
