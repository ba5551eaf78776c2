use super::kernels::{gemm, gemm_nt, gemm_tn};
use super::{BackwardFn, Var};
use crate::error::{Error, Result};
use crate::tensor::Element;

impl<'t, T: Element> Var<'t, T> {
    /// Matrix product over the last two dims.
    ///
    /// `self` is `[..., M, P]`; `rhs` is either `[P, N]` (shared across the
    /// leading dims) or `[..., P, N]` with leading dims identical to `self`.
    pub fn matmul(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        let (ls, rs) = (self.shape(), rhs.shape());
        if ls.len() < 2 || rs.len() < 2 {
            return Err(Error::shape("matmul", &ls, &rs));
        }
        let (m, p) = (ls[ls.len() - 2], ls[ls.len() - 1]);
        let (p2, n) = (rs[rs.len() - 2], rs[rs.len() - 1]);
        let lead = &ls[..ls.len() - 2];
        let shared = rs.len() == 2;
        if p != p2 || (!shared && rs[..rs.len() - 2] != *lead) {
            return Err(Error::shape("matmul", &ls, &rs));
        }
        let batch: usize = lead.iter().product();
        let (a, b) = (self.value(), rhs.value());
        let b_stride = if shared { 0 } else { p * n };
        let mut out = vec![T::zero(); batch * m * n];
        for i in 0..batch {
            gemm(
                &a[i * m * p..(i + 1) * m * p],
                &b[i * b_stride..i * b_stride + p * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                p,
                n,
            );
        }
        let mut shape = lead.to_vec();
        shape.extend([m, n]);
        Ok(self.tape.push("matmul", shape, out, &[self, rhs], move || -> BackwardFn<T> {
            Box::new(move |g, needs| {
                let da = needs[0].then(|| {
                    let mut da = vec![T::zero(); batch * m * p];
                    for i in 0..batch {
                        gemm_nt(
                            &g[i * m * n..(i + 1) * m * n],
                            &b[i * b_stride..i * b_stride + p * n],
                            &mut da[i * m * p..(i + 1) * m * p],
                            m,
                            n,
                            p,
                        );
                    }
                    da
                });
                let db = needs[1].then(|| {
                    let mut db = vec![T::zero(); if shared { p * n } else { batch * p * n }];
                    for i in 0..batch {
                        gemm_tn(
                            &a[i * m * p..(i + 1) * m * p],
                            &g[i * m * n..(i + 1) * m * n],
                            &mut db[i * b_stride..i * b_stride + p * n],
                            m,
                            p,
                            n,
                        );
                    }
                    db
                });
                vec![da, db]
            })
        }))
    }
}
