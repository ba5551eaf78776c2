use rand::Rng;

use super::Init;
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{Element, Tensor};

/// `x·W + b` applied to the last axis; W is `[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        init: Init,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut lin = Self::without_bias(store, prefix, in_dim, out_dim, init, rng)?;
        lin.bias = Some(store.add(format!("{prefix}.bias"), Tensor::zeros(&[out_dim]))?);
        Ok(lin)
    }

    pub fn without_bias<T: Element>(
        store: &mut ParamStore<T>,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        init: Init,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Linear {
            weight: init.weight(store, format!("{prefix}.weight"), &[in_dim, out_dim], rng)?,
            bias: None,
            in_dim,
            out_dim,
        })
    }

    /// Weight, then bias if present.
    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }

    pub fn forward<'t, T: Element>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = x.shape();
        if shape.last() != Some(&self.in_dim) {
            return Err(Error::shape("linear", &shape, &[self.in_dim, self.out_dim]));
        }
        if shape.len() == 1 {
            return self.forward(p, x.reshape(&[1, self.in_dim])?)?.reshape(&[self.out_dim]);
        }
        let y = x.matmul(p[self.weight])?;
        match self.bias {
            Some(b) => y.add(p[b]),
            None => Ok(y),
        }
    }
}

/// Layer normalisation over the last axis.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub offset: ParamId,
    pub dim: usize,
    pub eps: f64,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new<T: Element>(store: &mut ParamStore<T>, prefix: &str, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gain: store.add(format!("{prefix}.gain"), Tensor::full(&[dim], T::one()))?,
            offset: store.add(format!("{prefix}.offset"), Tensor::zeros(&[dim]))?,
            dim,
            eps: Self::EPS,
        })
    }

    pub fn forward<'t, T: Element>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.layer_norm(p[self.gain], p[self.offset], T::from_f64(self.eps))
    }
}
