use rand::Rng;

use super::{dropout, ForwardCtx, Init, LayerNorm, Linear};
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use crate::tensor::Element;

/// Multi-head self-attention over `[..., N, dim]`.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
    pub dim: usize,
    pub dropout: f64,
}

impl MultiHeadAttention {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        prefix: &str,
        dim: usize,
        heads: usize,
        dropout: f64,
        init: Init,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::config(format!("dim {dim} not divisible by {heads} heads")));
        }
        Ok(MultiHeadAttention {
            q: Linear::new(store, &format!("{prefix}.q"), dim, dim, init, rng)?,
            // a key bias shifts every score of a query equally, so softmax
            // cancels it and its gradient is identically zero
            k: Linear::without_bias(store, &format!("{prefix}.k"), dim, dim, init, rng)?,
            v: Linear::new(store, &format!("{prefix}.v"), dim, dim, init, rng)?,
            out: Linear::new(store, &format!("{prefix}.out"), dim, dim, init, rng)?,
            heads,
            dim,
            dropout,
        })
    }

    pub fn forward<'t, T: Element>(
        &self,
        p: &Bound<'t, T>,
        x: Var<'t, T>,
        ctx: &mut ForwardCtx,
    ) -> Result<Var<'t, T>> {
        let shape = x.shape();
        if shape.len() < 2 || shape[shape.len() - 1] != self.dim {
            return Err(Error::shape("mhsa", &shape, &[self.dim]));
        }
        let q = self.q.forward(p, x)?;
        let k = self.k.forward(p, x)?;
        let v = self.v.forward(p, x)?;
        let n = shape[shape.len() - 2];
        let batch: usize = shape[..shape.len() - 2].iter().product();
        let mask = ctx.dropout_mask(batch * self.heads * n * n, self.dropout);
        let ctx_out = x.tape().attention(q, k, v, self.heads, mask)?;
        self.out.forward(p, ctx_out)
    }
}

/// Linear → GELU → Linear.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl FeedForward {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        prefix: &str,
        dim: usize,
        hidden: usize,
        init: Init,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(FeedForward {
            fc1: Linear::new(store, &format!("{prefix}.fc1"), dim, hidden, init, rng)?,
            fc2: Linear::new(store, &format!("{prefix}.fc2"), hidden, dim, init, rng)?,
        })
    }

    pub fn forward<'t, T: Element>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let h = self.fc1.forward(p, x)?.gelu();
        self.fc2.forward(p, h)
    }
}

/// Pre-norm Transformer encoder layer:
/// `X′ = X + MHSA(LN(X))`, `out = X′ + FFN(LN(X′))`.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ffn: FeedForward,
    pub dropout: f64,
}

impl Encoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        prefix: &str,
        dim: usize,
        heads: usize,
        ffn_ratio: usize,
        dropout: f64,
        init: Init,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::config(format!("dropout rate {dropout} outside [0, 1)")));
        }
        Ok(Encoder {
            ln1: LayerNorm::new(store, &format!("{prefix}.ln1"), dim)?,
            attn: MultiHeadAttention::new(store, &format!("{prefix}.attn"), dim, heads, dropout, init, rng)?,
            ln2: LayerNorm::new(store, &format!("{prefix}.ln2"), dim)?,
            ffn: FeedForward::new(store, &format!("{prefix}.ffn"), dim, dim * ffn_ratio, init, rng)?,
            dropout,
        })
    }

    pub fn forward<'t, T: Element>(
        &self,
        p: &Bound<'t, T>,
        x: Var<'t, T>,
        ctx: &mut ForwardCtx,
    ) -> Result<Var<'t, T>> {
        let a = self.attn.forward(p, self.ln1.forward(p, x)?, ctx)?;
        let x = x.add(dropout(a, self.dropout, ctx)?)?;
        let f = self.ffn.forward(p, self.ln2.forward(p, x)?)?;
        x.add(dropout(f, self.dropout, ctx)?)
    }
}
