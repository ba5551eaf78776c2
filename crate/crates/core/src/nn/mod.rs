//! Parameterised layers built on the autograd tape.
//!
//! Layers hold only [`ParamId`]s; the tensors live in a [`ParamStore`] and
//! are bound to a tape for each forward pass. Every layer is generic over
//! the scalar type so the same code trains in `f32` and gradient-checks in
//! `f64`.

mod attention;
mod conv;
mod linear;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use attention::{Encoder, FeedForward, MultiHeadAttention};
pub use conv::ResidualUnit;
pub use linear::{LayerNorm, Linear};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Element, Tensor};

/// Standard deviation of the truncated-normal weight initialiser.
pub const INIT_STD: f64 = 0.02;

/// Train/eval switch plus the random stream used for dropout masks.
pub struct ForwardCtx {
    pub train: bool,
    rng: ChaCha8Rng,
}

impl ForwardCtx {
    pub fn eval() -> Self {
        use rand::SeedableRng;
        ForwardCtx {
            train: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn train(rng: ChaCha8Rng) -> Self {
        ForwardCtx { train: true, rng }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Inverted-dropout mask: zeros with probability `rate`, survivors
    /// scaled by `1/(1−rate)`. `None` in eval mode or when `rate == 0`.
    pub fn dropout_mask<T: Element>(&mut self, len: usize, rate: f64) -> Option<Vec<T>> {
        if !self.train || rate <= 0.0 {
            return None;
        }
        let keep = T::from_f64(1.0 / (1.0 - rate));
        Some(
            (0..len)
                .map(|_| {
                    if self.rng.random::<f64>() < rate {
                        T::zero()
                    } else {
                        keep
                    }
                })
                .collect(),
        )
    }
}

/// Inverted dropout. Returns `x` itself (bit-exact) in eval mode.
pub fn dropout<'t, T: Element>(x: Var<'t, T>, rate: f64, ctx: &mut ForwardCtx) -> Result<Var<'t, T>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
    }
    match ctx.dropout_mask(x.numel(), rate) {
        Some(mask) => x.mul_const(std::rc::Rc::new(mask)),
        None => Ok(x),
    }
}

/// Normal(0, std) truncated to ±2·std by rejection.
pub fn truncated_normal<T: Element>(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor<T> {
    let normal = Normal::new(0.0, std).expect("positive std");
    Tensor::from_fn(shape, |_| loop {
        let v: f64 = normal.sample(rng);
        if v.abs() <= 2.0 * std {
            break T::from_f64(v);
        }
    })
}

/// Weight initialisation used when building layers.
#[derive(Clone, Copy, Debug)]
pub struct Init {
    pub std: f64,
}

impl Default for Init {
    fn default() -> Self {
        Init { std: INIT_STD }
    }
}

impl Init {
    pub(crate) fn weight<T: Element>(
        &self,
        store: &mut ParamStore<T>,
        name: String,
        shape: &[usize],
        rng: &mut impl Rng,
    ) -> Result<ParamId> {
        store.add(name, truncated_normal(shape, self.std, rng))
    }
}
