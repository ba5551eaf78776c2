use rand::Rng;

use super::Init;
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{Element, Tensor};

/// Pre-activation residual unit on `[C, F, T]` followed by average pooling.
///
/// `norm → relu → conv3×3 → norm → relu → conv3×3`, added to the input
/// (through a 1×1 projection when the channel count changes). The norms
/// standardise each sample over all of `C×F×T` with a per-channel affine.
#[derive(Clone, Debug)]
pub struct ResidualUnit {
    pub norm1: (ParamId, ParamId),
    pub conv1: (ParamId, ParamId),
    pub norm2: (ParamId, ParamId),
    pub conv2: (ParamId, ParamId),
    pub proj: Option<(ParamId, ParamId)>,
    pub c_in: usize,
    pub c_out: usize,
    pub pool: (usize, usize),
}

const NORM_EPS: f64 = 1e-5;

fn norm<T: Element>(store: &mut ParamStore<T>, prefix: &str, c: usize) -> Result<(ParamId, ParamId)> {
    Ok((
        store.add(format!("{prefix}.gain"), Tensor::full(&[c], T::one()))?,
        store.add(format!("{prefix}.offset"), Tensor::zeros(&[c]))?,
    ))
}

fn conv<T: Element>(
    store: &mut ParamStore<T>,
    prefix: &str,
    shape: [usize; 4],
    init: Init,
    rng: &mut impl Rng,
) -> Result<(ParamId, ParamId)> {
    Ok((
        init.weight(store, format!("{prefix}.weight"), &shape, rng)?,
        store.add(format!("{prefix}.bias"), Tensor::zeros(&[shape[0]]))?,
    ))
}

impl ResidualUnit {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        pool: (usize, usize),
        init: Init,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if pool.0 == 0 || pool.1 == 0 {
            return Err(Error::config("pooling ratios must be positive"));
        }
        Ok(ResidualUnit {
            norm1: norm(store, &format!("{prefix}.norm1"), c_in)?,
            conv1: conv(store, &format!("{prefix}.conv1"), [c_out, c_in, 3, 3], init, rng)?,
            norm2: norm(store, &format!("{prefix}.norm2"), c_out)?,
            conv2: conv(store, &format!("{prefix}.conv2"), [c_out, c_out, 3, 3], init, rng)?,
            proj: if c_in != c_out {
                Some(conv(store, &format!("{prefix}.proj"), [c_out, c_in, 1, 1], init, rng)?)
            } else {
                None
            },
            c_in,
            c_out,
            pool,
        })
    }

    /// Checks that `(f, t)` divides by the pooling ratios and returns the
    /// pooled size.
    pub fn output_size(&self, f: usize, t: usize) -> Result<(usize, usize)> {
        let (pf, pt) = self.pool;
        if f % pf != 0 || t % pt != 0 {
            return Err(Error::config(format!(
                "input {f}x{t} not divisible by pooling ratios ({pf}, {pt})"
            )));
        }
        Ok((f / pf, t / pt))
    }

    pub fn forward<'t, T: Element>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = x.shape();
        if shape.len() != 3 || shape[0] != self.c_in {
            return Err(Error::shape("residual_unit", &shape, &[self.c_in]));
        }
        self.output_size(shape[1], shape[2])?;
        let eps = T::from_f64(NORM_EPS);
        let h = x.group_norm(p[self.norm1.0], p[self.norm1.1], eps)?.relu();
        let h = h.conv2d(p[self.conv1.0], Some(p[self.conv1.1]), 1, 1)?;
        let h = h.group_norm(p[self.norm2.0], p[self.norm2.1], eps)?.relu();
        let h = h.conv2d(p[self.conv2.0], Some(p[self.conv2.1]), 1, 1)?;
        let skip = match self.proj {
            Some((w, b)) => x.conv2d(p[w], Some(p[b]), 1, 0)?,
            None => x,
        };
        h.add(skip)?.avg_pool2d(self.pool.0, self.pool.1)
    }
}
