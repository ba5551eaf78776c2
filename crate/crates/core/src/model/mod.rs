//! The SpecTNT network: convolutional front end, frequency class tokens,
//! frequency positional embedding, stacked spectral/temporal blocks and the
//! output heads.
//!
//! Tensors inside a forward pass are batched:
//!
//! | name | shape |
//! |------|-------|
//! | input spectrogram | `[B, T, F, K]` |
//! | conv output S′ | `[B, T̂, F̂, K̂]` |
//! | spectral embedding SE | `[B, T̂, F̂+1, K̂]`, FCT at frequency index 0 |
//! | temporal embedding TE | `[B, T̂(+1), D]`, class token first for clip tasks |

mod config;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{FrameActivation, ModelConfig, OutputSpec, Variant, DROPOUT};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{truncated_normal, Encoder, ForwardCtx, Init, Linear, ResidualUnit, INIT_STD};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{Element, Tensor};

/// One SpecTNT block. Absent parts depend on the variant.
#[derive(Clone, Debug)]
pub struct Block {
    pub spec: Option<Encoder>,
    pub temp: Encoder,
    pub bridge_in: Option<Linear>,
    pub bridge_out: Option<Linear>,
}

#[derive(Clone, Debug)]
pub struct SpecTnt {
    pub cfg: ModelConfig,
    pub conv: Vec<ResidualUnit>,
    pub fpe: ParamId,
    pub te_init: ParamId,
    pub cls_init: Option<ParamId>,
    /// Shared learnable FCT (A1 only).
    pub fct: Option<ParamId>,
    /// Frame summary projection feeding TE (A3 only).
    pub te_proj: Option<Linear>,
    pub blocks: Vec<Block>,
    pub head: Linear,
}

impl SpecTnt {
    /// Adds every parameter of `cfg` to `store`, initialised from `rng`.
    pub fn build<T: Element>(cfg: &ModelConfig, store: &mut ParamStore<T>, rng: &mut impl Rng) -> Result<Self> {
        Self::build_with_init(cfg, store, Init::default(), rng)
    }

    pub fn build_with_init<T: Element>(
        cfg: &ModelConfig,
        store: &mut ParamStore<T>,
        init: Init,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let (k, d) = (cfg.k, cfg.d);
        let (f_hat, t_hat) = (cfg.f_hat(), cfg.t_hat());
        let mut conv = Vec::with_capacity(cfg.conv_depth);
        for j in 0..cfg.conv_depth {
            let (c_in, pool) = if j == 0 {
                (cfg.in_channels, (cfg.p_f, cfg.p_t))
            } else {
                (k, (1, 1))
            };
            conv.push(ResidualUnit::new(store, &format!("conv.unit{j}"), c_in, k, pool, init, rng)?);
        }
        let mut leaf = |store: &mut ParamStore<T>, name: &str, shape: &[usize]| {
            store.add(name, truncated_normal(shape, init.std, rng))
        };
        let fpe = leaf(store, "fpe", &[f_hat + 1, k])?;
        let te_init = leaf(store, "te_init", &[t_hat, d])?;
        let cls_init = match cfg.o_d {
            OutputSpec::Clip(_) => Some(leaf(store, "cls_init", &[1, d])?),
            OutputSpec::Frame(_) => None,
        };
        let fct = match cfg.variant {
            Variant::A1 => Some(leaf(store, "fct", &[k])?),
            _ => None,
        };
        let te_proj = match cfg.variant {
            Variant::A3 => Some(Linear::new(store, "te_proj", k, d, init, rng)?),
            _ => None,
        };
        let frame = (f_hat + 1) * k;
        let mut blocks = Vec::with_capacity(cfg.blocks);
        for i in 0..cfg.blocks {
            let p = format!("block{i}");
            let spectral = cfg.variant != Variant::A3;
            let (in_width, out_width) = match cfg.variant {
                Variant::A2 => (frame, frame),
                _ => (k, k),
            };
            let bridge_in = match cfg.variant {
                Variant::Full | Variant::A2 => {
                    Some(Linear::new(store, &format!("{p}.bridge_in"), d, in_width, init, rng)?)
                }
                Variant::A1 | Variant::A3 => None,
            };
            let spec = if spectral {
                Some(Encoder::new(store, &format!("{p}.spec"), k, cfg.h_k, cfg.ffn_ratio, cfg.dropout, init, rng)?)
            } else {
                None
            };
            let bridge_out = if spectral {
                Some(Linear::new(store, &format!("{p}.bridge_out"), out_width, d, init, rng)?)
            } else {
                None
            };
            let temp = Encoder::new(store, &format!("{p}.temp"), d, cfg.h_d, cfg.ffn_ratio, cfg.dropout, init, rng)?;
            blocks.push(Block {
                spec,
                temp,
                bridge_in,
                bridge_out,
            });
        }
        let head = Linear::new(store, "head", d, cfg.o_d.classes(), init, rng)?;
        Ok(SpecTnt {
            cfg: cfg.clone(),
            conv,
            fpe,
            te_init,
            cls_init,
            fct,
            te_proj,
            blocks,
            head,
        })
    }

    /// Builds a model and a fresh parameter store from `seed`.
    pub fn init<T: Element>(cfg: &ModelConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = Self::build(cfg, &mut store, &mut rng)?;
        Ok((model, store))
    }

    /// Input shape `[B, T, F, K]` expected for a batch of `batch` clips.
    pub fn input_shape(&self, batch: usize) -> [usize; 4] {
        [batch, self.cfg.n_frames, self.cfg.n_freq, self.cfg.in_channels]
    }

    /// Convolutional module: `[B, T, F, K]` → `[B, T̂, F̂, K̂]`.
    pub fn conv_forward<'t, T: Element>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = x.shape();
        let c = &self.cfg;
        if shape.len() != 4 || shape[1..] != [c.n_frames, c.n_freq, c.in_channels] {
            return Err(Error::shape("conv_module", &shape, &self.input_shape(0)[1..]));
        }
        let mut outs = Vec::with_capacity(shape[0]);
        for b in 0..shape[0] {
            // [1, T, F, K] → [K, F, T]
            let mut h = x.slice(0, b, b + 1)?.reshape(&shape[1..])?.permute(&[2, 1, 0])?;
            for unit in &self.conv {
                h = unit.forward(p, h)?;
            }
            // [K̂, F̂, T̂] → [1, T̂, F̂, K̂]
            let h = h.permute(&[2, 1, 0])?;
            let s = h.shape();
            outs.push(h.reshape(&[1, s[0], s[1], s[2]])?);
        }
        if outs.len() == 1 {
            return Ok(outs[0]);
        }
        x.tape().concat(&outs, 0)
    }

    /// Prepends the frequency class token to every frame: zeros, or the
    /// shared learnable vector for A1.
    pub fn attach_fct<'t, T: Element>(&self, p: &Bound<'t, T>, s: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = s.shape();
        let (b, t, k) = (shape[0], shape[1], shape[3]);
        let tape = s.tape();
        let zeros = tape.constant(&[b, t, 1, k], vec![T::zero(); b * t * k]);
        let fct = match self.fct {
            Some(id) => zeros.add(p[id])?,
            None => zeros,
        };
        tape.concat(&[fct, s], 2)
    }

    /// Adds the frequency positional embedding to every frame.
    pub fn apply_fpe<'t, T: Element>(&self, p: &Bound<'t, T>, se: Var<'t, T>) -> Result<Var<'t, T>> {
        se.add(p[self.fpe])
    }

    /// Initial temporal embedding `[B, T̂(+1), D]` for a spectral embedding
    /// of batch size B.
    pub fn init_te<'t, T: Element>(&self, p: &Bound<'t, T>, se: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = se.shape();
        let (b, t) = (shape[0], shape[1]);
        let d = self.cfg.d;
        let tape = se.tape();
        let te = match &self.te_proj {
            Some(proj) => proj.forward(p, se.mean_axis(2)?)?.add(p[self.te_init])?,
            None => tape.constant(&[b, t, d], vec![T::zero(); b * t * d]).add(p[self.te_init])?,
        };
        match self.cls_init {
            Some(id) => {
                let cls = tape.constant(&[b, 1, d], vec![T::zero(); b * d]).add(p[id])?;
                tape.concat(&[cls, te], 1)
            }
            None => Ok(te),
        }
    }

    /// Spectral and temporal embeddings entering the first block.
    pub fn embed<'t, T: Element>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let s = self.conv_forward(p, x)?;
        let se = self.apply_fpe(p, self.attach_fct(p, s)?)?;
        let te = self.init_te(p, se)?;
        Ok((se, te))
    }

    /// One SpecTNT block: TE→FCT, spectral encoder, FCT→TE, temporal
    /// encoder. The class token, when present, skips both bridges.
    pub fn block_forward<'t, T: Element>(
        &self,
        index: usize,
        p: &Bound<'t, T>,
        se: Var<'t, T>,
        te: Var<'t, T>,
        ctx: &mut ForwardCtx,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let block = self
            .blocks
            .get(index)
            .ok_or_else(|| Error::config(format!("block {index} out of range")))?;
        let (ss, ts) = (se.shape(), te.shape());
        let (b, t_hat, rows, k) = (ss[0], ss[1], ss[2], ss[3]);
        let has_cls = self.cls_init.is_some();
        let d = self.cfg.d;
        if ss.len() != 4 || ts.len() != 3 || ts[0] != b || ts[1] != t_hat + usize::from(has_cls) || ts[2] != d {
            return Err(Error::shape("block", &ss, &ts));
        }
        let tape = se.tape();
        let Some(spec) = &block.spec else {
            return Ok((se, block.temp.forward(p, te, ctx)?));
        };
        let (cls, e) = if has_cls {
            (Some(te.slice(1, 0, 1)?), te.slice(1, 1, t_hat + 1)?)
        } else {
            (None, te)
        };

        let se_in = match (&block.bridge_in, self.cfg.variant) {
            (Some(lin), Variant::A2) => se.add(lin.forward(p, e)?.reshape(&ss)?)?,
            (Some(lin), _) => {
                let inject = lin.forward(p, e)?.reshape(&[b, t_hat, 1, k])?;
                let fct = se.slice(2, 0, 1)?.add(inject)?;
                tape.concat(&[fct, se.slice(2, 1, rows)?], 2)?
            }
            (None, _) => se,
        };
        let se_out = spec.forward(p, se_in, ctx)?;

        let bridge_out = block.bridge_out.as_ref().expect("spectral blocks carry bridge_out");
        let read = match self.cfg.variant {
            Variant::A2 => se_out.reshape(&[b, t_hat, rows * k])?,
            _ => se_out.slice(2, 0, 1)?.reshape(&[b, t_hat, k])?,
        };
        let e = e.add(bridge_out.forward(p, read)?)?;
        let te = match cls {
            Some(c) => tape.concat(&[c, e], 1)?,
            None => e,
        };
        Ok((se_out, block.temp.forward(p, te, ctx)?))
    }

    /// Runs all blocks and returns the final temporal embedding.
    pub fn encode<'t, T: Element>(&self, p: &Bound<'t, T>, x: Var<'t, T>, ctx: &mut ForwardCtx) -> Result<Var<'t, T>> {
        let (mut se, mut te) = self.embed(p, x)?;
        let tape = x.tape();
        for i in 0..self.blocks.len() {
            (se, te) = self.block_forward(i, p, se, te, ctx)?;
            if !tape.grad_enabled() {
                // full-size presets would otherwise hold every block's activations
                tape.sweep(&[se, te])?;
            }
        }
        Ok(te)
    }

    /// Pre-activation head outputs: `[B, C]` for clip tasks, `[B, T̂, C]`
    /// for frame-wise tasks.
    pub fn head_logits<'t, T: Element>(&self, p: &Bound<'t, T>, te: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = te.shape();
        let t_hat = self.cfg.t_hat();
        match self.cfg.o_d {
            OutputSpec::Clip(_) => {
                if shape.len() != 3 || shape[1] != t_hat + 1 {
                    return Err(Error::contract("clip head needs a temporal class token"));
                }
                let cls = te.slice(1, 0, 1)?.reshape(&[shape[0], shape[2]])?;
                self.head.forward(p, cls)
            }
            OutputSpec::Frame(_) => {
                if shape.len() != 3 || shape[1] != t_hat {
                    return Err(Error::contract("frame head does not accept a class token"));
                }
                self.head.forward(p, te)
            }
        }
    }

    /// Applies the head nonlinearity to [`Self::head_logits`] output.
    pub fn activate<'t, T: Element>(&self, logits: Var<'t, T>) -> Result<Var<'t, T>> {
        match (self.cfg.o_d, self.cfg.frame_activation) {
            (OutputSpec::Clip(_), _) | (OutputSpec::Frame(_), FrameActivation::Sigmoid) => Ok(logits.sigmoid()),
            (OutputSpec::Frame(_), FrameActivation::Softmax) => logits.softmax(2),
        }
    }

    /// Full forward pass to output probabilities.
    pub fn forward<'t, T: Element>(&self, p: &Bound<'t, T>, x: Var<'t, T>, ctx: &mut ForwardCtx) -> Result<Var<'t, T>> {
        let te = self.encode(p, x, ctx)?;
        self.activate(self.head_logits(p, te)?)
    }

    /// Eval-mode forward of a plain tensor, `[T, F, K]` or `[B, T, F, K]`.
    /// A single clip returns `[C]` or `[T̂, C]`.
    pub fn predict<T: Element>(&self, store: &ParamStore<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
        let single = input.ndim() == 3;
        let shape: Vec<usize> = if single {
            std::iter::once(1).chain(input.shape().iter().copied()).collect()
        } else {
            input.shape().to_vec()
        };
        let tape = Tape::inference();
        let p = store.bind(&tape);
        let x = tape.constant(&shape, input.data().to_vec());
        let y = self.forward(&p, x, &mut ForwardCtx::eval())?.to_tensor();
        if single {
            let shape = y.shape()[1..].to_vec();
            y.reshape(&shape)
        } else {
            Ok(y)
        }
    }
}

/// Total scalar parameter count.
pub fn param_count<T: Element>(store: &ParamStore<T>) -> usize {
    store.param_count()
}

/// Parameter count of a variant without allocating its tensors' gradients.
pub fn variant_param_count(cfg: &ModelConfig) -> Result<usize> {
    let mut store = ParamStore::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    SpecTnt::build_with_init(cfg, &mut store, Init { std: INIT_STD }, &mut rng)?;
    Ok(store.param_count())
}
