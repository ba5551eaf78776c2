//! Finite-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::{FrameActivation, ModelConfig, OutputSpec, SpecTnt, Variant};
use crate::nn::{ForwardCtx, Init};
use crate::params::{Bound, ParamStore};
use crate::train::{bce_loss, ce_loss_framewise};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub tolerance: f64,
    /// Check at most this many evenly spaced elements per parameter.
    pub max_checks_per_param: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            tolerance: 1e-4,
            max_checks_per_param: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamError {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub params: Vec<ParamError>,
    pub max_rel_error: f64,
    pub eps: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&ParamError> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// `|a − n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the tape gradient of the scalar `f` against central differences
/// `(f(θ+ε) − f(θ−ε)) / 2ε` for every parameter in `store`.
///
/// `f` must be deterministic: disable dropout before calling.
pub fn gradcheck<F>(store: &ParamStore<f64>, f: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &Bound<'t, f64>) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let bound = store.bind(&tape);
    let loss = f(&tape, &bound)?;
    let grads = tape.backward(loss)?;

    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let tape = Tape::inference();
        let b = s.bind(&tape);
        Ok(f(&tape, &b)?.item())
    };

    let mut work = store.clone();
    let mut params = Vec::with_capacity(store.len());
    for id in store.ids() {
        let name = store.name(id).to_string();
        let n = store.get(id).numel();
        let analytic = grads
            .get(bound.var(id))
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; n]);
        let step = opts
            .max_checks_per_param
            .map_or(1, |m| n.div_ceil(m.max(1)));
        let mut worst = 0.0f64;
        let mut checked = 0;
        for i in (0..n).step_by(step) {
            let orig = work.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + opts.eps;
            let plus = eval(&work)?;
            work.get_mut(id).data_mut()[i] = orig - opts.eps;
            let minus = eval(&work)?;
            work.get_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let a = analytic[i];
            if !a.is_finite() || !numeric.is_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter {name}[{i}]")));
            }
            worst = worst.max(relative_error(a, numeric));
            checked += 1;
        }
        params.push(ParamError {
            name,
            max_rel_error: worst,
            checked,
        });
    }
    let max_rel_error = params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        params,
        max_rel_error,
        eps: opts.eps,
        tolerance: opts.tolerance,
        pass: max_rel_error < opts.tolerance,
    })
}

/// Smallest configuration that still has every component: two blocks,
/// two heads per encoder, four bins and three frames.
pub fn micro_config(variant: Variant, o_d: OutputSpec) -> ModelConfig {
    ModelConfig {
        n_freq: 4,
        n_frames: 3,
        in_channels: 1,
        p_f: 1,
        p_t: 1,
        k: 8,
        d: 8,
        h_k: 2,
        h_d: 2,
        o_d,
        blocks: 2,
        dropout: 0.0,
        variant,
        conv_depth: 1,
        ffn_ratio: 4,
        frame_activation: FrameActivation::Softmax,
    }
}

/// Initialisation scale for model checks. At the training scale of 0.02
/// many gradients are so small that central differences only measure
/// roundoff.
pub const CHECK_INIT_STD: f64 = 0.3;

/// Scalar the model check differentiates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckObjective {
    /// Sum of the output probabilities weighted by fixed random numbers
    /// in [−1, 1).
    WeightedOutputs,
    /// BCE for clip outputs, cross-entropy for frame outputs, against
    /// random targets.
    TaskLoss,
}

/// Gradient check of the forward pass on a random batch of two clips.
pub fn check_model(
    cfg: &ModelConfig,
    objective: CheckObjective,
    seed: u64,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let model = SpecTnt::build_with_init(cfg, &mut store, Init { std: CHECK_INIT_STD }, &mut rng)?;
    let shape = model.input_shape(2);
    let x: Vec<f64> = (0..shape.iter().product::<usize>()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let classes = cfg.o_d.classes();
    let weights: Vec<f64> = (0..2 * cfg.t_hat() * classes).map(|_| rng.random_range(-1.0..1.0)).collect();
    let tags: Vec<f64> = (0..2 * classes).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect();
    let labels: Vec<usize> = (0..2 * cfg.t_hat()).map(|_| rng.random_range(0..classes)).collect();
    gradcheck(
        &store,
        |tape, p| {
            let y = model.forward(p, tape.constant(&shape, x.clone()), &mut ForwardCtx::eval())?;
            match (objective, cfg.o_d) {
                (CheckObjective::WeightedOutputs, _) => {
                    let w = tape.constant(&y.shape(), weights[..y.numel()].to_vec());
                    Ok(y.mul(w)?.sum())
                }
                (CheckObjective::TaskLoss, OutputSpec::Clip(_)) => bce_loss(y, &tags),
                (CheckObjective::TaskLoss, OutputSpec::Frame(_)) => ce_loss_framewise(y, &labels),
            }
        },
        opts,
    )
}
