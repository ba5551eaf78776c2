use crate::autograd::{BackwardFn, Var};
use crate::data::IGNORE_INDEX;
use crate::error::{Error, Result};
use crate::tensor::Element;

/// Probability clamp applied inside both losses.
pub const PROB_FLOOR: f64 = 1e-7;

/// Mean binary cross-entropy of probabilities against {0, 1} targets, with
/// `p` clamped to `[1e-7, 1 − 1e-7]`. Clamped entries get zero gradient.
pub fn bce_loss<'t, T: Element>(probs: Var<'t, T>, targets: &[T]) -> Result<Var<'t, T>> {
    let p = probs.value();
    if p.len() != targets.len() || p.is_empty() {
        return Err(Error::contract(format!(
            "BCE on {} probabilities with {} targets",
            p.len(),
            targets.len()
        )));
    }
    let lo = T::from_f64(PROB_FLOOR);
    let hi = T::one() - lo;
    let n = T::from_f64(p.len() as f64);
    let mut total = T::zero();
    for (&p, &y) in p.iter().zip(targets) {
        let q = p.max(lo).min(hi);
        total -= y * q.ln() + (T::one() - y) * (T::one() - q).ln();
    }
    // the clamp would otherwise hide NaN inputs
    if p.iter().any(|v| v.is_nan()) {
        total = T::nan();
    }
    let y = targets.to_vec();
    Ok(probs.tape().push("bce", Vec::new(), vec![total / n], &[probs], move || -> BackwardFn<T> {
        Box::new(move |g, _| {
            let dx = p
                .iter()
                .zip(&y)
                .map(|(&p, &y)| {
                    if p <= lo || p >= hi {
                        T::zero()
                    } else {
                        g[0] * (p - y) / (p * (T::one() - p) * n)
                    }
                })
                .collect();
            vec![Some(dx)]
        })
    }))
}

/// Mean cross-entropy of per-frame class distributions `[..., C]` against
/// one label per row. Rows labelled [`IGNORE_INDEX`] are skipped.
pub fn ce_loss_framewise<'t, T: Element>(probs: Var<'t, T>, labels: &[usize]) -> Result<Var<'t, T>> {
    let shape = probs.shape();
    let classes = *shape.last().ok_or_else(|| Error::contract("cross-entropy on a scalar"))?;
    let p = probs.value();
    if p.len() != labels.len() * classes {
        return Err(Error::contract(format!(
            "cross-entropy on {shape:?} with {} labels",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes && l != IGNORE_INDEX) {
        return Err(Error::contract(format!("label {bad} out of range for {classes} classes")));
    }
    let used = labels.iter().filter(|&&l| l != IGNORE_INDEX).count();
    if used == 0 {
        return Err(Error::contract("every frame is ignored"));
    }
    let lo = T::from_f64(PROB_FLOOR);
    let n = T::from_f64(used as f64);
    let mut total = T::zero();
    for (row, &l) in labels.iter().enumerate() {
        if l != IGNORE_INDEX {
            total -= p[row * classes + l].max(lo).ln();
        }
    }
    if p.iter().any(|v| v.is_nan()) {
        total = T::nan();
    }
    let labels = labels.to_vec();
    Ok(probs.tape().push("ce", Vec::new(), vec![total / n], &[probs], move || -> BackwardFn<T> {
        Box::new(move |g, _| {
            let mut dx = vec![T::zero(); p.len()];
            for (row, &l) in labels.iter().enumerate() {
                if l != IGNORE_INDEX {
                    let i = row * classes + l;
                    if p[i] > lo {
                        dx[i] = -g[0] / (p[i] * n);
                    }
                }
            }
            vec![Some(dx)]
        })
    }))
}
