use std::rc::Rc;

use super::{BackwardFn, Var};
use crate::error::{Error, Result};
use crate::tensor::Element;

/// `rhs` must equal `lhs` or a trailing suffix of it; returns the number of
/// times `rhs` repeats over the leading dims.
fn suffix_repeats(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Result<usize> {
    if rhs.len() > lhs.len() || lhs[lhs.len() - rhs.len()..] != *rhs {
        return Err(Error::shape(op, lhs, rhs));
    }
    Ok(lhs[..lhs.len() - rhs.len()].iter().product())
}

fn reduce_repeats<T: Element>(g: &[T], block: usize) -> Vec<T> {
    let mut out = vec![T::zero(); block];
    for chunk in g.chunks_exact(block) {
        out.iter_mut().zip(chunk).for_each(|(o, &v)| *o += v);
    }
    out
}

impl<'t, T: Element> Var<'t, T> {
    fn unary(
        self,
        op: &'static str,
        f: impl Fn(T) -> T,
        df: impl Fn(T, T) -> T + 'static,
    ) -> Var<'t, T> {
        let x = self.value();
        let out: Vec<T> = x.iter().map(|&v| f(v)).collect();
        let out = Rc::new(out);
        let saved_out = Rc::clone(&out);
        self.tape.push_rc(op, self.shape(), out, &[self], move || -> BackwardFn<T> {
            Box::new(move |g, _| {
                let dx = g
                    .iter()
                    .zip(x.iter().zip(saved_out.iter()))
                    .map(|(&g, (&x, &y))| g * df(x, y))
                    .collect();
                vec![Some(dx)]
            })
        })
    }

    /// Elementwise sum; `rhs` may broadcast over leading dims of `self`.
    pub fn add(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary_linear("add", rhs, T::one())
    }

    pub fn sub(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary_linear("sub", rhs, -T::one())
    }

    fn binary_linear(self, op: &'static str, rhs: Var<'t, T>, sign: T) -> Result<Var<'t, T>> {
        let (ls, rs) = (self.shape(), rhs.shape());
        suffix_repeats(op, &ls, &rs)?;
        let (a, b) = (self.value(), rhs.value());
        let block = b.len();
        let mut out = a.to_vec();
        for chunk in out.chunks_exact_mut(block) {
            chunk.iter_mut().zip(b.iter()).for_each(|(o, &v)| *o += sign * v);
        }
        Ok(self.tape.push(op, ls, out, &[self, rhs], move || -> BackwardFn<T> {
            Box::new(move |g, needs| {
                let da = needs[0].then(|| g.to_vec());
                let db = needs[1].then(|| {
                    let mut r = reduce_repeats(g, block);
                    if sign != T::one() {
                        r.iter_mut().for_each(|v| *v = *v * sign);
                    }
                    r
                });
                vec![da, db]
            })
        }))
    }

    /// Elementwise product; `rhs` may broadcast over leading dims of `self`.
    pub fn mul(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        let (ls, rs) = (self.shape(), rhs.shape());
        suffix_repeats("mul", &ls, &rs)?;
        let (a, b) = (self.value(), rhs.value());
        let block = b.len();
        let mut out = a.to_vec();
        for chunk in out.chunks_exact_mut(block) {
            chunk.iter_mut().zip(b.iter()).for_each(|(o, &v)| *o *= v);
        }
        Ok(self.tape.push("mul", ls, out, &[self, rhs], move || -> BackwardFn<T> {
            Box::new(move |g, needs| {
                let da = needs[0].then(|| {
                    let mut d = g.to_vec();
                    for chunk in d.chunks_exact_mut(block) {
                        chunk.iter_mut().zip(b.iter()).for_each(|(o, &v)| *o *= v);
                    }
                    d
                });
                let db = needs[1].then(|| {
                    let prod: Vec<T> = g.iter().zip(a.iter()).map(|(&g, &a)| g * a).collect();
                    reduce_repeats(&prod, block)
                });
                vec![da, db]
            })
        }))
    }

    /// Multiplies by a constant tensor of the same shape (e.g. a dropout mask).
    pub fn mul_const(self, mask: Rc<Vec<T>>) -> Result<Var<'t, T>> {
        if mask.len() != self.numel() {
            return Err(Error::shape("mul_const", &self.shape(), &[mask.len()]));
        }
        let a = self.value();
        let out: Vec<T> = a.iter().zip(mask.iter()).map(|(&x, &m)| x * m).collect();
        Ok(self.tape.push("mul_const", self.shape(), out, &[self], move || -> BackwardFn<T> {
            Box::new(move |g, _| {
                vec![Some(g.iter().zip(mask.iter()).map(|(&g, &m)| g * m).collect())]
            })
        }))
    }

    pub fn scale(self, c: T) -> Var<'t, T> {
        self.unary("scale", |x| x * c, move |_, _| c)
    }

    pub fn neg(self) -> Var<'t, T> {
        self.unary("neg", |x| -x, |_, _| -T::one())
    }

    /// Exact GELU, `0.5·x·(1 + erf(x/√2))`.
    pub fn gelu(self) -> Var<'t, T> {
        self.unary("gelu", gelu, |x, _| gelu_grad(x))
    }

    pub fn relu(self) -> Var<'t, T> {
        self.unary(
            "relu",
            |x| x.max(T::zero()),
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        self.unary("sigmoid", sigmoid, |_, y| y * (T::one() - y))
    }

    pub fn exp(self) -> Var<'t, T> {
        self.unary("exp", T::exp, |_, y| y)
    }

    /// Natural log of `max(x, floor)`; the gradient is zero where clamped.
    pub fn ln_clamped(self, floor: T) -> Var<'t, T> {
        self.unary(
            "ln",
            move |x| x.max(floor).ln(),
            move |x, _| if x > floor { x.recip() } else { T::zero() },
        )
    }
}

pub(crate) fn gelu<T: Element>(x: T) -> T {
    let half = T::from_f64(0.5);
    half * x * (T::one() + (x * T::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

pub(crate) fn gelu_grad<T: Element>(x: T) -> T {
    let half = T::from_f64(0.5);
    let cdf = half * (T::one() + (x * T::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-half * x * x).exp() * T::from_f64(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    cdf + x * pdf
}

pub(crate) fn sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        (T::one() + (-x).exp()).recip()
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;

    #[test]
    fn gelu_reference_values() {
        assert_eq!(gelu(0.0f64), 0.0);
        // 0.5·(1+erf(1/√2)) evaluated with mpmath
        assert!((gelu(1.0f64) - 0.841_344_746_068_543).abs() < 1e-12);
        assert!(gelu(-10.0f64).abs() < 1e-8);
    }

    #[test]
    fn broadcast_add_sums_bias_grad_over_rows() {
        let tape = Tape::<f64>::new();
        let x = tape.input(&[3, 2], vec![0.0; 6], true);
        let b = tape.input(&[2], vec![1.0, 2.0], true);
        let y = x.add(b).unwrap();
        assert_eq!(y.value().as_slice(), &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let g = tape.backward(y.sum()).unwrap();
        assert_eq!(g.get(b).unwrap(), &[3.0, 3.0]);
    }

    #[test]
    fn leading_broadcast_is_rejected() {
        let tape = Tape::<f64>::new();
        let x = tape.input(&[3, 2], vec![0.0; 6], false);
        let b = tape.input(&[3], vec![0.0; 3], false);
        assert!(matches!(x.add(b), Err(Error::Shape { .. })));
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(-800.0f64) >= 0.0);
        assert!((sigmoid(800.0f64) - 1.0).abs() < 1e-15);
    }
}
