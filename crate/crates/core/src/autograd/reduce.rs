use super::{BackwardFn, Var};
use crate::error::{Error, Result};
use crate::tensor::Element;

impl<'t, T: Element> Var<'t, T> {
    /// Sum of all elements, as a scalar.
    pub fn sum(self) -> Var<'t, T> {
        let x = self.value();
        let n = x.len();
        let s = x.iter().copied().sum();
        self.tape.push("sum", Vec::new(), vec![s], &[self], move || -> BackwardFn<T> {
            Box::new(move |g, _| vec![Some(vec![g[0]; n])])
        })
    }

    pub fn mean(self) -> Var<'t, T> {
        let n = self.numel();
        self.sum().scale(T::from_f64(1.0 / n as f64))
    }

    /// Mean over one axis, which is removed from the shape.
    pub fn mean_axis(self, axis: usize) -> Result<Var<'t, T>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::contract(format!("axis {axis} out of range for {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let inv = T::from_f64(1.0 / len as f64);
        let x = self.value();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for a in 0..len {
                let src = &x[(o * len + a) * inner..(o * len + a + 1) * inner];
                dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
            }
            dst.iter_mut().for_each(|d| *d *= inv);
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        Ok(self.tape.push("mean_axis", out_shape, out, &[self], move || -> BackwardFn<T> {
            Box::new(move |g, _| {
                let mut dx = vec![T::zero(); outer * len * inner];
                for o in 0..outer {
                    let src = &g[o * inner..(o + 1) * inner];
                    for a in 0..len {
                        let dst = &mut dx[(o * len + a) * inner..(o * len + a + 1) * inner];
                        dst.iter_mut().zip(src).for_each(|(d, &s)| *d = s * inv);
                    }
                }
                vec![Some(dx)]
            })
        }))
    }
}
