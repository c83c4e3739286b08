use crate::autodiff::{Backward, BackwardCtx, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

struct LeakyRelu<T> {
    slope: T,
}

impl<T: Element> Backward<T> for LeakyRelu<T> {
    fn name(&self) -> &'static str {
        "leaky_relu"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        // The derivative at exactly zero is taken as `slope`.
        let slope = self.slope;
        let g = ctx
            .grad
            .zip_map(ctx.inputs[0].value(), |g, x| if x > T::zero() { g } else { g * slope })?;
        Ok(vec![Some(g)])
    }
}

/// `x` for `x >= 0`, `slope * x` otherwise.
pub fn leaky_relu<T: Element>(x: &Var<T>, slope: T) -> Result<Var<T>> {
    if !(slope > T::zero() && slope < T::one()) {
        return Err(Error::Config(format!("leaky_relu slope {slope} outside (0, 1)")));
    }
    let y = x.value().map(|v| if v >= T::zero() { v } else { v * slope });
    Var::from_op(y, &[x], LeakyRelu { slope })
}

struct Relu;

impl<T: Element> Backward<T> for Relu {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let g = ctx
            .grad
            .zip_map(ctx.inputs[0].value(), |g, x| if x > T::zero() { g } else { T::zero() })?;
        Ok(vec![Some(g)])
    }
}

pub fn relu<T: Element>(x: &Var<T>) -> Result<Var<T>> {
    Var::from_op(x.value().map(|v| v.max(T::zero())), &[x], Relu)
}

struct Sigmoid;

impl<T: Element> Backward<T> for Sigmoid {
    fn name(&self) -> &'static str {
        "sigmoid"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let g = ctx.grad.zip_map(ctx.output, |g, s| g * s * (T::one() - s))?;
        Ok(vec![Some(g)])
    }
}

pub fn sigmoid<T: Element>(x: &Var<T>) -> Result<Var<T>> {
    let y = x.value().map(|v| T::one() / (T::one() + (-v).exp()));
    Var::from_op(y, &[x], Sigmoid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::backward;
    use crate::ops::sum;

    #[test]
    fn leaky_relu_values_and_kink_convention() {
        let x = Var::<f64>::param(Tensor::from_f64(&[3], &[5.0, -1.0, 0.0]).unwrap());
        let y = leaky_relu(&x, 0.2).unwrap();
        assert_eq!(y.value().data(), &[5.0, -0.2, 0.0]);
        let g = backward(&sum(&y).unwrap()).unwrap();
        assert_eq!(g.get(&x).unwrap().data(), &[1.0, 0.2, 0.2]);
        assert!(leaky_relu(&x, 1.5).is_err());
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let y = sigmoid(&Var::constant(Tensor::<f64>::zeros(&[2]))).unwrap();
        assert_eq!(y.value().data(), &[0.5, 0.5]);
    }
}
