use crate::autodiff::{Backward, BackwardCtx, Var};
use crate::error::{shape_mismatch, Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug)]
enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinKind {
    fn name(self) -> &'static str {
        match self {
            BinKind::Add => "add",
            BinKind::Sub => "sub",
            BinKind::Mul => "mul",
            BinKind::Div => "div",
        }
    }

    #[inline]
    fn apply<T: Element>(self, a: T, b: T) -> T {
        match self {
            BinKind::Add => a + b,
            BinKind::Sub => a - b,
            BinKind::Mul => a * b,
            BinKind::Div => a / b,
        }
    }
}

struct Binary {
    kind: BinKind,
}

/// Broadcast view: a rank-0 operand repeats its single value.
#[inline]
fn at<T: Element>(t: &Tensor<T>, i: usize) -> T {
    if t.rank() == 0 {
        t.data()[0]
    } else {
        t.data()[i]
    }
}

fn reduce_to<T: Element>(g: Vec<T>, target: &Tensor<T>, out_shape: &[usize]) -> Tensor<T> {
    if target.rank() == 0 && !out_shape.is_empty() {
        Tensor::scalar(g.into_iter().sum())
    } else {
        Tensor::from_parts(target.shape().to_vec(), g)
    }
}

impl<T: Element> Backward<T> for Binary {
    fn name(&self) -> &'static str {
        self.kind.name()
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let a = ctx.inputs[0].value();
        let b = ctx.inputs[1].value();
        let g = ctx.grad.data();
        let n = g.len();
        let out_shape = ctx.output.shape();
        let ga = ctx.needs[0].then(|| {
            let v: Vec<T> = match self.kind {
                BinKind::Add | BinKind::Sub => g.to_vec(),
                BinKind::Mul => (0..n).map(|i| g[i] * at(b, i)).collect(),
                BinKind::Div => (0..n).map(|i| g[i] / at(b, i)).collect(),
            };
            reduce_to(v, a, out_shape)
        });
        let gb = ctx.needs[1].then(|| {
            let v: Vec<T> = match self.kind {
                BinKind::Add => g.to_vec(),
                BinKind::Sub => g.iter().map(|&x| -x).collect(),
                BinKind::Mul => (0..n).map(|i| g[i] * at(a, i)).collect(),
                BinKind::Div => (0..n)
                    .map(|i| {
                        let bv = at(b, i);
                        -g[i] * at(a, i) / (bv * bv)
                    })
                    .collect(),
            };
            reduce_to(v, b, out_shape)
        });
        Ok(vec![ga, gb])
    }
}

fn binary<T: Element>(kind: BinKind, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    let (ta, tb) = (a.value(), b.value());
    let shape = if ta.shape() == tb.shape() || tb.rank() == 0 {
        ta.shape().to_vec()
    } else if ta.rank() == 0 {
        tb.shape().to_vec()
    } else {
        return Err(shape_mismatch(kind.name(), ta.shape(), tb.shape()));
    };
    if let BinKind::Div = kind {
        if tb.data().iter().any(|x| x.is_zero()) {
            return Err(Error::DivisionByZero { op: "div" });
        }
    }
    let n = crate::tensor::numel(&shape);
    let data = (0..n).map(|i| kind.apply(at(ta, i), at(tb, i))).collect();
    Var::from_op(Tensor::from_parts(shape, data), &[a, b], Binary { kind })
}

/// Elementwise sum; either operand may be a rank-0 scalar.
pub fn add<T: Element>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    binary(BinKind::Add, a, b)
}

pub fn sub<T: Element>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    binary(BinKind::Sub, a, b)
}

pub fn mul<T: Element>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    binary(BinKind::Mul, a, b)
}

/// Elementwise quotient. A zero anywhere in the divisor is an error.
pub fn div<T: Element>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    binary(BinKind::Div, a, b)
}

struct Affine<T> {
    scale: T,
}

impl<T: Element> Backward<T> for Affine<T> {
    fn name(&self) -> &'static str {
        "affine"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(ctx.grad.map(|g| g * self.scale))])
    }
}

/// `c * x` for a constant `c`.
pub fn scale<T: Element>(x: &Var<T>, c: T) -> Result<Var<T>> {
    Var::from_op(x.value().map(|v| v * c), &[x], Affine { scale: c })
}

pub fn neg<T: Element>(x: &Var<T>) -> Result<Var<T>> {
    scale(x, -T::one())
}

/// `x + c` for a constant `c`.
pub fn add_scalar<T: Element>(x: &Var<T>, c: T) -> Result<Var<T>> {
    Var::from_op(x.value().map(|v| v + c), &[x], Affine { scale: T::one() })
}

struct Square;

impl<T: Element> Backward<T> for Square {
    fn name(&self) -> &'static str {
        "square"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let two = T::of(2.0);
        Ok(vec![Some(ctx.grad.zip_map(ctx.inputs[0].value(), |g, x| two * g * x)?)])
    }
}

pub fn square<T: Element>(x: &Var<T>) -> Result<Var<T>> {
    Var::from_op(x.value().map(|v| v * v), &[x], Square)
}

struct SumAll {
    scale: f64,
}

impl<T: Element> Backward<T> for SumAll {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let g = ctx.grad.item() * T::of(self.scale);
        Ok(vec![Some(Tensor::full(ctx.inputs[0].shape(), g))])
    }
}

/// Sum of all elements, as a rank-0 tensor.
pub fn sum<T: Element>(x: &Var<T>) -> Result<Var<T>> {
    Var::from_op(Tensor::scalar(x.value().sum()), &[x], SumAll { scale: 1.0 })
}

/// Mean of all elements, as a rank-0 tensor.
pub fn mean<T: Element>(x: &Var<T>) -> Result<Var<T>> {
    let n = x.value().numel() as f64;
    let v = x.value().sum() / T::of(n);
    Var::from_op(Tensor::scalar(v), &[x], SumAll { scale: 1.0 / n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::backward;

    fn c(shape: &[usize], v: &[f64]) -> Var<f64> {
        Var::constant(Tensor::from_f64(shape, v).unwrap())
    }

    #[test]
    fn add_vectors() {
        let y = add(&c(&[3], &[1., 2., 3.]), &c(&[3], &[4., 5., 6.])).unwrap();
        assert_eq!(y.value().data(), &[5., 7., 9.]);
    }

    #[test]
    fn multiply_by_one_is_bitwise_identity() {
        let x = c(&[4], &[0.1, -3.7, 1e-300, 12345.678]);
        let y = mul(&x, &c(&[], &[1.0])).unwrap();
        assert!(y.value().bit_eq(x.value()));
    }

    #[test]
    fn square_sum_gradient() {
        let x = Var::<f64>::param(Tensor::from_f64(&[2], &[1., -2.]).unwrap());
        let loss = sum(&mul(&x, &x).unwrap()).unwrap();
        let g = backward(&loss).unwrap();
        assert_eq!(g.get(&x).unwrap().data(), &[2., -4.]);
    }

    #[test]
    fn shape_mismatch_and_zero_division() {
        assert!(add(&c(&[2], &[1., 2.]), &c(&[3], &[1., 2., 3.])).is_err());
        assert!(matches!(
            div(&c(&[2], &[1., 2.]), &c(&[2], &[1., 0.])),
            Err(Error::DivisionByZero { .. })
        ));
    }

    #[test]
    fn scalar_broadcast_gradient_sums() {
        let x = Var::<f64>::param(Tensor::from_f64(&[3], &[1., 2., 3.]).unwrap());
        let s = Var::param(Tensor::scalar(2.0));
        let loss = sum(&mul(&x, &s).unwrap()).unwrap();
        let g = backward(&loss).unwrap();
        assert_eq!(g.get(&s).unwrap().item(), 6.0);
        assert_eq!(g.get(&x).unwrap().data(), &[2., 2., 2.]);
    }
}
