//! Elementwise primitives, reductions, softmax, and the backward dispatcher.

use crate::error::{Error, Result};

use super::graph::Op;
use super::shape::{broadcast_dims, broadcast_strides, strides};
use super::{Elem, Tensor};

#[inline]
pub(crate) fn sigmoid_scalar<E: Elem>(x: E) -> E {
    if x >= E::zero() {
        E::one() / (E::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (E::one() + e)
    }
}

#[inline]
fn softplus_scalar<E: Elem>(x: E) -> E {
    let hi = E::from_f(20.0);
    if x > hi {
        x
    } else if x < -hi {
        x.exp()
    } else {
        (E::one() + x.exp()).ln()
    }
}

impl<E: Elem> Tensor<E> {
    fn unary(&self, op: Op<E>, f: impl Fn(E) -> E) -> Tensor<E> {
        let data = self.data().iter().map(|&v| f(v)).collect();
        Tensor::from_op(self.dims().to_vec(), data, op, vec![self.clone()])
    }

    pub fn relu(&self) -> Tensor<E> {
        self.unary(Op::Relu, |v| if v > E::zero() { v } else { E::zero() })
    }

    pub fn silu(&self) -> Tensor<E> {
        self.unary(Op::Silu, |v| v * sigmoid_scalar(v))
    }

    pub fn sigmoid(&self) -> Tensor<E> {
        self.unary(Op::Sigmoid, sigmoid_scalar)
    }

    pub fn softplus(&self) -> Tensor<E> {
        self.unary(Op::Softplus, softplus_scalar)
    }

    pub fn exp(&self) -> Tensor<E> {
        self.unary(Op::Exp, |v| v.exp())
    }

    pub fn abs(&self) -> Tensor<E> {
        self.unary(Op::Abs, |v| v.abs())
    }

    pub fn sqrt(&self) -> Result<Tensor<E>> {
        if self.data().iter().any(|v| *v < E::zero()) {
            return Err(Error::invalid("sqrt", "negative input"));
        }
        Ok(self.unary(Op::Sqrt, |v| v.sqrt()))
    }

    pub fn scale(&self, factor: E) -> Tensor<E> {
        self.unary(Op::Scale { factor }, |v| v * factor)
    }

    pub fn clamp(&self, lo: E, hi: E) -> Tensor<E> {
        self.unary(Op::Clamp { lo, hi }, |v| if v < lo { lo } else if v > hi { hi } else { v })
    }

    fn binary(&self, rhs: &Tensor<E>, op: Op<E>, f: impl Fn(E, E) -> E) -> Result<Tensor<E>> {
        if self.dims() == rhs.dims() {
            let data = self.data().iter().zip(rhs.data()).map(|(&a, &b)| f(a, b)).collect();
            return Ok(Tensor::from_op(
                self.dims().to_vec(),
                data,
                op,
                vec![self.clone(), rhs.clone()],
            ));
        }
        let out_dims = broadcast_dims(op.name(), self.dims(), rhs.dims())?;
        let out_len: usize = out_dims.iter().product();
        let ostr = strides(&out_dims);
        let astr = broadcast_strides(self.dims(), &out_dims);
        let bstr = broadcast_strides(rhs.dims(), &out_dims);
        let a = self.data();
        let b = rhs.data();
        let rank = out_dims.len();
        let mut data = Vec::with_capacity(out_len);
        for flat in 0..out_len {
            let (mut ia, mut ib, mut rem) = (0usize, 0usize, flat);
            for i in 0..rank {
                let d = rem / ostr[i];
                rem %= ostr[i];
                ia += d * astr[i];
                ib += d * bstr[i];
            }
            data.push(f(a[ia], b[ib]));
        }
        Ok(Tensor::from_op(out_dims, data, op, vec![self.clone(), rhs.clone()]))
    }

    pub fn add(&self, rhs: &Tensor<E>) -> Result<Tensor<E>> {
        self.binary(rhs, Op::Add, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Tensor<E>) -> Result<Tensor<E>> {
        self.binary(rhs, Op::Sub, |a, b| a - b)
    }

    pub fn mul(&self, rhs: &Tensor<E>) -> Result<Tensor<E>> {
        self.binary(rhs, Op::Mul, |a, b| a * b)
    }

    /// Strict elementwise division: any exactly-zero denominator is an error.
    /// Loss-side code adds its epsilon guard before dividing.
    pub fn div(&self, rhs: &Tensor<E>) -> Result<Tensor<E>> {
        if rhs.data().iter().any(|v| *v == E::zero()) {
            return Err(Error::DivByZero { op: "div" });
        }
        self.binary(rhs, Op::Div, |a, b| a / b)
    }

    /// Quadrant-correct two-argument arctangent: self is the ordinate (y),
    /// `rhs` the abscissa (x).
    pub fn atan2(&self, rhs: &Tensor<E>) -> Result<Tensor<E>> {
        self.binary(rhs, Op::Atan2, |y, x| y.atan2(x))
    }

    pub fn softmax(&self, axis: usize) -> Result<Tensor<E>> {
        if axis >= self.rank() {
            return Err(Error::invalid("softmax", format!("axis {axis} out of range for {:?}", self.dims())));
        }
        let dims = self.dims();
        let (outer, len, inner) = split_axis(dims, axis);
        let x = self.data();
        let mut data = vec![E::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |c: usize| (o * len + c) * inner + i;
                let mut m = x[at(0)];
                for c in 1..len {
                    if x[at(c)] > m {
                        m = x[at(c)];
                    }
                }
                let mut s = E::zero();
                for c in 0..len {
                    let e = (x[at(c)] - m).exp();
                    data[at(c)] = e;
                    s = s + e;
                }
                for c in 0..len {
                    data[at(c)] = data[at(c)] / s;
                }
            }
        }
        Ok(Tensor::from_op(dims.to_vec(), data, Op::Softmax { axis }, vec![self.clone()]))
    }

    pub fn sum_all(&self) -> Tensor<E> {
        let s = self.data().iter().fold(E::zero(), |acc, &v| acc + v);
        Tensor::from_op(vec![1], vec![s], Op::SumAll, vec![self.clone()])
    }

    pub fn mean_all(&self) -> Tensor<E> {
        let n = E::from_f(self.len() as f64);
        let s = self.data().iter().fold(E::zero(), |acc, &v| acc + v);
        Tensor::from_op(vec![1], vec![s / n], Op::MeanAll, vec![self.clone()])
    }

    /// (N,C,H,W) -> (N,C,1,1) spatial mean. `adaptive_avg_pool_1x1` is the
    /// same operation under its other common name.
    pub fn global_avg_pool(&self) -> Result<Tensor<E>> {
        if self.rank() != 4 {
            return Err(Error::shape("global_avg_pool", format!("expected rank 4, got {:?}", self.dims())));
        }
        let [n, c, h, w] = [self.dims()[0], self.dims()[1], self.dims()[2], self.dims()[3]];
        let hw = h * w;
        if hw == 0 {
            return Err(Error::invalid("global_avg_pool", "empty spatial extent"));
        }
        let inv = E::one() / E::from_f(hw as f64);
        let x = self.data();
        let mut data = Vec::with_capacity(n * c);
        for nc in 0..n * c {
            let s = x[nc * hw..(nc + 1) * hw].iter().fold(E::zero(), |acc, &v| acc + v);
            data.push(s * inv);
        }
        Ok(Tensor::from_op(vec![n, c, 1, 1], data, Op::GlobalAvgPool, vec![self.clone()]))
    }

    pub fn adaptive_avg_pool_1x1(&self) -> Result<Tensor<E>> {
        self.global_avg_pool()
    }
}

pub(crate) fn split_axis(dims: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = dims[..axis].iter().product();
    let len = dims[axis];
    let inner: usize = dims[axis + 1..].iter().product();
    (outer, len, inner)
}

/// Accumulate broadcast-aware gradients for a two-input elementwise op.
fn binary_bwd<E: Elem>(
    a: &Tensor<E>,
    b: &Tensor<E>,
    out_dims: &[usize],
    g: &[E],
    fa: impl Fn(E, E, E) -> E,
    fb: impl Fn(E, E, E) -> E,
) -> (Vec<E>, Vec<E>) {
    let mut ga = vec![E::zero(); a.len()];
    let mut gb = vec![E::zero(); b.len()];
    if a.dims() == b.dims() {
        for i in 0..g.len() {
            let (av, bv) = (a.data()[i], b.data()[i]);
            ga[i] = fa(av, bv, g[i]);
            gb[i] = fb(av, bv, g[i]);
        }
        return (ga, gb);
    }
    let ostr = strides(out_dims);
    let astr = broadcast_strides(a.dims(), out_dims);
    let bstr = broadcast_strides(b.dims(), out_dims);
    let rank = out_dims.len();
    for (flat, &gv) in g.iter().enumerate() {
        let (mut ia, mut ib, mut rem) = (0usize, 0usize, flat);
        for i in 0..rank {
            let d = rem / ostr[i];
            rem %= ostr[i];
            ia += d * astr[i];
            ib += d * bstr[i];
        }
        let (av, bv) = (a.data()[ia], b.data()[ib]);
        ga[ia] = ga[ia] + fa(av, bv, gv);
        gb[ib] = gb[ib] + fb(av, bv, gv);
    }
    (ga, gb)
}

/// Backward dispatch for every recorded primitive.
pub(crate) fn backward_rule<E: Elem>(
    op: &Op<E>,
    inputs: &[Tensor<E>],
    output: &Tensor<E>,
    g: &[E],
) -> Result<Vec<Option<Vec<E>>>> {
    let x = &inputs[0];
    let y = output.data();
    Ok(match op {
        Op::Relu => vec![Some(
            x.data().iter().zip(g).map(|(&v, &gv)| if v > E::zero() { gv } else { E::zero() }).collect(),
        )],
        Op::Silu => vec![Some(
            x.data()
                .iter()
                .zip(g)
                .map(|(&v, &gv)| {
                    let s = sigmoid_scalar(v);
                    gv * s * (E::one() + v * (E::one() - s))
                })
                .collect(),
        )],
        Op::Sigmoid => vec![Some(
            y.iter().zip(g).map(|(&s, &gv)| gv * s * (E::one() - s)).collect(),
        )],
        Op::Softplus => vec![Some(
            x.data().iter().zip(g).map(|(&v, &gv)| gv * sigmoid_scalar(v)).collect(),
        )],
        Op::Exp => vec![Some(y.iter().zip(g).map(|(&e, &gv)| gv * e).collect())],
        Op::Abs => vec![Some(
            x.data()
                .iter()
                .zip(g)
                .map(|(&v, &gv)| {
                    if v > E::zero() {
                        gv
                    } else if v < E::zero() {
                        -gv
                    } else {
                        E::zero()
                    }
                })
                .collect(),
        )],
        Op::Sqrt => {
            let tiny = E::from_f(1e-12);
            vec![Some(
                y.iter()
                    .zip(g)
                    .map(|(&s, &gv)| gv * E::from_f(0.5) / if s > tiny { s } else { tiny })
                    .collect(),
            )]
        }
        Op::Scale { factor } => vec![Some(g.iter().map(|&gv| gv * *factor).collect())],
        Op::Clamp { lo, hi } => vec![Some(
            x.data()
                .iter()
                .zip(g)
                .map(|(&v, &gv)| if v >= *lo && v <= *hi { gv } else { E::zero() })
                .collect(),
        )],
        Op::Add => {
            let (ga, gb) = binary_bwd(x, &inputs[1], output.dims(), g, |_, _, gv| gv, |_, _, gv| gv);
            vec![Some(ga), Some(gb)]
        }
        Op::Sub => {
            let (ga, gb) = binary_bwd(x, &inputs[1], output.dims(), g, |_, _, gv| gv, |_, _, gv| -gv);
            vec![Some(ga), Some(gb)]
        }
        Op::Mul => {
            let (ga, gb) =
                binary_bwd(x, &inputs[1], output.dims(), g, |_, bv, gv| gv * bv, |av, _, gv| gv * av);
            vec![Some(ga), Some(gb)]
        }
        Op::Div => {
            let (ga, gb) = binary_bwd(
                x,
                &inputs[1],
                output.dims(),
                g,
                |_, bv, gv| gv / bv,
                |av, bv, gv| -gv * av / (bv * bv),
            );
            vec![Some(ga), Some(gb)]
        }
        Op::Atan2 => {
            let (ga, gb) = binary_bwd(
                x,
                &inputs[1],
                output.dims(),
                g,
                |yv, xv, gv| {
                    let r2 = xv * xv + yv * yv;
                    if r2 == E::zero() {
                        E::zero()
                    } else {
                        gv * xv / r2
                    }
                },
                |yv, xv, gv| {
                    let r2 = xv * xv + yv * yv;
                    if r2 == E::zero() {
                        E::zero()
                    } else {
                        -gv * yv / r2
                    }
                },
            );
            vec![Some(ga), Some(gb)]
        }
        Op::Softmax { axis } => {
            let (outer, len, inner) = split_axis(output.dims(), *axis);
            let mut dx = vec![E::zero(); y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |c: usize| (o * len + c) * inner + i;
                    let mut dot = E::zero();
                    for c in 0..len {
                        dot = dot + g[at(c)] * y[at(c)];
                    }
                    for c in 0..len {
                        dx[at(c)] = y[at(c)] * (g[at(c)] - dot);
                    }
                }
            }
            vec![Some(dx)]
        }
        Op::SumAll => vec![Some(vec![g[0]; x.len()])],
        Op::MeanAll => {
            let inv = E::one() / E::from_f(x.len() as f64);
            vec![Some(vec![g[0] * inv; x.len()])]
        }
        Op::GlobalAvgPool => {
            let d = x.dims();
            let hw = d[2] * d[3];
            let inv = E::one() / E::from_f(hw as f64);
            let mut dx = vec![E::zero(); x.len()];
            for nc in 0..d[0] * d[1] {
                let gv = g[nc] * inv;
                for v in dx[nc * hw..(nc + 1) * hw].iter_mut() {
                    *v = gv;
                }
            }
            vec![Some(dx)]
        }
        Op::Conv2d { .. } | Op::ConvTranspose2d { .. } | Op::Linear | Op::LayerNorm { .. } | Op::BatchNorm { .. } => {
            super::ops_nn::backward_nn(op, inputs, g)?
        }
        Op::Reshape | Op::Permute { .. } | Op::Concat { .. } | Op::Slice { .. } => {
            super::ops_shape::backward_shape(op, inputs, g)?
        }
        Op::Custom(c) => {
            let grads = c.backward(inputs, output, g)?;
            if grads.len() != inputs.len() {
                return Err(Error::invalid("custom_op", format!("{} returned {} gradients for {} inputs", c.name(), grads.len(), inputs.len())));
            }
            grads
        }
    })
}

#[cfg(test)]
mod tests {
    use super::super::{backward, Tensor};

    #[test]
    fn relu_matches_definition() {
        let x = Tensor::from_vec(&[3], vec![-1.0f32, 0.0, 2.0]).unwrap();
        assert_eq!(x.relu().data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn silu_and_sigmoid_at_zero() {
        let x = Tensor::scalar(0.0f32);
        assert_eq!(x.silu().data()[0], 0.0);
        assert_eq!(x.sigmoid().data()[0], 0.5);
    }

    #[test]
    fn linear_loss_gradient_is_the_weight() {
        // loss = sum(w ⊙ x) → ∂loss/∂x = w
        let w = Tensor::from_vec(&[4], vec![0.5f32, -1.5, 2.0, 3.0]).unwrap();
        let x = Tensor::from_vec(&[4], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap().with_grad();
        let loss = w.mul(&x).unwrap().sum_all();
        let grads = backward(&loss).unwrap();
        assert_eq!(grads.get(&x).unwrap().data(), w.data());
    }

    #[test]
    fn mse_gradient_zero_at_minimum() {
        let t = Tensor::from_vec(&[3], vec![0.3f32, -0.7, 0.1]).unwrap();
        let x = t.detach().with_grad();
        let d = x.sub(&t).unwrap();
        let loss = d.mul(&d).unwrap().mean_all();
        let grads = backward(&loss).unwrap();
        assert_eq!(grads.get(&x).unwrap().data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn backward_twice_errors() {
        let x = Tensor::scalar(2.0f32).with_grad();
        let loss = x.mul(&x).unwrap().sum_all();
        backward(&loss).unwrap();
        assert!(backward(&loss).is_err());
    }

    #[test]
    fn backward_non_scalar_errors() {
        let x = Tensor::from_vec(&[2], vec![1.0f32, 2.0]).unwrap().with_grad();
        let y = x.relu();
        assert!(backward(&y).is_err());
    }

    #[test]
    fn div_by_zero_is_strict() {
        let a = Tensor::from_vec(&[2], vec![1.0f32, 2.0]).unwrap();
        let b = Tensor::from_vec(&[2], vec![1.0f32, 0.0]).unwrap();
        assert!(a.div(&b).is_err());
    }

    #[test]
    fn broadcast_mul_reduces_gradient() {
        // (1,3,1,1) gate against (1,3,2,2) feature
        let gate = Tensor::from_vec(&[1, 3, 1, 1], vec![0.5f32, 1.0, 2.0]).unwrap().with_grad();
        let x = Tensor::from_vec(&[1, 3, 2, 2], (0..12).map(|v| v as f32).collect()).unwrap();
        let y = x.mul(&gate).unwrap();
        assert_eq!(y.dims(), &[1, 3, 2, 2]);
        let loss = y.sum_all();
        let grads = backward(&loss).unwrap();
        let gg = grads.get(&gate).unwrap();
        // d/d gate_c = sum of x over that channel
        assert_eq!(gg.data(), &[0.0 + 1.0 + 2.0 + 3.0, 4.0 + 5.0 + 6.0 + 7.0, 8.0 + 9.0 + 10.0 + 11.0]);
    }
}
