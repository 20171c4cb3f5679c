//! Structural primitives: reshape, permute, concat, slice.

use crate::error::{Error, Result};

use super::graph::Op;
use super::shape::strides;
use super::{check_dims, Elem, Tensor};

pub(crate) fn permute_raw<E: Elem>(data: &[E], dims: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<E>) {
    let rank = dims.len();
    let out_dims: Vec<usize> = perm.iter().map(|&p| dims[p]).collect();
    let in_str = strides(dims);
    let out_str = strides(&out_dims);
    let mut out = vec![E::zero(); data.len()];
    let mut idx = vec![0usize; rank];
    for (flat, &v) in data.iter().enumerate() {
        let mut rem = flat;
        for i in 0..rank {
            idx[i] = rem / in_str[i];
            rem %= in_str[i];
        }
        let mut o = 0usize;
        for (i, &p) in perm.iter().enumerate() {
            o += idx[p] * out_str[i];
        }
        out[o] = v;
    }
    (out_dims, out)
}

impl<E: Elem> Tensor<E> {
    /// Same data, new dims (row-major layout unchanged).
    pub fn reshape(&self, dims: &[usize]) -> Result<Tensor<E>> {
        check_dims("reshape", dims)?;
        if dims.iter().product::<usize>() != self.len() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {:?}", self.dims(), dims),
            ));
        }
        Ok(self.view_with_dims(dims.to_vec(), Op::Reshape, vec![self.clone()]))
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Tensor<E>> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::invalid(
                "permute",
                format!("{:?} is not a permutation of 0..{}", perm, rank),
            ));
        }
        let (out_dims, out) = permute_raw(self.data(), self.dims(), perm);
        Ok(Tensor::from_op(out_dims, out, Op::Permute { perm: perm.to_vec() }, vec![self.clone()]))
    }

    pub fn concat(parts: &[Tensor<E>], axis: usize) -> Result<Tensor<E>> {
        if parts.is_empty() {
            return Err(Error::invalid("concat", "no tensors given"));
        }
        let rank = parts[0].rank();
        if axis >= rank {
            return Err(Error::invalid("concat", format!("axis {axis} out of range")));
        }
        let mut out_dims = parts[0].dims().to_vec();
        out_dims[axis] = 0;
        for p in parts {
            if p.rank() != rank {
                return Err(Error::shape("concat", "rank mismatch"));
            }
            for (i, (&a, &b)) in p.dims().iter().zip(parts[0].dims()).enumerate() {
                if i != axis && a != b {
                    return Err(Error::shape(
                        "concat",
                        format!("dims {:?} vs {:?} differ off-axis", p.dims(), parts[0].dims()),
                    ));
                }
            }
            out_dims[axis] += p.dims()[axis];
        }
        let outer: usize = out_dims[..axis].iter().product();
        let inner: usize = out_dims[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(out_dims.iter().product());
        for o in 0..outer {
            for p in parts {
                let la = p.dims()[axis];
                let chunk = la * inner;
                data.extend_from_slice(&p.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        Ok(Tensor::from_op(out_dims, data, Op::Concat { axis }, parts.to_vec()))
    }

    /// Contiguous sub-range `[start, end)` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Tensor<E>> {
        if axis >= self.rank() {
            return Err(Error::invalid("slice", format!("axis {axis} out of range")));
        }
        let la = self.dims()[axis];
        if start >= end || end > la {
            return Err(Error::invalid(
                "slice",
                format!("range {start}..{end} invalid for axis extent {la}"),
            ));
        }
        let mut out_dims = self.dims().to_vec();
        out_dims[axis] = end - start;
        let outer: usize = self.dims()[..axis].iter().product();
        let inner: usize = self.dims()[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(out_dims.iter().product());
        for o in 0..outer {
            let base = (o * la + start) * inner;
            data.extend_from_slice(&self.data()[base..base + (end - start) * inner]);
        }
        Ok(Tensor::from_op(out_dims, data, Op::Slice { axis, start, end }, vec![self.clone()]))
    }
}

pub(crate) fn backward_shape<E: Elem>(
    op: &Op<E>,
    inputs: &[Tensor<E>],
    g: &[E],
) -> Result<Vec<Option<Vec<E>>>> {
    Ok(match op {
        Op::Reshape => vec![Some(g.to_vec())],
        Op::Permute { perm } => {
            let mut inv = vec![0usize; perm.len()];
            for (i, &p) in perm.iter().enumerate() {
                inv[p] = i;
            }
            // output dims of the forward permute
            let out_dims: Vec<usize> = perm.iter().map(|&p| inputs[0].dims()[p]).collect();
            let (_, gx) = permute_raw(g, &out_dims, &inv);
            vec![Some(gx)]
        }
        Op::Concat { axis } => {
            let rank = inputs[0].rank();
            let outer: usize = inputs[0].dims()[..*axis].iter().product();
            let inner: usize = inputs[0].dims()[*axis + 1..].iter().product();
            let total_axis: usize = inputs.iter().map(|p| p.dims()[*axis]).sum();
            let _ = rank;
            let mut grads: Vec<Vec<E>> = inputs.iter().map(|p| Vec::with_capacity(p.len())).collect();
            let mut offset = 0usize;
            let starts: Vec<usize> = inputs
                .iter()
                .map(|p| {
                    let s = offset;
                    offset += p.dims()[*axis];
                    s
                })
                .collect();
            for (pi, p) in inputs.iter().enumerate() {
                let la = p.dims()[*axis];
                for o in 0..outer {
                    let base = (o * total_axis + starts[pi]) * inner;
                    grads[pi].extend_from_slice(&g[base..base + la * inner]);
                }
            }
            grads.into_iter().map(Some).collect()
        }
        Op::Slice { axis, start, end } => {
            let x = &inputs[0];
            let la = x.dims()[*axis];
            let outer: usize = x.dims()[..*axis].iter().product();
            let inner: usize = x.dims()[*axis + 1..].iter().product();
            let mut gx = vec![E::zero(); x.len()];
            let w = end - start;
            for o in 0..outer {
                let src = o * w * inner;
                let dst = (o * la + start) * inner;
                gx[dst..dst + w * inner].copy_from_slice(&g[src..src + w * inner]);
            }
            vec![Some(gx)]
        }
        _ => unreachable!("backward_shape got {}", op.name()),
    })
}

#[cfg(test)]
mod tests {
    use super::super::{backward, Tensor};

    #[test]
    fn permute_roundtrip() {
        let x = Tensor::from_vec(&[2, 3, 4], (0..24).map(|v| v as f32).collect()).unwrap();
        let y = x.permute(&[2, 0, 1]).unwrap();
        assert_eq!(y.dims(), &[4, 2, 3]);
        let z = y.permute(&[1, 2, 0]).unwrap();
        assert_eq!(z.data(), x.data());
    }

    #[test]
    fn concat_slice_inverse() {
        let a = Tensor::from_vec(&[1, 2, 2, 2], (0..8).map(|v| v as f32).collect()).unwrap();
        let b = Tensor::from_vec(&[1, 3, 2, 2], (8..20).map(|v| v as f32).collect()).unwrap();
        let c = Tensor::concat(&[a.clone(), b.clone()], 1).unwrap();
        assert_eq!(c.dims(), &[1, 5, 2, 2]);
        assert_eq!(c.slice(1, 0, 2).unwrap().data(), a.data());
        assert_eq!(c.slice(1, 2, 5).unwrap().data(), b.data());
    }

    #[test]
    fn slice_backward_scatters() {
        let x = Tensor::from_vec(&[4], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap().with_grad();
        let loss = x.slice(0, 1, 3).unwrap().sum_all();
        let grads = backward(&loss).unwrap();
        assert_eq!(grads.get(&x).unwrap().data(), &[0.0, 1.0, 1.0, 0.0]);
    }
}
