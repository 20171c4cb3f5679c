//! Convolution, linear, and normalization primitives.
//!
//! Convolutions lower to im2col + matmul. Batch samples are processed in
//! parallel (disjoint outputs); per-sample weight-gradient partials are
//! reduced in batch order so training stays bit-reproducible.

use rayon::prelude::*;

use crate::error::{Error, Result};

use super::graph::Op;
use super::matmul::{mm_nn, mm_nt, mm_tn};
use super::{Elem, Tensor};

#[derive(Clone, Copy)]
struct ConvGeom {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    groups: usize,
    oh: usize,
    ow: usize,
}

fn conv_geometry<E: Elem>(
    op: &'static str,
    x: &Tensor<E>,
    weight: &Tensor<E>,
    bias: Option<&Tensor<E>>,
    stride: (usize, usize),
    padding: (usize, usize),
    groups: usize,
    transposed: bool,
) -> Result<ConvGeom> {
    if x.rank() != 4 || weight.rank() != 4 {
        return Err(Error::shape(op, format!("expected rank-4 input/weight, got {:?} and {:?}", x.dims(), weight.dims())));
    }
    let (n, cin, h, w) = (x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]);
    if groups == 0 || cin % groups != 0 {
        return Err(Error::invalid(op, format!("groups {groups} must divide input channels {cin}")));
    }
    let (sh, sw) = stride;
    let (ph, pw) = padding;
    if sh == 0 || sw == 0 {
        return Err(Error::invalid(op, "stride must be positive"));
    }
    let (cout, kh, kw);
    if transposed {
        // weight layout (Cin, Cout/groups, kh, kw)
        if weight.dims()[0] != cin {
            return Err(Error::shape(op, format!("weight {:?} does not match input channels {cin}", weight.dims())));
        }
        cout = weight.dims()[1] * groups;
        kh = weight.dims()[2];
        kw = weight.dims()[3];
    } else {
        // weight layout (Cout, Cin/groups, kh, kw)
        if weight.dims()[1] != cin / groups {
            return Err(Error::shape(
                op,
                format!("weight {:?} does not match input channels {cin} with groups {groups}", weight.dims()),
            ));
        }
        cout = weight.dims()[0];
        kh = weight.dims()[2];
        kw = weight.dims()[3];
        if cout % groups != 0 {
            return Err(Error::invalid(op, format!("groups {groups} must divide output channels {cout}")));
        }
    }
    if let Some(b) = bias {
        if b.dims() != [cout] {
            return Err(Error::shape(op, format!("bias {:?} does not match output channels {cout}", b.dims())));
        }
    }
    let (oh, ow) = if transposed {
        let oh = (h.max(1) - 1) * sh + kh;
        let ow = (w.max(1) - 1) * sw + kw;
        if oh < 2 * ph || ow < 2 * pw {
            return Err(Error::shape(op, "padding exceeds output extent"));
        }
        (oh - 2 * ph, ow - 2 * pw)
    } else {
        if h + 2 * ph < kh || w + 2 * pw < kw {
            return Err(Error::shape(op, format!("kernel {kh}x{kw} larger than padded input {}x{}", h + 2 * ph, w + 2 * pw)));
        }
        ((h + 2 * ph - kh) / sh + 1, (w + 2 * pw - kw) / sw + 1)
    };
    if oh == 0 || ow == 0 || h == 0 || w == 0 {
        return Err(Error::shape(op, "empty spatial extent"));
    }
    Ok(ConvGeom { n, cin, h, w, cout, kh, kw, sh, sw, ph, pw, groups, oh, ow })
}

/// col[(c*kh*kw + ky*kw + kx) * (oh*ow) + l] = x[c, oy*sh-ph+ky, ox*sw-pw+kx]
fn im2col<E: Elem>(x: &[E], c: usize, g: &ConvGeom, col: &mut [E]) {
    let l = g.oh * g.ow;
    debug_assert_eq!(col.len(), c * g.kh * g.kw * l);
    debug_assert_eq!(x.len(), c * g.h * g.w);
    for ci in 0..c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((ci * g.kh + ky) * g.kw + kx) * l;
                for oy in 0..g.oh {
                    let iy = (oy * g.sh + ky) as isize - g.ph as isize;
                    let out = &mut col[row + oy * g.ow..row + (oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        out.fill(E::zero());
                        continue;
                    }
                    let xrow = &x[(ci * g.h + iy as usize) * g.w..(ci * g.h + iy as usize + 1) * g.w];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = (ox * g.sw + kx) as isize - g.pw as isize;
                        *o = if ix < 0 || ix >= g.w as isize { E::zero() } else { xrow[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Scatter-add inverse of [`im2col`]: col entries accumulate back into x.
fn col2im<E: Elem>(col: &[E], c: usize, g: &ConvGeom, x: &mut [E]) {
    let l = g.oh * g.ow;
    debug_assert_eq!(col.len(), c * g.kh * g.kw * l);
    debug_assert_eq!(x.len(), c * g.h * g.w);
    x.fill(E::zero());
    for ci in 0..c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((ci * g.kh + ky) * g.kw + kx) * l;
                for oy in 0..g.oh {
                    let iy = (oy * g.sh + ky) as isize - g.ph as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let xrow = &mut x[(ci * g.h + iy as usize) * g.w..(ci * g.h + iy as usize + 1) * g.w];
                    let crow = &col[row + oy * g.ow..row + (oy + 1) * g.ow];
                    for (ox, &v) in crow.iter().enumerate() {
                        let ix = (ox * g.sw + kx) as isize - g.pw as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            xrow[ix as usize] = xrow[ix as usize] + v;
                        }
                    }
                }
            }
        }
    }
}

impl<E: Elem> Tensor<E> {
    /// 2D convolution, weight (Cout, Cin/groups, kh, kw).
    pub fn conv2d(
        &self,
        weight: &Tensor<E>,
        bias: Option<&Tensor<E>>,
        stride: (usize, usize),
        padding: (usize, usize),
        groups: usize,
    ) -> Result<Tensor<E>> {
        let g = conv_geometry("conv2d", self, weight, bias, stride, padding, groups, false)?;
        let l = g.oh * g.ow;
        let cing = g.cin / g.groups;
        let cog = g.cout / g.groups;
        let ckk = cing * g.kh * g.kw;
        let x = self.data();
        let wd = weight.data();
        let per_sample = |n: usize| -> Vec<E> {
            let mut out = vec![E::zero(); g.cout * l];
            let mut col = vec![E::zero(); ckk * l];
            for gi in 0..g.groups {
                let xg = &x[(n * g.cin + gi * cing) * g.h * g.w..(n * g.cin + (gi + 1) * cing) * g.h * g.w];
                im2col(xg, cing, &g, &mut col);
                let wg = &wd[gi * cog * ckk..(gi + 1) * cog * ckk];
                mm_nn(wg, &col, cog, ckk, l, &mut out[gi * cog * l..(gi + 1) * cog * l]);
            }
            if let Some(b) = bias {
                for co in 0..g.cout {
                    let bv = b.data()[co];
                    for v in out[co * l..(co + 1) * l].iter_mut() {
                        *v = *v + bv;
                    }
                }
            }
            out
        };
        let data: Vec<E> = if g.n > 1 {
            (0..g.n).into_par_iter().map(per_sample).flatten_iter().collect()
        } else {
            per_sample(0)
        };
        let mut inputs = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            inputs.push(b.clone());
        }
        Ok(Tensor::from_op(
            vec![g.n, g.cout, g.oh, g.ow],
            data,
            Op::Conv2d { stride, padding, groups },
            inputs,
        ))
    }

    /// Transposed 2D convolution, weight (Cin, Cout/groups, kh, kw).
    pub fn conv_transpose2d(
        &self,
        weight: &Tensor<E>,
        bias: Option<&Tensor<E>>,
        stride: (usize, usize),
        padding: (usize, usize),
        groups: usize,
    ) -> Result<Tensor<E>> {
        let g = conv_geometry("conv_transpose2d", self, weight, bias, stride, padding, groups, true)?;
        // Geometry of the *equivalent forward conv* mapping output->input:
        // im2col/col2im below run on the output grid with (oh, ow) as the
        // "image" and (h, w) as the "conv output" positions.
        let fwd = ConvGeom { h: g.oh, w: g.ow, oh: g.h, ow: g.w, ..g };
        let l = g.h * g.w;
        let cing = g.cin / g.groups;
        let cog = g.cout / g.groups;
        let cokk = cog * g.kh * g.kw;
        let x = self.data();
        let wd = weight.data();
        let per_sample = |n: usize| -> Vec<E> {
            let mut out = vec![E::zero(); g.cout * g.oh * g.ow];
            let mut cols = vec![E::zero(); cokk * l];
            for gi in 0..g.groups {
                let xg = &x[(n * g.cin + gi * cing) * g.h * g.w..(n * g.cin + (gi + 1) * cing) * g.h * g.w];
                let wg = &wd[gi * cing * cokk..(gi + 1) * cing * cokk];
                // cols = wgᵀ (cokk × cing) · xg (cing × l)
                mm_tn(wg, xg, cokk, cing, l, &mut cols);
                col2im(&cols, cog, &fwd, &mut out[gi * cog * g.oh * g.ow..(gi + 1) * cog * g.oh * g.ow]);
            }
            if let Some(b) = bias {
                let ohw = g.oh * g.ow;
                for co in 0..g.cout {
                    let bv = b.data()[co];
                    for v in out[co * ohw..(co + 1) * ohw].iter_mut() {
                        *v = *v + bv;
                    }
                }
            }
            out
        };
        let data: Vec<E> = if g.n > 1 {
            (0..g.n).into_par_iter().map(per_sample).flatten_iter().collect()
        } else {
            per_sample(0)
        };
        let mut inputs = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            inputs.push(b.clone());
        }
        Ok(Tensor::from_op(
            vec![g.n, g.cout, g.oh, g.ow],
            data,
            Op::ConvTranspose2d { stride, padding, groups },
            inputs,
        ))
    }

    /// Affine map on the last axis: out = x · wᵀ + b, weight (OUT, IN).
    pub fn linear(&self, weight: &Tensor<E>, bias: Option<&Tensor<E>>) -> Result<Tensor<E>> {
        if weight.rank() != 2 {
            return Err(Error::shape("linear", format!("weight must be rank 2, got {:?}", weight.dims())));
        }
        let (out_f, in_f) = (weight.dims()[0], weight.dims()[1]);
        let last = *self.dims().last().unwrap();
        if last != in_f {
            return Err(Error::shape("linear", format!("input {:?} incompatible with weight {:?}", self.dims(), weight.dims())));
        }
        if let Some(b) = bias {
            if b.dims() != [out_f] {
                return Err(Error::shape("linear", format!("bias {:?} does not match {out_f} outputs", b.dims())));
            }
        }
        let m = self.len() / in_f;
        let mut data = vec![E::zero(); m * out_f];
        mm_nt(self.data(), weight.data(), m, in_f, out_f, &mut data);
        if let Some(b) = bias {
            for row in data.chunks_mut(out_f) {
                for (v, &bv) in row.iter_mut().zip(b.data()) {
                    *v = *v + bv;
                }
            }
        }
        let mut out_dims = self.dims().to_vec();
        *out_dims.last_mut().unwrap() = out_f;
        let mut inputs = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            inputs.push(b.clone());
        }
        Ok(Tensor::from_op(out_dims, data, Op::Linear, inputs))
    }

    /// Per-token layer norm over the channel axis (axis 1) with learnable
    /// per-channel scale and shift.
    pub fn layer_norm(&self, scale: &Tensor<E>, shift: &Tensor<E>, eps: E) -> Result<Tensor<E>> {
        if self.rank() < 2 {
            return Err(Error::shape("layer_norm", format!("need rank >= 2, got {:?}", self.dims())));
        }
        let c = self.dims()[1];
        if scale.dims() != [c] || shift.dims() != [c] {
            return Err(Error::shape(
                "layer_norm",
                format!("scale {:?} / shift {:?} do not match {c} channels", scale.dims(), shift.dims()),
            ));
        }
        let n = self.dims()[0];
        let spatial: usize = self.dims()[2..].iter().product();
        let x = self.data();
        let inv_c = E::one() / E::from_f(c as f64);
        let mut data = vec![E::zero(); x.len()];
        let mut means = vec![E::zero(); n * spatial];
        let mut rstds = vec![E::zero(); n * spatial];
        for ni in 0..n {
            for s in 0..spatial {
                let at = |ci: usize| (ni * c + ci) * spatial + s;
                let mut m = E::zero();
                for ci in 0..c {
                    m = m + x[at(ci)];
                }
                m = m * inv_c;
                let mut var = E::zero();
                for ci in 0..c {
                    let d = x[at(ci)] - m;
                    var = var + d * d;
                }
                var = var * inv_c;
                let rstd = E::one() / (var + eps).sqrt();
                means[ni * spatial + s] = m;
                rstds[ni * spatial + s] = rstd;
                for ci in 0..c {
                    data[at(ci)] = (x[at(ci)] - m) * rstd * scale.data()[ci] + shift.data()[ci];
                }
            }
        }
        Ok(Tensor::from_op(
            self.dims().to_vec(),
            data,
            Op::LayerNorm { eps, mean: means, rstd: rstds },
            vec![self.clone(), scale.clone(), shift.clone()],
        ))
    }

    /// Batch norm over (N, spatial) per channel. In training mode normalizes
    /// with batch statistics and returns `(batch_mean, batch_var_unbiased)`
    /// so the caller can maintain running estimates; in eval mode uses the
    /// provided running statistics.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &self,
        scale: &Tensor<E>,
        shift: &Tensor<E>,
        running_mean: &Tensor<E>,
        running_var: &Tensor<E>,
        training: bool,
        eps: E,
    ) -> Result<(Tensor<E>, Option<(Vec<E>, Vec<E>)>)> {
        if self.rank() != 4 {
            return Err(Error::shape("batch_norm", format!("need rank 4, got {:?}", self.dims())));
        }
        let (n, c) = (self.dims()[0], self.dims()[1]);
        let spatial: usize = self.dims()[2..].iter().product();
        for (t, name) in [(scale, "scale"), (shift, "shift"), (running_mean, "running_mean"), (running_var, "running_var")] {
            if t.dims() != [c] {
                return Err(Error::shape("batch_norm", format!("{name} {:?} does not match {c} channels", t.dims())));
            }
        }
        let m = n * spatial;
        let x = self.data();
        let (mean, var): (Vec<E>, Vec<E>) = if training {
            if m == 0 {
                return Err(Error::invalid("batch_norm", "empty batch in training mode"));
            }
            let inv_m = E::one() / E::from_f(m as f64);
            let mut mean = vec![E::zero(); c];
            let mut var = vec![E::zero(); c];
            for ci in 0..c {
                let mut s = E::zero();
                for ni in 0..n {
                    let base = (ni * c + ci) * spatial;
                    for v in &x[base..base + spatial] {
                        s = s + *v;
                    }
                }
                let mu = s * inv_m;
                let mut vv = E::zero();
                for ni in 0..n {
                    let base = (ni * c + ci) * spatial;
                    for v in &x[base..base + spatial] {
                        let d = *v - mu;
                        vv = vv + d * d;
                    }
                }
                mean[ci] = mu;
                var[ci] = vv * inv_m;
            }
            (mean, var)
        } else {
            (running_mean.data().to_vec(), running_var.data().to_vec())
        };
        let rstd: Vec<E> = var.iter().map(|&v| E::one() / (v + eps).sqrt()).collect();
        let mut data = vec![E::zero(); x.len()];
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * spatial;
                let (mu, rs) = (mean[ci], rstd[ci]);
                let (ga, be) = (scale.data()[ci], shift.data()[ci]);
                for i in 0..spatial {
                    data[base + i] = (x[base + i] - mu) * rs * ga + be;
                }
            }
        }
        let stats = if training {
            // Unbiased variance for the running estimate.
            let corr = if m > 1 { E::from_f(m as f64 / (m as f64 - 1.0)) } else { E::one() };
            Some((mean.clone(), var.iter().map(|&v| v * corr).collect()))
        } else {
            None
        };
        let out = Tensor::from_op(
            self.dims().to_vec(),
            data,
            Op::BatchNorm { training, mean, rstd },
            vec![self.clone(), scale.clone(), shift.clone()],
        );
        Ok((out, stats))
    }
}

pub(crate) fn backward_nn<E: Elem>(
    op: &Op<E>,
    inputs: &[Tensor<E>],
    g: &[E],
) -> Result<Vec<Option<Vec<E>>>> {
    match op {
        Op::Conv2d { stride, padding, groups } => {
            let (x, w) = (&inputs[0], &inputs[1]);
            let geom = conv_geometry("conv2d", x, w, None, *stride, *padding, *groups, false)?;
            let l = geom.oh * geom.ow;
            let cing = geom.cin / geom.groups;
            let cog = geom.cout / geom.groups;
            let ckk = cing * geom.kh * geom.kw;
            let xd = x.data();
            let wd = w.data();
            let per_sample = |n: usize| -> (Vec<E>, Vec<E>) {
                let mut dx = vec![E::zero(); geom.cin * geom.h * geom.w];
                let mut dw = vec![E::zero(); w.len()];
                let mut col = vec![E::zero(); ckk * l];
                let mut tmp = vec![E::zero(); ckk * l];
                for gi in 0..geom.groups {
                    let gy = &g[(n * geom.cout + gi * cog) * l..(n * geom.cout + (gi + 1) * cog) * l];
                    let wg = &wd[gi * cog * ckk..(gi + 1) * cog * ckk];
                    // dx: col-space grad then scatter
                    mm_tn(wg, gy, ckk, cog, l, &mut tmp);
                    col2im(&tmp, cing, &geom, &mut dx[gi * cing * geom.h * geom.w..(gi + 1) * cing * geom.h * geom.w]);
                    // dw = gy · colᵀ
                    let xg = &xd[(n * geom.cin + gi * cing) * geom.h * geom.w..(n * geom.cin + (gi + 1) * cing) * geom.h * geom.w];
                    im2col(xg, cing, &geom, &mut col);
                    mm_nt(gy, &col, cog, l, ckk, &mut dw[gi * cog * ckk..(gi + 1) * cog * ckk]);
                }
                (dx, dw)
            };
            let parts: Vec<(Vec<E>, Vec<E>)> = if geom.n > 1 {
                (0..geom.n).into_par_iter().map(per_sample).collect()
            } else {
                vec![per_sample(0)]
            };
            let mut dx = Vec::with_capacity(x.len());
            let mut dw = vec![E::zero(); w.len()];
            for (dxn, dwn) in parts {
                dx.extend_from_slice(&dxn);
                for (a, v) in dw.iter_mut().zip(&dwn) {
                    *a = *a + *v;
                }
            }
            let mut grads = vec![Some(dx), Some(dw)];
            if inputs.len() == 3 {
                grads.push(Some(bias_grad(g, geom.n, geom.cout, l)));
            }
            Ok(grads)
        }
        Op::ConvTranspose2d { stride, padding, groups } => {
            let (x, w) = (&inputs[0], &inputs[1]);
            let geom = conv_geometry("conv_transpose2d", x, w, None, *stride, *padding, *groups, true)?;
            let fwd = ConvGeom { h: geom.oh, w: geom.ow, oh: geom.h, ow: geom.w, ..geom };
            let l = geom.h * geom.w;
            let ohw = geom.oh * geom.ow;
            let cing = geom.cin / geom.groups;
            let cog = geom.cout / geom.groups;
            let cokk = cog * geom.kh * geom.kw;
            let xd = x.data();
            let wd = w.data();
            let per_sample = |n: usize| -> (Vec<E>, Vec<E>) {
                let mut dx = vec![E::zero(); geom.cin * l];
                let mut dw = vec![E::zero(); w.len()];
                let mut col = vec![E::zero(); cokk * l];
                for gi in 0..geom.groups {
                    let gy = &g[(n * geom.cout + gi * cog) * ohw..(n * geom.cout + (gi + 1) * cog) * ohw];
                    // col view of the output gradient on the input grid
                    im2col(gy, cog, &fwd, &mut col);
                    let wg = &wd[gi * cing * cokk..(gi + 1) * cing * cokk];
                    mm_nn(wg, &col, cing, cokk, l, &mut dx[gi * cing * l..(gi + 1) * cing * l]);
                    let xg = &xd[(n * geom.cin + gi * cing) * l..(n * geom.cin + (gi + 1) * cing) * l];
                    mm_nt(xg, &col, cing, l, cokk, &mut dw[gi * cing * cokk..(gi + 1) * cing * cokk]);
                }
                (dx, dw)
            };
            let parts: Vec<(Vec<E>, Vec<E>)> = if geom.n > 1 {
                (0..geom.n).into_par_iter().map(per_sample).collect()
            } else {
                vec![per_sample(0)]
            };
            let mut dx = Vec::with_capacity(x.len());
            let mut dw = vec![E::zero(); w.len()];
            for (dxn, dwn) in parts {
                dx.extend_from_slice(&dxn);
                for (a, v) in dw.iter_mut().zip(&dwn) {
                    *a = *a + *v;
                }
            }
            let mut grads = vec![Some(dx), Some(dw)];
            if inputs.len() == 3 {
                grads.push(Some(bias_grad(g, geom.n, geom.cout, ohw)));
            }
            Ok(grads)
        }
        Op::Linear => {
            let (x, w) = (&inputs[0], &inputs[1]);
            let (out_f, in_f) = (w.dims()[0], w.dims()[1]);
            let m = x.len() / in_f;
            let mut dx = vec![E::zero(); x.len()];
            mm_nn(g, w.data(), m, out_f, in_f, &mut dx);
            let mut dw = vec![E::zero(); w.len()];
            mm_tn(g, x.data(), out_f, m, in_f, &mut dw);
            let mut grads = vec![Some(dx), Some(dw)];
            if inputs.len() == 3 {
                let mut db = vec![E::zero(); out_f];
                for row in g.chunks(out_f) {
                    for (a, &v) in db.iter_mut().zip(row) {
                        *a = *a + v;
                    }
                }
                grads.push(Some(db));
            }
            Ok(grads)
        }
        Op::LayerNorm { eps: _, mean, rstd } => {
            let (x, scale) = (&inputs[0], &inputs[1]);
            let c = x.dims()[1];
            let n = x.dims()[0];
            let spatial: usize = x.dims()[2..].iter().product();
            let inv_c = E::one() / E::from_f(c as f64);
            let xd = x.data();
            let mut dx = vec![E::zero(); x.len()];
            let mut dscale = vec![E::zero(); c];
            let mut dshift = vec![E::zero(); c];
            for ni in 0..n {
                for s in 0..spatial {
                    let at = |ci: usize| (ni * c + ci) * spatial + s;
                    let (mu, rs) = (mean[ni * spatial + s], rstd[ni * spatial + s]);
                    let mut m1 = E::zero();
                    let mut m2 = E::zero();
                    for ci in 0..c {
                        let xh = (xd[at(ci)] - mu) * rs;
                        let h = g[at(ci)] * scale.data()[ci];
                        m1 = m1 + h;
                        m2 = m2 + h * xh;
                        dscale[ci] = dscale[ci] + g[at(ci)] * xh;
                        dshift[ci] = dshift[ci] + g[at(ci)];
                    }
                    m1 = m1 * inv_c;
                    m2 = m2 * inv_c;
                    for ci in 0..c {
                        let xh = (xd[at(ci)] - mu) * rs;
                        let h = g[at(ci)] * scale.data()[ci];
                        dx[at(ci)] = rs * (h - m1 - xh * m2);
                    }
                }
            }
            Ok(vec![Some(dx), Some(dscale), Some(dshift)])
        }
        Op::BatchNorm { training, mean, rstd } => {
            let (x, scale) = (&inputs[0], &inputs[1]);
            let (n, c) = (x.dims()[0], x.dims()[1]);
            let spatial: usize = x.dims()[2..].iter().product();
            let m = n * spatial;
            let inv_m = E::one() / E::from_f(m as f64);
            let xd = x.data();
            let mut dx = vec![E::zero(); x.len()];
            let mut dscale = vec![E::zero(); c];
            let mut dshift = vec![E::zero(); c];
            for ci in 0..c {
                let (mu, rs) = (mean[ci], rstd[ci]);
                let ga = scale.data()[ci];
                let mut sum_h = E::zero();
                let mut sum_hx = E::zero();
                for ni in 0..n {
                    let base = (ni * c + ci) * spatial;
                    for i in 0..spatial {
                        let xh = (xd[base + i] - mu) * rs;
                        let gv = g[base + i];
                        sum_h = sum_h + gv;
                        sum_hx = sum_hx + gv * xh;
                        dscale[ci] = dscale[ci] + gv * xh;
                        dshift[ci] = dshift[ci] + gv;
                    }
                }
                for ni in 0..n {
                    let base = (ni * c + ci) * spatial;
                    for i in 0..spatial {
                        let xh = (xd[base + i] - mu) * rs;
                        dx[base + i] = if *training {
                            ga * rs * (g[base + i] - sum_h * inv_m - xh * sum_hx * inv_m)
                        } else {
                            ga * rs * g[base + i]
                        };
                    }
                }
            }
            Ok(vec![Some(dx), Some(dscale), Some(dshift)])
        }
        _ => unreachable!("backward_nn got {}", op.name()),
    }
}

fn bias_grad<E: Elem>(g: &[E], n: usize, cout: usize, l: usize) -> Vec<E> {
    let mut db = vec![E::zero(); cout];
    for ni in 0..n {
        for co in 0..cout {
            let base = (ni * cout + co) * l;
            let mut s = E::zero();
            for v in &g[base..base + l] {
                s = s + *v;
            }
            db[co] = db[co] + s;
        }
    }
    db
}
