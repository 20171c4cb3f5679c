//! Orthonormal single-level 2D Haar transform and its inverse.
//!
//! Both directions are expressed as fixed-kernel depthwise convolutions, so
//! they are differentiable for free and the analysis/synthesis pair is an
//! exact adjoint: per 2×2 block (a b / c d)
//!   cA=(a+b+c+d)/2, cH=(a+b−c−d)/2, cV=(a−b+c−d)/2, cD=(a−b−c+d)/2
//! with the same ½-scaled combination reconstructing the block.

use crate::error::{Error, Result};
use crate::tensor::{Elem, Tensor};

/// The four subbands of one analysis level, each (N, C, H/2, W/2).
pub struct WaveletSubbands<E: Elem = f32> {
    pub ca: Tensor<E>,
    pub ch: Tensor<E>,
    pub cv: Tensor<E>,
    pub cd: Tensor<E>,
}

const HALF: f64 = 0.5;

// Kernel sign patterns over the 2x2 block, row-major (a b / c d).
const SIGNS: [[f64; 4]; 4] = [
    [1.0, 1.0, 1.0, 1.0],    // cA
    [1.0, 1.0, -1.0, -1.0],  // cH: top rows minus bottom rows
    [1.0, -1.0, 1.0, -1.0],  // cV: left cols minus right cols
    [1.0, -1.0, -1.0, 1.0],  // cD
];

fn haar_kernel<E: Elem>(channels: usize, band: usize) -> Result<Tensor<E>> {
    let mut data = Vec::with_capacity(channels * 4);
    for _ in 0..channels {
        for s in SIGNS[band] {
            data.push(E::from_f(s * HALF));
        }
    }
    Tensor::from_vec(&[channels, 1, 2, 2], data)
}

fn even_check(op: &'static str, dims: &[usize]) -> Result<()> {
    if dims.len() != 4 {
        return Err(Error::shape(op, format!("expected rank-4 NCHW input, got {:?}", dims)));
    }
    if dims[2] % 2 != 0 || dims[3] % 2 != 0 {
        return Err(Error::shape(
            op,
            format!("spatial dims must be even, got {}x{}; reflect-pad at the data boundary first", dims[2], dims[3]),
        ));
    }
    Ok(())
}

/// Single-level orthonormal Haar analysis of an (N, C, H, W) tensor.
pub fn dwt2_haar<E: Elem>(x: &Tensor<E>) -> Result<WaveletSubbands<E>> {
    even_check("dwt2_haar", x.dims())?;
    let c = x.dims()[1];
    let conv = |band: usize| -> Result<Tensor<E>> {
        x.conv2d(&haar_kernel(c, band)?, None, (2, 2), (0, 0), c)
    };
    Ok(WaveletSubbands { ca: conv(0)?, ch: conv(1)?, cv: conv(2)?, cd: conv(3)? })
}

/// Exact inverse of [`dwt2_haar`] (the adjoint of the orthonormal analysis).
pub fn iwt2_haar<E: Elem>(s: &WaveletSubbands<E>) -> Result<Tensor<E>> {
    let dims = s.ca.dims().to_vec();
    for (band, name) in [(&s.ch, "cH"), (&s.cv, "cV"), (&s.cd, "cD")] {
        if band.dims() != dims {
            return Err(Error::shape(
                "iwt2_haar",
                format!("{name} shape {:?} does not match cA {:?}", band.dims(), dims),
            ));
        }
    }
    if dims.len() != 4 {
        return Err(Error::shape("iwt2_haar", format!("expected rank-4 subbands, got {:?}", dims)));
    }
    let c = dims[1];
    let deconv = |t: &Tensor<E>, band: usize| -> Result<Tensor<E>> {
        // depthwise transposed conv: weight (C, 1, 2, 2), groups = C
        t.conv_transpose2d(&haar_kernel(c, band)?, None, (2, 2), (0, 0), c)
    };
    deconv(&s.ca, 0)?
        .add(&deconv(&s.ch, 1)?)?
        .add(&deconv(&s.cv, 2)?)?
        .add(&deconv(&s.cd, 3)?)
}

/// Cross-reconstructions of a hazy/clean pair:
/// `lowswap`  takes the clean approximation band with the hazy details,
/// `highswap` takes the hazy approximation band with the clean details.
pub fn swap_lowfreq<E: Elem>(hazy: &Tensor<E>, clean: &Tensor<E>) -> Result<(Tensor<E>, Tensor<E>)> {
    if hazy.dims() != clean.dims() {
        return Err(Error::shape(
            "swap_lowfreq",
            format!("hazy {:?} vs clean {:?}", hazy.dims(), clean.dims()),
        ));
    }
    let h = dwt2_haar(hazy)?;
    let c = dwt2_haar(clean)?;
    let lowswap = iwt2_haar(&WaveletSubbands { ca: c.ca.clone(), ch: h.ch.clone(), cv: h.cv.clone(), cd: h.cd.clone() })?;
    let highswap = iwt2_haar(&WaveletSubbands { ca: h.ca, ch: c.ch, cv: c.cv, cd: c.cd })?;
    Ok((lowswap, highswap))
}
