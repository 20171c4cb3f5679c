//! 2D discrete Fourier transform, inverse, and amplitude/phase algebra.
//!
//! Convention: unnormalized forward transform, 1/(H·W) on the inverse. The
//! transforms are registered as differentiable graph ops with adjoint-FFT
//! backward rules; amplitude/phase use the ordinary primitives (sqrt, atan2)
//! so the whole frequency path is trainable.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::tensor::{CustomOp, Elem, Tensor};

/// Full complex spectrum of a real (N, C, H, W) tensor.
pub struct Spectrum<E: Elem = f32> {
    pub real: Tensor<E>,
    pub imag: Tensor<E>,
}

/// What to do with the imaginary residue of an inverse transform.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Residue {
    /// Error when max|imag| > 1e-3 · max|real| (inverse of a spectrum that
    /// should have been Hermitian). Discards the residue otherwise.
    Strict,
    /// Keep the real part unconditionally (spectrum was deliberately
    /// manipulated, e.g. inside the frequency enhancement module).
    Lenient,
}

fn transpose_c<E: Elem>(src: &[Complex<E>], dst: &mut [Complex<E>], rows: usize, cols: usize) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

/// In-place 2D FFT over `n_planes` contiguous (h·w) planes. Unnormalized in
/// both directions; callers apply 1/(h·w) where needed.
fn fft2_batch<E: Elem>(planes: &mut [Complex<E>], h: usize, w: usize, inverse: bool) {
    use rayon::prelude::*;
    let mut planner = FftPlanner::<E>::new();
    let row_fft = if inverse { planner.plan_fft_inverse(w) } else { planner.plan_fft_forward(w) };
    let col_fft = if inverse { planner.plan_fft_inverse(h) } else { planner.plan_fft_forward(h) };
    let work = |plane: &mut [Complex<E>]| {
        for row in plane.chunks_mut(w) {
            row_fft.process(row);
        }
        let mut t = vec![Complex::new(E::zero(), E::zero()); h * w];
        transpose_c(plane, &mut t, h, w);
        for col in t.chunks_mut(h) {
            col_fft.process(col);
        }
        transpose_c(&t, plane, w, h);
    };
    if planes.len() / (h * w) > 1 {
        planes.par_chunks_mut(h * w).for_each(work);
    } else {
        work(planes);
    }
}

fn dims4<E: Elem>(op: &'static str, t: &Tensor<E>) -> Result<[usize; 4]> {
    if t.rank() != 4 {
        return Err(Error::shape(op, format!("expected rank-4 NCHW, got {:?}", t.dims())));
    }
    let d = t.dims();
    Ok([d[0], d[1], d[2], d[3]])
}

struct Dft2Op;

impl<E: Elem> CustomOp<E> for Dft2Op {
    fn name(&self) -> &'static str {
        "dft2"
    }

    fn backward(&self, inputs: &[Tensor<E>], _output: &Tensor<E>, g: &[E]) -> Result<Vec<Option<Vec<E>>>> {
        // dX = Re(unnormalized inverse transform of (dRe + j·dIm)).
        let [n, c, h, w] = dims4("dft2", &inputs[0])?;
        let hw = h * w;
        let mut buf = vec![Complex::new(E::zero(), E::zero()); n * c * hw];
        for ni in 0..n {
            for ci in 0..c {
                let re = (ni * 2 * c + ci) * hw;
                let im = (ni * 2 * c + c + ci) * hw;
                let dst = (ni * c + ci) * hw;
                for i in 0..hw {
                    buf[dst + i] = Complex::new(g[re + i], g[im + i]);
                }
            }
        }
        fft2_batch(&mut buf, h, w, true);
        Ok(vec![Some(buf.iter().map(|z| z.re).collect())])
    }
}

/// Unnormalized forward DFT of each channel plane:
/// F(u,v) = Σ x(h,w)·e^{−j2π(hu/H + wv/W)}.
pub fn dft2<E: Elem>(x: &Tensor<E>) -> Result<Spectrum<E>> {
    let [n, c, h, w] = dims4("dft2", x)?;
    let hw = h * w;
    if hw == 0 {
        return Err(Error::invalid("dft2", "empty spatial extent"));
    }
    let xd = x.data();
    let mut buf: Vec<Complex<E>> = xd.iter().map(|&v| Complex::new(v, E::zero())).collect();
    fft2_batch(&mut buf, h, w, false);
    // pack (N, 2C, H, W): real channels first, then imaginary
    let mut data = vec![E::zero(); n * 2 * c * hw];
    for ni in 0..n {
        for ci in 0..c {
            let src = (ni * c + ci) * hw;
            let re = (ni * 2 * c + ci) * hw;
            let im = (ni * 2 * c + c + ci) * hw;
            for i in 0..hw {
                data[re + i] = buf[src + i].re;
                data[im + i] = buf[src + i].im;
            }
        }
    }
    let packed = Tensor::from_op(
        vec![n, 2 * c, h, w],
        data,
        crate::tensor::Op::Custom(Arc::new(Dft2Op)),
        vec![x.clone()],
    );
    Ok(Spectrum { real: packed.slice(1, 0, c)?, imag: packed.slice(1, c, 2 * c)? })
}

struct Idft2Op;

impl<E: Elem> CustomOp<E> for Idft2Op {
    fn name(&self) -> &'static str {
        "idft2"
    }

    fn backward(&self, inputs: &[Tensor<E>], _output: &Tensor<E>, g: &[E]) -> Result<Vec<Option<Vec<E>>>> {
        // (dRe, dIm) = (1/HW) · forward transform of the output gradient.
        let [n, c, h, w] = dims4("idft2", &inputs[0])?;
        let hw = h * w;
        let inv = E::one() / E::from_f(hw as f64);
        let mut buf: Vec<Complex<E>> = g.iter().map(|&v| Complex::new(v, E::zero())).collect();
        fft2_batch(&mut buf, h, w, false);
        let mut dre = vec![E::zero(); n * c * hw];
        let mut dim = vec![E::zero(); n * c * hw];
        for (i, z) in buf.iter().enumerate() {
            dre[i] = z.re * inv;
            dim[i] = z.im * inv;
        }
        Ok(vec![Some(dre), Some(dim)])
    }
}

/// Inverse DFT with 1/(H·W) normalization; returns the real part after the
/// residue policy is applied.
pub fn idft2<E: Elem>(s: &Spectrum<E>, mode: Residue) -> Result<Tensor<E>> {
    let [n, c, h, w] = dims4("idft2", &s.real)?;
    if s.imag.dims() != s.real.dims() {
        return Err(Error::shape(
            "idft2",
            format!("real {:?} vs imag {:?}", s.real.dims(), s.imag.dims()),
        ));
    }
    let hw = h * w;
    let inv = E::one() / E::from_f(hw as f64);
    let mut buf: Vec<Complex<E>> = s
        .real
        .data()
        .iter()
        .zip(s.imag.data())
        .map(|(&re, &im)| Complex::new(re, im))
        .collect();
    fft2_batch(&mut buf, h, w, true);
    let mut max_re = E::zero();
    let mut max_im = E::zero();
    let mut data = vec![E::zero(); n * c * hw];
    for (i, z) in buf.iter().enumerate() {
        let re = z.re * inv;
        data[i] = re;
        if re.abs() > max_re {
            max_re = re.abs();
        }
        let im = z.im.abs() * inv;
        if im > max_im {
            max_im = im;
        }
    }
    if mode == Residue::Strict && max_im > E::from_f(1e-3) * max_re {
        return Err(Error::invalid(
            "idft2",
            format!("imaginary residue {max_im} exceeds 1e-3 × max real {max_re}; spectrum is not Hermitian"),
        ));
    }
    Ok(Tensor::from_op(
        vec![n, c, h, w],
        data,
        crate::tensor::Op::Custom(Arc::new(Idft2Op)),
        vec![s.real.clone(), s.imag.clone()],
    ))
}

/// Amplitude √(re²+im²) and quadrant-correct phase atan2(im, re).
/// Zero amplitude yields phase 0.
pub fn amp_phase<E: Elem>(s: &Spectrum<E>) -> Result<(Tensor<E>, Tensor<E>)> {
    if s.real.dims() != s.imag.dims() {
        return Err(Error::shape(
            "amp_phase",
            format!("real {:?} vs imag {:?}", s.real.dims(), s.imag.dims()),
        ));
    }
    let amp = s.real.mul(&s.real)?.add(&s.imag.mul(&s.imag)?)?.sqrt()?;
    let phase = s.imag.atan2(&s.real)?;
    Ok((amp, phase))
}

struct RecombineOp;

impl<E: Elem> CustomOp<E> for RecombineOp {
    fn name(&self) -> &'static str {
        "recombine"
    }

    fn backward(&self, inputs: &[Tensor<E>], _output: &Tensor<E>, g: &[E]) -> Result<Vec<Option<Vec<E>>>> {
        let (amp, phase) = (&inputs[0], &inputs[1]);
        let len = amp.len();
        let mut da = vec![E::zero(); len];
        let mut dp = vec![E::zero(); len];
        let [n, c, h, w] = dims4("recombine", amp)?;
        let hw = h * w;
        let _ = w;
        for ni in 0..n {
            for ci in 0..c {
                let idx = (ni * c + ci) * hw;
                let gre = (ni * 2 * c + ci) * hw;
                let gim = (ni * 2 * c + c + ci) * hw;
                for i in 0..hw {
                    let p = phase.data()[idx + i];
                    let (sin, cos) = (p.sin(), p.cos());
                    da[idx + i] = g[gre + i] * cos + g[gim + i] * sin;
                    dp[idx + i] = amp.data()[idx + i] * (-g[gre + i] * sin + g[gim + i] * cos);
                }
            }
        }
        Ok(vec![Some(da), Some(dp)])
    }
}

/// Polar to Cartesian: real = amplitude·cos(phase), imag = amplitude·sin(phase).
pub fn recombine<E: Elem>(amplitude: &Tensor<E>, phase: &Tensor<E>) -> Result<Spectrum<E>> {
    let [n, c, h, w] = dims4("recombine", amplitude)?;
    if phase.dims() != amplitude.dims() {
        return Err(Error::shape(
            "recombine",
            format!("amplitude {:?} vs phase {:?}", amplitude.dims(), phase.dims()),
        ));
    }
    if amplitude.data().iter().any(|v| *v < E::zero()) {
        return Err(Error::invalid("recombine", "amplitude must be nonnegative"));
    }
    let hw = h * w;
    let mut data = vec![E::zero(); n * 2 * c * hw];
    for ni in 0..n {
        for ci in 0..c {
            let src = (ni * c + ci) * hw;
            let re = (ni * 2 * c + ci) * hw;
            let im = (ni * 2 * c + c + ci) * hw;
            for i in 0..hw {
                let a = amplitude.data()[src + i];
                let p = phase.data()[src + i];
                data[re + i] = a * p.cos();
                data[im + i] = a * p.sin();
            }
        }
    }
    let packed = Tensor::from_op(
        vec![n, 2 * c, h, w],
        data,
        crate::tensor::Op::Custom(Arc::new(RecombineOp)),
        vec![amplitude.clone(), phase.clone()],
    );
    Ok(Spectrum { real: packed.slice(1, 0, c)?, imag: packed.slice(1, c, 2 * c)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, Prng};

    /// Direct O((HW)²) definition of the forward transform, used as the
    /// independent oracle for the FFT path.
    pub(crate) fn naive_dft2(x: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
        let mut re = vec![0.0; h * w];
        let mut im = vec![0.0; h * w];
        for u in 0..h {
            for v in 0..w {
                let (mut sr, mut si) = (0.0, 0.0);
                for hh in 0..h {
                    for ww in 0..w {
                        let ang = -2.0 * std::f64::consts::PI
                            * (hh as f64 * u as f64 / h as f64 + ww as f64 * v as f64 / w as f64);
                        sr += x[hh * w + ww] * ang.cos();
                        si += x[hh * w + ww] * ang.sin();
                    }
                }
                re[u * w + v] = sr;
                im[u * w + v] = si;
            }
        }
        (re, im)
    }

    fn rand_image(dims: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = Prng::new(seed);
        let n: usize = dims.iter().product();
        Tensor::from_vec(dims, (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
    }

    #[test]
    fn constant_image_is_dc_only() {
        let c = 0.37f64;
        let (h, w) = (8, 8);
        let x = Tensor::full(&[1, 1, h, w], c).unwrap();
        let s = dft2(&x).unwrap();
        assert!((s.real.data()[0] - (h * w) as f64 * c).abs() < 1e-4);
        for (i, (&re, &im)) in s.real.data().iter().zip(s.imag.data()).enumerate() {
            if i > 0 {
                assert!(re.abs() < 1e-4 && im.abs() < 1e-4, "bin {i}: {re},{im}");
            }
        }
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let mut data = vec![0.0f64; 36];
        data[0] = 1.0;
        let x = Tensor::from_vec(&[1, 1, 6, 6], data).unwrap();
        let s = dft2(&x).unwrap();
        assert!(s.real.data().iter().all(|&v| (v - 1.0).abs() < 1e-6));
        assert!(s.imag.data().iter().all(|&v| v.abs() < 1e-6));
    }

    #[test]
    fn fft_matches_naive_oracle_pow2_and_other() {
        for (h, w, seed) in [(8usize, 8usize, 1u64), (6, 10, 2), (5, 7, 3)] {
            let x = rand_image(&[1, 1, h, w], seed);
            let s = dft2(&x).unwrap();
            let (re, im) = naive_dft2(x.data(), h, w);
            for i in 0..h * w {
                assert!((s.real.data()[i] - re[i]).abs() < 1e-8, "{h}x{w} re[{i}]");
                assert!((s.imag.data()[i] - im[i]).abs() < 1e-8, "{h}x{w} im[{i}]");
            }
        }
    }

    #[test]
    fn roundtrip_identity() {
        let x = rand_image(&[2, 3, 8, 8], 5);
        let y = idft2(&dft2(&x).unwrap(), Residue::Strict).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() / a.abs().max(1.0) < 1e-4);
        }
    }

    #[test]
    fn hermitian_symmetry_of_real_input() {
        let (h, w) = (8, 8);
        let x = rand_image(&[1, 1, h, w], 17);
        let s = dft2(&x).unwrap();
        for u in 0..h {
            for v in 0..w {
                let (mu, mv) = ((h - u) % h, (w - v) % w);
                let re = s.real.data()[u * w + v];
                let re2 = s.real.data()[mu * w + mv];
                let im = s.imag.data()[u * w + v];
                let im2 = s.imag.data()[mu * w + mv];
                assert!((re - re2).abs() < 1e-4);
                assert!((im + im2).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn parseval() {
        let x = rand_image(&[1, 2, 8, 8], 23);
        let s = dft2(&x).unwrap();
        let spatial: f64 = x.data().iter().map(|v| v * v).sum();
        let freq: f64 = s
            .real
            .data()
            .iter()
            .zip(s.imag.data())
            .map(|(re, im)| re * re + im * im)
            .sum::<f64>()
            / 64.0;
        assert!((spatial - freq).abs() / spatial < 1e-3);
    }

    #[test]
    fn amp_phase_example_values() {
        let re = Tensor::from_vec(&[1, 1, 1, 2], vec![3.0f64, 1.0]).unwrap();
        let im = Tensor::from_vec(&[1, 1, 1, 2], vec![4.0f64, 0.0]).unwrap();
        let (a, p) = amp_phase(&Spectrum { real: re, imag: im }).unwrap();
        assert!((a.data()[0] - 5.0).abs() < 1e-6);
        assert!((p.data()[0] - 0.9272952).abs() < 1e-6);
        assert!((a.data()[1] - 1.0).abs() < 1e-12);
        assert_eq!(p.data()[1], 0.0);
    }

    #[test]
    fn recombine_inverts_amp_phase() {
        let x = rand_image(&[1, 2, 4, 6], 29);
        let s = dft2(&x).unwrap();
        let (a, p) = amp_phase(&s).unwrap();
        let s2 = recombine(&a, &p).unwrap();
        for (u, v) in s.real.data().iter().zip(s2.real.data()) {
            assert!((u - v).abs() < 1e-4 * u.abs().max(1.0));
        }
        for (u, v) in s.imag.data().iter().zip(s2.imag.data()) {
            assert!((u - v).abs() < 1e-4 * u.abs().max(1.0));
        }
        // unit circle: amplitude 1, phase π/2 → (0, 1)
        let one = Tensor::full(&[1, 1, 1, 1], 1.0f64).unwrap();
        let hp = Tensor::full(&[1, 1, 1, 1], std::f64::consts::FRAC_PI_2).unwrap();
        let s3 = recombine(&one, &hp).unwrap();
        assert!(s3.real.data()[0].abs() < 1e-12);
        assert!((s3.imag.data()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn negative_amplitude_rejected() {
        let a = Tensor::from_vec(&[1, 1, 1, 1], vec![-0.5f64]).unwrap();
        let p = Tensor::zeros(&[1, 1, 1, 1]).unwrap();
        assert!(recombine(&a, &p).is_err());
    }

    #[test]
    fn strict_residue_catches_broken_spectrum() {
        // a spectrum that is definitely not Hermitian: lone nonzero imag bin
        let re = Tensor::zeros(&[1, 1, 4, 4]).unwrap();
        let mut im_data = vec![0.0f64; 16];
        im_data[1] = 1.0;
        let im = Tensor::from_vec(&[1, 1, 4, 4], im_data).unwrap();
        let s = Spectrum { real: re, imag: im };
        assert!(idft2(&s, Residue::Strict).is_err());
        assert!(idft2(&s, Residue::Lenient).is_ok());
    }

    #[test]
    fn zero_spectrum_zero_image_and_dc_inverse() {
        let z = Spectrum {
            real: Tensor::<f64>::zeros(&[1, 1, 4, 4]).unwrap(),
            imag: Tensor::<f64>::zeros(&[1, 1, 4, 4]).unwrap(),
        };
        let y = idft2(&z, Residue::Strict).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));

        let c = 0.8f64;
        let mut re = vec![0.0f64; 16];
        re[0] = 16.0 * c;
        let s = Spectrum {
            real: Tensor::from_vec(&[1, 1, 4, 4], re).unwrap(),
            imag: Tensor::zeros(&[1, 1, 4, 4]).unwrap(),
        };
        let y = idft2(&s, Residue::Strict).unwrap();
        assert!(y.data().iter().all(|&v| (v - c).abs() < 1e-12));
    }

    #[test]
    fn gradients_flow_through_the_frequency_path() {
        let x = rand_image(&[1, 1, 4, 4], 31);
        let err = grad_check(
            |t: &Tensor<f64>| {
                let s = dft2(t)?;
                let (a, p) = amp_phase(&s)?;
                let s2 = recombine(&a, &p)?;
                let y = idft2(&s2, Residue::Lenient)?;
                Ok(y.mul(&y)?.sum_all())
            },
            &x,
            1e-4,
        )
        .unwrap();
        assert!(err <= 1e-4, "frequency path grad err {err}");

        // pure transform pair as well
        let err = grad_check(
            |t: &Tensor<f64>| {
                let s = dft2(t)?;
                let w = Tensor::from_vec(&[1, 1, 4, 4], (0..16).map(|i| (i as f64 * 0.3).cos()).collect())?;
                Ok(s.real.mul(&w)?.sum_all().add(&s.imag.mul(&w)?.sum_all())?)
            },
            &x,
            1e-4,
        )
        .unwrap();
        assert!(err <= 1e-4, "dft2 grad err {err}");
    }
}
