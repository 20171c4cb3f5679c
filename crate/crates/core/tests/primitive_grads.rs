//! Central-difference verification of every primitive's backward rule,
//! in 64-bit arithmetic at random smooth points.

use wdmamba_core::tensor::{grad_check, Prng, Tensor};

const TOL: f64 = 1e-4;
const EPS: f64 = 1e-4;

fn rand_tensor(dims: &[usize], rng: &mut Prng, lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = dims.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.uniform(lo, hi)).collect();
    Tensor::from_vec(dims, data).unwrap()
}

/// Smooth points only: keep values away from kinks of relu/abs/clamp.
fn rand_away_from(dims: &[usize], rng: &mut Prng, margin: f64) -> Tensor<f64> {
    let n: usize = dims.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let v = rng.uniform(margin, 1.0);
            if rng.unit() < 0.5 {
                -v
            } else {
                v
            }
        })
        .collect();
    Tensor::from_vec(dims, data).unwrap()
}

macro_rules! check {
    ($name:ident, $x:expr, $f:expr) => {
        #[test]
        fn $name() {
            let mut rng = Prng::new(0x5eed ^ line!() as u64);
            let x = $x(&mut rng);
            let err = grad_check($f, &x, EPS).unwrap();
            assert!(err <= TOL, "{}: max rel err {err}", stringify!($name));
        }
    };
}

check!(grad_relu, |r: &mut Prng| rand_away_from(&[2, 3, 4, 5], r, 0.05), |t| Ok(t
    .relu()
    .sum_all()));
check!(grad_silu, |r: &mut Prng| rand_tensor(&[3, 7], r, -2.0, 2.0), |t| Ok(t.silu().sum_all()));
check!(grad_sigmoid, |r: &mut Prng| rand_tensor(&[10], r, -3.0, 3.0), |t| Ok(t
    .sigmoid()
    .mul(t)
    .unwrap()
    .sum_all()));
check!(grad_softplus, |r: &mut Prng| rand_tensor(&[10], r, -3.0, 3.0), |t| Ok(t
    .softplus()
    .sum_all()));
check!(grad_exp, |r: &mut Prng| rand_tensor(&[6], r, -1.0, 1.0), |t| Ok(t.exp().sum_all()));
check!(grad_abs, |r: &mut Prng| rand_away_from(&[12], r, 0.1), |t| Ok(t.abs().sum_all()));
check!(grad_sqrt, |r: &mut Prng| rand_tensor(&[9], r, 0.5, 2.0), |t| t
    .sqrt()
    .map(|s| s.sum_all()));
check!(grad_scale, |r: &mut Prng| rand_tensor(&[8], r, -1.0, 1.0), |t| Ok(t
    .scale(-1.7)
    .sum_all()));
check!(grad_clamp, |r: &mut Prng| rand_away_from(&[16], r, 0.05), |t| {
    // kinks at ±0.5; inputs live in ±[0.05, 1.0], so some are clipped
    let clamped = t.clamp(-0.48736, 0.51264);
    Ok(clamped.mul(&clamped)?.sum_all())
});
check!(grad_softmax, |r: &mut Prng| rand_tensor(&[2, 5, 1, 3], r, -2.0, 2.0), |t| {
    let w = Tensor::from_vec(&[2, 5, 1, 3], (0..30).map(|i| (i as f64 * 0.77).sin()).collect())?;
    Ok(t.softmax(1)?.mul(&w)?.sum_all())
});
check!(grad_mean_all, |r: &mut Prng| rand_tensor(&[4, 4], r, -1.0, 1.0), |t| Ok(t
    .mean_all()));
check!(grad_global_avg_pool, |r: &mut Prng| rand_tensor(&[2, 3, 4, 4], r, -1.0, 1.0), |t| {
    let w = Tensor::from_vec(&[2, 3, 1, 1], (0..6).map(|i| i as f64 - 2.5).collect())?;
    Ok(t.global_avg_pool()?.mul(&w)?.sum_all())
});
check!(grad_reshape_permute, |r: &mut Prng| rand_tensor(&[2, 3, 4], r, -1.0, 1.0), |t| {
    let y = t.permute(&[2, 0, 1])?.reshape(&[4, 6])?;
    Ok(y.mul(&y)?.sum_all())
});
check!(grad_concat_slice, |r: &mut Prng| rand_tensor(&[1, 4, 2, 2], r, -1.0, 1.0), |t| {
    let c = Tensor::concat(&[t.clone(), t.scale(2.0)], 1)?;
    let s = c.slice(1, 2, 7)?;
    Ok(s.mul(&s)?.sum_all())
});

#[test]
fn grad_binary_ops() {
    let mut rng = Prng::new(99);
    let a0 = rand_tensor(&[2, 3], &mut rng, 0.5, 2.0);
    let b = rand_tensor(&[2, 3], &mut rng, 0.5, 2.0);
    for (name, f) in [
        ("add", 0usize),
        ("sub", 1),
        ("mul", 2),
        ("div", 3),
        ("atan2", 4),
    ] {
        let bb = b.clone();
        let err = grad_check(
            move |t: &Tensor<f64>| {
                let y = match f {
                    0 => t.add(&bb)?,
                    1 => t.sub(&bb)?,
                    2 => t.mul(&bb)?,
                    3 => t.div(&bb)?,
                    _ => t.atan2(&bb)?,
                };
                Ok(y.mul(&y)?.sum_all())
            },
            &a0,
            EPS,
        )
        .unwrap();
        assert!(err <= TOL, "{name}: {err}");
        // and w.r.t. the second operand
        let aa = a0.clone();
        let err2 = grad_check(
            move |t: &Tensor<f64>| {
                let y = match f {
                    0 => aa.add(t)?,
                    1 => aa.sub(t)?,
                    2 => aa.mul(t)?,
                    3 => aa.div(t)?,
                    _ => aa.atan2(t)?,
                };
                Ok(y.mul(&y)?.sum_all())
            },
            &b,
            EPS,
        )
        .unwrap();
        assert!(err2 <= TOL, "{name} rhs: {err2}");
    }
}

#[test]
fn grad_broadcast_mul() {
    let mut rng = Prng::new(7);
    let gate = rand_tensor(&[1, 3, 1, 1], &mut rng, 0.2, 1.0);
    let x = rand_tensor(&[2, 3, 2, 2], &mut rng, -1.0, 1.0);
    let xc = x.clone();
    let err = grad_check(
        move |t: &Tensor<f64>| Ok(xc.mul(t)?.mean_all()),
        &gate,
        EPS,
    )
    .unwrap();
    assert!(err <= TOL, "broadcast gate grad: {err}");
}

#[test]
fn grad_conv2d_all_inputs() {
    let mut rng = Prng::new(31);
    let x = rand_tensor(&[1, 2, 5, 4], &mut rng, -1.0, 1.0);
    let w = rand_tensor(&[4, 2, 3, 3], &mut rng, -0.5, 0.5);
    let b = rand_tensor(&[4], &mut rng, -0.5, 0.5);

    let (wc, bc) = (w.clone(), b.clone());
    let err = grad_check(
        move |t: &Tensor<f64>| {
            let y = t.conv2d(&wc, Some(&bc), (2, 1), (1, 1), 1)?;
            Ok(y.mul(&y)?.sum_all())
        },
        &x,
        EPS,
    )
    .unwrap();
    assert!(err <= TOL, "conv2d d/dx: {err}");

    let (xc, bc) = (x.clone(), b.clone());
    let err = grad_check(
        move |t: &Tensor<f64>| {
            let y = xc.conv2d(t, Some(&bc), (2, 1), (1, 1), 1)?;
            Ok(y.mul(&y)?.sum_all())
        },
        &w,
        EPS,
    )
    .unwrap();
    assert!(err <= TOL, "conv2d d/dw: {err}");

    let (xc, wc) = (x.clone(), w.clone());
    let err = grad_check(
        move |t: &Tensor<f64>| {
            let y = xc.conv2d(&wc, Some(t), (2, 1), (1, 1), 1)?;
            Ok(y.mul(&y)?.sum_all())
        },
        &b,
        EPS,
    )
    .unwrap();
    assert!(err <= TOL, "conv2d d/db: {err}");
}

#[test]
fn grad_conv2d_depthwise_small_input() {
    // the spec's 1x1x3x3 example shape, depthwise-style groups
    let mut rng = Prng::new(32);
    let x = rand_tensor(&[1, 1, 3, 3], &mut rng, -1.0, 1.0);
    let w = rand_tensor(&[1, 1, 2, 2], &mut rng, -1.0, 1.0);
    let wc = w.clone();
    let err = grad_check(
        move |t: &Tensor<f64>| {
            let y = t.conv2d(&wc, None, (1, 1), (0, 0), 1)?;
            Ok(y.mul(&y)?.sum_all())
        },
        &x,
        EPS,
    )
    .unwrap();
    assert!(err <= TOL, "conv2d 1x1x3x3: {err}");
}

#[test]
fn grad_conv2d_grouped() {
    let mut rng = Prng::new(33);
    let x = rand_tensor(&[2, 4, 4, 4], &mut rng, -1.0, 1.0);
    let w = rand_tensor(&[4, 1, 3, 3], &mut rng, -0.5, 0.5);
    let wc = w.clone();
    let err = grad_check(
        move |t: &Tensor<f64>| {
            let y = t.conv2d(&wc, None, (1, 1), (1, 1), 4)?;
            Ok(y.mul(&y)?.sum_all())
        },
        &x,
        EPS,
    )
    .unwrap();
    assert!(err <= TOL, "depthwise conv d/dx: {err}");
    let xc = x.clone();
    let err = grad_check(
        move |t: &Tensor<f64>| {
            let y = xc.conv2d(t, None, (1, 1), (1, 1), 4)?;
            Ok(y.mul(&y)?.sum_all())
        },
        &w,
        EPS,
    )
    .unwrap();
    assert!(err <= TOL, "depthwise conv d/dw: {err}");
}

#[test]
fn grad_conv_transpose2d_all_inputs() {
    let mut rng = Prng::new(34);
    let x = rand_tensor(&[1, 3, 3, 4], &mut rng, -1.0, 1.0);
    let w = rand_tensor(&[3, 2, 2, 2], &mut rng, -0.5, 0.5);
    let b = rand_tensor(&[2], &mut rng, -0.5, 0.5);
    let (wc, bc) = (w.clone(), b.clone());
    let err = grad_check(
        move |t: &Tensor<f64>| {
            let y = t.conv_transpose2d(&wc, Some(&bc), (2, 2), (0, 0), 1)?;
            Ok(y.mul(&y)?.sum_all())
        },
        &x,
        EPS,
    )
    .unwrap();
    assert!(err <= TOL, "convT d/dx: {err}");
    let (xc, bc) = (x.clone(), b.clone());
    let err = grad_check(
        move |t: &Tensor<f64>| {
            let y = xc.conv_transpose2d(t, Some(&bc), (2, 2), (0, 0), 1)?;
            Ok(y.mul(&y)?.sum_all())
        },
        &w,
        EPS,
    )
    .unwrap();
    assert!(err <= TOL, "convT d/dw: {err}");
    let (xc, wc) = (x.clone(), w.clone());
    let err = grad_check(
        move |t: &Tensor<f64>| {
            let y = xc.conv_transpose2d(&wc, Some(t), (2, 2), (0, 0), 1)?;
            Ok(y.mul(&y)?.sum_all())
        },
        &b,
        EPS,
    )
    .unwrap();
    assert!(err <= TOL, "convT d/db: {err}");
}

#[test]
fn grad_linear_all_inputs() {
    let mut rng = Prng::new(35);
    let x = rand_tensor(&[3, 5], &mut rng, -1.0, 1.0);
    let w = rand_tensor(&[4, 5], &mut rng, -0.5, 0.5);
    let b = rand_tensor(&[4], &mut rng, -0.5, 0.5);
    let (wc, bc) = (w.clone(), b.clone());
    let err = grad_check(
        move |t: &Tensor<f64>| {
            let y = t.linear(&wc, Some(&bc))?;
            Ok(y.mul(&y)?.sum_all())
        },
        &x,
        EPS,
    )
    .unwrap();
    assert!(err <= TOL, "linear d/dx: {err}");
    let (xc, bc) = (x.clone(), b.clone());
    let err = grad_check(
        move |t: &Tensor<f64>| {
            let y = xc.linear(t, Some(&bc))?;
            Ok(y.mul(&y)?.sum_all())
        },
        &w,
        EPS,
    )
    .unwrap();
    assert!(err <= TOL, "linear d/dw: {err}");
    let (xc, wc) = (x.clone(), w.clone());
    let err = grad_check(
        move |t: &Tensor<f64>| {
            let y = xc.linear(&wc, Some(t))?;
            Ok(y.mul(&y)?.sum_all())
        },
        &b,
        EPS,
    )
    .unwrap();
    assert!(err <= TOL, "linear d/db: {err}");
}

#[test]
fn grad_layer_norm_all_inputs() {
    let mut rng = Prng::new(36);
    let x = rand_tensor(&[2, 6, 2, 2], &mut rng, -1.0, 1.0);
    let sc = rand_tensor(&[6], &mut rng, 0.5, 1.5);
    let sh = rand_tensor(&[6], &mut rng, -0.5, 0.5);
    let w = rand_tensor(&[2, 6, 2, 2], &mut rng, -1.0, 1.0);
    let (scc, shc, wc) = (sc.clone(), sh.clone(), w.clone());
    let err = grad_check(
        move |t: &Tensor<f64>| Ok(t.layer_norm(&scc, &shc, 1e-6)?.mul(&wc)?.sum_all()),
        &x,
        EPS,
    )
    .unwrap();
    assert!(err <= TOL, "layer_norm d/dx: {err}");
    let (xc, shc, wc) = (x.clone(), sh.clone(), w.clone());
    let err = grad_check(
        move |t: &Tensor<f64>| Ok(xc.layer_norm(t, &shc, 1e-6)?.mul(&wc)?.sum_all()),
        &sc,
        EPS,
    )
    .unwrap();
    assert!(err <= TOL, "layer_norm d/dscale: {err}");
    let (xc, scc, wc) = (x.clone(), sc.clone(), w.clone());
    let err = grad_check(
        move |t: &Tensor<f64>| Ok(xc.layer_norm(&scc, t, 1e-6)?.mul(&wc)?.sum_all()),
        &sh,
        EPS,
    )
    .unwrap();
    assert!(err <= TOL, "layer_norm d/dshift: {err}");
}

#[test]
fn grad_batch_norm_train_and_eval() {
    let mut rng = Prng::new(37);
    let x = rand_tensor(&[2, 3, 3, 2], &mut rng, -1.0, 1.0);
    let sc = rand_tensor(&[3], &mut rng, 0.5, 1.5);
    let sh = rand_tensor(&[3], &mut rng, -0.5, 0.5);
    let rm = rand_tensor(&[3], &mut rng, -0.2, 0.2);
    let rv = rand_tensor(&[3], &mut rng, 0.5, 1.5);
    let w = rand_tensor(&[2, 3, 3, 2], &mut rng, -1.0, 1.0);
    for training in [true, false] {
        let (scc, shc, rmc, rvc, wc) = (sc.clone(), sh.clone(), rm.clone(), rv.clone(), w.clone());
        let err = grad_check(
            move |t: &Tensor<f64>| {
                let (y, _) = t.batch_norm(&scc, &shc, &rmc, &rvc, training, 1e-5)?;
                Ok(y.mul(&wc)?.sum_all())
            },
            &x,
            EPS,
        )
        .unwrap();
        assert!(err <= TOL, "batch_norm training={training} d/dx: {err}");
        let (xc, shc, rmc, rvc, wc) = (x.clone(), sh.clone(), rm.clone(), rv.clone(), w.clone());
        let err = grad_check(
            move |t: &Tensor<f64>| {
                let (y, _) = xc.batch_norm(t, &shc, &rmc, &rvc, training, 1e-5)?;
                Ok(y.mul(&wc)?.sum_all())
            },
            &sc,
            EPS,
        )
        .unwrap();
        assert!(err <= TOL, "batch_norm training={training} d/dscale: {err}");
    }
}

#[test]
fn backward_is_bit_deterministic() {
    let mut rng = Prng::new(101);
    let x = rand_tensor(&[1, 3, 6, 6], &mut rng, -1.0, 1.0);
    let w = rand_tensor(&[4, 3, 3, 3], &mut rng, -0.5, 0.5);
    let run = || {
        let xv = x.detach().with_grad();
        let wv = w.detach().with_grad();
        let y = xv.conv2d(&wv, None, (1, 1), (1, 1), 1).unwrap();
        let loss = y.silu().mul(&y).unwrap().mean_all();
        let g = wdmamba_core::tensor::backward(&loss).unwrap();
        (
            g.get(&xv).unwrap().data().to_vec(),
            g.get(&wv).unwrap().data().to_vec(),
            loss.data()[0],
        )
    };
    let (gx1, gw1, l1) = run();
    let (gx2, gw2, l2) = run();
    assert!(l1.to_bits() == l2.to_bits());
    assert!(gx1.iter().zip(&gx2).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert!(gw1.iter().zip(&gw2).all(|(a, b)| a.to_bits() == b.to_bits()));
}
