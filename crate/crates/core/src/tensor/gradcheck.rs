//! Central-difference gradient verification, run in 64-bit arithmetic.

use rayon::prelude::*;

use crate::error::{Error, Result};

use super::{backward, Tensor};

/// Compare the analytic gradient of `f` at `x` against central differences.
///
/// Returns the maximum over coordinates of
/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&Tensor<f64>) -> Result<Tensor<f64>> + Sync,
{
    if !(1e-5..=1e-2).contains(&eps) {
        return Err(Error::invalid("grad_check", format!("eps {eps} outside [1e-5, 1e-2]")));
    }
    let leaf = x.detach().with_grad();
    let y = f(&leaf)?;
    if !y.is_scalar() {
        return Err(Error::NonScalarLoss(y.dims().to_vec()));
    }
    let grads = backward(&y)?;
    let analytic: Vec<f64> = match grads.get(&leaf) {
        Some(g) => g.data().to_vec(),
        // Closure output does not depend on x at all: analytic gradient is zero.
        None => vec![0.0; x.len()],
    };

    let dims = x.dims().to_vec();
    let base = x.data().to_vec();
    let errs: Vec<f64> = (0..base.len())
        .into_par_iter()
        .map(|i| {
            let eval = |delta: f64| -> Result<f64> {
                let mut d = base.clone();
                d[i] += delta;
                let t = Tensor::from_vec(&dims, d)?;
                f(&t)?.item()
            };
            let hi = eval(eps)?;
            let lo = eval(-eps)?;
            let numeric = (hi - lo) / (2.0 * eps);
            let a = analytic[i];
            Ok((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(errs.into_iter().fold(0.0, f64::max))
}
