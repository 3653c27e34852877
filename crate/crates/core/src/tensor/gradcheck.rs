//! Finite-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Parameter;

/// Central-difference step size.
pub const FD_STEP: f64 = 1e-5;

/// Compares the analytic gradients stored in `params[i].grad` against
/// central finite differences of `loss_fn`, on at most `max_coords`
/// coordinates sampled with a fixed seed. Returns the maximum relative
/// error `|a - n| / max(1e-6, |a| + |n|)`.
///
/// The caller computes the analytic gradients first; `loss_fn` must be a
/// pure function of the parameter *values*.
pub fn grad_check<F>(params: &mut [Parameter], mut loss_fn: F, max_coords: usize, seed: u64) -> f64
where
    F: FnMut(&[Parameter]) -> f64,
{
    let mut coords: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(p, param)| (0..param.value.len()).map(move |i| (p, i)))
        .collect();
    if coords.len() > max_coords {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for j in 0..max_coords {
            let pick = rng.random_range(j..coords.len());
            coords.swap(j, pick);
        }
        coords.truncate(max_coords);
    }

    let mut max_err = 0.0f64;
    for (p, i) in coords {
        let orig = params[p].value.data()[i];
        let analytic = params[p].grad.data()[i];
        params[p].value.data_mut()[i] = orig + FD_STEP;
        let f_plus = loss_fn(params);
        params[p].value.data_mut()[i] = orig - FD_STEP;
        let f_minus = loss_fn(params);
        params[p].value.data_mut()[i] = orig;
        let numeric = (f_plus - f_minus) / (2.0 * FD_STEP);
        let err = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6);
        max_err = max_err.max(err);
    }
    max_err
}
