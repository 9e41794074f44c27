use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{NumericsError, ParamTape};

const STEP: f64 = 1e-5;

/// Compares the gradients already accumulated on `params` against central
/// finite differences of `loss_fn` at `probe_count` randomly chosen scalars
/// (all of them when `probe_count` covers the tape). Returns the largest
/// `|g_a - g_fd| / max(1, |g_a|, |g_fd|)`.
pub fn grad_check<F>(mut loss_fn: F, params: &mut ParamTape, probe_count: usize, seed: u64) -> Result<f64, NumericsError>
where
    F: FnMut(&ParamTape) -> f64,
{
    let total = params.scalar_count();
    let probes: Vec<usize> = if probe_count >= total {
        (0..total).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = index::sample(&mut rng, total, probe_count).into_vec();
        picked.sort_unstable();
        picked
    };
    let base = loss_fn(params);
    if !base.is_finite() {
        return Err(NumericsError::NonFinite("loss".into()));
    }
    let mut worst: f64 = 0.0;
    for flat in probes {
        let original = params.scalar(flat);
        params.set_scalar(flat, original + STEP);
        let up = loss_fn(params);
        params.set_scalar(flat, original - STEP);
        let down = loss_fn(params);
        params.set_scalar(flat, original);
        if !up.is_finite() || !down.is_finite() {
            return Err(NumericsError::NonFinite("perturbed loss".into()));
        }
        let numeric = (up - down) / (2.0 * STEP);
        let analytic = params.grad_scalar(flat);
        let err = (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs());
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;

    fn sum_sq(t: &ParamTape) -> f64 {
        t.named_values().flat_map(|(_, m)| m.as_slice().iter()).map(|v| v * v).sum()
    }

    #[test]
    fn quadratic_is_exact() {
        let mut t = ParamTape::new();
        let id = t.register("a", Matrix::from_rows(&[[0.3, -1.2], [2.5, 0.01]]));
        let grad = t.value(id).map(|v| 2.0 * v);
        t.accumulate(id, &grad);
        assert!(grad_check(sum_sq, &mut t, 100, 1).unwrap() <= 1e-7);
    }

    #[test]
    fn constant_loss() {
        let mut t = ParamTape::new();
        t.register("a", Matrix::row_vector(&[1.0, 2.0]));
        assert_eq!(grad_check(|_| 4.0, &mut t, 2, 0).unwrap(), 0.0);
    }

    #[test]
    fn wrong_gradient_detected_and_nan_rejected() {
        let mut t = ParamTape::new();
        t.register("a", Matrix::row_vector(&[1.0, 2.0, 3.0]));
        assert!(grad_check(sum_sq, &mut t, 1, 7).unwrap() > 0.5);
        assert!(grad_check(|_| f64::NAN, &mut t, 3, 0).is_err());
    }
}
