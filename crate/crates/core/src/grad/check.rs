use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Grads, ParamStore};
use crate::error::{Error, Result};

/// Compares analytic gradients against central differences on `probes`
/// randomly chosen scalar coordinates and returns the largest relative
/// error, with denominator `max(|analytic|, |numeric|, 1e-8)`.
///
/// `loss` must be deterministic in the store: any sampling it does has to be
/// fixed beforehand.
pub fn finite_difference_check<F>(
    loss: F,
    store: &ParamStore,
    probes: usize,
    step: f64,
    rng_seed: u64,
) -> Result<f64>
where
    F: Fn(&ParamStore) -> Result<(f64, Grads)>,
{
    let (value, grads) = loss(store)?;
    if !value.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    let names: Vec<(String, usize)> = store
        .iter()
        .map(|(name, t)| (name.to_string(), t.len()))
        .collect();
    let total: usize = names.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(Error::Empty("parameter store"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut probe_store = store.clone();
    let mut worst = 0.0f64;
    for _ in 0..probes {
        let mut k = rng.random_range(0..total);
        let (name, idx) = names
            .iter()
            .find_map(|(name, n)| {
                if k < *n {
                    Some((name.as_str(), k))
                } else {
                    k -= n;
                    None
                }
            })
            .expect("index within total");
        let analytic = grads.get(name).map_or(0.0, |g| g.data()[idx]);
        let original = store.get(name)?.data()[idx];

        probe_store.get_mut(name)?.data_mut()[idx] = original + step;
        let (plus, _) = loss(&probe_store)?;
        probe_store.get_mut(name)?.data_mut()[idx] = original - step;
        let (minus, _) = loss(&probe_store)?;
        probe_store.get_mut(name)?.data_mut()[idx] = original;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let numeric = (plus - minus) / (2.0 * step);
        let denom = analytic.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic - numeric).abs() / denom);
    }
    Ok(worst)
}
