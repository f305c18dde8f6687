use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Grads, Tensor};
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Glorot-uniform initialization: `U(-b, b)` with `b = sqrt(6 / (fan_in + fan_out))`.
///
/// For a 2-D `[out, in]` shape `fan_in = in` and `fan_out = out`; a 1-D
/// shape uses its length for both.
pub fn init_xavier(shape: &[usize], rng_seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    xavier_with(shape, &mut rng)
}

pub fn xavier_with(shape: &[usize], rng: &mut impl Rng) -> Result<Tensor> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::Config(format!(
            "xavier initialization needs a nonempty shape, got {shape:?}"
        )));
    }
    let (fan_in, fan_out) = match shape {
        [n] => (*n, *n),
        [out, inp, rest @ ..] => {
            let field: usize = rest.iter().product();
            (inp * field, out * field)
        }
        [] => unreachable!(),
    };
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub value: Tensor,
    first_moment: Tensor,
    second_moment: Tensor,
    step: u64,
}

impl Param {
    fn new(value: Tensor) -> Self {
        let zeros = Tensor::zeros(value.shape());
        Self {
            first_moment: zeros.clone(),
            second_moment: zeros,
            value,
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&Tensor, &Tensor) {
        (&self.first_moment, &self.second_moment)
    }
}

/// Named parameters with their Adam state.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(name.into(), Param::new(value));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    /// Mutable access to a value. Adam state is left untouched.
    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, p)| (k.as_str(), &p.value))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    /// Moves every parameter of `other` into `self`, replacing duplicates.
    pub fn merge(&mut self, other: ParamStore) {
        self.params.extend(other.params);
    }

    /// One Adam update with bias correction for every parameter in `grads`.
    /// Parameters without a gradient are left alone.
    pub fn adam_step(&mut self, grads: &Grads, lr: f64) -> Result<()> {
        for (name, g) in grads {
            let p = self
                .params
                .get(name)
                .ok_or_else(|| Error::UnknownParam(name.clone()))?;
            if p.value.shape() != g.shape() {
                return Err(Error::Shape {
                    name: name.clone(),
                    expected: p.value.shape().to_vec(),
                    actual: g.shape().to_vec(),
                });
            }
            g.ensure_finite(&format!("gradient of `{name}`"))?;
        }
        for (name, g) in grads {
            let p = self.params.get_mut(name).expect("validated above");
            p.step += 1;
            let t = p.step as i32;
            let c1 = 1.0 - ADAM_BETA1.powi(t);
            let c2 = 1.0 - ADAM_BETA2.powi(t);
            let m = p.first_moment.data_mut();
            let v = p.second_moment.data_mut();
            let x = p.value.data_mut();
            for (((xi, mi), vi), gi) in x.iter_mut().zip(m).zip(v).zip(g.data()) {
                *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi;
                *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *xi -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
            p.value.ensure_finite(name)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xavier_bounds() {
        let t = init_xavier(&[1, 1], 3).unwrap();
        assert!(t.data()[0].abs() <= 3f64.sqrt());
        let t = init_xavier(&[100, 300], 3).unwrap();
        let bound = (6.0f64 / 400.0).sqrt();
        assert!(t.data().iter().all(|v| v.abs() <= bound));
        assert!((bound - 0.1225).abs() < 1e-4);
        assert_eq!(init_xavier(&[100, 300], 3).unwrap(), t);
        assert_ne!(init_xavier(&[100, 300], 4).unwrap(), t);
    }

    #[test]
    fn xavier_rejects_zero_dims() {
        assert!(init_xavier(&[0, 3], 1).is_err());
        assert!(init_xavier(&[], 1).is_err());
    }

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("x", Tensor::scalar(v));
        s
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut s = scalar_store(1.5);
        let mut g = Grads::new();
        g.insert("x".into(), Tensor::scalar(0.0));
        s.adam_step(&g, 0.1).unwrap();
        assert_eq!(s.get("x").unwrap().data(), &[1.5]);
        assert_eq!(s.param("x").unwrap().step(), 1);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        for g0 in [3.0, -0.02] {
            let mut s = scalar_store(0.0);
            let mut g = Grads::new();
            g.insert("x".into(), Tensor::scalar(g0));
            s.adam_step(&g, 0.1).unwrap();
            let moved = s.get("x").unwrap().data()[0];
            assert!((moved + 0.1 * f64::signum(g0)).abs() < 1e-6, "{moved}");
        }
    }

    #[test]
    fn adam_is_deterministic() {
        let mut a = scalar_store(0.3);
        let mut b = a.clone();
        let mut g = Grads::new();
        g.insert("x".into(), Tensor::scalar(0.7));
        for _ in 0..3 {
            a.adam_step(&g, 0.05).unwrap();
            b.adam_step(&g, 0.05).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn adam_shape_mismatch_names_param() {
        let mut s = scalar_store(0.0);
        let mut g = Grads::new();
        g.insert("x".into(), Tensor::zeros(&[2, 1]));
        let err = s.adam_step(&g, 0.1).unwrap_err();
        assert!(err.to_string().contains("`x`"));
        let mut g = Grads::new();
        g.insert("y".into(), Tensor::scalar(1.0));
        assert!(matches!(s.adam_step(&g, 0.1), Err(Error::UnknownParam(_))));
    }
}
