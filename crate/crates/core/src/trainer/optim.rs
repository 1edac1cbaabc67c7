use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::NetworkParams;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamHyper {
    pub fn validate(&self) -> Result<()> {
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::domain("AdamHyper", format!("{name} = {b} not in (0, 1)")));
            }
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::domain("AdamHyper", format!("eps = {}", self.eps)));
        }
        Ok(())
    }
}

/// Moment estimates for one network, in parameter order.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &NetworkParams) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|(_, p)| Tensor::zeros(p.shape())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One Adam update of every parameter in `params`. `grads` follows parameter
/// order. Nothing is modified when any gradient is non-finite.
pub fn adam_step(
    params: &mut NetworkParams,
    grads: &[Vec<f64>],
    state: &mut AdamState,
    lr: f64,
    hp: &AdamHyper,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::shape("adam_step", &[params.len()], &[grads.len()]));
    }
    for ((name, p), g) in params.iter().zip(grads) {
        if g.len() != p.numel() {
            return Err(Error::shape("adam_step", p.shape(), &[g.len()]));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(format!("{}.{name}", params.name)));
        }
    }
    state.t += 1;
    let c1 = 1.0 - hp.beta1.powi(state.t as i32);
    let c2 = 1.0 - hp.beta2.powi(state.t as i32);
    let names: Vec<String> = params.iter().map(|(n, _)| n.to_string()).collect();
    for (i, name) in names.iter().enumerate() {
        let p = params.get(name)?;
        let shape = p.shape().to_vec();
        let mut theta = p.to_vec();
        let mut m = state.m[i].to_vec();
        let mut v = state.v[i].to_vec();
        for (j, &g) in grads[i].iter().enumerate() {
            m[j] = hp.beta1 * m[j] + (1.0 - hp.beta1) * g;
            v[j] = hp.beta2 * v[j] + (1.0 - hp.beta2) * g * g;
            let mh = m[j] / c1;
            let vh = v[j] / c2;
            theta[j] -= lr * mh / (vh.sqrt() + hp.eps);
        }
        params.set(name, Tensor::new(theta, &shape)?)?;
        state.m[i] = Tensor::new(m, &shape)?;
        state.v[i] = Tensor::new(v, &shape)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> NetworkParams {
        let mut p = NetworkParams::new("n");
        p.insert("w", Tensor::from_slice(&[value])).unwrap();
        p
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = single(0.3);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &[vec![0.0]], &mut s, 0.1, &AdamHyper::default()).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[0.3]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = single(0.0);
        let mut s = AdamState::new(&p);
        let hp = AdamHyper::default();
        adam_step(&mut p, &[vec![1.0]], &mut s, 0.1, &hp).unwrap();
        // m̂ = v̂ = 1 at t = 1
        let expected = -0.1 / (1.0 + hp.eps);
        assert!((p.get("w").unwrap().item() - expected).abs() < 1e-7);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = single(1.0);
        let mut s = AdamState::new(&p);
        let err = adam_step(&mut p, &[vec![f64::NAN]], &mut s, 0.1, &AdamHyper::default()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "n.w"), "{err}");
        assert_eq!(s.t, 0);
        assert_eq!(p.get("w").unwrap().data(), &[1.0]);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut p = single(0.5);
            let mut s = AdamState::new(&p);
            for k in 0..20 {
                let g = (k as f64 * 0.7).sin();
                adam_step(&mut p, &[vec![g]], &mut s, 0.01, &AdamHyper::default()).unwrap();
            }
            p
        };
        assert!(run().bit_eq(&run()));
    }
}
