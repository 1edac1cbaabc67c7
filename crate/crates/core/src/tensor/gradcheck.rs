use super::{Tape, Tensor};
use crate::error::Result;

/// Max over every coordinate of `|analytic − numeric| / max(1, |numeric|)`,
/// with the numeric derivative from central differences of step `eps`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let all: Vec<usize> = (0..x.numel()).collect();
    grad_check_at(f, x, eps, &all)
}

/// [`grad_check`] restricted to the listed flat coordinates.
pub fn grad_check_at<F>(f: F, x: &Tensor, eps: f64, coords: &[usize]) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let tape = Tape::new();
    let leaf = tape.leaf(x);
    let loss = f(&leaf)?;
    let analytic = tape.backward(&loss)?.get_or_zero(&leaf);

    let mut worst = 0.0f64;
    let mut probe = x.to_vec();
    for &i in coords {
        let orig = probe[i];
        probe[i] = orig + eps;
        let plus = f(&Tensor::new(probe.clone(), x.shape())?)?.item();
        probe[i] = orig - eps;
        let minus = f(&Tensor::new(probe.clone(), x.shape())?)?.item();
        probe[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let err = (analytic[i] - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}
