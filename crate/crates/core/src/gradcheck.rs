//! Central-difference gradient verification.
//!
//! `grad_check` rebuilds a scalar-valued computation from raw parameter
//! values, compares the tape's reverse-mode gradients against
//! `(f(θ+εe) − f(θ−εe)) / 2ε` elementwise, and reports the worst relative
//! error. Parameters not passed in are simply excluded from the check, so
//! frozen weights with absent gradients are fine.

use crate::tensor::{Result, Tensor, TensorError};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Builder contract: given one value vector per checked parameter, record
/// the computation on a fresh tape and return the scalar loss plus the
/// leaf tensor of each checked parameter (same order as the inputs).
pub trait LossBuilder {
    fn build(&self, params: &[Vec<f64>]) -> Result<(Tensor, Vec<Tensor>)>;
}

impl<F> LossBuilder for F
where
    F: Fn(&[Vec<f64>]) -> Result<(Tensor, Vec<Tensor>)>,
{
    fn build(&self, params: &[Vec<f64>]) -> Result<(Tensor, Vec<Tensor>)> {
        self(params)
    }
}

fn loss_value(builder: &impl LossBuilder, params: &[Vec<f64>]) -> Result<f64> {
    let (loss, _) = builder.build(params)?;
    if loss.len() != 1 {
        return Err(TensorError::Contract(
            "grad_check requires a scalar loss".into(),
        ));
    }
    Ok(loss.item())
}

/// Maximum relative error between reverse-mode and central-difference
/// gradients over every element of every checked parameter.
pub fn grad_check(builder: &impl LossBuilder, params: &[Vec<f64>], eps: f64) -> Result<f64> {
    // determinism guard: two fresh evaluations must agree bitwise
    let probe_a = loss_value(builder, params)?;
    let probe_b = loss_value(builder, params)?;
    if probe_a.to_bits() != probe_b.to_bits() {
        return Err(TensorError::NonDeterministic(format!(
            "forward passes differ: {probe_a} vs {probe_b}"
        )));
    }

    let (loss, leaves) = builder.build(params)?;
    if leaves.len() != params.len() {
        return Err(TensorError::Contract(format!(
            "builder returned {} leaves for {} parameters",
            leaves.len(),
            params.len()
        )));
    }
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .zip(params)
        .map(|(leaf, p)| leaf.grad().unwrap_or_else(|| vec![0.0; p.len()]))
        .collect();

    let mut worst = 0.0_f64;
    let mut work: Vec<Vec<f64>> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        for ei in 0..p.len() {
            let orig = work[pi][ei];
            work[pi][ei] = orig + eps;
            let up = loss_value(builder, &work)?;
            work[pi][ei] = orig - eps;
            let down = loss_value(builder, &work)?;
            work[pi][ei] = orig;
            let fd = (up - down) / (2.0 * eps);
            let a = analytic[pi][ei];
            let denom = a.abs().max(fd.abs()).max(1e-8);
            worst = worst.max((a - fd).abs() / denom);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Reduction, Tape};

    #[test]
    fn linear_function_is_exact() {
        let builder = |params: &[Vec<f64>]| {
            let tape = Tape::new();
            let w = tape.tensor(params[0].clone(), &[3], true)?;
            let c = tape.tensor(vec![2.0, -1.0, 0.5], &[3], false)?;
            let loss = w.mul(&c)?.sum_all()?;
            Ok((loss, vec![w]))
        };
        let err = grad_check(&builder, &[vec![1.0, 2.0, 3.0]], DEFAULT_EPS).unwrap();
        assert!(err < 1e-9, "linear gradient error {err}");
    }

    #[test]
    fn softmax_cross_entropy_stack() {
        let builder = |params: &[Vec<f64>]| {
            let tape = Tape::new();
            let x = tape.tensor(params[0].clone(), &[2, 4], true)?;
            let w = tape.tensor(params[1].clone(), &[4, 4], true)?;
            let logits = x.matmul(&w)?;
            let loss = logits.cross_entropy(&[1, 3], Reduction::Sum)?;
            Ok((loss, vec![x, w]))
        };
        let x: Vec<f64> = (0..8).map(|i| (i as f64 * 0.37).sin()).collect();
        let w: Vec<f64> = (0..16).map(|i| (i as f64 * 0.71).cos() * 0.5).collect();
        let err = grad_check(&builder, &[x, w], DEFAULT_EPS).unwrap();
        assert!(err < 1e-4, "stack gradient error {err}");
    }

    #[test]
    fn frozen_parameter_excluded_is_fine() {
        // the frozen weight is NOT in the check set; its FD gradient would
        // be nonzero but nothing compares it
        let builder = |params: &[Vec<f64>]| {
            let tape = Tape::new();
            let x = tape.tensor(params[0].clone(), &[2], true)?;
            let frozen = tape.tensor(vec![3.0, -2.0], &[2], false)?;
            let loss = x.mul(&frozen)?.sum_all()?;
            Ok((loss, vec![x]))
        };
        let err = grad_check(&builder, &[vec![0.5, 1.5]], DEFAULT_EPS).unwrap();
        assert!(err < 1e-9);
    }

    #[test]
    fn detects_nondeterminism() {
        use std::cell::Cell;
        let counter = Cell::new(0.0_f64);
        let builder = move |params: &[Vec<f64>]| {
            counter.set(counter.get() + 1.0);
            let tape = Tape::new();
            let x = tape.tensor(params[0].clone(), &[1], true)?;
            let drift = tape.tensor(vec![counter.get()], &[1], false)?;
            let loss = x.mul(&drift)?.sum_all()?;
            Ok((loss, vec![x]))
        };
        assert!(matches!(
            grad_check(&builder, &[vec![1.0]], DEFAULT_EPS),
            Err(TensorError::NonDeterministic(_))
        ));
    }
}
