use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of comparing tape gradients against central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// max over probed components of |analytic - numeric| / max(1, |analytic|, |numeric|)
    pub max_rel_error: f64,
    /// (input index, flat element index) of the worst component
    pub worst: (usize, usize),
    pub probes: usize,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Checks the gradient of `f` at `x`. Non-scalar outputs are reduced to a
/// scalar by a fixed pseudo-random weighting so every output component
/// contributes.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&Tape<f64>, Var) -> Result<Var>,
{
    grad_check_inputs(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), eps, None)
}

/// Multi-input variant. With `max_probes`, at most that many components of
/// each input are probed (chosen by a fixed-seed sampler).
pub fn grad_check_inputs<F>(
    f: F,
    inputs: &[Tensor<f64>],
    eps: f64,
    max_probes: Option<usize>,
) -> Result<GradCheckReport>
where
    F: Fn(&Tape<f64>, &[Var]) -> Result<Var>,
{
    let run = |values: &[Tensor<f64>], with_grad: bool| -> Result<(f64, Option<Vec<Tensor<f64>>>)> {
        let tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.leaf(v.clone(), with_grad)).collect();
        let out = f(&tape, &vars)?;
        let loss = scalarize(&tape, out)?;
        let value = tape.value(loss).item();
        if !with_grad {
            return Ok((value, None));
        }
        if !tape.requires_grad(loss) {
            let zeros = values.iter().map(|v| Tensor::zeros(v.shape())).collect();
            return Ok((value, Some(zeros)));
        }
        let mut grads = tape.backward(loss)?;
        let per_input = vars
            .iter()
            .zip(values)
            .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        Ok((value, Some(per_input)))
    };

    let (first, _) = run(inputs, false)?;
    let (second, _) = run(inputs, false)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic);
    }
    let (_, analytic) = run(inputs, true)?;
    let analytic = analytic.expect("gradients requested");

    let mut sampler = ChaCha8Rng::seed_from_u64(0x6772_6164);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        probes: 0,
    };
    let mut probe_inputs = inputs.to_vec();
    for (which, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let indices: Vec<usize> = match max_probes {
            Some(k) if k < n => {
                let mut v = sample(&mut sampler, n, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        for idx in indices {
            let orig = input.data()[idx];
            probe_inputs[which].data_mut()[idx] = orig + eps;
            let (plus, _) = run(&probe_inputs, false)?;
            probe_inputs[which].data_mut()[idx] = orig - eps;
            let (minus, _) = run(&probe_inputs, false)?;
            probe_inputs[which].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[which].data()[idx];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            report.probes += 1;
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
                report.worst = (which, idx);
            }
        }
    }
    Ok(report)
}

/// Reduces `out` to a scalar with fixed pseudo-random weights.
pub(crate) fn scalarize(tape: &Tape<f64>, out: Var) -> Result<Var> {
    let shape = tape.shape(out);
    if shape.iter().product::<usize>() == 1 {
        return tape.sum(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x7765_6967);
    let weights = Tensor::from_fn(&shape, |_| rng.random_range(-1.5..1.5));
    let w = tape.constant(weights);
    let prod = tape.mul(out, w)?;
    tape.sum(prod)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_function_has_zero_error() {
        let x = Tensor::from_fn(&[4], |i| i as f64);
        let report = grad_check(|t, _| Ok(t.constant(Tensor::scalar(3.0))), &x, 1e-5).unwrap();
        assert_eq!(report.max_rel_error, 0.0);
    }

    #[test]
    fn nondeterministic_function_is_rejected() {
        use std::cell::Cell;
        let calls = Cell::new(0.0);
        let x = Tensor::from_fn(&[2], |i| i as f64);
        let err = grad_check(
            |t, v| {
                calls.set(calls.get() + 1.0);
                let s = t.sum(v)?;
                t.add_scalar(s, calls.get())
            },
            &x,
            1e-5,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonDeterministic));
    }

    #[test]
    fn detects_corrupted_backward() {
        let x = Tensor::from_fn(&[5], |i| i as f64 * 0.3 - 0.6);
        let ok = grad_check(|t, v| t.sigmoid(v), &x, 1e-5).unwrap();
        assert!(ok.passed(1e-6));
        let bad = grad_check(
            |t, v| {
                t.corrupt_backward(Some("sigmoid"));
                t.sigmoid(v)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(!bad.passed(1e-3));
    }
}
