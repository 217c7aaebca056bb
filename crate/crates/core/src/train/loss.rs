use crate::error::{Error, Result};
use crate::model::LossMode;
use crate::tensor::{Scalar, Tape, Var};

/// Prediction loss, reduced by the mean over every element. `L1L2` adds the
/// mean absolute error to the mean squared error.
pub fn loss<T: Scalar>(tape: &Tape<T>, pred: Var, target: Var, mode: LossMode) -> Result<Var> {
    let (ps, ts) = (tape.shape(pred), tape.shape(target));
    if ps != ts {
        return Err(Error::shape("loss", &ps, &ts));
    }
    let d = tape.sub(pred, target)?;
    let l2 = tape.mean(tape.square(d)?)?;
    match mode {
        LossMode::L2 => Ok(l2),
        LossMode::L1L2 => tape.add(tape.mean(tape.abs(d)?)?, l2),
    }
}

/// Same reduction on plain slices, accumulated in order.
pub fn loss_value(pred: &[f64], target: &[f64], mode: LossMode) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::shape("loss", &[pred.len()], &[target.len()]));
    }
    let n = pred.len() as f64;
    let (mut sq, mut ab) = (0.0, 0.0);
    for (p, t) in pred.iter().zip(target) {
        let d = p - t;
        sq += d * d;
        ab += d.abs();
    }
    Ok(match mode {
        LossMode::L2 => sq / n,
        LossMode::L1L2 => ab / n + sq / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn constant_offset() {
        let tape = Tape::<f64>::new();
        let p = tape.constant(Tensor::full(&[2, 3], 0.75));
        let t = tape.constant(Tensor::full(&[2, 3], 0.25));
        let l2 = tape.value(loss(&tape, p, t, LossMode::L2).unwrap()).item();
        let l12 = tape.value(loss(&tape, p, t, LossMode::L1L2).unwrap()).item();
        assert!((l2 - 0.25).abs() < 1e-15);
        assert!((l12 - 0.75).abs() < 1e-15);
        assert_eq!(loss_value(&[0.75; 6], &[0.25; 6], LossMode::L1L2).unwrap(), 0.75);
    }

    #[test]
    fn identical_inputs_give_zero() {
        let tape = Tape::<f64>::new();
        let p = tape.constant(Tensor::from_fn(&[4], |i| i as f64 * 0.1));
        for mode in [LossMode::L2, LossMode::L1L2] {
            assert_eq!(tape.value(loss(&tape, p, p, mode).unwrap()).item(), 0.0);
        }
        let q = tape.constant(Tensor::zeros(&[5]));
        assert!(loss(&tape, p, q, LossMode::L2).is_err());
    }
}
