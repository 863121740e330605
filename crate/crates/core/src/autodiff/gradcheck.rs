use super::tape::{Tape, Var};
use crate::{Error, Result};

/// Compare reverse-mode gradients against central finite differences.
///
/// Every element of every `requires_grad` leaf is perturbed by `±epsilon`
/// and the tape is replayed. Returns the maximum over elements of
/// `|analytic − numeric| / (|analytic| + |numeric| + 1e-12)`; a tape with
/// no differentiable leaves returns 0.
pub fn finite_diff_check(tape: &Tape, loss: Var, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must lie in (0, 1e-2], got {epsilon}"
        )));
    }
    let grads = tape.backward(loss)?;
    let mut worst: f64 = 0.0;
    for leaf in tape.grad_leaves() {
        let base = tape.value(leaf).clone();
        let analytic = grads.get(leaf).expect("backward covers every grad leaf");
        for i in 0..base.numel() {
            let plus = perturbed(&base, i, epsilon)?;
            let minus = perturbed(&base, i, -epsilon)?;
            let f_plus = tape.evaluate(loss, &[(leaf, plus)])?.item()?;
            let f_minus = tape.evaluate(loss, &[(leaf, minus)])?.item()?;
            let numeric = (f_plus - f_minus) / (2.0 * epsilon);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-12);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

fn perturbed(base: &super::Tensor, index: usize, delta: f64) -> Result<super::Tensor> {
    let mut data = base.data().to_vec();
    data[index] += delta;
    super::Tensor::new(base.shape().to_vec(), data)
}
