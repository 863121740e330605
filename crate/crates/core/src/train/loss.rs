use crate::autodiff::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Symmetric in-batch contrastive loss on unit rows `x` (images) and `y`
/// (texts), both `N × d`: mean cross-entropy of `S = X·Yᵀ/τ` against the
/// diagonal, plus the same for `Sᵀ`.
pub fn contrastive_loss(tape: &mut Tape, x: Var, y: Var, temperature: f64) -> Result<Var> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {temperature}")));
    }
    let (nx, dx) = tape.value(x).dims2("contrastive_loss")?;
    let (ny, dy) = tape.value(y).dims2("contrastive_loss")?;
    if nx != ny || dx != dy {
        return Err(Error::shape("contrastive_loss", format!("[{nx}, {dx}] vs [{ny}, {dy}]")));
    }
    let yt = tape.transpose(y)?;
    let raw = tape.matmul(x, yt)?;
    let sim = if temperature == 1.0 { raw } else { tape.scale(raw, 1.0 / temperature)? };
    let targets: Vec<usize> = (0..nx).collect();
    let image_to_text = tape.softmax_cross_entropy(sim, targets.clone())?;
    let sim_t = tape.transpose(sim)?;
    let text_to_image = tape.softmax_cross_entropy(sim_t, targets)?;
    tape.add(image_to_text, text_to_image)
}

/// Loss value for plain row lists.
pub fn contrastive_loss_value(x: &[Vec<f64>], y: &[Vec<f64>], temperature: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let xv = tape.constant(Tensor::from_rows(x)?);
    let yv = tape.constant(Tensor::from_rows(y)?);
    let loss = contrastive_loss(&mut tape, xv, yv, temperature)?;
    tape.value(loss).item()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check;

    /// Direct enumeration of the formula with explicit sums.
    fn enumerate(x: &[Vec<f64>], y: &[Vec<f64>], tau: f64) -> f64 {
        let n = x.len();
        let s = |i: usize, j: usize| x[i].iter().zip(&y[j]).map(|(a, b)| a * b).sum::<f64>() / tau;
        let mut total = 0.0;
        for i in 0..n {
            let row: f64 = (0..n).map(|j| s(i, j).exp()).sum();
            let col: f64 = (0..n).map(|j| s(j, i).exp()).sum();
            total -= (s(i, i).exp() / row).ln() + (s(i, i).exp() / col).ln();
        }
        total / n as f64
    }

    #[test]
    fn single_pair_is_zero() {
        assert_eq!(contrastive_loss_value(&[vec![0.6, 0.8]], &[vec![0.6, 0.8]], 1.0).unwrap(), 0.0);
    }

    #[test]
    fn orthonormal_pair_of_two() {
        let e = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let got = contrastive_loss_value(&e, &e, 1.0).unwrap();
        let want = -2.0 * (1.0 - (1.0 + std::f64::consts::E).ln());
        assert!((got - want).abs() < 1e-12);
        assert!((got - 0.626523).abs() < 1e-6);
        assert!((got - enumerate(&e, &e, 1.0)).abs() < 1e-12);
    }

    #[test]
    fn matches_enumeration_with_temperature() {
        let x = vec![vec![0.6, 0.8], vec![1.0, 0.0], vec![0.0, -1.0]];
        let y = vec![vec![0.8, 0.6], vec![0.0, 1.0], vec![-0.6, -0.8]];
        for tau in [1.0, 0.5, 0.07] {
            let got = contrastive_loss_value(&x, &y, tau).unwrap();
            assert!((got - enumerate(&x, &y, tau)).abs() < 1e-10, "tau {tau}");
        }
    }

    #[test]
    fn row_mismatch_errors() {
        let x = vec![vec![1.0, 0.0]];
        let y = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!(matches!(contrastive_loss_value(&x, &y, 1.0), Err(Error::Shape { .. })));
        assert!(contrastive_loss_value(&x, &x, 0.0).is_err());
    }

    #[test]
    fn aligned_beats_mismatched() {
        let e: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|j| f64::from(u8::from(i == j))).collect()).collect();
        let mut shifted = e.clone();
        shifted.rotate_left(1);
        assert!(contrastive_loss_value(&e, &e, 1.0).unwrap() < contrastive_loss_value(&e, &shifted, 1.0).unwrap());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::matrix(3, 2, vec![0.3, -0.2, 0.5, 0.1, -0.4, 0.7]).unwrap());
        let y = tape.param(Tensor::matrix(3, 2, vec![0.2, 0.9, -0.6, 0.3, 0.1, 0.1]).unwrap());
        let xn = tape.l2_normalize(x).unwrap();
        let yn = tape.l2_normalize(y).unwrap();
        let loss = contrastive_loss(&mut tape, xn, yn, 0.5).unwrap();
        assert!(finite_diff_check(&tape, loss, 1e-6).unwrap() < 1e-6);
    }
}
