//! Balanced accuracy, quadratic weighted kappa and repetition statistics.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

fn check_labels(truth: &[usize], preds: &[usize], k: usize) -> Result<()> {
    if truth.len() != preds.len() {
        return Err(Error::InvalidArgument(format!(
            "{} labels vs {} predictions",
            truth.len(),
            preds.len()
        )));
    }
    if let Some(&bad) = truth.iter().chain(preds).find(|&&l| l >= k) {
        return Err(Error::InvalidArgument(format!("label {bad} outside 0..{k}")));
    }
    Ok(())
}

/// Mean per-class recall. Every class must occur in `truth`.
pub fn balanced_accuracy(truth: &[usize], preds: &[usize], k: usize) -> Result<f64> {
    check_labels(truth, preds, k)?;
    let mut total = vec![0usize; k];
    let mut correct = vec![0usize; k];
    for (&t, &p) in truth.iter().zip(preds) {
        total[t] += 1;
        correct[t] += usize::from(t == p);
    }
    if let Some(missing) = total.iter().position(|&n| n == 0) {
        return Err(Error::InvalidArgument(format!("class {missing} absent from truth")));
    }
    let recall_sum: f64 = correct.iter().zip(&total).map(|(&c, &n)| c as f64 / n as f64).sum();
    Ok(recall_sum / k as f64)
}

/// Cohen's kappa with weights `(i-j)²/(K-1)²`.
///
/// Computed in integers until one final division: with row/column marginals
/// `r`, `c` and `n` items, `κ = 1 - n·Σw·O / Σw·r·c` (the weight scale
/// cancels). A zero denominator yields 1.0 when there is no weighted
/// disagreement and [`Error::DegenerateKappa`] otherwise.
pub fn quadratic_kappa(truth: &[usize], preds: &[usize], k: usize) -> Result<f64> {
    if k < 2 {
        return Err(Error::InvalidArgument("kappa needs at least 2 classes".into()));
    }
    if truth.is_empty() {
        return Err(Error::InvalidArgument("kappa needs at least one item".into()));
    }
    check_labels(truth, preds, k)?;
    let mut rows = vec![0u128; k];
    let mut cols = vec![0u128; k];
    let mut observed = 0u128;
    for (&t, &p) in truth.iter().zip(preds) {
        rows[t] += 1;
        cols[p] += 1;
        observed += (t.abs_diff(p) as u128).pow(2);
    }
    let mut expected = 0u128;
    for (i, &r) in rows.iter().enumerate() {
        for (j, &c) in cols.iter().enumerate() {
            expected += (i.abs_diff(j) as u128).pow(2) * r * c;
        }
    }
    let n = truth.len() as u128;
    // A zero denominator puts all of both marginals on one class, which
    // forces zero disagreement too; the error arm is defensive.
    match (expected, observed) {
        (0, 0) => Ok(1.0),
        (0, _) => Err(Error::DegenerateKappa),
        _ => Ok(1.0 - (n * observed) as f64 / expected as f64),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

/// Lower median, min and max. Even counts take the lower middle value.
pub fn aggregate_repetitions(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("no repetitions to aggregate".into()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("repetition value".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(Summary {
        median: sorted[(sorted.len() - 1) / 2],
        min: sorted[0],
        max: sorted[sorted.len() - 1],
    })
}

/// Labels and predictions for one evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub truth: Vec<usize>,
    pub preds: Vec<usize>,
    pub num_classes: usize,
}

impl EvalResult {
    pub fn new(truth: Vec<usize>, preds: Vec<usize>, num_classes: usize) -> Result<Self> {
        check_labels(&truth, &preds, num_classes)?;
        Ok(EvalResult {
            truth,
            preds,
            num_classes,
        })
    }

    pub fn balanced_accuracy(&self) -> Result<f64> {
        balanced_accuracy(&self.truth, &self.preds, self.num_classes)
    }

    pub fn quadratic_kappa(&self) -> Result<f64> {
        quadratic_kappa(&self.truth, &self.preds, self.num_classes)
    }

    pub fn accuracy(&self) -> f64 {
        let hits = self.truth.iter().zip(&self.preds).filter(|(t, p)| t == p).count();
        hits as f64 / self.truth.len().max(1) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Textbook weighted kappa with float matrices.
    fn kappa_oracle(truth: &[usize], preds: &[usize], k: usize) -> Option<f64> {
        let n = truth.len() as f64;
        let mut o = vec![vec![0.0; k]; k];
        for (&t, &p) in truth.iter().zip(preds) {
            o[t][p] += 1.0;
        }
        let r: Vec<f64> = (0..k).map(|i| o[i].iter().sum()).collect();
        let c: Vec<f64> = (0..k).map(|j| (0..k).map(|i| o[i][j]).sum()).collect();
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..k {
            for j in 0..k {
                let w = ((i as f64 - j as f64) / (k as f64 - 1.0)).powi(2);
                num += w * o[i][j];
                den += w * r[i] * c[j] / n;
            }
        }
        (den != 0.0).then(|| 1.0 - num / den)
    }

    fn balanced_oracle(truth: &[usize], preds: &[usize], k: usize) -> f64 {
        (0..k)
            .map(|c| {
                let idx: Vec<usize> = (0..truth.len()).filter(|&i| truth[i] == c).collect();
                idx.iter().filter(|&&i| preds[i] == c).count() as f64 / idx.len() as f64
            })
            .sum::<f64>()
            / k as f64
    }

    #[test]
    fn hand_cases() {
        assert_eq!(balanced_accuracy(&[0, 0, 1, 1, 1], &[0, 1, 1, 1, 0], 2).unwrap(), (0.5 + 2.0 / 3.0) / 2.0);
        assert_eq!(quadratic_kappa(&[0, 1, 2, 1], &[0, 2, 2, 1], 3).unwrap(), 0.8);
        assert_eq!(balanced_accuracy(&[0, 1, 1], &[1, 1, 1], 2).unwrap(), 0.5);
        assert_eq!(quadratic_kappa(&[0, 1, 2], &[0, 1, 2], 3).unwrap(), 1.0);
        assert!(quadratic_kappa(&[0, 0, 1, 2, 2], &[2, 2, 1, 0, 0], 3).unwrap() < 0.0);
    }

    #[test]
    fn errors() {
        assert!(balanced_accuracy(&[0, 0], &[0, 1], 2).is_err());
        assert!(balanced_accuracy(&[0, 1], &[0], 2).is_err());
        assert!(quadratic_kappa(&[0, 3], &[0, 1], 3).is_err());
        assert!(quadratic_kappa(&[0], &[0], 1).is_err());
        // Truth and predictions all in one class: zero denominator.
        assert_eq!(quadratic_kappa(&[1, 1], &[1, 1], 3).unwrap(), 1.0);
        // One-class truth with spread predictions is not degenerate.
        assert_eq!(quadratic_kappa(&[1, 1], &[0, 2], 3).unwrap(), 0.0);
    }

    #[test]
    fn lower_median() {
        let s = aggregate_repetitions(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(s.median, 0.2);
        let s = aggregate_repetitions(&[0.3, 0.1, 0.2]).unwrap();
        assert_eq!((s.median, s.min, s.max), (0.2, 0.1, 0.3));
        assert_eq!(aggregate_repetitions(&[0.5]).unwrap().median, 0.5);
        assert!(aggregate_repetitions(&[]).is_err());
    }

    fn labels() -> impl Strategy<Value = (usize, Vec<usize>, Vec<usize>)> {
        (2usize..=5, 1usize..=20).prop_flat_map(|(k, n)| {
            (Just(k), prop::collection::vec(0..k, n), prop::collection::vec(0..k, n))
        })
    }

    proptest! {
        #[test]
        fn kappa_matches_oracle((k, truth, preds) in labels()) {
            match kappa_oracle(&truth, &preds, k) {
                Some(want) => prop_assert!((quadratic_kappa(&truth, &preds, k).unwrap() - want).abs() < 1e-12),
                None => prop_assert!(quadratic_kappa(&truth, &preds, k).is_err()
                    || quadratic_kappa(&truth, &preds, k).unwrap() == 1.0),
            }
        }

        #[test]
        fn balanced_matches_oracle((k, truth, preds) in labels()) {
            let got = balanced_accuracy(&truth, &preds, k);
            if (0..k).all(|c| truth.contains(&c)) {
                prop_assert!((got.unwrap() - balanced_oracle(&truth, &preds, k)).abs() < 1e-12);
            } else {
                prop_assert!(got.is_err());
            }
        }

        #[test]
        fn permutation_invariant((k, truth, preds) in labels(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut order: Vec<usize> = (0..truth.len()).collect();
            order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let t2: Vec<usize> = order.iter().map(|&i| truth[i]).collect();
            let p2: Vec<usize> = order.iter().map(|&i| preds[i]).collect();
            prop_assert_eq!(quadratic_kappa(&truth, &preds, k).ok(), quadratic_kappa(&t2, &p2, k).ok());
            let a = balanced_accuracy(&truth, &preds, k).ok();
            let b = balanced_accuracy(&t2, &p2, k).ok();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn balanced_equals_accuracy_on_uniform_truth() {
        let truth = vec![0, 1, 2, 0, 1, 2];
        let preds = vec![0, 2, 2, 1, 1, 0];
        let r = EvalResult::new(truth, preds, 3).unwrap();
        assert!((r.balanced_accuracy().unwrap() - r.accuracy()).abs() < 1e-15);
    }
}
