use serde::{Deserialize, Serialize};

use super::adapt::{run_epochs, TrainConfig};
use super::subset::TrainingPair;
use crate::model::DualEncoderModel;
use crate::{par, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneGrid {
    pub lrs: Vec<f64>,
    pub weight_decays: Vec<f64>,
    pub probe_epochs: usize,
}

impl Default for TuneGrid {
    fn default() -> Self {
        TuneGrid {
            lrs: vec![1e-4, 3e-4, 1e-3],
            weight_decays: vec![1e-4, 1e-2],
            probe_epochs: 5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub lr: f64,
    pub weight_decay: f64,
    /// Final-epoch mean loss; `None` when the probe diverged.
    pub loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneOutcome {
    pub lr: f64,
    pub weight_decay: f64,
    pub probes: Vec<Probe>,
}

/// Run `probe` on every `(lr, wd)` grid point (in parallel) and pick the
/// lowest loss; ties go to the smaller lr, then the smaller wd. Probes that
/// fail with a divergence count as diverged; other errors propagate.
pub fn select_hyperparams<F>(lrs: &[f64], wds: &[f64], probe: F) -> Result<TuneOutcome>
where
    F: Fn(f64, f64) -> Result<f64> + Sync,
{
    if lrs.is_empty() || wds.is_empty() {
        return Err(Error::InvalidArgument("tuning grid is empty".into()));
    }
    let points: Vec<(f64, f64)> = lrs.iter().flat_map(|&lr| wds.iter().map(move |&wd| (lr, wd))).collect();
    let results = par::map(&points, |&(lr, wd)| match probe(lr, wd) {
        Ok(loss) if loss.is_finite() => Ok(Some(loss)),
        Ok(_) | Err(Error::Diverged { .. } | Error::NonFinite(_)) => {
            log::info!("probe lr={lr:e} wd={wd:e} diverged");
            Ok(None)
        }
        Err(e) => Err(e),
    });
    let mut probes = Vec::with_capacity(points.len());
    for (&(lr, weight_decay), r) in points.iter().zip(results) {
        probes.push(Probe {
            lr,
            weight_decay,
            loss: r?,
        });
    }
    let best = probes
        .iter()
        .filter_map(|p| p.loss.map(|l| (l, p)))
        .min_by(|(la, a), (lb, b)| {
            la.total_cmp(lb)
                .then(a.lr.total_cmp(&b.lr))
                .then(a.weight_decay.total_cmp(&b.weight_decay))
        });
    match best {
        Some((_, p)) => Ok(TuneOutcome {
            lr: p.lr,
            weight_decay: p.weight_decay,
            probes: probes.clone(),
        }),
        None => Err(Error::AllProbesDiverged(format!("lr {lrs:?} x wd {wds:?}"))),
    }
}

/// Probe each grid point by training a copy of `model` for
/// `grid.probe_epochs` epochs. The probes follow the full-length cosine
/// schedule of `base` and stop early, so the chosen point is judged under
/// the learning rates it will actually see.
pub fn tune_hyperparams(
    model: &DualEncoderModel,
    pairs: &[TrainingPair],
    base: &TrainConfig,
    grid: &TuneGrid,
) -> Result<TuneOutcome> {
    if grid.probe_epochs == 0 {
        return Err(Error::InvalidArgument("probe_epochs must be >= 1".into()));
    }
    select_hyperparams(&grid.lrs, &grid.weight_decays, |lr, wd| {
        let config = TrainConfig {
            lr,
            weight_decay: wd,
            ..base.clone()
        };
        let (_, trace) = run_epochs(model, pairs, &config, grid.probe_epochs)?;
        Ok(trace.final_loss().expect("at least one probe epoch"))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point() {
        let out = select_hyperparams(&[3e-4], &[1e-2], |_, _| Ok(1.0)).unwrap();
        assert_eq!((out.lr, out.weight_decay), (3e-4, 1e-2));
    }

    #[test]
    fn ties_prefer_smaller_lr_then_wd() {
        let out = select_hyperparams(&[1e-3, 1e-4], &[1e-2, 1e-4], |_, _| Ok(0.5)).unwrap();
        assert_eq!((out.lr, out.weight_decay), (1e-4, 1e-4));
        let out = select_hyperparams(&[1e-3, 1e-4], &[1e-2], |lr, _| Ok(if lr > 5e-4 { 0.1 } else { 0.2 })).unwrap();
        assert_eq!(out.lr, 1e-3);
    }

    #[test]
    fn diverged_points_skipped() {
        let out = select_hyperparams(&[1e-3, 1e30], &[0.0], |lr, _| {
            if lr > 1.0 {
                Err(Error::Diverged { epoch: 0, batch: 0 })
            } else {
                Ok(2.0)
            }
        })
        .unwrap();
        assert_eq!(out.lr, 1e-3);
        assert_eq!(out.probes[1].loss, None);
    }

    #[test]
    fn all_diverged_errors() {
        let err = select_hyperparams(&[1.0], &[0.0, 1.0], |_, _| Ok(f64::NAN)).unwrap_err();
        assert!(matches!(err, Error::AllProbesDiverged(_)));
        assert!(err.to_string().contains("[1.0]"), "{err}");
    }

    #[test]
    fn other_errors_propagate() {
        let err = select_hyperparams(&[1.0], &[0.0], |_, _| Err(Error::DegenerateKappa)).unwrap_err();
        assert!(matches!(err, Error::DegenerateKappa));
    }
}
