use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::{Error, Result};

/// `lr0 · ½ · (1 + cos(π·t/T))`.
pub fn cosine_lr(lr0: f64, epoch: usize, total: usize) -> f64 {
    assert!(total >= 1 && epoch <= total, "cosine_lr needs 0 <= t <= T, T >= 1");
    if epoch == total {
        // cos(π) is -1 in exact arithmetic but not quite in floating point.
        return 0.0;
    }
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / total as f64).cos())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// AdamW moment estimates for a fixed list of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        AdamW {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update with decoupled weight decay: `p -= lr·wd·p`, then
    /// `p -= lr·m̂/(√v̂ + eps)`. Parameters must be passed in the same order
    /// on every call.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor], lr: f64) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::InvalidArgument(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::InvalidArgument("parameter list changed between steps".into()));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || self.m[i].len() != p.numel() {
                return Err(Error::shape(
                    "adamw_step",
                    format!("parameter {i}: {:?} vs gradient {:?}", p.shape(), g.shape()),
                ));
            }
        }
        self.step += 1;
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let data = p.data_mut();
            for (j, &gj) in g.data().iter().enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                let mut x = data[j];
                x -= lr * weight_decay * x;
                x -= lr * m_hat / (v_hat.sqrt() + eps);
                if !x.is_finite() {
                    return Err(Error::NonFinite("adamw update".into()));
                }
                data[j] = x;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_step(p0: f64, g: f64, lr: f64, wd: f64) -> f64 {
        let mut p = Tensor::vector(vec![p0]).unwrap();
        let g = Tensor::vector(vec![g]).unwrap();
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: wd,
            ..AdamWConfig::default()
        });
        opt.step(&mut [&mut p], &[&g], lr).unwrap();
        assert_eq!(opt.step_count(), 1);
        p.data()[0]
    }

    #[test]
    fn cosine_endpoints_and_midpoint() {
        assert_eq!(cosine_lr(0.3, 0, 50), 0.3);
        assert_eq!(cosine_lr(0.3, 50, 50), 0.0);
        assert_eq!(cosine_lr(0.3, 25, 50), 0.15);
    }

    #[test]
    fn cosine_is_monotone_and_bounded() {
        let lrs: Vec<f64> = (0..=37).map(|t| cosine_lr(1e-3, t, 37)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
        assert!(lrs.iter().all(|&l| (0.0..=1e-3).contains(&l)));
    }

    #[test]
    fn first_step_hand_cases() {
        assert_eq!(scalar_step(1.0, 0.0, 0.1, 0.0), 1.0);
        // m̂ = v̂ = 1, so the step is lr / (1 + eps).
        assert!((scalar_step(1.0, 1.0, 0.1, 0.0) - 0.9).abs() < 1e-9);
        assert!((scalar_step(1.0, 0.0, 0.1, 0.1) - 0.99).abs() < 1e-15);
    }

    #[test]
    fn rejects_mismatch_and_overflow() {
        let mut p = Tensor::vector(vec![1.0, 2.0]).unwrap();
        let g = Tensor::vector(vec![1.0]).unwrap();
        let mut opt = AdamW::new(AdamWConfig::default());
        assert!(opt.step(&mut [&mut p], &[&g], 0.1).is_err());

        let mut p = Tensor::vector(vec![1e300]).unwrap();
        let g = Tensor::vector(vec![0.0]).unwrap();
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: 1.0,
            ..AdamWConfig::default()
        });
        assert!(matches!(opt.step(&mut [&mut p], &[&g], -1e10), Err(Error::NonFinite(_))));
    }
}
