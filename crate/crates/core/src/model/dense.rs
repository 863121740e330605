use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Which parameters a training step may update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateMode {
    /// Every base parameter (and any overlay).
    Full,
    /// Only LoRA overlay parameters.
    Lora,
    /// Nothing; used for inference and CoOp.
    Frozen,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Base,
    Overlay,
}

impl UpdateMode {
    pub fn trains(self, kind: ParamKind) -> bool {
        matches!((self, kind), (UpdateMode::Full, _) | (UpdateMode::Lora, ParamKind::Overlay))
    }
}

pub(crate) fn gaussian(rng: &mut impl Rng, shape: Vec<usize>, std: f64) -> Tensor {
    let normal = Normal::new(0.0, std).expect("std is finite and positive");
    let n = shape.iter().product();
    let data = (0..n).map(|_| normal.sample(rng)).collect();
    Tensor::new(shape, data).expect("gaussian samples are finite")
}

/// Low-rank residual on a dense layer: `x ↦ (α/r)·B·A·x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoraOverlay {
    /// `r × d_in`, random init.
    pub a: Tensor,
    /// `d_out × r`, zero init.
    pub b: Tensor,
    pub rank: usize,
    pub alpha: f64,
}

impl LoraOverlay {
    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn parameter_count(&self) -> usize {
        self.a.numel() + self.b.numel()
    }
}

/// Affine layer `x·W + b` with `W: d_in × d_out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lora: Option<LoraOverlay>,
}

#[derive(Clone, Debug)]
pub struct DenseVars {
    weight: Var,
    bias: Var,
    lora: Option<(Var, Var, f64)>,
}

impl Dense {
    pub fn init(d_in: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        Dense {
            weight: gaussian(rng, vec![d_in, d_out], 1.0 / (d_in as f64).sqrt()),
            bias: gaussian(rng, vec![d_out], 0.1),
            lora: None,
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn d_out(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn inject_lora(&mut self, rank: usize, alpha: f64, rng: &mut impl Rng) -> Result<()> {
        if self.lora.is_some() {
            return Err(Error::DoubleInjection);
        }
        let limit = self.d_in().min(self.d_out());
        if rank == 0 {
            return Err(Error::InvalidArgument("LoRA rank must be >= 1".into()));
        }
        if rank > limit {
            return Err(Error::RankTooLarge { rank, limit });
        }
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidArgument(format!("LoRA alpha must be positive, got {alpha}")));
        }
        self.lora = Some(LoraOverlay {
            a: gaussian(rng, vec![rank, self.d_in()], 1.0 / (self.d_in() as f64).sqrt()),
            b: Tensor::zeros(vec![self.d_out(), rank])?,
            rank,
            alpha,
        });
        Ok(())
    }

    /// Fold the overlay into `W` (`W += (α/r)·Aᵀ·Bᵀ`) and drop it.
    pub fn merge_lora(&mut self) {
        let Some(overlay) = self.lora.take() else { return };
        let (d_in, d_out, r) = (self.d_in(), self.d_out(), overlay.rank);
        let s = overlay.scale();
        let (a, b) = (overlay.a.data(), overlay.b.data());
        let w = self.weight.data_mut();
        for i in 0..d_in {
            for o in 0..d_out {
                let delta: f64 = (0..r).map(|k| a[k * d_in + i] * b[o * r + k]).sum();
                w[i * d_out + o] += s * delta;
            }
        }
    }

    pub(crate) fn bind(&self, tape: &mut Tape, mode: UpdateMode) -> DenseVars {
        let base = mode.trains(ParamKind::Base);
        let over = mode.trains(ParamKind::Overlay);
        DenseVars {
            weight: tape.leaf(self.weight.clone().with_grad(base)),
            bias: tape.leaf(self.bias.clone().with_grad(base)),
            lora: self.lora.as_ref().map(|l| {
                (
                    tape.leaf(l.a.clone().with_grad(over)),
                    tape.leaf(l.b.clone().with_grad(over)),
                    l.scale(),
                )
            }),
        }
    }

    pub(crate) fn forward(tape: &mut Tape, vars: &DenseVars, x: Var) -> Result<Var> {
        let xw = tape.matmul(x, vars.weight)?;
        let y = tape.add_bias(xw, vars.bias)?;
        let Some((a, b, scale)) = vars.lora else { return Ok(y) };
        let at = tape.transpose(a)?;
        let bt = tape.transpose(b)?;
        let xa = tape.matmul(x, at)?;
        let xab = tape.matmul(xa, bt)?;
        let residual = tape.scale(xab, scale)?;
        tape.add(y, residual)
    }

    pub(crate) fn slots_mut(&mut self) -> Vec<(ParamKind, &mut Tensor)> {
        let mut out = vec![(ParamKind::Base, &mut self.weight), (ParamKind::Base, &mut self.bias)];
        if let Some(l) = &mut self.lora {
            out.push((ParamKind::Overlay, &mut l.a));
            out.push((ParamKind::Overlay, &mut l.b));
        }
        out
    }

    pub(crate) fn slots(&self) -> Vec<(ParamKind, &Tensor)> {
        let mut out = vec![(ParamKind::Base, &self.weight), (ParamKind::Base, &self.bias)];
        if let Some(l) = &self.lora {
            out.push((ParamKind::Overlay, &l.a));
            out.push((ParamKind::Overlay, &l.b));
        }
        out
    }
}

impl DenseVars {
    pub(crate) fn slots(&self) -> Vec<(ParamKind, Var)> {
        let mut out = vec![(ParamKind::Base, self.weight), (ParamKind::Base, self.bias)];
        if let Some((a, b, _)) = self.lora {
            out.push((ParamKind::Overlay, a));
            out.push((ParamKind::Overlay, b));
        }
        out
    }
}
