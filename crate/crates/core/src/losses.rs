//! Reconstruction (mean L1), segmentation (mean BCE) and their weighted sum.
//!
//! Both terms average over pixels and channels first and then over the
//! mixed samples present in the batch, so the scale does not depend on how
//! many view pairs were drawn.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the segmentation term.
    pub alpha: f64,
    /// Probabilities are clamped to `[eps, 1 - eps]` before taking logs.
    pub bce_epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            bce_epsilon: 1e-7,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::param(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.bce_epsilon > 0.0 && self.bce_epsilon <= 1e-3) {
            return Err(Error::param(format!(
                "bce_epsilon must lie in (0, 1e-3], got {}",
                self.bce_epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub sel: f64,
    pub seg: f64,
    pub total: f64,
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn check_binary(mask: &Tensor) -> Result<()> {
    if mask.data().iter().any(|v| *v != 0.0 && *v != 1.0) {
        return Err(Error::Value("segmentation mask must be binary".into()));
    }
    Ok(())
}

/// Mean over items of the per-item mean absolute error.
pub fn reconstruction_loss(recon: &Tensor, target: &Tensor) -> Result<f64> {
    same_shape(recon, target, "reconstruction")?;
    let l = recon.item_len();
    let n = recon.batch();
    let total: f64 = (0..n)
        .map(|i| {
            recon
                .item(i)
                .iter()
                .zip(target.item(i))
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / l as f64
        })
        .sum();
    Ok(total / n as f64)
}

pub fn reconstruction_loss_grad(recon: &Tensor, target: &Tensor) -> Result<Tensor> {
    same_shape(recon, target, "reconstruction")?;
    let scale = 1.0 / recon.len() as f64;
    let data = recon
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| {
            if a > b {
                scale
            } else if a < b {
                -scale
            } else {
                0.0
            }
        })
        .collect();
    Tensor::from_vec(recon.shape(), data)
}

#[inline]
fn bce(p: f64, m: f64, eps: f64) -> f64 {
    let p = p.clamp(eps, 1.0 - eps);
    -m * p.ln() - (1.0 - m) * (1.0 - p).ln()
}

/// Mean over items of the per-item mean binary cross-entropy.
pub fn segmentation_loss(prob: &Tensor, mask: &Tensor, eps: f64) -> Result<f64> {
    same_shape(prob, mask, "segmentation")?;
    check_binary(mask)?;
    let l = prob.item_len();
    let n = prob.batch();
    let total: f64 = (0..n)
        .map(|i| {
            prob.item(i)
                .iter()
                .zip(mask.item(i))
                .map(|(p, m)| bce(*p, *m, eps))
                .sum::<f64>()
                / l as f64
        })
        .sum();
    Ok(total / n as f64)
}

/// Gradient w.r.t. the probabilities; zero where the clamp is active.
pub fn segmentation_loss_grad(prob: &Tensor, mask: &Tensor, eps: f64) -> Result<Tensor> {
    same_shape(prob, mask, "segmentation")?;
    check_binary(mask)?;
    let scale = 1.0 / prob.len() as f64;
    let data = prob
        .data()
        .iter()
        .zip(mask.data())
        .map(|(p, m)| {
            if *p < eps || *p > 1.0 - eps {
                0.0
            } else {
                scale * (-m / p + (1.0 - m) / (1.0 - p))
            }
        })
        .collect();
    Tensor::from_vec(prob.shape(), data)
}

/// `sel + alpha * seg`, with both components.
pub fn total_loss(
    recon: &Tensor,
    seg_prob: &Tensor,
    target: &Tensor,
    mask: &Tensor,
    cfg: &LossConfig,
) -> Result<LossTerms> {
    let sel = reconstruction_loss(recon, target)?;
    let seg = segmentation_loss(seg_prob, mask, cfg.bce_epsilon)?;
    Ok(LossTerms {
        sel,
        seg,
        total: sel + cfg.alpha * seg,
    })
}
