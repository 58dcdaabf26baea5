//! DICE and Matthews correlation over binarized predictions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Mask;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Counts for two hard masks; `pred` plays the prediction role.
    pub fn from_masks(pred: &Mask, truth: &Mask) -> Result<Self> {
        if (pred.height(), pred.width()) != (truth.height(), truth.width()) {
            return Err(Error::shape("prediction and mask sizes differ"));
        }
        Ok(Self::accumulate(
            pred.data().iter().map(|v| *v == 1).zip(truth.data().iter().map(|v| *v == 1)),
        ))
    }

    fn accumulate(pairs: impl Iterator<Item = (bool, bool)>) -> Self {
        let mut c = Self::default();
        for (p, t) in pairs {
            match (p, t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }
}

/// Binarizes `pred_prob` at `threshold` (`>=` is positive) and counts
/// agreement with `mask`. `pred_prob` is row-major `H×W`.
pub fn confusion_counts(pred_prob: &[f64], mask: &Mask, threshold: f64) -> Result<ConfusionCounts> {
    if pred_prob.len() != mask.data().len() {
        return Err(Error::shape(format!(
            "{} predictions for a {}x{} mask",
            pred_prob.len(),
            mask.height(),
            mask.width()
        )));
    }
    Ok(ConfusionCounts::accumulate(
        pred_prob.iter().map(|p| *p >= threshold).zip(mask.data().iter().map(|v| *v == 1)),
    ))
}

/// `2tp / (2tp + fp + fn)`; 1.0 when both masks are empty.
pub fn dice(c: &ConfusionCounts) -> f64 {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        1.0
    } else {
        (2 * c.tp) as f64 / denom as f64
    }
}

/// Matthews correlation; 0.0 when any marginal is empty.
///
/// Evaluated as `sign(num) * sqrt(num² / den²)` from exact integer products,
/// so perfect and fully inverted predictions give exactly ±1.
pub fn mcc(c: &ConfusionCounts) -> f64 {
    let (tp, fp, tn, fn_) = (
        u128::from(c.tp),
        u128::from(c.fp),
        u128::from(c.tn),
        u128::from(c.fn_),
    );
    let den2 = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if den2 == 0 {
        return 0.0;
    }
    let (pos, neg) = (tp * tn, fp * fn_);
    let (mag, sign) = if pos >= neg { (pos - neg, 1.0) } else { (neg - pos, -1.0) };
    let ratio = (mag as f64) * (mag as f64) / den2 as f64;
    sign * ratio.sqrt().min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub dice: f64,
    pub mcc: f64,
}

/// Per-image scores plus their macro (per-image) means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: Vec<EvalRecord>,
    pub mean_dice: f64,
    pub mean_mcc: f64,
}

impl EvalReport {
    pub fn from_records(records: Vec<EvalRecord>) -> Self {
        let n = records.len().max(1) as f64;
        let mean_dice = records.iter().map(|r| r.dice).sum::<f64>() / n;
        let mean_mcc = records.iter().map(|r| r.mcc).sum::<f64>() / n;
        Self {
            records,
            mean_dice,
            mean_mcc,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize, p: f64) -> Mask {
        Mask::from_fn(h, w, |_, _| rng.random::<f64>() < p).unwrap()
    }

    #[test]
    fn perfect_and_inverted() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_mask(&mut rng, 16, 16, 0.3);
        let hard: Vec<f64> = m.to_f64();
        let c = confusion_counts(&hard, &m, DEFAULT_THRESHOLD).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        assert_eq!(dice(&c), 1.0);
        assert_eq!(mcc(&c), 1.0);

        let inv: Vec<f64> = m.inverted().to_f64();
        let c = confusion_counts(&inv, &m, DEFAULT_THRESHOLD).unwrap();
        assert_eq!((c.tp, c.tn), (0, 0));
        assert_eq!(dice(&c), 0.0);
        assert_eq!(mcc(&c), -1.0);
    }

    #[test]
    fn hand_cases() {
        let c = ConfusionCounts { tp: 3, fp: 1, tn: 0, fn_: 2 };
        assert!((dice(&c) - 2.0 / 3.0).abs() < 1e-15);
        let c = ConfusionCounts { tp: 2, fp: 1, tn: 2, fn_: 1 };
        assert!((mcc(&c) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_conventions() {
        let empty = ConfusionCounts { tn: 10, ..Default::default() };
        assert_eq!(dice(&empty), 1.0);
        assert_eq!(mcc(&empty), 0.0);
    }

    #[test]
    fn threshold_is_inclusive() {
        let m = Mask::new(1, 2, vec![1, 0]).unwrap();
        let c = confusion_counts(&[0.5, 0.4999], &m, 0.5).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 1, tn: 1, fp: 0, fn_: 0 });
        assert!(confusion_counts(&[0.5], &m, 0.5).is_err());
    }

    #[test]
    fn bounded_over_many_random_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let p = rng.random::<f64>();
            let a = random_mask(&mut rng, 4, 4, p);
            let b = random_mask(&mut rng, 4, 4, p);
            let c = ConfusionCounts::from_masks(&a, &b).unwrap();
            assert_eq!(c.total(), 16);
            assert!((0.0..=1.0).contains(&dice(&c)));
            assert!((-1.0..=1.0).contains(&mcc(&c)));
        }
    }

    proptest! {
        #[test]
        fn mcc_is_symmetric(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_mask(&mut rng, 8, 8, 0.4);
            let b = random_mask(&mut rng, 8, 8, 0.4);
            let ab = mcc(&ConfusionCounts::from_masks(&a, &b).unwrap());
            let ba = mcc(&ConfusionCounts::from_masks(&b, &a).unwrap());
            prop_assert!((ab - ba).abs() < 1e-15);
        }
    }
}
