//! Training loop, learning-rate schedule, model selection and inference.

use std::io::Write;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data_pipeline::Sample;
use crate::error::{Error, Result};
use crate::fmaug::{build_training_samples, FmaugConfig};
use crate::frequency_views::{high_pass_view, GaussianParams};
use crate::image::{Image, Mask};
use crate::losses::{reconstruction_loss_grad, segmentation_loss_grad, total_loss, LossConfig};
use crate::metrics::{confusion_counts, dice, mcc, EvalRecord, EvalReport, DEFAULT_THRESHOLD};
use crate::network::{CoupledNetwork, GateMode};
use crate::nn::{Graph, Tensor};
use crate::optim::{Adam, AdamConfig};

/// Components switched off in the ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub use_fmaug: bool,
    pub use_ssl: bool,
    pub use_att: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self::FULL
    }
}

impl Ablation {
    pub const FULL: Ablation = Ablation {
        use_fmaug: true,
        use_ssl: true,
        use_att: true,
    };
    pub const NO_ATT: Ablation = Ablation {
        use_att: false,
        ..Self::FULL
    };
    pub const NO_SSL_ATT: Ablation = Ablation {
        use_ssl: false,
        use_att: false,
        ..Self::FULL
    };
    pub const NO_FMAUG_SSL_ATT: Ablation = Ablation {
        use_fmaug: false,
        use_ssl: false,
        use_att: false,
    };

    pub fn label(&self) -> String {
        let off: Vec<&str> = [
            (!self.use_fmaug, "FMAug"),
            (!self.use_ssl, "SSL"),
            (!self.use_att, "ATT"),
        ]
        .into_iter()
        .filter_map(|(off, name)| off.then_some(name))
        .collect();
        if off.is_empty() {
            "full".to_string()
        } else {
            format!("w/o {}", off.join(", "))
        }
    }

    /// Number of loss terms that drive the optimizer.
    pub fn objective_terms(&self) -> usize {
        1 + usize::from(self.use_ssl)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub total_epochs: usize,
    pub warm_epochs: usize,
    pub decay_epochs: usize,
    pub base_lr: f64,
    pub adam: AdamConfig,
    pub fmaug: FmaugConfig,
    pub loss: LossConfig,
    pub ablation: Ablation,
    pub anchor: GaussianParams,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl TrainConfig {
    /// Batch 2, 200 epochs: constant rate for 80, linear decay over 120.
    pub fn paper() -> Self {
        Self {
            batch_size: 2,
            total_epochs: 200,
            warm_epochs: 80,
            decay_epochs: 120,
            base_lr: 0.001,
            adam: AdamConfig::default(),
            fmaug: FmaugConfig::default(),
            loss: LossConfig::default(),
            ablation: Ablation::FULL,
            anchor: GaussianParams::ANCHOR,
            seed: 0,
        }
    }

    /// 60 epochs with the same 40/60 warm/decay proportion.
    pub fn desk() -> Self {
        Self {
            total_epochs: 60,
            warm_epochs: 24,
            decay_epochs: 36,
            ..Self::paper()
        }
    }

    /// Sets the epoch budget, keeping the 40/60 warm/decay split.
    pub fn with_epochs(mut self, total: usize) -> Self {
        self.total_epochs = total;
        self.warm_epochs = total * 2 / 5;
        self.decay_epochs = total - self.warm_epochs;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::param("batch_size must be >= 1"));
        }
        if self.total_epochs < 1 {
            return Err(Error::param("total_epochs must be >= 1"));
        }
        if self.warm_epochs + self.decay_epochs != self.total_epochs {
            return Err(Error::param(format!(
                "warm_epochs ({}) + decay_epochs ({}) must equal total_epochs ({})",
                self.warm_epochs, self.decay_epochs, self.total_epochs
            )));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(Error::param("base_lr must be > 0"));
        }
        if self.fmaug.views < 2 {
            return Err(Error::param("need at least 2 perturbed views"));
        }
        self.fmaug.mask.validate()?;
        self.loss.validate()
    }
}

/// Constant `base_lr` during warm-up, then linear decay that reaches zero at
/// `total_epochs`.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> Result<f64> {
    if epoch >= cfg.total_epochs {
        return Err(Error::param(format!(
            "epoch {epoch} outside 0..{}",
            cfg.total_epochs
        )));
    }
    if epoch < cfg.warm_epochs {
        Ok(cfg.base_lr)
    } else {
        Ok(cfg.base_lr * (cfg.total_epochs - epoch) as f64 / cfg.decay_epochs as f64)
    }
}

/// Independent stream per epoch so resumed runs draw the same augmentations.
fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// Mean reconstruction loss (measured even when not optimized).
    pub l_sel: f64,
    pub l_seg: f64,
    /// Mean of the objective actually minimized.
    pub l_total: f64,
    pub steps: usize,
    pub samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub l_sel: f64,
    pub l_seg: f64,
    pub l_total: f64,
    pub val_dice: f64,
    pub val_mcc: f64,
}

struct TrainItem {
    input: Image,
    target: Arc<Image>,
    mask: Arc<Mask>,
}

pub fn images_to_tensor(images: &[&Image]) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| Error::shape("empty batch"))?;
    let (h, w, c) = first.dims();
    let mut data = Vec::with_capacity(images.len() * h * w * c);
    for img in images {
        if img.dims() != (h, w, c) {
            return Err(Error::shape("batch images differ in shape"));
        }
        for ch in 0..c {
            data.extend(img.plane(ch));
        }
    }
    Tensor::from_vec([images.len(), c, h, w], data)
}

pub fn masks_to_tensor(masks: &[&Mask]) -> Result<Tensor> {
    let first = masks.first().ok_or_else(|| Error::shape("empty batch"))?;
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(masks.len() * h * w);
    for m in masks {
        if (m.height(), m.width()) != (h, w) {
            return Err(Error::shape("batch masks differ in shape"));
        }
        data.extend(m.to_f64());
    }
    Tensor::from_vec([masks.len(), 1, h, w], data)
}

/// Result of a single optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub l_sel: f64,
    pub l_seg: f64,
    pub objective: f64,
}

/// Loss terms and parameter gradients for one batch.
pub fn batch_gradients(
    net: &CoupledNetwork,
    inputs: Tensor,
    targets: &Tensor,
    masks: &Tensor,
    loss: &LossConfig,
    use_ssl: bool,
) -> Result<(StepOutcome, Vec<Option<Tensor>>)> {
    let mut g = Graph::new();
    let out = net.forward(&mut g, inputs, GateMode::Learned)?;
    let recon = g.value(out.recon);
    let prob = g.value(out.seg_prob);
    let terms = total_loss(recon, prob, targets, masks, loss)?;
    let mut seg_grad = segmentation_loss_grad(prob, masks, loss.bce_epsilon)?;
    seg_grad.data_mut().iter_mut().for_each(|v| *v *= loss.alpha);
    let mut seeds = vec![(out.seg_prob, seg_grad)];
    let objective = if use_ssl {
        seeds.push((out.recon, reconstruction_loss_grad(recon, targets)?));
        terms.total
    } else {
        loss.alpha * terms.seg
    };
    let grads = g.backward(seeds, net.params().len());
    Ok((
        StepOutcome {
            l_sel: terms.sel,
            l_seg: terms.seg,
            objective,
        },
        grads,
    ))
}

/// Owns the network and optimizer state across epochs.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub net: CoupledNetwork,
    pub adam: Adam,
    /// Completed epochs.
    pub epoch: usize,
    pub best: Option<Checkpoint>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Checkpoint with the highest validation DICE (earliest on ties).
    pub best: Checkpoint,
    /// State after the final epoch, including optimizer moments.
    pub last: Checkpoint,
    pub history: Vec<EpochRecord>,
}

impl Trainer {
    pub fn new(net: CoupledNetwork, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if net.config().attention != cfg.ablation.use_att {
            return Err(Error::param(
                "network attention setting does not match the use_att ablation flag",
            ));
        }
        let adam = Adam::new(cfg.adam, net.params());
        Ok(Self {
            cfg,
            net,
            adam,
            epoch: 0,
            best: None,
        })
    }

    /// Continues from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(last: Checkpoint, best: Option<Checkpoint>, cfg: TrainConfig) -> Result<Self> {
        let mut t = Self::new(last.network, cfg)?;
        if let Some(adam) = last.optimizer {
            t.adam = adam;
        }
        t.epoch = last.epoch;
        t.best = best;
        Ok(t)
    }

    pub fn checkpoint(&self, val_dice: Option<f64>, with_optimizer: bool) -> Checkpoint {
        Checkpoint {
            network: self.net.clone(),
            seed: self.cfg.seed,
            epoch: self.epoch,
            val_dice,
            anchor: self.cfg.anchor,
            optimizer: with_optimizer.then(|| self.adam.clone()),
        }
    }

    fn items_for(&self, sample: &Sample, rng: &mut ChaCha8Rng) -> Result<Vec<TrainItem>> {
        let size = self.net.config().image_size;
        if (sample.image.height(), sample.image.width()) != (size, size) {
            return Err(Error::shape(format!(
                "{}: training images must be {size}x{size}",
                sample.id
            )));
        }
        let image = sample.image.with_channels(self.net.config().in_channels)?;
        if self.cfg.ablation.use_fmaug {
            Ok(build_training_samples(&image, &sample.mask, &self.cfg.anchor, &self.cfg.fmaug, rng)?
                .into_iter()
                .map(|s| TrainItem {
                    input: s.mixed,
                    target: s.target,
                    mask: s.seg_mask,
                })
                .collect())
        } else {
            let anchor = Arc::new(high_pass_view(&image, &self.cfg.anchor)?.pixels);
            Ok(vec![TrainItem {
                input: (*anchor).clone(),
                target: anchor,
                mask: Arc::new(sample.mask.clone()),
            }])
        }
    }

    fn step(&mut self, batch: &[TrainItem], lr: f64, step: usize) -> Result<StepOutcome> {
        let inputs = images_to_tensor(&batch.iter().map(|b| &b.input).collect::<Vec<_>>())?;
        let targets = images_to_tensor(&batch.iter().map(|b| b.target.as_ref()).collect::<Vec<_>>())?;
        let masks = masks_to_tensor(&batch.iter().map(|b| b.mask.as_ref()).collect::<Vec<_>>())?;
        let (outcome, grads) = batch_gradients(
            &self.net,
            inputs,
            &targets,
            &masks,
            &self.cfg.loss,
            self.cfg.ablation.use_ssl,
        )?;
        if !(outcome.objective.is_finite() && outcome.l_sel.is_finite()) {
            return Err(Error::NonFinite {
                epoch: self.epoch,
                step,
                detail: format!("l_sel={} l_seg={}", outcome.l_sel, outcome.l_seg),
            });
        }
        if grads.iter().flatten().any(|g| !g.all_finite()) {
            return Err(Error::NonFinite {
                epoch: self.epoch,
                step,
                detail: "gradient".into(),
            });
        }
        self.adam.update(self.net.params_mut(), &grads, lr);
        Ok(outcome)
    }

    /// One pass over `train`. The (image, pair) stream is batched in order;
    /// a trailing partial batch is still used.
    pub fn train_epoch(&mut self, train: &[Sample]) -> Result<EpochStats> {
        if train.is_empty() {
            return Err(Error::param("training set is empty"));
        }
        let lr = lr_at_epoch(&self.cfg, self.epoch)?;
        let mut rng = epoch_rng(self.cfg.seed, self.epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);

        let mut stats = EpochStats::default();
        let mut pending: Vec<TrainItem> = Vec::new();
        let bs = self.cfg.batch_size;
        let record = |stats: &mut EpochStats, o: StepOutcome, n: usize| {
            stats.l_sel += o.l_sel;
            stats.l_seg += o.l_seg;
            stats.l_total += o.objective;
            stats.steps += 1;
            stats.samples += n;
        };
        for &i in &order {
            pending.extend(self.items_for(&train[i], &mut rng)?);
            while pending.len() >= bs {
                let batch: Vec<TrainItem> = pending.drain(..bs).collect();
                let o = self.step(&batch, lr, stats.steps)?;
                record(&mut stats, o, batch.len());
            }
        }
        if !pending.is_empty() {
            let o = self.step(&pending, lr, stats.steps)?;
            record(&mut stats, o, pending.len());
        }
        let n = stats.steps as f64;
        stats.l_sel /= n;
        stats.l_seg /= n;
        stats.l_total /= n;
        self.epoch += 1;
        Ok(stats)
    }

    /// Trains until `total_epochs`, validating after every epoch and keeping
    /// the best checkpoint by validation DICE. An empty `val` set falls back
    /// to the training set. Each epoch record is written to `log` as one JSON
    /// line.
    pub fn run(&mut self, train: &[Sample], val: &[Sample], mut log: Option<&mut dyn Write>) -> Result<FitResult> {
        let val = if val.is_empty() { train } else { val };
        let mut history = Vec::new();
        while self.epoch < self.cfg.total_epochs {
            let lr = lr_at_epoch(&self.cfg, self.epoch)?;
            let epoch = self.epoch;
            let stats = self.train_epoch(train)?;
            let report = evaluate(&NetworkSegmenter::new(&self.net, self.cfg.anchor), val)?;
            let rec = EpochRecord {
                epoch,
                lr,
                l_sel: stats.l_sel,
                l_seg: stats.l_seg,
                l_total: stats.l_total,
                val_dice: report.mean_dice,
                val_mcc: report.mean_mcc,
            };
            if let Some(w) = log.as_deref_mut() {
                let line = serde_json::to_string(&rec)?;
                writeln!(w, "{line}").map_err(|e| Error::io("<training log>", e))?;
            }
            let improved = self
                .best
                .as_ref()
                .is_none_or(|b| b.val_dice.is_none_or(|d| rec.val_dice > d));
            if improved {
                self.best = Some(self.checkpoint(Some(rec.val_dice), false));
            }
            history.push(rec);
        }
        let best = match &self.best {
            Some(b) => b.clone(),
            None => self.checkpoint(None, false),
        };
        Ok(FitResult {
            best,
            last: self.checkpoint(history.last().map(|r| r.val_dice), true),
            history,
        })
    }
}

/// Fresh training run.
pub fn fit(net: CoupledNetwork, train: &[Sample], val: &[Sample], cfg: &TrainConfig) -> Result<FitResult> {
    Trainer::new(net, cfg.clone())?.run(train, val, None)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mask: Mask,
    /// Row-major `H×W` foreground probabilities.
    pub prob: Vec<f64>,
    /// Whether the input was resampled to the network size.
    pub resized: bool,
}

/// Anything that produces a probability map for an image.
pub trait Segmenter {
    fn segment(&self, image: &Image) -> Result<Prediction>;
}

/// Network inference on the anchor view of the input.
#[derive(Debug, Clone, Copy)]
pub struct NetworkSegmenter<'a> {
    pub net: &'a CoupledNetwork,
    pub anchor: GaussianParams,
}

impl<'a> NetworkSegmenter<'a> {
    pub fn new(net: &'a CoupledNetwork, anchor: GaussianParams) -> Self {
        Self { net, anchor }
    }
}

impl Segmenter for NetworkSegmenter<'_> {
    fn segment(&self, image: &Image) -> Result<Prediction> {
        predict(self.net, image, &self.anchor)
    }
}

/// Resizes to the network size if needed, takes the anchor view, runs the
/// network and thresholds at 0.5. Probabilities are resampled back to the
/// input size.
pub fn predict(net: &CoupledNetwork, image: &Image, anchor: &GaussianParams) -> Result<Prediction> {
    let size = net.config().image_size;
    let (h, w) = (image.height(), image.width());
    let resized = (h, w) != (size, size);
    let input = image.with_channels(net.config().in_channels)?.resized(size, size)?;
    let view = high_pass_view(&input, anchor)?;
    let (_, prob) = net.infer(images_to_tensor(&[&view.pixels])?)?;
    let prob = if resized {
        Image::new(size, size, 1, prob.into_data())?.resized(h, w)?.into_data()
    } else {
        prob.into_data()
    };
    let mask = Mask::new(h, w, prob.iter().map(|p| u8::from(*p >= DEFAULT_THRESHOLD)).collect())?;
    Ok(Prediction { mask, prob, resized })
}

/// Per-image DICE / Mcc with macro averages.
pub fn evaluate(segmenter: &dyn Segmenter, samples: &[Sample]) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::param("nothing to evaluate"));
    }
    let records = samples
        .iter()
        .map(|s| {
            let p = segmenter.segment(&s.image)?;
            let c = confusion_counts(&p.prob, &s.mask, DEFAULT_THRESHOLD)?;
            Ok(EvalRecord {
                id: s.id.clone(),
                dice: dice(&c),
                mcc: mcc(&c),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_records(records))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_values() {
        let cfg = TrainConfig::paper();
        assert_eq!(lr_at_epoch(&cfg, 0).unwrap(), 0.001);
        assert_eq!(lr_at_epoch(&cfg, 79).unwrap(), 0.001);
        assert_eq!(lr_at_epoch(&cfg, 80).unwrap(), 0.001);
        assert!((lr_at_epoch(&cfg, 140).unwrap() - 0.0005).abs() < 1e-12);
        assert!((lr_at_epoch(&cfg, 199).unwrap() - 0.001 / 120.0).abs() < 1e-12);
        assert!(lr_at_epoch(&cfg, 200).is_err());
    }

    #[test]
    fn schedule_is_monotone_non_increasing() {
        let cfg = TrainConfig::paper();
        let lrs: Vec<f64> = (0..200).map(|e| lr_at_epoch(&cfg, e).unwrap()).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
        // Largest jump is one decay step.
        let max_jump = lrs.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max);
        assert!(max_jump <= 0.001 / 120.0 + 1e-15);
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig::paper();
        cfg.warm_epochs = 81;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::paper();
        cfg.batch_size = 0;
        assert!(cfg.validate().is_err());
        assert!(TrainConfig::desk().validate().is_ok());
        let c = TrainConfig::paper().with_epochs(10);
        assert_eq!((c.warm_epochs, c.decay_epochs), (4, 6));
    }

    #[test]
    fn ablation_labels() {
        assert_eq!(Ablation::FULL.label(), "full");
        assert_eq!(Ablation::NO_ATT.label(), "w/o ATT");
        assert_eq!(Ablation::NO_FMAUG_SSL_ATT.label(), "w/o FMAug, SSL, ATT");
        assert_eq!(Ablation::NO_SSL_ATT.objective_terms(), 1);
        assert_eq!(Ablation::FULL.objective_terms(), 2);
    }
}
