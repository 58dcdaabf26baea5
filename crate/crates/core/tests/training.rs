mod common;

use common::{synth_samples, tiny_model, tiny_train};
use freesdg::checkpoint::Checkpoint;
use freesdg::data_pipeline::Sample;
use freesdg::error::Error;
use freesdg::frequency_views::GaussianParams;
use freesdg::image::{Image, Mask};
use freesdg::network::CoupledNetwork;
use freesdg::trainer::{evaluate, predict, Ablation, Prediction, Segmenter, Trainer};

fn trainer(epochs: usize, seed: u64) -> Trainer {
    Trainer::new(CoupledNetwork::new(tiny_model(), seed).unwrap(), tiny_train(epochs, seed)).unwrap()
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let train = synth_samples(2, 1);
    let mut t = trainer(3, 1);
    t.train_epoch(&train).unwrap();
    let ckpt = t.checkpoint(Some(0.25), true);
    let bytes = ckpt.to_bytes().unwrap();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back.network.params(), t.net.params());
    assert_eq!(back.network.param_names(), t.net.param_names());
    assert_eq!(back.network.config(), t.net.config());
    let adam = back.optimizer.as_ref().unwrap();
    assert_eq!(adam.step, t.adam.step);
    assert_eq!(adam.m, t.adam.m);
    assert_eq!(adam.v, t.adam.v);
    assert_eq!((back.epoch, back.val_dice, back.seed), (1, Some(0.25), 1));
    assert_eq!(back.anchor, GaussianParams::ANCHOR);
    assert_eq!(back.to_bytes().unwrap(), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.ckpt");
    ckpt.save(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let bytes = trainer(1, 2).checkpoint(None, false).to_bytes().unwrap();
    assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 8]), Err(Error::Checkpoint(_))));
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(Checkpoint::from_bytes(&extra).is_err());
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(Checkpoint::from_bytes(&magic).is_err());
    assert!(Checkpoint::from_bytes(&[]).is_err());
}

#[test]
fn resumed_training_matches_uninterrupted_run() {
    let train = synth_samples(3, 3);
    let mut straight = trainer(3, 4);
    let full = straight.run(&train, &[], None).unwrap();

    let mut first = trainer(3, 4);
    first.train_epoch(&train).unwrap();
    let saved = Checkpoint::from_bytes(&first.checkpoint(None, true).to_bytes().unwrap()).unwrap();
    let mut resumed = Trainer::resume(saved, None, tiny_train(3, 4)).unwrap();
    let rest = resumed.run(&train, &[], None).unwrap();

    assert_eq!(resumed.net.params(), straight.net.params());
    assert_eq!(rest.history[..], full.history[1..]);
}

#[test]
fn epoch_batches_include_trailing_partial_batch() {
    let train = synth_samples(3, 5);
    // 3 images × 6 pairs = 18 samples in batches of 4 → 5 steps.
    let mut t = trainer(2, 5);
    t.cfg.batch_size = 4;
    let stats = t.train_epoch(&train).unwrap();
    assert_eq!((stats.samples, stats.steps), (18, 5));

    let mut t = trainer(2, 5);
    t.cfg.ablation = Ablation {
        use_fmaug: false,
        ..Ablation::FULL
    };
    let stats = t.train_epoch(&train).unwrap();
    assert_eq!((stats.samples, stats.steps), (3, 2));
}

#[test]
fn without_ssl_objective_is_segmentation_only() {
    let train = synth_samples(2, 6);
    let mut t = trainer(2, 6);
    t.cfg.ablation.use_ssl = false;
    let stats = t.train_epoch(&train).unwrap();
    assert!((stats.l_total - stats.l_seg).abs() < 1e-12);
    assert!(stats.l_sel > 0.0);

    let mut t = trainer(2, 6);
    let stats = t.train_epoch(&train).unwrap();
    assert!((stats.l_total - (stats.l_sel + stats.l_seg)).abs() < 1e-12);
}

#[test]
fn attention_flag_must_match_network() {
    let mut cfg = tiny_train(2, 0);
    cfg.ablation.use_att = false;
    assert!(Trainer::new(CoupledNetwork::new(tiny_model(), 0).unwrap(), cfg).is_err());
}

#[test]
fn diverging_run_reports_epoch_and_step() {
    let train = synth_samples(2, 7);
    let mut t = trainer(2, 7);
    t.net.params_mut()[0].data_mut()[0] = f64::NAN;
    match t.train_epoch(&train) {
        Err(Error::NonFinite { epoch, step, .. }) => assert_eq!((epoch, step), (0, 0)),
        other => panic!("expected NonFinite, got {other:?}"),
    }
}

#[test]
fn best_checkpoint_tracks_validation_maximum() {
    let train = synth_samples(2, 8);
    let mut t = trainer(3, 8);
    let fit = t.run(&train, &train[..1], None).unwrap();
    let best = fit.history.iter().map(|r| r.val_dice).fold(f64::NEG_INFINITY, f64::max);
    let first_best = fit.history.iter().position(|r| r.val_dice == best).unwrap();
    assert_eq!(fit.best.val_dice, Some(best));
    assert_eq!(fit.best.epoch, first_best + 1);
    assert!(fit.best.optimizer.is_none());
    assert!(fit.last.optimizer.is_some());
    assert_eq!(fit.last.epoch, 3);
}

#[test]
fn log_lines_are_json_records() {
    let train = synth_samples(2, 9);
    let mut log = Vec::new();
    let fit = trainer(2, 9).run(&train, &[], Some(&mut log)).unwrap();
    let text = String::from_utf8(log).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    let v: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
    assert_eq!(v["epoch"], 1);
    assert_eq!(v["lr"].as_f64(), Some(fit.history[1].lr));
    for key in ["l_sel", "l_seg", "l_total", "val_dice", "val_mcc"] {
        assert!(v[key].is_f64(), "{key}");
    }
}

struct Oracle;

impl Segmenter for Oracle {
    fn segment(&self, image: &Image) -> freesdg::Result<Prediction> {
        // Channel 0 is read as the probability map; the test feeds masks as images.
        let prob: Vec<f64> = image.plane(0);
        let mask = Mask::new(image.height(), image.width(), prob.iter().map(|p| u8::from(*p >= 0.5)).collect())?;
        Ok(Prediction {
            mask,
            prob,
            resized: false,
        })
    }
}

#[test]
fn perfect_segmenter_scores_one() {
    let samples: Vec<Sample> = synth_samples(3, 10)
        .into_iter()
        .map(|mut s| {
            s.image = Image::new(64, 64, 1, s.mask.to_f64()).unwrap();
            s
        })
        .collect();
    let report = evaluate(&Oracle, &samples).unwrap();
    assert_eq!(report.records.len(), 3);
    assert_eq!(report.mean_dice, 1.0);
    assert_eq!(report.mean_mcc, 1.0);
    assert!(evaluate(&Oracle, &[]).is_err());
}

#[test]
fn prediction_resizes_foreign_inputs() {
    let net = CoupledNetwork::new(tiny_model(), 11).unwrap();
    let img = Image::from_fn(80, 72, 3, |y, x, _| ((x + y) % 9) as f64 / 9.0).unwrap();
    let p = predict(&net, &img, &GaussianParams::ANCHOR).unwrap();
    assert!(p.resized);
    assert_eq!((p.mask.height(), p.mask.width(), p.prob.len()), (80, 72, 80 * 72));
    let img = Image::from_fn(64, 64, 1, |y, x, _| ((x * y) % 7) as f64 / 7.0).unwrap();
    assert!(!predict(&net, &img, &GaussianParams::ANCHOR).unwrap().resized);
}
