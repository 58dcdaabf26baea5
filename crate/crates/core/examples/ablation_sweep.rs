//! Trains the full model and its three ablations on domain A and reports
//! test DICE on a shifted domain B.

use freesdg::data_pipeline::{synthetic_dataset, Split, SynthConfig};
use freesdg::frequency_views::GaussianParams;
use freesdg::network::{CoupledNetwork, ModelConfig};
use freesdg::trainer::{evaluate, Ablation, NetworkSegmenter, TrainConfig, Trainer};

fn main() -> freesdg::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(6);
    let ds = synthetic_dataset(
        &SynthConfig {
            count: 12,
            seed: 4,
            ..SynthConfig::default()
        }
        .with_domains(2),
    )?;
    let (train, test) = (ds.split(Split::Train), ds.split(Split::Test));
    for ablation in [
        Ablation::FULL,
        Ablation::NO_ATT,
        Ablation::NO_SSL_ATT,
        Ablation::NO_FMAUG_SSL_ATT,
    ] {
        let model = ModelConfig {
            depth: 3,
            base_channels: 4,
            attention: ablation.use_att,
            ..ModelConfig::desk()
        };
        let mut cfg = TrainConfig::desk().with_epochs(epochs);
        cfg.ablation = ablation;
        let mut trainer = Trainer::new(CoupledNetwork::new(model, 0)?, cfg)?;
        trainer.run(&train, &[], None)?;
        let report = evaluate(&NetworkSegmenter::new(&trainer.net, GaussianParams::ANCHOR), &test)?;
        println!("{:<22} test DICE {:.4}  MCC {:.4}", ablation.label(), report.mean_dice, report.mean_mcc);
    }
    Ok(())
}
