//! Desk-scale training on synthetic images with a JSON-lines log on stdout.
//!
//! ```text
//! cargo run --release --example train_desk -- [EPOCHS] [CHECKPOINT]
//! ```

use freesdg::data_pipeline::{synthetic_dataset, Split, SynthConfig};
use freesdg::network::{CoupledNetwork, ModelConfig};
use freesdg::trainer::{TrainConfig, Trainer};

fn main() -> freesdg::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(10);
    let ckpt_path = args.next();

    let ds = synthetic_dataset(&SynthConfig {
        count: 10,
        val_fraction: 0.2,
        seed: 7,
        ..SynthConfig::default()
    })?;
    let (train, val) = (ds.split(Split::Train), ds.split(Split::Val));
    let cfg = TrainConfig::desk().with_epochs(epochs);
    let mut trainer = Trainer::new(CoupledNetwork::new(ModelConfig::desk(), cfg.seed)?, cfg)?;
    let fit = trainer.run(&train, &val, Some(&mut std::io::stdout()))?;
    eprintln!(
        "best val DICE {:.4} after epoch {}",
        fit.best.val_dice.unwrap_or(f64::NAN),
        fit.best.epoch
    );
    if let Some(path) = ckpt_path {
        fit.best.save(&path)?;
        eprintln!("saved {path}");
    }
    Ok(())
}
