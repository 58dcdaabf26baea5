//! Writes a two-domain synthetic dataset to disk and reloads it through its
//! manifest.
//!
//! ```text
//! cargo run --release --example synthetic_dataset -- OUT_DIR
//! ```

use freesdg::data_pipeline::{generate_synthetic, load_dataset, Split, SynthConfig};

fn main() -> freesdg::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "synthetic".into());
    let cfg = SynthConfig {
        count: 6,
        val_fraction: 0.2,
        seed: 1,
        ..SynthConfig::default()
    }
    .with_domains(2);
    let manifest = generate_synthetic(&cfg, &out)?;
    println!("manifest: {}", manifest.display());

    let ds = load_dataset(&manifest, Some(cfg.image_size), cfg.channels)?;
    for split in [Split::Train, Split::Val, Split::Test] {
        let part = ds.split(split);
        let fg: f64 = part.iter().map(|s| s.mask.coverage()).sum::<f64>() / part.len().max(1) as f64;
        println!("{split:<5} {:>2} images, mean foreground {:.3}", part.len(), fg);
    }
    println!("domains: {:?}", ds.domains());
    Ok(())
}
