//! Anchor and perturbed high-pass views of one synthetic image.
//!
//! ```text
//! cargo run --release --example frequency_views -- [OUT_DIR]
//! ```

use std::path::PathBuf;

use freesdg::data_pipeline::{render_geometry, write_image, SynthConfig};
use freesdg::frequency_views::{extract_view_bank, sample_view_params, GaussianParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let image = render_geometry(&SynthConfig::default(), &mut rng)?.image;
    let perturbed = sample_view_params(&mut rng, 3)?;
    let bank = extract_view_bank(&image, &GaussianParams::ANCHOR, &perturbed)?;

    println!("view  radius  sigma   mean       min       max");
    for v in &bank {
        let d = v.pixels.data();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let (lo, hi) = d.iter().fold((f64::MAX, f64::MIN), |(a, b), x| (a.min(*x), b.max(*x)));
        println!(
            "{:>4}  {:>6}  {:>5.2}  {:>9.2e}  {:>8.4}  {:>8.4}",
            v.view_index,
            v.params.radius(),
            v.params.sigma(),
            mean,
            lo,
            hi
        );
    }

    if let Some(dir) = out {
        std::fs::create_dir_all(&dir)?;
        write_image(&image, &dir.join("input.png"))?;
        for v in &bank {
            // Views are signed; shift them around mid-gray for display.
            let shown = v.pixels.map(|x| 0.5 + 2.0 * x);
            write_image(&shown, &dir.join(format!("view_{}.png", v.view_index)))?;
        }
        println!("wrote PNGs to {}", dir.display());
    }
    Ok(())
}
