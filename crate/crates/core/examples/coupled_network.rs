//! Builds the desk-scale coupled network and prints its layout.

use freesdg::network::{CoupledNetwork, GateMode, ModelConfig};
use freesdg::nn::{Graph, Tensor};

fn main() -> freesdg::Result<()> {
    let cfg = ModelConfig::desk();
    let net = CoupledNetwork::new(cfg.clone(), 0)?;
    println!("{cfg:?}");
    println!("{} tensors, {} parameters", net.params().len(), net.param_count());

    let batch = Tensor::full([2, cfg.in_channels, cfg.image_size, cfg.image_size], 0.1);
    let mut g = Graph::new();
    let out = net.forward(&mut g, batch, GateMode::Learned)?;
    for (l, e) in out.encoder.iter().enumerate() {
        println!("encoder level {l}: {:?}", g.value(*e).shape());
    }
    for (i, (s, t)) in out.f_sel.iter().zip(&out.f_seg).enumerate() {
        println!("decoder step {}: f_sel {:?}, f_seg {:?}", i + 1, g.value(*s).shape(), g.value(*t).shape());
    }
    println!("recon {:?}, seg_prob {:?}", g.value(out.recon).shape(), g.value(out.seg_prob).shape());
    for (i, gate) in out.channel_gates.iter().enumerate() {
        let v = g.value(*gate).data();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        println!("channel gate {}: {} channels, mean {:.3}", i + 1, v.len() / 2, mean);
    }
    Ok(())
}
