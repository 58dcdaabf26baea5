//! Compares backpropagated gradients with central finite differences on a
//! tiny network.

use freesdg::losses::{total_loss, LossConfig};
use freesdg::network::{CoupledNetwork, ModelConfig};
use freesdg::nn::Tensor;
use freesdg::trainer::batch_gradients;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> freesdg::Result<()> {
    let cfg = ModelConfig {
        depth: 2,
        base_channels: 4,
        image_size: 16,
        ..ModelConfig::desk()
    };
    let mut net = CoupledNetwork::new(cfg, 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut draw = |shape: [usize; 4], lo: f64, hi: f64| {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect())
    };
    let x = draw([1, 3, 16, 16], -1.0, 1.0)?;
    let target = draw([1, 3, 16, 16], -0.5, 0.5)?;
    let mask = draw([1, 1, 16, 16], 0.0, 1.0)?;
    let mask = Tensor::from_vec(mask.shape(), mask.data().iter().map(|v| f64::from(*v > 0.7)).collect())?;
    let loss = LossConfig::default();

    let (terms, grads) = batch_gradients(&net, x.clone(), &target, &mask, &loss, true)?;
    println!("L_sel {:.5}  L_seg {:.5}", terms.l_sel, terms.l_seg);
    let h = 1e-6;
    for t in 0..net.params().len() {
        let name = net.param_names()[t].clone();
        let analytic = grads[t].as_ref().expect("every parameter gets a gradient");
        // A few entries per tensor keep the example quick.
        let idx: Vec<usize> = (0..analytic.len()).step_by((analytic.len() / 3).max(1)).take(3).collect();
        let mut worst = 0.0_f64;
        for &i in &idx {
            let orig = net.params()[t].data()[i];
            let mut eval = |v: f64| -> freesdg::Result<f64> {
                net.params_mut()[t].data_mut()[i] = v;
                let (r, p) = net.infer(x.clone())?;
                Ok(total_loss(&r, &p, &target, &mask, &loss)?.total)
            };
            let numeric = (eval(orig + h)? - eval(orig - h)?) / (2.0 * h);
            eval(orig)?;
            let a = analytic.data()[i];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8));
        }
        println!("{name:<40} max rel err {worst:.2e}");
    }
    Ok(())
}
