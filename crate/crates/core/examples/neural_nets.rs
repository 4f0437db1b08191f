//! Fits a small MLP to a 1-D signal with Adam and an exponentially decaying
//! learning rate, using a sinusoidal input encoding.
//!
//! cargo run --release --example neural_nets

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tessgs::nn::{encode, encoded_dim, Activation, Adam, LrSchedule, Mlp};

fn main() -> anyhow::Result<()> {
    let freqs = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut net = Mlp::new(&[encoded_dim(1, freqs), 32, 32, 1], Activation::Identity, 1.0, &mut rng);
    let steps = 2000;
    let mut adam = Adam::new(LrSchedule::Exponential {
        start: 1e-2,
        end: 1e-4,
        total: steps,
    });
    let xs: Vec<f64> = (0..64).map(|i| i as f64 / 63.0).collect();
    let target = |t: f64| (6.0 * t).sin() * (1.0 - t) + 0.3 * t;
    let enc: Vec<f64> = xs.iter().flat_map(|&t| encode(&[t], freqs)).collect();
    let input = Array2::from_shape_vec((xs.len(), encoded_dim(1, freqs)), enc)?;
    for step in 0..steps {
        let cache = net.forward(input.view())?;
        let pred = cache.output();
        let mut g = Array2::zeros((xs.len(), 1));
        let mut loss = 0.0;
        for (i, &t) in xs.iter().enumerate() {
            let r = pred[[i, 0]] - target(t);
            loss += r * r / xs.len() as f64;
            g[[i, 0]] = 2.0 * r / xs.len() as f64;
        }
        let mut grads = vec![0.0; net.num_params()];
        net.backward(&cache, g.view(), &mut grads)?;
        adam.step(net.params_mut(), &grads, step);
        if step % 400 == 0 || step + 1 == steps {
            println!("step {step:>4}  mse {loss:.2e}  lr {:.1e}", adam.schedule.at(step));
        }
    }
    Ok(())
}
