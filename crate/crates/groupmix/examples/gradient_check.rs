//! Verify the analytic gradients of the MLP engine against central finite
//! differences, both on a single hand-built model and over a sweep of random
//! small architectures.
//!
//! ```bash
//! cargo run --release --example gradient_check
//! ```

use groupmix::cli::gradient_sweep;
use groupmix::nn::{one_hot, Activation, LayerSpec, Mlp};
use groupmix::rng::stream;
use rand::Rng;

fn main() -> groupmix::Result<()> {
    // One explicit model first.
    let mut rng = stream(7, "example-init", &[]);
    let mlp = Mlp::init(
        vec![
            LayerSpec::new(4, 12, Activation::Relu),
            LayerSpec::new(12, 8, Activation::Relu),
            LayerSpec::new(8, 3, Activation::Identity),
        ],
        &mut rng,
    )?;
    let inputs: Vec<Vec<f64>> = (0..5)
        .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let targets: Vec<Vec<f64>> = (0..5).map(|i| one_hot(i % 3, 3)).collect();
    let weights = vec![1.0, 0.5, 2.0, 1.0, 1.5];
    let rel = mlp.gradient_check(&inputs, &targets, &weights, 1e-5)?;
    println!("4-12-8-3 model ({} parameters): max relative error {rel:.3e}", mlp.num_params());

    // Then the randomized sweep the verification suite uses.
    let worst = gradient_sweep(100, 1e-5, 0)?;
    println!("100 random architectures: max relative error {worst:.3e}");
    assert!(worst < 1e-5);
    Ok(())
}
