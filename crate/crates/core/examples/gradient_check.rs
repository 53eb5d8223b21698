//! Finite-difference check of hand-written backpropagation for a stacked
//! BiLSTM emotion model under each loss, plus the full built-in selfcheck.
//!
//!     cargo run --release --example gradient_check -- --layers 4 --hidden 8

use clap::Parser;
use ecpe::nn::{gradcheck_with_floor, TrainRng};
use ecpe::pipeline::{EmotionModel, EmotionModelConfig, EmotionVariant};
use ecpe::selfcheck::{RNN_EPSILON, RNN_FLOOR};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

#[derive(Parser)]
struct Args {
    #[arg(long, default_value_t = 4)]
    layers: usize,
    #[arg(long, default_value_t = 8)]
    hidden: usize,
    #[arg(long, default_value_t = 6)]
    steps: usize,
    #[arg(long, default_value_t = RNN_EPSILON)]
    epsilon: f64,
    /// Denominator floor of the relative error; entries below it are
    /// compared absolutely.
    #[arg(long, default_value_t = RNN_FLOOR)]
    floor: f64,
}

fn main() -> anyhow::Result<()> {
    let args = Args::parse();
    let mut rng = TrainRng::seed_from_u64(0);
    let x = Array2::from_shape_fn((args.steps, 5), |_| rng.sample(StandardNormal));
    let gold: Vec<usize> = (0..args.steps).map(|_| rng.random_range(0..7)).collect();
    let weights = [1.5, 0.7, 2.0, 1.0, 0.3, 1.2, 0.9];

    for variant in EmotionVariant::ALL {
        let mut cfg = EmotionModelConfig::new(variant, 5);
        cfg.encoder.hidden_size = args.hidden;
        cfg.encoder.num_layers = args.layers;
        let model = EmotionModel::new(cfg, &mut rng)?;
        let (loss, grads) = model.loss_and_gradients(x.view(), &gold, &weights, None)?;
        let report = gradcheck_with_floor(&model, &grads, args.epsilon, args.floor, |m: &EmotionModel| {
            m.loss(m.forward(x.view(), None).unwrap().view(), &gold, &weights)
                .unwrap()
        });
        println!(
            "{variant:>10}  loss {loss:.4}  {} params  max rel error {:.2e}  worst {:?}",
            report.checked, report.max_rel_error, report.worst
        );
    }

    println!();
    let report = ecpe::selfcheck::run();
    for c in &report.checks {
        println!("{} {:<24} {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
    }
    if !report.passed() {
        anyhow::bail!("selfcheck failed");
    }
    Ok(())
}
