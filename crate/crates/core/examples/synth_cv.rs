//! Cross-validate on a synthetic planted-box dataset.
//!
//! `cargo run --release --example synth_cv -- [lr] [sgd|adam] [epochs]`

use stemil::data::{synth_generate, SynthConfig};
use stemil::train::OptimizerKind;
use stemil::{cross_validate, TrainConfig};

fn main() -> stemil::Result<()> {
    let mut args = std::env::args().skip(1);
    let lr = args.next().and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let optimizer = match args.next().as_deref() {
        Some("adam") => OptimizerKind::Adam,
        _ => OptimizerKind::Sgd,
    };
    let epochs = args.next().and_then(|s| s.parse().ok()).unwrap_or(500);
    let data = synth_generate(&SynthConfig::default())?;
    let config = TrainConfig {
        trees: 10,
        depth: 4,
        embedding_dim: 4,
        epochs,
        lr,
        optimizer,
        ..Default::default()
    };
    let result = cross_validate(&data.dataset, &config)?;
    println!("folds: {:?}", result.accuracies());
    println!(
        "mean {:.3} std {:.3} ({:.1}s)",
        result.mean, result.std, result.runtime_seconds
    );
    Ok(())
}
