//! Trains desk-profile models (default 1 and 6) on generated charts and compares them
//! on a fixed validation set.
//!
//! `cargo run --release -p burstforge-core --example desk_ablation [iterations] [lr] [batch] [models]`

use std::time::Instant;

use burstforge_core::burstgen::{NoiseLevel, OffsetMode};
use burstforge_core::metrics::Domain;
use burstforge_core::train::{chart_samples, evaluate_reference, run_ablation, DataSource, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut base = TrainConfig::desk(6)?;
    if let Some(v) = args.first() {
        base.iterations = v.parse()?;
    }
    if let Some(v) = args.get(1) {
        base.learning_rate = v.parse()?;
    }
    if let Some(v) = args.get(2) {
        base.batch_size = v.parse()?;
    }
    let models: Vec<u8> = match args.get(3) {
        Some(v) => v.split(',').map(str::parse).collect::<Result<_, _>>()?,
        None => vec![1, 6],
    };
    let validation = chart_samples(100, base.net.burst_len, base.patch, NoiseLevel::TrainingRange, OffsetMode::PerFrame, 2024)?;
    let reference = evaluate_reference(&validation, Domain::Gamma)?;
    println!("reference frame: {:.3} dB / {:.4}", reference.psnr, reference.ssim);
    let start = Instant::now();
    let results = run_ablation(&models, &base, &DataSource::Charts, &validation, |id, r| {
        if (r.iteration + 1) % 100 == 0 {
            println!(
                "model {id} it {} loss {:.5} basic {:.5} ({:.0}s)",
                r.iteration + 1,
                r.total,
                r.basic,
                start.elapsed().as_secs_f64()
            );
        }
    })?;
    for r in results {
        println!("model {}: {:.3} dB / {:.4}", r.model_id, r.validation.psnr, r.validation.ssim);
    }
    Ok(())
}
