//! Overfits the desk profile on a handful of cached bursts and reports the
//! PSNR gain over the noisy reference.
//!
//! `cargo run --release -p burstforge-core --example overfit [model] [iterations] [lr] [batch] [gain] [iterations_per_epoch] [alpha]`

use std::time::Instant;

use burstforge_core::burstgen::{GainPreset, NoiseLevel, OffsetMode};
use burstforge_core::metrics::Domain;
use burstforge_core::train::{chart_samples, evaluate_params, evaluate_reference, DataSource, TrainConfig, Trainer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: &str| args.get(i).cloned().unwrap_or_else(|| d.to_string());
    let model: u8 = arg(0, "6").parse()?;
    let mut config = TrainConfig::desk(model)?;
    config.iterations = arg(1, "2000").parse()?;
    config.learning_rate = arg(2, &config.learning_rate.to_string()).parse()?;
    config.batch_size = arg(3, &config.batch_size.to_string()).parse()?;
    let gain = GainPreset::gain(arg(4, "2").parse()?)?;
    config.iterations_per_epoch = arg(5, &config.iterations_per_epoch.to_string()).parse()?;
    config.loss.alpha = arg(6, &config.loss.alpha.to_string()).parse()?;
    let samples = chart_samples(8, config.net.burst_len, config.patch, NoiseLevel::Fixed(gain), OffsetMode::PerFrame, 11)?;
    let reference = evaluate_reference(&samples, Domain::Gamma)?;
    let data = DataSource::Cached(samples.clone());
    let mut trainer = Trainer::new(config)?;
    let start = Instant::now();
    trainer.run(&data, |t, r| {
        if (r.iteration + 1) % 250 == 0 {
            let s = evaluate_params(t.net(), t.params(), &samples, Domain::Gamma)?;
            println!(
                "{:>5} loss {:.5} basic {:.5} psnr {:.2} (ref {:.2}) {:.0}s",
                r.iteration + 1,
                r.total,
                r.basic,
                s.psnr,
                reference.psnr,
                start.elapsed().as_secs_f64()
            );
        }
        Ok(())
    })?;
    Ok(())
}
