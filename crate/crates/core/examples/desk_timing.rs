//! Times desk-profile training steps for each ablation model.
//!
//! `cargo run --release -p burstforge-core --example desk_timing [steps]`

use std::time::Instant;

use burstforge_core::train::{DataSource, TrainConfig, Trainer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps: u64 = std::env::args().nth(1).map_or(Ok(5), |s| s.parse())?;
    for model in [1u8, 6] {
        let mut config = TrainConfig::desk(model)?;
        config.iterations = steps;
        let mut trainer = Trainer::new(config)?;
        let start = Instant::now();
        trainer.run(&DataSource::Charts, |_, _| Ok(()))?;
        let per_step = start.elapsed().as_secs_f64() / steps as f64;
        println!(
            "model {model}: {:.1} ms/step, batch {}, {} parameters",
            per_step * 1e3,
            trainer.config().batch_size,
            trainer.params().scalar_count()
        );
    }
    Ok(())
}
