//! In-memory training loop and ablation runner.
//!
//! Training runs in `f32`. Each iteration draws `batch_size` samples, builds
//! one graph per sample, scales each loss by `1/batch_size`, accumulates the
//! gradients into the parameter store and takes one Adam step. Every random
//! choice comes from a single ChaCha stream seeded by [`TrainConfig::seed`],
//! so two runs with the same configuration and data produce identical
//! parameters.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::burstgen::{synthesize_burst, test_chart, NoiseLevel, OffsetMode, SynthSample, DEFAULT_PATCH, LARGE_OFFSET};
use crate::error::{Error, Result};
use crate::metrics::{mean_scores, score, Domain, Scores};
use crate::net::{build_ablation, KpnNet, NetConfig, DEFAULT_WIDTHS};
use crate::objective::{total_loss, LossConfig};
use crate::optim::{adam_step, lr_schedule, OptimizerState, DEFAULT_INITIAL_LR};
use crate::params::ParamStore;
use crate::tape::Graph;
use crate::tensor::{Real, Tensor};

pub const ITERATIONS_PER_EPOCH: u64 = 2500;
pub const PAPER_ITERATIONS: u64 = 80_000;
pub const PAPER_BATCH: usize = 16;
pub const DESK_ITERATIONS: u64 = 2000;
pub const DESK_BURST_LEN: usize = 4;
pub const DESK_WIDTHS: [usize; 4] = [16, 32, 64, 128];
/// Pre-downsample patch of the desk profile, giving 64x64 training crops.
pub const DESK_PATCH: usize = 256;
pub const DESK_BATCH: usize = 2;
pub const DESK_LEARNING_RATE: f64 = 1.5e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub net: NetConfig,
    pub iterations: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub iterations_per_epoch: u64,
    pub loss: LossConfig,
    pub seed: u64,
    /// Crop size before the 4x downsampling.
    pub patch: usize,
    pub offset_mode: OffsetMode,
    /// Observer cadence for checkpoints; 0 disables.
    pub checkpoint_every: u64,
}

impl TrainConfig {
    /// Full-size settings: 8-frame bursts, 128x128 crops, widths 64..512.
    pub fn paper(model_id: u8) -> Result<Self> {
        Ok(TrainConfig {
            net: build_ablation(model_id)?,
            iterations: PAPER_ITERATIONS,
            batch_size: PAPER_BATCH,
            learning_rate: DEFAULT_INITIAL_LR,
            iterations_per_epoch: ITERATIONS_PER_EPOCH,
            loss: LossConfig::default(),
            seed: 0,
            patch: DEFAULT_PATCH,
            offset_mode: OffsetMode::PerFrame,
            checkpoint_every: 5000,
        })
    }

    /// Reduced settings that train in minutes on one CPU core.
    pub fn desk(model_id: u8) -> Result<Self> {
        let mut net = build_ablation(model_id)?;
        net.burst_len = DESK_BURST_LEN;
        net.widths = DESK_WIDTHS.to_vec();
        Ok(TrainConfig {
            net,
            iterations: DESK_ITERATIONS,
            batch_size: DESK_BATCH,
            learning_rate: DESK_LEARNING_RATE,
            iterations_per_epoch: ITERATIONS_PER_EPOCH,
            loss: LossConfig::default(),
            seed: 0,
            patch: DESK_PATCH,
            offset_mode: OffsetMode::PerFrame,
            checkpoint_every: 0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.loss.validate()?;
        if self.batch_size == 0 {
            return Err(Error::invalid("train_config", "batch size must be at least 1"));
        }
        if self.iterations_per_epoch == 0 {
            return Err(Error::invalid("train_config", "iterations per epoch must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("train_config", format!("learning rate {} must be positive", self.learning_rate)));
        }
        let side = self.patch / crate::burstgen::DOWNSAMPLE;
        let m = self.net.size_multiple();
        if !self.patch.is_multiple_of(crate::burstgen::DOWNSAMPLE) || side == 0 || !side.is_multiple_of(m) {
            return Err(Error::invalid(
                "train_config",
                format!("patch {} must downsample to a positive multiple of {m}", self.patch),
            ));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            net: NetConfig {
                widths: DEFAULT_WIDTHS.to_vec(),
                ..NetConfig::default()
            },
            ..TrainConfig::paper(6).expect("model 6 exists")
        }
    }
}

/// Where training samples come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Freshly generated test charts, one per sample.
    Charts,
    /// Linear grayscale source images `[H, W]`, each at least `patch + 128` on a side.
    Images(Vec<Tensor<f64>>),
    /// Pre-synthesized samples, drawn uniformly with replacement.
    Cached(Vec<SynthSample>),
}

impl DataSource {
    fn draw(&self, config: &TrainConfig, rng: &mut ChaCha8Rng, item_seed: u64) -> Result<SynthSample> {
        match self {
            DataSource::Charts => {
                let chart = test_chart(config.patch + 2 * LARGE_OFFSET as usize, item_seed);
                synthesize_burst(
                    &chart,
                    config.net.burst_len,
                    NoiseLevel::TrainingRange,
                    config.patch,
                    config.offset_mode,
                    item_seed,
                )
            }
            DataSource::Images(images) => {
                if images.is_empty() {
                    return Err(Error::invalid("train", "image source is empty"));
                }
                let image = &images[rng.random_range(0..images.len())];
                synthesize_burst(
                    image,
                    config.net.burst_len,
                    NoiseLevel::TrainingRange,
                    config.patch,
                    config.offset_mode,
                    item_seed,
                )
            }
            DataSource::Cached(samples) => {
                if samples.is_empty() {
                    return Err(Error::invalid("train", "sample cache is empty"));
                }
                let s = &samples[rng.random_range(0..samples.len())];
                if s.burst_len() != config.net.burst_len {
                    return Err(Error::shape(
                        "train",
                        "burst length",
                        format!("cached sample has {} frames, network expects {}", s.burst_len(), config.net.burst_len),
                    ));
                }
                Ok(s.clone())
            }
        }
    }
}

/// `count` chart-based samples at a fixed noise level or the training range.
pub fn chart_samples(
    count: usize,
    burst_len: usize,
    patch: usize,
    noise: NoiseLevel,
    mode: OffsetMode,
    seed: u64,
) -> Result<Vec<SynthSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let s: u64 = rng.random();
            let chart = test_chart(patch + 2 * LARGE_OFFSET as usize, s);
            synthesize_burst(&chart, burst_len, noise, patch, mode, s)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub iteration: u64,
    pub total: f64,
    pub basic: f64,
    pub anneal_weight: f64,
    pub learning_rate: f64,
}

pub struct Trainer {
    config: TrainConfig,
    net: KpnNet,
    params: ParamStore<f32>,
    optimizer: OptimizerState<f32>,
    rng: ChaCha8Rng,
    iteration: u64,
    log: Vec<LossRecord>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let net = KpnNet::new(config.net.clone())?;
        let params = net.init_params(config.seed)?;
        Self::with_params(config, params)
    }

    /// Start from existing parameters (a fresh optimizer state).
    pub fn with_params(config: TrainConfig, params: ParamStore<f32>) -> Result<Self> {
        config.validate()?;
        let net = KpnNet::new(config.net.clone())?;
        net.check_params(&params)?;
        Ok(Trainer {
            optimizer: OptimizerState::new(config.learning_rate)?,
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x7472_6169_6e5f_7273),
            config,
            net,
            params,
            iteration: 0,
            log: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn net(&self) -> &KpnNet {
        &self.net
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    pub fn into_params(self) -> ParamStore<f32> {
        self.params
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn log(&self) -> &[LossRecord] {
        &self.log
    }

    /// One optimisation step on a freshly drawn batch.
    pub fn step(&mut self, data: &DataSource) -> Result<LossRecord> {
        let t = self.iteration;
        let epoch = t / self.config.iterations_per_epoch;
        self.optimizer.learning_rate = lr_schedule(epoch, self.config.learning_rate);
        let b = self.config.batch_size;
        let seeds: Vec<u64> = (0..b).map(|_| self.rng.random()).collect();
        let inv_b = 1.0 / b as f64;
        let (mut total, mut basic, mut weight) = (0.0, 0.0, 0.0);
        self.params.zero_grad();
        for &item_seed in &seeds {
            let sample = data.draw(&self.config, &mut self.rng, item_seed)?;
            let burst = sample.burst::<f32>()?;
            let noise_map = sample.noise_map_as::<f32>();
            let mut g = Graph::<f32>::new();
            let out = self.net.forward(&mut g, &self.params, &burst, &noise_map)?;
            let gt = g.input(sample.ground_truth.cast());
            let r = out.reconstruction;
            let loss = total_loss(&mut g, r.denoised, r.per_frame, gt, t, &self.config.loss)?;
            let value = g.value(loss.total).item().as_f64();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    iteration: t,
                    batch_seeds: seeds,
                });
            }
            total += value * inv_b;
            basic += g.value(loss.basic).item().as_f64() * inv_b;
            weight = loss.anneal_weight;
            let scaled = g.scale(loss.total, f32::of(inv_b));
            g.backward(scaled)?;
            self.params.accumulate_grads(&g)?;
        }
        adam_step(&mut self.params, &mut self.optimizer)?;
        let record = LossRecord {
            iteration: t,
            total,
            basic,
            anneal_weight: weight,
            learning_rate: self.optimizer.learning_rate,
        };
        self.iteration += 1;
        self.log.push(record);
        Ok(record)
    }

    /// Run the remaining iterations. `observer` sees every step; it is the
    /// place to log, write checkpoints at [`TrainConfig::checkpoint_every`]
    /// or stop early by returning an error.
    pub fn run<F>(&mut self, data: &DataSource, mut observer: F) -> Result<()>
    where
        F: FnMut(&Trainer, &LossRecord) -> Result<()>,
    {
        while self.iteration < self.config.iterations {
            let record = self.step(data)?;
            observer(self, &record)?;
        }
        Ok(())
    }

    /// Whether the observer should checkpoint after the step that produced `record`.
    pub fn checkpoint_due(&self, record: &LossRecord) -> bool {
        let every = self.config.checkpoint_every;
        (every > 0 && (record.iteration + 1).is_multiple_of(every)) || record.iteration + 1 == self.config.iterations
    }
}

/// Denoise every sample with `params` and average the scores.
pub fn evaluate_params<T: Real>(
    net: &KpnNet,
    params: &ParamStore<T>,
    samples: &[SynthSample],
    domain: Domain,
) -> Result<Scores> {
    let scores = samples
        .iter()
        .map(|s| {
            let (denoised, _) = net.denoise(params, &s.burst::<T>()?, &s.noise_map_as::<T>())?;
            score(&denoised.cast(), &s.ground_truth, domain)
        })
        .collect::<Result<Vec<_>>>()?;
    mean_scores(&scores).ok_or_else(|| Error::invalid("evaluate", "no samples"))
}

/// Scores of the noisy reference frame itself.
pub fn evaluate_reference(samples: &[SynthSample], domain: Domain) -> Result<Scores> {
    let scores = samples
        .iter()
        .map(|s| score(&s.noisy.index0(0), &s.ground_truth, domain))
        .collect::<Result<Vec<_>>>()?;
    mean_scores(&scores).ok_or_else(|| Error::invalid("evaluate", "no samples"))
}

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub model_id: u8,
    pub params: ParamStore<f32>,
    pub final_loss: f64,
    pub validation: Scores,
}

/// Train each ablation model from `base` on the same data stream and score
/// it on `validation`. Only the switches of `base.net` change between runs;
/// burst length and widths are kept.
pub fn run_ablation(
    model_ids: &[u8],
    base: &TrainConfig,
    data: &DataSource,
    validation: &[SynthSample],
    mut observer: impl FnMut(u8, &LossRecord),
) -> Result<Vec<AblationResult>> {
    model_ids
        .iter()
        .map(|&id| {
            let switches = build_ablation(id)?;
            let config = TrainConfig {
                net: NetConfig {
                    channel_attention: switches.channel_attention,
                    spatial_attention: switches.spatial_attention,
                    residual_branch: switches.residual_branch,
                    ..base.net.clone()
                },
                ..base.clone()
            };
            let mut trainer = Trainer::new(config)?;
            trainer.run(data, |_, r| {
                observer(id, r);
                Ok(())
            })?;
            let validation = evaluate_params(trainer.net(), trainer.params(), validation, Domain::Gamma)?;
            let final_loss = trainer.log().last().map_or(f64::NAN, |r| r.total);
            Ok(AblationResult {
                model_id: id,
                params: trainer.into_params(),
                final_loss,
                validation,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> TrainConfig {
        let mut c = TrainConfig::desk(6).unwrap();
        c.net.burst_len = 2;
        c.net.widths = alloc::vec![4, 8];
        c.patch = 64;
        c.iterations = 3;
        c
    }

    #[test]
    fn profiles_validate() {
        assert!(TrainConfig::paper(6).unwrap().validate().is_ok());
        assert!(TrainConfig::desk(1).unwrap().validate().is_ok());
        let mut bad = tiny();
        bad.patch = 60;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn tiny_run_is_deterministic() {
        let data = DataSource::Charts;
        let mut a = Trainer::new(tiny()).unwrap();
        a.run(&data, |_, _| Ok(())).unwrap();
        let mut b = Trainer::new(tiny()).unwrap();
        b.run(&data, |_, _| Ok(())).unwrap();
        assert_eq!(a.log(), b.log());
        for ((na, ta), (nb, tb)) in a.params().iter().zip(b.params().iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta.data(), tb.data());
        }
        assert_eq!(a.iteration(), 3);
        assert!(a.log().iter().all(|r| r.total.is_finite()));
    }

    #[test]
    fn cached_burst_length_checked() {
        let samples = chart_samples(1, 3, 64, NoiseLevel::TrainingRange, OffsetMode::PerFrame, 1).unwrap();
        let mut t = Trainer::new(tiny()).unwrap();
        assert!(t.step(&DataSource::Cached(samples)).is_err());
    }
}
