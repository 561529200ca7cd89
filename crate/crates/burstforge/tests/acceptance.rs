//! Acceptance suite. Runs without the libtest harness and prints one
//! `PASS`/`FAIL` line per criterion; exits non-zero if any criterion fails.
//!
//! `cargo test --release -p burstforge --test acceptance`

use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use burstforge_core::adaconv::{reconstruct, reconstruct_kernel_only, KernelField};
use burstforge_core::burstgen::{add_noise, sample_offsets, GainPreset, NoiseLevel, OffsetMode, GAINS, OFFSET_POISSON_LAMBDA};
use burstforge_core::gradcheck::suite::run_suite;
use burstforge_core::metrics::{psnr, ssim, Domain};
use burstforge_core::net::{Burst, KpnNet, NetConfig, NoiseMap};
use burstforge_core::objective::{anneal_weight, LossConfig};
use burstforge_core::train::{
    chart_samples, evaluate_params, evaluate_reference, run_ablation, DataSource, TrainConfig, Trainer,
};
use burstforge_core::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ADACONV_INSTANCES: usize = 200;
const ADACONV_TOL: f64 = 1e-12;
const ADACONV_BUDGET: Duration = Duration::from_secs(10);
const GRADIENT_BUDGET: Duration = Duration::from_secs(120);
const ANNEAL_T: u64 = 80_000;
const ANNEAL_REL_TOL: f64 = 1e-8;
/// Relative slack on `w(t+1)/w(t) = alpha`; `pow` is within an ulp or so.
const ANNEAL_RATIO_TOL: f64 = 1e-14;
const NOISE_SAMPLES: usize = 1_000_000;
const NOISE_REL_TOL: f64 = 0.02;
const NOISE_BUDGET: Duration = Duration::from_secs(30);
const OFFSET_BURSTS: usize = 100_000;
const OFFSET_BURST_LEN: usize = 8;
const OFFSET_ABS_TOL: f64 = 0.01;
const OVERFIT_MIN_GAIN_DB: f64 = 3.0;
const OVERFIT_BUDGET: Duration = Duration::from_secs(15 * 60);
const VALIDATION_COUNT: usize = 100;
const PSNR_TOL: f64 = 1e-9;
const SSIM_PAIRS: usize = 50;
const SSIM_TOL: f64 = 1e-6;
const REPRO_ITERATIONS: u64 = 100;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

type Check = fn() -> Result<Outcome, Box<dyn std::error::Error>>;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

fn naive_adaptive(frame: &[f64], kernels: &[f64], h: usize, w: usize, s: usize) -> Vec<f64> {
    let r = (s / 2) as isize;
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            for dy in 0..s {
                for dx in 0..s {
                    let sy = (y as isize + dy as isize - r).clamp(0, h as isize - 1) as usize;
                    let sx = (x as isize + dx as isize - r).clamp(0, w as isize - 1) as usize;
                    out[y * w + x] += kernels[(dy * s + dx) * h * w + y * w + x] * frame[sy * w + sx];
                }
            }
        }
    }
    out
}

fn c1_adaptive_conv_oracle() -> Result<Outcome, Box<dyn std::error::Error>> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..ADACONV_INSTANCES {
        let (h, w) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let s = [1, 3, 5][rng.random_range(0..3)];
        let frame = random(&mut rng, &[h, w], -1.0, 1.0);
        let kernels = random(&mut rng, &[s * s, h, w], -1.0, 1.0);
        let mut g = Graph::new();
        let (f, k) = (g.input(frame.clone()), g.input(kernels.clone()));
        let y = g.adaptive_conv(f, k)?;
        let expect = naive_adaptive(frame.data(), kernels.data(), h, w, s);
        for (a, b) in g.data(y).iter().zip(&expect) {
            worst = worst.max((a - b).abs());
        }
    }
    let took = start.elapsed();
    Ok(outcome(
        worst <= ADACONV_TOL && took < ADACONV_BUDGET,
        format!("{ADACONV_INSTANCES} instances, max abs error {worst:.1e} (tol {ADACONV_TOL:.0e}), {took:.2?}"),
    ))
}

fn c2_gradient_suite() -> Result<Outcome, Box<dyn std::error::Error>> {
    let start = Instant::now();
    let cases = run_suite()?;
    let took = start.elapsed();
    let failed: Vec<&str> = cases.iter().filter(|c| !c.report.passed()).map(|c| c.name.as_str()).collect();
    let worst = cases
        .iter()
        .max_by(|a, b| a.report.worst_ratio.total_cmp(&b.report.worst_ratio))
        .map_or(String::new(), |c| format!("{} ratio {:.2}", c.name, c.report.worst_ratio));
    Ok(outcome(
        failed.is_empty() && took < GRADIENT_BUDGET,
        format!("{} cases, failed {failed:?}, worst {worst}, {took:.2?}", cases.len()),
    ))
}

fn c3_reconstruction_identities() -> Result<Outcome, Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (n, h, w, s) = (8, 9, 7, 5);
    let reference = random(&mut rng, &[h, w], 0.0, 1.0);
    let burst = Tensor::stack(&vec![reference.clone(); n])?;
    let mut g = Graph::new();
    let b = g.input(burst.clone());
    let k = g.input(KernelField::<f64>::center_delta(n, s, h, w)?.values);
    let r = g.input(random(&mut rng, &[n, h, w], -1.0, 1.0));
    let l = g.input(Tensor::full(&[n, h, w], 1e3));
    let out = reconstruct(&mut g, b, k, r, l)?;
    let delta_ok = g.data(out.per_frame) == burst.data() && g.data(out.denoised) == reference.data();

    let noisy = random(&mut rng, &[n, h, w], 0.0, 1.0);
    let mut g = Graph::new();
    let b = g.input(noisy);
    let k = g.input(random(&mut rng, &[n, s * s, h, w], -0.5, 0.5));
    let plain = reconstruct_kernel_only(&mut g, b, k)?;
    let filtered = g.adaptive_conv(b, k)?;
    let l = g.input(random(&mut rng, &[n, h, w], -5.0, 5.0));
    let full = reconstruct(&mut g, b, k, filtered, l)?;
    let kernel_only_ok =
        g.data(plain.per_frame) == g.data(full.per_frame) && g.data(plain.denoised) == g.data(full.denoised);
    Ok(outcome(
        delta_ok && kernel_only_ok,
        format!("center delta + saturated weights exact: {delta_ok}; kernel-only == blend with R = filtered: {kernel_only_ok}"),
    ))
}

fn c4_anneal_schedule() -> Result<Outcome, Box<dyn std::error::Error>> {
    let cfg = LossConfig::default();
    let w0 = anneal_weight(0, &cfg);
    let mut worst_ratio = 0.0f64;
    for t in (0..ANNEAL_T).step_by(97).chain([ANNEAL_T - 1]) {
        let ratio = anneal_weight(t + 1, &cfg) / anneal_weight(t, &cfg);
        worst_ratio = worst_ratio.max((ratio / cfg.alpha - 1.0).abs());
    }
    let got = anneal_weight(ANNEAL_T, &cfg);
    let direct = cfg.beta * (ANNEAL_T as f64 * (-(1.0 - cfg.alpha)).ln_1p()).exp();
    let rel = (got / direct - 1.0).abs();
    Ok(outcome(
        w0 == 100.0 && worst_ratio <= ANNEAL_RATIO_TOL && rel <= ANNEAL_REL_TOL && (got - 1.12e-5).abs() < 0.01e-5,
        format!(
            "w(0) = {w0}, max |ratio/alpha - 1| = {worst_ratio:.1e}, w({ANNEAL_T}) = {got:.6e} vs {direct:.6e} (rel {rel:.1e})"
        ),
    ))
}

/// Mean is compared against `y` with slack `2% * sigma`, variance against
/// `sigma_r^2 + sigma_s * y` with 2% relative slack.
fn c5_noise_moments() -> Result<Outcome, Box<dyn std::error::Error>> {
    let start = Instant::now();
    let mut worst_mean = 0.0f64;
    let mut worst_var = 0.0f64;
    for (gi, preset) in GAINS.iter().enumerate() {
        for (yi, y) in [0.0, 0.25, 1.0].into_iter().enumerate() {
            let clean = Tensor::full(&[NOISE_SAMPLES], y);
            let mut rng = ChaCha8Rng::seed_from_u64((gi * 3 + yi) as u64);
            let noisy = add_noise(&clean, preset, &mut rng);
            let n = NOISE_SAMPLES as f64;
            let mean = noisy.data().iter().sum::<f64>() / n;
            let var = noisy.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let expect = preset.variance(y);
            worst_mean = worst_mean.max((mean - y).abs() / expect.sqrt());
            worst_var = worst_var.max((var / expect - 1.0).abs());
        }
    }
    let took = start.elapsed();
    Ok(outcome(
        worst_mean <= NOISE_REL_TOL && worst_var <= NOISE_REL_TOL && took < NOISE_BUDGET,
        format!(
            "4 gains x 3 levels, {NOISE_SAMPLES} samples: worst |mean - y|/sigma {worst_mean:.4}, worst variance error {:.3}%, {took:.2?}",
            100.0 * worst_var
        ),
    ))
}

fn poisson_expected_large_fraction(n: usize) -> f64 {
    let lambda = OFFSET_POISSON_LAMBDA;
    let mut pmf = (-lambda).exp();
    let mut total = 0.0;
    for k in 0..200u32 {
        if k > 0 {
            pmf *= lambda / k as f64;
        }
        total += pmf * (k as usize).min(n) as f64 / n as f64;
    }
    total
}

fn c6_offset_statistics() -> Result<Outcome, Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut large, mut total) = (0usize, 0usize);
    for _ in 0..OFFSET_BURSTS {
        let spec = sample_offsets(OFFSET_BURST_LEN, OffsetMode::PerFrame, &mut rng)?;
        large += spec.large[1..].iter().filter(|&&l| l).count();
        total += OFFSET_BURST_LEN - 1;
    }
    let freq = large as f64 / total as f64;
    let expect = poisson_expected_large_fraction(OFFSET_BURST_LEN);
    Ok(outcome(
        (freq - expect).abs() <= OFFSET_ABS_TOL,
        format!("{OFFSET_BURSTS} bursts of {OFFSET_BURST_LEN}: large fraction {freq:.5} vs E[min(n,8)]/8 = {expect:.5}"),
    ))
}

fn c7_overfit() -> Result<Outcome, Box<dyn std::error::Error>> {
    let start = Instant::now();
    let config = TrainConfig::desk(6)?;
    let gain = NoiseLevel::Fixed(GainPreset::gain(2)?);
    let samples = chart_samples(8, config.net.burst_len, config.patch, gain, OffsetMode::PerFrame, 11)?;
    let reference = evaluate_reference(&samples, Domain::Gamma)?;
    let data = DataSource::Cached(samples.clone());
    let mut trainer = Trainer::new(config)?;
    trainer.run(&data, |_, _| Ok(()))?;
    let trained = evaluate_params(trainer.net(), trainer.params(), &samples, Domain::Gamma)?;
    let took = start.elapsed();
    let gain_db = trained.psnr - reference.psnr;
    Ok(outcome(
        gain_db >= OVERFIT_MIN_GAIN_DB && took <= OVERFIT_BUDGET,
        format!(
            "model 6, {} iterations on 8 bursts: {:.2} dB vs reference {:.2} dB ({gain_db:+.2} dB), {took:.0?}",
            trainer.iteration(),
            trained.psnr,
            reference.psnr
        ),
    ))
}

fn c8_ablation_direction() -> Result<Outcome, Box<dyn std::error::Error>> {
    let start = Instant::now();
    let base = TrainConfig::desk(6)?;
    let validation = chart_samples(
        VALIDATION_COUNT,
        base.net.burst_len,
        base.patch,
        NoiseLevel::TrainingRange,
        OffsetMode::PerFrame,
        2024,
    )?;
    let results = run_ablation(&[1, 6], &base, &DataSource::Charts, &validation, |_, _| {})?;
    let (m1, m6) = (results[0].validation, results[1].validation);
    Ok(outcome(
        m6.psnr >= m1.psnr,
        format!(
            "{VALIDATION_COUNT} validation bursts: model 1 {:.3} dB / {:.4}, model 6 {:.3} dB / {:.4}, {:.0?}",
            m1.psnr,
            m1.ssim,
            m6.psnr,
            m6.ssim,
            start.elapsed()
        ),
    ))
}

fn c9_channel_audit() -> Result<Outcome, Box<dyn std::error::Error>> {
    let config = NetConfig::default();
    let net = KpnNet::new(config.clone())?;
    let params = net.init_params::<f32>(0)?;
    let out_channels = |name: &str| params.get(name).map(|t| t.shape()[0]);
    let kr = out_channels("head_kr.conv2.weight");
    let wh = out_channels("head_w.conv2.weight");
    let mut g = Graph::new();
    let (h, w) = (16, 16);
    let burst = Burst::new(Tensor::full(&[config.burst_len, h, w], 0.5f32))?;
    let noise = NoiseMap {
        sigma: Tensor::full(&[h, w], 0.01f32),
    };
    let out = net.forward(&mut g, &params, &burst, &noise)?;
    let b = out.bundle;
    let shapes = (
        g.shape(b.kernels).to_vec(),
        b.residuals.map(|r| g.shape(r).to_vec()),
        b.logits.map(|l| g.shape(l).to_vec()),
    );
    let pass = config.burst_len == 8
        && config.kernel_size == 5
        && config.kr_channels() == 208
        && kr == Some(208)
        && wh == Some(8)
        && shapes == (vec![8, 25, h, w], Some(vec![8, h, w]), Some(vec![8, h, w]));
    Ok(outcome(
        pass,
        format!(
            "N=8 S=5: head_kr {kr:?} channels -> kernels {:?} + residuals {:?}, head_w {wh:?} -> {:?}",
            shapes.0, shapes.1, shapes.2
        ),
    ))
}

/// SSIM written out window by window, without separable filtering.
fn ssim_reference(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let (h, w) = a.hw();
    let g: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp()).collect();
    let norm: f64 = g.iter().sum::<f64>().powi(2);
    let (c1, c2) = (1e-4, 9e-4);
    let mut total = 0.0;
    for y in 0..=h - 11 {
        for x in 0..=w - 11 {
            let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let k = g[i] * g[j] / norm;
                    let (p, q) = (a.data()[(y + i) * w + x + j], b.data()[(y + i) * w + x + j]);
                    mx += k * p;
                    my += k * q;
                    xx += k * p * p;
                    yy += k * q * q;
                    xy += k * p * q;
                }
            }
            let num = (2.0 * mx * my + c1) * (2.0 * (xy - mx * my) + c2);
            let den = (mx * mx + my * my + c1) * (xx - mx * mx + yy - my * my + c2);
            total += num / den;
        }
    }
    total / ((h - 10) * (w - 10)) as f64
}

fn c10_metrics() -> Result<Outcome, Box<dyn std::error::Error>> {
    let p = psnr(&Tensor::full(&[32, 32], 0.4), &Tensor::full(&[32, 32], 0.5), 1.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let a = random(&mut rng, &[32, 32], 0.0, 1.0);
    let self_ssim = ssim(&a, &a, 1.0)?;
    let mut worst = 0.0f64;
    for _ in 0..SSIM_PAIRS {
        let a = random(&mut rng, &[32, 32], 0.0, 1.0);
        let sigma = rng.random_range(0.01..0.5);
        let jitter = random(&mut rng, &[32, 32], -sigma, sigma);
        let b = Tensor::from_fn(&[32, 32], |i| (a.data()[i] + jitter.data()[i]).clamp(0.0, 1.0));
        worst = worst.max((ssim(&a, &b, 1.0)? - ssim_reference(&a, &b)).abs());
    }
    Ok(outcome(
        (p - 20.0).abs() <= PSNR_TOL && self_ssim == 1.0 && worst <= SSIM_TOL,
        format!("PSNR of 0.1 offset {p:.12} dB, SSIM(a, a) = {self_ssim}, {SSIM_PAIRS} pairs max |diff| {worst:.1e}"),
    ))
}

fn c11_reproducibility() -> Result<Outcome, Box<dyn std::error::Error>> {
    let tmp = std::env::temp_dir().join(format!("burstforge-acceptance-{}", std::process::id()));
    let mut bytes = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_burstforge"))
            .args(["train", "--profile", "desk", "--model", "6", "--seed", "1234"])
            .arg("--iterations")
            .arg(REPRO_ITERATIONS.to_string())
            .arg("--out")
            .arg(&out)
            .arg("--log-every")
            .arg(REPRO_ITERATIONS.to_string())
            .env_remove("BURSTFORGE_SEED")
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status()?;
        if !status.success() {
            return Ok(outcome(false, format!("train exited with {status}")));
        }
        bytes.push(std::fs::read(out.join("final.bfck"))?);
    }
    let _ = std::fs::remove_dir_all(&tmp);
    Ok(outcome(
        bytes[0] == bytes[1],
        format!("{REPRO_ITERATIONS} desk iterations twice: {} checkpoint bytes, identical: {}", bytes[0].len(), bytes[0] == bytes[1]),
    ))
}

fn main() {
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let checks: [(&str, Check); 11] = [
        ("adaptive-conv oracle", c1_adaptive_conv_oracle),
        ("gradient suite", c2_gradient_suite),
        ("reconstruction identities", c3_reconstruction_identities),
        ("annealing schedule", c4_anneal_schedule),
        ("noise-model moments", c5_noise_moments),
        ("offset statistics", c6_offset_statistics),
        ("overfit smoke test", c7_overfit),
        ("ablation direction", c8_ablation_direction),
        ("channel-arithmetic audit", c9_channel_audit),
        ("metric correctness", c10_metrics),
        ("reproducibility", c11_reproducibility),
    ];
    let mut failures = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let id = (i + 1).to_string();
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let result = check().unwrap_or_else(|e| outcome(false, format!("error: {e}")));
        let tag = if result.pass { "PASS" } else { "FAIL" };
        println!("{tag} {id:>2} {name}: {}", result.detail);
        if !result.pass {
            failures += 1;
        }
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
