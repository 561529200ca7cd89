//! Method-by-gain evaluation of a checkpoint on a stored dataset.

use burstforge_core::burstgen::SynthSample;
use burstforge_core::metrics::{Domain, EvalReport};
use burstforge_core::net::KpnNet;
use burstforge_core::train::{evaluate_params, evaluate_reference};
use burstforge_core::ParamStore;

use crate::error::{Error, Result};
use crate::gain::GainArg;

pub const REFERENCE_ROW: &str = "Reference frame";

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Noise seed for re-noising `sample_seed` at a gain column. Depends on the
/// label only, so a column gets the same noise whatever else is evaluated.
pub fn renoise_seed(sample_seed: u64, label: &str) -> u64 {
    let h = label
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3));
    splitmix64(sample_seed ^ splitmix64(h))
}

/// The dataset's clean frames re-noised at `gain`.
pub fn renoised(samples: &[SynthSample], gain: &GainArg) -> Vec<SynthSample> {
    samples
        .iter()
        .map(|s| s.renoise(gain.preset, renoise_seed(s.seed, &gain.label)))
        .collect()
}

/// One row for the noisy reference and one for the model, one column per gain.
pub fn evaluate(
    net: &KpnNet,
    params: &ParamStore<f32>,
    label: &str,
    samples: &[SynthSample],
    gains: &[GainArg],
    domain: Domain,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Data("dataset has no samples".into()));
    }
    let n = net.config().burst_len;
    if let Some(s) = samples.iter().find(|s| s.burst_len() != n) {
        return Err(Error::Data(format!(
            "dataset bursts have {} frames, checkpoint expects N = {n}",
            s.burst_len()
        )));
    }
    let m = net.config().size_multiple();
    if let Some(s) = samples.iter().find(|s| s.ground_truth.hw().0 % m != 0 || s.ground_truth.hw().1 % m != 0) {
        let (h, w) = s.ground_truth.hw();
        return Err(Error::Data(format!("sample size {h}x{w} is not a multiple of {m}")));
    }
    let mut report = EvalReport::new(gains.iter().map(|g| g.label.clone()).collect());
    let mut reference = Vec::new();
    let mut model = Vec::new();
    for g in gains {
        let set = renoised(samples, g);
        reference.push(evaluate_reference(&set, domain)?);
        model.push(evaluate_params(net, params, &set, domain)?);
    }
    report.push(REFERENCE_ROW, reference)?;
    report.push(label, model)?;
    Ok(report)
}
