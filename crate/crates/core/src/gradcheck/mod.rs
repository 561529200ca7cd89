//! Central finite-difference check of reverse-mode gradients.
//!
//! The scalar function is rebuilt from scratch for every perturbation, so the
//! numeric side never touches the backward code.

use alloc::vec::Vec;

pub mod suite;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tape::{Graph, Var};
use crate::tensor::Tensor;

/// Absolute slack added to the relative bound, for gradients that are
/// zero up to roundoff.
pub const DEFAULT_ATOL: f64 = 1e-8;
pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    pub rtol: f64,
    pub atol: f64,
    /// Check at most this many entries per input (chosen at random); `None` checks all.
    pub max_entries: Option<usize>,
    pub seed: u64,
}

impl GradCheckOptions {
    pub fn with_rtol(rtol: f64) -> Self {
        GradCheckOptions {
            step: DEFAULT_STEP,
            rtol,
            atol: DEFAULT_ATOL,
            max_entries: None,
            seed: 0,
        }
    }
}

/// Worst entry seen by [`check_gradients`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Entries outside the tolerance.
    pub failed: usize,
    /// `|analytic - numeric| / (rtol * max(|analytic|, |numeric|) + atol)`; passes when `<= 1`.
    pub worst_ratio: f64,
    pub worst_input: usize,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.worst_ratio <= 1.0
    }
}

fn evaluate<F>(inputs: &[Tensor<f64>], f: &F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let v = g.value(out);
    Ok(v.data().iter().sum())
}

/// Compare the gradient of scalar `f(inputs)` against central differences.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], options: &GradCheckOptions, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map_or_else(|| alloc::vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut report = GradCheckReport {
        checked: 0,
        failed: 0,
        worst_ratio: 0.0,
        worst_input: 0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        let indices: Vec<usize> = match options.max_entries {
            Some(m) if m < input.len() => sample(&mut rng, input.len(), m).into_vec(),
            _ => (0..input.len()).collect(),
        };
        for i in indices {
            let x0 = input.data()[i];
            work[k].data_mut()[i] = x0 + options.step;
            let plus = evaluate(&work, &f)?;
            work[k].data_mut()[i] = x0 - options.step;
            let minus = evaluate(&work, &f)?;
            work[k].data_mut()[i] = x0;
            let numeric = (plus - minus) / (2.0 * options.step);
            let a = analytic[k][i];
            let bound = options.rtol * a.abs().max(numeric.abs()) + options.atol;
            let ratio = (a - numeric).abs() / bound;
            report.checked += 1;
            if !(ratio <= 1.0) {
                report.failed += 1;
            }
            if ratio > report.worst_ratio || ratio.is_nan() {
                report = GradCheckReport {
                    worst_ratio: if ratio.is_nan() { f64::INFINITY } else { ratio },
                    worst_input: k,
                    worst_index: i,
                    analytic: a,
                    numeric,
                    ..report
                };
            }
        }
    }
    Ok(report)
}
