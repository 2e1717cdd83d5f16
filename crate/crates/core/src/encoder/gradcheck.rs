//! Central-difference check of [`backward`](super::backward).

use rand::seq::index::sample;

use super::{backward, forward_cached, EncoderParams};
use crate::code::Activation;
use crate::dataset::FeatureSequence;
use crate::error::Result;
use crate::seed;

/// Parameters above this count are checked on a seeded subsample.
pub const FULL_CHECK_LIMIT: usize = 10_000;
const SUBSAMPLE: usize = 2_000;
/// Denominator floor for the relative error of near-zero gradients.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameters skipped because a perturbation flipped a relu kink, where
    /// central differences do not estimate the one-sided derivative.
    pub skipped_kinks: usize,
}

fn objective(p: &EncoderParams, x: &FeatureSequence, upstream: &[f64]) -> Result<(f64, Vec<bool>)> {
    let c = forward_cached(p, x)?;
    let value = c.out.iter().zip(upstream).map(|(y, u)| y * u).sum();
    let pattern = if p.cfg.activation == Activation::Relu {
        c.hidden_pre.iter().chain(c.out_pre.iter()).map(|&v| v > 0.0).collect()
    } else {
        Vec::new()
    };
    Ok((value, pattern))
}

/// Largest relative error `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)`
/// of `upstream . forward` over the checked parameters.
pub fn grad_check(
    p: &EncoderParams,
    x: &FeatureSequence,
    upstream: &[f64],
    eps: f64,
) -> Result<GradCheckReport> {
    let analytic = backward(p, x, upstream)?;
    let (_, base_pattern) = objective(p, x, upstream)?;
    let n = p.num_params();
    let indices: Vec<usize> = if n > FULL_CHECK_LIMIT {
        let mut rng = seed::rng(u64::from(p.cfg.init_seed), &[0x6C4E]);
        let mut idx = sample(&mut rng, n, SUBSAMPLE).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..n).collect()
    };

    let mut probe = p.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
    };
    for i in indices {
        let orig = probe.get_flat(i);
        probe.set_flat(i, orig + eps);
        let (plus, pat_plus) = objective(&probe, x, upstream)?;
        probe.set_flat(i, orig - eps);
        let (minus, pat_minus) = objective(&probe, x, upstream)?;
        probe.set_flat(i, orig);
        if pat_plus != base_pattern || pat_minus != base_pattern {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic.get_flat(i);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        report.max_rel_error = report.max_rel_error.max(rel);
        report.checked += 1;
    }
    Ok(report)
}
