//! Threshold rules turning intensity and line-shape traces into verdicts.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::config::Thresholds;
use crate::C64;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Correlated,
    Uncorrelated,
    Inconclusive,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Correlated => "correlated",
            Verdict::Uncorrelated => "uncorrelated",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelaxationVerdict {
    pub verdict: Verdict,
    /// peak |I_corr| / peak |I_total|
    pub peak_ratio: Option<f64>,
    pub threshold: f64,
    /// longest run of consecutive samples above threshold
    pub sustained_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CorrelationLength {
    Exact(usize),
    /// "≥N": the partial intensities never saturate below the register size
    AtLeast(String),
}

impl CorrelationLength {
    pub fn at_least(n: usize) -> Self {
        CorrelationLength::AtLeast(format!("≥{n}"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DephasingVerdict {
    pub verdict: Verdict,
    /// (max − min)/max of |ρ^(k)(t*)|/|ρ^(k)(0)|
    pub spread: Option<f64>,
    pub threshold: f64,
    pub idle_time: Option<f64>,
    /// normalized magnitude per k at `idle_time`
    pub profile: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub exponent: f64,
    pub residual: f64,
    pub n_values: Vec<usize>,
    pub rates: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub relaxation_correlated: RelaxationVerdict,
    pub correlation_length_estimate: Option<CorrelationLength>,
    pub dephasing_correlated: DephasingVerdict,
    pub superdecoherence_scaling: Option<ScalingFit>,
    pub thresholds: Thresholds,
}

fn peak(v: &[f64]) -> f64 {
    v.iter().filter(|x| x.is_finite()).map(|x| x.abs()).fold(0.0, f64::max)
}

/// Correlated when |I_corr| exceeds θ_rel·peak|I_total| on `sustain` consecutive samples,
/// uncorrelated when it stays below half of that everywhere.
pub fn relaxation_verdict(i_total: &[f64], i_corr: &[f64], th: &Thresholds) -> RelaxationVerdict {
    let mut out =
        RelaxationVerdict { verdict: Verdict::Inconclusive, peak_ratio: None, threshold: th.theta_rel, sustained_samples: 0 };
    let scale = peak(i_total);
    if i_total.len() != i_corr.len() || i_corr.len() < th.sustain || scale == 0.0 || i_corr.iter().any(|x| !x.is_finite()) {
        return out;
    }
    let ratio = peak(i_corr) / scale;
    out.peak_ratio = Some(ratio);
    let cut = th.theta_rel * scale;
    let mut run = 0;
    for v in i_corr {
        if v.abs() > cut {
            run += 1;
            out.sustained_samples = out.sustained_samples.max(run);
        } else {
            run = 0;
        }
    }
    out.verdict = if out.sustained_samples >= th.sustain {
        Verdict::Correlated
    } else if ratio < 0.5 * th.theta_rel {
        Verdict::Uncorrelated
    } else {
        Verdict::Inconclusive
    };
    out
}

/// Smallest r with max_t |I^(r) − I^(N)| < θ_len·peak|I^(N)|; `partial[k-1][sample]`.
pub fn correlation_length(partial: &[Vec<f64>], th: &Thresholds) -> Option<CorrelationLength> {
    let n = partial.len();
    if n == 0 {
        return None;
    }
    let full = &partial[n - 1];
    if full.iter().any(|x| !x.is_finite()) {
        return None;
    }
    let scale = peak(full);
    if scale == 0.0 {
        return None;
    }
    for (r, series) in partial.iter().enumerate() {
        let dev = series.iter().zip(full).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if dev.is_finite() && dev < th.theta_len * scale {
            let r = r + 1;
            return Some(if r == n { CorrelationLength::at_least(n) } else { CorrelationLength::Exact(r) });
        }
    }
    Some(CorrelationLength::at_least(n))
}

/// Compares |ρ^(k)(t*)|/|ρ^(k)(0)| across every k populated at t = 0.
pub fn dephasing_verdict(
    reference: &BTreeMap<i32, C64>,
    latest: Option<(f64, &BTreeMap<i32, C64>)>,
    th: &Thresholds,
) -> DephasingVerdict {
    let mut out = DephasingVerdict {
        verdict: Verdict::Inconclusive,
        spread: None,
        threshold: th.theta_phi,
        idle_time: None,
        profile: BTreeMap::new(),
    };
    let Some((t, rho_k)) = latest else { return out };
    out.idle_time = Some(t);
    if t <= 0.0 {
        return out;
    }
    let floor = reference.values().map(|z| z.norm()).fold(0.0, f64::max) * 1e-9;
    for (k, r0) in reference {
        if r0.norm() > floor && floor > 0.0 {
            if let Some(v) = rho_k.get(k) {
                out.profile.insert(k.to_string(), v.norm() / r0.norm());
            }
        }
    }
    if out.profile.len() < 2 {
        return out;
    }
    let hi = out.profile.values().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = out.profile.values().cloned().fold(f64::INFINITY, f64::min);
    if !(hi > 0.0) || !lo.is_finite() {
        return out;
    }
    let spread = (hi - lo) / hi;
    out.spread = Some(spread);
    out.verdict = if spread > th.theta_phi {
        Verdict::Correlated
    } else if spread < 0.5 * th.theta_phi {
        Verdict::Uncorrelated
    } else {
        Verdict::Inconclusive
    };
    out
}
