//! Parity-oscillation and multiple-quantum-coherence readout of anti-diagonal coherences.
//!
//! Gates act on the computational basis (|0⟩, |1⟩). The parity observable is
//! Z_std^{⊗N} with Z_std|0⟩ = +|0⟩, i.e. even minus odd numbers of 1s.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, PI};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{evolve_at, EvolveOptions, GeneratorContext};
use crate::error::{Error, Result};
use crate::hilbert::{cluster_by_excess, initial_state, site_mask, DensityMatrix, StateKind};
use crate::C64;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

pub type Gate = [[C64; 2]; 2];

/// U(φ) = (1/√2)[[1, i e^{−iφ}], [i e^{iφ}, 1]].
pub fn parity_gate(phi: f64) -> Gate {
    let s = FRAC_1_SQRT_2;
    let i = C64::new(0.0, 1.0);
    [
        [C64::new(s, 0.0), i * C64::from_polar(s, -phi)],
        [i * C64::from_polar(s, phi), C64::new(s, 0.0)],
    ]
}

/// U ρ U† with the same gate on every qubit.
pub fn apply_gate_all(rho: &DensityMatrix, g: &Gate) -> DensityMatrix {
    let n = rho.n;
    let d = rho.dim();
    let mut m = rho.mat.clone();
    for site in 1..=n {
        let mask = site_mask(site, n);
        // rows
        for r in 0..d {
            if r & mask != 0 {
                continue;
            }
            let r1 = r | mask;
            for c in 0..d {
                let (a, b) = (m[[r, c]], m[[r1, c]]);
                m[[r, c]] = g[0][0] * a + g[0][1] * b;
                m[[r1, c]] = g[1][0] * a + g[1][1] * b;
            }
        }
        // columns, times U†
        for c in 0..d {
            if c & mask != 0 {
                continue;
            }
            let c1 = c | mask;
            for r in 0..d {
                let (a, b) = (m[[r, c]], m[[r, c1]]);
                m[[r, c]] = a * g[0][0].conj() + b * g[0][1].conj();
                m[[r, c1]] = a * g[1][0].conj() + b * g[1][1].conj();
            }
        }
    }
    DensityMatrix { n, mat: m }
}

fn parity_sign(l: usize) -> f64 {
    if l.count_ones() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// P(φ) = tr[Z^{⊗N} U(φ)^{⊗N} ρ U(φ)^{†⊗N}].
pub fn parity_signal(rho: &DensityMatrix, phi: f64) -> f64 {
    let u = apply_gate_all(rho, &parity_gate(phi));
    (0..u.dim()).map(|l| parity_sign(l) * u.mat[[l, l]].re).sum()
}

/// Same as [`parity_signal`] but keeps the imaginary part of the trace.
pub fn parity_signal_complex(rho: &DensityMatrix, phi: f64) -> C64 {
    let u = apply_gate_all(rho, &parity_gate(phi));
    (0..u.dim()).map(|l| parity_sign(l) * u.mat[[l, l]]).sum()
}

/// φ_x = 2πx/(2N+1) + π/2.
pub fn parity_angles(n: usize) -> Vec<f64> {
    let m = 2 * n + 1;
    (0..m).map(|x| 2.0 * PI * x as f64 / m as f64 + FRAC_PI_2).collect()
}

/// φ_x = −4πx/(2N+1).
pub fn mqc_angles(n: usize) -> Vec<f64> {
    let m = 2 * n + 1;
    (0..m).map(|x| -4.0 * PI * x as f64 / m as f64).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParityTrace {
    pub n: usize,
    pub phis: Vec<f64>,
    pub values: Vec<f64>,
    /// 0 for exact expectations
    pub shots: u64,
    pub seed: u64,
}

pub fn parity_trace_exact(rho: &DensityMatrix) -> ParityTrace {
    let phis = parity_angles(rho.n);
    let values = phis.iter().map(|p| parity_signal(rho, *p)).collect();
    ParityTrace { n: rho.n, phis, values, shots: 0, seed: 0 }
}

fn check_grid(phis: &[f64], expected: &[f64], values: usize) -> Result<()> {
    if phis.len() != expected.len() || values != expected.len() {
        return Err(Error::LengthMismatch { expected: expected.len(), got: values });
    }
    if phis.iter().zip(expected).any(|(a, b)| (a - b).abs() > 1e-12) {
        return Err(Error::Invalid("angles are not the canonical grid".into()));
    }
    Ok(())
}

/// ρ^(k) = (1/m) Σ_x e^{−2πikx/m} P(2πx/m + π/2) for k = −N, −N+2, …, N.
pub fn parity_extract(trace: &ParityTrace) -> Result<BTreeMap<i32, C64>> {
    let n = trace.n;
    check_grid(&trace.phis, &parity_angles(n), trace.values.len())?;
    let m = (2 * n + 1) as f64;
    Ok((0..=n)
        .map(|j| {
            let k = 2 * j as i32 - n as i32;
            let s: C64 = trace
                .values
                .iter()
                .enumerate()
                .map(|(x, p)| C64::from_polar(*p, -2.0 * PI * k as f64 * x as f64 / m))
                .sum();
            (k, s / m)
        })
        .collect())
}

/// Seeded generator for one (idle time, angle) pair.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn outcome_cdf(rho: &DensityMatrix) -> Result<Vec<f64>> {
    let probs: Vec<f64> = (0..rho.dim()).map(|l| rho.mat[[l, l]].re).collect();
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Invalid(format!("outcome probabilities sum to {sum}")));
    }
    let mut acc = 0.0;
    let total: f64 = probs.iter().map(|p| p.max(0.0)).sum();
    Ok(probs
        .iter()
        .map(|p| {
            acc += p.max(0.0) / total;
            acc
        })
        .collect())
}

pub fn sample_parity_with(rho: &DensityMatrix, phi: f64, shots: u64, rng: &mut impl Rng) -> Result<f64> {
    if shots == 0 {
        return Err(Error::Invalid("shots must be at least 1".into()));
    }
    let u = apply_gate_all(rho, &parity_gate(phi));
    let cdf = outcome_cdf(&u)?;
    let last = cdf.len() - 1;
    let mut even = 0i64;
    for _ in 0..shots {
        let r: f64 = rng.gen();
        let l = cdf.partition_point(|c| *c <= r).min(last);
        even += if l.count_ones() % 2 == 0 { 1 } else { -1 };
    }
    Ok(even as f64 / shots as f64)
}

/// (#even − #odd)/shots from bitstrings drawn after the analysis gates.
pub fn sample_parity(rho: &DensityMatrix, phi: f64, shots: u64, seed: u64) -> Result<f64> {
    sample_parity_with(rho, phi, shots, &mut stream_rng(seed, 0))
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MqcMode {
    OverlapExact,
    EchoProtocol,
}

/// R ρ R† with R = RZ(φ)^{⊗N}, RZ(φ) = diag(e^{−iφ/2}, e^{iφ/2}).
pub fn rotate_z_all(rho: &DensityMatrix, phi: f64) -> DensityMatrix {
    let d = rho.dim();
    let mat = Array2::from_shape_fn((d, d), |(l, m)| {
        let q = l.count_ones() as i32 - m.count_ones() as i32;
        rho.mat[[l, m]] * C64::from_polar(1.0, phi * q as f64)
    });
    DensityMatrix { n: rho.n, mat }
}

/// GHZ preparation: Hadamard on qubit 1 followed by a CNOT ladder, applied to |0…0⟩.
pub fn ghz_preparation(n: usize) -> Vec<C64> {
    let d = 1usize << n;
    let mut psi = vec![ZERO; d];
    psi[0] = ONE;
    let h = FRAC_1_SQRT_2;
    let m1 = site_mask(1, n);
    let (a, b) = (psi[0], psi[m1]);
    psi[0] = h * (a + b);
    psi[m1] = h * (a - b);
    for c in 1..n {
        let mc = site_mask(c, n);
        let mt = site_mask(c + 1, n);
        let mut next = vec![ZERO; d];
        for l in 0..d {
            let target = if l & mc != 0 { l ^ mt } else { l };
            next[target] = psi[l];
        }
        psi = next;
    }
    psi
}

pub fn mqc_signal(rho: &DensityMatrix, phi: f64, mode: MqcMode) -> f64 {
    let r = rotate_z_all(rho, phi);
    match mode {
        MqcMode::OverlapExact => {
            let mut acc = ZERO;
            let d = rho.dim();
            for i in 0..d {
                for k in 0..d {
                    acc += rho.mat[[i, k]] * r.mat[[k, i]];
                }
            }
            acc.re
        }
        MqcMode::EchoProtocol => {
            // ⟨0|U_prep† R ρ R† U_prep|0⟩
            let v = ghz_preparation(rho.n);
            let d = rho.dim();
            let mut acc = ZERO;
            for i in 0..d {
                if v[i] == ZERO {
                    continue;
                }
                for k in 0..d {
                    acc += v[i].conj() * r.mat[[i, k]] * v[k];
                }
            }
            acc.re
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MqcTrace {
    pub n: usize,
    pub phis: Vec<f64>,
    pub values: Vec<f64>,
    pub mode: MqcMode,
    pub shots: u64,
    pub seed: u64,
}

pub fn mqc_trace_exact(rho: &DensityMatrix, mode: MqcMode) -> MqcTrace {
    let phis = mqc_angles(rho.n);
    let values = phis.iter().map(|p| mqc_signal(rho, *p, mode)).collect();
    MqcTrace { n: rho.n, phis, values, mode, shots: 0, seed: 0 }
}

/// I_q for q = −N..N from the DFT of S'(x) = S(−4πx/m); I_q sits in bin −2q mod m.
pub fn mqc_extract(trace: &MqcTrace) -> Result<BTreeMap<i32, f64>> {
    let n = trace.n;
    check_grid(&trace.phis, &mqc_angles(n), trace.values.len())?;
    let m = 2 * n + 1;
    Ok((-(n as i32)..=n as i32)
        .map(|q| {
            let bin = (-2 * q).rem_euclid(m as i32) as f64;
            let s: C64 = trace
                .values
                .iter()
                .enumerate()
                .map(|(x, v)| C64::from_polar(*v, -2.0 * PI * bin * x as f64 / m as f64))
                .sum();
            (q, s.re / m as f64)
        })
        .collect())
}

/// tr(ρ_q ρ_{−q}) with ρ_q = Σ_m P_m ρ P_{m−q}, P_m projecting on Hamming weight m.
pub fn mqc_intensities_direct(rho: &DensityMatrix) -> BTreeMap<i32, f64> {
    let n = rho.n as i32;
    let mut out: BTreeMap<i32, f64> = (-n..=n).map(|q| (q, 0.0)).collect();
    let d = rho.dim();
    for l in 0..d {
        for m in 0..d {
            let q = l.count_ones() as i32 - m.count_ones() as i32;
            *out.get_mut(&q).unwrap() += rho.mat[[l, m]].norm_sqr();
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProtocolKind {
    Parity,
    Mqc { mode: MqcMode },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Readout {
    Parity { trace: ParityTrace, rho_k: BTreeMap<i32, C64> },
    Mqc { trace: MqcTrace, intensities: BTreeMap<i32, f64> },
}

#[derive(Clone, Debug)]
pub struct ProtocolRun {
    pub idle_times: Vec<f64>,
    pub readouts: Vec<Readout>,
    pub states: Vec<DensityMatrix>,
}

impl ProtocolRun {
    /// ρ^(k) per idle time; empty for MQC runs.
    pub fn rho_k(&self) -> Vec<BTreeMap<i32, C64>> {
        self.readouts
            .iter()
            .filter_map(|r| match r {
                Readout::Parity { rho_k, .. } => Some(rho_k.clone()),
                _ => None,
            })
            .collect()
    }
}

/// Synthesizes one readout at the canonical angles; `idle_index` selects the PRNG streams.
pub fn readout(rho: &DensityMatrix, kind: &ProtocolKind, shots: u64, seed: u64, idle_index: usize) -> Result<Readout> {
    let n = rho.n;
    let m = 2 * n + 1;
    let stream = |x: usize| (idle_index as u64) << 20 | x as u64;
    match kind {
        ProtocolKind::Parity => {
            let phis = parity_angles(n);
            let values: Vec<f64> = if shots == 0 {
                phis.par_iter().map(|p| parity_signal(rho, *p)).collect()
            } else {
                phis.par_iter()
                    .enumerate()
                    .map(|(x, p)| sample_parity_with(rho, *p, shots, &mut stream_rng(seed, stream(x))))
                    .collect::<Result<_>>()?
            };
            let trace = ParityTrace { n, phis, values, shots, seed };
            let rho_k = parity_extract(&trace)?;
            Ok(Readout::Parity { trace, rho_k })
        }
        ProtocolKind::Mqc { mode } => {
            let phis = mqc_angles(n);
            let mut values: Vec<f64> = phis.par_iter().map(|p| mqc_signal(rho, *p, *mode)).collect();
            if shots > 0 {
                if *mode != MqcMode::EchoProtocol {
                    return Err(Error::Invalid("sampled MQC needs the echo protocol".into()));
                }
                for (x, v) in values.iter_mut().enumerate() {
                    let mut rng = stream_rng(seed, stream(x));
                    let p = v.clamp(0.0, 1.0);
                    let hits = (0..shots).filter(|_| rng.gen::<f64>() < p).count();
                    *v = hits as f64 / shots as f64;
                }
            }
            debug_assert_eq!(values.len(), m);
            let trace = MqcTrace { n, phis, values, mode: *mode, shots, seed };
            let intensities = mqc_extract(&trace)?;
            Ok(Readout::Mqc { trace, intensities })
        }
    }
}

/// Prepare, idle for each of `idle_times`, then read out at the canonical angles.
pub fn run_protocol(
    ctx: &GeneratorContext,
    initial: &StateKind,
    idle_times: &[f64],
    kind: &ProtocolKind,
    shots: u64,
    seed: u64,
) -> Result<ProtocolRun> {
    let rho0 = initial_state(initial, ctx.n())?;
    let mut order: Vec<usize> = (0..idle_times.len()).collect();
    order.sort_by(|a, b| idle_times[*a].partial_cmp(&idle_times[*b]).unwrap());
    let sorted: Vec<f64> = order.iter().map(|i| idle_times[*i]).collect();
    let traj = evolve_at(ctx, &rho0, &sorted, &EvolveOptions::default())?;
    let mut states = vec![rho0.clone(); idle_times.len()];
    for (pos, i) in order.iter().enumerate() {
        states[*i] = traj.states[pos].clone();
    }
    let readouts = states
        .iter()
        .enumerate()
        .map(|(i, rho)| readout(rho, kind, shots, seed, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(ProtocolRun { idle_times: idle_times.to_vec(), readouts, states })
}

/// Exact ρ^(k) straight from the density matrix, for comparison with extracted values.
pub fn rho_k_exact(rho: &DensityMatrix) -> BTreeMap<i32, C64> {
    cluster_by_excess(rho)
}
