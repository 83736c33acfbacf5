//! Energy and radiated intensity, split into local and correlated parts.

use rayon::prelude::*;

use crate::dynamics::{Generator, GeneratorContext, Select, Trajectory};
use crate::error::{Error, Result};
use crate::hilbert::{site_mask, z_sign, DensityMatrix, RegisterConfig};
use crate::spectra::Coupling;
use crate::C64;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// ⟨Z_α⟩ for every qubit, read off the diagonal.
pub fn z_expectations(rho: &DensityMatrix) -> Vec<f64> {
    let n = rho.n;
    (1..=n)
        .map(|a| (0..rho.dim()).map(|m| z_sign(m, a, n) * rho.mat[[m, m]].re).sum())
        .collect()
}

/// W = Σ_α ω_α ⟨Z_α⟩ / 2.
pub fn total_energy(rho: &DensityMatrix, register: &RegisterConfig) -> Result<f64> {
    if rho.n != register.n() {
        return Err(Error::LengthMismatch { expected: register.n(), got: rho.n });
    }
    Ok(z_expectations(rho).iter().zip(&register.freqs).map(|(z, w)| 0.5 * w * z).sum())
}

fn energy_rate(d_rho: &[C64], freqs: &[f64], n: usize, upto: usize) -> f64 {
    let dim = 1usize << n;
    let mut acc = 0.0;
    for m in 0..dim {
        let v = d_rho[m * dim + m].re;
        for a in 1..=upto {
            acc += 0.5 * freqs[a - 1] * z_sign(m, a, n) * v;
        }
    }
    acc
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntensityBreakdown {
    pub total: f64,
    pub per_channel: Vec<f64>,
}

/// I = −½ Σ_{α,j} ω_α tr{Z_α D_j[ρ]}.
pub fn intensity_from_generator(ctx: &GeneratorContext, rho: &DensityMatrix, t: f64) -> Result<IntensityBreakdown> {
    let mut gen = Generator::new(ctx)?;
    intensity_with(&mut gen, ctx, rho, t)
}

fn intensity_with(gen: &mut Generator, ctx: &GeneratorContext, rho: &DensityMatrix, t: f64) -> Result<IntensityBreakdown> {
    let n = ctx.n();
    if rho.n != n {
        return Err(Error::LengthMismatch { expected: n, got: rho.n });
    }
    let d = rho.dim();
    let src = rho.mat.as_standard_layout();
    let mut out = vec![ZERO; d * d];
    let mut per_channel = Vec::with_capacity(ctx.channels.len());
    for ch in 0..ctx.channels.len() {
        gen.apply(t, src.as_slice().unwrap(), &mut out, Select::Channel(ch))?;
        per_channel.push(-energy_rate(&out, &ctx.register.freqs, n, n));
    }
    Ok(IntensityBreakdown { total: per_channel.iter().sum(), per_channel })
}

/// −dW/dt on a uniform grid: central differences inside, second-order one-sided at the ends.
pub fn intensity_from_finite_difference(times: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    let n = w.len();
    if times.len() != n {
        return Err(Error::LengthMismatch { expected: times.len(), got: n });
    }
    if n < 3 {
        return Err(Error::Invalid("finite differences need at least 3 samples".into()));
    }
    let h = times[1] - times[0];
    if !(h > 0.0) || times.windows(2).any(|p| ((p[1] - p[0]) - h).abs() > 1e-9 * h.max(p[1].abs())) {
        return Err(Error::Invalid("finite differences need a uniform grid".into()));
    }
    let mut out = vec![0.0; n];
    out[0] = -(-3.0 * w[0] + 4.0 * w[1] - w[2]) / (2.0 * h);
    out[n - 1] = -(3.0 * w[n - 1] - 4.0 * w[n - 2] + w[n - 3]) / (2.0 * h);
    for i in 1..n - 1 {
        out[i] = -(w[i + 1] - w[i - 1]) / (2.0 * h);
    }
    Ok(out)
}

/// Σ_α ω_α ⟨Π†_α Π_α⟩ / T₁α.
pub fn local_intensity(rho: &DensityMatrix, register: &RegisterConfig, t1: &[f64]) -> Result<f64> {
    let n = register.n();
    if rho.n != n || t1.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: t1.len() });
    }
    if let Some(bad) = t1.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::Invalid(format!("T1 value {bad} must be positive")));
    }
    let z = z_expectations(rho);
    Ok((0..n).map(|a| register.freqs[a] * 0.5 * (1.0 + z[a]) / t1[a]).sum())
}

/// Emission and absorption of each qubit on its own:
/// Σ_α ω_α [γ^(21)_{αα} ⟨Π†_αΠ_α⟩ − γ^(12)_{αα} ⟨Π_αΠ†_α⟩].
pub fn local_intensity_exact(ctx: &GeneratorContext, rho: &DensityMatrix, t: f64) -> Result<f64> {
    let n = ctx.n();
    if rho.n != n {
        return Err(Error::LengthMismatch { expected: n, got: rho.n });
    }
    let z = z_expectations(rho);
    let mut acc = 0.0;
    for ch in 0..ctx.table.n_channels() {
        if ctx.table.channel(ch).coupling != Coupling::Transverse {
            continue;
        }
        let co = ctx.table.relaxation(ch, t)?;
        for a in 0..n {
            let up = 0.5 * (1.0 + z[a]);
            acc += ctx.register.freqs[a] * (co.gamma21[[a, a]].re * up - co.gamma12[[a, a]].re * (1.0 - up));
        }
    }
    Ok(acc)
}

/// ⟨Π†_α Π_β⟩ and ⟨Π†_α Π†_β⟩, 0-based.
fn pair_expectations(rho: &DensityMatrix) -> (Vec<Vec<C64>>, Vec<Vec<C64>>) {
    let n = rho.n;
    let d = rho.dim();
    let mut hop = vec![vec![ZERO; n]; n];
    let mut dbl = vec![vec![ZERO; n]; n];
    for a in 0..n {
        let ma = site_mask(a + 1, n);
        for b in 0..n {
            if a == b {
                continue;
            }
            let mb = site_mask(b + 1, n);
            let mut h = ZERO;
            let mut u = ZERO;
            // ⟨X⟩ = Σ_m ⟨m|X ρ|m⟩ = Σ_{m,k} X[m,k] ρ[k,m]
            for k in 0..d {
                // Π†_α Π_β |k⟩: needs b set, a clear
                if k & mb != 0 && k & ma == 0 {
                    let m = k ^ mb ^ ma;
                    h += rho.mat[[k, m]];
                }
                // Π†_α Π†_β |k⟩: needs both clear
                if k & mb == 0 && k & ma == 0 {
                    let m = k | ma | mb;
                    u += rho.mat[[k, m]];
                }
            }
            hop[a][b] = h;
            dbl[a][b] = u;
        }
    }
    (hop, dbl)
}

/// Correlated partial intensity I^(k)_corr, with the nonsecular part reported separately.
#[derive(Clone, Debug, PartialEq)]
pub struct PartialIntensity {
    pub secular: f64,
    pub nonsecular: f64,
}

impl PartialIntensity {
    pub fn total(&self) -> f64 {
        self.secular + self.nonsecular
    }
}

/// 2ω₀ Re Σ_{α≤k, β≠α} Q_{αβ}⟨Π†_αΠ_β⟩ plus 4ω₀ Re Σ_{α≤k, β≠α} i(J^(3)_{αβ}+J^(3)_{βα})/2 ⟨Π†_αΠ†_β⟩.
///
/// With `allow_nonuniform` the common ω₀ is replaced by ω_α.
pub fn correlated_partial_intensity(
    ctx: &GeneratorContext,
    rho: &DensityMatrix,
    t: f64,
    k: usize,
    allow_nonuniform: bool,
) -> Result<PartialIntensity> {
    let (hop, dbl) = pair_expectations(rho);
    partial_with(ctx, &hop, &dbl, t, k, allow_nonuniform)
}

fn partial_with(
    ctx: &GeneratorContext,
    hop: &[Vec<C64>],
    dbl: &[Vec<C64>],
    t: f64,
    k: usize,
    allow_nonuniform: bool,
) -> Result<PartialIntensity> {
    let n = ctx.n();
    if k == 0 || k > n {
        return Err(Error::SiteOutOfRange { site: k, n });
    }
    if !ctx.register.is_uniform() && !allow_nonuniform {
        return Err(Error::Invalid("partial intensities need uniform frequencies".into()));
    }
    let freqs = &ctx.register.freqs;
    let mut sec = ZERO;
    let mut ns = ZERO;
    for ch in 0..ctx.table.n_channels() {
        if ctx.table.channel(ch).coupling != Coupling::Transverse {
            continue;
        }
        let co = ctx.table.relaxation(ch, t)?;
        for a in 0..k {
            for b in 0..n {
                if a == b {
                    continue;
                }
                let q = (co.gamma21[[a, b]] - co.gamma12[[b, a]]) / 2.0;
                sec += 2.0 * freqs[a] * q * hop[a][b];
                if ctx.options.include_nonsecular && ctx.options.include_lamb_hamiltonians {
                    let j = C64::new(0.0, 1.0) * (co.j3[[a, b]] + co.j3[[b, a]]) / 2.0;
                    ns += 4.0 * freqs[a] * j * dbl[a][b];
                }
            }
        }
    }
    Ok(PartialIntensity { secular: sec.re, nonsecular: ns.re })
}

/// −½ Σ_{α≤k} ω_α tr{Z_α D[ρ]}: the generator-side partial intensity, local terms included.
pub fn partial_intensity_from_generator(ctx: &GeneratorContext, rho: &DensityMatrix, t: f64, k: usize) -> Result<f64> {
    let n = ctx.n();
    if k == 0 || k > n {
        return Err(Error::SiteOutOfRange { site: k, n });
    }
    let d = rho.dim();
    let mut gen = Generator::new(ctx)?;
    let src = rho.mat.as_standard_layout();
    let mut out = vec![ZERO; d * d];
    gen.apply(t, src.as_slice().unwrap(), &mut out, Select::Transverse)?;
    Ok(-energy_rate(&out, &ctx.register.freqs, n, k))
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct T1Fit {
    pub t1: f64,
    pub rate: f64,
    /// rms residual of the log-population fit
    pub residual: f64,
}

/// Least-squares fit of log p(t) = a − t/T₁.
pub fn fit_decay(times: &[f64], pop: &[f64]) -> Result<T1Fit> {
    if times.len() != pop.len() {
        return Err(Error::LengthMismatch { expected: times.len(), got: pop.len() });
    }
    let pts: Vec<(f64, f64)> =
        times.iter().zip(pop).filter(|(_, p)| **p > 0.0 && p.is_finite()).map(|(t, p)| (*t, p.ln())).collect();
    if pts.len() < 3 {
        return Err(Error::Fit("fewer than 3 usable samples".into()));
    }
    let m = pts.len() as f64;
    let tx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let ty = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - tx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - tx) * (p.1 - ty)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("degenerate time samples".into()));
    }
    let slope = sxy / sxx;
    let scale = pts.iter().map(|p| p.1.abs()).fold(0.0, f64::max).max(1.0);
    if !(slope < -1e-14 * scale) {
        return Err(Error::Fit(format!("population does not decay (slope {slope:.3e})")));
    }
    let icpt = ty - slope * tx;
    let residual = (pts.iter().map(|p| (p.1 - icpt - slope * p.0).powi(2)).sum::<f64>() / m).sqrt();
    Ok(T1Fit { t1: -1.0 / slope, rate: -slope, residual })
}

/// T₁ per qubit from ⟨Z_α⟩ series (`zexp[α][sample]`).
pub fn extract_t1(times: &[f64], zexp: &[Vec<f64>]) -> Result<Vec<T1Fit>> {
    zexp.iter()
        .map(|z| {
            let p: Vec<f64> = z.iter().map(|v| 0.5 * (1.0 + v)).collect();
            fit_decay(times, &p)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntensityTrace {
    pub times: Vec<f64>,
    pub w: Vec<f64>,
    pub i_total: Vec<f64>,
    pub i_local: Vec<f64>,
    pub i_corr: Vec<f64>,
    /// `i_corr_partial[k-1][sample]`; NaN when frequencies are not uniform
    pub i_corr_partial: Vec<Vec<f64>>,
    pub i_nonsecular: Vec<f64>,
    /// `zexp[α][sample]`
    pub zexp: Vec<Vec<f64>>,
    pub min_eigenvalue: Vec<f64>,
}

struct Sample {
    w: f64,
    total: f64,
    local: f64,
    partial: Vec<f64>,
    ns: f64,
    z: Vec<f64>,
    min_eig: f64,
}

/// Evaluates every intensity observable along a trajectory.
pub fn intensity_trace(ctx: &GeneratorContext, traj: &Trajectory, allow_nonuniform: bool) -> Result<IntensityTrace> {
    let n = ctx.n();
    let partial_ok = ctx.register.is_uniform() || allow_nonuniform;
    let samples: Vec<Sample> = traj
        .times
        .par_iter()
        .zip(traj.states.par_iter())
        .map(|(&t, rho)| -> Result<Sample> {
            let mut gen = Generator::new(ctx)?;
            let total = intensity_with(&mut gen, ctx, rho, t)?.total;
            let local = local_intensity_exact(ctx, rho, t)?;
            let (hop, dbl) = pair_expectations(rho);
            let mut partial = vec![f64::NAN; n];
            let mut ns = f64::NAN;
            if partial_ok {
                for k in 1..=n {
                    let p = partial_with(ctx, &hop, &dbl, t, k, allow_nonuniform)?;
                    partial[k - 1] = p.total();
                    if k == n {
                        ns = p.nonsecular;
                    }
                }
            }
            Ok(Sample {
                w: total_energy(rho, &ctx.register)?,
                total,
                local,
                partial,
                ns,
                z: z_expectations(rho),
                min_eig: rho.min_eigenvalue(),
            })
        })
        .collect::<Result<_>>()?;
    let col = |f: &dyn Fn(&Sample) -> f64| samples.iter().map(f).collect::<Vec<f64>>();
    Ok(IntensityTrace {
        times: traj.times.clone(),
        w: col(&|s| s.w),
        i_total: col(&|s| s.total),
        i_local: col(&|s| s.local),
        i_corr: col(&|s| s.total - s.local),
        i_corr_partial: (0..n).map(|k| col(&|s| s.partial[k])).collect(),
        i_nonsecular: col(&|s| s.ns),
        zexp: (0..n).map(|a| col(&|s| s.z[a])).collect(),
        min_eigenvalue: col(&|s| s.min_eig),
    })
}
