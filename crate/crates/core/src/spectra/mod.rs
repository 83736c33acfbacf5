//! Noise spectra, the filter function and the time-dependent dissipator
//! coefficients.
//!
//! Every coefficient is assembled from the base integrals
//! K(ν, t) = ∫₀ᵗ C(u) e^{−iνu} du = (1/2π) ∫ S(ω) F(ω + ν, t) dω
//! at the shifts ν ∈ {±ω_α, 0}, with the spatial factor c_{αβ} pulled out.

pub mod quad;
pub mod special;

use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::RegisterConfig;
use crate::C64;
pub use quad::{BaseIntegral, QuadOptions};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

fn default_uv() -> f64 {
    1e3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpectrumModel {
    /// λ ω e^{−ω/ω_c} for ω ≥ 0, zero below.
    Ohmic { lambda: f64, omega_c: f64 },
    /// λ/|ω| above ω_ir, flat λ/ω_ir below, cut at ω_uv.
    OneOverF {
        lambda: f64,
        omega_ir: f64,
        #[serde(default = "default_uv")]
        omega_uv: f64,
    },
    White { s0: f64 },
    /// Linear interpolation of (ω, S) samples, zero outside.
    Tabulated {
        #[serde(default)]
        table: Vec<[f64; 2]>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        path: Option<String>,
    },
}

/// Upper truncation of the ohmic integrals in units of ω_c.
pub const OHMIC_CUTOFF_FACTOR: f64 = 40.0;

impl SpectrumModel {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Spectrum(m.to_string()));
        match self {
            SpectrumModel::Ohmic { lambda, omega_c } => {
                if !(*lambda >= 0.0 && lambda.is_finite()) {
                    return bad("ohmic lambda must be non-negative");
                }
                if !(*omega_c > 0.0 && omega_c.is_finite()) {
                    return bad("ohmic omega_c must be positive");
                }
            }
            SpectrumModel::OneOverF { lambda, omega_ir, omega_uv } => {
                if !(*lambda >= 0.0 && lambda.is_finite()) {
                    return bad("one_over_f lambda must be non-negative");
                }
                if !(*omega_ir > 0.0 && omega_uv > omega_ir && omega_uv.is_finite()) {
                    return bad("one_over_f needs 0 < omega_ir < omega_uv");
                }
            }
            SpectrumModel::White { s0 } => {
                if !(*s0 >= 0.0 && s0.is_finite()) {
                    return bad("white s0 must be non-negative");
                }
            }
            SpectrumModel::Tabulated { table, .. } => {
                if table.len() < 2 {
                    return bad("tabulated spectrum needs at least 2 samples");
                }
                if table.windows(2).any(|w| !(w[1][0] > w[0][0])) {
                    return bad("tabulated frequencies must be strictly increasing");
                }
                if table.iter().any(|p| !(p[0].is_finite() && p[1].is_finite() && p[1] >= 0.0)) {
                    return bad("tabulated samples must be finite with S >= 0");
                }
            }
        }
        Ok(())
    }

    /// S(ω) of the local spectrum.
    pub fn value(&self, w: f64) -> f64 {
        match self {
            SpectrumModel::Ohmic { lambda, omega_c } => {
                if w >= 0.0 {
                    lambda * w * (-w / omega_c).exp()
                } else {
                    0.0
                }
            }
            SpectrumModel::OneOverF { lambda, omega_ir, .. } => lambda / w.abs().max(*omega_ir),
            SpectrumModel::White { s0 } => *s0,
            SpectrumModel::Tabulated { table, .. } => {
                let n = table.len();
                if n < 2 || w < table[0][0] || w > table[n - 1][0] {
                    return 0.0;
                }
                let i = table.partition_point(|p| p[0] <= w).clamp(1, n - 1);
                let (x0, y0) = (table[i - 1][0], table[i - 1][1]);
                let (x1, y1) = (table[i][0], table[i][1]);
                y0 + (y1 - y0) * (w - x0) / (x1 - x0)
            }
        }
    }

    /// Integration range in ω.
    pub fn support(&self) -> (f64, f64) {
        match self {
            SpectrumModel::Ohmic { omega_c, .. } => (0.0, OHMIC_CUTOFF_FACTOR * omega_c),
            SpectrumModel::OneOverF { omega_uv, .. } => (-omega_uv, *omega_uv),
            SpectrumModel::White { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            SpectrumModel::Tabulated { table, .. } => (table[0][0], table[table.len() - 1][0]),
        }
    }

    /// Points where S is not smooth.
    pub fn kinks(&self) -> Vec<f64> {
        match self {
            SpectrumModel::Ohmic { .. } => vec![0.0],
            SpectrumModel::OneOverF { omega_ir, .. } => vec![-omega_ir, *omega_ir],
            SpectrumModel::White { .. } => vec![],
            SpectrumModel::Tabulated { table, .. } => table.iter().map(|p| p[0]).collect(),
        }
    }

    /// Loads a `path` table (two numeric columns, `#` comments) relative to `base`.
    pub fn resolve(&mut self, base: &Path) -> Result<()> {
        if let SpectrumModel::Tabulated { table, path } = self {
            if let Some(p) = path.take() {
                let full = base.join(&p);
                let text = std::fs::read_to_string(&full).map_err(|e| Error::io(&full, e))?;
                *table = parse_table(&text)?;
            }
        }
        self.validate()
    }
}

pub fn parse_table(text: &str) -> Result<Vec<[f64; 2]>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty()).collect();
        if cols.len() != 2 {
            return Err(Error::Spectrum(format!("line {}: expected two columns", lineno + 1)));
        }
        let parse = |s: &str| {
            s.parse::<f64>().map_err(|_| Error::Spectrum(format!("line {}: bad number `{s}`", lineno + 1)))
        };
        out.push([parse(cols[0])?, parse(cols[1])?]);
    }
    Ok(out)
}

pub fn spectrum_value(model: &SpectrumModel, omega: f64) -> Result<f64> {
    model.validate()?;
    Ok(model.value(omega))
}

/// F(Ω, t) = (1 − e^{−iΩt}) / (iΩ).
pub fn filter_function(omega: f64, t: f64) -> C64 {
    let x = omega * t;
    if x.abs() < 1e-8 {
        C64::new(t - omega * omega * t * t * t / 6.0, -omega * t * t / 2.0)
    } else {
        (C64::new(1.0, 0.0) - C64::from_polar(1.0, -x)) / C64::new(0.0, omega)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    Transverse,
    Longitudinal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Correlation {
    Full,
    Diagonal,
    /// the first r qubits share one bath, the rest are independent
    Window { r: usize },
    /// ξ = 1 for |α − β| < r
    Band { r: usize },
    Custom { xi: Vec<Vec<f64>> },
}

impl Correlation {
    pub fn xi(&self, n: usize) -> Result<Array2<f64>> {
        let m = match self {
            Correlation::Full => Array2::from_elem((n, n), 1.0),
            Correlation::Diagonal => Array2::eye(n),
            Correlation::Window { r } => {
                if *r == 0 {
                    return Err(Error::Invalid("window size must be at least 1".into()));
                }
                Array2::from_shape_fn((n, n), |(a, b)| if a == b || (a < *r && b < *r) { 1.0 } else { 0.0 })
            }
            Correlation::Band { r } => {
                if *r == 0 {
                    return Err(Error::Invalid("band width must be at least 1".into()));
                }
                Array2::from_shape_fn((n, n), |(a, b)| if a.abs_diff(b) < *r { 1.0 } else { 0.0 })
            }
            Correlation::Custom { xi } => {
                if xi.len() < n || xi.iter().take(n).any(|row| row.len() < n) {
                    return Err(Error::Invalid(format!("custom xi must be at least {n}x{n}")));
                }
                Array2::from_shape_fn((n, n), |(a, b)| xi[a][b])
            }
        };
        for a in 0..n {
            if m[[a, a]] != 1.0 {
                return Err(Error::Invalid("xi must have unit diagonal".into()));
            }
            for b in 0..n {
                if !(m[[a, b]].abs() <= 1.0) || m[[a, b]] != m[[b, a]] {
                    return Err(Error::Invalid("xi must be symmetric with |xi| <= 1".into()));
                }
            }
        }
        Ok(m)
    }
}

/// One independent noise source acting on every qubit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseChannel {
    pub coupling: Coupling,
    pub spectrum: SpectrumModel,
    pub correlation: Correlation,
    #[serde(default)]
    pub theta: f64,
}

impl NoiseChannel {
    pub fn new(coupling: Coupling, spectrum: SpectrumModel, correlation: Correlation) -> Self {
        Self { coupling, spectrum, correlation, theta: 0.0 }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        self.spectrum.validate()?;
        self.correlation.xi(n)?;
        if !self.theta.is_finite() {
            return Err(Error::Invalid("theta must be finite".into()));
        }
        Ok(())
    }

    /// c_{αβ} with S_{αβ}(ω) = c_{αβ} S(ω): e^{iθ}ξ above the diagonal, its conjugate below.
    pub fn spatial(&self, n: usize) -> Result<Array2<C64>> {
        let xi = self.correlation.xi(n)?;
        let ph = C64::from_polar(1.0, self.theta);
        Ok(Array2::from_shape_fn((n, n), |(a, b)| {
            if a < b {
                ph * xi[[a, b]]
            } else if a > b {
                ph.conj() * xi[[a, b]]
            } else {
                C64::new(1.0, 0.0)
            }
        }))
    }

    /// S_{αβ}(ω) (0-based indices).
    pub fn spectral_matrix(&self, n: usize, omega: f64) -> Result<Array2<C64>> {
        let s = self.spectrum.value(omega);
        Ok(self.spatial(n)?.mapv(|c| c * s))
    }
}

/// Relaxation coefficients of one transverse channel at one time, N×N, 0-based.
#[derive(Clone, Debug, PartialEq)]
pub struct RelaxationCoeffs {
    pub gamma12: Array2<C64>,
    pub gamma21: Array2<C64>,
    pub gamma11: Array2<C64>,
    pub gamma22: Array2<C64>,
    pub j1: Array2<C64>,
    pub j2: Array2<C64>,
    pub j3: Array2<C64>,
    pub jxx: Array2<C64>,
    pub jyy: Array2<C64>,
    pub jxy: Array2<C64>,
    pub dm: Array2<C64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DephasingCoeffs {
    pub gamma_phi: Array2<C64>,
    pub jzz: Array2<C64>,
}

/// Combines K(+ω_β, t) = `kp[β]` and K(−ω_β, t) = `km[β]` into all relaxation coefficients.
pub fn relaxation_from_k(c: &Array2<C64>, freqs: &[f64], t: f64, kp: &[C64], km: &[C64]) -> RelaxationCoeffs {
    let n = freqs.len();
    let z = || Array2::<C64>::zeros((n, n));
    let mut r = RelaxationCoeffs {
        gamma12: z(),
        gamma21: z(),
        gamma11: z(),
        gamma22: z(),
        j1: z(),
        j2: z(),
        j3: z(),
        jxx: z(),
        jyy: z(),
        jxy: z(),
        dm: z(),
    };
    let two_i = C64::new(0.0, 2.0);
    for a in 0..n {
        for b in 0..n {
            let cab = c[[a, b]];
            if cab == ZERO {
                continue;
            }
            let (wa, wb) = (freqs[a], freqs[b]);
            let p12 = cab * C64::from_polar(1.0, (wb - wa) * t);
            let p21 = cab * C64::from_polar(1.0, (wa - wb) * t);
            let p11 = cab * C64::from_polar(1.0, (wa + wb) * t);
            let p22 = cab * C64::from_polar(1.0, -(wa + wb) * t);
            r.gamma12[[a, b]] = p12 * (kp[b] + kp[a].conj());
            r.gamma21[[a, b]] = p21 * (km[b] + km[a].conj());
            r.gamma11[[a, b]] = p11 * (kp[b] + km[a].conj());
            r.gamma22[[a, b]] = p22 * (km[b] + kp[a].conj());
            r.j1[[a, b]] = p12 * (kp[b] - kp[a].conj()) / two_i;
            r.j2[[a, b]] = p21 * (km[b] - km[a].conj()) / two_i;
            r.j3[[a, b]] = p11 * (kp[b] - km[a].conj()) / two_i;
        }
    }
    for a in 0..n {
        for b in 0..n {
            let (j1, j2, j3) = (r.j1[[a, b]], r.j2[[a, b]], r.j3[[a, b]]);
            r.jxx[[a, b]] = (j1 + j2 + 2.0 * j3.re) / 4.0;
            r.jyy[[a, b]] = (j1 + j2 - 2.0 * j3.re) / 4.0;
            r.dm[[a, b]] = (j1 - j2) / 4.0;
            r.jxy[[a, b]] = C64::new(-j3.im / 2.0, 0.0);
        }
    }
    r
}

pub fn dephasing_from_k(c: &Array2<C64>, k0: C64) -> DephasingCoeffs {
    DephasingCoeffs { gamma_phi: c.mapv(|z| z * 2.0 * k0.re), jzz: c.mapv(|z| z * k0.im) }
}

/// Base integrals needed by one channel.
#[derive(Clone, Debug)]
pub struct ChannelKernels {
    pub coupling: Coupling,
    pub integrals: Vec<BaseIntegral>,
    /// index into `integrals` of K(+ω_β) and K(−ω_β); both 0 for longitudinal channels
    pub plus: Vec<usize>,
    pub minus: Vec<usize>,
}

impl ChannelKernels {
    pub fn new(channel: &NoiseChannel, freqs: &[f64], opts: &QuadOptions) -> Result<Self> {
        let n = freqs.len();
        match channel.coupling {
            Coupling::Longitudinal => Ok(Self {
                coupling: channel.coupling,
                integrals: vec![BaseIntegral::new(&channel.spectrum, 0.0, opts)?],
                plus: vec![0; n],
                minus: vec![0; n],
            }),
            Coupling::Transverse => {
                let mut shifts: Vec<f64> = Vec::new();
                let mut find = |nu: f64| match shifts.iter().position(|s| *s == nu) {
                    Some(i) => i,
                    None => {
                        shifts.push(nu);
                        shifts.len() - 1
                    }
                };
                let plus: Vec<usize> = freqs.iter().map(|w| find(*w)).collect();
                let minus: Vec<usize> = freqs.iter().map(|w| find(-*w)).collect();
                let integrals = shifts
                    .iter()
                    .map(|nu| BaseIntegral::new(&channel.spectrum, *nu, opts))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Self { coupling: channel.coupling, integrals, plus, minus })
            }
        }
    }

    pub fn eval(&self, t: f64) -> Vec<C64> {
        self.integrals.iter().map(|k| k.eval(t)).collect()
    }
}

fn check_pair(n: usize, alpha: usize, beta: usize) -> Result<()> {
    for s in [alpha, beta] {
        if s == 0 || s > n {
            return Err(Error::SiteOutOfRange { site: s, n });
        }
    }
    Ok(())
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Invalid(format!("time {t} must be finite and non-negative")));
    }
    Ok(())
}

fn transverse_coeffs(channel: &NoiseChannel, freqs: &[f64], t: f64) -> Result<RelaxationCoeffs> {
    if channel.coupling != Coupling::Transverse {
        return Err(Error::Invalid("relaxation coefficients need a transverse channel".into()));
    }
    check_time(t)?;
    let n = freqs.len();
    let ker = ChannelKernels::new(channel, freqs, &QuadOptions::default())?;
    let k = ker.eval(t);
    let kp: Vec<C64> = ker.plus.iter().map(|i| k[*i]).collect();
    let km: Vec<C64> = ker.minus.iter().map(|i| k[*i]).collect();
    Ok(relaxation_from_k(&channel.spatial(n)?, freqs, t, &kp, &km))
}

/// (γ^(12)_{αβ}, γ^(21)_{αβ}, γ^(11)_{αβ}) at time t; qubit indices are 1-based.
pub fn relaxation_rates(
    channel: &NoiseChannel,
    freqs: &[f64],
    alpha: usize,
    beta: usize,
    t: f64,
) -> Result<(C64, C64, C64)> {
    check_pair(freqs.len(), alpha, beta)?;
    let r = transverse_coeffs(channel, freqs, t)?;
    let (a, b) = (alpha - 1, beta - 1);
    Ok((r.gamma12[[a, b]], r.gamma21[[a, b]], r.gamma11[[a, b]]))
}

/// γ^(φ)_{αβ}(t) = (1/π) ∫ S_{αβ}(ω) sin(ωt)/ω dω.
pub fn dephasing_rate(channel: &NoiseChannel, n: usize, alpha: usize, beta: usize, t: f64) -> Result<C64> {
    if channel.coupling != Coupling::Longitudinal {
        return Err(Error::Invalid("dephasing rate needs a longitudinal channel".into()));
    }
    check_pair(n, alpha, beta)?;
    check_time(t)?;
    let k0 = BaseIntegral::new(&channel.spectrum, 0.0, &QuadOptions::default())?.eval(t);
    Ok(dephasing_from_k(&channel.spatial(n)?, k0).gamma_phi[[alpha - 1, beta - 1]])
}

#[derive(Clone, Debug, PartialEq)]
pub enum HamiltonianCoeffs {
    Transverse { j1: C64, j2: C64, j3: C64, jxx: C64, jyy: C64, jxy: C64, dm: C64 },
    Longitudinal { jzz: C64 },
}

pub fn hamiltonian_coeffs(
    channel: &NoiseChannel,
    freqs: &[f64],
    alpha: usize,
    beta: usize,
    t: f64,
) -> Result<HamiltonianCoeffs> {
    check_pair(freqs.len(), alpha, beta)?;
    let (a, b) = (alpha - 1, beta - 1);
    match channel.coupling {
        Coupling::Transverse => {
            let r = transverse_coeffs(channel, freqs, t)?;
            Ok(HamiltonianCoeffs::Transverse {
                j1: r.j1[[a, b]],
                j2: r.j2[[a, b]],
                j3: r.j3[[a, b]],
                jxx: r.jxx[[a, b]],
                jyy: r.jyy[[a, b]],
                jxy: r.jxy[[a, b]],
                dm: r.dm[[a, b]],
            })
        }
        Coupling::Longitudinal => {
            check_time(t)?;
            let k0 = BaseIntegral::new(&channel.spectrum, 0.0, &QuadOptions::default())?.eval(t);
            Ok(HamiltonianCoeffs::Longitudinal { jzz: dephasing_from_k(&channel.spatial(freqs.len())?, k0).jzz[[a, b]] })
        }
    }
}

/// Q_{αβ}(t) = [γ^(21)_{αβ}(t) − γ^(12)_{βα}(t)]/2, or its Markovian limit
/// [S_{αβ}(ω₀) − S_{βα}(−ω₀)]/2.
pub fn q_factor(channel: &NoiseChannel, freqs: &[f64], alpha: usize, beta: usize, t: f64, markovian: bool) -> Result<C64> {
    check_pair(freqs.len(), alpha, beta)?;
    let (a, b) = (alpha - 1, beta - 1);
    let n = freqs.len();
    if markovian {
        if !freqs.iter().all(|w| *w == freqs[0]) {
            return Err(Error::Invalid("Markovian Q needs uniform frequencies".into()));
        }
        let c = channel.spatial(n)?;
        let w0 = freqs[0];
        return Ok((c[[a, b]] * channel.spectrum.value(w0) - c[[b, a]] * channel.spectrum.value(-w0)) / 2.0);
    }
    let r = transverse_coeffs(channel, freqs, t)?;
    Ok((r.gamma21[[a, b]] - r.gamma12[[b, a]]) / 2.0)
}

/// Graded time grid: 32 steps at each of dt/64, dt/32, …, dt/2, then uniform dt.
pub fn rate_grid(t_max: f64, dt: f64) -> Vec<f64> {
    let mut times = vec![0.0];
    let mut t0 = 0.0;
    for level in (1..=6).rev() {
        let h = dt / f64::from(1u32 << level);
        for i in 1..=32 {
            let t = t0 + h * i as f64;
            times.push(t);
            if t >= t_max {
                return times;
            }
        }
        t0 += 32.0 * h;
    }
    let mut i = 1usize;
    loop {
        let t = t0 + dt * i as f64;
        times.push(t);
        if t >= t_max {
            return times;
        }
        i += 1;
    }
}

#[derive(Clone, Debug)]
struct ChannelTable {
    channel: NoiseChannel,
    c: Array2<C64>,
    plus: Vec<usize>,
    minus: Vec<usize>,
    nshift: usize,
    // [node][shift]
    data: Vec<C64>,
}

/// Base integrals tabulated on a time grid, cubic Lagrange interpolation between nodes.
#[derive(Clone, Debug)]
pub struct RateTable {
    times: Vec<f64>,
    freqs: Vec<f64>,
    tables: Vec<ChannelTable>,
}

/// Interpolation weights for one query time.
#[derive(Copy, Clone, Debug)]
pub struct Stencil {
    start: usize,
    w: [f64; 4],
}

pub fn build_rate_table(channels: &[NoiseChannel], register: &RegisterConfig, t_max: f64, dt_rate: f64) -> Result<RateTable> {
    build_rate_table_with(channels, register, t_max, dt_rate, &QuadOptions::default())
}

pub fn build_rate_table_with(
    channels: &[NoiseChannel],
    register: &RegisterConfig,
    t_max: f64,
    dt_rate: f64,
    opts: &QuadOptions,
) -> Result<RateTable> {
    if !(dt_rate > 0.0 && dt_rate.is_finite()) {
        return Err(Error::Invalid("dt_rate must be positive".into()));
    }
    if !(t_max >= dt_rate && t_max.is_finite()) {
        return Err(Error::Invalid("t_max must be at least dt_rate".into()));
    }
    let n = register.n();
    let times = rate_grid(t_max, dt_rate);
    let mut tables = Vec::with_capacity(channels.len());
    for channel in channels {
        channel.validate(n)?;
        let ker = ChannelKernels::new(channel, &register.freqs, opts)?;
        let nshift = ker.integrals.len();
        let flat = matches!(channel.spectrum, SpectrumModel::White { .. });
        let rows: Vec<Vec<C64>> = times
            .par_iter()
            .map(|&t| {
                // memoryless noise: store the right limit at t = 0
                let tq = if flat && t == 0.0 { 1.0 } else { t };
                ker.eval(tq)
            })
            .collect();
        let data = rows.into_iter().flatten().collect();
        tables.push(ChannelTable {
            channel: channel.clone(),
            c: channel.spatial(n)?,
            plus: ker.plus,
            minus: ker.minus,
            nshift,
            data,
        });
    }
    Ok(RateTable { times, freqs: register.freqs.clone(), tables })
}

impl RateTable {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn t_max(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn n_channels(&self) -> usize {
        self.tables.len()
    }

    pub fn channel(&self, ch: usize) -> &NoiseChannel {
        &self.tables[ch].channel
    }

    pub fn spatial(&self, ch: usize) -> &Array2<C64> {
        &self.tables[ch].c
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn stencil(&self, t: f64) -> Result<Stencil> {
        let tm = self.t_max();
        if !(t >= 0.0 && t <= tm * (1.0 + 1e-12)) {
            return Err(Error::OutOfRange { t, t_max: tm });
        }
        let n = self.times.len();
        let i = self.times.partition_point(|x| *x <= t).saturating_sub(1);
        let start = i.saturating_sub(1).min(n.saturating_sub(4));
        let m = 4.min(n);
        let mut w = [0.0; 4];
        for j in 0..m {
            let tj = self.times[start + j];
            let mut l = 1.0;
            for k in 0..m {
                if k != j {
                    let tk = self.times[start + k];
                    l *= (t - tk) / (tj - tk);
                }
            }
            w[j] = l;
        }
        Ok(Stencil { start, w })
    }

    /// Interpolated base integrals of channel `ch`, one per stored shift.
    pub fn base_values(&self, ch: usize, s: &Stencil, out: &mut Vec<C64>) {
        let tab = &self.tables[ch];
        out.clear();
        out.resize(tab.nshift, ZERO);
        for (j, wj) in s.w.iter().enumerate() {
            if *wj == 0.0 {
                continue;
            }
            let row = &tab.data[(s.start + j) * tab.nshift..(s.start + j + 1) * tab.nshift];
            for (o, v) in out.iter_mut().zip(row) {
                *o += *wj * *v;
            }
        }
    }

    /// (K(+ω_β), K(−ω_β)) for every β.
    pub fn shifted(&self, ch: usize, t: f64) -> Result<(Vec<C64>, Vec<C64>)> {
        let s = self.stencil(t)?;
        let mut k = Vec::new();
        self.base_values(ch, &s, &mut k);
        let tab = &self.tables[ch];
        Ok((tab.plus.iter().map(|i| k[*i]).collect(), tab.minus.iter().map(|i| k[*i]).collect()))
    }

    pub fn plus_index(&self, ch: usize) -> &[usize] {
        &self.tables[ch].plus
    }

    pub fn minus_index(&self, ch: usize) -> &[usize] {
        &self.tables[ch].minus
    }

    pub fn relaxation(&self, ch: usize, t: f64) -> Result<RelaxationCoeffs> {
        if self.tables[ch].channel.coupling != Coupling::Transverse {
            return Err(Error::MissingChannel("transverse"));
        }
        let (kp, km) = self.shifted(ch, t)?;
        Ok(relaxation_from_k(&self.tables[ch].c, &self.freqs, t, &kp, &km))
    }

    pub fn dephasing(&self, ch: usize, t: f64) -> Result<DephasingCoeffs> {
        if self.tables[ch].channel.coupling != Coupling::Longitudinal {
            return Err(Error::MissingChannel("longitudinal"));
        }
        let (kp, _) = self.shifted(ch, t)?;
        Ok(dephasing_from_k(&self.tables[ch].c, kp[0]))
    }

    /// Values stored at grid node `i` (no interpolation).
    pub fn node_relaxation(&self, ch: usize, i: usize) -> RelaxationCoeffs {
        let tab = &self.tables[ch];
        let row = &tab.data[i * tab.nshift..(i + 1) * tab.nshift];
        let kp: Vec<C64> = tab.plus.iter().map(|j| row[*j]).collect();
        let km: Vec<C64> = tab.minus.iter().map(|j| row[*j]).collect();
        relaxation_from_k(&tab.c, &self.freqs, self.times[i], &kp, &km)
    }
}
