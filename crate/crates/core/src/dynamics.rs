//! TCL2 generator assembly and time integration.
//!
//! For a coupling operator A_α(t) and bath correlation C_{αβ}, the generator is
//! X + X† with X = Σ_{αβ} ∫₀ᵗ ds C_{αβ}(t−s) [A_β(s) ρ, A_α(t)]. Writing
//! A_β(s) = Σ_j Π^(j)_β e^{i s_j ω_β s}, the s-integral collapses onto the base
//! integrals K(s_j ω_β, t), so every term is applied as a structured map on the
//! 2^N × 2^N state without building superoperators.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::hilbert::{self, site_mask, z_sign, Bitstring, DensityMatrix, Ladder, RegisterConfig};
use crate::spectra::{build_rate_table, Coupling, NoiseChannel, RateTable, RelaxationCoeffs, DephasingCoeffs};
use crate::C64;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };
const IM: C64 = C64 { re: 0.0, im: 1.0 };

#[derive(Copy, Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorOptions {
    #[serde(default = "yes")]
    pub include_nonsecular: bool,
    #[serde(default = "yes")]
    pub include_lamb_hamiltonians: bool,
}

fn yes() -> bool {
    true
}

impl Default for GeneratorOptions {
    fn default() -> Self {
        Self { include_nonsecular: true, include_lamb_hamiltonians: true }
    }
}

#[derive(Clone, Debug)]
pub struct GeneratorContext {
    pub register: RegisterConfig,
    pub channels: Vec<NoiseChannel>,
    pub table: RateTable,
    pub options: GeneratorOptions,
}

impl GeneratorContext {
    pub fn new(
        register: RegisterConfig,
        channels: Vec<NoiseChannel>,
        t_max: f64,
        dt_rate: f64,
        options: GeneratorOptions,
    ) -> Result<Self> {
        let table = build_rate_table(&channels, &register, t_max, dt_rate)?;
        Ok(Self { register, channels, table, options })
    }

    pub fn from_table(register: RegisterConfig, table: RateTable, options: GeneratorOptions) -> Self {
        let channels = (0..table.n_channels()).map(|c| table.channel(c).clone()).collect();
        Self { register, channels, table, options }
    }

    pub fn n(&self) -> usize {
        self.register.n()
    }
}

/// Which channels a generator evaluation includes.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Select {
    All,
    Transverse,
    Longitudinal,
    Channel(usize),
}

impl Select {
    fn admits(&self, ch: usize, coupling: Coupling) -> bool {
        match self {
            Select::All => true,
            Select::Transverse => coupling == Coupling::Transverse,
            Select::Longitudinal => coupling == Coupling::Longitudinal,
            Select::Channel(c) => *c == ch,
        }
    }
}

struct TransversePrep {
    ch: usize,
    c: Array2<C64>,
    // groups of α whose rows of c coincide
    groups: Vec<Vec<usize>>,
}

struct DephasingPrep {
    ch: usize,
    p: Vec<C64>,
    r: Vec<f64>,
}

/// Reusable evaluator of the generator with preallocated work buffers.
pub struct Generator<'a> {
    ctx: &'a GeneratorContext,
    n: usize,
    d: usize,
    trans: Vec<TransversePrep>,
    deph: Vec<DephasingPrep>,
    kbuf: Vec<C64>,
    w: Vec<C64>,
    w2: Vec<C64>,
    x: Vec<C64>,
}

impl<'a> Generator<'a> {
    pub fn new(ctx: &'a GeneratorContext) -> Result<Self> {
        let n = ctx.n();
        let d = 1usize << n;
        let mut trans = Vec::new();
        let mut deph = Vec::new();
        for ch in 0..ctx.table.n_channels() {
            let c = ctx.table.spatial(ch).clone();
            match ctx.table.channel(ch).coupling {
                Coupling::Transverse => {
                    let mut groups: Vec<Vec<usize>> = Vec::new();
                    for a in 0..n {
                        match groups.iter_mut().find(|g| c.row(g[0]) == c.row(a)) {
                            Some(g) => g.push(a),
                            None => groups.push(vec![a]),
                        }
                    }
                    trans.push(TransversePrep { ch, c, groups });
                }
                Coupling::Longitudinal => {
                    let mut p = vec![ZERO; d * d];
                    let mut r = vec![0.0; d];
                    for m in 0..d {
                        let zm: Vec<f64> = (1..=n).map(|a| z_sign(m, a, n)).collect();
                        let mut rm = ZERO;
                        for a in 0..n {
                            for b in 0..n {
                                rm += c[[a, b]] * zm[a] * zm[b];
                            }
                        }
                        r[m] = rm.re;
                        for k in 0..d {
                            let mut acc = ZERO;
                            for a in 0..n {
                                let za = z_sign(k, a + 1, n);
                                for b in 0..n {
                                    acc += c[[a, b]] * (zm[b] * za);
                                }
                            }
                            p[m * d + k] = acc;
                        }
                    }
                    deph.push(DephasingPrep { ch, p, r });
                }
            }
        }
        Ok(Self {
            ctx,
            n,
            d,
            trans,
            deph,
            kbuf: Vec::new(),
            w: vec![ZERO; d * d],
            w2: vec![ZERO; d * d],
            x: vec![ZERO; d * d],
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// out = D_sel[ρ](t); ρ must be Hermitian, row-major d×d.
    pub fn apply(&mut self, t: f64, rho: &[C64], out: &mut [C64], sel: Select) -> Result<()> {
        let d = self.d;
        let n = self.n;
        out.iter_mut().for_each(|z| *z = ZERO);
        let st = self.ctx.table.stencil(t)?;
        let opts = self.ctx.options;
        let freqs = &self.ctx.register.freqs;

        for tp in &self.trans {
            if !sel.admits(tp.ch, Coupling::Transverse) {
                continue;
            }
            self.ctx.table.base_values(tp.ch, &st, &mut self.kbuf);
            let plus = self.ctx.table.plus_index(tp.ch);
            let minus = self.ctx.table.minus_index(tp.ch);
            // κ_{β1} multiplies Π†_β, κ_{β2} multiplies Π_β
            let k1: Vec<C64> = (0..n).map(|b| self.kbuf[plus[b]] * C64::from_polar(1.0, freqs[b] * t)).collect();
            let k2: Vec<C64> = (0..n).map(|b| self.kbuf[minus[b]] * C64::from_polar(1.0, -freqs[b] * t)).collect();
            let ph: Vec<C64> = (0..n).map(|a| C64::from_polar(1.0, freqs[a] * t)).collect();
            self.x.iter_mut().for_each(|z| *z = ZERO);
            for group in &tp.groups {
                let a0 = group[0];
                if opts.include_nonsecular {
                    self.w.iter_mut().for_each(|z| *z = ZERO);
                    for b in 0..n {
                        let c = tp.c[[a0, b]];
                        if c != ZERO {
                            left_offdiag(&mut self.w, rho, d, site_mask(b + 1, n), c * k2[b], c * k1[b]);
                        }
                    }
                    for &a in group {
                        let mask = site_mask(a + 1, n);
                        commutator_offdiag(&mut self.x, &self.w, d, mask, ph[a].conj(), ph[a]);
                    }
                } else {
                    // pairs Π†_α with Π_β and Π_α with Π†_β only
                    self.w.iter_mut().for_each(|z| *z = ZERO);
                    self.w2.iter_mut().for_each(|z| *z = ZERO);
                    for b in 0..n {
                        let c = tp.c[[a0, b]];
                        if c != ZERO {
                            let mask = site_mask(b + 1, n);
                            left_offdiag(&mut self.w, rho, d, mask, c * k2[b], ZERO);
                            left_offdiag(&mut self.w2, rho, d, mask, ZERO, c * k1[b]);
                        }
                    }
                    for &a in group {
                        let mask = site_mask(a + 1, n);
                        commutator_offdiag(&mut self.x, &self.w, d, mask, ZERO, ph[a]);
                        commutator_offdiag(&mut self.x, &self.w2, d, mask, ph[a].conj(), ZERO);
                    }
                }
            }
            add_hermitian_part(out, &self.x, d);
            if !opts.include_lamb_hamiltonians {
                let g = dense_g(&tp.c, &k1, &k2, &ph, n, opts.include_nonsecular);
                // remove −i[H, ρ] with H = (G − G†)/(2i)
                let mut m = vec![ZERO; d * d];
                for i in 0..d {
                    for j in 0..d {
                        m[i * d + j] = 0.5 * (g[i * d + j] - g[j * d + i].conj());
                    }
                }
                for i in 0..d {
                    for j in 0..d {
                        let mut acc = ZERO;
                        for k in 0..d {
                            acc += m[i * d + k] * rho[k * d + j] - rho[i * d + k] * m[k * d + j];
                        }
                        out[i * d + j] += acc;
                    }
                }
            }
        }

        for dp in &self.deph {
            if !sel.admits(dp.ch, Coupling::Longitudinal) {
                continue;
            }
            self.ctx.table.base_values(dp.ch, &st, &mut self.kbuf);
            let k = self.kbuf[0];
            if opts.include_lamb_hamiltonians {
                for m in 0..d {
                    let rm = dp.r[m];
                    for j in 0..d {
                        let p = dp.p[m * d + j];
                        let f = 2.0 * k.re * p - k * rm - k.conj() * dp.r[j];
                        out[m * d + j] += f * rho[m * d + j];
                    }
                }
            } else {
                for m in 0..d {
                    for j in 0..d {
                        let f = k.re * (2.0 * dp.p[m * d + j] - (dp.r[m] + dp.r[j]));
                        out[m * d + j] += f * rho[m * d + j];
                    }
                }
            }
        }
        Ok(())
    }

    pub fn apply_dm(&mut self, t: f64, rho: &DensityMatrix, sel: Select) -> Result<Array2<C64>> {
        let d = self.d;
        if rho.dim() != d {
            return Err(Error::LengthMismatch { expected: d, got: rho.dim() });
        }
        let src = rho.mat.as_standard_layout();
        let mut out = vec![ZERO; d * d];
        self.apply(t, src.as_slice().unwrap(), &mut out, sel)?;
        Ok(Array2::from_shape_vec((d, d), out).unwrap())
    }
}

/// dst += O ρ with O = [[0, u], [l, 0]] on the masked qubit.
fn left_offdiag(dst: &mut [C64], src: &[C64], d: usize, mask: usize, u: C64, l: C64) {
    for m in 0..d {
        let coef = if m & mask == 0 { u } else { l };
        if coef == ZERO {
            continue;
        }
        let s = (m ^ mask) * d;
        let row = &src[s..s + d];
        for (o, v) in dst[m * d..(m + 1) * d].iter_mut().zip(row) {
            *o += coef * *v;
        }
    }
}

/// x += W A − A W with A = [[0, u], [l, 0]] on the masked qubit.
fn commutator_offdiag(x: &mut [C64], w: &[C64], d: usize, mask: usize, u: C64, l: C64) {
    for m in 0..d {
        let row = &w[m * d..(m + 1) * d];
        let xr = &mut x[m * d..(m + 1) * d];
        for j in 0..d {
            let coef = if j & mask != 0 { u } else { l };
            xr[j] += row[j ^ mask] * coef;
        }
        let coef = if m & mask == 0 { u } else { l };
        if coef != ZERO {
            let s = (m ^ mask) * d;
            for j in 0..d {
                xr[j] -= coef * w[s + j];
            }
        }
    }
}

fn add_hermitian_part(out: &mut [C64], x: &[C64], d: usize) {
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] += x[i * d + j] + x[j * d + i].conj();
        }
    }
}

/// Applies Π (`lower = true`) or Π† at `mask` to basis index `l`.
#[inline]
fn ladder_index(l: usize, mask: usize, lower: bool) -> Option<usize> {
    let set = l & mask != 0;
    if set == lower {
        Some(l ^ mask)
    } else {
        None
    }
}

/// G = Σ Γ_{(αi),(βj)} Π^(i)_α Π^(j)_β as a dense matrix.
fn dense_g(c: &Array2<C64>, k1: &[C64], k2: &[C64], ph: &[C64], n: usize, nonsecular: bool) -> Vec<C64> {
    let d = 1usize << n;
    let mut g = vec![ZERO; d * d];
    for col in 0..d {
        for b in 0..n {
            let mb = site_mask(b + 1, n);
            for (jlow, kb) in [(false, k1[b]), (true, k2[b])] {
                let Some(mid) = ladder_index(col, mb, jlow) else { continue };
                for a in 0..n {
                    let cab = c[[a, b]];
                    if cab == ZERO {
                        continue;
                    }
                    let ma = site_mask(a + 1, n);
                    for (ilow, pa) in [(false, ph[a]), (true, ph[a].conj())] {
                        if !nonsecular && ilow == jlow {
                            continue;
                        }
                        if let Some(row) = ladder_index(mid, ma, ilow) {
                            g[row * d + col] += cab * kb * pa;
                        }
                    }
                }
            }
        }
    }
    g
}

pub fn generator(ctx: &GeneratorContext, rho: &DensityMatrix, t: f64) -> Result<Array2<C64>> {
    Generator::new(ctx)?.apply_dm(t, rho, Select::All)
}

pub fn channel_dissipator(ctx: &GeneratorContext, ch: usize, rho: &DensityMatrix, t: f64) -> Result<Array2<C64>> {
    if ch >= ctx.channels.len() {
        return Err(Error::Invalid(format!("no channel {ch}")));
    }
    Generator::new(ctx)?.apply_dm(t, rho, Select::Channel(ch))
}

pub fn relaxation_dissipator(ctx: &GeneratorContext, rho: &DensityMatrix, t: f64) -> Result<Array2<C64>> {
    if !ctx.channels.iter().any(|c| c.coupling == Coupling::Transverse) {
        return Err(Error::MissingChannel("transverse"));
    }
    Generator::new(ctx)?.apply_dm(t, rho, Select::Transverse)
}

pub fn dephasing_dissipator(ctx: &GeneratorContext, rho: &DensityMatrix, t: f64) -> Result<Array2<C64>> {
    if !ctx.channels.iter().any(|c| c.coupling == Coupling::Longitudinal) {
        return Err(Error::MissingChannel("longitudinal"));
    }
    Generator::new(ctx)?.apply_dm(t, rho, Select::Longitudinal)
}

fn commutator(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    a.dot(b) - b.dot(a)
}

fn anticommutator(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    a.dot(b) + b.dot(a)
}

/// Textbook assembly −i[H_XY, ρ] + Σ γ^(ij)_{αβ}(Π^(i)_β ρ Π^(j)_α − ½{Π^(j)_α Π^(i)_β, ρ})
/// from reported coefficients; dense and slow, meant for cross-checks.
pub fn assemble_relaxation(co: &RelaxationCoeffs, rho: &Array2<C64>, opts: GeneratorOptions) -> Result<Array2<C64>> {
    let n = co.gamma12.nrows();
    let lo: Vec<Array2<C64>> =
        (1..=n).map(|a| hilbert::ladder(a, n, Ladder::Lowering).map(|o| o.mat)).collect::<Result<_>>()?;
    let up: Vec<Array2<C64>> = lo.iter().map(hilbert::adjoint).collect();
    let pi = |i: usize, a: usize| if i == 1 { &up[a] } else { &lo[a] };
    let d = 1 << n;
    let mut out = Array2::<C64>::zeros((d, d));
    let mut h = Array2::<C64>::zeros((d, d));
    for a in 0..n {
        for b in 0..n {
            let mut terms = vec![(1, 2, co.gamma12[[a, b]]), (2, 1, co.gamma21[[a, b]])];
            if opts.include_nonsecular {
                terms.push((1, 1, co.gamma11[[a, b]]));
                terms.push((2, 2, co.gamma22[[a, b]]));
            }
            for (i, j, g) in terms {
                let jump = pi(i, b).dot(rho).dot(pi(j, a));
                let anti = anticommutator(&pi(j, a).dot(pi(i, b)), rho);
                out = out + (jump - anti.mapv(|z| 0.5 * z)).mapv(|z| z * g);
            }
            h = h + lo[a].dot(&up[b]).mapv(|z| z * co.j1[[a, b]]) + up[a].dot(&lo[b]).mapv(|z| z * co.j2[[a, b]]);
            if opts.include_nonsecular {
                h = h
                    + up[a].dot(&up[b]).mapv(|z| z * co.j3[[a, b]])
                    + lo[a].dot(&lo[b]).mapv(|z| z * co.j3[[b, a]].conj());
            }
        }
    }
    if opts.include_lamb_hamiltonians {
        out = out - commutator(&h, rho).mapv(|z| z * IM);
    }
    Ok(out)
}

/// −i[H_ZZ, ρ] + Σ γ^(φ)_{αβ}(Z_β ρ Z_α − ½{Z_α Z_β, ρ}), dense.
pub fn assemble_dephasing(co: &DephasingCoeffs, rho: &Array2<C64>, opts: GeneratorOptions) -> Result<Array2<C64>> {
    let n = co.gamma_phi.nrows();
    let z: Vec<Array2<C64>> =
        (1..=n).map(|a| hilbert::pauli(hilbert::Axis::Z, a, n).map(|o| o.mat)).collect::<Result<_>>()?;
    let d = 1 << n;
    let mut out = Array2::<C64>::zeros((d, d));
    let mut h = Array2::<C64>::zeros((d, d));
    for a in 0..n {
        for b in 0..n {
            let g = co.gamma_phi[[a, b]];
            let zz = z[a].dot(&z[b]);
            out = out + (z[b].dot(rho).dot(&z[a]) - anticommutator(&zz, rho).mapv(|v| 0.5 * v)).mapv(|v| v * g);
            h = h + zz.mapv(|v| v * co.jzz[[a, b]]);
        }
    }
    if opts.include_lamb_hamiltonians {
        out = out - commutator(&h, rho).mapv(|v| v * IM);
    }
    Ok(out)
}

/// Right-hand side for the anti-diagonal element ρ_{l̄,l}, evaluated term by term.
pub fn antidiagonal_ode_rhs(ctx: &GeneratorContext, rho: &DensityMatrix, t: f64, l: &Bitstring) -> Result<C64> {
    let n = ctx.n();
    if l.len() != n || rho.n != n {
        return Err(Error::LengthMismatch { expected: n, got: l.len() });
    }
    let d = 1usize << n;
    let col = l.index();
    let row = (d - 1) ^ col;
    let r = |i: usize, j: usize| rho.mat[[i, j]];
    let st = ctx.table.stencil(t)?;
    let opts = ctx.options;
    let freqs = &ctx.register.freqs;
    let mut total = ZERO;
    let mut kbuf = Vec::new();
    for ch in 0..ctx.table.n_channels() {
        ctx.table.base_values(ch, &st, &mut kbuf);
        let c = ctx.table.spatial(ch);
        match ctx.table.channel(ch).coupling {
            Coupling::Longitudinal => {
                let k = kbuf[0];
                let zr: Vec<f64> = (1..=n).map(|a| z_sign(row, a, n)).collect();
                let zc: Vec<f64> = (1..=n).map(|a| z_sign(col, a, n)).collect();
                let mut acc = ZERO;
                for a in 0..n {
                    for b in 0..n {
                        let g = c[[a, b]] * 2.0 * k.re;
                        acc += g * (zr[b] * zc[a] - 0.5 * (zr[a] * zr[b] + zc[a] * zc[b]));
                        if opts.include_lamb_hamiltonians {
                            let j = c[[a, b]] * k.im;
                            acc += -IM * j * (zr[a] * zr[b] - zc[a] * zc[b]);
                        }
                    }
                }
                total += acc * r(row, col);
            }
            Coupling::Transverse => {
                let plus = ctx.table.plus_index(ch);
                let minus = ctx.table.minus_index(ch);
                // Γ for (a, i) and (b, j), i/j: false = Π†, true = Π
                let gamma = |a: usize, ilow: bool, b: usize, jlow: bool| -> C64 {
                    let (kb, sb) = if jlow { (kbuf[minus[b]], -1.0) } else { (kbuf[plus[b]], 1.0) };
                    let sa = if ilow { -1.0 } else { 1.0 };
                    c[[a, b]] * kb * C64::from_polar(1.0, (sb * freqs[b] + sa * freqs[a]) * t)
                };
                let lad = |idx: usize, site: usize, low: bool| ladder_index(idx, site_mask(site + 1, n), low);
                // (L_b ρ L_a)_{mn}
                let jump = |m: usize, nn: usize, a: usize, ilow: bool, b: usize, jlow: bool| -> C64 {
                    // L_b[m, p] nonzero iff p maps to m under L_b; L_a[q, nn] nonzero iff q = L_a(nn)
                    let p = (0..1).find_map(|_| {
                        let p = m ^ site_mask(b + 1, n);
                        (lad(p, b, jlow) == Some(m)).then_some(p)
                    });
                    let q = lad(nn, a, ilow);
                    match (p, q) {
                        (Some(p), Some(q)) => r(p, q),
                        _ => ZERO,
                    }
                };
                // (L_a L_b ρ)_{mn}
                let left2 = |m: usize, nn: usize, a: usize, ilow: bool, b: usize, jlow: bool| -> C64 {
                    let p1 = m ^ site_mask(a + 1, n);
                    if lad(p1, a, ilow) != Some(m) {
                        return ZERO;
                    }
                    let p2 = p1 ^ site_mask(b + 1, n);
                    if lad(p2, b, jlow) != Some(p1) {
                        return ZERO;
                    }
                    r(p2, nn)
                };
                // (L_b† L_a† ρ)_{mn}
                let left2_dag = |m: usize, nn: usize, a: usize, ilow: bool, b: usize, jlow: bool| -> C64 {
                    left2(m, nn, b, !jlow, a, !ilow)
                };
                let mut x_mn = ZERO;
                let mut x_nm = ZERO;
                let mut g_rho_mn = ZERO;
                let mut g_rho_nm = ZERO;
                let mut gd_rho_mn = ZERO;
                let mut gd_rho_nm = ZERO;
                for a in 0..n {
                    for b in 0..n {
                        if c[[a, b]] == ZERO {
                            continue;
                        }
                        for ilow in [false, true] {
                            for jlow in [false, true] {
                                if !opts.include_nonsecular && ilow == jlow {
                                    continue;
                                }
                                let g = gamma(a, ilow, b, jlow);
                                x_mn += g * jump(row, col, a, ilow, b, jlow);
                                x_nm += g * jump(col, row, a, ilow, b, jlow);
                                g_rho_mn += g * left2(row, col, a, ilow, b, jlow);
                                g_rho_nm += g * left2(col, row, a, ilow, b, jlow);
                                gd_rho_mn += g.conj() * left2_dag(row, col, a, ilow, b, jlow);
                                gd_rho_nm += g.conj() * left2_dag(col, row, a, ilow, b, jlow);
                            }
                        }
                    }
                }
                // D = J + J† − Gρ − ρG†  (or the symmetric split without the Hamiltonian)
                let jj = x_mn + x_nm.conj();
                let val = if opts.include_lamb_hamiltonians {
                    jj - g_rho_mn - g_rho_nm.conj()
                } else {
                    jj - 0.5 * (g_rho_mn + gd_rho_mn) - 0.5 * (gd_rho_nm.conj() + g_rho_nm.conj())
                };
                total += val;
            }
        }
    }
    Ok(total)
}

/// Trapezoid integral over the rate grid of
/// −½Σ_α(γ↑_{αα} + γ↓_{αα}) (first entry) and −2Σ_{αβ}γ^(φ)_{αβ} (second entry).
pub fn superdecoherence_parts(ctx: &GeneratorContext, t: f64) -> Result<(f64, f64)> {
    let tm = ctx.table.t_max();
    if !(t >= 0.0 && t <= tm) {
        return Err(Error::OutOfRange { t, t_max: tm });
    }
    let n = ctx.n();
    let integrand = |s: f64| -> Result<(f64, f64)> {
        let mut relax = 0.0;
        let mut deph = 0.0;
        for ch in 0..ctx.table.n_channels() {
            match ctx.table.channel(ch).coupling {
                Coupling::Transverse => {
                    let co = ctx.table.relaxation(ch, s)?;
                    for a in 0..n {
                        relax -= 0.5 * (co.gamma12[[a, a]].re + co.gamma21[[a, a]].re);
                    }
                }
                Coupling::Longitudinal => {
                    let co = ctx.table.dephasing(ch, s)?;
                    deph -= 2.0 * co.gamma_phi.iter().map(|z| z.re).sum::<f64>();
                }
            }
        }
        Ok((relax, deph))
    };
    let mut acc = (0.0, 0.0);
    let times = ctx.table.times();
    let mut prev_t = 0.0;
    let mut prev = integrand(0.0)?;
    for &node in times.iter().skip(1) {
        let s = node.min(t);
        if s <= prev_t {
            break;
        }
        let cur = integrand(s)?;
        acc.0 += 0.5 * (s - prev_t) * (prev.0 + cur.0);
        acc.1 += 0.5 * (s - prev_t) * (prev.1 + cur.1);
        prev_t = s;
        prev = cur;
        if node >= t {
            break;
        }
    }
    Ok(acc)
}

pub fn superdecoherence_exponent(ctx: &GeneratorContext, t: f64) -> Result<f64> {
    let (a, b) = superdecoherence_parts(ctx, t)?;
    Ok(a + b)
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct EvolveOptions {
    /// max-norm change allowed when the internal step is halved
    pub tol: f64,
    pub max_step: f64,
    pub max_substeps: usize,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_step: 1.0, max_substeps: 1 << 24 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, serde::Serialize)]
pub struct IntegratorStats {
    pub rk4_steps: u64,
    pub rejected_intervals: u64,
    pub min_step: f64,
    pub max_step: f64,
    pub max_halving_diff: f64,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
    pub stats: IntegratorStats,
}

impl Trajectory {
    pub fn max_trace_error(&self) -> f64 {
        self.states.iter().map(|s| (s.trace() - ONE).norm()).fold(0.0, f64::max)
    }

    pub fn max_hermiticity_error(&self) -> f64 {
        self.states.iter().map(|s| s.hermiticity_error()).fold(0.0, f64::max)
    }
}

pub fn evolve(ctx: &GeneratorContext, rho0: &DensityMatrix, t_max: f64, dt_out: f64) -> Result<Trajectory> {
    if !(dt_out > 0.0) || !(t_max >= 0.0) {
        return Err(Error::Invalid("need dt_out > 0 and t_max >= 0".into()));
    }
    let count = (t_max / dt_out + 1e-9).floor() as usize;
    let times: Vec<f64> = (0..=count).map(|k| k as f64 * dt_out).collect();
    evolve_at(ctx, rho0, &times, &EvolveOptions::default())
}

/// Integrates with classical RK4 and records the state at each of `times` (ascending, ≥ 0).
pub fn evolve_at(ctx: &GeneratorContext, rho0: &DensityMatrix, times: &[f64], opts: &EvolveOptions) -> Result<Trajectory> {
    let n = ctx.n();
    if rho0.n != n {
        return Err(Error::LengthMismatch { expected: n, got: rho0.n });
    }
    if times.windows(2).any(|w| w[1] < w[0]) || times.first().is_some_and(|t| *t < 0.0) {
        return Err(Error::Invalid("output times must be ascending and non-negative".into()));
    }
    let d = 1usize << n;
    let mut gen = Generator::new(ctx)?;
    let mut y: Vec<C64> = rho0.mat.as_standard_layout().iter().cloned().collect();
    let mut stats = IntegratorStats { min_step: f64::INFINITY, ..Default::default() };
    let mut out_states = Vec::with_capacity(times.len());
    let mut ws = Rk4Work::new(d * d);
    let mut t = 0.0;
    let mut m_prev = 0usize;
    let mut a = vec![ZERO; d * d];
    let mut b = vec![ZERO; d * d];
    for &t_out in times {
        if t_out > t {
            let span = t_out - t;
            let m_min = (span / opts.max_step).ceil().max(1.0) as usize;
            let mut m = m_prev.max(m_min).max(1);
            if m_prev == 0 {
                m = m_min;
            }
            loop {
                a.copy_from_slice(&y);
                b.copy_from_slice(&y);
                rk4(&mut gen, &mut a, t, span, m, d, &mut ws)?;
                rk4(&mut gen, &mut b, t, span, 2 * m, d, &mut ws)?;
                stats.rk4_steps += 3 * m as u64;
                let diff = a.iter().zip(&b).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
                if !diff.is_finite() || b.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                    return Err(Error::Integration { t, msg: "non-finite state".into() });
                }
                if diff < opts.tol {
                    y.copy_from_slice(&b);
                    let h = span / (2 * m) as f64;
                    stats.min_step = stats.min_step.min(h);
                    stats.max_step = stats.max_step.max(h);
                    stats.max_halving_diff = stats.max_halving_diff.max(diff);
                    m_prev = if diff < opts.tol / 32.0 { (m / 2).max(m_min) } else { m };
                    break;
                }
                stats.rejected_intervals += 1;
                m *= 2;
                if m > opts.max_substeps {
                    return Err(Error::Integration {
                        t,
                        msg: format!("step halving did not converge (difference {diff:.3e})"),
                    });
                }
            }
            t = t_out;
        }
        let mat = Array2::from_shape_vec((d, d), y.clone()).unwrap();
        out_states.push(DensityMatrix::from_matrix_unchecked(n, mat)?);
    }
    if stats.min_step.is_infinite() {
        stats.min_step = 0.0;
    }
    Ok(Trajectory { times: times.to_vec(), states: out_states, stats })
}

struct Rk4Work {
    k1: Vec<C64>,
    k2: Vec<C64>,
    k3: Vec<C64>,
    k4: Vec<C64>,
    tmp: Vec<C64>,
}

impl Rk4Work {
    fn new(len: usize) -> Self {
        Self {
            k1: vec![ZERO; len],
            k2: vec![ZERO; len],
            k3: vec![ZERO; len],
            k4: vec![ZERO; len],
            tmp: vec![ZERO; len],
        }
    }
}

fn rk4(gen: &mut Generator, y: &mut [C64], t0: f64, span: f64, m: usize, d: usize, w: &mut Rk4Work) -> Result<()> {
    let h = span / m as f64;
    for s in 0..m {
        let t = t0 + span * s as f64 / m as f64;
        gen.apply(t, y, &mut w.k1, Select::All)?;
        for i in 0..y.len() {
            w.tmp[i] = y[i] + 0.5 * h * w.k1[i];
        }
        gen.apply(t + 0.5 * h, &w.tmp, &mut w.k2, Select::All)?;
        for i in 0..y.len() {
            w.tmp[i] = y[i] + 0.5 * h * w.k2[i];
        }
        gen.apply(t + 0.5 * h, &w.tmp, &mut w.k3, Select::All)?;
        for i in 0..y.len() {
            w.tmp[i] = y[i] + h * w.k3[i];
        }
        gen.apply(t + h, &w.tmp, &mut w.k4, Select::All)?;
        for i in 0..y.len() {
            y[i] += h / 6.0 * (w.k1[i] + 2.0 * w.k2[i] + 2.0 * w.k3[i] + w.k4[i]);
        }
        for i in 0..d {
            for j in i..d {
                let avg = 0.5 * (y[i * d + j] + y[j * d + i].conj());
                y[i * d + j] = avg;
                y[j * d + i] = avg.conj();
            }
        }
    }
    Ok(())
}
