//! Filter-weighted spectral integrals
//!
//!   K(ν, t) = (1/2π) ∫ S(ω) F(ω + ν, t) dω,   F(Ω, t) = (1 − e^{−iΩt}) / (iΩ).
//!
//! With x = ω + ν and g(x) = S(x − ν) the integrand is split as
//! g(x) = g(0) + x h(x) near x = 0. The g(0) part integrates in closed form through Si and
//! Cin. The smooth remainder h is expanded in Legendre polynomials on adaptive
//! panels, and its oscillatory moments are exact spherical Bessel values, so the
//! panel layout does not depend on t.

use std::f64::consts::PI;
use std::sync::OnceLock;

use super::special::{cin, gauss_legendre, legendre_all, si, spherical_bessel};
use super::SpectrumModel;
use crate::error::{Error, Result};
use crate::C64;

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct QuadOptions {
    pub order: usize,
    pub rel_tol: f64,
    pub max_depth: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self { order: 24, rel_tol: 1e-13, max_depth: 64 }
    }
}

impl QuadOptions {
    /// Same scheme with twice the nodes per panel.
    pub fn doubled(&self) -> Self {
        Self { order: 2 * self.order, rel_tol: self.rel_tol, max_depth: self.max_depth + 8 }
    }
}

struct Rule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    // proj[k][i] = (2k+1)/2 · w_i · P_k(x_i)
    proj: Vec<Vec<f64>>,
}

impl Rule {
    fn new(n: usize) -> Self {
        let (nodes, weights) = gauss_legendre(n);
        let mut proj = vec![vec![0.0; n]; n];
        let mut p = vec![0.0; n];
        for i in 0..n {
            legendre_all(n, nodes[i], &mut p);
            for k in 0..n {
                proj[k][i] = (2 * k + 1) as f64 / 2.0 * weights[i] * p[k];
            }
        }
        Self { nodes, weights, proj }
    }
}

fn rule(n: usize) -> &'static Rule {
    static R24: OnceLock<Rule> = OnceLock::new();
    static R48: OnceLock<Rule> = OnceLock::new();
    match n {
        24 => R24.get_or_init(|| Rule::new(24)),
        48 => R48.get_or_init(|| Rule::new(48)),
        _ => Box::leak(Box::new(Rule::new(n))),
    }
}

#[derive(Clone, Debug)]
struct Panel {
    mid: f64,
    half: f64,
    // Legendre coefficients of h in the local variable
    coef: Vec<f64>,
    // h at the Gauss nodes, for the non-oscillatory regime
    vals: Vec<f64>,
}

#[derive(Clone, Debug)]
enum Form {
    /// Infinite flat spectrum: K = S₀/2 for t > 0.
    Flat(f64),
    Panels {
        // window carrying the subtracted g(0)
        lo: f64,
        hi: f64,
        g0: f64,
        h_integral: f64,
        panels: Vec<Panel>,
    },
}

/// Precomputed K(ν, ·) for one spectrum and one frequency shift ν.
#[derive(Clone, Debug)]
pub struct BaseIntegral {
    pub nu: f64,
    order: usize,
    form: Form,
}

impl BaseIntegral {
    pub fn new(model: &SpectrumModel, nu: f64, opts: &QuadOptions) -> Result<Self> {
        model.validate()?;
        if let SpectrumModel::White { s0 } = model {
            return Ok(Self { nu, order: opts.order, form: Form::Flat(*s0) });
        }
        let (a, b) = model.support();
        // panels are laid out in ω so kinks near ω = 0 keep full relative precision
        let mut breaks: Vec<f64> = model.kinks();
        breaks.push(a);
        breaks.push(b);
        let has_zero = a <= -nu && -nu <= b;
        if has_zero {
            breaks.push(-nu);
        }
        breaks.retain(|w| *w >= a && *w <= b);
        breaks.sort_by(|x, y| x.partial_cmp(y).unwrap());
        breaks.dedup();

        let g0 = if has_zero { model.value(-nu) } else { 0.0 };
        // g0 is only subtracted on the two break intervals touching x = 0
        let (wlo, whi) = if has_zero {
            let below = breaks.iter().rev().find(|w| **w < -nu).copied().unwrap_or(-nu);
            let above = breaks.iter().find(|w| **w > -nu).copied().unwrap_or(-nu);
            (below, above)
        } else {
            (-nu, -nu)
        };
        let r = rule(opts.order);
        let mut panels = Vec::new();
        for w in breaks.windows(2) {
            let sub = if w[0] >= wlo && w[1] <= whi { g0 } else { 0.0 };
            let h = |om: f64| (model.value(om) - sub) / (om + nu);
            subdivide(&h, w[0], w[1], r, opts, 0, &mut panels).map_err(|achieved| {
                Error::Quadrature { context: format!("shift {nu} on [{}, {}]", w[0] + nu, w[1] + nu), achieved }
            })?;
        }
        for p in &mut panels {
            p.mid += nu;
        }
        let (wlo, whi) = (wlo + nu, whi + nu);
        let h_integral = panels.iter().map(|p| 2.0 * p.half * p.coef[0]).sum();
        Ok(Self { nu, order: opts.order, form: Form::Panels { lo: wlo, hi: whi, g0, h_integral, panels } })
    }

    /// K(ν, t) for t ≥ 0.
    pub fn eval(&self, t: f64) -> C64 {
        if t <= 0.0 {
            return C64::new(0.0, 0.0);
        }
        match &self.form {
            Form::Flat(s0) => C64::new(0.5 * s0, 0.0),
            Form::Panels { lo, hi, g0, h_integral, panels } => {
                let mut acc = C64::new(0.0, 0.0);
                if *g0 != 0.0 {
                    let re = si(hi * t) - si(lo * t);
                    let im = -(cin(hi * t) - cin(lo * t));
                    acc += *g0 * C64::new(re, im);
                }
                acc += C64::new(0.0, -h_integral);
                let mut osc = C64::new(0.0, 0.0);
                let r = rule(self.order);
                let mut jk = vec![0.0; self.order];
                for p in panels {
                    let w = p.half * t;
                    let val = if w <= 1.0 {
                        let mut s = C64::new(0.0, 0.0);
                        for i in 0..self.order {
                            let x = p.mid + p.half * r.nodes[i];
                            s += r.weights[i] * p.vals[i] * C64::from_polar(1.0, -x * t);
                        }
                        s * p.half
                    } else {
                        spherical_bessel(self.order, w, &mut jk);
                        // Σ a_k 2 (−i)^k j_k(w)
                        let mut re = 0.0;
                        let mut im = 0.0;
                        for k in 0..self.order {
                            let v = 2.0 * p.coef[k] * jk[k];
                            match k % 4 {
                                0 => re += v,
                                1 => im -= v,
                                2 => re -= v,
                                _ => im += v,
                            }
                        }
                        C64::from_polar(p.half, -p.mid * t) * C64::new(re, im)
                    };
                    osc += val;
                }
                acc += C64::new(0.0, 1.0) * osc;
                acc / (2.0 * PI)
            }
        }
    }

    pub fn panel_count(&self) -> usize {
        match &self.form {
            Form::Flat(_) => 0,
            Form::Panels { panels, .. } => panels.len(),
        }
    }
}

fn subdivide(
    h: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    r: &Rule,
    opts: &QuadOptions,
    depth: usize,
    out: &mut Vec<Panel>,
) -> std::result::Result<(), f64> {
    let n = opts.order;
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let vals: Vec<f64> = r.nodes.iter().map(|y| h(mid + half * y)).collect();
    let coef: Vec<f64> = (0..n).map(|k| r.proj[k].iter().zip(&vals).map(|(p, v)| p * v).sum()).collect();
    let scale: f64 = coef.iter().map(|c| c.abs()).sum();
    let tail: f64 = coef[n - 4..].iter().map(|c| c.abs()).sum();
    if !scale.is_finite() {
        return Err(f64::INFINITY);
    }
    if tail <= opts.rel_tol * scale {
        out.push(Panel { mid, half, coef, vals });
        return Ok(());
    }
    if depth >= opts.max_depth || half <= 1e-13 * mid.abs().max(1e-300) {
        return Err(tail / scale);
    }
    subdivide(h, a, mid, r, opts, depth + 1, out)?;
    subdivide(h, mid, b, r, opts, depth + 1, out)
}
