//! Independent reference computations shared by the integration tests.
//!
//! Nothing here calls into the library's numerics: operators, correlation
//! functions and time integrals are rebuilt from scratch with plain dense
//! matrices and composite Gauss–Legendre rules.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64 as C64;

pub type Mat = Vec<Vec<C64>>;

pub const Z0: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };
pub const IU: C64 = C64 { re: 0.0, im: 1.0 };

pub fn zeros(d: usize) -> Mat {
    vec![vec![Z0; d]; d]
}

pub fn eye(d: usize) -> Mat {
    let mut m = zeros(d);
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = ONE;
    }
    m
}

pub fn mul(a: &Mat, b: &Mat) -> Mat {
    let d = a.len();
    let mut c = zeros(d);
    for i in 0..d {
        for k in 0..d {
            if a[i][k] == Z0 {
                continue;
            }
            for j in 0..d {
                c[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    c
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter().zip(b).map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect()).collect()
}

pub fn sub(a: &Mat, b: &Mat) -> Mat {
    a.iter().zip(b).map(|(r, s)| r.iter().zip(s).map(|(x, y)| x - y).collect()).collect()
}

pub fn scale(a: &Mat, z: C64) -> Mat {
    a.iter().map(|r| r.iter().map(|x| x * z).collect()).collect()
}

pub fn dagger(a: &Mat) -> Mat {
    let d = a.len();
    (0..d).map(|i| (0..d).map(|j| a[j][i].conj()).collect()).collect()
}

pub fn kron(a: &Mat, b: &Mat) -> Mat {
    let (da, db) = (a.len(), b.len());
    let mut c = zeros(da * db);
    for i in 0..da {
        for j in 0..da {
            for k in 0..db {
                for l in 0..db {
                    c[i * db + k][j * db + l] = a[i][j] * b[k][l];
                }
            }
        }
    }
    c
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

pub fn from_array(m: &ndarray::Array2<C64>) -> Mat {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[[i, j]]).collect()).collect()
}

pub fn to_array(m: &Mat) -> ndarray::Array2<C64> {
    let d = m.len();
    ndarray::Array2::from_shape_fn((d, d), |(i, j)| m[i][j])
}

/// Single-qubit matrices in the (|0⟩, |1⟩) basis, excited state |1⟩.
pub fn sx() -> Mat {
    vec![vec![Z0, ONE], vec![ONE, Z0]]
}

pub fn sz_energy() -> Mat {
    vec![vec![-ONE, Z0], vec![Z0, ONE]]
}

pub fn lowering() -> Mat {
    vec![vec![Z0, ONE], vec![Z0, Z0]]
}

/// `op` on qubit `site` (1 = leftmost factor) of `n`.
pub fn on_site(op: &Mat, site: usize, n: usize) -> Mat {
    let id = eye(2);
    let mut m = vec![vec![ONE]];
    for s in 1..=n {
        m = kron(&m, if s == site { op } else { &id });
    }
    m
}

/// Random density matrix: G G† / tr with Gaussian-ish entries from a small LCG.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next_f64(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((self.0 >> 11) as f64) / ((1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.next_f64().max(1e-300);
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    }
}

pub fn random_density(d: usize, rng: &mut Lcg) -> Mat {
    let g: Mat = (0..d).map(|_| (0..d).map(|_| C64::new(rng.normal(), rng.normal())).collect()).collect();
    let r = mul(&g, &dagger(&g));
    let tr: C64 = (0..d).map(|i| r[i][i]).sum();
    scale(&r, ONE / tr)
}

pub fn random_hermitian(d: usize, rng: &mut Lcg) -> Mat {
    let g: Mat = (0..d).map(|_| (0..d).map(|_| C64::new(rng.normal(), rng.normal())).collect()).collect();
    scale(&add(&g, &dagger(&g)), C64::new(0.5, 0.0))
}

/// Gauss–Legendre nodes/weights on [−1, 1] by Golub–Welsch-free Newton iteration
/// from the asymptotic initial guess (kept separate from the library's rule).
pub fn gl(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = ((4 * i + 3) as f64 * PI / (4 * n + 2) as f64).cos();
        let mut dp = 1.0;
        for _ in 0..200 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (p0 - z * p1) / (1.0 - z * z);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

/// Panels on [0, t]: geometric refinement towards 0 from `h0`, then width ≤ `wmax`.
pub fn panels(t: f64, h0: f64, wmax: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut a = 0.0;
    let mut h = h0;
    while a < t {
        let b = (a + h.min(wmax)).min(t);
        out.push((a, b));
        a = b;
        h *= 1.5;
    }
    out
}

/// ∫₀ᵗ f(u) du by composite Gauss–Legendre.
pub fn integrate<F: FnMut(f64) -> C64>(t: f64, h0: f64, wmax: f64, order: usize, mut f: F) -> C64 {
    let (x, w) = gl(order);
    let mut acc = Z0;
    for (a, b) in panels(t, h0, wmax) {
        let (m, h) = (0.5 * (a + b), 0.5 * (b - a));
        for i in 0..order {
            acc += w[i] * h * f(m + h * x[i]);
        }
    }
    acc
}

/// Ohmic bath correlation (1/2π)∫₀^∞ λω e^{−ω/ω_c} e^{−iωτ} dω in closed form.
pub fn ohmic_corr(lambda: f64, omega_c: f64, tau: f64) -> C64 {
    let den = C64::new(1.0 / omega_c, tau);
    C64::new(lambda / (2.0 * PI), 0.0) / (den * den)
}

/// K(ν, t) = ∫₀ᵗ C(u) e^{−iνu} du in the time domain.
pub fn k_time_domain(lambda: f64, omega_c: f64, nu: f64, t: f64) -> C64 {
    integrate(t, 1e-3, 0.25, 20, |u| ohmic_corr(lambda, omega_c, u) * C64::from_polar(1.0, -nu * u))
}

/// Spatial factor c_{αβ}: e^{iθ}ξ_{αβ} for α < β, conjugate below, 1 on the diagonal.
pub fn spatial(xi: &[Vec<f64>], theta: f64) -> Mat {
    let n = xi.len();
    (0..n)
        .map(|a| {
            (0..n)
                .map(|b| {
                    if a == b {
                        ONE
                    } else if a < b {
                        C64::from_polar(xi[a][b], theta)
                    } else {
                        C64::from_polar(xi[a][b], -theta)
                    }
                })
                .collect()
        })
        .collect()
}

/// Brute-force second-order TCL generator for transverse coupling X_α ⊗ B_α:
/// −∫₀ᵗ ds Tr_B [H_I(t), [H_I(s), ρ ⊗ ρ_B]] with H_I(s) = Σ_α A_α(s) ⊗ B_α(s),
/// A_α(s) = e^{iH₀s} X_α e^{−iH₀s}, ⟨B_α(t)B_β(s)⟩ = c_{αβ} C(t − s).
pub struct Tcl2Oracle {
    pub n: usize,
    pub freqs: Vec<f64>,
    pub c: Mat,
    pub lambda: f64,
    pub omega_c: f64,
    x: Vec<Mat>,
    energies: Vec<f64>,
}

impl Tcl2Oracle {
    pub fn new(freqs: &[f64], c: Mat, lambda: f64, omega_c: f64) -> Self {
        let n = freqs.len();
        let x: Vec<Mat> = (1..=n).map(|a| on_site(&sx(), a, n)).collect();
        let mut h0 = zeros(1 << n);
        for a in 0..n {
            h0 = add(&h0, &scale(&on_site(&sz_energy(), a + 1, n), C64::new(freqs[a] / 2.0, 0.0)));
        }
        let energies = (0..1 << n).map(|i| h0[i][i].re).collect();
        Self { n, freqs: freqs.to_vec(), c, lambda, omega_c, x, energies }
    }

    pub fn a(&self, alpha: usize, s: f64) -> Mat {
        let d = 1 << self.n;
        let mut m = self.x[alpha].clone();
        for i in 0..d {
            for j in 0..d {
                m[i][j] *= C64::from_polar(1.0, (self.energies[i] - self.energies[j]) * s);
            }
        }
        m
    }

    /// (Λ_β(t), Λ'_β(t)) = (∫₀ᵗ C(t−s) A_β(s) ds, ∫₀ᵗ C(s−t) A_β(s) ds).
    pub fn lambdas(&self, t: f64) -> Vec<(Mat, Mat)> {
        let d = 1 << self.n;
        let (xg, wg) = gl(20);
        let mut nodes: Vec<(f64, f64)> = Vec::new();
        for (pa, pb) in panels(t, 1e-3, 1.0) {
            let (m, h) = (0.5 * (pa + pb), 0.5 * (pb - pa));
            for i in 0..20 {
                nodes.push((m + h * xg[i], wg[i] * h));
            }
        }
        let cf: Vec<(C64, C64, f64)> = nodes
            .iter()
            .map(|(u, w)| {
                (
                    ohmic_corr(self.lambda, self.omega_c, *u) * *w,
                    ohmic_corr(self.lambda, self.omega_c, -*u) * *w,
                    t - *u,
                )
            })
            .collect();
        (0..self.n)
            .map(|b| {
                let mut l = zeros(d);
                let mut lp = zeros(d);
                for i in 0..d {
                    for j in 0..d {
                        let x = self.x[b][i][j];
                        if x == Z0 {
                            continue;
                        }
                        let de = self.energies[i] - self.energies[j];
                        let (mut acc, mut accp) = (Z0, Z0);
                        for (f, g, s) in &cf {
                            let ph = C64::from_polar(1.0, de * s);
                            acc += f * ph;
                            accp += g * ph;
                        }
                        l[i][j] = x * acc;
                        lp[i][j] = x * accp;
                    }
                }
                (l, lp)
            })
            .collect()
    }

    pub fn generator_with(&self, t: f64, lam: &[(Mat, Mat)], rho: &Mat) -> Mat {
        let d = 1 << self.n;
        let mut out = zeros(d);
        for a in 0..self.n {
            let at = self.a(a, t);
            for b in 0..self.n {
                let (l, lp) = &lam[b];
                // Tr_B(B_α(t) B_β(s) ρ_B) = c_{αβ}C(t−s); Tr_B(ρ_B B_β(s) B_α(t)) = c_{βα}C(s−t)
                let cab = self.c[a][b];
                let cba = self.c[b][a];
                let t1 = sub(&mul(&at, &mul(l, rho)), &mul(&mul(l, rho), &at));
                let t2 = sub(&mul(&mul(rho, lp), &at), &mul(&mul(&at, rho), lp));
                out = sub(&out, &add(&scale(&t1, cab), &scale(&t2, cba)));
            }
        }
        out
    }

    pub fn generator(&self, t: f64, rho: &Mat) -> Mat {
        let lam = self.lambdas(t);
        self.generator_with(t, &lam, rho)
    }

    /// Fixed-step RK4 with step `h` from ρ(0) to `t_end`.
    pub fn evolve(&self, rho0: &Mat, t_end: f64, h: f64) -> Mat {
        let steps = (t_end / h).round() as usize;
        let mut rho = rho0.clone();
        let mut lam_prev = self.lambdas(0.0);
        for k in 0..steps {
            let t = k as f64 * h;
            let lam_mid = self.lambdas(t + 0.5 * h);
            let lam_end = self.lambdas(t + h);
            let k1 = self.generator_with(t, &lam_prev, &rho);
            let k2 = self.generator_with(t + 0.5 * h, &lam_mid, &add(&rho, &scale(&k1, C64::new(0.5 * h, 0.0))));
            let k3 = self.generator_with(t + 0.5 * h, &lam_mid, &add(&rho, &scale(&k2, C64::new(0.5 * h, 0.0))));
            let k4 = self.generator_with(t + h, &lam_end, &add(&rho, &scale(&k3, C64::new(h, 0.0))));
            let inc = add(&add(&k1, &scale(&k2, C64::new(2.0, 0.0))), &add(&scale(&k3, C64::new(2.0, 0.0)), &k4));
            rho = add(&rho, &scale(&inc, C64::new(h / 6.0, 0.0)));
            lam_prev = lam_end;
        }
        rho
    }
}

/// I_q = tr(ρ_q ρ_{−q}) with ρ_q the block of ρ changing the Hamming weight by q.
pub fn mqc_oracle(rho: &Mat, n: usize) -> BTreeMap<i32, f64> {
    let d = 1 << n;
    let weight = |l: usize| l.count_ones() as i32;
    let ni = n as i32;
    (-ni..=ni)
        .map(|q| {
            let part = |q: i32| -> Mat {
                let mut m = zeros(d);
                for l in 0..d {
                    for k in 0..d {
                        if weight(l) - weight(k) == q {
                            m[l][k] = rho[l][k];
                        }
                    }
                }
                m
            };
            let prod = mul(&part(q), &part(-q));
            (q, (0..d).map(|i| prod[i][i]).sum::<C64>().re)
        })
        .collect()
}
