//! Dense operators and states on N-qubit registers.
//!
//! Basis states |l⟩ are indexed by big-endian bitstrings: qubit 1 is the most
//! significant bit. The excited state is |1⟩ with Z|1⟩ = +|1⟩ and Z|0⟩ = −|0⟩,
//! so Z = diag(−1, +1), Π = |0⟩⟨1| lowers the energy and Π†Π = (1 + Z)/2 is the
//! excited-state projector. Every other module relies on this convention.

use std::collections::BTreeMap;
use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::C64;

pub const MAX_QUBITS: usize = 12;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };
const I: C64 = C64 { re: 0.0, im: 1.0 };

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Ladder {
    Raising,
    Lowering,
}

/// Qubit count and transition frequencies ω_α.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegisterConfig {
    pub freqs: Vec<f64>,
}

impl RegisterConfig {
    pub fn new(freqs: Vec<f64>) -> Result<Self> {
        if freqs.is_empty() {
            return Err(Error::Invalid("register needs at least one qubit".into()));
        }
        if freqs.len() > MAX_QUBITS {
            return Err(Error::TooLarge(freqs.len()));
        }
        if let Some(w) = freqs.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::Invalid(format!("qubit frequency {w} must be positive")));
        }
        Ok(Self { freqs })
    }

    pub fn uniform(n: usize, omega: f64) -> Result<Self> {
        Self::new(vec![omega; n])
    }

    pub fn n(&self) -> usize {
        self.freqs.len()
    }

    pub fn dim(&self) -> usize {
        1 << self.n()
    }

    pub fn is_uniform(&self) -> bool {
        self.freqs.iter().all(|w| *w == self.freqs[0])
    }

    pub fn mean_frequency(&self) -> f64 {
        self.freqs.iter().sum::<f64>() / self.n() as f64
    }
}

fn check_size(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Invalid("qubit count must be positive".into()));
    }
    if n > MAX_QUBITS {
        return Err(Error::TooLarge(n));
    }
    Ok(())
}

fn check_site(site: usize, n: usize) -> Result<()> {
    check_size(n)?;
    if site == 0 || site > n {
        return Err(Error::SiteOutOfRange { site, n });
    }
    Ok(())
}

/// Bit mask of qubit `site` (1-based) in an `n`-qubit index.
#[inline]
pub fn site_mask(site: usize, n: usize) -> usize {
    1 << (n - site)
}

/// Z eigenvalue of qubit `site` in basis state `l`.
#[inline]
pub fn z_sign(l: usize, site: usize, n: usize) -> f64 {
    if l & site_mask(site, n) != 0 {
        1.0
    } else {
        -1.0
    }
}

/// Dense operator on an `n`-qubit register.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    pub n: usize,
    pub mat: Array2<C64>,
}

impl Operator {
    pub fn from_matrix(n: usize, mat: Array2<C64>) -> Result<Self> {
        check_size(n)?;
        let d = 1 << n;
        if mat.dim() != (d, d) {
            return Err(Error::LengthMismatch { expected: d, got: mat.nrows() });
        }
        Ok(Self { n, mat })
    }

    pub fn identity(n: usize) -> Result<Self> {
        check_size(n)?;
        Ok(Self { n, mat: Array2::eye(1 << n) })
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn adjoint(&self) -> Self {
        Self { n: self.n, mat: adjoint(&self.mat) }
    }

    pub fn dot(&self, other: &Operator) -> Operator {
        Operator { n: self.n, mat: self.mat.dot(&other.mat) }
    }

    pub fn hermiticity_error(&self) -> f64 {
        hermiticity_error(&self.mat)
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermiticity_error() < 1e-12
    }
}

pub fn adjoint(m: &Array2<C64>) -> Array2<C64> {
    m.t().mapv(|z| z.conj())
}

pub fn hermiticity_error(m: &Array2<C64>) -> f64 {
    let d = m.nrows();
    let mut err = 0.0f64;
    for i in 0..d {
        for j in i..d {
            err = err.max((m[[i, j]] - m[[j, i]].conj()).norm());
        }
    }
    err
}

pub fn trace(m: &Array2<C64>) -> C64 {
    m.diag().sum()
}

fn single_qubit(axis: Axis) -> [[C64; 2]; 2] {
    match axis {
        Axis::X => [[ZERO, ONE], [ONE, ZERO]],
        Axis::Y => [[ZERO, -I], [I, ZERO]],
        Axis::Z => [[-ONE, ZERO], [ZERO, ONE]],
    }
}

/// Embeds a 2×2 matrix at `site`, identity elsewhere.
pub fn embed(op: [[C64; 2]; 2], site: usize, n: usize) -> Result<Operator> {
    check_site(site, n)?;
    let d = 1 << n;
    let mask = site_mask(site, n);
    let mut mat = Array2::zeros((d, d));
    for col in 0..d {
        let b = usize::from(col & mask != 0);
        for (a, row_op) in op.iter().enumerate() {
            let v = row_op[b];
            if v != ZERO {
                let row = if a == 1 { col | mask } else { col & !mask };
                mat[[row, col]] = v;
            }
        }
    }
    Ok(Operator { n, mat })
}

pub fn pauli(axis: Axis, site: usize, n: usize) -> Result<Operator> {
    embed(single_qubit(axis), site, n)
}

/// Π (lowering, |1⟩ → |0⟩) or Π† (raising) on `site`.
pub fn ladder(site: usize, n: usize, kind: Ladder) -> Result<Operator> {
    let m = match kind {
        Ladder::Lowering => [[ZERO, ONE], [ZERO, ZERO]],
        Ladder::Raising => [[ZERO, ZERO], [ONE, ZERO]],
    };
    embed(m, site, n)
}

/// Computational-basis bitstring l_1 … l_N.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Bitstring {
    bits: Vec<u8>,
}

impl Bitstring {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.iter().any(|b| *b > 1) {
            return Err(Error::Invalid("bits must be 0 or 1".into()));
        }
        Ok(Self { bits })
    }

    pub fn from_index(index: usize, n: usize) -> Self {
        let bits = (1..=n).map(|a| u8::from(index & site_mask(a, n) != 0)).collect();
        Self { bits }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                _ => Err(Error::Invalid(format!("bad bit `{c}` in `{s}`"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        if bits.is_empty() {
            return Err(Error::Invalid("empty bitstring".into()));
        }
        Ok(Self { bits })
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn index(&self) -> usize {
        self.bits.iter().fold(0, |acc, b| (acc << 1) | *b as usize)
    }

    pub fn complement(&self) -> Self {
        Self { bits: self.bits.iter().map(|b| 1 - b).collect() }
    }

    /// Number of 1s minus number of 0s.
    pub fn excess(&self) -> i32 {
        self.bits.iter().map(|b| if *b == 1 { 1 } else { -1 }).sum()
    }
}

impl fmt::Display for Bitstring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.bits {
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

/// Excess (#1s − #0s) of basis index `l`.
#[inline]
pub fn excess_of(l: usize, n: usize) -> i32 {
    2 * (l.count_ones() as i32) - n as i32
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateKind {
    Ground,
    Inverted,
    PlusAll,
    Ghz,
    Basis(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    pub n: usize,
    pub mat: Array2<C64>,
}

impl DensityMatrix {
    /// Validates trace, Hermiticity and positivity.
    pub fn new(n: usize, mat: Array2<C64>) -> Result<Self> {
        let rho = Self::from_matrix_unchecked(n, mat)?;
        let tr = trace(&rho.mat);
        if (tr - ONE).norm() > 1e-10 {
            return Err(Error::Invalid(format!("trace {tr} differs from 1")));
        }
        let herm = hermiticity_error(&rho.mat);
        if herm > 1e-12 {
            return Err(Error::Invalid(format!("not Hermitian (deviation {herm:.2e})")));
        }
        let lmin = rho.min_eigenvalue();
        if lmin < -1e-8 {
            return Err(Error::Invalid(format!("negative eigenvalue {lmin:.3e}")));
        }
        Ok(rho)
    }

    /// Shape check only; evolved TCL2 states need not be positive.
    pub fn from_matrix_unchecked(n: usize, mat: Array2<C64>) -> Result<Self> {
        check_size(n)?;
        let d = 1 << n;
        if mat.dim() != (d, d) {
            return Err(Error::LengthMismatch { expected: d, got: mat.nrows() });
        }
        Ok(Self { n, mat })
    }

    pub fn pure(n: usize, psi: &[C64]) -> Result<Self> {
        check_size(n)?;
        let d = 1 << n;
        if psi.len() != d {
            return Err(Error::LengthMismatch { expected: d, got: psi.len() });
        }
        let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        let mat = Array2::from_shape_fn((d, d), |(i, j)| psi[i] * psi[j].conj() / norm);
        Ok(Self { n, mat })
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn trace(&self) -> C64 {
        trace(&self.mat)
    }

    pub fn hermiticity_error(&self) -> f64 {
        hermiticity_error(&self.mat)
    }

    pub fn expect(&self, op: &Operator) -> C64 {
        let d = self.dim();
        let mut acc = ZERO;
        for i in 0..d {
            for k in 0..d {
                acc += self.mat[[i, k]] * op.mat[[k, i]];
            }
        }
        acc
    }

    pub fn purity(&self) -> f64 {
        self.mat.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let d = self.dim();
        let m = nalgebra::DMatrix::from_fn(d, d, |i, j| {
            let z = 0.5 * (self.mat[[i, j]] + self.mat[[j, i]].conj());
            nalgebra::Complex::new(z.re, z.im)
        });
        m.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

pub fn initial_state(kind: &StateKind, n: usize) -> Result<DensityMatrix> {
    check_size(n)?;
    let d = 1usize << n;
    let mut psi = vec![ZERO; d];
    match kind {
        StateKind::Ground => psi[0] = ONE,
        StateKind::Inverted => psi[d - 1] = ONE,
        StateKind::PlusAll => psi.iter_mut().for_each(|z| *z = ONE),
        StateKind::Ghz => {
            psi[0] = ONE;
            psi[d - 1] = ONE;
        }
        StateKind::Basis(s) => {
            let l = Bitstring::parse(s)?;
            if l.len() != n {
                return Err(Error::LengthMismatch { expected: n, got: l.len() });
            }
            psi[l.index()] = ONE;
        }
    }
    DensityMatrix::pure(n, &psi)
}

/// ρ_{l̄,l} = ⟨l̄|ρ|l⟩.
pub fn anti_diagonal_element(rho: &DensityMatrix, l: &Bitstring) -> Result<C64> {
    if l.len() != rho.n {
        return Err(Error::LengthMismatch { expected: rho.n, got: l.len() });
    }
    let col = l.index();
    let row = (rho.dim() - 1) ^ col;
    Ok(rho.mat[[row, col]])
}

/// ρ^(k): sums of anti-diagonal elements grouped by the excess of the column bitstring.
pub fn cluster_by_excess(rho: &DensityMatrix) -> BTreeMap<i32, C64> {
    let n = rho.n;
    let d = rho.dim();
    let mut out: BTreeMap<i32, C64> = (0..=n).map(|j| (2 * j as i32 - n as i32, ZERO)).collect();
    for col in 0..d {
        *out.get_mut(&excess_of(col, n)).unwrap() += rho.mat[[(d - 1) ^ col, col]];
    }
    out
}
