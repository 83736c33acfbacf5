//! Special functions and quadrature rules used by the spectral integrals.

use std::f64::consts::{FRAC_PI_2, PI};

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Gauss–Legendre nodes and weights on [−1, 1], ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        dp = if d != 0.0 { d } else { dp };
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Legendre polynomials P_0..P_{n-1} at `z`.
pub fn legendre_all(n: usize, z: f64, out: &mut [f64]) {
    if n == 0 {
        return;
    }
    out[0] = 1.0;
    if n > 1 {
        out[1] = z;
    }
    for k in 2..n {
        out[k] = ((2 * k - 1) as f64 * z * out[k - 1] - (k - 1) as f64 * out[k - 2]) / k as f64;
    }
}

/// Returns (Ci(x), Si(x)) for x > 0.
pub fn cisi(x: f64) -> (f64, f64) {
    assert!(x > 0.0);
    if x <= 2.0 {
        let x2 = x * x;
        let mut si = 0.0;
        let mut term = x;
        let mut k = 0usize;
        loop {
            let add = term / (2 * k + 1) as f64;
            si += add;
            if add.abs() < 1e-18 * si.abs() {
                break;
            }
            k += 1;
            term *= -x2 / ((2 * k) as f64 * (2 * k + 1) as f64);
        }
        (EULER_GAMMA + x.ln() - cin_series(x), si)
    } else {
        // modified Lentz on the continued fraction of E1(ix)
        let tiny = 1e-300;
        let mut b = num_complex::Complex64::new(1.0, x);
        let mut c = num_complex::Complex64::new(1.0 / tiny, 0.0);
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..100_000 {
            let a = -((i * i) as f64);
            b += 2.0;
            d = 1.0 / (a * d + b);
            c = b + a / c;
            let del = c * d;
            h *= del;
            if (del.re - 1.0).abs() + del.im.abs() < 1e-16 {
                break;
            }
        }
        h *= num_complex::Complex64::new(x.cos(), -x.sin());
        (-h.re, FRAC_PI_2 + h.im)
    }
}

fn cin_series(x: f64) -> f64 {
    let x2 = x * x;
    let mut sum = 0.0;
    let mut term = 1.0;
    let mut k = 1usize;
    loop {
        term *= -x2 / ((2 * k - 1) as f64 * (2 * k) as f64);
        let add = -term / (2 * k) as f64;
        sum += add;
        if add.abs() <= 1e-18 * sum.abs() || k > 200 {
            break;
        }
        k += 1;
    }
    sum
}

/// Si(x) for any real x.
pub fn si(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else if x.is_infinite() {
        FRAC_PI_2.copysign(x)
    } else {
        cisi(x.abs()).1.copysign(x)
    }
}

/// Cin(x) = ∫₀^x (1 − cos u)/u du, even in x.
pub fn cin(x: f64) -> f64 {
    let a = x.abs();
    if a == 0.0 {
        0.0
    } else if a <= 2.0 {
        cin_series(a)
    } else {
        EULER_GAMMA + a.ln() - cisi(a).0
    }
}

/// Spherical Bessel functions j_0..j_{n-1} at w > 0.
pub fn spherical_bessel(n: usize, w: f64, out: &mut [f64]) {
    debug_assert!(w > 0.0);
    let (s, c) = w.sin_cos();
    let j0 = s / w;
    if n == 0 {
        return;
    }
    if w > n as f64 {
        out[0] = j0;
        if n > 1 {
            out[1] = s / (w * w) - c / w;
        }
        for k in 1..n.saturating_sub(1) {
            out[k + 1] = (2 * k + 1) as f64 / w * out[k] - out[k - 1];
        }
        return;
    }
    // Miller's backward recurrence normalised by Σ (2k+1) j_k² = 1
    let start = n + 60 + w as usize;
    let mut f_next = 0.0;
    let mut f = 1e-280;
    let mut norm = 0.0;
    let mut vals = vec![0.0; start + 1];
    vals[start] = f;
    for k in (1..=start).rev() {
        let f_prev = (2 * k + 1) as f64 / w * f - f_next;
        f_next = f;
        f = f_prev;
        vals[k - 1] = f;
        if f.abs() > 1e250 {
            for v in vals[k - 1..].iter_mut() {
                *v *= 1e-250;
            }
            f *= 1e-250;
            f_next *= 1e-250;
        }
    }
    let big = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (k, v) in vals.iter_mut().enumerate() {
        *v /= big;
        norm += (2 * k + 1) as f64 * *v * *v;
    }
    let mut scale = 1.0 / norm.sqrt();
    let j1 = s / (w * w) - c / w;
    let sign_ref = if j0.abs() > j1.abs() { j0 * vals[0] } else { j1 * vals[1] };
    if sign_ref < 0.0 {
        scale = -scale;
    }
    for k in 0..n {
        out[k] = vals[k] * scale;
    }
}
