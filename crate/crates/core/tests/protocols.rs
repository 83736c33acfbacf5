mod common;

use std::f64::consts::{FRAC_PI_2, PI};

use common::*;
use corrnoise::dynamics::{GeneratorContext, GeneratorOptions};
use corrnoise::hilbert::{cluster_by_excess, initial_state, DensityMatrix, RegisterConfig, StateKind};
use corrnoise::protocols::*;
use corrnoise::spectra::*;
use corrnoise::C64;
use proptest::prelude::*;

fn random_rho(n: usize, seed: u64) -> DensityMatrix {
    let mut rng = Lcg(seed);
    DensityMatrix::new(n, to_array(&random_density(1 << n, &mut rng))).unwrap()
}

fn gate_mat(phi: f64) -> Mat {
    let g = parity_gate(phi);
    vec![vec![g[0][0], g[0][1]], vec![g[1][0], g[1][1]]]
}

/// tr[Z^{⊗N} U^{⊗N} ρ U^{†⊗N}] with dense Kronecker products; Z|0⟩ = +|0⟩ here.
fn parity_oracle(rho: &Mat, n: usize, phi: f64) -> C64 {
    let zstd = vec![vec![ONE, Z0], vec![Z0, -ONE]];
    let mut u = vec![vec![ONE]];
    let mut z = vec![vec![ONE]];
    for _ in 0..n {
        u = kron(&u, &gate_mat(phi));
        z = kron(&z, &zstd);
    }
    let m = mul(&z, &mul(&u, &mul(rho, &dagger(&u))));
    (0..m.len()).map(|i| m[i][i]).sum()
}

fn binomial(n: u64, k: u64) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[test]
fn parity_gate_examples() {
    let g = gate_mat(0.0);
    let s = 1.0 / 2f64.sqrt();
    assert!((g[0][0] - C64::new(s, 0.0)).norm() < 1e-15);
    assert!((g[1][0] - C64::new(0.0, s)).norm() < 1e-15);
    for phi in [0.0, 0.3, 1.234, -2.0, 7.0] {
        let u = gate_mat(phi);
        assert!(max_abs_diff(&mul(&u, &dagger(&u)), &eye(2)) < 1e-14);
        assert!(max_abs_diff(&mul(&dagger(&u), &u), &eye(2)) < 1e-14);
    }
    let phi = 1.234;
    let u = gate_mat(phi);
    let zstd = vec![vec![ONE, Z0], vec![Z0, -ONE]];
    let lhs = mul(&dagger(&u), &mul(&zstd, &u));
    let rhs = vec![
        vec![Z0, C64::from_polar(1.0, -(phi - FRAC_PI_2))],
        vec![C64::from_polar(1.0, phi - FRAC_PI_2), Z0],
    ];
    assert!(max_abs_diff(&lhs, &rhs) < 1e-15);
}

#[test]
fn parity_signal_examples() {
    let ghz = initial_state(&StateKind::Ghz, 3).unwrap();
    assert!((parity_signal(&ghz, PI / 6.0) + 1.0).abs() < 1e-12);
    for n in 1..=5 {
        let plus = initial_state(&StateKind::PlusAll, n).unwrap();
        let gnd = initial_state(&StateKind::Ground, n).unwrap();
        for phi in [0.1, 0.9, 2.5, 4.0] {
            assert!((parity_signal(&plus, phi) - phi.sin().powi(n as i32)).abs() < 1e-12, "n = {n}");
            assert!(parity_signal(&gnd, phi).abs() < 1e-12);
        }
    }
}

#[test]
fn parity_signal_matches_dense_oracle() {
    for seed in 0..10 {
        let n = 1 + (seed as usize % 4);
        let rho = random_rho(n, seed);
        for phi in [0.0, 0.7, 2.2] {
            let expect = parity_oracle(&from_array(&rho.mat), n, phi);
            assert!((parity_signal(&rho, phi) - expect.re).abs() < 1e-12);
            assert!(expect.im.abs() < 1e-12);
            assert!(parity_signal_complex(&rho, phi).im.abs() < 1e-12);
        }
    }
}

#[test]
fn parity_extraction_examples() {
    let ghz = initial_state(&StateKind::Ghz, 3).unwrap();
    let rk = parity_extract(&parity_trace_exact(&ghz)).unwrap();
    for (k, v) in &rk {
        let expect = if k.abs() == 3 { 0.5 } else { 0.0 };
        assert!((v - C64::new(expect, 0.0)).norm() < 1e-12, "k = {k}");
    }
    let plus = initial_state(&StateKind::PlusAll, 5).unwrap();
    let rk = parity_extract(&parity_trace_exact(&plus)).unwrap();
    assert_eq!(rk.len(), 6);
    for (k, v) in &rk {
        // enumerate bitstrings with excess k directly
        let count = (0..32usize).filter(|l| 2 * l.count_ones() as i32 - 5 == *k).count() as f64;
        assert_eq!(count, binomial(5, ((5 + k) / 2) as u64));
        assert!((v - C64::new(count / 32.0, 0.0)).norm() < 1e-12, "k = {k}");
    }
}

#[test]
fn parity_round_trip_on_random_states() {
    for seed in 0..100u64 {
        let n = 1 + (seed as usize % 5);
        let rho = random_rho(n, 1000 + seed);
        let trace = parity_trace_exact(&rho);
        assert!(trace.values.iter().all(|v| v.abs() <= 1.0 + 1e-12));
        let got = parity_extract(&trace).unwrap();
        let want = cluster_by_excess(&rho);
        assert_eq!(got.len(), want.len());
        for (k, v) in &want {
            assert!((got[k] - v).norm() < 1e-12, "seed {seed} k {k}");
        }
        assert_eq!(rho_k_exact(&rho), want);
    }
}

#[test]
fn parity_extraction_rejects_bad_grids() {
    let rho = random_rho(2, 3);
    let mut t = parity_trace_exact(&rho);
    t.values.pop();
    assert!(parity_extract(&t).is_err());
    let mut t = parity_trace_exact(&rho);
    t.phis[1] += 0.01;
    assert!(parity_extract(&t).is_err());
    let mut t = mqc_trace_exact(&rho, MqcMode::OverlapExact);
    t.phis.reverse();
    assert!(mqc_extract(&t).is_err());
}

#[test]
fn sampled_parity_converges() {
    let ghz = initial_state(&StateKind::Ghz, 2).unwrap();
    // P = 1 here, so σ = 0 and every shot must read even
    assert!((parity_signal(&ghz, FRAC_PI_2) - 1.0).abs() < 1e-12);
    assert_eq!(sample_parity(&ghz, FRAC_PI_2, 1_000_000, 11).unwrap(), 1.0);
    let phi = PI / 3.0;
    let exact = parity_signal(&ghz, phi);
    assert!((exact - 0.5).abs() < 1e-12);
    let shots = 1_000_000;
    let est = sample_parity(&ghz, phi, shots, 5).unwrap();
    let sigma = ((1.0 - exact * exact) / shots as f64).sqrt();
    assert!((est - exact).abs() < 3.0 * sigma, "{est} vs {exact}");
}

#[test]
fn sampled_parity_is_deterministic_and_validated() {
    let rho = random_rho(3, 8);
    assert_eq!(sample_parity(&rho, 0.4, 5000, 99).unwrap(), sample_parity(&rho, 0.4, 5000, 99).unwrap());
    assert!(sample_parity(&rho, 0.4, 0, 1).is_err());
    let bad = DensityMatrix::from_matrix_unchecked(3, rho.mat.mapv(|z| z * 2.0)).unwrap();
    assert!(sample_parity(&bad, 0.4, 10, 1).is_err());
}

#[test]
fn all_zero_register_always_reads_even() {
    // undo the analysis gate so the measured state is |0…0⟩ itself
    let n = 3;
    let zeros = initial_state(&StateKind::Ground, n).unwrap();
    let g = parity_gate(0.3);
    let inv = [[g[0][0].conj(), g[1][0].conj()], [g[0][1].conj(), g[1][1].conj()]];
    let pre = apply_gate_all(&zeros, &inv);
    for shots in [1, 10, 1000] {
        assert_eq!(sample_parity(&pre, 0.3, shots, 4).unwrap(), 1.0);
    }
}

#[test]
fn shot_noise_scales_as_inverse_square_root() {
    let rho = random_rho(2, 21);
    let phi = 0.8;
    let exact = parity_signal(&rho, phi);
    let reps = 200;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, shots) in [100u64, 1_000, 10_000, 100_000].into_iter().enumerate() {
        let mut rng = stream_rng(1234, i as u64);
        let mse: f64 = (0..reps)
            .map(|_| (sample_parity_with(&rho, phi, shots, &mut rng).unwrap() - exact).powi(2))
            .sum::<f64>()
            / reps as f64;
        xs.push((shots as f64).ln());
        ys.push(0.5 * mse.ln());
    }
    let mx = xs.iter().sum::<f64>() / 4.0;
    let my = ys.iter().sum::<f64>() / 4.0;
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    assert!((slope + 0.5).abs() < 0.05, "slope {slope}");
}

#[test]
fn mqc_signal_examples() {
    for n in 1..=5 {
        let ghz = initial_state(&StateKind::Ghz, n).unwrap();
        for phi in [0.0, 0.4, 1.9, -3.0] {
            let s = mqc_signal(&ghz, phi, MqcMode::OverlapExact);
            assert!((s - 0.5 * (1.0 + (n as f64 * phi).cos())).abs() < 1e-12);
            assert!((mqc_signal(&ghz, phi, MqcMode::EchoProtocol) - s).abs() < 1e-12);
        }
        let d = 1usize << n;
        let mixed = DensityMatrix::new(n, ndarray::Array2::from_diag_elem(d, C64::new(1.0 / d as f64, 0.0))).unwrap();
        for phi in [0.0, 1.1] {
            assert!((mqc_signal(&mixed, phi, MqcMode::OverlapExact) - 1.0 / d as f64).abs() < 1e-14);
        }
    }
    let rho = random_rho(3, 2);
    assert!((mqc_signal(&rho, 0.0, MqcMode::OverlapExact) - rho.purity()).abs() < 1e-14);
}

#[test]
fn mqc_extraction_examples() {
    for n in 1..=5 {
        let ghz = initial_state(&StateKind::Ghz, n).unwrap();
        let iq = mqc_extract(&mqc_trace_exact(&ghz, MqcMode::OverlapExact)).unwrap();
        let ni = n as i32;
        assert_eq!(iq.len(), 2 * n + 1);
        for (q, v) in &iq {
            let expect = match q.abs() {
                0 => 0.5,
                a if a == ni => 0.25,
                _ => 0.0,
            };
            assert!((v - expect).abs() < 1e-12, "n = {n} q = {q}");
        }
        let gnd = initial_state(&StateKind::Ground, n).unwrap();
        let iq = mqc_extract(&mqc_trace_exact(&gnd, MqcMode::OverlapExact)).unwrap();
        for (q, v) in &iq {
            assert!((v - if *q == 0 { 1.0 } else { 0.0 }).abs() < 1e-12);
        }
    }
}

/// tr(ρ_q ρ_{−q}) with projectors built from Hamming weights in the test.
#[test]
fn mqc_extraction_matches_projector_oracle() {
    for seed in 0..20u64 {
        let n = 1 + (seed as usize % 4);
        let rho = random_rho(n, 500 + seed);
        let iq = mqc_extract(&mqc_trace_exact(&rho, MqcMode::OverlapExact)).unwrap();
        let oracle = mqc_oracle(&from_array(&rho.mat), n);
        let direct = mqc_intensities_direct(&rho);
        for (q, v) in &oracle {
            assert!((iq[q] - v).abs() < 1e-12, "seed {seed} q {q}");
            assert!((direct[q] - v).abs() < 1e-12);
            assert!(iq[q] >= -1e-10);
            assert!((iq[q] - iq[&-q]).abs() < 1e-12);
        }
        let ni = n as i32;
        let corner = rho.mat[[0, (1 << n) - 1]].norm_sqr();
        assert!((iq[&ni] - corner).abs() < 1e-12);
    }
}

fn white_ctx(n: usize, corr: Correlation) -> GeneratorContext {
    let ch = NoiseChannel::new(Coupling::Longitudinal, SpectrumModel::White { s0: 1e-3 }, corr);
    GeneratorContext::new(RegisterConfig::uniform(n, 1.0).unwrap(), vec![ch], 200.0, 0.5, GeneratorOptions::default())
        .unwrap()
}

#[test]
fn protocol_at_time_zero_gives_the_binomial_profile() {
    let c = white_ctx(4, Correlation::Full);
    let run = run_protocol(&c, &StateKind::PlusAll, &[0.0], &ProtocolKind::Parity, 0, 0).unwrap();
    let rk = &run.rho_k()[0];
    for (k, v) in rk {
        let expect = binomial(4, ((4 + k) / 2) as u64) / 16.0;
        assert!((v - C64::new(expect, 0.0)).norm() < 1e-12);
    }
}

#[test]
fn correlated_dephasing_protects_the_balanced_coherence() {
    let c = white_ctx(4, Correlation::Full);
    let times = [150.0, 0.0, 50.0, 100.0];
    let run = run_protocol(&c, &StateKind::PlusAll, &times, &ProtocolKind::Parity, 0, 0).unwrap();
    let rk = run.rho_k();
    let start = rk[1][&0];
    for (i, t) in times.iter().enumerate() {
        assert!((rk[i][&0] - start).norm() < 1e-10, "t = {t}");
        let outer = rk[i][&4].norm() / rk[1][&4].norm();
        assert!((outer - (-2.0 * 16.0 * 1e-3 * t).exp()).abs() < 1e-6, "t = {t}: {outer}");
    }
    assert!(rk[0][&4].norm() < 0.01 * rk[0][&0].norm());
}

#[test]
fn independent_dephasing_keeps_the_line_shape() {
    let c = white_ctx(4, Correlation::Diagonal);
    let run = run_protocol(&c, &StateKind::PlusAll, &[0.0, 150.0], &ProtocolKind::Parity, 0, 0).unwrap();
    let rk = run.rho_k();
    let ratios: Vec<f64> = rk[1].iter().map(|(k, v)| v.norm() / rk[0][k].norm()).collect();
    let hi = ratios.iter().cloned().fold(0.0, f64::max);
    let lo = ratios.iter().cloned().fold(1.0, f64::min);
    assert!((hi - lo) / hi < 0.05, "{ratios:?}");
    assert!(hi < 0.9);
}

#[test]
fn sampled_protocol_is_reproducible() {
    let c = white_ctx(3, Correlation::Full);
    let a = run_protocol(&c, &StateKind::Ghz, &[0.0, 100.0], &ProtocolKind::Parity, 2000, 7).unwrap();
    let b = run_protocol(&c, &StateKind::Ghz, &[0.0, 100.0], &ProtocolKind::Parity, 2000, 7).unwrap();
    assert_eq!(a.readouts, b.readouts);
    let other = run_protocol(&c, &StateKind::Ghz, &[0.0, 100.0], &ProtocolKind::Parity, 2000, 8).unwrap();
    assert_ne!(a.readouts, other.readouts);
    let echo = ProtocolKind::Mqc { mode: MqcMode::EchoProtocol };
    let m = run_protocol(&c, &StateKind::Ghz, &[0.0], &echo, 4000, 1).unwrap();
    let Readout::Mqc { intensities, .. } = &m.readouts[0] else { panic!("expected an MQC readout") };
    assert!((intensities[&3] - 0.25).abs() < 0.05);
    let overlap = ProtocolKind::Mqc { mode: MqcMode::OverlapExact };
    assert!(run_protocol(&c, &StateKind::Ghz, &[0.0], &overlap, 10, 1).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn parity_values_are_real_and_bounded(seed in any::<u64>(), n in 1usize..=4, phi in -10.0f64..10.0) {
        let rho = random_rho(n, seed);
        let p = parity_signal_complex(&rho, phi);
        prop_assert!(p.im.abs() < 1e-12);
        prop_assert!(p.re.abs() <= 1.0 + 1e-12);
        let rk = parity_extract(&parity_trace_exact(&rho)).unwrap();
        for (k, v) in &rk {
            prop_assert!((v - rk[&-k].conj()).norm() < 1e-12);
        }
    }

    #[test]
    fn mqc_intensities_are_symmetric(seed in any::<u64>(), n in 1usize..=4) {
        let rho = random_rho(n, seed);
        let iq = mqc_extract(&mqc_trace_exact(&rho, MqcMode::OverlapExact)).unwrap();
        for (q, v) in &iq {
            prop_assert!((v - iq[&-q]).abs() < 1e-12);
        }
        let s0 = mqc_signal(&rho, 0.0, MqcMode::OverlapExact);
        prop_assert!(s0 <= 1.0 + 1e-12);
        prop_assert!((iq.values().sum::<f64>() - s0).abs() < 1e-12);
    }
}
