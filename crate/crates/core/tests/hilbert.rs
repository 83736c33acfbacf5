mod common;

use common::*;
use corrnoise::hilbert::*;
use corrnoise::C64;
use ndarray::Array2;
use proptest::prelude::*;

fn random_rho(n: usize, seed: u64) -> DensityMatrix {
    let mut rng = Lcg(seed);
    DensityMatrix::new(n, to_array(&random_density(1 << n, &mut rng))).unwrap()
}

fn max_diff(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

#[test]
fn paulis_match_kronecker_products() {
    let single = |axis: Axis| -> Mat {
        match axis {
            Axis::X => sx(),
            Axis::Y => vec![vec![Z0, -IU], vec![IU, Z0]],
            Axis::Z => sz_energy(),
        }
    };
    for n in 1..=3 {
        for site in 1..=n {
            for axis in [Axis::X, Axis::Y, Axis::Z] {
                let got = pauli(axis, site, n).unwrap();
                let want = to_array(&on_site(&single(axis), site, n));
                assert_eq!(got.mat, want, "{axis:?} at {site} of {n}");
                assert!(got.is_hermitian());
                assert_eq!(got.dot(&got).mat, Array2::<C64>::eye(1 << n));
            }
            let lo = ladder(site, n, Ladder::Lowering).unwrap();
            assert_eq!(lo.mat, to_array(&on_site(&lowering(), site, n)));
        }
    }
}

#[test]
fn pauli_algebra() {
    let n = 3;
    let axes = [Axis::X, Axis::Y, Axis::Z];
    for a in 1..=n {
        for b in 1..=n {
            for p in axes {
                for q in axes {
                    let x = pauli(p, a, n).unwrap();
                    let y = pauli(q, b, n).unwrap();
                    let xy = x.dot(&y).mat;
                    let yx = y.dot(&x).mat;
                    if a != b || p == q {
                        assert!(max_diff(&xy, &yx) < 1e-14);
                    } else {
                        assert!(max_diff(&xy, &yx.mapv(|z| -z)) < 1e-14);
                    }
                }
            }
        }
    }
}

#[test]
fn ladder_relations() {
    let n = 3;
    for site in 1..=n {
        let lo = ladder(site, n, Ladder::Lowering).unwrap();
        let up = ladder(site, n, Ladder::Raising).unwrap();
        assert_eq!(up.mat, lo.adjoint().mat);
        let x = pauli(Axis::X, site, n).unwrap().mat;
        let y = pauli(Axis::Y, site, n).unwrap().mat;
        let z = pauli(Axis::Z, site, n).unwrap().mat;
        let combo = (&x + &y.mapv(|v| v * C64::new(0.0, 1.0))).mapv(|v| v * 0.5);
        assert!(max_diff(&lo.mat, &combo) < 1e-15);
        let proj = (Array2::<C64>::eye(1 << n) + &z).mapv(|v| v * 0.5);
        assert!(max_diff(&up.dot(&lo).mat, &proj) < 1e-15);
    }
    let inv = initial_state(&StateKind::Inverted, 1).unwrap();
    let lo = ladder(1, 1, Ladder::Lowering).unwrap();
    let after = lo.mat.dot(&inv.mat).dot(&lo.adjoint().mat);
    assert_eq!(after[[0, 0]], C64::new(1.0, 0.0));
}

#[test]
fn initial_state_examples() {
    let p1 = initial_state(&StateKind::PlusAll, 1).unwrap();
    assert!(p1.mat.iter().all(|z| (z - C64::new(0.5, 0.0)).norm() < 1e-15));
    let inv = initial_state(&StateKind::Inverted, 5).unwrap();
    for a in 1..=5 {
        assert_eq!(inv.expect(&pauli(Axis::Z, a, 5).unwrap()), C64::new(1.0, 0.0));
    }
    let b = initial_state(&StateKind::Basis("0110".into()), 4).unwrap();
    assert_eq!(b.mat[[0b0110, 0b0110]], C64::new(1.0, 0.0));
    assert!(initial_state(&StateKind::Basis("01".into()), 4).is_err());
    assert!(initial_state(&StateKind::Basis("0a".into()), 2).is_err());
    assert!(matches!(initial_state(&StateKind::Ground, 13), Err(corrnoise::Error::TooLarge(13))));
    for kind in [StateKind::Ground, StateKind::Inverted, StateKind::PlusAll, StateKind::Ghz] {
        let rho = initial_state(&kind, 4).unwrap();
        assert!((rho.purity() - 1.0).abs() < 1e-14);
        assert!(DensityMatrix::new(4, rho.mat.clone()).is_ok());
    }
}

#[test]
fn density_matrix_validation() {
    let rho = random_rho(2, 1);
    assert!(DensityMatrix::new(2, rho.mat.mapv(|z| z * 2.0)).is_err());
    let mut skew = rho.mat.clone();
    skew[[0, 1]] += C64::new(0.0, 1e-6);
    assert!(DensityMatrix::new(2, skew).is_err());
    let neg = Array2::from_diag(&ndarray::arr1(&[C64::new(1.5, 0.0), C64::new(-0.5, 0.0)]));
    assert!(DensityMatrix::new(1, neg).is_err());
    assert!(DensityMatrix::new(3, rho.mat.clone()).is_err());
}

#[test]
fn cluster_examples() {
    for n in 1..=6 {
        let ghz = cluster_by_excess(&initial_state(&StateKind::Ghz, n).unwrap());
        let plus = cluster_by_excess(&initial_state(&StateKind::PlusAll, n).unwrap());
        let gnd = cluster_by_excess(&initial_state(&StateKind::Ground, n).unwrap());
        assert_eq!(ghz.len(), n + 1);
        let ni = n as i32;
        for k in (-ni..=ni).step_by(2) {
            let g = if k.abs() == ni { 0.5 } else { 0.0 };
            assert!((ghz[&k] - C64::new(g, 0.0)).norm() < 1e-15);
            let count = (0..1usize << n).filter(|l| Bitstring::from_index(*l, n).excess() == k).count();
            assert!((plus[&k] - C64::new(count as f64 / (1 << n) as f64, 0.0)).norm() < 1e-15);
            assert_eq!(gnd[&k], C64::new(0.0, 0.0));
        }
    }
}

proptest! {
    #[test]
    fn anti_diagonal_pairs_are_conjugate(seed in any::<u64>(), n in 1usize..=5) {
        let rho = random_rho(n, seed);
        let rk = cluster_by_excess(&rho);
        let mut total = C64::new(0.0, 0.0);
        for l in 0..1usize << n {
            let bits = Bitstring::from_index(l, n);
            let a = anti_diagonal_element(&rho, &bits).unwrap();
            let b = anti_diagonal_element(&rho, &bits.complement()).unwrap();
            prop_assert!((a - b.conj()).norm() < 1e-15);
            total += a;
        }
        for (k, v) in &rk {
            prop_assert!((v - rk[&-k].conj()).norm() < 1e-14);
        }
        prop_assert!((rk.values().sum::<C64>() - total).norm() < 1e-14);
    }

    #[test]
    fn bitstring_invariants(l in 0usize..4096, n in 12usize..=12) {
        let b = Bitstring::from_index(l, n);
        prop_assert_eq!(b.index(), l);
        prop_assert_eq!(b.complement().complement(), b.clone());
        prop_assert_eq!(b.excess(), excess_of(l, n));
        prop_assert_eq!((b.excess() + n as i32) % 2, 0);
        prop_assert_eq!(Bitstring::parse(&b.to_string()).unwrap(), b);
    }
}
