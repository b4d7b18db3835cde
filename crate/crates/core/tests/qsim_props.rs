mod common;

use std::f64::consts::PI;

use common::{c, closed_form, embed, matvec, rel_err, z_expect, C};
use proptest::prelude::*;
use qednet::circuits::{qfm_circuit, spatial_circuit, spectral_circuit};
use qednet::qsim::{
    apply_gate, expect_z, gate_matrix, param_shift_grad, readout_objective, run_circuit, Circuit,
    Gate, GateKind, StateVector,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn name(kind: GateKind) -> &'static str {
    match kind {
        GateKind::Rx => "rx",
        GateKind::Ry => "ry",
        GateKind::IsingXx => "ising_xx",
        GateKind::PauliZ => "z",
        GateKind::Not => "not",
        GateKind::Toffoli => "toffoli",
    }
}

fn random_state(n: usize, rng: &mut impl Rng) -> StateVector {
    let mut v: Vec<C> = (0..1 << n)
        .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let norm = v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    v.iter_mut().for_each(|a| *a /= norm);
    StateVector::from_amplitudes(&v).unwrap()
}

/// Every ordered choice of distinct targets for a gate of `arity` on `n` qubits.
fn placements(arity: usize, n: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..arity {
        out = out
            .into_iter()
            .flat_map(|p: Vec<usize>| {
                (0..n)
                    .filter(|q| !p.contains(q))
                    .map(|q| [p.clone(), vec![q]].concat())
                    .collect::<Vec<_>>()
            })
            .collect();
    }
    out
}

#[test]
fn gates_match_closed_forms() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for kind in GateKind::ALL {
        for _ in 0..200 {
            let th = rng.random_range(-4.0 * PI..4.0 * PI);
            let m = gate_matrix(kind, th);
            let want = closed_form(name(kind), th);
            for (i, row) in want.iter().enumerate() {
                for (j, w) in row.iter().enumerate() {
                    assert!((m[(i, j)] - w).norm() < 1e-15, "{kind:?} ({i},{j})");
                }
            }
        }
    }
}

#[test]
fn stride_walk_matches_full_matrix() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for n in 1..=4 {
        for kind in GateKind::ALL {
            for targets in placements(kind.arity(), n) {
                let th = rng.random_range(-PI..PI);
                let slot = kind.is_parameterized().then_some(0);
                let gate = Gate::new(kind, &targets, slot).unwrap();
                let full = embed(&closed_form(name(kind), th), &targets, n);
                for b in 0..1 << n {
                    let s = StateVector::basis(n, b).unwrap();
                    let got = apply_gate(&s, &gate, &[th]).unwrap();
                    let want = matvec(&full, s.amplitudes());
                    for (g, w) in got.amplitudes().iter().zip(&want) {
                        assert!((g - w).norm() < 1e-12, "{kind:?} {targets:?} basis {b}");
                    }
                }
            }
        }
    }
}

#[test]
fn expect_z_matches_amplitude_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for n in 1..=4 {
        let s = random_state(n, &mut rng);
        for q in 0..n {
            assert!((expect_z(&s, q) - z_expect(s.amplitudes(), q)).abs() < 1e-14);
        }
    }
}

#[test]
fn circuit_matches_gate_by_gate_matrix_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for circ in [spatial_circuit(), spectral_circuit(), qfm_circuit()] {
        let n = circ.n_qubits();
        let p: Vec<f64> = (0..circ.n_params())
            .map(|_| rng.random_range(-PI..PI))
            .collect();
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..PI)).collect();
        let mut v = vec![c(0.0, 0.0); 1 << n];
        v[0] = c(1.0, 0.0);
        for (q, &a) in x.iter().enumerate() {
            v = matvec(&embed(&closed_form("ry", a), &[q], n), &v);
        }
        for g in circ.gates() {
            let th = g.param_slot.map_or(0.0, |s| p[s]);
            v = matvec(&embed(&closed_form(name(g.kind), th), g.targets(), n), &v);
        }
        let got = run_circuit(circ, &p, &x).unwrap();
        for (a, b) in got.amplitudes().iter().zip(&v) {
            assert!((a - b).norm() < 1e-12);
        }
    }
}

#[test]
fn parameter_shift_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let h = 1e-5;
    for circ in [spatial_circuit(), spectral_circuit(), qfm_circuit()] {
        for _ in 0..20 {
            let p: Vec<f64> = (0..circ.n_params())
                .map(|_| rng.random_range(-PI..PI))
                .collect();
            let x: Vec<f64> = (0..circ.n_qubits())
                .map(|_| rng.random_range(0.0..PI))
                .collect();
            let w: Vec<f64> = (0..circ.readout().len())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let g = param_shift_grad(circ, &p, &x, &w).unwrap();
            let f = |p: &[f64], x: &[f64]| readout_objective(circ, p, x, &w).unwrap();
            for i in 0..p.len() {
                let (mut a, mut b) = (p.clone(), p.clone());
                a[i] += h;
                b[i] -= h;
                let fd = (f(&a, &x) - f(&b, &x)) / (2.0 * h);
                assert!(
                    rel_err(g.params[i], fd, 1e-6) < 1e-4,
                    "param {i}: {} vs {fd}",
                    g.params[i]
                );
            }
            for i in 0..x.len() {
                let (mut a, mut b) = (x.clone(), x.clone());
                a[i] += h;
                b[i] -= h;
                let fd = (f(&p, &a) - f(&p, &b)) / (2.0 * h);
                assert!(rel_err(g.inputs[i], fd, 1e-6) < 1e-4, "input {i}");
            }
        }
    }
}

#[test]
fn shared_slot_gradient_sums_occurrences() {
    // RY(a) RY(a) = RY(2a): <Z> = cos 2a, derivative -2 sin 2a
    let circ = Circuit::new(1, 1, vec![Gate::ry(0, 0), Gate::ry(0, 0)], vec![0]).unwrap();
    for a in [0.3, 1.1, -2.0] {
        let g = param_shift_grad(&circ, &[a], &[0.0], &[1.0]).unwrap();
        assert!((g.params[0] + 2.0 * (2.0 * a).sin()).abs() < 1e-12);
    }
}

#[test]
fn single_ry_readout() {
    let circ = Circuit::new(1, 1, vec![Gate::ry(0, 0)], vec![0]).unwrap();
    for th in [0.0, 0.5, PI / 2.0, PI] {
        let s = run_circuit(&circ, &[th], &[0.0]).unwrap();
        assert!((expect_z(&s, 0) - th.cos()).abs() < 1e-14);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn gates_preserve_norm(seed in any::<u64>(), th in -10.0f64..10.0, n in 3usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_state(n, &mut rng);
        for kind in GateKind::ALL {
            let mut t: Vec<usize> = (0..n).collect();
            // random distinct targets
            for i in (1..n).rev() {
                t.swap(i, rng.random_range(0..=i));
            }
            let slot = kind.is_parameterized().then_some(0);
            let g = Gate::new(kind, &t[..kind.arity()], slot).unwrap();
            let out = apply_gate(&s, &g, &[th]).unwrap();
            prop_assert!((out.norm_sqr() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rotations_compose(a in -PI..PI, b in -PI..PI, q in 0usize..3) {
        for kind in [GateKind::Rx, GateKind::Ry] {
            let g = Gate::new(kind, &[q], Some(0)).unwrap();
            let s = StateVector::basis(3, 5).unwrap();
            let two = apply_gate(&apply_gate(&s, &g, &[a]).unwrap(), &g, &[b]).unwrap();
            let one = apply_gate(&s, &g, &[a + b]).unwrap();
            for (x, y) in two.amplitudes().iter().zip(one.amplitudes()) {
                prop_assert!((x - y).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn unitarity_at_random_angles(th in -20.0f64..20.0) {
        for kind in GateKind::ALL {
            let m = gate_matrix(kind, th);
            let n = m.nrows();
            let p = m.adjoint() * &m;
            for i in 0..n {
                for j in 0..n {
                    let want = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((p[(i, j)] - c(want, 0.0)).norm() < 1e-13);
                }
            }
        }
    }
}
