use std::collections::BTreeMap;

use num_complex::Complex64;
use ppi_core::linalg::{c64, eigenvalues, identity, kron, op_norm, ComplexMatrix, Tolerance};
use ppi_core::operators::{
    build_example_pair, build_model_tuple, conjugate_tuple, diag_twist, is_partial_isometry,
    random_commuting_unitaries, random_model_spec, random_unitary, seeded_rng, shift_on_factor,
    ModelSpec, RandomSpecLimits, SlotKind,
};
use ppi_core::twisted::verify_twisted;
use proptest::prelude::*;
use rand::Rng;

fn tol() -> Tolerance {
    Tolerance::default()
}

fn p_list_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..4, 1..4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn diag_twist_adjoint_and_commuting_symbols(
        p_list in p_list_strategy(), aux in 1usize..4, seed in any::<u64>(), pick in any::<prop::sample::Index>(),
    ) {
        let j = pick.index(p_list.len()) + 1;
        let us = random_commuting_unitaries(aux, 2, seed);
        let d = diag_twist(&p_list, j, &us[0], aux, &tol()).unwrap();
        let d_adj = diag_twist(&p_list, j, &us[0].adjoint(), aux, &tol()).unwrap();
        prop_assert!(op_norm(&(d.adjoint() - d_adj)) <= 1e-12);
        let other = (j % p_list.len()) + 1;
        let e = diag_twist(&p_list, other, &us[1], aux, &tol()).unwrap();
        prop_assert!(op_norm(&(&d * &e - &e * &d)) <= 1e-12);
    }

    #[test]
    fn shift_commutes_with_foreign_twist(
        p_list in prop::collection::vec(1usize..4, 2..4), aux in 1usize..4, seed in any::<u64>(),
    ) {
        let u = random_unitary(aux, &mut seeded_rng(seed));
        for i in 0..p_list.len() {
            for j in 1..=p_list.len() {
                if j == i + 1 {
                    continue;
                }
                let s = shift_on_factor(&p_list, i, aux);
                let d = diag_twist(&p_list, j, &u, aux, &tol()).unwrap();
                prop_assert!(op_norm(&(&s * &d - &d * &s)) <= 1e-12);
            }
        }
    }

    #[test]
    fn shift_adjoint_against_own_twist(
        p_list in p_list_strategy(), aux in 1usize..4, seed in any::<u64>(), pick in any::<prop::sample::Index>(),
    ) {
        let i = pick.index(p_list.len());
        let u = random_unitary(aux, &mut seeded_rng(seed));
        let k_dim: usize = p_list.iter().product();
        let s_adj = shift_on_factor(&p_list, i, aux).adjoint();
        let d = diag_twist(&p_list, i + 1, &u, aux, &tol()).unwrap();
        let lhs = &s_adj * &d;
        let rhs = kron(&identity(k_dim), &u) * &d * &s_adj;
        prop_assert!(op_norm(&(lhs - rhs)) <= 1e-12);
    }
}

/// `V*V` is an orthogonal projection: Hermitian with spectrum in {0, 1}.
fn initial_projection_oracle(v: &ComplexMatrix) -> bool {
    let g = v.adjoint() * v;
    if op_norm(&(g.adjoint() - &g)) > 1e-9 {
        return false;
    }
    eigenvalues(&g)
        .iter()
        .all(|l| l.norm() <= 1e-9 || (l - 1.0).norm() <= 1e-9)
}

#[test]
fn partial_isometry_criteria_agree() {
    let mut agree = 0;
    let mut positives = 0;
    for seed in 0..1000u64 {
        let mut rng = seeded_rng(seed);
        let d = rng.random_range(1..=5);
        let u = random_unitary(d, &mut rng);
        let w = random_unitary(d, &mut rng);
        let sigma: Vec<Complex64> = match seed % 3 {
            0 => (0..d)
                .map(|_| c64(rng.random_range(0..2) as f64, 0.0))
                .collect(),
            1 => (0..d)
                .map(|_| c64(rng.random::<f64>() * 1.2, 0.0))
                .collect(),
            _ => (0..d)
                .map(|k| {
                    c64(
                        if k == 0 {
                            1.0 + 1e-3
                        } else {
                            rng.random_range(0..2) as f64
                        },
                        0.0,
                    )
                })
                .collect(),
        };
        let v = &u * ppi_core::linalg::diag(&sigma) * w.adjoint();
        let a = is_partial_isometry(&v, &tol()).pass;
        let b = initial_projection_oracle(&v);
        positives += usize::from(a);
        agree += usize::from(a == b);
    }
    assert_eq!(agree, 1000);
    assert!(positives > 200);
}

#[test]
fn example_pairs_are_exact() {
    let lambdas = [
        c64(1.0, 0.0),
        c64(0.0, 1.0),
        Complex64::from_polar(1.0, std::f64::consts::TAU / 7.0),
    ];
    for p in 1..=4 {
        for &l in &lambdas {
            let t = build_example_pair(p, l, &tol()).unwrap();
            assert_eq!(t.dim(), 2 * p * p);
            let r = verify_twisted(&t, &tol());
            assert!(
                r.max_residual <= 1e-12,
                "p={p} lambda={l}: {}",
                r.max_residual
            );
        }
    }
    assert!(build_example_pair(2, c64(1.5, 0.0), &tol()).is_err());
}

#[test]
fn seeded_model_tuples_are_exact() {
    for seed in 0..100 {
        let spec = random_model_spec(seed, RandomSpecLimits::default());
        let t = build_model_tuple(&spec, &tol()).unwrap();
        let r = verify_twisted(&t, &tol());
        assert!(
            r.max_residual <= 1e-12,
            "seed {seed}: {:?} {}",
            r.worst(),
            r.max_residual
        );
    }
}

#[test]
fn two_shift_slots_with_scalar_twist() {
    let lambda = Complex64::from_polar(1.0, std::f64::consts::TAU / 5.0);
    let spec = ModelSpec {
        slots: vec![SlotKind::Truncated(2), SlotKind::Truncated(3)],
        aux_dim: 1,
        twist_data: [((1, 2), ComplexMatrix::from_element(1, 1, lambda))].into(),
        slot_unitaries: BTreeMap::new(),
    };
    let t = build_model_tuple(&spec, &tol()).unwrap();
    assert!(verify_twisted(&t, &tol()).max_residual <= 1e-12);
}

#[test]
fn verify_is_conjugation_invariant() {
    for seed in 0..30u64 {
        let spec = random_model_spec(seed, RandomSpecLimits::default());
        let t = build_model_tuple(&spec, &tol()).unwrap();
        let w = random_unitary(t.dim(), &mut seeded_rng(seed + 1000));
        let s = conjugate_tuple(&t, &w, &tol()).unwrap();
        let before = verify_twisted(&t, &tol());
        let after = verify_twisted(&s, &tol());
        for (k, r) in &before.residuals {
            assert!((r - after.residuals[k]).abs() <= 1e-11, "seed {seed} {k}");
        }
        let back = conjugate_tuple(&s, &w.adjoint(), &tol()).unwrap();
        for (x, y) in back.ops().iter().zip(t.ops()) {
            assert!(op_norm(&(x - y)) <= 1e-12);
        }
    }
}

#[test]
fn commuting_unitaries_commute() {
    let us = random_commuting_unitaries(4, 3, 7);
    for a in &us {
        assert!(ppi_core::linalg::unitarity_defect(a) <= 1e-12);
        for b in &us {
            assert!(op_norm(&(a * b - b * a)) <= 1e-12);
        }
    }
    assert_eq!(us, random_commuting_unitaries(4, 3, 7));
    let scalars = random_commuting_unitaries(1, 3, 99);
    assert!(scalars
        .iter()
        .all(|u| (u[(0, 0)].norm() - 1.0).abs() < 1e-12));
}
