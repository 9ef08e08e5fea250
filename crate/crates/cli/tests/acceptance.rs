//! Acceptance suite: one PASS/FAIL line per criterion, then a single verdict.
//! Run with `cargo test -p ppi-cli --test acceptance -- --nocapture` to see
//! the lines.

mod common;
#[path = "../../core/tests/common/oracle.rs"]
mod oracle;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use ppi_core::hw::{hp_projection, hw_decompose, limit_projections, multiplicity_space};
use ppi_core::linalg::{c64, identity, kron, op_norm, projection_range, ComplexMatrix, Tolerance};
use ppi_core::operators::{
    build_example_pair, build_model_sum, build_model_tuple, conjugate_tuple, diag_twist,
    is_power_partial_isometry, model_signature, random_commuting_unitaries, random_matrix,
    random_model_family, random_model_spec, random_ppi_instance, random_unitary, seeded_rng,
    shift_on_factor, ModelSpec, RandomSpecLimits, SlotKind,
};
use ppi_core::twisted::{
    check_pq_commutation, classify_partition, commutant_dimension, decompose_tuple, verify_twisted,
    DecompositionTree, LeafPartition,
};
use rand::seq::SliceRandom;
use rand::Rng;

use common::{generate_to, ppi, real_document, s, write};
use oracle::commutant_dim_gauss;

type Verdict = Result<String, String>;

fn tol() -> Tolerance {
    Tolerance::default()
}

fn reducing_defect(v: &ComplexMatrix, pi: &ComplexMatrix) -> f64 {
    let rest = identity(v.nrows()) - pi;
    op_norm(&(&rest * v * pi)).max(op_norm(&(pi * v * &rest)))
}

/// First failure message, or the number of checks.
struct Tally {
    checks: usize,
    first_failure: Option<String>,
}

impl Tally {
    fn new() -> Self {
        Tally {
            checks: 0,
            first_failure: None,
        }
    }

    fn check(&mut self, ok: bool, msg: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok && self.first_failure.is_none() {
            self.first_failure = Some(msg());
        }
    }

    fn verdict(self, summary: String) -> Verdict {
        match self.first_failure {
            None => Ok(format!("{summary} ({} checks)", self.checks)),
            Some(f) => Err(f),
        }
    }
}

/// Criteria 1-3 share their 1000 inputs.
fn halmos_wallen_sweep() -> (Verdict, Verdict, Verdict) {
    let (mut c1, mut c2, mut c3) = (Tally::new(), Tally::new(), Tally::new());
    let mut hw_time = Duration::ZERO;
    let mut worst = 0.0f64;
    for seed in 0..1000u64 {
        let (v, inst) = random_ppi_instance(seed);
        let d = v.nrows();
        let started = Instant::now();
        let dec = hw_decompose(&v, &tol());
        hw_time += started.elapsed();
        let dec = match dec {
            Ok(dec) => dec,
            Err(e) => {
                c1.check(false, || format!("seed {seed}: {e}"));
                continue;
            }
        };
        worst = worst.max(dec.residual);
        c1.check(dec.block_signature() == inst.blocks, || {
            format!(
                "seed {seed}: blocks {:?} vs {:?}",
                dec.block_signature(),
                inst.blocks
            )
        });
        c1.check(dec.unitary_dim() == inst.unitary_dim, || {
            format!("seed {seed}: unitary dim")
        });
        c1.check(dec.residual <= 1e-9, || {
            format!("seed {seed}: residual {:.3e}", dec.residual)
        });

        let (p, q) = limit_projections(&v, &tol()).unwrap();
        let id = identity(d);
        let pq = op_norm(&(&p * &q - &q * &p));
        c2.check(pq <= 1e-10, || format!("seed {seed}: ‖PQ−QP‖ = {pq:.3e}"));
        let projs = dec.block_projections();
        let total = projs
            .iter()
            .fold(ComplexMatrix::zeros(d, d), |acc, x| acc + x);
        c2.check(op_norm(&(total - &id)) <= 1e-9, || {
            format!("seed {seed}: blocks do not sum to I")
        });
        for (a, pa) in projs.iter().enumerate() {
            c2.check(reducing_defect(&v, pa) <= 1e-9, || {
                format!("seed {seed}: block {a} not reducing")
            });
            for pb in &projs[a + 1..] {
                c2.check(op_norm(&(pa * pb)) <= 1e-9, || {
                    format!("seed {seed}: blocks not orthogonal")
                });
            }
        }
        for b in &dec.truncated_blocks {
            let h = projection_range(&hp_projection(&v, b.p), &tol()).dim();
            let m = multiplicity_space(&v, b.p, &tol()).dim();
            c2.check(h == b.p * m, || {
                format!("seed {seed}: dim H_{} = {h}, dim M = {m}", b.p)
            });
        }

        let ms = projection_range(&((&id - &p) * &q), &tol()).dim();
        let mb = projection_range(&((&id - &q) * &p), &tol()).dim();
        c3.check(ms == 0 && mb == 0, || {
            format!("seed {seed}: shift ranges {ms}, {mb}")
        });
    }
    c1.check(hw_time <= Duration::from_secs(60), || {
        format!("took {hw_time:?}")
    });
    (
        c1.verdict(format!(
            "1000 inputs, worst residual {worst:.2e}, {:.1}s",
            hw_time.as_secs_f64()
        )),
        c2.verdict("1000 inputs".into()),
        c3.verdict("1000 inputs".into()),
    )
}

fn criterion_4() -> Verdict {
    let mut t = Tally::new();
    let mut worst = 0.0f64;
    let lambdas = [
        c64(1.0, 0.0),
        c64(0.0, 1.0),
        Complex64::from_polar(1.0, std::f64::consts::TAU / 7.0),
    ];
    for p in 1..=4 {
        for &l in &lambdas {
            let r = verify_twisted(&build_example_pair(p, l, &tol()).unwrap(), &tol());
            worst = worst.max(r.max_residual);
            t.check(r.max_residual <= 1e-12, || {
                format!("example p={p} λ={l}: {:.3e}", r.max_residual)
            });
        }
    }
    for seed in 0..100 {
        let spec = random_model_spec(seed, RandomSpecLimits::default());
        let r = verify_twisted(&build_model_tuple(&spec, &tol()).unwrap(), &tol());
        worst = worst.max(r.max_residual);
        t.check(r.max_residual <= 1e-12, || {
            format!("model seed {seed}: {:.3e}", r.max_residual)
        });
    }
    for seed in 0..100u64 {
        let mut rng = seeded_rng(seed);
        let n = rng.random_range(2..=3);
        let p_list: Vec<usize> = (0..n).map(|_| rng.random_range(1..=3)).collect();
        let aux = rng.random_range(1..=3);
        let us = random_commuting_unitaries(aux, 2, rng.random());
        let u = random_unitary(aux, &mut rng);
        let k_dim: usize = p_list.iter().product();
        for j in 1..=n {
            let d = diag_twist(&p_list, j, &us[0], aux, &tol()).unwrap();
            let d_adj = diag_twist(&p_list, j, &us[0].adjoint(), aux, &tol()).unwrap();
            let r1 = op_norm(&(d.adjoint() - d_adj));
            let e = diag_twist(&p_list, j % n + 1, &us[1], aux, &tol()).unwrap();
            let r1b = op_norm(&(&d * &e - &e * &d));
            t.check(r1.max(r1b) <= 1e-12, || {
                format!("(1) seed {seed}: {:.3e}", r1.max(r1b))
            });
            let du = diag_twist(&p_list, j, &u, aux, &tol()).unwrap();
            for i in 0..n {
                let s = shift_on_factor(&p_list, i, aux);
                if i + 1 != j {
                    let r2 = op_norm(&(&s * &du - &du * &s));
                    t.check(r2 <= 1e-12, || format!("(2) seed {seed}: {r2:.3e}"));
                } else {
                    let sa = s.adjoint();
                    let r3 = op_norm(&(&sa * &du - kron(&identity(k_dim), &u) * &du * &sa));
                    t.check(r3 <= 1e-12, || format!("(3) seed {seed}: {r3:.3e}"));
                }
            }
        }
    }
    t.verdict(format!(
        "12 example pairs, 100 models, 100 draws; worst residual {worst:.2e}"
    ))
}

fn two_slot_limits() -> RandomSpecLimits {
    RandomSpecLimits {
        max_slots: 2,
        ..RandomSpecLimits::default()
    }
}

fn criterion_5() -> Verdict {
    let mut t = Tally::new();
    let mut pairs = 0;
    let mut seed = 0u64;
    let mut worst = 0.0f64;
    while pairs < 100 {
        seed += 1;
        let specs = random_model_family(seed, two_slot_limits());
        if specs[0].slots.len() != 2 {
            continue;
        }
        pairs += 1;
        let model = build_model_sum(&specs, &tol()).unwrap();
        let w = random_unitary(model.dim(), &mut seeded_rng(seed + 77));
        let tp = conjugate_tuple(&model, &w, &tol()).unwrap();
        let r = check_pq_commutation(tp.op(1), tp.op(2), &tol()).unwrap();
        worst = worst.max(r.max());
        t.check(r.max() <= 1e-10, || {
            format!("pair seed {seed}: {:.3e}", r.max())
        });
        let dec = hw_decompose(tp.op(1), &tol()).unwrap();
        for pi in dec.block_projections() {
            for (i, v) in tp.ops().iter().enumerate() {
                let def = reducing_defect(v, &pi);
                t.check(def <= 1e-9, || {
                    format!("pair seed {seed}: V_{} defect {def:.3e}", i + 1)
                });
            }
        }
    }
    t.verdict(format!("100 pairs, worst commutator {worst:.2e}"))
}

/// Multiindex, unitary set and truncated sets of one leaf.
type Classified = (Vec<SlotKind>, Vec<usize>, BTreeMap<usize, Vec<usize>>);

/// A partition in terms of the original operator labels.
fn relabel(p: &LeafPartition, perm: &[usize]) -> Classified {
    let n = perm.len();
    let mut multiindex = vec![SlotKind::Unitary; n];
    for (a, &k) in perm.iter().enumerate() {
        multiindex[k] = p.multiindex[a];
    }
    let map = |v: &Vec<usize>| {
        let mut out: Vec<usize> = v.iter().map(|&a| perm[a - 1] + 1).collect();
        out.sort();
        out
    };
    let truncated = p.truncated.iter().map(|(&q, v)| (q, map(v))).collect();
    (multiindex, map(&p.unitary), truncated)
}

fn canonical(tree: &DecompositionTree, perm: &[usize]) -> Vec<Classified> {
    let mut out: Vec<_> = classify_partition(tree)
        .leaves
        .iter()
        .map(|p| relabel(p, perm))
        .collect();
    out.sort();
    out
}

fn criterion_6() -> Verdict {
    let mut t = Tally::new();
    let started = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..200u64 {
        let specs = random_model_family(seed, RandomSpecLimits::default());
        let model = build_model_sum(&specs, &tol()).unwrap();
        t.check(model.len() <= 4 && model.dim() <= 64, || {
            format!("seed {seed}: out of range")
        });
        let w = random_unitary(model.dim(), &mut seeded_rng(seed ^ 0xfeed));
        let tp = conjugate_tuple(&model, &w, &tol()).unwrap();
        let tree = match decompose_tuple(&tp, &tol()) {
            Ok(tree) => tree,
            Err(e) => {
                t.check(false, || format!("seed {seed}: {e}"));
                continue;
            }
        };
        worst = worst.max(tree.residual);
        t.check(tree.signature() == model_signature(&specs), || {
            format!(
                "seed {seed}: {:?} vs {:?}",
                tree.signature(),
                model_signature(&specs)
            )
        });
        t.check(tree.residual <= 1e-9, || {
            format!("seed {seed}: residual {:.3e}", tree.residual)
        });

        let mut perm: Vec<usize> = (0..tp.len()).collect();
        perm.shuffle(&mut seeded_rng(seed + 1));
        let identity_perm: Vec<usize> = (0..tp.len()).collect();
        match decompose_tuple(&tp.permuted(&perm), &tol()) {
            Ok(pt) => {
                t.check(pt.leaves.len() == tree.leaves.len(), || {
                    format!("seed {seed}: leaf count")
                });
                t.check(
                    canonical(&pt, &perm) == canonical(&tree, &identity_perm),
                    || format!("seed {seed}: classification changes under {perm:?}"),
                );
            }
            Err(e) => t.check(false, || format!("seed {seed} permuted: {e}")),
        }
    }
    let elapsed = started.elapsed();
    t.check(elapsed <= Duration::from_secs(300), || {
        format!("took {elapsed:?}")
    });
    t.verdict(format!(
        "200 tuples, worst residual {worst:.2e}, {:.1}s",
        elapsed.as_secs_f64()
    ))
}

fn small_limits() -> RandomSpecLimits {
    RandomSpecLimits {
        max_model_dim: 12,
        ..RandomSpecLimits::default()
    }
}

fn oracle_instance(seed: u64) -> Vec<ComplexMatrix> {
    let mut rng = seeded_rng(seed);
    match seed % 4 {
        0 => loop {
            let (v, inst) = random_ppi_instance(rng.random());
            if inst.dim() <= 12 {
                return vec![v];
            }
        },
        1 | 2 => loop {
            let specs = random_model_family(rng.random(), small_limits());
            let mut t = build_model_sum(&specs, &tol()).unwrap();
            if seed % 4 == 2 {
                t = t.direct_sum(&t).unwrap();
            }
            if t.dim() <= 12 {
                let w = random_unitary(t.dim(), &mut rng);
                return conjugate_tuple(&t, &w, &tol()).unwrap().ops().to_vec();
            }
        },
        _ => {
            let d = rng.random_range(1..=6);
            vec![random_matrix(d, d, &mut rng)]
        }
    }
}

fn criterion_7() -> Verdict {
    let mut t = Tally::new();
    for seed in 0..200 {
        let ops = oracle_instance(seed);
        let d = ops[0].nrows();
        let (a, b) = (
            commutant_dimension(&ops, d, &tol()),
            commutant_dim_gauss(&ops, d),
        );
        t.check(d <= 12 && a == b, || {
            format!("instance {seed}: {a} vs oracle {b}")
        });
    }
    let mut irreducible = 0;
    let mut seed = 0;
    while irreducible < 50 {
        seed += 1;
        let spec = random_model_spec(seed, small_limits());
        let model = build_model_tuple(&spec, &tol()).unwrap();
        let tree = decompose_tuple(&model, &tol()).unwrap();
        if tree.leaves.len() != 1 || tree.leaves[0].mult_dim != 1 {
            continue;
        }
        irreducible += 1;
        let w = random_unitary(model.dim(), &mut seeded_rng(seed));
        let tp = conjugate_tuple(&model, &w, &tol()).unwrap();
        let k = commutant_dimension(tp.ops(), tp.dim(), &tol());
        t.check(k == 1, || {
            format!("irreducible spec seed {seed}: dimension {k}")
        });
        let sum = tp.direct_sum(&model).unwrap();
        let k2 = commutant_dimension(sum.ops(), sum.dim(), &tol());
        t.check(k2 >= 2, || {
            format!("direct sum seed {seed}: dimension {k2}")
        });
    }
    let lambda = Complex64::from_polar(1.0, std::f64::consts::TAU / 7.0);
    let spec = ModelSpec {
        slots: vec![SlotKind::Truncated(2), SlotKind::Truncated(3)],
        aux_dim: 1,
        twist_data: [((1, 2), ComplexMatrix::from_element(1, 1, lambda))].into(),
        slot_unitaries: BTreeMap::new(),
    };
    let m = build_model_tuple(&spec, &tol()).unwrap();
    t.check(commutant_dimension(m.ops(), m.dim(), &tol()) == 1, || {
        "(2,3) model".into()
    });
    for seed in 0..30 {
        let specs = random_model_family(seed, small_limits());
        let a = build_model_sum(&specs, &tol()).unwrap();
        let b = build_model_tuple(&random_spec_like(&specs[0], seed), &tol()).unwrap();
        let sum = a.direct_sum(&b).unwrap();
        let k = commutant_dimension(sum.ops(), sum.dim(), &tol());
        t.check(k >= 2, || format!("sum seed {seed}: dimension {k}"));
    }
    t.verdict("200 oracle instances, 50 irreducible models, 80 direct sums".into())
}

/// Another valid spec with the same number of slots.
fn random_spec_like(spec: &ModelSpec, seed: u64) -> ModelSpec {
    let mut s = seed * 1000;
    loop {
        s += 1;
        let cand = random_model_spec(s, small_limits());
        if cand.slots.len() == spec.slots.len() {
            return cand;
        }
    }
}

fn criterion_8() -> Verdict {
    let mut t = Tally::new();
    let h = 0.5f64.sqrt();
    let c3 = ComplexMatrix::from_fn(3, 3, |r, c| {
        let rows = [[0.0, 0.0, h], [0.0, 0.0, h], [1.0, 0.0, 0.0]];
        c64(rows[r][c], 0.0)
    });
    let check = is_power_partial_isometry(&c3, &tol());
    t.check(!check.pass && check.first_failing_power == Some(2), || {
        format!("C³ example: {:?}", check.first_failing_power)
    });
    let err = hw_decompose(&c3, &tol());
    t.check(err.is_err(), || {
        "hw_decompose accepted the C³ example".into()
    });

    for seed in 0..50u64 {
        let specs = random_model_family(seed, RandomSpecLimits::default());
        let model = build_model_sum(&specs, &tol()).unwrap();
        let d = model.dim();
        let bump = |k: u64| {
            let e = random_matrix(d, d, &mut seeded_rng(seed * 100 + k));
            let n = op_norm(&e);
            e * c64(1e-3 / n, 0.0)
        };
        t.check(verify_twisted(&model, &tol()).pass, || {
            format!("seed {seed}: baseline fails")
        });
        for k in 1..=model.len() {
            let bad = model
                .clone()
                .with_op(k, model.op(k) + bump(k as u64))
                .unwrap();
            t.check(!verify_twisted(&bad, &tol()).pass, || {
                format!("seed {seed}: V_{k} perturbation passes")
            });
        }
        for (&(i, j), u) in model.stored_twists() {
            let bad = model
                .clone()
                .with_twist(i, j, u + bump(50 + (i * 10 + j) as u64))
                .unwrap();
            t.check(!verify_twisted(&bad, &tol()).pass, || {
                format!("seed {seed}: U_{i}{j} perturbation passes")
            });
        }
    }
    for seed in 0..50u64 {
        let v = random_matrix(4, 4, &mut seeded_rng(seed));
        t.check(hw_decompose(&v, &tol()).is_err(), || {
            format!("generic seed {seed} accepted")
        });
    }
    t.verdict(format!(
        "C³ example rejected ({}), 50 perturbed tuples, 50 generic matrices",
        err.unwrap_err()
    ))
}

fn criterion_9() -> Verdict {
    let mut t = Tally::new();
    let dir = tempfile::tempdir().unwrap();
    let spec = write(
        dir.path(),
        "spec.json",
        r#"{"schema_version":"1","slots":["2","u"],"aux_dim":2,
            "twists":[{"i":1,"j":2,"matrix":[[[1,0],[0,0]],[[0,0],[-1,0]]]}],
            "slot_unitaries":[{"slot":2,"matrix":[[[0,1],[0,0]],[[0,0],[0,-1]]]}]}"#,
    );
    let presets: Vec<Vec<&str>> = vec![
        vec![
            "--preset",
            "example43",
            "--p",
            "3",
            "--lambda",
            "0,1",
            "--scramble",
        ],
        vec![
            "--preset",
            "truncated-shift",
            "--p",
            "4",
            "--scramble",
            "--seed",
            "2",
        ],
        vec!["--preset", "random-model", "--seed", "17", "--scramble"],
        vec!["--preset", "random-ppi", "--seed", "23"],
        vec!["--spec", s(&spec), "--scramble", "--seed", "5"],
    ];
    for (k, args) in presets.iter().enumerate() {
        let mut gen = vec!["generate"];
        gen.extend_from_slice(args);
        let outs: Vec<String> = (0..3).map(|_| ppi(&gen).stdout).collect();
        t.check(outs.iter().all(|o| o == &outs[0] && !o.is_empty()), || {
            format!("generate {args:?} differs")
        });
        let doc = generate_to(dir.path(), &format!("p{k}.json"), args);
        let other = generate_to(
            dir.path(),
            &format!("q{k}.json"),
            &["--preset", "random-model", "--seed", "3"],
        );
        let commands: Vec<Vec<&str>> = vec![
            vec!["verify", s(&doc)],
            vec!["hw", s(&doc), "--op", "V1", "--emit-intertwiner"],
            vec!["decompose", s(&doc), "--emit-intertwiner"],
            vec!["commutant", s(&doc)],
            vec!["equiv", s(&doc), s(&doc)],
            vec!["equiv", s(&doc), s(&other)],
        ];
        for cmd in &commands {
            let runs: Vec<_> = (0..3).map(|_| ppi(cmd)).collect();
            t.check(
                runs.iter()
                    .all(|r| r.stdout == runs[0].stdout && r.code == runs[0].code),
                || format!("{cmd:?} is not reproducible"),
            );
        }
        let verify = ppi(&["verify", s(&doc)]);
        t.check(verify.code == 0, || {
            format!("generated {args:?} fails verify")
        });
        let jobs: Vec<String> = ["1", "3"]
            .iter()
            .map(|j| ppi(&["decompose", s(&doc), "--jobs", j]).stdout)
            .collect();
        t.check(jobs[0] == jobs[1], || {
            format!("{args:?}: output depends on --jobs")
        });
    }

    // Exit codes: valid input, mathematical failure, schema error.
    let good = generate_to(
        dir.path(),
        "good.json",
        &["--preset", "example43", "--lambda", "0,1"],
    );
    let h = 0.5f64.sqrt();
    let bad_math = write(
        dir.path(),
        "c3.json",
        &real_document(3, &[&[0.0, 0.0, h, 0.0, 0.0, h, 1.0, 0.0, 0.0]]),
    );
    let bad_schema = write(
        dir.path(),
        "bad.json",
        r#"{"schema_version":"1","dim":2,"operators":[]}"#,
    );
    for cmd in ["verify", "decompose"] {
        t.check(ppi(&[cmd, s(&good)]).code == 0, || {
            format!("{cmd} on valid input")
        });
        t.check(ppi(&[cmd, s(&bad_schema)]).code == 2, || {
            format!("{cmd} on schema error")
        });
    }
    t.check(ppi(&["hw", s(&good), "--op", "V1"]).code == 0, || {
        "hw on valid input".into()
    });
    t.check(ppi(&["hw", s(&bad_math), "--op", "A1"]).code == 1, || {
        "hw on non-ppi input".into()
    });
    t.check(ppi(&["hw", s(&bad_schema), "--op", "A1"]).code == 2, || {
        "hw on schema error".into()
    });
    let nc = write(
        dir.path(),
        "nc.json",
        &real_document(2, &[&[0.0, 1.0, 1.0, 0.0], &[1.0, 0.0, 0.0, -1.0]]),
    );
    t.check(ppi(&["verify", s(&nc)]).code == 1, || {
        "verify on failing relations".into()
    });
    t.check(ppi(&["decompose", s(&nc)]).code == 1, || {
        "decompose on failing relations".into()
    });
    t.verdict("5 generators × 6 commands × 3 runs; exit codes 0/1/2".into())
}

#[test]
fn acceptance() {
    let started = Instant::now();
    let (c1, c2, c3) = halmos_wallen_sweep();
    let results = [
        ("1 Halmos-Wallen round-trip", c1),
        ("2 decomposition invariants", c2),
        ("3 no shift parts", c3),
        ("4 exact constructions", criterion_4()),
        ("5 projections commute with partners", criterion_5()),
        ("6 tuple decomposition round-trip", criterion_6()),
        ("7 commutant oracle", criterion_7()),
        ("8 negative controls", criterion_8()),
        ("9 CLI determinism and exit codes", criterion_9()),
    ];
    let mut failed = Vec::new();
    for (name, r) in &results {
        match r {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                println!("FAIL  {name}: {why}");
                failed.push(*name);
            }
        }
    }
    println!(
        "acceptance finished in {:.1}s",
        started.elapsed().as_secs_f64()
    );
    assert!(failed.is_empty(), "failed: {failed:?}");
}
