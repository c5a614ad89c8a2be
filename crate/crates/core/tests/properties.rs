use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use mbasis::biorth::{
    biorthogonality_defect, boundedness_constant, classify_perturbation, spanning_indices,
    uniform_minimality_constant, BiorthSystem,
};
use mbasis::pathology::{
    build_pathological_system, check_eps_schedule, geometric_eps, operator_t, permutation_from_f,
    random_rough_packing, rough_capacity, PiValue,
};
use mbasis::perturbations::{construct_flattened, validate_block_partition, BlockPartition};
use mbasis::representing::{
    build_norming_indices, build_representing_indices, reconstruct, strong_partition_from_sequence,
};
use mbasis::subspace::{
    distance_to_span, dual_solve, project, span_equal, unit_net, SubspaceBasis, ToleranceConfig,
    TruncatedVector,
};

fn tol() -> ToleranceConfig {
    ToleranceConfig::default()
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0f64..1.0, rows * cols)
        .prop_map(move |v| DMatrix::from_column_slice(rows, cols, &v))
}

fn vector(n: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-1.0f64..1.0, n).prop_map(DVector::from_vec)
}

fn tv(v: DVector<f64>) -> TruncatedVector {
    TruncatedVector::from_dvector(v).unwrap()
}

/// Consecutive groups of 1..=n with anchors chosen inside each group.
fn consecutive_partition(n: usize) -> impl Strategy<Value = BlockPartition> {
    prop::collection::vec((1usize..4, 0usize..4), n).prop_map(move |spec| {
        let (mut blocks, mut anchors, mut i) = (Vec::new(), Vec::new(), 1);
        for (len, a) in spec {
            if i > n {
                break;
            }
            let end = (i + len - 1).min(n);
            let b: Vec<usize> = (i..=end).collect();
            anchors.push(b[a % b.len()]);
            blocks.push(b);
            i = end + 1;
        }
        let eps = (1..=blocks.len()).map(|j| 0.5 / (j * j) as f64).collect();
        BlockPartition::new(blocks, anchors, eps).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pythagoras(m in matrix(6, 3), x in vector(6)) {
        let s = SubspaceBasis::from_columns(&m, 1e-10).unwrap();
        let (p, d) = project(&tv(x.clone()), &s).unwrap();
        let lhs = d * d + p.norm() * p.norm();
        prop_assert!((lhs - x.norm_squared()).abs() <= 1e-10 * x.norm_squared().max(1e-300));
    }

    #[test]
    fn dual_solve_gives_identity(m in matrix(5, 3)) {
        let s = SubspaceBasis::from_columns(&m, 1e-10).unwrap();
        prop_assume!(s.rank() == 3 && s.singular_values().last().copied().unwrap_or(0.0) > 1e-3);
        let vs: Vec<TruncatedVector> = m.column_iter().map(|c| tv(c.into_owned())).collect();
        let fs = dual_solve(&vs, &s, 1e-10).unwrap();
        for (k, f) in fs.iter().enumerate() {
            for (n, v) in vs.iter().enumerate() {
                let want = if k == n { 1.0 } else { 0.0 };
                prop_assert!((f.dot(v) - want).abs() <= tol().biorth_tol);
            }
        }
    }

    #[test]
    fn span_equal_is_an_equivalence(m in matrix(6, 3), a in matrix(3, 3), b in matrix(3, 3)) {
        prop_assume!(a.determinant().abs() > 1e-2 && b.determinant().abs() > 1e-2);
        let s1 = SubspaceBasis::from_columns(&m, 1e-10).unwrap();
        prop_assume!(s1.rank() == 3);
        let s2 = SubspaceBasis::from_columns(&(&m * &a), 1e-10).unwrap();
        let s3 = SubspaceBasis::from_columns(&(&m * &a * &b), 1e-10).unwrap();
        prop_assert!(span_equal(&s1, &s1, 0.0).unwrap());
        prop_assert_eq!(span_equal(&s1, &s2, 0.0).unwrap(), span_equal(&s2, &s1, 0.0).unwrap());
        if span_equal(&s1, &s2, 1e-12).unwrap() && span_equal(&s2, &s3, 1e-12).unwrap() {
            prop_assert!(span_equal(&s1, &s3, 3e-12).unwrap());
        }
    }

    #[test]
    fn unit_net_is_unit_and_covers(m in matrix(5, 2), probes in prop::collection::vec(vector(2), 8)) {
        let s = SubspaceBasis::from_columns(&m, 1e-10).unwrap();
        prop_assume!(s.rank() == 2);
        let res = 0.2;
        let net = unit_net(&s, res).unwrap();
        for v in &net {
            prop_assert!((v.norm() - 1.0).abs() <= 1e-12);
        }
        for c in probes {
            prop_assume!(c.norm() > 1e-6);
            let y = s.onb() * (&c / c.norm());
            let best = net.iter().map(|v| (v.coords() - &y).norm()).fold(f64::INFINITY, f64::min);
            prop_assert!(best <= res, "probe at distance {best}");
        }
    }

    #[test]
    fn boundedness_and_uniform_minimality(n in 2usize..12, a in 0.0f64..0.9, rho in 0.1f64..0.9, seed in 0u64..1000) {
        let sys = BiorthSystem::near_canonical(n, a, rho, seed, tol()).unwrap();
        let b = boundedness_constant(&sys);
        let u = uniform_minimality_constant(&sys).unwrap();
        prop_assert!(b >= 1.0 - 1e-12);
        prop_assert!(u <= 1.0 + 1e-12);
        prop_assert!(u >= 1.0 / b - 1e-12);
    }

    #[test]
    fn reordering_pairs_keeps_defect_and_boundedness(n in 3usize..10, seed in 0u64..1000, rot in 1usize..9) {
        let sys = BiorthSystem::near_canonical(n, 0.5, 0.6, seed, tol()).unwrap();
        let order: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
        let x = DMatrix::from_fn(n, n, |r, c| sys.x_matrix()[(r, order[c])]);
        let f = DMatrix::from_fn(n, n, |r, c| sys.f_matrix()[(r, order[c])]);
        let re = BiorthSystem::from_matrices(x, f, tol()).unwrap();
        prop_assert!((biorthogonality_defect(&re) - biorthogonality_defect(&sys)).abs() <= 1e-15);
        prop_assert!((boundedness_constant(&re) - boundedness_constant(&sys)).abs() <= 1e-12);
    }

    #[test]
    fn flattened_perturbations(p in consecutive_partition(9), seed in 0u64..500) {
        let x = BiorthSystem::near_canonical(9, 0.4, 0.5, seed, tol()).unwrap();
        let z = construct_flattened(&x, &p, seed).unwrap();
        prop_assert!(biorthogonality_defect(&z) <= tol().biorth_tol);
        prop_assert!(validate_block_partition(&p, 9).is_block_kind());
        let c = classify_perturbation(&z, &x, tol().span_tol).unwrap();
        prop_assert!(c.is_block());
        prop_assert!(c.is_pile());
        let again = construct_flattened(&x, &p, seed).unwrap();
        prop_assert_eq!(again.x_matrix(), z.x_matrix());
        prop_assert_eq!(again.f_matrix(), z.f_matrix());
        let q = spanning_indices(&z, &x, tol().span_tol).unwrap();
        for (m, w) in q.iter().enumerate() {
            prop_assert!(*w > m);
        }
        prop_assert!(q.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn representing_indices_increase(n in 8usize..24, seed in 0u64..500) {
        let sys = BiorthSystem::near_canonical(n, 0.4, 0.5, seed, tol()).unwrap();
        let ri = build_representing_indices(&sys, 4).unwrap();
        prop_assert_eq!(ri.r[0], 1);
        prop_assert!(ri.r.windows(2).all(|w| w[0] < w[1]));
        let x = TruncatedVector::random_unit(n, seed, 0);
        for m in 1..ri.depth() {
            let rec = reconstruct(&x, &sys, &ri, m).unwrap();
            prop_assert!(rec.error >= rec.ls_distance - 1e-12);
            prop_assert!(rec.error <= rec.bound + 1e-12);
        }
    }

    #[test]
    fn norming_indices_leave_room(n in 12usize..24, seed in 0u64..500) {
        let sys = BiorthSystem::near_canonical(n, 0.3, 0.5, seed, tol()).unwrap();
        let c = mbasis::biorth::norming_constant_exact(&sys).unwrap() / 2.0;
        let ri = build_norming_indices(&sys, 3, c).unwrap();
        for m in 1..=ri.depth() {
            prop_assert!(ri.r_of(m).unwrap() > ri.p_of(m).unwrap());
        }
        prop_assert!(ri.r.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn strong_partition_tiles(steps in prop::collection::vec(1usize..4, 12)) {
        let mut r = Vec::new();
        let mut acc = 0;
        for s in steps {
            acc += s;
            r.push(acc);
        }
        let t = strong_partition_from_sequence(&r, 1, |j| 1.0 / (j * j) as f64).unwrap();
        let rep = validate_block_partition(&t.partition, t.constructed_end);
        prop_assert!(rep.is_valid());
        prop_assert!(rep.is_block_kind());
        let mut seen = HashSet::new();
        for (b, &a) in t.partition.blocks().iter().zip(t.partition.anchors()) {
            prop_assert!(b.contains(&a));
            for &k in b {
                prop_assert!(seen.insert(k));
            }
        }
    }

    #[test]
    fn permutation_invariants(a in 1.0f64..5.0, b in 0.3f64..2.0, len in 64usize..3000) {
        let f: Vec<f64> = (1..=len).map(|n| a * (n as f64).powf(b)).collect();
        let spec = permutation_from_f(&f, len).unwrap();
        let mut seen = HashSet::new();
        for n in 1..=len {
            if let PiValue::Known(v) = spec.pi(n) {
                prop_assert!(seen.insert(v), "pi repeats {}", v);
            }
        }
        let gammas = spec.gamma().len();
        for k in 1..=gammas {
            prop_assert!(seen.contains(&k), "{} missing from the image", k);
        }
        let mut hits = vec![0usize; len + 1];
        for p in &spec.big_phi {
            if let PiValue::Known(v) = *p {
                if v <= len {
                    hits[v] += 1;
                }
            }
        }
        let mut count = 0;
        for (m, &h) in hits.iter().enumerate().take(len).skip(1) {
            count += h;
            prop_assert_eq!(count + 1, spec.phi(m + 1), "#{{n : Phi(n) <= {}}} + 1 != phi({})", m, m + 1);
            prop_assert!(spec.omega(m) <= 2 * spec.phi(m));
        }
    }

    #[test]
    fn t_condition_number(scale in 0.01f64..0.3, ratio in 0.05f64..0.7, n in 4usize..40) {
        let eps = geometric_eps(n, scale, ratio);
        prop_assume!(check_eps_schedule(&eps).is_ok());
        let f: Vec<f64> = (1..=1024).map(|v| v as f64).collect();
        let spec = permutation_from_f(&f, 1024).unwrap();
        let ps = build_pathological_system(&spec, &eps, n, tol()).unwrap();
        let t = operator_t(&ps.e_hats).unwrap();
        prop_assert!(t.condition() >= 1.0 - 1e-12);
        prop_assert!(t.condition() <= 4.0 + 1e-9);
    }

    #[test]
    fn rough_packings_are_separated(k in 1usize..4, eps in 0.05f64..0.45, m in 1.0f64..3.0, seed in 0u64..1000) {
        let rs = random_rough_packing(k, eps, m, 400, seed).unwrap();
        prop_assert!(rs.is_certified());
        let cap = rough_capacity(k, eps, m).unwrap();
        prop_assert!(rs.len() as f64 <= cap.p_max);
        prop_assert!(rs.min_separation() >= cap.delta - 1e-9);
    }
}

#[test]
fn spanning_indices_are_order_sensitive() {
    let x = BiorthSystem::canonical(3, tol()).unwrap();
    let swap = DMatrix::from_column_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    let z = BiorthSystem::from_matrices(swap.clone(), swap, tol()).unwrap();
    assert_eq!(spanning_indices(&z, &x, 1e-10).unwrap(), vec![2, 2, 3]);
    assert_eq!(spanning_indices(&x, &x, 1e-10).unwrap(), vec![1, 2, 3]);
    let d = distance_to_span(
        &tv(DVector::from_vec(vec![0.0, 1.0, 0.0])),
        &x.vector_span(&[0]).unwrap(),
    )
    .unwrap();
    assert_eq!(d, 1.0);
}
