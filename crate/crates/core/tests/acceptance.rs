//! Acceptance run: one [PASS]/[FAIL] line per criterion, nonzero exit on any failure.

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use mbasis::biorth::{
    biorthogonality_defect, boundedness_constant, classify_perturbation, norming_constant_exact,
    uniform_minimality_constant, BiorthSystem,
};
use mbasis::pathology::{
    build_pathological_system, check_eps_schedule, extract_rough_system, geometric_eps, linear_lambdas,
    log_grid, omega_stats, operator_t, orthonormalize, permutation_from_f, random_rough_packing,
    rough_capacity, t_asymptotics_check, unb_experiment, verify_pathological_system, PiValue, RoughSystem,
};
use mbasis::perturbations::{
    construct_flattened, construct_flattened_with_duals, verify_flattened, BlockPartition,
};
use mbasis::representing::{
    available_rounds, build_norming_indices, build_representing_indices, check_property_p_on_net,
    reconstruct, strong_partition, strongness_diagnostic,
};
use mbasis::subspace::{sphere_net_size, ToleranceConfig, TruncatedVector, DEFAULT_NET_CAP};

/// Collects the sub-checks of one criterion.
#[derive(Default)]
struct Outcome {
    failures: Vec<String>,
    notes: Vec<String>,
}

impl Outcome {
    fn check(&mut self, ok: bool, what: impl Into<String>) {
        let what = what.into();
        if !ok {
            self.failures.push(what);
        }
    }

    fn note(&mut self, s: impl Into<String>) {
        self.notes.push(s.into());
    }
}

fn tol() -> ToleranceConfig {
    ToleranceConfig::default()
}

fn linear_f(n: usize) -> Vec<f64> {
    (1..=n).map(|v| v as f64).collect()
}

fn sigma(m: &DMatrix<f64>) -> (f64, f64) {
    let s = m.clone().svd(false, false).singular_values;
    let max = s.iter().cloned().fold(0.0, f64::max);
    let min = s.iter().cloned().fold(f64::INFINITY, f64::min);
    (max, min)
}

/// Orthonormal basis of the column span by SVD (oracle independent of the library's QR).
fn svd_basis(a: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = a.clone().svd(true, false);
    let u = svd.u.unwrap();
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > 1e-12 * smax)
        .collect();
    DMatrix::from_fn(a.nrows(), keep.len(), |r, c| u[(r, keep[c])])
}

fn dist_to(q: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    (v - q * (q.transpose() * v)).norm()
}

const EPS_TRUNC: usize = 200;

fn criterion_1(o: &mut Outcome) {
    let spec = permutation_from_f(&linear_f(1024), 1024).unwrap();
    let eps = geometric_eps(EPS_TRUNC, 0.25, 0.5);
    let ps = build_pathological_system(&spec, &eps, EPS_TRUNC, tol()).unwrap();
    let (x, f) = (ps.sys.x_matrix(), ps.sys.f_matrix());
    let g = f.transpose() * x;
    let defect = (g - DMatrix::<f64>::identity(EPS_TRUNC, EPS_TRUNC)).abs().max();
    o.check(defect <= 1e-8, format!("defect {defect:e} > 1e-8"));
    o.note(format!("defect {defect:.1e}"));

    let chk = verify_pathological_system(&ps).unwrap();
    let span_worst = chk
        .vectors_in_ehat_span
        .max(chk.ehat_in_vector_span)
        .max(chk.functionals_in_permuted_span)
        .max(chk.permuted_in_functional_span);
    o.check(span_worst <= 1e-8, format!("prefix span residual {span_worst:e}"));
    // spot check with an SVD basis of the generators
    for n in [1, 7, 50, 133, EPS_TRUNC] {
        let qe = svd_basis(&ps.e_hats.columns(0, n).into_owned());
        let qp = svd_basis(&ps.permuted.columns(0, n).into_owned());
        let xv = x.column(n - 1).into_owned();
        let fv = f.column(n - 1).into_owned();
        let a = dist_to(&qe, &(&xv / xv.norm()));
        let b = dist_to(&qp, &(&fv / fv.norm()));
        o.check(
            a <= 1e-8 && b <= 1e-8,
            format!("n = {n}: spot span residuals {a:e}, {b:e}"),
        );
    }
    o.note(format!("span residual {span_worst:.1e}"));

    let mut worst_dev = f64::NEG_INFINITY;
    for n in 0..EPS_TRUNC {
        let mut e = DVector::zeros(ps.ambient_dim());
        e[n] = 1.0;
        let dev = (ps.e_hats.column(n) - e).norm();
        worst_dev = worst_dev.max(dev - eps[n]);
    }
    o.check(
        worst_dev <= 0.0,
        format!("||e^_n - e_n|| exceeds eps_n by {worst_dev:e}"),
    );
}

fn pathological_200() -> (mbasis::pathology::PathologicalSystem, Vec<f64>) {
    let spec = permutation_from_f(&linear_f(1024), 1024).unwrap();
    let eps = geometric_eps(EPS_TRUNC, 0.25, 0.5);
    (
        build_pathological_system(&spec, &eps, EPS_TRUNC, tol()).unwrap(),
        eps,
    )
}

fn criterion_2(o: &mut Outcome) {
    let (ps, eps) = pathological_200();
    o.check(check_eps_schedule(&eps).is_ok(), "eps schedule rejected");
    let total: f64 = eps.iter().map(|e| e * e).sum();
    o.check(total <= 0.125, format!("sum eps^2 = {total}"));
    let t = operator_t(&ps.e_hats).unwrap();
    let (norm_t, _) = sigma(&t.t);
    let (norm_inv, _) = sigma(&t.t.clone().try_inverse().unwrap());
    o.check(norm_t <= 2.0 + 1e-9, format!("||T|| = {norm_t}"));
    o.check(norm_inv <= 2.0 + 1e-9, format!("||T^-1|| = {norm_inv}"));
    o.check(
        (norm_t - t.norm_t).abs() <= 1e-9 && (norm_inv - t.norm_t_inv).abs() <= 1e-9,
        "reported norms disagree with the SVD of T",
    );
    o.note(format!("||T|| = {norm_t:.4}, ||T^-1|| = {norm_inv:.4}"));
}

fn criterion_3(o: &mut Outcome) {
    let (ps, eps) = pathological_200();
    let t = operator_t(&ps.e_hats).unwrap();
    let zs = orthonormalize(&ps.e_hats);
    let table = t_asymptotics_check(&t.t, &zs, &eps).unwrap();
    o.check(table.rows.len() == EPS_TRUNC, "decay table length");
    // bound recomputed here: min_k sum_{i<=k} |<e_i, z>| + (sum_{i>k} eps_i^2)^{1/2}
    for (n, row) in table.rows.iter().enumerate() {
        let z = zs.column(n);
        let mut best = f64::INFINITY;
        for k in 0..=EPS_TRUNC {
            let head: f64 = (0..k).map(|i| z[i].abs()).sum();
            let tail: f64 = eps[k..].iter().map(|e| e * e).sum::<f64>().sqrt();
            best = best.min(head + tail);
        }
        let measured = (&t.t * z - z).norm();
        if measured > 2.0 * best {
            o.check(false, format!("n = {}: {measured:e} > 2 * {best:e}", n + 1));
            break;
        }
        o.check(
            (measured - row.measured).abs() <= 1e-12,
            format!("n = {}: measured mismatch", n + 1),
        );
    }
    o.check(
        table.smoothed_non_increasing(),
        "smoothed decay increases somewhere",
    );
    let last_smooth = *table.smoothed.last().unwrap();
    o.check(
        table.last() < 0.05,
        format!("last value {} >= 0.05", table.last()),
    );
    o.note(format!(
        "last {:.2e}, last smoothed {:.2e}",
        table.last(),
        last_smooth
    ));
}

fn criterion_4(o: &mut Outcome) {
    const TOP: usize = 100_000;
    let cs = [1usize, 2, 4];
    let len = 4 * TOP;
    let spec = permutation_from_f(&linear_f(len), len).unwrap();

    let mut seen = HashSet::new();
    for n in 1..=TOP {
        if let PiValue::Known(v) = spec.pi(n) {
            if !seen.insert(v) {
                o.check(false, format!("pi repeats {v} at n = {n}"));
                break;
            }
        }
    }
    // |Omega(m)| and the Phi count, recounted from pi and Phi
    let mut omega_bad = None;
    let mut count_bad = None;
    let mut phi_hits = vec![0usize; len + 2];
    for p in &spec.big_phi {
        if let PiValue::Known(v) = *p {
            if v <= len {
                phi_hits[v] += 1;
            }
        }
    }
    let mut inv = vec![0usize; len + 1];
    for n in 1..=len {
        if let PiValue::Known(v) = spec.pi(n) {
            if v <= len {
                inv[v] = n;
            }
        }
    }
    let (mut omega, mut count) = (0usize, 0usize);
    for m in 1..=len {
        // Omega(m) = {pi(n) : n <= m, pi(n) <= m}
        if inv[m] != 0 && inv[m] <= m {
            omega += 1;
        }
        if let PiValue::Known(v) = spec.pi(m) {
            if v < m {
                omega += 1;
            }
        }
        count += phi_hits[m];
        if omega != spec.omega(m) || omega > 2 * spec.phi(m) {
            omega_bad.get_or_insert(m);
        }
        if m < len {
            let (a, b) = (spec.phi(m), spec.phi(m + 1));
            if count + 1 != b || !(count + 1 == a || count == a) {
                count_bad.get_or_insert(m);
            }
        }
    }
    o.check(
        omega_bad.is_none(),
        format!("|Omega(m)| <= 2 phi(m) fails at {omega_bad:?}"),
    );
    o.check(
        count_bad.is_none(),
        format!("Phi count identity fails at {count_bad:?}"),
    );

    let grid = log_grid(1000, TOP, 10);
    let stats = omega_stats(&spec, &cs, &grid).unwrap();
    o.check(
        stats.ratios_decreasing(),
        "|Omega(cn)|/f(n) not decreasing on the grid",
    );
    o.note(format!(
        "{} grid points, |Omega(4e5)| = {}, phi(4e5) = {}",
        grid.len(),
        spec.omega(len),
        spec.phi(len)
    ));
}

/// Every rough system extracted along the squeeze at truncation n, restricted past n0.
fn extracted_rough_systems(n: usize) -> Vec<RoughSystem> {
    let f: Vec<f64> = (1..=n).map(|k| 4.0 * ((1 + k) as f64).ln()).collect();
    let spec = permutation_from_f(&f, n).unwrap();
    let eps = geometric_eps(n, 0.25, 0.5);
    let ps = build_pathological_system(&spec, &eps, n, tol()).unwrap();
    let z = orthonormalize(&ps.e_hats);
    let zsys = BiorthSystem::from_matrices(z.clone(), z.clone(), tol()).unwrap();
    let t = operator_t(&ps.e_hats).unwrap();
    let decay = t_asymptotics_check(&t.t, &z, &eps).unwrap();
    let n0 = decay.last_at_least(0.25);
    let rep = unb_experiment(&linear_lambdas(n), 1.0, &[n], 0, &tol()).unwrap();
    rep.runs[0]
        .rows
        .iter()
        .map(|r| {
            extract_rough_system(&zsys, &ps, &t.t, &spec, r.m, r.q, 0.25, 2.0)
                .unwrap()
                .tail(n0)
        })
        .collect()
}

fn criterion_5(o: &mut Outcome) {
    for k in 1..=3usize {
        let c = rough_capacity(k, 0.25, 2.0).unwrap();
        let want = 9f64.powi(k as i32);
        o.check(c.delta == 0.25, format!("k = {k}: delta {}", c.delta));
        o.check(c.p_max == want, format!("k = {k}: p_max {} != {want}", c.p_max));
        o.check(
            (c.c1 - 1.0 / 9f64.ln()).abs() <= 1e-12,
            format!("k = {k}: c1 {}", c.c1),
        );
        let rs = random_rough_packing(k, 0.25, 2.0, 10_000, 1000 + k as u64).unwrap();
        o.check(rs.is_certified(), format!("k = {k}: packing not certified"));
        o.check(
            rs.len() as f64 <= want,
            format!("k = {k}: packing of {} > {want}", rs.len()),
        );
        let sep = rs.min_separation();
        o.check(sep >= 0.25 - 1e-9, format!("k = {k}: separation {sep}"));
        o.note(format!("k={k}: {} packed", rs.len()));
    }
    let mut certified = 0;
    for rs in extracted_rough_systems(64) {
        if rs.is_certified() {
            certified += 1;
            let cap = rough_capacity(rs.dim(), 0.25, 2.0).unwrap();
            o.check(rs.len() as f64 <= cap.p_max, "extracted system exceeds capacity");
            o.check(
                rs.min_separation() >= 0.25 - 1e-9,
                "extracted system under-separated",
            );
        }
    }
    o.check(certified > 0, "no extracted system certified");
    o.note(format!("{certified} extracted systems certified"));
}

fn criterion_6(o: &mut Outcome) {
    let t = tol();
    let sys = BiorthSystem::near_canonical(128, 0.3, 0.5, 5, t).unwrap();
    let ri = build_representing_indices(&sys, 8).unwrap();
    let rounds = available_rounds(&ri.r);
    let trace = strong_partition(&ri, rounds).unwrap().padded_to(128).unwrap();
    let z = construct_flattened(&sys, &trace.partition, 5).unwrap();
    let rep = verify_flattened(&z, &sys, &trace.partition).unwrap();
    o.check(
        rep.pass,
        format!("verify_flattened failed: worst gap {:e}", rep.worst_gap()),
    );
    let class = classify_perturbation(&z, &sys, t.span_tol).unwrap();
    o.check(class.is_block(), format!("classified as {}", class.name()));

    let eps = trace.partition.epsilons().to_vec();
    let mut worst_last: f64 = 0.0;
    for s in 0..20u64 {
        let x = TruncatedVector::random_unit(128, 77, s);
        let d = strongness_diagnostic(&x, &z, &sys, &trace, &eps, &[32, 64, 128]).unwrap();
        o.check(
            d.residuals_non_increasing,
            format!("sample {s}: residuals increase"),
        );
        worst_last = worst_last.max(d.residuals[2].1);
    }
    o.check(
        worst_last <= 10.0 * t.net_resolution,
        format!("residual at N = 128 is {worst_last:e}"),
    );
    o.note(format!(
        "{rounds} rounds, r = {:?}, worst residual {worst_last:.1e}",
        ri.r
    ));
}

fn criterion_7(o: &mut Outcome) {
    let t = tol();
    let sys = BiorthSystem::near_canonical(20, 0.3, 0.5, 11, t).unwrap();
    let ri = build_representing_indices(&sys, 8).unwrap();
    let mut worst: f64 = 0.0;
    for s in 0..20u64 {
        let x = TruncatedVector::random_unit(20, 3, s);
        let xv = x.coords();
        // head from the functionals, window fit by normal equations
        let coeffs = sys.f_matrix().transpose() * xv;
        for m in 1..ri.depth() {
            let (rm, rn) = (ri.r_of(m).unwrap(), ri.r_of(m + 1).unwrap());
            let head = sys.x_matrix().columns(0, rm) * coeffs.rows(0, rm);
            let resid = xv - head;
            let w = sys.x_matrix().columns(rm, rn - rm).into_owned();
            let a = (w.transpose() * &w)
                .cholesky()
                .unwrap()
                .solve(&(w.transpose() * &resid));
            let oracle = (&resid - &w * a).norm();
            let rec = reconstruct(&x, &sys, &ri, m).unwrap();
            worst = worst.max((rec.error - oracle).abs());
        }
    }
    o.check(worst <= 1e-10, format!("reconstruct vs oracle {worst:e}"));

    let c = norming_constant_exact(&sys).unwrap() / 2.0;
    let ni = build_norming_indices(&sys, 4, c).unwrap();
    let mut checked = 0;
    for m in 1..=ni.depth() {
        let p = ni.p_of(m).unwrap();
        let Some(res) = [0.01, 0.02, 0.05, 0.1, 0.2]
            .into_iter()
            .find(|&r| sphere_net_size(p, r, DEFAULT_NET_CAP / 10).is_some())
        else {
            continue;
        };
        let nc = check_property_p_on_net(&sys, &ni, m, res).unwrap();
        o.check(
            nc.worst >= c,
            format!("step {m}: net minimum {} < c = {c}", nc.worst),
        );
        checked += 1;
    }
    o.check(
        checked >= 2,
        format!("only {checked} steps small enough for a net"),
    );
    o.note(format!(
        "oracle gap {worst:.1e}, property (P) on {checked} nets, c = {c:.3}"
    ));
}

fn criterion_8(o: &mut Outcome) {
    let x = BiorthSystem::canonical(2, tol()).unwrap();
    let p = BlockPartition::new(vec![vec![1, 2]], vec![1], vec![0.1]).unwrap();
    let duals = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 1.0, 0.1]);
    let z = construct_flattened_with_duals(&x, &p, &duals).unwrap();
    let d1 = (z.x(0) - DVector::from_vec(vec![1.0, -10.0])).norm();
    let d2 = (z.x(1) - DVector::from_vec(vec![0.0, 10.0])).norm();
    o.check(d1 <= 1e-12 && d2 <= 1e-12, format!("z differs by {d1:e}, {d2:e}"));
    o.check(
        verify_flattened(&z, &x, &p).unwrap().pass,
        "not a flattened perturbation",
    );
    o.check(biorthogonality_defect(&z) <= 1e-12, "not biorthogonal");
    let b = boundedness_constant(&z);
    let u = uniform_minimality_constant(&z).unwrap();
    o.check((b - 10.0499).abs() < 5e-5, format!("boundedness {b}"));
    o.check((u - 0.0995).abs() < 5e-5, format!("uniform minimality {u}"));
    o.note(format!("boundedness {b:.4}, uniform minimality {u:.4}"));
}

fn criterion_9(o: &mut Outcome) {
    let sizes = [64usize, 128, 256];
    let rep = unb_experiment(&linear_lambdas(256), 1.0, &sizes, 7, &tol()).unwrap();
    for run in &rep.runs {
        let n = run.truncation;
        let q: Vec<usize> = run.rows.iter().map(|r| r.q).collect();
        o.check(
            run.ratios_non_decreasing,
            format!("N = {n}: q/lambda decreases ({q:?})"),
        );
        let f: Vec<f64> = (1..=n).map(|k| 4.0 * ((1 + k) as f64).ln()).collect();
        let spec = permutation_from_f(&f, n).unwrap();
        let p_max = |k: usize| 9f64.powi(k as i32);
        for r in &run.rows {
            let omega = (1..=r.q)
                .filter(|&k| spec.pi(k).known().is_some_and(|v| v <= r.q))
                .count();
            o.check(omega == r.omega, format!("N = {n}, m = {}: |Omega| recount", r.m));
            o.check(
                omega <= 2 * spec.phi(r.q),
                format!("N = {n}, m = {}: |Omega| > 2 phi", r.m),
            );
            let size = r.m.saturating_sub(run.n0);
            o.check(
                size as f64 <= p_max(omega),
                format!("N = {n}, m = {}: size over capacity", r.m),
            );
        }
        o.check(run.omega_bracket_holds, format!("N = {n}: bracket fails"));
        o.check(run.capacity_holds, format!("N = {n}: capacity fails"));
        o.check(
            run.control_is_identity(),
            format!("N = {n}: identity control gives {:?}", run.control_q),
        );
        o.note(format!("N={n}: q = {q:?}"));
    }
}

type Criterion = fn(&mut Outcome);

fn main() {
    let criteria: [(usize, &str, Criterion, Duration); 9] = [
        (
            1,
            "pathological system biorthogonal with prefix spans",
            criterion_1,
            Duration::from_secs(30),
        ),
        (
            2,
            "||T||, ||T^-1|| <= 2 under the eps budget",
            criterion_2,
            Duration::MAX,
        ),
        (
            3,
            "decay of ||T z_n - z_n|| against its bound",
            criterion_3,
            Duration::MAX,
        ),
        (
            4,
            "permutation: injective, |Omega| <= 2 phi, Phi count, ratios",
            criterion_4,
            Duration::from_secs(10),
        ),
        (
            5,
            "rough capacity, packing and separation",
            criterion_5,
            Duration::MAX,
        ),
        (
            6,
            "strong flattened perturbation and strongness residuals",
            criterion_6,
            Duration::MAX,
        ),
        (
            7,
            "reconstruction oracle and property (P) on nets",
            criterion_7,
            Duration::MAX,
        ),
        (
            8,
            "two-dimensional flattening example",
            criterion_8,
            Duration::MAX,
        ),
        (
            9,
            "spanning-index growth and the Omega squeeze",
            criterion_9,
            Duration::from_secs(120),
        ),
    ];
    let mut failed = 0;
    for (id, name, run, limit) in criteria {
        let start = Instant::now();
        let mut o = Outcome::default();
        let res = catch_unwind(AssertUnwindSafe(|| run(&mut o)));
        let took = start.elapsed();
        if let Err(e) = res {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            o.failures.push(format!("panicked: {msg}"));
        }
        if took > limit {
            o.failures.push(format!("took {took:.1?}, limit {limit:.0?}"));
        }
        let ok = o.failures.is_empty();
        failed += usize::from(!ok);
        let detail = if ok {
            o.notes.join("; ")
        } else {
            o.failures.join("; ")
        };
        println!(
            "[{}] {id} {name} ({:.2}s): {detail}",
            if ok { "PASS" } else { "FAIL" },
            took.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all 9 criteria passed");
}
