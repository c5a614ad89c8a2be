//! Growth of spanning indices for an orthonormal sequence spanned by the
//! pathological system, next to the two bounds on |Omega| that squeeze it.

use rayon::prelude::*;
use serde::Serialize;

use crate::biorth::{spanning_indices_from_generators, BiorthSystem};
use crate::error::{Error, Result};
use crate::subspace::ToleranceConfig;

use super::permutation::{permutation_from_f, PermutationSpec, PiValue};
use super::rough::{extract_rough_system, rough_capacity, rough_defect};
use super::system::{
    build_pathological_system, build_system_for_pi, geometric_eps, operator_t, orthonormalize,
    t_asymptotics_check, PathologicalSystem,
};

pub const UNB_COLUMNS: [&str; 7] = ["m", "q", "lambda", "ratio", "omega", "two_phi", "c1log"];

/// Rough-system tolerance used by the squeeze.
pub const ROUGH_EPS: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnbRow {
    pub m: usize,
    /// q(m) for the orthonormalized system.
    pub q: usize,
    pub lambda: f64,
    pub ratio: f64,
    /// |Omega(q(m))|.
    pub omega: usize,
    /// 2 phi(q(m)).
    pub two_phi: usize,
    /// c1 ln(m - n0), 0 when m <= n0.
    pub c1log: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnbRun {
    pub truncation: usize,
    pub rows: Vec<UnbRow>,
    /// First m with no spanning index inside the truncation.
    pub first_undefined: Option<usize>,
    /// Last n with ||T z_n - z_n|| >= 1/(4M).
    pub n0: usize,
    /// max over m of the rough defect of the extracted system past n0.
    pub tail_defect: f64,
    pub ratios_non_decreasing: bool,
    /// c1 ln(m - n0) <= |Omega(q(m))| <= 2 phi(q(m)) on every row.
    pub omega_bracket_holds: bool,
    /// m - n0 <= rough_capacity(|Omega(q(m))|).p_max on every row.
    pub capacity_holds: bool,
    /// Spanning indices of the same pipeline with pi = identity.
    pub control_q: Vec<usize>,
}

impl UnbRun {
    pub fn control_is_identity(&self) -> bool {
        self.control_q.len() == self.truncation && self.control_q.iter().enumerate().all(|(i, &q)| q == i + 1)
    }

    pub fn passes(&self) -> bool {
        self.ratios_non_decreasing
            && self.omega_bracket_holds
            && self.capacity_holds
            && self.tail_defect <= ROUGH_EPS
            && self.control_is_identity()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnbReport {
    pub m_bound: f64,
    pub seed: u64,
    pub c1: f64,
    pub runs: Vec<UnbRun>,
}

impl UnbReport {
    pub fn passes(&self) -> bool {
        self.runs.iter().all(UnbRun::passes)
    }
}

/// f(n) = 4 ln(1 + #{m : lambda_m <= n}) for n = 1..=n_max.
pub fn f_from_lambdas(lambdas: &[f64], n_max: usize) -> Result<Vec<f64>> {
    if lambdas.is_empty() || lambdas.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
        return Err(Error::invalid("lambdas must be finite and positive"));
    }
    if lambdas.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("lambdas must be non-decreasing"));
    }
    Ok((1..=n_max)
        .map(|n| {
            let count = lambdas.partition_point(|&l| l <= n as f64);
            4.0 * ((1 + count) as f64).ln()
        })
        .collect())
}

/// lambda_m = m for m = 1..=n.
pub fn linear_lambdas(n: usize) -> Vec<f64> {
    (1..=n).map(|m| m as f64).collect()
}

fn orthonormal_system(ps: &PathologicalSystem, tol: &ToleranceConfig) -> Result<BiorthSystem> {
    let z = orthonormalize(&ps.e_hats);
    BiorthSystem::from_matrices(z.clone(), z, *tol)
}

fn spanned_q(ps: &PathologicalSystem, zsys: &BiorthSystem) -> Result<(Vec<usize>, Option<usize>)> {
    let tol = zsys.tol();
    let s = spanning_indices_from_generators(
        zsys.x_matrix(),
        zsys.f_matrix(),
        &ps.e_hats,
        &ps.permuted,
        tol.span_tol,
        tol.rank_tol,
    )?;
    Ok((s.q, s.first_undefined))
}

fn run_one(lambdas: &[f64], m_bound: f64, n: usize, tol: &ToleranceConfig) -> Result<UnbRun> {
    if lambdas.len() < n {
        return Err(Error::invalid(format!(
            "{} lambdas for truncation {n}",
            lambdas.len()
        )));
    }
    let f = f_from_lambdas(lambdas, n)?;
    let spec: PermutationSpec = permutation_from_f(&f, n)?;
    let eps = geometric_eps(n, 0.25, 0.5);
    let ps = build_pathological_system(&spec, &eps, n, *tol)?;
    let zsys = orthonormal_system(&ps, tol)?;
    let (q, first_undefined) = spanned_q(&ps, &zsys)?;

    let t = operator_t(&ps.e_hats)?;
    let decay = t_asymptotics_check(&t.t, zsys.x_matrix(), &eps)?;
    let n0 = decay.last_at_least(1.0 / (4.0 * m_bound));
    let c1 = rough_capacity(1, ROUGH_EPS, 2.0 * m_bound)?.c1;

    let mut rows = Vec::with_capacity(q.len());
    let mut tail_defect: f64 = 0.0;
    let mut omega_bracket_holds = true;
    let mut capacity_holds = true;
    for (i, &qm) in q.iter().enumerate() {
        let m = i + 1;
        let omega = spec.omega(qm);
        let two_phi = 2 * spec.phi(qm);
        let c1log = if m > n0 { c1 * ((m - n0) as f64).ln() } else { 0.0 };
        let cap = rough_capacity(omega, ROUGH_EPS, 2.0 * m_bound)?;
        let rough = extract_rough_system(&zsys, &ps, &t.t, &spec, m, qm, ROUGH_EPS, 2.0 * m_bound)?;
        let tail = rough.tail(n0);
        tail_defect = tail_defect.max(rough_defect(&tail));
        omega_bracket_holds &= c1log <= omega as f64 && omega <= two_phi;
        capacity_holds &= (tail.len() as f64) <= cap.p_max;
        rows.push(UnbRow {
            m,
            q: qm,
            lambda: lambdas[i],
            ratio: qm as f64 / lambdas[i],
            omega,
            two_phi,
            c1log,
        });
    }
    let ratios_non_decreasing = rows.windows(2).all(|w| w[1].ratio >= w[0].ratio);

    let identity: Vec<PiValue> = (1..=n).map(PiValue::Known).collect();
    let control = build_system_for_pi(&identity, &eps, n, *tol)?;
    let csys = orthonormal_system(&control, tol)?;
    let (control_q, _) = spanned_q(&control, &csys)?;

    log::info!("unb truncation {n}: q = {q:?}, n0 = {n0}, first undefined {first_undefined:?}");
    Ok(UnbRun {
        truncation: n,
        rows,
        first_undefined,
        n0,
        tail_defect,
        ratios_non_decreasing,
        omega_bracket_holds,
        capacity_holds,
        control_q,
    })
}

/// Runs every truncation in `sizes` concurrently; runs come back in the order of `sizes`.
///
/// The pipeline is deterministic, `seed` is only recorded.
pub fn unb_experiment(
    lambdas: &[f64],
    m_bound: f64,
    sizes: &[usize],
    seed: u64,
    tol: &ToleranceConfig,
) -> Result<UnbReport> {
    if !(m_bound >= 1.0) {
        return Err(Error::invalid(format!("M = {m_bound} must be at least 1")));
    }
    if sizes.iter().any(|&n| n < 2) {
        return Err(Error::invalid("truncations must be at least 2"));
    }
    let runs = sizes
        .par_iter()
        .map(|&n| run_one(lambdas, m_bound, n, tol))
        .collect::<Result<Vec<_>>>()?;
    Ok(UnbReport {
        m_bound,
        seed,
        c1: rough_capacity(1, ROUGH_EPS, 2.0 * m_bound)?.c1,
        runs,
    })
}
