//! Representing indices r(1) < r(2) < ... : along them every x is its partial
//! biorthogonal expansion up to r(m) plus a corrector from the window
//! (r(m), r(m+1)]. The norming variant adds property (P) so that subseries of
//! the expansion still converge to x.
//!
//! Tail spans [x_n]_{n > r(m)} are replaced by spans up to the truncation end N.

mod strong;

pub use strong::{
    available_rounds, coefficient_masses, strong_partition, strong_partition_from_sequence,
    strongness_diagnostic, BoundVerdict, CaseVerdict, Round, StrongPartitionTrace, StrongnessReport,
};

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::biorth::{norming_constant_exact, BiorthSystem};
use crate::error::{Error, Result};
use crate::subspace::{
    distance_to_span, smallest_singular_value, spectral_norm, unit_net_capped, PrefixBasis, SubspaceBasis,
    TruncatedVector, DEFAULT_NET_CAP,
};

/// r(m), the interim p(m) and the tolerance that certified p(m), for m = 1..depth.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepresentingIndices {
    /// `r[m-1]` = r(m). r(0) = 0 by convention.
    pub r: Vec<usize>,
    /// `interim_p[m-1]` = p(m); equal to r(m) in the plain construction.
    pub interim_p: Vec<usize>,
    /// `deltas[m-1]` = the delta against which p(m) was certified
    /// (infinite when the head span is empty).
    pub deltas: Vec<f64>,
    pub norming_c: Option<f64>,
    /// Truncation end N standing in for the infinite tail.
    pub truncation: usize,
}

impl RepresentingIndices {
    pub fn depth(&self) -> usize {
        self.r.len()
    }

    /// r(m) with r(0) = 0.
    pub fn r_of(&self, m: usize) -> Option<usize> {
        if m == 0 {
            Some(0)
        } else {
            self.r.get(m - 1).copied()
        }
    }

    pub fn p_of(&self, m: usize) -> Option<usize> {
        if m == 0 {
            Some(0)
        } else {
            self.interim_p.get(m - 1).copied()
        }
    }

    /// Lines `m r(m) p(m) delta(m)`.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# m r(m) p(m) delta(m)\n");
        for m in 0..self.r.len() {
            writeln!(
                s,
                "{} {} {} {:e}",
                m + 1,
                self.r[m],
                self.interim_p[m],
                self.deltas[m]
            )
            .unwrap();
        }
        s
    }
}

/// delta_m = ( m * sum_{n <= r(m)} ||f_n|| ||x_n|| )^{-1}; infinite for m = 0.
pub fn step_delta(sys: &BiorthSystem, m: usize, r_m: usize) -> f64 {
    if m == 0 || r_m == 0 {
        return f64::INFINITY;
    }
    let s: f64 = (0..r_m).map(|n| sys.x(n).norm() * sys.f(n).norm()).sum();
    1.0 / (m as f64 * s)
}

/// Least p in (r, N] such that every unit z of span{x_1..x_r} satisfies
/// dist(z, W_p) <= dist(z, W_N) + delta, with W_p = span{x_{r+1}..x_p}.
///
/// Certified spectrally: dist(z,W_p)^2 = dist(z,W_N)^2 + ||P_{W_N - W_p} z||^2,
/// so it suffices that the component of the head span orthogonal to W_p
/// inside W_N has operator norm at most delta.
fn least_window_end(sys: &BiorthSystem, r: usize, delta: f64) -> Result<Option<usize>> {
    let n = sys.len();
    if r >= n {
        return Ok(None);
    }
    if r == 0 || delta.is_infinite() {
        return Ok(Some(r + 1));
    }
    let head: Vec<usize> = (0..r).collect();
    let qh = sys.vector_span(&head)?.onb().clone();
    let tail = sys.x_matrix().columns(r, n - r).into_owned();
    let qt = PrefixBasis::new(&tail, sys.tol().rank_tol)?;
    let c = qt.q().transpose() * &qh;
    let t = c.nrows();
    for j in 1..=t {
        let rest = c.rows(j, t - j).into_owned();
        if spectral_norm(&rest) <= delta {
            return Ok(Some(r + j));
        }
    }
    Ok(Some(n))
}

/// The excess sup_z ||P_{W_N - W_p} z|| over unit z in the head span.
pub fn window_excess(sys: &BiorthSystem, r: usize, p: usize) -> Result<f64> {
    let n = sys.len();
    if r == 0 {
        return Ok(0.0);
    }
    if !(r < p && p <= n) {
        return Err(Error::invalid(format!("window ({r}, {p}] outside 1..{n}")));
    }
    let head: Vec<usize> = (0..r).collect();
    let qh = sys.vector_span(&head)?.onb().clone();
    let tail = sys.x_matrix().columns(r, n - r).into_owned();
    let qt = PrefixBasis::new(&tail, sys.tol().rank_tol)?;
    let c = qt.q().transpose() * &qh;
    let j = p - r;
    Ok(spectral_norm(&c.rows(j, c.nrows() - j).into_owned()))
}

/// Plain representing indices: r(1) = 1 and r(m+1) = p(m+1).
pub fn build_representing_indices(sys: &BiorthSystem, depth: usize) -> Result<RepresentingIndices> {
    if depth == 0 {
        return Err(Error::invalid("depth must be at least 1"));
    }
    let n = sys.len();
    let mut out = RepresentingIndices {
        r: vec![1],
        interim_p: vec![1],
        deltas: vec![f64::INFINITY],
        norming_c: None,
        truncation: n,
    };
    for m in 1..depth {
        let r_m = out.r[m - 1];
        let delta = step_delta(sys, m, r_m);
        let p = least_window_end(sys, r_m, delta)?.ok_or_else(|| Error::TruncationExhausted {
            reached: m,
            detail: format!("r({m}) = {r_m} is already the truncation end {n}"),
        })?;
        out.r.push(p);
        out.interim_p.push(p);
        out.deltas.push(delta);
    }
    Ok(out)
}

/// sigma_min(Q_{F_r}^T Q_{X_p}): the least value over unit v in span{x_1..x_p}
/// of sup over unit f in span{f_1..f_r} of <f, v>.
fn property_p_constant(fq: &DMatrix<f64>, xq: &DMatrix<f64>, r: usize) -> f64 {
    let c = fq.columns(0, r).transpose() * xq;
    smallest_singular_value(&c)
}

/// Norming representing indices: starting from r(0) = 0, p(m+1) > r(m) is the
/// least window end meeting the distance criterion and r(m+1) > p(m+1) is the
/// least index with property (P) at constant `c`.
pub fn build_norming_indices(sys: &BiorthSystem, depth: usize, c: f64) -> Result<RepresentingIndices> {
    if depth == 0 {
        return Err(Error::invalid("depth must be at least 1"));
    }
    let norming = norming_constant_exact(sys)?;
    if !(c > 0.0 && c <= norming / 2.0 + 1e-12) {
        return Err(Error::Precondition {
            invariant: "c_at_most_half_norming_constant",
            detail: format!("c = {c} but the system is only {norming}-norming"),
        });
    }
    let n = sys.len();
    let fq = PrefixBasis::new(sys.f_matrix(), sys.tol().rank_tol)?.q().clone();
    let mut out = RepresentingIndices {
        r: Vec::new(),
        interim_p: Vec::new(),
        deltas: Vec::new(),
        norming_c: Some(c),
        truncation: n,
    };
    let mut r_m = 0;
    for m in 0..depth {
        let delta = step_delta(sys, m, r_m);
        let p = least_window_end(sys, r_m, delta)?.ok_or_else(|| Error::TruncationExhausted {
            reached: m,
            detail: format!("r({m}) = {r_m} is the truncation end {n}"),
        })?;
        let xq = sys.vector_span(&(0..p).collect::<Vec<_>>())?.onb().clone();
        let r_next = (p + 1..=n)
            .find(|&r| property_p_constant(&fq, &xq, r) >= c)
            .ok_or_else(|| Error::TruncationExhausted {
                reached: m,
                detail: format!(
                    "property (P) with c = {c} fails for every r in ({p}, {n}] at step {}",
                    m + 1
                ),
            })?;
        out.interim_p.push(p);
        out.r.push(r_next);
        out.deltas.push(delta);
        r_m = r_next;
    }
    Ok(out)
}

/// Worst value found on a finite net, with the net size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NetCheck {
    pub points: usize,
    pub worst: f64,
}

/// Samples the distance criterion for step m -> m+1 on a unit net of the head
/// span: worst value of dist(z, W_{p(m+1)}) - dist(z, W_N).
pub fn check_distance_on_net(
    sys: &BiorthSystem,
    ri: &RepresentingIndices,
    m: usize,
    resolution: f64,
) -> Result<NetCheck> {
    let (r_m, p) = match (ri.r_of(m), ri.p_of(m + 1)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::invalid(format!("step {m} is beyond depth {}", ri.depth()))),
    };
    if r_m == 0 {
        return Ok(NetCheck {
            points: 0,
            worst: 0.0,
        });
    }
    let n = sys.len();
    let head = sys.vector_span(&(0..r_m).collect::<Vec<_>>())?;
    let wp = sys.vector_span(&(r_m..p).collect::<Vec<_>>())?;
    let wn = sys.vector_span(&(r_m..n).collect::<Vec<_>>())?;
    let net = unit_net_capped(&head, resolution, DEFAULT_NET_CAP)?;
    let mut worst: f64 = f64::NEG_INFINITY;
    for z in &net {
        worst = worst.max(distance_to_span(z, &wp)? - distance_to_span(z, &wn)?);
    }
    Ok(NetCheck {
        points: net.len(),
        worst,
    })
}

/// Samples property (P) for step m: least ||P_{F_{r(m)}} v|| over a unit net
/// of span{x_1..x_{p(m)}}.
pub fn check_property_p_on_net(
    sys: &BiorthSystem,
    ri: &RepresentingIndices,
    m: usize,
    resolution: f64,
) -> Result<NetCheck> {
    let (p, r) = match (ri.p_of(m), ri.r_of(m)) {
        (Some(p), Some(r)) if m >= 1 => (p, r),
        _ => return Err(Error::invalid(format!("step {m} is outside 1..={}", ri.depth()))),
    };
    let xs = sys.vector_span(&(0..p).collect::<Vec<_>>())?;
    let fs = sys.functional_span(&(0..r).collect::<Vec<_>>())?;
    let net = unit_net_capped(&xs, resolution, DEFAULT_NET_CAP)?;
    let mut worst = f64::INFINITY;
    for v in &net {
        worst = worst.min(fs.project_coords(v.coords()).norm());
    }
    Ok(NetCheck {
        points: net.len(),
        worst,
    })
}

/// Result of [`reconstruct`].
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub approx: TruncatedVector,
    pub v: TruncatedVector,
    pub error: f64,
    /// dist(x, span{x_1..x_{r(m+1)}}), the unconstrained least-squares distance.
    pub ls_distance: f64,
    /// 2 * ls_distance + delta * ||h* - h||, where h is the partial expansion
    /// and h* the head part of the least-squares fit. Valid for x in the span
    /// of the whole truncated system.
    pub bound: f64,
}

/// Least-squares coefficients of `x` on the columns of `a` (minimal norm).
fn lstsq(a: &DMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    svd.solve(x, 1e-13 * smax).expect("u and v_t computed")
}

/// x ~ sum_{n <= r(m)} f_n(x) x_n + v with v the best corrector from
/// span{x_{r(m)+1}..x_{r(m+1)}}.
pub fn reconstruct(
    x: &TruncatedVector,
    sys: &BiorthSystem,
    ri: &RepresentingIndices,
    m: usize,
) -> Result<Reconstruction> {
    if x.ambient_dim() != sys.ambient_dim() {
        return Err(Error::DimensionMismatch {
            expected: sys.ambient_dim(),
            found: x.ambient_dim(),
        });
    }
    let (r_m, r_next) = match (ri.r_of(m), ri.r_of(m + 1)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::invalid(format!(
                "m + 1 = {} exceeds depth {}",
                m + 1,
                ri.depth()
            )))
        }
    };
    let xv = x.coords();
    let xm = sys.x_matrix();
    let coeffs = sys.coefficients(xv);
    let mut h = DVector::zeros(xv.len());
    for n in 0..r_m {
        h += xm.column(n) * coeffs[n];
    }
    let residual = xv - &h;
    let window = xm.columns(r_m, r_next - r_m).into_owned();
    let wq = SubspaceBasis::from_columns(&window, sys.tol().rank_tol)?;
    let v = wq.project_coords(&residual);
    let approx = &h + &v;
    let error = (xv - &approx).norm();

    let both = xm.columns(0, r_next).into_owned();
    let c = lstsq(&both, xv);
    let fit = &both * &c;
    let ls_distance = (xv - &fit).norm();
    let h_star = xm.columns(0, r_m) * c.rows(0, r_m);
    let delta = ri.deltas.get(m).copied().filter(|d| d.is_finite()).unwrap_or(0.0);
    let bound = 2.0 * ls_distance + delta * (h_star - &h).norm();
    Ok(Reconstruction {
        approx: TruncatedVector::from_dvector(approx)?,
        v: TruncatedVector::from_dvector(v)?,
        error,
        ls_distance,
        bound,
    })
}

/// One partial sum along the subsequence m_1 < m_2 < ...
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubseriesStep {
    pub k: usize,
    pub m_k: usize,
    pub r_mk: usize,
    /// ||x - sum_{n <= r(m_k)} f_n(x) x_n||.
    pub residual: f64,
    /// ||w_k||, the skipped window sum over (r(m_k), r(m_k + 1)].
    pub window_mass: f64,
    /// ||sum_{k' >= k} w_{k'}||.
    pub tail_mass: f64,
    /// Corrector distance for x with every window sum removed.
    pub e_tilde: f64,
    /// e_tilde (1 + 1/c) + tail_mass.
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubseriesTrace {
    pub c: f64,
    pub steps: Vec<SubseriesStep>,
}

impl SubseriesTrace {
    pub fn bound_holds(&self, slack: f64) -> bool {
        self.steps.iter().all(|s| s.residual <= s.bound + slack)
    }
}

/// Partial sums of the expansion of `x` along the block ends r(m_k), with the
/// bound that property (P) gives in terms of the window sums w_k.
pub fn subseries_reconstruct(
    x: &TruncatedVector,
    sys: &BiorthSystem,
    ri: &RepresentingIndices,
    mks: &[usize],
) -> Result<SubseriesTrace> {
    let c = ri
        .norming_c
        .ok_or_else(|| Error::invalid("subseries bounds need norming indices"))?;
    if mks.is_empty() || mks[0] == 0 || mks.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("m_k must be positive and strictly increasing"));
    }
    let last = *mks.last().unwrap();
    if last + 1 > ri.depth() {
        return Err(Error::invalid(format!(
            "m_k + 1 = {} exceeds depth {}",
            last + 1,
            ri.depth()
        )));
    }
    if x.ambient_dim() != sys.ambient_dim() {
        return Err(Error::DimensionMismatch {
            expected: sys.ambient_dim(),
            found: x.ambient_dim(),
        });
    }
    let xv = x.coords();
    let xm = sys.x_matrix();
    let coeffs = sys.coefficients(xv);
    let span_sum = |lo: usize, hi: usize, cf: &DVector<f64>| -> DVector<f64> {
        let mut s = DVector::zeros(xv.len());
        for n in lo..hi {
            s += xm.column(n) * cf[n];
        }
        s
    };
    let windows: Vec<DVector<f64>> = mks
        .iter()
        .map(|&m| span_sum(ri.r_of(m).unwrap(), ri.r_of(m + 1).unwrap(), &coeffs))
        .collect();
    let mut x_tilde = xv.clone();
    for w in &windows {
        x_tilde -= w;
    }
    let coeffs_tilde = sys.coefficients(&x_tilde);
    let mut steps = Vec::with_capacity(mks.len());
    for (k, &m) in mks.iter().enumerate() {
        let r_mk = ri.r_of(m).unwrap();
        let p_next = ri.p_of(m + 1).unwrap();
        let residual = (xv - span_sum(0, r_mk, &coeffs)).norm();
        let mut tail = DVector::zeros(xv.len());
        for w in &windows[k..] {
            tail += w;
        }
        let u = &x_tilde - span_sum(0, r_mk, &coeffs_tilde);
        let corr =
            SubspaceBasis::from_columns(&xm.columns(r_mk, p_next - r_mk).into_owned(), sys.tol().rank_tol)?;
        let e_tilde = (&u - corr.project_coords(&u)).norm();
        let tail_mass = tail.norm();
        steps.push(SubseriesStep {
            k: k + 1,
            m_k: m,
            r_mk,
            residual,
            window_mass: windows[k].norm(),
            tail_mass,
            e_tilde,
            bound: e_tilde * (1.0 + 1.0 / c) + tail_mass,
        });
    }
    Ok(SubseriesTrace { c, steps })
}
