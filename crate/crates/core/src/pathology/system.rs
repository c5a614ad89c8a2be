//! The near-canonical biorthogonal system whose functionals run through the
//! permuted coordinates e_{pi(n)}, the isomorphism T with T e^_n = e_n, and the
//! decay of T z - z along an orthonormal sequence.
//!
//! Coordinates are compressed: the first M coordinates are e_1..e_M and each
//! further coordinate stands for one e_{pi(n)} with pi(n) outside 1..M. Every
//! other coordinate of l2 is untouched by the construction.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::biorth::{biorthogonality_defect, BiorthSystem};
use crate::error::{Error, Result};
use crate::subspace::{sorted_svd, PrefixBasis, ToleranceConfig};

use super::permutation::{PermutationSpec, PiValue};

/// Bound on the squared tail sum of the eps schedule that keeps ||T||, ||T^-1|| <= 2.
pub const EPS_TAIL_LIMIT: f64 = 0.125;

/// eps_i = scale * ratio^i for i = 1..=n.
pub fn geometric_eps(n: usize, scale: f64, ratio: f64) -> Vec<f64> {
    (1..=n).map(|i| scale * ratio.powi(i as i32)).collect()
}

/// sum_{i > k} eps_i^2 for k = 0..=len.
pub fn eps_tail_squares(eps: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; eps.len() + 1];
    for k in (0..eps.len()).rev() {
        out[k] = out[k + 1] + eps[k] * eps[k];
    }
    out
}

/// Checks sum_{i >= 1} eps_i^2 <= 1/8 and that each eps_i is finite and >= 0.
pub fn check_eps_schedule(eps: &[f64]) -> Result<()> {
    if let Some(i) = eps.iter().position(|e| !(e.is_finite() && *e >= 0.0)) {
        return Err(Error::invalid(format!(
            "eps_{} must be finite and non-negative",
            i + 1
        )));
    }
    let total = eps_tail_squares(eps)[0];
    if total > EPS_TAIL_LIMIT {
        return Err(Error::Precondition {
            invariant: "eps_tail_sum_squares_le_1_8",
            detail: format!("sum of eps_i^2 is {total} > 1/8"),
        });
    }
    Ok(())
}

/// What a compressed coordinate stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CoordLabel {
    /// The canonical vector e_k.
    Canonical(usize),
    /// e_{Phi(n)} for an n whose Phi lies past the permutation table.
    Beyond(usize),
}

#[derive(Debug, Clone)]
pub struct PathologicalSystem {
    pub sys: BiorthSystem,
    /// Columns e^_1..e^_M.
    pub e_hats: DMatrix<f64>,
    /// Columns e_{pi(1)}..e_{pi(M)} in compressed coordinates.
    pub permuted: DMatrix<f64>,
    /// `pi_coords[n-1]` = coordinate index of e_{pi(n)}.
    pub pi_coords: Vec<usize>,
    pub labels: Vec<CoordLabel>,
    pub eps: Vec<f64>,
}

impl PathologicalSystem {
    pub fn len(&self) -> usize {
        self.sys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sys.is_empty()
    }

    pub fn ambient_dim(&self) -> usize {
        self.sys.ambient_dim()
    }
}

/// Measured postconditions of [`build_pathological_system`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SystemCheck {
    pub defect: f64,
    /// max_n dist(x_n / ||x_n||, span{e^_1..e^_n}).
    pub vectors_in_ehat_span: f64,
    /// max_n ||e^_n - sum_{k <= n} f_k(e^_n) x_k||, relative to the summed terms.
    pub ehat_in_vector_span: f64,
    /// max_n dist(f_n / ||f_n||, span{e_{pi(1)}..e_{pi(n)}}).
    pub functionals_in_permuted_span: f64,
    /// max_n ||e_{pi(n)} - sum_{k <= n} <x_k, e_{pi(n)}> f_k||, relative to the summed terms.
    pub permuted_in_functional_span: f64,
    /// min_n (eps_n - ||e^_n - e_n||).
    pub ehat_slack: f64,
}

/// e^_n - e_n is formed after adding to a unit coordinate, so it carries absolute rounding of a few ulps of 1.
pub const EHAT_ROUNDING: f64 = 8.0 * f64::EPSILON;

impl SystemCheck {
    pub fn passes(&self, tol: &ToleranceConfig) -> bool {
        self.defect <= tol.biorth_tol
            && self.vectors_in_ehat_span <= tol.span_tol
            && self.ehat_in_vector_span <= tol.span_tol
            && self.functionals_in_permuted_span <= tol.span_tol
            && self.permuted_in_functional_span <= tol.span_tol
            && self.ehat_slack >= -EHAT_ROUNDING
    }
}

/// Inductive construction with [x_n]_{n<=m} = [e^_n]_{n<=m},
/// [f_n]_{n<=m} = [e_{pi(n)}]_{n<=m} and ||e^_n - e_n|| <= eps_n.
///
/// Step n: f_n is e_{pi(n)} made biorthogonal to x_1..x_{n-1}; e^_n moves e_n
/// by eps_n along f_n / ||f_n|| (sign chosen so that f_n(e^_n) != 0); x_n is
/// e^_n made biorthogonal to f_1..f_{n-1} and normalized by f_n.
pub fn build_pathological_system(
    spec: &PermutationSpec,
    eps: &[f64],
    m: usize,
    tol: ToleranceConfig,
) -> Result<PathologicalSystem> {
    build_system_for_pi(&spec.pi, eps, m, tol)
}

/// [`build_pathological_system`] for an explicit injective prefix `pi[n-1]` = pi(n).
pub fn build_system_for_pi(
    pi: &[PiValue],
    eps: &[f64],
    m: usize,
    tol: ToleranceConfig,
) -> Result<PathologicalSystem> {
    tol.validate()?;
    if m == 0 || m > pi.len() {
        return Err(Error::invalid(format!(
            "size {m} outside the permutation table 1..={}",
            pi.len()
        )));
    }
    if eps.len() < m {
        return Err(Error::invalid(format!("{} eps values for {m} steps", eps.len())));
    }
    check_eps_schedule(eps)?;

    let mut labels: Vec<CoordLabel> = (1..=m).map(CoordLabel::Canonical).collect();
    let mut pi_coords = Vec::with_capacity(m);
    for n in 1..=m {
        let label = match pi[n - 1] {
            PiValue::Known(k) => CoordLabel::Canonical(k),
            PiValue::Beyond(b) => CoordLabel::Beyond(b),
        };
        let idx = match label {
            CoordLabel::Canonical(k) if k <= m => k - 1,
            _ => match labels.iter().position(|l| *l == label) {
                Some(i) => i,
                None => {
                    labels.push(label);
                    labels.len() - 1
                }
            },
        };
        pi_coords.push(idx);
    }
    let d = labels.len();

    // the scale keeps ||e^_n - e_n|| <= eps_n through rounding
    let shrink = 1.0 - 4.0 * f64::EPSILON;
    let mut x = DMatrix::<f64>::zeros(d, m);
    let mut f = DMatrix::<f64>::zeros(d, m);
    let mut e_hats = DMatrix::<f64>::zeros(d, m);
    for n in 0..m {
        let mut fn_ = DVector::<f64>::zeros(d);
        fn_[pi_coords[n]] = 1.0;
        for k in 0..n {
            let c = x[(pi_coords[n], k)];
            if c != 0.0 {
                fn_ -= f.column(k) * c;
            }
        }
        let fnorm = fn_.norm();
        let u = &fn_ / fnorm;
        let s = if u[n] >= 0.0 { 1.0 } else { -1.0 };
        let mut eh = u * (s * eps[n] * shrink);
        eh[n] += 1.0;
        let pivot = fn_.dot(&eh);
        if pivot == 0.0 || !pivot.is_finite() {
            return Err(Error::InductionStuck {
                step: n + 1,
                detail: format!(
                    "f_{}(e^_{}) = 0: no admissible e^ within eps = {} of e_{}; increase eps",
                    n + 1,
                    n + 1,
                    eps[n],
                    n + 1
                ),
            });
        }
        let mut xn = eh.clone();
        for k in 0..n {
            let c = f.column(k).dot(&eh);
            if c != 0.0 {
                xn -= x.column(k) * c;
            }
        }
        xn /= pivot;
        if xn.iter().any(|v| !v.is_finite()) {
            return Err(Error::InductionStuck {
                step: n + 1,
                detail: "x_n overflowed; the eps schedule decays too fast for double precision".into(),
            });
        }
        x.set_column(n, &xn);
        f.set_column(n, &fn_);
        e_hats.set_column(n, &eh);
    }

    let mut permuted = DMatrix::<f64>::zeros(d, m);
    for (n, &c) in pi_coords.iter().enumerate() {
        permuted[(c, n)] = 1.0;
    }
    let out = PathologicalSystem {
        sys: BiorthSystem::from_matrices(x, f, tol)?,
        e_hats,
        permuted,
        pi_coords,
        labels,
        eps: eps[..m].to_vec(),
    };
    let check = verify_pathological_system(&out)?;
    let t = out.sys.tol();
    if check.defect > t.biorth_tol {
        return Err(Error::Postcondition {
            invariant: "biorthogonality_defect_within_tol",
            detail: format!("defect {:e}", check.defect),
        });
    }
    if check.vectors_in_ehat_span.max(check.ehat_in_vector_span) > t.span_tol {
        return Err(Error::Postcondition {
            invariant: "prefix_vector_spans_equal_ehat_spans",
            detail: format!("{check:?}"),
        });
    }
    if check
        .functionals_in_permuted_span
        .max(check.permuted_in_functional_span)
        > t.span_tol
    {
        return Err(Error::Postcondition {
            invariant: "prefix_functional_spans_equal_permuted_spans",
            detail: format!("{check:?}"),
        });
    }
    if check.ehat_slack < -EHAT_ROUNDING {
        return Err(Error::Postcondition {
            invariant: "ehat_within_eps_of_e",
            detail: format!("slack {:e}", check.ehat_slack),
        });
    }
    Ok(out)
}

/// Evaluates the span and distance postconditions.
///
/// The raw x_n are far too ill-conditioned for a direct subspace gap, so each
/// prefix equality is checked as two containments: every normalized x_n lies
/// in the span of the well-conditioned e^_1..e^_n, and every e^_n is
/// reproduced by its biorthogonal expansion in x_1..x_n (likewise for the
/// functionals against e_{pi(1)}..e_{pi(n)}). Expansion residuals are
/// relative to 1 + sum_k |c_k| ||x_k||, the size of the cancelling terms.
pub fn verify_pathological_system(ps: &PathologicalSystem) -> Result<SystemCheck> {
    let sys = &ps.sys;
    let m = sys.len();
    let rank_tol = sys.tol().rank_tol;
    let xm = sys.x_matrix();
    let fm = sys.f_matrix();
    let pe = PrefixBasis::new(&ps.e_hats, rank_tol)?;
    let pp = PrefixBasis::new(&ps.permuted, rank_tol)?;
    let mut check = SystemCheck {
        defect: biorthogonality_defect(sys),
        vectors_in_ehat_span: 0.0,
        ehat_in_vector_span: 0.0,
        functionals_in_permuted_span: 0.0,
        permuted_in_functional_span: 0.0,
        ehat_slack: f64::INFINITY,
    };
    for n in 0..m {
        let xn = xm.column(n).normalize();
        check.vectors_in_ehat_span = check.vectors_in_ehat_span.max(pe.residuals(&xn)[n + 1]);
        let fnn = fm.column(n).normalize();
        check.functionals_in_permuted_span =
            check.functionals_in_permuted_span.max(pp.residuals(&fnn)[n + 1]);

        let eh = ps.e_hats.column(n);
        let (mut rec, mut scale) = (DVector::zeros(eh.len()), 1.0);
        for k in 0..=n {
            let c = fm.column(k).dot(&eh);
            rec += xm.column(k) * c;
            scale += c.abs() * xm.column(k).norm();
        }
        check.ehat_in_vector_span = check.ehat_in_vector_span.max((rec - eh).norm() / scale);

        let ep = ps.permuted.column(n);
        let (mut rec, mut scale) = (DVector::zeros(ep.len()), 1.0);
        for k in 0..=n {
            let c = xm.column(k).dot(&ep);
            rec += fm.column(k) * c;
            scale += c.abs() * fm.column(k).norm();
        }
        check.permuted_in_functional_span = check.permuted_in_functional_span.max((rec - ep).norm() / scale);

        let mut dev = eh.into_owned();
        dev[n] -= 1.0;
        check.ehat_slack = check.ehat_slack.min(ps.eps[n] - dev.norm());
    }
    Ok(check)
}

/// The operator T with T e^_n = e_n, extended by T e_k = e_k on the remaining
/// compressed coordinates, together with ||T|| and ||T^-1||.
#[derive(Debug, Clone)]
pub struct OperatorT {
    pub t: DMatrix<f64>,
    pub norm_t: f64,
    pub norm_t_inv: f64,
}

impl OperatorT {
    pub fn condition(&self) -> f64 {
        self.norm_t * self.norm_t_inv
    }
}

/// Builds T from e^_1..e^_M given as the first M columns of a d-dimensional space.
pub fn operator_t(e_hats: &DMatrix<f64>) -> Result<OperatorT> {
    let (d, m) = e_hats.shape();
    if m > d || m == 0 {
        return Err(Error::invalid(format!("{m} vectors in dimension {d}")));
    }
    let mut src = DMatrix::<f64>::identity(d, d);
    src.columns_mut(0, m).copy_from(e_hats);
    let (_, s, _) = sorted_svd(&src);
    let smin = *s.last().unwrap();
    if !(smin > 1e-12 * s[0]) {
        return Err(Error::SingularGram {
            min_sv: smin,
            max_sv: s[0],
        });
    }
    let t = src.try_inverse().ok_or(Error::SingularGram {
        min_sv: smin,
        max_sv: s[0],
    })?;
    Ok(OperatorT {
        t,
        norm_t: 1.0 / smin,
        norm_t_inv: s[0],
    })
}

/// Orthonormalization z_1, z_2, ... of e^_1, e^_2, ... (prefix spans kept,
/// signs chosen so that <z_n, e^_n> > 0).
pub fn orthonormalize(e_hats: &DMatrix<f64>) -> DMatrix<f64> {
    let qr = e_hats.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    for n in 0..q.ncols() {
        if r[(n, n)] < 0.0 {
            q.column_mut(n).neg_mut();
        }
    }
    q
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayRow {
    pub n: usize,
    /// ||T z_n - z_n||.
    pub measured: f64,
    /// min_k ( sum_{i <= k} |<e_i, z_n>| + (sum_{i > k} eps_i^2)^{1/2} ).
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayTable {
    pub rows: Vec<DecayRow>,
    /// Rolling median of `measured` over windows of 5.
    pub smoothed: Vec<f64>,
}

impl DecayTable {
    /// measured <= factor * bound on every row.
    pub fn within(&self, factor: f64) -> bool {
        self.rows.iter().all(|r| r.measured <= factor * r.bound)
    }

    pub fn smoothed_non_increasing(&self) -> bool {
        self.smoothed.windows(2).all(|w| w[1] <= w[0])
    }

    pub fn last(&self) -> f64 {
        self.rows.last().map(|r| r.measured).unwrap_or(0.0)
    }

    /// Last n with ||T z_n - z_n|| >= threshold (0 when there is none).
    pub fn last_at_least(&self, threshold: f64) -> usize {
        self.rows
            .iter()
            .rev()
            .find(|r| r.measured >= threshold)
            .map(|r| r.n)
            .unwrap_or(0)
    }
}

/// Median over each window of `width` consecutive values.
pub fn rolling_median(v: &[f64], width: usize) -> Vec<f64> {
    if width == 0 || v.len() < width {
        return Vec::new();
    }
    v.windows(width)
        .map(|w| {
            let mut s = w.to_vec();
            s.sort_by(f64::total_cmp);
            s[width / 2]
        })
        .collect()
}

/// ||T z_n - z_n|| for each column z_n of `zs`, against the bound built from
/// the coefficients <e_i, z_n> over the first eps.len() coordinates.
pub fn t_asymptotics_check(t: &DMatrix<f64>, zs: &DMatrix<f64>, eps: &[f64]) -> Result<DecayTable> {
    if t.nrows() != zs.nrows() || eps.len() > zs.nrows() {
        return Err(Error::DimensionMismatch {
            expected: t.nrows(),
            found: zs.nrows(),
        });
    }
    let tails: Vec<f64> = eps_tail_squares(eps).into_iter().map(f64::sqrt).collect();
    let diff = t * zs - zs;
    let mut rows = Vec::with_capacity(zs.ncols());
    for n in 0..zs.ncols() {
        let z = zs.column(n);
        let mut head = 0.0;
        let mut bound = tails[0];
        for k in 1..=eps.len() {
            head += z[k - 1].abs();
            bound = bound.min(head + tails[k]);
        }
        rows.push(DecayRow {
            n: n + 1,
            measured: diff.column(n).norm(),
            bound,
        });
    }
    let measured: Vec<f64> = rows.iter().map(|r| r.measured).collect();
    Ok(DecayTable {
        smoothed: rolling_median(&measured, 5),
        rows,
    })
}
