//! Roughly biorthogonal systems: pairs (y_n, y_n^*) with |y_k^*(y_n) - delta_{k,n}| <= eps.
//! An M-bounded one in dimension k has at most (1 + 2/delta)^k members,
//! delta = (1 - 2 eps)/M, because the y_n are delta-separated.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::biorth::BiorthSystem;
use crate::error::{Error, Result};
use crate::subspace::PrefixBasis;

use super::permutation::PermutationSpec;
use super::system::PathologicalSystem;

#[derive(Debug, Clone, PartialEq)]
pub struct RoughSystem {
    /// Columns y_n.
    pub ys: DMatrix<f64>,
    /// Columns y_n^*.
    pub gs: DMatrix<f64>,
    pub eps: f64,
    /// Claimed bound on ||y_n|| ||y_n^*||.
    pub bound_m: f64,
}

impl RoughSystem {
    pub fn new(ys: DMatrix<f64>, gs: DMatrix<f64>, eps: f64, bound_m: f64) -> Result<Self> {
        if ys.shape() != gs.shape() {
            return Err(Error::DimensionMismatch {
                expected: ys.ncols(),
                found: gs.ncols(),
            });
        }
        Ok(Self { ys, gs, eps, bound_m })
    }

    pub fn len(&self) -> usize {
        self.ys.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.ncols() == 0
    }

    pub fn dim(&self) -> usize {
        self.ys.nrows()
    }

    /// The members with 1-based index > `n0`.
    pub fn tail(&self, n0: usize) -> Self {
        let n0 = n0.min(self.len());
        Self {
            ys: self.ys.columns(n0, self.len() - n0).into_owned(),
            gs: self.gs.columns(n0, self.len() - n0).into_owned(),
            eps: self.eps,
            bound_m: self.bound_m,
        }
    }

    /// Rescales to ||y_n|| = 1, moving the norm onto y_n^* (products unchanged).
    pub fn normalized(&self) -> Self {
        let mut out = self.clone();
        for n in 0..self.len() {
            let s = self.ys.column(n).norm();
            if s > 0.0 {
                out.ys.column_mut(n).unscale_mut(s);
                out.gs.column_mut(n).scale_mut(s);
            }
        }
        out
    }

    /// max_n ||y_n|| ||y_n^*||.
    pub fn measured_bound(&self) -> f64 {
        (0..self.len())
            .map(|n| self.ys.column(n).norm() * self.gs.column(n).norm())
            .fold(0.0, f64::max)
    }

    /// Least pairwise distance between the normalized y_n (infinite for < 2 members).
    pub fn min_separation(&self) -> f64 {
        let u = self.normalized();
        let mut best = f64::INFINITY;
        for i in 0..u.len() {
            for j in i + 1..u.len() {
                best = best.min((u.ys.column(i) - u.ys.column(j)).norm());
            }
        }
        best
    }

    /// Defect within eps and measured bound within bound_m.
    pub fn is_certified(&self) -> bool {
        rough_defect(self) <= self.eps && self.measured_bound() <= self.bound_m * (1.0 + 1e-12)
    }
}

/// max_{k,n} |<y_k^*, y_n> - delta_{k,n}|.
pub fn rough_defect(rs: &RoughSystem) -> f64 {
    let g = rs.gs.transpose() * &rs.ys;
    let mut worst: f64 = 0.0;
    for n in 0..g.ncols() {
        for k in 0..g.nrows() {
            let target = if k == n { 1.0 } else { 0.0 };
            worst = worst.max((g[(k, n)] - target).abs());
        }
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RoughCapacity {
    /// Separation (1 - 2 eps) / M of normalized members.
    pub delta: f64,
    /// Volume bound (1 + 2/delta)^k on the number of members.
    pub p_max: f64,
    /// k >= c1 ln p.
    pub c1: f64,
}

pub fn rough_capacity(k: usize, eps: f64, m: f64) -> Result<RoughCapacity> {
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::invalid(format!("eps = {eps} must lie in (0, 1/2)")));
    }
    if !(m >= 1.0) {
        return Err(Error::invalid(format!("M = {m} must be at least 1")));
    }
    let delta = (1.0 - 2.0 * eps) / m;
    let base = 1.0 + 2.0 / delta;
    Ok(RoughCapacity {
        delta,
        p_max: base.powi(k as i32),
        c1: 1.0 / base.ln(),
    })
}

/// y_n = P T z_n and y_n^* = P z_n^* for n <= p, with P the coordinate
/// projection onto Omega(r), written in the |Omega(r)| retained coordinates.
///
/// Requires [z_n]_{n<=p} within span_tol of [x_n]_{n<=r} and [z_n^*]_{n<=p}
/// within span_tol of [x_n^*]_{n<=r}, checked against the well-conditioned
/// generators e^_n and e_{pi(n)} of the same prefix spans.
#[allow(clippy::too_many_arguments)]
pub fn extract_rough_system(
    zsys: &BiorthSystem,
    ps: &PathologicalSystem,
    t: &DMatrix<f64>,
    spec: &PermutationSpec,
    p: usize,
    r: usize,
    eps: f64,
    bound_m: f64,
) -> Result<RoughSystem> {
    let d = ps.ambient_dim();
    if zsys.ambient_dim() != d || t.nrows() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: zsys.ambient_dim(),
        });
    }
    if p == 0 || p > zsys.len() || r > ps.len() || r > spec.len() {
        return Err(Error::invalid(format!(
            "p = {p}, r = {r} outside the constructed range"
        )));
    }
    let span_tol = zsys.tol().span_tol;
    let rank_tol = zsys.tol().rank_tol;
    let pe = PrefixBasis::new(&ps.e_hats.columns(0, r).into_owned(), rank_tol)?;
    let pp = PrefixBasis::new(&ps.permuted.columns(0, r).into_owned(), rank_tol)?;
    for n in 0..p {
        let z = zsys.x(n).normalize();
        let zs = zsys.f(n).normalize();
        let (a, b) = (pe.residuals(&z)[r], pp.residuals(&zs)[r]);
        if a > span_tol || b > span_tol {
            return Err(Error::Precondition {
                invariant: "z_prefix_spanned_by_x_prefix",
                detail: format!("z_{} is {a:e} / {b:e} away from the first {r} spans", n + 1),
            });
        }
    }
    let omega = spec.omega_set(r);
    if omega.is_empty() {
        return Err(Error::Precondition {
            invariant: "omega_nonempty",
            detail: format!("Omega({r}) is empty"),
        });
    }
    let tz = t * zsys.x_matrix().columns(0, p);
    let zstar = zsys.f_matrix().columns(0, p);
    // Omega(r) is inside 1..r, and the first M compressed coordinates are e_1..e_M
    let ys = DMatrix::from_fn(omega.len(), p, |i, n| tz[(omega[i] - 1, n)]);
    let gs = DMatrix::from_fn(omega.len(), p, |i, n| zstar[(omega[i] - 1, n)]);
    RoughSystem::new(ys, gs, eps, bound_m)
}

/// Greedy random packing in dimension k: each trial draws a unit y and a
/// functional g = y + w (w orthogonal to y, ||g|| <= M) and keeps the pair
/// when it stays eps-roughly biorthogonal with everything kept so far.
pub fn random_rough_packing(k: usize, eps: f64, m: f64, trials: usize, seed: u64) -> Result<RoughSystem> {
    if k == 0 {
        return Err(Error::invalid("dimension must be at least 1"));
    }
    rough_capacity(k, eps, m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss =
        |rng: &mut ChaCha8Rng| -> DVector<f64> { DVector::from_fn(k, |_, _| StandardNormal.sample(rng)) };
    let slack = (m * m - 1.0).max(0.0).sqrt();
    let mut ys: Vec<DVector<f64>> = Vec::new();
    let mut gs: Vec<DVector<f64>> = Vec::new();
    for _ in 0..trials {
        let y = gauss(&mut rng).normalize();
        let mut w = gauss(&mut rng);
        w -= &y * y.dot(&w);
        let wn = w.norm();
        let scale: f64 = rand::Rng::random_range(&mut rng, 0.0..1.0);
        let g = if wn > 0.0 {
            &y + w * (slack * scale / wn)
        } else {
            y.clone()
        };
        let ok = ys
            .iter()
            .zip(&gs)
            .all(|(yi, gi)| gi.dot(&y).abs() <= eps && g.dot(yi).abs() <= eps);
        if ok {
            ys.push(y);
            gs.push(g);
        }
    }
    let to_m = |v: &[DVector<f64>]| {
        if v.is_empty() {
            DMatrix::zeros(k, 0)
        } else {
            DMatrix::from_columns(v)
        }
    };
    RoughSystem::new(to_m(&ys), to_m(&gs), eps, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn capacity_closed_forms() {
        let c = rough_capacity(3, 0.25, 2.0).unwrap();
        assert_eq!(c.delta, 0.25);
        assert_eq!(c.p_max, 729.0);
        assert_abs_diff_eq!(c.c1, 1.0 / 9f64.ln(), epsilon = 1e-15);
        let c = rough_capacity(2, 1e-300, 1.0).unwrap();
        assert_abs_diff_eq!(c.delta, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.p_max, 9.0, epsilon = 1e-12);
        assert!(rough_capacity(2, 0.5, 2.0).is_err());
        assert!(rough_capacity(2, 0.25, 0.5).is_err());
    }

    #[test]
    fn defect_examples() {
        let id = DMatrix::<f64>::identity(2, 2);
        let rs = RoughSystem::new(id.clone(), id.clone(), 0.0, 1.0).unwrap();
        assert_eq!(rough_defect(&rs), 0.0);
        let g = DMatrix::from_column_slice(2, 2, &[1.0, 0.2, 0.0, 1.0]);
        let rs = RoughSystem::new(id, g, 0.2, 2.0).unwrap();
        assert_abs_diff_eq!(rough_defect(&rs), 0.2, epsilon = 1e-15);
    }

    #[test]
    fn packing_respects_volume_bound() {
        for k in 1..=3 {
            let rs = random_rough_packing(k, 0.25, 2.0, 2000, k as u64).unwrap();
            let cap = rough_capacity(k, 0.25, 2.0).unwrap();
            assert!(!rs.is_empty());
            assert!(rs.is_certified());
            assert!((rs.len() as f64) <= cap.p_max);
            assert!(rs.min_separation() >= cap.delta - 1e-9);
        }
    }
}
