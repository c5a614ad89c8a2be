//! Dense linear algebra on finite truncations of l2: projections, subspace
//! distances, span comparison, sphere nets and dual solves.

mod net;
mod vector;

pub use net::{sphere_net_size, unit_net, unit_net_capped, DEFAULT_NET_CAP};
pub use vector::{ToleranceConfig, TruncatedVector};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Round-off floor added to every span comparison. Two bases of the same
/// subspace never compare exactly equal after orthonormalization.
pub const GAP_FLOOR: f64 = 1e-13;

/// Singular value decomposition with singular values sorted in decreasing order.
pub(crate) fn sorted_svd(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let s: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let u_sorted = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let vt_sorted = DMatrix::from_fn(order.len(), v_t.ncols(), |r, c| v_t[(order[r], c)]);
    (u_sorted, s, vt_sorted)
}

/// Largest singular value; 0 for an empty matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.singular_values().iter().cloned().fold(0.0, f64::max)
}

/// Smallest singular value of a nonempty matrix (over min(rows, cols) values).
pub fn smallest_singular_value(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.singular_values().iter().cloned().fold(f64::INFINITY, f64::min)
}

/// The closed span of an ordered list of vectors, with a cached orthonormal basis.
#[derive(Debug, Clone)]
pub struct SubspaceBasis {
    vectors: Vec<TruncatedVector>,
    ambient_dim: usize,
    rank_tol: f64,
    onb: DMatrix<f64>,
    singular_values: Vec<f64>,
}

impl SubspaceBasis {
    pub fn new(vectors: Vec<TruncatedVector>, ambient_dim: usize, rank_tol: f64) -> Result<Self> {
        if ambient_dim == 0 {
            return Err(Error::invalid("ambient dimension must be at least 1"));
        }
        if !(rank_tol > 0.0) {
            return Err(Error::invalid("rank_tol must be positive"));
        }
        for v in &vectors {
            if v.ambient_dim() != ambient_dim {
                return Err(Error::DimensionMismatch {
                    expected: ambient_dim,
                    found: v.ambient_dim(),
                });
            }
        }
        let cols: Vec<DVector<f64>> = vectors
            .iter()
            .filter_map(|v| {
                let n = v.norm();
                (n > 0.0).then(|| v.coords() / n)
            })
            .collect();
        let (onb, singular_values) = if cols.is_empty() {
            (DMatrix::zeros(ambient_dim, 0), Vec::new())
        } else {
            let m = DMatrix::from_columns(&cols);
            let (u, s, _) = sorted_svd(&m);
            let rank = s.iter().filter(|&&x| x > rank_tol * s[0]).count();
            (u.columns(0, rank).into_owned(), s)
        };
        Ok(Self {
            vectors,
            ambient_dim,
            rank_tol,
            onb,
            singular_values,
        })
    }

    /// The zero subspace.
    pub fn zero(ambient_dim: usize, rank_tol: f64) -> Result<Self> {
        Self::new(Vec::new(), ambient_dim, rank_tol)
    }

    /// Span of the columns of `m`.
    pub fn from_columns(m: &DMatrix<f64>, rank_tol: f64) -> Result<Self> {
        let vectors = m
            .column_iter()
            .map(|c| TruncatedVector::from_dvector(c.into_owned()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(vectors, m.nrows(), rank_tol)
    }

    /// Span of selected columns (0-based) of `m`.
    pub fn from_column_subset(m: &DMatrix<f64>, cols: &[usize], rank_tol: f64) -> Result<Self> {
        let vectors = cols
            .iter()
            .map(|&c| TruncatedVector::from_dvector(m.column(c).into_owned()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(vectors, m.nrows(), rank_tol)
    }

    /// Wraps columns already known to be orthonormal.
    pub(crate) fn from_orthonormal(onb: DMatrix<f64>, rank_tol: f64) -> Self {
        let ambient_dim = onb.nrows();
        let vectors = onb
            .column_iter()
            .filter_map(|c| TruncatedVector::from_dvector(c.into_owned()).ok())
            .collect();
        let singular_values = vec![1.0; onb.ncols()];
        Self {
            vectors,
            ambient_dim,
            rank_tol,
            onb,
            singular_values,
        }
    }

    pub fn vectors(&self) -> &[TruncatedVector] {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn rank_tol(&self) -> f64 {
        self.rank_tol
    }

    pub fn rank(&self) -> usize {
        self.onb.ncols()
    }

    /// True when the numerical rank equals the number of vectors.
    pub fn is_independent(&self) -> bool {
        self.rank() == self.vectors.len()
    }

    /// Singular values of the column-normalized generator matrix, decreasing.
    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    /// Orthonormal basis of the span, one column per dimension.
    pub fn onb(&self) -> &DMatrix<f64> {
        &self.onb
    }

    pub fn project_coords(&self, x: &DVector<f64>) -> DVector<f64> {
        if self.rank() == 0 {
            return DVector::zeros(x.len());
        }
        &self.onb * (self.onb.transpose() * x)
    }

    /// Orthonormal basis of `self ⊖ part`: the top `rank(self) - rank(part)`
    /// directions of `self` orthogonal to `part`.
    pub fn complement_of(&self, part: &SubspaceBasis) -> Result<SubspaceBasis> {
        check_dims(self.ambient_dim, part.ambient_dim)?;
        let keep = self.rank().saturating_sub(part.rank());
        if keep == 0 {
            return SubspaceBasis::zero(self.ambient_dim, self.rank_tol);
        }
        let mut m = self.onb.clone();
        if part.rank() > 0 {
            m -= &part.onb * (part.onb.transpose() * &self.onb);
        }
        let (u, _, _) = sorted_svd(&m);
        Ok(SubspaceBasis::from_orthonormal(
            u.columns(0, keep).into_owned(),
            self.rank_tol,
        ))
    }
}

fn check_dims(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// Distance from `x` to the span of `s`.
pub fn distance_to_span(x: &TruncatedVector, s: &SubspaceBasis) -> Result<f64> {
    Ok(project(x, s)?.1)
}

/// Orthogonal projection onto the span of `s` and the residual norm.
pub fn project(x: &TruncatedVector, s: &SubspaceBasis) -> Result<(TruncatedVector, f64)> {
    check_dims(s.ambient_dim(), x.ambient_dim())?;
    let p = s.project_coords(x.coords());
    let residual = (x.coords() - &p).norm();
    Ok((TruncatedVector::from_dvector(p)?, residual))
}

/// Largest distance from a unit vector of either span to the other span.
/// Spans of different rank are at gap 1.
pub fn subspace_gap(s1: &SubspaceBasis, s2: &SubspaceBasis) -> Result<f64> {
    check_dims(s1.ambient_dim(), s2.ambient_dim())?;
    if s1.rank() != s2.rank() {
        return Ok(1.0);
    }
    if s1.rank() == 0 {
        return Ok(0.0);
    }
    let one_way = |a: &DMatrix<f64>, b: &DMatrix<f64>| {
        let r = a - b * (b.transpose() * a);
        spectral_norm(&r)
    };
    Ok(one_way(s1.onb(), s2.onb()).max(one_way(s2.onb(), s1.onb())))
}

/// Span equality up to `tol` (plus the fixed round-off floor [`GAP_FLOOR`]).
pub fn span_equal(s1: &SubspaceBasis, s2: &SubspaceBasis, tol: f64) -> Result<bool> {
    Ok(subspace_gap(s1, s2)? <= tol + GAP_FLOOR)
}

/// Functionals f_k in span(`within`) with f_k(v_n) = delta_{k,n}.
pub fn dual_solve(
    vectors: &[TruncatedVector],
    within: &SubspaceBasis,
    rank_tol: f64,
) -> Result<Vec<TruncatedVector>> {
    for v in vectors {
        check_dims(within.ambient_dim(), v.ambient_dim())?;
    }
    if within.rank() != vectors.len() {
        return Err(Error::invalid(format!(
            "span has dimension {} but {} vectors were given",
            within.rank(),
            vectors.len()
        )));
    }
    if vectors.is_empty() {
        return Ok(Vec::new());
    }
    let v = DMatrix::from_columns(&vectors.iter().map(|x| x.coords().clone()).collect::<Vec<_>>());
    let q = within.onb();
    let g = q.transpose() * &v;
    let s = g.singular_values();
    // measured against the vectors themselves so a round-off-only G is rejected
    let scale = spectral_norm(&v);
    let max_sv = s.iter().cloned().fold(0.0, f64::max);
    let min_sv = s.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min_sv > rank_tol * scale) || max_sv == 0.0 {
        return Err(Error::SingularGram { min_sv, max_sv });
    }
    let g_inv = g.try_inverse().ok_or(Error::SingularGram { min_sv, max_sv })?;
    // (Q a)^T V = I  with  a = G^{-T}
    let f = q * g_inv.transpose();
    f.column_iter()
        .map(|c| TruncatedVector::from_dvector(c.into_owned()))
        .collect()
}

/// Orthonormal factorization of an ordered generator list that answers
/// "distance to the span of the first q generators" for every q at once.
#[derive(Debug, Clone)]
pub struct PrefixBasis {
    q: DMatrix<f64>,
}

impl PrefixBasis {
    /// Fails if some generator is (numerically) in the span of the earlier ones.
    pub fn new(generators: &DMatrix<f64>, rank_tol: f64) -> Result<Self> {
        let (d, k) = generators.shape();
        if k > d {
            return Err(Error::invalid(format!(
                "{k} generators cannot be independent in dimension {d}"
            )));
        }
        let mut g = generators.clone();
        for mut c in g.column_iter_mut() {
            let n = c.norm();
            if n == 0.0 {
                return Err(Error::invalid("zero generator"));
            }
            c /= n;
        }
        let qr = g.qr();
        let r = qr.r();
        let diag: Vec<f64> = (0..k).map(|i| r[(i, i)].abs()).collect();
        let max = diag.iter().cloned().fold(0.0, f64::max);
        if let Some(i) = diag.iter().position(|&x| !(x > rank_tol * max)) {
            return Err(Error::invalid(format!(
                "generator {} lies in the span of the previous ones",
                i + 1
            )));
        }
        Ok(Self { q: qr.q() })
    }

    pub fn len(&self) -> usize {
        self.q.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.q.ncols() == 0
    }

    /// Orthonormal columns; the first q span the first q generators.
    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// `out[q]` = distance from `z` to the span of the first `q` generators, q = 0..=len.
    pub fn residuals(&self, z: &DVector<f64>) -> Vec<f64> {
        let c = self.q.transpose() * z;
        let outside = (z - &self.q * &c).norm_squared();
        let k = c.len();
        let mut out = vec![0.0; k + 1];
        let mut tail = outside;
        out[k] = tail.sqrt();
        for i in (0..k).rev() {
            tail += c[i] * c[i];
            out[i] = tail.sqrt();
        }
        out
    }
}
