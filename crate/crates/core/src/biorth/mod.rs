//! Finite biorthogonal systems (x_n, f_n) in l2^d, where the functional f_n acts
//! by inner product.

mod diagnostics;
mod relations;

pub use diagnostics::{
    biorthogonality_defect, boundedness_constant, norming_constant_envelope, norming_constant_estimate,
    norming_constant_exact, uniform_minimality_constant,
};
pub use relations::{
    block_duality_check, classify_perturbation, intersection_defect, spanning_indices,
    spanning_indices_from_generators, Classification, IntervalFamily, IntervalKind, SpanningIndices,
};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::subspace::{SubspaceBasis, ToleranceConfig, TruncatedVector};

#[derive(Debug, Clone)]
pub struct BiorthSystem {
    x: DMatrix<f64>,
    f: DMatrix<f64>,
    tol: ToleranceConfig,
}

impl BiorthSystem {
    /// Checks shapes, finiteness and nonzero vectors; does not check biorthogonality.
    pub fn from_matrices(x: DMatrix<f64>, f: DMatrix<f64>, tol: ToleranceConfig) -> Result<Self> {
        tol.validate()?;
        if x.ncols() != f.ncols() {
            return Err(Error::invalid(format!(
                "{} vectors but {} functionals",
                x.ncols(),
                f.ncols()
            )));
        }
        if x.nrows() != f.nrows() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                found: f.nrows(),
            });
        }
        if x.nrows() == 0 {
            return Err(Error::invalid("ambient dimension must be at least 1"));
        }
        if let Some(i) = x.iter().chain(f.iter()).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        for (n, (xc, fc)) in x.column_iter().zip(f.column_iter()).enumerate() {
            if xc.norm() == 0.0 || fc.norm() == 0.0 {
                return Err(Error::invalid(format!("pair {} has a zero member", n + 1)));
            }
        }
        Ok(Self { x, f, tol })
    }

    pub fn from_parts(
        xs: Vec<TruncatedVector>,
        fs: Vec<TruncatedVector>,
        tol: ToleranceConfig,
    ) -> Result<Self> {
        if xs.len() != fs.len() {
            return Err(Error::invalid(format!(
                "{} vectors but {} functionals",
                xs.len(),
                fs.len()
            )));
        }
        if xs.is_empty() {
            return Err(Error::invalid("empty system"));
        }
        let dim = xs[0].ambient_dim();
        for v in xs.iter().chain(fs.iter()) {
            if v.ambient_dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: v.ambient_dim(),
                });
            }
        }
        let cols = |vs: &[TruncatedVector]| {
            DMatrix::from_columns(&vs.iter().map(|v| v.coords().clone()).collect::<Vec<_>>())
        };
        Self::from_matrices(cols(&xs), cols(&fs), tol)
    }

    /// As [`from_parts`](Self::from_parts), and additionally requires the
    /// biorthogonality defect to be within `tol.biorth_tol`.
    pub fn new(xs: Vec<TruncatedVector>, fs: Vec<TruncatedVector>, tol: ToleranceConfig) -> Result<Self> {
        let sys = Self::from_parts(xs, fs, tol)?;
        sys.require_biorthogonal()?;
        Ok(sys)
    }

    pub(crate) fn require_biorthogonal(&self) -> Result<()> {
        let d = biorthogonality_defect(self);
        if d > self.tol.biorth_tol {
            return Err(Error::Postcondition {
                invariant: "biorthogonality_defect_within_tol",
                detail: format!("defect {d:e} exceeds {:e}", self.tol.biorth_tol),
            });
        }
        Ok(())
    }

    /// (e_n, e_n), n = 1..=n, in dimension n.
    pub fn canonical(n: usize, tol: ToleranceConfig) -> Result<Self> {
        Self::from_matrices(DMatrix::identity(n, n), DMatrix::identity(n, n), tol)
    }

    /// x_n = e_n + sum_{k>n} a * rho^{k-n} * u_{nk} e_k with u_{nk} uniform in (-1, 1);
    /// the functionals are the rows of X^{-1}. Deterministic given `seed`.
    pub fn near_canonical(
        n: usize,
        coupling: f64,
        decay: f64,
        seed: u64,
        tol: ToleranceConfig,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("system size must be at least 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = DMatrix::identity(n, n);
        for col in 0..n {
            for row in col + 1..n {
                let u: f64 = rng.random_range(-1.0..1.0);
                x[(row, col)] = coupling * decay.powi((row - col) as i32) * u;
            }
        }
        let inv = x
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .ok_or_else(|| Error::invalid("triangular system is singular"))?;
        let sys = Self::from_matrices(x, inv.transpose(), tol)?;
        sys.require_biorthogonal()?;
        Ok(sys)
    }

    pub fn len(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.x.ncols() == 0
    }

    pub fn ambient_dim(&self) -> usize {
        self.x.nrows()
    }

    pub fn tol(&self) -> &ToleranceConfig {
        &self.tol
    }

    pub fn with_tol(mut self, tol: ToleranceConfig) -> Result<Self> {
        tol.validate()?;
        self.tol = tol;
        Ok(self)
    }

    /// Vectors as columns.
    pub fn x_matrix(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// Functionals as columns.
    pub fn f_matrix(&self) -> &DMatrix<f64> {
        &self.f
    }

    /// The vector x_{n+1} (0-based `n`).
    pub fn x(&self, n: usize) -> DVector<f64> {
        self.x.column(n).into_owned()
    }

    /// The functional f_{n+1} (0-based `n`).
    pub fn f(&self, n: usize) -> DVector<f64> {
        self.f.column(n).into_owned()
    }

    pub fn xs(&self) -> Vec<TruncatedVector> {
        to_vectors(&self.x)
    }

    pub fn fs(&self) -> Vec<TruncatedVector> {
        to_vectors(&self.f)
    }

    /// Span of the vectors with the given 0-based indices.
    pub fn vector_span(&self, idx: &[usize]) -> Result<SubspaceBasis> {
        SubspaceBasis::from_column_subset(&self.x, idx, self.tol.rank_tol)
    }

    /// Span of the functionals with the given 0-based indices.
    pub fn functional_span(&self, idx: &[usize]) -> Result<SubspaceBasis> {
        SubspaceBasis::from_column_subset(&self.f, idx, self.tol.rank_tol)
    }

    /// Biorthogonal coefficients f_n(x) for all n.
    pub fn coefficients(&self, x: &DVector<f64>) -> DVector<f64> {
        self.f.transpose() * x
    }
}

pub(crate) fn to_vectors(m: &DMatrix<f64>) -> Vec<TruncatedVector> {
    m.column_iter()
        .map(|c| TruncatedVector::from_dvector(c.into_owned()).expect("finite by construction"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constructors_check_shapes() {
        let tol = ToleranceConfig::default();
        let e = |i| TruncatedVector::basis(i, 2);
        assert!(BiorthSystem::from_parts(vec![e(0)], vec![e(0), e(1)], tol).is_err());
        assert!(BiorthSystem::from_parts(vec![e(0)], vec![TruncatedVector::basis(0, 3)], tol).is_err());
        assert!(BiorthSystem::from_parts(vec![TruncatedVector::zeros(2)], vec![e(0)], tol).is_err());
        assert!(BiorthSystem::new(vec![e(0)], vec![e(1)], tol).is_err());
        assert!(BiorthSystem::new(vec![e(0), e(1)], vec![e(0), e(1)], tol).is_ok());
    }

    #[test]
    fn near_canonical_is_biorthogonal_and_deterministic() {
        let tol = ToleranceConfig::default();
        let a = BiorthSystem::near_canonical(40, 0.5, 0.6, 3, tol).unwrap();
        let b = BiorthSystem::near_canonical(40, 0.5, 0.6, 3, tol).unwrap();
        assert_eq!(a.x_matrix(), b.x_matrix());
        assert!(biorthogonality_defect(&a) < 1e-12);
    }
}
