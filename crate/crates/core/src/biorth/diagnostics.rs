use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::BiorthSystem;
use crate::error::{Error, Result};
use crate::subspace::{smallest_singular_value, sorted_svd};

/// max_{k,n} |f_k(x_n) - delta_{k,n}|.
pub fn biorthogonality_defect(sys: &BiorthSystem) -> f64 {
    let g = sys.f_matrix().transpose() * sys.x_matrix();
    let mut worst: f64 = 0.0;
    for n in 0..g.ncols() {
        for k in 0..g.nrows() {
            let target = if k == n { 1.0 } else { 0.0 };
            worst = worst.max((g[(k, n)] - target).abs());
        }
    }
    worst
}

/// max_n ||x_n|| ||f_n||, the least C for which the system is C-bounded.
pub fn boundedness_constant(sys: &BiorthSystem) -> f64 {
    sys.x_matrix()
        .column_iter()
        .zip(sys.f_matrix().column_iter())
        .map(|(x, f)| x.norm() * f.norm())
        .fold(0.0, f64::max)
}

/// min_n dist(x_n / ||x_n||, span of the other vectors).
///
/// With the column-normalized vector matrix X = QR, the distance of column n
/// to the others is 1 / ||row n of R^-1||. Rank is decided on the singular
/// values; dependent vectors give 0.
pub fn uniform_minimality_constant(sys: &BiorthSystem) -> Result<f64> {
    if sys.len() < 2 {
        return Err(Error::invalid("uniform minimality needs at least two vectors"));
    }
    if sys.len() > sys.ambient_dim() {
        return Ok(0.0);
    }
    let mut xn = sys.x_matrix().clone();
    for mut c in xn.column_iter_mut() {
        let n = c.norm();
        c /= n;
    }
    let (_, s, _) = sorted_svd(&xn);
    let smax = s[0];
    let smin = *s.last().unwrap();
    if !(smin > sys.tol().rank_tol * smax) {
        return Ok(0.0);
    }
    let k = sys.len();
    let rinv = xn
        .qr()
        .r()
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or(Error::SingularGram {
            min_sv: smin,
            max_sv: smax,
        })?;
    Ok((0..k)
        .map(|n| 1.0 / rinv.row(n).norm())
        .fold(f64::INFINITY, f64::min))
}

/// Exact norming constant relative to the finite spans: the least value of
/// sup_{x in span(xs), ||x||=1} <f, x> over unit f in span(fs), i.e. the
/// smallest cosine of the principal angles from span(fs) into span(xs).
pub fn norming_constant_exact(sys: &BiorthSystem) -> Result<f64> {
    let all: Vec<usize> = (0..sys.len()).collect();
    let qx = sys.vector_span(&all)?;
    let qf = sys.functional_span(&all)?;
    if qf.rank() == 0 {
        return Err(Error::invalid("functional span is zero"));
    }
    if qf.rank() > qx.rank() {
        return Ok(0.0);
    }
    Ok(smallest_singular_value(&(qx.onb().transpose() * qf.onb())))
}

/// Monte-Carlo estimate of the norming constant: minimum of ||P_X f|| over
/// `samples` random unit functionals f of span(fs). Deterministic given `seed`.
pub fn norming_constant_estimate(sys: &BiorthSystem, samples: usize, seed: u64) -> Result<f64> {
    Ok(*norming_constant_envelope(sys, samples, seed)?
        .last()
        .expect("samples > 0"))
}

/// Running minimum of the Monte-Carlo norming estimate after each sample.
pub fn norming_constant_envelope(sys: &BiorthSystem, samples: usize, seed: u64) -> Result<Vec<f64>> {
    if samples == 0 {
        return Err(Error::invalid("norming estimate needs at least one sample"));
    }
    let all: Vec<usize> = (0..sys.len()).collect();
    let qx = sys.vector_span(&all)?;
    let qf = sys.functional_span(&all)?;
    if qf.rank() == 0 {
        return Err(Error::invalid("functional span is zero"));
    }
    let cross: DMatrix<f64> = qx.onb().transpose() * qf.onb();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(samples);
    let mut best = f64::INFINITY;
    for _ in 0..samples {
        let g = DVector::<f64>::from_fn(qf.rank(), |_, _| StandardNormal.sample(&mut rng));
        let g = g.normalize();
        best = best.min((&cross * g).norm());
        out.push(best);
    }
    Ok(out)
}
