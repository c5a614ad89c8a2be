use std::collections::BTreeSet;

use nalgebra::DMatrix;
use serde::Serialize;

use super::BiorthSystem;
use crate::error::{Error, Result};
use crate::subspace::{sorted_svd, subspace_gap, PrefixBasis, SubspaceBasis, GAP_FLOOR};

/// Principal vectors at sine below this count as common to both spans.
const INTERSECTION_SIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum IntervalKind {
    /// Successive disjoint intervals covering an initial segment.
    Block,
    /// Intervals all starting at 1 with strictly increasing right ends.
    Pile,
}

/// A family of integer intervals I(m) with inclusive 1-based bounds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IntervalFamily {
    kind: IntervalKind,
    intervals: Vec<(usize, usize)>,
}

impl IntervalFamily {
    pub fn new(kind: IntervalKind, intervals: Vec<(usize, usize)>) -> Result<Self> {
        for &(a, b) in &intervals {
            if a == 0 || a > b {
                return Err(Error::invalid(format!("malformed interval [{a}, {b}]")));
            }
        }
        match kind {
            IntervalKind::Block => {
                let mut next = 1;
                for &(a, b) in &intervals {
                    if a != next {
                        return Err(Error::invalid(format!(
                            "block interval [{a}, {b}] does not start at {next}"
                        )));
                    }
                    next = b + 1;
                }
            }
            IntervalKind::Pile => {
                for w in intervals.windows(2) {
                    if w[1].1 <= w[0].1 {
                        return Err(Error::invalid("pile right ends must strictly increase"));
                    }
                }
                if intervals.iter().any(|&(a, _)| a != 1) {
                    return Err(Error::invalid("pile intervals must start at 1"));
                }
            }
        }
        Ok(Self { kind, intervals })
    }

    pub fn singletons(n: usize) -> Self {
        Self {
            kind: IntervalKind::Block,
            intervals: (1..=n).map(|m| (m, m)).collect(),
        }
    }

    pub fn kind(&self) -> IntervalKind {
        self.kind
    }

    pub fn intervals(&self) -> &[(usize, usize)] {
        &self.intervals
    }

    /// Right end of the last interval (0 when empty).
    pub fn end(&self) -> usize {
        self.intervals.last().map(|i| i.1).unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }
}

/// Spanning indices q(1), q(2), ... for the longest prefix of m where they exist.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SpanningIndices {
    pub q: Vec<usize>,
    /// First m (1-based) for which no prefix of the reference system suffices.
    pub first_undefined: Option<usize>,
}

/// Spanning indices of `zsys` inside `xsys`: q(m) is the least q such that
/// every z_n and z_n^* with n <= m lies within `tol` (relative) of
/// span{x_1..x_q} and span{f_1..f_q} respectively.
pub fn spanning_indices(zsys: &BiorthSystem, xsys: &BiorthSystem, tol: f64) -> Result<Vec<usize>> {
    let s = spanning_indices_from_generators(
        zsys.x_matrix(),
        zsys.f_matrix(),
        xsys.x_matrix(),
        xsys.f_matrix(),
        tol,
        xsys.tol().rank_tol,
    )?;
    match s.first_undefined {
        Some(m) => Err(Error::SpanningUndefined { m, len: xsys.len() }),
        None => Ok(s.q),
    }
}

/// Spanning indices measured against arbitrary prefix generators.
///
/// `x_gens` and `f_gens` must have the same prefix spans as the reference
/// vectors and functionals; they only need to be better conditioned.
pub fn spanning_indices_from_generators(
    z_vectors: &DMatrix<f64>,
    z_duals: &DMatrix<f64>,
    x_gens: &DMatrix<f64>,
    f_gens: &DMatrix<f64>,
    tol: f64,
    rank_tol: f64,
) -> Result<SpanningIndices> {
    let rows = x_gens.nrows();
    for m in [z_vectors, z_duals, f_gens] {
        if m.nrows() != rows {
            return Err(Error::DimensionMismatch {
                expected: rows,
                found: m.nrows(),
            });
        }
    }
    let px = PrefixBasis::new(x_gens, rank_tol)?;
    let pf = PrefixBasis::new(f_gens, rank_tol)?;
    let least = |pb: &PrefixBasis, v: nalgebra::DVector<f64>| -> Option<usize> {
        let n = v.norm();
        if n == 0.0 {
            return Some(0);
        }
        pb.residuals(&(v / n)).iter().position(|&r| r <= tol)
    };
    let mut q = Vec::new();
    let mut running = 0;
    for n in 0..z_vectors.ncols() {
        let qx = least(&px, z_vectors.column(n).into_owned());
        let qf = least(&pf, z_duals.column(n).into_owned());
        match (qx, qf) {
            (Some(a), Some(b)) => {
                running = running.max(a).max(b);
                if running < n + 1 {
                    return Err(Error::Postcondition {
                        invariant: "spanning_index_at_least_m",
                        detail: format!("q({}) = {running} < {}", n + 1, n + 1),
                    });
                }
                q.push(running);
            }
            _ => {
                return Ok(SpanningIndices {
                    q,
                    first_undefined: Some(n + 1),
                })
            }
        }
    }
    Ok(SpanningIndices {
        q,
        first_undefined: None,
    })
}

/// Outcome of [`classify_perturbation`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Classification {
    Block {
        blocks: IntervalFamily,
        pile: IntervalFamily,
    },
    Pile {
        pile: IntervalFamily,
    },
    Neither,
}

impl Classification {
    pub fn is_block(&self) -> bool {
        matches!(self, Classification::Block { .. })
    }

    pub fn is_pile(&self) -> bool {
        match self {
            Classification::Block { pile, .. } | Classification::Pile { pile } => !pile.is_empty(),
            Classification::Neither => false,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Classification::Block { .. } => "block",
            Classification::Pile { .. } => "pile",
            Classification::Neither => "neither",
        }
    }
}

fn spans_agree(z: &BiorthSystem, x: &BiorthSystem, idx: &[usize], tol: f64) -> Result<bool> {
    let gv = subspace_gap(&z.vector_span(idx)?, &x.vector_span(idx)?)?;
    if gv > tol + GAP_FLOOR {
        return Ok(false);
    }
    let gf = subspace_gap(&z.functional_span(idx)?, &x.functional_span(idx)?)?;
    Ok(gf <= tol + GAP_FLOOR)
}

fn check_pair(zsys: &BiorthSystem, xsys: &BiorthSystem) -> Result<()> {
    if zsys.len() != xsys.len() {
        return Err(Error::invalid(format!(
            "systems have lengths {} and {}",
            zsys.len(),
            xsys.len()
        )));
    }
    if zsys.ambient_dim() != xsys.ambient_dim() {
        return Err(Error::DimensionMismatch {
            expected: xsys.ambient_dim(),
            found: zsys.ambient_dim(),
        });
    }
    Ok(())
}

/// Classifies `zsys` as a block or pile perturbation of `xsys`.
///
/// Blocks are searched greedily from the left, closing each block at the
/// earliest index where both vector and functional spans agree. Pile points
/// are all m where the prefix spans agree.
pub fn classify_perturbation(zsys: &BiorthSystem, xsys: &BiorthSystem, tol: f64) -> Result<Classification> {
    check_pair(zsys, xsys)?;
    let n = xsys.len();

    let mut blocks = Vec::new();
    let mut start = 0;
    while start < n {
        let mut closed = None;
        for end in start..n {
            let idx: Vec<usize> = (start..=end).collect();
            if spans_agree(zsys, xsys, &idx, tol)? {
                closed = Some(end);
                break;
            }
        }
        match closed {
            Some(end) => {
                blocks.push((start + 1, end + 1));
                start = end + 1;
            }
            None => break,
        }
    }
    let is_block = start == n;

    let mut pile_points = Vec::new();
    for m in 1..=n {
        let idx: Vec<usize> = (0..m).collect();
        if spans_agree(zsys, xsys, &idx, tol)? {
            pile_points.push((1, m));
        }
    }
    let pile = IntervalFamily::new(IntervalKind::Pile, pile_points)?;

    Ok(if is_block {
        Classification::Block {
            blocks: IntervalFamily::new(IntervalKind::Block, blocks)?,
            pile,
        }
    } else if !pile.is_empty() {
        Classification::Pile { pile }
    } else {
        Classification::Neither
    })
}

/// Checks [f^z_n]_{I} = [f^x_n]_{I} on every block I through the complement
/// identity: inside the total span, the functionals of a block span the
/// orthogonal complement of the other blocks' vectors.
pub fn block_duality_check(
    zsys: &BiorthSystem,
    xsys: &BiorthSystem,
    intervals: &IntervalFamily,
) -> Result<bool> {
    check_pair(zsys, xsys)?;
    if intervals.kind() != IntervalKind::Block || intervals.end() != xsys.len() {
        return Err(Error::invalid(format!(
            "interval family must be a block family covering 1..{}",
            xsys.len()
        )));
    }
    let tol = xsys.tol().span_tol + GAP_FLOOR;
    let n = xsys.len();
    let all: Vec<usize> = (0..n).collect();
    let total_x = xsys.vector_span(&all)?;
    let total_z = zsys.vector_span(&all)?;
    for &(a, b) in intervals.intervals() {
        let inside: Vec<usize> = (a - 1..b).collect();
        let outside: Vec<usize> = (0..n).filter(|i| *i < a - 1 || *i >= b).collect();
        let cx = total_x.complement_of(&xsys.vector_span(&outside)?)?;
        let cz = total_z.complement_of(&zsys.vector_span(&outside)?)?;
        if subspace_gap(&cx, &cz)? > tol
            || subspace_gap(&cx, &xsys.functional_span(&inside)?)? > tol
            || subspace_gap(&cz, &zsys.functional_span(&inside)?)? > tol
        {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Gap between span_A ∩ span_B (computed from principal vectors at angle
/// near zero) and span_{A ∩ B}. Index sets are 1-based.
///
/// Any linearly independent finite system satisfies the identity, so this is
/// a diagnostic and not a certificate of strongness.
pub fn intersection_defect(sys: &BiorthSystem, a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> Result<f64> {
    for &i in a.iter().chain(b.iter()) {
        if i == 0 || i > sys.len() {
            return Err(Error::invalid(format!("index {i} outside 1..{}", sys.len())));
        }
    }
    let to0 = |s: &BTreeSet<usize>| s.iter().map(|i| i - 1).collect::<Vec<_>>();
    let sa = sys.vector_span(&to0(a))?;
    let sb = sys.vector_span(&to0(b))?;
    let common: BTreeSet<usize> = a.intersection(b).cloned().collect();
    let sab = sys.vector_span(&to0(&common))?;
    let rank_tol = sys.tol().rank_tol;
    let inter = if sa.rank() == 0 || sb.rank() == 0 {
        SubspaceBasis::zero(sys.ambient_dim(), rank_tol)?
    } else {
        let c = sa.onb().transpose() * sb.onb();
        let (u, s, _) = sorted_svd(&c);
        let cos_min = (1.0 - INTERSECTION_SIN * INTERSECTION_SIN).sqrt();
        let k = s.iter().filter(|&&v| v >= cos_min).count();
        let dirs = sa.onb() * u.columns(0, k);
        SubspaceBasis::from_orthonormal(dirs, rank_tol)
    };
    subspace_gap(&inter, &sab)
}
