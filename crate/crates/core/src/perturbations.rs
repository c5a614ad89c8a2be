//! Block partitions (A(j), n(j), eps_j) and flattened perturbations: blockwise
//! re-choices of a system whose new functionals on A(j) all stay within
//! eps_j / ||x_{n(j)}|| of the anchor functional f_{n(j)}.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::biorth::{biorthogonality_defect, BiorthSystem, IntervalFamily, IntervalKind};
use crate::error::{Error, Result};
use crate::subspace::{dual_solve, subspace_gap, TruncatedVector, GAP_FLOOR};

const MAX_ATTEMPTS: usize = 8;
const HEADROOM: f64 = 0.9;

/// Default summable schedule eps_j = 1 / j^2.
pub fn default_eps(j: usize) -> f64 {
    1.0 / (j as f64).powi(2)
}

/// Sets A(j) (1-based members), anchors n(j) in A(j) and tolerances eps_j.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockPartition {
    blocks: Vec<Vec<usize>>,
    anchors: Vec<usize>,
    epsilons: Vec<f64>,
}

impl BlockPartition {
    pub fn new(blocks: Vec<Vec<usize>>, anchors: Vec<usize>, epsilons: Vec<f64>) -> Result<Self> {
        if blocks.len() != anchors.len() || blocks.len() != epsilons.len() {
            return Err(Error::invalid(format!(
                "{} blocks, {} anchors, {} epsilons",
                blocks.len(),
                anchors.len(),
                epsilons.len()
            )));
        }
        let mut sorted = Vec::with_capacity(blocks.len());
        for (j, mut b) in blocks.into_iter().enumerate() {
            if b.is_empty() || b.contains(&0) {
                return Err(Error::invalid(format!("block {} is empty or has index 0", j + 1)));
            }
            b.sort_unstable();
            b.dedup();
            sorted.push(b);
        }
        if let Some(j) = epsilons.iter().position(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(Error::invalid(format!("eps_{} must be positive", j + 1)));
        }
        Ok(Self {
            blocks: sorted,
            anchors,
            epsilons,
        })
    }

    /// A(j) = {j}, n(j) = j.
    pub fn singletons(n: usize, eps: impl Fn(usize) -> f64) -> Self {
        Self {
            blocks: (1..=n).map(|j| vec![j]).collect(),
            anchors: (1..=n).collect(),
            epsilons: (1..=n).map(eps).collect(),
        }
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn anchors(&self) -> &[usize] {
        &self.anchors
    }

    pub fn epsilons(&self) -> &[f64] {
        &self.epsilons
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Largest covered index.
    pub fn max_index(&self) -> usize {
        self.blocks.iter().flatten().cloned().max().unwrap_or(0)
    }

    /// Partial sum of eps_j over the recorded blocks.
    pub fn eps_sum(&self) -> f64 {
        self.epsilons.iter().sum()
    }

    /// Appends singleton blocks {k} for max_index < k <= n.
    pub fn padded_to(mut self, n: usize, eps: impl Fn(usize) -> f64) -> Self {
        for k in self.max_index() + 1..=n {
            self.blocks.push(vec![k]);
            self.anchors.push(k);
            self.epsilons.push(eps(self.blocks.len()));
        }
        self
    }

    /// Lines `A j: n(j) | members | eps`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (j, b) in self.blocks.iter().enumerate() {
            let members: Vec<String> = b.iter().map(|m| m.to_string()).collect();
            writeln!(
                s,
                "A {}: {} | {} | {:e}",
                j + 1,
                self.anchors[j],
                members.join(" "),
                self.epsilons[j]
            )
            .unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut blocks = Vec::new();
        let mut anchors = Vec::new();
        let mut eps = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let perr = |msg: String| Error::Parse { line: i + 1, msg };
            let rest = line
                .strip_prefix('A')
                .ok_or_else(|| perr("expected a line starting with `A`".into()))?;
            let (j, body) = rest
                .split_once(':')
                .ok_or_else(|| perr("missing `:` after block number".into()))?;
            let j: usize = j.trim().parse().map_err(|e| perr(format!("block number: {e}")))?;
            if j != blocks.len() + 1 {
                return Err(perr(format!("expected block {}, found {j}", blocks.len() + 1)));
            }
            let parts: Vec<&str> = body.split('|').collect();
            if parts.len() != 3 {
                return Err(perr("expected `anchor | members | eps`".into()));
            }
            anchors.push(
                parts[0]
                    .trim()
                    .parse()
                    .map_err(|e| perr(format!("anchor: {e}")))?,
            );
            blocks.push(
                parts[1]
                    .split_whitespace()
                    .map(|t| t.parse().map_err(|e| perr(format!("member `{t}`: {e}"))))
                    .collect::<Result<Vec<usize>>>()?,
            );
            eps.push(parts[2].trim().parse().map_err(|e| perr(format!("eps: {e}")))?);
        }
        Self::new(blocks, anchors, eps)
    }
}

/// Outcome of [`validate_block_partition`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionReport {
    pub disjoint: bool,
    pub covers: bool,
    pub anchors_in_blocks: bool,
    pub eps_sum: f64,
    /// Groups I(m) of block numbers j whose unions are successive integer intervals.
    pub witness: Option<IntervalFamily>,
    /// The integer intervals covered by each group of the witness.
    pub witness_spans: Option<Vec<(usize, usize)>>,
    pub issues: Vec<String>,
}

impl PartitionReport {
    pub fn is_valid(&self) -> bool {
        self.disjoint && self.covers && self.anchors_in_blocks
    }

    pub fn is_block_kind(&self) -> bool {
        self.witness.is_some()
    }
}

/// Checks disjointness, coverage of {1..range_end} and anchors, and searches
/// for the finest grouping of consecutive blocks whose unions are successive
/// intervals. The greedy search is complete: if any grouping works, closing
/// each group at its earliest feasible end also works.
pub fn validate_block_partition(p: &BlockPartition, range_end: usize) -> PartitionReport {
    let mut issues = Vec::new();
    let mut seen = BTreeSet::new();
    let mut disjoint = true;
    for (j, b) in p.blocks.iter().enumerate() {
        for &m in b {
            if !seen.insert(m) {
                disjoint = false;
                issues.push(format!("index {m} appears again in block {}", j + 1));
            }
        }
    }
    let covers = seen.len() == range_end && seen.iter().next_back().cloned().unwrap_or(0) == range_end;
    if !covers {
        issues.push(format!("blocks do not cover exactly 1..{range_end}"));
    }
    let mut anchors_in_blocks = true;
    for (j, (b, a)) in p.blocks.iter().zip(&p.anchors).enumerate() {
        if b.binary_search(a).is_err() {
            anchors_in_blocks = false;
            issues.push(format!("anchor {a} of block {} is not a member", j + 1));
        }
    }

    let mut witness = None;
    let mut witness_spans = None;
    if disjoint {
        let mut groups = Vec::new();
        let mut spans = Vec::new();
        let mut next = 1;
        let mut start = 0;
        let mut lo = usize::MAX;
        let mut hi = 0;
        let mut count = 0;
        for (j, b) in p.blocks.iter().enumerate() {
            lo = lo.min(b[0]);
            hi = hi.max(*b.last().unwrap());
            count += b.len();
            if lo == next && hi - lo + 1 == count {
                groups.push((start + 1, j + 1));
                spans.push((lo, hi));
                next = hi + 1;
                start = j + 1;
                lo = usize::MAX;
                hi = 0;
                count = 0;
            }
        }
        if count == 0 && !groups.is_empty() {
            witness = IntervalFamily::new(IntervalKind::Block, groups).ok();
            witness_spans = Some(spans);
        } else {
            issues.push("no grouping of consecutive blocks has interval unions".into());
        }
    }

    PartitionReport {
        disjoint,
        covers,
        anchors_in_blocks,
        eps_sum: p.eps_sum(),
        witness,
        witness_spans,
        issues,
    }
}

fn require_cover(sys: &BiorthSystem, p: &BlockPartition) -> Result<()> {
    let rep = validate_block_partition(p, sys.len());
    if !rep.is_valid() {
        return Err(Error::Precondition {
            invariant: "partition_covers_system",
            detail: rep.issues.join("; "),
        });
    }
    Ok(())
}

struct BlockResult {
    members: Vec<usize>,
    z: Vec<TruncatedVector>,
    duals: Vec<DVector<f64>>,
}

fn members0(b: &[usize]) -> Vec<usize> {
    b.iter().map(|m| m - 1).collect()
}

fn flatten_block(sys: &BiorthSystem, p: &BlockPartition, j: usize, seed: u64) -> Result<BlockResult> {
    let members = members0(&p.blocks[j]);
    let anchor = p.anchors[j] - 1;
    let fa = sys.f(anchor);
    if members.len() == 1 {
        return Ok(BlockResult {
            z: vec![TruncatedVector::from_dvector(sys.x(anchor))?],
            duals: vec![fa],
            members,
        });
    }
    let dual_span = sys.functional_span(&members)?;
    let vec_span = sys.vector_span(&members)?;
    let q = dual_span.onb();
    let fa_unit = &fa / fa.norm();
    let base_scale = HEADROOM * p.epsilons[j] / sys.x(anchor).norm();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(j as u64);
    for attempt in 0..MAX_ATTEMPTS {
        let scale = base_scale * 0.5f64.powi(attempt as i32);
        let mut dirs: Vec<DVector<f64>> = vec![fa_unit.clone()];
        let mut duals = Vec::with_capacity(members.len());
        for &m in &members {
            if m == anchor {
                duals.push(fa.clone());
                continue;
            }
            // random unit direction in the block's dual span, orthogonal to f_anchor
            // and to the directions drawn so far
            let eta = loop {
                let g = DVector::<f64>::from_fn(q.ncols(), |_, _| StandardNormal.sample(&mut rng));
                let mut v = q * g;
                for _ in 0..2 {
                    for d in &dirs {
                        let c = d.dot(&v);
                        v.axpy(-c, d, 1.0);
                    }
                }
                let n = v.norm();
                if n > 1e-8 {
                    break v / n;
                }
            };
            duals.push(&fa + &eta * scale);
            dirs.push(eta);
        }
        let dual_vectors = duals
            .iter()
            .map(|d| TruncatedVector::from_dvector(d.clone()))
            .collect::<Result<Vec<_>>>()?;
        match dual_solve(&dual_vectors, &vec_span, sys.tol().rank_tol) {
            Ok(z) => return Ok(BlockResult { members, z, duals }),
            Err(Error::SingularGram { .. }) => {
                log::debug!("block {}: singular cross-Gram at attempt {attempt}", j + 1);
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::RetriesExhausted {
        block: j + 1,
        attempts: MAX_ATTEMPTS,
    })
}

fn assemble(sys: &BiorthSystem, results: Vec<BlockResult>) -> Result<BiorthSystem> {
    let d = sys.ambient_dim();
    let mut zx = DMatrix::zeros(d, sys.len());
    let mut zf = DMatrix::zeros(d, sys.len());
    for r in results {
        for (k, &m) in r.members.iter().enumerate() {
            zx.set_column(m, r.z[k].coords());
            zf.set_column(m, &r.duals[k]);
        }
    }
    let z = BiorthSystem::from_matrices(zx, zf, *sys.tol())?;
    z.require_biorthogonal()?;
    Ok(z)
}

/// Flattened perturbation of `sys` with respect to `p`.
///
/// On each block the anchor functional is kept; every other functional is
/// f_anchor + 0.9 eps_j / ||x_anchor|| times a random unit direction of the
/// block's dual span orthogonal to f_anchor and to the other directions. The
/// vectors are the dual solve inside the block's vector span. Blocks draw from
/// independent streams of one seeded generator, so the result does not depend
/// on scheduling.
pub fn construct_flattened(sys: &BiorthSystem, p: &BlockPartition, seed: u64) -> Result<BiorthSystem> {
    require_cover(sys, p)?;
    let results = (0..p.len())
        .into_par_iter()
        .map(|j| flatten_block(sys, p, j, seed))
        .collect::<Result<Vec<_>>>()?;
    assemble(sys, results)
}

/// Flattened perturbation with prescribed functionals (`duals` column n is
/// z_n^*). The vectors come from the dual solve inside each block's vector span.
pub fn construct_flattened_with_duals(
    sys: &BiorthSystem,
    p: &BlockPartition,
    duals: &DMatrix<f64>,
) -> Result<BiorthSystem> {
    require_cover(sys, p)?;
    if duals.shape() != sys.f_matrix().shape() {
        return Err(Error::invalid("dual matrix shape differs from the system"));
    }
    let mut results = Vec::with_capacity(p.len());
    for b in &p.blocks {
        let members = members0(b);
        let d: Vec<DVector<f64>> = members.iter().map(|&m| duals.column(m).into_owned()).collect();
        let tv = d
            .iter()
            .map(|v| TruncatedVector::from_dvector(v.clone()))
            .collect::<Result<Vec<_>>>()?;
        let z = dual_solve(&tv, &sys.vector_span(&members)?, sys.tol().rank_tol)?;
        results.push(BlockResult { members, z, duals: d });
    }
    assemble(sys, results)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockCheck {
    pub block: usize,
    pub vector_gap: f64,
    pub dual_gap: f64,
    /// eps_j / ||x_anchor|| - max_{n in A(j)} ||z_n^* - f_anchor||
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlattenedReport {
    pub blocks: Vec<BlockCheck>,
    pub defect: f64,
    pub pass: bool,
}

impl FlattenedReport {
    pub fn worst_gap(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.vector_gap.max(b.dual_gap))
            .fold(0.0, f64::max)
    }

    pub fn worst_slack(&self) -> f64 {
        self.blocks.iter().map(|b| b.slack).fold(f64::INFINITY, f64::min)
    }
}

/// Checks both defining conditions of a flattened perturbation block by block.
pub fn verify_flattened(
    zsys: &BiorthSystem,
    xsys: &BiorthSystem,
    p: &BlockPartition,
) -> Result<FlattenedReport> {
    if zsys.len() != xsys.len() || zsys.ambient_dim() != xsys.ambient_dim() {
        return Err(Error::invalid("systems differ in length or dimension"));
    }
    require_cover(xsys, p)?;
    let span_tol = xsys.tol().span_tol + GAP_FLOOR;
    let mut blocks = Vec::with_capacity(p.len());
    let mut pass = true;
    for (j, b) in p.blocks.iter().enumerate() {
        let members = members0(b);
        let anchor = p.anchors[j] - 1;
        let vector_gap = subspace_gap(&zsys.vector_span(&members)?, &xsys.vector_span(&members)?)?;
        let dual_gap = subspace_gap(&zsys.functional_span(&members)?, &xsys.functional_span(&members)?)?;
        let fa = xsys.f(anchor);
        let worst = members
            .iter()
            .map(|&m| (zsys.f(m) - &fa).norm())
            .fold(0.0, f64::max);
        let slack = p.epsilons[j] / xsys.x(anchor).norm() - worst;
        pass &= vector_gap <= span_tol && dual_gap <= span_tol && slack >= 0.0;
        blocks.push(BlockCheck {
            block: j + 1,
            vector_gap,
            dual_gap,
            slack,
        });
    }
    let defect = biorthogonality_defect(zsys);
    pass &= defect <= zsys.tol().biorth_tol;
    Ok(FlattenedReport { blocks, defect, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::biorth::{boundedness_constant, classify_perturbation};
    use crate::subspace::ToleranceConfig;
    use approx::assert_abs_diff_eq;

    fn tol() -> ToleranceConfig {
        ToleranceConfig::default()
    }

    fn strong_example() -> BlockPartition {
        BlockPartition::new(
            vec![
                vec![1, 2, 3],
                vec![4, 7, 8, 9, 10],
                vec![5, 11, 12, 13, 14, 15],
                vec![6, 16, 17, 18, 19, 20, 21],
            ],
            vec![1, 4, 5, 6],
            vec![1.0, 0.25, 1.0 / 9.0, 1.0 / 16.0],
        )
        .unwrap()
    }

    #[test]
    fn singleton_partition_is_block_kind() {
        let rep = validate_block_partition(&BlockPartition::singletons(5, default_eps), 5);
        assert!(rep.is_valid());
        assert_eq!(rep.witness.unwrap(), IntervalFamily::singletons(5));
    }

    #[test]
    fn strong_example_witness() {
        let rep = validate_block_partition(&strong_example(), 21);
        assert!(rep.is_valid(), "{:?}", rep.issues);
        assert_eq!(rep.witness_spans.unwrap(), vec![(1, 3), (4, 21)]);
        assert_eq!(rep.witness.unwrap().intervals(), &[(1, 1), (2, 4)]);
    }

    #[test]
    fn interleaved_blocks_group_together() {
        let p = BlockPartition::new(vec![vec![1, 3], vec![2]], vec![1, 2], vec![0.5, 0.25]).unwrap();
        let rep = validate_block_partition(&p, 3);
        assert!(rep.is_valid());
        assert_eq!(rep.witness.unwrap().intervals(), &[(1, 2)]);
        assert_eq!(rep.witness_spans.unwrap(), vec![(1, 3)]);
    }

    #[test]
    fn invalid_partitions_are_reported() {
        let p = BlockPartition::new(vec![vec![1, 2], vec![2, 3]], vec![1, 2], vec![1.0, 1.0]).unwrap();
        let rep = validate_block_partition(&p, 3);
        assert!(!rep.disjoint && rep.witness.is_none());
        let p = BlockPartition::new(vec![vec![1, 2]], vec![3], vec![1.0]).unwrap();
        assert!(!validate_block_partition(&p, 2).anchors_in_blocks);
        let p = BlockPartition::new(vec![vec![1], vec![3]], vec![1, 3], vec![1.0, 1.0]).unwrap();
        let rep = validate_block_partition(&p, 3);
        assert!(!rep.covers && rep.witness.is_none());
    }

    #[test]
    fn partition_text_round_trip() {
        let p = strong_example();
        assert_eq!(BlockPartition::from_text(&p.to_text()).unwrap(), p);
        assert!(BlockPartition::from_text("A 2: 1 | 1 | 0.5").is_err());
        assert!(BlockPartition::from_text("A 1: 1 | 1").is_err());
    }

    #[test]
    fn singleton_flattening_is_identity() {
        let x = BiorthSystem::near_canonical(6, 0.5, 0.5, 2, tol()).unwrap();
        let z = construct_flattened(&x, &BlockPartition::singletons(6, default_eps), 1).unwrap();
        assert_eq!(z.x_matrix(), x.x_matrix());
        assert_eq!(z.f_matrix(), x.f_matrix());
    }

    #[test]
    fn two_by_two_prescribed_flattening() {
        let x = BiorthSystem::canonical(2, tol()).unwrap();
        let p = BlockPartition::new(vec![vec![1, 2]], vec![1], vec![0.1]).unwrap();
        let duals = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 1.0, 0.1]);
        let z = construct_flattened_with_duals(&x, &p, &duals).unwrap();
        assert_abs_diff_eq!(
            (z.x(0) - DVector::from_vec(vec![1.0, -10.0])).norm(),
            0.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            (z.x(1) - DVector::from_vec(vec![0.0, 10.0])).norm(),
            0.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(boundedness_constant(&z), 101f64.sqrt(), epsilon = 1e-9);
        assert!(verify_flattened(&z, &x, &p).unwrap().pass);
    }

    #[test]
    fn random_flattening_verifies_and_is_block() {
        let x = BiorthSystem::near_canonical(21, 0.6, 0.6, 8, tol()).unwrap();
        let p = strong_example();
        let z = construct_flattened(&x, &p, 17).unwrap();
        let rep = verify_flattened(&z, &x, &p).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert!(rep.worst_slack() > 0.0);
        let c = classify_perturbation(&z, &x, 1e-8).unwrap();
        assert!(c.is_block() && c.is_pile());
        let z2 = construct_flattened(&x, &p, 17).unwrap();
        assert_eq!(z.x_matrix(), z2.x_matrix());
        assert_eq!(z.f_matrix(), z2.f_matrix());
    }

    #[test]
    fn tight_epsilon_fails_condition_two() {
        let x = BiorthSystem::near_canonical(4, 0.5, 0.5, 3, tol()).unwrap();
        let gap = (x.f(1) - x.f(0)).norm() * x.x(0).norm();
        let loose = BlockPartition::new(
            vec![vec![1, 2], vec![3], vec![4]],
            vec![1, 3, 4],
            vec![gap * 1.0001, 1.0, 1.0],
        )
        .unwrap();
        assert!(verify_flattened(&x, &x, &loose).unwrap().pass);
        let tight = BlockPartition::new(
            vec![vec![1, 2], vec![3], vec![4]],
            vec![1, 3, 4],
            vec![gap * 0.5, 1.0, 1.0],
        )
        .unwrap();
        assert!(!verify_flattened(&x, &x, &tight).unwrap().pass);
    }

    #[test]
    fn uncovered_partition_is_rejected() {
        let x = BiorthSystem::canonical(3, tol()).unwrap();
        let p = BlockPartition::singletons(2, default_eps);
        assert!(matches!(
            construct_flattened(&x, &p, 0),
            Err(Error::Precondition { .. })
        ));
    }
}
