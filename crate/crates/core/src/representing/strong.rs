//! Block partition built from representing indices, and the two-case
//! strongness diagnostic for flattened perturbations over it.
//!
//! One round starts at a block bound r(m). Every j in (r(m), r(m+1)] gets
//! d_j = m + j - r(m) and the set E(j) = {j} u (r(d_j), r(d_j + 1)], with
//! anchor j. The round closes at r(d_last + 1), the next block bound.
//! The first round starts from the seed r(0) = 0, m = 0.

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::Serialize;

use crate::biorth::BiorthSystem;
use crate::error::{Error, Result};
use crate::perturbations::{default_eps, BlockPartition};
use crate::subspace::{distance_to_span, SubspaceBasis, TruncatedVector};

use super::RepresentingIndices;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Round {
    pub m: usize,
    /// r(m), the block bound the round starts from.
    pub start_bound: usize,
    /// r(m + 1): anchors of the round are start_bound + 1 ..= anchor_end.
    pub anchor_end: usize,
    /// The next block bound.
    pub block_end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrongPartitionTrace {
    pub partition: BlockPartition,
    pub rounds: Vec<Round>,
    /// Last index of each block (the block bounds after the seed).
    pub block_bounds: Vec<usize>,
    /// (anchor j, d_j) for every constructed set.
    pub d_map: Vec<(usize, usize)>,
    /// Anchor n -> number of the set A(j) it anchors.
    pub j_of_n: BTreeMap<usize, usize>,
    /// End of the constructed range; later indices are singleton padding.
    pub constructed_end: usize,
}

impl StrongPartitionTrace {
    /// Pads the partition with singleton sets up to `n`.
    pub fn padded_to(mut self, n: usize) -> Result<Self> {
        if n < self.constructed_end {
            return Err(Error::invalid(format!(
                "cannot pad to {n}: the construction already covers 1..={}",
                self.constructed_end
            )));
        }
        let before = self.partition.len();
        self.partition = self.partition.padded_to(n, default_eps);
        for (j, k) in (before + 1..).zip(self.constructed_end + 1..=n) {
            self.j_of_n.insert(k, j);
        }
        Ok(self)
    }

    /// The union of the anchor windows (r(m), r(m+1)] over all rounds.
    pub fn anchor_windows(&self) -> Vec<(usize, usize)> {
        self.rounds
            .iter()
            .map(|r| (r.start_bound + 1, r.anchor_end))
            .collect()
    }
}

/// How many complete rounds the sequence r(1), r(2), ... supports.
pub fn available_rounds(r: &[usize]) -> usize {
    let r_of = |m: usize| if m == 0 { Some(0) } else { r.get(m - 1).copied() };
    let mut m = 0;
    let mut rounds = 0;
    loop {
        let (Some(start), Some(end)) = (r_of(m), r_of(m + 1)) else {
            return rounds;
        };
        let d_last = m + end - start;
        if r_of(d_last + 1).is_none() {
            return rounds;
        }
        rounds += 1;
        m = d_last + 1;
    }
}

/// Runs `blocks` rounds of the construction over r(1), r(2), ... (1-based values).
pub fn strong_partition_from_sequence(
    r: &[usize],
    blocks: usize,
    eps: impl Fn(usize) -> f64,
) -> Result<StrongPartitionTrace> {
    if blocks == 0 {
        return Err(Error::invalid("at least one block is required"));
    }
    if r.first().is_none_or(|&v| v == 0) || r.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("r must be positive and strictly increasing"));
    }
    let r_of = |m: usize| if m == 0 { Some(0) } else { r.get(m - 1).copied() };
    let need = |m: usize| -> Result<usize> {
        r_of(m).ok_or_else(|| Error::TruncationExhausted {
            reached: r.len(),
            detail: format!(
                "the construction needs r({m}) but only r(1..={}) is known",
                r.len()
            ),
        })
    };

    let mut sets = Vec::new();
    let mut anchors = Vec::new();
    let mut rounds = Vec::new();
    let mut d_map = Vec::new();
    let mut j_of_n = BTreeMap::new();
    let mut m = 0;
    for _ in 0..blocks {
        let start = need(m)?;
        let anchor_end = need(m + 1)?;
        let mut tail_prev = 0;
        for j in start + 1..=anchor_end {
            let d = m + j - start;
            let lo = need(d)? + 1;
            let hi = need(d + 1)?;
            if lo <= tail_prev {
                return Err(Error::Postcondition {
                    invariant: "e_tails_increase",
                    detail: format!("tail of E({j}) starts at {lo}, not after {tail_prev}"),
                });
            }
            tail_prev = hi;
            let mut e: Vec<usize> = vec![j];
            e.extend(lo..=hi);
            sets.push(e);
            anchors.push(j);
            d_map.push((j, d));
            j_of_n.insert(j, sets.len());
        }
        let d_last = m + anchor_end - start;
        let block_end = need(d_last + 1)?;
        rounds.push(Round {
            m,
            start_bound: start,
            anchor_end,
            block_end,
        });
        m = d_last + 1;
    }

    // the sets of each round must tile (start, block_end]
    let mut k = 0;
    for rd in &rounds {
        let count = rd.anchor_end - rd.start_bound;
        let mut members: Vec<usize> = sets[k..k + count].iter().flatten().copied().collect();
        members.sort_unstable();
        let expected: Vec<usize> = (rd.start_bound + 1..=rd.block_end).collect();
        if members != expected {
            return Err(Error::Postcondition {
                invariant: "e_sets_tile_block",
                detail: format!(
                    "sets of the round starting at {} do not tile ({}, {}]",
                    rd.start_bound, rd.start_bound, rd.block_end
                ),
            });
        }
        k += count;
    }

    let epsilons = (1..=sets.len()).map(&eps).collect();
    let constructed_end = rounds.last().map(|r| r.block_end).unwrap_or(0);
    Ok(StrongPartitionTrace {
        partition: BlockPartition::new(sets, anchors, epsilons)?,
        block_bounds: rounds.iter().map(|r| r.block_end).collect(),
        rounds,
        d_map,
        j_of_n,
        constructed_end,
    })
}

/// [`strong_partition_from_sequence`] over constructed indices with eps_j = 1/j^2.
pub fn strong_partition(ri: &RepresentingIndices, blocks: usize) -> Result<StrongPartitionTrace> {
    strong_partition_from_sequence(&ri.r, blocks, default_eps)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "case")]
pub enum CaseVerdict {
    /// ||f_n(x) x_n|| <= eps_{j(n)} on the whole anchor window.
    A,
    /// n0 is the last anchor violating the bound; the claim is that every
    /// z_k^*(x) with k in E(n0) = A(j(n0)) is nonzero.
    B {
        n0: usize,
        j_n0: usize,
        mass: f64,
        support: Vec<usize>,
        claim_holds: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundVerdict {
    pub start_bound: usize,
    pub anchor_end: usize,
    pub verdict: CaseVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrongnessReport {
    pub bounds: Vec<BoundVerdict>,
    /// (N, dist(x, span{z_n : n <= N, |z_n^*(x)| > biorth_tol})).
    pub residuals: Vec<(usize, f64)>,
    pub residuals_non_increasing: bool,
}

/// Case analysis for one unit vector x against a flattened perturbation z of x
/// over `trace.partition`, plus the residual of x against the z_n it actually
/// uses, at each truncation in `truncations`.
pub fn strongness_diagnostic(
    x: &TruncatedVector,
    zsys: &BiorthSystem,
    xsys: &BiorthSystem,
    trace: &StrongPartitionTrace,
    eps: &[f64],
    truncations: &[usize],
) -> Result<StrongnessReport> {
    if (x.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("x must have unit norm"));
    }
    if zsys.len() != xsys.len() || x.ambient_dim() != xsys.ambient_dim() {
        return Err(Error::DimensionMismatch {
            expected: xsys.len(),
            found: zsys.len(),
        });
    }
    let n_sys = xsys.len();
    let xv = x.coords();
    let fx = xsys.coefficients(xv);
    let fz = zsys.coefficients(xv);
    let cut = zsys.tol().biorth_tol;
    let eps_of = |n: usize| -> Result<(usize, f64)> {
        let j = *trace
            .j_of_n
            .get(&n)
            .ok_or_else(|| Error::invalid(format!("{n} is not an anchor")))?;
        let e = *eps
            .get(j - 1)
            .ok_or_else(|| Error::invalid(format!("no eps for set {j}")))?;
        Ok((j, e))
    };

    let mut bounds = Vec::new();
    for rd in &trace.rounds {
        if rd.anchor_end > n_sys {
            break;
        }
        let mut n0 = None;
        for n in rd.start_bound + 1..=rd.anchor_end {
            let mass = fx[n - 1].abs() * xsys.x(n - 1).norm();
            let (j, e) = eps_of(n)?;
            if mass > e {
                n0 = Some((n, j, mass));
            }
        }
        let verdict = match n0 {
            None => CaseVerdict::A,
            Some((n0, j_n0, mass)) => {
                let support = trace.partition.blocks()[j_n0 - 1].clone();
                let claim_holds = support.iter().all(|&k| k <= n_sys && fz[k - 1].abs() > cut);
                CaseVerdict::B {
                    n0,
                    j_n0,
                    mass,
                    support,
                    claim_holds,
                }
            }
        };
        bounds.push(BoundVerdict {
            start_bound: rd.start_bound,
            anchor_end: rd.anchor_end,
            verdict,
        });
    }

    let mut residuals = Vec::new();
    for &nt in truncations {
        if nt == 0 || nt > n_sys {
            return Err(Error::invalid(format!("truncation {nt} outside 1..={n_sys}")));
        }
        let used: Vec<usize> = (0..nt).filter(|&n| fz[n].abs() > cut).collect();
        let span = SubspaceBasis::from_column_subset(zsys.x_matrix(), &used, zsys.tol().rank_tol)?;
        residuals.push((nt, distance_to_span(x, &span)?));
    }
    let mut order: Vec<(usize, f64)> = residuals.clone();
    order.sort_by_key(|p| p.0);
    let residuals_non_increasing = order.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-12);
    Ok(StrongnessReport {
        bounds,
        residuals,
        residuals_non_increasing,
    })
}

/// |f_n(x)| ||x_n|| for every n, the masses compared against eps_{j(n)}.
pub fn coefficient_masses(x: &DVector<f64>, sys: &BiorthSystem) -> Vec<f64> {
    let c = sys.coefficients(x);
    (0..sys.len()).map(|n| c[n].abs() * sys.x(n).norm()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perturbations::{construct_flattened, validate_block_partition};
    use crate::subspace::ToleranceConfig;

    const TRIANGULAR: [usize; 7] = [1, 3, 6, 10, 15, 21, 28];

    #[test]
    fn triangular_sequence_two_rounds() {
        let t = strong_partition_from_sequence(&TRIANGULAR, 2, default_eps).unwrap();
        let b = t.partition.blocks();
        assert_eq!(b[0], vec![1, 2, 3]);
        assert_eq!(b[1], vec![4, 7, 8, 9, 10]);
        assert_eq!(b[2], vec![5, 11, 12, 13, 14, 15]);
        assert_eq!(b[3], vec![6, 16, 17, 18, 19, 20, 21]);
        assert_eq!(t.partition.anchors(), &[1, 4, 5, 6]);
        assert_eq!(t.block_bounds, vec![3, 21]);
        assert_eq!(t.anchor_windows(), vec![(1, 1), (4, 6)]);
        assert!(validate_block_partition(&t.partition, 21).is_block_kind());
        assert_eq!(available_rounds(&TRIANGULAR), 2);
        assert!(matches!(
            strong_partition_from_sequence(&TRIANGULAR, 3, default_eps),
            Err(Error::TruncationExhausted { .. })
        ));
    }

    #[test]
    fn padding_extends_anchor_map() {
        let t = strong_partition_from_sequence(&TRIANGULAR, 1, default_eps)
            .unwrap()
            .padded_to(5)
            .unwrap();
        assert_eq!(t.partition.len(), 3);
        assert_eq!(t.j_of_n[&5], 3);
        assert!(validate_block_partition(&t.partition, 5).is_valid());
    }

    #[test]
    fn canonical_unit_vector_is_case_a() {
        let tol = ToleranceConfig::default();
        let sys = BiorthSystem::canonical(21, tol).unwrap();
        let t = strong_partition_from_sequence(&TRIANGULAR, 2, |j| 0.5f64.powi(j as i32)).unwrap();
        let z = construct_flattened(&sys, &t.partition, 3).unwrap();
        let x = TruncatedVector::basis(0, 21);
        let eps = t.partition.epsilons().to_vec();
        // e_1 has mass 1 > eps_1 = 1/2 at the seed round: the only anchor is 1
        let rep = strongness_diagnostic(&x, &z, &sys, &t, &eps, &[7, 14, 21]).unwrap();
        assert!(matches!(
            rep.bounds[0].verdict,
            CaseVerdict::B {
                n0: 1,
                claim_holds: true,
                ..
            }
        ));
        assert_eq!(rep.bounds[1].verdict, CaseVerdict::A);
        assert!(rep.residuals_non_increasing);
        assert!(rep.residuals.iter().all(|r| r.1 < 1e-10));
    }

    #[test]
    fn large_coefficient_inside_a_block_is_case_b() {
        let tol = ToleranceConfig::default();
        let sys = BiorthSystem::canonical(21, tol).unwrap();
        let t = strong_partition_from_sequence(&TRIANGULAR, 2, |j| 0.1 * 0.5f64.powi(j as i32)).unwrap();
        let z = construct_flattened(&sys, &t.partition, 5).unwrap();
        let mut xv = DVector::from_element(21, 1e-4);
        xv[4] = 1.0;
        let x = TruncatedVector::from_dvector(xv.normalize()).unwrap();
        let eps = t.partition.epsilons().to_vec();
        let rep = strongness_diagnostic(&x, &z, &sys, &t, &eps, &[21]).unwrap();
        match &rep.bounds[1].verdict {
            CaseVerdict::B {
                n0,
                support,
                claim_holds,
                ..
            } => {
                assert_eq!(*n0, 5);
                assert_eq!(support, &vec![5, 11, 12, 13, 14, 15]);
                assert!(claim_holds);
            }
            other => panic!("{other:?}"),
        }
    }
}
