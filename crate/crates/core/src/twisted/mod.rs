//! Twisted relations, commutants, and the recursive decomposition of
//! operator tuples into multiindexed leaves.

mod commutant;
mod equivalence;
mod extract;
mod tree;

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;

use crate::hw::{hp_projection, limit_projections, HwError};
use crate::linalg::{
    commutator_norm, identity, op_norm, unitarity_defect, ComplexMatrix, Tolerance,
};
use crate::operators::{is_power_partial_isometry, TwistedTuple};

pub use commutant::{commutant_dimension, commutant_system, is_irreducible};
pub use equivalence::{equivalence_check, Certificate, EquivalenceVerdict};
pub use extract::{extract_twist_factor, ExtractError, TwistFactor, TwistSource};
pub use tree::{
    classify_partition, decompose_tuple, DecomposeError, DecompositionLeaf, DecompositionTree,
    LeafPartition, Partition, StageFailure,
};

/// The relation families checked by [`verify_twisted`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RelationKind {
    /// `V_i* V_j = U_ij V_j V_i*`, indices `[i, j]`.
    StarCross,
    /// `V_i V_j = U_ji V_j V_i`, indices `[i, j]`.
    PlainCross,
    /// `V_k U_ij = U_ij V_k`, indices `[k, i, j]`.
    TwistCommute,
    /// `U_ij` unitary, indices `[i, j]`.
    TwistUnitary,
    /// `U_ij U_kl = U_kl U_ij`, indices `[i, j, k, l]`.
    TwistCommutingFamily,
    /// `V_i^n` a partial isometry for `n ≤ d+1`, indices `[i]`.
    Ppi,
}

impl RelationKind {
    pub fn name(&self) -> &'static str {
        match self {
            RelationKind::StarCross => "star-cross",
            RelationKind::PlainCross => "plain-cross",
            RelationKind::TwistCommute => "twist-commute",
            RelationKind::TwistUnitary => "twist-unitary",
            RelationKind::TwistCommutingFamily => "twist-commuting-family",
            RelationKind::Ppi => "ppi",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RelationKey {
    pub kind: RelationKind,
    pub indices: Vec<usize>,
}

impl fmt::Display for RelationKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let idx: Vec<String> = self.indices.iter().map(|i| i.to_string()).collect();
        write!(f, "{}({})", self.kind.name(), idx.join(","))
    }
}

/// Residual of every relation, in canonical key order.
#[derive(Debug, Clone, PartialEq)]
pub struct TwistReport {
    pub residuals: BTreeMap<RelationKey, f64>,
    pub max_residual: f64,
    pub eps: f64,
    pub pass: bool,
}

impl TwistReport {
    pub fn failures(&self) -> impl Iterator<Item = (&RelationKey, f64)> {
        let eps = self.eps;
        self.residuals
            .iter()
            .filter(move |(_, &r)| r > eps)
            .map(|(k, &r)| (k, r))
    }

    pub fn worst(&self) -> Option<(&RelationKey, f64)> {
        self.residuals
            .iter()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, &r)| (k, r))
    }
}

/// Computes every relation residual of the tuple. Failures are reported in
/// the result, never raised.
pub fn verify_twisted(t: &TwistedTuple, tol: &Tolerance) -> TwistReport {
    let n = t.len();
    let mut keys = Vec::new();
    for i in 1..=n {
        keys.push(RelationKey {
            kind: RelationKind::Ppi,
            indices: vec![i],
        });
        for j in 1..=n {
            if i != j {
                keys.push(RelationKey {
                    kind: RelationKind::StarCross,
                    indices: vec![i, j],
                });
                keys.push(RelationKey {
                    kind: RelationKind::PlainCross,
                    indices: vec![i, j],
                });
            }
        }
    }
    let pairs: Vec<(usize, usize)> = (1..=n)
        .flat_map(|i| (i + 1..=n).map(move |j| (i, j)))
        .collect();
    for (a, &(i, j)) in pairs.iter().enumerate() {
        keys.push(RelationKey {
            kind: RelationKind::TwistUnitary,
            indices: vec![i, j],
        });
        for k in 1..=n {
            keys.push(RelationKey {
                kind: RelationKind::TwistCommute,
                indices: vec![k, i, j],
            });
        }
        for &(k, l) in &pairs[a + 1..] {
            keys.push(RelationKey {
                kind: RelationKind::TwistCommutingFamily,
                indices: vec![i, j, k, l],
            });
        }
    }
    let residuals: BTreeMap<RelationKey, f64> = keys
        .into_par_iter()
        .map(|key| {
            let r = relation_residual(t, &key, tol);
            (key, r)
        })
        .collect();
    let max_residual = residuals.values().copied().fold(0.0, f64::max);
    TwistReport {
        pass: max_residual <= tol.eps,
        max_residual,
        eps: tol.eps,
        residuals,
    }
}

fn relation_residual(t: &TwistedTuple, key: &RelationKey, tol: &Tolerance) -> f64 {
    let ix = &key.indices;
    let r = match key.kind {
        RelationKind::Ppi => is_power_partial_isometry(t.op(ix[0]), tol).max_residual(),
        RelationKind::StarCross => {
            let (vi, vj) = (t.op(ix[0]), t.op(ix[1]));
            let lhs = vi.adjoint() * vj;
            let rhs = t.twist(ix[0], ix[1]) * vj * vi.adjoint();
            op_norm(&(lhs - rhs))
        }
        RelationKind::PlainCross => {
            let (vi, vj) = (t.op(ix[0]), t.op(ix[1]));
            let rhs = t.twist(ix[1], ix[0]) * vj * vi;
            op_norm(&(vi * vj - rhs))
        }
        RelationKind::TwistCommute => commutator_norm(t.op(ix[0]), &t.twist(ix[1], ix[2])),
        RelationKind::TwistUnitary => unitarity_defect(&t.twist(ix[0], ix[1])),
        RelationKind::TwistCommutingFamily => {
            commutator_norm(&t.twist(ix[0], ix[1]), &t.twist(ix[2], ix[3]))
        }
    };
    // A NaN must never read as a pass.
    if r.is_nan() {
        f64::INFINITY
    } else {
        r
    }
}

/// Commutator norms of `W` with the Halmos–Wallen projections of `V`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionCommutation {
    pub p: f64,
    pub q: f64,
    pub pq: f64,
    pub shift_part: f64,
    pub backshift_part: f64,
    /// `(p, ‖Π_p W − W Π_p‖)` for every `p` with nonzero `H_p`.
    pub hp: Vec<(usize, f64)>,
}

impl ProjectionCommutation {
    pub fn max(&self) -> f64 {
        self.hp
            .iter()
            .map(|&(_, r)| r)
            .chain([
                self.p,
                self.q,
                self.pq,
                self.shift_part,
                self.backshift_part,
            ])
            .fold(0.0, f64::max)
    }
}

/// `‖ΠW − WΠ‖` for `Π` among `P`, `Q`, `PQ`, `(1−P)Q`, `(1−Q)P` and every
/// nonzero `H_p` projection of `v`. Small on twisted pairs; reported, not
/// judged, otherwise.
pub fn check_pq_commutation(
    v: &ComplexMatrix,
    w: &ComplexMatrix,
    tol: &Tolerance,
) -> Result<ProjectionCommutation, HwError> {
    let d = v.nrows();
    let (p, q) = limit_projections(v, tol)?;
    let id = identity(d);
    let pq = &p * &q;
    let shift = (&id - &p) * &q;
    let back = (&id - &q) * &p;
    let mut hp = Vec::new();
    for size in 1..=d {
        let proj = hp_projection(v, size);
        if op_norm(&proj) > 0.5 {
            hp.push((size, commutator_norm(&proj, w)));
        }
    }
    Ok(ProjectionCommutation {
        p: commutator_norm(&p, w),
        q: commutator_norm(&q, w),
        pq: commutator_norm(&pq, w),
        shift_part: commutator_norm(&shift, w),
        backshift_part: commutator_norm(&back, w),
        hp,
    })
}
