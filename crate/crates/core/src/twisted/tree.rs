use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use thiserror::Error;

use super::extract::{extract_twist_factor, scalar_part, ExtractError};
use crate::hw::{hw_decompose, HwError};
use crate::linalg::{
    direct_sum, hstack, identity, kron, op_norm, unitarity_defect, ComplexMatrix, Tolerance,
};
use crate::operators::{
    assemble_model, twist_lookup, ModelSpec, OperatorError, SlotKind, TwistedTuple,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StageFailure {
    #[error(transparent)]
    Hw(#[from] HwError),
    #[error("component is not reducing for operator {operator} (residual {residual:.3e})")]
    NotReducing { operator: usize, residual: f64 },
    #[error("component is not reducing for twist ({i},{j}) (residual {residual:.3e})")]
    TwistNotReducing { i: usize, j: usize, residual: f64 },
    #[error("twist factor of operator {operator}: {source}")]
    Twist {
        operator: usize,
        #[source]
        source: ExtractError,
    },
    #[error("restricted twist ({i},{j}): {source}")]
    TwistNotScalar {
        i: usize,
        j: usize,
        #[source]
        source: ExtractError,
    },
    #[error("restricted twist ({i},{j}) is not unitary (defect {defect:.3e})")]
    TwistNotUnitary { i: usize, j: usize, defect: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecomposeError {
    #[error("at {path}, operator {operator}: {failure}")]
    Stage {
        path: String,
        operator: usize,
        #[source]
        failure: StageFailure,
    },
    #[error("global intertwiner is not unitary (defect {defect:.3e})")]
    NonUnitaryIntertwiner { defect: f64 },
    #[error("reconstruction residual {residual:.3e} exceeds {eps:.3e} (worst leaf {leaf})")]
    Residual {
        residual: f64,
        eps: f64,
        leaf: String,
    },
}

/// One leaf: a tensor model on `(⊗ C^{p}) ⊗ M` and its embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionLeaf {
    pub multiindex: Vec<SlotKind>,
    pub mult_dim: usize,
    pub leaf_dim: usize,
    /// Twists restricted to `M`, keys `(i, j)` with `i < j`.
    pub twists: BTreeMap<(usize, usize), ComplexMatrix>,
    /// `T_n` on `M` for each unitary slot `n`.
    pub slot_unitaries: BTreeMap<usize, ComplexMatrix>,
    /// Isometry from the model space into the ambient space.
    pub intertwiner: ComplexMatrix,
    /// `max_n max(‖V_n Φ − Φ M_n‖, ‖V_n* Φ − Φ M_n*‖)`.
    pub residual: f64,
}

impl DecompositionLeaf {
    pub fn twist(&self, i: usize, j: usize) -> ComplexMatrix {
        twist_lookup(&self.twists, i, j, self.mult_dim)
    }

    pub fn label(&self) -> String {
        format_multiindex(self.multiindex.iter().map(Some))
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            slots: self.multiindex.clone(),
            aux_dim: self.mult_dim,
            twist_data: self.twists.clone(),
            slot_unitaries: self.slot_unitaries.clone(),
        }
    }

    pub fn model_ops(&self) -> Vec<ComplexMatrix> {
        assemble_model(
            &self.multiindex,
            self.mult_dim,
            &|m, n| self.twist(m, n),
            &|n| {
                self.slot_unitaries
                    .get(&n)
                    .cloned()
                    .unwrap_or_else(|| identity(self.mult_dim))
            },
        )
    }

    /// The model operators with ambient twists `I_K ⊗ u`.
    pub fn model_tuple(&self) -> Result<TwistedTuple, OperatorError> {
        let k_dim = self.leaf_dim / self.mult_dim.max(1);
        let twists = self
            .twists
            .iter()
            .map(|(&key, u)| (key, kron(&identity(k_dim), u)))
            .collect();
        TwistedTuple::new(self.leaf_dim, self.model_ops(), twists)
    }
}

/// Leaves in canonical multiindex order with the global intertwiner
/// `W = [Φ_1 | Φ_2 | ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionTree {
    pub ambient_dim: usize,
    pub num_ops: usize,
    pub leaves: Vec<DecompositionLeaf>,
    pub intertwiner: ComplexMatrix,
    /// `max_n ‖W (⊕ M_n) W* − V_n‖`.
    pub residual: f64,
    /// Largest disagreement between a twist read from block ratios and the
    /// compressed ambient twist.
    pub max_twist_gap: f64,
}

impl DecompositionTree {
    /// `(multiindex, dim M)` per leaf.
    pub fn signature(&self) -> Vec<(Vec<SlotKind>, usize)> {
        self.leaves
            .iter()
            .map(|l| (l.multiindex.clone(), l.mult_dim))
            .collect()
    }

    /// Direct sum of the leaf models, one matrix per operator.
    pub fn model_ops(&self) -> Vec<ComplexMatrix> {
        let per_leaf: Vec<Vec<ComplexMatrix>> = self.leaves.iter().map(|l| l.model_ops()).collect();
        (0..self.num_ops)
            .map(|n| {
                let blocks: Vec<ComplexMatrix> =
                    per_leaf.iter().map(|ops| ops[n].clone()).collect();
                direct_sum(&blocks)
            })
            .collect()
    }
}

fn format_multiindex<'a>(slots: impl Iterator<Item = Option<&'a SlotKind>>) -> String {
    let parts: Vec<String> = slots
        .map(|s| s.map_or_else(|| "_".to_string(), |k| k.to_string()))
        .collect();
    format!("({})", parts.join(","))
}

#[derive(Clone)]
struct Branch {
    level: usize,
    slots: Vec<Option<SlotKind>>,
    p_list: Vec<usize>,
    embed: ComplexMatrix,
    /// Operators still carried on the current multiplicity space; `None` for
    /// truncated slots already peeled off.
    remainders: Vec<Option<ComplexMatrix>>,
    twists: BTreeMap<(usize, usize), ComplexMatrix>,
    twist_gap: f64,
}

enum Component {
    Unitary {
        basis: ComplexMatrix,
        part: ComplexMatrix,
    },
    Truncated {
        p: usize,
        mult: usize,
        cols: ComplexMatrix,
    },
}

impl Branch {
    fn root(t: &TwistedTuple) -> Self {
        let n = t.len();
        let mut twists = BTreeMap::new();
        for i in 1..=n {
            for j in i + 1..=n {
                twists.insert((i, j), t.twist(i, j));
            }
        }
        Branch {
            level: 0,
            slots: vec![None; n],
            p_list: Vec::new(),
            embed: identity(t.dim()),
            remainders: t.ops().iter().cloned().map(Some).collect(),
            twists,
            twist_gap: 0.0,
        }
    }

    fn path(&self) -> String {
        format_multiindex(self.slots.iter().map(Option::as_ref))
    }

    fn fail(&self, failure: StageFailure) -> DecomposeError {
        DecomposeError::Stage {
            path: self.path(),
            operator: self.level + 1,
            failure,
        }
    }

    fn k_dim(&self) -> usize {
        self.p_list.iter().product()
    }

    fn compress(&self, x: &ComplexMatrix, cols: &ComplexMatrix) -> (ComplexMatrix, f64) {
        let c = cols.adjoint() * x * cols;
        let fwd = op_norm(&(x * cols - cols * &c));
        let back = op_norm(&(x.adjoint() * cols - cols * c.adjoint()));
        (c, fwd.max(back))
    }

    fn child(&self, comp: &Component, tol: &Tolerance) -> Result<Branch, DecomposeError> {
        let lvl = self.level;
        let (cols, p) = match comp {
            Component::Unitary { basis, .. } => (basis, None),
            Component::Truncated { p, cols, .. } => (cols, Some(*p)),
        };
        let mut next = self.clone();
        next.level = lvl + 1;
        next.embed = &self.embed * kron(&identity(self.k_dim()), cols);

        for (n, rem) in self.remainders.iter().enumerate() {
            let Some(r) = rem else { continue };
            if n == lvl {
                next.remainders[n] = match comp {
                    Component::Unitary { part, .. } => Some(part.clone()),
                    Component::Truncated { .. } => None,
                };
                continue;
            }
            let (a, residual) = self.compress(r, cols);
            if residual > tol.eps {
                return Err(self.fail(StageFailure::NotReducing {
                    operator: n + 1,
                    residual,
                }));
            }
            next.remainders[n] = Some(match (comp, p) {
                (Component::Truncated { mult, .. }, Some(p)) => {
                    let tw = cols.adjoint()
                        * twist_lookup(&self.twists, lvl + 1, n + 1, cols.nrows())
                        * cols;
                    let f =
                        extract_twist_factor(&a, p, *mult, Some(&tw), tol).map_err(|source| {
                            self.fail(StageFailure::Twist {
                                operator: n + 1,
                                source,
                            })
                        })?;
                    if let Some(g) = f.ambient_gap {
                        next.twist_gap = next.twist_gap.max(g);
                    }
                    f.v_tilde
                }
                _ => a,
            });
        }

        for (&(i, j), u) in &self.twists {
            let (c, residual) = self.compress(u, cols);
            if residual > tol.eps {
                return Err(self.fail(StageFailure::TwistNotReducing { i, j, residual }));
            }
            let restricted = match comp {
                Component::Truncated { p, mult, .. } => scalar_part(&c, *p, *mult, tol)
                    .map_err(|source| self.fail(StageFailure::TwistNotScalar { i, j, source }))?,
                Component::Unitary { .. } => c,
            };
            let defect = unitarity_defect(&restricted);
            if defect > tol.eps {
                return Err(self.fail(StageFailure::TwistNotUnitary { i, j, defect }));
            }
            next.twists.insert((i, j), restricted);
        }

        match comp {
            Component::Unitary { .. } => next.slots[lvl] = Some(SlotKind::Unitary),
            Component::Truncated { p, .. } => {
                next.slots[lvl] = Some(SlotKind::Truncated(*p));
                next.p_list.push(*p);
            }
        }
        Ok(next)
    }

    fn leaf(self, t: &TwistedTuple) -> (DecompositionLeaf, f64) {
        let mult_dim = self.embed.ncols() / self.k_dim().max(1);
        let multiindex: Vec<SlotKind> = self
            .slots
            .iter()
            .map(|s| s.expect("all slots set"))
            .collect();
        let slot_unitaries = self
            .remainders
            .iter()
            .enumerate()
            .filter_map(|(n, r)| r.clone().map(|r| (n + 1, r)))
            .collect();
        let mut leaf = DecompositionLeaf {
            leaf_dim: self.embed.ncols(),
            multiindex,
            mult_dim,
            twists: self.twists,
            slot_unitaries,
            intertwiner: self.embed,
            residual: 0.0,
        };
        let phi = &leaf.intertwiner;
        let residual = leaf
            .model_ops()
            .iter()
            .zip(t.ops())
            .map(|(m, v)| {
                let fwd = op_norm(&(v * phi - phi * m));
                let back = op_norm(&(v.adjoint() * phi - phi * m.adjoint()));
                fwd.max(back)
            })
            .fold(0.0, f64::max);
        leaf.residual = residual;
        (leaf, self.twist_gap)
    }
}

fn components(branch: &Branch, tol: &Tolerance) -> Result<Vec<Component>, DecomposeError> {
    let op = branch.remainders[branch.level]
        .as_ref()
        .expect("current operator is carried");
    let hw = hw_decompose(op, tol).map_err(|e| branch.fail(e.into()))?;
    let mut out = Vec::new();
    if hw.unitary_dim() > 0 {
        out.push(Component::Unitary {
            basis: hw.unitary_basis.basis().clone(),
            part: hw.unitary_part.clone(),
        });
    }
    for (k, b) in hw.truncated_blocks.iter().enumerate() {
        out.push(Component::Truncated {
            p: b.p,
            mult: b.mult,
            cols: hw.block_columns(k),
        });
    }
    Ok(out)
}

fn descend(
    t: &TwistedTuple,
    branch: Branch,
    tol: &Tolerance,
) -> Result<Vec<(DecompositionLeaf, f64)>, DecomposeError> {
    if branch.level == t.len() {
        return Ok(vec![branch.leaf(t)]);
    }
    let comps = components(&branch, tol)?;
    let nested: Vec<Vec<(DecompositionLeaf, f64)>> = comps
        .par_iter()
        .map(|c| descend(t, branch.child(c, tol)?, tol))
        .collect::<Result<_, _>>()?;
    Ok(nested.into_iter().flatten().collect())
}

/// Decomposes a twisted tuple into leaves indexed by
/// `{u} ∪ {1, ..., d}` multiindices, processing operators in index order.
///
/// Branches are explored in parallel on the current rayon pool; the leaf
/// order is canonical regardless of scheduling.
pub fn decompose_tuple(
    t: &TwistedTuple,
    tol: &Tolerance,
) -> Result<DecompositionTree, DecomposeError> {
    let d = t.dim();
    let mut found = descend(t, Branch::root(t), tol)?;
    found.sort_by(|a, b| a.0.multiindex.cmp(&b.0.multiindex));
    let max_twist_gap = found.iter().map(|(_, g)| *g).fold(0.0, f64::max);
    let leaves: Vec<DecompositionLeaf> = found.into_iter().map(|(l, _)| l).collect();

    let blocks: Vec<ComplexMatrix> = leaves.iter().map(|l| l.intertwiner.clone()).collect();
    let intertwiner = hstack(&blocks, d);
    let defect = unitarity_defect(&intertwiner);
    if defect > tol.eps {
        return Err(DecomposeError::NonUnitaryIntertwiner { defect });
    }
    let mut tree = DecompositionTree {
        ambient_dim: d,
        num_ops: t.len(),
        leaves,
        intertwiner,
        residual: 0.0,
        max_twist_gap,
    };
    let w = &tree.intertwiner;
    tree.residual = tree
        .model_ops()
        .iter()
        .zip(t.ops())
        .map(|(m, v)| op_norm(&(w * m * w.adjoint() - v)))
        .fold(0.0, f64::max);
    if tree.residual > tol.eps {
        let worst = tree
            .leaves
            .iter()
            .max_by(|a, b| a.residual.total_cmp(&b.residual))
            .map(DecompositionLeaf::label)
            .unwrap_or_default();
        return Err(DecomposeError::Residual {
            residual: tree.residual,
            eps: tol.eps,
            leaf: worst,
        });
    }
    Ok(tree)
}

/// The partition of operator indices induced by one leaf.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeafPartition {
    pub multiindex: Vec<SlotKind>,
    pub unitary: Vec<usize>,
    pub truncated: BTreeMap<usize, Vec<usize>>,
}

impl fmt::Display for LeafPartition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let fmt_set = |s: &[usize]| {
            let v: Vec<String> = s.iter().map(|i| i.to_string()).collect();
            format!("{{{}}}", v.join(","))
        };
        write!(f, "A_u={}", fmt_set(&self.unitary))?;
        for (p, s) in &self.truncated {
            write!(f, " A_{p}={}", fmt_set(s))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub leaves: Vec<LeafPartition>,
    /// Set when every leaf induces the same partition.
    pub global: Option<LeafPartition>,
}

pub fn classify_partition(tree: &DecompositionTree) -> Partition {
    let leaves: Vec<LeafPartition> = tree
        .leaves
        .iter()
        .map(|l| {
            let mut unitary = Vec::new();
            let mut truncated: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (k, s) in l.multiindex.iter().enumerate() {
                match s.truncated() {
                    Some(p) => truncated.entry(p).or_default().push(k + 1),
                    None => unitary.push(k + 1),
                }
            }
            LeafPartition {
                multiindex: l.multiindex.clone(),
                unitary,
                truncated,
            }
        })
        .collect();
    let global = match leaves.split_first() {
        Some((first, rest)) if rest.iter().all(|l| l.multiindex == first.multiindex) => {
            Some(first.clone())
        }
        _ => None,
    };
    Partition { leaves, global }
}
