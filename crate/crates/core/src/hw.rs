//! Halmos–Wallen decomposition of a single power partial isometry on C^d.
//!
//! With `P` and `Q` the limits of `V^n V^{*n}` and `V^{*n} V^n` (reached after
//! finitely many steps here), the space splits into the unitary part
//! `PQ·C^d` and truncated-shift parts `H_p ≅ C^p ⊗ M_p`. The shift and
//! backward-shift parts are zero in finite dimensions; [`assert_no_shift_parts`]
//! checks that numerically.

use thiserror::Error;

use crate::linalg::{
    direct_sum, hstack, identity, kron, op_norm, op_norm_diff, projection_range, unitarity_defect,
    zeros, ComplexMatrix, Subspace, Tolerance,
};
use crate::operators::truncated_shift;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HwError {
    #[error("operator is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("range projections did not stabilize by power {max_power} (last step moved {last_step:.3e})")]
    NotStabilized { max_power: usize, last_step: f64 },
    #[error("nonzero {part} part of dimension {dim} detected")]
    ShiftPart { part: &'static str, dim: usize },
    #[error("chain vectors for p = {p} are not orthonormal (Gram defect {defect:.3e})")]
    NonIsometricChain { p: usize, defect: f64 },
    #[error("block dimensions sum to {found}, expected {expected}")]
    Incomplete { found: usize, expected: usize },
    #[error("intertwiner is not unitary (defect {defect:.3e})")]
    NonUnitaryIntertwiner { defect: f64 },
    #[error("unitary block is not unitary (defect {defect:.3e})")]
    NonUnitaryBlock { defect: f64 },
    #[error("reconstruction residual {residual:.3e} exceeds {eps:.3e}")]
    Residual { residual: f64, eps: f64 },
}

/// `H_p ≅ C^p ⊗ M_p` with the orthonormal basis of `M_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedBlock {
    pub p: usize,
    pub mult: usize,
    pub mult_basis: Subspace,
}

/// Halmos–Wallen data of one operator.
///
/// The intertwiner `W` maps the model space `H_u ⊕ ⊕_p (C^p ⊗ M_p)` (blocks in
/// that order, `p` ascending, `C^p` as the slow index) onto C^d, and
/// `W · model · W*` reproduces the operator.
#[derive(Debug, Clone, PartialEq)]
pub struct HWDecomposition {
    pub ambient_dim: usize,
    pub unitary_basis: Subspace,
    /// `V` restricted to `H_u`, in the basis `unitary_basis`.
    pub unitary_part: ComplexMatrix,
    pub shift_mult: usize,
    pub backshift_mult: usize,
    pub truncated_blocks: Vec<TruncatedBlock>,
    pub intertwiner: ComplexMatrix,
    pub residual: f64,
}

impl HWDecomposition {
    pub fn unitary_dim(&self) -> usize {
        self.unitary_basis.dim()
    }

    /// `(p, mult)` pairs in report order.
    pub fn block_signature(&self) -> Vec<(usize, usize)> {
        self.truncated_blocks
            .iter()
            .map(|b| (b.p, b.mult))
            .collect()
    }

    /// `T ⊕ ⊕_p J_p ⊗ I_{mult}`.
    pub fn model(&self) -> ComplexMatrix {
        let mut blocks = vec![self.unitary_part.clone()];
        for b in &self.truncated_blocks {
            blocks.push(kron(
                &truncated_shift(b.p).expect("p >= 1"),
                &identity(b.mult),
            ));
        }
        direct_sum(&blocks)
    }

    /// Columns of the intertwiner spanning `H_p` (`p`-th truncated block).
    pub fn block_columns(&self, index: usize) -> ComplexMatrix {
        let start = self.unitary_dim()
            + self.truncated_blocks[..index]
                .iter()
                .map(|b| b.p * b.mult)
                .sum::<usize>();
        let b = &self.truncated_blocks[index];
        self.intertwiner.columns(start, b.p * b.mult).into_owned()
    }

    /// Projections onto `H_u` followed by each `H_p`, in report order.
    pub fn block_projections(&self) -> Vec<ComplexMatrix> {
        let mut out = Vec::with_capacity(self.truncated_blocks.len() + 1);
        let u = self.unitary_basis.basis();
        out.push(u * u.adjoint());
        for k in 0..self.truncated_blocks.len() {
            let w = self.block_columns(k);
            out.push(&w * w.adjoint());
        }
        out
    }
}

/// Range projections of successive powers, `V^n V^{*n}` for `n = 0..`.
struct PowerProjections {
    range: Vec<ComplexMatrix>,
    source: Vec<ComplexMatrix>,
}

impl PowerProjections {
    /// Powers up to `max_n` inclusive.
    fn new(v: &ComplexMatrix, max_n: usize) -> Self {
        let d = v.nrows();
        let mut power = identity(d);
        let mut range = Vec::with_capacity(max_n + 1);
        let mut source = Vec::with_capacity(max_n + 1);
        for _ in 0..=max_n {
            range.push(&power * power.adjoint());
            source.push(power.adjoint() * &power);
            power = &power * v;
        }
        PowerProjections { range, source }
    }
}

fn stabilize(projs: &[ComplexMatrix], tol: &Tolerance) -> Result<(ComplexMatrix, usize), HwError> {
    let max_power = projs.len() - 2;
    let mut last_step = f64::NAN;
    for n in 1..=max_power {
        last_step = op_norm(&(&projs[n + 1] - &projs[n]));
        if last_step <= tol.eps {
            return Ok((projs[n].clone(), n));
        }
    }
    Err(HwError::NotStabilized {
        max_power,
        last_step,
    })
}

/// `P = V^{n0} V^{*n0}` at the first `n0 ≥ 1` where the decreasing range
/// projections stop moving. Apply to `V*` to obtain `Q`.
pub fn stable_range_projection(
    v: &ComplexMatrix,
    tol: &Tolerance,
) -> Result<(ComplexMatrix, usize), HwError> {
    let d = v.nrows();
    stabilize(&PowerProjections::new(v, d + 2).range, tol)
}

fn hp_from(pp: &PowerProjections, p: usize) -> ComplexMatrix {
    let d = pp.range[0].nrows();
    let mut sum = zeros(d, d);
    for n in 1..=p {
        let range_step = &pp.range[n - 1] - &pp.range[n];
        let source_step = &pp.source[p - n] - &pp.source[p - n + 1];
        sum += range_step * source_step;
    }
    sum
}

/// Projection onto `H_p`:
/// `Σ_{n=1}^{p} (V^{n−1}V^{*(n−1)} − V^n V^{*n})(V^{*(p−n)}V^{p−n} − V^{*(p−n+1)}V^{p−n+1})`.
pub fn hp_projection(v: &ComplexMatrix, p: usize) -> ComplexMatrix {
    assert!(p >= 1, "H_p is defined for p >= 1");
    hp_from(&PowerProjections::new(v, p), p)
}

fn multiplicity_from(pp: &PowerProjections, p: usize, tol: &Tolerance) -> Subspace {
    let d = pp.range[0].nrows();
    let kernel_adj = identity(d) - &pp.range[1];
    let source_step = &pp.source[p - 1] - &pp.source[p];
    projection_range(&(kernel_adj * source_step), tol)
}

/// `M_p = (1 − VV*)(V^{*(p−1)}V^{p−1} − V^{*p}V^p) C^d`; for `p = 1` this is
/// `ker V ∩ ker V*`.
pub fn multiplicity_space(v: &ComplexMatrix, p: usize, tol: &Tolerance) -> Subspace {
    assert!(p >= 1, "M_p is defined for p >= 1");
    multiplicity_from(&PowerProjections::new(v, p), p, tol)
}

/// Checks that `(1−P)Q` and `(1−Q)P` have zero range.
pub fn assert_no_shift_parts(v: &ComplexMatrix, tol: &Tolerance) -> Result<bool, HwError> {
    let d = v.nrows();
    let pp = PowerProjections::new(v, d + 2);
    let (p, _) = stabilize(&pp.range, tol)?;
    let (q, _) = stabilize(&pp.source, tol)?;
    no_shift_parts(&p, &q, tol)?;
    Ok(true)
}

fn no_shift_parts(p: &ComplexMatrix, q: &ComplexMatrix, tol: &Tolerance) -> Result<(), HwError> {
    let d = p.nrows();
    let id = identity(d);
    let shift = projection_range(&((&id - p) * q), tol);
    if !shift.is_zero() {
        return Err(HwError::ShiftPart {
            part: "shift",
            dim: shift.dim(),
        });
    }
    let back = projection_range(&((&id - q) * p), tol);
    if !back.is_zero() {
        return Err(HwError::ShiftPart {
            part: "backward-shift",
            dim: back.dim(),
        });
    }
    Ok(())
}

/// The stabilized `P` and `Q` of an operator.
pub fn limit_projections(
    v: &ComplexMatrix,
    tol: &Tolerance,
) -> Result<(ComplexMatrix, ComplexMatrix), HwError> {
    let d = v.nrows();
    let pp = PowerProjections::new(v, d + 2);
    let (p, _) = stabilize(&pp.range, tol)?;
    let (q, _) = stabilize(&pp.source, tol)?;
    Ok((p, q))
}

/// Full Halmos–Wallen decomposition with an explicit unitary intertwiner.
///
/// On the `H_p` block the intertwiner sends `e_{j+1} ⊗ m_k` to `V^j m_k`.
/// Those chain vectors must already be orthonormal; they are not
/// re-orthonormalized, so a non-power-partial-isometry input surfaces as an
/// error rather than a silently wrong model.
pub fn hw_decompose(v: &ComplexMatrix, tol: &Tolerance) -> Result<HWDecomposition, HwError> {
    let (rows, cols) = v.shape();
    if rows != cols {
        return Err(HwError::NotSquare { rows, cols });
    }
    let d = rows;
    let pp = PowerProjections::new(v, d + 2);
    let (p_lim, _) = stabilize(&pp.range, tol)?;
    let (q_lim, _) = stabilize(&pp.source, tol)?;
    no_shift_parts(&p_lim, &q_lim, tol)?;

    let unitary_basis = projection_range(&(&p_lim * &q_lim), tol);
    let ub = unitary_basis.basis();
    let unitary_part = ub.adjoint() * v * ub;
    let defect = unitarity_defect(&unitary_part);
    if defect > tol.eps {
        return Err(HwError::NonUnitaryBlock { defect });
    }

    let mut truncated_blocks = Vec::new();
    let mut columns = vec![ub.clone()];
    let mut covered = unitary_basis.dim();
    for p in 1..=d {
        if covered >= d {
            break;
        }
        let mult_basis = multiplicity_from(&pp, p, tol);
        if mult_basis.is_zero() {
            continue;
        }
        let mult = mult_basis.dim();
        // Column j*mult + k is V^j m_k.
        let mut chain = Vec::with_capacity(p);
        let mut cur = mult_basis.basis().clone();
        for _ in 0..p {
            let next = v * &cur;
            chain.push(cur);
            cur = next;
        }
        let block = hstack(&chain, d);
        let gram_defect = op_norm(&(block.adjoint() * &block - identity(p * mult)));
        if gram_defect > tol.eps {
            return Err(HwError::NonIsometricChain {
                p,
                defect: gram_defect,
            });
        }
        covered += p * mult;
        columns.push(block);
        truncated_blocks.push(TruncatedBlock {
            p,
            mult,
            mult_basis,
        });
    }
    if covered != d {
        return Err(HwError::Incomplete {
            found: covered,
            expected: d,
        });
    }
    let intertwiner = hstack(&columns, d);
    let defect = unitarity_defect(&intertwiner);
    if defect > tol.eps {
        return Err(HwError::NonUnitaryIntertwiner { defect });
    }
    let mut dec = HWDecomposition {
        ambient_dim: d,
        unitary_basis,
        unitary_part,
        shift_mult: 0,
        backshift_mult: 0,
        truncated_blocks,
        intertwiner,
        residual: 0.0,
    };
    let recon = &dec.intertwiner * dec.model() * dec.intertwiner.adjoint();
    let residual = op_norm_diff(&recon, v).expect("same shape");
    if residual > tol.eps {
        return Err(HwError::Residual {
            residual,
            eps: tol.eps,
        });
    }
    dec.residual = residual;
    Ok(dec)
}
