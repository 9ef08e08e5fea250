use thiserror::Error;

use crate::linalg::{
    identity, kron, off_block_diagonal_norm, op_norm, singular_values, ComplexMatrix, Tolerance,
};
use crate::operators::diag_twist_raw;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExtractError {
    #[error("block has shape {rows}x{cols}, expected {expected}x{expected}")]
    BadShape {
        rows: usize,
        cols: usize,
        expected: usize,
    },
    #[error("operator is not block diagonal over C^p (off-diagonal norm {residual:.3e})")]
    NotBlockDiagonal { residual: f64 },
    #[error("block {block} is inconsistent with the twist factor (residual {residual:.3e})")]
    Inconsistent { block: usize, residual: f64 },
    #[error("block ratio differs from the ambient twist by {gap:.3e}")]
    AmbientMismatch { gap: f64 },
    #[error("first block is singular and no ambient twist was supplied")]
    NoFallback,
    #[error("compressed twist is not of the form I_p ⊗ u (residual {residual:.3e})")]
    FallbackNotScalar { residual: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TwistSource {
    /// `u = B_1 B_0^{-1}` from consecutive diagonal blocks.
    BlockRatio,
    /// `u` read off the compression of the ambient twist.
    AmbientCompression,
}

/// Factorization `A = d[u] (I_p ⊗ Ṽ)` of an operator on `C^p ⊗ M`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwistFactor {
    pub u: ComplexMatrix,
    pub v_tilde: ComplexMatrix,
    pub source: TwistSource,
    /// `‖A − d[u](I_p ⊗ Ṽ)‖`.
    pub residual: f64,
    /// `‖u_ratio − u_ambient‖` when both were available.
    pub ambient_gap: Option<f64>,
}

/// Splits an operator commuting with the truncated-shift structure into a
/// diagonal twist and a multiplicity-space operator.
///
/// `block` acts on `C^p ⊗ M` with `C^p` the slow index, `dim M = mult`.
/// `ambient` is the compression of the relevant twist to the same space; it
/// supplies `u` when the first diagonal block is singular and is compared
/// against the block ratio otherwise.
pub fn extract_twist_factor(
    block: &ComplexMatrix,
    p: usize,
    mult: usize,
    ambient: Option<&ComplexMatrix>,
    tol: &Tolerance,
) -> Result<TwistFactor, ExtractError> {
    let n = p * mult;
    if block.nrows() != n || block.ncols() != n {
        return Err(ExtractError::BadShape {
            rows: block.nrows(),
            cols: block.ncols(),
            expected: n,
        });
    }
    let off = off_block_diagonal_norm(block, p, mult);
    if off > tol.eps {
        return Err(ExtractError::NotBlockDiagonal { residual: off });
    }
    let diag_block = |a: usize| block.view((a * mult, a * mult), (mult, mult)).into_owned();
    let b0 = diag_block(0);

    let ambient_u = ambient
        .map(|amb| scalar_part(amb, p, mult, tol))
        .transpose()?;
    let sigma = singular_values(&b0);
    let invertible = mult > 0 && sigma.last().is_some_and(|&s| s > tol.rank_eps.sqrt());

    let (u, source, ambient_gap) = if p >= 2 && invertible {
        let inv = b0.clone().try_inverse().ok_or(ExtractError::NoFallback)?;
        let u = diag_block(1) * inv;
        let gap = ambient_u.as_ref().map(|a| op_norm(&(a - &u)));
        if let Some(g) = gap.filter(|&g| g > tol.eps) {
            return Err(ExtractError::AmbientMismatch { gap: g });
        }
        (u, TwistSource::BlockRatio, gap)
    } else {
        match ambient_u {
            Some(a) => (a, TwistSource::AmbientCompression, None),
            // With one block there is nothing to twist.
            None if p <= 1 => (identity(mult), TwistSource::AmbientCompression, None),
            None => return Err(ExtractError::NoFallback),
        }
    };

    let mut power = identity(mult);
    for a in 0..p {
        let r = op_norm(&(diag_block(a) - &power * &b0));
        if r > tol.eps {
            return Err(ExtractError::Inconsistent {
                block: a,
                residual: r,
            });
        }
        power = &u * power;
    }
    let rebuilt = diag_twist_raw(&[p], 0, &u, mult) * kron(&identity(p), &b0);
    let residual = op_norm(&(block - rebuilt));
    Ok(TwistFactor {
        u,
        v_tilde: b0,
        source,
        residual,
        ambient_gap,
    })
}

/// Reads `u` from `I_p ⊗ u`, checking the form.
pub(crate) fn scalar_part(
    m: &ComplexMatrix,
    p: usize,
    mult: usize,
    tol: &Tolerance,
) -> Result<ComplexMatrix, ExtractError> {
    if m.nrows() != p * mult || m.ncols() != p * mult {
        return Err(ExtractError::BadShape {
            rows: m.nrows(),
            cols: m.ncols(),
            expected: p * mult,
        });
    }
    let u = m.view((0, 0), (mult, mult)).into_owned();
    let residual = op_norm(&(m - kron(&identity(p), &u)));
    if residual > tol.eps {
        return Err(ExtractError::FallbackNotScalar { residual });
    }
    Ok(u)
}
