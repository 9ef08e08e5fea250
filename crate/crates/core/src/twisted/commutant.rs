use crate::linalg::{identity, kron, nullspace_abs, op_norm, zeros, ComplexMatrix, Tolerance};

/// Stacked linear system whose nullspace is `{X : XA = AX, XA* = A*X}` for
/// every `A` in `ops`, acting on column-major `vec(X)`.
pub fn commutant_system(ops: &[ComplexMatrix]) -> ComplexMatrix {
    let d = ops.first().map_or(0, |a| a.nrows());
    let id = identity(d);
    let d2 = d * d;
    let mut out = zeros(2 * ops.len() * d2, d2);
    for (k, a) in ops.iter().enumerate() {
        let adj = a.adjoint();
        for (s, m) in [a, &adj].into_iter().enumerate() {
            // vec(XM − MX) = (Mᵀ ⊗ I − I ⊗ M) vec(X)
            let block = kron(&m.transpose(), &id) - kron(&id, m);
            out.view_mut(((2 * k + s) * d2, 0), (d2, d2))
                .copy_from(&block);
        }
    }
    out
}

/// Dimension of the commutant of the *-algebra generated by `ops` on C^d.
/// An empty family has the full matrix algebra as commutant.
pub fn commutant_dimension(ops: &[ComplexMatrix], dim: usize, tol: &Tolerance) -> usize {
    if ops.is_empty() {
        return dim * dim;
    }
    // The system vanishes up to rounding when every generator is scalar, so
    // the cutoff is scaled by the generators rather than by the system.
    let scale = ops.iter().map(op_norm).fold(0.0, f64::max);
    nullspace_abs(&commutant_system(ops), tol.rank_eps * 2.0 * scale.max(1.0)).dim()
}

/// Irreducible exactly when the commutant is the scalars.
pub fn is_irreducible(ops: &[ComplexMatrix], dim: usize, tol: &Tolerance) -> bool {
    dim > 0 && commutant_dimension(ops, dim, tol) == 1
}
