//! Dense complex matrix helpers and the tolerance policy shared by every
//! decomposition routine.
//!
//! Every rank decision in the crate goes through [`numerical_rank`], which
//! compares singular values against a threshold. Two scales are used:
//! [`orthonormal_range`] and [`nullspace`] are relative to the largest
//! singular value, while [`projection_range`] treats its argument as a
//! (product of) orthogonal projections whose natural scale is 1.

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

/// Dense complex matrix. Entries are stored by nalgebra (column-major);
/// serialized forms are row-major.
pub type ComplexMatrix = DMatrix<Complex64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("tolerances must be positive (eps = {eps}, rank_eps = {rank_eps})")]
    InvalidTolerance { eps: f64, rank_eps: f64 },
}

/// Absolute residual threshold on operator norms and the singular-value cutoff
/// used for rank decisions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub eps: f64,
    pub rank_eps: f64,
}

impl Tolerance {
    pub fn new(eps: f64, rank_eps: f64) -> Result<Self, LinalgError> {
        if eps > 0.0 && rank_eps > 0.0 && eps.is_finite() && rank_eps.is_finite() {
            Ok(Tolerance { eps, rank_eps })
        } else {
            Err(LinalgError::InvalidTolerance { eps, rank_eps })
        }
    }

    /// Same rank cutoff, different residual threshold.
    pub fn with_eps(eps: f64) -> Result<Self, LinalgError> {
        Tolerance::new(eps, Tolerance::default().rank_eps)
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            eps: 1e-9,
            rank_eps: 1e-10,
        }
    }
}

/// A subspace of C^d given by an orthonormal column basis. Zero columns
/// encode the zero subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct Subspace {
    basis: ComplexMatrix,
}

impl Subspace {
    /// Wraps a basis without checking orthonormality; see [`Subspace::orthonormality_defect`].
    pub fn from_basis(basis: ComplexMatrix) -> Self {
        Subspace { basis }
    }

    pub fn zero(ambient_dim: usize) -> Self {
        Subspace {
            basis: ComplexMatrix::zeros(ambient_dim, 0),
        }
    }

    pub fn full(ambient_dim: usize) -> Self {
        Subspace {
            basis: ComplexMatrix::identity(ambient_dim, ambient_dim),
        }
    }

    pub fn basis(&self) -> &ComplexMatrix {
        &self.basis
    }

    pub fn into_basis(self) -> ComplexMatrix {
        self.basis
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn is_zero(&self) -> bool {
        self.basis.ncols() == 0
    }

    /// ‖B*B − I‖ for the stored basis B.
    pub fn orthonormality_defect(&self) -> f64 {
        let k = self.dim();
        op_norm(&(self.basis.adjoint() * &self.basis - ComplexMatrix::identity(k, k)))
    }
}

pub fn c64(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn identity(d: usize) -> ComplexMatrix {
    ComplexMatrix::identity(d, d)
}

pub fn zeros(rows: usize, cols: usize) -> ComplexMatrix {
    ComplexMatrix::zeros(rows, cols)
}

/// Builds a matrix from real-valued rows.
pub fn from_real_rows(rows: &[&[f64]]) -> ComplexMatrix {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    ComplexMatrix::from_fn(r, c, |i, j| c64(rows[i][j], 0.0))
}

pub fn diag(entries: &[Complex64]) -> ComplexMatrix {
    let n = entries.len();
    let mut m = zeros(n, n);
    for (i, z) in entries.iter().enumerate() {
        m[(i, i)] = *z;
    }
    m
}

pub fn is_finite(a: &ComplexMatrix) -> bool {
    a.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Kronecker product with the left factor as the slow index:
/// `(A⊗B)[(i1,i2),(j1,j2)] = A[i1,j1]·B[i2,j2]`.
pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let (br, bc) = b.shape();
    let mut out = zeros(a.nrows() * br, a.ncols() * bc);
    for j1 in 0..a.ncols() {
        for i1 in 0..a.nrows() {
            let s = a[(i1, j1)];
            if s == Complex64::new(0.0, 0.0) {
                continue;
            }
            for j2 in 0..bc {
                for i2 in 0..br {
                    out[(i1 * br + i2, j1 * bc + j2)] = s * b[(i2, j2)];
                }
            }
        }
    }
    out
}

/// Kronecker product of a list of factors, left to right.
pub fn kron_all<'a, I>(factors: I) -> ComplexMatrix
where
    I: IntoIterator<Item = &'a ComplexMatrix>,
{
    factors
        .into_iter()
        .fold(identity(1), |acc, f| kron(&acc, f))
}

/// Block-diagonal direct sum.
pub fn direct_sum(blocks: &[ComplexMatrix]) -> ComplexMatrix {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Horizontal concatenation of column blocks with a common row count.
pub fn hstack(blocks: &[ComplexMatrix], rows: usize) -> ComplexMatrix {
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        debug_assert_eq!(b.nrows(), rows);
        out.view_mut((0, c), b.shape()).copy_from(b);
        c += b.ncols();
    }
    out
}

pub fn mat_pow(a: &ComplexMatrix, n: usize) -> ComplexMatrix {
    let mut out = identity(a.nrows());
    for _ in 0..n {
        out = &out * a;
    }
    out
}

fn to_faer(a: &ComplexMatrix) -> faer::Mat<Complex64> {
    faer::Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

fn from_faer(m: faer::MatRef<'_, Complex64>) -> ComplexMatrix {
    ComplexMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Thin SVD with singular values in descending order.
pub(crate) struct SortedSvd {
    pub u: ComplexMatrix,
    pub sigma: Vec<f64>,
    pub v_t: ComplexMatrix,
}

// nalgebra's complex SVD can lose orthogonality on rank-deficient input
// (reconstruction errors of order 1 were observed on products of
// projections), so every SVD goes through faer.
pub(crate) fn svd(a: &ComplexMatrix) -> SortedSvd {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return SortedSvd {
            u: zeros(m, 0),
            sigma: Vec::new(),
            v_t: zeros(0, n),
        };
    }
    let s = to_faer(a)
        .thin_svd()
        .expect("SVD converges on finite input");
    let sigma = s.S().column_vector().iter().map(|z| z.re).collect();
    SortedSvd {
        u: from_faer(s.U()),
        sigma,
        v_t: from_faer(s.V()).adjoint(),
    }
}

/// Singular values in descending order.
pub fn singular_values(a: &ComplexMatrix) -> Vec<f64> {
    if a.is_empty() {
        return Vec::new();
    }
    to_faer(a)
        .singular_values()
        .expect("SVD converges on finite input")
}

/// Eigenvalues of a square matrix, in no particular order.
pub fn eigenvalues(a: &ComplexMatrix) -> Vec<Complex64> {
    if a.is_empty() {
        return Vec::new();
    }
    to_faer(a)
        .eigenvalues()
        .expect("eigenvalue iteration converges on finite input")
}

/// Operator (spectral) norm: the largest singular value.
pub fn op_norm(a: &ComplexMatrix) -> f64 {
    singular_values(a).first().copied().unwrap_or(0.0)
}

/// ‖a − b‖ in operator norm.
pub fn op_norm_diff(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<f64, LinalgError> {
    if a.shape() != b.shape() {
        return Err(LinalgError::DimensionMismatch {
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(op_norm(&(a - b)))
}

/// Number of singular values strictly above `threshold`. The one place where
/// numerical rank is decided.
pub fn numerical_rank(sigma: &[f64], threshold: f64) -> usize {
    sigma.iter().filter(|&&s| s > threshold).count()
}

/// Rotates each column so its first significant entry is positive real.
fn normalize_phases(basis: &mut ComplexMatrix) {
    for mut col in basis.column_iter_mut() {
        let lead = col.iter().copied().find(|z| z.norm() > 1e-6);
        if let Some(z) = lead {
            let phase = z.conj() / z.norm();
            col.iter_mut().for_each(|x| *x *= phase);
        }
    }
}

fn leading_left_vectors(a: &ComplexMatrix, threshold_of: impl Fn(f64) -> f64) -> Subspace {
    if a.ncols() == 0 || a.nrows() == 0 {
        return Subspace::zero(a.nrows());
    }
    let s = svd(a);
    let smax = s.sigma.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return Subspace::zero(a.nrows());
    }
    let rank = numerical_rank(&s.sigma, threshold_of(smax));
    let mut basis = s.u.columns(0, rank).into_owned();
    normalize_phases(&mut basis);
    Subspace::from_basis(basis)
}

/// Orthonormal basis of the column space of `a`; rank counts singular values
/// above `rank_eps` times the largest one.
pub fn orthonormal_range(a: &ComplexMatrix, tol: &Tolerance) -> Subspace {
    leading_left_vectors(a, |smax| tol.rank_eps * smax)
}

/// Range of a projection or product of commuting projections. Such operators
/// have norm 0 or 1, so the cutoff is `rank_eps` on an absolute scale and a
/// product that vanishes up to rounding yields the zero subspace.
pub fn projection_range(pi: &ComplexMatrix, tol: &Tolerance) -> Subspace {
    leading_left_vectors(pi, |_| tol.rank_eps)
}

/// Orthogonal projection onto `s`.
pub fn projection_onto(s: &Subspace) -> ComplexMatrix {
    s.basis() * s.basis().adjoint()
}

/// Basis of `{x : ‖a x‖ ≤ rank_eps·‖a‖·‖x‖}`.
pub fn nullspace(a: &ComplexMatrix, tol: &Tolerance) -> Subspace {
    nullspace_below(a, |smax| tol.rank_eps * smax)
}

/// Basis of `{x : ‖a x‖ ≤ cutoff·‖x‖}` for an absolute `cutoff`. Use this
/// when `a` can vanish up to rounding, where a relative cutoff would count
/// the rounding as rank.
pub fn nullspace_abs(a: &ComplexMatrix, cutoff: f64) -> Subspace {
    nullspace_below(a, |_| cutoff)
}

fn nullspace_below(a: &ComplexMatrix, cutoff: impl Fn(f64) -> f64) -> Subspace {
    let n = a.ncols();
    if n == 0 {
        return Subspace::zero(0);
    }
    // Zero rows leave the kernel unchanged and make the thin SVD return all
    // n right singular vectors.
    let padded;
    let a = if a.nrows() < n {
        let mut p = zeros(n, n);
        p.view_mut((0, 0), a.shape()).copy_from(a);
        padded = p;
        &padded
    } else {
        a
    };
    let s = svd(a);
    let smax = s.sigma.first().copied().unwrap_or(0.0);
    let rank = if smax == 0.0 {
        0
    } else {
        numerical_rank(&s.sigma, cutoff(smax))
    };
    // Rows of v_t beyond the rank span the kernel; ascending singular value
    // order puts the most exact kernel direction first.
    let v = s.v_t.adjoint();
    let null_cols: Vec<usize> = (rank..n).rev().collect();
    let mut basis = zeros(n, null_cols.len());
    for (k, &col) in null_cols.iter().enumerate() {
        basis.set_column(k, &v.column(col));
    }
    normalize_phases(&mut basis);
    Subspace::from_basis(basis)
}

/// ‖U*U − I‖ and ‖UU* − I‖, whichever is larger.
pub fn unitarity_defect(u: &ComplexMatrix) -> f64 {
    if u.nrows() != u.ncols() {
        return f64::INFINITY;
    }
    let id = identity(u.nrows());
    let a = op_norm(&(u.adjoint() * u - &id));
    let b = op_norm(&(u * u.adjoint() - &id));
    a.max(b)
}

/// ‖AB − BA‖.
pub fn commutator_norm(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    op_norm(&(a * b - b * a))
}

/// Largest entry of the off-diagonal part when `a` is cut into `blocks`
/// square diagonal blocks of size `block`, measured in operator norm.
pub fn off_block_diagonal_norm(a: &ComplexMatrix, blocks: usize, block: usize) -> f64 {
    let mut off = a.clone();
    for k in 0..blocks {
        off.view_mut((k * block, k * block), (block, block))
            .fill(c64(0.0, 0.0));
    }
    op_norm(&off)
}
